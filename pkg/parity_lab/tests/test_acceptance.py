"""Secondary acceptance: the desk-scale curve ordering at length 100.

The grid behind this check is an overnight run (three regimes, three seeds,
lengths 20/50/100 at desk scale), so the test evaluates a completed results
file rather than training inline:

    parity-lab grid --preset desk --out runs/desk

Expected, averaged over seeds at length 100: pause tokens with a causal mask
beat the unmasked instant answer, which beats the masked instant answer, with
causal_pause >= 0.9 and causal_instant <= 0.7.
"""

import os

import pytest

from parity_lab.curves import mean_accuracies, read_results

RESULTS = os.environ.get("PARITY_LAB_RESULTS", "runs/desk/results.csv")


def test_desk_scale_curve_ordering_at_length_100():
    if not os.path.exists(RESULTS):
        pytest.skip(
            f"no grid results at {RESULTS}; run `parity-lab grid --preset desk "
            f"--out runs/desk` (or set PARITY_LAB_RESULTS)"
        )
    means = mean_accuracies(read_results(RESULTS))
    need = [(r, 100) for r in ("causal_pause", "noncausal_instant", "causal_instant")]
    missing = [key for key in need if key not in means]
    if missing:
        pytest.skip(f"results incomplete: missing {missing}")
    pause, nomask, instant = (means[key] for key in need)
    print(
        f"ACCEPTANCE length=100 means: causal_pause={pause:.4f} "
        f"noncausal_instant={nomask:.4f} causal_instant={instant:.4f}"
    )
    assert pause >= nomask >= instant
    assert pause >= 0.9
    assert instant <= 0.7
