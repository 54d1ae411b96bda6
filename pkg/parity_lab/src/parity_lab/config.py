"""Experiment configuration and presets.

The default values reproduce the reference training setup: a 2-layer, 4-head
Transformer with hidden dimension 32, Adam at learning rate 5e-4 with betas
(0.9, 0.999) and no weight decay, trained for 50 epochs with best-validation
checkpoint selection.  Presets shrink lengths, dataset sizes, and epochs -
never the hint scheme or the model.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

REGIMES = ("causal_instant", "noncausal_instant", "causal_pause")

# token vocabulary: the two bits, the pause filler (input value -1 in the
# layout tables), and the end-of-sequence marker
TOK_ZERO, TOK_ONE, TOK_PAUSE, TOK_END = 0, 1, 2, 3
VOCAB_SIZE = 4
IGNORE_LABEL = -100


@dataclass(frozen=True)
class ExperimentConfig:
    regimes: tuple[str, ...] = REGIMES
    lengths: tuple[int, ...] = (20, 50, 100, 150, 200, 250, 300)
    train_size: int = 500_000
    val_size: int = 5_000
    test_size: int = 50_000
    n_layers: int = 2
    n_heads: int = 4
    hidden_dim: int = 32
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    epochs: int = 50
    batch_size: int = 256
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        for r in self.regimes:
            if r not in REGIMES:
                raise ValueError(f"unknown regime {r!r}")

    def dump(self, exclude: tuple[str, ...] = ()) -> str:
        """Plain key-value rendering, one field per line."""
        out = []
        for f in fields(self):
            if f.name in exclude:
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"


PRESETS = {
    "paper": ExperimentConfig(),
    "desk": ExperimentConfig(
        lengths=(20, 50, 100),
        train_size=50_000,
        val_size=2_000,
        test_size=5_000,
        batch_size=128,
    ),
    "smoke": ExperimentConfig(
        lengths=(8,),
        train_size=2_000,
        val_size=256,
        test_size=512,
        epochs=3,
        seeds=(0,),
    ),
}


def _coerce(name: str, raw: str, like):
    if isinstance(like, tuple):
        items = [x for x in raw.replace(",", " ").split() if x]
        return tuple(type(like[0])(x) if like else str(x) for x in items) if items else ()
    if isinstance(like, bool):
        return raw.strip().lower() in ("1", "true", "yes")
    return type(like)(raw)


def load_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse the plain key-value format produced by dump()."""
    cfg = base or ExperimentConfig()
    known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        updates[key] = _coerce(key, val.strip(), known[key])
    return replace(cfg, **updates)
