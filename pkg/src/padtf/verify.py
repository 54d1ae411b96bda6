"""Equivalence harness: compiled models against the brute-force oracle.

The harness only ever consults :func:`padtf.circuit.evaluate` for expected
bits and :func:`padtf.vm.forward` for observed ones; it never asks the
compiler what a value should be.  Mismatches are localized by replaying the
input with tracing and walking the layer-pair invariant: after 2l layers,
every gate in the first l circuit layers must hold its oracle value, every
argument token must be back at zero, and no token's encoding channels may
have moved.

Sampled inputs use a counter-based generator so any implementation can
reproduce a report: bit k of sample number i under seed s is bit (k mod 256)
of SHA-256 of the ASCII string "s:i:b" where b = k // 256 (big-endian bit
order within the digest).
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from multiprocessing import Pool

from . import circuit as circ
from . import fixedpoint as fx
from . import vm
from .circuit import Circuit
from .compiler import Model, compile_circuit, serialize_model

DEFAULT_EXHAUSTIVE_LIMIT = 14
DEFAULT_SAMPLES = 4096


class HashMismatch(ValueError):
    """Model was not compiled from this circuit (override with force)."""


def sample_input(seed: int, index: int, n: int) -> list[int]:
    out: list[int] = []
    block = 0
    while len(out) < n:
        digest = hashlib.sha256(f"{seed}:{index}:{block}".encode()).digest()
        for byte in digest:
            for b in range(7, -1, -1):
                out.append((byte >> b) & 1)
        block += 1
    return out[:n]


def input_stream(n: int, exhaustive_limit: int, samples: int, seed: int):
    """Coverage descriptor plus the input iterator it promises."""
    if n <= exhaustive_limit:
        return ("exhaustive", 1 << n), (
            [(j >> (n - 1 - b)) & 1 for b in range(n)] for j in range(1 << n)
        )
    return ("sampled", samples, seed), (
        sample_input(seed, k, n) for k in range(samples)
    )


@dataclass(frozen=True, slots=True)
class Mismatch:
    input_bits: str
    expected: int
    got: str  # rendered readout value, or "malfunction:<value>"
    first_divergent_layer: int | None


@dataclass(slots=True)
class VerifyReport:
    family: str
    precision: int
    desc_length: int
    depth: int
    size: int
    certified: bool
    certification_notes: tuple[str, ...]
    coverage: tuple
    inputs_checked: int
    mismatches: list[Mismatch]
    circuit_text: str
    model_text: str | None  # embedded only on failure, for replay

    @property
    def verdict(self) -> str:
        return "pass" if not self.mismatches else "fail"

    def render(self) -> str:
        lines = [
            "padtf verify report",
            f"family {self.family}",
            f"precision {self.precision}",
            f"desc-length {self.desc_length}",
            f"depth {self.depth}",
            f"size {self.size}",
            f"certified {'yes' if self.certified else 'no'}",
        ]
        for note in self.certification_notes:
            lines.append(f"note {note}")
        lines.append("coverage " + " ".join(str(v) for v in self.coverage))
        lines.append(f"inputs-checked {self.inputs_checked}")
        lines.append(f"mismatches {len(self.mismatches)}")
        for mm in self.mismatches:
            layer = "-" if mm.first_divergent_layer is None else mm.first_divergent_layer
            lines.append(
                f"mismatch {mm.input_bits} expected {mm.expected} "
                f"got {mm.got} first-divergent-layer {layer}"
            )
        lines.append(f"verdict {self.verdict}")
        if self.mismatches:
            lines.append("begin circuit")
            lines.append(self.circuit_text.rstrip("\n"))
            lines.append("end circuit")
            if self.model_text is not None:
                lines.append("begin model")
                lines.append(self.model_text.rstrip("\n"))
                lines.append("end model")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "family": self.family,
                "precision": self.precision,
                "desc_length": self.desc_length,
                "depth": self.depth,
                "size": self.size,
                "certified": self.certified,
                "certification_notes": list(self.certification_notes),
                "coverage": list(self.coverage),
                "inputs_checked": self.inputs_checked,
                "mismatches": [
                    {
                        "input": mm.input_bits,
                        "expected": mm.expected,
                        "got": mm.got,
                        "first_divergent_layer": mm.first_divergent_layer,
                    }
                    for mm in self.mismatches
                ],
                "verdict": self.verdict,
                "circuit": self.circuit_text,
                "model": self.model_text,
            },
            indent=2,
            sort_keys=True,
        )


def induction_violations(c: Circuit, model: Model, x, trace: vm.Trace | None = None) -> list[str]:
    """All layer-pair invariant violations for one input, earliest first.

    Checks, per transformer layer: encoding channels unchanged; and at each
    even layer 2l, argument-token values zero, input-token values equal to x,
    and every gate within circuit depth l holding its oracle value.
    """
    expected = circ.evaluate_all(c, x)
    layer_of = circ.layerize(c)
    if any(
        tok.vertex_id not in layer_of
        or (tok.kind == "inp") != (tok.vertex_id <= c.n_inputs)
        for tok in model.tokens
    ):
        return ["layer 0: model tokens do not correspond to this circuit"]
    if trace is None:
        try:
            _, trace = vm.forward(model, x, trace=True)
        except vm.ModelMalfunction as e:
            trace = e.trace
    out: list[str] = []
    base = trace.snapshots[0]
    for snap in trace.snapshots[1:]:
        li = snap.layer_index
        for t, (row, row0) in enumerate(zip(snap.rows, base.rows)):
            if row[1:] != row0[1:]:
                out.append(f"layer {li}: token {t} encoding channels changed")
        if li % 2 == 0:
            pair = li // 2
            for t, tok in enumerate(model.tokens):
                v = snap.rows[t][0]
                if tok.kind == "arg":
                    if v.scaled != 0:
                        out.append(
                            f"layer {li}: argument token {t} holds {fx.render(v)}"
                        )
                elif tok.kind == "inp":
                    if v.scaled != x[tok.vertex_id - 1] << model.p:
                        out.append(
                            f"layer {li}: input token {t} holds {fx.render(v)}"
                        )
                elif layer_of[tok.vertex_id] <= pair:
                    want = expected[tok.vertex_id]
                    if v.scaled != want << model.p:
                        out.append(
                            f"layer {li}: gate {tok.vertex_id} holds "
                            f"{fx.render(v)}, oracle says {want}"
                        )
    return out


def first_divergent_layer(c: Circuit, model: Model, x) -> int | None:
    violations = induction_violations(c, model, x)
    if not violations:
        return None
    return int(violations[0].split()[1].rstrip(":"))


def check_equivalence(
    c: Circuit,
    model: Model | None = None,
    *,
    precision: int | None = None,
    exhaustive_limit: int = DEFAULT_EXHAUSTIVE_LIMIT,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    force: bool = False,
    localize: bool = True,
) -> VerifyReport:
    """Certify a model against the circuit oracle over exhaustive or seeded
    sampled inputs.  Compiles the circuit in memory when no model is given."""
    if model is None:
        model = compile_circuit(c, p=precision)
    elif model.circuit_hash != circ.circuit_sha256(c) and not force:
        raise HashMismatch(
            "circuit hash mismatch: the model was not compiled from this "
            "circuit (pass force to override)"
        )
    coverage, stream = input_stream(c.n_inputs, exhaustive_limit, samples, seed)
    stats = circ.desc_stats(c)
    mismatches: list[Mismatch] = []
    checked = 0
    for x in stream:
        checked += 1
        want = circ.evaluate(c, x)
        try:
            got = vm.forward(model, x)
            ok = got == want
            got_text = str(got)
        except vm.ModelMalfunction as e:
            ok = False
            got_text = f"malfunction:{fx.render(e.value)}"
        if not ok:
            layer = first_divergent_layer(c, model, x) if localize else None
            mismatches.append(
                Mismatch("".join(str(b) for b in x), want, got_text, layer)
            )
    return VerifyReport(
        family=c.family,
        precision=model.p,
        desc_length=stats.desc_length,
        depth=stats.depth,
        size=stats.size,
        certified=model.certified,
        certification_notes=model.certification_notes,
        coverage=coverage,
        inputs_checked=checked,
        mismatches=mismatches,
        circuit_text=circ.serialize_circuit(c),
        model_text=serialize_model(model) if mismatches else None,
    )


# ---------------------------------------------------------------------------
# Precision sweep.
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class SweepReport:
    verdicts: list[tuple[int, str]]  # (p, "pass" | "fail" | "refused")
    minimal_passing: int | None
    findings: list[str]

    def render(self) -> str:
        lines = ["padtf precision sweep"]
        for p, verdict in self.verdicts:
            lines.append(f"p {p} {verdict}")
        lines.append(
            f"minimal-passing {self.minimal_passing if self.minimal_passing is not None else '-'}"
        )
        for f_ in self.findings:
            lines.append(f"finding {f_}")
        return "\n".join(lines) + "\n"


def precision_sweep(
    c: Circuit,
    p_lo: int,
    p_hi: int,
    *,
    exhaustive_limit: int = DEFAULT_EXHAUSTIVE_LIMIT,
    samples: int = 512,
    seed: int = 0,
) -> SweepReport:
    """Verdict per precision.  Non-monotone pass/fail patterns are reported
    as findings, never silently smoothed over."""
    verdicts: list[tuple[int, str]] = []
    for p in range(p_lo, p_hi + 1):
        try:
            model = compile_circuit(c, p=p)
        except (ValueError, ArithmeticError) as e:
            verdicts.append((p, "refused"))
            continue
        report = check_equivalence(
            c,
            model,
            exhaustive_limit=exhaustive_limit,
            samples=samples,
            seed=seed,
            localize=False,
        )
        verdicts.append((p, report.verdict))
    minimal = next((p for p, v in verdicts if v == "pass"), None)
    findings = []
    if minimal is not None:
        for p, v in verdicts:
            if p > minimal and v != "pass":
                findings.append(
                    f"non-monotone: p={p} {v} although p={minimal} passes"
                )
    return SweepReport(verdicts, minimal, findings)


# ---------------------------------------------------------------------------
# Random-circuit campaigns.
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class CampaignConfig:
    family: str
    count: int
    n_range: tuple[int, int]
    depth_range: tuple[int, int]
    max_fanin: int
    size_budget: int
    seed: int
    precision: int | None = None  # None: per-circuit default policy
    exhaustive_limit: int = DEFAULT_EXHAUSTIVE_LIMIT
    samples: int = DEFAULT_SAMPLES


def campaign_circuit(cfg: CampaignConfig, index: int) -> Circuit:
    """Deterministic item derivation: parameters and circuit from one seed."""
    item_seed = cfg.seed * 1_000_003 + index
    rng = random.Random(item_seed)
    n = rng.randint(*cfg.n_range)
    depth = rng.randint(*cfg.depth_range)
    return circ.random_circuit(
        cfg.family, n, depth, cfg.max_fanin, cfg.size_budget, seed=item_seed
    )


def _campaign_item(args) -> tuple[int, str, int, str]:
    cfg, index = args
    c = campaign_circuit(cfg, index)
    report = check_equivalence(
        c,
        precision=cfg.precision,
        exhaustive_limit=cfg.exhaustive_limit,
        samples=cfg.samples,
        seed=cfg.seed,
    )
    detail = "" if not report.mismatches else report.render()
    return index, report.verdict, report.inputs_checked, detail


@dataclass(slots=True)
class CampaignReport:
    config: CampaignConfig
    results: list[tuple[int, str, int]]  # (index, verdict, inputs checked)
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> int:
        return sum(1 for _, v, _ in self.results if v == "pass")

    @property
    def verdict(self) -> str:
        return "pass" if self.passed == len(self.results) else "fail"

    def render(self) -> str:
        cfg = self.config
        lines = [
            "padtf campaign report",
            f"family {cfg.family}",
            f"count {cfg.count}",
            f"n-range {cfg.n_range[0]} {cfg.n_range[1]}",
            f"depth-range {cfg.depth_range[0]} {cfg.depth_range[1]}",
            f"max-fanin {cfg.max_fanin}",
            f"size-budget {cfg.size_budget}",
            f"seed {cfg.seed}",
            f"precision {cfg.precision if cfg.precision is not None else 'policy'}",
        ]
        for index, verdict, checked in self.results:
            lines.append(f"item {index} {verdict} {checked}")
        lines.append(f"passed {self.passed}/{len(self.results)}")
        lines.append(f"verdict {self.verdict}")
        for failure in self.failures:
            lines.append("begin failure")
            lines.append(failure.rstrip("\n"))
            lines.append("end failure")
        return "\n".join(lines) + "\n"


def campaign(cfg: CampaignConfig, jobs: int = 1) -> CampaignReport:
    """Compile-and-verify over `count` seeded random circuits.  Items are
    independent; report order is by item index regardless of job count."""
    items = [(cfg, i) for i in range(cfg.count)]
    if jobs > 1:
        with Pool(jobs) as pool:
            raw = pool.map(_campaign_item, items)
    else:
        raw = [_campaign_item(item) for item in items]
    raw.sort(key=lambda r: r[0])
    results = [(i, v, n) for i, v, n, _ in raw]
    failures = [detail for _, _, _, detail in raw if detail]
    return CampaignReport(cfg, results, failures)
