"""Circuit-to-Transformer compiler.

A circuit of depth l becomes a 2l-layer masked-attention Transformer over the
token stream produced by :mod:`padtf.encoder`.  Odd layers copy previously
computed vertex values into argument tokens (and normalize / negate them);
even layers average each gate's argument tokens into the gate token and
resolve the gate with an indicator feedforward network.

The indicator I[a > 0] is built as a saturating scale chain: relu, two
successive multiplications by B_p (any positive value saturates to exactly
B_p), then multiplication by 2**-p (B_p maps to exactly 1).  This is exact on
the whole grid, unlike the two-ReLU shortcut retained behind ``compat_g``,
which is only correct near zero and is kept for comparison runs.

Odd-layer networks also reset every gate token's value channel to zero (gate
tokens are recognizable by their pair-2 key, which is the reserved index 0).
Without the reset, a gate's stale value from earlier layers rides the residual
stream into its resolve step and can flip the result; gates therefore
recompute from their arguments on every layer pair, which is idempotent once
the arguments are correct.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from . import circuit as circ
from . import encoder as enc
from . import fixedpoint as fx
from .circuit import AC0, TC0, Circuit
from .encoder import FLAG1, FLAG2, FLAG3, VALUE, TokenEncoding
from .fixedpoint import Fp

COPY_NEGATE = "copy-negate"
GATE_RESOLVE = "gate-resolve"
SIGNED_COPY = "signed-copy"
THRESHOLD_RESOLVE = "threshold-resolve"

RELU, IDENTITY = "relu", "identity"

AC0_DEFAULT_PRECISION = 8
TC0_GUARD_BITS = 4
MIN_PRECISION = 2


class CompileError(ValueError):
    pass


class PrecisionError(CompileError):
    pass


@dataclass(frozen=True, slots=True)
class AttentionSpec:
    """One attention sublayer: score matrix, value projection, masking."""

    wqk: tuple[tuple[Fp, ...], ...]
    wv: tuple[tuple[Fp, ...], ...]
    causal_mask: bool


@dataclass(frozen=True, slots=True)
class FfnLayer:
    weights: tuple[tuple[Fp, ...], ...]  # rows x cols
    bias: tuple[Fp, ...]
    activation: str  # relu | identity


@dataclass(frozen=True, slots=True)
class FfnSpec:
    role: str
    layers: tuple[FfnLayer, ...]


@dataclass(frozen=True, slots=True)
class Model:
    p: int
    d: int
    L: int
    n_inputs: int
    family: str
    tokens: tuple[TokenEncoding, ...]
    layers: tuple[tuple[AttentionSpec, FfnSpec], ...]
    readout_pos: int
    circuit_hash: str
    pause_token_count: int
    certified: bool = True
    certification_notes: tuple[str, ...] = ()


def default_precision(c: Circuit) -> int:
    """AC0 runs at a fixed global precision; TC0 scales logarithmically with
    the description length, plus guard bits for the averaging margins.

    Whether a rounded threshold field [theta/m]_p sits consistently between
    theta*[1/m]_p and (theta+1)*[1/m]_p is a per-precision arithmetic fact,
    not monotone in p, so the TC0 policy takes the first precision at or
    above the logarithmic base that passes the exact margin certification.
    """
    if c.family == AC0:
        return AC0_DEFAULT_PRECISION
    stats = circ.desc_stats(c)
    base = max(MIN_PRECISION, stats.desc_length.bit_length() + TC0_GUARD_BITS)
    for p in range(base, base + 17):
        if not certify(c, p):
            return p
    return base


# ---------------------------------------------------------------------------
# Attention weights: a single identity block connecting one query segment to
# one key segment, and a value projection that passes through channel 0.
# ---------------------------------------------------------------------------


def make_attention(layer_parity: str, d: int, p: int, L: int) -> AttentionSpec:
    if layer_parity == "first":
        qseg, kseg = enc.seg_pair1_query(L), enc.seg_pair1_key(L)
    elif layer_parity == "second":
        qseg, kseg = enc.seg_pair2_query(L), enc.seg_pair2_key(L)
    else:
        raise ValueError(f"layer_parity must be 'first' or 'second', got {layer_parity!r}")
    zero, one = fx.zero(p), fx.one(p)
    wqk = [[zero] * d for _ in range(d)]
    for q, k in zip(qseg, kseg):
        wqk[q][k] = one
    wv = [[zero] * d for _ in range(d)]
    wv[VALUE][VALUE] = one
    return AttentionSpec(
        tuple(tuple(r) for r in wqk), tuple(tuple(r) for r in wv), causal_mask=True
    )


# ---------------------------------------------------------------------------
# Feedforward networks.
# ---------------------------------------------------------------------------


class _FfnBuilder:
    """Assembles the five-matrix ReLU networks used by all roles.

    Stage 1 computes ReLU units over the token channels; stages 2-3 run the
    saturating indicator chain; stage 4 combines indicator and passthrough
    units; stage 5 writes the result to the value channel only, so the
    residual connection preserves every other channel.
    """

    def __init__(self, d: int, p: int, compat_g: bool):
        self.d = d
        self.p = p
        self.compat_g = compat_g
        self.l1: list[tuple[dict[int, Fraction], Fraction]] = []
        self.kinds: list[str] = []  # "ind" | "pass" per L1 unit group head
        self.groups: list[tuple[str, int]] = []  # (kind, l1 start index)

    def indicator(self, row: dict[int, Fraction], bias: Fraction | int = 0) -> int:
        """Unit computing I[<row, u> + bias > 0] (exactly, or via the two-ReLU
        shortcut in compat mode)."""
        handle = len(self.groups)
        if self.compat_g:
            self.l1.append((dict(row), Fraction(bias)))
            self.l1.append((dict(row), Fraction(bias) - fx.ulp(self.p)))
        else:
            self.l1.append((dict(row), Fraction(bias)))
        self.groups.append(("ind", len(self.l1) - (2 if self.compat_g else 1)))
        return handle

    def passthrough(self, row: dict[int, Fraction], bias: Fraction | int = 0) -> int:
        handle = len(self.groups)
        self.l1.append((dict(row), Fraction(bias)))
        self.groups.append(("pass", len(self.l1) - 1))
        return handle

    def _coeff(self, handle: int) -> Fraction:
        kind, _ = self.groups[handle]
        if kind == "ind" and not self.compat_g:
            return fx.ulp(self.p)
        return Fraction(1)

    def build(
        self,
        role: str,
        combine: list[tuple[dict[int, Fraction], Fraction | int]],
        value_out: dict[int, Fraction],
    ) -> FfnSpec:
        p, bmax = self.p, Fraction(fx.max_scaled(self.p), 1 << self.p)
        n1 = len(self.l1)
        n2 = len(self.groups)

        def dense(rows: list[dict[int, Fraction]], biases, cols) -> FfnLayer:
            w = tuple(
                tuple(fx.round_to(p, r.get(c, 0)) for c in range(cols)) for r in rows
            )
            b = tuple(fx.round_to(p, v) for v in biases)
            return FfnLayer(w, b, RELU)

        layer1 = dense([r for r, _ in self.l1], [b for _, b in self.l1], self.d)

        # stage 2: fold compat pairs into single units / first B_p scaling
        rows2, rows3 = [], []
        for handle, (kind, start) in enumerate(self.groups):
            if kind == "ind" and self.compat_g:
                rows2.append({start: Fraction(1), start + 1: Fraction(1)})
                rows3.append({handle: bmax})
            elif kind == "ind":
                rows2.append({start: bmax})
                rows3.append({handle: bmax})
            else:
                rows2.append({start: Fraction(1)})
                rows3.append({handle: Fraction(1)})
        layer2 = dense(rows2, [0] * n2, n1)
        layer3 = dense(rows3, [0] * n2, n2)

        rows4 = []
        biases4 = []
        for terms, bias in combine:
            rows4.append({h: self._coeff(h) * c for h, c in terms.items()})
            biases4.append(bias)
        layer4 = dense(rows4, biases4, n2)

        out_row = {h: Fraction(c) for h, c in value_out.items()}
        weights5 = tuple(
            tuple(
                fx.round_to(p, out_row.get(c, 0)) if r == VALUE else fx.zero(p)
                for c in range(len(rows4))
            )
            for r in range(self.d)
        )
        layer5 = FfnLayer(weights5, tuple(fx.zero(p) for _ in range(self.d)), IDENTITY)
        return FfnSpec(role, (layer1, layer2, layer3, layer4, layer5))


def _gate_token_detector_row(L: int) -> dict[int, Fraction]:
    """Sum of the sign-binary slots of the pair-2 key: 2*popcount - L.  Gate
    tokens carry index 0 there (all -1s); everything else has popcount >= 1."""
    return {c: Fraction(1) for c in enc.sbin_slots(enc.seg_pair2_key(L))}


def make_ffn(role: str, d: int, p: int, L: int, compat_g: bool = False) -> FfnSpec:
    """Feedforward network for one of the four layer roles.

    The returned network computes a delta added to the value channel by the
    residual connection (all other channels get zero):

    - copy-negate (odd, AC0): value <- I[(value - flag1) != 0] on input and
      argument tokens; value <- 0 on gate tokens.
    - gate-resolve (even, AC0): argument tokens <- 0; AND gates <-
      1 - I[value > 0]; everything else <- I[value > 0].
    - signed-copy (odd, TC0): value <- (1 - 2*flag1) * I[value > 0] on input
      and argument tokens; value <- 0 on gate tokens.
    - threshold-resolve (even, TC0): argument tokens <- 0; everything else
      <- I[(value - flag2) > 0].
    """
    b = _FfnBuilder(d, p, compat_g)
    one = Fraction(1)
    if role == COPY_NEGATE:
        i_pos = b.indicator({VALUE: one, FLAG1: -one})
        i_neg = b.indicator({VALUE: -one, FLAG1: one})
        nt = b.indicator(_gate_token_detector_row(L), bias=L - 1)
        vp = b.passthrough({VALUE: one})
        vn = b.passthrough({VALUE: -one})
        a = ({i_pos: one, i_neg: one, nt: one}, -1)
        keep_p = ({vp: one}, 0)
        keep_n = ({vn: one}, 0)
        return b.build(role, [a, keep_p, keep_n], {0: one, 1: -one, 2: one})
    if role == GATE_RESOLVE:
        ind = b.indicator({VALUE: one})
        f2 = b.passthrough({FLAG2: one})
        f3 = b.passthrough({FLAG3: one})
        vp = b.passthrough({VALUE: one})
        vn = b.passthrough({VALUE: -one})
        a = ({ind: -one, f2: one, f3: -one}, 0)  # (1-I)[AND gate token]
        c = ({ind: one, f2: -one, f3: -one}, 0)  # I[other non-arg token]
        keep_p = ({vp: one}, 0)
        keep_n = ({vn: one}, 0)
        return b.build(role, [a, c, keep_p, keep_n], {0: one, 1: one, 2: -one, 3: one})
    if role == SIGNED_COPY:
        ind = b.indicator({VALUE: one})
        nt = b.indicator(_gate_token_detector_row(L), bias=L - 1)
        f1 = b.passthrough({FLAG1: one})
        vp = b.passthrough({VALUE: one})
        vn = b.passthrough({VALUE: -one})
        aa = ({ind: one, nt: one}, -1)  # I[v>0] on non-gate tokens
        bb = ({ind: one, f1: one, nt: one}, -2)  # ... and negated
        keep_p = ({vp: one}, 0)
        keep_n = ({vn: one}, 0)
        return b.build(
            role, [aa, bb, keep_p, keep_n], {0: one, 1: Fraction(-2), 2: -one, 3: one}
        )
    if role == THRESHOLD_RESOLVE:
        ind = b.indicator({VALUE: one, FLAG2: -one})
        f3 = b.passthrough({FLAG3: one})
        vp = b.passthrough({VALUE: one})
        vn = b.passthrough({VALUE: -one})
        aa = ({ind: one, f3: -one}, 0)
        keep_p = ({vp: one}, 0)
        keep_n = ({vn: one}, 0)
        return b.build(role, [aa, keep_p, keep_n], {0: one, 1: -one, 2: one})
    raise ValueError(f"unknown ffn role {role!r}")


# ---------------------------------------------------------------------------
# Certification: structural checks that the chosen precision preserves every
# decision margin the construction relies on.
# ---------------------------------------------------------------------------


def certify(c: Circuit, p: int) -> list[str]:
    """Return reasons the compiled model may diverge at this precision."""
    notes = []
    kmax = fx.max_scaled(p)
    L = enc.index_width(c.max_id())
    if ((L - 1) << p) > kmax:
        notes.append(
            f"index width {L} exceeds B_p at p={p}; gate-token detection saturates"
        )
    if (3 << p) > kmax:
        notes.append(f"p={p} cannot represent the constant 3 used inside FFNs")
    if fx.sexp(-kmax, p) != 0:
        notes.append(f"exp(-B_p) does not round to zero at p={p}; masking leaks")
    if c.family == TC0:
        for g in c.gates:
            theta, args = circ.normalized_threshold(g)
            m = len(args)
            w = enc.attention_weight(m, p).scaled
            field = fx.round_scaled(enc.threshold_field(theta, m, p), p)
            neg = sum(1 for _, s in args if s < 0)
            pos = m - neg
            if max(neg, pos) * w > kmax:
                notes.append(
                    f"vertex {g.id}: fan-in {m} overflows partial sums at p={p}"
                )
                continue
            for s_count in range(-neg, pos + 1):
                head = fx._clamp(s_count * w, kmax)
                if (head > field) != (s_count > theta):
                    notes.append(
                        f"vertex {g.id}: margin lost at p={p} "
                        f"(signed sum {s_count} vs theta {theta})"
                    )
                    break
    return notes


# ---------------------------------------------------------------------------
# Compilation.
# ---------------------------------------------------------------------------


def compile_circuit(c: Circuit, p: int | None = None, compat_g: bool = False) -> Model:
    problems = circ.validate(c)
    if problems:
        raise CompileError("invalid circuit: " + "; ".join(problems))
    if p is None:
        p = default_precision(c)
    if p < MIN_PRECISION:
        raise PrecisionError(
            f"precision {p} too small: the construction needs p >= {MIN_PRECISION} "
            f"(B_p must cover the constants 2 and 3 used by the layer networks)"
        )
    L = enc.index_width(c.max_id())
    d = enc.embedding_dim(L)
    tokens = enc.layout(c, p)
    enc.check_orthogonality(L, p, c.max_id(), exhaustive=False)
    notes = certify(c, p)
    stats = circ.desc_stats(c)

    depth = stats.depth
    if depth == 0:
        layers: tuple = ()
        readout_pos = c.output_id - 1
    else:
        attn_odd = make_attention("first", d, p, L)
        attn_even = make_attention("second", d, p, L)
        if c.family == AC0:
            ffn_odd = make_ffn(COPY_NEGATE, d, p, L, compat_g)
            ffn_even = make_ffn(GATE_RESOLVE, d, p, L, compat_g)
        else:
            ffn_odd = make_ffn(SIGNED_COPY, d, p, L, compat_g)
            ffn_even = make_ffn(THRESHOLD_RESOLVE, d, p, L, compat_g)
        layers = ((attn_odd, ffn_odd), (attn_even, ffn_even)) * depth
        readout_pos = len(tokens) - 1

    return Model(
        p=p,
        d=d,
        L=L,
        n_inputs=c.n_inputs,
        family=c.family,
        tokens=tokens,
        layers=layers,
        readout_pos=readout_pos,
        circuit_hash=circ.circuit_sha256(c),
        pause_token_count=stats.desc_length - c.n_inputs,
        certified=not notes,
        certification_notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# Model files: structured text, exact decimals, lossless round trip.
# ---------------------------------------------------------------------------

FORMAT_TAG = "padtf-model"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def _triplets(m: tuple[tuple[Fp, ...], ...]) -> str:
    out = []
    for r, row in enumerate(m):
        for cidx, v in enumerate(row):
            if v.scaled:
                out.append(f"{r}:{cidx}:{fx.render(v)}")
    return " ".join(out) if out else "-"


def _parse_triplets(tok: str, rows: int, cols: int, p: int, allow_round: bool):
    grid = [[fx.zero(p)] * cols for _ in range(rows)]
    if tok.strip() != "-":
        for item in tok.split():
            try:
                r, cidx, val = item.split(":", 2)
                grid[int(r)][int(cidx)] = fx.parse(val, p, allow_round)
            except (ValueError, IndexError) as e:
                raise ModelFormatError(f"bad matrix entry {item!r}: {e}") from e
    return tuple(tuple(row) for row in grid)


def serialize_model(m: Model) -> str:
    lines = [
        f"{FORMAT_TAG} {FORMAT_VERSION}",
        f"family {m.family}",
        f"precision {m.p}",
        f"dims d={m.d} L={m.L}",
        f"inputs {m.n_inputs}",
        f"pause-tokens {m.pause_token_count}",
        f"readout {m.readout_pos}",
        f"certified {'yes' if m.certified else 'no'}",
        f"circuit-sha256 {m.circuit_hash}",
    ]
    for note in m.certification_notes:
        lines.append(f"note {note}")
    for idx, t in enumerate(m.tokens):
        if t.kind == enc.INP:
            lines.append(f"token {idx} inp {t.vertex_id}")
        elif t.kind == enc.ARG:
            lines.append(
                f"token {idx} arg {t.vertex_id} {t.source_id} {fx.render(t.flags[0])}"
            )
        else:
            lines.append(f"token {idx} gate {t.vertex_id} {fx.render(t.flags[1])}")
    for li, (attn, ffn) in enumerate(m.layers):
        mask = "causal" if attn.causal_mask else "open"
        lines.append(f"layer {li} attention {mask}")
        lines.append(f"wqk {_triplets(attn.wqk)}")
        lines.append(f"wv {_triplets(attn.wv)}")
        lines.append(f"layer {li} ffn {ffn.role} {len(ffn.layers)}")
        for sub in ffn.layers:
            rows, cols = len(sub.weights), len(sub.weights[0])
            lines.append(f"sub {sub.activation} {rows} {cols}")
            lines.append(f"w {_triplets(sub.weights)}")
            bias = " ".join(
                f"{i}:{fx.render(v)}" for i, v in enumerate(sub.bias) if v.scaled
            )
            lines.append(f"b {bias if bias else '-'}")
    return "\n".join(lines) + "\n"


def parse_model(text: str, allow_round: bool = False) -> Model:
    lines = [ln for ln in text.splitlines()]
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            ln = lines[pos].strip()
            pos += 1
            if ln:
                return ln
        return None

    header = next_line()
    if header is None or not header.startswith(FORMAT_TAG):
        raise ModelFormatError(f"not a {FORMAT_TAG} file")
    try:
        version = int(header.split()[1])
    except (IndexError, ValueError):
        raise ModelFormatError("missing format version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format version {version} (supported: {FORMAT_VERSION})"
        )

    fields: dict[str, str] = {}
    tokens: list[TokenEncoding] = []
    notes: list[str] = []
    layer_specs: list[tuple[AttentionSpec, FfnSpec]] = []
    attn_cache: dict[str, AttentionSpec] = {}
    ffn_cache: dict[str, FfnSpec] = {}
    pending_attn: AttentionSpec | None = None

    def need(key):
        if key not in fields:
            raise ModelFormatError(f"missing field {key!r}")
        return fields[key]

    simple = {
        "family",
        "precision",
        "dims",
        "inputs",
        "pause-tokens",
        "readout",
        "certified",
        "circuit-sha256",
    }

    ln = next_line()
    while ln is not None:
        head, _, rest = ln.partition(" ")
        if head in simple:
            fields[head] = rest.strip()
        elif head == "note":
            notes.append(rest.strip())
        elif head == "token":
            p = int(need("precision"))
            dims = dict(kv.split("=") for kv in need("dims").split())
            L = int(dims["L"])
            parts = rest.split()
            idx, kind = int(parts[0]), parts[1]
            if idx != len(tokens):
                raise ModelFormatError(f"token index {idx} out of order")
            if kind == "inp":
                tokens.append(enc.encode_input(int(parts[2]), L, p))
            elif kind == "arg":
                negated = fx.parse(parts[4], p, allow_round) != fx.zero(p)
                tokens.append(enc.encode_arg(int(parts[2]), int(parts[3]), negated, L, p))
            elif kind == "gate":
                f2 = fx.parse(parts[3], p, allow_round)
                tokens.append(enc.encode_gate(int(parts[2]), f2.value(), L, p))
            else:
                raise ModelFormatError(f"unknown token kind {kind!r}")
        elif head == "layer":
            p = int(need("precision"))
            d = int(dict(kv.split("=") for kv in need("dims").split())["d"])
            parts = rest.split()
            what = parts[1]
            if what == "attention":
                wqk_ln = next_line()
                wv_ln = next_line()
                if not (wqk_ln and wqk_ln.startswith("wqk ") or wqk_ln == "wqk -"):
                    raise ModelFormatError("expected wqk line")
                if not (wv_ln and wv_ln.startswith("wv ") or wv_ln == "wv -"):
                    raise ModelFormatError("expected wv line")
                payload = (parts[2], wqk_ln, wv_ln)
                key = repr(payload)
                if key not in attn_cache:
                    attn_cache[key] = AttentionSpec(
                        _parse_triplets(wqk_ln[4:], d, d, p, allow_round),
                        _parse_triplets(wv_ln[3:], d, d, p, allow_round),
                        causal_mask=(parts[2] == "causal"),
                    )
                pending_attn = attn_cache[key]
            elif what == "ffn":
                if pending_attn is None:
                    raise ModelFormatError("ffn layer without preceding attention")
                role, nsub = parts[2], int(parts[3])
                subs = []
                raw = [role]
                for _ in range(nsub):
                    sub_ln = next_line()
                    w_ln = next_line()
                    b_ln = next_line()
                    if not (sub_ln and sub_ln.startswith("sub ")):
                        raise ModelFormatError("expected sub line")
                    if not (w_ln and w_ln.startswith("w ")):
                        raise ModelFormatError("expected w line")
                    if not (b_ln and b_ln.startswith("b ")):
                        raise ModelFormatError("expected b line")
                    act, rows, cols = sub_ln.split()[1:4]
                    raw += [sub_ln, w_ln, b_ln]
                    weights = _parse_triplets(w_ln[2:], int(rows), int(cols), p, allow_round)
                    bias = [fx.zero(p)] * int(rows)
                    if b_ln[2:].strip() != "-":
                        for item in b_ln[2:].split():
                            i, val = item.split(":", 1)
                            bias[int(i)] = fx.parse(val, p, allow_round)
                    subs.append(FfnLayer(weights, tuple(bias), act))
                key = repr(raw)
                if key not in ffn_cache:
                    ffn_cache[key] = FfnSpec(role, tuple(subs))
                layer_specs.append((pending_attn, ffn_cache[key]))
                pending_attn = None
            else:
                raise ModelFormatError(f"unknown layer kind {what!r}")
        else:
            raise ModelFormatError(f"unknown directive {head!r}")
        ln = next_line()

    p = int(need("precision"))
    dims = dict(kv.split("=") for kv in need("dims").split())
    return Model(
        p=p,
        d=int(dims["d"]),
        L=int(dims["L"]),
        n_inputs=int(need("inputs")),
        family=need("family"),
        tokens=tuple(tokens),
        layers=tuple(layer_specs),
        readout_pos=int(need("readout")),
        circuit_hash=need("circuit-sha256"),
        pause_token_count=int(need("pause-tokens")),
        certified=need("certified") == "yes",
        certification_notes=tuple(notes),
    )
