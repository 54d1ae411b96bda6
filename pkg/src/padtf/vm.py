"""Exact fixed-precision Transformer interpreter.

Every intermediate lives on the F_p grid.  The rounding order inside an
attention layer is normative: score dot, mask add, exp, normalizer sum over
ascending key index, per-key division, weight-times-value products accumulated
over ascending key index, value projection, residual add.  Accumulations
always run left to right; results under saturation depend on this order.

``forward`` runs any well-formed model.  When a cheap static analysis shows
that a model's score matrices never read the value channel and that attention
and feedforward outputs only ever write the value channel (true of every
compiled model), attention weights and per-token feedforward responses are
pure functions of data fixed at embedding time, so the interpreter caches
them.  The cached path reuses results of the honest computation; it cannot
diverge from it.  Models that fail the analysis take the plain path.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import fixedpoint as fx
from .compiler import AttentionSpec, FfnSpec, Model
from .encoder import VALUE
from .fixedpoint import Fp


class NormalizerZero(RuntimeError):
    """An attention row had no surviving score; compiled models cannot
    produce this, so it signals a malformed or corrupted model."""


class ModelMalfunction(RuntimeError):
    """The readout channel held something other than an exact 0 or 1."""

    def __init__(self, value: Fp, position: int, trace: "Trace"):
        super().__init__(
            f"readout at position {position} is {fx.render(value)}, not a bit"
        )
        self.value = value
        self.position = position
        self.trace = trace


@dataclass(frozen=True, slots=True)
class ResidualState:
    rows: tuple[tuple[Fp, ...], ...]
    layer_index: int


@dataclass(slots=True)
class Trace:
    """Layer-by-layer residual snapshots plus per-layer attention weights."""

    snapshots: list[ResidualState]
    attention_weights: list[tuple[tuple[Fp, ...], ...]]

    def dump(self) -> str:
        out = []
        for snap in self.snapshots:
            out.append(f"layer {snap.layer_index}")
            for t, row in enumerate(snap.rows):
                out.append(f"  token {t}: " + " ".join(fx.render(v) for v in row))
            if 0 < snap.layer_index <= len(self.attention_weights):
                out.append(f"  attention {snap.layer_index - 1}")
                for i, row in enumerate(self.attention_weights[snap.layer_index - 1]):
                    out.append(
                        f"    q{i}: " + " ".join(fx.render(v) for v in row)
                    )
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Scaled-integer core.
# ---------------------------------------------------------------------------


def _sparse_rows(matrix: tuple[tuple[Fp, ...], ...]) -> list[list[tuple[int, int]]]:
    return [
        [(c, v.scaled) for c, v in enumerate(row) if v.scaled] for row in matrix
    ]


def _sparse_cols(matrix: tuple[tuple[Fp, ...], ...]) -> list[list[tuple[int, int]]]:
    cols = [[] for _ in matrix[0]]
    for a, row in enumerate(matrix):
        for c, v in enumerate(row):
            if v.scaled:
                cols[c].append((a, v.scaled))
    return cols


_SPEC_CACHE: dict[int, tuple[object, object]] = {}


def _attn_tables(spec: AttentionSpec):
    hit = _SPEC_CACHE.get(id(spec))
    if hit is None or hit[0] is not spec:
        tables = (_sparse_cols(spec.wqk), _sparse_rows(spec.wv))
        _SPEC_CACHE[id(spec)] = (spec, tables)
        return tables
    return hit[1]


def _ffn_tables(spec: FfnSpec):
    hit = _SPEC_CACHE.get(id(spec))
    if hit is None or hit[0] is not spec:
        tables = [
            (_sparse_rows(sub.weights), [b.scaled for b in sub.bias], sub.activation)
            for sub in spec.layers
        ]
        _SPEC_CACHE[id(spec)] = (spec, tables)
        return tables
    return hit[1]


def _attention_scaled(rows, spec: AttentionSpec, p: int):
    """Honest attention over scaled-int rows; returns (new rows, weights)."""
    kmax = fx.max_scaled(p)
    sadd, smul, sdiv, sexp = fx.sadd, fx.smul, fx.sdiv, fx.sexp
    wqk_cols, wv_rows = _attn_tables(spec)
    T = len(rows)
    d = len(rows[0])
    weights = []
    new_rows = []
    for i in range(T):
        row_i = rows[i]
        y = []
        for c in range(d):
            acc = 0
            for a, w in wqk_cols[c]:
                acc = sadd(acc, smul(row_i[a], w, p, kmax), kmax)
            if acc:
                y.append((c, acc))
        e_row = []
        for j in range(T):
            row_j = rows[j]
            s = 0
            for c, yc in y:
                s = sadd(s, smul(yc, row_j[c], p, kmax), kmax)
            if spec.causal_mask and j > i:
                s = sadd(s, -kmax, kmax)
            e_row.append(sexp(s, p))
        z = 0
        for e in e_row:
            z = sadd(z, e, kmax)
        if z == 0:
            raise NormalizerZero(f"query {i} attends to nothing")
        w_row = [sdiv(e, z, p, kmax) if e else 0 for e in e_row]
        weights.append(w_row)
        head = []
        for c in range(d):
            acc = 0
            for j in range(T):
                wj = w_row[j]
                if wj:
                    acc = sadd(acc, smul(wj, rows[j][c], p, kmax), kmax)
            head.append(acc)
        out = []
        for r in range(d):
            acc = 0
            for c, w in wv_rows[r]:
                acc = sadd(acc, smul(w, head[c], p, kmax), kmax)
            out.append(sadd(row_i[r], acc, kmax))
        new_rows.append(out)
    return new_rows, weights


def _ffn_row_scaled(row, tables, p: int, kmax: int):
    """Output (pre-residual) of the feedforward chain on one token row."""
    sadd, smul = fx.sadd, fx.smul
    h = row
    for rows_sparse, bias, act in tables:
        nh = []
        relu = act == "relu"
        for rw, b in zip(rows_sparse, bias):
            acc = 0
            for c, w in rw:
                acc = sadd(acc, smul(w, h[c], p, kmax), kmax)
            if b:
                acc = sadd(acc, b, kmax)
            if relu and acc < 0:
                acc = 0
            nh.append(acc)
        h = nh
    return h


def _ffn_scaled(rows, spec: FfnSpec, p: int):
    kmax = fx.max_scaled(p)
    tables = _ffn_tables(spec)
    out = []
    for row in rows:
        delta = _ffn_row_scaled(row, tables, p, kmax)
        out.append([fx.sadd(v, dv, kmax) for v, dv in zip(row, delta)])
    return out


# ---------------------------------------------------------------------------
# Public single-layer operations (Fp-typed, used by tests and the plain path).
# ---------------------------------------------------------------------------


def _to_scaled(state: ResidualState):
    return [[v.scaled for v in row] for row in state.rows]


def _to_state(rows, p: int, layer_index: int) -> ResidualState:
    return ResidualState(
        tuple(tuple(Fp(v, p) for v in row) for row in rows), layer_index
    )


def attention_layer(state: ResidualState, spec: AttentionSpec, p: int) -> ResidualState:
    rows, _ = _attention_scaled(_to_scaled(state), spec, p)
    return _to_state(rows, p, state.layer_index + 1)


def ffn_layer(state: ResidualState, spec: FfnSpec, p: int) -> ResidualState:
    return _to_state(_ffn_scaled(_to_scaled(state), spec, p), p, state.layer_index)


# ---------------------------------------------------------------------------
# Model-level execution.
# ---------------------------------------------------------------------------


def check_model(m: Model) -> None:
    d = m.d
    T = len(m.tokens)
    if not (0 <= m.readout_pos < T):
        raise ValueError(f"readout position {m.readout_pos} out of range")
    if m.n_inputs > T:
        raise ValueError("more inputs than tokens")
    for t in m.tokens:
        if len(t.static_channels()) + 1 != d:
            raise ValueError("token encoding width does not match model dims")
    for attn, ffn in m.layers:
        for mat in (attn.wqk, attn.wv):
            if len(mat) != d or any(len(r) != d for r in mat):
                raise ValueError("attention matrix is not d x d")
        width = d
        for sub in ffn.layers:
            if any(len(r) != width for r in sub.weights):
                raise ValueError("feedforward sublayer width mismatch")
            width = len(sub.weights)
            if len(sub.bias) != width:
                raise ValueError("feedforward bias width mismatch")
        if width != d:
            raise ValueError("feedforward output width must equal d")


def embed(m: Model, bits) -> ResidualState:
    return _to_state(_embed_scaled(m, bits), m.p, 0)


def _embed_scaled(m: Model, bits):
    if len(bits) != m.n_inputs:
        raise ValueError(f"expected {m.n_inputs} input bits, got {len(bits)}")
    if any(b not in (0, 1) for b in bits):
        raise ValueError("inputs must be bits")
    unit = 1 << m.p
    rows = []
    for tok in m.tokens:
        v = bits[tok.vertex_id - 1] * unit if tok.kind == "inp" else 0
        rows.append([v] + [f.scaled for f in tok.static_channels()])
    return rows


def static_channels_ok(m: Model) -> bool:
    """True when scores never read the value channel and all layer outputs
    write only the value channel, making non-value channels constant."""
    for attn, ffn in m.layers:
        if any(v.scaled for v in attn.wqk[VALUE]):
            return False
        if any(row[VALUE].scaled for row in attn.wqk):
            return False
        for r, row in enumerate(attn.wv):
            if r != VALUE and any(v.scaled for v in row):
                return False
        last = ffn.layers[-1]
        if len(last.weights) != m.d:
            return False
        for r in range(m.d):
            if r != VALUE and (
                any(v.scaled for v in last.weights[r]) or last.bias[r].scaled
            ):
                return False
    return True


class _AttnPlan:
    __slots__ = ("weights", "wv_value_row", "head_static")

    def __init__(self, weights, wv_value_row, head_static):
        self.weights = weights  # per query: [(j, w_scaled != 0)] ascending
        self.wv_value_row = wv_value_row  # [(c, w_scaled)] ascending
        self.head_static = head_static  # {c: per-query scaled head coord}


class _Plan:
    __slots__ = ("model", "statics", "attn", "ffn_memo")

    def __init__(self, model: Model):
        self.model = model
        self.statics = [
            [f.scaled for f in tok.static_channels()] for tok in model.tokens
        ]
        self.attn: dict[int, _AttnPlan] = {}
        self.ffn_memo: dict[tuple[int, int, int], int] = {}
        p, kmax = model.p, fx.max_scaled(model.p)
        sadd, smul, sdiv, sexp = fx.sadd, fx.smul, fx.sdiv, fx.sexp
        zero_rows = [[0] + s for s in self.statics]
        T = len(zero_rows)
        d = model.d
        for attn, _ in model.layers:
            if id(attn) in self.attn:
                continue
            wqk_cols, _ = _attn_tables(attn)
            # scores are a pure function of (query projection, key row);
            # queries sharing a projection share a whole score row
            y_ids: dict[tuple, int] = {}
            y_of_token = []
            for row_i in zero_rows:
                y = []
                for c in range(d):
                    acc = 0
                    for a, w in wqk_cols[c]:
                        acc = sadd(acc, smul(row_i[a], w, p, kmax), kmax)
                    if acc:
                        y.append((c, acc))
                y_of_token.append(y_ids.setdefault(tuple(y), len(y_ids)))
            score_rows = []
            for yt in y_ids:
                row = []
                for row_j in zero_rows:
                    s = 0
                    for c, yc in yt:
                        s = sadd(s, smul(yc, row_j[c], p, kmax), kmax)
                    row.append(s)
                score_rows.append(row)
            div_memo: dict[tuple[int, int], int] = {}
            sparse = []
            for i in range(T):
                srow = score_rows[y_of_token[i]]
                e_row = []
                z = 0
                for j in range(T):
                    s = srow[j]
                    if attn.causal_mask and j > i:
                        s = sadd(s, -kmax, kmax)
                    e = sexp(s, p)
                    e_row.append(e)
                    z = sadd(z, e, kmax)
                if z == 0:
                    raise NormalizerZero(f"query {i} attends to nothing")
                row_sparse = []
                for j, e in enumerate(e_row):
                    if e:
                        w = div_memo.get((e, z))
                        if w is None:
                            w = sdiv(e, z, p, kmax)
                            div_memo[(e, z)] = w
                        if w:
                            row_sparse.append((j, w))
                sparse.append(row_sparse)
            wv_value_row = [
                (c, v.scaled) for c, v in enumerate(attn.wv[VALUE]) if v.scaled
            ]
            head_static = {}
            for c, _w in wv_value_row:
                if c == VALUE:
                    continue
                per_query = []
                for i in range(T):
                    acc = 0
                    for j, w in sparse[i]:
                        acc = sadd(acc, smul(w, zero_rows[j][c], p, kmax), kmax)
                    per_query.append(acc)
                head_static[c] = per_query
            self.attn[id(attn)] = _AttnPlan(sparse, wv_value_row, head_static)


_PLANS: dict[int, _Plan] = {}


def clear_caches() -> None:
    _PLANS.clear()
    _SPEC_CACHE.clear()
    _CHECKED.clear()


def _plan_for(m: Model) -> _Plan:
    plan = _PLANS.get(id(m))
    if plan is None or plan.model is not m:
        plan = _Plan(m)
        _PLANS[id(m)] = plan
    return plan


def _forward_fast(m: Model, bits, want_trace: bool):
    plan = _plan_for(m)
    p, kmax = m.p, fx.max_scaled(m.p)
    T = len(m.tokens)
    unit = 1 << p
    values = [
        bits[tok.vertex_id - 1] * unit if tok.kind == "inp" else 0
        for tok in m.tokens
    ]
    trace_vals = [list(values)] if want_trace else None
    trace_weights = [] if want_trace else None
    for attn, ffn in m.layers:
        ap = plan.attn[id(attn)]
        new_values = []
        for i in range(T):
            # inlined smul/sadd chain: round product, clamp, accumulate, clamp
            acc = 0
            for j, w in ap.weights[i]:
                vj = values[j]
                if vj:
                    prod = w * vj
                    if prod >= 0:
                        q, r = divmod(prod, unit)
                        if (r << 1) >= unit:
                            q += 1
                    else:
                        q, r = divmod(-prod, unit)
                        if (r << 1) >= unit:
                            q += 1
                        q = -q
                    if q > kmax:
                        q = kmax
                    elif q < -kmax:
                        q = -kmax
                    acc += q
                    if acc > kmax:
                        acc = kmax
                    elif acc < -kmax:
                        acc = -kmax
            proj = 0
            for c, w in ap.wv_value_row:
                hc = acc if c == VALUE else ap.head_static[c][i]
                prod = w * hc
                if prod >= 0:
                    q, r = divmod(prod, unit)
                    if (r << 1) >= unit:
                        q += 1
                else:
                    q, r = divmod(-prod, unit)
                    if (r << 1) >= unit:
                        q += 1
                    q = -q
                if q > kmax:
                    q = kmax
                elif q < -kmax:
                    q = -kmax
                proj += q
                if proj > kmax:
                    proj = kmax
                elif proj < -kmax:
                    proj = -kmax
            out = values[i] + proj
            if out > kmax:
                out = kmax
            elif out < -kmax:
                out = -kmax
            new_values.append(out)
        values = new_values
        fid = id(ffn)
        memo = plan.ffn_memo
        tables = _ffn_tables(ffn)
        new_values = []
        for t in range(T):
            v = values[t]
            key = (fid, t, v)
            dv = memo.get(key)
            if dv is None:
                dv = _ffn_row_scaled([v] + plan.statics[t], tables, p, kmax)[VALUE]
                memo[key] = dv
            out = v + dv
            if out > kmax:
                out = kmax
            elif out < -kmax:
                out = -kmax
            new_values.append(out)
        values = new_values
        if want_trace:
            trace_vals.append(list(values))
            dense = [[0] * T for _ in range(T)]
            for i, row in enumerate(ap.weights[:T]):
                for j, w in row:
                    dense[i][j] = w
            trace_weights.append(dense)
    trace = None
    if want_trace:
        trace = _assemble_trace(m, plan.statics, trace_vals, trace_weights)
    return values[m.readout_pos], trace


def _assemble_trace(m: Model, statics, trace_vals, trace_weights) -> Trace:
    p = m.p
    snapshots = []
    for li, vals in enumerate(trace_vals):
        rows = tuple(
            tuple([Fp(v, p)] + [Fp(s, p) for s in srow])
            for v, srow in zip(vals, statics)
        )
        snapshots.append(ResidualState(rows, li))
    weights = [
        tuple(tuple(Fp(w, p) for w in row) for row in dense)
        for dense in trace_weights
    ]
    return Trace(snapshots, weights)


def _forward_plain(m: Model, bits, want_trace: bool):
    p = m.p
    rows = _embed_scaled(m, bits)
    snapshots = [_to_state(rows, p, 0)] if want_trace else None
    all_weights = [] if want_trace else None
    for li, (attn, ffn) in enumerate(m.layers, start=1):
        rows, weights = _attention_scaled(rows, attn, p)
        rows = _ffn_scaled(rows, ffn, p)
        if want_trace:
            snapshots.append(_to_state(rows, p, li))
            all_weights.append(
                tuple(tuple(Fp(w, p) for w in row) for row in weights)
            )
    trace = Trace(snapshots, all_weights) if want_trace else None
    return rows[m.readout_pos][VALUE], trace


_CHECKED: dict[int, Model] = {}


def forward(m: Model, bits, trace: bool = False, optimize: bool = True):
    """Run the model on a bit vector.  Returns the output bit, or a pair
    (bit, Trace) when tracing.  A readout that is not exactly 0 or 1 raises
    :class:`ModelMalfunction` carrying the traced run."""
    if _CHECKED.get(id(m)) is not m:
        check_model(m)
        _CHECKED[id(m)] = m
    bits = list(bits)
    if optimize and static_channels_ok(m):
        out_scaled, tr = _forward_fast(m, bits, trace)
    else:
        out_scaled, tr = _forward_plain(m, bits, trace)
    unit = 1 << m.p
    if out_scaled == 0:
        bit = 0
    elif out_scaled == unit:
        bit = 1
    else:
        if tr is None:
            if optimize and static_channels_ok(m):
                _, tr = _forward_fast(m, bits, True)
            else:
                _, tr = _forward_plain(m, bits, True)
        raise ModelMalfunction(Fp(out_scaled, m.p), m.readout_pos, tr)
    return (bit, tr) if trace else bit
