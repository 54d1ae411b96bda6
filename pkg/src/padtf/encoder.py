"""Positional encodings for compiled models.

Each vertex index i gets a key/query pair built from its sign-binary
representation: key(i) interleaves sbin(i) with ones, query(i) interleaves
B_p * sbin(i) with -B_p.  Under saturating left-to-right accumulation the dot
of key(i) with query(j) is exactly 0 when i = j and -B_p otherwise, for any
precision: once one bit pair disagrees the running sum pins to -B_p and every
later (+B_p, -B_p) pair cancels.

Index 0 is reserved: no token ever queries for it, so a key of k(0) makes a
token unmatchable in that attention layer.

A token embedding is (value, flag1, flag2, flag3, key1, query1, key2, query2),
dimension 4 + 8L.  The value channel is bound by the VM at run time; this
module produces everything else.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import ceil, log2

from . import fixedpoint as fx
from .circuit import AND, NOT, THRESH, Circuit, normalized_threshold
from .fixedpoint import Fp

INP, ARG, GATE = "inp", "arg", "gate"

VALUE, FLAG1, FLAG2, FLAG3 = 0, 1, 2, 3


def index_width(max_id: int) -> int:
    """Bits needed for indices 0..max_id."""
    return max(1, ceil(log2(max_id + 1)))


def embedding_dim(L: int) -> int:
    return 4 + 8 * L


def seg_pair1_key(L: int) -> range:
    return range(4, 4 + 2 * L)


def seg_pair1_query(L: int) -> range:
    return range(4 + 2 * L, 4 + 4 * L)


def seg_pair2_key(L: int) -> range:
    return range(4 + 4 * L, 4 + 6 * L)


def seg_pair2_query(L: int) -> range:
    return range(4 + 6 * L, 4 + 8 * L)


def sbin_slots(seg: range) -> list[int]:
    """Channels of a key/query segment holding sbin bits (even offsets)."""
    return list(seg)[0::2]


def sbin(i: int, width: int) -> tuple[int, ...]:
    """Sign-binary representation, MSB first: 2*bin(i) - 1."""
    if not 0 <= i < (1 << width):
        raise ValueError(f"index {i} does not fit in {width} bits")
    return tuple(1 if (i >> b) & 1 else -1 for b in range(width - 1, -1, -1))


def interleave(x: tuple, y: tuple) -> tuple:
    if len(x) != len(y):
        raise ValueError("interleave needs equal lengths")
    out = []
    for a, b in zip(x, y):
        out.append(a)
        out.append(b)
    return tuple(out)


def key_query(i: int, L: int, p: int) -> tuple[tuple[Fp, ...], tuple[Fp, ...]]:
    """key(i) = sbin(i) interleaved with 1s; query(i) = B_p * (sbin(i)
    interleaved with -1s)."""
    s = sbin(i, L)
    kmax = fx.max_scaled(p)
    unit = 1 << p
    key = interleave(
        tuple(Fp(b * unit, p) for b in s), tuple(Fp(unit, p) for _ in s)
    )
    query = interleave(
        tuple(Fp(b * kmax, p) for b in s), tuple(Fp(-kmax, p) for _ in s)
    )
    return key, query


def key_query_dot(i: int, j: int, L: int, p: int) -> Fp:
    """Saturated dot of key(i) against query(j), in the VM's rounding order."""
    key, _ = key_query(i, L, p)
    _, query = key_query(j, L, p)
    return fx.dot(key, query)


def attention_weight(m: int, p: int) -> Fp:
    """The weight a gate token puts on each of its m argument tokens: one over
    the saturating sum of m unit scores, rounded."""
    unit = 1 << p
    kmax = fx.max_scaled(p)
    z = (m * unit) if m <= (1 << p) - 1 else kmax
    return Fp(fx.sdiv(unit, z, p, kmax), p)


def threshold_field(theta: int, m: int, p: int) -> Fraction:
    """Comparison field stored in a threshold token: theta times the rounded
    per-argument attention weight.

    The resolve step tests (signed argument sum) * [1/m]_p against this field,
    and multiples of the same grid weight order exactly like the integers
    themselves, so the test is S > theta for every S regardless of precision.
    Rounding theta/m to nearest independently of [1/m]_p does not have this
    property: the two roundings can disagree at the boundary S = theta, for
    some gates at every precision.  The field equals [theta/m]_p whenever the
    two agree.  Theta is first clamped to [-m-1, m], which cannot change the
    comparison since S ranges over [-m, m].
    """
    w = attention_weight(m, p).scaled
    theta_c = max(-m - 1, min(m, theta))
    return Fraction(fx._clamp(theta_c * w, fx.max_scaled(p)), 1 << p)


@dataclass(frozen=True, slots=True)
class TokenEncoding:
    """One token of the model input: static channels plus bookkeeping ids."""

    kind: str  # inp | arg | gate
    vertex_id: int
    source_id: int | None
    flags: tuple[Fp, Fp, Fp]
    pair1: tuple[tuple[Fp, ...], tuple[Fp, ...]]  # (key, query)
    pair2: tuple[tuple[Fp, ...], tuple[Fp, ...]]

    def static_channels(self) -> tuple[Fp, ...]:
        return (
            self.flags
            + self.pair1[0]
            + self.pair1[1]
            + self.pair2[0]
            + self.pair2[1]
        )


def _flags(p: int, f1: Fraction | int, f2: Fraction | int, f3: int) -> tuple[Fp, Fp, Fp]:
    return (fx.round_to(p, f1), fx.round_to(p, f2), fx.round_to(p, f3))


def encode_input(i: int, L: int, p: int) -> TokenEncoding:
    kq = key_query(i, L, p)
    return TokenEncoding(INP, i, None, _flags(p, 0, 0, 0), kq, kq)


def encode_arg(i: int, j: int, negated: bool, L: int, p: int) -> TokenEncoding:
    """Argument token for the edge from vertex j into gate i.  ``negated``
    marks AND/NOT-style complementing in AC0 and a -1 edge sign in TC0."""
    k0, _ = key_query(0, L, p)
    _, qj = key_query(j, L, p)
    return TokenEncoding(
        ARG,
        i,
        j,
        _flags(p, 1 if negated else 0, 0, 1),
        (k0, qj),
        key_query(i, L, p),
    )


def encode_gate(i: int, flag2: Fraction | int, L: int, p: int) -> TokenEncoding:
    """Gate token: flag2 is 1 for AND (AC0) or the signed theta/m field (TC0)."""
    ki, qi = key_query(i, L, p)
    k0, _ = key_query(0, L, p)
    return TokenEncoding(GATE, i, None, _flags(p, 0, flag2, 0), (ki, qi), (k0, qi))


def layout(c: Circuit, p: int) -> tuple[TokenEncoding, ...]:
    """One token per description string, in description order: the inputs,
    then each gate's argument tokens followed by its own token."""
    L = index_width(c.max_id())
    tokens = [encode_input(i, L, p) for i in range(1, c.n_inputs + 1)]
    for g in c.gates:
        if g.kind == THRESH:
            theta, args = normalized_threshold(g)
            for src, sign in args:
                tokens.append(encode_arg(g.id, src, sign < 0, L, p))
            tokens.append(
                encode_gate(g.id, threshold_field(theta, len(args), p), L, p)
            )
        else:
            negated = g.kind in (AND, NOT)
            for src, _ in g.args:
                tokens.append(encode_arg(g.id, src, negated, L, p))
            tokens.append(encode_gate(g.id, 1 if g.kind == AND else 0, L, p))
    return tuple(tokens)


def check_orthogonality(L: int, p: int, max_index: int, exhaustive: bool = False) -> None:
    """Assert the key/query dot contract for indices 0..max_index.

    The cheap form checks the full diagonal plus a spread of off-diagonal
    pairs; the exhaustive form checks the whole matrix.
    """
    mb = fx.bmax(p)
    zero = fx.zero(p)

    def check(i, j):
        got = key_query_dot(i, j, L, p)
        want = zero if i == j else fx.neg(mb)
        if got != want:
            raise AssertionError(
                f"key({i})·query({j}) = {got}, expected {want} (L={L}, p={p})"
            )

    if exhaustive:
        for i in range(max_index + 1):
            for j in range(max_index + 1):
                check(i, j)
        return
    for i in range(max_index + 1):
        check(i, i)
        check(i, (i + 1) % (max_index + 1))
        check(0, i)
