"""Circuit intermediate representation and tooling.

A circuit is a topologically ordered DAG: vertices 1..n are the inputs, gates
follow with strictly increasing ids, and every gate argument points at a
smaller id.  AC0 circuits use unbounded fan-in AND/OR/NOT; TC0 circuits use
threshold gates with per-edge signs, firing on the signed sum of their inputs.

The evaluator here is the ground-truth oracle for the whole system: it is a
direct recursive-definition walk over the DAG and shares no code with the
Transformer side.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Sequence

AC0 = "AC0"
TC0 = "TC0"
FAMILIES = (AC0, TC0)

AND, OR, NOT, THRESH = "AND", "OR", "NOT", "THRESH"
GT, LT = "GT", "LT"


class CircuitSyntaxError(ValueError):
    def __init__(self, line: int, col: int, msg: str):
        super().__init__(f"line {line}, col {col}: {msg}")
        self.line = line
        self.col = col


class CircuitSemanticError(ValueError):
    def __init__(self, vertex_id: int, msg: str):
        super().__init__(f"vertex {vertex_id}: {msg}")
        self.vertex_id = vertex_id


@dataclass(frozen=True, slots=True)
class Gate:
    id: int
    kind: str  # AND | OR | NOT | THRESH
    args: tuple[tuple[int, int], ...]  # (source_id, edge_sign)
    direction: str | None = None  # GT | LT, THRESH only
    theta: int | None = None  # THRESH only


@dataclass(frozen=True, slots=True)
class Circuit:
    family: str
    n_inputs: int
    gates: tuple[Gate, ...]
    output_id: int

    def gate_map(self) -> dict[int, Gate]:
        return {g.id: g for g in self.gates}

    def max_id(self) -> int:
        return self.gates[-1].id if self.gates else self.n_inputs


@dataclass(frozen=True, slots=True)
class DescStats:
    """Description-length accounting: one string per input, per argument, and
    per gate (its type or threshold)."""

    desc_length: int
    depth: int
    size: int


def validate(c: Circuit) -> list[str]:
    """Return all invariant violations (empty list means valid)."""
    out: list[str] = []
    if c.family not in FAMILIES:
        out.append(f"unknown family {c.family!r}")
        return out
    if c.n_inputs < 1:
        out.append(f"n_inputs must be >= 1, got {c.n_inputs}")
        return out

    known = set(range(1, c.n_inputs + 1))
    prev = c.n_inputs
    referenced: set[int] = set()
    for g in c.gates:
        if g.id <= prev:
            out.append(f"vertex {g.id}: id not strictly increasing (after {prev})")
        prev = max(prev, g.id)
        if not g.args:
            out.append(f"vertex {g.id}: gate has zero fan-in")
        if g.kind == NOT and len(g.args) != 1:
            out.append(f"vertex {g.id}: NOT takes exactly one argument")
        if g.kind == THRESH:
            if c.family == AC0:
                out.append(f"vertex {g.id}: THRESH gate in an AC0 circuit")
            if g.direction not in (GT, LT):
                out.append(f"vertex {g.id}: bad threshold direction {g.direction!r}")
            if g.theta is None:
                out.append(f"vertex {g.id}: missing threshold value")
        elif g.kind in (AND, OR, NOT):
            if c.family == TC0:
                out.append(f"vertex {g.id}: {g.kind} gate in a TC0 circuit")
            if g.direction is not None or g.theta is not None:
                out.append(f"vertex {g.id}: direction/theta only apply to THRESH")
        else:
            out.append(f"vertex {g.id}: unknown gate kind {g.kind!r}")
        seen_srcs = set()
        for src, sign in g.args:
            if src >= g.id:
                out.append(f"vertex {g.id}: forward/self reference to {src}")
            elif src not in known:
                out.append(f"vertex {g.id}: argument {src} is not a vertex")
            if sign not in (-1, 1):
                out.append(f"vertex {g.id}: bad edge sign {sign}")
            elif sign == -1 and g.kind != THRESH:
                out.append(f"vertex {g.id}: negative edge sign on {g.kind} gate")
            if src in seen_srcs and g.kind != THRESH:
                out.append(f"vertex {g.id}: duplicate argument {src}")
            seen_srcs.add(src)
            referenced.add(src)
        known.add(g.id)

    if c.output_id not in known:
        out.append(f"output {c.output_id} is not a vertex")
    else:
        if c.output_id in referenced:
            out.append(f"vertex {c.output_id}: output is referenced by an edge")
        for v in sorted(known - referenced - {c.output_id}):
            out.append(f"vertex {v}: unreferenced (circuit must have a single sink)")
    return out


def check_valid(c: Circuit) -> None:
    problems = validate(c)
    if problems:
        raise CircuitSemanticError(_first_vertex(problems), "; ".join(problems))


def _first_vertex(problems: list[str]) -> int:
    for msg in problems:
        if msg.startswith("vertex "):
            return int(msg.split()[1].rstrip(":"))
    return 0


def evaluate_all(c: Circuit, x: Sequence[int]) -> dict[int, int]:
    """Value of every vertex on input x, in topological order."""
    if len(x) != c.n_inputs:
        raise ValueError(f"expected {c.n_inputs} input bits, got {len(x)}")
    if any(b not in (0, 1) for b in x):
        raise ValueError("inputs must be bits")
    vals = {i + 1: int(b) for i, b in enumerate(x)}
    for g in c.gates:
        if g.kind == AND:
            v = int(all(vals[s] for s, _ in g.args))
        elif g.kind == OR:
            v = int(any(vals[s] for s, _ in g.args))
        elif g.kind == NOT:
            v = 1 - vals[g.args[0][0]]
        else:
            total = sum(sign * vals[s] for s, sign in g.args)
            v = int(total > g.theta) if g.direction == GT else int(total < g.theta)
        vals[g.id] = v
    return vals


def evaluate(c: Circuit, x: Sequence[int]) -> int:
    return evaluate_all(c, x)[c.output_id]


def layerize(c: Circuit) -> dict[int, int]:
    """Inputs at layer 0; each gate one past its deepest source."""
    layer = {i: 0 for i in range(1, c.n_inputs + 1)}
    for g in c.gates:
        layer[g.id] = 1 + max(layer[s] for s, _ in g.args)
    return layer


def depth(c: Circuit) -> int:
    return layerize(c)[c.output_id]


def desc_stats(c: Circuit) -> DescStats:
    n_args = sum(len(g.args) for g in c.gates)
    return DescStats(
        desc_length=c.n_inputs + n_args + len(c.gates),
        depth=max(layerize(c).values(), default=0),
        size=len(c.gates),
    )


def normalized_threshold(g: Gate) -> tuple[int, tuple[tuple[int, int], ...]]:
    """Fold the gate direction into edge signs: the result is always a strict
    greater-than gate.  LT(theta) over signed args equals GT(-theta) with all
    signs flipped."""
    if g.kind != THRESH:
        raise ValueError(f"vertex {g.id} is not a threshold gate")
    if g.direction == GT:
        return g.theta, g.args
    return -g.theta, tuple((s, -sign) for s, sign in g.args)


# ---------------------------------------------------------------------------
# Text format.  One directive per line, '#' starts a comment:
#   circuit <AC0|TC0>
#   inputs <n>
#   gate <id> <AND|OR|NOT> <src>+
#   gate <id> THRESH <GT|LT> <theta> (<+|-><src>)+
#   output <id>
# ---------------------------------------------------------------------------


def serialize_circuit(c: Circuit) -> str:
    lines = [f"circuit {c.family}", f"inputs {c.n_inputs}"]
    for g in c.gates:
        if g.kind == THRESH:
            args = " ".join(f"{'+' if sign > 0 else '-'}{s}" for s, sign in g.args)
            lines.append(f"gate {g.id} THRESH {g.direction} {g.theta} {args}")
        else:
            args = " ".join(str(s) for s, _ in g.args)
            lines.append(f"gate {g.id} {g.kind} {args}")
    lines.append(f"output {c.output_id}")
    return "\n".join(lines) + "\n"


def _tokens_with_cols(line: str) -> list[tuple[str, int]]:
    out = []
    col = 0
    for tok in line.split():
        col = line.index(tok, col)
        out.append((tok, col + 1))
        col += len(tok)
    return out


def parse_circuit(text: str) -> Circuit:
    family = None
    n_inputs = None
    gates: list[Gate] = []
    output_id = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        toks = _tokens_with_cols(line)
        if not toks:
            continue
        (head, headcol) = toks[0]

        def err(msg, col=headcol):
            raise CircuitSyntaxError(lineno, col, msg)

        def want_int(i, what):
            tok, col = toks[i]
            try:
                return int(tok)
            except ValueError:
                err(f"expected {what}, got {tok!r}", col)

        if head == "circuit":
            if family is not None:
                err("duplicate circuit directive")
            if len(toks) != 2 or toks[1][0] not in FAMILIES:
                err("expected 'circuit AC0' or 'circuit TC0'")
            family = toks[1][0]
        elif head == "inputs":
            if family is None:
                err("'circuit' directive must come first")
            if n_inputs is not None:
                err("duplicate inputs directive")
            if len(toks) != 2:
                err("expected 'inputs <n>'")
            n_inputs = want_int(1, "input count")
        elif head == "gate":
            if n_inputs is None:
                err("'inputs' directive must come before gates")
            if output_id is not None:
                err("gate after output directive")
            if len(toks) < 3:
                err("expected 'gate <id> <kind> ...'")
            gid = want_int(1, "gate id")
            kind = toks[2][0]
            if kind == THRESH:
                if len(toks) < 6:
                    err("expected 'gate <id> THRESH <GT|LT> <theta> <±src>...'")
                direction = toks[3][0]
                if direction not in (GT, LT):
                    err(f"expected GT or LT, got {direction!r}", toks[3][1])
                theta = want_int(4, "threshold")
                args = []
                for tok, col in toks[5:]:
                    if tok[:1] not in "+-" or not tok[1:].isdigit():
                        err(f"expected signed source like +3 or -3, got {tok!r}", col)
                    args.append((int(tok[1:]), 1 if tok[0] == "+" else -1))
                gates.append(Gate(gid, THRESH, tuple(args), direction, theta))
            elif kind in (AND, OR, NOT):
                args = []
                for tok, col in toks[3:]:
                    if not tok.isdigit():
                        err(f"expected source id, got {tok!r}", col)
                    args.append((int(tok), 1))
                if not args:
                    err("gate needs at least one source")
                gates.append(Gate(gid, kind, tuple(args)))
            else:
                err(f"unknown gate kind {kind!r}", toks[2][1])
        elif head == "output":
            if n_inputs is None:
                err("'inputs' directive must come before output")
            if output_id is not None:
                err("duplicate output directive")
            if len(toks) != 2:
                err("expected 'output <id>'")
            output_id = want_int(1, "output id")
        else:
            err(f"unknown directive {head!r}")

    if family is None:
        raise CircuitSyntaxError(1, 1, "missing circuit directive")
    if n_inputs is None:
        raise CircuitSyntaxError(1, 1, "missing inputs directive")
    if output_id is None:
        raise CircuitSyntaxError(1, 1, "missing output directive")

    c = Circuit(family, n_inputs, tuple(gates), output_id)
    check_valid(c)
    return c


def circuit_sha256(c: Circuit) -> str:
    return hashlib.sha256(serialize_circuit(c).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Builders.
# ---------------------------------------------------------------------------


def build_parity_circuit(n: int) -> Circuit:
    """Two-layer threshold circuit for parity.

    First layer: counters G_k firing iff the popcount is at least k (strict
    greater-than with theta = k-1, integer signals).  Second layer combines
    them with alternating signs: the signed sum of G_1..G_n is 1 when the
    popcount is odd and 0 when even.
    """
    if n < 1:
        raise ValueError(f"parity needs n >= 1, got {n}")
    gates = []
    inputs = tuple((i, 1) for i in range(1, n + 1))
    for k in range(1, n + 1):
        gates.append(Gate(n + k, THRESH, inputs, GT, k - 1))
    final_args = tuple((n + k, 1 if k % 2 == 1 else -1) for k in range(1, n + 1))
    gates.append(Gate(2 * n + 1, THRESH, final_args, GT, 0))
    return Circuit(TC0, n, tuple(gates), 2 * n + 1)


def build_or_tree(n: int, fanin: int = 2) -> Circuit:
    """Balanced tree of OR gates over n inputs (single gate when fanin >= n)."""
    if n < 1 or fanin < 2:
        raise ValueError("need n >= 1 and fanin >= 2")
    if n == 1:
        return Circuit(AC0, 1, (), 1)
    level = list(range(1, n + 1))
    gates = []
    next_id = n + 1
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), fanin):
            chunk = level[i : i + fanin]
            if len(chunk) == 1:
                nxt.append(chunk[0])
                continue
            gates.append(Gate(next_id, OR, tuple((s, 1) for s in chunk)))
            nxt.append(next_id)
            next_id += 1
        level = nxt
    return Circuit(AC0, n, tuple(gates), level[0])


def random_circuit(
    family: str,
    n_inputs: int,
    depth: int,
    max_fanin: int,
    size_budget: int,
    seed: int,
) -> Circuit:
    """Seeded random circuit of exactly the requested depth.

    The top layer holds only the output gate; every vertex except the output
    is referenced (single sink), with under-referenced vertices absorbed into
    later gates or, last resort, the output's argument list.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if n_inputs < 1 or depth < 1 or max_fanin < 1 or size_budget < 1:
        raise ValueError("parameters must be positive")
    rng = random.Random(seed)

    # the top layer holds only the output; one gate per lower layer is
    # mandatory to anchor the depth, extras spread randomly below the top
    total = rng.randint(depth, max(depth, size_budget))
    counts = [1] * (depth - 1)
    for _ in range(total - depth):
        if counts:
            counts[rng.randrange(len(counts))] += 1

    by_layer: dict[int, list[int]] = {0: list(range(1, n_inputs + 1))}
    unref: set[int] = set(by_layer[0])
    gates: list[Gate] = []
    next_id = n_inputs + 1

    def pick_kind():
        if family == TC0:
            return THRESH
        return rng.choice((AND, OR, OR, NOT))

    def make_gate(gid: int, layer: int, absorb: set[int] | None = None) -> Gate:
        kind = pick_kind()
        below = [v for l in range(layer) for v in by_layer[l]]
        anchors = by_layer[layer - 1]
        unref_anchors = [v for v in anchors if v in unref]
        anchor = rng.choice(unref_anchors or anchors)
        if kind == NOT and absorb:
            kind = rng.choice((AND, OR))
        arity = 1 if kind == NOT else rng.randint(1, max_fanin)
        chosen = [anchor]
        pool = [v for v in below if v != anchor]
        unref_pool = [v for v in pool if v in unref]
        rng.shuffle(unref_pool)
        rng.shuffle(pool)
        for v in unref_pool + pool:
            if len(chosen) >= arity:
                break
            if family == AC0 and v in chosen:
                continue
            chosen.append(v)
        if absorb:
            chosen.extend(sorted(absorb - set(chosen)))
        if kind == THRESH:
            args = tuple((s, rng.choice((1, -1))) for s in chosen)
            direction = rng.choice((GT, LT))
            lo = -sum(1 for _, sg in args if sg < 0)
            hi = sum(1 for _, sg in args if sg > 0)
            theta = rng.randint(lo - 1, hi)
            g = Gate(gid, THRESH, args, direction, theta)
        else:
            g = Gate(gid, kind, tuple((s, 1) for s in chosen))
        for s, _ in g.args:
            unref.discard(s)
        return g

    for layer in range(1, depth):
        by_layer[layer] = []
        for _ in range(counts[layer - 1]):
            g = make_gate(next_id, layer)
            gates.append(g)
            by_layer[layer].append(next_id)
            unref.add(next_id)
            next_id += 1

    out = make_gate(next_id, depth, absorb=set(unref))
    gates.append(out)
    c = Circuit(family, n_inputs, tuple(gates), next_id)
    check_valid(c)
    return c
