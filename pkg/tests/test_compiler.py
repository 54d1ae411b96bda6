"""Compiler: attention blocks, feedforward semantics, model files."""

import itertools

import pytest

from padtf import circuit as circ
from padtf import compiler as comp
from padtf import encoder as enc
from padtf import fixedpoint as fx
from padtf import vm
from padtf.circuit import build_parity_circuit, parse_circuit, random_circuit
from padtf.compiler import (
    COPY_NEGATE,
    GATE_RESOLVE,
    SIGNED_COPY,
    THRESHOLD_RESOLVE,
    compile_circuit,
    make_ffn,
    parse_model,
    serialize_model,
)
from padtf.fixedpoint import Fp

AND2 = parse_circuit("circuit AC0\ninputs 2\ngate 3 AND 1 2\noutput 3\n")


def ffn_apply(spec, token, value_scaled, p):
    """Value channel after the network plus residual, on one token."""
    row = tuple([Fp(value_scaled, p)] + list(token.static_channels()))
    state = vm.ResidualState((row,), 0)
    return vm.ffn_layer(state, spec, p).rows[0][0].scaled


def archetypes(p, L):
    """(name, token, semantic map) triples covering every flag pattern."""
    unit = 1 << p

    def ind(x):
        return unit if x > 0 else 0

    def nz(x):
        return unit if x != 0 else 0

    field = enc.threshold_field(1, 3, p)
    fscaled = fx.round_to(p, field).scaled
    return [
        ("inp", enc.encode_input(1, L, p), {
            COPY_NEGATE: nz, GATE_RESOLVE: ind, SIGNED_COPY: ind,
            THRESHOLD_RESOLVE: ind}),
        ("arg-plain", enc.encode_arg(3, 1, False, L, p), {
            COPY_NEGATE: nz, GATE_RESOLVE: lambda v: 0,
            SIGNED_COPY: ind, THRESHOLD_RESOLVE: lambda v: 0}),
        ("arg-negated", enc.encode_arg(3, 1, True, L, p), {
            COPY_NEGATE: lambda v: nz(v - unit), GATE_RESOLVE: lambda v: 0,
            SIGNED_COPY: lambda v: -ind(v), THRESHOLD_RESOLVE: lambda v: 0}),
        ("gate-or", enc.encode_gate(3, 0, L, p), {
            COPY_NEGATE: lambda v: 0, GATE_RESOLVE: ind,
            SIGNED_COPY: lambda v: 0, THRESHOLD_RESOLVE: ind}),
        ("gate-and", enc.encode_gate(3, 1, L, p), {
            COPY_NEGATE: lambda v: 0, GATE_RESOLVE: lambda v: unit - ind(v),
            SIGNED_COPY: lambda v: 0}),
        ("gate-thresh", enc.encode_gate(3, field, L, p), {
            SIGNED_COPY: lambda v: 0,
            THRESHOLD_RESOLVE: lambda v: ind(v - fscaled)}),
    ]


class TestFfnSemantics:
    """Each network realizes its role's map exactly on all reachable values."""

    @pytest.mark.parametrize("p", [2, 3, 4, 5, 6])
    @pytest.mark.parametrize(
        "role", [COPY_NEGATE, GATE_RESOLVE, SIGNED_COPY, THRESHOLD_RESOLVE]
    )
    def test_exhaustive_reachable_operands(self, p, role):
        L = 3
        spec = make_ffn(role, enc.embedding_dim(L), p, L)
        unit = 1 << p
        span = min(2 * unit, fx.max_scaled(p))
        for name, token, maps in archetypes(p, L):
            want = maps.get(role)
            if want is None:
                continue
            for v in range(-span, span + 1):
                got = ffn_apply(spec, token, v, p)
                assert got == want(v), (
                    f"role={role} token={name} p={p} value={Fp(v, p)}"
                )

    @pytest.mark.parametrize(
        "role", [COPY_NEGATE, GATE_RESOLVE, SIGNED_COPY, THRESHOLD_RESOLVE]
    )
    def test_sampled_high_precision(self, role):
        p, L = 12, 6
        spec = make_ffn(role, enc.embedding_dim(L), p, L)
        unit = 1 << p
        values = list(range(-2 * unit, 2 * unit + 1, 97)) + [0, 1, -1, unit, -unit]
        for name, token, maps in archetypes(p, L):
            want = maps.get(role)
            if want is None:
                continue
            for v in values:
                assert ffn_apply(spec, token, v, p) == want(v), (role, name, v)

    def test_depth_at_most_four_hidden_layers(self):
        for role in (COPY_NEGATE, GATE_RESOLVE, SIGNED_COPY, THRESHOLD_RESOLVE):
            spec = make_ffn(role, enc.embedding_dim(3), 8, 3)
            assert len(spec.layers) <= 5  # four hidden + output projection
            assert spec.layers[-1].activation == "identity"

    def test_gate_resolve_examples(self):
        p, L = 8, 3
        spec = make_ffn(GATE_RESOLVE, enc.embedding_dim(L), p, L)
        and_tok = enc.encode_gate(3, 1, L, p)
        assert ffn_apply(spec, and_tok, 0, p) == 1 << p  # AND of no positives
        arg = enc.encode_arg(3, 1, False, L, p)
        assert ffn_apply(spec, arg, 1 << (p - 1), p) == 0  # args flushed

    def test_threshold_resolve_example(self):
        p, L = 8, 3
        spec = make_ffn(THRESHOLD_RESOLVE, enc.embedding_dim(L), p, L)
        tok = enc.encode_gate(3, enc.threshold_field(1, 3, p), L, p)
        two_thirds = 3 * enc.attention_weight(3, p).scaled  # wait: 2 of 3 args
        two_thirds = 2 * enc.attention_weight(3, p).scaled
        assert ffn_apply(spec, tok, two_thirds, p) == 1 << p


class TestCompatG:
    """The verbatim two-ReLU indicator only works next to zero; the compiler
    keeps it behind a flag and the exact chain as the default."""

    def test_agrees_on_tiny_operands(self):
        p, L = 6, 3
        d = enc.embedding_dim(L)
        tok = enc.encode_input(1, L, p)
        exact = make_ffn(GATE_RESOLVE, d, p, L)
        compat = make_ffn(GATE_RESOLVE, d, p, L, compat_g=True)
        for v in (0, 1):  # zero and one ulp: the shortcut's valid range
            assert ffn_apply(exact, tok, v, p) == ffn_apply(compat, tok, v, p)

    def test_diverges_on_larger_operands(self):
        p, L = 6, 3
        d = enc.embedding_dim(L)
        tok = enc.encode_input(1, L, p)
        exact = make_ffn(GATE_RESOLVE, d, p, L)
        compat = make_ffn(GATE_RESOLVE, d, p, L, compat_g=True)
        unit = 1 << p
        assert ffn_apply(exact, tok, 2 * unit, p) == unit
        assert ffn_apply(compat, tok, 2 * unit, p) != unit


class TestAttentionSpecs:
    def test_layer1_arg_attends_only_to_source(self):
        m = compile_circuit(AND2, p=8)
        _, trace = vm.forward(m, (1, 0), trace=True)
        w = trace.attention_weights[0]  # layer 1
        one, zero = fx.one(8), fx.zero(8)
        # tokens: Inp(1) Inp(2) Arg(3,1) Arg(3,2) Type(3)
        assert w[2][0] == one and all(v == zero for j, v in enumerate(w[2]) if j != 0)
        assert w[3][1] == one and all(v == zero for j, v in enumerate(w[3]) if j != 1)

    def test_inp_self_attends_in_both_layers(self):
        m = compile_circuit(AND2, p=8)
        _, trace = vm.forward(m, (1, 1), trace=True)
        one = fx.one(8)
        for layer in (0, 1):
            w = trace.attention_weights[layer]
            assert w[0][0] == one
            assert w[1][1] == one

    def test_layer2_gate_averages_args_uniformly(self):
        c = parse_circuit("circuit AC0\ninputs 3\ngate 4 OR 1 2 3\noutput 4\n")
        m = compile_circuit(c, p=8)
        _, trace = vm.forward(m, (1, 1, 1), trace=True)
        w = trace.attention_weights[1]
        third = fx.div(fx.one(8), fx.from_int(3, 8))
        # gate token is last; its args are tokens 3,4,5
        assert [w[6][j] for j in (3, 4, 5)] == [third] * 3
        assert w[6][6] == fx.zero(8)  # never itself

    def test_wqk_single_block(self):
        spec = comp.make_attention("first", enc.embedding_dim(3), 8, 3)
        nonzero = [
            (r, c)
            for r, row in enumerate(spec.wqk)
            for c, v in enumerate(row)
            if v.scaled
        ]
        assert nonzero == list(
            zip(enc.seg_pair1_query(3), enc.seg_pair1_key(3))
        )
        assert all(v == fx.one(8) for row in spec.wqk for v in row if v.scaled)

    def test_wv_value_passthrough_only(self):
        spec = comp.make_attention("second", enc.embedding_dim(3), 8, 3)
        nonzero = [
            (r, c)
            for r, row in enumerate(spec.wv)
            for c, v in enumerate(row)
            if v.scaled
        ]
        assert nonzero == [(0, 0)]


class TestCompile:
    def test_and_shape(self):
        m = compile_circuit(AND2, p=8)
        assert len(m.layers) == 2
        assert len(m.tokens) == 5
        assert m.pause_token_count == 3

    def test_parity3_matches_oracle_exhaustively(self):
        c = build_parity_circuit(3)
        m = compile_circuit(c, p=12)
        for x in itertools.product((0, 1), repeat=3):
            assert vm.forward(m, x) == circ.evaluate(c, x)

    def test_depth0_passthrough(self):
        c = circ.Circuit("AC0", 1, (), 1)
        m = compile_circuit(c)
        assert len(m.layers) == 0
        assert vm.forward(m, (1,)) == 1
        assert vm.forward(m, (0,)) == 0

    def test_layer_count_is_twice_depth(self):
        for seed in range(4):
            for fam in ("AC0", "TC0"):
                c = random_circuit(fam, 4, 3, 3, 10, seed=seed)
                m = compile_circuit(c)
                assert len(m.layers) == 2 * circ.desc_stats(c).depth

    def test_pause_token_accounting(self):
        for seed in range(6):
            c = random_circuit("AC0", 5, 2, 3, 12, seed=seed)
            m = compile_circuit(c)
            assert m.pause_token_count == circ.desc_stats(c).desc_length - c.n_inputs

    def test_refuses_tiny_precision(self):
        with pytest.raises(comp.PrecisionError):
            compile_circuit(build_parity_circuit(3), p=1)

    def test_invalid_circuit_rejected(self):
        bad = circ.Circuit("AC0", 2, (circ.Gate(3, "AND", ()),), 3)
        with pytest.raises(comp.CompileError):
            compile_circuit(bad)

    def test_default_policy(self):
        assert compile_circuit(AND2).p == comp.AC0_DEFAULT_PRECISION
        c = build_parity_circuit(8)
        base = circ.desc_stats(c).desc_length.bit_length() + comp.TC0_GUARD_BITS
        assert compile_circuit(c).p >= base

    def test_shared_layer_specs(self):
        # odd/even specs are shared across layer pairs (also enables caching)
        m = compile_circuit(build_parity_circuit(4))
        assert m.layers[0][0] is m.layers[2][0]
        assert m.layers[1][1] is m.layers[3][1]


class TestModelFiles:
    def test_round_trip_identity(self):
        passthrough = circ.Circuit("AC0", 1, (), 1)
        for c in (AND2, build_parity_circuit(4), passthrough):
            m = compile_circuit(c)
            again = parse_model(serialize_model(m))
            assert again == m

    def test_parsed_model_runs_identically(self):
        c = build_parity_circuit(4)
        m = compile_circuit(c)
        again = parse_model(serialize_model(m))
        for x in itertools.product((0, 1), repeat=4):
            assert vm.forward(again, x) == vm.forward(m, x)

    def test_version_mismatch_rejected(self):
        text = serialize_model(compile_circuit(AND2))
        bumped = text.replace("padtf-model 1", "padtf-model 9", 1)
        with pytest.raises(comp.ModelFormatError):
            parse_model(bumped)

    def test_not_a_model_file(self):
        with pytest.raises(comp.ModelFormatError):
            parse_model("circuit AC0\ninputs 1\noutput 1\n")

    def test_off_grid_decimal_needs_rounding_flag(self):
        m = compile_circuit(build_parity_circuit(2))
        text = serialize_model(m)
        # the threshold field 0.5 parses; an off-grid edit must not
        broken = text.replace("precision 8", "precision 2", 1)
        with pytest.raises(Exception):
            parse_model(broken)

    def test_exact_decimals_only(self):
        import re

        decimal = re.compile(r"-?\d+(\.\d+)?$")
        text = serialize_model(compile_circuit(build_parity_circuit(3)))
        for line in text.splitlines():
            if line.startswith(("w ", "wqk ", "wv ", "b ")):
                for item in line.split()[1:]:
                    if item == "-":
                        continue
                    assert decimal.match(item.rsplit(":", 1)[-1]), item
