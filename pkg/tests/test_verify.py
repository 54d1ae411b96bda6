"""Verification harness: equivalence, localization, sweeps, campaigns."""

import dataclasses

import pytest

from padtf import circuit as circ
from padtf import compiler as comp
from padtf import fixedpoint as fx
from padtf import verify as ver
from padtf.circuit import build_or_tree, build_parity_circuit, parse_circuit
from padtf.compiler import compile_circuit
from padtf.verify import CampaignConfig, campaign, check_equivalence, precision_sweep

AND2 = parse_circuit("circuit AC0\ninputs 2\ngate 3 AND 1 2\noutput 3\n")


class TestSampling:
    def test_documented_generator(self):
        import hashlib

        x = ver.sample_input(7, 3, 20)
        digest = hashlib.sha256(b"7:3:0").digest()
        want = [(digest[k // 8] >> (7 - k % 8)) & 1 for k in range(20)]
        assert x == want

    def test_reproducible_and_distinct(self):
        assert ver.sample_input(0, 1, 64) == ver.sample_input(0, 1, 64)
        assert ver.sample_input(0, 1, 64) != ver.sample_input(0, 2, 64)
        assert ver.sample_input(0, 1, 64) != ver.sample_input(1, 1, 64)

    def test_long_inputs_span_blocks(self):
        x = ver.sample_input(5, 0, 600)
        assert len(x) == 600 and set(x) <= {0, 1}

    def test_exhaustive_below_limit(self):
        cov, stream = ver.input_stream(3, exhaustive_limit=14, samples=10, seed=0)
        assert cov == ("exhaustive", 8)
        assert list(stream) == [
            [0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1],
            [1, 0, 0], [1, 0, 1], [1, 1, 0], [1, 1, 1],
        ]

    def test_sampled_above_limit(self):
        cov, stream = ver.input_stream(20, exhaustive_limit=14, samples=5, seed=9)
        assert cov == ("sampled", 5, 9)
        assert len(list(stream)) == 5


class TestCheckEquivalence:
    def test_and_exhaustive_pass(self):
        report = check_equivalence(AND2, compile_circuit(AND2, p=8))
        assert report.verdict == "pass"
        assert report.coverage == ("exhaustive", 4)
        assert report.inputs_checked == 4

    def test_parity4_pass(self):
        c = build_parity_circuit(4)
        report = check_equivalence(c, compile_circuit(c))
        assert (report.verdict, report.inputs_checked) == ("pass", 16)

    def test_compiles_in_memory_when_no_model(self):
        assert check_equivalence(AND2).verdict == "pass"

    def test_hash_mismatch_needs_force(self):
        other = compile_circuit(build_parity_circuit(2))
        with pytest.raises(ver.HashMismatch):
            check_equivalence(AND2, other)

    def test_report_render_stable(self):
        r1 = check_equivalence(AND2).render()
        r2 = check_equivalence(AND2).render()
        assert r1 == r2
        assert r1.splitlines()[0] == "padtf verify report"
        assert "verdict pass" in r1

    def test_json_document(self):
        import json

        doc = json.loads(check_equivalence(AND2).to_json())
        assert doc["verdict"] == "pass"
        assert doc["coverage"] == ["exhaustive", 4]


def corrupt_layer(model, layer_index):
    """Zero the value projection of one attention sublayer."""
    attn, ffn = model.layers[layer_index]
    zero_row = tuple(fx.zero(model.p) for _ in range(model.d))
    wv = tuple(zero_row for _ in range(model.d))
    layers = list(model.layers)
    layers[layer_index] = (dataclasses.replace(attn, wv=wv), ffn)
    return dataclasses.replace(model, layers=tuple(layers))


class TestLocalization:
    def test_mismatch_carries_replayable_artifacts(self):
        c = build_parity_circuit(3)
        broken = corrupt_layer(compile_circuit(c), 3)
        report = check_equivalence(c, broken, force=True)
        assert report.verdict == "fail"
        assert report.model_text is not None
        text = report.render()
        assert "begin circuit" in text and "begin model" in text
        # the embedded artifacts replay to the same mismatch
        c2 = circ.parse_circuit(report.circuit_text)
        m2 = comp.parse_model(report.model_text)
        mm = report.mismatches[0]
        x = [int(b) for b in mm.input_bits]
        from padtf import vm

        assert str(vm.forward(m2, x)) == mm.got
        assert circ.evaluate(c2, x) == mm.expected

    @pytest.mark.parametrize("layer", [0, 1, 2, 3])
    def test_divergence_never_localized_before_corruption(self, layer):
        c = build_parity_circuit(3)
        model = compile_circuit(c)
        broken = corrupt_layer(model, layer)
        report = check_equivalence(c, broken, force=True)
        if report.verdict == "pass":
            pytest.skip("corruption was masked on this layer")
        for mm in report.mismatches:
            assert mm.first_divergent_layer is not None
            assert mm.first_divergent_layer >= layer + 1

    def test_induction_violations_empty_on_healthy_models(self):
        c = build_parity_circuit(3)
        model = compile_circuit(c)
        for x in ([0, 1, 1], [1, 1, 1], [0, 0, 0]):
            assert ver.induction_violations(c, model, x) == []


class TestPrecisionSweep:
    def test_parity_minimal_p_nondecreasing_in_n(self):
        minimal = []
        for n in (4, 8):
            rep = precision_sweep(build_parity_circuit(n), 2, 14, samples=64)
            assert rep.minimal_passing is not None
            minimal.append(rep.minimal_passing)
        assert minimal == sorted(minimal)

    def test_below_floor_refused(self):
        rep = precision_sweep(build_parity_circuit(4), 1, 4, samples=64)
        assert rep.verdicts[0] == (1, "refused")
        assert rep.minimal_passing is not None and rep.minimal_passing >= 2

    def test_or_gate_passes_at_fixed_p8(self):
        for n in (4, 8, 16):
            c = build_or_tree(n, fanin=n)
            rep = precision_sweep(c, 8, 8)
            assert rep.minimal_passing == 8

    def test_render(self):
        rep = precision_sweep(AND2, 2, 4)
        text = rep.render()
        assert text.startswith("padtf precision sweep")
        assert "minimal-passing" in text


class TestCampaign:
    CFG = CampaignConfig(
        family="AC0", count=12, n_range=(2, 5), depth_range=(1, 3),
        max_fanin=3, size_budget=10, seed=11, precision=8,
    )

    def test_all_pass_and_deterministic(self):
        r1 = campaign(self.CFG)
        r2 = campaign(self.CFG)
        assert r1.verdict == "pass"
        assert r1.render() == r2.render()

    def test_parallel_matches_sequential(self):
        assert campaign(self.CFG, jobs=2).render() == campaign(self.CFG).render()

    def test_tc0_policy_campaign(self):
        cfg = dataclasses.replace(self.CFG, family="TC0", precision=None, count=8)
        report = campaign(cfg)
        assert report.verdict == "pass"

    def test_uncertified_witness_fails_and_replays(self):
        # A gate whose early partial sum crosses its threshold while the full
        # signed sum cancels back below it leaves a stale 1 on the gate token.
        # The odd-layer clearing normally flushes it; id padding past 32 makes
        # the gate-token detector bias overflow B_2, so at p=2 the clearing
        # breaks, the certifier flags it, and the model genuinely diverges.
        gates = [circ.Gate(2, "THRESH", ((1, 1),), "GT", 0)]
        src = 2
        for gid in range(3, 33):
            gates.append(circ.Gate(gid, "THRESH", ((src, 1),), "GT", 0))
            src = gid
        gates.append(circ.Gate(33, "THRESH", ((2, 1),), "GT", 0))
        gates.append(
            circ.Gate(34, "THRESH", ((2, 1), (33, -1), (32, 1)), "GT", 0)
        )
        c = circ.Circuit("TC0", 1, tuple(gates), 34)
        assert circ.validate(c) == []

        broken = compile_circuit(c, p=2)
        assert not broken.certified
        report = check_equivalence(c, broken)
        assert report.verdict == "fail"
        mm = report.mismatches[0]
        assert mm.first_divergent_layer is not None
        # artifacts embedded in the report replay standalone
        c2 = circ.parse_circuit(report.circuit_text)
        m2 = comp.parse_model(report.model_text)
        from padtf import vm

        x = [int(b) for b in mm.input_bits]
        assert circ.evaluate(c2, x) == mm.expected
        assert str(vm.forward(m2, x)) == mm.got

        # at the default certified precision the same circuit is exact
        assert check_equivalence(c).verdict == "pass"
