import csv
import math
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clansim.analysis import (
    BoundInputs,
    Snapshot,
    bound_rows,
    check_ef_residuals,
    comm_time,
    compression_rate,
    corollary_biased,
    corollary_full_precision,
    corollary_unbiased,
    dropped_fraction,
    ideal_scaling_efficiency,
    lemma_ef_residual_bound,
    lemma_moment_gap_monitor,
    theorem1_rhs,
    write_bound_csv,
)
from clansim.compressors import CompressorKind
from clansim.errors import DegenerateParams, DeltaOutOfRange, NegativeOmega, NonPositiveTime, OracleUnavailable
from clansim.harness import RunConfig, run_experiment
from clansim.protocol import AggregationConfig, Mode


def inputs(**kw):
    base = dict(lipschitz=[1.0, 2.0, 0.5, 0.5], sigma=[0.25, 0.25, 0.5, 0.0], G=2.0, s=4, n=4, T=16, eta=0.125,
                beta1=0.5, beta2=0.75, eps=0.0, alpha_l=0.5, alpha_u=2.0, gap=3.0)
    base.update(kw)
    return BoundInputs(**base)


def rational_rhs(V1p, V2, V3):
    # d = 4 and beta2 = 3/4 make both square roots rational: sqrt(d) = 2, sqrt(1 - beta2) = 1/2
    rd, sq2 = Fr(2), Fr(1, 2)
    b1, eta, al, au, G, T, gap, L1 = Fr(1, 2), Fr(1, 8), Fr(1, 2), Fr(2), Fr(2), Fr(16), Fr(3), Fr(4)
    V1p, V2, V3 = Fr(V1p), Fr(V2), Fr(V3)
    return (rd * V1p * gap / (T * eta * al * (1 - b1) * sq2),
            eta * rd * V1p * au**2 * (1 - b1 + 2 * b1**2) * L1 / (2 * sq2 * (1 - b1) ** 2 * al),
            rd * V1p * au * ((1 - b1) ** 2 + b1) * V2 / (sq2 * (1 - b1) ** 2 * al),
            rd * G * V3)


class TestTheorem:
    @pytest.mark.parametrize("V", [(1.0, 0.0, 0.0), (2.5, 0.75, 0.0), (3.0, 1.5, 0.25)])
    def test_terms_against_rational_oracle(self, V):
        rep = theorem1_rhs(inputs(), *V)
        want = rational_rhs(*V)
        got = (rep.gap_term, rep.smoothness_term, rep.v2_term, rep.v3_term)
        for g, w in zip(got, want):
            assert g == pytest.approx(float(w), rel=1e-14)
        assert rep.rhs == pytest.approx(float(sum(want)), rel=1e-14)

    def test_rhs_is_sum_of_terms(self):
        rep = theorem1_rhs(inputs(), 1.3, 0.7, 0.2)
        assert rep.rhs == rep.gap_term + rep.smoothness_term + rep.v2_term + rep.v3_term

    def test_zero_gap_isolates_smoothness(self):
        rep = theorem1_rhs(inputs(gap=0.0), 1.0, 0.0, 0.0)
        assert rep.rhs == rep.smoothness_term > 0

    def test_all_zero(self):
        rep = theorem1_rhs(inputs(gap=0.0, lipschitz=[0.0] * 4), 0.0, 0.0, 0.0)
        assert rep.rhs == 0.0

    @given(st.integers(1, 10_000))
    def test_doubling_T_halves_gap_term_only(self, T):
        a = theorem1_rhs(inputs(T=T), 1.0, 0.5, 0.1)
        b = theorem1_rhs(inputs(T=2 * T), 1.0, 0.5, 0.1)
        assert b.gap_term == pytest.approx(a.gap_term / 2, rel=1e-15)
        assert (b.smoothness_term, b.v2_term, b.v3_term) == (a.smoothness_term, a.v2_term, a.v3_term)

    @pytest.mark.parametrize("b1,b2", [(1 - 1e-13, 0.9), (0.9, 1 - 1e-13), (1.0, 0.5)])
    def test_degenerate(self, b1, b2):
        with pytest.raises(DegenerateParams):
            theorem1_rhs(inputs(beta1=b1, beta2=b2), 1.0, 0.0, 0.0)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            inputs(T=0)
        with pytest.raises(ValueError):
            inputs(sigma=[-1.0, 0, 0, 0])

    def test_bound_csv(self, tmp_path):
        rep = theorem1_rhs(inputs(), 1.0, 0.5, 0.0)
        path = write_bound_csv(tmp_path / "b.csv", [("fp", rep)])
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["label", "term", "value"]
        assert [r[1] for r in rows[1:]] == ["V1p", "V2", "V3", "gap_term", "smoothness_term", "v2_term",
                                            "v3_term", "rhs"]
        assert float(rows[-1][2]) == rep.rhs
        assert bound_rows("fp", rep)[0] == ["fp", "V1p", "1.0"]


class TestCorollaries:
    def test_full_precision(self):
        c = corollary_full_precision(inputs(G=1.0, eps=1e-6))
        assert c.V1p == 1 + 1e-6 and c.V3 == 0.0
        assert c.V2 == pytest.approx(1.0 / 4)  # ||sigma||_1 = 1, sqrt(16) = 4

    def test_noiseless(self):
        assert corollary_full_precision(inputs(sigma=[0.0] * 4)).V2 == 0.0

    def test_quadrupling_ns_halves_V2(self):
        a = corollary_full_precision(inputs(n=2, s=3)).V2
        b = corollary_full_precision(inputs(n=4, s=6)).V2
        assert b == pytest.approx(a / 2, rel=1e-15)

    def test_unbiased_zero_omega_reduces(self):
        inp = inputs()
        u, f = corollary_unbiased(inp, 0.0), corollary_full_precision(inp)
        assert (u.V1, u.V1p, u.V2, u.V3) == (f.V1, f.V1p, f.V2, f.V3)

    def test_unbiased_excess(self):
        omega = (-6 + math.sqrt(52)) / 8  # root of 4w^2 + 6w = 1
        inp = inputs(lipschitz=[1.0, 1.0], sigma=[0.0, 0.0], G=1.0)
        c = corollary_unbiased(inp, omega)
        assert c.V2 == pytest.approx(2.0, rel=1e-12)
        assert c.V1 == pytest.approx(3.0, rel=1e-12)

    def test_unbiased_rate_flag(self):
        assert corollary_unbiased(inputs(T=100), 1 / 100).rate_condition
        assert not corollary_unbiased(inputs(T=100), 2 / 100).rate_condition

    def test_unbiased_errors(self):
        with pytest.raises(NegativeOmega):
            corollary_unbiased(inputs(), -0.1)
        with pytest.raises(NegativeOmega):
            corollary_unbiased(inputs(), 0.5, variant="appendix")

    def test_appendix_variant_separate(self):
        inp = inputs(n=2)
        c = corollary_unbiased(inp, 2.0, variant="appendix")
        excess = math.sqrt(2 - 1 + 2 * 1 / 2)
        assert c.V1 == pytest.approx((1 + 4 * excess) * 2.0)
        assert c.V1 != corollary_unbiased(inp, 2.0).V1

    def test_biased_lossless(self):
        inp = inputs()
        b, f = corollary_biased(inp, 1.0), corollary_full_precision(inp)
        assert b.V3 == 0.0 and b.V1 == inp.G and b.V2 == f.V2

    def test_biased_hand_value(self):
        c = corollary_biased(inputs(lipschitz=[1.0], sigma=[0.0], G=1.0), 0.75)
        assert c.V3 == pytest.approx(10.0, rel=1e-15)
        assert c.V1 == pytest.approx(11.0, rel=1e-15)

    def test_biased_cap(self):
        c = corollary_biased(inputs(cap=1e6), 1e-300)
        assert c.capped and math.isinf(c.V3)
        assert not corollary_biased(inputs(), 0.5).capped
        assert lemma_ef_residual_bound(1e-300, 4, 1.0) == (math.inf,) * 3

    def test_biased_rate_flag(self):
        # T = 16: 1 - 1/(4 - 1)^2 = 8/9
        assert corollary_biased(inputs(T=16), 0.9).rate_condition
        assert not corollary_biased(inputs(T=16), 0.85).rate_condition

    @pytest.mark.parametrize("delta", [0.0, -0.1, 1.5])
    def test_delta_range(self, delta):
        with pytest.raises(DeltaOutOfRange):
            corollary_biased(inputs(), delta)
        with pytest.raises(DeltaOutOfRange):
            lemma_ef_residual_bound(delta, 4, 1.0)


class TestResidualLemma:
    def test_lossless(self):
        assert lemma_ef_residual_bound(1.0, 10, 3.0) == (0.0, 0.0, 0.0)

    def test_hand_value(self):
        w, s, c = lemma_ef_residual_bound(0.75, 1, 1.0)
        assert (w, s, c) == pytest.approx((1.0, 4.0, 5.0), rel=1e-15)

    @given(st.floats(0.01, 1.0), st.integers(1, 10_000), st.floats(1e-3, 1e3))
    def test_linear_in_G(self, delta, d, G):
        a = lemma_ef_residual_bound(delta, d, G)
        b = lemma_ef_residual_bound(delta, d, 2 * G)
        assert b == pytest.approx(tuple(2 * x for x in a), rel=1e-14)

    def test_check_ef_residuals(self):
        ok = check_ef_residuals([[0.5, 0.9]], [3.0], 0.75, 1, 1.0, combined_norms=[4.0])
        assert ok.violations == 0 and ok.checks == 4 and ok.worst_ratio == pytest.approx(0.9)
        bad = check_ef_residuals([[1.5]], [3.0], 0.75, 1, 1.0)
        assert bad.violations == 1


class TestMomentGap:
    def test_first_step_identity(self):
        g = np.array([1.0, -2.0])
        rep = lemma_moment_gap_monitor([Snapshot(m_hat=g, p=g, grad=g, eta=0.1)], [1.0, 1.0], 0.9, 10.0)
        assert rep.violations == 0 and rep.worst_margin == 0.0

    def test_no_momentum_equality(self):
        gen = np.random.default_rng(1)
        traj = []
        for _ in range(5):
            grad, p = gen.standard_normal(3), gen.standard_normal(3)
            traj.append(Snapshot(m_hat=p, p=p, grad=grad, eta=0.1))
        rep = lemma_moment_gap_monitor(traj, [1.0] * 3, 0.0, 10.0)
        assert rep.violations == 0 and rep.worst_margin == pytest.approx(0.0, abs=1e-15)

    def test_detects_violation(self):
        g = np.zeros(2)
        rep = lemma_moment_gap_monitor([Snapshot(m_hat=np.ones(2), p=g, grad=g, eta=0.1)], [1.0, 1.0], 0.9, 10.0)
        assert rep.violations == 2 and rep.first_violation == (1, 0)

    def test_oracle_unavailable(self):
        with pytest.raises(OracleUnavailable):
            lemma_moment_gap_monitor([Snapshot(None, np.zeros(1), None, 0.1)], [1.0], 0.9, 1.0)

    @pytest.mark.parametrize("spec,mode", [("scaled_sign", Mode.COMPRESSED_EF), ("none", Mode.FULL_PRECISION)])
    def test_quadratic_run_zero_violations(self, spec, mode):
        agg = AggregationConfig(mode=mode, compressor=CompressorKind.parse(spec), size_threshold_bytes=0)
        cfg = RunConfig(problem="quadratic", problem_params={"rotate": True, "d": 20}, optimizer="clan",
                        aggregation=agg, n_workers=2, steps=100, lr=0.01, record_trajectory=True)
        r = run_experiment(cfg)
        rep = lemma_moment_gap_monitor(r.trajectory, r.problem.coordinate_lipschitz(), cfg.beta1, cfg.alpha_u)
        assert rep.checks == 100 * 20 and rep.violations == 0


class TestSystems:
    def test_overlap(self):
        assert ideal_scaling_efficiency(1.0, 2.0, 1.5) == 1.0

    def test_arithmetic(self):
        assert ideal_scaling_efficiency(1.0, 1.0, 3.0) == 0.5

    @given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
    def test_range(self, a, b, c):
        assert 0 < ideal_scaling_efficiency(a, b, c) <= 1

    @pytest.mark.parametrize("args", [(0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, 0.0)])
    def test_non_positive(self, args):
        with pytest.raises(NonPositiveTime):
            ideal_scaling_efficiency(*args)

    def test_comm_time(self):
        assert comm_time(1000, 8000.0) == 1.0
        with pytest.raises(NonPositiveTime):
            comm_time(10, 0.0)

    def test_rates(self):
        assert compression_rate(CompressorKind.none(), 1000) == 1.0
        assert compression_rate(CompressorKind.scaled_sign(), 10**6) == pytest.approx(4e6 / 125_004, rel=1e-15)
        top = CompressorKind.parse("top_k:0.001:f16")
        # payload: 8-byte element count, then k int32 indices and k f16 values
        rate = compression_rate(top, 10**6, "FP16")
        assert rate == pytest.approx(2e6 / (8 + 1000 * 6), rel=1e-15)
        assert 330 <= rate <= 336
        assert dropped_fraction(top, 10**6) == pytest.approx(0.999)
        assert dropped_fraction(CompressorKind.scaled_sign(), 10) == 0.0
        with pytest.raises(ValueError):
            compression_rate(top, 10, "FP8")
