import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdsjumps import (
    AffineFlow,
    AffineJump,
    ClosedFormFlow,
    ConfigurationError,
    EmpiricalMeasure,
    HybridState,
    ModelConstants,
    PlaceDependentProbabilities,
    SamplingError,
    StateSpace,
    SystemSpec,
    check_contraction_criterion,
    check_s1,
    estimate_constants,
    estimate_invariant,
    fm_distance,
    lln_run,
    lyapunov_offset,
    parse_observable,
    push_forward,
    rate_fit,
    sign_test,
    subsample,
    to_json,
    verify_lyapunov,
)
from rdsjumps.models import builtin, constjump, genetoggle, linear1d

from oracles import FROZEN, contraction_constants, genetoggle_offset, linear1d_offset, linear1d_one_step_mean


def _consts(L, L_q, alpha):
    return ModelConstants(L, alpha, L_q, 0.0, 0.0, 1.0, 1.0, (0.0,))


class TestCriterion:
    def test_linear1d_constants(self, lin):
        r = check_contraction_criterion(lin.constants, 1.0, lin)
        lhs, beta = contraction_constants(1.0, 0.5, -1.0, 1.0)
        assert r.satisfied
        assert (r.lhs, r.beta, r.a) == (lhs, beta, beta) == (FROZEN["lhs_linear1d"], 0.25, 0.25)
        assert r.b == pytest.approx(FROZEN["linear1d_offset"], abs=1e-12)

    def test_unsatisfied(self):
        r = check_contraction_criterion(_consts(2.0, 1.0, 0.1), 1.0)
        assert not r.satisfied and r.lhs == pytest.approx(2.1)

    def test_boundary_is_strict(self):
        r = check_contraction_criterion(_consts(1.0, 0.5, 0.5), 1.0)
        assert r.lhs == 1.0 and not r.satisfied

    def test_lambda_below_alpha(self):
        r = check_contraction_criterion(_consts(1.0, 0.1, 2.0), 1.0)
        assert not r.satisfied and "a undefined" in r.notes and math.isnan(r.a)

    def test_lambda_positive(self):
        with pytest.raises(ConfigurationError):
            check_contraction_criterion(_consts(1.0, 0.5, -1.0), 0.0)

    @given(
        st.floats(1.0, 5.0), st.floats(0.01, 2.0), st.floats(-3.0, 3.0), st.floats(0.1, 5.0), st.floats(0.1, 10.0)
    )
    def test_scaling_invariance(self, L, L_q, alpha, lam, k):
        a = check_contraction_criterion(_consts(L, L_q, alpha), lam)
        b = check_contraction_criterion(_consts(L, L_q, alpha * k), lam * k)
        assert b.lhs == pytest.approx(a.lhs, rel=1e-12, abs=1e-12)
        if abs(a.lhs - 1.0) > 1e-9 and abs(lam - alpha) > 1e-9:
            assert a.satisfied == b.satisfied
        assert a.satisfied == (a.lhs < 1 and lam > alpha)


class TestLyapunov:
    def test_offsets(self, lin, toggle):
        assert lyapunov_offset(lin) == pytest.approx(linear1d_offset(), abs=1e-12)
        assert lyapunov_offset(toggle) == pytest.approx(genetoggle_offset(), abs=1e-10)
        assert genetoggle_offset() == FROZEN["genetoggle_offset"]

    def test_probe_at_reference(self, toggle):
        rep = verify_lyapunov(toggle, [HybridState([0.0], 0), HybridState([0.0], 1)], 2000, seed=1)
        assert rep.passed
        assert np.all(rep.bounds == rep.b)

    def test_linear1d_closed_form(self, lin):
        rep = verify_lyapunov(lin, [HybridState([2.0], 0)], 100_000, seed=2)
        exact = linear1d_one_step_mean(2.0)
        assert abs(rep.estimates[0] - exact) <= 4 * rep.stderrs[0]
        assert rep.bounds[0] == pytest.approx(0.25 * 2 + 1.0)
        assert rep.passed

    @pytest.mark.parametrize("name", ["linear1d", "genetoggle", "constjump"])
    def test_random_probes(self, name):
        spec = builtin(name)
        gen = np.random.default_rng(3)
        probes = [HybridState([x], int(i)) for x, i in zip(gen.uniform(-10, 10, 100), gen.integers(0, spec.N, 100))]
        assert verify_lyapunov(spec, probes, 2000, seed=4).passed

    def test_requirements(self, lin):
        with pytest.raises(ConfigurationError):
            verify_lyapunov(lin, [HybridState([0.0], 0)], 50)
        with pytest.raises(ConfigurationError):
            verify_lyapunov(linear1d(with_constants=False), [HybridState([0.0], 0)], 200)


class TestEstimateConstants:
    def test_linear1d(self, lin):
        c = estimate_constants(lin, 1000, seed=0)
        assert c.L == pytest.approx(1.0, abs=1e-6)
        assert c.alpha == pytest.approx(-1.0, abs=0.05)
        assert c.L_q == pytest.approx(0.5, abs=1e-9)
        assert set(v for k, v in c.provenance.items() if k != "x_star") == {"estimated"}

    def test_isometric_flow(self):
        probs = PlaceDependentProbabilities.constant([[1.0]], [1.0])
        spec = SystemSpec(StateSpace(1), [ClosedFormFlow(lambda t, x: x + t[:, None])], [AffineJump(0.5)], probs, 1.0)
        c = estimate_constants(spec, 500, seed=1)
        assert c.alpha == pytest.approx(0.0, abs=1e-9) and c.L == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("name", ["linear1d", "genetoggle"])
    def test_below_analytic(self, name):
        spec = builtin(name)
        est, ana = estimate_constants(spec, 1000, seed=2), spec.constants
        assert est.L_q <= ana.L_q + 1e-9
        assert est.L_p <= ana.L_p + 1e-9 and est.L_pbar <= ana.L_pbar + 1e-9
        t = np.linspace(0, 5, 11)
        assert np.all(est.L * np.exp(est.alpha * t) <= ana.L * np.exp(ana.alpha * t) * (1 + 0.05))
        assert est.p0 >= ana.p0 - 1e-12 and est.q0 >= ana.q0 - 1e-12

    def test_coincident_pairs(self, lin):
        X = np.zeros((5, 1))
        with pytest.raises(SamplingError):
            estimate_constants(lin, pairs=(X, X))

    def test_too_few_pairs(self, lin):
        with pytest.raises(ConfigurationError):
            estimate_constants(lin, 10)


def _remark_model():
    """Flow 0 contracts and jump 0 halves distances; the other pair expands."""

    def row(x, i):
        p0 = 0.3 + 0.2 / (1.0 + x[:, 0] ** 2)
        return np.stack([p0, 1 - p0], axis=1)

    def jump(x):
        q = 0.4 + 0.1 * np.tanh(x[:, 0])
        return np.stack([q, 1 - q], axis=1)

    probs = PlaceDependentProbabilities(
        lambda x: row(x, None), lambda x: np.stack([row(x, None)] * 2, axis=1), jump, row=row
    )
    consts = ModelConstants(1.0, -1.0, 0.5, 1.0, 1.0, 0.09, 0.09, (0.0,))
    return SystemSpec(
        StateSpace(1), [AffineFlow(-1.0), AffineFlow(0.5)], [AffineJump(0.5), AffineJump(2.0)], probs, 1.0, consts
    )


class TestS1:
    def test_linear1d(self, lin):
        r = check_s1(lin, 500, 4, 0)
        assert r.p0_hat == 1.0 and r.q0_hat == 1.0

    def test_genetoggle(self, toggle):
        r = check_s1(toggle, 1000, 8, 0)
        assert r.p0_hat >= 1 / 16 - 1e-12 and r.q0_hat >= 1 / 16 - 1e-12

    def test_remark_case(self):
        spec = _remark_model()
        r = check_s1(spec, 1000, 8, 1)
        x = np.linspace(-10, 10, 2001)
        inf_p = float(np.min(0.3 + 0.2 / (1 + x**2)))
        inf_q = float(np.min(0.4 + 0.1 * np.tanh(x)))
        assert r.p0_hat >= inf_p**2 - 1e-12
        assert r.q0_hat >= inf_q**2 - 1e-12

    def test_needs_constants(self):
        with pytest.raises(ConfigurationError):
            check_s1(genetoggle(with_constants=False))


class TestInvariant:
    def test_constant_jump(self):
        mu = estimate_invariant(constjump(0.7), 1, 500, seed=0, x0=[4.0], marginal=True)
        assert len(mu) == 1 and mu.points[0, 0] == 0.7

    def test_moments(self, lin):
        mu = estimate_invariant(lin, 1000, 200_000, seed=1)
        assert abs(mu.mean()[0] - FROZEN["linear1d_mean"]) < 0.02
        assert abs(mu.moment(2)[0] - FROZEN["linear1d_second_moment"]) < 0.05

    def test_thinning_and_marginal(self, toggle):
        full = estimate_invariant(toggle, 10, 100, thin=1, seed=2)
        thin = estimate_invariant(toggle, 10, 50, thin=2, seed=2)
        assert np.all(np.isin(thin.points, full.points))
        assert not estimate_invariant(toggle, 10, 100, seed=2, marginal=True).is_hybrid

    def test_bad_args(self, lin):
        for kw in ({"burn_in": -1}, {"n_keep": 0}, {"thin": 0}):
            args = {"burn_in": 1, "n_keep": 10, "thin": 1} | kw
            with pytest.raises(ConfigurationError):
                estimate_invariant(lin, **args)

    @pytest.mark.parametrize("name", ["linear1d", "genetoggle"])
    def test_stable_across_seeds(self, name):
        spec = builtin(name)
        a = subsample(estimate_invariant(spec, 1000, 100_000, seed=10), 2000, 0)
        b = subsample(estimate_invariant(spec, 1000, 100_000, seed=11), 2000, 1)
        assert fm_distance(a, b).value <= 0.05

    @pytest.mark.parametrize("name", ["linear1d", "genetoggle"])
    def test_stationarity(self, name):
        # noise floor: mean + 3 sd of the distance between independent
        # subsampled estimates, over five replicate pairs
        spec = builtin(name)
        est = [subsample(estimate_invariant(spec, 1000, 20_000, seed=100 + r), 2000, 1000 + r) for r in range(10)]
        indep = np.array([fm_distance(est[2 * r], est[2 * r + 1]).value for r in range(5)])
        floor = indep.mean() + 3 * indep.std(ddof=1)
        stat = np.array([fm_distance(push_forward(spec, est[2 * r], 50 + r), est[2 * r]).value for r in range(5)])
        assert stat.mean() <= floor
        # negative control: a shifted copy is clearly not invariant
        shifted = EmpiricalMeasure(est[0].points + 1.0, est[0].weights, est[0].index)
        assert fm_distance(push_forward(spec, shifted, 60), shifted).value > floor


class TestLLN:
    def test_constant_observable(self, toggle):
        r = lln_run(toggle, parse_observable("one"), [0.3], 0, 5000, [10, 100, 5000], [1, 2, 3], reference=1.0)
        assert np.all(r.averages == 1.0) and r.max_final_error == 0.0

    def test_constant_jump(self):
        spec = constjump(0.7)
        f = parse_observable("gauss:0:0:1")
        fx0 = math.exp(-0.7**2 / 2)
        r = lln_run(spec, f, [0.7], 0, 1000, [1, 10, 1000], [1, 2])
        assert np.allclose(r.averages, fx0, rtol=1e-13, atol=0)
        r2 = lln_run(spec, f, [3.0], 0, 1000, [10, 1000], [1], reference=fx0)
        expected = (math.exp(-4.5) + np.array([9, 999]) * fx0) / np.array([10, 1000])
        assert np.allclose(r2.averages[0], expected, rtol=1e-12)

    def test_lockstep_matches_single_seed(self, toggle):
        f = parse_observable("clip:0:0:1")
        both = lln_run(toggle, f, [0.0], 0, 3000, [100, 3000], [4, 5], reference=0.0)
        one = lln_run(toggle, f, [0.0], 0, 3000, [100, 3000], [5], reference=0.0)
        assert np.array_equal(both.averages[1], one.averages[0])

    def test_identity_against_analytic_mean(self, lin):
        r = lln_run(lin, parse_observable("coord:0"), [0.0], 0, 200_000, [200_000], [1, 2, 3], reference=FROZEN["linear1d_mean"])
        assert r.max_final_error < 0.02

    def test_reference_and_outputs(self, lin):
        r = lln_run(lin, parse_observable("cap:0:10"), [0.0], 0, 20_000, [1000, 20_000], [1, 2])
        assert "reference" in r.notes
        assert abs(r.reference - FROZEN["linear1d_mean"]) < 0.05
        buf = io.StringIO()
        r.write_csv(buf)
        assert buf.getvalue().splitlines()[0] == "n,value,stderr"
        assert '"sign_test_p"' in to_json(r)

    @pytest.mark.parametrize("cps", [[], [0, 10], [10, 10], [10, 10**9]])
    def test_bad_checkpoints(self, lin, cps):
        with pytest.raises(ConfigurationError):
            lln_run(lin, parse_observable("one"), [0.0], 0, 100, cps, [1])


class TestRateFit:
    def test_equal_laws_declined(self, lin):
        s = HybridState([1.0], 0)
        fit = rate_fit(lin, s, s, n_max=5, ensemble=1000, fm_cap=500, seed=0)
        assert fit.status == "declined" and math.isnan(fit.q)

    def test_small_linear1d(self, lin):
        fit = rate_fit(lin, HybridState([0.0], 0), HybridState([10.0], 0), n_max=10, ensemble=2000, fm_cap=1000, seed=1)
        assert fit.status == "fitted"
        assert 0 < fit.q <= 0.35 and fit.gamma_sum == pytest.approx(fit.C / (1 - fit.q))
        assert all(fit.D[n] < 1.0 for n, u in enumerate(fit.used) if u)

    def test_genetoggle_monotone(self, toggle):
        increases, total = 0, 0
        for seed in range(3):
            fit = rate_fit(toggle, HybridState([-5.0], 0), HybridState([5.0], 1), n_max=8, ensemble=2000, fm_cap=1000, seed=seed)
            D = np.array(fit.D)
            above = D > 2.0 * np.maximum(np.array(fit.noise), fit.noise_floor)
            Da = D[above]
            increases += int(np.sum(np.diff(Da) > 0))
            total += len(Da) - 1
        assert total >= 2
        assert sign_test(increases, total) > 0.01

    def test_invariant_target(self, toggle):
        fit = rate_fit(toggle, HybridState([5.0], 0), "invariant", n_max=4, ensemble=1000, fm_cap=500, seed=2)
        assert fit.D[0] > fit.D[-1]
        assert any("invariant" in n for n in fit.notes)

    def test_bad_args(self, lin):
        s = HybridState([0.0], 0)
        with pytest.raises(ConfigurationError):
            rate_fit(lin, s, s, ensemble=999)
        with pytest.raises(ConfigurationError):
            rate_fit(lin, s, "stationary", ensemble=1000)


def test_sign_test():
    assert sign_test(0, 5) == 1.0
    assert sign_test(5, 5) == pytest.approx(1 / 32)
    assert sign_test(0, 0) == 1.0
