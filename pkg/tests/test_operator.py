import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdsjumps import (
    ConfigurationError,
    EmpiricalMeasure,
    HybridState,
    NumericError,
    QuadratureSpec,
    RngStream,
    advance_batch,
    apply_dual,
    apply_dual_batch,
    iterate_dual,
    push_forward,
)
from rdsjumps.models import constjump, genetoggle, linear1d

from oracles import FROZEN, linear1d_one_step_mean

QUADS = [QuadratureSpec(), QuadratureSpec("gauss-laguerre", 16), QuadratureSpec("truncated-composite", 2001)]
ident = lambda x, i: x[:, 0]  # noqa: E731


class TestQuadrature:
    @pytest.mark.parametrize("quad", QUADS)
    @pytest.mark.parametrize("lam", [0.1, 1.0, 7.5])
    def test_unit_mass(self, quad, lam):
        _, w = quad.rule(lam)
        assert abs(math.fsum(w) - 1.0) < 1e-10

    @pytest.mark.parametrize("lam", [0.5, 2.0])
    def test_exponential_moment(self, lam):
        for quad in (QuadratureSpec(), QuadratureSpec("truncated-composite", 4001)):
            t, w = quad.rule(lam)
            assert w @ np.exp(-t) == pytest.approx(lam / (lam + 1), abs=1e-8)

    def test_kink_accuracy_of_composite(self):
        # E[min(T, 1)] = (1 - e^{-lam}) / lam has a kink the composite rule handles
        t, w = QuadratureSpec("truncated-composite", 20001).rule(1.0)
        assert w @ np.minimum(t, 1.0) == pytest.approx(1 - math.exp(-1), abs=1e-7)

    @pytest.mark.parametrize("kw", [{"method": "simpson"}, {"nodes": 1}, {"T": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            QuadratureSpec(**kw)


class TestApplyDual:
    @pytest.mark.parametrize("quad", QUADS)
    def test_constants_preserved(self, quad):
        spec = genetoggle()
        gen = np.random.default_rng(0)
        X = gen.uniform(-10, 10, (200, 1))
        I = gen.integers(0, 2, 200)
        assert np.all(np.abs(apply_dual_batch(spec, lambda x, i: np.ones(len(x)), X, I, quad) - 1.0) <= 1e-9)

    @pytest.mark.parametrize("quad", QUADS)
    def test_linear1d_identity(self, quad):
        v = apply_dual(linear1d(), ident, HybridState([2.0], 0), quad)
        assert v == pytest.approx(FROZEN["linear1d_one_step_mean_at_2"], abs=1e-6)
        assert FROZEN["linear1d_one_step_mean_at_2"] == linear1d_one_step_mean(2.0)

    def test_monte_carlo_agreement(self):
        spec = genetoggle()
        f = lambda x, i: np.sin(x[:, 0]) + i  # noqa: E731
        state = HybridState([0.3], 1)
        exact = apply_dual(spec, f, state, QuadratureSpec("truncated-composite", 20001))
        n = 100_000
        _, _, _, xn, j = advance_batch(spec, np.full((n, 1), 0.3), np.ones(n, int), RngStream(2))
        vals = f(xn, j)
        se = vals.std(ddof=1) / math.sqrt(n)
        assert abs(vals.mean() - exact) <= 3 * se

    def test_non_finite(self, lin):
        with pytest.raises(NumericError), np.errstate(invalid="ignore"):
            apply_dual(lin, lambda x, i: np.log(x[:, 0] - 5), HybridState([2.0], 0))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-10, 10), st.integers(0, 1), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, x, i, a, b):
        spec = genetoggle()
        f = lambda x, i: np.cos(x[:, 0])  # noqa: E731
        g = lambda x, i: np.minimum(x[:, 0], 0.4) * (1 + i)  # noqa: E731
        h = lambda x, i: a * f(x, i) + b * g(x, i)  # noqa: E731
        s = HybridState([x], i)
        lhs = apply_dual(spec, h, s)
        rhs = a * apply_dual(spec, f, s) + b * apply_dual(spec, g, s)
        assert lhs == pytest.approx(rhs, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-10, 10), st.integers(0, 1), st.floats(0.05, 3))
    def test_positivity(self, x, i, width):
        f = lambda x, i: np.exp(-x[:, 0] ** 2 / width) * (i == 0)  # noqa: E731
        assert apply_dual(genetoggle(), f, HybridState([x], i)) >= -1e-12

    def test_feller(self):
        spec = genetoggle()
        f = lambda x, i: np.tanh(x[:, 0]) + 0.5 * i  # noqa: E731
        quad = QuadratureSpec("truncated-composite", 4001)
        base = apply_dual(spec, f, HybridState([0.2], 0), quad)
        m = np.arange(1, 16)
        diffs = np.array([abs(apply_dual(spec, f, HybridState([0.2 + 0.5**k], 0), quad) - base) for k in m])
        slope = np.polyfit(m, np.log(diffs), 1)[0]
        assert slope < 0
        assert diffs[-1] < 1e-4


class TestPushForward:
    def test_fixed_point(self):
        spec = constjump(0.7)
        mu = EmpiricalMeasure.dirac(0.7, 0)
        assert push_forward(spec, mu, 0).equals(mu)

    def test_mass_and_atom_count(self, toggle):
        gen = np.random.default_rng(0)
        mu = EmpiricalMeasure(gen.normal(size=(300, 1)), gen.dirichlet(np.ones(300)), gen.integers(0, 2, 300))
        out = push_forward(toggle, mu, 1)
        assert len(out) == len(mu)
        assert out.total_mass == pytest.approx(mu.total_mass, abs=1e-15)

    def test_mean_of_dirac(self, lin):
        out = push_forward(lin, EmpiricalMeasure.dirac(2.0, 0), RngStream(3), replicates=100_000)
        se = math.sqrt(out.moment(2)[0] - out.mean()[0] ** 2) / math.sqrt(100_000)
        assert abs(out.mean()[0] - 1.5) <= 3 * se

    def test_requires_probability(self, lin):
        mu = EmpiricalMeasure.dirac(0.0)
        object.__setattr__(mu, "weights", np.array([0.5]))
        with pytest.raises(ConfigurationError):
            push_forward(lin, mu, 0)

    def test_duality(self, toggle):
        gen = np.random.default_rng(1)
        mu = EmpiricalMeasure(gen.uniform(-2, 2, (50, 1)), None, gen.integers(0, 2, 50))
        f = lambda x, i: np.cos(x[:, 0]) * (1 + i)  # noqa: E731
        rhs = float(mu.weights @ apply_dual_batch(toggle, f, mu.points, mu.index, QuadratureSpec("truncated-composite", 20001)))
        reps = np.array([push_forward(toggle, mu, RngStream(5, r), replicates=200).integrate(f) for r in range(50)])
        se = reps.std(ddof=1) / math.sqrt(len(reps))
        assert abs(reps.mean() - rhs) <= 3 * se


class TestIterateDual:
    def test_zero_steps(self, toggle):
        f = lambda x, i: x[:, 0] ** 2 + i  # noqa: E731
        assert iterate_dual(toggle, f, HybridState([3.0], 1), 0) == 10.0

    def test_one_step_matches_quadrature(self, lin):
        v, se = iterate_dual(lin, ident, HybridState([2.0], 0), 1, mc_paths=100_000, rng=4, return_stderr=True)
        assert abs(v - apply_dual(lin, ident, HybridState([2.0], 0))) <= 3 * se

    def test_many_steps(self, lin):
        v = iterate_dual(lin, ident, HybridState([10.0], 0), 50, mc_paths=100_000, rng=5)
        assert abs(v - FROZEN["linear1d_mean"]) < 0.02

    def test_negative_n(self, lin):
        with pytest.raises(ConfigurationError):
            iterate_dual(lin, ident, HybridState([0.0], 0), -1)
