"""Lineage process tests.

Rate-function identities are exact; simulator checks compare against
closed forms or against the population engine (both Monte Carlo sides get
a combined-SE band).
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabranch.analytics import ga, mean_population
from parabranch.dynamics import simulate_trait
from parabranch.kernels import DiracHalfKernel, TwoPointKernel, UniformKernel
from parabranch.model import (
    ConstantFn,
    LinearFn,
    ModelSpec,
    ParasiteLaw,
    PowerFn,
    UniformJumps,
    ZeroFn,
    constant_rates,
    general_policy,
    linear_division,
)
from parabranch.population import run_population_exact, simulate_population_runs
from parabranch.spine import (
    bias_factor,
    division_acceptance,
    division_rate,
    drift_rate,
    fit_lyapunov_bound,
    jump_rate,
    jump_rate_scaling_probe,
    simulate_spine_homogeneous,
    simulate_spine_homogeneous_batch,
    simulate_spine_inhomogeneous,
    simulate_spine_inhomogeneous_batch,
    thinned_kernel_sampler,
)

UNIFORM = UniformKernel()


def jumpy_law() -> ParasiteLaw:
    return ParasiteLaw(
        g=LinearFn(0.3),
        sigma2=PowerFn(0.1, 1.0),
        p=LinearFn(0.5),
        pi=UniformJumps(rate=1.0, lo=0.1, hi=1.0),
        stable=None,
    )


def gbm_law(g: float = 0.5, s2: float = 0.1) -> ParasiteLaw:
    return ParasiteLaw(g=LinearFn(g), sigma2=PowerFn(s2, 2.0), p=ZeroFn(), pi=None, stable=None)


def flow_law(g: float) -> ParasiteLaw:
    return ParasiteLaw(g=LinearFn(g), sigma2=ZeroFn(), p=ZeroFn(), pi=None, stable=None)


# ---------------------------------------------------------------------------
# rate functions
# ---------------------------------------------------------------------------


class TestRateFunctions:
    def test_zero_remaining_time_slices(self):
        law = jumpy_law()
        for y in (0.2, 1.0, 7.5):
            assert drift_rate(y, 0.0, alpha=1.0, beta=2.0, g=0.7, law=law) == pytest.approx(0.7 * y)
            for theta in (0.1, 0.5, 0.9):
                assert division_rate(y, 0.0, theta, alpha=1.0, beta=2.0, g=0.7) == pytest.approx(
                    2.0 * (y + 2.0)
                )
            for z in (0.1, 1.0):
                assert jump_rate(y, 0.0, z, alpha=1.0, beta=2.0, g=0.7, law=law) == pytest.approx(
                    float(law.p(y))
                )

    @settings(max_examples=120, deadline=None)
    @given(
        y=st.floats(1e-3, 50.0),
        s=st.floats(0.0, 30.0),
        theta=st.floats(1e-6, 1.0),
        alpha=st.floats(1e-3, 5.0),
        beta=st.floats(1e-3, 5.0),
        g=st.floats(-2.0, 4.0),
    )
    def test_division_rate_bounds(self, y, s, theta, alpha, beta, g):
        f2 = division_rate(y, s, theta, alpha=alpha, beta=beta, g=g)
        assert f2 <= 2.0 * (alpha * y + beta) * (1.0 + 1e-9)
        assert f2 >= 2.0 * theta * beta * (1.0 - 1e-9)

    def test_acceptance_tends_to_theta_for_large_remaining_time(self):
        for theta in (0.1, 0.25, 0.5, 0.9):
            ratio = division_acceptance(1.0, 50.0, theta, alpha=1.0, beta=1.0, g=2.0)
            assert abs(ratio - theta) < 1e-3

    def test_bias_factor_small_gap_continuous(self):
        near = bias_factor(1.0, 2.0, alpha=1.0, beta=1.0, g=1.0 + 1e-13)
        limit = 2.0 / (1.0 + 2.0)  # A_s -> alpha * s when g -> beta
        assert near == pytest.approx(limit, rel=1e-6)

    def test_drift_rate_uses_jump_curvature(self):
        law = jumpy_law()
        y, s = 2.0, 1.0
        c = bias_factor(y, s, alpha=1.0, beta=2.0, g=0.7)
        expected = 0.7 * y + (2.0 * float(law.sigma2(y)) + float(law.p(y)) * law.pi.m2) * c
        assert drift_rate(y, s, alpha=1.0, beta=2.0, g=0.7, law=law) == pytest.approx(expected)


# ---------------------------------------------------------------------------
# homogeneous lineage
# ---------------------------------------------------------------------------


class TestHomogeneousSpine:
    def test_log_mean_matches_compound_poisson(self):
        g, r, horizon = 0.5, 1.0, 1.0
        spec = ModelSpec(
            law=flow_law(g),
            policy=constant_rates(r=r, q=0.0, kernel=UNIFORM),
            x0=1.0,
            horizon=horizon,
            dt=0.002,
        )
        batch = simulate_spine_homogeneous_batch(spec, np.random.default_rng(101), 20000)
        logs = np.log(batch.values[batch.alive])
        se = logs.std(ddof=1) / math.sqrt(logs.size)
        assert abs(logs.mean() - (g - 2.0 * r) * horizon) < 4.0 * se

    def test_zero_division_rate_reduces_to_trait_path(self):
        spec = ModelSpec(
            law=gbm_law(),
            policy=constant_rates(r=0.0, q=0.0, kernel=UNIFORM),
            x0=1.0,
            horizon=1.0,
            dt=0.01,
        )
        spine = simulate_spine_homogeneous(spec, np.random.default_rng(33))
        trait = simulate_trait(spec, np.random.default_rng(33))
        assert np.array_equal(spine.path.values, trait.values)
        assert spine.division_times.size == 0

    def test_divisions_shrink_path(self):
        spec = ModelSpec(
            law=flow_law(0.0),
            policy=constant_rates(r=2.0, q=0.0, kernel=DiracHalfKernel()),
            x0=1.0,
            horizon=1.0,
            dt=0.01,
        )
        spine = simulate_spine_homogeneous(spec, np.random.default_rng(40))
        k = spine.division_times.size
        assert k > 0
        assert spine.path.values[-1] == pytest.approx(0.5**k)
        assert np.all(spine.division_shares == 0.5)

    def test_vanishing_regime_fraction_decreases(self):
        # per-unit log drift g + 2 r E[ln theta] = 0.2 - 2 < 0: load dies out
        fractions = []
        ses = []
        for horizon in (0.5, 1.5, 3.0):
            spec = ModelSpec(
                law=flow_law(0.2),
                policy=constant_rates(r=1.0, q=0.0, kernel=UNIFORM),
                x0=1.0,
                horizon=horizon,
                dt=0.01,
            )
            batch = simulate_spine_homogeneous_batch(spec, np.random.default_rng(7), 4000)
            frac = float(np.mean(batch.values > 0.05))
            fractions.append(frac)
            ses.append(math.sqrt(frac * (1.0 - frac) / 4000))
        assert fractions[0] - fractions[1] > -3.0 * math.hypot(ses[0], ses[1])
        assert fractions[1] - fractions[2] > -3.0 * math.hypot(ses[1], ses[2])
        assert fractions[2] < fractions[0]

    def test_integrand_accumulates_elapsed_time(self):
        spec = ModelSpec(
            law=gbm_law(),
            policy=constant_rates(r=1.0, q=0.0, kernel=UNIFORM),
            x0=1.0,
            horizon=0.7,
            dt=0.01,
        )
        batch = simulate_spine_homogeneous_batch(
            spec, np.random.default_rng(9), 500, integrand=lambda y: np.ones_like(y)
        )
        assert np.allclose(batch.integrals[batch.alive], 0.7, rtol=1e-10)

    def test_martingale_probe_constant_coefficients(self):
        # Y^{1-a} e^{int G_a} has constant mean for the self-similar family
        a = 2.0
        law = gbm_law(g=0.5, s2=0.1)
        policy = constant_rates(r=1.0, q=0.3, kernel=TwoPointKernel(0.25))
        spec = ModelSpec(law=law, policy=policy, x0=1.0, horizon=0.3, dt=0.002)
        g2_vals = ga(a, np.array([0.5, 1.0, 4.0]), law=law, policy=policy)
        assert np.allclose(g2_vals, g2_vals[0], rtol=1e-12)
        g2 = float(g2_vals[0])
        batch = simulate_spine_homogeneous_batch(
            spec, np.random.default_rng(77), 20000, integrand=lambda y: np.full(y.shape, g2)
        )
        vals = batch.values[batch.alive] ** (1.0 - a) * np.exp(batch.integrals[batch.alive])
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - 1.0) < 4.0 * se

    def test_batch_reproducible(self):
        spec = ModelSpec(
            law=gbm_law(),
            policy=constant_rates(r=1.0, q=0.0, kernel=UNIFORM),
            x0=1.0,
            horizon=1.0,
            dt=0.01,
        )
        a = simulate_spine_homogeneous_batch(spec, np.random.default_rng(5), 300)
        b = simulate_spine_homogeneous_batch(spec, np.random.default_rng(5), 300)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.n_divisions, b.n_divisions)


class TestManyToOneConstantRates:
    def test_indicator_identity(self):
        r, q, horizon, k_threshold = 1.0, 0.3, 1.0, 0.5
        law = gbm_law(g=0.5, s2=0.1)
        pop_spec = ModelSpec(
            law=law, policy=constant_rates(r=r, q=q, kernel=UNIFORM), x0=1.0, horizon=horizon, dt=0.005
        )
        block = simulate_population_runs(
            pop_spec, np.random.default_rng(61), 2000, snapshot_times=[horizon], k_threshold=k_threshold
        )
        counts = block.snapshots[0].n_gt_k
        pop_mean = float(np.nanmean(counts))
        pop_se = float(np.nanstd(counts, ddof=1) / math.sqrt(np.sum(~np.isnan(counts))))

        batch = simulate_spine_homogeneous_batch(pop_spec, np.random.default_rng(62), 6000)
        hits = (batch.values > k_threshold).astype(float)
        scale = math.exp((r - q) * horizon)
        spine_mean = scale * float(hits.mean())
        spine_se = scale * float(hits.std(ddof=1) / math.sqrt(hits.size))
        assert abs(pop_mean - spine_mean) < 4.0 * math.hypot(pop_se, spine_se)

    def test_domination_bound_general_death(self):
        # r constant 1, q(x) = 0.3 x: r - q <= 1, spine side must dominate
        gamma, horizon, k_threshold = 1.0, 1.5, 0.5
        law = gbm_law(g=0.5, s2=0.1)
        policy = general_policy(r=ConstantFn(1.0), q=LinearFn(0.3), kernel=UNIFORM)
        pop_spec = ModelSpec(law=law, policy=policy, x0=1.0, horizon=horizon, dt=0.005)
        block = simulate_population_runs(
            pop_spec, np.random.default_rng(71), 2000, snapshot_times=[horizon], k_threshold=k_threshold
        )
        counts = block.snapshots[0].n_gt_k
        pop_mean = float(np.nanmean(counts))
        pop_se = float(np.nanstd(counts, ddof=1) / math.sqrt(np.sum(~np.isnan(counts))))

        batch = simulate_spine_homogeneous_batch(pop_spec, np.random.default_rng(72), 6000)
        hits = (batch.values > k_threshold).astype(float)
        scale = math.exp(gamma * horizon)
        spine_mean = scale * float(hits.mean())
        spine_se = scale * float(hits.std(ddof=1) / math.sqrt(hits.size))
        assert pop_mean <= spine_mean + 3.0 * math.hypot(pop_se, spine_se)


# ---------------------------------------------------------------------------
# inhomogeneous lineage
# ---------------------------------------------------------------------------


def ldcg_spec(*, alpha=1.0, beta=2.0, g=1.0, q=0.0, law=None, horizon=1.5, dt=0.005, x0=1.0) -> ModelSpec:
    law = law if law is not None else flow_law(g)
    return ModelSpec(
        law=law,
        policy=linear_division(alpha=alpha, beta=beta, q=q, kernel=UNIFORM),
        x0=x0,
        horizon=horizon,
        dt=dt,
    )


class TestInhomogeneousSpine:
    def test_rejects_bad_setups(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="g = beta"):
            simulate_spine_inhomogeneous(ldcg_spec(beta=2.0, g=2.0), rng)
        const = ModelSpec(
            law=flow_law(1.0), policy=constant_rates(r=1.0, q=0.0, kernel=UNIFORM), x0=1.0, horizon=1.0
        )
        with pytest.raises(ValueError, match="alpha"):
            simulate_spine_inhomogeneous(const, rng)
        unbounded = ParasiteLaw(
            g=LinearFn(1.0),
            sigma2=ZeroFn(),
            p=LinearFn(0.5),
            pi=__import__("parabranch.model", fromlist=["ExponentialJumps"]).ExponentialJumps(rate=1.0, scale=0.5),
            stable=None,
        )
        with pytest.raises(ValueError, match="bounded"):
            simulate_spine_inhomogeneous(ldcg_spec(law=unbounded), rng)

    def test_zero_start_is_absorbed(self):
        spine = simulate_spine_inhomogeneous(ldcg_spec(x0=0.0), np.random.default_rng(1))
        assert spine.path.status == "absorbed"
        assert np.all(spine.path.values == 0.0)

    def test_pure_flow_path_between_divisions(self):
        # sigma = p = 0: between divisions the path grows exactly like e^{g t}
        spec = ldcg_spec(alpha=0.5, beta=1.0, g=0.8, horizon=1.0, dt=0.002)
        spine = simulate_spine_inhomogeneous(spec, np.random.default_rng(3))
        vals = spine.path.values
        steps = np.diff(np.log(vals[vals > 0.0]))
        euler_step = math.log1p(0.8 * spec.dt)  # drift-only Euler increment
        divisions = np.sum(steps < euler_step - 1e-9)
        assert divisions == spine.division_times.size
        clean = steps[steps >= euler_step - 1e-9]
        assert np.allclose(clean, euler_step, atol=1e-9)

    def test_many_to_one_linear_division(self):
        alpha, beta, g, q, horizon, k_threshold = 1.0, 2.0, 1.0, 0.3, 1.5, 1.0
        rng = np.random.default_rng(41)
        per_run = [
            run_population_exact(
                rng, x0=1.0, alpha=alpha, beta=beta, q=q, g=g, horizon=horizon, kernel=UNIFORM
            )
            for _ in range(4000)
        ]
        counts = np.array([float(np.sum(res.traits > k_threshold)) for res in per_run])
        pop_mean = counts.mean()
        pop_se = counts.std(ddof=1) / math.sqrt(counts.size)

        spec = ldcg_spec(alpha=alpha, beta=beta, g=g, q=q, horizon=horizon, dt=0.005)
        batch = simulate_spine_inhomogeneous_batch(spec, np.random.default_rng(42), 8000)
        hits = (batch.values > k_threshold).astype(float)
        m = mean_population(horizon, 1.0, alpha=alpha, beta=beta, g=g, q=q)
        spine_mean = m * float(hits.mean())
        spine_se = m * float(hits.std(ddof=1) / math.sqrt(hits.size))
        assert abs(pop_mean - spine_mean) < 4.0 * math.hypot(pop_se, spine_se)

    def test_lyapunov_bound_out_of_sample(self):
        law = ParasiteLaw(
            g=LinearFn(0.2),
            sigma2=PowerFn(0.1, 1.0),
            p=LinearFn(0.5),
            pi=UniformJumps(rate=1.0, lo=0.1, hi=1.0),
            stable=None,
        )
        horizon = 8.0
        spec = ldcg_spec(alpha=1.0, beta=1.0, g=0.2, law=law, horizon=horizon, dt=0.01, x0=2.0)
        s_grid = np.arange(0.5, 8.01, 0.5)
        batch = simulate_spine_inhomogeneous_batch(
            spec, np.random.default_rng(55), 3000, snapshot_times=s_grid
        )
        means = np.array([float(vals.mean()) for _, vals in batch.snapshots])
        ses = np.array(
            [float(vals.std(ddof=1)) / math.sqrt(vals.size) for _, vals in batch.snapshots]
        )
        half = s_grid.size // 2
        a, d = fit_lyapunov_bound(s_grid[:half], means[:half], spec.x0)
        assert a > 0.0 and d > 0.0
        bound = np.exp(-a * s_grid) * spec.x0 + d / a * (1.0 - np.exp(-a * s_grid))
        assert np.all(means[half:] <= bound[half:] + 3.0 * ses[half:])

    def test_batch_reproducible(self):
        spec = ldcg_spec(law=gbm_law(g=1.0, s2=0.05), horizon=1.0, dt=0.01)
        a = simulate_spine_inhomogeneous_batch(spec, np.random.default_rng(5), 400)
        b = simulate_spine_inhomogeneous_batch(spec, np.random.default_rng(5), 400)
        assert np.array_equal(a.values, b.values)


# ---------------------------------------------------------------------------
# utilities
# ---------------------------------------------------------------------------


class TestThinnedKernelSampler:
    def test_unit_weight_recovers_kernel(self):
        rng = np.random.default_rng(123)
        draws = thinned_kernel_sampler(UNIFORM, lambda t: np.ones_like(t), 1.0, rng, n=100_000)
        grid = np.sort(draws)
        empirical = np.arange(1, grid.size + 1) / grid.size
        ks = float(np.max(np.abs(empirical - UNIFORM.cdf(grid))))
        assert ks < 0.02

    def test_linear_weight_tilts_uniform(self):
        rng = np.random.default_rng(7)
        draws = thinned_kernel_sampler(UNIFORM, lambda t: 2.0 * t, 2.0, rng, n=50_000)
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - 2.0 / 3.0) < 3.0 * se

    def test_point_mass_unchanged(self):
        rng = np.random.default_rng(8)
        draws = thinned_kernel_sampler(DiracHalfKernel(), lambda t: 2.0 * t, 2.0, rng, n=500)
        assert np.all(draws == 0.5)

    def test_weight_violations_raise(self):
        rng = np.random.default_rng(9)
        with pytest.raises(ValueError):
            thinned_kernel_sampler(UNIFORM, lambda t: 3.0 * t, 2.0, rng, n=100)
        with pytest.raises(ValueError):
            thinned_kernel_sampler(UNIFORM, lambda t: t - 0.5, 1.0, rng, n=100)
        with pytest.raises(ValueError):
            thinned_kernel_sampler(UNIFORM, lambda t: t, 0.0, rng, n=10)


class TestProbesAndFits:
    def test_jump_rate_scaling_probe(self):
        assert jump_rate_scaling_probe(LinearFn(0.5)) == "satisfied"
        assert jump_rate_scaling_probe(PowerFn(1.0, 2.0)) == "satisfied"
        assert jump_rate_scaling_probe(PowerFn(1.0, 0.5)) == "violated"

    def test_fit_lyapunov_bound_synthetic(self):
        s = np.linspace(0.5, 6.0, 12)
        means = np.exp(-0.8 * s) * 3.0 + 1.2 * (1.0 - np.exp(-0.8 * s))
        a, d = fit_lyapunov_bound(s, means, 3.0)
        bound = np.exp(-a * s) * 3.0 + d / a * (1.0 - np.exp(-a * s))
        assert a > 0.0 and d > 0.0
        assert np.all(means <= bound + 1e-9)

    def test_fit_lyapunov_bound_validation(self):
        with pytest.raises(ValueError):
            fit_lyapunov_bound(np.array([1.0]), np.array([1.0]), 1.0)
        with pytest.raises(ValueError):
            fit_lyapunov_bound(np.array([0.0, 1.0]), np.array([1.0, 1.0]), 1.0)
