"""Population engine tests.

The event-driven engine is the distributional gold standard (no time-step
bias); the stepped engine is checked against it and against closed-form
means where those exist.
"""

from __future__ import annotations

import io
import math

import numpy as np
import pytest
from scipy import optimize

from parabranch.analytics import mean_population, total_trait_mean
from parabranch.kernels import DiracHalfKernel, UniformKernel
from parabranch.model import (
    ConstantFn,
    LinearFn,
    ModelSpec,
    ParasiteLaw,
    ZeroFn,
    constant_rates,
    linear_division,
)
from parabranch.population import (
    ExactRunResult,
    _solve_hazard,
    new_population,
    run_population,
    run_population_exact,
    simulate_population_runs,
    stats,
    step_population,
    write_snapshots_csv,
)

UNIFORM = UniformKernel()


def null_law() -> ParasiteLaw:
    return ParasiteLaw(g=ZeroFn(), sigma2=ZeroFn(), p=ZeroFn(), pi=None, stable=None)


def flow_law(g: float) -> ParasiteLaw:
    return ParasiteLaw(g=LinearFn(g), sigma2=ZeroFn(), p=ZeroFn(), pi=None, stable=None)


def birth_death_spec(r: float, q: float, *, x0=1.0, horizon=2.0, dt=0.01, g=0.0, **kw) -> ModelSpec:
    law = null_law() if g == 0.0 else flow_law(g)
    return ModelSpec(law=law, policy=constant_rates(r=r, q=q, kernel=UNIFORM), x0=x0, horizon=horizon, dt=dt, **kw)


# ---------------------------------------------------------------------------
# single-run stepped engine
# ---------------------------------------------------------------------------


class TestStepPopulation:
    def test_division_conserves_total_trait(self):
        spec = birth_death_spec(r=2.0, q=0.0, horizon=3.0, dt=0.05)
        rng = np.random.default_rng(7)
        state = new_population(spec.x0)
        for _ in range(60):
            state = step_population(state, spec, rng)
        assert state.traits.size > 1
        assert float(state.traits.sum()) == pytest.approx(1.0, rel=1e-12)

    def test_pure_birth_counts_never_decrease(self):
        spec = birth_death_spec(r=1.5, q=0.0, horizon=2.0, dt=0.02)
        rng = np.random.default_rng(11)
        state = new_population(spec.x0)
        last = 1
        for _ in range(100):
            state = step_population(state, spec, rng)
            assert state.traits.size >= last
            last = state.traits.size

    def test_labels_form_an_antichain(self):
        spec = birth_death_spec(r=2.0, q=0.7, horizon=2.5, dt=0.02)
        rng = np.random.default_rng(13)
        state = new_population(spec.x0)
        for _ in range(125):
            state = step_population(state, spec, rng)
        labels = [(int(d), int(b)) for d, b in zip(state.depth.tolist(), state.bits.tolist())]
        assert state.traits.size > 4
        assert len(set(labels)) == len(labels)
        for i, first in enumerate(labels):
            for second in labels[i + 1 :]:
                lo, hi = sorted([first, second])
                assert (hi[1] >> (hi[0] - lo[0])) != lo[1], "one alive cell is an ancestor of another"

    def test_zero_trait_cells_still_divide(self):
        spec = birth_death_spec(r=1.0, q=0.0, x0=0.0, horizon=3.0, dt=0.05)
        rng = np.random.default_rng(5)
        state = new_population(spec.x0)
        for _ in range(60):
            state = step_population(state, spec, rng)
        assert state.traits.size > 2
        assert np.all(state.traits == 0.0)

    def test_explosion_freezes_cell_at_cap(self):
        spec = ModelSpec(
            law=flow_law(3.0),
            policy=constant_rates(r=1e-9, q=0.0, kernel=UNIFORM),
            x0=1.0,
            x_max=5.0,
            horizon=1.0,
            dt=0.01,
        )
        rng = np.random.default_rng(0)
        state = new_population(spec.x0)
        for _ in range(100):
            state = step_population(state, spec, rng)
        assert state.n_exploded == 1
        assert state.n_usable == 0
        row = stats(state, k_threshold=2.0, x_max=spec.x_max)
        assert row.n_total == 1 and row.n_usable == 0
        assert row.n_gt_k == 1 and row.frac_gt_k == 1.0
        assert row.qtile_50 == spec.x_max

    def test_population_cap_flags_run(self):
        spec = birth_death_spec(r=5.0, q=0.0, horizon=4.0, dt=0.05, population_cap=50)
        rng = np.random.default_rng(1)
        state = new_population(spec.x0)
        for _ in range(80):
            state = step_population(state, spec, rng)
            if state.capped:
                break
        assert state.capped

    def test_fixed_seed_reproducible(self):
        spec = birth_death_spec(r=1.0, q=0.4, horizon=2.0, dt=0.02)
        finals = []
        for _ in range(2):
            rng = np.random.default_rng(42)
            state, rows = run_population(spec, rng, snapshot_times=[1.0, 2.0])
            finals.append((state.traits.copy(), rows[-1].trait_sum))
        assert np.array_equal(finals[0][0], finals[1][0])
        assert finals[0][1] == finals[1][1]


class TestStats:
    def test_empty_population(self):
        state = new_population(1.0, n=0)
        row = stats(state)
        assert row.n_total == 0 and row.n_usable == 0
        assert math.isnan(row.qtile_50) and math.isnan(row.frac_positive)

    def test_threshold_counts(self):
        state = new_population(1.0, n=4)
        state.traits = np.array([0.0, 0.5, 2.0, 3.0])
        row = stats(state, k_threshold=1.0)
        assert row.n_gt_k == 2
        assert row.n_positive == 3
        assert row.frac_gt_k == 0.5
        assert row.trait_sum == 5.5

    def test_csv_round_trip(self, tmp_path):
        spec = birth_death_spec(r=1.0, q=0.2, horizon=1.0, dt=0.02)
        rng = np.random.default_rng(9)
        _, rows = run_population(spec, rng, snapshot_times=[0.5, 1.0], k_threshold=0.25)
        path = tmp_path / "snap.csv"
        write_snapshots_csv(rows, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "run_id,t,N,C,frac_gt_K,frac_positive,qtile_50,qtile_90"
        assert len(lines) == 3
        first = lines[1].split(",")
        assert first[0] == "0" and float(first[1]) == 0.5
        assert int(first[2]) >= int(first[3])


# ---------------------------------------------------------------------------
# event-driven exact engine
# ---------------------------------------------------------------------------


class TestHazardSolver:
    def test_matches_root_finder(self):
        rng = np.random.default_rng(123)
        for _ in range(40):
            a = float(rng.uniform(0.0, 5.0))
            b = float(rng.uniform(0.01, 5.0))
            g = float(rng.uniform(-2.0, 3.0))
            target = float(rng.exponential())
            d = _solve_hazard(a, b, g, target)
            if a == 0.0 or g == 0.0:
                continue

            def hazard(s):
                return a * math.expm1(g * s) / g + b * s - target

            ref = optimize.brentq(hazard, 0.0, max(2.0 * d, 1e-9) + 1.0, xtol=1e-14)
            assert d == pytest.approx(ref, rel=1e-9, abs=1e-12)

    def test_linear_cases(self):
        assert _solve_hazard(0.0, 2.0, 1.0, 3.0) == pytest.approx(1.5)
        assert _solve_hazard(1.0, 1.0, 0.0, 3.0) == pytest.approx(1.5)


def exact_mean(rng_seed: int, n_runs: int, **params) -> tuple[float, float]:
    rng = np.random.default_rng(rng_seed)
    vals = np.array([run_population_exact(rng, **params).n_final for _ in range(n_runs)], dtype=float)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_runs))


class TestExactEngine:
    def test_birth_death_mean(self):
        r, q, horizon = 1.0, 0.3, 2.0
        mean, se = exact_mean(
            2024, 8000, x0=1.0, alpha=0.0, beta=r, q=q, g=0.0, horizon=horizon, kernel=UNIFORM
        )
        assert abs(mean - math.exp((r - q) * horizon)) < 4.0 * se

    def test_extinction_probability_death_over_birth(self):
        r, q = 1.0, 0.5
        rng = np.random.default_rng(77)
        n = 3000
        extinct = sum(
            run_population_exact(
                rng, x0=0.0, alpha=0.0, beta=r, q=q, g=0.0, horizon=40.0, kernel=UNIFORM, barrier=512
            ).extinct
            for _ in range(n)
        )
        p_hat = extinct / n
        se = math.sqrt(0.5 * 0.5 / n)
        assert abs(p_hat - q / r) < 4.0 * se

    def test_trait_dependent_mean_matches_closed_form(self):
        alpha, beta, g, q, horizon = 1.0, 2.0, 1.0, 0.0, 1.0
        mean, se = exact_mean(
            99, 4000, x0=1.0, alpha=alpha, beta=beta, q=q, g=g, horizon=horizon, kernel=UNIFORM
        )
        target = mean_population(horizon, 1.0, alpha=alpha, beta=beta, g=g, q=q)
        assert abs(mean - target) < 4.0 * se

    def test_total_trait_mean_matches_closed_form(self):
        alpha, beta, g, q, horizon = 0.5, 1.0, 0.8, 0.4, 1.5
        rng = np.random.default_rng(31)
        sums = np.array(
            [
                run_population_exact(
                    rng, x0=1.0, alpha=alpha, beta=beta, q=q, g=g, horizon=horizon, kernel=UNIFORM
                ).trait_sum
                for _ in range(4000)
            ]
        )
        target = total_trait_mean(horizon, 1.0, g=g, q=q)
        se = sums.std(ddof=1) / math.sqrt(sums.size)
        assert abs(sums.mean() - target) < 4.0 * se

    def test_snapshot_total_trait_is_deterministic_without_death(self):
        # with q=0 divisions only reshuffle the total, so S(t) = x0 e^{g t}
        rng = np.random.default_rng(4)
        res = run_population_exact(
            rng,
            x0=2.0,
            alpha=0.0,
            beta=1.0,
            q=0.0,
            g=0.7,
            horizon=1.5,
            kernel=UNIFORM,
            snapshot_times=[0.5, 1.0, 1.5],
        )
        assert [s for s, _, _ in res.snapshots] == [0.5, 1.0, 1.5]
        for s, n, total in res.snapshots:
            assert total == pytest.approx(2.0 * math.exp(0.7 * s), rel=1e-9)
            assert n >= 1
        assert res.trait_sum == pytest.approx(2.0 * math.exp(0.7 * 1.5), rel=1e-9)

    def test_dirac_half_kernel_split(self):
        rng = np.random.default_rng(6)
        res = run_population_exact(
            rng, x0=1.0, alpha=0.0, beta=50.0, q=0.0, g=0.0, horizon=0.2, kernel=DiracHalfKernel(), cap=4096
        )
        # every trait is an exact binary fraction of the root trait
        powers = {1.0 / 2**k for k in range(60)}
        assert res.n_final > 2
        assert all(float(t) in powers for t in res.traits)
        assert res.trait_sum == pytest.approx(1.0, rel=1e-12)

    def test_barrier_and_cap_flags(self):
        rng = np.random.default_rng(8)
        res = run_population_exact(
            rng, x0=1.0, alpha=0.0, beta=5.0, q=0.0, g=0.0, horizon=10.0, kernel=UNIFORM, barrier=64
        )
        assert res.survived and not res.extinct and res.n_final >= 64
        rng = np.random.default_rng(8)
        res = run_population_exact(
            rng, x0=1.0, alpha=0.0, beta=5.0, q=0.0, g=0.0, horizon=10.0, kernel=UNIFORM, cap=32
        )
        assert res.capped

    def test_rejects_all_zero_rates(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            run_population_exact(rng, x0=1.0, alpha=0.0, beta=0.0, q=0.0, g=1.0, horizon=1.0, kernel=UNIFORM)


# ---------------------------------------------------------------------------
# stepped engine vs exact engine / closed forms
# ---------------------------------------------------------------------------


class TestSteppedAgainstExact:
    def test_constant_rate_mean_agrees(self):
        r, q, horizon = 1.0, 0.3, 2.0
        spec = birth_death_spec(r=r, q=q, horizon=horizon, dt=0.002)
        rng = np.random.default_rng(55)
        block = simulate_population_runs(spec, rng, 3000)
        counts = block.final.n_usable
        mean = float(np.nanmean(counts))
        se = float(np.nanstd(counts, ddof=1) / math.sqrt(np.sum(~np.isnan(counts))))
        exact_m, exact_se = exact_mean(
            56, 6000, x0=1.0, alpha=0.0, beta=r, q=q, g=0.0, horizon=horizon, kernel=UNIFORM
        )
        assert abs(mean - exact_m) < 4.0 * math.hypot(se, exact_se)

    def test_trait_dependent_division_substeps_engage(self):
        spec = ModelSpec(
            law=flow_law(1.0),
            policy=linear_division(alpha=1.0, beta=2.0, q=0.0, kernel=UNIFORM),
            x0=1.0,
            horizon=1.0,
            dt=0.05,  # coarse macro step; substepping keeps (r+q) h <= 0.1
        )
        rng = np.random.default_rng(21)
        block = simulate_population_runs(spec, rng, 1500)
        counts = block.final.n_usable
        mean = float(np.nanmean(counts))
        se = float(np.nanstd(counts, ddof=1) / math.sqrt(np.sum(~np.isnan(counts))))
        target = mean_population(1.0, 1.0, alpha=1.0, beta=2.0, g=1.0, q=0.0)
        # thinning bias is O(h); allow it on top of the MC band
        assert abs(mean - target) < 4.0 * se + 0.05 * target


class TestBlockRuns:
    def test_single_run_block_matches_run_population(self):
        spec = birth_death_spec(r=1.0, q=0.4, horizon=2.0, dt=0.02)
        state, rows = run_population(spec, np.random.default_rng(14), snapshot_times=[1.0, 2.0], k_threshold=0.5)
        block = simulate_population_runs(
            spec, np.random.default_rng(14), 1, snapshot_times=[1.0, 2.0], k_threshold=0.5
        )
        assert block.final.n_usable[0] == state.traits.size
        assert block.snapshots[0].n_total[0] == rows[0].n_total
        assert block.snapshots[0].trait_sum[0] == rows[0].trait_sum
        assert block.snapshots[1].qtile_90[0] == rows[1].qtile_90

    def test_runs_are_independent_of_block_membership_statistically(self):
        spec = birth_death_spec(r=1.2, q=0.2, horizon=1.5, dt=0.01)
        block = simulate_population_runs(spec, np.random.default_rng(2), 2000)
        counts = block.final.n_usable
        mean = float(np.nanmean(counts))
        se = float(np.nanstd(counts, ddof=1) / math.sqrt(2000))
        assert abs(mean - math.exp(1.0 * 1.5)) < 4.0 * se

    def test_barrier_flags_and_nans(self):
        spec = birth_death_spec(r=4.0, q=0.0, horizon=3.0, dt=0.02)
        block = simulate_population_runs(spec, np.random.default_rng(10), 64, barrier=16)
        assert np.all(block.survived)
        assert np.all(np.isnan(block.final.n_usable))
        assert not np.any(block.extinct)

    def test_extinct_runs_flagged(self):
        spec = birth_death_spec(r=0.3, q=3.0, horizon=8.0, dt=0.02)
        block = simulate_population_runs(spec, np.random.default_rng(12), 128, barrier=64)
        assert np.mean(block.extinct) > 0.9
        dead = block.extinct
        assert np.all(block.final.n_usable[dead] == 0)

    def test_cap_flags_and_excludes(self):
        spec = birth_death_spec(r=5.0, q=0.0, horizon=3.0, dt=0.05, population_cap=40)
        block = simulate_population_runs(spec, np.random.default_rng(13), 32)
        assert np.all(block.capped)
        assert np.all(np.isnan(block.final.trait_sum))

    def test_snapshot_rows_and_csv(self, tmp_path):
        spec = birth_death_spec(r=1.0, q=0.5, horizon=1.0, dt=0.02)
        block = simulate_population_runs(
            spec, np.random.default_rng(17), 8, snapshot_times=[0.5, 1.0], k_threshold=0.3
        )
        rows = block.rows()
        assert {row.t for row in rows} == {0.5, 1.0}
        assert all(row.n_usable <= row.n_total for row in rows)
        path = tmp_path / "block.csv"
        write_snapshots_csv(rows, path)
        text = path.read_text()
        assert text.startswith("run_id,t,N,C,")
        assert len(text.strip().split("\n")) == len(rows) + 1

    def test_block_reproducible_bitwise(self):
        spec = birth_death_spec(r=1.0, q=0.4, horizon=1.5, dt=0.02)
        a = simulate_population_runs(spec, np.random.default_rng(19), 32, snapshot_times=[1.5])
        b = simulate_population_runs(spec, np.random.default_rng(19), 32, snapshot_times=[1.5])
        assert np.array_equal(a.final.trait_sum, b.final.trait_sum, equal_nan=True)
        assert np.array_equal(a.snapshots[0].qtile_50, b.snapshots[0].qtile_50, equal_nan=True)
