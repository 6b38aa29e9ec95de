"""Command-line experiment runner.

Two subcommands::

    parabranch run --config exp.toml [--seed N] [--replicas N] [--out DIR]
                   [--jobs N] [--check]
    parabranch validate --config exp.toml

``run`` executes the experiment named by the config, writes CSV/JSON
artifacts plus a manifest into the output directory, and prints one line
per internal consistency check. ``--check`` turns those lines into an
exit-status gate (exit 3 when any fails); malformed configs exit 2.
``--jobs`` parallelizes replica blocks and never changes any value: a
rerun from the manifest is byte-identical whatever the worker count.

``validate`` parses the config, builds the model and reports the
well-posedness spot checks without running anything.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import analytics, population, spine
from .analytics import GROWS, GROWS_SLOW, MEAN_TO_ZERO
from .config import (
    ConfigError,
    ExperimentConfig,
    build_grid,
    build_kernel,
    get_int,
    get_number,
    get_str,
    get_table,
    load_config,
)
from .kernels import DiracHalfKernel, UniformKernel
from .model import validate_eu
from .montecarlo import (
    EquivalenceResult,
    Estimator,
    SeedPlan,
    equivalence_test,
    map_blocks,
    trend_test,
)
from .output import write_manifest, write_rows_csv

__all__ = ["main"]

_DEFAULT_REPLICAS = {
    "infected-proportion": 1000,
    "many-to-one-check": 2000,
    "moment-check": 2000,
}

# fixed odd constant; separates the RNG streams of the two sides of a
# two-sample experiment while keeping both derived from the one seed
_STREAM_STRIDE = 0x9E3779B97F4A7C15


@dataclass
class CheckLine:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


@dataclass
class RunContext:
    seed: int
    replicas: Optional[int]
    out_dir: Path
    jobs: int


Runner = Callable[[RunContext], Tuple[Dict[str, Path], List[CheckLine]]]


def _stream_plan(seed: int, stream: int) -> SeedPlan:
    return SeedPlan((seed + stream * _STREAM_STRIDE) % 2**64)


def _resolve_replicas(ctx: RunContext, cfg: ExperimentConfig) -> int:
    return ctx.replicas or cfg.replicas or _DEFAULT_REPLICAS[cfg.kind]


def _collect(fn, n: int, plan: SeedPlan, jobs: int) -> np.ndarray:
    parts = map_blocks(fn, n, plan, jobs=jobs)
    out = np.concatenate(parts, axis=0)
    if out.shape[0] != n:
        raise RuntimeError(f"replica count mismatch: expected {n}, got {out.shape[0]}")
    return out


def _estimator(name: str, values: np.ndarray) -> Estimator:
    keep = ~np.isnan(values)
    return Estimator(name, values[keep], n_excluded=int(values.size - keep.sum()))


def _equiv_check(res: EquivalenceResult) -> CheckLine:
    return CheckLine(
        res.name,
        res.passed,
        f"a={res.value_a:.6g} b={res.value_b:.6g} |diff|={abs(res.diff):.3g} "
        f"allowed={res.k * res.combined_se:.3g}",
    )


def _equiv_row(res: EquivalenceResult, n_a: int, n_b: int) -> tuple:
    return (
        res.name, n_a, res.value_a, res.se_a, n_b, res.value_b, res.se_b,
        res.diff, res.k * res.combined_se, int(res.passed),
    )


_EQUIV_HEADER = ("name", "n_a", "mean_a", "se_a", "n_b", "mean_b", "se_b",
                 "diff", "allowed", "passed")


def _safe_rate(**kw) -> float:
    try:
        return analytics.mean_cells_rate(**kw)
    except ValueError:
        return math.nan


# ---------------------------------------------------------------------------
# analytic kinds
# ---------------------------------------------------------------------------


_CLASS_ORDER = {GROWS: 0, GROWS_SLOW: 1, MEAN_TO_ZERO: 2}


def _ordering_check(classes: Sequence[str]) -> CheckLine:
    ranks = [_CLASS_ORDER.get(c) for c in classes]
    ok = None not in ranks and all(a <= b for a, b in zip(ranks, ranks[1:]))
    return CheckLine(
        "class-ordering", ok,
        "classes advance GROWS -> GROWS_SLOW -> MEAN_TO_ZERO along the grid"
        if ok else f"unexpected class sequence: {classes}",
    )


def _flip_check(grid: np.ndarray, classes: Sequence[str], gstar: float, name: str) -> CheckLine:
    flips = [i for i in range(1, len(classes))
             if classes[i] == MEAN_TO_ZERO and classes[i - 1] != MEAN_TO_ZERO]
    if len(flips) != 1:
        return CheckLine(name, False, f"expected one flip into MEAN_TO_ZERO, found {len(flips)}")
    i = flips[0]
    tol = 1e-9 * max(1.0, abs(gstar))
    ok = grid[i - 1] - tol <= gstar <= grid[i] + tol
    return CheckLine(
        name, ok,
        f"flip bracket [{grid[i - 1]:.6g}, {grid[i]:.6g}] vs closed form {gstar:.6g}",
    )


def _prep_mean_cells_regime(cfg: ExperimentConfig) -> Runner:
    p = cfg.params
    r = get_number(p, "r", "params")
    q = get_number(p, "q", "params")
    sigma2 = get_number(p, "sigma2", "params", 0.0)
    if r <= 0 or q < 0 or sigma2 < 0:
        raise ConfigError("params: need r > 0, q >= 0, sigma2 >= 0")
    kernel_kind = get_str(get_table(p, "kernel", "params"), "kind", "params.kernel")
    kernel = build_kernel(p["kernel"], "params.kernel")
    if "g_grid" not in p:
        raise ConfigError("params.g_grid: missing required field")
    grid = build_grid(p["g_grid"], "params.g_grid")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ConfigError("params.g_grid: need strictly increasing positive trait growth rates")

    def run(ctx: RunContext):
        classes = []
        rows = []
        for g in grid:
            cls = analytics.classify_mean_cells(g=float(g), r=r, q=q, kernel=kernel, sigma2=sigma2)
            rate = _safe_rate(g=float(g), r=r, q=q, kernel=kernel, sigma2=sigma2)
            classes.append(cls)
            rows.append((float(g), rate, cls))
        path = ctx.out_dir / "regimes.csv"
        write_rows_csv(path, ("g", "rate", "regime"), rows)
        checks = [_ordering_check(classes)]
        if sigma2 == 0.0 and r > q and kernel_kind in ("uniform", "dirac-half"):
            gstar = (analytics.uniform_sharing_threshold(r, q) if kernel_kind == "uniform"
                     else analytics.equal_sharing_threshold(r, q))
            checks.append(_flip_check(grid, classes, gstar, "threshold-flip"))
        return {"regimes": path}, checks

    return run


def _prep_sharing_comparison(cfg: ExperimentConfig) -> Runner:
    p = cfg.params
    r = get_number(p, "r", "params")
    q = get_number(p, "q", "params")
    if r <= 0 or q < 0:
        raise ConfigError("params: need r > 0 and q >= 0")
    if "g_grid" not in p:
        raise ConfigError("params.g_grid: missing required field")
    grid = build_grid(p["g_grid"], "params.g_grid")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ConfigError("params.g_grid: need strictly increasing positive trait growth rates")
    expect_bands = get_int(p, "expect_bands", "params", None)

    uni, equal = UniformKernel(), DiracHalfKernel()

    def run(ctx: RunContext):
        rows = []
        pairs = []
        for g in grid:
            cu = analytics.classify_mean_cells(g=float(g), r=r, q=q, kernel=uni)
            ce = analytics.classify_mean_cells(g=float(g), r=r, q=q, kernel=equal)
            ru = _safe_rate(g=float(g), r=r, q=q, kernel=uni)
            re = _safe_rate(g=float(g), r=r, q=q, kernel=equal)
            rows.append((float(g), ru, cu, re, ce))
            pairs.append((cu, ce))
        path = ctx.out_dir / "sharing.csv"
        write_rows_csv(
            path, ("g", "rate_uniform", "regime_uniform", "rate_equal", "regime_equal"), rows
        )
        bands = [pairs[0]]
        for pair in pairs[1:]:
            if pair != bands[-1]:
                bands.append(pair)
        labels = ["/".join(b) for b in bands]
        checks = [CheckLine(
            "bands-contiguous", len(bands) == len(set(bands)),
            f"{len(bands)} bands: {', '.join(labels)}",
        )]
        if expect_bands is not None:
            checks.append(CheckLine(
                "band-count", len(bands) == expect_bands,
                f"found {len(bands)}, expected {expect_bands}",
            ))
        return {"sharing": path}, checks

    return run


def _prep_regime_map(cfg: ExperimentConfig) -> Runner:
    p = cfg.params
    q_over_r = get_number(p, "q_over_r", "params")
    if q_over_r < 0:
        raise ConfigError("params.q_over_r: must be nonnegative")
    for key in ("g_over_r_grid", "theta0_grid"):
        if key not in p:
            raise ConfigError(f"params.{key}: missing required field")
    g_grid = build_grid(p["g_over_r_grid"], "params.g_over_r_grid")
    theta_grid = build_grid(p["theta0_grid"], "params.theta0_grid")
    if np.any(g_grid <= 0) or np.any(np.diff(g_grid) <= 0):
        raise ConfigError("params.g_over_r_grid: need strictly increasing positive values")
    if np.any(theta_grid <= 0) or np.any(theta_grid >= 0.5):
        raise ConfigError("params.theta0_grid: atoms must lie strictly inside (0, 0.5)")

    def run(ctx: RunContext):
        rm = analytics.regime_map(g_over_r=g_grid, theta0=theta_grid, q_over_r=q_over_r)
        path = ctx.out_dir / "regime_map.csv"
        rm.to_csv(path)
        present = rm.present_classes()
        checks = [CheckLine(
            "three-classes",
            present == {GROWS, GROWS_SLOW, MEAN_TO_ZERO},
            f"present: {', '.join(sorted(present))}",
        )]
        # the GROWS band ends where the lineage trait drift turns positive:
        # g/r = -ln(theta0 (1 - theta0)) for two-point sharing
        step = float(np.max(np.diff(g_grid)))
        checked, worst, ok = 0, 0.0, True
        for j, th in enumerate(theta_grid):
            predicted = -math.log(th * (1.0 - th))
            if not g_grid[0] + step <= predicted <= g_grid[-1] - step:
                continue
            mid = rm.column_boundary(j, GROWS, GROWS_SLOW)
            if mid is None:
                ok = False
                break
            worst = max(worst, abs(mid - predicted))
            checked += 1
        ok = ok and checked > 0 and worst <= step
        checks.append(CheckLine(
            "grows-boundary", ok,
            f"{checked} columns checked, worst offset {worst:.4g} vs grid step {step:.4g}",
        ))
        j_lo = int(np.argmin(theta_grid))
        j_hi = int(np.argmax(theta_grid))
        saved = any(
            rm.classes[i, j_lo] == GROWS and rm.classes[i, j_hi] == MEAN_TO_ZERO
            for i in range(g_grid.size)
        )
        checks.append(CheckLine(
            "asymmetry-saves", saved,
            f"rows where theta0={theta_grid[j_lo]:g} GROWS while "
            f"theta0={theta_grid[j_hi]:g} is MEAN_TO_ZERO: {'found' if saved else 'none'}",
        ))
        return {"regime_map": path}, checks

    return run


# ---------------------------------------------------------------------------
# simulation kinds
# ---------------------------------------------------------------------------


def _population_series(spec, plan, n, times, *, k_threshold, jobs, m_cap=None, attrs):
    """Stack per-run snapshot statistics: shape (n, len(times), len(attrs))."""

    def fn(rng, count):
        res = population.simulate_population_runs(
            spec, rng, count, snapshot_times=times, k_threshold=k_threshold, m_cap=m_cap
        )
        if len(res.snapshots) != len(times):
            raise RuntimeError("snapshot times collapsed onto a shared grid point")
        return np.stack(
            [np.stack([getattr(s, a) for a in attrs], axis=-1) for s in res.snapshots],
            axis=1,
        )

    return _collect(fn, n, plan, jobs)


def _prep_infected_proportion(cfg: ExperimentConfig) -> Runner:
    spec = cfg.require_spec()
    p = cfg.params
    if "times" not in p:
        raise ConfigError("params.times: missing required field")
    times = build_grid(p["times"], "params.times")
    if np.any(np.diff(times) < spec.dt) or times[0] < 0 or times[-1] > spec.horizon:
        raise ConfigError(
            "params.times: need increasing times within [0, horizon], spaced at least dt apart"
        )
    eps = get_number(p, "eps", "params")
    if eps < 0:
        raise ConfigError("params.eps: threshold must be nonnegative")
    expect = get_str(p, "expect", "params", None)
    if expect not in (None, "decreasing", "bounded-below"):
        raise ConfigError("params.expect: must be 'decreasing' or 'bounded-below'")
    floor = get_number(p, "floor", "params", 0.05)
    k_sigma = get_number(p, "k_sigma", "params", 3.0)

    def run(ctx: RunContext):
        n = _resolve_replicas(ctx, cfg)
        plan = _stream_plan(ctx.seed, 0)
        data = _population_series(
            spec, plan, n, times, k_threshold=eps, jobs=ctx.jobs, attrs=("n_total", "n_gt_k")
        )
        ests = []
        rows = []
        for ti, t in enumerate(times):
            tot, gt = data[:, ti, 0], data[:, ti, 1]
            with np.errstate(invalid="ignore", divide="ignore"):
                frac = np.where(tot > 0, gt / np.where(tot > 0, tot, 1.0), np.nan)
            est = _estimator(f"t={t:g}", frac)
            ests.append(est)
            rows.append((float(t), est.n, est.n_excluded, est.mean, est.se))
        path = ctx.out_dir / "infected_proportion.csv"
        write_rows_csv(path, ("t", "n", "n_excluded", "mean", "se"), rows)
        checks = []
        if expect == "decreasing":
            res = trend_test([e.mean for e in ests], [e.se for e in ests],
                             direction="decreasing", k=k_sigma)
            checks.append(CheckLine(
                "proportion-decreasing", res.passed,
                f"net change {res.net_change:.6g} (se {res.net_se:.3g}), "
                f"{len(res.violations)} step violations",
            ))
        elif expect == "bounded-below":
            lows = [e.mean - k_sigma * e.se for e in ests]
            checks.append(CheckLine(
                "proportion-bounded-below", min(lows) > floor,
                f"min lower confidence bound {min(lows):.4g} vs floor {floor:g}",
            ))
        return {"infected_proportion": path}, checks

    return run


def _prep_many_to_one_check(cfg: ExperimentConfig) -> Runner:
    spec = cfg.require_spec()
    p = cfg.params
    k_thr = get_number(p, "k_threshold", "params", None)
    m_cap = get_number(p, "m_cap", "params", None)
    if k_thr is None and m_cap is None:
        raise ConfigError("params: need k_threshold and/or m_cap to pick the test functions")
    if m_cap is not None and m_cap <= 0:
        raise ConfigError("params.m_cap: must be positive")
    k_sigma = get_number(p, "k_sigma", "params", 3.0)
    spine_replicas = get_int(p, "spine_replicas", "params", None)

    policy = spec.policy
    horizon = spec.horizon
    if policy.variant == "constant":
        factor = math.exp((policy.r0 - policy.q0) * horizon)
        homogeneous = True
    elif policy.variant == "linear-division":
        try:
            alpha, beta, g = spine._inhomogeneous_params(spec)
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from exc
        factor = analytics.mean_population(
            horizon, spec.x0, alpha=alpha, beta=beta, g=g, q=policy.q0
        )
        homogeneous = False
    else:
        raise ConfigError(
            "model.policy: many-to-one-check needs constant or linear-division rates"
        )

    def run(ctx: RunContext):
        n_pop = _resolve_replicas(ctx, cfg)
        n_spine = spine_replicas or n_pop

        def pop_fn(rng, count):
            res = population.simulate_population_runs(
                spec, rng, count,
                k_threshold=k_thr if k_thr is not None else math.inf,
                m_cap=m_cap,
            )
            cols = [res.final.n_gt_k]
            if m_cap is not None:
                cols.append(res.final.sum_min_m)
            return np.stack(cols, axis=-1)

        pop = _collect(pop_fn, n_pop, _stream_plan(ctx.seed, 0), ctx.jobs)

        def spine_fn(rng, count):
            if homogeneous:
                batch = spine.simulate_spine_homogeneous_batch(spec, rng, count)
            else:
                batch = spine.simulate_spine_inhomogeneous_batch(spec, rng, count)
            cols = [(batch.values > k_thr).astype(float) if k_thr is not None else None]
            cols = [c for c in cols if c is not None]
            if m_cap is not None:
                cols.append(np.minimum(batch.values, m_cap))
            return factor * np.stack(cols, axis=-1)

        spn = _collect(spine_fn, n_spine, _stream_plan(ctx.seed, 1), ctx.jobs)

        results = []
        col = 0
        if k_thr is not None:
            results.append((f"indicator-K={k_thr:g}", pop[:, 0], spn[:, col]))
            col += 1
        if m_cap is not None:
            results.append((f"min-M={m_cap:g}", pop[:, 1 if k_thr is not None else 0], spn[:, col]))

        rows, checks = [], []
        for name, pop_vals, spine_vals in results:
            est_pop = _estimator("population", pop_vals)
            est_spine = _estimator("lineage", spine_vals)
            res = equivalence_test(est_pop, est_spine, k=k_sigma, name=name)
            rows.append(_equiv_row(res, est_pop.n, est_spine.n))
            checks.append(_equiv_check(res))
        path = ctx.out_dir / "many_to_one.csv"
        write_rows_csv(path, _EQUIV_HEADER, rows)
        return {"many_to_one": path}, checks

    return run


_MOMENT_CHECKS = ("mean", "second-moment", "death-factorization", "extinction")


def _ratio_delta(values: np.ndarray) -> Tuple[float, float]:
    """E[N^2]/E[N]^2 with a delta-method standard error."""
    n = values.size
    sq = values**2
    m1, m2 = float(values.mean()), float(sq.mean())
    ratio = m2 / m1**2
    g1, g2 = -2.0 * m2 / m1**3, 1.0 / m1**2
    cov = np.cov(values, sq, ddof=1)
    var = (g1 * g1 * cov[0, 0] + 2.0 * g1 * g2 * cov[0, 1] + g2 * g2 * cov[1, 1]) / n
    return ratio, math.sqrt(max(var, 0.0))


def _prep_moment_check(cfg: ExperimentConfig) -> Runner:
    spec = cfg.require_spec()
    p = cfg.params
    law, policy = spec.law, spec.policy
    if law.is_null:
        g = 0.0
    elif law.exact_flow:
        g = law.g.slope
    else:
        raise ConfigError(
            "model.law: moment-check needs the deterministic flow x e^{g t} "
            "(linear drift, no diffusion, no jumps)"
        )
    if policy.variant == "constant":
        alpha, beta = 0.0, policy.r0
    elif policy.variant == "linear-division":
        alpha, beta = policy.alpha, policy.beta
    else:
        raise ConfigError("model.policy: moment-check needs constant or linear-division rates")
    q = policy.q0

    wanted = p.get("checks", ["mean"])
    if (not isinstance(wanted, list) or not wanted
            or any(w not in _MOMENT_CHECKS for w in wanted)):
        raise ConfigError(
            f"params.checks: expected a non-empty subset of {', '.join(_MOMENT_CHECKS)}"
        )
    if "second-moment" in wanted and alpha != 0.0:
        raise ConfigError(
            "params.checks: the second-moment reference is exact only for a "
            "constant division rate (alpha = 0)"
        )
    if "extinction" in wanted and spec.x0 != 0.0:
        raise ConfigError("params.checks: the extinction reference needs x0 = 0")
    barrier = get_int(p, "barrier", "params", 256)
    if barrier < 2:
        raise ConfigError("params.barrier: must be at least 2")
    k_sigma = get_number(p, "k_sigma", "params", 3.0)

    horizon, x0, cap, kernel = spec.horizon, spec.x0, spec.population_cap, policy.kernel

    def runs_fn(q_use: float, use_barrier: Optional[int] = None):
        def fn(rng, count):
            out = np.empty(count)
            for i in range(count):
                res = population.run_population_exact(
                    rng, x0=x0, alpha=alpha, beta=beta, q=q_use, g=g,
                    horizon=horizon, kernel=kernel, barrier=use_barrier, cap=cap,
                )
                if res.capped:
                    out[i] = math.nan
                elif use_barrier is None:
                    out[i] = res.n_final
                else:
                    out[i] = float(res.extinct)
            return out
        return fn

    def run(ctx: RunContext):
        n = _resolve_replicas(ctx, cfg)
        plan = _stream_plan(ctx.seed, 0)
        base: Optional[np.ndarray] = None
        if set(wanted) & {"mean", "second-moment", "death-factorization"}:
            base = _collect(runs_fn(q), n, plan, ctx.jobs)

        rows, checks = [], []
        for name in wanted:
            if name == "mean":
                est = _estimator("population-mean", base)
                ref = analytics.mean_population(horizon, x0, alpha=alpha, beta=beta, g=g, q=q)
                res = equivalence_test(est, ref, k=k_sigma, name="mean")
                rows.append(_equiv_row(res, est.n, 0))
            elif name == "second-moment":
                clean = base[~np.isnan(base)]
                ratio, se = _ratio_delta(clean)
                m = analytics.mean_population(horizon, x0, alpha=alpha, beta=beta, g=g, q=q)
                m2 = analytics.second_moment_population(
                    horizon, x0, alpha=alpha, beta=beta, g=g, q=q
                )
                ref = m2 / m**2
                res = EquivalenceResult(
                    name="second-moment", value_a=ratio, value_b=ref,
                    se_a=se, se_b=0.0, k=k_sigma,
                    passed=abs(ratio - ref) <= k_sigma * se,
                )
                rows.append(_equiv_row(res, clean.size, 0))
            elif name == "death-factorization":
                death_free = _collect(runs_fn(0.0), n, plan, ctx.jobs)  # same seeds as base
                scale = math.exp(-q * horizon)
                est_q = _estimator("with-death", base)
                est_scaled = _estimator("death-free-scaled", scale * death_free)
                res = equivalence_test(est_q, est_scaled, k=k_sigma,
                                       name="death-factorization-mc")
                rows.append(_equiv_row(res, est_q.n, est_scaled.n))
                checks.append(_equiv_check(res))
                ref_q = analytics.mean_population(horizon, x0, alpha=alpha, beta=beta, g=g, q=q)
                ref_0 = analytics.mean_population(horizon, x0, alpha=alpha, beta=beta, g=g, q=0.0)
                res = equivalence_test(ref_q, scale * ref_0, k=k_sigma,
                                       name="death-factorization-analytic")
                rows.append(_equiv_row(res, 0, 0))
            else:
                vals = _collect(runs_fn(q, use_barrier=barrier), n, plan, ctx.jobs)
                est = _estimator("extinction-frequency", vals)
                ref = min(1.0, q / beta) if q > 0.0 else 0.0
                res = equivalence_test(est, ref, k=k_sigma, name="extinction")
                rows.append(_equiv_row(res, est.n, 0))
            checks.append(_equiv_check(res))
        path = ctx.out_dir / "moment_check.csv"
        write_rows_csv(path, _EQUIV_HEADER, rows)
        return {"moment_check": path}, checks

    return run


def _prep_ga_classify(cfg: ExperimentConfig) -> Runner:
    spec = cfg.require_spec()
    p = cfg.params
    a = get_number(p, "a", "params")
    if a == 1.0:
        raise ConfigError("params.a: a = 1 is the trivial exponent")
    if "x_grid" in p:
        grid = build_grid(p["x_grid"], "params.x_grid")
        if np.any(grid <= 0):
            raise ConfigError("params.x_grid: trait grid must be positive")
    else:
        grid = np.geomspace(1e-4, 1e4, 161)
    try:
        analytics.ga(a, np.array([1.0]), law=spec.law, policy=spec.policy)
        if a < 1.0 and spec.law.has_stable:
            raise ValueError("extinction certificate requires the heavy-jump component off")
    except ValueError as exc:
        raise ConfigError(f"params.a: {exc}") from exc

    def run(ctx: RunContext):
        values = analytics.ga(a, grid, law=spec.law, policy=spec.policy)
        cert = analytics.check_expl_ext(a=a, law=spec.law, policy=spec.policy, grid=grid)
        csv_path = ctx.out_dir / "ga_values.csv"
        write_rows_csv(csv_path, ("x", "ga"), zip(grid, values))
        cert_path = ctx.out_dir / "certificate.json"
        with open(cert_path, "w") as fh:
            json.dump(
                {
                    "mode": cert.mode,
                    "a": cert.a,
                    "ga_min": cert.ga_min,
                    "rate_max": cert.rate_max,
                    "satisfied": cert.satisfied,
                },
                fh, indent=2, sort_keys=True,
            )
            fh.write("\n")
        checks = [CheckLine("certificate", cert.satisfied, cert.summary())]
        return {"ga_values": csv_path, "certificate": cert_path}, checks

    return run


def _prep_assumption_probe(cfg: ExperimentConfig) -> Runner:
    spec = cfg.require_spec()

    def run(ctx: RunContext):
        report = validate_eu(spec)
        verdict = spine.jump_rate_scaling_probe(spec.law.p)
        path = ctx.out_dir / "probe.json"
        with open(path, "w") as fh:
            json.dump(
                {
                    "clauses": [
                        {"name": c.name, "passed": c.passed, "detail": c.detail}
                        for c in report.clauses
                    ],
                    "passed": report.passed,
                    "jump_rate_scaling": verdict,
                    "zero_unreachable": spec.law.zero_unreachable,
                    "exact_flow": spec.law.exact_flow,
                },
                fh, indent=2, sort_keys=True,
            )
            fh.write("\n")
        n_pass = sum(c.passed for c in report.clauses)
        checks = [
            CheckLine("well-posedness", report.passed,
                      f"{n_pass}/{len(report.clauses)} clauses hold"),
            CheckLine("jump-rate-scaling", verdict != "violated", verdict),
        ]
        return {"probe": path}, checks

    return run


_PREPARERS: Dict[str, Callable[[ExperimentConfig], Runner]] = {
    "mean-cells-regime": _prep_mean_cells_regime,
    "sharing-comparison": _prep_sharing_comparison,
    "regime-map": _prep_regime_map,
    "infected-proportion": _prep_infected_proportion,
    "many-to-one-check": _prep_many_to_one_check,
    "moment-check": _prep_moment_check,
    "ga-classify": _prep_ga_classify,
    "assumption-probe": _prep_assumption_probe,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parabranch",
        description="Branching-population experiments: simulate, classify, cross-check.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    prun = sub.add_parser("run", help="run an experiment config and write artifacts")
    prun.add_argument("--config", required=True, help="TOML config or JSON manifest")
    prun.add_argument("--seed", type=int, default=None, help="override the config seed")
    prun.add_argument("--replicas", type=int, default=None, help="override the replica count")
    prun.add_argument("--out", default=None, help="output directory (default: results)")
    prun.add_argument("--jobs", type=int, default=1,
                      help="worker threads for replica blocks; never changes values")
    prun.add_argument("--check", action="store_true",
                      help="exit 3 when any internal check fails")
    pval = sub.add_parser("validate", help="parse a config and report model spot checks")
    pval.add_argument("--config", required=True, help="TOML config or JSON manifest")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        runner = _PREPARERS[cfg.kind](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        if cfg.spec is not None:
            print(validate_eu(cfg.spec).summary())
        print(f"ok: {cfg.kind} config")
        return 0

    seed = args.seed if args.seed is not None else cfg.seed
    if seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return 2
    replicas = args.replicas if args.replicas is not None else cfg.replicas
    if replicas is not None and replicas < 2:
        print("error: --replicas must be at least 2", file=sys.stderr)
        return 2

    out_dir = Path(args.out if args.out is not None else (cfg.out or "results"))
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(seed=seed, replicas=replicas, out_dir=out_dir, jobs=max(1, args.jobs))
    try:
        outputs, checks = runner(ctx)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    resolved = dict(cfg.raw)
    resolved["seed"] = seed
    if replicas is not None:
        resolved["replicas"] = replicas
    manifest = write_manifest(
        out_dir, kind=cfg.kind, seed=seed, replicas=replicas,
        config=resolved, outputs=outputs,
    )
    for check in checks:
        print(check.line())
    for name in sorted(outputs):
        print(f"wrote {name}: {outputs[name]}")
    print(f"wrote manifest: {manifest}")
    if args.check and any(not c.passed for c in checks):
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
