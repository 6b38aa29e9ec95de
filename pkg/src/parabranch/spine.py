"""Single-lineage (auxiliary) processes.

Averages over a branching population reduce to expectations along one
distinguished lineage whose division rate is doubled: at each division the
lineage keeps a kernel-distributed share of the trait. Two variants:

* homogeneous: the trait follows the cell law between divisions, divisions
  fire at rate 2 r(y). For constant r and q the population mean satisfies
  E[sum_u f(X_u(T))] = e^{(r-q)T} E[f(Y_T)].
* time-inhomogeneous (division rate alpha x + beta, drift g x, g != beta):
  the rates acquire a remaining-time tilt through
  c(y, s) = A_s / (1 + y A_s), A_s = alpha (e^{(g-beta)s} - 1)/(g-beta):
  drift becomes f1 = g y + (2 sigma2(y) + p(y) m2) c, divisions fire with
  theta-dependent intensity f2 = 2(alpha y + beta)(1 + theta y A_s)/(1 + y A_s)
  and positive jumps with f3 = p(y)(1 + c z), the jumps compensated exactly
  as in the base law. A_s is evaluated with expm1 so s near 0 is stable.

Division theta-dependence and the size tilt of f3 are both handled by
thinning (the acceptance ratios are <= 1 by construction); kernels are
never re-weighted into explicit tilted measures except through
``thinned_kernel_sampler`` below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import ABSORBED, ALIVE, EXPLODED, TraitPath, _time_grid, advance_traits
from .model import ModelSpec

__all__ = [
    "bias_factor",
    "drift_rate",
    "division_rate",
    "division_acceptance",
    "jump_rate",
    "SpinePath",
    "SpineBatch",
    "simulate_spine_homogeneous",
    "simulate_spine_homogeneous_batch",
    "simulate_spine_inhomogeneous",
    "simulate_spine_inhomogeneous_batch",
    "thinned_kernel_sampler",
    "jump_rate_scaling_probe",
    "fit_lyapunov_bound",
]

_MAX_EVENT_PROBABILITY_STEP = 0.1
_ALIVE, _ABSORBED, _EXPLODED = 0, 1, 2


# ---------------------------------------------------------------------------
# rate functions of the inhomogeneous lineage
# ---------------------------------------------------------------------------


def _growth_gap_factor(g: float, beta: float, s: float) -> float:
    """(e^{(g-beta)s} - 1)/(g-beta), continuous through g = beta."""
    d = g - beta
    if abs(d * s) < 1e-12:
        return s
    return math.expm1(d * s) / d


def bias_factor(y, s: float, *, alpha: float, beta: float, g: float):
    """c(y, s) = A_s/(1 + y A_s): the remaining-time tilt shared by all rates."""
    a = alpha * _growth_gap_factor(g, beta, s)
    return a / (1.0 + y * a)


def drift_rate(y, s: float, *, alpha: float, beta: float, g: float, law):
    """f1: trait drift of the inhomogeneous lineage (before jump compensation)."""
    m2 = law.pi.m2 if law.has_pi else 0.0
    return g * y + (2.0 * law.sigma2(y) + law.p(y) * m2) * bias_factor(y, s, alpha=alpha, beta=beta, g=g)


def division_acceptance(y, s: float, theta, *, alpha: float, beta: float, g: float):
    """f2 / (2(alpha y + beta)): in (0, 1], tends to theta as s grows (g > beta)."""
    a = alpha * _growth_gap_factor(g, beta, s)
    return (1.0 + theta * y * a) / (1.0 + y * a)


def division_rate(y, s: float, theta, *, alpha: float, beta: float, g: float):
    """f2: theta-dependent division intensity of the inhomogeneous lineage."""
    return 2.0 * (alpha * y + beta) * division_acceptance(y, s, theta, alpha=alpha, beta=beta, g=g)


def jump_rate(y, s: float, z, *, alpha: float, beta: float, g: float, law):
    """f3: size-dependent positive-jump intensity (per unit of jump measure)."""
    return law.p(y) * (1.0 + z * bias_factor(y, s, alpha=alpha, beta=beta, g=g))


# ---------------------------------------------------------------------------
# homogeneous lineage
# ---------------------------------------------------------------------------


@dataclass
class SpinePath:
    path: TraitPath
    division_times: np.ndarray
    division_shares: np.ndarray
    integral: float = math.nan  # of the optional integrand along the path


@dataclass
class SpineBatch:
    """Terminal state of n independent lineages."""

    values: np.ndarray
    status: np.ndarray  # int8: 0 alive, 1 absorbed, 2 exploded
    n_divisions: np.ndarray
    integrals: Optional[np.ndarray] = None
    snapshots: List[Tuple[float, np.ndarray]] = None  # (time, values across paths)

    def __post_init__(self):
        if self.snapshots is None:
            self.snapshots = []

    @property
    def alive(self) -> np.ndarray:
        return self.status == _ALIVE


def simulate_spine_homogeneous(spec: ModelSpec, rng: np.random.Generator) -> SpinePath:
    """One lineage: trait dynamics of the law, divisions at rate 2 r(y).

    With r identically zero no division draws are consumed, so the output
    coincides with ``simulate_trait`` for the same stream. Division events
    within a grid step are thinned with the rate at the advanced trait; the
    grid step is split so 2 r dt stays at most 0.1.
    """
    law, policy = spec.law, spec.policy
    grid = _time_grid(spec.horizon, spec.dt)
    values = np.empty(grid.size)
    values[0] = spec.x0
    status, terminal_time = ALIVE, math.nan
    div_times: List[float] = []
    div_shares: List[float] = []
    x = spec.x0
    if x == 0.0:
        status, terminal_time = ABSORBED, 0.0
    elif x > spec.x_max:
        status, terminal_time, x = EXPLODED, 0.0, spec.x_max
        values[0] = x

    for k in range(1, grid.size):
        if status == ALIVE:
            dt = float(grid[k] - grid[k - 1])
            rate = 2.0 * float(policy.r(x))
            n_sub = max(1, int(math.ceil(rate * dt / _MAX_EVENT_PROBABILITY_STEP)))
            h = dt / n_sub
            for _ in range(n_sub):
                x = float(advance_traits(law, np.array([x]), h, rng)[0])
                if x <= 0.0:
                    x, status, terminal_time = 0.0, ABSORBED, float(grid[k])
                    break
                if x > spec.x_max:
                    x, status, terminal_time = spec.x_max, EXPLODED, float(grid[k])
                    break
                rate = 2.0 * float(policy.r(x))
                if rate > 0.0 and rng.random() < -math.expm1(-rate * h):
                    theta = float(policy.kernel.sample(rng, 1)[0])
                    x *= theta
                    div_times.append(float(grid[k]))
                    div_shares.append(theta)
        values[k] = x

    path = TraitPath(
        times=grid,
        values=values,
        status=status,
        terminal_time=terminal_time,
        n_jumps_pi=0,
        n_jumps_stable=0,
        zero_is_artifact=(status == ABSORBED and law.zero_unreachable),
        stable_bias_rate=law.stable.bias_rate() if law.has_stable else 0.0,
    )
    return SpinePath(path=path, division_times=np.array(div_times), division_shares=np.array(div_shares))


def simulate_spine_homogeneous_batch(
    spec: ModelSpec,
    rng: np.random.Generator,
    n: int,
    *,
    integrand: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> SpineBatch:
    """n independent homogeneous lineages, terminal values only.

    ``integrand`` accumulates int_0^T fn(Y_s) ds along each path (rectangle
    rule on the advanced trait, frozen once a path is absorbed/exploded).
    """
    law, policy = spec.law, spec.policy
    grid = _time_grid(spec.horizon, spec.dt)
    values = np.full(n, float(spec.x0))
    status = np.zeros(n, dtype=np.int8)
    n_div = np.zeros(n, dtype=np.int64)
    integrals = np.zeros(n) if integrand is not None else None
    status[values == 0.0] = _ABSORBED
    over = values > spec.x_max
    status[over] = _EXPLODED
    values[over] = spec.x_max
    live = np.flatnonzero(status == _ALIVE)

    for k in range(1, grid.size):
        if live.size == 0:
            break
        dt = float(grid[k] - grid[k - 1])
        x = values[live]
        rate = 2.0 * np.maximum(np.asarray(policy.r(x), dtype=float), 0.0)
        top = float(rate.max()) if rate.size else 0.0
        n_sub = max(1, int(math.ceil(top * dt / _MAX_EVENT_PROBABILITY_STEP)))
        h = dt / n_sub
        for _ in range(n_sub):
            x = advance_traits(law, x, h, rng)
            dead = x <= 0.0
            boom = x > spec.x_max
            if integrals is not None:
                ok = ~(dead | boom)
                integrals[live[ok]] += integrand(x[ok]) * h
            if np.any(dead) or np.any(boom):
                status[live[dead]] = _ABSORBED
                values[live[dead]] = 0.0
                status[live[boom]] = _EXPLODED
                values[live[boom]] = spec.x_max
                keep = ~(dead | boom)
                live, x = live[keep], x[keep]
                if live.size == 0:
                    break
            rate = 2.0 * np.maximum(np.asarray(policy.r(x), dtype=float), 0.0)
            ev = rng.random(x.size) < -np.expm1(-rate * h)
            n_ev = int(ev.sum())
            if n_ev:
                shares = policy.kernel.sample(rng, n_ev)
                x[ev] *= shares
                n_div[live[ev]] += 1
        values[live] = x

    return SpineBatch(values=values, status=status, n_divisions=n_div, integrals=integrals)


# ---------------------------------------------------------------------------
# inhomogeneous lineage (division rate alpha x + beta, drift g x)
# ---------------------------------------------------------------------------


def _inhomogeneous_params(spec: ModelSpec) -> Tuple[float, float, float]:
    policy, law = spec.policy, spec.law
    if policy.variant != "linear-division" or not policy.alpha or not policy.beta:
        raise ValueError("inhomogeneous lineage needs division rate alpha x + beta with alpha, beta > 0")
    g = getattr(law.g, "slope", None)
    if g is None:
        if not law.g(1.0) == 0.0 == law.g(2.0):
            raise ValueError("inhomogeneous lineage needs drift g(x) = g x")
        g = 0.0
    if g == policy.beta:
        raise ValueError("the case g = beta is not covered")
    if law.has_stable:
        raise ValueError("heavy-tailed jumps are not covered by the inhomogeneous lineage")
    if law.has_pi and not math.isfinite(law.pi.size_bound):
        raise ValueError("jump sizes must be bounded (use a capped jump measure)")
    return float(policy.alpha), float(policy.beta), float(g)


def simulate_spine_inhomogeneous(spec: ModelSpec, rng: np.random.Generator) -> SpinePath:
    """One inhomogeneous lineage over [0, horizon], rates tilted by remaining time."""
    alpha, beta, g = _inhomogeneous_params(spec)
    law = spec.law
    kernel = spec.policy.kernel
    m1 = law.pi.m1 if law.has_pi else 0.0
    mass = law.pi.mass if law.has_pi else 0.0
    zbar = law.pi.size_bound if law.has_pi else 0.0
    grid = _time_grid(spec.horizon, spec.dt)
    values = np.empty(grid.size)
    values[0] = spec.x0
    status, terminal_time = ALIVE, math.nan
    div_times: List[float] = []
    div_shares: List[float] = []
    x = float(spec.x0)
    if x == 0.0:
        status, terminal_time = ABSORBED, 0.0

    for k in range(1, grid.size):
        if status == ALIVE:
            dt = float(grid[k] - grid[k - 1])
            n_sub = max(1, int(math.ceil(2.0 * (alpha * x + beta) * dt / _MAX_EVENT_PROBABILITY_STEP)))
            h = dt / n_sub
            for j in range(n_sub):
                s = spec.horizon - (float(grid[k - 1]) + j * h)  # remaining time
                a_s = alpha * _growth_gap_factor(g, beta, s)
                c = a_s / (1.0 + x * a_s)
                sig = float(law.sigma2(x))
                drift = g * x + 2.0 * sig * c - float(law.p(x)) * m1
                x_new = x + drift * h
                if sig > 0.0:
                    x_new += math.sqrt(2.0 * sig * h) * rng.standard_normal()
                if mass > 0.0 and law.p(x) > 0.0:
                    bound = 1.0 + zbar * (a_s if x * a_s < 1.0 else 1.0 / x)
                    n_prop = rng.poisson(float(law.p(x)) * mass * bound * h)
                    for _ in range(int(n_prop)):
                        z = float(law.pi.sample(rng, 1)[0])
                        if rng.random() * bound < 1.0 + c * z:
                            x_new += z
                if x_new <= 0.0:
                    x, status, terminal_time = 0.0, ABSORBED, float(grid[k])
                    break
                if x_new > spec.x_max:
                    x, status, terminal_time = spec.x_max, EXPLODED, float(grid[k])
                    break
                x = x_new
                s_next = max(s - h, 0.0)
                rate = 2.0 * (alpha * x + beta)
                if rng.random() < -math.expm1(-rate * h):
                    theta = float(kernel.sample(rng, 1)[0])
                    if rng.random() < division_acceptance(x, s_next, theta, alpha=alpha, beta=beta, g=g):
                        x *= theta
                        div_times.append(float(grid[k]))
                        div_shares.append(theta)
        values[k] = x

    path = TraitPath(
        times=grid,
        values=values,
        status=status,
        terminal_time=terminal_time,
        n_jumps_pi=0,
        n_jumps_stable=0,
        zero_is_artifact=False,
        stable_bias_rate=0.0,
    )
    return SpinePath(path=path, division_times=np.array(div_times), division_shares=np.array(div_shares))


def simulate_spine_inhomogeneous_batch(
    spec: ModelSpec,
    rng: np.random.Generator,
    n: int,
    *,
    snapshot_times: Sequence[float] = (),
) -> SpineBatch:
    """n independent inhomogeneous lineages; terminal values plus optional snapshots."""
    alpha, beta, g = _inhomogeneous_params(spec)
    law = spec.law
    kernel = spec.policy.kernel
    m1 = law.pi.m1 if law.has_pi else 0.0
    mass = law.pi.mass if law.has_pi else 0.0
    zbar = law.pi.size_bound if law.has_pi else 0.0
    has_diffusion = law.has_diffusion
    grid = _time_grid(spec.horizon, spec.dt)
    snap_lookup = {}
    for t_snap in snapshot_times:
        snap_lookup[int(np.argmin(np.abs(grid - t_snap)))] = float(t_snap)
    values = np.full(n, float(spec.x0))
    status = np.zeros(n, dtype=np.int8)
    n_div = np.zeros(n, dtype=np.int64)
    snaps: List[Tuple[float, np.ndarray]] = []
    status[values == 0.0] = _ABSORBED
    live = np.flatnonzero(status == _ALIVE)
    if 0 in snap_lookup:
        snaps.append((snap_lookup[0], values.copy()))

    for k in range(1, grid.size):
        if live.size == 0:
            if k in snap_lookup:
                snaps.append((snap_lookup[k], values.copy()))
            continue
        dt = float(grid[k] - grid[k - 1])
        x = values[live]
        top = 2.0 * float(np.max(alpha * x + beta))
        n_sub = max(1, int(math.ceil(top * dt / _MAX_EVENT_PROBABILITY_STEP)))
        h = dt / n_sub
        for j in range(n_sub):
            s = spec.horizon - (float(grid[k - 1]) + j * h)
            a_s = alpha * _growth_gap_factor(g, beta, s)
            c = a_s / (1.0 + x * a_s)
            sig = np.asarray(law.sigma2(x), dtype=float)
            p_x = np.asarray(law.p(x), dtype=float)
            x_new = x + (g * x + 2.0 * sig * c - p_x * m1) * h
            if has_diffusion:
                x_new = x_new + np.sqrt(2.0 * np.maximum(sig, 0.0) * h) * rng.standard_normal(x.size)
            if mass > 0.0:
                bound = 1.0 + zbar * np.where(x * a_s < 1.0, a_s, 1.0 / np.maximum(x, 1e-300))
                counts = rng.poisson(p_x * mass * bound * h)
                total = int(counts.sum())
                if total:
                    owners = np.repeat(np.arange(x.size), counts)
                    sizes = law.pi.sample(rng, total)
                    acc = rng.random(total) * bound[owners] < 1.0 + c[owners] * sizes
                    x_new = x_new + np.bincount(owners[acc], weights=sizes[acc], minlength=x.size)
            dead = x_new <= 0.0
            boom = x_new > spec.x_max
            if np.any(dead) or np.any(boom):
                status[live[dead]] = _ABSORBED
                values[live[dead]] = 0.0
                status[live[boom]] = _EXPLODED
                values[live[boom]] = spec.x_max
                keep = ~(dead | boom)
                live, x_new, c = live[keep], x_new[keep], c[keep]
                if live.size == 0:
                    break
            x = x_new
            s_next = max(s - h, 0.0)
            a_next = alpha * _growth_gap_factor(g, beta, s_next)
            rate = 2.0 * (alpha * x + beta)
            ev = rng.random(x.size) < -np.expm1(-rate * h)
            n_ev = int(ev.sum())
            if n_ev:
                thetas = kernel.sample(rng, n_ev)
                y_ev = x[ev]
                ratio = (1.0 + thetas * y_ev * a_next) / (1.0 + y_ev * a_next)
                acc = rng.random(n_ev) < ratio
                idx = np.flatnonzero(ev)[acc]
                x[idx] *= thetas[acc]
                n_div[live[idx]] += 1
        values[live] = x
        if k in snap_lookup:
            snaps.append((snap_lookup[k], values.copy()))

    return SpineBatch(values=values, status=status, n_divisions=n_div, integrals=None, snapshots=snaps)


# ---------------------------------------------------------------------------
# utilities
# ---------------------------------------------------------------------------


def thinned_kernel_sampler(
    kernel,
    weight: Callable[[np.ndarray], np.ndarray],
    w_max: float,
    rng: np.random.Generator,
    n: int = 1,
) -> np.ndarray:
    """Sample from the weight-tilted kernel by rejection against the kernel.

    Requires 0 <= weight(theta) <= w_max; a proposal with weight above
    w_max raises, since the tilted law would be sampled incorrectly.
    """
    if w_max <= 0.0:
        raise ValueError("w_max must be positive")
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(2 * (n - filled), 64)
        theta = kernel.sample(rng, m)
        w = np.asarray(weight(theta), dtype=float)
        if np.any(w > w_max * (1.0 + 1e-12)) or np.any(w < 0.0):
            raise ValueError("weight leaves [0, w_max]")
        acc = rng.random(m) * w_max < w
        take = min(int(acc.sum()), n - filled)
        out[filled : filled + take] = theta[acc][:take]
        filled += take
    return out


def jump_rate_scaling_probe(p, grid: Optional[np.ndarray] = None) -> str:
    """Check numerically that p(x)/x is non-decreasing (jump rate scaling).

    The inhomogeneous lineage is well posed when the per-parasite jump rate
    does not fall with the load; the simulators run regardless and this
    probe reports "satisfied", "violated" or "inconclusive".
    """
    if grid is None:
        grid = np.geomspace(1e-3, 1e3, 121)
    vals = np.asarray(p(grid), dtype=float) / grid
    if not np.all(np.isfinite(vals)):
        return "inconclusive"
    diffs = np.diff(vals)
    tol = 1e-9 * max(float(np.max(np.abs(vals))), 1.0)
    if np.all(diffs >= -tol):
        return "satisfied"
    return "violated"


def fit_lyapunov_bound(s_grid: np.ndarray, means: np.ndarray, x0: float) -> Tuple[float, float]:
    """Fit (a, d), a, d > 0, with means <= e^{-a s} x0 + d/a (1 - e^{-a s}).

    Scans decay rates and takes the smallest d making the bound hold on the
    given grid; meant to be fitted on one part of an s-grid and checked on
    the rest.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    means = np.asarray(means, dtype=float)
    if s_grid.size != means.size or s_grid.size < 2:
        raise ValueError("need matching grids with at least two points")
    if np.any(s_grid <= 0.0):
        raise ValueError("s grid must be positive")
    best: Optional[Tuple[float, float]] = None
    for a in np.geomspace(1e-2, 10.0, 80):
        decay = np.exp(-a * s_grid)
        d = a * float(np.max((means - decay * x0) / (1.0 - decay)))
        if d <= 0.0:
            d = 1e-12
        if best is None or d / a < best[1] / best[0]:
            best = (float(a), float(d))
    assert best is not None
    return best
