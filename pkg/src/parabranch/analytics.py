"""Closed-form growth analysis for branching trait dynamics.

Two parametric families are treated exactly:

* the self-similar family (drift g x, diffusion variance sigma2 x^2,
  constant division rate r, constant death rate q): the log-trait of a
  typical individual is a Levy process whose Laplace-type exponent
  ``kappa_hat`` drives the growth of the expected number of usable cells
  and yields the regime classification;

* the linear-division family (division rate alpha x + beta, constant death
  rate q, drift g x): expected population size, expected total trait and
  the second moment of the population size are explicit.

Everything here is deterministic arithmetic; the Monte Carlo layer checks
these formulas from the other side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize, special

from .kernels import SharingKernel
from .model import CellPolicy, ParasiteLaw

__all__ = [
    "MEAN_TO_ZERO",
    "GROWS",
    "GROWS_SLOW",
    "UNDETERMINED",
    "kappa_hat",
    "kappa_hat_prime",
    "malthus_drift",
    "tau_hat",
    "classify_mean_cells",
    "mean_cells_rate",
    "uniform_sharing_threshold",
    "equal_sharing_threshold",
    "RegimeMap",
    "regime_map",
    "mean_population",
    "total_trait_mean",
    "second_moment_population",
    "asymptotic_ratio",
    "ga",
    "ExplExtCheck",
    "check_expl_ext",
]

MEAN_TO_ZERO = "MEAN_TO_ZERO"
GROWS = "GROWS"
GROWS_SLOW = "GROWS_SLOW"
UNDETERMINED = "UNDETERMINED"


# ---------------------------------------------------------------------------
# Laplace-type exponent of the typical-cell log-trait
# ---------------------------------------------------------------------------


def kappa_hat(lam, *, g: float, r: float, kernel: SharingKernel, sigma2: float = 0.0):
    """lam (g - sigma2) + lam^2 sigma2 + 2 r (E[theta^lam] - 1).

    Infinite below the kernel's divergence threshold. Accepts scalars or
    arrays in ``lam``.
    """
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
    out = np.empty(lam_arr.shape)
    for i, lv in enumerate(lam_arr.flat):
        out.flat[i] = lv * (g - sigma2) + lv * lv * sigma2 + 2.0 * r * (kernel.mellin(lv) - 1.0)
    return out if isinstance(lam, np.ndarray) else float(out[0])


def kappa_hat_prime(lam: float, *, g: float, r: float, kernel: SharingKernel, sigma2: float = 0.0) -> float:
    return (g - sigma2) + 2.0 * lam * sigma2 + 2.0 * r * kernel.mellin_dlam(lam)


def malthus_drift(*, g: float, r: float, kernel: SharingKernel, sigma2: float = 0.0) -> float:
    """Long-run drift of the typical-cell log-trait: g - sigma2 + 2 r E[ln theta]."""
    return g - sigma2 + 2.0 * r * kernel.log_moment


def tau_hat(*, g: float, r: float, kernel: SharingKernel, sigma2: float = 0.0) -> float:
    """Interior minimizer of kappa_hat on (lambda_minus, 0).

    Exists exactly when the drift is positive (the exponent then dips below
    zero to the left of the origin and climbs again toward the kernel
    divergence). Solved as the root of the derivative, which is strictly
    increasing by convexity.
    """
    drift = malthus_drift(g=g, r=r, kernel=kernel, sigma2=sigma2)
    if not drift > 0.0:
        raise ValueError("no interior minimizer: the log-trait drift is not positive")
    if not kernel.lambda_minus < 0.0:
        raise ValueError("no interior minimizer: the kernel admits no negative moments")

    dk = lambda lv: kappa_hat_prime(lv, g=g, r=r, kernel=kernel, sigma2=sigma2)
    lo_limit = kernel.lambda_minus
    # expand left until the derivative goes negative
    lo = -0.5 if math.isinf(lo_limit) else 0.5 * lo_limit
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(200):
            val = dk(lo)
            if val < 0.0:
                break
            if math.isnan(val):
                raise ValueError("derivative not evaluable near the kernel divergence")
            lo = 2.0 * lo if math.isinf(lo_limit) else 0.5 * (lo + lo_limit)
        else:
            raise ValueError("could not bracket the exponent minimum")
        root = optimize.brentq(dk, lo, 0.0, xtol=1e-14, rtol=8.9e-16)
    return float(root)


def mean_cells_rate(*, g: float, r: float, q: float, kernel: SharingKernel, sigma2: float = 0.0) -> float:
    """Exponential growth rate of the expected number of usable cells."""
    drift = malthus_drift(g=g, r=r, kernel=kernel, sigma2=sigma2)
    if drift > 0.0:
        tau = tau_hat(g=g, r=r, kernel=kernel, sigma2=sigma2)
        return r - q + kappa_hat(tau, g=g, r=r, kernel=kernel, sigma2=sigma2)
    return r - q


def classify_mean_cells(*, g: float, r: float, q: float, kernel: SharingKernel, sigma2: float = 0.0) -> str:
    """Long-run verdict on the expected number of usable cells.

    MEAN_TO_ZERO when the mean vanishes, GROWS when it diverges at the
    net division rate, GROWS_SLOW when heavy traits drag the exponent down
    without killing growth. Boundary cases (equal division and death rates
    with nonpositive drift, or a kernel with no negative moments) are
    reported UNDETERMINED rather than guessed.
    """
    if not kernel.lambda_minus < 0.0:
        return UNDETERMINED
    drift = malthus_drift(g=g, r=r, kernel=kernel, sigma2=sigma2)
    if drift > 0.0:
        try:
            rate = mean_cells_rate(g=g, r=r, q=q, kernel=kernel, sigma2=sigma2)
        except ValueError:
            return UNDETERMINED
        return GROWS_SLOW if rate > 0.0 else MEAN_TO_ZERO
    if q > r:
        return MEAN_TO_ZERO
    if r > q:
        return GROWS
    return UNDETERMINED


def uniform_sharing_threshold(r: float, q: float) -> float:
    """Critical trait growth rate under uniform sharing, constant rates.

    Above it the mean usable-cell count decays; requires r >= q (otherwise
    the mean decays for every g).
    """
    if r < q:
        raise ValueError("threshold exists only when divisions outpace deaths")
    return 3.0 * r - q + 2.0 * math.sqrt(2.0 * r * (r - q))


def _equal_sharing_phi(x: float, r: float, q: float) -> float:
    return x * (1.0 + math.log(2.0 * r) - math.log(x)) - (r + q)


def equal_sharing_threshold(r: float, q: float) -> float:
    """Critical trait growth rate under exact halving, constant rates.

    The threshold is x0 * ln 2 where x0 is the unique root beyond 2r of
    x (1 + ln(2r) - ln x) = r + q; the left side decreases there and starts
    at 2r - ... = r - q > 0, so a root exists iff r > q.
    """
    if not r > q:
        raise ValueError("threshold exists only when divisions outpace deaths")
    lo = 2.0 * r
    hi = 2.0 * lo
    while _equal_sharing_phi(hi, r, q) > 0.0:
        hi *= 2.0
        if hi > 1e12 * r:
            raise RuntimeError("root bracketing failed")
    x0 = optimize.brentq(_equal_sharing_phi, lo, hi, args=(r, q), xtol=1e-13, rtol=8.9e-16)
    return x0 * math.log(2.0)


# ---------------------------------------------------------------------------
# regime map over two-point kernels
# ---------------------------------------------------------------------------


@dataclass
class RegimeMap:
    """Classification over a (g/r, theta0) grid for two-point sharing.

    ``classes[i][j]`` is the verdict at g_over_r[i], theta0[j]. The
    classification depends on (g, r, q) only through g/r and q/r when
    sigma2 = 0, so the map is computed at r = 1.
    """

    g_over_r: np.ndarray
    theta0: np.ndarray
    q_over_r: float
    classes: np.ndarray  # dtype=object, shape (len(g_over_r), len(theta0))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("g_over_r,theta0,class\n")
            for i, gr in enumerate(self.g_over_r):
                for j, th in enumerate(self.theta0):
                    fh.write(f"{float(gr)!r},{float(th)!r},{self.classes[i, j]}\n")

    def present_classes(self) -> set:
        return set(self.classes.flat)

    def column_boundary(self, j: int, lower: str, upper: str) -> Optional[float]:
        """Midpoint g/r where column j flips from ``lower`` to ``upper``."""
        col = self.classes[:, j]
        for i in range(len(col) - 1):
            if col[i] == lower and col[i + 1] == upper:
                return 0.5 * float(self.g_over_r[i] + self.g_over_r[i + 1])
        return None


def regime_map(*, g_over_r: np.ndarray, theta0: np.ndarray, q_over_r: float) -> RegimeMap:
    from .kernels import TwoPointKernel

    g_over_r = np.asarray(g_over_r, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    classes = np.empty((g_over_r.size, theta0.size), dtype=object)
    for j, th in enumerate(theta0):
        kernel = TwoPointKernel(float(th))
        for i, gr in enumerate(g_over_r):
            classes[i, j] = classify_mean_cells(g=float(gr), r=1.0, q=q_over_r, kernel=kernel)
    return RegimeMap(g_over_r=g_over_r, theta0=theta0, q_over_r=q_over_r, classes=classes)


# ---------------------------------------------------------------------------
# linear-division family: exact moments of the population size
# ---------------------------------------------------------------------------


def _expm1_ratio(d: float, t):
    """(exp(d t) - 1) / d, continuous through d = 0; t may be an array."""
    t = np.asarray(t, dtype=float)
    dt = d * t
    small = np.abs(dt) < 1e-10
    safe = np.where(small, 1.0, dt)
    return np.where(small, t * (1.0 + 0.5 * dt), t * np.expm1(safe) / safe)


def mean_population(t, x0: float, *, alpha: float, beta: float, g: float, q: float):
    """Expected number of live cells at time t from one trait-x0 cell.

    Valid for division rate alpha x + beta (alpha >= 0, beta > 0), constant
    death rate q and multiplicative drift g (diffusion and compensated
    jumps do not move this mean). Computed as exp(-q t) times the
    death-free mean, so scaling in q is exact to the last bit.
    """
    t = np.asarray(t, dtype=float)
    bracket = np.exp(beta * t) * (1.0 + alpha * x0 * _expm1_ratio(g - beta, t))
    out = np.exp(-q * t) * bracket
    return out if out.shape else float(out)


def total_trait_mean(t, x0: float, *, g: float, q: float):
    """Expected total trait over live cells: x0 exp((g - q) t)."""
    t = np.asarray(t, dtype=float)
    out = x0 * np.exp((g - q) * t)
    return out if out.shape else float(out)


def _term(coeff: float, num, den: float):
    """coeff * num / den, with coeff == 0 short-circuiting a zero denominator."""
    if coeff == 0.0:
        return np.zeros_like(np.asarray(num, dtype=float))
    if den == 0.0:
        raise ValueError("degenerate parameter combination (vanishing denominator)")
    return coeff * np.asarray(num, dtype=float) / den


def second_moment_population(t, x0: float, *, alpha: float, beta: float, g: float, q: float):
    """E[N_t^2] for the linear-division family.

    Exact for alpha = 0 (classical birth-death). For alpha > 0 this is the
    moment-ODE solution that replaces the random total trait by its mean in
    the division intensity; treat it as the reference first-order formula
    it is, and cross-check by simulation where the distinction matters.
    """
    t = np.asarray(t, dtype=float)
    ax = alpha * x0
    f = _frac(ax, g - beta)
    e_b2 = np.exp(2.0 * (beta - q) * t)
    e_gq = np.exp((g - q) * t)
    out = e_b2.copy()
    out = out + _term(ax, e_gq - e_b2, g - 2.0 * beta + q)
    out = out + _term(2.0 * ax * f, np.exp(2.0 * (g - q) * t) - e_b2, 2.0 * (g - beta))
    out = out + _term(2.0 * ax * (1.0 - f), np.exp((g + beta - 2.0 * q) * t) - e_b2, g - beta)
    out = out + _term((beta + q) * f, e_gq - e_b2, g - 2.0 * beta + q)
    out = out - _term((1.0 - f) * (beta + q), np.exp((beta - q) * t) - e_b2, beta - q)
    return out if out.shape else float(out)


def _frac(ax: float, den: float) -> float:
    if ax == 0.0:
        return 0.0
    if den == 0.0:
        raise ValueError("degenerate parameter combination (g equal to beta)")
    return ax / den


def asymptotic_ratio(x0: float, *, alpha: float, beta: float, g: float, q: float) -> float:
    """Limit of E[N_t^2] / E[N_t]^2 as t grows.

    Two regimes: division dominated by the constant part (beta largest)
    keeps a spread of lineage sizes and the ratio exceeds 1; trait-driven
    division (g largest, alpha > 0) synchronizes the population and the
    ratio tends to 1.
    """
    ax = alpha * x0
    if beta > max(g, q):
        f = _frac(ax, beta - g)
        c1sq = (
            1.0
            + _frac(ax, 2.0 * beta - g - q)
            - f * f
            + (1.0 + f) * (2.0 * f + (beta + q) / (beta - q))
            + _frac(ax * (beta + q), (g - beta) * (2.0 * beta - g - q))
        )
        return c1sq / (1.0 + f) ** 2
    if g > max(beta, q) and alpha > 0.0:
        return 1.0
    raise ValueError("no stated limit for this parameter ordering")


# ---------------------------------------------------------------------------
# power-martingale exponent and explosion/extinction certificates
# ---------------------------------------------------------------------------


def ga(a: float, x, *, law: ParasiteLaw, policy: CellPolicy):
    """Exponent G_a making (trait)^(1-a) exp(int G_a) a local martingale
    along the typical-cell process.

    G_a(x) = (a-1) g(x)/x - a(a-1) sigma2(x)/x^2 - 2 r(x) (E[theta^(1-a)] - 1)
             - heavy-jump term - compensated-jump curvature term.

    For the self-similar family with constant rates this is constant and
    equals -kappa_hat(1 - a). Raises when E[theta^(1-a)] diverges (uniform
    sharing with a >= 2, for instance): no such martingale exists then.
    """
    if a == 1.0:
        raise ValueError("a = 1 is the trivial exponent")
    kernel = policy.kernel
    mell = kernel.mellin(1.0 - a)
    if not math.isfinite(mell):
        raise ValueError(
            "kernel moment E[theta^(1-a)] diverges for a = %g; use a kernel with "
            "atoms away from 0 or a smaller a" % a
        )
    stable_integral = 0.0
    if law.has_stable:
        # int_0^inf ((1+u)^(1-a) - 1) u^(-2-b) du by parts:
        # (c/s) B(s+1, c-s) with s = -1-b, c = a-1 (negative for a > 1)
        st = law.stable
        s, c = -1.0 - st.b, a - 1.0
        if c - s <= 0.0 or s + 1.0 <= 0.0:
            raise ValueError("heavy-jump exponent incompatible with this a")
        stable_integral = (c / s) * special.beta(s + 1.0, c - s)

    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty(xs.shape)
    for i, xi in enumerate(xs.flat):
        val = (a - 1.0) * float(law.g(xi)) / xi
        val -= a * (a - 1.0) * float(law.sigma2(xi)) / xi**2
        val -= 2.0 * float(policy.r(xi)) * (mell - 1.0)
        if law.has_pi:
            val -= float(law.p(xi)) * law.pi.expect(
                lambda z: (1.0 + z / xi) ** (1.0 - a) - 1.0 - (1.0 - a) * z / xi
            )
        if law.has_stable:
            val -= law.stable.c * xi ** (-law.stable.b) * stable_integral
        out.flat[i] = val
    return out if isinstance(x, np.ndarray) else float(out[0])


@dataclass
class ExplExtCheck:
    """Grid certificate that G_a stays above the net division rate.

    ``satisfied`` means min G_a > max (r - q) on the grid, leaving room for
    the sandwich r - q <= gamma < gamma' <= G_a that the martingale
    argument needs. mode "explosion" (a > 1) bounds the probability that
    the trait blows up; "extinction" (a < 1, heavy jumps off) bounds decay
    to 0.
    """

    mode: str
    a: float
    ga_min: float
    rate_max: float
    satisfied: bool
    grid: np.ndarray
    values: np.ndarray

    def summary(self) -> str:
        rel = ">" if self.satisfied else "<="
        return (
            f"{self.mode} certificate (a={self.a:g}): min G_a = {self.ga_min:.6g} "
            f"{rel} max(r - q) = {self.rate_max:.6g} on [{self.grid[0]:g}, {self.grid[-1]:g}]"
        )


def check_expl_ext(
    *, a: float, law: ParasiteLaw, policy: CellPolicy, grid: Optional[np.ndarray] = None
) -> ExplExtCheck:
    if a == 1.0:
        raise ValueError("a = 1 carries no information")
    if a > 1.0:
        mode = "explosion"
    else:
        mode = "extinction"
        if law.has_stable:
            raise ValueError("extinction certificate requires the heavy-jump component off")
    if grid is None:
        grid = np.geomspace(1e-4, 1e4, 161)
    grid = np.asarray(grid, dtype=float)
    values = ga(a, grid, law=law, policy=policy)
    rates = np.asarray(policy.r(grid), dtype=float) - np.asarray(policy.q(grid), dtype=float)
    ga_min = float(np.min(values))
    rate_max = float(np.max(rates))
    return ExplExtCheck(
        mode=mode,
        a=a,
        ga_min=ga_min,
        rate_max=rate_max,
        satisfied=bool(ga_min > rate_max),
        grid=grid,
        values=np.asarray(values),
    )
