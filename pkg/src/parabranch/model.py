"""Model types: trait dynamics coefficients, division/death policies, full specs.

A cell's parasite quantity ("trait") moves by a drift g, a diffusion with
variance 2*sigma2, compensated positive jumps of finite activity (rate
multiplier p, jump measure pi) and optional uncompensated heavy-tailed
positive jumps fired at a per-unit-trait rate (the "stable" component).
Cells divide at rate r and die at rate q; at division the trait is split by
a sharing kernel.

Coefficient functions are plain callables accepting floats or numpy arrays.
The tagged families below cover every parametric case the analytics layer
treats in closed form; arbitrary callables are accepted wherever a family is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special

from .kernels import SharingKernel

__all__ = [
    "ZeroFn",
    "ConstantFn",
    "LinearFn",
    "PowerFn",
    "PowerSumFn",
    "AffineFn",
    "JumpMeasure",
    "FixedJumps",
    "UniformJumps",
    "ExponentialJumps",
    "StableJumps",
    "ParasiteLaw",
    "CellPolicy",
    "constant_rates",
    "linear_division",
    "general_policy",
    "ModelSpec",
    "validate_eu",
    "EUReport",
]


# ---------------------------------------------------------------------------
# coefficient function families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZeroFn:
    def __call__(self, x):
        return np.zeros_like(x) if isinstance(x, np.ndarray) else 0.0


@dataclass(frozen=True)
class ConstantFn:
    value: float

    def __call__(self, x):
        if isinstance(x, np.ndarray):
            return np.full_like(x, self.value, dtype=float)
        return self.value


@dataclass(frozen=True)
class LinearFn:
    slope: float

    def __call__(self, x):
        return self.slope * x


@dataclass(frozen=True)
class PowerFn:
    coeff: float
    exponent: float

    def __call__(self, x):
        return self.coeff * x**self.exponent


@dataclass(frozen=True)
class PowerSumFn:
    """sum of coeff * x**exponent terms."""

    terms: tuple  # of (coeff, exponent) pairs

    def __init__(self, terms: Sequence):
        object.__setattr__(self, "terms", tuple((float(c), float(e)) for c, e in terms))

    def __call__(self, x):
        total = 0.0 * x
        for c, e in self.terms:
            total = total + c * x**e
        return total


@dataclass(frozen=True)
class AffineFn:
    slope: float
    intercept: float

    def __call__(self, x):
        return self.slope * x + self.intercept


def _is_zero_fn(f) -> bool:
    return isinstance(f, ZeroFn) or (isinstance(f, ConstantFn) and f.value == 0.0)


# ---------------------------------------------------------------------------
# finite-activity jump measures (pi)
# ---------------------------------------------------------------------------


class JumpMeasure:
    """Finite-activity measure of positive jump sizes.

    ``mass`` is the total measure; per unit time a trait-x cell fires
    Poisson(p(x) * mass * dt) jumps with sizes drawn from the normalized law.
    ``m1`` and ``m2`` are the absolute moments integral z pi(dz) and
    integral z^2 pi(dz) (mass included). ``size_bound`` is the supremum of
    the size support (inf when unbounded); the inhomogeneous spine requires
    it finite for its thinning bound.
    """

    mass: float
    m1: float
    m2: float
    size_bound: float

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def expect(self, fn: Callable) -> float:
        """integral fn(z) pi(dz) including the mass factor."""
        raise NotImplementedError


@dataclass(frozen=True)
class FixedJumps(JumpMeasure):
    """All jumps have one deterministic size."""

    rate: float
    size: float

    def __post_init__(self):
        if self.rate <= 0 or self.size <= 0:
            raise ValueError("rate and size must be positive")
        object.__setattr__(self, "mass", self.rate)
        object.__setattr__(self, "m1", self.rate * self.size)
        object.__setattr__(self, "m2", self.rate * self.size**2)
        object.__setattr__(self, "size_bound", self.size)

    def sample(self, rng, n):
        return np.full(n, self.size)

    def expect(self, fn):
        return self.rate * float(fn(self.size))


@dataclass(frozen=True)
class UniformJumps(JumpMeasure):
    """Sizes uniform on [lo, hi]."""

    rate: float
    lo: float
    hi: float

    def __post_init__(self):
        if self.rate <= 0 or not 0 < self.lo < self.hi:
            raise ValueError("need rate > 0 and 0 < lo < hi")
        mean = 0.5 * (self.lo + self.hi)
        second = (self.hi**3 - self.lo**3) / (3.0 * (self.hi - self.lo))
        object.__setattr__(self, "mass", self.rate)
        object.__setattr__(self, "m1", self.rate * mean)
        object.__setattr__(self, "m2", self.rate * second)
        object.__setattr__(self, "size_bound", self.hi)

    def sample(self, rng, n):
        return self.lo + (self.hi - self.lo) * rng.random(n)

    def expect(self, fn):
        nodes, weights = np.polynomial.legendre.leggauss(64)
        z = 0.5 * (self.hi - self.lo) * nodes + 0.5 * (self.hi + self.lo)
        return self.rate * 0.5 * float(np.sum(weights * fn(z)))


@dataclass(frozen=True)
class ExponentialJumps(JumpMeasure):
    """Sizes exponential(scale) truncated at cap (cap=None leaves the tail whole).

    A finite cap keeps ``size_bound`` finite, which the inhomogeneous spine
    needs for its acceptance bound; choose cap >> scale to make the
    truncation negligible.
    """

    rate: float
    scale: float
    cap: Optional[float] = None

    def __post_init__(self):
        if self.rate <= 0 or self.scale <= 0:
            raise ValueError("rate and scale must be positive")
        if self.cap is not None and self.cap <= 0:
            raise ValueError("cap must be positive or None")
        s, c = self.scale, self.cap
        if c is None:
            mean, second, bound = s, 2 * s**2, math.inf
        else:
            tail = math.exp(-c / s)
            mean = (s * (1 - tail) - c * tail) / (1 - tail)
            second = (2 * s**2 - tail * (c**2 + 2 * s * c + 2 * s**2)) / (1 - tail)
            bound = c
        object.__setattr__(self, "mass", self.rate)
        object.__setattr__(self, "m1", self.rate * mean)
        object.__setattr__(self, "m2", self.rate * second)
        object.__setattr__(self, "size_bound", bound)

    def sample(self, rng, n):
        if self.cap is None:
            return rng.exponential(self.scale, n)
        u = rng.random(n)
        return -self.scale * np.log1p(-u * (1.0 - math.exp(-self.cap / self.scale)))

    def expect(self, fn):
        upper = self.cap if self.cap is not None else np.inf
        norm = 1.0 if self.cap is None else -math.expm1(-self.cap / self.scale)
        val, _ = integrate.quad(
            lambda z: fn(z) * math.exp(-z / self.scale) / self.scale,
            0.0,
            upper,
            limit=200,
        )
        return self.rate * val / norm


# ---------------------------------------------------------------------------
# heavy-tailed uncompensated jumps (the "stable" component)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StableJumps:
    """Positive jumps with density C * z**(-2 - b) dz fired at rate x per unit trait.

    ``b`` in (-1, 0) makes the measure infinitely active at 0 with a finite
    first moment there, and gives sizes an infinite mean overall: these jumps
    are not compensated and push the trait toward explosion. ``coeff`` is the
    c_b knob (<= 0; 0 disables). The normalization C defaults to
    |c_b| * |b| * (b + 1) / Gamma(1 - b) and can be overridden since only its
    positivity matters qualitatively.

    Simulation truncates sizes below ``eps``; the discarded drift is
    bias_rate(eps) = C * eps**(-b) / (-b) per unit time per unit trait,
    reported with every run. The default eps makes that rate < 1e-4.
    """

    coeff: float
    b: float
    normalization: Optional[float] = None
    eps: Optional[float] = None

    _DEFAULT_BIAS_RATE = 1e-4

    def __post_init__(self):
        if self.coeff > 0:
            raise ValueError("stable coefficient must be <= 0 (0 disables)")
        if not -1.0 < self.b < 0.0:
            raise ValueError("stable index must lie in (-1, 0)")
        if self.normalization is not None and self.normalization <= 0:
            raise ValueError("normalization must be positive")
        if self.eps is not None and self.eps <= 0:
            raise ValueError("eps must be positive")

    @property
    def enabled(self) -> bool:
        return self.coeff != 0.0

    @property
    def c(self) -> float:
        """Effective normalization constant."""
        if self.normalization is not None:
            return self.normalization
        return abs(self.coeff) * abs(self.b) * (self.b + 1.0) / special.gamma(1.0 - self.b)

    @property
    def truncation(self) -> float:
        """Effective small-jump cutoff."""
        if self.eps is not None:
            return self.eps
        # solve C * eps**|b| / |b| = default bias rate
        return (self._DEFAULT_BIAS_RATE * abs(self.b) / self.c) ** (1.0 / abs(self.b))

    def tail_rate(self, eps: Optional[float] = None) -> float:
        """Lambda(eps): jump intensity per unit time per unit trait above eps."""
        eps = self.truncation if eps is None else eps
        return self.c * eps ** (-1.0 - self.b) / (1.0 + self.b)

    def bias_rate(self, eps: Optional[float] = None) -> float:
        """Discarded mean jump mass per unit time per unit trait below eps."""
        eps = self.truncation if eps is None else eps
        return self.c * eps ** (-self.b) / (-self.b)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Sizes above the truncation: Pareto with tail P(Z > z) = (z/eps)**(-1-b)."""
        u = rng.random(n)
        return self.truncation * u ** (-1.0 / (1.0 + self.b))

    def survival(self, z) -> np.ndarray:
        eps = self.truncation
        z = np.asarray(z, dtype=float)
        return np.where(z <= eps, 1.0, (z / eps) ** (-1.0 - self.b))


# ---------------------------------------------------------------------------
# parasite law / cell policy / model spec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParasiteLaw:
    """Coefficients of the single-cell trait dynamics.

    ``g`` drift, ``sigma2`` squared diffusion coefficient (the noise term is
    sqrt(2 * sigma2(x)) dB), ``p`` rate multiplier of the compensated jumps
    with measure ``pi``, and optional heavy-tailed component ``stable``.
    Construction is permissive: assumption checks live in validate_eu, which
    reports rather than aborts.
    """

    g: Callable = field(default_factory=ZeroFn)
    sigma2: Callable = field(default_factory=ZeroFn)
    p: Callable = field(default_factory=ZeroFn)
    pi: Optional[JumpMeasure] = None
    stable: Optional[StableJumps] = None

    @property
    def has_pi(self) -> bool:
        return self.pi is not None and not _is_zero_fn(self.p)

    @property
    def has_stable(self) -> bool:
        return self.stable is not None and self.stable.enabled

    @property
    def has_diffusion(self) -> bool:
        return not _is_zero_fn(self.sigma2)

    @property
    def is_null(self) -> bool:
        """True when the trait cannot move at all."""
        return (
            _is_zero_fn(self.g)
            and not self.has_diffusion
            and not self.has_pi
            and not self.has_stable
        )

    @property
    def exact_flow(self) -> bool:
        """True when the trait moves by the deterministic linear flow x -> x e^{gt}."""
        return (
            not self.has_diffusion
            and not self.has_pi
            and not self.has_stable
            and isinstance(self.g, LinearFn)
        )

    @property
    def zero_unreachable(self) -> bool:
        """Probe whether the true trait path can hit 0 at all.

        Sufficient condition checked on a decade grid: drift and jump-rate
        multiplier decay at least linearly and sigma2 at least quadratically
        as x -> 0. Then the log-trait has bounded coefficients near 0, the
        path cannot reach 0 in finite time, and a clamped Euler overshoot is
        pure discretization noise. A False here (e.g. square-root diffusion)
        means hitting 0 may be genuine.
        """
        for f, order in ((self.g, 1), (self.p, 1), (self.sigma2, 2)):
            hi = abs(float(f(1e-4))) / 1e-4**order
            lo = abs(float(f(1e-10))) / 1e-10**order
            if lo <= 1e-300:
                continue  # vanishes identically near 0
            if lo > 10.0 * hi:
                return False
        return True


@dataclass(frozen=True)
class CellPolicy:
    """Division rate r, death rate q and the sharing kernel.

    ``variant`` tags the closed-form families: "constant" (r, q constants),
    "linear-division" (r(x) = alpha x + beta with alpha, beta > 0 and
    constant q) or "general". Use the module-level constructors.
    """

    r: Callable
    q: Callable
    kernel: SharingKernel
    variant: str = "general"
    alpha: Optional[float] = None
    beta: Optional[float] = None
    r0: Optional[float] = None
    q0: Optional[float] = None

    @property
    def constant_q(self) -> Optional[float]:
        return self.q0


def constant_rates(r: float, q: float, kernel: SharingKernel) -> CellPolicy:
    if r < 0 or q < 0:
        raise ValueError("rates must be nonnegative")
    return CellPolicy(
        r=ConstantFn(r), q=ConstantFn(q), kernel=kernel,
        variant="constant", r0=float(r), q0=float(q),
    )


def linear_division(alpha: float, beta: float, q: float, kernel: SharingKernel) -> CellPolicy:
    if alpha <= 0 or beta <= 0:
        raise ValueError("linear division needs alpha > 0 and beta > 0")
    if q < 0:
        raise ValueError("death rate must be nonnegative")
    return CellPolicy(
        r=AffineFn(alpha, beta), q=ConstantFn(q), kernel=kernel,
        variant="linear-division", alpha=float(alpha), beta=float(beta), q0=float(q),
    )


def general_policy(r: Callable, q: Callable, kernel: SharingKernel) -> CellPolicy:
    q0 = q.value if isinstance(q, ConstantFn) else None
    return CellPolicy(r=r, q=q, kernel=kernel, variant="general", q0=q0)


_DEFAULT_X_MAX = 1e12
_DEFAULT_POPULATION_CAP = 1_000_000


@dataclass(frozen=True)
class ModelSpec:
    """Everything a simulation run needs besides the RNG."""

    law: ParasiteLaw
    policy: CellPolicy
    x0: float
    x_max: float = _DEFAULT_X_MAX
    dt: float = 0.01
    horizon: float = 1.0
    population_cap: int = _DEFAULT_POPULATION_CAP

    def __post_init__(self):
        if self.x0 < 0:
            raise ValueError("initial trait must be >= 0")
        if not self.x_max > self.x0:
            raise ValueError("explosion cap must exceed the initial trait")
        if self.dt <= 0:
            raise ValueError("time step must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.population_cap < 1:
            raise ValueError("population cap must be >= 1")


# ---------------------------------------------------------------------------
# numeric spot checks of the standing well-posedness assumptions
# ---------------------------------------------------------------------------


@dataclass
class ClauseVerdict:
    name: str
    passed: bool
    detail: str


@dataclass
class EUReport:
    clauses: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def __getitem__(self, name: str) -> ClauseVerdict:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        return "\n".join(
            f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}" for c in self.clauses
        )


def _max_ratio(f: Callable, xs: np.ndarray, modulus: Callable) -> float:
    """max |f(y)-f(x)| / modulus(y-x) over consecutive grid pairs."""
    vals = np.asarray(f(xs), dtype=float)
    num = np.abs(np.diff(vals))
    den = modulus(np.diff(xs))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(den > 0, num / den, 0.0)
    return float(np.nanmax(ratios))


def _refinement_stable(f: Callable, modulus: Callable, lo=1e-3, hi=1e3) -> tuple:
    """Ratio bound on a grid and on a 4x refinement; a blow-up flags failure."""
    coarse = np.geomspace(lo, hi, 241)
    fine = np.geomspace(lo, hi, 961)
    b_coarse = _max_ratio(f, coarse, modulus)
    b_fine = _max_ratio(f, fine, modulus)
    stable = math.isfinite(b_fine) and b_fine <= 10.0 * max(b_coarse, 1e-12)
    return stable, b_fine


def _origin_stable(f: Callable, modulus: Callable) -> tuple:
    """|f(x) - f(0)| / modulus(x) across decades toward 0; growth flags failure."""
    f0 = float(f(0.0))
    xs = 10.0 ** -np.arange(2.0, 11.0, 2.0)
    ratios = [abs(float(f(x)) - f0) / float(modulus(x)) for x in xs]
    ok = ratios[-1] <= max(10.0 * ratios[0], 1e-9)
    return ok, ratios[-1]


def validate_eu(spec: ModelSpec) -> EUReport:
    """Numeric spot checks of the well-posedness clauses on a log-grid.

    Clause i: r and p locally Lipschitz with p non-decreasing and p(0) = 0;
    g continuous with g(0) = 0 and modulus u(1 - ln u) near 0.
    Clause ii: sigma = sqrt(sigma2) Holder-1/2 on compacts with sigma(0) = 0.
    Clause iii: jump-size moments finite (structural for the finite-activity
    representation; values reported).
    Clause iv: r - q dominated by a polynomial r1 x^gamma + r2 (an
    exponential rate fails on the extended grid).
    Clause v: the generator applied to a monomial test function is dominated
    by c1 x^gamma + c2 on the tail grid.

    Advisory only; nothing here raises.
    """
    law, policy = spec.law, spec.policy
    clauses = []

    # clause i ---------------------------------------------------------------
    problems = []
    p0 = float(law.p(0.0))
    if p0 != 0.0:
        problems.append(f"p(0) = {p0:g} != 0")
    g0 = float(law.g(0.0))
    if g0 != 0.0:
        problems.append(f"g(0) = {g0:g} != 0")
    grid = np.geomspace(1e-3, 1e3, 241)
    p_vals = np.asarray(law.p(grid), dtype=float)
    if np.any(np.diff(p_vals) < -1e-12 * (1.0 + np.abs(p_vals[:-1]))):
        problems.append("p is not non-decreasing on the probe grid")
    for name, f in (("r", policy.r), ("p", law.p)):
        ok, bound = _refinement_stable(f, lambda h: h)
        if not ok:
            problems.append(f"{name} Lipschitz ratio blows up under refinement ({bound:g})")
        ok, bound = _origin_stable(f, lambda x: x)
        if not ok:
            problems.append(f"{name} slope blows up toward 0 ({bound:g})")
    # modulus u(1 - ln u) for g on small increments and toward the origin
    ok, bound = _refinement_stable(law.g, lambda h: h * (1.0 - np.log(h)), lo=1e-6, hi=0.5)
    if not ok:
        problems.append(f"g modulus ratio blows up under refinement ({bound:g})")
    ok, bound = _origin_stable(law.g, lambda x: x * (1.0 - math.log(x)))
    if not ok:
        problems.append(f"g modulus ratio blows up toward 0 ({bound:g})")
    clauses.append(ClauseVerdict("i-rates-regularity", not problems, "; ".join(problems) or "ok"))

    # clause ii --------------------------------------------------------------
    problems = []
    sigma = lambda x: np.sqrt(np.maximum(np.asarray(law.sigma2(x), dtype=float), 0.0))
    if float(sigma(0.0)) != 0.0:
        problems.append(f"sigma(0) = {float(sigma(0.0)):g} != 0")
    ok, bound = _refinement_stable(sigma, np.sqrt)
    if not ok:
        problems.append(f"Holder-1/2 ratio blows up under refinement ({bound:g})")
    ok, bound = _origin_stable(sigma, math.sqrt)
    if not ok:
        problems.append(f"Holder-1/2 ratio blows up toward 0 ({bound:g})")
    clauses.append(ClauseVerdict("ii-sigma-holder", not problems, "; ".join(problems) or "ok"))

    # clause iii -------------------------------------------------------------
    if law.pi is None:
        clauses.append(ClauseVerdict("iii-jump-moments", True, "no finite-activity jumps"))
    else:
        clauses.append(
            ClauseVerdict(
                "iii-jump-moments",
                math.isfinite(law.pi.m1) and math.isfinite(law.pi.m2),
                f"m1 = {law.pi.m1:g}, m2 = {law.pi.m2:g} (finite by construction)",
            )
        )

    # clause iv --------------------------------------------------------------
    tail = np.geomspace(1.0, 1e3, 61)
    with np.errstate(over="ignore"):
        excess = np.asarray(policy.r(tail), dtype=float) - np.asarray(policy.q(tail), dtype=float)
    pos = np.maximum(excess, 0.0)
    if np.all(pos <= 1e-300):
        clauses.append(ClauseVerdict("iv-poly-domination", True, "r - q <= 0 on the grid"))
    else:
        top = slice(-21, None)  # last decade of the grid
        slope = np.polyfit(np.log(tail[top]), np.log(pos[top] + 1e-300), 1)[0]
        gamma = max(slope, 0.0) + 0.5
        scale = float(np.max(pos / (1.0 + tail**gamma)))
        far = np.geomspace(1e3, 1e6, 31)
        with np.errstate(over="ignore"):
            far_excess = np.asarray(policy.r(far), dtype=float) - np.asarray(policy.q(far), dtype=float)
        far_ratio = np.max(np.maximum(far_excess, 0.0) / (1.0 + far**gamma))
        ok = bool(np.isfinite(far_ratio) and far_ratio <= 10.0 * max(scale, 1e-12))
        detail = (
            f"fit exponent {gamma - 0.5:.3g}; bound holds out to 1e6"
            if ok
            else f"no polynomial bound fits: ratio grows {far_ratio:g} vs {scale:g} on [1e3, 1e6]"
        )
        clauses.append(ClauseVerdict("iv-poly-domination", ok, detail))

    # clause v ---------------------------------------------------------------
    gamma_v = abs(law.stable.b) / 2.0 if law.has_stable else 1.0
    tail = np.geomspace(1.0, 1e3, 25)
    gen = _generator_on_power(law, tail, gamma_v)
    ratio = gen / (1.0 + tail**gamma_v)
    far = np.geomspace(1e3, 1e6, 13)
    far_ratio = _generator_on_power(law, far, gamma_v) / (1.0 + far**gamma_v)
    base = float(np.max(np.abs(ratio)))
    ok = bool(np.all(np.isfinite(far_ratio)) and np.max(np.abs(far_ratio)) <= 10.0 * max(base, 1e-12))
    clauses.append(
        ClauseVerdict(
            "v-generator-domination",
            ok,
            f"generator on x^{gamma_v:g} dominated by c1 x^{gamma_v:g} + c2" if ok else "domination fails on tail grid",
        )
    )

    return EUReport(clauses)


def _generator_on_power(law: ParasiteLaw, xs: np.ndarray, gamma: float) -> np.ndarray:
    """Trait generator applied to h(x) = x**gamma, evaluated on a grid."""
    xs = np.asarray(xs, dtype=float)
    out = np.empty_like(xs)
    for i, x in enumerate(xs):
        val = float(law.g(x)) * gamma * x ** (gamma - 1.0)
        val += float(law.sigma2(x)) * gamma * (gamma - 1.0) * x ** (gamma - 2.0)
        if law.has_pi:
            val += float(law.p(x)) * law.pi.expect(
                lambda z: (x + z) ** gamma - x**gamma - gamma * z * x ** (gamma - 1.0)
            )
        if law.has_stable:
            st = law.stable
            eps = st.truncation
            integrand = lambda z: ((x + z) ** gamma - x**gamma) * st.c * z ** (-2.0 - st.b)
            part, _ = integrate.quad(integrand, eps, np.inf, limit=200)
            val += x * part
        out[i] = val
    return out
