"""Sharing kernels: the law of the parasite fraction inherited at division.

When a cell of trait x divides, one daughter receives Theta * x parasites
and the other (1 - Theta) * x, with Theta drawn from a symmetric probability
law kappa on (0, 1). Everything downstream (Laplace exponents, regime
boundaries, spine simulation) touches kappa only through the functionals
implemented here:

* ``mellin(lam)``       E[Theta^lam]; +inf at or below the divergence bound
* ``mellin_dlam(lam)``  E[Theta^lam * ln Theta], the lam-derivative of mellin
* ``log_moment``        E[ln Theta]
* ``sample(rng, n)``    n draws of Theta

``lambda_minus`` is the divergence bound: mellin(lam) is finite exactly for
lam > lambda_minus. It equals -1 for the uniform kernel and -inf for the
atomic kernels, whose atoms sit strictly inside (0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SharingKernel",
    "UniformKernel",
    "DiracHalfKernel",
    "TwoPointKernel",
    "TableKernel",
]


class SharingKernel:
    """Base interface; concrete kernels implement the moment functionals."""

    lambda_minus: float = -math.inf

    def mellin(self, lam: float) -> float:
        """E[Theta^lam], +inf for lam <= lambda_minus."""
        raise NotImplementedError

    def mellin_dlam(self, lam: float) -> float:
        """E[Theta^lam * ln Theta] for lam > lambda_minus."""
        raise NotImplementedError

    @property
    def log_moment(self) -> float:
        """E[ln Theta]; finite for every provided variant."""
        return self.mellin_dlam(0.0)

    @property
    def theta_one_minus_mean(self) -> float:
        """E[Theta * (1 - Theta)] = 1/2 - E[Theta^2] (symmetry gives E[Theta] = 1/2)."""
        return 0.5 - self.mellin(2.0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def cdf(self, t):
        """P(Theta <= t), vectorized over t."""
        raise NotImplementedError

    def reflected(self) -> "SharingKernel":
        """The kernel of 1 - Theta; equal in law to the original by symmetry."""
        raise NotImplementedError


@dataclass(frozen=True)
class UniformKernel(SharingKernel):
    """Theta ~ Uniform(0, 1)."""

    lambda_minus: float = field(default=-1.0, init=False)

    def mellin(self, lam: float) -> float:
        if lam <= -1.0:
            return math.inf
        return 1.0 / (lam + 1.0)

    def mellin_dlam(self, lam: float) -> float:
        if lam <= -1.0:
            raise ValueError("E[Theta^lam ln Theta] diverges for lam <= -1")
        return -1.0 / (lam + 1.0) ** 2

    def sample(self, rng, n):
        return rng.random(n)

    def cdf(self, t):
        return np.clip(t, 0.0, 1.0)

    def reflected(self):
        return self


class _AtomicKernel(SharingKernel):
    """Common implementation for kernels supported on finitely many atoms.

    Atoms lie strictly inside (0, 1), so every power moment is finite and
    lambda_minus = -inf.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def mellin(self, lam: float) -> float:
        return float(np.sum(self.weights * self.atoms**lam))

    def mellin_dlam(self, lam: float) -> float:
        return float(np.sum(self.weights * self.atoms**lam * np.log(self.atoms)))

    def sample(self, rng, n):
        idx = rng.choice(len(self.atoms), size=n, p=self.weights)
        return self.atoms[idx]

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.sum(np.where(self.atoms <= t[..., None], self.weights, 0.0), axis=-1)


@dataclass(frozen=True)
class DiracHalfKernel(_AtomicKernel):
    """Equal sharing: Theta = 1/2 almost surely."""

    def __post_init__(self):
        object.__setattr__(self, "atoms", np.array([0.5]))
        object.__setattr__(self, "weights", np.array([1.0]))

    def mellin(self, lam: float) -> float:
        return 0.5**lam

    def mellin_dlam(self, lam: float) -> float:
        return -(0.5**lam) * math.log(2.0)

    def sample(self, rng, n):
        return np.full(n, 0.5)

    def reflected(self):
        return self


@dataclass(frozen=True)
class TwoPointKernel(_AtomicKernel):
    """Theta = theta0 or 1 - theta0 with probability 1/2 each, theta0 in (0, 1/2)."""

    theta0: float

    def __post_init__(self):
        if not 0.0 < self.theta0 < 0.5:
            raise ValueError(
                f"theta0 must lie in (0, 0.5), got {self.theta0};"
                " use DiracHalfKernel for equal sharing"
            )
        object.__setattr__(self, "atoms", np.array([self.theta0, 1.0 - self.theta0]))
        object.__setattr__(self, "weights", np.array([0.5, 0.5]))

    def mellin(self, lam: float) -> float:
        return 0.5 * (self.theta0**lam + (1.0 - self.theta0) ** lam)

    def mellin_dlam(self, lam: float) -> float:
        a, b = self.theta0, 1.0 - self.theta0
        return 0.5 * (a**lam * math.log(a) + b**lam * math.log(b))

    def sample(self, rng, n):
        return np.where(rng.random(n) < 0.5, self.theta0, 1.0 - self.theta0)

    def reflected(self):
        return self


@dataclass(frozen=True, init=False)
class TableKernel(_AtomicKernel):
    """Finitely many atoms in (0, 1) with positive weights, auto-symmetrized.

    The stored law is (kappa + kappa o (1 - .)) / 2, so an asymmetric input
    cannot produce an asymmetric kernel. Weights are normalized to sum to 1.
    """

    input_atoms: tuple
    input_weights: tuple

    def __init__(self, atoms, weights):
        atoms = np.asarray(atoms, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if atoms.ndim != 1 or atoms.shape != weights.shape or atoms.size == 0:
            raise ValueError("atoms and weights must be matching non-empty 1-d arrays")
        if np.any(atoms <= 0.0) or np.any(atoms >= 1.0):
            raise ValueError("atoms must lie strictly inside (0, 1)")
        if np.any(weights <= 0.0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "input_atoms", tuple(atoms.tolist()))
        object.__setattr__(self, "input_weights", tuple(weights.tolist()))
        weights = weights / weights.sum()
        sym_atoms = np.concatenate([atoms, 1.0 - atoms])
        sym_weights = np.concatenate([weights, weights]) / 2.0
        # merge exactly-coincident atoms (e.g. the fixed point 0.5)
        uniq, inverse = np.unique(sym_atoms, return_inverse=True)
        merged = np.bincount(inverse, weights=sym_weights, minlength=uniq.size)
        object.__setattr__(self, "atoms", uniq)
        object.__setattr__(self, "weights", merged)

    def reflected(self):
        return TableKernel(
            tuple(1.0 - a for a in self.input_atoms), self.input_weights
        )
