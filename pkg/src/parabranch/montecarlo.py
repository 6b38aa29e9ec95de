"""Replication engine: seed plans, estimators and statistical checks.

Replicas are grouped into fixed-size blocks; every block owns a counter-mode
RNG stream derived from (master seed, block index). The stream a replica
sees therefore depends only on the plan, never on how many workers run the
blocks, so any rerun from a recorded (master, block_size) pair is
bit-identical regardless of parallelism.

Estimator means and standard errors are computed with exact float summation,
making them invariant under reordering of the accumulated values.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "SeedPlan",
    "Estimator",
    "map_blocks",
    "replicate",
    "EquivalenceResult",
    "equivalence_test",
    "TrendResult",
    "trend_test",
    "write_estimators_csv",
]

DEFAULT_BLOCK_SIZE = 256


@dataclass(frozen=True)
class SeedPlan:
    """Deterministic assignment of RNG streams to replica blocks.

    ``block_size`` is part of the plan identity: changing it reshuffles
    which stream serves which replica, so record it alongside the master
    seed when reproducibility matters.
    """

    master: int
    block_size: int = DEFAULT_BLOCK_SIZE

    def __post_init__(self):
        if self.master < 0:
            raise ValueError("master seed must be nonnegative")
        if self.block_size < 1:
            raise ValueError("block size must be >= 1")

    def rng_for_block(self, block: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master, spawn_key=(block,))
        return np.random.Generator(np.random.Philox(ss))

    def blocks(self, n: int) -> Iterator[Tuple[int, int, int]]:
        """Yield (block index, start, stop) covering range(n)."""
        b = 0
        for start in range(0, n, self.block_size):
            yield b, start, min(start + self.block_size, n)
            b += 1


def map_blocks(
    fn: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    plan: SeedPlan,
    jobs: int = 1,
) -> List[np.ndarray]:
    """Run fn(rng, count) over every block; results come back in block order.

    ``jobs`` only changes wall time, never values: each block's stream is
    fixed by the plan and the outputs are reassembled by index.
    """
    tasks = list(plan.blocks(n))
    if jobs <= 1 or len(tasks) <= 1:
        return [np.asarray(fn(plan.rng_for_block(b), hi - lo)) for b, lo, hi in tasks]
    results: List[Optional[np.ndarray]] = [None] * len(tasks)

    def run(item):
        b, lo, hi = item
        return b, np.asarray(fn(plan.rng_for_block(b), hi - lo))

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        for b, arr in pool.map(run, tasks):
            results[b] = arr
    return results  # type: ignore[return-value]


class Estimator:
    """Sample mean with standard error, exact under reordering.

    ``n_excluded`` counts replicas that were run but dropped (capped
    populations, for instance); they never enter the moments.
    """

    def __init__(self, name: str, values: Sequence[float], n_excluded: int = 0):
        self.name = name
        self.values = np.asarray(values, dtype=float)
        self.n_excluded = int(n_excluded)
        if self.values.ndim != 1:
            raise ValueError("estimator values must be one-dimensional")

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        if self.n == 0:
            return math.nan
        return math.fsum(self.values) / self.n

    @property
    def se(self) -> float:
        if self.n < 2:
            return math.nan
        m = self.mean
        ss = math.fsum((v - m) ** 2 for v in self.values)
        return math.sqrt(ss / (self.n - 1) / self.n)

    def __repr__(self) -> str:
        return f"Estimator({self.name!r}, n={self.n}, mean={self.mean:.6g}, se={self.se:.3g})"


def write_estimators_csv(estimators: Iterable[Estimator], path) -> None:
    with open(path, "w") as fh:
        fh.write("name,n,mean,se\n")
        for est in estimators:
            fh.write(f"{est.name},{est.n},{est.mean!r},{est.se!r}\n")


def replicate(
    fn: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    plan: SeedPlan,
    *,
    name: str = "estimate",
    jobs: int = 1,
) -> Estimator:
    """Estimate E[fn] from n replicas run under the plan's streams.

    fn(rng, count) must return count values (one per replica). NaN values
    mark excluded replicas and are dropped from the estimate but counted in
    ``n_excluded``.
    """
    if n < 2:
        raise ValueError("need at least two replicas for a standard error")
    parts = map_blocks(fn, n, plan, jobs=jobs)
    values = np.concatenate(parts)
    if values.size != n:
        raise RuntimeError(f"replica count mismatch: expected {n}, got {values.size}")
    keep = ~np.isnan(values)
    return Estimator(name, values[keep], n_excluded=int(n - keep.sum()))


# ---------------------------------------------------------------------------
# statistical comparisons
# ---------------------------------------------------------------------------


@dataclass
class EquivalenceResult:
    name: str
    value_a: float
    value_b: float
    se_a: float
    se_b: float
    k: float
    passed: bool

    @property
    def diff(self) -> float:
        return self.value_a - self.value_b

    @property
    def combined_se(self) -> float:
        return math.hypot(self.se_a, self.se_b)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (
            f"{tag}  {self.name}: a={self.value_a:.6g} b={self.value_b:.6g} "
            f"|diff|={abs(self.diff):.3g} allowed={self.k * self.combined_se:.3g}"
        )


def _value_se(x: Union[Estimator, float]) -> Tuple[float, float]:
    if isinstance(x, Estimator):
        return x.mean, x.se
    return float(x), 0.0


def equivalence_test(
    a: Union[Estimator, float],
    b: Union[Estimator, float],
    *,
    k: float = 3.0,
    name: str = "equivalence",
) -> EquivalenceResult:
    """Two-sided agreement check: |mean difference| <= k combined SEs.

    Either side may be an exact reference value (SE zero). With both sides
    exact the check degenerates to strict equality.
    """
    va, sa = _value_se(a)
    vb, sb = _value_se(b)
    combined = math.hypot(sa, sb)
    passed = abs(va - vb) <= k * combined if combined > 0 else va == vb
    return EquivalenceResult(name=name, value_a=va, value_b=vb, se_a=sa, se_b=sb, k=k, passed=passed)


@dataclass
class TrendResult:
    direction: str
    passed: bool
    net_change: float
    net_se: float
    violations: list = field(default_factory=list)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (
            f"{tag}  trend {self.direction}: net change {self.net_change:.6g} "
            f"(se {self.net_se:.3g}), {len(self.violations)} step violations"
        )


def trend_test(
    means: Sequence[float],
    ses: Sequence[float],
    *,
    direction: str,
    k: float = 3.0,
) -> TrendResult:
    """Check a noisy sequence moves the predicted way.

    Passes when (a) the net endpoint change has the predicted sign and
    (b) no single step contradicts the prediction by more than k combined
    SEs of the step. Plain monotonicity would reject valid noise around a
    slow trend; this keeps the noise budget explicit.
    """
    if direction not in ("decreasing", "increasing"):
        raise ValueError("direction must be 'decreasing' or 'increasing'")
    means = np.asarray(means, dtype=float)
    ses = np.asarray(ses, dtype=float)
    if means.size < 2 or means.size != ses.size:
        raise ValueError("need matching means and ses, at least two points")
    sgn = -1.0 if direction == "decreasing" else 1.0
    violations = []
    for i in range(means.size - 1):
        step = sgn * (means[i + 1] - means[i])
        allowed = k * math.hypot(ses[i], ses[i + 1])
        if step < -allowed:
            violations.append((i, float(means[i]), float(means[i + 1])))
    net = sgn * (means[-1] - means[0])
    net_se = math.hypot(ses[0], ses[-1])
    passed = not violations and net > 0.0
    return TrendResult(
        direction=direction,
        passed=passed,
        net_change=float(means[-1] - means[0]),
        net_se=net_se,
        violations=violations,
    )
