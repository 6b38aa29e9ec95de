"""Whole-population simulation.

Cells carry a trait evolving per the law; each cell divides at rate r(x)
(splitting its trait by the sharing kernel) and dies at rate q(x). Three
cell states exist:

* alive: simulated; a zero trait is a healthy cell that still divides and
  dies (the trait is stuck, not the cell);
* exploded: trait crossed the cap; the cell is frozen at the cap value,
  retained in totals and trait statistics but excluded from the usable
  count and no longer simulated;
* dead: removed entirely.

Division and death are drawn per substep by exponential thinning: with the
combined rate evaluated at the advanced trait, an event fires with
probability 1 - exp(-(r+q) h) and is a division with probability r/(r+q).
Substeps divide the requested dt so that max (r+q) h <= 0.1. At most one
event per cell per substep leaves an O(h) deficit in offspring counts; for
trait laws with deterministic flow the event-driven engine below is exact
and should be preferred for tight mean comparisons.

Genealogy labels are (depth, bits): a child keeps depth+1 and bits shifted
left, the second daughter with the low bit set. bits wraps modulo 2^64 for
genealogies deeper than 64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import advance_traits
from .model import ModelSpec

__all__ = [
    "PopulationState",
    "new_population",
    "step_population",
    "stats",
    "SnapshotRow",
    "run_population",
    "BlockSnapshot",
    "PopulationBlockResult",
    "simulate_population_runs",
    "write_snapshots_csv",
    "ExactRunResult",
    "run_population_exact",
]

_MAX_EVENT_PROBABILITY_STEP = 0.1


@dataclass
class PopulationState:
    """Struct-of-arrays state of the alive cells of one population."""

    t: float
    traits: np.ndarray
    depth: np.ndarray
    bits: np.ndarray
    n_exploded: int = 0
    capped: bool = False

    @property
    def n_usable(self) -> int:
        return int(self.traits.size)

    @property
    def n_total(self) -> int:
        return int(self.traits.size) + self.n_exploded


def new_population(x0: float, n: int = 1) -> PopulationState:
    return PopulationState(
        t=0.0,
        traits=np.full(n, float(x0)),
        depth=np.zeros(n, dtype=np.int32),
        bits=np.zeros(n, dtype=np.uint64),
    )


def _advance_and_branch(
    run: np.ndarray,
    traits: np.ndarray,
    depth: np.ndarray,
    bits: np.ndarray,
    h: float,
    rng: np.random.Generator,
    spec: ModelSpec,
    exploded: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One substep for a batch of cells tagged by run index.

    Mutates ``exploded`` (per-run counters); returns the new cell arrays.
    Draw order per substep is fixed: trait advance, event uniform, type
    uniform, kernel shares.
    """
    law, policy = spec.law, spec.policy
    traits = advance_traits(law, traits, h, rng)
    boom = traits > spec.x_max
    if np.any(boom):
        np.add.at(exploded, run[boom], 1)
        keep = ~boom
        run, traits, depth, bits = run[keep], traits[keep], depth[keep], bits[keep]
    if traits.size == 0:
        return run, traits, depth, bits

    r_arr = np.maximum(np.asarray(policy.r(traits), dtype=float), 0.0)
    q_arr = np.maximum(np.asarray(policy.q(traits), dtype=float), 0.0)
    total = r_arr + q_arr
    p_event = -np.expm1(-total * h)
    event = rng.random(traits.size) < p_event
    kind = rng.random(traits.size) * total  # division iff kind < r
    is_div = event & (kind < r_arr)
    is_death = event & ~is_div

    if np.any(is_death):
        keep = ~is_death
        run, traits, depth, bits = run[keep], traits[keep], depth[keep], bits[keep]
        is_div = is_div[keep]
    n_div = int(is_div.sum())
    if n_div:
        shares = policy.kernel.sample(rng, n_div)
        parents = traits[is_div]
        depth[is_div] += 1
        parent_bits = bits[is_div] << np.uint64(1)
        traits[is_div] = shares * parents
        bits[is_div] = parent_bits
        run = np.concatenate([run, run[is_div]])
        traits = np.concatenate([traits, (1.0 - shares) * parents])
        depth = np.concatenate([depth, depth[is_div]])
        bits = np.concatenate([bits, parent_bits | np.uint64(1)])
    return run, traits, depth, bits


def _substeps(policy, traits: np.ndarray, dt: float) -> int:
    if traits.size == 0:
        return 1
    r_arr = np.maximum(np.asarray(policy.r(traits), dtype=float), 0.0)
    q_arr = np.maximum(np.asarray(policy.q(traits), dtype=float), 0.0)
    top = float(np.max(r_arr + q_arr))
    return max(1, int(math.ceil(top * dt / _MAX_EVENT_PROBABILITY_STEP)))


def step_population(state: PopulationState, spec: ModelSpec, rng: np.random.Generator, dt: Optional[float] = None) -> PopulationState:
    """Advance one population by dt (default spec.dt), substepping as needed."""
    dt = spec.dt if dt is None else dt
    if state.capped:
        return PopulationState(state.t + dt, state.traits, state.depth, state.bits, state.n_exploded, True)
    run = np.zeros(state.traits.size, dtype=np.int32)
    traits, depth, bits = state.traits, state.depth, state.bits
    exploded = np.array([state.n_exploded], dtype=np.int64)
    n_sub = _substeps(spec.policy, traits, dt)
    h = dt / n_sub
    capped = False
    for _ in range(n_sub):
        if traits.size == 0:
            break
        run, traits, depth, bits = _advance_and_branch(run, traits, depth, bits, h, rng, spec, exploded)
        if traits.size + int(exploded[0]) > spec.population_cap:
            capped = True
            break
    return PopulationState(
        t=state.t + dt,
        traits=traits,
        depth=depth,
        bits=bits,
        n_exploded=int(exploded[0]),
        capped=capped,
    )


# ---------------------------------------------------------------------------
# snapshot statistics
# ---------------------------------------------------------------------------


@dataclass
class SnapshotRow:
    run_id: int
    t: float
    n_total: int
    n_usable: int
    n_gt_k: int
    n_positive: int
    qtile_50: float
    qtile_90: float
    trait_sum: float

    @property
    def frac_gt_k(self) -> float:
        return self.n_gt_k / self.n_total if self.n_total else math.nan

    @property
    def frac_positive(self) -> float:
        return self.n_positive / self.n_total if self.n_total else math.nan


def stats(state: PopulationState, *, k_threshold: float = math.inf, x_max: float = math.inf, run_id: int = 0) -> SnapshotRow:
    """Counts, threshold fractions and trait quantiles of one population.

    Exploded cells enter totals and trait statistics at the cap value.
    """
    retained = state.traits
    if state.n_exploded:
        retained = np.concatenate([retained, np.full(state.n_exploded, x_max)])
    n_total = retained.size
    if n_total:
        q50, q90 = np.quantile(retained, [0.5, 0.9])
        trait_sum = float(np.sum(retained))
    else:
        q50 = q90 = trait_sum = math.nan
    return SnapshotRow(
        run_id=run_id,
        t=state.t,
        n_total=n_total,
        n_usable=state.n_usable,
        n_gt_k=int(np.sum(retained > k_threshold)),
        n_positive=int(np.sum(retained > 0.0)),
        qtile_50=float(q50),
        qtile_90=float(q90),
        trait_sum=trait_sum,
    )


def write_snapshots_csv(rows: Iterable[SnapshotRow], path) -> None:
    with open(path, "w") as fh:
        fh.write("run_id,t,N,C,frac_gt_K,frac_positive,qtile_50,qtile_90\n")
        for row in rows:
            fh.write(
                f"{row.run_id},{row.t!r},{row.n_total},{row.n_usable},"
                f"{row.frac_gt_k!r},{row.frac_positive!r},{row.qtile_50!r},{row.qtile_90!r}\n"
            )


def _grid_with_snapshots(horizon: float, dt: float, snapshot_times: Sequence[float]) -> Tuple[np.ndarray, Dict[int, float]]:
    n = max(int(math.ceil(horizon / dt - 1e-9)), 1)
    grid = np.minimum(np.arange(n + 1) * dt, horizon)
    grid[-1] = horizon
    lookup: Dict[int, float] = {}
    for s in snapshot_times:
        if not 0.0 <= s <= horizon + 1e-12:
            raise ValueError(f"snapshot time {s} outside [0, horizon]")
        k = int(np.argmin(np.abs(grid - s)))
        lookup[k] = float(s)
    return grid, lookup


def run_population(
    spec: ModelSpec,
    rng: np.random.Generator,
    *,
    snapshot_times: Sequence[float] = (),
    k_threshold: float = math.inf,
) -> Tuple[PopulationState, List[SnapshotRow]]:
    """Simulate one population over the horizon, recording snapshots."""
    grid, lookup = _grid_with_snapshots(spec.horizon, spec.dt, snapshot_times)
    state = new_population(spec.x0)
    rows: List[SnapshotRow] = []
    if 0 in lookup:
        rows.append(stats(state, k_threshold=k_threshold, x_max=spec.x_max))
    for k in range(1, grid.size):
        state = step_population(state, spec, rng, dt=float(grid[k] - grid[k - 1]))
        if k in lookup:
            row = stats(state, k_threshold=k_threshold, x_max=spec.x_max)
            row.t = lookup[k]
            rows.append(row)
    return state, rows


# ---------------------------------------------------------------------------
# many populations at once (vectorized across runs)
# ---------------------------------------------------------------------------


@dataclass
class BlockSnapshot:
    """Per-run statistics at one time; nan for runs already flagged out."""

    t: float
    n_total: np.ndarray
    n_usable: np.ndarray
    n_gt_k: np.ndarray
    n_positive: np.ndarray
    qtile_50: np.ndarray
    qtile_90: np.ndarray
    trait_sum: np.ndarray
    sum_min_m: Optional[np.ndarray] = None  # per-run sum of min(trait, m_cap)


@dataclass
class PopulationBlockResult:
    n_runs: int
    final: BlockSnapshot
    snapshots: List[BlockSnapshot]
    survived: np.ndarray  # hit the barrier and stopped early
    capped: np.ndarray  # hit the population cap; excluded from statistics

    @property
    def extinct(self) -> np.ndarray:
        """No usable cells left, among runs that ran to completion."""
        return (self.final.n_usable == 0) & ~self.survived & ~self.capped

    def rows(self) -> List[SnapshotRow]:
        out = []
        for snap in self.snapshots:
            for rid in range(self.n_runs):
                if math.isnan(snap.n_total[rid]):
                    continue
                out.append(
                    SnapshotRow(
                        run_id=rid,
                        t=snap.t,
                        n_total=int(snap.n_total[rid]),
                        n_usable=int(snap.n_usable[rid]),
                        n_gt_k=int(snap.n_gt_k[rid]),
                        n_positive=int(snap.n_positive[rid]),
                        qtile_50=float(snap.qtile_50[rid]),
                        qtile_90=float(snap.qtile_90[rid]),
                        trait_sum=float(snap.trait_sum[rid]),
                    )
                )
        return out


def _block_stats(
    t: float,
    n_runs: int,
    run: np.ndarray,
    traits: np.ndarray,
    exploded: np.ndarray,
    flagged: np.ndarray,
    x_max: float,
    k_threshold: float,
    m_cap: Optional[float] = None,
) -> BlockSnapshot:
    n_alive = np.bincount(run, minlength=n_runs).astype(np.int64)
    n_total = n_alive + exploded
    n_gt = np.bincount(run[traits > k_threshold], minlength=n_runs).astype(np.int64)
    n_pos = np.bincount(run[traits > 0.0], minlength=n_runs).astype(np.int64)
    if x_max > k_threshold:
        n_gt = n_gt + exploded
    n_pos = n_pos + exploded
    trait_sum = np.bincount(run, weights=traits, minlength=n_runs) + exploded * x_max
    sum_min = None
    if m_cap is not None:
        sum_min = np.bincount(run, weights=np.minimum(traits, m_cap), minlength=n_runs)
        sum_min = sum_min + exploded * min(x_max, m_cap)
    q50 = np.full(n_runs, math.nan)
    q90 = np.full(n_runs, math.nan)
    order = np.argsort(run, kind="stable")
    sorted_run = run[order]
    sorted_traits = traits[order]
    bounds = np.searchsorted(sorted_run, np.arange(n_runs + 1))
    for rid in range(n_runs):
        vals = sorted_traits[bounds[rid] : bounds[rid + 1]]
        if exploded[rid]:
            vals = np.concatenate([vals, np.full(int(exploded[rid]), x_max)])
        if vals.size:
            q50[rid], q90[rid] = np.quantile(vals, [0.5, 0.9])
    out = BlockSnapshot(
        t=t,
        n_total=n_total.astype(float),
        n_usable=n_alive.astype(float),
        n_gt_k=n_gt.astype(float),
        n_positive=n_pos.astype(float),
        qtile_50=q50,
        qtile_90=q90,
        trait_sum=trait_sum,
        sum_min_m=sum_min,
    )
    for arr in (out.n_total, out.n_usable, out.n_gt_k, out.n_positive, out.qtile_50, out.qtile_90, out.trait_sum):
        arr[flagged] = math.nan
    if out.sum_min_m is not None:
        out.sum_min_m[flagged] = math.nan
    return out


def simulate_population_runs(
    spec: ModelSpec,
    rng: np.random.Generator,
    n_runs: int,
    *,
    snapshot_times: Sequence[float] = (),
    k_threshold: float = math.inf,
    barrier: Optional[int] = None,
    m_cap: Optional[float] = None,
) -> PopulationBlockResult:
    """Simulate n independent populations sharing one RNG stream.

    All runs march in lockstep through the same substeps, so the layout of
    draws depends only on the collective state; with a fixed stream the
    whole block is reproducible. Runs hitting the optional barrier
    (usable-cell count >= barrier) stop early and are flagged ``survived``;
    runs exceeding the population cap are flagged ``capped``. Both are nan
    in subsequent statistics.
    """
    grid, lookup = _grid_with_snapshots(spec.horizon, spec.dt, snapshot_times)
    run = np.arange(n_runs, dtype=np.int64)
    traits = np.full(n_runs, float(spec.x0))
    depth = np.zeros(n_runs, dtype=np.int32)
    bits = np.zeros(n_runs, dtype=np.uint64)
    exploded = np.zeros(n_runs, dtype=np.int64)
    survived = np.zeros(n_runs, dtype=bool)
    capped = np.zeros(n_runs, dtype=bool)
    snaps: List[BlockSnapshot] = []

    def flagged():
        return survived | capped

    if 0 in lookup:
        snaps.append(_block_stats(lookup[0], n_runs, run, traits, exploded, flagged(), spec.x_max, k_threshold, m_cap))

    for k in range(1, grid.size):
        dt = float(grid[k] - grid[k - 1])
        if traits.size:
            n_sub = _substeps(spec.policy, traits, dt)
            h = dt / n_sub
            for _ in range(n_sub):
                if traits.size == 0:
                    break
                run, traits, depth, bits = _advance_and_branch(run, traits, depth, bits, h, rng, spec, exploded)
                counts = np.bincount(run, minlength=n_runs)
                if barrier is not None:
                    hit = (counts >= barrier) & ~survived & ~capped
                    if np.any(hit):
                        survived |= hit
                over = (counts + exploded > spec.population_cap) & ~capped & ~survived
                if np.any(over):
                    capped |= over
                if barrier is not None or np.any(capped):
                    drop = flagged()[run]
                    if np.any(drop):
                        keep = ~drop
                        run, traits, depth, bits = run[keep], traits[keep], depth[keep], bits[keep]
        if k in lookup:
            snaps.append(_block_stats(lookup[k], n_runs, run, traits, exploded, flagged(), spec.x_max, k_threshold, m_cap))

    final = _block_stats(float(grid[-1]), n_runs, run, traits, exploded, flagged(), spec.x_max, k_threshold, m_cap)
    return PopulationBlockResult(
        n_runs=n_runs, final=final, snapshots=snaps, survived=survived, capped=capped
    )


# ---------------------------------------------------------------------------
# exact event-driven engine for deterministic trait flow
# ---------------------------------------------------------------------------


@dataclass
class ExactRunResult:
    t: float
    n_final: int
    trait_sum: float
    extinct: bool
    survived: bool
    capped: bool
    n_events: int
    traits: np.ndarray = field(default_factory=lambda: np.empty(0))
    snapshots: List[Tuple[float, int, float]] = field(default_factory=list)  # (t, N, trait sum)


def _solve_hazard(a: float, b: float, g: float, target: float) -> float:
    """delta with a (e^{g delta} - 1)/g + b delta = target (a, b >= 0, not both 0)."""
    if a == 0.0:
        return target / b
    if g == 0.0:
        return target / (a + b)
    d = target / (a + b)  # over/undershoots toward the convex side; Newton converges
    for _ in range(80):
        eg = math.exp(g * d)
        f = a * (eg - 1.0) / g + b * d - target
        if abs(f) <= 1e-13 * (1.0 + target):
            break
        d -= f / (a * eg + b)
        if d < 0.0:
            d = 0.0
    return d


def run_population_exact(
    rng: np.random.Generator,
    *,
    x0: float,
    alpha: float,
    beta: float,
    q: float,
    g: float,
    horizon: float,
    kernel,
    barrier: Optional[int] = None,
    cap: int = 1_000_000,
    snapshot_times: Sequence[float] = (),
) -> ExactRunResult:
    """Event-driven simulation, exact in distribution.

    Valid when traits follow the deterministic flow x e^{g t} between
    divisions (no diffusion, no trait jumps), division rate alpha x + beta
    and constant death rate q. Event times come from inverting the exact
    cumulative hazard, so there is no time-step bias at all; use this
    engine when comparing means against the closed forms.
    """
    if alpha < 0 or beta < 0 or q < 0 or (alpha == 0.0 and beta == 0.0 and q == 0.0):
        raise ValueError("need nonnegative rates with at least one positive")
    traits = np.array([float(x0)])
    t = 0.0
    snaps_left = sorted(float(s) for s in snapshot_times)
    snapshots: List[Tuple[float, int, float]] = []
    extinct = survived = capped = False
    n_events = 0

    def record_until(limit: float) -> None:
        nonlocal snaps_left
        while snaps_left and snaps_left[0] <= limit + 1e-12:
            s = snaps_left.pop(0)
            scale = math.exp(g * (s - t))
            snapshots.append((s, traits.size, float(traits.sum()) * scale))

    while True:
        n = traits.size
        if n == 0:
            extinct = True
            record_until(horizon)
            break
        if barrier is not None and n >= barrier:
            survived = True
            break
        if n > cap:
            capped = True
            break
        s_tot = float(traits.sum())
        a = alpha * s_tot
        b = (beta + q) * n
        target = rng.standard_exponential()
        delta = _solve_hazard(a, b, g, target)
        if t + delta >= horizon:
            record_until(horizon)
            traits = traits * math.exp(g * (horizon - t))
            t = horizon
            break
        record_until(t + delta)
        t += delta
        traits = traits * math.exp(g * delta)
        n_events += 1
        div_rate = alpha * float(traits.sum()) + beta * n
        if rng.random() * (div_rate + q * n) < div_rate:
            weights = alpha * traits + beta
            cum = np.cumsum(weights)
            i = int(np.searchsorted(cum, rng.random() * cum[-1]))
            i = min(i, n - 1)
            theta = float(kernel.sample(rng, 1)[0])
            parent = traits[i]
            traits[i] = theta * parent
            traits = np.append(traits, (1.0 - theta) * parent)
        else:
            i = int(rng.integers(0, n))
            traits = np.delete(traits, i)

    return ExactRunResult(
        t=t,
        n_final=int(traits.size),
        trait_sum=float(traits.sum()),
        extinct=extinct,
        survived=survived,
        capped=capped,
        n_events=n_events,
        traits=traits,
        snapshots=snapshots,
    )
