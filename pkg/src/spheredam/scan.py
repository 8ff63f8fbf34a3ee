"""Grid orchestration over load and temperature.

A scan walks the (alpha, T) grid with three schedules tied to the load:
the pattern count M(alpha) follows a normalized power law between m_min
and m_max, the dimension obeys N = round(ln M / alpha) so the pattern
budget stays flat while the load varies, and the trial count drops
linearly from ntr_max to ntr_min. Every (cell, trial) derives its own
seed streams from the master seed, so maps are bitwise reproducible for
any worker count, chunking, or memory budget.

Chunks bound the trials in flight: the dominant allocation is the stacked
fresh pattern sets, 8 * N * M bytes per trial, and the budget is divided
across workers.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping

import math
import numpy as np
from threadpoolctl import threadpool_limits

from .energy import KernelSpec
from .geometry import sample_patterns
from .oracle import DEFAULT_POINTS, OracleSpec, QuadratureError, phi_eq
from .sampler import TrialConfig, TrialResult, run_trial_batch

DEFAULT_THRESHOLD_FRACTION = 0.5

MAP_CSV_HEADER = "alpha,T,N,M,n_trials,mean_alignment,stderr,acceptance,phase"
PHASE_CSV_HEADER = "alpha,T,phi_eq,ratio,phase"


def _uniform_grid(lo: float, hi: float, step: float) -> tuple[float, ...]:
    count = int(round((hi - lo) / step)) + 1
    return tuple(lo + i * step for i in range(count))


DEFAULT_ALPHA_GRID = _uniform_grid(0.01, 0.55, 0.01)
DEFAULT_TEMP_GRID = _uniform_grid(0.025, 2.0, 0.05)


@dataclass(frozen=True)
class ScanSchedule:
    """Grid and schedule parameters of one scan."""

    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    temp_grid: tuple[float, ...] = DEFAULT_TEMP_GRID
    m_min: int = 20_000
    m_max: int = 500_000
    gamma: float = 10.0
    ntr_max: int = 512
    ntr_min: int = 64
    n_eq: int = 16_384
    n_samp: int = 4_096
    phi_init_range: tuple[float, float] = (0.75, 1.0)
    memory_budget: int = 2 * 2**30

    def __post_init__(self):
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))
        object.__setattr__(self, "temp_grid", tuple(float(t) for t in self.temp_grid))
        for name, grid in (("alpha_grid", self.alpha_grid), ("temp_grid", self.temp_grid)):
            if not grid:
                raise ValueError(f"{name} must be non-empty")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError(f"{name} must be strictly increasing")
        if self.alpha_grid[0] <= 0.0:
            raise ValueError("alpha values must be positive")
        if self.temp_grid[0] <= 0.0:
            raise ValueError("temperatures must be positive")
        if not 1 <= self.m_min <= self.m_max:
            raise ValueError(f"need 1 <= m_min <= m_max, got {self.m_min}, {self.m_max}")
        if not 1 <= self.ntr_min <= self.ntr_max:
            raise ValueError(f"need 1 <= ntr_min <= ntr_max, got {self.ntr_min}, {self.ntr_max}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.memory_budget < 1:
            raise ValueError(f"memory_budget must be positive, got {self.memory_budget}")


@dataclass(frozen=True)
class CellResult:
    """Aggregated trials of one (alpha, T) cell."""

    alpha: float
    temperature: float
    n: int
    m: int
    n_trials: int          # trials that completed
    mean_alignment: float  # nan when every trial failed
    stderr: float
    acceptance: float
    n_failed: int = 0
    error: str = ""
    seconds: float = 0.0


@dataclass(frozen=True)
class AlignmentMap:
    cells: tuple[CellResult, ...]  # sorted by (alpha, T)
    kernel: KernelSpec
    schedule: ScanSchedule
    master_seed: int


@dataclass(frozen=True)
class PhaseCell:
    alpha: float
    temperature: float
    phi_eq: float   # nan when the oracle value is missing
    ratio: float    # mean_alignment / phi_eq
    label: str      # retrieval | non-retrieval | unknown | error


@dataclass(frozen=True)
class PhaseMap:
    cells: tuple[PhaseCell, ...]
    threshold_fraction: float


def m_of_alpha(alpha: float, schedule: ScanSchedule) -> int:
    """Pattern count at load alpha: power-law ramp from m_min to m_max.

    M = round(m_min + (m_max - m_min) * ((a - a_min)/(a_max - a_min))^gamma);
    the grid endpoints give exactly m_min and m_max.
    """
    lo, hi = schedule.alpha_grid[0], schedule.alpha_grid[-1]
    if not lo - 1e-12 <= alpha <= hi + 1e-12:
        raise ValueError(f"alpha = {alpha} outside the grid range [{lo}, {hi}]")
    frac = 0.0 if hi == lo else (alpha - lo) / (hi - lo)
    frac = min(max(frac, 0.0), 1.0)
    return int(round(schedule.m_min + (schedule.m_max - schedule.m_min) * frac**schedule.gamma))


def n_of_alpha(alpha: float, m: int) -> int:
    """Dimension at load alpha: N = round(ln M / alpha), keeping M = e^(alpha N)."""
    if m < 2:
        raise ValueError(f"pattern count must be >= 2, got {m}")
    if not alpha > 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    n = int(round(math.log(m) / alpha))
    if n < 2:
        raise ValueError(
            f"alpha = {alpha} too large for M = {m}: N = round(ln M / alpha) = {n} < 2"
        )
    return n


def ntr_of_alpha(alpha: float, schedule: ScanSchedule) -> int:
    """Trial count at load alpha: linear ramp from ntr_max down to ntr_min."""
    lo, hi = schedule.alpha_grid[0], schedule.alpha_grid[-1]
    if not lo - 1e-12 <= alpha <= hi + 1e-12:
        raise ValueError(f"alpha = {alpha} outside the grid range [{lo}, {hi}]")
    frac = 0.0 if hi == lo else (alpha - lo) / (hi - lo)
    frac = min(max(frac, 0.0), 1.0)
    return int(round(schedule.ntr_max + (schedule.ntr_min - schedule.ntr_max) * frac))


def pattern_seed(master_seed: int, alpha_index: int, temp_index: int,
                 trial_index: int) -> np.random.SeedSequence:
    """Seed stream for the fresh pattern set of one trial."""
    return np.random.SeedSequence(master_seed,
                                  spawn_key=(alpha_index, temp_index, trial_index, 0))


def chain_seed(master_seed: int, alpha_index: int, temp_index: int,
               trial_index: int) -> np.random.SeedSequence:
    """Seed stream for the Markov chain of one trial."""
    return np.random.SeedSequence(master_seed,
                                  spawn_key=(alpha_index, temp_index, trial_index, 1))


@dataclass(frozen=True)
class _ChunkSpec:
    alpha_index: int
    temp_index: int
    alpha: float
    temperature: float
    n: int
    m: int
    trial_lo: int
    trial_hi: int


def _run_chunk(args: tuple[_ChunkSpec, KernelSpec, ScanSchedule, int]):
    chunk, kernel, schedule, master_seed = args
    t0 = time.perf_counter()
    configs = [
        TrialConfig(
            temperature=chunk.temperature,
            seed=chain_seed(master_seed, chunk.alpha_index, chunk.temp_index, tr),
            n_eq=schedule.n_eq,
            n_samp=schedule.n_samp,
            phi_init_range=schedule.phi_init_range,
        )
        for tr in range(chunk.trial_lo, chunk.trial_hi)
    ]

    def patterns_for(i: int):
        tr = chunk.trial_lo + i
        return sample_patterns(
            chunk.n, chunk.m,
            pattern_seed(master_seed, chunk.alpha_index, chunk.temp_index, tr),
        )

    # One BLAS thread per worker: parallelism lives at the trial level and
    # fixed threading keeps reductions bit-stable.
    with threadpool_limits(limits=1):
        results = run_trial_batch(patterns_for, kernel, configs)
    return chunk, results, time.perf_counter() - t0


def run_grid(schedule: ScanSchedule, spec: KernelSpec, master_seed: int,
             workers: int = 1) -> AlignmentMap:
    """Run every (alpha, T) cell and aggregate trial means into a map.

    Results are a pure function of (schedule, spec, master_seed):
    independent of the worker count and of how trials are chunked under
    the memory budget. Per-trial failures are recorded in the cell, never
    fatal.
    """
    workers = max(1, workers)
    by_alpha = []
    for ai, alpha in enumerate(schedule.alpha_grid):
        m = m_of_alpha(alpha, schedule)
        n = n_of_alpha(alpha, m)
        ntr = ntr_of_alpha(alpha, schedule)
        by_alpha.append((ai, alpha, m, n, ntr))

    chunks: list[_ChunkSpec] = []
    for ai, alpha, m, n, ntr in by_alpha:
        per_trial_bytes = 8 * n * m
        k = max(1, int(schedule.memory_budget // (per_trial_bytes * workers)))
        for ti, temp in enumerate(schedule.temp_grid):
            lo = 0
            while lo < ntr:
                hi = min(lo + k, ntr)
                chunks.append(_ChunkSpec(ai, ti, alpha, temp, n, m, lo, hi))
                lo = hi

    args = [(c, spec, schedule, master_seed) for c in chunks]
    if workers == 1:
        outputs = [_run_chunk(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_chunk, args))

    ntr_by_alpha = {ai: ntr for ai, _, _, _, ntr in by_alpha}
    slots: dict[tuple[int, int], list] = {}
    seconds: dict[tuple[int, int], float] = {}
    for chunk, results, elapsed in outputs:
        key = (chunk.alpha_index, chunk.temp_index)
        slot = slots.setdefault(key, [None] * ntr_by_alpha[chunk.alpha_index])
        slot[chunk.trial_lo:chunk.trial_hi] = results
        seconds[key] = seconds.get(key, 0.0) + elapsed

    cells = []
    for ai, alpha, m, n, ntr in by_alpha:
        for ti, temp in enumerate(schedule.temp_grid):
            slot = slots[(ai, ti)]
            ok = [r for r in slot if isinstance(r, TrialResult)]
            failed = [r for r in slot if not isinstance(r, TrialResult)]
            if ok:
                means = np.array([r.mean_alignment for r in ok])
                mean = float(means.mean())
                stderr = float(means.std(ddof=1) / math.sqrt(len(ok))) if len(ok) > 1 else 0.0
                acceptance = float(np.mean([r.acceptance_rate for r in ok]))
            else:
                mean = stderr = acceptance = math.nan
            cells.append(CellResult(
                alpha=alpha, temperature=temp, n=n, m=m,
                n_trials=len(ok), mean_alignment=mean, stderr=stderr,
                acceptance=acceptance, n_failed=len(failed),
                error=str(failed[0]) if failed else "",
                seconds=seconds[(ai, ti)],
            ))
    cells.sort(key=lambda c: (c.alpha, c.temperature))
    return AlignmentMap(cells=tuple(cells), kernel=spec, schedule=schedule,
                        master_seed=master_seed)


def oracle_for_map(amap: AlignmentMap, points: int = DEFAULT_POINTS
                   ) -> dict[tuple[float, float], float]:
    """Single-basin phi_eq per cell, cached over the shared (N, T) pairs.

    Cells whose quadrature fails are left out (classified unknown).
    """
    out: dict[tuple[float, float], float] = {}
    cache: dict[tuple[int, float], float | None] = {}
    for cell in amap.cells:
        key = (cell.n, cell.temperature)
        if key not in cache:
            try:
                cache[key] = phi_eq(OracleSpec(
                    n=cell.n, temperature=cell.temperature,
                    kernel=amap.kernel, points=points,
                ))
            except QuadratureError:
                cache[key] = None
        value = cache[key]
        if value is not None:
            out[(cell.alpha, cell.temperature)] = value
    return out


def classify(amap: AlignmentMap, phi_eq_by_cell: Mapping[tuple[float, float], float],
             threshold_fraction: float = DEFAULT_THRESHOLD_FRACTION) -> PhaseMap:
    """Label each cell retrieval/non-retrieval against the oracle value.

    A cell is retrieval when its mean alignment reaches
    threshold_fraction * phi_eq; comparing against the oracle rather than
    a constant keeps thermal broadening from masquerading as basin
    escape. Cells without an oracle value are unknown; cells without a
    single completed trial are error.
    """
    cells = []
    for cell in amap.cells:
        key = (cell.alpha, cell.temperature)
        ref = phi_eq_by_cell.get(key)
        if cell.n_trials == 0:
            label, ref_v, ratio = "error", math.nan, math.nan
        elif ref is None:
            label, ref_v, ratio = "unknown", math.nan, math.nan
        else:
            ref_v = float(ref)
            ratio = cell.mean_alignment / ref_v
            label = "retrieval" if cell.mean_alignment >= threshold_fraction * ref_v \
                else "non-retrieval"
        cells.append(PhaseCell(alpha=cell.alpha, temperature=cell.temperature,
                               phi_eq=ref_v, ratio=ratio, label=label))
    return PhaseMap(cells=tuple(cells), threshold_fraction=threshold_fraction)


def _g17(x: float) -> str:
    return f"{x:.17g}"


def map_to_csv(amap: AlignmentMap, phases: PhaseMap | None = None) -> str:
    """Serialize a map as CSV: one row per cell, sorted by (alpha, T),
    floats at 17 significant digits, LF line endings."""
    labels = {}
    if phases is not None:
        labels = {(p.alpha, p.temperature): p.label for p in phases.cells}
    lines = [MAP_CSV_HEADER]
    for c in amap.cells:
        label = labels.get((c.alpha, c.temperature), "unknown")
        lines.append(",".join([
            _g17(c.alpha), _g17(c.temperature), str(c.n), str(c.m),
            str(c.n_trials), _g17(c.mean_alignment), _g17(c.stderr),
            _g17(c.acceptance), label,
        ]))
    return "\n".join(lines) + "\n"


def phase_to_csv(phases: PhaseMap) -> str:
    lines = [PHASE_CSV_HEADER]
    for p in phases.cells:
        lines.append(",".join([
            _g17(p.alpha), _g17(p.temperature), _g17(p.phi_eq), _g17(p.ratio), p.label,
        ]))
    return "\n".join(lines) + "\n"
