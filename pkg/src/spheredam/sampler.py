"""Metropolis-Hastings dynamics on the sphere.

One MC step proposes x' = renormalize(x + sigma * eta) with isotropic
Gaussian eta and sigma = 2.4 * T / sqrt(N), then accepts with probability
min(1, exp(-dH/T)). For the LSR kernel, candidates outside the support of
every pattern are rejected outright (hard wall); the proposal's
renormalization asymmetry is deliberately not corrected in the acceptance
rule, which induces an O(sigma^2) bias that the detailed-balance tests
bound empirically.

Trials run in lockstep batches so the per-step alignment products fuse
into one stacked matrix product. Every trial owns its seed stream, and
the per-trial arithmetic is independent of the batch composition: a batch
of k trials is bitwise identical to k separate runs (pattern sharing, if
configured by passing a single PatternSet, reuses the matrix without
copying and preserves this property).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .energy import KernelSpec, _lse_row_values, _lsr_row_values
from .geometry import PatternSet, SphereState, init_near_pattern

# Proposal width prefactor: sigma = PROPOSAL_SCALE * T / sqrt(N).
PROPOSAL_SCALE = 2.4
# LSR initialization redraws before giving up.
INIT_RETRY_LIMIT = 100

# Trace hooks receive (step, phi1, energy, accepted, state); step counts
# from 1, state is a read-only view valid only during the call.
TraceHook = Callable[[int, float, float, bool, np.ndarray], None]


@dataclass(frozen=True)
class TrialConfig:
    """Per-trial sampling parameters and seed stream.

    seed may be an int or a numpy SeedSequence; each trial consumes its
    stream in a fixed order (initialization draws, then per step N
    proposal normals plus one acceptance uniform for in-support
    candidates), so results are a pure function of (seed, config).
    """

    temperature: float
    seed: int | np.random.SeedSequence
    n_eq: int = 16_384
    n_samp: int = 4_096
    phi_init_range: tuple[float, float] = (0.75, 1.0)

    def __post_init__(self):
        if not self.temperature > 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.n_eq < 0:
            raise ValueError(f"n_eq must be >= 0, got {self.n_eq}")
        if self.n_samp < 1:
            raise ValueError(f"n_samp must be >= 1, got {self.n_samp}")
        lo, hi = self.phi_init_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(
                f"phi_init_range must satisfy 0 < low <= high <= 1, got {self.phi_init_range}"
            )


@dataclass(frozen=True)
class TrialResult:
    mean_alignment: float      # time average of phi_1 over the sampling steps
    acceptance_rate: float     # accepted / (n_eq + n_samp)
    final_alignment: float
    wall_rejections: int       # LSR candidates rejected out of support


class TrialSetupError(RuntimeError):
    """Raised when an LSR trial cannot be initialized inside the support."""

    def __init__(self, b: float, phi_c: float, attempts: int, last_phi_init: float):
        self.b = b
        self.phi_c = phi_c
        self.attempts = attempts
        self.last_phi_init = last_phi_init
        super().__init__(
            f"initial state out of support after {attempts} draws: "
            f"b = {b:g}, phi_c = {phi_c:.6g}, last phi_init = {last_phi_init:.6g}"
        )


def proposal_sigma(temperature: float, n: int) -> float:
    """Proposal step width sigma = 2.4 * T / sqrt(N)."""
    return PROPOSAL_SCALE * temperature / math.sqrt(n)


def propose(state: SphereState, temperature: float, rng: np.random.Generator) -> SphereState:
    """One proposal: add sigma * N(0, I) and renormalize onto the sphere."""
    if not temperature > 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    x = state.components
    n = x.size
    sigma = proposal_sigma(temperature, n)
    while True:
        cand = x + sigma * rng.standard_normal(n)
        norm2 = float(np.sum(cand * cand))
        if norm2 > 0.0:  # zero-sum draws are resampled, never an error
            return SphereState(cand * np.sqrt(n / norm2))


def accept(delta_h: float, temperature: float, candidate_in_support: bool,
           rng: np.random.Generator) -> bool:
    """Metropolis decision: min(1, exp(-dH/T)), one uniform draw.

    Out-of-support candidates are rejected without consuming a draw (the
    hard wall dominates any energy difference).
    """
    if not temperature > 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if not candidate_in_support:
        return False
    u = rng.random()
    if delta_h <= 0.0:
        return True
    return u < math.exp(-delta_h / temperature)


def run_trial(patterns: PatternSet, spec: KernelSpec, config: TrialConfig,
              trace: TraceHook | None = None) -> TrialResult:
    """Run one trial: initialize near pattern 1, equilibrate, then measure.

    Equivalent to a batch of one; raises TrialSetupError when an LSR
    initial state cannot be placed inside the support.
    """
    out = run_trial_batch(patterns, spec, [config], traces=[trace])[0]
    if isinstance(out, TrialSetupError):
        raise out
    return out


def run_trial_batch(
    patterns: PatternSet | Sequence[PatternSet] | Callable[[int], PatternSet],
    spec: KernelSpec,
    configs: Sequence[TrialConfig],
    traces: Sequence[TraceHook | None] | None = None,
) -> list[TrialResult | TrialSetupError]:
    """Run trials in lockstep, fusing their alignment products.

    ``patterns`` is either one shared PatternSet, a sequence with one set
    per trial, or a callable mapping the trial index to its set (fresh
    patterns per trial, the default protocol). All sets must share (N, M).
    A failed trial yields its TrialSetupError in the result list without
    aborting the rest. The caller bounds memory by bounding the batch
    size: fresh-pattern batches hold all K pattern matrices (8*K*N*M
    bytes) at once.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("empty trial batch")
    k_total = len(configs)
    if traces is None:
        traces = [None] * k_total
    elif len(traces) != k_total:
        raise ValueError("traces must match configs in length")

    shared = isinstance(patterns, PatternSet)
    if shared:
        sets = [patterns]
    elif callable(patterns):
        sets = [patterns(i) for i in range(k_total)]
    else:
        sets = list(patterns)
        if len(sets) != k_total:
            raise ValueError("need one pattern set per trial")
    n = sets[0].dim
    m = sets[0].count
    for ps in sets:
        if ps.dim != n or ps.count != m:
            raise ValueError("all pattern sets in a batch must share (N, M)")

    # (K|1, M, N) stack; each entry multiplies states as (M,N) @ (N,1), so
    # per-trial results do not depend on the batch composition.
    if shared:
        stack = sets[0].data.T[None, :, :]
    else:
        stack = np.stack([ps.data.T for ps in sets])

    lse = spec.kind == "lse"
    beta = spec.beta_for(n)
    epsilon = spec.epsilon

    def energy_rows(align: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        if lse:
            return _lse_row_values(align, n, beta), None
        return _lsr_row_values(align, n, beta, epsilon)

    rngs = [np.random.default_rng(c.seed) for c in configs]
    sigmas = np.array([proposal_sigma(c.temperature, n) for c in configs])
    totals = [c.n_eq + c.n_samp for c in configs]

    states = np.zeros((k_total, n))
    cur_energy = np.zeros(k_total)
    cur_phi1 = np.zeros(k_total)
    cur_support = np.ones(k_total, dtype=bool)
    failures: dict[int, TrialSetupError] = {}

    for idx, (cfg, rng) in enumerate(zip(configs, rngs)):
        ps = sets[0] if shared else sets[idx]
        target = ps.pattern(0)
        lo, hi = cfg.phi_init_range
        phi0 = math.nan
        placed = False
        for _ in range(INIT_RETRY_LIMIT):
            phi0 = rng.uniform(lo, hi)
            x = init_near_pattern(target, phi0, rng).components
            align = np.matmul(stack[0 if shared else idx], x[:, None])[:, 0] / n
            vals, supp = energy_rows(align[None, :])
            if lse or bool(supp[0]):
                states[idx] = x
                cur_energy[idx] = float(vals[0])
                cur_phi1[idx] = float(align[0])
                placed = True
                break
        if not placed:
            failures[idx] = TrialSetupError(
                b=spec.b_for(n),
                phi_c=spec.support_threshold(n),
                attempts=INIT_RETRY_LIMIT,
                last_phi_init=phi0,
            )

    live = [i for i in range(k_total) if i not in failures]
    accepted_count = [0] * k_total
    wall_count = [0] * k_total
    phi_sum = [0.0] * k_total
    max_total = max((totals[i] for i in live), default=0)

    cand = states.copy()
    for step in range(max_total):
        running = [i for i in live if totals[i] > step]
        if not running:
            break
        run_mask = np.zeros(k_total, dtype=bool)
        run_mask[running] = True
        for idx in running:
            cand[idx] = states[idx] + sigmas[idx] * rngs[idx].standard_normal(n)
        norm2 = np.sum(cand * cand, axis=1)
        for idx in running:  # probability-zero degenerate proposals
            while norm2[idx] == 0.0:
                cand[idx] = states[idx] + sigmas[idx] * rngs[idx].standard_normal(n)
                norm2[idx] = np.sum(cand[idx] * cand[idx])
        norm2[~run_mask] = n  # keep idle rows finite without touching live rows
        cand *= np.sqrt(n / norm2)[:, None]

        cand_align = np.matmul(stack, cand[:, :, None])[:, :, 0] / n
        cand_vals, cand_supp = energy_rows(cand_align)

        for idx in running:
            cfg = configs[idx]
            in_support = True if lse else bool(cand_supp[idx])
            if not lse and not cur_support[idx] and in_support:
                ok = True  # recover from a (pathological) dead start
            else:
                delta = float(cand_vals[idx]) - float(cur_energy[idx])
                ok = accept(delta, cfg.temperature, in_support, rngs[idx])
            if not in_support:
                wall_count[idx] += 1
            if ok:
                states[idx] = cand[idx]
                cur_energy[idx] = cand_vals[idx]
                cur_phi1[idx] = cand_align[idx, 0]
                cur_support[idx] = True
                accepted_count[idx] += 1
            if step >= cfg.n_eq:
                phi_sum[idx] += float(cur_phi1[idx])
            hook = traces[idx]
            if hook is not None:
                hook(step + 1, float(cur_phi1[idx]), float(cur_energy[idx]), ok,
                     states[idx])

    out: list[TrialResult | TrialSetupError] = []
    for idx in range(k_total):
        if idx in failures:
            out.append(failures[idx])
            continue
        cfg = configs[idx]
        out.append(TrialResult(
            mean_alignment=phi_sum[idx] / cfg.n_samp,
            acceptance_rate=accepted_count[idx] / totals[idx],
            final_alignment=float(cur_phi1[idx]),
            wall_rejections=wall_count[idx],
        ))
    return out
