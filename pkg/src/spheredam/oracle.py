"""Single-basin Boltzmann prediction of the equilibrium alignment.

Within an isolated retrieval basin the equilibrium alignment is the
ratio of two one-dimensional integrals over the alignment marginal,

    phi_eq(T) = int phi p(phi) e^(-N u/T) dphi / int p(phi) e^(-N u/T) dphi,

with u(phi) the single-pattern energy density. The constant-alignment
slice of the sphere is an (N-2)-sphere whose area scales as
[N (1 - phi^2)]^((N-2)/2) (log_density_of_states below); the exact
marginal per unit phi carries one extra thickness Jacobian
1/sqrt(1 - phi^2), i.e. p(phi) ~ (1 - phi^2)^((N-3)/2). The two differ
only at O(1/N), but at N = 3 the difference is qualitative (the exact
marginal is flat), and the sampler cross-checks at N = 3 resolve it:
phi_eq integrates the exact marginal.

Both integrals share a log-domain integrand stabilized by subtracting
its maximum before exponentiation, evaluated by composite midpoint
quadrature. Midpoint evaluation keeps the endpoints open, which handles
the vanishing density at phi = +-1 and the integrable LSR endpoint at
phi_c (where the integrand tends to zero) without special cases. The
additive constant of the density is dropped; it cancels in the ratio.

This oracle deliberately models only the single retrieval basin (one
effective pattern); the Monte Carlo side measures the same observable in
the full multi-pattern landscape, which is exactly what makes the
comparison informative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import KernelSpec, single_basin_energy_density

DEFAULT_POINTS = 200_000
# Residual change after two refinements beyond which the result is
# reported as non-convergent.
CONVERGENCE_LIMIT = 1e-6


class QuadratureError(RuntimeError):
    """Quadrature refinement failed to settle; carries diagnostics."""

    def __init__(self, message: str, *, n: int, temperature: float, kind: str,
                 points: int, deltas: tuple[float, ...]):
        self.n = n
        self.temperature = temperature
        self.kind = kind
        self.points = points
        self.deltas = deltas
        super().__init__(message)


@dataclass(frozen=True)
class OracleSpec:
    """Inputs of a single phi_eq evaluation."""

    n: int
    temperature: float
    kernel: KernelSpec
    points: int = DEFAULT_POINTS

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"dimension must be >= 2, got {self.n}")
        if not self.temperature > 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.points < 8:
            raise ValueError(f"need at least 8 quadrature points, got {self.points}")
        if self.kernel.kind == "lsr":
            b = self.kernel.b_for(self.n)
            if not b > 1.0:
                raise ValueError(
                    f"lsr oracle requires b > 1 for a retrieval basin, got b = {b:g}"
                )


def log_density_of_states(phi, n: int):
    """log n(phi) up to an additive constant: ((n-2)/2) ln[n (1 - phi^2)].

    Returns -inf at |phi| >= 1 (vanishing sphere), not an error. Accepts
    scalars or arrays.
    """
    p = np.asarray(phi, dtype=np.float64)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    out = np.full(p.shape, -np.inf)
    inside = np.abs(p) < 1.0
    out[inside] = (0.5 * (n - 2)) * np.log(n * (1.0 - p[inside] * p[inside]))
    return float(out[0]) if scalar else out


def _log_alignment_marginal(phi: np.ndarray, n: int) -> np.ndarray:
    """log of the exact phi-marginal on the sphere, up to a constant:
    ((n-3)/2) ln[n (1 - phi^2)]; -inf outside (-1, 1)."""
    out = np.full(phi.shape, -np.inf)
    inside = np.abs(phi) < 1.0
    out[inside] = (0.5 * (n - 3)) * np.log(n * (1.0 - phi[inside] * phi[inside]))
    return out


def _domain(spec: OracleSpec) -> tuple[float, float]:
    if spec.kernel.kind == "lse":
        return -1.0, 1.0
    return spec.kernel.support_threshold(spec.n), 1.0


def _estimate(spec: OracleSpec, points: int) -> float:
    """Composite midpoint estimate of phi_eq with the given point count."""
    lo, hi = _domain(spec)
    h = (hi - lo) / points
    centers = lo + (np.arange(points) + 0.5) * h
    log_w = _log_alignment_marginal(centers, spec.n)
    log_w -= (spec.n / spec.temperature) * single_basin_energy_density(
        centers, spec.n, spec.kernel
    )
    w = np.exp(log_w - log_w.max())
    return float((centers * w).sum() / w.sum())


def phi_eq(spec: OracleSpec) -> float:
    """Equilibrium alignment by refined midpoint quadrature.

    Evaluates at spec.points, then refines twice (doubling each time) and
    returns the finest estimate. Raises QuadratureError when the change
    after the second doubling still exceeds CONVERGENCE_LIMIT.
    """
    e1 = _estimate(spec, spec.points)
    e2 = _estimate(spec, 2 * spec.points)
    e4 = _estimate(spec, 4 * spec.points)
    d1, d2 = abs(e2 - e1), abs(e4 - e2)
    if d2 > CONVERGENCE_LIMIT:
        raise QuadratureError(
            f"phi_eq quadrature not converged at N = {spec.n}, T = {spec.temperature:g}, "
            f"kind = {spec.kernel.kind}: changes {d1:.3e} then {d2:.3e} over two "
            f"doublings from {spec.points} points",
            n=spec.n, temperature=spec.temperature, kind=spec.kernel.kind,
            points=spec.points, deltas=(d1, d2),
        )
    return e4


def phi_eq_curve(n: int, kernel: KernelSpec, temp_grid,
                 points: int = DEFAULT_POINTS) -> list[tuple[float, float]]:
    """phi_eq over a temperature grid as (T, phi_eq) pairs.

    For the LSE kernel the curve must be non-increasing in T; a violation
    beyond 1e-9 means the quadrature went wrong and raises QuadratureError.
    """
    temps = [float(t) for t in temp_grid]
    if not temps:
        raise ValueError("empty temperature grid")
    curve = [(t, phi_eq(OracleSpec(n=n, temperature=t, kernel=kernel, points=points)))
             for t in temps]
    if kernel.kind == "lse":
        pairs = sorted(curve)
        for (t_a, v_a), (t_b, v_b) in zip(pairs, pairs[1:]):
            if v_b > v_a + 1e-9:
                raise QuadratureError(
                    f"lse phi_eq not monotone: phi_eq({t_b:g}) = {v_b!r} exceeds "
                    f"phi_eq({t_a:g}) = {v_a!r}",
                    n=n, temperature=t_b, kind=kernel.kind, points=points,
                    deltas=(v_b - v_a,),
                )
    return curve


def curve_to_csv(curve: list[tuple[float, float]]) -> str:
    """Serialize a (T, phi_eq) curve as CSV, 17 significant digits, LF."""
    lines = ["T,phi_eq"]
    for t, v in curve:
        lines.append(f"{t:.17g},{v:.17g}")
    return "\n".join(lines) + "\n"
