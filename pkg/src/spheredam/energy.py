"""Stable evaluation of the two kernel Hamiltonians from alignment vectors.

Both energies aggregate per-pattern kernel terms of the squared distance
d^2 = 2N(1 - phi_mu), evaluated here directly from alignments:

    LSE:  H = -(1/beta_net) * ln sum_mu exp[-beta_net * N * (1 - phi_mu)]
    LSR:  H = -(1/beta_net) * ln sum_mu max(eps, 1 - b * (1 - phi_mu))

with b = N * beta_net the rescaled sharpness. An LSR term is "active" when
it exceeds the floor eps; a state is in support when at least one term is
active, i.e. phi_mu > 1 - (1 - eps)/b, indistinguishable at default eps
from the support threshold phi_c = 1 - 1/b. The floor keeps the energy
finite everywhere; rejection of out-of-support states is the sampler's
job (hard wall), so the two can never disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# LSR floor: small enough that floored terms never influence in-support
# energetics at double precision, large enough to avoid ln(0).
DEFAULT_EPSILON = 1e-12

_KINDS = ("lse", "lsr")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel kind plus sharpness parameters.

    Exactly one of ``beta_net`` (inverse squared kernel width) or ``b``
    (rescaled sharpness, LSR only) is set; the other is derived per
    evaluation dimension via b = N * beta_net. Fixing ``b`` keeps the
    support threshold phi_c = 1 - 1/b constant while N varies across a
    scan; fixing ``beta_net`` makes b = N grow with the dimension.
    """

    kind: str
    beta_net: float | None = None
    b: float | None = None
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kernel kind must be one of {_KINDS}, got {self.kind!r}")
        if (self.beta_net is None) == (self.b is None):
            raise ValueError("exactly one of beta_net and b must be set")
        if self.kind == "lse" and self.b is not None:
            raise ValueError("fixed rescaled sharpness b only applies to the lsr kernel")
        if self.beta_net is not None and not self.beta_net > 0.0:
            raise ValueError(f"beta_net must be positive, got {self.beta_net}")
        if self.b is not None and not self.b > 0.0:
            raise ValueError(f"b must be positive, got {self.b}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")

    @classmethod
    def lse(cls, beta_net: float = 1.0, epsilon: float = DEFAULT_EPSILON) -> "KernelSpec":
        return cls(kind="lse", beta_net=beta_net, epsilon=epsilon)

    @classmethod
    def lsr(cls, *, beta_net: float | None = None, b: float | None = None,
            epsilon: float = DEFAULT_EPSILON) -> "KernelSpec":
        return cls(kind="lsr", beta_net=beta_net, b=b, epsilon=epsilon)

    def beta_for(self, n: int) -> float:
        """Inverse squared kernel width at dimension n."""
        if self.beta_net is not None:
            return self.beta_net
        return self.b / n

    def b_for(self, n: int) -> float:
        """Rescaled sharpness b = N * beta_net at dimension n."""
        if self.b is not None:
            return self.b
        return n * self.beta_net

    def support_threshold(self, n: int) -> float:
        """LSR support boundary phi_c = 1 - 1/b at dimension n."""
        if self.kind != "lsr":
            raise ValueError("support threshold only defined for the lsr kernel")
        return 1.0 - 1.0 / self.b_for(n)


@dataclass(frozen=True)
class EnergyValue:
    value: float
    in_support: bool


def log_sum_exp(terms) -> float:
    """max(t) + ln sum exp(t - max(t)); never overflows.

    Returns -inf only when every term is -inf.
    """
    t = np.asarray(terms, dtype=np.float64)
    if t.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = float(np.max(t))
    if m == -np.inf:
        return -np.inf
    return m + float(np.log(np.sum(np.exp(t - m))))


def _lse_row_values(align: np.ndarray, n: int, beta: float) -> np.ndarray:
    """LSE Hamiltonian per row of a K x M alignment matrix."""
    t = (beta * n) * (align - 1.0)  # -beta * N * (1 - phi)
    m = t.max(axis=-1)
    s = np.exp(t - m[..., None]).sum(axis=-1)
    return -(m + np.log(s)) / beta


def _lsr_row_values(align: np.ndarray, n: int, beta: float,
                    epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """LSR Hamiltonian and support flag per row of a K x M alignment matrix."""
    b = beta * n
    t = 1.0 - b * (1.0 - align)
    support = (t > epsilon).any(axis=-1)
    s = np.maximum(t, epsilon).sum(axis=-1)
    return -np.log(s) / beta, support


def lse_energy(phi: np.ndarray, n: int, spec: KernelSpec) -> EnergyValue:
    """LSE Hamiltonian of an alignment vector; always in support."""
    if spec.kind != "lse":
        raise ValueError(f"lse_energy called with kind={spec.kind!r}")
    a = _as_alignment_row(phi)
    value = _lse_row_values(a, n, spec.beta_for(n))
    return EnergyValue(value=float(value[0]), in_support=True)


def lsr_energy(phi: np.ndarray, n: int, spec: KernelSpec) -> EnergyValue:
    """LSR Hamiltonian of an alignment vector, floored at eps per term.

    in_support is True iff at least one term exceeds the floor.
    """
    if spec.kind != "lsr":
        raise ValueError(f"lsr_energy called with kind={spec.kind!r}")
    a = _as_alignment_row(phi)
    value, support = _lsr_row_values(a, n, spec.beta_for(n), spec.epsilon)
    return EnergyValue(value=float(value[0]), in_support=bool(support[0]))


def energy(phi: np.ndarray, n: int, spec: KernelSpec) -> EnergyValue:
    """Hamiltonian of an alignment vector, dispatching on the kernel kind."""
    if spec.kind == "lse":
        return lse_energy(phi, n, spec)
    return lsr_energy(phi, n, spec)


def single_basin_energy_density(phi, n: int, spec: KernelSpec):
    """Per-coordinate energy density u(phi) of one isolated pattern.

    LSE: u = 1 - phi on [-1, 1]. LSR: u = -(1/b) ln[1 - b(1 - phi)] on
    (phi_c, 1]. N*u(phi) equals the M=1 Hamiltonian (exactly for LSE, for
    LSR whenever the state is in support). Accepts scalars or arrays.
    """
    p = np.asarray(phi, dtype=np.float64)
    scalar = p.ndim == 0
    if spec.kind == "lse":
        if (np.abs(p) > 1.0).any():
            raise ValueError("lse energy density requires phi in [-1, 1]")
        u = 1.0 - p
    else:
        b = spec.b_for(n)
        phi_c = spec.support_threshold(n)
        if (p <= phi_c).any():
            raise ValueError(
                f"lsr energy density undefined at or below phi_c = {phi_c!r}"
            )
        if (p > 1.0).any():
            raise ValueError("lsr energy density requires phi <= 1")
        u = -np.log1p(-b * (1.0 - p)) / b
    return float(u) if scalar else u


def _as_alignment_row(phi) -> np.ndarray:
    a = np.asarray(phi, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise ValueError(f"alignment vector must be 1-d and non-empty, got shape {a.shape}")
    return a[None, :]


def check_retrieval_basin(spec: KernelSpec, n: int) -> str | None:
    """Return a warning message when an LSR kernel has b <= 1 at dimension n
    (no nontrivial retrieval basin); None otherwise."""
    if spec.kind != "lsr":
        return None
    b = spec.b_for(n)
    if b > 1.0:
        return None
    return (
        f"lsr kernel has b = {b:g} <= 1 at N = {n}: "
        "no nontrivial retrieval basin"
    )
