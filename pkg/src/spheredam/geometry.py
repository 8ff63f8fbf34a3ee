"""Sphere-constrained states, stored patterns, and alignment products.

Every vector lives on the sphere of squared radius N (``||x||^2 = N``).
The alignment of a state with pattern ``mu`` is ``(x . xi_mu) / N``: the
retrieval order parameter, 1 at perfect recall and O(1/sqrt(N)) between
independent vectors.

The alignment product against the full pattern matrix is the hot kernel
of the whole simulator (O(N*M) per Monte Carlo step), so patterns are
stored pattern-contiguous and the batched variants below map onto single
BLAS calls.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

# ||x||^2 = N is enforced to this relative tolerance on construction; an
# order of magnitude above double-precision accumulation error at N ~ 1e3.
NORM_RTOL = 1e-10
# Constructed alignments (near-pattern initialization) hold to this.
ALIGNMENT_ATOL = 1e-8
# Residual threshold below which an orthogonalized draw is discarded.
_DEGENERATE_RESIDUAL = 1e-12

_DUMP_MAGIC = int.from_bytes(b"PATNSPHR", "little")
_DUMP_VERSION = 1

# Alignment vectors are plain float64 arrays of length M, entries in [-1, 1]
# up to ~1e-9 floating-point slack.
AlignmentVector = np.ndarray


@dataclass(frozen=True, eq=False)
class SphereState:
    """An N-vector constrained to the sphere of radius sqrt(N).

    Immutable after construction; the underlying array is marked read-only
    so instances can be shared freely across workers.
    """

    components: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.components, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"state must be a 1-d vector, got shape {x.shape}")
        n = x.size
        if n < 2:
            raise ValueError(f"state dimension must be >= 2, got {n}")
        norm2 = float(np.sum(x * x))
        if abs(norm2 / n - 1.0) > NORM_RTOL:
            raise ValueError(
                f"state is off the sphere: ||x||^2 = {norm2!r}, expected {n}"
            )
        x.setflags(write=False)
        object.__setattr__(self, "components", x)

    @property
    def dim(self) -> int:
        return self.components.size


@dataclass(frozen=True, eq=False)
class PatternSet:
    """N x M matrix of stored patterns, one pattern per column.

    Columns are kept contiguous in memory (Fortran order) so the alignment
    product streams the matrix linearly. Immutable after construction.
    """

    data: np.ndarray

    def __post_init__(self):
        a = np.asfortranarray(self.data, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"pattern data must be 2-d, got shape {a.shape}")
        n, m = a.shape
        if n < 2:
            raise ValueError(f"pattern dimension must be >= 2, got {n}")
        if m < 1:
            raise ValueError(f"pattern count must be >= 1, got {m}")
        norm2 = np.sum(a * a, axis=0)
        bad = np.abs(norm2 / n - 1.0) > NORM_RTOL
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise ValueError(
                f"pattern {j} is off the sphere: ||xi||^2 = {norm2[j]!r}, expected {n}"
            )
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def count(self) -> int:
        return self.data.shape[1]

    def pattern(self, index: int) -> SphereState:
        """Pattern ``index`` as a SphereState (zero-copy view)."""
        return SphereState(self.data[:, index])


def sample_patterns(n: int, m: int, seed) -> PatternSet:
    """Draw m independent patterns uniform on the radius-sqrt(n) sphere.

    Standard-normal vectors renormalized to norm sqrt(n); deterministic
    given the seed (an int, SeedSequence, or Generator).
    """
    if n < 2:
        raise ValueError(f"dimension must be >= 2, got {n}")
    if m < 1:
        raise ValueError(f"pattern count must be >= 1, got {m}")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((m, n))
    norm2 = np.sum(raw * raw, axis=1)
    while (norm2 == 0.0).any():  # probability-zero guard
        dead = np.flatnonzero(norm2 == 0.0)
        raw[dead] = rng.standard_normal((dead.size, n))
        norm2 = np.sum(raw * raw, axis=1)
    raw *= np.sqrt(n / norm2)[:, None]
    return PatternSet(raw.T)


def random_orthogonal_unit(reference: SphereState, rng: np.random.Generator) -> np.ndarray:
    """Random unit vector orthogonal to ``reference``.

    Isotropic draw, reference component projected out, renormalized.
    Degenerate draws (residual below 1e-12) are resampled internally;
    never fails for dimension >= 2.
    """
    x = reference.components
    n = x.size
    while True:
        v = rng.standard_normal(n)
        v = v - (float(v @ x) / n) * x
        resid2 = float(np.sum(v * v))
        if resid2 > _DEGENERATE_RESIDUAL**2:
            return v / np.sqrt(resid2)


def init_near_pattern(pattern: SphereState, phi_init: float, rng: np.random.Generator) -> SphereState:
    """State at prescribed alignment phi_init with ``pattern``.

    Constructed as phi*xi + sqrt(1 - phi^2) * sqrt(N) * u with u a random
    unit vector orthogonal to xi, so the norm is exactly preserved and the
    measured alignment equals phi_init to within ALIGNMENT_ATOL.
    """
    if not 0.0 < phi_init <= 1.0:
        raise ValueError(f"phi_init must lie in (0, 1], got {phi_init}")
    xi = pattern.components
    n = xi.size
    u = random_orthogonal_unit(pattern, rng)
    x = phi_init * xi + (np.sqrt(1.0 - phi_init * phi_init) * np.sqrt(n)) * u
    return SphereState(x)


def alignments(state: SphereState, patterns: PatternSet) -> AlignmentVector:
    """Alignment of ``state`` with every stored pattern: (x . xi_mu)/N."""
    if state.dim != patterns.dim:
        raise ValueError(
            f"dimension mismatch: state has {state.dim}, patterns have {patterns.dim}"
        )
    return (patterns.data.T @ state.components) / state.dim


def alignments_batch(states: np.ndarray, patterns: PatternSet) -> np.ndarray:
    """Alignments of many states (rows of a K x N array) in one product.

    Returns the K x M matrix of alignments via a single matrix-matrix
    multiply; row k equals alignments(states[k], patterns) to within
    accumulation error (<= ~1e-12 * N).
    """
    s = np.asarray(states, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != patterns.dim:
        raise ValueError(
            f"states must be K x {patterns.dim}, got shape {s.shape}"
        )
    return (s @ patterns.data) / patterns.dim


def renormalize(v: np.ndarray) -> SphereState:
    """Rescale v onto the sphere: sqrt(N) * v / ||v||. Direction preserved."""
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {x.shape}")
    norm2 = float(np.sum(x * x))
    if norm2 == 0.0:
        raise ValueError("cannot renormalize the zero vector")
    return SphereState(x * np.sqrt(x.size / norm2))


def save_patterns(patterns: PatternSet, path) -> None:
    """Binary dump: magic, version, N, M as little-endian uint64, then the
    N x M matrix as row-major float64."""
    n, m = patterns.data.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQQQ", _DUMP_MAGIC, _DUMP_VERSION, n, m))
        fh.write(np.ascontiguousarray(patterns.data).tobytes())


def load_patterns(path) -> PatternSet:
    """Read a dump written by save_patterns; validates header and norms."""
    with open(path, "rb") as fh:
        header = fh.read(32)
        if len(header) != 32:
            raise ValueError(f"{path}: truncated header")
        magic, version, n, m = struct.unpack("<QQQQ", header)
        if magic != _DUMP_MAGIC:
            raise ValueError(f"{path}: bad magic {magic:#x}")
        if version != _DUMP_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        payload = fh.read(8 * n * m)
    if len(payload) != 8 * n * m:
        raise ValueError(f"{path}: truncated payload")
    data = np.frombuffer(payload, dtype="<f8").reshape(n, m)
    return PatternSet(data)
