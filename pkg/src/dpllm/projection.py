"""Johnson-Lindenstrauss random projections shared across classes.

Each filter index ``m`` owns one matrix ``R_m`` of shape ``(proj_dim, input_dim)``
with i.i.d. entries drawn from ``N(0, 1/proj_dim)``.  The matrices are a pure
function of ``(seed, num_filters, proj_dim, input_dim)``; only the seed is ever
persisted.

Stream layout: matrix ``m`` is drawn from a PCG64 generator seeded with
``SeedSequence(seed, spawn_key=(m,))``.  Raw 64-bit outputs are mapped to
53-bit uniforms and turned into normals with the Box-Muller transform, filling
the matrix row-major with (cos, sin) pairs.  The transform is written out here
rather than delegated to ``Generator.standard_normal`` so that the stream does
not depend on numpy's sampler internals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TWO_POW_53 = float(2**53)


def _uniforms(bitgen: np.random.PCG64, n: int) -> np.ndarray:
    raw = bitgen.random_raw(n)
    return (raw >> np.uint64(11)).astype(np.float64) / _TWO_POW_53


def gaussian_stream(seed: int, index: int, n: int) -> np.ndarray:
    """Return ``n`` standard normals from the stream for matrix ``index``."""
    bitgen = np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))
    pairs = (n + 1) // 2
    u = _uniforms(bitgen, 2 * pairs).reshape(pairs, 2)
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1 - u lies in (0, 1]
    angle = 2.0 * np.pi * u[:, 1]
    out = np.empty((pairs, 2))
    out[:, 0] = radius * np.cos(angle)
    out[:, 1] = radius * np.sin(angle)
    return out.reshape(-1)[:n]


@dataclass(frozen=True)
class ProjectionSet:
    """``num_filters`` random matrices, or the identity when ``identity`` is set."""

    seed: int
    num_filters: int
    proj_dim: int
    input_dim: int
    matrices: np.ndarray | None  # (M, D', D); None for the identity map

    @property
    def identity(self) -> bool:
        return self.matrices is None

    def _check_index(self, m_index: int) -> None:
        if not 0 <= m_index < self.num_filters:
            raise IndexError(f"filter index {m_index} out of range [0, {self.num_filters})")

    def matrix(self, m_index: int) -> np.ndarray:
        self._check_index(m_index)
        if self.matrices is None:
            return np.eye(self.input_dim)
        return self.matrices[m_index]

    def project(self, m_index: int, x: np.ndarray) -> np.ndarray:
        """``R_m x`` for a single input vector."""
        self._check_index(m_index)
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise ValueError(f"expected input of length {self.input_dim}, got shape {x.shape}")
        if self.matrices is None:
            return x.copy()
        return self.matrices[m_index] @ x

    def project_batch(self, X: np.ndarray) -> np.ndarray:
        """Project every row through every matrix: ``(N, D) -> (N, M, D')``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected inputs of shape (N, {self.input_dim}), got {X.shape}")
        if self.matrices is None:
            return np.broadcast_to(X[:, None, :], (X.shape[0], self.num_filters, self.input_dim))
        M, P, D = self.matrices.shape
        Z = X @ self.matrices.reshape(M * P, D).T
        return Z.reshape(X.shape[0], M, P)

    def reconstruct_filter(self, m_index: int, m_vec: np.ndarray) -> np.ndarray:
        """Input-space filter ``m_vec^T R_m`` of length ``input_dim``."""
        self._check_index(m_index)
        m_vec = np.asarray(m_vec, dtype=np.float64)
        if m_vec.shape != (self.proj_dim,):
            raise ValueError(f"expected filter of length {self.proj_dim}, got shape {m_vec.shape}")
        if self.matrices is None:
            return m_vec.copy()
        return m_vec @ self.matrices[m_index]

    def reconstruct_all(self, filters: np.ndarray) -> np.ndarray:
        """``(K, M, D') -> (K, M, D)`` input-space filter bank."""
        filters = np.asarray(filters, dtype=np.float64)
        if filters.ndim != 3 or filters.shape[1:] != (self.num_filters, self.proj_dim):
            raise ValueError(
                f"expected filters of shape (K, {self.num_filters}, {self.proj_dim}), got {filters.shape}"
            )
        if self.matrices is None:
            return filters.copy()
        return np.einsum("kmp,mpd->kmd", filters, self.matrices)


def generate(seed: int, num_filters: int, proj_dim: int, input_dim: int) -> ProjectionSet:
    """Draw ``num_filters`` Gaussian matrices with entry variance ``1/proj_dim``."""
    for name, value in (("num_filters", num_filters), ("proj_dim", proj_dim), ("input_dim", input_dim)):
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")
    scale = 1.0 / np.sqrt(proj_dim)
    mats = np.empty((num_filters, proj_dim, input_dim))
    for m in range(num_filters):
        mats[m] = gaussian_stream(seed, m, proj_dim * input_dim).reshape(proj_dim, input_dim) * scale
    return ProjectionSet(int(seed), num_filters, proj_dim, input_dim, mats)


def identity(num_filters: int, input_dim: int, seed: int = 0) -> ProjectionSet:
    """Projection set for models trained without random projections."""
    if num_filters < 1 or input_dim < 1:
        raise ValueError("dimensions must be >= 1")
    return ProjectionSet(int(seed), num_filters, input_dim, input_dim, None)
