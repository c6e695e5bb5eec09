"""Conformally weighted stiffness/mass pairs and the discrete Hodge decomposition.

Under the metric ``h^2 g`` the L2 norm of a p-form picks up the weight
``h^(n-2p)``, so the quadratic form of ``|d w|^2`` carries ``h^(n-2p-2)``.
Masses are diagonal (lumped); the weight on a cell is the Hodge star of the
reference geometry times the power of the arithmetic mean of ``h`` over the
cell's vertices.  With these choices ``S_p = D_p^T M_{p+1} D_p`` and the
cochain complex is a Hilbert complex for every positive profile.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .complex import CellComplex, ComplexError

__all__ = [
    "ConformalProfile",
    "DiscreteLaplacian",
    "FormVector",
    "HodgeError",
    "assemble_laplacian",
    "conformal_mass",
    "conformal_volume",
    "hodge_decompose",
    "full_laplacian",
    "write_triplets",
]


class HodgeError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class ConformalProfile:
    """Positive conformal factor sampled on vertices (or on a 1D grid)."""

    samples: np.ndarray
    floor: float | None = None
    tag: str = ""

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or s.size == 0:
            raise ComplexError("profile samples must be a nonempty 1D array")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise ComplexError("profile samples must be finite and positive")
        object.__setattr__(self, "samples", s)
        if self.floor is None:
            object.__setattr__(self, "floor", float(s.min()))
        elif self.floor <= 0 or s.min() < self.floor * (1 - 1e-12):
            raise ComplexError("profile samples fall below the declared floor")

    @classmethod
    def constant(cls, K: CellComplex, c: float = 1.0) -> "ConformalProfile":
        return cls(np.full(K.n_cells(0), float(c)), tag=f"const({c:g})")

    @classmethod
    def from_function(cls, K: CellComplex, fn: Callable[[np.ndarray], np.ndarray],
                      tag: str = "fn") -> "ConformalProfile":
        return cls(np.asarray(fn(K.coords), dtype=float), tag=tag)

    def scaled(self, c: float) -> "ConformalProfile":
        return ConformalProfile(self.samples * c, self.floor * c, f"{c:g}*{self.tag}")

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class FormVector:
    degree: int
    coefficients: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coefficients",
                           np.asarray(self.coefficients, dtype=float))


@dataclass(frozen=True, eq=False)
class DiscreteLaplacian:
    """Stiffness ``S`` (of ``|dw|^2``) and diagonal mass for degree p."""

    degree: int
    stiffness: sp.csr_matrix
    mass: np.ndarray
    ambient_dim: int
    d: sp.csr_matrix = field(repr=False)
    upper_mass: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.mass.size

    def rayleigh(self, w: np.ndarray) -> float:
        w = np.asarray(w, dtype=float)
        return float(w @ (self.stiffness @ w) / (w @ (self.mass * w)))


def _check_profile(K: CellComplex, h: ConformalProfile):
    if len(h) != K.n_cells(0):
        raise ComplexError(f"profile has {len(h)} samples, complex has {K.n_cells(0)} vertices")


def conformal_mass(K: CellComplex, h: ConformalProfile, k: int,
                   ambient_dim: int | None = None) -> np.ndarray:
    """Diagonal of the k-form mass matrix under ``h^2 g``."""
    n = K.dimension if ambient_dim is None else ambient_dim
    if not 0 <= k <= K.dimension:
        return np.zeros(0)
    _check_profile(K, h)
    hk = K.vertex_average(k) @ h.samples
    return K.star(k) * hk ** (n - 2 * k)


def assemble_laplacian(K: CellComplex, h: ConformalProfile, p: int,
                       ambient_dim: int | None = None) -> DiscreteLaplacian:
    if not 0 <= p <= K.dimension:
        raise ComplexError(f"degree {p} outside [0, {K.dimension}]")
    n = K.dimension if ambient_dim is None else ambient_dim
    _check_profile(K, h)
    mass = conformal_mass(K, h, p, n)
    D = K.coboundary(p).astype(float)
    upper = conformal_mass(K, h, p + 1, n)
    S = (D.T @ sp.diags(upper) @ D).tocsr() if D.shape[0] else sp.csr_matrix((mass.size,) * 2)
    return DiscreteLaplacian(p, S, mass, n, D.tocsr(), upper)


def full_laplacian(K: CellComplex, h: ConformalProfile, p: int,
                   ambient_dim: int | None = None) -> tuple[sp.csr_matrix, np.ndarray]:
    """Symmetric form of ``d delta + delta d`` on p-forms, with its mass."""
    L = assemble_laplacian(K, h, p, ambient_dim)
    A = L.stiffness
    if p > 0:
        lower = conformal_mass(K, h, p - 1, ambient_dim)
        Dm = K.coboundary(p - 1).astype(float)
        B = sp.diags(L.mass) @ Dm
        A = A + B @ sp.diags(1.0 / lower) @ B.T
    return sp.csr_matrix(A), L.mass


def conformal_volume(K: CellComplex, h: ConformalProfile,
                     ambient_dim: int | None = None) -> float:
    n = K.dimension if ambient_dim is None else ambient_dim
    _check_profile(K, h)
    top = K.vertex_average(K.dimension) @ h.samples
    return float(np.sum(K.top_measure() * top ** n))


def _weighted_lstsq(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    return x


def hodge_decompose(K: CellComplex, h: ConformalProfile, p: int, omega,
                    ambient_dim: int | None = None, tol: float = 1e-9):
    """Split ``omega = d alpha + delta beta + gamma`` orthogonally in the h-metric.

    Returns three FormVectors (exact, coexact, harmonic).  Dense; meant for
    desk-scale complexes.
    """
    w = omega.coefficients if isinstance(omega, FormVector) else np.asarray(omega, float)
    if w.shape != (K.n_cells(p),):
        raise ComplexError("form length does not match the number of p-cells")
    n = K.dimension if ambient_dim is None else ambient_dim
    M = conformal_mass(K, h, p, n)
    sq = np.sqrt(M)
    wt = sq * w

    exact = np.zeros_like(w)
    if p > 0:
        # range of D_{p-1}, in the sqrt(M)-scaled coordinates
        B = sq[:, None] * K.coboundary(p - 1).toarray()
        exact = _weighted_lstsq(B, wt)
        exact = (B @ exact) / sq
    coexact = np.zeros_like(w)
    if p < K.dimension:
        Mu = conformal_mass(K, h, p + 1, n)
        # range of delta = M^-1 D^T Mu, i.e. orthogonal complement of ker D
        C = (K.coboundary(p).toarray().T * np.sqrt(Mu)[None, :]) / sq[:, None]
        y = _weighted_lstsq(C, wt)
        coexact = (C @ y) / sq
    harmonic = w - exact - coexact

    Lap, _ = full_laplacian(K, h, p, n)
    scale = spla.norm(Lap) * np.linalg.norm(harmonic)
    res = np.linalg.norm(Lap @ harmonic) / scale if scale > 0 else 0.0
    significant = np.linalg.norm(sq * harmonic) > 1e-10 * max(np.linalg.norm(wt), 1e-300)
    if significant and res > tol:
        raise HodgeError("harmonic part is not in the Laplacian kernel", residual=float(res))
    return FormVector(p, exact), FormVector(p, coexact), FormVector(p, harmonic)


def write_triplets(L: DiscreteLaplacian, filename) -> None:
    """Debug export: ``i j value`` for S, then the mass diagonal as ``i i value``."""
    S = L.stiffness.tocoo()
    with open(filename, "w") as fh:
        fh.write(f"# degree {L.degree} ambient {L.ambient_dim} size {L.size}\n# stiffness\n")
        for i, j, v in zip(S.row, S.col, S.data):
            fh.write(f"{i} {j} {v!r}\n")
        fh.write("# mass\n")
        for i, v in enumerate(L.mass):
            fh.write(f"{i} {i} {v!r}\n")
