"""One-dimensional weighted problems ``-(w1 f')' = lam w0 f`` for invariant forms.

Linear finite elements with a lumped mass; both weights are evaluated at
edge midpoints.  Pinched weights span many orders of magnitude, so the
eigenvalues are not taken from the pencil directly: the inverse of a path
Laplacian is an explicit resistance kernel built from positive sums, and the
smallest eigenvalues are the reciprocals of the largest eigenvalues of that
kernel.  This keeps them accurate relative to their own size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .eigen import DEFAULT_TOL, SolverError, SpectrumSlice
from .hodge import ConformalProfile

__all__ = [
    "RadialProblem",
    "cylinder_operator",
    "pinch_operator",
    "radial_spectrum",
    "MIN_RESOLUTION",
]

MIN_RESOLUTION = 16
BOUNDARY_CONDITIONS = ("neumann", "dirichlet_right")


class RadialError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RadialProblem:
    """Grid nodes plus stiffness/mass densities sampled at edge midpoints."""

    n: int
    p: int
    grid: np.ndarray
    w1: np.ndarray
    w0: np.ndarray
    bc: str = "neumann"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        w1 = np.asarray(self.w1, dtype=float)
        w0 = np.asarray(self.w0, dtype=float)
        if g.ndim != 1 or g.size < 3 or np.any(np.diff(g) <= 0):
            raise RadialError("grid must be strictly increasing with at least 3 nodes")
        if w1.shape != (g.size - 1,) or w0.shape != (g.size - 1,):
            raise RadialError("weights must have one value per grid edge")
        if np.any(~(w1 > 0)) or np.any(~(w0 > 0)):
            raise RadialError("weights must be positive on every edge")
        if self.bc not in BOUNDARY_CONDITIONS:
            raise RadialError(f"boundary condition must be one of {BOUNDARY_CONDITIONS}")
        for name, val in (("grid", g), ("w1", w1), ("w0", w0)):
            object.__setattr__(self, name, val)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.grid[1:] + self.grid[:-1])

    @property
    def conductance(self) -> np.ndarray:
        return self.w1 / np.diff(self.grid)

    @property
    def free(self) -> int:
        """Number of unknowns after boundary conditions."""
        return self.grid.size - (self.bc == "dirichlet_right")

    def mass(self) -> np.ndarray:
        half = 0.5 * self.w0 * np.diff(self.grid)
        m = np.zeros(self.grid.size)
        m[:-1] += half
        m[1:] += half
        return m[: self.free]

    def stiffness(self) -> sp.csr_matrix:
        k = self.conductance
        N = self.grid.size
        main = np.zeros(N)
        main[:-1] += k
        main[1:] += k
        S = sp.diags([main, -k, -k], [0, 1, -1], format="csr")
        return S[: self.free, : self.free].tocsr()

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Discrete ``-(w1 f')' / w0`` on the free nodes."""
        return (self.stiffness() @ f[: self.free]) / self.mass()


def _midpoint_values(h, grid: np.ndarray) -> np.ndarray:
    if isinstance(h, ConformalProfile):
        if len(h) != grid.size:
            raise RadialError("profile samples must match the grid")
        return 0.5 * (h.samples[1:] + h.samples[:-1])
    vals = np.asarray(h(0.5 * (grid[1:] + grid[:-1])), dtype=float)
    if np.any(~(vals > 0)):
        raise RadialError("profile must be positive")
    return vals


def cylinder_operator(n: int, p: int, h: ConformalProfile | Callable, m: int) -> RadialProblem:
    """Invariant p-forms ``f(t) dv`` on a cylinder over [0,1] under ``h(t)^2 g``."""
    if not 1 <= p <= n - 2:
        raise RadialError(f"cylinder operator needs 1 <= p <= n-2, got p={p}, n={n}")
    if m < MIN_RESOLUTION:
        raise RadialError(f"resolution {m} below {MIN_RESOLUTION}")
    grid = np.linspace(0.0, 1.0, m)
    hm = _midpoint_values(h, grid)
    return RadialProblem(n, p, grid, hm ** (n - 2 * p - 2), hm ** (n - 2 * p), "neumann")


class _PinchLike(Protocol):
    n: int
    p: int
    R: float
    resolution: int

    def h(self, r: np.ndarray) -> np.ndarray: ...

    def transverse_density(self, r: np.ndarray) -> np.ndarray: ...


def pinch_operator(params: _PinchLike, degree: int | None = None) -> RadialProblem:
    """Radial problem on the pinched ball, ``f(R) = 0``.

    ``degree`` overrides the form degree in the weight exponents (the
    transverse density keeps the ball's own dimension).
    """
    q = params.p if degree is None else degree
    if params.resolution < MIN_RESOLUTION:
        raise RadialError(f"resolution {params.resolution} below {MIN_RESOLUTION}")
    grid = np.linspace(0.0, params.R, params.resolution)
    mid = 0.5 * (grid[1:] + grid[:-1])
    hm = params.h(mid)
    v = params.transverse_density(mid)
    n = params.n
    return RadialProblem(n, q, grid, hm ** (n - 2 * q - 2) * v, hm ** (n - 2 * q) * v,
                         "dirichlet_right")


def _grounded_green(R: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply the path Green kernel ``G_ij = R[max(i, j)]`` (ground past the end)."""
    # y_i = R_i * sum_{j<=i} x_j + sum_{j>i} R_j x_j
    c = np.cumsum(x, axis=0)
    tail = np.cumsum((R[:, None] * x)[::-1], axis=0)[::-1]
    tail = np.vstack([tail[1:], np.zeros((1, x.shape[1]))])
    return R[:, None] * c + tail


def _green_operator(prob: RadialProblem):
    """Symmetric ``M^1/2 G M^1/2`` where ``G`` inverts the stiffness.

    Dirichlet data ground the right end and ``G`` is the exact inverse.  For
    Neumann data the path is grounded at the node splitting the mass in half
    (so no large resistance offset has to cancel) and ``G`` is sandwiched by
    the mass-weighted mean projector, which sends the constant mode to zero.
    """
    inv_k = 1.0 / prob.conductance
    M = prob.mass()
    N = prob.free
    sq = np.sqrt(M)
    neumann = prob.bc == "neumann"
    total = M.sum()
    if neumann:
        g = int(np.clip(np.searchsorted(np.cumsum(M), 0.5 * total), 1, N - 2))
        R_left = np.cumsum(inv_k[:g][::-1])[::-1]          # nodes 0..g-1
        R_right = np.cumsum(inv_k[g:])                      # nodes g+1..N-1, from g outwards
    else:
        R_all = np.cumsum(inv_k[::-1])[::-1]                # nodes 0..N-1

    def green(x):
        if not neumann:
            return _grounded_green(R_all, x)
        y = np.zeros_like(x)
        y[:g] = _grounded_green(R_left, x[:g])
        y[g + 1:] = _grounded_green(R_right[::-1], x[g + 1:][::-1])[::-1]
        return y

    def matvec(y):
        y = np.asarray(y, dtype=float).reshape(N, -1)
        x = sq[:, None] * y
        if neumann:
            x = x - M[:, None] * (x.sum(axis=0) / total)
        z = green(x)
        if neumann:
            z = z - (M @ z) / total
        return sq[:, None] * z

    return spla.LinearOperator((N, N), matvec=matvec, matmat=matvec, dtype=float)


def radial_spectrum(prob: RadialProblem, m_eigs: int, tol: float = DEFAULT_TOL,
                    dense_threshold: int = 400) -> SpectrumSlice:
    """Smallest ``m_eigs`` nonzero eigenvalues with reciprocal-Lanczos accuracy."""
    if prob.grid.size < MIN_RESOLUTION:
        raise RadialError(f"resolution {prob.grid.size} below {MIN_RESOLUTION}")
    harmonic = 1 if prob.bc == "neumann" else 0
    N = prob.free
    if m_eigs < 1 or m_eigs > N - harmonic:
        raise SolverError(f"cannot return {m_eigs} eigenvalues from {N - harmonic} modes")
    B = _green_operator(prob)
    if N <= dense_threshold or m_eigs > N // 4:
        Bd = B.matmat(np.eye(N))
        Bd = 0.5 * (Bd + Bd.T)
        theta, Y = sla.eigh(Bd, subset_by_index=[N - m_eigs, N - 1])
    else:
        v0 = 1.0 + 0.5 * np.cos(0.7 * np.arange(N))
        try:
            theta, Y = spla.eigsh(B, k=m_eigs, which="LA", v0=v0, tol=0,
                                  ncv=min(N, max(2 * m_eigs + 1, 20)))
        except spla.ArpackNoConvergence as exc:
            raise SolverError("Lanczos on the radial resolvent did not converge") from exc
    order = np.argsort(theta)[::-1]
    theta, Y = theta[order], Y[:, order]
    if np.any(theta <= 0):
        raise SolverError("radial resolvent lost positivity")
    top = theta[0]
    res = np.linalg.norm(B.matmat(Y) - Y * theta[None, :], axis=0) / (top * np.linalg.norm(Y, axis=0))
    if np.any(res > tol):
        raise SolverError(f"radial eigenpair residual {res.max():.3e} exceeds {tol:.1e}",
                          residual=float(res.max()))
    return SpectrumSlice(prob.p, 1.0 / theta, harmonic, res)
