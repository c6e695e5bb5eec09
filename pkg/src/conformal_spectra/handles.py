"""Thin handles joining two complexes, and convergence toward the union spectrum.

After the conformal change ``eps/r`` the punctured annulus around an
attachment point is a cylinder of length ``L`` and radius ``eps``.  The glued
surrogate therefore uses the cylinder directly: a chain of ``resolution``
edges of total length ``L`` whose cells carry the cross-section measure
``omega_{n-1} eps^(n-1)`` and profile 1.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .complex import CellComplex, ComplexError, _int_csr, _share_dual_volumes
from .eigen import coexact_spectrum
from .hodge import ConformalProfile

__all__ = [
    "HandleSpec",
    "handle_profile",
    "sphere_area",
    "glue_complexes",
    "union_spectrum",
    "handle_sweep",
    "HandleReport",
]


def sphere_area(d: int) -> float:
    """Volume of the unit round ``d``-sphere."""
    return 2.0 * math.pi ** ((d + 1) / 2) / math.gamma((d + 1) / 2)


def handle_profile(eps: float, L: float, r) -> np.ndarray:
    """``eps/r`` on ``[eps e^(-L/eps), eps]`` and ``e^(L/eps)`` closer to the centre."""
    if eps <= 0 or L <= 0:
        raise ComplexError("handle radius and length must be positive")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > eps * (1 + 1e-12)):
        raise ComplexError("handle profile is defined on [0, eps]")
    inner = eps * math.exp(-L / eps)
    with np.errstate(divide="ignore"):
        return np.where(r >= inner, eps / np.where(r > 0, r, 1.0), math.exp(L / eps))


@dataclass(frozen=True)
class HandleSpec:
    eps: float
    L: float
    attach_left: int = 0
    attach_right: int = 0
    resolution: int = 8
    ambient_dim: int = 3
    blend: bool = False

    def __post_init__(self):
        if not (self.eps > 0 and self.L > 0):
            raise ComplexError("handle radius and length must be positive")
        if self.resolution < 1:
            raise ComplexError("handle needs at least one cell")
        if self.ambient_dim < 2:
            raise ComplexError("ambient dimension must be at least 2")

    @property
    def cross_section(self) -> float:
        n = self.ambient_dim
        return sphere_area(n - 1) * self.eps ** (n - 1)


def glue_complexes(K1: CellComplex, K2: CellComplex, spec: HandleSpec | None,
                   h1: ConformalProfile | None = None, h2: ConformalProfile | None = None
                   ) -> tuple[CellComplex, ConformalProfile]:
    """Disjoint union of two 1-complexes joined by a weighted handle chain.

    ``spec=None`` returns the bare disjoint union (the removed-handle limit).
    With ``spec.blend`` the two end cells of the chain average the chain and
    attachment measures, a one-cell smoothing of the step in the metric.
    """
    if K1.dimension != K2.dimension:
        raise ComplexError("glued complexes must have the same dimension")
    if K1.dimension != 1:
        raise ComplexError("handle chains join 1-dimensional complexes")
    h1 = h1 or ConformalProfile.constant(K1)
    h2 = h2 or ConformalProfile.constant(K2)
    N1, N2 = K1.n_cells(0), K2.n_cells(0)
    E1, E2 = K1.n_cells(1), K2.n_cells(1)
    if spec is not None and not (0 <= spec.attach_left < N1 and 0 <= spec.attach_right < N2):
        raise ComplexError("attachment vertex does not exist")
    r = 0 if spec is None else spec.resolution
    interior = max(r - 1, 0)
    nv = N1 + N2 + interior
    ne = E1 + E2 + r

    rows, cols, vals = [], [], []
    for K, voff, eoff in ((K1, 0, 0), (K2, N1, E1)):
        B = K.boundary[1].tocoo()
        rows += list(B.row + voff)
        cols += list(B.col + eoff)
        vals += list(B.data)
    vol1 = [K1.volumes[1], K2.volumes[1]]
    dens1 = [K1.density[1], K2.density[1]]
    chain = []
    if spec is not None:
        chain = [spec.attach_left] + [N1 + N2 + i for i in range(interior)] + [N1 + spec.attach_right]
        for i in range(r):
            rows += [chain[i], chain[i + 1]]
            cols += [E1 + E2 + i] * 2
            vals += [-1, 1]
        w = np.full(r, spec.cross_section)
        if spec.blend:
            w[0] = 0.5 * (w[0] + K1.density[0][spec.attach_left])
            w[-1] = 0.5 * (w[-1] + K2.density[0][spec.attach_right])
        vol1.append(np.full(r, spec.L / r))
        dens1.append(w)
    bd1 = _int_csr(sp.coo_matrix((vals, (rows, cols)), shape=(nv, ne)))
    volumes = (np.ones(nv), np.concatenate(vol1))
    bd = (sp.csr_matrix((0, nv), dtype=np.int64), bd1)
    duals = _share_dual_volumes(1, bd, volumes)
    density1 = np.concatenate(dens1)
    # vertex measure = half the measure of every incident edge
    inc = abs(bd1).astype(float)
    vertex_measure = inc @ (density1 * volumes[1]) / 2.0
    density0 = vertex_measure / duals[0]
    coords = np.concatenate([K1.coords[:, :1], K2.coords[:, :1] + 10.0,
                             np.zeros((interior, 1))])
    if spec is not None:
        coords[N1 + N2:, 0] = -1.0 - np.arange(1, interior + 1) * spec.L / r
    cells = (tuple(range(nv)), tuple(range(ne)))
    name = f"{K1.name}+{K2.name}" + ("" if spec is None else f"~h({spec.eps:g})")
    K = CellComplex(1, cells, bd, volumes, tuple(duals), coords,
                    (density0, density1), name)
    h = ConformalProfile(np.concatenate([h1.samples, h2.samples, np.ones(interior)]),
                         tag="glued")
    return K, h


def union_spectrum(K1: CellComplex, K2: CellComplex, m: int, ambient_dim: int,
                   h1: ConformalProfile | None = None, h2: ConformalProfile | None = None
                   ) -> np.ndarray:
    """Sorted multiset union of the two degree-0 spectra, zeros included."""
    h1 = h1 or ConformalProfile.constant(K1)
    h2 = h2 or ConformalProfile.constant(K2)
    a = coexact_spectrum(K1, h1, 0, min(m, K1.boundary_rank(1)), ambient_dim=ambient_dim).values
    b = coexact_spectrum(K2, h2, 0, min(m, K2.boundary_rank(1)), ambient_dim=ambient_dim).values
    zeros = np.zeros(K1.n_cells(0) - K1.boundary_rank(1) + K2.n_cells(0) - K2.boundary_rank(1))
    return np.sort(np.concatenate([zeros, a, b]))


@dataclass
class HandleReport:
    eps: list[float]
    glued: list[np.ndarray]
    union: np.ndarray
    deviation: list[float]
    m: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "index", "glued", "union", "rel_deviation"])
        for e, g in zip(self.eps, self.glued):
            for i, (x, y) in enumerate(zip(g, self.union), 0):
                dev = abs(x - y) / y if y > 0 else abs(x)
                w.writerow([repr(e), i, repr(float(x)), repr(float(y)), repr(float(dev))])
        return buf.getvalue()


def handle_sweep(K1: CellComplex, K2: CellComplex, eps_list, m: int = 4, *, L: float = 0.05,
                 resolution: int = 8, ambient_dim: int = 3, attach_left: int = 0,
                 attach_right: int = 0, degrees=(0,), blend: bool = False) -> HandleReport:
    """Glue at each ``eps`` and compare the first ``m`` nonzero union values.

    Both spectra are aligned with zeros included: the union carries two
    zeros, the glued complex one zero plus a small value that vanishes with
    ``eps``.  Deviations are taken on the ``m`` values after the zeros.
    """
    eps = [float(e) for e in eps_list]
    if not eps or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ComplexError("eps list must be nonempty and strictly decreasing")
    if tuple(degrees) != (0,):
        raise ComplexError("handle chains carry functions only; use degrees (0,)")
    union = union_spectrum(K1, K2, m + 2, ambient_dim)
    zeros = int(np.sum(union == 0))
    ref = union[: zeros + m]
    glued, devs = [], []
    for e in eps:
        spec = HandleSpec(e, L, attach_left, attach_right, resolution, ambient_dim, blend)
        K, h = glue_complexes(K1, K2, spec)
        vals = coexact_spectrum(K, h, 0, zeros + m - 1, ambient_dim=ambient_dim).values
        full = np.concatenate([np.zeros(1), vals])
        glued.append(full)
        devs.append(float(np.max(np.abs(full[zeros:] - ref[zeros:]) / ref[zeros:])))
    return HandleReport(eps, glued, ref, devs, m)
