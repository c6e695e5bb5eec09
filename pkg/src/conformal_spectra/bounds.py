"""Eigenvalue comparison under quasi-isometry, and lower bounds from covers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .complex import CellComplex, ComplexError, build_complex
from .eigen import coexact_spectrum
from .hodge import ConformalProfile, conformal_volume

__all__ = [
    "BoundError",
    "CoverData",
    "GlueData",
    "McGowanResult",
    "DodziukCheck",
    "dodziuk_interval",
    "dodziuk_check",
    "mcgowan_bound",
    "gluing_bound",
    "partition_gradient_bound",
    "load_cover",
    "split_cylinder",
]


class BoundError(ValueError):
    pass


def dodziuk_interval(lam: float, tau: float, n: int) -> tuple[float, float]:
    """``[lam tau^-(3n-1), lam tau^(3n-1)]`` for metrics with ``g/tau <= g~ <= tau g``."""
    if not tau >= 1:
        raise BoundError(f"quasi-isometry ratio must be >= 1, got {tau}")
    if lam < 0:
        raise BoundError("eigenvalue must be nonnegative")
    e = 3 * n - 1
    return lam * tau ** (-e), lam * tau ** e


@dataclass
class DodziukCheck:
    tau: float
    n: int
    trials: int
    ratios_min: float
    ratios_max: float
    violations: int
    compared: int
    rows: list[tuple[int, str, int, int, float, float, float]] = field(default_factory=list)


def dodziuk_check(tau: float, n: int, trials: int, rng: np.random.Generator,
                  complexes=("cycle:6*cycle:6", "simplex:4", "cycle:5*path:4"),
                  m: int = 4) -> DodziukCheck:
    """Random pairs ``h``, ``h~ = h r`` with ``r^2`` in ``[1/tau, tau]``.

    Every coexact eigenvalue ratio (index by index, every degree below the
    top) is tested against the interval.  ``n`` is the ambient dimension used
    for the conformal weights.
    """
    if trials < 1:
        raise BoundError("trials must be positive")
    lo, hi = dodziuk_interval(1.0, tau, n)
    Ks = [build_complex(c) if isinstance(c, str) else c for c in complexes]
    rmin, rmax, bad, count = math.inf, -math.inf, 0, 0
    rows = []
    for t in range(trials):
        K = Ks[t % len(Ks)]
        h = ConformalProfile(rng.uniform(0.5, 2.0, K.n_cells(0)))
        r = np.exp(rng.uniform(-0.5, 0.5, K.n_cells(0)) * math.log(tau))
        ht = ConformalProfile(h.samples * r)
        for p in range(K.dimension):
            mm = min(m, K.boundary_rank(p + 1))
            a = coexact_spectrum(K, h, p, mm, ambient_dim=n).values
            b = coexact_spectrum(K, ht, p, mm, ambient_dim=n).values
            ratio = b / a
            for i, (x, y, q) in enumerate(zip(a, b, ratio), 1):
                rows.append((t, K.name, p, i, float(x), float(y), float(q)))
            count += ratio.size
            bad += int(np.sum((ratio < lo) | (ratio > hi)))
            rmin, rmax = min(rmin, ratio.min()), max(rmax, ratio.max())
    return DodziukCheck(tau, n, trials, float(rmin), float(rmax), bad, count, rows)


def partition_gradient_bound(width: float) -> float:
    """``sup |grad rho|^2`` for a piecewise-linear partition over an overlap of ``width``."""
    if width <= 0:
        raise BoundError("overlap width must be positive")
    return 1.0 / width ** 2


@dataclass(frozen=True)
class CoverData:
    """First coexact values of a two-fold cover and its pairwise overlaps.

    ``intersections`` maps an unordered pair ``(i, j)`` with ``i < j`` to
    ``(mu_ij, harmonic_dim)``: the degree ``q-1`` value on the overlap and the
    dimension of its degree-``q`` harmonic space.
    """

    degree: int
    mu_domains: tuple[float, ...]
    intersections: dict[tuple[int, int], tuple[float, int]]
    c_rho: float

    def __post_init__(self):
        if not self.mu_domains:
            raise BoundError("cover must have at least one domain")
        if any(not (m > 0) for m in self.mu_domains):
            raise BoundError("domain eigenvalues must be positive")
        if not self.c_rho >= 0:
            raise BoundError("c_rho must be nonnegative")
        K = len(self.mu_domains)
        clean = {}
        for (i, j), (mu, hd) in self.intersections.items():
            if i == j or not (0 <= i < K and 0 <= j < K):
                raise BoundError(f"invalid intersection pair {(i, j)}")
            key = (min(i, j), max(i, j))
            if key in clean:
                raise BoundError(f"duplicate intersection {key}")
            if not mu > 0 or hd < 0 or int(hd) != hd:
                raise BoundError(f"invalid data on intersection {key}")
            clean[key] = (float(mu), int(hd))
        object.__setattr__(self, "intersections", clean)
        object.__setattr__(self, "mu_domains", tuple(float(m) for m in self.mu_domains))

    def neighbours(self, i: int) -> list[int]:
        return sorted({b if a == i else a for a, b in self.intersections if i in (a, b)})

    @classmethod
    def from_json(cls, data: dict) -> "CoverData":
        try:
            c_rho = data.get("c_rho")
            if c_rho is None:
                c_rho = partition_gradient_bound(float(data["overlap_width"]))
            inter = {tuple(e["pair"]): (float(e["mu"]), int(e.get("harmonic_dim", 0)))
                     for e in data.get("intersections", [])}
            return cls(int(data["degree"]), tuple(data["mu_domains"]), inter, float(c_rho))
        except (KeyError, TypeError) as exc:
            raise BoundError(f"malformed cover config: {exc}") from exc


def load_cover(filename: str | Path) -> tuple[CoverData, dict]:
    with open(filename) as fh:
        raw = json.load(fh)
    return CoverData.from_json(raw), raw


@dataclass(frozen=True)
class McGowanResult:
    k_q: int
    denominator: float
    bound: float


def mcgowan_bound(data: CoverData, q: int | None = None, a: float = 1.0, b: float = 1.0
                  ) -> McGowanResult:
    """Lower bound ``a / D`` on the ``k_q``-th coexact value of the union.

    ``D = sum_i [1/mu_i + sum_{j ~ i} (b c_rho / mu_ij + 1)(1/mu_i + 1/mu_j)]``
    where the inner sum runs over the neighbours of ``i`` (each overlap is
    seen from both sides), and ``k_q = 1 + sum of overlap harmonic dims``.
    """
    if q is not None and q != data.degree:
        raise BoundError(f"cover data is for degree {data.degree}, not {q}")
    if not (a > 0 and b > 0):
        raise BoundError("constants a, b must be positive")
    mu = data.mu_domains
    D = 0.0
    for i in range(len(mu)):
        D += 1.0 / mu[i]
        for j in data.neighbours(i):
            mij = data.intersections[(min(i, j), max(i, j))][0]
            D += (b * data.c_rho / mij + 1.0) * (1.0 / mu[i] + 1.0 / mu[j])
    k_q = 1 + sum(hd for _, hd in data.intersections.values())
    return McGowanResult(k_q, D, a / D)


@dataclass(frozen=True)
class GlueData:
    mu1: float
    mu2: float
    mu12: float
    c_rho: float
    volratio: float

    def __post_init__(self):
        for name in ("mu1", "mu2", "mu12", "volratio"):
            if not getattr(self, name) > 0:
                raise BoundError(f"{name} must be positive")
        if not self.c_rho >= 0:
            raise BoundError("c_rho must be nonnegative")


def gluing_bound(data: GlueData, sharp: bool = False) -> float:
    """Lower bound on the first coexact value of ``Omega_1 u Omega_2``.

    Splitting a coexact form into three pieces costs the outer factor 3.
    The two pieces cut off by the partition are controlled by ``1/mu_i``;
    the correction living on the overlap by ``4 (c_rho/mu12 + 1)`` times the
    sum ``2/mu1 + 2/mu2``; the constant-length harmonic correction by the
    squared norm comparison ``volratio^2 (2/mu1 + 2/mu2)``.  ``sharp`` uses a
    norm comparison with the square-root ratio, i.e. ``volratio`` unsquared
    in the squared norms.
    """
    s = 2.0 / data.mu1 + 2.0 / data.mu2
    vr = data.volratio if sharp else data.volratio ** 2
    D = 3.0 * (1.0 / data.mu1 + 1.0 / data.mu2
               + 4.0 * (data.c_rho / data.mu12 + 1.0) * s + vr * s)
    return 1.0 / D


def split_cylinder(K: CellComplex, h: ConformalProfile, x1: float, x2: float,
                   ambient_dim: int | None = None, axis: int = -1):
    """Pieces ``x <= x2``, ``x >= x1`` and the overlap of a complex along one axis.

    Returns ``[(piece, profile)]`` for the two domains and the overlap, each
    carrying natural boundary conditions, plus the overlap width.
    """
    if not x1 < x2:
        raise BoundError("overlap needs x1 < x2")
    x = K.coords[:, axis]
    tol = 1e-12 * max(1.0, float(np.abs(x).max()))
    masks = [x <= x2 + tol, x >= x1 - tol, (x >= x1 - tol) & (x <= x2 + tol)]
    pieces = []
    for mk in masks:
        sub = K.restrict(mk)
        pieces.append((sub, ConformalProfile(h.samples[mk])))
    return pieces, x2 - x1


def glue_data_for_split(K: CellComplex, h: ConformalProfile, p: int, x1: float, x2: float,
                        ambient_dim: int | None = None) -> GlueData:
    """Measure every input of the gluing bound on a concrete split."""
    if p < 1:
        raise ComplexError("gluing bound needs p >= 1")
    (K1, h1), (K2, h2), (K12, h12) = split_cylinder(K, h, x1, x2, ambient_dim)[0]
    mu1 = coexact_spectrum(K1, h1, p, 1, ambient_dim=ambient_dim).values[0]
    mu2 = coexact_spectrum(K2, h2, p, 1, ambient_dim=ambient_dim).values[0]
    mu12 = coexact_spectrum(K12, h12, p - 1, 1, ambient_dim=ambient_dim).values[0]
    volratio = conformal_volume(K2, h2, ambient_dim) / conformal_volume(K12, h12, ambient_dim)
    return GlueData(float(mu1), float(mu2), float(mu12),
                    partition_gradient_bound(x2 - x1), float(volratio))


__all__ += ["glue_data_for_split"]
