"""Conformal pinch of a tubular neighbourhood ``S^p x B^(n-p)`` and its sweeps.

The profile ``h`` equals 1 on the inner quarter of the radius, falls to the
floor ``eta`` over the second quarter, and stays at ``eta`` beyond.  The test
function ``f`` equals 1 on the inner half and drops to 0 over the third
quarter.  Both joins are cubic smoothsteps.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from .complex import CellComplex, ComplexError, cycle, path, product, simplex_boundary
from .eigen import SolverError, coexact_spectrum
from .hodge import ConformalProfile
from .radial import RadialError, cylinder_operator, pinch_operator, radial_spectrum

log = logging.getLogger(__name__)

__all__ = [
    "PinchParams",
    "PinchProfiles",
    "SweepRow",
    "PinchReport",
    "smoothstep",
    "default_profiles",
    "rayleigh_bound",
    "pinch_volume",
    "pinch_sweep",
    "omega_surrogate",
    "degree_cap",
]


def degree_cap(n: int) -> int:
    """The integer ``k`` with ``n = 2k+3`` or ``n = 2k+4``."""
    return (n - 3) // 2


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _smoothstep_slope(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0) & (s < 1)
    return np.where(inside, 6.0 * s * (1.0 - s), 0.0)


@dataclass(frozen=True)
class PinchParams:
    n: int
    p: int
    eta: float = 0.1
    R: float = 1.0
    resolution: int = 2000
    V: float = 1.0

    def __post_init__(self):
        if self.n < 5:
            raise ComplexError("pinch needs n >= 5")
        k = degree_cap(self.n)
        if not 1 <= self.p <= k:
            raise ComplexError(f"pinch degree must satisfy 1 <= p <= {k} for n={self.n}")
        if not 0 < self.eta <= 1:
            raise ComplexError("eta must lie in (0, 1]")
        if self.R <= 0 or self.V <= 0:
            raise ComplexError("R and V must be positive")

    @property
    def k(self) -> int:
        return degree_cap(self.n)

    @property
    def exponent(self) -> int:
        return self.n - 2 * self.p - 2

    @property
    def c(self) -> float:
        # unpinched ball carries half of the target volume
        d = self.n - self.p
        return d * self.V / (2.0 * self.R ** d)

    @property
    def breakpoints(self) -> np.ndarray:
        return self.R * np.arange(5) / 4.0

    def h(self, r) -> np.ndarray:
        q = self.R / 4.0
        return 1.0 - (1.0 - self.eta) * smoothstep((np.asarray(r, dtype=float) - q) / q)

    def f(self, r) -> np.ndarray:
        q = self.R / 4.0
        return 1.0 - smoothstep((np.asarray(r, dtype=float) - 2 * q) / q)

    def f_prime(self, r) -> np.ndarray:
        q = self.R / 4.0
        return -_smoothstep_slope((np.asarray(r, dtype=float) - 2 * q) / q) / q

    def transverse_density(self, r) -> np.ndarray:
        return self.c * np.asarray(r, dtype=float) ** (self.n - self.p - 1)

    def with_eta(self, eta: float) -> "PinchParams":
        return replace(self, eta=eta)


@dataclass(frozen=True, eq=False)
class PinchProfiles:
    r: np.ndarray
    f: np.ndarray
    h: np.ndarray


def default_profiles(params: PinchParams, samples: int | None = None) -> PinchProfiles:
    r = np.linspace(0.0, params.R, samples or params.resolution)
    return PinchProfiles(r, params.f(r), params.h(r))


def rayleigh_bound(params: PinchParams) -> float:
    """Rayleigh quotient bound of the radial test form, by adaptive quadrature."""
    a, b, c, _, _ = params.breakpoints[:5]
    v = params.transverse_density
    num, _ = integrate.quad(lambda r: params.f_prime(r) ** 2 * v(r), params.breakpoints[2],
                            params.breakpoints[3], epsabs=0, epsrel=1e-13)
    den, _ = integrate.quad(v, a, b, epsabs=0, epsrel=1e-13)
    return params.eta ** params.exponent * num / den


def pinch_volume(params: PinchParams) -> float:
    """Volume of the pinched sphere: the deformed ball plus the rest at ``eta^n``."""
    n = params.n
    pts = list(params.breakpoints[1:4])
    ball, _ = integrate.quad(lambda r: params.h(r) ** n * params.transverse_density(r),
                             0.0, params.R, points=pts, epsabs=0, epsrel=1e-13, limit=200)
    return ball + params.eta ** n * params.V / 2.0


def omega_surrogate(params: PinchParams, radial_cells: int = 12, sphere_res: int = 6,
                    relative: bool = True) -> tuple[CellComplex, ConformalProfile]:
    """Coarse ``S^p x [r0, R]`` complex with ball density.

    With ``relative`` the cochains vanish at ``r = R`` (the test-form
    condition); otherwise both ends carry natural boundary conditions.  The
    ``S^p`` factor has unit volume: a cycle for ``p = 1``, a simplex boundary
    otherwise.  The radial path starts half a cell off the axis so the density
    stays positive.
    """
    R = params.R
    r0 = R / (2 * radial_cells)
    if params.p == 1:
        sphere = cycle(sphere_res, 1.0)
    else:
        sphere = simplex_boundary(params.p + 1)
        sphere = sphere.with_density(np.full(sphere.n_cells(0), 1.0 / float(sphere.top_measure().sum())))
    radial = path(radial_cells + 1, R - r0, r0)
    K = product(sphere, radial)
    K = K.with_density(lambda x: params.transverse_density(x[:, -1]))
    if relative:
        K = K.relative(lambda x: np.isclose(x[:, -1], R))
    h = ConformalProfile(params.h(K.coords[:, -1]), tag=f"pinch(eta={params.eta:g})")
    return K, h


@dataclass
class SweepRow:
    n: int
    p: int
    eta: float
    mu1: float = math.nan
    mu2: float = math.nan
    rayleigh_bound: float = math.nan
    volume: float = math.nan
    mu1_normalized: float = math.nan
    mu2_normalized: float = math.nan
    other: dict[int, float] = field(default_factory=dict)
    complex_mu1: float = math.nan
    complex_other: dict[int, float] = field(default_factory=dict)
    status: str = "ok"


@dataclass
class PinchReport:
    params: PinchParams
    rows: list[SweepRow]
    other_degrees: tuple[int, ...]
    complex_degrees: tuple[int, ...] = ()
    cross_check: bool = False

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def other_column(self, q: int) -> np.ndarray:
        return np.array([r.other.get(q, math.nan) for r in self.rows])

    def slope(self, last_decades: int = 3) -> float:
        """Least-squares log-log slope of ``mu1`` against ``eta`` on the small-eta tail."""
        eta, mu = self.column("eta"), self.column("mu1")
        ok = np.isfinite(mu) & (mu > 0) & (eta <= eta.min() * 10 ** last_decades * (1 + 1e-12))
        if ok.sum() < 2:
            return math.nan
        return float(np.polyfit(np.log(eta[ok]), np.log(mu[ok]), 1)[0])

    def witness(self) -> np.ndarray:
        """Degree k+1 first value times ``Vol^(2/n)``; reported, not asserted."""
        k1 = self.params.k + 1
        vol = self.column("volume")
        return self.other_column(k1) * vol ** (2.0 / self.params.n)

    def header(self) -> list[str]:
        cols = ["n", "p", "eta", "mu1", "mu2", "rayleigh_bound", "volume",
                "mu1_normalized", "mu2_normalized"]
        cols += [f"mu{q}_1" for q in self.other_degrees]
        if self.cross_check:
            cols += ["complex_mu1"] + [f"complex_mu{q}_1" for q in self.complex_degrees]
        return cols + ["status"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for r in self.rows:
            vals = [r.n, r.p, repr(r.eta)] + [repr(float(x)) for x in (
                r.mu1, r.mu2, r.rayleigh_bound, r.volume, r.mu1_normalized, r.mu2_normalized)]
            vals += [repr(float(r.other.get(q, math.nan))) for q in self.other_degrees]
            if self.cross_check:
                vals += [repr(float(r.complex_mu1))]
                vals += [repr(float(r.complex_other.get(q, math.nan))) for q in self.complex_degrees]
            w.writerow(vals + [r.status])
        return buf.getvalue()


def _other_degrees(params: PinchParams) -> tuple[int, ...]:
    return tuple(q for q in range(1, params.k + 2) if q != params.p)


# dense complex solves lose relative accuracy once eta^(n-2p-2) nears roundoff
CROSS_CHECK_MIN_ETA = 1e-2


def _sweep_row(params: PinchParams, cross_check: bool, cyl_resolution: int) -> SweepRow:
    row = SweepRow(params.n, params.p, params.eta)
    try:
        s = radial_spectrum(pinch_operator(params), 2)
        row.mu1, row.mu2 = float(s.values[0]), float(s.values[1])
        row.rayleigh_bound = rayleigh_bound(params)
        row.volume = pinch_volume(params)
        norm = row.volume ** (2.0 / params.n)  # scale-free: mu Vol^(2/n)
        row.mu1_normalized, row.mu2_normalized = row.mu1 * norm, row.mu2 * norm
        # profile transplanted to the unit cylinder for the other degrees
        hq = lambda t: params.h(t * params.R)  # noqa: E731
        for q in _other_degrees(params):
            cyl = cylinder_operator(params.n, q, hq, cyl_resolution)
            row.other[q] = float(radial_spectrum(cyl, 1).values[0])
        if cross_check and params.eta >= CROSS_CHECK_MIN_ETA:
            K, h = omega_surrogate(params)
            row.complex_mu1 = float(coexact_spectrum(K, h, params.p, 1,
                                                     ambient_dim=params.n).values[0])
            if params.p > 1:
                Ka, ha = omega_surrogate(params, relative=False)
                for q in range(1, params.p):
                    row.complex_other[q] = float(coexact_spectrum(
                        Ka, ha, q, 1, ambient_dim=params.n).values[0])
    except (SolverError, RadialError, ComplexError) as exc:
        log.warning("sweep row eta=%g failed: %s", params.eta, exc)
        row.status = f"failed: {exc}"
    return row


def pinch_sweep(params: PinchParams, eta_list, *, cross_check: bool = False,
                cyl_resolution: int | None = None, threads: int = 1) -> PinchReport:
    """One row per ``eta``; failed rows are marked and the sweep continues."""
    etas = [float(e) for e in eta_list]
    if not etas or any(b >= a for a, b in zip(etas, etas[1:])):
        raise ComplexError("eta list must be nonempty and strictly decreasing")
    cyl = cyl_resolution or params.resolution
    jobs = [params.with_eta(e) for e in etas]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda q: _sweep_row(q, cross_check, cyl), jobs))
    else:
        rows = [_sweep_row(q, cross_check, cyl) for q in jobs]
    complex_degrees = tuple(range(1, params.p)) if cross_check else ()
    return PinchReport(params, rows, _other_degrees(params), complex_degrees, cross_check)
