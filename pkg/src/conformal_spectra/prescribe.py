"""Prescribing small coexact eigenvalues and the volume on a glued model.

The model is the invariant-form reduction of a large-gap base joined by thin
handles to one pinched sphere per target.  For every degree ``q`` each piece
is a weighted chain carrying ``-(w1 f')' = mu w0 f``: a sphere pinched in
degree ``p0`` contributes its radial problem with degree-``q`` exponents,
scaled by its homothety factor ``c``; the base is a uniform chain with
Dirichlet ends, short enough that its first value clears every target; the
handles are chains of length ``L`` whose measure is that of an
``eps``-sphere cross-section.  The chains are joined at shared nodes and the
degree-``q`` spectrum of the model is the spectrum of the assembled graph.

``phi_map`` sends requested values ``(V, xi)`` to achieved ones.  Each sphere
is tuned so that, alone, its first value is exactly ``xi``; the base density
absorbs the remaining volume.  As ``eps`` shrinks, ``phi_map`` tends to the
identity and ``prescribe`` finds a fixed point by damped iteration.
"""

from __future__ import annotations

import functools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .eigen import GROUPING_TOL, SolverError, group_multiplicities, solve_gevp
from .handles import sphere_area
from .pinch import PinchParams, degree_cap, pinch_volume
from .radial import pinch_operator, radial_spectrum

log = logging.getLogger(__name__)

__all__ = [
    "PrescriptionError",
    "PrescriptionTarget",
    "ModelSettings",
    "ParameterPoint",
    "PhiResult",
    "PrescriptionResult",
    "phi_map",
    "prescribe",
    "bisection_oracle",
    "load_targets",
    "sphere_eigenvalue",
]

MAX_EVALUATIONS = 200


class PrescriptionError(ValueError):
    pass


@dataclass(frozen=True)
class PrescriptionTarget:
    """Targets ``nu[p-1][i]`` for degrees ``p = 1..len(nu)`` and volume ``V0``."""

    n: int
    nu: tuple[tuple[float, ...], ...]
    V0: float
    delta: float | None = None

    def __post_init__(self):
        k = degree_cap(self.n)
        if self.n < 5:
            raise PrescriptionError("prescription needs n >= 5")
        nu = tuple(tuple(float(x) for x in row) for row in self.nu)
        if not nu or not any(nu):
            raise PrescriptionError("at least one target is required")
        if len(nu) > k:
            raise PrescriptionError(f"targets exist only in degrees 1..{k} for n={self.n}")
        for p, row in enumerate(nu, 1):
            if any(not x > 0 for x in row):
                raise PrescriptionError(f"degree {p} targets must be positive")
            if any(b <= a for a, b in zip(row, row[1:])):
                raise PrescriptionError(f"degree {p} targets must be strictly increasing")
        if not self.V0 > 0:
            raise PrescriptionError("target volume must be positive")
        object.__setattr__(self, "nu", nu)
        gap = self.min_gap
        delta = self.delta
        if delta is None:
            delta = 0.25 * min(gap, self.V0, min(x for row in nu for x in row))
        if not (0 < delta < self.V0 and (math.isinf(gap) or delta < gap / 2)):
            raise PrescriptionError("delta must satisfy 0 < delta < V0 and delta < min gap / 2")
        object.__setattr__(self, "delta", float(delta))

    @property
    def min_gap(self) -> float:
        gaps = [b - a for row in self.nu for a, b in zip(row, row[1:])]
        return min(gaps) if gaps else math.inf

    @property
    def k(self) -> int:
        return degree_cap(self.n)

    @property
    def flat(self) -> list[tuple[int, int, float]]:
        return [(p, i, x) for p, row in enumerate(self.nu, 1) for i, x in enumerate(row)]

    @property
    def max_nu(self) -> float:
        return max(x for row in self.nu for x in row)

    @classmethod
    def from_json(cls, data: dict) -> "PrescriptionTarget":
        try:
            nu = data["nu"]
            if nu and not isinstance(nu[0], (list, tuple)):
                nu = [nu]
            t = cls(int(data["n"]), tuple(tuple(r) for r in nu), float(data["V0"]),
                    data.get("delta"))
        except (KeyError, TypeError) as exc:
            raise PrescriptionError(f"malformed targets: {exc}") from exc
        if "N" in data and any(len(r) != int(data["N"]) for r in t.nu if r):
            raise PrescriptionError("every target row must have N entries")
        return t


def load_targets(filename: str | Path) -> PrescriptionTarget:
    with open(filename) as fh:
        return PrescriptionTarget.from_json(json.load(fh))


@dataclass(frozen=True)
class ModelSettings:
    """Discretization and geometry of the glued model."""

    eta: float = 0.02
    sphere_resolution: int = 400
    base_resolution: int = 120
    handle_length: float = 0.05
    handle_resolution: int = 8
    gap_factor: float = 4.0
    attach_at: float = 7.0 / 8.0
    extra: int = 2


@functools.lru_cache(maxsize=64)
def sphere_eigenvalue(n: int, p: int, eta: float, resolution: int) -> float:
    """First degree-``p`` value of the standalone pinched sphere at unit homothety."""
    params = PinchParams(n, p, eta, resolution=resolution)
    return float(radial_spectrum(pinch_operator(params), 1).values[0])


@functools.lru_cache(maxsize=64)
def _sphere_volume(n: int, p: int, eta: float) -> float:
    return pinch_volume(PinchParams(n, p, eta))


@dataclass(frozen=True)
class ParameterPoint:
    n: int
    V: float
    xi: tuple[tuple[float, ...], ...]
    eta: tuple[tuple[float, ...], ...]
    c: tuple[tuple[float, ...], ...]
    scale: float = 1.0

    def __post_init__(self):
        if not (self.V > 0 and self.scale > 0):
            raise PrescriptionError("volume and scale must be positive")
        for row in self.eta:
            if any(not 0 < e <= 1 for e in row):
                raise PrescriptionError("eta must lie in (0, 1]")
        for row in self.c:
            if any(not x > 0 for x in row):
                raise PrescriptionError("homothety factors must be positive")

    def scaled(self, s: float) -> "ParameterPoint":
        """Global homothety by ``s`` (all lengths, including base and handles)."""
        return replace(self, V=self.V * s ** self.n, scale=self.scale * s)

    @classmethod
    def tuned(cls, n: int, V: float, xi, settings: ModelSettings) -> "ParameterPoint":
        """Pick ``c`` so each sphere alone has first value ``xi``."""
        xi = tuple(tuple(float(x) for x in row) for row in xi)
        eta = tuple(tuple(settings.eta for _ in row) for row in xi)
        c = tuple(tuple(math.sqrt(sphere_eigenvalue(n, p, settings.eta,
                                                    settings.sphere_resolution) / x)
                        for x in row) for p, row in enumerate(xi, 1))
        return cls(n, V, xi, eta, c, 1.0)


@dataclass
class PhiResult:
    volume: float
    mu: dict[int, np.ndarray]
    base_density: float

    def achieved(self, target: PrescriptionTarget) -> list[list[float]]:
        return [list(self.mu[p][: len(row)]) for p, row in enumerate(target.nu, 1)]


@dataclass(frozen=True)
class _Chain:
    grid: np.ndarray
    w1: np.ndarray
    w0: np.ndarray
    dirichlet_left: bool
    dirichlet_right: bool


def _base_length(target: PrescriptionTarget, settings: ModelSettings) -> float:
    # uniform Dirichlet chain: first value (pi / length)^2
    return math.pi / math.sqrt(settings.gap_factor * (target.max_nu + target.delta))


def _handle_measure(n: int, eps: float) -> float:
    return sphere_area(n - 1) * eps ** (n - 1)


def _volumes(target: PrescriptionTarget, point: ParameterPoint, eps: float,
             settings: ModelSettings) -> tuple[float, float, float]:
    """(spheres, handles, base length) at unit global scale."""
    n = target.n
    spheres = sum(point.c[p - 1][i] ** n * _sphere_volume(n, p, point.eta[p - 1][i])
                  for p, i, _ in target.flat)
    handles = len(target.flat) * _handle_measure(n, eps) * settings.handle_length
    return spheres, handles, _base_length(target, settings)


def _base_density(target, point, eps, settings) -> float:
    spheres, handles, length = _volumes(target, point, eps, settings)
    rest = point.V / point.scale ** target.n - spheres - handles
    if rest <= 0:
        raise PrescriptionError("requested volume is smaller than the pinched spheres need")
    return rest / length


def _chains(target: PrescriptionTarget, point: ParameterPoint, eps: float, q: int,
            settings: ModelSettings, rho: float):
    n = target.n
    s = point.scale
    chains: list[_Chain] = []
    attach = []
    for p, i, _ in target.flat:
        # the pinch only lowers degree p; other degrees see the unpinched sphere
        eta = point.eta[p - 1][i] if q == p else 1.0
        params = PinchParams(n, p, eta, resolution=settings.sphere_resolution)
        prob = pinch_operator(params, degree=q)
        f = point.c[p - 1][i] * s
        chains.append(_Chain(prob.grid, prob.w1 * f ** (n - 2 * q - 2),
                             prob.w0 * f ** (n - 2 * q), False, True))
        attach.append(int(np.argmin(np.abs(prob.grid - settings.attach_at * params.R))))
    length = _base_length(target, settings)
    grid = np.linspace(0.0, length, settings.base_resolution)
    ones = np.ones(grid.size - 1)
    chains.append(_Chain(grid, rho * s ** (n - 2 * q - 2) * ones, rho * s ** (n - 2 * q) * ones,
                         True, True))
    base = len(chains) - 1
    count = len(target.flat)
    base_nodes = [int(round((j + 1) * (grid.size - 1) / (count + 1))) for j in range(count)]
    w = _handle_measure(n, eps)
    hgrid = np.linspace(0.0, settings.handle_length, settings.handle_resolution + 1)
    hones = np.ones(hgrid.size - 1)
    joins = []
    for j in range(count):
        chains.append(_Chain(hgrid, w * s ** (n - 2 * q - 2) * hones,
                             w * s ** (n - 2 * q) * hones, False, False))
        h = len(chains) - 1
        joins.append(((h, 0), (j, attach[j])))
        joins.append(((h, hgrid.size - 1), (base, base_nodes[j])))
    return chains, joins


def _assemble(chains: list[_Chain], joins):
    index: dict[tuple[int, int], int] = {}
    alias = {a: b for a, b in joins}
    dropped = set()
    for ci, ch in enumerate(chains):
        N = ch.grid.size
        if ch.dirichlet_left:
            dropped.add((ci, 0))
        if ch.dirichlet_right:
            dropped.add((ci, N - 1))
    nxt = 0
    for ci, ch in enumerate(chains):
        for j in range(ch.grid.size):
            key = (ci, j)
            if key in alias or key in dropped:
                continue
            index[key] = nxt
            nxt += 1
    for a, b in joins:
        index[a] = index[b]
    rows, cols, vals = [], [], []
    mass = np.zeros(nxt)
    for ci, ch in enumerate(chains):
        d = np.diff(ch.grid)
        k = ch.w1 / d
        half = 0.5 * ch.w0 * d
        for e in range(d.size):
            a, b = index.get((ci, e)), index.get((ci, e + 1))
            for u in (a, b):
                if u is not None:
                    mass[u] += half[e]
            if a is not None:
                rows.append(a), cols.append(a), vals.append(k[e])
            if b is not None:
                rows.append(b), cols.append(b), vals.append(k[e])
            if a is not None and b is not None:
                rows += [a, b]
                cols += [b, a]
                vals += [-k[e], -k[e]]
    S = sp.coo_matrix((vals, (rows, cols)), shape=(nxt, nxt)).tocsr()
    return S, mass


def _degree_spectrum(target, point, eps, q, settings, rho, m) -> np.ndarray:
    chains, joins = _chains(target, point, eps, q, settings, rho)
    S, M = _assemble(chains, joins)
    return solve_gevp(S, M, m, dense_threshold=300).values


def phi_map(target: PrescriptionTarget, point: ParameterPoint, eps: float,
            settings: ModelSettings = ModelSettings(), threads: int = 1) -> PhiResult:
    """Achieved volume and the smallest values in every degree ``1..k+1``."""
    if not eps > 0:
        raise PrescriptionError("handle scale must be positive")
    rho = _base_density(target, point, eps, settings)
    spheres, handles, length = _volumes(target, point, eps, settings)
    volume = point.scale ** target.n * (spheres + handles + rho * length)
    m = len(target.flat) + settings.extra
    degrees = list(range(1, target.k + 2))

    def run(q):
        return _degree_spectrum(target, point, eps, q, settings, rho, m)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            spectra = list(pool.map(run, degrees))
    else:
        spectra = [run(q) for q in degrees]
    return PhiResult(volume, dict(zip(degrees, spectra)), rho)


@dataclass
class PrescriptionResult:
    point: ParameterPoint
    achieved: PhiResult
    converged: bool
    evaluations: int
    eps: float
    volume_error: float
    eigen_errors: list[list[float]]
    identity_gaps: list[tuple[float, float]]
    history: list[tuple[float, int, float]]
    checks: dict[str, bool]

    @property
    def max_error(self) -> float:
        return max([self.volume_error] + [e for row in self.eigen_errors for e in row])

    def to_json(self, target: PrescriptionTarget) -> dict:
        k1 = target.k + 1
        return {
            "converged": self.converged,
            "evaluations": self.evaluations,
            "eps": self.eps,
            "volume": self.achieved.volume,
            "volume_error": self.volume_error,
            "achieved": [[float(x) for x in row] for row in self.achieved.achieved(target)],
            "eigen_errors": self.eigen_errors,
            "mu_top_degree_first": float(self.achieved.mu[k1][0]),
            "first_values": {str(q): float(v[0]) for q, v in self.achieved.mu.items()},
            "point": {"V": self.point.V, "xi": [list(r) for r in self.point.xi],
                      "eta": [list(r) for r in self.point.eta],
                      "c": [list(r) for r in self.point.c],
                      "base_density": self.achieved.base_density},
            "identity_gaps": [list(g) for g in self.identity_gaps],
            "history": [list(h) for h in self.history],
            "checks": self.checks,
        }


def _errors(target: PrescriptionTarget, res: PhiResult) -> tuple[float, list[list[float]]]:
    vol = abs(res.volume - target.V0) / target.V0
    eig = [[abs(a - nu) / nu for a, nu in zip(res.mu[p][: len(row)], row)]
           for p, row in enumerate(target.nu, 1)]
    return vol, eig


def _spectral_checks(target: PrescriptionTarget, res: PhiResult) -> dict[str, bool]:
    top = target.max_nu
    checks = {"top_degree_gap": bool(res.mu[target.k + 1][0] > top)}
    others = True
    simple = True
    for q, vals in res.mu.items():
        row = target.nu[q - 1] if q - 1 < len(target.nu) else ()
        if len(vals) > len(row):
            others &= bool(vals[len(row)] > top)
        if row:
            groups = group_multiplicities(vals[: len(row) + 1], GROUPING_TOL)
            simple &= all(len(g) == 1 for g in groups)
    checks["untargeted_above_max"] = others
    checks["targets_simple"] = simple
    return checks


def prescribe(target: PrescriptionTarget, tol: float = 1e-2, eps_schedule=(0.2, 0.1, 0.05),
              *, settings: ModelSettings = ModelSettings(), damping: float = 0.5,
              max_evaluations: int = MAX_EVALUATIONS, threads: int = 1) -> PrescriptionResult:
    """Damped fixed point ``xi <- xi + damping (nu - achieved)`` along the eps schedule.

    The volume coordinate gets the same update.  Requests stay in the box of
    half-width ``delta`` around the targets.  At the start of every stage the
    map is also evaluated at the targets themselves; the resulting distance
    ``|phi(x) - x|`` is the contraction diagnostic.
    """
    eps_list = [float(e) for e in eps_schedule]
    if not eps_list or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise PrescriptionError("eps schedule must be nonempty and strictly decreasing")
    if not tol > 0:
        raise PrescriptionError("tolerance must be positive")
    nu = [np.array(row) for row in target.nu]
    lo = [row - target.delta for row in nu]
    hi = [row + target.delta for row in nu]
    xi = [row.copy() for row in nu]
    V = target.V0
    evals = 0
    gaps: list[tuple[float, float]] = []
    history: list[tuple[float, int, float]] = []
    best = None

    def evaluate(V_req, xi_req, eps):
        nonlocal evals
        evals += 1
        point = ParameterPoint.tuned(target.n, V_req, xi_req, settings)
        return point, phi_map(target, point, eps, settings, threads)

    converged = False
    for eps in eps_list:
        if evals >= max_evaluations:
            break
        _, res = evaluate(target.V0, nu, eps)
        v_err, e_err = _errors(target, res)
        gaps.append((eps, max([v_err] + [x for r in e_err for x in r])))
        converged = False
        while evals < max_evaluations:
            point, res = evaluate(V, xi, eps)
            v_err, e_err = _errors(target, res)
            err = max([v_err] + [x for r in e_err for x in r])
            history.append((eps, evals, err))
            if best is None or eps < best[0] or (eps == best[0] and err < best[1]):
                best = (eps, err, point, res, v_err, e_err)
            if err <= tol:
                converged = True
                break
            ach = res.achieved(target)
            xi = [np.clip(x + damping * (t - np.array(a)), l, h)
                  for x, t, a, l, h in zip(xi, nu, ach, lo, hi)]
            V = float(np.clip(V + damping * (target.V0 - res.volume),
                              target.V0 - target.delta, target.V0 + target.delta))
    if best is None:
        raise PrescriptionError("evaluation budget allows no evaluation")
    eps, err, point, res, v_err, e_err = best
    checks = _spectral_checks(target, res)
    ok = converged and eps == eps_list[-1] and all(checks.values())
    if not ok:
        log.warning("prescription did not converge (error %.3e after %d evaluations)", err, evals)
    return PrescriptionResult(point, res, ok, evals, eps, v_err, e_err, gaps, history, checks)


def bisection_oracle(target: PrescriptionTarget, eps: float,
                     settings: ModelSettings = ModelSettings(), rtol: float = 1e-10
                     ) -> tuple[float, float, PhiResult]:
    """Single target: nested bisection on ``(c, base density)`` with ``eta`` fixed.

    The inner bisection finds the base density giving volume ``V0``; the
    outer one finds ``c`` giving first value ``nu``.  Returns ``(c, rho, phi)``.
    """
    if len(target.flat) != 1:
        raise PrescriptionError("the bisection oracle handles a single target")
    p, _, nu = target.flat[0]
    n = target.n
    spheres1 = _sphere_volume(n, p, settings.eta)
    length = _base_length(target, settings)
    handles = _handle_measure(n, eps) * settings.handle_length

    def volume(c, rho):
        return c ** n * spheres1 + handles + rho * length

    def point(c):
        return ParameterPoint(n, target.V0, ((nu,),), ((settings.eta,),), ((c,),), 1.0)

    def rho_for(c):
        a, b = 0.0, target.V0 / length
        if volume(c, a) >= target.V0:
            raise PrescriptionError("spheres alone exceed the target volume")
        while b - a > rtol * b:
            mid = 0.5 * (a + b)
            a, b = (mid, b) if volume(c, mid) < target.V0 else (a, mid)
        return 0.5 * (a + b)

    def first(c):
        rho = rho_for(c)
        vals = _degree_spectrum(target, point(c), eps, p, settings, rho, 1)
        return float(vals[0]), rho

    c0 = math.sqrt(sphere_eigenvalue(n, p, settings.eta, settings.sphere_resolution) / nu)
    c_max = ((target.V0 - handles) / spheres1) ** (1.0 / n)
    a, b = 0.5 * c0, min(2.0 * c0, c_max * (1 - 1e-9))
    if not (first(a)[0] > nu > first(b)[0]):
        raise SolverError("bisection bracket does not enclose the target")
    while b - a > rtol * b:
        mid = 0.5 * (a + b)
        a, b = (mid, b) if first(mid)[0] > nu else (a, mid)
    c = 0.5 * (a + b)
    rho = rho_for(c)
    return c, rho, phi_map(target, point(c), eps, settings)
