"""Cell complexes with signed boundary operators and diagonal Hodge-star geometry.

A complex stores, per degree k, the cell ids, the integer boundary matrix
``boundary[k]`` (shape ``N_{k-1} x N_k``), the primal volume of every cell and
the volume of its dual cell.  The diagonal Hodge star used throughout the
package is ``density * dual_volume / volume``.

Builders cover paths, cycles, boundaries of simplices, products and a
plain-text import format::

    # dim id : signed-boundary-id-list : weight
    0 a : : 1
    0 b : : 1
    1 e : +b -a : 0.5
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable, Hashable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "CellComplex",
    "ComplexSpec",
    "ComplexError",
    "path",
    "cycle",
    "simplex_boundary",
    "product",
    "disjoint_union",
    "build_complex",
    "boundary_matrix",
    "betti_numbers",
    "integer_rank",
    "load_complex",
    "dump_complex",
]


class ComplexError(ValueError):
    """Invalid complex specification or construction."""


def _int_csr(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m, dtype=np.int64)
    m.eliminate_zeros()
    m.sort_indices()
    return m


@dataclass(frozen=True, eq=False)
class CellComplex:
    dimension: int
    cells: tuple[tuple[Hashable, ...], ...]
    boundary: tuple[sp.csr_matrix, ...]
    volumes: tuple[np.ndarray, ...]
    dual_volumes: tuple[np.ndarray, ...]
    coords: np.ndarray
    density: tuple[np.ndarray, ...] = field(default=())
    name: str = "complex"

    def __post_init__(self):
        n = self.dimension
        if n < 0:
            raise ComplexError("dimension must be nonnegative")
        if not (len(self.cells) == len(self.boundary) == len(self.volumes)
                == len(self.dual_volumes) == n + 1):
            raise ComplexError("per-degree data must have dimension + 1 entries")
        if not self.density:
            object.__setattr__(
                self, "density", tuple(np.ones(len(c)) for c in self.cells))
        for k in range(n + 1):
            nk = len(self.cells[k])
            if self.volumes[k].shape != (nk,) or self.dual_volumes[k].shape != (nk,):
                raise ComplexError(f"weight arrays of degree {k} have wrong length")
            if np.any(self.volumes[k] <= 0) or np.any(self.dual_volumes[k] <= 0):
                raise ComplexError(f"nonpositive geometric weight in degree {k}")
            if np.any(self.density[k] <= 0):
                raise ComplexError(f"nonpositive density in degree {k}")
            if k > 0 and self.boundary[k].shape != (len(self.cells[k - 1]), nk):
                raise ComplexError(f"boundary[{k}] has shape {self.boundary[k].shape}")
        for k in range(2, n + 1):
            dd = self.boundary[k - 1] @ self.boundary[k]
            dd.eliminate_zeros()
            if dd.nnz:
                raise ComplexError(f"boundary[{k - 1}] @ boundary[{k}] != 0")

    def n_cells(self, k: int) -> int:
        return len(self.cells[k]) if 0 <= k <= self.dimension else 0

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.cells)

    def coboundary(self, k: int) -> sp.csr_matrix:
        """Discrete exterior derivative on k-cochains, shape ``N_{k+1} x N_k``."""
        if not 0 <= k <= self.dimension:
            raise ComplexError(f"degree {k} out of range")
        if k == self.dimension:
            return sp.csr_matrix((0, self.n_cells(k)), dtype=np.int64)
        return self.boundary[k + 1].T.tocsr()

    def star(self, k: int) -> np.ndarray:
        return self.density[k] * self.dual_volumes[k] / self.volumes[k]

    def top_measure(self) -> np.ndarray:
        n = self.dimension
        return self.volumes[n] * self.density[n]

    @functools.cached_property
    def _vertex_incidence(self) -> tuple[sp.csr_matrix, ...]:
        inc = [sp.identity(self.n_cells(0), format="csr", dtype=np.int64)]
        for k in range(1, self.dimension + 1):
            step = abs(self.boundary[k]).T.tocsr()
            nxt = (step @ inc[-1]).tocsr()
            nxt.data[:] = 1
            inc.append(nxt)
        return tuple(inc)

    @functools.cached_property
    def _ranks(self) -> tuple[int, ...]:
        return (0,) + tuple(integer_rank(self.boundary[k])
                            for k in range(1, self.dimension + 1)) + (0,)

    def boundary_rank(self, k: int) -> int:
        """Exact rank of ``boundary[k]`` (0 outside ``1..n``)."""
        return self._ranks[k] if 0 <= k <= self.dimension + 1 else 0

    def vertex_average(self, k: int) -> sp.csr_matrix:
        """Row-stochastic map from vertex samples to k-cell averages."""
        inc = self._vertex_incidence[k].astype(float)
        rows = np.asarray(inc.sum(axis=1)).ravel()
        return (sp.diags(1.0 / rows) @ inc).tocsr()

    def cells_containing(self, k: int) -> sp.csr_matrix:
        """0/1 matrix ``N_k x N_n`` marking top cells that contain each k-cell."""
        n = self.dimension
        inc = sp.identity(self.n_cells(k), format="csr", dtype=np.int64)
        for j in range(k + 1, n + 1):
            inc = (inc @ abs(self.boundary[j])).tocsr()
            inc.data[:] = 1
        return inc

    def with_density(self, vertex_density: np.ndarray | Callable) -> "CellComplex":
        """Multiply the measure by a positive vertex function (warped products)."""
        if callable(vertex_density):
            vertex_density = np.asarray(vertex_density(self.coords), dtype=float)
        vd = np.asarray(vertex_density, dtype=float)
        if vd.shape != (self.n_cells(0),) or np.any(vd <= 0):
            raise ComplexError("density must be positive on every vertex")
        dens = tuple(self.density[k] * (self.vertex_average(k) @ vd)
                     for k in range(self.dimension + 1))
        return CellComplex(self.dimension, self.cells, self.boundary, self.volumes,
                           self.dual_volumes, self.coords, dens, self.name)

    def relative(self, boundary_vertices: np.ndarray | Callable) -> "CellComplex":
        """Relative complex: drop every cell whose vertices all lie in the mask.

        Cochains of the result vanish on the removed subcomplex, which is the
        discrete Dirichlet (relative) boundary condition.
        """
        if callable(boundary_vertices):
            boundary_vertices = boundary_vertices(self.coords)
        mask = np.asarray(boundary_vertices, dtype=bool)
        keep = []
        for k in range(self.dimension + 1):
            inc = self._vertex_incidence[k]
            on_bdry = np.asarray(inc @ mask.astype(np.int64)).ravel()
            total = np.asarray(inc.sum(axis=1)).ravel()
            keep.append(np.flatnonzero(on_bdry < total))
        cells = tuple(tuple(self.cells[k][i] for i in keep[k])
                      for k in range(self.dimension + 1))
        bd = [sp.csr_matrix((0, len(keep[0])), dtype=np.int64)]
        for k in range(1, self.dimension + 1):
            bd.append(_int_csr(self.boundary[k][keep[k - 1]][:, keep[k]]))
        # vertex coordinates only survive for kept vertices
        return CellComplex(
            self.dimension, cells, tuple(bd),
            tuple(self.volumes[k][keep[k]] for k in range(self.dimension + 1)),
            tuple(self.dual_volumes[k][keep[k]] for k in range(self.dimension + 1)),
            self.coords[keep[0]],
            tuple(self.density[k][keep[k]] for k in range(self.dimension + 1)),
            self.name + "/rel")


    def restrict(self, vertices: np.ndarray | Callable) -> "CellComplex":
        """Closed subcomplex of cells whose vertices all lie in the mask.

        Dual volumes are recomputed inside the piece, so cochains on it carry
        natural (absolute) boundary conditions.  Kept vertices stay in order.
        """
        if callable(vertices):
            vertices = vertices(self.coords)
        mask = np.asarray(vertices, dtype=bool)
        keep = []
        for k in range(self.dimension + 1):
            inc = self._vertex_incidence[k]
            inside = np.asarray(inc @ mask.astype(np.int64)).ravel()
            total = np.asarray(inc.sum(axis=1)).ravel()
            keep.append(np.flatnonzero(inside == total))
        if any(len(kk) == 0 for kk in keep):
            raise ComplexError("restriction leaves an empty degree")
        bd = [sp.csr_matrix((0, len(keep[0])), dtype=np.int64)]
        for k in range(1, self.dimension + 1):
            bd.append(_int_csr(self.boundary[k][keep[k - 1]][:, keep[k]]))
        vols = tuple(self.volumes[k][keep[k]] for k in range(self.dimension + 1))
        return CellComplex(
            self.dimension,
            tuple(tuple(self.cells[k][i] for i in keep[k]) for k in range(self.dimension + 1)),
            tuple(bd), vols, tuple(_share_dual_volumes(self.dimension, bd, vols)),
            self.coords[keep[0]],
            tuple(self.density[k][keep[k]] for k in range(self.dimension + 1)),
            self.name + "|sub")


# --------------------------------------------------------------------------
# geometry helpers


def _share_dual_volumes(n: int, boundary: Sequence[sp.csr_matrix],
                        volumes: Sequence[np.ndarray]) -> list[np.ndarray]:
    # dual(s) = C(n,k) * sum_{top T > s} vol(T) / #k-faces(T) / vol(s)
    duals = []
    counts = [len(v) for v in volumes]
    for k in range(n + 1):
        inc = sp.identity(counts[k], format="csr", dtype=np.int64)
        for j in range(k + 1, n + 1):
            inc = (inc @ abs(boundary[j])).tocsr()
            inc.data[:] = 1
        faces_per_top = np.asarray(inc.sum(axis=0)).ravel()
        share = inc @ (volumes[n] / faces_per_top)
        duals.append(math.comb(n, k) * share / volumes[k])
    return duals


def _check_resolution(m: int, what: str):
    if int(m) != m or m < 3:
        raise ComplexError(f"{what} resolution must be an integer >= 3, got {m}")


def path(m: int, length: float = 1.0, start: float = 0.0) -> CellComplex:
    """Uniform path with ``m`` vertices on ``[start, start + length]``."""
    _check_resolution(m, "path")
    if length <= 0:
        raise ComplexError("path length must be positive")
    a = length / (m - 1)
    rows = np.repeat(np.arange(m - 1), 2)
    b1 = sp.coo_matrix((np.tile([-1, 1], m - 1),
                        (np.ravel(np.column_stack([np.arange(m - 1), np.arange(1, m)])),
                         rows)), shape=(m, m - 1))
    bd = (sp.csr_matrix((0, m), dtype=np.int64), _int_csr(b1))
    vols = (np.ones(m), np.full(m - 1, a))
    duals = _share_dual_volumes(1, bd, vols)
    coords = (start + a * np.arange(m))[:, None]
    return CellComplex(1, (tuple(range(m)), tuple(range(m - 1))), bd, vols,
                       tuple(duals), coords, name=f"path({m})")


def cycle(m: int, length: float = 1.0) -> CellComplex:
    """Cycle with ``m`` vertices and total length ``length``."""
    _check_resolution(m, "cycle")
    if length <= 0:
        raise ComplexError("cycle length must be positive")
    a = length / m
    idx = np.arange(m)
    b1 = sp.coo_matrix((np.concatenate([-np.ones(m, int), np.ones(m, int)]),
                        (np.concatenate([idx, (idx + 1) % m]), np.concatenate([idx, idx]))),
                       shape=(m, m))
    bd = (sp.csr_matrix((0, m), dtype=np.int64), _int_csr(b1))
    vols = (np.ones(m), np.full(m, a))
    duals = _share_dual_volumes(1, bd, vols)
    return CellComplex(1, (tuple(range(m)), tuple(range(m))), bd, vols, tuple(duals),
                       (a * idx)[:, None], name=f"cycle({m})")


def _simplex_volume(k: int, edge: float) -> float:
    return edge ** k / math.factorial(k) * math.sqrt((k + 1) / 2 ** k)


def simplex_boundary(d: int) -> CellComplex:
    """Boundary of the regular d-simplex: a triangulated (d-1)-sphere.

    The edge length is chosen so that the total volume equals that of the
    unit round sphere of the same dimension.
    """
    if int(d) != d or d < 2:
        raise ComplexError("simplex_boundary needs d >= 2")
    n = d - 1
    verts = list(range(d + 1))
    cells = [tuple(combinations(verts, k + 1)) for k in range(n + 1)]
    index = [{c: i for i, c in enumerate(ck)} for ck in cells]
    bd = [sp.csr_matrix((0, d + 1), dtype=np.int64)]
    for k in range(1, n + 1):
        rows, cols, vals = [], [], []
        for j, c in enumerate(cells[k]):
            for i in range(k + 1):
                rows.append(index[k - 1][c[:i] + c[i + 1:]])
                cols.append(j)
                vals.append((-1) ** i)
        bd.append(_int_csr(sp.coo_matrix((vals, (rows, cols)),
                                         shape=(len(cells[k - 1]), len(cells[k])))))
    sphere_vol = 2 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)
    edge = (sphere_vol / (len(cells[n]) * _simplex_volume(n, 1.0))) ** (1.0 / n)
    vols = [np.full(len(cells[k]), _simplex_volume(k, edge)) for k in range(n + 1)]
    duals = _share_dual_volumes(n, bd, vols)
    coords = np.eye(d + 1) - 1.0 / (d + 1)
    coords /= np.linalg.norm(coords, axis=1, keepdims=True)
    return CellComplex(n, tuple(cells), tuple(bd), tuple(vols), tuple(duals), coords,
                       name=f"simplex_boundary({d})")


def product(a: CellComplex, b: CellComplex) -> CellComplex:
    """Cartesian product with Leibniz-rule boundary and product weights."""
    n = a.dimension + b.dimension
    if n == 0:
        raise ComplexError("product dimension must be positive")
    blocks = [[(i, k - i) for i in range(k + 1)
               if i <= a.dimension and k - i <= b.dimension] for k in range(n + 1)]
    cells, vols, duals, dens = [], [], [], []
    for k in range(n + 1):
        ck, vk, dk, sk = [], [], [], []
        for i, j in blocks[k]:
            ck.extend((x, y) for x in a.cells[i] for y in b.cells[j])
            vk.append(np.kron(a.volumes[i], b.volumes[j]))
            dk.append(np.kron(a.dual_volumes[i], b.dual_volumes[j]))
            sk.append(np.kron(a.density[i], b.density[j]))
        cells.append(tuple(ck))
        vols.append(np.concatenate(vk))
        duals.append(np.concatenate(dk))
        dens.append(np.concatenate(sk))
    bd = [sp.csr_matrix((0, len(cells[0])), dtype=np.int64)]
    for k in range(1, n + 1):
        offs_lo = {}
        o = 0
        for i, j in blocks[k - 1]:
            offs_lo[(i, j)] = o
            o += a.n_cells(i) * b.n_cells(j)
        col = 0
        rows_all, cols_all, vals_all = [], [], []
        for i, j in blocks[k]:
            width = a.n_cells(i) * b.n_cells(j)
            if i > 0:
                m = sp.kron(a.boundary[i], sp.identity(b.n_cells(j), dtype=np.int64)).tocoo()
                rows_all.append(m.row + offs_lo[(i - 1, j)])
                cols_all.append(m.col + col)
                vals_all.append(m.data)
            if j > 0:
                m = sp.kron(sp.identity(a.n_cells(i), dtype=np.int64), b.boundary[j]).tocoo()
                rows_all.append(m.row + offs_lo[(i, j - 1)])
                cols_all.append(m.col + col)
                vals_all.append((-1) ** i * m.data)
            col += width
        shape = (len(cells[k - 1]), len(cells[k]))
        if rows_all:
            mat = sp.coo_matrix((np.concatenate(vals_all),
                                 (np.concatenate(rows_all), np.concatenate(cols_all))),
                                shape=shape)
        else:
            mat = sp.coo_matrix(shape, dtype=np.int64)
        bd.append(_int_csr(mat))
    coords = np.hstack([np.repeat(a.coords, b.n_cells(0), axis=0),
                        np.tile(b.coords, (a.n_cells(0), 1))])
    return CellComplex(n, tuple(cells), tuple(bd), tuple(vols), tuple(duals), coords,
                       tuple(dens), name=f"{a.name}x{b.name}")


def disjoint_union(a: CellComplex, b: CellComplex) -> CellComplex:
    if a.dimension != b.dimension:
        raise ComplexError("disjoint union needs equal dimensions")
    n = a.dimension
    cells = tuple(tuple(("L", c) for c in a.cells[k]) + tuple(("R", c) for c in b.cells[k])
                  for k in range(n + 1))
    bd = (sp.csr_matrix((0, a.n_cells(0) + b.n_cells(0)), dtype=np.int64),) + tuple(
        _int_csr(sp.block_diag([a.boundary[k], b.boundary[k]])) for k in range(1, n + 1))
    width = max(a.coords.shape[1], b.coords.shape[1])
    pad = lambda c: np.hstack([c, np.zeros((c.shape[0], width - c.shape[1]))])
    return CellComplex(
        n, cells, bd,
        tuple(np.concatenate([a.volumes[k], b.volumes[k]]) for k in range(n + 1)),
        tuple(np.concatenate([a.dual_volumes[k], b.dual_volumes[k]]) for k in range(n + 1)),
        np.vstack([pad(a.coords), pad(b.coords)]),
        tuple(np.concatenate([a.density[k], b.density[k]]) for k in range(n + 1)),
        name=f"{a.name}+{b.name}")


# --------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class ComplexSpec:
    """Parsed description such as ``cycle:8``, ``path:11:2.0``,
    ``simplex:4``, ``cycle:4*cycle:4`` or ``file:mesh.txt``."""

    kind: str
    params: tuple = ()
    factors: tuple["ComplexSpec", ...] = ()

    @classmethod
    def parse(cls, text: str) -> "ComplexSpec":
        text = text.strip()
        if "*" in text:
            return cls("product", (), tuple(cls.parse(t) for t in text.split("*")))
        kind, _, rest = text.partition(":")
        kind = {"simplex": "simplex_boundary"}.get(kind, kind)
        if kind == "imported" or kind == "file":
            return cls("imported", (rest,))
        if kind not in ("path", "cycle", "simplex_boundary"):
            raise ComplexError(f"unknown complex kind {kind!r}")
        try:
            params = tuple(float(x) if "." in x or "e" in x else int(x)
                           for x in rest.split(":") if x)
        except ValueError as exc:
            raise ComplexError(f"bad parameters in {text!r}") from exc
        if not params:
            raise ComplexError(f"{kind} needs a resolution parameter")
        return cls(kind, params)

    def __str__(self) -> str:
        if self.kind == "product":
            return "*".join(str(f) for f in self.factors)
        return ":".join([self.kind] + [str(p) for p in self.params])


def build_complex(spec: ComplexSpec | str) -> CellComplex:
    if isinstance(spec, str):
        spec = ComplexSpec.parse(spec)
    if spec.kind == "path":
        return path(*spec.params)
    if spec.kind == "cycle":
        return cycle(*spec.params)
    if spec.kind == "simplex_boundary":
        return simplex_boundary(*spec.params)
    if spec.kind == "imported":
        return load_complex(spec.params[0])
    if spec.kind == "product":
        if not spec.factors:
            raise ComplexError("empty product")
        parts = [build_complex(f) for f in spec.factors]
        return functools.reduce(product, parts)
    raise ComplexError(f"unknown complex kind {spec.kind!r}")


def boundary_matrix(K: CellComplex, k: int) -> sp.csr_matrix:
    if not 1 <= k <= K.dimension:
        raise ComplexError(f"boundary degree {k} outside [1, {K.dimension}]")
    return K.boundary[k]


# --------------------------------------------------------------------------
# exact homology


def integer_rank(matrix) -> int:
    """Rank over the rationals by fraction-free sparse elimination.

    Rows are kept as ``{column: int}`` and divided by their content after
    every update, so entries stay small on boundary matrices.
    """
    A = sp.csr_matrix(matrix)
    if A.shape[0] > A.shape[1]:
        A = A.T.tocsr()
    if A.nnz == 0:
        return 0
    if np.any(A.data != np.round(A.data)):
        raise ComplexError("integer_rank needs an integer matrix")
    pivots: dict[int, dict[int, int]] = {}
    for i in range(A.shape[0]):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        row = {int(j): int(v) for j, v in zip(A.indices[lo:hi], A.data[lo:hi]) if v}
        while row:
            col = min(row)
            piv = pivots.get(col)
            if piv is None:
                pivots[col] = row
                break
            a, b = piv[col], row[col]
            g = math.gcd(a, b)
            a, b = a // g, b // g
            new = {c: a * v for c, v in row.items()}
            for c, v in piv.items():
                nv = new.get(c, 0) - b * v
                if nv:
                    new[c] = nv
                else:
                    new.pop(c, None)
            if new:
                g = functools.reduce(math.gcd, (abs(v) for v in new.values()))
                if g > 1:
                    new = {c: v // g for c, v in new.items()}
            row = new
    return len(pivots)


def betti_numbers(K: CellComplex) -> list[int]:
    """b_k = dim ker d_k - rank d_{k+1}, computed exactly."""
    return [K.n_cells(k) - K.boundary_rank(k) - K.boundary_rank(k + 1)
            for k in range(K.dimension + 1)]


# --------------------------------------------------------------------------
# plain-text import/export

_LINE = re.compile(r"^\s*(\d+)\s+(\S+)\s*:(.*):\s*(\S+)\s*$")


def load_complex(filename: str | Path) -> CellComplex:
    text = Path(filename).read_text()
    by_dim: dict[int, list[tuple[str, list[tuple[int, str]], float]]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0]
        if not line.strip():
            continue
        m = _LINE.match(line)
        if not m:
            raise ComplexError(f"{filename}:{lineno}: cannot parse {line!r}")
        dim, cid, bdry, weight = int(m[1]), m[2], m[3].split(), float(m[4])
        terms = []
        for tok in bdry:
            if tok[0] not in "+-":
                raise ComplexError(f"{filename}:{lineno}: boundary entries need a sign")
            terms.append((1 if tok[0] == "+" else -1, tok[1:]))
        by_dim.setdefault(dim, []).append((cid, terms, weight))
    if not by_dim:
        raise ComplexError(f"{filename}: empty complex")
    n = max(by_dim)
    if sorted(by_dim) != list(range(n + 1)):
        raise ComplexError(f"{filename}: missing cells in some degree")
    cells = [tuple(c for c, _, _ in by_dim[k]) for k in range(n + 1)]
    index = [{c: i for i, c in enumerate(ck)} for ck in cells]
    bd = [sp.csr_matrix((0, len(cells[0])), dtype=np.int64)]
    for k in range(1, n + 1):
        rows, cols, vals = [], [], []
        for j, (cid, terms, _) in enumerate(by_dim[k]):
            for sign, face in terms:
                if face not in index[k - 1]:
                    raise ComplexError(f"{filename}: cell {cid} references unknown {face}")
                rows.append(index[k - 1][face])
                cols.append(j)
                vals.append(sign)
        bd.append(_int_csr(sp.coo_matrix((vals, (rows, cols)),
                                         shape=(len(cells[k - 1]), len(cells[k])))))
    vols = [np.array([w for _, _, w in by_dim[k]], dtype=float) for k in range(n + 1)]
    duals = _share_dual_volumes(n, bd, vols)
    return CellComplex(n, tuple(cells), tuple(bd), tuple(vols), tuple(duals),
                       np.arange(len(cells[0]), dtype=float)[:, None],
                       name=Path(filename).stem)


def dump_complex(K: CellComplex, filename: str | Path) -> None:
    def cid(k, i):
        return f"c{k}_{i}"

    lines = ["# dim id : signed-boundary-id-list : weight"]
    for k in range(K.dimension + 1):
        B = K.boundary[k].tocsc() if k else None
        for i in range(K.n_cells(k)):
            terms = ""
            if k:
                lo, hi = B.indptr[i], B.indptr[i + 1]
                terms = " ".join(f"{'+' if v > 0 else '-'}{cid(k - 1, r)}"
                                 for r, v in zip(B.indices[lo:hi], B.data[lo:hi]))
            lines.append(f"{k} {cid(k, i)} : {terms} : {float(K.volumes[k][i])!r}")
    Path(filename).write_text("\n".join(lines) + "\n")
