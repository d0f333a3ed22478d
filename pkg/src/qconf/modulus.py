"""Discrete conformal modulus of curve families on grid graphs.

The grid is cell-centred: every node is a cell of area ``h^2`` carrying one
density value ``rho``.  Paths are polylines through cell centres whose
segments join lattice offsets ``(a, b)`` with ``gcd(a, b) = 1`` up to a
stencil radius; the rho-length of a path is the exact line integral of the
cellwise-constant density along it, plus half a cell at each end where the
path leaves a marked boundary face.  Long segments keep the path metric close
to Euclidean (a 4-neighbour stencil measures lengths in the l1 metric).

The modulus ``min sum rho^2 h^2`` over admissible densities is found by lazy
constraint generation: a shortest-path search finds the paths that are too
short, they join the active set, and the quadratic subproblem is re-solved
by warm-started cyclic (Hildreth) projection on its dual.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage, sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from .domains import Disk, Domain, image_domain
from .errors import NonConvergenceError, ParameterError, ResolutionError
from .mappings import Mapping

log = logging.getLogger(__name__)

MIN_NODES_ACROSS = 16
POOL_LIMIT = 50000
MAX_SWEEPS = 20000
FACE_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass
class GridGraph:
    domain: Domain
    h: float
    x0: float
    y0: float
    mask: np.ndarray  # (ny, nx) cell centres inside the domain

    def __post_init__(self):
        self.index = np.full(self.mask.shape, -1, dtype=np.int64)
        iy, ix = np.nonzero(self.mask)
        self.index[iy, ix] = np.arange(len(iy))
        self.ij = np.stack([iy, ix], 1)
        self.centers = np.stack([self.x0 + (ix + 0.5) * self.h, self.y0 + (iy + 0.5) * self.h], 1)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def n_nodes(self):
        return len(self.ij)


def _grid_extent(lo, hi, h):
    n = (hi - lo) / h
    n_round = round(n)
    return n_round if abs(n - n_round) < 1e-9 else math.ceil(n)


def build_grid(domain: Domain, h: float) -> GridGraph:
    """Cell-centred grid of the cells whose centres lie in ``domain``."""
    if not h > 0:
        raise ParameterError("grid spacing must be positive")
    xmin, xmax, ymin, ymax = domain.bbox
    nx, ny = _grid_extent(xmin, xmax, h), _grid_extent(ymin, ymax, h)
    if min(nx, ny) < MIN_NODES_ACROSS:
        raise ParameterError(
            f"h={h} leaves {min(nx, ny)} cells across {domain.spec()}; need at least {MIN_NODES_ACROSS}"
        )
    xs = xmin + (np.arange(nx) + 0.5) * h
    ys = ymin + (np.arange(ny) + 0.5) * h
    gx, gy = np.meshgrid(xs, ys)
    mask = np.asarray(domain.contains(gx, gy), dtype=bool)
    _require_connected(mask, f"{domain.spec()} at h={h}")
    return GridGraph(domain, h, xmin, ymin, mask)


def _require_connected(mask, what):
    _, n = ndimage.label(mask)
    if n != 1:
        raise ResolutionError(f"grid mask of {what} has {n} components")


# -- curve families ------------------------------------------------------------


@dataclass(frozen=True)
class CurveFamily:
    """All grid paths joining two marked parts of the boundary.

    ``kind`` is ``opposite-sides`` (``axis`` x: the sides ``x = xmin`` and
    ``x = xmax``; y: the bottom and top sides), ``annulus`` (inner circle of
    radius ``r_in`` to outer circle ``r_out``, centred on the domain) or
    ``arcs`` (boundary points whose polar angle about the domain centre lies
    in ``arc0`` resp. ``arc1``, in degrees).
    """

    kind: str
    axis: str = "x"
    r_in: float = 0.0
    r_out: float = 0.0
    arc0: tuple[float, float] = (0.0, 0.0)
    arc1: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("opposite-sides", "annulus", "arcs"):
            raise ParameterError(f"unknown curve family {self.kind!r}")
        if self.kind == "opposite-sides" and self.axis not in ("x", "y"):
            raise ParameterError("opposite-sides axis must be x or y")
        if self.kind == "annulus" and not (0 < self.r_in < self.r_out):
            raise ParameterError("annulus needs 0 < r_in < r_out")

    @classmethod
    def parse(cls, text: str) -> "CurveFamily":
        """``opposite-sides:x``, ``annulus:rin=0.25,rout=1``, ``arcs:45..135,225..315``."""
        kind, _, args = text.strip().lower().partition(":")
        try:
            if kind == "opposite-sides":
                return cls(kind, axis=args or "x")
            if kind == "annulus":
                kv = dict(item.split("=") for item in args.split(","))
                return cls(kind, r_in=float(kv["rin"]), r_out=float(kv["rout"]))
            if kind == "arcs":
                a0, a1 = args.split(",")
                return cls(kind, arc0=_parse_arc(a0), arc1=_parse_arc(a1))
        except (ValueError, KeyError) as exc:
            raise ParameterError(f"cannot parse family {text!r}") from exc
        raise ParameterError(f"unknown family {text!r}")

    def spec(self):
        if self.kind == "opposite-sides":
            return f"opposite-sides:{self.axis}"
        if self.kind == "annulus":
            return f"annulus:rin={self.r_in:g},rout={self.r_out:g}"
        return f"arcs:{self.arc0[0]:g}..{self.arc0[1]:g},{self.arc1[0]:g}..{self.arc1[1]:g}"

    # predicates on points of the continuum domain the family lives on

    def hole(self, x, y, domain: Domain):
        if self.kind != "annulus":
            return np.zeros(np.shape(x), dtype=bool)
        cx, cy = _center(domain)
        return np.hypot(x - cx, y - cy) < self.r_in

    def side(self, which: int, x, y, domain: Domain, tol: float):
        if self.kind == "opposite-sides":
            xmin, xmax, ymin, ymax = domain.bbox
            c, lo, hi = (x, xmin, xmax) if self.axis == "x" else (y, ymin, ymax)
            return c <= lo + tol if which == 0 else c >= hi - tol
        cx, cy = _center(domain)
        if self.kind == "annulus":
            r = np.hypot(x - cx, y - cy)
            mid = 0.5 * (self.r_in + self.r_out)
            return r < mid if which == 0 else r >= mid
        ang = np.degrees(np.arctan2(y - cy, x - cx))
        lo, hi = self.arc0 if which == 0 else self.arc1
        return _angle_in(ang, lo, hi)


def _parse_arc(text):
    lo, hi = text.split("..")
    return (float(lo), float(hi))


def _angle_in(ang, lo, hi):
    span = (hi - lo) % 360.0 or 360.0
    return (ang - lo) % 360.0 <= span


def _center(domain):
    if isinstance(domain, Disk):
        return domain.cx, domain.cy
    xmin, xmax, ymin, ymax = domain.bbox
    return 0.5 * (xmin + xmax), 0.5 * (ymin + ymax)


@dataclass
class MarkedGraph:
    """Active nodes of a grid plus the two marked boundary-face sets."""

    grid: GridGraph
    active: np.ndarray  # (ny, nx) bool, grid mask minus any hole
    nodes: np.ndarray  # grid node ids of active cells
    face0: np.ndarray  # active-local node ids carrying a side-0 face, with multiplicity
    face1: np.ndarray
    local: np.ndarray = field(repr=False, default=None)  # (ny, nx) active-local index or -1

    @property
    def n(self):
        return len(self.nodes)

    @property
    def centers(self):
        return self.grid.centers[self.nodes]


def mark_family(grid: GridGraph, family: CurveFamily, pullback: Mapping | None = None,
                source_domain: Domain | None = None) -> MarkedGraph:
    """Mark the family's boundary faces on ``grid``.

    With ``pullback`` the family is defined on ``source_domain`` and points
    of ``grid`` are pulled back before the predicates are applied; this is
    how a family is transplanted through a map.
    """
    dom = source_domain if source_domain is not None else grid.domain
    tol = grid.h / 8.0

    def pull(x, y):
        if pullback is None:
            return x, y
        return pullback.forward(x, y)

    cx, cy = grid.centers.T
    px, py = pull(cx, cy)
    hole = np.asarray(family.hole(px, py, dom), dtype=bool)
    active = grid.mask.copy()
    iy, ix = grid.ij.T
    active[iy[hole], ix[hole]] = False
    _require_connected(active, f"{family.spec()} on {grid.domain.spec()} at h={grid.h}")
    local = np.full(active.shape, -1, dtype=np.int64)
    ay, ax = np.nonzero(active)
    local[ay, ax] = np.arange(len(ay))
    nodes = grid.index[ay, ax]
    ny, nx = active.shape
    h = grid.h
    f0, f1 = [], []
    for dx, dy in FACE_DIRS:
        jy, jx = ay + dy, ax + dx
        inside = (jy >= 0) & (jy < ny) & (jx >= 0) & (jx < nx)
        nb_active = np.zeros(len(ay), dtype=bool)
        nb_active[inside] = active[jy[inside], jx[inside]]
        bnd = ~nb_active
        fx = grid.x0 + (ax[bnd] + 0.5 + 0.5 * dx) * h
        fy = grid.y0 + (ay[bnd] + 0.5 + 0.5 * dy) * h
        qx, qy = pull(fx, fy)
        ids = local[ay[bnd], ax[bnd]]
        f0.append(ids[np.asarray(family.side(0, qx, qy, dom, tol), dtype=bool)])
        f1.append(ids[np.asarray(family.side(1, qx, qy, dom, tol), dtype=bool)])
    face0, face1 = np.concatenate(f0), np.concatenate(f1)
    if not len(face0) or not len(face1):
        raise ParameterError(f"family {family.spec()} marks an empty boundary set")
    if np.intersect1d(face0, face1).size:
        raise ParameterError(f"family {family.spec()} marks overlapping node sets")
    return MarkedGraph(grid, active, nodes, face0, face1, local)


# -- edges ---------------------------------------------------------------------


def stencil_offsets(radius: int):
    offs = []
    for a in range(0, radius + 1):
        for b in range(-radius, radius + 1):
            if (a, b) <= (0, 0) or math.gcd(a, abs(b)) != 1:
                continue
            offs.append((a, b))
    return offs


def segment_cells(a: int, b: int):
    """Cells crossed by the segment from cell (0, 0) to cell (a, b), in units of h.

    Returns ``[(dx, dy, length), ...]`` with lengths summing to ``hypot(a, b)``;
    cells touched only at a corner get no entry.
    """
    ts = {0.0, 1.0}
    for c, span in ((a, abs(a)), (b, abs(b))):
        for k in range(span):
            ts.add((k + 0.5) / span)
    ts = sorted(ts)
    total = math.hypot(a, b)
    acc = {}
    for t0, t1 in zip(ts, ts[1:]):
        if t1 - t0 < 1e-12:
            continue
        tm = 0.5 * (t0 + t1)
        cell = (round(tm * a), round(tm * b))
        acc[cell] = acc.get(cell, 0.0) + (t1 - t0) * total
    return [(dx, dy, ln) for (dx, dy), ln in acc.items()]


def build_edges(mg: MarkedGraph, radius: int):
    """Straight edges between active cells and the cells each one crosses.

    Returns ``(u, v, cross)`` where ``cross`` is an ``(n_edges, n)`` sparse
    matrix of segment lengths per crossed cell, in units of ``h``, so
    ``h * (cross @ rho)`` is the exact line integral of the cellwise-constant
    density along each edge.  An edge is kept only if every cell it crosses
    is active.
    """
    act = mg.active
    ny, nx = act.shape
    ay, ax = np.nonzero(act)
    us, vs, er, ec, ev = [], [], [], [], []
    n_edges = 0
    for a, b in stencil_offsets(radius):
        cells = segment_cells(a, b)
        ok = np.ones(len(ay), dtype=bool)
        for dx, dy, _ in cells + [(a, b, 0.0)]:
            jx, jy = ax + dx, ay + dy
            inside = (jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny)
            hit = np.zeros(len(ay), dtype=bool)
            hit[inside] = act[jy[inside], jx[inside]]
            ok &= hit
        sx, sy = ax[ok], ay[ok]
        ids = n_edges + np.arange(len(sx))
        us.append(mg.local[sy, sx])
        vs.append(mg.local[sy + b, sx + a])
        for dx, dy, ln in cells:
            er.append(ids)
            ec.append(mg.local[sy + dy, sx + dx])
            ev.append(np.full(len(sx), ln))
        n_edges += len(sx)
    cross = sparse.csr_matrix(
        (np.concatenate(ev), (np.concatenate(er), np.concatenate(ec))), shape=(n_edges, mg.n)
    )
    return np.concatenate(us), np.concatenate(vs), cross


# -- quadratic subproblem -------------------------------------------------------


@njit(cache=True)
def _hildreth(indptr, idx, coef, norm2, lam, rho, scale, max_sweeps, tol):
    """Cyclic projection on the dual of ``min |rho|^2 / (2 scale)`` s.t. ``A rho >= 1``.

    ``rho = scale * A^T lam`` is kept in sync.  Returns (sweeps, max KKT residual).
    """
    resid = 0.0
    for sweep in range(max_sweeps):
        resid = 0.0
        for k in range(len(norm2)):
            s = 0.0
            for j in range(indptr[k], indptr[k + 1]):
                s += coef[j] * rho[idx[j]]
            viol = 1.0 - s
            new = lam[k] + viol / (scale * norm2[k])
            if new < 0.0:
                new = 0.0
            d = new - lam[k]
            if d != 0.0:
                for j in range(indptr[k], indptr[k + 1]):
                    rho[idx[j]] += scale * d * coef[j]
                lam[k] = new
            r = abs(viol) if lam[k] > 0.0 else max(viol, 0.0)
            if r > resid:
                resid = r
        if resid <= tol:
            return sweep + 1, resid
    return max_sweeps, resid


@dataclass
class ModulusSolution:
    value: float
    density: np.ndarray  # admissible rho per active node
    active_paths: list
    duality_gap: float
    iterations: int
    min_path_length: float
    marked: MarkedGraph = field(repr=False, default=None)

    def to_dict(self):
        return {
            "value": self.value,
            "duality_gap": self.duality_gap,
            "iterations": self.iterations,
            "active_paths": len(self.active_paths),
            "min_path_length": self.min_path_length,
        }

    def density_on_grid(self):
        """Density per grid node (zero on hole cells)."""
        out = np.zeros(self.marked.grid.n_nodes)
        out[self.marked.nodes] = self.density
        return out


@njit(cache=True)
def _cover_paths(order, through, threshold, p0, p1, ring, root):
    """Greedy path cover: one shortest path through each uncovered violated node."""
    n = len(order)
    covered = np.zeros(n, dtype=np.bool_)
    flat = []
    starts = [0]
    buf = np.empty(n, dtype=np.int64)
    for v in order:
        if through[v] >= threshold:
            break
        if covered[v]:
            continue
        # back half, reversed into forward order
        m = 0
        u = v
        while u != root and u >= 0:
            buf[m] = u
            m += 1
            u = p0[u]
        for k in range(m - 1, -1, -1):
            flat.append(buf[k])
        u = p1[v]
        while u != root and u >= 0:
            flat.append(u)
            u = p1[u]
        for k in range(starts[-1], len(flat)):
            for nb in ring[flat[k]]:
                if nb >= 0:
                    covered[nb] = True
        starts.append(len(flat))
    return np.array(flat, dtype=np.int64), np.array(starts, dtype=np.int64)


class _PathOracle:
    def __init__(self, mg: MarkedGraph, radius: int):
        self.mg = mg
        self.n = mg.n
        u, v, cross = build_edges(mg, radius)
        self.cross = cross
        m = len(u)
        self.u = np.concatenate([u, v])
        self.v = np.concatenate([v, u])
        self.eid = np.concatenate([np.arange(m), np.arange(m)])
        self.half = 0.5
        self.f0 = np.unique(mg.face0)
        self.f1 = np.unique(mg.face1)
        # 8-neighbourhood of every node; it contains all cells a stencil edge crosses
        ny, nx = mg.active.shape
        pad = np.pad(mg.local, 1, constant_values=-1)
        ay, ax = np.nonzero(mg.active)
        self.ring = np.stack(
            [pad[ay + 1 + dy, ax + 1 + dx] for dy in (-1, 0, 1) for dx in (-1, 0, 1)], 1
        )
        # (u, v) -> undirected edge id + 1, for turning node paths into rows
        self.lookup = sparse.csr_matrix((self.eid + 1, (self.u, self.v)), shape=(self.n, self.n))
        self._patterns = (self._pattern(self.f0), self._pattern(self.f1))

    def _pattern(self, sources):
        """CSR skeleton of the search graph plus the slot of every weight in it."""
        n = self.n
        rows = np.concatenate([self.u, np.full(len(sources), n)])
        cols = np.concatenate([self.v, sources])
        slot = sparse.csr_matrix((np.arange(1, len(rows) + 1), (rows, cols)), shape=(n + 1, n + 1))
        slot.sort_indices()
        order = slot.data.astype(np.int64) - 1
        return slot, order

    def _tree(self, rho, which):
        slot, order = self._patterns[which]
        sources = self.f0 if which == 0 else self.f1
        w = np.concatenate([(self.cross @ rho)[self.eid], self.half * rho[sources]])
        g = sparse.csr_matrix((w[order] + 1e-30, slot.indices, slot.indptr), shape=slot.shape)
        dist, pred = csgraph.dijkstra(g, directed=True, indices=self.n, return_predecessors=True)
        return dist[: self.n], pred[: self.n]

    def shortest(self, rho, threshold):
        """Shortest rho-length over the family, plus violated paths covering the grid.

        ``d0 + d1`` at a node is the length of the shortest path through it.
        Nodes are visited from the most violated up; a node next to a path
        picked in this call is skipped, which spreads the new paths over the
        whole domain instead of bunching them near one geodesic.
        """
        d0, p0 = self._tree(rho, 0)
        d1, p1 = self._tree(rho, 1)
        through = d0 + d1
        order = np.argsort(through, kind="stable")
        flat, starts = _cover_paths(order, through, threshold, p0, p1, self.ring, self.n)
        picked = [tuple(flat[a:b].tolist()) for a, b in zip(starts[:-1], starts[1:])]
        return float(through[order[0]]), picked

    def rows(self, paths):
        """Constraint rows: the rho-length of each path as a linear form in rho."""
        lens = np.array([len(p) for p in paths])
        flat = np.concatenate([np.asarray(p) for p in paths])
        starts = np.concatenate([[0], np.cumsum(lens)])
        tail = np.ones(len(flat), dtype=bool)
        tail[starts[1:] - 1] = False  # last node of each path has no outgoing edge
        a, b = flat[tail], flat[np.roll(tail, 1)]
        edges = np.asarray(self.lookup[a, b]).ravel() - 1
        owner = np.repeat(np.arange(len(paths)), lens - 1)
        sel = sparse.csr_matrix((np.ones(len(edges)), (owner, edges)), shape=(len(paths), self.cross.shape[0]))
        ends = np.concatenate([flat[starts[:-1]], flat[starts[1:] - 1]])
        own2 = np.tile(np.arange(len(paths)), 2)
        cap = sparse.csr_matrix((np.full(len(ends), self.half), (own2, ends)), shape=(len(paths), self.n))
        return (sel @ self.cross + cap).tocsr()


def discrete_modulus(
    grid: GridGraph,
    family: CurveFamily,
    exponent: float = 2.0,
    tol: float = 5e-3,
    *,
    stencil: int = 3,
    max_rounds: int = 200,
    multilevel: bool = True,
) -> ModulusSolution:
    """Discrete modulus ``min sum rho^2 h^2`` over densities admissible for ``family``.

    With ``multilevel`` the same problem is first solved on the grid of
    spacing ``2h`` (recursively); the coarse optimal density only chooses the
    first batch of paths, so it changes speed, not the answer's validity.
    """
    if exponent != 2:
        raise ParameterError("only the planar conformal exponent 2 is supported")
    if not (0 < tol < 1):
        raise ParameterError("tol must lie in (0, 1)")

    def make(h):
        return mark_family(grid if h == grid.h else build_grid(grid.domain, h), family)

    return _solve_levels(make, grid.h, tol, stencil, max_rounds, multilevel)


def _solve_levels(make, h, tol, stencil, max_rounds, multilevel):
    mg = make(h)
    seed = None
    if multilevel:
        try:
            coarse = _solve_levels(make, 2 * h, tol, stencil, max_rounds, True)
        except (ParameterError, ResolutionError, NonConvergenceError):
            coarse = None
        if coarse is not None:
            seed = _prolong(coarse, mg)
    return _solve(mg, tol, stencil, max_rounds, seed)


def _prolong(coarse: ModulusSolution, mg: MarkedGraph):
    cg = coarse.marked.grid
    cx, cy = mg.centers.T
    ix = np.clip(np.floor((cx - cg.x0) / cg.h).astype(np.int64), 0, cg.shape[1] - 1)
    iy = np.clip(np.floor((cy - cg.y0) / cg.h).astype(np.int64), 0, cg.shape[0] - 1)
    loc = coarse.marked.local[iy, ix]
    out = np.where(loc >= 0, coarse.density[np.maximum(loc, 0)], 0.0)
    return out + 1e-3 * max(out.mean(), 1e-300)


def _solve(mg: MarkedGraph, tol, stencil, max_rounds, seed=None):
    # everything below works in grid units (h = 1), which keeps the iteration
    # identical under a uniform scaling of domain and h
    oracle = _PathOracle(mg, stencil)
    n = mg.n
    h = mg.grid.h
    scale = 0.5
    rho = np.zeros(n)
    lam = np.zeros(0)
    a_mat, paths = None, []
    pool, pool_paths = None, []
    best = None
    for rnd in range(1, max_rounds + 1):
        if rnd == 1:
            # seed with geodesics of a guess (uniform density: Euclidean geodesics)
            _, found = oracle.shortest(np.ones(n) if seed is None else seed, np.inf)
            lmin = 0.0
        else:
            lmin, found = oracle.shortest(rho, 1.0 - 0.5 * tol)
        energy = float(rho @ rho)
        if lmin > 0:
            best = energy / lmin**2
        log.debug("round %d: rows=%d energy=%.8g lmin=%.6f", rnd, len(paths), energy, lmin)
        if rnd > 1 and lmin >= 1.0 - tol:
            dual = float(lam.sum()) - energy
            density = rho / (lmin * h)
            best = h * h * float(density @ density)
            return ModulusSolution(
                value=best,
                density=density,
                active_paths=list(paths),
                duality_gap=max(best - dual, 0.0),
                iterations=rnd,
                min_path_length=lmin,
                marked=mg,
            )
        known = set(paths)
        found = [p for p in found if p not in known]
        if not found:
            raise NonConvergenceError("shortest-path oracle produced no new constraint", best)
        blocks = [oracle.rows(found)]
        if pool is not None:
            # previously dropped rows that the new density violates come back cheaply
            back = (pool @ rho) < 1.0 - 0.5 * tol
            if back.any():
                idx = np.nonzero(back)[0]
                blocks.append(pool[idx])
                found = found + [pool_paths[k] for k in idx]
                rest = np.nonzero(~back)[0]
                pool, pool_paths = pool[rest], [pool_paths[k] for k in rest]
        if a_mat is not None:
            blocks.insert(0, a_mat)
        a_mat = sparse.vstack(blocks, format="csr")
        a_mat.sort_indices()
        paths.extend(found)
        lam = np.concatenate([lam, np.zeros(len(found))])
        rho = scale * (a_mat.T @ lam)
        norm2 = np.asarray(a_mat.multiply(a_mat).sum(axis=1)).ravel()
        sweeps, resid = _hildreth(
            a_mat.indptr.astype(np.int64), a_mat.indices.astype(np.int64), a_mat.data,
            norm2, lam, rho, scale, MAX_SWEEPS, 0.1 * tol,
        )
        log.debug("  projection: rows=%d sweeps=%d residual=%.2e", len(lam), sweeps, resid)
        np.maximum(rho, 0.0, out=rho)
        # rows with zero multiplier do not shape the optimum; park them in the pool
        keep, drop = np.nonzero(lam > 0)[0], np.nonzero(lam == 0)[0]
        dropped = a_mat[drop]
        pool = dropped if pool is None else sparse.vstack([pool, dropped], format="csr")
        pool_paths = pool_paths + [paths[k] for k in drop]
        if len(pool_paths) > POOL_LIMIT:
            pool, pool_paths = pool[-POOL_LIMIT:], pool_paths[-POOL_LIMIT:]
        a_mat = a_mat[keep]
        paths = [paths[k] for k in keep]
        lam = lam[keep]
    raise NonConvergenceError(f"modulus did not converge in {max_rounds} rounds", best)


def pushforward_modulus(
    m: Mapping,
    grid: GridGraph,
    family: CurveFamily,
    tol: float = 5e-3,
    *,
    stencil: int = 3,
    max_rounds: int = 200,
    multilevel: bool = True,
) -> ModulusSolution:
    """Modulus of the image family ``m(family)`` on a grid over the image domain."""
    target = image_domain(m, grid.domain)
    inv = m.inverse()

    def make(h):
        return mark_family(build_grid(target, h), family, pullback=inv, source_domain=grid.domain)

    return _solve_levels(make, grid.h, tol, stencil, max_rounds, multilevel)


def discrete_capacity(mg: MarkedGraph) -> float:
    """Dirichlet energy of the discrete potential (0 on side-0 faces, 1 on side-1 faces).

    Five-point finite volumes on the active cells; a marked face sits half a
    cell from its node and therefore carries conductance 2.
    """
    n = mg.n
    act = mg.active
    rows, cols = [], []
    for dx, dy in ((1, 0), (0, 1)):
        a = mg.local[: act.shape[0] - dy, : act.shape[1] - dx]
        b = mg.local[dy:, dx:]
        ok = (a >= 0) & (b >= 0)
        rows.append(a[ok])
        cols.append(b[ok])
    r, c = np.concatenate(rows), np.concatenate(cols)
    w = sparse.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    w = w + w.T
    lap = sparse.diags(np.asarray(w.sum(1)).ravel()) - w
    d0 = np.bincount(mg.face0, minlength=n) * 2.0
    d1 = np.bincount(mg.face1, minlength=n) * 2.0
    a_mat = (lap + sparse.diags(d0 + d1)).tocsc()
    u = spsolve(a_mat, d1)
    return float(u @ (lap @ u) + d0 @ u**2 + d1 @ (u - 1.0) ** 2)
