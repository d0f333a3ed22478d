"""Neumann eigenvalues on staircase grids and the cusp lower-bound pipeline.

The lower bound for the first non-trivial Neumann eigenvalue of a Hölder
cusp domain combines three ingredients: the composition-operator norm of
the cusp map (the K-integral), the (2,1)-Poincaré constant of the source
square and the supremum ``M2 = sup |J|^(1/2)``.  A finite-difference
eigensolver provides an independent numerical value to compare against.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import splu

from .domains import CuspDomain, Domain, PaperTriangle
from .errors import NonConvergenceError, ParameterError, PoleError, ResolutionError
from .mappings import HolderCusp, NormConvention
from .quadrature import composition_norm_bound, cusp_k_squared

log = logging.getLogger(__name__)

MIN_CELLS = 256
SQRT_PI3 = math.sqrt(math.pi**3)


# -- discretization -------------------------------------------------------------


@dataclass
class DiscretizedDomain:
    domain: Domain
    h: float
    mask: np.ndarray  # (ny, nx) cells whose centres lie in the domain

    @property
    def cells(self) -> int:
        return int(self.mask.sum())


def discretize(domain: Domain, h: float, *, min_cells: int = 0) -> DiscretizedDomain:
    if not h > 0:
        raise ParameterError("grid spacing must be positive")
    xmin, xmax, ymin, ymax = domain.bbox
    nx = max(1, round((xmax - xmin) / h))
    ny = max(1, round((ymax - ymin) / h))
    xs = xmin + (np.arange(nx) + 0.5) * h
    ys = ymin + (np.arange(ny) + 0.5) * h
    gx, gy = np.meshgrid(xs, ys)
    mask = np.asarray(domain.contains(gx, gy), dtype=bool)
    _, comps = ndimage.label(mask)
    if comps != 1:
        raise ResolutionError(f"{domain.spec()} at h={h} gives {comps} connected pieces")
    if mask.sum() < min_cells:
        raise ResolutionError(f"{domain.spec()} at h={h} has only {mask.sum()} cells")
    return DiscretizedDomain(domain, h, mask)


def _laplacian_from_mask(mask: np.ndarray, h: float) -> sparse.csr_matrix:
    idx = np.full(mask.shape, -1, dtype=np.int64)
    n = int(mask.sum())
    idx[mask] = np.arange(n)
    rows, cols = [], []
    for a, b in ((idx[:, :-1], idx[:, 1:]), (idx[:-1, :], idx[1:, :])):
        ok = (a >= 0) & (b >= 0)
        rows.append(a[ok])
        cols.append(b[ok])
    r, c = np.concatenate(rows), np.concatenate(cols)
    adj = sparse.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    adj = adj + adj.T
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return ((sparse.diags(deg) - adj) / (h * h)).tocsr()


def assemble_neumann_laplacian(domain: Domain, h: float) -> sparse.csr_matrix:
    """Five-point Neumann Laplacian (``-Delta``) on the cells of ``domain``.

    Missing neighbours are mirrored, i.e. the flux through a boundary face is
    zero, so every row sums to zero and constants span the kernel.
    """
    return _laplacian_from_mask(discretize(domain, h).mask, h)


# -- eigensolver ----------------------------------------------------------------


@dataclass
class EigenReport:
    mu1: float
    residual: float
    grid_h: float
    richardson_estimate: float | None = None
    iterations: int = 0
    operator_norm: float = 0.0
    eigenvector: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self):
        return {
            "mu1": self.mu1,
            "residual": self.residual,
            "grid_h": self.grid_h,
            "richardson_estimate": self.richardson_estimate,
            "iterations": self.iterations,
        }


def first_nontrivial_eigenvalue(
    op: sparse.spmatrix,
    tol: float = 1e-10,
    *,
    max_iters: int = 500,
    block: int = 4,
    shift: float = 1.0,
    grid_h: float = math.nan,
) -> EigenReport:
    """Smallest eigenvalue of ``op`` on the complement of the constants.

    Block inverse iteration with ``(op + shift I)^-1`` (one sparse LU), the
    normalized constant projected out every step, and Rayleigh-Ritz on the
    block.  Stops when ``|A v - mu v| <= tol * |A|``.
    """
    a = sparse.csr_matrix(op)
    n = a.shape[0]
    if n < block + 2:
        raise ParameterError("operator too small for the block iteration")
    if abs(a - a.T).max() > 1e-12 * abs(a).max():
        raise ParameterError("operator is not symmetric")
    anorm = float(abs(a).sum(axis=1).max())  # Gershgorin bound on the spectral norm
    one = np.full(n, 1.0 / math.sqrt(n))
    lu = splu((a + shift * sparse.identity(n)).tocsc())
    rng = np.random.default_rng(12345)
    v = rng.standard_normal((n, block))
    mu = math.nan
    resid = math.inf
    for it in range(1, max_iters + 1):
        v -= np.outer(one, one @ v)
        v, _ = np.linalg.qr(v)
        v = lu.solve(v)
        v -= np.outer(one, one @ v)
        v, _ = np.linalg.qr(v)
        av = a @ v
        theta, s = np.linalg.eigh(v.T @ av)
        v, av = v @ s, av @ s
        mu = float(theta[0])
        resid = float(np.linalg.norm(av[:, 0] - mu * v[:, 0]))
        if resid <= tol * anorm:
            vec = v[:, 0] / np.linalg.norm(v[:, 0])
            log.debug("eigensolver converged: n=%d it=%d mu=%.12g", n, it, mu)
            return EigenReport(max(mu, 0.0), resid, grid_h, None, it, anorm, vec)
    raise NonConvergenceError(
        f"eigensolver residual {resid:.3g} above {tol:g}*|A| after {max_iters} iterations", mu
    )


def neumann_mu1(domain: Domain, h: float, tol: float = 1e-10, *, max_iters: int = 500,
                richardson: bool = True) -> EigenReport:
    """First non-trivial Neumann eigenvalue of ``domain`` at spacing ``h``.

    With ``richardson`` the problem is also solved at ``2h`` and the
    second-order extrapolation ``(4 mu_h - mu_2h) / 3`` is attached.
    """
    disc = discretize(domain, h, min_cells=MIN_CELLS)
    fine = first_nontrivial_eigenvalue(
        _laplacian_from_mask(disc.mask, h), tol, max_iters=max_iters, grid_h=h
    )
    if richardson:
        try:
            coarse_mask = discretize(domain, 2 * h).mask
            coarse = first_nontrivial_eigenvalue(
                _laplacian_from_mask(coarse_mask, 2 * h), tol, max_iters=max_iters, grid_h=2 * h
            )
            fine.richardson_estimate = (4.0 * fine.mu1 - coarse.mu1) / 3.0
        except (ResolutionError, ParameterError) as exc:
            log.info("no Richardson estimate: %s", exc)
    return fine


def write_convergence_csv(path, reports) -> None:
    """CSV table ``h, mu1, residual`` for plotting grid convergence."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "mu1", "residual"])
        for r in reports:
            w.writerow([f"{r.grid_h:.12g}", f"{r.mu1:.12g}", f"{r.residual:.12g}"])


# -- Poincaré constants and the cusp bound ------------------------------------------


POINCARE_KINDS = ("disk", "diamond-square", "bilipschitz")


def poincare_bound(kind: str, L: float | None = None) -> float:
    """(2,1)-Poincaré constant for the unit disk, the square, or a bi-Lipschitz disk image."""
    kind = kind.lower()
    if kind == "disk":
        return 3.0 * SQRT_PI3 / 4.0
    if kind in ("diamond-square", "square", "diamond"):
        return 3.0 * SQRT_PI3 / 2.0
    if kind == "bilipschitz":
        if L is None or not L >= 1:
            raise ParameterError("bi-Lipschitz constant needs L >= 1")
        return 3.0 * math.sqrt(L**5 * math.pi**3) / 4.0
    raise ParameterError(f"unknown Poincaré domain kind {kind!r}")


def cusp_closed_form_bound(alpha: float) -> float:
    _check_alpha(alpha)
    g = alpha * (2.0 - alpha) * (3.0 - alpha)
    return (alpha + 1.0) * g / (9.0 * math.pi**3 * alpha * (alpha + 1.0 + g))


def _check_alpha(alpha):
    if not alpha > 1:
        raise ParameterError("alpha must exceed 1")
    if alpha in (2.0, 3.0):
        raise PoleError(f"alpha={alpha:g} is a pole of the cusp bound")


@dataclass
class SpectralBoundReport:
    alpha: float
    closed_form_bound: float
    pipeline_bound: float
    components: dict
    antiderivative_mode: bool
    numerical_mu1: float | None = None
    satisfied: bool | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "closed_form_bound": self.closed_form_bound,
            "pipeline_bound": self.pipeline_bound,
            "components": dict(self.components),
            "antiderivative_mode": self.antiderivative_mode,
            "numerical_mu1": self.numerical_mu1,
            "satisfied": self.satisfied,
            "details": dict(self.details),
        }


def cusp_spectral_bound(
    alpha: float,
    with_fd_check: bool = False,
    h: float = 1.0 / 128,
    *,
    tol: float = 1e-10,
    max_iters: int = 500,
) -> SpectralBoundReport:
    """Lower bound for ``mu1`` of the cusp domain, recombined from its components.

    ``pipeline_bound = (K^2 B^2 M2^2)^-1`` uses the closed-form value of the
    squared K-integral, so it must agree with the closed form to rounding.
    For ``alpha >= 2`` that integral diverges and the components are formal
    (``antiderivative_mode``); for ``2 < alpha < 3`` the formal ``K^2`` is
    negative and so is the bound.
    """
    _check_alpha(alpha)
    closed = cusp_closed_form_bound(alpha)
    k2 = cusp_k_squared(alpha)
    b = poincare_bound("diamond-square")
    m2 = math.sqrt(alpha)
    pipeline = 1.0 / (k2 * b * b * m2 * m2)
    formal = alpha >= 2.0
    components = {"K_norm": math.sqrt(k2) if k2 > 0 else math.nan, "K_squared": k2, "B_source": b, "M2": m2}
    details = {}
    if not formal:
        quad = composition_norm_bound(
            HolderCusp(alpha), PaperTriangle(), 2.0, 1.0, NormConvention.FROBENIUS,
            rel_tol=1e-10, multiplicity=4.0,
        )
        components["K_norm_quadrature"] = quad.norm_bound
    else:
        details["note"] = "K-integral diverges for alpha >= 2; bound is the formal value"
    report = SpectralBoundReport(alpha, closed, pipeline, components, formal, details=details)
    if with_fd_check:
        try:
            eig = neumann_mu1(CuspDomain(alpha), h, tol, max_iters=max_iters)
        except NonConvergenceError as exc:
            report.details["fd_error"] = str(exc)
            return report
        report.numerical_mu1 = eig.mu1
        report.satisfied = bool(eig.mu1 >= closed)
        report.details.update({"fd_h": h, "fd_residual": eig.residual,
                               "richardson_estimate": eig.richardson_estimate})
    return report
