"""Numerical checks of modulus, measure-distortion and weighted Poincaré inequalities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domains import Diamond, Disk, Domain, Rect, UnitSquare, image_domain, parse_domain
from .errors import DomainError, InconclusiveError, ParameterError
from .mappings import (
    Affine,
    Identity,
    Mapping,
    NormConvention,
    matrix_norm,
    singular_values,
)
from .modulus import CurveFamily, build_grid, discrete_modulus, pushforward_modulus
from .quadrature import cell_averages, composition_norm_bound, integrate
from .spectral import discretize, poincare_bound

N_DIM = 2


@dataclass
class InequalityReport:
    check: str
    lhs: float
    rhs: float
    slack: float
    satisfied: bool
    details: dict = field(default_factory=dict)

    @classmethod
    def build(cls, check, lhs, rhs, slack, **details):
        if slack < 0:
            raise ParameterError("slack must be nonnegative")
        ok = bool(math.isfinite(lhs) and lhs <= rhs * (1.0 + slack))
        return cls(check, float(lhs), float(rhs), float(slack), ok, details)

    def to_dict(self):
        return {
            "check": self.check,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "satisfied": self.satisfied,
            "details": dict(self.details),
        }


def default_source(m: Mapping) -> Domain:
    name = m.natural_domain
    if name == "plane":
        return UnitSquare()
    return parse_domain(name)


def _constant_derivative(m: Mapping):
    if isinstance(m, Identity):
        return (1.0, 0.0, 0.0, 1.0)
    if isinstance(m, Affine):
        return (m.a, m.b, m.c, m.d)
    return None


def _inner_dilatation(a, b, c, d):
    det = np.abs(a * d - b * c)
    _, smin = singular_values(a, b, c, d)
    with np.errstate(all="ignore"):
        return np.where(det > 0, det / np.where(smin > 0, smin, 1.0) ** 2, 0.0)


# -- modulus inequality -------------------------------------------------------------


def q_inequality_check(
    m: Mapping,
    domain: Domain,
    family: CurveFamily,
    h: float,
    *,
    slack: float = 0.1,
    tol: float = 5e-3,
    stencil: int = 3,
) -> InequalityReport:
    """``M(m Gamma) <= sum K^I rho*^2 h^2`` with ``rho*`` extremal for ``Gamma``.

    ``K^I`` is averaged over each cell, so integrable singularities on cell
    edges are handled; a divergent average makes the report inconclusive.
    """
    grid = build_grid(domain, h)
    src = discrete_modulus(grid, family, tol=tol, stencil=stencil)
    img = pushforward_modulus(m, grid, family, tol=tol, stencil=stencil)
    rho = src.density
    const = _constant_derivative(m)
    if const is not None:
        k_inner = np.full(len(rho), float(_inner_dilatation(*(np.float64(v) for v in const))))
    else:

        def field(x, y):
            return _inner_dilatation(*m.derivative(x, y))

        k_inner = cell_averages(field, src.marked.centers, h)
    details = {
        "h": h,
        "family": family.spec(),
        "source_modulus": src.value,
        "image_modulus": img.value,
        "source_gap": src.duality_gap,
        "image_gap": img.duality_gap,
    }
    if not np.all(np.isfinite(k_inner)):
        details.update(divergent=True, inconclusive=True)
        return InequalityReport("q-inequality", img.value, math.inf, slack, False, details)
    rhs = h * h * float(rho @ (k_inner * rho))
    details["ratio"] = img.value / rhs
    return InequalityReport.build("q-inequality", img.value, rhs, slack, **details)


# -- measure distortion --------------------------------------------------------------


def _hq_power_field(m: Mapping, q: float, exponent: float, convention):
    inv = m.inverse()

    def f(u, v):
        x, y = inv.forward(u, v)
        a, b, c, d = m.derivative(x, y)
        det = np.abs(a * d - b * c)
        norm = matrix_norm(a, b, c, d, convention)
        with np.errstate(all="ignore"):
            hq = np.where(det > 0, (norm**q / np.where(det > 0, det, 1.0)) ** (1.0 / q), 0.0)
        return hq**exponent

    return f


def _check_box_inside(box: Rect, target: Domain):
    x0, x1, y0, y1 = box.bbox
    s = np.linspace(0.0, 1.0, 33)
    xs = np.concatenate([x0 + (x1 - x0) * s, np.full(33, x1), x0 + (x1 - x0) * s, np.full(33, x0)])
    ys = np.concatenate([np.full(33, y0), y0 + (y1 - y0) * s, np.full(33, y1), y0 + (y1 - y0) * s])
    if not np.all(target.contains(xs, ys)):
        raise DomainError(f"box {box.spec()} leaves the image domain {target.spec()}")


def measure_distortion_check(
    m: Mapping,
    boxes: list[Rect],
    q: float,
    h: float,
    *,
    domain: Domain | None = None,
    convention: NormConvention | str = NormConvention.SPECTRAL,
    slack: float = 0.0,
    subsamples: int = 4,
) -> InequalityReport:
    """Empirical constant in ``|m^-1(A)| <= C int_A H_q^(nq/(n-q))`` over target boxes.

    The preimage measure counts source cells whose mapped sample points land
    in the box (``subsamples**2`` points per cell, so cells count fractionally).  ``lhs``/``rhs`` belong to the box attaining ``C_empirical``; the
    report is "satisfied" when that constant is finite (no value of ``C`` is
    asserted).
    """
    if not (1 <= q < N_DIM):
        raise ParameterError(f"measure distortion needs 1 <= q < {N_DIM}")
    if not boxes:
        raise ParameterError("no boxes given")
    convention = NormConvention(convention)
    source = domain if domain is not None else default_source(m)
    target = image_domain(m, source)
    exponent = N_DIM * q / (N_DIM - q)
    grid = build_grid(source, h)
    off = ((np.arange(subsamples) + 0.5) / subsamples - 0.5) * h
    ox, oy = (t.ravel() for t in np.meshgrid(off, off))
    u, v = m.forward((grid.centers[:, 0, None] + ox).ravel(), (grid.centers[:, 1, None] + oy).ravel())
    weight = h * h / subsamples**2
    const = _constant_derivative(m)
    rows = []
    for box in boxes:
        _check_box_inside(box, target)
        x0, x1, y0, y1 = box.bbox
        inside = (u >= x0) & (u <= x1) & (v >= y0) & (v <= y1)
        lhs = int(inside.sum()) * weight
        if const is not None:
            a, b, c, d = (np.float64(t) for t in const)
            det = abs(a * d - b * c)
            hq = (float(matrix_norm(a, b, c, d, convention)) ** q / det) ** (1.0 / q)
            rhs = hq**exponent * box.w * box.h
        else:
            res = integrate(_hq_power_field(m, q, exponent, convention), box, rel_tol=1e-8)
            rhs = math.inf if res.divergent else res.value
        ratio = lhs / rhs if rhs > 0 else math.inf
        rows.append({"box": box.spec(), "lhs": float(lhs), "rhs": float(rhs), "ratio": float(ratio),
                     "divergent": not math.isfinite(rhs)})
    worst = max(rows, key=lambda r: r["ratio"])
    c_emp = worst["ratio"]
    report = InequalityReport(
        "measure-distortion", worst["lhs"], worst["rhs"], slack, bool(math.isfinite(c_emp)),
        {"C_empirical": c_emp, "q": q, "exponent": exponent, "h": h, "boxes": rows},
    )
    return report


# -- weighted Poincaré ------------------------------------------------------------------


TEST_FUNCTIONS = {
    "x": (lambda x, y: x, lambda x, y: (np.ones_like(x), np.zeros_like(x))),
    "y": (lambda x, y: y, lambda x, y: (np.zeros_like(x), np.ones_like(x))),
    "xy": (lambda x, y: x * y, lambda x, y: (y, x)),
    "sin_x": (lambda x, y: np.sin(math.pi * x), lambda x, y: (math.pi * np.cos(math.pi * x), np.zeros_like(x))),
    "sin_y": (lambda x, y: np.sin(math.pi * y), lambda x, y: (np.zeros_like(x), math.pi * np.cos(math.pi * y))),
    "const": (lambda x, y: np.ones_like(x), lambda x, y: (np.zeros_like(x), np.zeros_like(x))),
}


def _source_poincare_constant(source: Domain) -> float:
    if isinstance(source, Disk):
        return poincare_bound("disk")
    if isinstance(source, (Diamond, UnitSquare)) or (isinstance(source, Rect) and source.w == source.h):
        return poincare_bound("diamond-square")
    raise ParameterError(f"no built-in Poincaré constant for {source.spec()}; pass b_constant")


def weighted_deviation(f, w, s: float, cell_area: float, *, search: bool = False):
    """``inf_c (sum |f - c|^s w dA)^(1/s)`` and the minimizing constant.

    ``s = 2`` is solved by the weighted mean unless ``search`` is set; other
    exponents use ternary search on the convex map ``c -> sum |f - c|^s w``.
    """

    def cost(c):
        return float(np.sum(np.abs(f - c) ** s * w)) * cell_area

    if s == 2 and not search:
        c = float(np.sum(f * w) / np.sum(w))
        return cost(c) ** 0.5, c
    lo, hi = float(f.min()), float(f.max())
    for _ in range(200):
        if hi - lo <= 1e-14 * max(1.0, abs(lo), abs(hi)):
            break
        m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
        if cost(m1) <= cost(m2):
            hi = m2
        else:
            lo = m1
    c = 0.5 * (lo + hi)
    return cost(c) ** (1.0 / s), c


def weighted_poincare_check(
    m: Mapping,
    s: float,
    p: float,
    test_functions: list[str],
    h: float,
    *,
    q: float = 1.0,
    domain: Domain | None = None,
    b_constant: float | None = None,
    convention: NormConvention | str = NormConvention.SPECTRAL,
    slack: float = 0.0,
) -> list[InequalityReport]:
    """Weighted ``(s, p)``-Poincaré inequality on the image domain, one report per function.

    The weight is the volume derivative of the inverse map, ``1/|J(m^-1(y))|``;
    the constant is ``B_{s,q}(source) * ||K_p | L_kappa(source)||``.
    """
    if not (q < s):
        raise ParameterError(f"need q < s, got q={q}, s={s}")
    if not (1 <= q <= p < math.inf):
        raise ParameterError(f"need 1 <= q <= p < inf, got p={p}, q={q}")
    unknown = [name for name in test_functions if name not in TEST_FUNCTIONS]
    if unknown:
        raise ParameterError(f"unknown test functions {unknown}; choose from {sorted(TEST_FUNCTIONS)}")
    convention = NormConvention(convention)
    source = domain if domain is not None else default_source(m)
    if b_constant is None:
        if (s, q) != (2, 1):
            raise ParameterError("built-in Poincaré constants cover s=2, q=1 only; pass b_constant")
        b_constant = _source_poincare_constant(source)
    target = image_domain(m, source)
    disc = discretize(target, h)
    ny, nx = disc.mask.shape
    x0, _, y0, _ = target.bbox
    iy, ix = np.nonzero(disc.mask)
    u = x0 + (ix + 0.5) * h
    v = y0 + (iy + 0.5) * h
    inv = m.inverse()
    px, py = inv.forward(u, v)
    a, b, c, d = m.derivative(px, py)
    with np.errstate(all="ignore"):
        w = 1.0 / np.abs(a * d - b * c)
    details = {"h": h, "s": s, "p": p, "q": q, "B": b_constant}
    try:
        ia, ib, ic, id_ = inv.derivative(u, v)
        with np.errstate(all="ignore"):
            w_inv = np.abs(ia * id_ - ib * ic)
        both = np.isfinite(w) & np.isfinite(w_inv)
        if both.any():
            details["weight_crosscheck"] = float(np.max(np.abs(w[both] - w_inv[both]) / np.abs(w_inv[both])))
    except NotImplementedError:
        pass
    kpq = composition_norm_bound(m, source, p, q, convention)
    details["K_pq"] = kpq.norm_bound
    reports = []
    if not np.all(np.isfinite(w)) or not math.isfinite(kpq.norm_bound):
        for name in test_functions:
            reports.append(InequalityReport(
                "weighted-poincare", math.nan, math.inf, slack, False,
                {**details, "function": name, "inconclusive": True,
                 "reason": "singular weight on grid" if not np.all(np.isfinite(w)) else "divergent K_pq"},
            ))
        return reports
    area = h * h
    for name in test_functions:
        f, grad = TEST_FUNCTIONS[name]
        fv = f(u, v)
        lhs, c_opt = weighted_deviation(fv, w, s, area)
        extra = {}
        if s == 2:
            extra["mean_vs_search"] = abs(lhs - weighted_deviation(fv, w, s, area, search=True)[0])
        gx, gy = grad(u, v)
        grad_norm = float(np.sum(np.hypot(gx, gy) ** p) * area) ** (1.0 / p)
        rhs = b_constant * kpq.norm_bound * grad_norm
        reports.append(InequalityReport.build(
            "weighted-poincare", lhs, rhs, slack, **details, function=name, constant=c_opt, **extra,
        ))
    return reports


# -- dual exponents -------------------------------------------------------------------


@dataclass(frozen=True)
class DualExponents:
    p_dual: float
    q_dual: float
    mode: str
    n: int

    def to_dict(self):
        return {"p_dual": self.p_dual, "q_dual": self.q_dual, "mode": self.mode, "n": self.n}


def holder_conjugate(p: float) -> float:
    if not p >= 1:
        raise ParameterError("Hölder exponent must be >= 1")
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def dual_exponents(p: float, q: float, n: int = 2, mode: str = "sobolev") -> DualExponents:
    """Dual exponents: ``p/(p-n+1)`` (Sobolev duality) or Hölder conjugates (planar)."""
    mode = mode.lower()
    if mode in ("sobolev", "sobolevdual"):
        if not (n >= 2 and n - 1 < q <= p < math.inf):
            raise ParameterError(f"Sobolev duality needs n-1 < q <= p < inf, got n={n}, p={p}, q={q}")
        return DualExponents(p / (p - n + 1), q / (q - n + 1), "sobolev", n)
    if mode in ("holder", "planarholder"):
        if not (1 <= q <= p < math.inf):
            raise ParameterError(f"Hölder duality needs 1 <= q <= p < inf, got p={p}, q={q}")
        return DualExponents(holder_conjugate(p), holder_conjugate(q), "holder", 2)
    raise ParameterError(f"unknown duality mode {mode!r}")
