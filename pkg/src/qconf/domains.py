"""Planar integration and discretization regions.

Each domain knows its membership test, bounding box and exact area, and
splits itself into :class:`Piece` objects for quadrature.  A piece maps the
parameter square ``(s, t) in [0, 1]^2`` onto part of the domain; the edge
``t = 0`` is always the one touching a potential singular locus (the
x-axis, or the centre of a disk), so the integrator can refine towards it
geometrically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParameterError, UnsupportedMapError
from .mappings import DOMAIN_TOL, Mapping


@dataclass(frozen=True)
class Piece:
    """``y = y0 + (y1 - y0) t``, ``x = lo(y) + (hi(y) - lo(y)) s``."""

    y0: float
    y1: float
    lo: Callable
    hi: Callable

    def to_xy(self, s, t):
        y = self.y0 + (self.y1 - self.y0) * t
        lo, hi = self.lo(y), self.hi(y)
        x = lo + (hi - lo) * s
        jac = np.abs(self.y1 - self.y0) * (hi - lo)
        return x, y, jac


@dataclass(frozen=True)
class PolarPiece:
    """Sector ``r = R t``, ``theta = th0 + (th1 - th0) s`` around ``(cx, cy)``."""

    cx: float
    cy: float
    radius: float
    th0: float
    th1: float

    def to_xy(self, s, t):
        r = self.radius * t
        th = self.th0 + (self.th1 - self.th0) * s
        jac = self.radius * (self.th1 - self.th0) * r
        return self.cx + r * np.cos(th), self.cy + r * np.sin(th), jac


def _const(v):
    return lambda y: np.full_like(np.asarray(y, dtype=float), v)


class Domain:
    kind = "domain"

    def contains(self, x, y, tol: float = DOMAIN_TOL):
        raise NotImplementedError

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        raise NotImplementedError

    @property
    def area(self) -> float:
        raise NotImplementedError

    def pieces(self):
        raise NotImplementedError

    def spec(self) -> str:
        raise NotImplementedError

    def __str__(self):
        return self.spec()


@dataclass(frozen=True)
class Rect(Domain):
    """Axis-aligned ``[x0, x0 + w] x [y0, y0 + h]``."""

    w: float
    h: float
    x0: float = 0.0
    y0: float = 0.0
    kind = "rect"

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ParameterError("rectangle sides must be positive")

    def contains(self, x, y, tol=DOMAIN_TOL):
        x = np.asarray(x)
        y = np.asarray(y)
        return (
            (x >= self.x0 - tol) & (x <= self.x0 + self.w + tol)
            & (y >= self.y0 - tol) & (y <= self.y0 + self.h + tol)
        )

    @property
    def bbox(self):
        return (self.x0, self.x0 + self.w, self.y0, self.y0 + self.h)

    @property
    def area(self):
        return self.w * self.h

    def pieces(self):
        lo, hi = _const(self.x0), _const(self.x0 + self.w)
        ya, yb = self.y0, self.y0 + self.h
        if ya < 0 < yb:
            return [Piece(0.0, yb, lo, hi), Piece(0.0, ya, lo, hi)]
        if yb <= 0:
            return [Piece(yb, ya, lo, hi)]
        return [Piece(ya, yb, lo, hi)]

    def spec(self):
        base = f"rect:{self.w:g}x{self.h:g}"
        if self.x0 or self.y0:
            base += f"@{self.x0:g},{self.y0:g}"
        return base


class UnitSquare(Rect):
    kind = "unitsquare"

    def __init__(self):
        super().__init__(1.0, 1.0)

    def spec(self):
        return "unitsquare"


@dataclass(frozen=True)
class Diamond(Domain):
    """``|x| + |y| <= 1``."""

    kind = "diamond"

    def contains(self, x, y, tol=DOMAIN_TOL):
        return np.abs(x) + np.abs(y) <= 1.0 + tol

    @property
    def bbox(self):
        return (-1.0, 1.0, -1.0, 1.0)

    @property
    def area(self):
        return 2.0

    def pieces(self):
        lo = lambda y: -(1.0 - np.abs(y))
        hi = lambda y: 1.0 - np.abs(y)
        return [Piece(0.0, 1.0, lo, hi), Piece(0.0, -1.0, lo, hi)]

    def spec(self):
        return "diamond"


@dataclass(frozen=True)
class Disk(Domain):
    radius: float = 1.0
    cx: float = 0.0
    cy: float = 0.0
    kind = "disk"

    def __post_init__(self):
        if not self.radius > 0:
            raise ParameterError("disk radius must be positive")

    def contains(self, x, y, tol=DOMAIN_TOL):
        return np.hypot(np.asarray(x) - self.cx, np.asarray(y) - self.cy) <= self.radius + tol

    @property
    def bbox(self):
        r = self.radius
        return (self.cx - r, self.cx + r, self.cy - r, self.cy + r)

    @property
    def area(self):
        return math.pi * self.radius**2

    def pieces(self):
        # sector edges on the axes and diagonals, where radial-map data have kinks
        edges = [k * math.pi / 4 for k in range(9)]
        return [PolarPiece(self.cx, self.cy, self.radius, a, b) for a, b in zip(edges, edges[1:])]

    def spec(self):
        base = f"disk:r={self.radius:g}"
        if self.cx or self.cy:
            base += f",cx={self.cx:g},cy={self.cy:g}"
        return base


@dataclass(frozen=True)
class CuspDomain(Domain):
    """Image of the diamond under the cusp map: ``|u| + |v|^(1/alpha) <= 1``."""

    alpha: float
    kind = "cusp-domain"

    def __post_init__(self):
        if not self.alpha > 1:
            raise ParameterError("cusp exponent must exceed 1")

    def contains(self, x, y, tol=DOMAIN_TOL):
        return np.abs(x) + np.abs(y) ** (1.0 / self.alpha) <= 1.0 + tol

    @property
    def bbox(self):
        return (-1.0, 1.0, -1.0, 1.0)

    @property
    def area(self):
        return 4.0 / (self.alpha + 1.0)

    def pieces(self):
        ia = 1.0 / self.alpha
        lo = lambda v: -(1.0 - np.abs(v) ** ia)
        hi = lambda v: 1.0 - np.abs(v) ** ia
        return [Piece(0.0, 1.0, lo, hi), Piece(0.0, -1.0, lo, hi)]

    def spec(self):
        return f"cusp-domain:alpha={self.alpha:g}"


@dataclass(frozen=True)
class PaperTriangle(Domain):
    """``0 <= y <= x <= 1``; integrated with a caller-supplied multiplicity."""

    kind = "paper-triangle"

    def contains(self, x, y, tol=DOMAIN_TOL):
        x = np.asarray(x)
        y = np.asarray(y)
        return (y >= -tol) & (y <= x + tol) & (x <= 1.0 + tol)

    @property
    def bbox(self):
        return (0.0, 1.0, 0.0, 1.0)

    @property
    def area(self):
        return 0.5

    def pieces(self):
        return [Piece(0.0, 1.0, lambda y: np.asarray(y, dtype=float) + 0.0, _const(1.0))]

    def spec(self):
        return "paper-triangle"


class ImageDomain(Domain):
    """Image of a source domain under an invertible map (membership via the inverse)."""

    kind = "image"

    def __init__(self, mapping: Mapping, source: Domain, samples: int = 401):
        self.mapping = mapping
        self.source = source
        self.inv = mapping.inverse()
        xmin, xmax, ymin, ymax = source.bbox
        gx, gy = np.meshgrid(np.linspace(xmin, xmax, samples), np.linspace(ymin, ymax, samples))
        inside = source.contains(gx, gy)
        u, v = mapping.forward(gx[inside], gy[inside])
        self._bbox = (float(u.min()), float(u.max()), float(v.min()), float(v.max()))

    def contains(self, x, y, tol=DOMAIN_TOL):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = self.inv.in_domain(x, y)
        px, py = self.inv.forward(x, y)
        return ok & self.source.contains(px, py, tol)

    @property
    def bbox(self):
        return self._bbox

    @property
    def area(self):
        raise NotImplementedError("image domains have no closed-form area")

    def pieces(self):
        raise UnsupportedMapError("image domains are not quadrature domains")

    def spec(self):
        return f"image({self.mapping.spec()};{self.source.spec()})"


def image_domain(mapping: Mapping, source: Domain) -> Domain:
    """Best closed-form description of ``mapping(source)``."""
    from .mappings import Affine, HolderCusp, Identity

    if isinstance(mapping, Identity):
        return source
    if isinstance(mapping, HolderCusp) and isinstance(source, Diamond):
        return CuspDomain(mapping.alpha)
    if isinstance(mapping, Affine) and mapping.b == 0 and mapping.c == 0 and isinstance(source, Rect):
        xs = sorted([mapping.a * source.x0 + mapping.tx, mapping.a * (source.x0 + source.w) + mapping.tx])
        ys = sorted([mapping.d * source.y0 + mapping.ty, mapping.d * (source.y0 + source.h) + mapping.ty])
        return Rect(xs[1] - xs[0], ys[1] - ys[0], xs[0], ys[0])
    return ImageDomain(mapping, source)


def _kv(args: str) -> dict:
    out = {}
    for item in filter(None, (a.strip() for a in args.split(","))):
        key, _, val = item.partition("=")
        out[key.strip().lower()] = float(val)
    return out


def parse_domain(text: str) -> Domain:
    """Parse ``unitsquare``, ``diamond``, ``disk:r=1``, ``cusp-domain:alpha=1.5``,
    ``paper-triangle`` and ``rect:WxH[@x0,y0]``."""
    s = text.strip().lower()
    kind, _, args = s.partition(":")
    try:
        if kind == "unitsquare":
            return UnitSquare()
        if kind == "diamond":
            return Diamond()
        if kind == "paper-triangle":
            return PaperTriangle()
        if kind == "disk":
            kv = _kv(args)
            return Disk(kv.get("r", 1.0), kv.get("cx", 0.0), kv.get("cy", 0.0))
        if kind == "cusp-domain":
            return CuspDomain(_kv(args)["alpha"])
        if kind == "rect":
            dims, _, origin = args.partition("@")
            w, h = (float(v) for v in dims.split("x"))
            x0, y0 = (float(v) for v in origin.split(",")) if origin else (0.0, 0.0)
            return Rect(w, h, x0, y0)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"cannot parse domain {text!r}") from exc
    raise ParameterError(f"unknown domain spec {text!r}")
