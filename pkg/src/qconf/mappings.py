"""Planar mappings with analytic derivative data and pointwise distortion functionals.

Every mapping works on numpy arrays: ``forward(x, y)`` returns the image
coordinates and ``derivative(x, y)`` returns the four entries
``(a, b, c, d)`` of the Jacobi matrix ``[[du/dx, du/dy], [dv/dx, dv/dy]]``.
The scalar operations :func:`evaluate`, :func:`jacobian` and
:func:`dilatation` wrap these for single points and add the error checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DomainError, ParameterError, SingularityError, UnsupportedMapError

DOMAIN_TOL = 1e-12
N_DIM = 2


@dataclass(frozen=True)
class PlanarPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ParameterError(f"non-finite point ({self.x}, {self.y})")

    @classmethod
    def parse(cls, text: str) -> "PlanarPoint":
        try:
            x, y = (float(v) for v in text.split(","))
        except ValueError as exc:
            raise ParameterError(f"cannot parse point {text!r}") from exc
        return cls(x, y)


class NormConvention(str, Enum):
    SPECTRAL = "spectral"
    FROBENIUS = "frobenius"


@dataclass(frozen=True)
class DilatationKind:
    """Which distortion functional to evaluate.

    ``param`` is p for ``pdil``, q for ``hq`` and the multiplier C(n) for
    ``qfield``; it is unused for ``outer`` and ``inner``.
    """

    tag: str
    param: float | None = None

    TAGS = ("outer", "inner", "pdil", "hq", "qfield")

    def __post_init__(self):
        if self.tag not in self.TAGS:
            raise ParameterError(f"unknown dilatation kind {self.tag!r}")
        if self.tag in ("pdil", "hq"):
            if self.param is None or not (1.0 <= self.param < math.inf):
                raise ParameterError(f"{self.tag} exponent must lie in [1, inf), got {self.param}")
        if self.tag == "qfield" and self.param is not None and not self.param > 0:
            raise ParameterError("qfield multiplier must be positive")

    @classmethod
    def outer(cls):
        return cls("outer")

    @classmethod
    def inner(cls):
        return cls("inner")

    @classmethod
    def pdil(cls, p: float):
        return cls("pdil", float(p))

    @classmethod
    def hq(cls, q: float):
        return cls("hq", float(q))

    @classmethod
    def qfield(cls, c_n: float = 1.0):
        return cls("qfield", float(c_n))

    @classmethod
    def parse(cls, text: str, p: float | None = None, q: float | None = None) -> "DilatationKind":
        """Parse ``outer``, ``inner``, ``pdil[:p=2]``, ``hq[:q=1]``, ``qfield[:c=1]``."""
        tag, _, rest = text.strip().lower().partition(":")
        value = None
        if rest:
            _, _, num = rest.partition("=")
            try:
                value = float(num or rest)
            except ValueError as exc:
                raise ParameterError(f"bad dilatation parameter in {text!r}") from exc
        if tag == "pdil":
            value = value if value is not None else p
        elif tag == "hq":
            value = value if value is not None else q
        elif tag == "qfield":
            value = 1.0 if value is None else value
        return cls(tag, value)


@dataclass(frozen=True)
class JacobianData:
    matrix: tuple[tuple[float, float], tuple[float, float]]
    det: float
    norm_spectral: float
    norm_frobenius: float
    min_stretch: float

    def to_dict(self) -> dict:
        return {
            "matrix": [list(r) for r in self.matrix],
            "det": self.det,
            "norm_spectral": self.norm_spectral,
            "norm_frobenius": self.norm_frobenius,
            "min_stretch": self.min_stretch,
        }


def singular_values(a, b, c, d):
    """Largest and smallest singular values of 2x2 matrices given entrywise."""
    fro2 = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * det * det, 0.0))
    smax = np.sqrt(0.5 * (fro2 + disc))
    # smin from det avoids cancellation in (fro2 - disc)
    smin = np.where(smax > 0, np.abs(det) / np.where(smax > 0, smax, 1.0), 0.0)
    return smax, smin


def matrix_norm(a, b, c, d, convention: NormConvention | str):
    convention = NormConvention(convention)
    if convention is NormConvention.FROBENIUS:
        return np.sqrt(a * a + b * b + c * c + d * d)
    return singular_values(a, b, c, d)[0]


class Mapping:
    """Base class for analytic planar homeomorphisms."""

    def forward(self, x, y):
        raise NotImplementedError

    def derivative(self, x, y):
        raise NotImplementedError

    def in_domain(self, x, y):
        return np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=bool)

    def undefined(self, x, y):
        """Points where the derivative does not exist (not merely degenerate)."""
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=bool)

    def inverse(self) -> "Mapping":
        raise UnsupportedMapError(f"{self.spec()} has no analytic inverse")

    @property
    def natural_domain(self) -> str:
        return "plane"

    def spec(self) -> str:
        raise NotImplementedError

    def __str__(self):
        return self.spec()


class Identity(Mapping):
    def forward(self, x, y):
        return np.asarray(x, dtype=float) + 0.0, np.asarray(y, dtype=float) + 0.0

    def derivative(self, x, y):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        one, zero = np.ones(shape), np.zeros(shape)
        return one, zero, zero.copy(), one.copy()

    def inverse(self):
        return self

    def spec(self):
        return "identity"

    def __eq__(self, other):
        return isinstance(other, Identity)

    def __hash__(self):
        return hash("identity")


@dataclass(frozen=True, eq=True)
class Affine(Mapping):
    """``(x, y) -> M (x, y) + t`` with an invertible 2x2 matrix ``M``."""

    a: float
    b: float
    c: float
    d: float
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if abs(self.a * self.d - self.b * self.c) <= 1e-300:
            raise ParameterError("affine matrix is singular")

    @property
    def det(self):
        return self.a * self.d - self.b * self.c

    def forward(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.a * x + self.b * y + self.tx, self.c * x + self.d * y + self.ty

    def derivative(self, x, y):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        return tuple(np.full(shape, v) for v in (self.a, self.b, self.c, self.d))

    def inverse(self):
        det = self.det
        ia, ib, ic, id_ = self.d / det, -self.b / det, -self.c / det, self.a / det
        return Affine(ia, ib, ic, id_, -(ia * self.tx + ib * self.ty), -(ic * self.tx + id_ * self.ty))

    def spec(self):
        vals = [self.a, self.b, self.c, self.d]
        if self.tx or self.ty:
            vals += [self.tx, self.ty]
        return "affine:" + ",".join(f"{v:g}" for v in vals)


@dataclass(frozen=True, eq=True)
class HolderCusp(Mapping):
    """``(x, y) -> (x, sign(y) |y|^alpha)`` on the diamond ``|x| + |y| <= 1``."""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 1:
            raise ParameterError(f"cusp exponent must exceed 1, got {self.alpha}")

    def forward(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return x + 0.0, np.sign(y) * np.abs(y) ** self.alpha

    def derivative(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        dv = np.broadcast_to(self.alpha * np.abs(y) ** (self.alpha - 1.0), shape).copy()
        return np.ones(shape), np.zeros(shape), np.zeros(shape), dv

    def in_domain(self, x, y):
        return np.abs(x) + np.abs(y) <= 1.0 + DOMAIN_TOL

    @property
    def natural_domain(self):
        return "diamond"

    def inverse(self):
        return CuspInverse(self.alpha)

    def spec(self):
        return f"cusp:alpha={self.alpha:g}"


@dataclass(frozen=True, eq=True)
class CuspInverse(Mapping):
    """``(u, v) -> (u, sign(v) |v|^(1/alpha))`` on the cusp domain."""

    alpha: float

    def forward(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return u + 0.0, np.sign(v) * np.abs(v) ** (1.0 / self.alpha)

    def derivative(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        shape = np.broadcast(u, v).shape
        av = np.abs(v)
        with np.errstate(divide="ignore"):
            dv = np.where(av > 0, np.abs(v) ** (1.0 / self.alpha - 1.0) / self.alpha, np.inf)
        return np.ones(shape), np.zeros(shape), np.zeros(shape), np.broadcast_to(dv, shape).copy()

    def in_domain(self, u, v):
        return np.abs(u) + np.abs(v) ** (1.0 / self.alpha) <= 1.0 + DOMAIN_TOL

    def undefined(self, u, v):
        return np.broadcast_to(np.asarray(v) == 0, np.broadcast(np.asarray(u), np.asarray(v)).shape)

    @property
    def natural_domain(self):
        return "cusp-domain"

    def inverse(self):
        return HolderCusp(self.alpha)

    def spec(self):
        return f"inverse(cusp:alpha={self.alpha:g})"


class RadialSquareDisk(Mapping):
    """Radial map of the unit disk onto the diamond.

    ``(x, y) -> l (x, y)`` with ``l = sqrt(x^2 + y^2) / (|x| + |y|)``.
    """

    def forward(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.hypot(x, y)
        s = np.abs(x) + np.abs(y)
        lam = np.where(s > 0, r / np.where(s > 0, s, 1.0), 1.0)
        return lam * x, lam * y

    def derivative(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        r = np.hypot(x, y)
        s = np.abs(x) + np.abs(y)
        ok = r > 0
        r_ = np.where(ok, r, 1.0)
        s_ = np.where(ok, s, 1.0)
        lam = r_ / s_
        lx = x / (r_ * s_) - r_ * np.sign(x) / s_**2
        ly = y / (r_ * s_) - r_ * np.sign(y) / s_**2
        a = lam + x * lx
        b = x * ly
        c = y * lx
        d = lam + y * ly
        nan = np.nan
        return (np.where(ok, a, nan), np.where(ok, b, nan), np.where(ok, c, nan), np.where(ok, d, nan))

    def in_domain(self, x, y):
        return np.hypot(x, y) <= 1.0 + DOMAIN_TOL

    def undefined(self, x, y):
        return (np.asarray(x) == 0) & (np.asarray(y) == 0)

    @property
    def natural_domain(self):
        return "disk"

    def inverse(self):
        return RadialInverse()

    def spec(self):
        return "radial"

    def __eq__(self, other):
        return isinstance(other, RadialSquareDisk)

    def __hash__(self):
        return hash("radial")


class RadialInverse(Mapping):
    """Inverse radial map, diamond onto the unit disk: ``(u, v) -> (u, v) (|u|+|v|)/|(u, v)|``."""

    def forward(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        r = np.hypot(u, v)
        s = np.abs(u) + np.abs(v)
        m = np.where(r > 0, s / np.where(r > 0, r, 1.0), 1.0)
        return m * u, m * v

    def derivative(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        r = np.hypot(u, v)
        ok = r > 0
        r_ = np.where(ok, r, 1.0)
        s = np.abs(u) + np.abs(v)
        m = s / r_
        mu = np.sign(u) / r_ - s * u / r_**3
        mv = np.sign(v) / r_ - s * v / r_**3
        out = (m + u * mu, u * mv, v * mu, m + v * mv)
        return tuple(np.where(ok, e, np.nan) for e in out)

    def in_domain(self, u, v):
        return np.abs(u) + np.abs(v) <= 1.0 + DOMAIN_TOL

    def undefined(self, u, v):
        return (np.asarray(u) == 0) & (np.asarray(v) == 0)

    @property
    def natural_domain(self):
        return "diamond"

    def inverse(self):
        return RadialSquareDisk()

    def spec(self):
        return "inverse(radial)"

    def __eq__(self, other):
        return isinstance(other, RadialInverse)

    def __hash__(self):
        return hash("inverse(radial)")


class Composition(Mapping):
    """Maps applied in list order: ``Composition([f, g])`` is ``g o f``."""

    def __init__(self, maps):
        maps = list(maps)
        if not maps:
            raise ParameterError("composition needs at least one map")
        self.maps = maps

    def forward(self, x, y):
        for m in self.maps:
            x, y = m.forward(x, y)
        return x, y

    def derivative(self, x, y):
        a, b, c, d = self.maps[0].derivative(x, y)
        x, y = self.maps[0].forward(x, y)
        for m in self.maps[1:]:
            e, f, g, h = m.derivative(x, y)
            a, b, c, d = e * a + f * c, e * b + f * d, g * a + h * c, g * b + h * d
            x, y = m.forward(x, y)
        return a, b, c, d

    def in_domain(self, x, y):
        ok = self.maps[0].in_domain(x, y)
        for prev, m in zip(self.maps, self.maps[1:]):
            x, y = prev.forward(x, y)
            ok = ok & m.in_domain(x, y)
        return ok

    def undefined(self, x, y):
        bad = self.maps[0].undefined(x, y)
        for prev, m in zip(self.maps, self.maps[1:]):
            x, y = prev.forward(x, y)
            bad = bad | m.undefined(x, y)
        return bad

    @property
    def natural_domain(self):
        return self.maps[0].natural_domain

    def inverse(self):
        return Composition([m.inverse() for m in reversed(self.maps)])

    def spec(self):
        return "compose(" + ";".join(m.spec() for m in self.maps) + ")"

    def __eq__(self, other):
        return isinstance(other, Composition) and self.maps == other.maps

    def __hash__(self):
        return hash(tuple(self.maps))


def _split_top_level(text: str, sep: str = ";"):
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ParameterError(f"unbalanced parentheses in {text!r}")
        elif ch == sep and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    if depth:
        raise ParameterError(f"unbalanced parentheses in {text!r}")
    parts.append(text[start:])
    return [p.strip() for p in parts]


def parse_map(text: str) -> Mapping:
    """Parse the compact mapping grammar.

    ``identity``, ``affine:a,b,c,d[,tx,ty]``, ``cusp:alpha=<real>``,
    ``radial``, ``compose(<spec>;<spec>...)`` and ``inverse(<spec>)``.
    """
    s = text.strip()
    low = s.lower()
    if low == "identity":
        return Identity()
    if low == "radial":
        return RadialSquareDisk()
    for head in ("compose(", "inverse("):
        if low.startswith(head):
            if not low.endswith(")"):
                raise ParameterError(f"unterminated {head[:-1]} in {text!r}")
            inner = s[len(head):-1]
            if head == "inverse(":
                return parse_map(inner).inverse()
            return Composition([parse_map(p) for p in _split_top_level(inner)])
    kind, _, args = s.partition(":")
    kind = kind.lower()
    try:
        if kind == "affine":
            vals = [float(v) for v in args.split(",")]
            if len(vals) not in (4, 6):
                raise ParameterError("affine needs 4 or 6 numbers")
            return Affine(*vals)
        if kind == "cusp":
            key, _, val = args.partition("=")
            if key.strip().lower() != "alpha":
                raise ParameterError("cusp expects alpha=<real>")
            return HolderCusp(float(val))
    except ValueError as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"cannot parse map {text!r}") from exc
    raise ParameterError(f"unknown map spec {text!r}")


# -- scalar operations -------------------------------------------------------


def _check_domain(m: Mapping, point: PlanarPoint):
    if not bool(m.in_domain(point.x, point.y)):
        raise DomainError(f"point ({point.x}, {point.y}) outside natural domain of {m.spec()}")


def evaluate(m: Mapping, point: PlanarPoint) -> PlanarPoint:
    _check_domain(m, point)
    u, v = m.forward(point.x, point.y)
    return PlanarPoint(float(u), float(v))


def jacobian(m: Mapping, point: PlanarPoint) -> JacobianData:
    _check_domain(m, point)
    if bool(m.undefined(point.x, point.y)):
        raise SingularityError(f"{m.spec()} is not differentiable at ({point.x}, {point.y})")
    a, b, c, d = (float(e) for e in m.derivative(point.x, point.y))
    det = a * d - b * c
    if det == 0.0 or not math.isfinite(det):
        raise SingularityError(f"{m.spec()} has degenerate derivative at ({point.x}, {point.y})")
    smax, smin = singular_values(a, b, c, d)
    return JacobianData(
        matrix=((a, b), (c, d)),
        det=det,
        norm_spectral=float(smax),
        norm_frobenius=math.sqrt(a * a + b * b + c * c + d * d),
        min_stretch=float(smin),
    )


def dilatation_field(m: Mapping, x, y, kind: DilatationKind, convention=NormConvention.SPECTRAL):
    """Vectorized distortion functional; zero wherever the Jacobian vanishes."""
    a, b, c, d = m.derivative(x, y)
    return dilatation_from_derivative(a, b, c, d, kind, convention)


def dilatation_from_derivative(a, b, c, d, kind: DilatationKind, convention=NormConvention.SPECTRAL):
    n = N_DIM
    det = np.abs(a * d - b * c)
    norm = matrix_norm(a, b, c, d, convention)
    pos = det > 0
    safe = np.where(pos, det, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        if kind.tag == "outer":
            val = norm**n / safe
        elif kind.tag == "inner":
            smin = singular_values(a, b, c, d)[1]
            val = safe / np.where(pos, smin, 1.0) ** n
        elif kind.tag == "pdil":
            val = norm / safe ** (1.0 / kind.param)
        elif kind.tag == "hq":
            val = (norm**kind.param / safe) ** (1.0 / kind.param)
        else:
            c_n = 1.0 if kind.param is None else kind.param
            val = (norm**n / (c_n**n * safe)) ** (1.0 / (n - 1))
    return np.where(pos, val, 0.0)


def dilatation(
    m: Mapping,
    point: PlanarPoint,
    kind: DilatationKind,
    convention: NormConvention | str = NormConvention.SPECTRAL,
) -> float:
    _check_domain(m, point)
    if bool(m.undefined(point.x, point.y)):
        raise SingularityError(f"{m.spec()} is not differentiable at ({point.x}, {point.y})")
    return float(dilatation_field(m, point.x, point.y, kind, NormConvention(convention)))
