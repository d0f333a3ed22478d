"""Numerical toolkit for quasiconformal-type mappings: distortion functionals,
composition operator norms, discrete moduli and Neumann eigenvalue bounds."""

from .domains import CuspDomain, Diamond, Disk, PaperTriangle, Rect, UnitSquare, image_domain, parse_domain
from .errors import (
    DomainError,
    InconclusiveError,
    NonConvergenceError,
    ParameterError,
    PoleError,
    QconfError,
    ResolutionError,
    SingularityError,
    UnsupportedMapError,
)
from .mappings import (
    Affine,
    Composition,
    DilatationKind,
    HolderCusp,
    Identity,
    NormConvention,
    PlanarPoint,
    RadialSquareDisk,
    dilatation,
    evaluate,
    jacobian,
    parse_map,
)

__version__ = "0.1.0"
