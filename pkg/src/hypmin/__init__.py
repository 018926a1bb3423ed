"""Numerical study of minimal graphs in hyperbolic space over convex planar domains with corners."""
from . import errors
from .cone_profile import ConeProfile, certify_supersolution, solve_cone_profile
from .elliptic import GridField, evaluate, solve_domain
from .geometry import (
    ConeSpec,
    Disk,
    DiskIntersection,
    DomainSpec,
    Ellipse,
    Lens,
    PerturbedLens,
    domain_from_dict,
    lens_domain,
)

__version__ = "0.1.0"
