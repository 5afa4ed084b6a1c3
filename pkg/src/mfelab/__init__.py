"""mfelab: numerics for the mean field equation ``Δu + ρ h e^u / ∫h e^u = 0``.

Functional modules: geometry, laplace, robin_dcrit, mfe_solver, bol_symm,
ensembles and cli.
"""
from .errors import MFELabError
from .geometry import DomainSpec, Mesh, annulus, disk, triangulate

__version__ = "0.1.0"
__all__ = ["MFELabError", "DomainSpec", "Mesh", "annulus", "disk", "triangulate"]
