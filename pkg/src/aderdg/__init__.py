"""ADER discontinuous Galerkin schemes on moving meshes with sliver elements."""

from .flux import burgers, get_flux, linear_advection
from .geometry import MovingMesh, make_slivers
from .refbasis import SchemeOrder, assemble_reference_matrices, st_index
from .slab import Slab

__all__ = [
    "MovingMesh",
    "SchemeOrder",
    "Slab",
    "assemble_reference_matrices",
    "burgers",
    "get_flux",
    "linear_advection",
    "make_slivers",
    "st_index",
]
__version__ = "0.1.0"
