"""Reissner-Mindlin clamped-plate eigenvalues on planar domains and their shape sensitivity."""

from .errors import PlateshapeError
from .mesh import Mesh, generate_disk, generate_rectangle
from .rm_fem import MaterialParams, assemble_forms, material_from_engineering, solve, solve_smallest

__all__ = ["Mesh", "MaterialParams", "PlateshapeError", "assemble_forms", "generate_disk",
           "generate_rectangle", "material_from_engineering", "solve", "solve_smallest"]
__version__ = "0.1.0"
