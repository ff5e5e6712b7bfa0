"""Block-structured quad meshing of planar domains from cross-field singularity patterns."""

__version__ = "0.1.0"

from .trimesh import TriMesh, PointLocation  # noqa: F401
from .msh_io import load_mesh, save_mesh  # noqa: F401
