"""mhshape: acoustic shape reconstruction on subdivision surfaces.

Forward scattering is solved with a Galerkin boundary element method built
on Loop subdivision basis functions; geometry is compressed into the
eigenbasis of the surface Laplacian (manifold harmonics) and reconstructed
from phaseless far-field magnitudes by banded multi-resolution optimization.
"""

from . import errors
from .mesh import (
    ControlMesh,
    PatchStencil,
    build_mesh,
    limit_positions,
    load_obj,
    loop_subdivide,
    patch_stencil,
    save_obj,
)

__version__ = "0.1.0"
