"""Dense shape correspondence with functional maps, orientation operators and bijective refinement."""

from .bcicp import RefinementState, bcicp_refine, icp_refine, proj_orthonormal
from .config import RunManifest, SolverConfig, load_manifest
from .errors import ShapeCorrError
from .evaluation import GroundTruth, MapReport, evaluate_map
from .fmap import fmap_to_pointmap, orientation_score, pointmap_to_fmap, solve_initial_map
from .mesh import TriangleMesh, load_mesh, save_mesh
from .pipeline import initial_maps, initial_state, match
from .spectral import Shape, SpectralBasis, laplacian_basis, wks

__all__ = [
    "GroundTruth",
    "MapReport",
    "RefinementState",
    "RunManifest",
    "Shape",
    "ShapeCorrError",
    "SolverConfig",
    "SpectralBasis",
    "TriangleMesh",
    "bcicp_refine",
    "evaluate_map",
    "fmap_to_pointmap",
    "icp_refine",
    "initial_maps",
    "initial_state",
    "laplacian_basis",
    "load_manifest",
    "load_mesh",
    "match",
    "orientation_score",
    "pointmap_to_fmap",
    "proj_orthonormal",
    "save_mesh",
    "solve_initial_map",
    "wks",
]
__version__ = "0.1.0"
