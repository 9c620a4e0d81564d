"""Feature-preserving triangle-mesh denoising toolkit.

Pipeline: per-facet patch graphs in the dual space of triangles, normal
tensor voting for rotation-invariant alignment, cascaded graph
convolutional normal regression, bilateral normal refinement, and
normal-driven vertex updating. Includes noise synthesis and evaluation
metrics, all driven by the ``meshdenoise`` command line tool.
"""

from .mesh import TriangleMesh, MeshError, load_obj, save_obj
from .noise import NoiseSpec, add_noise, add_gaussian_noise, add_impulsive_noise
from .voting import FacetClass, SpectralBasis, voting_tensor, spectral_decompose
from .patches import PatchGraph, build_graph
from .pipeline import DenoiseParams, denoise_mesh
from .metrics import EvalReport, angular_error, vertex_distance, evaluate

__version__ = "0.1.0"

__all__ = [
    "TriangleMesh",
    "MeshError",
    "load_obj",
    "save_obj",
    "NoiseSpec",
    "add_noise",
    "add_gaussian_noise",
    "add_impulsive_noise",
    "FacetClass",
    "SpectralBasis",
    "voting_tensor",
    "spectral_decompose",
    "PatchGraph",
    "build_graph",
    "DenoiseParams",
    "denoise_mesh",
    "EvalReport",
    "angular_error",
    "vertex_distance",
    "evaluate",
]
