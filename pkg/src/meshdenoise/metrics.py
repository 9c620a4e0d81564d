"""Evaluation metrics: mean normal angular error and sampled surface distance.

The angular error compares face normals pairwise by index, in degrees.
The surface distance draws area-uniform Monte Carlo samples on both
meshes, takes each result-sample's nearest ground-truth sample and
normalizes the mean by the ground-truth bounding-box diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriangleMesh


@dataclass(frozen=True)
class EvalReport:
    e_a: float                 # degrees
    e_v: float                 # dimensionless
    per_face_degrees: np.ndarray
    excluded_faces: int
    sample_count: int

    def lines(self) -> list[str]:
        return [f"E_a {self.e_a:.2f}", f"E_v {self.e_v:.2e}"]


def angular_error(
    denoised: TriangleMesh, reference: TriangleMesh
) -> tuple[float, np.ndarray]:
    """Mean and per-face angle between corresponding face normals.

    Faces degenerate in either mesh carry NaN in the per-face array and
    are excluded from the mean.
    """
    if denoised.n_faces != reference.n_faces:
        raise ValueError("face counts differ")
    if not np.array_equal(denoised.faces, reference.faces):
        raise ValueError("face connectivity differs")
    ga, gb = denoised.face_geometry, reference.face_geometry
    dots = np.clip(np.einsum("ij,ij->i", ga.normals, gb.normals), -1.0, 1.0)
    per_face = np.degrees(np.arccos(dots))
    bad = ga.degenerate | gb.degenerate
    per_face[bad] = np.nan
    if bad.all():
        raise ValueError("no non-degenerate face pairs")
    return float(np.nanmean(per_face)), per_face


def sample_surface(mesh: TriangleMesh, count: int, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform random points on the mesh surface."""
    areas = mesh.face_areas
    total = areas.sum()
    if count < 1 or total <= 0:
        raise ValueError("need a positive sample count and surface area")
    probs = areas / total
    chosen = rng.choice(mesh.n_faces, size=count, p=probs)
    u = rng.random(count)
    v = rng.random(count)
    su = np.sqrt(u)
    w0 = 1.0 - su
    w1 = su * (1.0 - v)
    w2 = su * v
    tri = mesh.vertices[mesh.faces[chosen]]
    return w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]


def vertex_distance(
    denoised: TriangleMesh,
    reference: TriangleMesh,
    samples_per_face: int = 10,
    seed: int = 0,
) -> tuple[float, int]:
    """Normalized mean nearest-neighbor distance between surface samples.

    Both meshes are sampled at the same areal density (``samples_per_face``
    times the face count of the denoised mesh, scaled by area for the
    reference). Deterministic for a fixed seed.
    """
    if samples_per_face < 1:
        raise ValueError("samples_per_face must be >= 1")
    if denoised.n_faces == 0 or reference.n_faces == 0:
        raise ValueError("empty mesh")
    rng = np.random.Generator(np.random.PCG64(seed))
    n_den = denoised.n_faces * samples_per_face
    density = n_den / denoised.face_areas.sum()
    n_ref = max(1, int(round(reference.face_areas.sum() * density)))
    pts_den = sample_surface(denoised, n_den, rng)
    pts_ref = sample_surface(reference, n_ref, np.random.Generator(np.random.PCG64(seed)))
    dists, _ = cKDTree(pts_ref).query(pts_den, k=1)
    diag = reference.bounding_box_diagonal
    if diag <= 0:
        raise ValueError("reference bounding box is degenerate")
    return float(dists.mean() / diag), n_den


def evaluate(
    denoised: TriangleMesh,
    reference: TriangleMesh,
    samples_per_face: int = 10,
    seed: int = 0,
) -> EvalReport:
    e_a, per_face = angular_error(denoised, reference)
    e_v, n_samples = vertex_distance(denoised, reference, samples_per_face, seed)
    return EvalReport(e_a, e_v, per_face, int(np.isnan(per_face).sum()), n_samples)
