"""Normal tensor voting: alignment basis and facet feature classification.

Each facet accumulates area- and distance-weighted outer products of its
patch neighbors' reflected normals into a 3x3 positive semi-definite
tensor. The eigenbasis of that tensor gives a rotation that puts patches
into a common pose; the eigenvalue profile separates flat, edge, corner
and transitional facets.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh

# thresholds on eigenvalues normalized so lambda1 == 1
FLAT_L2_MAX = 0.01
EDGE_L3_MAX = 0.1
FLAT_L3_MAX = 0.001
CORNER_L3_MIN = 0.1


class FacetClass(enum.Enum):
    FLAT = "flat"
    EDGE = "edge"
    CORNER = "corner"
    TRANSITIONAL = "transitional"

    @property
    def is_feature(self) -> bool:
        """Feature group = edge and corner facets."""
        return self in (FacetClass.EDGE, FacetClass.CORNER)


@dataclass(frozen=True)
class SpectralBasis:
    """Descending eigenvalues and a right-handed sign-fixed eigenbasis.

    ``basis`` holds unit eigenvectors as columns (e1, e2, e3) with
    det(basis) = +1.
    """

    eigenvalues: np.ndarray  # (3,) descending
    basis: np.ndarray        # (3, 3) columns e1, e2, e3


def voting_tensor(
    normals: np.ndarray,
    centroids: np.ndarray,
    areas: np.ndarray,
    center_centroid: np.ndarray,
    sigma: float,
) -> np.ndarray:
    """Accumulate the 3x3 normal voting tensor of a patch.

    Weights are (area / max area) * exp(-distance / sigma). Each neighbor
    votes with its normal reflected across the plane spanned by the
    center-to-neighbor direction; votes from the center face itself (or
    any face whose reflection axis degenerates) use the raw normal.
    """
    normals = np.asarray(normals, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    areas = np.asarray(areas, dtype=np.float64)
    if len(normals) == 0:
        raise ValueError("empty patch")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if np.any(areas <= 0):
        raise ValueError("voting requires positive face areas")

    offsets = centroids - np.asarray(center_centroid, dtype=np.float64)
    dists = np.linalg.norm(offsets, axis=1)
    mu = (areas / areas.max()) * np.exp(-dists / sigma)

    # w = normalize((offset x n) x offset); degenerate when offset ~ 0 or offset || n
    pre = np.cross(np.cross(offsets, normals), offsets)
    pre_norm = np.linalg.norm(pre, axis=1)
    ok = pre_norm >= 1e-12
    voted = normals.copy()
    w = pre[ok] / pre_norm[ok, None]
    ndotw = np.einsum("ij,ij->i", normals[ok], w)
    voted[ok] = 2.0 * ndotw[:, None] * w - normals[ok]

    return np.einsum("i,ij,ik->jk", mu, voted, voted)


def patch_orientation_hint(centroids: np.ndarray, areas: np.ndarray, center_centroid) -> np.ndarray:
    """Area-weighted centroid moment of a patch.

    Rotation-covariant and translation-invariant, so it can anchor
    eigenvector signs in a way that survives rigid motions of the mesh.
    """
    offsets = np.asarray(centroids, dtype=np.float64) - np.asarray(center_centroid)
    return np.asarray(areas, dtype=np.float64) @ offsets


def spectral_decompose(
    tensor: np.ndarray,
    center_normal: np.ndarray,
    orientation_hint: np.ndarray | None = None,
) -> SpectralBasis:
    """Eigendecompose a voting tensor with a deterministic sign convention.

    Eigenvalues are sorted descending. e1 is flipped so e1 . center_normal
    >= 0. e2's sign comes from its dot with ``orientation_hint`` when that
    is decisively nonzero (the dot is invariant under rigid motion, which
    keeps aligned patches rotation-invariant); otherwise e2 is flipped so
    its largest-magnitude component is positive. e3 = e1 x e2 makes the
    basis right-handed.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    sym = 0.5 * (tensor + tensor.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    order = np.argsort(eigvals, kind="stable")[::-1]
    lams = eigvals[order]
    e1 = eigvecs[:, order[0]]
    e2 = eigvecs[:, order[1]]
    if float(e1 @ np.asarray(center_normal, dtype=np.float64)) < 0.0:
        e1 = -e1
    hinted = False
    if orientation_hint is not None:
        dot = float(e2 @ orientation_hint)
        if abs(dot) > 1e-9 * float(np.linalg.norm(orientation_hint)):
            hinted = True
            if dot < 0.0:
                e2 = -e2
    if not hinted and e2[np.argmax(np.abs(e2))] < 0.0:
        e2 = -e2
    e3 = np.cross(e1, e2)
    return SpectralBasis(lams, np.column_stack([e1, e2, e3]))


def alignment_rotation(basis: SpectralBasis) -> np.ndarray:
    """Rotation matrix with the eigenvectors as columns.

    Callers align a patch by left-multiplying centroids and normals with
    the transpose (= inverse) of this matrix.
    """
    return np.array(basis.basis, dtype=np.float64)


def classify_facet(eigenvalues) -> FacetClass:
    """Classify a facet from eigenvalues pre-normalized so lambda1 = 1.

    Rules are evaluated in order: flat, edge, corner, else transitional.
    """
    l1, l2, l3 = (float(v) for v in eigenvalues)
    tol = 1e-9
    if not (1.0 + tol >= l2 >= l3 >= -tol):
        raise ValueError(f"eigenvalues must satisfy 1 >= l2 >= l3 >= 0, got {(l1, l2, l3)}")
    if l2 < FLAT_L2_MAX and l3 < FLAT_L3_MAX:
        return FacetClass.FLAT
    if l2 > FLAT_L2_MAX and l3 < EDGE_L3_MAX:
        return FacetClass.EDGE
    if l3 > CORNER_L3_MIN:
        return FacetClass.CORNER
    return FacetClass.TRANSITIONAL


def classify_tensor(tensor: np.ndarray, center_normal: np.ndarray) -> FacetClass:
    """Normalize eigenvalues by lambda1 and classify; a zero tensor is flat."""
    basis = spectral_decompose(tensor, center_normal)
    l1 = basis.eigenvalues[0]
    if l1 <= 1e-300:
        return FacetClass.FLAT
    lams = np.clip(basis.eigenvalues / l1, 0.0, 1.0)
    return classify_facet(lams)


def classify_mesh(mesh: TriangleMesh, k: float) -> list[FacetClass]:
    """Per-facet class labels from tensors voted over each facet's patch.

    Degenerate (zero-area) faces are labeled flat and excluded from votes.
    """
    from .patches import select_patch, patch_radius

    geo = mesh.face_geometry
    labels: list[FacetClass] = []
    for face in range(mesh.n_faces):
        if geo.degenerate[face]:
            labels.append(FacetClass.FLAT)
            continue
        patch = select_patch(mesh, face, k)
        patch = patch[~geo.degenerate[patch]]
        radius = patch_radius(mesh, face, k)
        tensor = voting_tensor(
            geo.normals[patch],
            geo.centroids[patch],
            geo.areas[patch],
            geo.centroids[face],
            radius / 3.0,
        )
        labels.append(classify_tensor(tensor, geo.normals[face]))
    return labels


def balance_samples(
    classified: list[tuple[int, FacetClass]],
    ratio: float,
    seed: int,
    fallback_cap: int = 1024,
) -> np.ndarray:
    """Select all feature faces plus a sampled subset of non-feature faces.

    The subset size targets |feature| / |selected non-feature| == ratio
    (+-1 by rounding); if too few non-feature faces exist, all are kept.
    With no feature faces at all, a uniform sample of at most
    ``fallback_cap`` non-feature faces is returned. Output indices are
    ascending and deterministic for a fixed seed.
    """
    if ratio <= 0:
        raise ValueError(f"balance ratio must be positive, got {ratio}")
    feature = [idx for idx, cls in classified if cls.is_feature]
    nonfeature = [idx for idx, cls in classified if not cls.is_feature]
    rng = np.random.Generator(np.random.PCG64(seed))
    if not feature:
        n_sel = min(len(nonfeature), fallback_cap)
        sel = rng.choice(len(nonfeature), size=n_sel, replace=False) if n_sel else []
        return np.array(sorted(nonfeature[i] for i in sel), dtype=np.int64)
    n_sel = min(len(nonfeature), int(round(len(feature) / ratio)))
    sel = rng.choice(len(nonfeature), size=n_sel, replace=False) if n_sel else []
    chosen = feature + [nonfeature[i] for i in sel]
    return np.array(sorted(chosen), dtype=np.int64)
