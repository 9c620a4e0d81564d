"""Per-facet patch selection and fixed-size graph construction.

A patch is every facet with a vertex strictly inside a sphere around the
target facet's centroid. Patches are translated to the origin, rotated
into the tensor-voting eigenbasis and scaled into a unit bounding box,
then converted into a graph whose nodes carry (centroid, normal, area,
ring-degree) attribute tuples and whose edges mirror shared-edge face
adjacency. Graphs are padded or shrunk to a fixed node budget so they can
be batched.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh
from .voting import (
    alignment_rotation,
    patch_orientation_hint,
    spectral_decompose,
    voting_tensor,
)

ATTRS_PER_NODE = 8  # centroid (3) + normal (3) + area (1) + ring degree (1)

# node budgets paired with patch scales; k=4 suits synthetic-resolution
# meshes, k=8 real-scan resolutions
NODE_BUDGET_FOR_K = {2: 16, 3: 32, 4: 64, 6: 128, 8: 256, 10: 512}

_CACHE_MAGIC = b"MDPATCH1"
_CACHE_VERSION = 1


def node_budget_for_k(k: float) -> int:
    """Standard node budget for a patch scale, nearest configured pair."""
    nearest = min(NODE_BUDGET_FOR_K, key=lambda kk: abs(kk - k))
    return NODE_BUDGET_FOR_K[nearest]


@dataclass(frozen=True)
class PatchGeometry:
    """Per-face geometry of one patch (parallel arrays)."""

    normals: np.ndarray    # (P, 3)
    centroids: np.ndarray  # (P, 3)
    areas: np.ndarray      # (P,)


@dataclass(frozen=True)
class PatchGraph:
    """Fixed-size graph over the facets of a local patch.

    Row 0 of ``attrs`` is the target facet; remaining rows are sorted by
    ascending distance to it. Padding rows have all-zero attributes, no
    incident edges and ``face_ids`` -1. ``rotation`` maps aligned normals
    back to mesh coordinates; ``scale`` is the unit-bounding-box factor.
    """

    attrs: np.ndarray      # (N, 8) float64
    edges: np.ndarray      # (E, 2) int64, node indices, i < j
    center: int
    rotation: np.ndarray   # (3, 3)
    scale: float
    face_ids: np.ndarray   # (N,) int64, -1 for padding

    @property
    def node_count(self) -> int:
        return len(self.attrs)

    @property
    def valid_mask(self) -> np.ndarray:
        return self.face_ids >= 0


def patch_radius(mesh: TriangleMesh, face: int, k: float) -> float:
    """Selection sphere radius: k times sqrt of the 2-ring average area."""
    if k <= 0:
        raise ValueError(f"patch scale k must be positive, got {k}")
    return k * np.sqrt(mesh.two_ring_avg_area(face))


def select_patch(mesh: TriangleMesh, face: int, k: float) -> np.ndarray:
    """Faces with at least one vertex strictly inside the selection sphere.

    The target face is always included. Returns ascending face indices.
    """
    radius = patch_radius(mesh, face, k)
    center = mesh.face_centroids[face]
    candidates = mesh.vertex_kdtree.query_ball_point(center, radius)
    inside = [v for v in candidates if np.linalg.norm(mesh.vertices[v] - center) < radius]
    found = {int(face)}
    for v in inside:
        found.update(int(f) for f in mesh.vertex_faces[v])
    return np.array(sorted(found), dtype=np.int64)


def normalize_patch(
    geometry: PatchGeometry, center_index: int = 0
) -> tuple[PatchGeometry, float]:
    """Translate the center facet's centroid to the origin and scale the
    patch so the centroid bounding box has longest side 1.

    Normals are untouched; areas scale by the square of the factor. A
    zero-extent patch keeps scale 1.
    """
    if len(geometry.centroids) == 0:
        raise ValueError("empty patch")
    centroids = geometry.centroids - geometry.centroids[center_index]
    extent = centroids.max(axis=0) - centroids.min(axis=0)
    longest = float(extent.max())
    scale = 1.0 / longest if longest > 0 else 1.0
    return (
        PatchGeometry(geometry.normals.copy(), centroids * scale, geometry.areas * scale**2),
        scale,
    )


def align_patch(geometry: PatchGeometry, rotation: np.ndarray) -> PatchGeometry:
    """Left-multiply every centroid and normal by the rotation's transpose."""
    rotation = np.asarray(rotation, dtype=np.float64)
    if not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-6):
        raise ValueError("rotation must be orthonormal")
    return PatchGeometry(
        geometry.normals @ rotation, geometry.centroids @ rotation, geometry.areas.copy()
    )


def _patch_order(dists: np.ndarray, face_ids: np.ndarray, center_pos: int, seed: int) -> np.ndarray:
    """Center first, then ascending distance; ties broken by a seeded draw."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x7061])))
    tiebreak = rng.random(len(dists))
    keys = sorted(
        (i for i in range(len(dists)) if i != center_pos),
        key=lambda i: (dists[i], tiebreak[i], face_ids[i]),
    )
    return np.array([center_pos] + keys, dtype=np.int64)


def build_graph(
    mesh: TriangleMesh, face: int, k: float, node_budget: int, seed: int = 0
) -> PatchGraph:
    """Select, align and normalize the patch of ``face`` and graph it.

    Patches larger than the node budget keep the faces nearest the target;
    smaller patches are padded with isolated zero-attribute nodes.
    """
    if not 0 <= face < mesh.n_faces:
        raise ValueError(f"face index {face} out of range")
    if node_budget < 1:
        raise ValueError(f"node budget must be >= 1, got {node_budget}")
    geo = mesh.face_geometry
    patch = select_patch(mesh, face, k)
    patch = patch[(~geo.degenerate[patch]) | (patch == face)]
    center_centroid = geo.centroids[face]

    if geo.degenerate[face]:
        rotation = np.eye(3)
    else:
        radius = patch_radius(mesh, face, k)
        voting = patch[~geo.degenerate[patch]]
        tensor = voting_tensor(
            geo.normals[voting],
            geo.centroids[voting],
            geo.areas[voting],
            center_centroid,
            radius / 3.0,
        )
        hint = patch_orientation_hint(geo.centroids[voting], geo.areas[voting], center_centroid)
        rotation = alignment_rotation(spectral_decompose(tensor, geo.normals[face], hint))

    dists = np.linalg.norm(geo.centroids[patch] - center_centroid, axis=1)
    center_pos = int(np.nonzero(patch == face)[0][0])
    order = _patch_order(dists, patch, center_pos, seed)
    if len(order) > node_budget:
        order = order[:node_budget]
    kept = patch[order]

    aligned = align_patch(
        PatchGeometry(
            geo.normals[kept],
            geo.centroids[kept] - center_centroid,
            geo.areas[kept].copy(),
        ),
        rotation,
    )
    normalized, scale = normalize_patch(aligned, center_index=0)

    n_kept = len(kept)
    attrs = np.zeros((node_budget, ATTRS_PER_NODE), dtype=np.float64)
    attrs[:n_kept, 0:3] = normalized.centroids
    attrs[:n_kept, 3:6] = normalized.normals
    attrs[:n_kept, 6] = normalized.areas
    attrs[:n_kept, 7] = mesh.face_ring_counts[kept]

    node_of_face = {int(f): i for i, f in enumerate(kept)}
    edge_set = set()
    for i, f in enumerate(kept):
        for nbr in mesh.face_adjacency[f]:
            j = node_of_face.get(int(nbr))
            if j is not None and i < j:
                edge_set.add((i, j))
    edges = (
        np.array(sorted(edge_set), dtype=np.int64) if edge_set else np.zeros((0, 2), dtype=np.int64)
    )

    face_ids = np.full(node_budget, -1, dtype=np.int64)
    face_ids[:n_kept] = kept
    return PatchGraph(attrs, edges, 0, rotation, scale, face_ids)


def static_neighbor_table(graph: PatchGraph, width: int = 4) -> np.ndarray:
    """Per-node neighbor indices padded with the node itself.

    Column 0 is the self index; triangle meshes have at most 3 shared-edge
    neighbors, so the default width of 4 always suffices.
    """
    n = graph.node_count
    table = np.tile(np.arange(n, dtype=np.int64)[:, None], (1, width))
    fill = np.ones(n, dtype=np.int64)
    for a, b in graph.edges:
        table[a, fill[a]] = b
        fill[a] += 1
        table[b, fill[b]] = a
        fill[b] += 1
    return table


def patch_to_bytes(graph: PatchGraph) -> bytes:
    """Fixed-layout little-endian record for one patch."""
    parts = [
        np.ascontiguousarray(graph.attrs, dtype="<f8").tobytes(),
        struct.pack("<I", len(graph.edges)),
        np.ascontiguousarray(graph.edges, dtype="<u4").tobytes(),
        struct.pack("<I", graph.center),
        np.ascontiguousarray(graph.rotation, dtype="<f8").tobytes(),
        struct.pack("<d", graph.scale),
        np.ascontiguousarray(graph.face_ids, dtype="<i4").tobytes(),
    ]
    return b"".join(parts)


def patch_from_bytes(buf: bytes, offset: int, node_budget: int) -> tuple[PatchGraph, int]:
    n = node_budget
    attrs = np.frombuffer(buf, "<f8", n * ATTRS_PER_NODE, offset).reshape(n, ATTRS_PER_NODE)
    offset += attrs.nbytes
    (n_edges,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    edges = np.frombuffer(buf, "<u4", n_edges * 2, offset).reshape(n_edges, 2).astype(np.int64)
    offset += n_edges * 8
    (center,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    rotation = np.frombuffer(buf, "<f8", 9, offset).reshape(3, 3)
    offset += 72
    (scale,) = struct.unpack_from("<d", buf, offset)
    offset += 8
    face_ids = np.frombuffer(buf, "<i4", n, offset).astype(np.int64)
    offset += n * 4
    return PatchGraph(attrs.copy(), edges, int(center), rotation.copy(), scale, face_ids), offset


def save_patch_cache(path, patches: list[PatchGraph], k: float) -> None:
    """Binary patch cache: header (magic, version, N, k, count) + records."""
    if not patches:
        raise ValueError("nothing to save")
    n = patches[0].node_count
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<IIdI", _CACHE_VERSION, n, k, len(patches)))
        for p in patches:
            if p.node_count != n:
                raise ValueError("mixed node budgets in one cache")
            fh.write(patch_to_bytes(p))


def load_patch_cache(path) -> tuple[list[PatchGraph], float]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != _CACHE_MAGIC:
        raise ValueError("not a patch cache file")
    version, n, k, count = struct.unpack_from("<IIdI", buf, 8)
    if version != _CACHE_VERSION:
        raise ValueError(f"unsupported patch cache version {version}")
    offset = 8 + struct.calcsize("<IIdI")
    patches = []
    for _ in range(count):
        patch, offset = patch_from_bytes(buf, offset, n)
        patches.append(patch)
    return patches, k
