"""Triangle mesh data model, ASCII OBJ I/O and derived geometric quantities.

The mesh is an indexed vertex/face structure. All derived data (normals,
centroids, areas, adjacency, ring neighborhoods) is computed lazily and
cached; meshes are treated as immutable after construction, so any number
of readers may share one instance.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class MeshError(ValueError):
    """Raised for invalid mesh files or invalid mesh topology."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FaceGeometry:
    """Per-face geometry arrays: unit normals, centroids, areas.

    ``degenerate`` flags zero-area faces, whose normal is the zero vector.
    """

    normals: np.ndarray   # (F, 3)
    centroids: np.ndarray  # (F, 3)
    areas: np.ndarray      # (F,)
    degenerate: np.ndarray  # (F,) bool


class TriangleMesh:
    """Indexed triangle mesh: vertex positions and CCW-wound face triples.

    Construction validates index ranges, rejects faces with repeated
    vertices and rejects non-manifold edges (an undirected edge may be
    shared by at most two faces).
    """

    def __init__(self, vertices, faces):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        f = np.ascontiguousarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (N, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (M, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        if f.size and ((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])).any():
            raise MeshError("degenerate face: repeated vertex index")
        self.vertices = _readonly(v)
        self.faces = _readonly(f)
        self._check_manifold()

    def _check_manifold(self) -> None:
        if self.n_faces == 0:
            return
        counts = self._edge_counts[1]
        if counts.size and counts.max() > 2:
            bad = self._unique_edges[np.argmax(counts)]
            raise MeshError(f"non-manifold edge {tuple(bad)} shared by {counts.max()} faces")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def _halfedges(self) -> np.ndarray:
        # 3 directed edges per face, stored undirected (sorted endpoints)
        f = self.faces
        he = np.stack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=1).reshape(-1, 2)
        return np.sort(he, axis=1)

    @cached_property
    def _edge_counts(self):
        edges, inverse, counts = np.unique(
            self._halfedges, axis=0, return_inverse=True, return_counts=True
        )
        return edges, counts, inverse

    @cached_property
    def _unique_edges(self) -> np.ndarray:
        return self._edge_counts[0]

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (i, j) vertex pairs."""
        return self._unique_edges

    @cached_property
    def face_geometry(self) -> FaceGeometry:
        v = self.vertices
        f = self.faces
        a = v[f[:, 0]]
        cross = np.cross(v[f[:, 1]] - a, v[f[:, 2]] - a)
        norms = np.linalg.norm(cross, axis=1)
        areas = 0.5 * norms
        degenerate = norms < 1e-150
        normals = np.zeros_like(cross)
        ok = ~degenerate
        normals[ok] = cross[ok] / norms[ok, None]
        centroids = v[f].mean(axis=1)
        return FaceGeometry(
            _readonly(normals), _readonly(centroids), _readonly(areas), _readonly(degenerate)
        )

    @property
    def face_normals(self) -> np.ndarray:
        return self.face_geometry.normals

    @property
    def face_centroids(self) -> np.ndarray:
        return self.face_geometry.centroids

    @property
    def face_areas(self) -> np.ndarray:
        return self.face_geometry.areas

    @cached_property
    def vertex_faces(self) -> list[np.ndarray]:
        """For each vertex, indices of incident faces (ascending)."""
        order = np.argsort(self.faces.ravel(), kind="stable")
        face_of_corner = order // 3
        verts = self.faces.ravel()[order]
        splits = np.searchsorted(verts, np.arange(self.n_vertices))
        out = []
        for i in range(self.n_vertices):
            lo = splits[i]
            hi = splits[i + 1] if i + 1 < self.n_vertices else len(verts)
            out.append(_readonly(np.sort(face_of_corner[lo:hi])))
        return out

    @cached_property
    def _edge_face_pairs(self) -> np.ndarray:
        """(P, 2) face index pairs sharing an edge, each pair sorted, unique."""
        edges, counts, inverse = self._edge_counts
        face_of_he = np.repeat(np.arange(self.n_faces), 3)
        order = np.argsort(inverse, kind="stable")
        inv_sorted = inverse[order]
        faces_sorted = face_of_he[order]
        starts = np.searchsorted(inv_sorted, np.arange(len(edges)))
        pairs = []
        for e in np.nonzero(counts == 2)[0]:
            s = starts[e]
            fa, fb = faces_sorted[s], faces_sorted[s + 1]
            pairs.append((fa, fb) if fa < fb else (fb, fa))
        if not pairs:
            return np.zeros((0, 2), dtype=np.int64)
        return _readonly(np.array(sorted(pairs), dtype=np.int64))

    @cached_property
    def face_adjacency(self) -> list[np.ndarray]:
        """Shared-edge face neighbors per face (symmetric, ascending)."""
        nbrs: list[list[int]] = [[] for _ in range(self.n_faces)]
        for fa, fb in self._edge_face_pairs:
            nbrs[fa].append(fb)
            nbrs[fb].append(fa)
        return [_readonly(np.array(sorted(n), dtype=np.int64)) for n in nbrs]

    @cached_property
    def face_ring_counts(self) -> np.ndarray:
        """Number of shared-edge neighbors per face (0..3 on a manifold mesh)."""
        d = np.array([len(n) for n in self.face_adjacency], dtype=np.int64)
        return _readonly(d)

    @cached_property
    def mean_edge_length(self) -> float:
        """Arithmetic mean length over unique undirected edges."""
        edges = self._unique_edges
        if len(edges) == 0:
            raise MeshError("mesh has no edges")
        d = np.linalg.norm(self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]], axis=1)
        return float(d.mean())

    @cached_property
    def mean_centroid_distance(self) -> float:
        """Mean distance between centroids of shared-edge face pairs."""
        pairs = self._edge_face_pairs
        if len(pairs) == 0:
            raise MeshError("mesh has no adjacent face pairs")
        c = self.face_centroids
        d = np.linalg.norm(c[pairs[:, 0]] - c[pairs[:, 1]], axis=1)
        return float(d.mean())

    def vertex_ring_expand(self, face_set: np.ndarray) -> np.ndarray:
        """Faces sharing at least one vertex with any face in ``face_set``."""
        verts = np.unique(self.faces[face_set])
        out = set(int(f) for f in face_set)
        for v in verts:
            out.update(int(f) for f in self.vertex_faces[v])
        return np.array(sorted(out), dtype=np.int64)

    def two_ring_faces(self, face: int) -> np.ndarray:
        """Vertex-sharing ring expansion applied twice from the seed, seed included."""
        ring = self.vertex_ring_expand(np.array([face], dtype=np.int64))
        return self.vertex_ring_expand(ring)

    def two_ring_avg_area(self, face: int) -> float:
        """Mean face area over :meth:`two_ring_faces` of ``face``."""
        if not 0 <= face < self.n_faces:
            raise MeshError(f"face index {face} out of range")
        ring = self.two_ring_faces(face)
        return float(self.face_areas[ring].mean())

    @cached_property
    def bounding_box_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    @cached_property
    def vertex_kdtree(self):
        from scipy.spatial import cKDTree

        return cKDTree(self.vertices)

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        """Same connectivity, new vertex positions."""
        return TriangleMesh(vertices, self.faces.copy())


def face_geometry(mesh: TriangleMesh) -> FaceGeometry:
    return mesh.face_geometry


def mean_edge_length(mesh: TriangleMesh) -> float:
    return mesh.mean_edge_length


def mean_centroid_distance(mesh: TriangleMesh) -> float:
    return mesh.mean_centroid_distance


def two_ring_avg_area(mesh: TriangleMesh, face: int) -> float:
    return mesh.two_ring_avg_area(face)


def _parse_face_token(token: str, n_vertices: int, lineno: int) -> int:
    # "i", "i/t", "i//n", "i/t/n"; negative indices count from the end
    part = token.split("/", 1)[0]
    try:
        raw = int(part)
    except ValueError:
        raise MeshError(f"line {lineno}: bad face index {token!r}") from None
    if raw == 0:
        raise MeshError(f"line {lineno}: face index 0 is invalid (indices are 1-based)")
    idx = raw - 1 if raw > 0 else n_vertices + raw
    if not 0 <= idx < n_vertices:
        raise MeshError(f"line {lineno}: face index {raw} out of range")
    return idx


def load_obj(path) -> TriangleMesh:
    """Load an ASCII OBJ file with ``v`` and ``f`` records.

    Faces must be triangles; normals, texture coordinates and materials in
    the file are ignored. Negative (relative) face indices are supported.
    """
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="ascii", errors="strict") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split()
            tag = fields[0]
            if tag == "v":
                if len(fields) < 4:
                    raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append((float(fields[1]), float(fields[2]), float(fields[3])))
                except ValueError:
                    raise MeshError(f"line {lineno}: bad vertex coordinate") from None
            elif tag == "f":
                tokens = fields[1:]
                if len(tokens) != 3:
                    raise MeshError(
                        f"line {lineno}: non-triangular face with {len(tokens)} vertices"
                    )
                idx = tuple(_parse_face_token(t, len(vertices), lineno) for t in tokens)
                if len(set(idx)) != 3:
                    raise MeshError(f"line {lineno}: degenerate face {idx}")
                faces.append(idx)
            # vn / vt / usemtl / o / g / s / mtllib records are ignored
    if not vertices:
        raise MeshError(f"{path}: no vertices found")
    try:
        return TriangleMesh(np.array(vertices), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from None


def save_obj(mesh: TriangleMesh, path) -> None:
    """Write an ASCII OBJ file (1-based indices, byte-stable for a given mesh)."""
    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
