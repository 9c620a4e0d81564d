import numpy as np
import pytest

from meshdenoise import primitives
from meshdenoise.mesh import TriangleMesh
from meshdenoise.patches import (
    PatchGeometry,
    align_patch,
    build_graph,
    load_patch_cache,
    normalize_patch,
    patch_radius,
    patch_to_bytes,
    save_patch_cache,
    select_patch,
)

from conftest import random_rotation


def thin_wall():
    """Two parallel grids close together, disconnected from each other."""
    a = primitives.grid_plane(6, 6)
    b = primitives.grid_plane(6, 6)
    gap = 0.02
    verts = np.vstack([a.vertices, b.vertices + [0, 0, gap]])
    faces = np.vstack([a.faces, b.faces[:, [0, 2, 1]] + a.n_vertices])
    return TriangleMesh(verts, faces), a.n_faces


class TestSelectPatch:
    def test_minimal_patch(self, plane):
        face = plane.n_faces // 2
        patch = select_patch(plane, face, k=1e-6)
        assert patch.tolist() == [face]

    def test_matches_brute_force_scan(self, plane):
        for face in [0, plane.n_faces // 2, plane.n_faces - 1]:
            r = patch_radius(plane, face, 4.0)
            c = plane.face_centroids[face]
            expected = sorted(
                j
                for j in range(plane.n_faces)
                if any(np.linalg.norm(v - c) < r for v in plane.vertices[plane.faces[j]])
            )
            assert select_patch(plane, face, 4.0).tolist() == expected

    def test_thin_wall_included_but_disconnected(self):
        mesh, n_front = thin_wall()
        face = n_front // 2
        patch = select_patch(mesh, face, k=4.0)
        assert (patch >= n_front).any(), "opposite wall should enter the patch"
        graph = build_graph(mesh, face, 4.0, node_budget=len(patch), seed=0)
        wall_a = set()
        wall_b = set()
        for node, f in enumerate(graph.face_ids):
            if f < 0:
                continue
            (wall_a if f < n_front else wall_b).add(node)
        for i, j in graph.edges:
            assert not (int(i) in wall_a) ^ (int(j) in wall_a), "no cross-wall edges"
        assert wall_b, "opposite wall nodes present in the graph"


class TestNormalizePatch:
    @staticmethod
    def random_geometry(rng, n=12):
        normals = rng.normal(size=(n, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return PatchGeometry(normals, rng.uniform(-2, 3, (n, 3)), rng.uniform(0.1, 1, n))

    def test_already_normalized_identity(self):
        centroids = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.5, 0.5, 0.2]])
        normals = np.tile([0.0, 0, 1], (3, 1))
        geom = PatchGeometry(normals, centroids, np.ones(3))
        out, scale = normalize_patch(geom)
        assert scale == 1.0
        assert np.allclose(out.centroids, centroids)

    def test_scale_invariance(self):
        rng = np.random.Generator(np.random.PCG64(0))
        geom = self.random_geometry(rng)
        out1, s1 = normalize_patch(geom)
        scaled = PatchGeometry(geom.normals, geom.centroids * 5.0, geom.areas * 25.0)
        out5, s5 = normalize_patch(scaled)
        assert np.isclose(s5, s1 / 5.0)
        assert np.allclose(out5.centroids, out1.centroids, atol=1e-12)
        assert np.allclose(out5.areas, out1.areas, atol=1e-12)

    def test_unit_bbox(self):
        rng = np.random.Generator(np.random.PCG64(1))
        for _ in range(20):
            out, _ = normalize_patch(self.random_geometry(rng))
            extent = out.centroids.max(axis=0) - out.centroids.min(axis=0)
            assert np.isclose(extent.max(), 1.0, atol=1e-9)
            assert np.allclose(out.centroids[0], 0.0)

    def test_zero_extent(self):
        geom = PatchGeometry(np.array([[0.0, 0, 1]]), np.zeros((1, 3)), np.ones(1))
        out, scale = normalize_patch(geom)
        assert scale == 1.0


class TestAlignPatch:
    def test_identity(self):
        rng = np.random.Generator(np.random.PCG64(2))
        geom = TestNormalizePatch.random_geometry(rng)
        out = align_patch(geom, np.eye(3))
        assert np.allclose(out.centroids, geom.centroids)
        assert np.allclose(out.normals, geom.normals)

    def test_normals_stay_unit(self):
        rng = np.random.Generator(np.random.PCG64(3))
        geom = TestNormalizePatch.random_geometry(rng)
        out = align_patch(geom, random_rotation(rng))
        assert np.allclose(np.linalg.norm(out.normals, axis=1), 1.0, atol=1e-12)

    def test_non_orthonormal_rejected(self):
        rng = np.random.Generator(np.random.PCG64(4))
        geom = TestNormalizePatch.random_geometry(rng)
        with pytest.raises(ValueError):
            align_patch(geom, np.eye(3) * 2.0)

    def test_round_trip(self):
        rng = np.random.Generator(np.random.PCG64(5))
        geom = TestNormalizePatch.random_geometry(rng)
        q = random_rotation(rng)
        rotated = PatchGeometry(geom.normals @ q.T, geom.centroids @ q.T, geom.areas)
        back = align_patch(rotated, q)
        assert np.allclose(back.centroids, geom.centroids, atol=1e-12)
        assert np.allclose(back.normals, geom.normals, atol=1e-12)


class TestBuildGraph:
    def test_exact_budget_no_padding(self, plane):
        face = plane.n_faces // 2
        patch = select_patch(plane, face, 4.0)
        graph = build_graph(plane, face, 4.0, node_budget=len(patch), seed=0)
        assert graph.valid_mask.all()
        assert graph.face_ids[0] == face

    def test_padding(self, plane):
        face = plane.n_faces // 2
        patch = select_patch(plane, face, 4.0)
        budget = len(patch) + 10
        graph = build_graph(plane, face, 4.0, node_budget=budget, seed=0)
        assert graph.valid_mask.sum() == len(patch)
        pad = ~graph.valid_mask
        assert np.allclose(graph.attrs[pad], 0.0)
        assert not any(pad[i] or pad[j] for i, j in graph.edges)

    def test_shrinkage_keeps_nearest(self, plane):
        face = plane.n_faces // 2
        patch = select_patch(plane, face, 4.0)
        budget = len(patch) // 2
        graph = build_graph(plane, face, 4.0, node_budget=budget, seed=0)
        assert graph.valid_mask.all()
        assert graph.face_ids[0] == face
        c = plane.face_centroids
        kept_d = np.linalg.norm(c[graph.face_ids] - c[face], axis=1)
        dropped = sorted(set(patch) - set(graph.face_ids))
        dropped_d = np.linalg.norm(c[dropped] - c[face], axis=1)
        assert kept_d.max() <= dropped_d.min() + 1e-12

    def test_distance_sorted_rows(self, plane):
        face = plane.n_faces // 2
        graph = build_graph(plane, face, 4.0, node_budget=32, seed=0)
        d = np.linalg.norm(graph.attrs[graph.valid_mask][:, 0:3], axis=1)
        assert d[0] == 0.0
        assert (np.diff(d[1:]) >= -1e-12).all()

    def test_planar_disk_connected_interior_degree(self):
        plane = primitives.grid_plane(16, 16)
        face = plane.n_faces // 2 + 8
        patch = select_patch(plane, face, 4.0)
        graph = build_graph(plane, face, 4.0, node_budget=len(patch), seed=0)
        assert (graph.attrs[0, 7] == 3.0).all()
        # connectivity over valid nodes by BFS
        n = graph.node_count
        adj = [[] for _ in range(n)]
        for i, j in graph.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        frontier = [0]
        while frontier:
            cur = frontier.pop()
            for nb in adj[cur]:
                if nb not in seen:
                    seen.add(nb)
                    frontier.append(nb)
        assert len(seen) == graph.valid_mask.sum()

    def test_unit_normals_on_valid_nodes(self, box444):
        graph = build_graph(box444, 17, 4.0, node_budget=64, seed=0)
        norms = np.linalg.norm(graph.attrs[graph.valid_mask][:, 3:6], axis=1)
        assert np.allclose(norms, 1.0, atol=1e-6)

    def test_determinism_bytes(self, box444):
        a = build_graph(box444, 5, 4.0, 64, seed=9)
        b = build_graph(box444, 5, 4.0, 64, seed=9)
        assert patch_to_bytes(a) == patch_to_bytes(b)

    def test_center_pinned_to_origin_exactly(self, box444, bumpy):
        for mesh, face in ((box444, 20), (bumpy, 57)):
            graph = build_graph(mesh, face, 3.0, 48, seed=1)
            assert (graph.attrs[0, 0:3] == 0.0).all()

    def test_translation_invariance(self, bumpy):
        moved = bumpy.with_vertices(bumpy.vertices + [11.3, -3.7, 0.9])
        for face in [10, 57, 120]:
            a = build_graph(bumpy, face, 3.0, 48, seed=1)
            b = build_graph(moved, face, 3.0, 48, seed=1)
            assert np.array_equal(a.face_ids, b.face_ids)
            assert np.abs(a.attrs - b.attrs).max() < 1e-9

    def test_rotation_invariance_of_attrs(self, bumpy):
        rng = np.random.Generator(np.random.PCG64(21))
        faces = [10, 57, 120]
        base = [build_graph(bumpy, f, 3.0, 48, seed=2) for f in faces]
        for _ in range(3):
            q = random_rotation(rng)
            rotated = bumpy.with_vertices(bumpy.vertices @ q.T)
            for f, ref in zip(faces, base):
                got = build_graph(rotated, f, 3.0, 48, seed=2)
                assert np.abs(got.attrs - ref.attrs).max() < 1e-5
                assert np.array_equal(got.edges, ref.edges)

    def test_edges_subset_of_mesh_adjacency(self, box444):
        graph = build_graph(box444, 33, 4.0, 64, seed=0)
        for i, j in graph.edges:
            fi, fj = graph.face_ids[i], graph.face_ids[j]
            assert fj in box444.face_adjacency[fi]

    def test_bad_face_rejected(self, cube):
        with pytest.raises(ValueError):
            build_graph(cube, 99, 4.0, 16, seed=0)

    def test_degenerate_faces_dropped_from_patch(self):
        # face 0 is zero-area (collinear corners); face 1 is regular
        mesh = TriangleMesh(
            [[0, 0, 0], [1, 0, 0], [2, 0, 0], [1, 1, 0]], [[0, 1, 2], [0, 2, 3]]
        )
        assert mesh.face_geometry.degenerate[0]
        graph = build_graph(mesh, 1, 4.0, 8, seed=0)
        assert 0 not in graph.face_ids[graph.valid_mask].tolist()
        norms = np.linalg.norm(graph.attrs[graph.valid_mask][:, 3:6], axis=1)
        assert np.allclose(norms, 1.0, atol=1e-9)

    def test_degenerate_center_gets_identity_rotation(self):
        mesh = TriangleMesh(
            [[0, 0, 0], [1, 0, 0], [2, 0, 0], [1, 1, 0]], [[0, 1, 2], [0, 2, 3]]
        )
        graph = build_graph(mesh, 0, 4.0, 8, seed=0)
        assert np.array_equal(graph.rotation, np.eye(3))
        assert graph.face_ids[0] == 0


def test_configured_budget_pairs():
    from meshdenoise.patches import NODE_BUDGET_FOR_K, node_budget_for_k

    assert NODE_BUDGET_FOR_K == {2: 16, 3: 32, 4: 64, 6: 128, 8: 256, 10: 512}
    assert node_budget_for_k(4) == 64
    assert node_budget_for_k(8) == 256


class TestPatchCache:
    def test_round_trip(self, tmp_path, box444):
        patches = [build_graph(box444, f, 4.0, 32, seed=3) for f in range(10)]
        path = tmp_path / "patches.bin"
        save_patch_cache(path, patches, k=4.0)
        loaded, k = load_patch_cache(path)
        assert k == 4.0
        assert len(loaded) == len(patches)
        for a, b in zip(patches, loaded):
            assert patch_to_bytes(a) == patch_to_bytes(b)

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a cache")
        with pytest.raises(ValueError):
            load_patch_cache(path)
