"""Procedural test meshes: grids, boxes, spheres, cylinders, tori.

Used by the test suite and the README walkthrough as clean ground-truth
models for noise synthesis and desk-scale training.
"""

from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh


def grid_plane(nx: int = 10, ny: int = 10, width: float = 1.0, height: float = 1.0) -> TriangleMesh:
    """Planar grid in z=0 with (nx*ny*2) triangles."""
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
    faces = []
    for i in range(nx):
        for j in range(ny):
            v00 = i * (ny + 1) + j
            v01 = v00 + 1
            v10 = v00 + (ny + 1)
            v11 = v10 + 1
            faces.append((v00, v10, v11))
            faces.append((v00, v11, v01))
    return TriangleMesh(verts, np.array(faces))


def bumpy_plane(
    nx: int = 14,
    ny: int = 14,
    amplitude: float = 0.08,
    jitter: float = 0.25,
    seed: int = 0,
) -> TriangleMesh:
    """Grid with a seeded random height field and in-plane jitter.

    Generic position (no symmetric centroid-distance ties, anisotropic
    curvature everywhere), which makes it a good alignment fixture.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    base = grid_plane(nx, ny)
    v = base.vertices.copy()
    step = 1.0 / max(nx, ny)
    v[:, :2] += rng.uniform(-jitter * step, jitter * step, (len(v), 2))
    v[:, 2] += rng.uniform(-amplitude, amplitude, len(v))
    return TriangleMesh(v, base.faces)


def box(
    nx: int = 4, ny: int = 4, nz: int = 4, size: tuple[float, float, float] = (1.0, 1.0, 1.0)
) -> TriangleMesh:
    """Closed axis-aligned box, each side an (n x n) grid of triangle pairs."""
    sx, sy, sz = size
    vert_map: dict[tuple[float, float, float], int] = {}
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []

    def vid(p: tuple[float, float, float]) -> int:
        key = (round(p[0], 12), round(p[1], 12), round(p[2], 12))
        if key not in vert_map:
            vert_map[key] = len(verts)
            verts.append(key)
        return vert_map[key]

    def side(origin, du, dv, nu, nv):
        o = np.array(origin, dtype=float)
        du = np.array(du, dtype=float) / nu
        dv = np.array(dv, dtype=float) / nv
        for i in range(nu):
            for j in range(nv):
                p00 = vid(tuple(o + i * du + j * dv))
                p10 = vid(tuple(o + (i + 1) * du + j * dv))
                p01 = vid(tuple(o + i * du + (j + 1) * dv))
                p11 = vid(tuple(o + (i + 1) * du + (j + 1) * dv))
                faces.append((p00, p10, p11))
                faces.append((p00, p11, p01))

    # outward CCW winding on all six sides
    side((0, 0, 0), (0, sy, 0), (sx, 0, 0), ny, nx)           # z = 0, normal -z
    side((0, 0, sz), (sx, 0, 0), (0, sy, 0), nx, ny)          # z = sz, normal +z
    side((0, 0, 0), (sx, 0, 0), (0, 0, sz), nx, nz)           # y = 0, normal -y
    side((0, sy, 0), (0, 0, sz), (sx, 0, 0), nz, nx)          # y = sy, normal +y
    side((0, 0, 0), (0, 0, sz), (0, sy, 0), nz, ny)           # x = 0, normal -x
    side((sx, 0, 0), (0, sy, 0), (0, 0, sz), ny, nz)          # x = sx, normal +x
    return TriangleMesh(np.array(verts), np.array(faces))


def cube() -> TriangleMesh:
    """Unit cube as 12 triangles (two per side)."""
    return box(1, 1, 1)


def uv_sphere(n_theta: int = 12, n_phi: int = 18, radius: float = 0.5) -> TriangleMesh:
    """Closed latitude/longitude sphere."""
    verts = [(0.0, 0.0, radius)]
    for i in range(1, n_theta):
        theta = np.pi * i / n_theta
        for j in range(n_phi):
            phi = 2 * np.pi * j / n_phi
            verts.append(
                (
                    radius * np.sin(theta) * np.cos(phi),
                    radius * np.sin(theta) * np.sin(phi),
                    radius * np.cos(theta),
                )
            )
    verts.append((0.0, 0.0, -radius))
    south = len(verts) - 1

    def ring(i: int, j: int) -> int:
        return 1 + (i - 1) * n_phi + (j % n_phi)

    faces = []
    for j in range(n_phi):
        faces.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_theta - 1):
        for j in range(n_phi):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    for j in range(n_phi):
        faces.append((south, ring(n_theta - 1, j + 1), ring(n_theta - 1, j)))
    return TriangleMesh(np.array(verts), np.array(faces))


def cylinder(
    n_seg: int = 16, n_height: int = 6, radius: float = 0.4, height: float = 1.2
) -> TriangleMesh:
    """Closed cylinder with fan-capped ends; sharp circular edges."""
    verts = []
    for i in range(n_height + 1):
        z = height * i / n_height
        for j in range(n_seg):
            phi = 2 * np.pi * j / n_seg
            verts.append((radius * np.cos(phi), radius * np.sin(phi), z))
    bottom_c = len(verts)
    verts.append((0.0, 0.0, 0.0))
    top_c = len(verts)
    verts.append((0.0, 0.0, height))

    def rid(i: int, j: int) -> int:
        return i * n_seg + (j % n_seg)

    faces = []
    for i in range(n_height):
        for j in range(n_seg):
            a, b = rid(i, j), rid(i, j + 1)
            c, d = rid(i + 1, j), rid(i + 1, j + 1)
            faces.append((a, b, d))
            faces.append((a, d, c))
    for j in range(n_seg):
        faces.append((bottom_c, rid(0, j + 1), rid(0, j)))
        faces.append((top_c, rid(n_height, j), rid(n_height, j + 1)))
    return TriangleMesh(np.array(verts), np.array(faces))


def torus(
    n_major: int = 18, n_minor: int = 10, major_radius: float = 0.5, minor_radius: float = 0.18
) -> TriangleMesh:
    verts = []
    for i in range(n_major):
        u = 2 * np.pi * i / n_major
        for j in range(n_minor):
            v = 2 * np.pi * j / n_minor
            r = major_radius + minor_radius * np.cos(v)
            verts.append((r * np.cos(u), r * np.sin(u), minor_radius * np.sin(v)))

    def tid(i: int, j: int) -> int:
        return (i % n_major) * n_minor + (j % n_minor)

    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b = tid(i, j), tid(i + 1, j)
            c, d = tid(i, j + 1), tid(i + 1, j + 1)
            faces.append((a, b, d))
            faces.append((a, d, c))
    return TriangleMesh(np.array(verts), np.array(faces))


def double_pyramid(n_side: int = 8, radius: float = 0.6, height: float = 0.5) -> TriangleMesh:
    """Bipyramid over a regular polygon; edge and corner features."""
    verts = [(0.0, 0.0, height), (0.0, 0.0, -height)]
    for j in range(n_side):
        phi = 2 * np.pi * j / n_side
        verts.append((radius * np.cos(phi), radius * np.sin(phi), 0.0))
    faces = []
    for j in range(n_side):
        a = 2 + j
        b = 2 + (j + 1) % n_side
        faces.append((0, a, b))
        faces.append((1, b, a))
    return TriangleMesh(np.array(verts), np.array(faces))
