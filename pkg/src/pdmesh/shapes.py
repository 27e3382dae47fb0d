"""Small synthetic meshes used by tests, demos and the bundled toy datasets."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import Mesh, orient_faces


def tetrahedron() -> Mesh:
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Mesh(v, f, name="tetrahedron")


def single_triangle() -> Mesh:
    return Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2]]), name="triangle")


def cube() -> Mesh:
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    quads = [
        [0, 1, 3, 2], [4, 6, 7, 5],  # x = 0, x = 1
        [0, 4, 5, 1], [2, 3, 7, 6],  # y = 0, y = 1
        [0, 2, 6, 4], [1, 5, 7, 3],  # z = 0, z = 1
    ]
    f = []
    for a, b, c, d in quads:
        f += [[a, b, c], [a, c, d]]
    return orient_faces(Mesh(v, np.array(f), name="cube"))


def octahedron() -> Mesh:
    v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    f = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
                  [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    return Mesh(v, f, name="octahedron")


def icosahedron() -> Mesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return Mesh(v, f, name="icosahedron")


def icosphere(subdivisions: int = 2) -> Mesh:
    mesh = icosahedron()
    verts = list(mesh.vertices)
    faces = mesh.faces.tolist()
    for _ in range(subdivisions):
        midpoint = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoint:
                p = (verts[a] + verts[b]) / 2.0
                verts.append(p / np.linalg.norm(p))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    return Mesh(np.array(verts), np.array(faces), name=f"icosphere{subdivisions}")


def convex_hull_mesh(points: np.ndarray, name: str = "hull") -> Mesh:
    hull = ConvexHull(points)
    used = np.unique(hull.simplices)
    remap = -np.ones(len(points), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return orient_faces(Mesh(points[used], remap[hull.simplices], name=name))


def random_sphere_hull(n_points: int, seed: int = 0) -> Mesh:
    """Convex hull of points on the unit sphere: 2n - 4 faces, 3n - 6 edges."""
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(n_points, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    return convex_hull_mesh(p, name=f"spherehull{n_points}_{seed}")


def random_hull(n_points: int, seed: int = 0) -> Mesh:
    rng = np.random.default_rng(seed)
    return convex_hull_mesh(rng.uniform(-1, 1, size=(n_points, 3)), name=f"hull{n_points}_{seed}")


def box(n: int = 4, size=(1.0, 1.0, 1.0)) -> Mesh:
    """Axis-aligned box with each side split into an ``n x n`` grid of quads."""
    verts = {}
    vlist = []

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in verts:
            verts[key] = len(vlist)
            vlist.append(p)
        return verts[key]

    faces = []
    g = np.linspace(0.0, 1.0, n + 1)
    for axis in range(3):
        for side in (0.0, 1.0):
            a1, a2 = [k for k in range(3) if k != axis]
            for i in range(n):
                for j in range(n):
                    corner = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = np.zeros(3)
                        p[axis] = side
                        p[a1] = g[i + di]
                        p[a2] = g[j + dj]
                        corner.append(vid(p))
                    a, b, c, d = corner
                    # alternate the diagonal to avoid a directional bias
                    if (i + j) % 2:
                        faces += [[a, b, c], [a, c, d]]
                    else:
                        faces += [[a, b, d], [b, c, d]]
    v = (np.array(vlist) - 0.5) * np.asarray(size, dtype=float)
    return orient_faces(Mesh(v, np.array(faces), name=f"box{n}"))


def torus(n_major: int = 12, n_minor: int = 8, r_major: float = 1.0, r_minor: float = 0.35) -> Mesh:
    verts = []
    for i in range(n_major):
        u = 2 * np.pi * i / n_major
        for j in range(n_minor):
            w = 2 * np.pi * j / n_minor
            verts.append([(r_major + r_minor * np.cos(w)) * np.cos(u),
                          (r_major + r_minor * np.cos(w)) * np.sin(u),
                          r_minor * np.sin(w)])
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces += [[a, b, c], [a, c, d]]
    return Mesh(np.array(verts), np.array(faces), name="torus")


def triangle_fan(n: int = 5, closed: bool = True) -> Mesh:
    """Triangles around a centre vertex; ``closed`` joins the last to the first."""
    ang = 2 * np.pi * np.arange(n) / n
    rim = np.stack([np.cos(ang), np.sin(ang), np.zeros(n)], axis=1)
    v = np.vstack([[0.0, 0.0, 0.3], rim])
    m = n if closed else n - 1
    f = [[0, 1 + i, 1 + (i + 1) % n] for i in range(m)]
    return Mesh(v, np.array(f), name=f"fan{n}")


def stellate(mesh: Mesh, height: float = 0.1) -> Mesh:
    """Split every face 1-to-3 around a raised centroid, creating valence-3 vertices."""
    v = mesh.vertices
    tri = v[mesh.faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    scale = np.linalg.norm(tri[:, 1] - tri[:, 0], axis=1).mean()
    centers = tri.mean(axis=1) + height * scale * n
    base = len(v)
    faces = []
    for k, (a, b, c) in enumerate(mesh.faces):
        m = base + k
        faces += [[a, b, m], [b, c, m], [c, a, m]]
    return Mesh(np.vstack([v, centers]), np.array(faces), name=mesh.name + "_stellated")


def dome(n_lon: int = 25, n_lat: int = 6, n_rings: int = 5) -> Mesh:
    """Hemisphere closed by a flat disk; 500 faces with the default resolution.

    Returns the mesh; faces ``[0, n_lon * (2 * n_lat - 1))`` belong to the dome.
    """
    verts = [[0.0, 0.0, 1.0]]
    ring_ids = []
    for i in range(1, n_lat + 1):
        phi = 0.5 * np.pi * i / n_lat
        ids = []
        for j in range(n_lon):
            t = 2 * np.pi * j / n_lon
            verts.append([np.sin(phi) * np.cos(t), np.sin(phi) * np.sin(t), np.cos(phi)])
            ids.append(len(verts) - 1)
        ring_ids.append(ids)
    faces = []
    top = ring_ids[0]
    for j in range(n_lon):
        faces.append([0, top[j], top[(j + 1) % n_lon]])
    for r0, r1 in zip(ring_ids[:-1], ring_ids[1:]):
        for j in range(n_lon):
            a, b = r0[j], r0[(j + 1) % n_lon]
            c, d = r1[j], r1[(j + 1) % n_lon]
            faces += [[a, c, d], [a, d, b]]
    # flat disk: rings shrinking from the equator to the centre
    disk_rings = [ring_ids[-1]]
    for i in range(n_rings - 1, 0, -1):
        rad = i / n_rings
        ids = []
        for j in range(n_lon):
            t = 2 * np.pi * j / n_lon
            verts.append([rad * np.cos(t), rad * np.sin(t), 0.0])
            ids.append(len(verts) - 1)
        disk_rings.append(ids)
    verts.append([0.0, 0.0, 0.0])
    centre = len(verts) - 1
    for r0, r1 in zip(disk_rings[:-1], disk_rings[1:]):
        for j in range(n_lon):
            a, b = r0[j], r0[(j + 1) % n_lon]
            c, d = r1[j], r1[(j + 1) % n_lon]
            faces += [[a, c, d], [a, d, b]]
    last = disk_rings[-1]
    for j in range(n_lon):
        faces.append([centre, last[(j + 1) % n_lon], last[j]])
    return orient_faces(Mesh(np.array(verts), np.array(faces), name="dome"))


def jitter(mesh: Mesh, sigma: float, rng: np.random.Generator) -> Mesh:
    v = mesh.vertices + rng.normal(scale=sigma, size=mesh.vertices.shape)
    return Mesh(v, mesh.faces, name=mesh.name)


def slide_vertices(mesh: Mesh, max_shift: float, rng: np.random.Generator) -> Mesh:
    """Move each vertex a random fraction of the way along one of its edges."""
    v = mesh.vertices.copy()
    nbrs = [[] for _ in range(mesh.n_vertices)]
    for a, b, c in mesh.faces:
        nbrs[a] += [b, c]
        nbrs[b] += [c, a]
        nbrs[c] += [a, b]
    for i, ns in enumerate(nbrs):
        if ns:
            j = ns[rng.integers(len(ns))]
            v[i] = mesh.vertices[i] + rng.uniform(0, max_shift) * (mesh.vertices[j] - mesh.vertices[i])
    return Mesh(v, mesh.faces, name=mesh.name)
