"""Triangle meshes: loading, topology, and per-face / per-edge geometry."""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

EPS_DEGENERATE = 1e-10


class MeshError(ValueError):
    """Raised for malformed or unsupported mesh input."""


class NonManifoldError(MeshError):
    pass


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64
    name: str = "mesh"

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.validate()

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def validate(self):
        if self.n_faces == 0:
            raise MeshError(f"{self.name}: empty mesh (no faces)")
        if self.faces.min() < 0 or self.faces.max() >= self.n_vertices:
            raise MeshError(f"{self.name}: face index out of range [0, {self.n_vertices})")
        f = self.faces
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise MeshError(f"{self.name}: face with repeated vertex index")
        keys = np.sort(f, axis=1)
        if len(np.unique(keys, axis=0)) != len(keys):
            raise MeshError(f"{self.name}: duplicate faces (identical vertex sets)")

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))


def load_obj(path, name: str | None = None) -> Mesh:
    """Read the ``v``/``f`` records of a Wavefront OBJ file.

    Face entries may carry texture/normal references (``f 1/2/3 ...``) and
    negative indices; anything other than triangles is rejected.
    """
    vertices = []
    faces = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: malformed vertex line")
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError as exc:
                    raise MeshError(f"{path}:{lineno}: malformed vertex line") from exc
            elif tag == "f":
                if len(parts) != 4:
                    raise MeshError(
                        f"{path}:{lineno}: non-triangular face with {len(parts) - 1} vertices"
                    )
                idx = []
                for token in parts[1:]:
                    try:
                        i = int(token.split("/")[0])
                    except ValueError as exc:
                        raise MeshError(f"{path}:{lineno}: malformed face line") from exc
                    # OBJ indices are 1-based; negative ones count back from the last vertex
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                faces.append(idx)
    if not faces or not vertices:
        raise MeshError(f"{path}: empty mesh")
    if name is None:
        name = os.path.splitext(os.path.basename(str(path)))[0]
    return Mesh(np.array(vertices), np.array(faces), name=name)


def save_obj(mesh: Mesh, path):
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


@dataclass
class MeshTopology:
    """Edge connectivity of a triangle mesh.

    Edge ids follow the lexicographic order of the sorted vertex pairs, so they
    depend only on the face list and never on traversal order.
    """

    edges: np.ndarray  # (E, 2) sorted vertex pairs
    edge_faces: list  # per edge: list of incident face ids (ascending)
    face_edges: np.ndarray  # (F, 3) edge id of face edge (f0,f1), (f1,f2), (f2,f0)
    face_neighbors: list  # per face: adjacent face ids
    edge_index: dict = field(repr=False)  # (u, v) with u < v -> edge id

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def boundary(self) -> np.ndarray:
        return np.array([len(fs) == 1 for fs in self.edge_faces], dtype=bool)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.array([e for e, fs in enumerate(self.edge_faces) if len(fs) == 2], dtype=np.int64)

    def edge_id(self, u: int, v: int) -> int:
        return self.edge_index[(min(u, v), max(u, v))]


def build_topology(mesh: Mesh, check_manifold: bool = True) -> MeshTopology:
    f = mesh.faces
    half = np.stack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=1).reshape(-1, 2)
    keys = np.sort(half, axis=1)
    edges, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    face_edges = inverse.reshape(-1, 3)
    edge_faces = [[] for _ in range(len(edges))]
    for fid in range(len(f)):
        for e in face_edges[fid]:
            edge_faces[e].append(fid)
    face_neighbors = [[] for _ in range(len(f))]
    for fs in edge_faces:
        if len(fs) == 2:
            a, b = fs
            face_neighbors[a].append(b)
            face_neighbors[b].append(a)
    edge_index = {(int(u), int(v)): i for i, (u, v) in enumerate(edges)}
    topo = MeshTopology(edges, edge_faces, face_edges, face_neighbors, edge_index)
    if check_manifold:
        report = check_edge_manifold(topo)
        if not report.manifold:
            raise NonManifoldError(
                f"{mesh.name}: non-manifold edges (more than 2 incident faces): "
                + ", ".join(f"{u}-{v}" for u, v in report.offending_vertex_pairs(topo))
            )
    return topo


@dataclass
class ManifoldReport:
    manifold: bool
    watertight: bool
    offending_edges: list  # edge ids with > 2 incident faces
    incident_counts: list

    def offending_vertex_pairs(self, topology: MeshTopology):
        return [tuple(int(x) for x in topology.edges[e]) for e in self.offending_edges]

    def records(self, topology: MeshTopology) -> list[dict]:
        return [
            {"edge": int(e), "vertices": [int(x) for x in topology.edges[e]],
             "faces": [int(x) for x in topology.edge_faces[e]]}
            for e in self.offending_edges
        ]

    def text(self, topology: MeshTopology) -> str:
        head = (f"manifold: {'pass' if self.manifold else 'fail'}, "
                f"watertight: {'yes' if self.watertight else 'no'}")
        lines = [head]
        for rec in self.records(topology):
            u, v = rec["vertices"]
            lines.append(f"  non-manifold edge {rec['edge']} ({u}-{v}) shared by faces {rec['faces']}")
        return "\n".join(lines)


def check_edge_manifold(topology: MeshTopology) -> ManifoldReport:
    counts = [len(fs) for fs in topology.edge_faces]
    offending = [e for e, c in enumerate(counts) if c > 2]
    return ManifoldReport(
        manifold=not offending,
        watertight=all(c == 2 for c in counts),
        offending_edges=offending,
        incident_counts=counts,
    )


def euler_characteristic(mesh: Mesh, topology: MeshTopology) -> int:
    used = len(np.unique(mesh.faces))
    return used - topology.n_edges + mesh.n_faces


def connected_components(topology: MeshTopology) -> np.ndarray:
    n = len(topology.face_neighbors)
    label = -np.ones(n, dtype=np.int64)
    comp = 0
    for seed in range(n):
        if label[seed] >= 0:
            continue
        label[seed] = comp
        queue = deque([seed])
        while queue:
            a = queue.popleft()
            for b in topology.face_neighbors[a]:
                if label[b] < 0:
                    label[b] = comp
                    queue.append(b)
        comp += 1
    return label


def is_genus0_manifold(mesh: Mesh, topology: MeshTopology) -> tuple[bool, str]:
    """Check for a connected, watertight, edge-manifold surface of genus 0."""
    report = check_edge_manifold(topology)
    if not report.manifold:
        return False, "mesh is not edge-manifold"
    if not report.watertight:
        return False, "mesh has boundary edges"
    if connected_components(topology).max() > 0:
        return False, "mesh is not connected"
    chi = euler_characteristic(mesh, topology)
    if chi != 2:
        return False, f"Euler characteristic {chi} != 2 (genus {(2 - chi) // 2})"
    return True, ""


# ---------------------------------------------------------------------------
# orientation


def orient_faces(mesh: Mesh, topology: MeshTopology | None = None) -> Mesh:
    """Return a copy whose faces are consistently wound, outward for closed parts.

    Winding is propagated breadth-first across interior edges; each closed
    component is then flipped if its signed volume is negative.
    """
    if topology is None:
        topology = build_topology(mesh)
    faces = mesh.faces.copy()
    n = len(faces)
    visited = np.zeros(n, dtype=bool)
    component = -np.ones(n, dtype=np.int64)
    comp = 0
    for seed in range(n):
        if visited[seed]:
            continue
        visited[seed] = True
        component[seed] = comp
        queue = deque([seed])
        while queue:
            a = queue.popleft()
            for b in topology.face_neighbors[a]:
                consistent = _shared_edge_opposed(faces[a], faces[b])
                if not visited[b]:
                    if not consistent:
                        faces[b] = faces[b][::-1]
                    visited[b] = True
                    component[b] = comp
                    queue.append(b)
                elif not consistent:
                    raise MeshError(f"{mesh.name}: mesh is not orientable")
        comp += 1
    boundary = topology.boundary
    for c in range(comp):
        members = np.nonzero(component == c)[0]
        if any(boundary[topology.face_edges[m]].any() for m in members):
            continue
        v = mesh.vertices[faces[members]]
        volume = np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum()
        if volume < 0:
            faces[members] = faces[members][:, ::-1]
    out = Mesh(mesh.vertices, faces, name=mesh.name)
    return out


def _shared_edge_opposed(fa, fb) -> bool:
    # consistent winding traverses the shared edge in opposite directions
    da = {(fa[i], fa[(i + 1) % 3]) for i in range(3)}
    for i in range(3):
        u, v = fb[i], fb[(i + 1) % 3]
        if (u, v) in da:
            return False
    return True


# ---------------------------------------------------------------------------
# geometry


def face_normals(mesh: Mesh) -> np.ndarray:
    v = mesh.vertices[mesh.faces]
    return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])


def face_areas(mesh: Mesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_normals(mesh), axis=1)


def degenerate_faces(mesh: Mesh, eps: float = EPS_DEGENERATE) -> np.ndarray:
    return face_areas(mesh) < eps * mesh.bbox_diagonal() ** 2


@dataclass
class EdgeGeometry:
    """Geometry of every interior edge, seen from both incident faces.

    Side ``s`` of edge ``e`` is face ``faces[e, s]``. Walking that face
    counterclockwise, the shared edge runs ``u -> v`` and ``w`` is the
    opposite vertex; ``edge_ratios[e, s]`` holds ``|uv|/|uw|`` and ``|uv|/|vw|``.
    """

    edge_ids: np.ndarray  # (E_int,) mesh edge ids
    faces: np.ndarray  # (E_int, 2)
    dihedral: np.ndarray  # (E_int,)
    height_ratios: np.ndarray  # (E_int, 2)
    edge_ratios: np.ndarray  # (E_int, 2, 2)
    lengths: np.ndarray  # (E_int,)
    degenerate: np.ndarray  # (E_int,) bool


def _oriented_half_edge(face, u, v):
    # returns (start, end, opposite) for the shared edge {u, v} walked along ``face``
    for i in range(3):
        a, b = face[i], face[(i + 1) % 3]
        if {a, b} == {u, v}:
            return a, b, face[(i + 2) % 3]
    raise MeshError("edge not in face")


def dihedral_angles(mesh: Mesh, topology: MeshTopology, eps: float = EPS_DEGENERATE):
    """Dihedral angle of every interior edge, with the edge ids and a degeneracy mask."""
    geo = edge_geometry(mesh, topology, eps=eps)
    return geo.edge_ids, geo.dihedral, geo.degenerate


def edge_geometry(mesh: Mesh, topology: MeshTopology, eps: float = EPS_DEGENERATE) -> EdgeGeometry:
    """Dihedral angles, edge-to-height and edge-to-edge ratios of interior edges.

    The mesh is re-oriented first; a flat fold gives ``pi``, convex folds
    fall below it and concave folds above.
    """
    oriented = orient_faces(mesh, topology)
    faces = oriented.faces
    verts = oriented.vertices
    normals = face_normals(oriented)
    dbl_area = np.linalg.norm(normals, axis=1)
    degenerate_face = 0.5 * dbl_area < eps * mesh.bbox_diagonal() ** 2
    cap = 1.0 / eps

    interior = topology.interior_edges
    n = len(interior)
    pair = np.zeros((n, 2), dtype=np.int64)
    dihedral = np.empty(n)
    height = np.empty((n, 2))
    ratios = np.empty((n, 2, 2))
    lengths = np.empty(n)
    degen = np.zeros(n, dtype=bool)
    for k, e in enumerate(interior):
        fa, fb = topology.edge_faces[e]
        pair[k] = fa, fb
        u0, v0 = topology.edges[e]
        length = np.linalg.norm(verts[u0] - verts[v0])
        lengths[k] = length
        bad = degenerate_face[fa] or degenerate_face[fb] or length == 0.0
        degen[k] = bad
        for side, f in enumerate((fa, fb)):
            u, v, w = _oriented_half_edge(faces[f], u0, v0)
            h = dbl_area[f] / length if length > 0 else 0.0
            duw = np.linalg.norm(verts[u] - verts[w])
            dvw = np.linalg.norm(verts[v] - verts[w])
            height[k, side] = min(length / h, cap) if h > 0 else cap
            ratios[k, side, 0] = min(length / duw, cap) if duw > 0 else cap
            ratios[k, side, 1] = min(length / dvw, cap) if dvw > 0 else cap
        if bad:
            dihedral[k] = np.pi
            continue
        na = normals[fa] / dbl_area[fa]
        nb = normals[fb] / dbl_area[fb]
        # atan2 keeps precision near flat folds where arccos loses it
        phi = np.arctan2(np.linalg.norm(np.cross(na, nb)), np.dot(na, nb))
        _, _, w_b = _oriented_half_edge(faces[fb], u0, v0)
        _, _, w_a = _oriented_half_edge(faces[fa], u0, v0)
        concave = np.dot(verts[w_b] - verts[w_a], na) > 0
        dihedral[k] = np.pi + phi if concave else np.pi - phi
    return EdgeGeometry(interior, pair, dihedral, height, ratios, lengths, degen)


def interior_angle_cosine(k1, k2):
    """Cosine of the angle opposite the shared edge from two edge-to-edge ratios."""
    return 0.5 * (k1 / k2 + k2 / k1 - k1 * k2)
