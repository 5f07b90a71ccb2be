"""Closed triangle control meshes: adjacency, patch stencils, Loop refinement.

A ControlMesh stores an immutable vertex array plus a connectivity object
shared between meshes that differ only in vertex positions (the common case
inside optimization loops). All meshes are validated to be closed, oriented
2-manifolds on construction.

Stencil ordering convention (used throughout basis evaluation): the three
face corners first, in face orientation order, then the one-ring vertices in
counterclockwise order (viewed from outside) starting at the vertex opposite
the edge (corner0, corner1). Consecutive duplicates arising at low valences
(tetrahedra) are merged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import (
    DegenerateFace,
    InconsistentOrientation,
    NonManifoldEdge,
    NonManifoldVertex,
    ParseError,
    ValidationError,
)

__all__ = [
    "ControlMesh",
    "PatchStencil",
    "build_mesh",
    "loop_subdivide",
    "loop_vertex_weight",
    "limit_positions",
    "patch_stencil",
    "load_obj",
    "save_obj",
]


def loop_vertex_weight(n):
    """Loop's original vertex weight beta_n for valence n."""
    c = 3.0 / 8.0 + 0.25 * np.cos(2.0 * np.pi / np.asarray(n, dtype=float))
    return (5.0 / 8.0 - c * c) / np.asarray(n, dtype=float)


class _Topology:
    """Connectivity of a closed oriented triangle mesh.

    Holds everything derivable from the face list alone so meshes that share
    connectivity (same shape, moved vertices) can share this object and any
    caches hanging off it.
    """

    def __init__(self, faces, num_vertices):
        faces = np.ascontiguousarray(faces, dtype=np.int64)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValidationError("faces must be an (F, 3) index array")
        if faces.size == 0:
            raise ValidationError("mesh has no faces")
        if faces.min() < 0 or faces.max() >= num_vertices:
            raise ValidationError("face index out of range")
        if (faces[:, 0] == faces[:, 1]).any() or (faces[:, 1] == faces[:, 2]).any() \
                or (faces[:, 2] == faces[:, 0]).any():
            raise DegenerateFace("face with a repeated vertex index")
        self.faces = faces
        self.num_vertices = int(num_vertices)
        self.num_faces = faces.shape[0]
        self._build_edges()
        self._build_rings()
        self._caches = {}

    # -- construction ------------------------------------------------------

    def _build_edges(self):
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        # directed edge uniqueness <=> consistent orientation on a manifold
        key = directed[:, 0] * self.num_vertices + directed[:, 1]
        if np.unique(key).size != key.size:
            raise InconsistentOrientation("a directed edge appears twice")
        und = np.sort(directed, axis=1)
        ukey = und[:, 0] * self.num_vertices + und[:, 1]
        order = np.argsort(ukey, kind="stable")
        sk = ukey[order]
        first = np.ones(sk.size, dtype=bool)
        first[1:] = sk[1:] != sk[:-1]
        counts = np.diff(np.flatnonzero(np.concatenate([first, [True]])))
        if (counts != 2).any():
            bad = int(np.flatnonzero(counts != 2)[0])
            e = und[order[np.flatnonzero(first)[bad]]]
            raise NonManifoldEdge(
                f"edge ({e[0]}, {e[1]}) belongs to {counts[bad]} faces, expected 2"
            )
        starts = np.flatnonzero(first)
        self.edges = und[order[starts]]            # (E, 2) sorted pairs
        self.num_edges = self.edges.shape[0]
        # face/slot of each directed half edge, matched to edge ids
        half_face = np.tile(np.arange(self.num_faces), 3)
        half_slot = np.repeat(np.arange(3), self.num_faces)
        edge_of_half = np.empty(key.size, dtype=np.int64)
        edge_of_half[order] = np.repeat(np.arange(self.num_edges), 2)
        self.face_edges = np.empty((self.num_faces, 3), dtype=np.int64)
        self.face_edges[half_face, half_slot] = edge_of_half
        # the two incident faces and their opposite vertices per edge
        ef = np.empty((self.num_edges, 2), dtype=np.int64)
        eo = np.empty((self.num_edges, 2), dtype=np.int64)
        pos = np.zeros(self.num_edges, dtype=np.int64)
        opp_slot = np.array([2, 0, 1])  # vertex opposite edge slot (01->2, 12->0, 20->1)
        for h in order:
            e = edge_of_half[h]
            fidx = half_face[h]
            ef[e, pos[e]] = fidx
            eo[e, pos[e]] = self.faces[fidx, opp_slot[half_slot[h]]]
            pos[e] += 1
        self.edge_faces = ef
        self.edge_opposites = eo
        vcount = np.bincount(self.edges.ravel(), minlength=self.num_vertices)
        if (vcount == 0).any():
            raise ValidationError("mesh has isolated vertices")
        self.valence = vcount

    def _build_rings(self):
        """Ordered (counterclockwise) one-ring per vertex."""
        succ = [dict() for _ in range(self.num_vertices)]
        for a, b, c in self.faces:
            succ[a][b] = c
            succ[b][c] = a
            succ[c][a] = b
        rings = []
        for v in range(self.num_vertices):
            s = succ[v]
            n = self.valence[v]
            if len(s) != n:
                raise NonManifoldVertex(f"vertex {v} has a broken fan")
            start = next(iter(s))
            ring = [start]
            cur = s[start]
            while cur != start:
                if len(ring) > n:
                    raise NonManifoldVertex(f"vertex {v} has a broken fan")
                ring.append(cur)
                cur = s[cur]
            if len(ring) != n:
                raise NonManifoldVertex(f"vertex {v} fan does not close")
            rings.append(np.array(ring, dtype=np.int64))
        self.rings = rings

    # -- queries -----------------------------------------------------------

    @property
    def euler_characteristic(self):
        return self.num_vertices - self.num_edges + self.num_faces

    def edge_id(self, a, b):
        lo, hi = (a, b) if a < b else (b, a)
        idx = np.searchsorted(
            self.edges[:, 0] * self.num_vertices + self.edges[:, 1],
            lo * self.num_vertices + hi,
        )
        return int(idx)

    def adjacency_matrix(self):
        """Symmetric vertex adjacency as CSR (cached)."""
        if "adj" not in self._caches:
            e = self.edges
            ones = np.ones(e.shape[0])
            a = sparse.coo_matrix(
                (np.concatenate([ones, ones]),
                 (np.concatenate([e[:, 0], e[:, 1]]),
                  np.concatenate([e[:, 1], e[:, 0]]))),
                shape=(self.num_vertices, self.num_vertices),
            )
            self._caches["adj"] = a.tocsr()
        return self._caches["adj"]

    def subdivision_matrix(self):
        """Sparse (V + E) x V Loop subdivision matrix (cached)."""
        if "subdiv" not in self._caches:
            nv, ne = self.num_vertices, self.num_edges
            beta = loop_vertex_weight(self.valence)
            diag = sparse.diags(1.0 - self.valence * beta)
            vert = diag + sparse.diags(beta) @ self.adjacency_matrix()
            e, o = self.edges, self.edge_opposites
            rows = np.repeat(np.arange(ne), 4)
            cols = np.column_stack([e, o]).ravel()
            vals = np.tile([0.375, 0.375, 0.125, 0.125], ne)
            edge = sparse.coo_matrix((vals, (rows, cols)), shape=(ne, nv))
            self._caches["subdiv"] = sparse.vstack([vert.tocsr(), edge.tocsr()]).tocsr()
        return self._caches["subdiv"]

    def child_faces(self):
        """Face list after one Loop subdivision.

        Children of face f are 4f..4f+3: the corner children in corner order,
        then the central child.
        """
        if "children" not in self._caches:
            nv = self.num_vertices
            f = self.faces
            eab = nv + self.face_edges[:, 0]
            ebc = nv + self.face_edges[:, 1]
            eca = nv + self.face_edges[:, 2]
            children = np.empty((4 * self.num_faces, 3), dtype=np.int64)
            children[0::4] = np.column_stack([f[:, 0], eab, eca])
            children[1::4] = np.column_stack([f[:, 1], ebc, eab])
            children[2::4] = np.column_stack([f[:, 2], eca, ebc])
            children[3::4] = np.column_stack([eab, ebc, eca])
            self._caches["children"] = children
        return self._caches["children"]


class ControlMesh:
    """Closed oriented triangle mesh with shared connectivity.

    Instances are immutable; use :meth:`with_vertices` for geometry updates
    that keep connectivity (and its caches) shared.
    """

    def __init__(self, vertices, topology):
        v = np.array(vertices, dtype=np.float64, order="C", copy=True)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValidationError("vertices must be an (V, 3) array")
        if v.shape[0] != topology.num_vertices:
            raise ValidationError("vertex count does not match connectivity")
        if not np.isfinite(v).all():
            raise ValidationError("non-finite vertex coordinate")
        v.setflags(write=False)
        self.vertices = v
        self.topology = topology

    # -- basic queries -----------------------------------------------------

    @property
    def faces(self):
        return self.topology.faces

    @property
    def num_vertices(self):
        return self.topology.num_vertices

    @property
    def num_edges(self):
        return self.topology.num_edges

    @property
    def num_faces(self):
        return self.topology.num_faces

    @property
    def euler_characteristic(self):
        return self.topology.euler_characteristic

    @property
    def valence(self):
        return self.topology.valence

    def vertex_ring(self, v):
        """One-ring of vertex v, counterclockwise from outside."""
        return self.topology.rings[v]

    def with_vertices(self, vertices):
        """Same connectivity, new vertex positions."""
        return ControlMesh(vertices, self.topology)

    def face_areas(self):
        v = self.vertices
        f = self.faces
        return 0.5 * np.linalg.norm(
            np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1
        )

    def bounding_box_diagonal(self):
        v = self.vertices
        return float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))

    def content_hash(self):
        """Hex digest identifying geometry and connectivity."""
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.faces).tobytes())
        return h.hexdigest()


def build_mesh(vertices, faces):
    """Validate raw arrays into a ControlMesh.

    Raises NonManifoldEdge, InconsistentOrientation, NonManifoldVertex, or
    DegenerateFace on the corresponding defects.
    """
    v = np.ascontiguousarray(vertices, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 3:
        raise ValidationError("vertices must be an (V, 3) array")
    if v.shape[0] < 4:
        raise ValidationError("a closed mesh needs at least 4 vertices")
    topo = _Topology(faces, v.shape[0])
    mesh = ControlMesh(v, topo)
    areas = mesh.face_areas()
    scale = max(mesh.bounding_box_diagonal(), np.finfo(float).tiny)
    if (areas <= 1e-16 * scale * scale).any():
        bad = int(np.argmin(areas))
        raise DegenerateFace(f"face {bad} has (near) zero area")
    return mesh


def loop_subdivide(mesh):
    """One Loop refinement step: V' = V + E, F' = 4F, same limit surface."""
    topo = mesh.topology
    new_vertices = topo.subdivision_matrix() @ mesh.vertices
    return build_mesh(new_vertices, topo.child_faces())


def limit_positions(mesh):
    """Limit-surface positions of all control vertices (Loop limit stencil)."""
    topo = mesh.topology
    n = topo.valence
    omega = 1.0 / (n + 3.0 / (8.0 * loop_vertex_weight(n)))
    lim = sparse.diags(1.0 - n * omega) + sparse.diags(omega) @ topo.adjacency_matrix()
    return lim @ mesh.vertices


@dataclass(frozen=True)
class PatchStencil:
    """Ordered control stencil of one face (see module docstring)."""

    face: int
    indices: np.ndarray
    corner_valences: tuple
    regular: bool

    @property
    def size(self):
        return len(self.indices)


def _ring_segment(topo, center, start, stop):
    """Elements of center's CCW ring strictly between start and stop."""
    ring = topo.rings[center]
    k = int(np.flatnonzero(ring == start)[0])
    out = []
    n = len(ring)
    for step in range(1, n):
        nxt = ring[(k + step) % n]
        if nxt == stop:
            return out
        out.append(int(nxt))
    raise NonManifoldVertex(f"ring of vertex {center} misses an expected corner")


def patch_stencil(mesh, face, shift=0):
    """Ordered one-ring stencil of a face.

    shift cyclically rotates the corner that plays the role of corner 0;
    evaluation uses this to move an extraordinary vertex to the front.
    """
    topo = mesh.topology
    corners = np.roll(topo.faces[face], -shift)
    c0, c1, c2 = (int(c) for c in corners)
    seg = (
        _ring_segment(topo, c1, c0, c2)
        + _ring_segment(topo, c2, c1, c0)
        + _ring_segment(topo, c0, c2, c1)
    )
    ring = []
    for x in seg:
        if not ring or ring[-1] != x:
            ring.append(x)
    while len(ring) > 1 and ring[0] == ring[-1]:
        ring.pop()
    indices = np.array([c0, c1, c2] + ring, dtype=np.int64)
    val = (int(topo.valence[c0]), int(topo.valence[c1]), int(topo.valence[c2]))
    regular = val == (6, 6, 6) and len(indices) == 12 \
        and len(np.unique(indices)) == 12
    return PatchStencil(face=int(face), indices=indices,
                        corner_valences=val, regular=regular)


# -- Wavefront OBJ ----------------------------------------------------------

def save_obj(mesh, path):
    """ASCII OBJ, triangles only, 17 significant digits."""
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def load_obj(path):
    """Parse a triangles-only ASCII OBJ file into a validated ControlMesh."""
    vertices = []
    faces = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError("vertex record needs 3 coordinates", lineno)
                try:
                    vertices.append([float(p) for p in parts[1:4]])
                except ValueError as exc:
                    raise ParseError(f"bad coordinate: {exc}", lineno) from None
            elif tag == "f":
                refs = parts[1:]
                if len(refs) != 3:
                    raise ParseError(
                        f"face with {len(refs)} vertices; triangles only", lineno
                    )
                idx = []
                for r in refs:
                    base = r.split("/")[0]
                    try:
                        i = int(base)
                    except ValueError:
                        raise ParseError(f"bad face index {base!r}", lineno) from None
                    if i <= 0:
                        raise ParseError(
                            "only positive 1-based indices supported", lineno
                        )
                    idx.append(i - 1)
                faces.append(idx)
            # all other records (vn, vt, o, g, s, usemtl, ...) are ignored
    if not vertices:
        raise ParseError("no vertices found", None)
    try:
        return build_mesh(np.array(vertices), np.array(faces, dtype=np.int64))
    except ValidationError:
        raise
