"""Triangle meshes: ingestion, connectivity and per-face differential quantities."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import (
    DegenerateFace,
    DimensionMismatch,
    InconsistentWinding,
    NonTriangle,
    ParseError,
)

logger = logging.getLogger(__name__)

# relative to the squared bounding-box diagonal
_DEGENERATE_AREA = 1e-14


class TriangleMesh:
    """A manifold triangle mesh, possibly with boundary.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
        Vertex positions.
    faces : array_like, shape (m, 3)
        0-based vertex indices, counter-clockwise seen from outside.
    validate : bool
        Check index ranges, reject zero-area faces and inconsistent winding.
        On closed meshes with negative signed volume the winding is flipped
        so that face normals point outward.
    """

    def __init__(self, vertices, faces, validate: bool = True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        faces = np.asarray(faces)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise NonTriangle(f"faces must have shape (m, 3), got {faces.shape}")
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ParseError(f"vertices must have shape (n, 3), got {self.vertices.shape}")
        if validate:
            self._validate()

    def _validate(self):
        n = self.n_vertices
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise ParseError("face index out of range")
        scale = np.ptp(self.vertices, axis=0) if n else np.zeros(3)
        diag2 = float(scale @ scale)
        bad = np.flatnonzero(self._raw_face_areas() <= _DEGENERATE_AREA * diag2)
        if bad.size:
            raise DegenerateFace(f"{bad.size} zero-area face(s), first is face {bad[0]}")
        directed = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        keys = directed[:, 0] * n + directed[:, 1]
        if np.unique(keys).size != keys.size:
            raise InconsistentWinding("a directed edge appears twice (inconsistent winding or non-manifold edge)")
        if self.is_closed and self.signed_volume < 0:
            logger.info("closed mesh has negative signed volume, flipping winding")
            self.faces = np.ascontiguousarray(self.faces[:, ::-1])
            self._clear_cache()

    def _clear_cache(self):
        for name, value in type(self).__dict__.items():
            if isinstance(value, cached_property):
                self.__dict__.pop(name, None)

    def _raw_face_areas(self):
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def __repr__(self):
        return f"TriangleMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @cached_property
    def face_areas(self) -> np.ndarray:
        return self._raw_face_areas()

    @cached_property
    def face_normals(self) -> np.ndarray:
        v = self.vertices[self.faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals, unit length."""
        acc = np.zeros_like(self.vertices)
        weighted = self.face_normals * self.face_areas[:, None]
        for c in range(3):
            np.add.at(acc, self.faces[:, c], weighted)
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        return acc / np.where(norm > 0, norm, 1.0)

    @cached_property
    def vertex_areas(self) -> np.ndarray:
        """Barycentric vertex areas (one third of the incident face areas)."""
        return np.bincount(self.faces.ravel(), np.repeat(self.face_areas / 3.0, 3), minlength=self.n_vertices)

    @cached_property
    def total_area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def signed_volume(self) -> float:
        v = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    @cached_property
    def edges(self) -> np.ndarray:
        """Undirected edges as sorted pairs ``(i, j)`` with ``i < j``, lexicographic order."""
        e = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts == 1]

    @property
    def is_closed(self) -> bool:
        return self.boundary_edges.shape[0] == 0

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric 0/1 vertex adjacency matrix."""
        return edge_adjacency(self.n_vertices, self.edges)

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        """One-ring neighbours of every vertex, ascending."""
        adj = self.adjacency
        return [adj.indices[adj.indptr[i] : adj.indptr[i + 1]] for i in range(self.n_vertices)]

    @cached_property
    def hat_gradients(self) -> np.ndarray:
        """Gradients of the three piecewise-linear hat functions on every face.

        Shape ``(m, 3, 3)``: face, local corner, xyz. The hat function of corner
        ``i`` has gradient ``n x e_i / (2 A)`` with ``e_i`` the opposite edge
        oriented counter-clockwise.
        """
        v = self.vertices[self.faces]
        n = self.face_normals
        two_a = 2.0 * self.face_areas[:, None]
        g = np.empty((self.n_faces, 3, 3))
        for i in range(3):
            e = v[:, (i + 2) % 3] - v[:, (i + 1) % 3]
            g[:, i] = np.cross(n, e) / two_a
        return g

    @cached_property
    def max_edge_length(self) -> float:
        return float(self.edge_lengths.max())

    def copy(self) -> TriangleMesh:
        return TriangleMesh(self.vertices.copy(), self.faces.copy(), validate=False)


def edge_adjacency(n: int, edges: np.ndarray) -> sparse.csr_matrix:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    i = np.concatenate([edges[:, 0], edges[:, 1]])
    j = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sparse.csr_matrix((np.ones(i.size), (i, j)), shape=(n, n))
    adj.data[:] = 1.0
    adj.sort_indices()
    return adj


def face_gradient(mesh: TriangleMesh, f) -> np.ndarray:
    """Piecewise-linear gradient of a per-vertex function, one 3-vector per face."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (mesh.n_vertices,):
        raise DimensionMismatch(f"expected {mesh.n_vertices} values, got shape {f.shape}")
    return np.einsum("tic,ti->tc", mesh.hat_gradients, f[mesh.faces])


def gradient_matrix(mesh: TriangleMesh) -> sparse.csr_matrix:
    """Sparse ``(3m, n)`` operator; row ``3t + c`` is component ``c`` of the gradient on face ``t``."""
    m = mesh.n_faces
    g = mesh.hat_gradients
    rows = (3 * np.arange(m)[:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1)
    cols = np.broadcast_to(mesh.faces[:, :, None], (m, 3, 3))
    return sparse.csr_matrix((g.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * m, mesh.n_vertices))


# ---------------------------------------------------------------------------
# graph utilities


@dataclass
class DistanceField:
    source: int
    values: np.ndarray
    unreachable: np.ndarray

    @property
    def disconnected(self) -> bool:
        return bool(self.unreachable.any())


def edge_graph(mesh: TriangleMesh) -> sparse.csr_matrix:
    """Edge-length weighted symmetric graph of the mesh."""
    e = mesh.edges
    w = mesh.edge_lengths
    n = mesh.n_vertices
    g = sparse.csr_matrix((np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))), shape=(n, n))
    g.sort_indices()
    return g


def geodesic_distances(mesh: TriangleMesh, source: int, normalize: bool = False) -> DistanceField:
    """Dijkstra distances over the edge graph from one vertex.

    With ``normalize`` the distances are divided by ``sqrt(total_area)``.
    Unreachable vertices get ``inf`` and are flagged in ``unreachable``.
    """
    if not 0 <= source < mesh.n_vertices:
        raise IndexError(f"source {source} out of range")
    d = csgraph.dijkstra(edge_graph(mesh), directed=False, indices=source)
    if normalize:
        d = d / np.sqrt(mesh.total_area)
    unreachable = ~np.isfinite(d)
    if unreachable.any():
        logger.warning("%d vertices unreachable from %d", int(unreachable.sum()), source)
    return DistanceField(source=int(source), values=d, unreachable=unreachable)


class GeodesicCache:
    """Memoised single-source distance fields on one mesh.

    Only the sources actually queried are computed.
    """

    def __init__(self, mesh: TriangleMesh, normalize: bool = True):
        self.mesh = mesh
        self.normalize = normalize
        self._graph = edge_graph(mesh)
        self._scale = 1.0 / np.sqrt(mesh.total_area) if normalize else 1.0
        self._rows: dict[int, np.ndarray] = {}

    def _fill(self, sources):
        missing = np.array(sorted({int(s) for s in sources} - self._rows.keys()), dtype=np.int64)
        if missing.size:
            d = csgraph.dijkstra(self._graph, directed=False, indices=missing)
            d = np.atleast_2d(d) * self._scale
            for s, row in zip(missing, d):
                self._rows[int(s)] = row

    def row(self, source: int) -> np.ndarray:
        self._fill([source])
        return self._rows[int(source)]

    def pairs(self, a, b) -> np.ndarray:
        """Distances ``d(a[i], b[i])`` for paired index arrays."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        out = np.empty(a.shape, dtype=np.float64)
        if a.size == 0:
            return out
        # query from whichever endpoint set is smaller
        if np.unique(b).size < np.unique(a).size:
            a, b = b, a
        self._fill(np.unique(a))
        order = np.argsort(a, kind="stable")
        sa = a[order]
        starts = np.flatnonzero(np.r_[True, sa[1:] != sa[:-1]])
        ends = np.r_[starts[1:], sa.size]
        for s, e in zip(starts, ends):
            idx = order[s:e]
            out[idx] = self._rows[int(sa[s])][b[idx]]
        return out


def largest_connected_component(n: int, edges) -> np.ndarray:
    """Vertices of the largest connected component of the graph ``(n, edges)``.

    Ties go to the component containing the smallest vertex index.
    Returns a sorted index array (empty when ``n == 0``).
    """
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    _, labels = csgraph.connected_components(edge_adjacency(n, edges), directed=False)
    return _largest_label(labels)


def _largest_label(labels: np.ndarray) -> np.ndarray:
    counts = np.bincount(labels)
    first = np.full(counts.size, labels.size, dtype=np.int64)
    np.minimum.at(first, labels, np.arange(labels.size))
    best = min(range(counts.size), key=lambda c: (-counts[c], first[c]))
    return np.flatnonzero(labels == best)


# ---------------------------------------------------------------------------
# file I/O


def load_mesh(path, format: str | None = None, validate: bool = True) -> TriangleMesh:
    """Read an OFF, OBJ or ASCII PLY triangle mesh.

    The format is taken from the file suffix unless given explicitly.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    readers = {"off": _read_off, "obj": _read_obj, "ply": _read_ply}
    if fmt not in readers:
        raise ParseError(f"unsupported mesh format {fmt!r}")
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        vertices, faces = readers[fmt](text)
    except StopIteration as exc:
        raise ParseError(f"{path}: unexpected end of file") from exc
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return TriangleMesh(vertices, faces, validate=validate)


def _tokens(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line.split()


def _check_polygon(idx, where):
    if len(idx) != 3:
        raise NonTriangle(f"{where}: polygon with {len(idx)} vertices")


def _read_off(text):
    lines = _tokens(text)
    head = next(lines)
    if head[0].upper() != "OFF":
        raise ValueError("missing OFF header")
    counts = head[1:] if len(head) > 1 else next(lines)
    nv, nf = int(counts[0]), int(counts[1])
    vertices = np.array([[float(x) for x in next(lines)[:3]] for _ in range(nv)]).reshape(nv, 3)
    faces = []
    for k in range(nf):
        tok = next(lines)
        cnt = int(tok[0])
        _check_polygon(tok[1 : 1 + cnt], f"face {k}")
        faces.append([int(x) for x in tok[1:4]])
    return vertices, np.array(faces, dtype=np.int64).reshape(-1, 3)


def _read_obj(text):
    vertices, faces = [], []
    for tok in _tokens(text):
        if tok[0] == "v":
            vertices.append([float(x) for x in tok[1:4]])
        elif tok[0] == "f":
            idx = [int(t.split("/")[0]) for t in tok[1:]]
            _check_polygon(idx, f"face {len(faces)}")
            nv = len(vertices)
            faces.append([i - 1 if i > 0 else nv + i for i in idx])
    return np.array(vertices, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _read_ply(text):
    lines = iter(text.splitlines())
    if next(lines).strip() != "ply":
        raise ValueError("missing ply magic")
    elements = []
    for line in lines:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise ValueError("only ASCII PLY is supported")
        if tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            elements[-1][2].append(tok[-1])
        elif tok[0] == "end_header":
            break
    body = (line.split() for line in lines if line.strip())
    vertices = faces = None
    for name, count, props in elements:
        rows = [next(body) for _ in range(count)]
        if name == "vertex":
            cols = [props.index(c) for c in ("x", "y", "z")]
            vertices = np.array([[float(r[c]) for c in cols] for r in rows]).reshape(count, 3)
        elif name == "face":
            faces = []
            for k, r in enumerate(rows):
                cnt = int(r[0])
                _check_polygon(r[1 : 1 + cnt], f"face {k}")
                faces.append([int(x) for x in r[1:4]])
            faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if vertices is None or faces is None:
        raise ValueError("PLY needs vertex and face elements")
    return vertices, faces


def save_mesh(mesh: TriangleMesh, path, format: str | None = None) -> None:
    """Write OFF (native, lossless) or OBJ."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "off":
        lines = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
        lines += [" ".join(repr(float(x)) for x in v) for v in mesh.vertices]
        lines += ["3 " + " ".join(str(int(i)) for i in f) for f in mesh.faces]
    elif fmt == "obj":
        lines = ["v " + " ".join(repr(float(x)) for x in v) for v in mesh.vertices]
        lines += ["f " + " ".join(str(int(i) + 1) for i in f) for f in mesh.faces]
    else:
        raise ParseError(f"cannot write format {fmt!r}")
    path.write_text("\n".join(lines) + "\n")
