"""Synthetic meshes with known geometry and ground-truth correspondences."""

from __future__ import annotations

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .mesh import TriangleMesh

_PHI = (1.0 + np.sqrt(5.0)) / 2.0


def icosahedron(radius: float = 1.0) -> TriangleMesh:
    v = np.array(
        [
            [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
            [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
            [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
        ],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    v *= radius / np.linalg.norm(v[0])
    return TriangleMesh(v, f)


def geodesic_sphere(freq: int, radius: float = 1.0) -> TriangleMesh:
    """Icosahedron with every face split into ``freq**2`` triangles, projected to the sphere.

    Has ``10 * freq**2 + 2`` vertices; ``freq = 10`` gives 1002.
    """
    base = icosahedron()
    index: dict[tuple, int] = {}
    verts: list[np.ndarray] = []

    def vid(face, a, b):
        # key on integer barycentric coordinates against sorted global corners
        c = base.faces[face]
        w = {int(c[0]): freq - a - b, int(c[1]): a, int(c[2]): b}
        key = tuple(sorted((k, x) for k, x in w.items() if x))
        if key not in index:
            index[key] = len(verts)
            p = sum(base.vertices[k] * x for k, x in key) / freq
            verts.append(p)
        return index[key]

    faces = []
    for t in range(base.n_faces):
        for a in range(freq):
            for b in range(freq - a):
                p0, p1, p2 = vid(t, a, b), vid(t, a + 1, b), vid(t, a, b + 1)
                faces.append([p0, p1, p2])
                if a + b < freq - 1:
                    faces.append([p1, vid(t, a + 1, b + 1), p2])
    v = np.array(verts)
    v *= radius / np.linalg.norm(v, axis=1, keepdims=True)
    return TriangleMesh(v, faces)


def icosphere(subdiv: int, radius: float = 1.0) -> TriangleMesh:
    return geodesic_sphere(2**subdiv, radius)


def torus(n_major: int = 32, n_minor: int = 16, major: float = 1.0, minor: float = 0.35) -> TriangleMesh:
    u = 2 * np.pi * np.arange(n_major) / n_major
    w = 2 * np.pi * np.arange(n_minor) / n_minor
    U, W = np.meshgrid(u, w, indexing="ij")
    v = np.stack(
        [(major + minor * np.cos(W)) * np.cos(U), (major + minor * np.cos(W)) * np.sin(U), minor * np.sin(W)],
        axis=-1,
    ).reshape(-1, 3)
    idx = np.arange(n_major * n_minor).reshape(n_major, n_minor)
    a = idx
    b = np.roll(idx, -1, axis=0)
    c = np.roll(np.roll(idx, -1, axis=0), -1, axis=1)
    d = np.roll(idx, -1, axis=1)
    faces = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    return TriangleMesh(v, faces)


def grid(nx: int, ny: int, width: float = 1.0, height: float = 1.0, mirrored: bool = False) -> TriangleMesh:
    """Flat ``nx`` by ``ny`` cell grid in the z=0 plane, normals +z.

    With ``mirrored`` the diagonals of the right half are flipped so that the
    triangulation is symmetric under ``x -> width - x``.
    """
    x = np.linspace(0.0, width, nx + 1)
    y = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    v = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    faces = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            if mirrored and 2 * i >= nx:
                faces += [[a, b, d], [b, c, d]]
            else:
                faces += [[a, b, c], [a, c, d]]
    return TriangleMesh(v, faces)


def _arclength_curve(n: int, wobble: float) -> np.ndarray:
    """Closed planar curve of length ``2 pi`` sampled at ``n`` equal arc-length steps.

    The tangent angle is ``s + wobble/2 * sin(2 s)``; ``wobble = 0`` is the unit circle.
    """
    fine = 64 * n
    s = np.linspace(0.0, 2 * np.pi, fine + 1)
    theta = s + 0.5 * wobble * np.sin(2 * s)
    xy = np.stack([cumulative_trapezoid(np.cos(theta), s, initial=0.0), cumulative_trapezoid(np.sin(theta), s, initial=0.0)], -1)
    pts = xy[::64][:n]
    return pts - pts.mean(axis=0)


def tube(n_around: int = 40, n_along: int = 25, length: float | None = None, wobble: float = 0.0) -> TriangleMesh:
    """Open tube whose cross-section is a closed curve of length ``2 pi``.

    Tubes with different ``wobble`` but equal sampling are isometric with
    identical connectivity, so vertex ``i`` corresponds to vertex ``i``.
    """
    if length is None:
        length = (n_along - 1) * 2 * np.pi / n_around
    ring = _arclength_curve(n_around, wobble)
    z = np.linspace(0.0, length, n_along)
    v = np.concatenate([np.column_stack([ring, np.full(n_around, zz)]) for zz in z])
    faces = []
    for k in range(n_along - 1):
        for i in range(n_around):
            a = k * n_around + i
            b = k * n_around + (i + 1) % n_around
            c, d = b + n_around, a + n_around
            faces += [[a, b, c], [a, c, d]]
    return TriangleMesh(v, faces)


def bent_cylinder_pair(n_around: int = 40, n_along: int = 25, wobble: float = 0.6):
    """Circular tube and an isometric tube with an oval cross-section.

    Returns ``(source, target, ground_truth)`` where ``ground_truth`` is the
    identity vertex map.
    """
    src = tube(n_around, n_along)
    tgt = tube(n_around, n_along, wobble=wobble)
    return src, tgt, np.arange(src.n_vertices)


def bumpy_blob(freq: int = 10, asymmetry: float = 0.0) -> TriangleMesh:
    """Ellipsoid with Gaussian bumps, bilaterally symmetric in ``x`` when ``asymmetry == 0``.

    A nonzero ``asymmetry`` enlarges the bumps on the ``x > 0`` side only,
    so the exact ``x`` reflection is no longer a self-isometry.
    """
    sphere = geodesic_sphere(freq)
    u = sphere.vertices
    bumps = [
        ((0.55, 0.55, 0.6), 0.30, 0.30),
        ((0.5, -0.65, -0.35), 0.22, 0.25),
        ((0.3, -0.35, 0.85), 0.15, 0.22),
        ((0.0, 0.2, -0.95), 0.25, 0.30),
        ((0.0, -0.95, 0.1), 0.35, 0.30),
    ]
    r = np.ones(len(u))
    for c, h, w in bumps:
        c = np.asarray(c) / np.linalg.norm(c)
        for sx in ((1.0, -1.0) if c[0] else (1.0,)):
            cc = c * np.array([sx, 1.0, 1.0])
            hh = h * (1.0 + asymmetry) if sx > 0 and c[0] else h
            r += hh * np.exp(-np.sum((u - cc) ** 2, axis=1) / (2 * w * w))
    v = u * r[:, None] * np.array([1.0, 1.35, 0.8])
    return TriangleMesh(v, sphere.faces)


def bumpy_strip(nx: int = 30, ny: int = 12) -> TriangleMesh:
    """Height-field strip with a bump pattern symmetric only under ``x -> 3 - x``."""
    m = grid(nx, ny, width=3.0, height=1.2, mirrored=True)
    x, y = m.vertices[:, 0], m.vertices[:, 1]
    z = 0.35 * np.exp(-((x - 0.8) ** 2 + (y - 0.75) ** 2) / 0.08)
    z += 0.35 * np.exp(-((x - 2.2) ** 2 + (y - 0.75) ** 2) / 0.08)
    z += 0.25 * np.exp(-((x - 1.5) ** 2 + (y - 0.3) ** 2) / 0.05)
    v = m.vertices.copy()
    v[:, 2] = z
    return TriangleMesh(v, m.faces)


def mirror(mesh: TriangleMesh, axis: int = 0) -> TriangleMesh:
    """Reflect through the plane ``coord[axis] = 0``, flipping winding to keep normals outward."""
    v = mesh.vertices.copy()
    v[:, axis] = -v[:, axis]
    return TriangleMesh(v, mesh.faces[:, ::-1].copy())


def reflection_permutation(mesh: TriangleMesh, axis: int = 0, center: float = 0.0, tol: float = 1e-9) -> np.ndarray:
    """Vertex permutation ``S`` with ``x_S(i)`` the reflection of ``x_i`` (vertex sets must be symmetric)."""
    from scipy.spatial import cKDTree

    v = mesh.vertices.copy()
    r = v.copy()
    r[:, axis] = 2 * center - r[:, axis]
    dist, idx = cKDTree(v).query(r)
    if dist.max() > tol * max(1.0, np.ptp(v)):
        raise ValueError("vertex set is not symmetric under the reflection")
    return idx


def rigid_motion(mesh: TriangleMesh, seed: int = 0) -> TriangleMesh:
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return TriangleMesh(mesh.vertices @ q.T + rng.normal(size=3), mesh.faces)


def permute_vertices(mesh: TriangleMesh, perm) -> TriangleMesh:
    """Relabel vertices: new vertex ``k`` is old vertex ``perm[k]``."""
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return TriangleMesh(mesh.vertices[perm], inv[mesh.faces])
