"""Reduced-basis operators attached to descriptor functions.

Multiplicative operators ``h -> f h`` and orientation operators
``h -> <n x grad f, grad h>`` are assembled on the vertex domain and
compressed to ``k x k`` matrices with ``phi^T M (.) phi``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import DimensionMismatch
from .mesh import TriangleMesh, face_gradient
from .spectral import SpectralBasis

PRESERVE = 1
REVERSE = -1

# faces smaller than this fraction of the mean area contribute nothing
_SLIVER_AREA = 1e-12


@dataclass
class ReducedOperator:
    matrix: np.ndarray
    kind: str  # "multiplicative" or "orientation"
    column: int | None = None


def _check_function(f, n):
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (n,):
        raise DimensionMismatch(f"expected a function with {n} values, got shape {f.shape}")
    return f


def multiplicative_operator(basis: SpectralBasis, f, column: int | None = None) -> ReducedOperator:
    f = _check_function(f, basis.n)
    w = basis.mass_diag * f
    mat = basis.phi.T @ (w[:, None] * basis.phi)
    return ReducedOperator(0.5 * (mat + mat.T), "multiplicative", column)


def face_triple_product(mesh: TriangleMesh, f, h) -> np.ndarray:
    """Per-face ``<grad f x grad h, n>``."""
    gf = face_gradient(mesh, f)
    gh = face_gradient(mesh, h)
    return np.einsum("ij,ij->i", np.cross(gf, gh), mesh.face_normals)


def face_to_vertex(mesh: TriangleMesh) -> sparse.csr_matrix:
    """Area-weighted one-ring average from faces to vertices, shape ``(n, m)``."""
    m = mesh.n_faces
    a = mesh.face_areas
    rows = mesh.faces.ravel()
    cols = np.repeat(np.arange(m), 3)
    S = sparse.csr_matrix((np.repeat(a, 3), (rows, cols)), shape=(mesh.n_vertices, m))
    total = np.asarray(S.sum(axis=1)).ravel()
    return sparse.diags(1.0 / np.where(total > 0, total, 1.0)) @ S


def orientation_face_matrix(mesh: TriangleMesh, f) -> sparse.csr_matrix:
    """Sparse ``(m, n)`` matrix taking ``h`` to the per-face values ``<n x grad f, grad h>``."""
    f = _check_function(f, mesh.n_vertices)
    rot = np.cross(mesh.face_normals, face_gradient(mesh, f))
    vals = np.einsum("tc,tic->ti", rot, mesh.hat_gradients)
    vals[mesh.face_areas < _SLIVER_AREA * mesh.face_areas.mean()] = 0.0
    rows = np.repeat(np.arange(mesh.n_faces), 3)
    return sparse.csr_matrix((vals.ravel(), (rows, mesh.faces.ravel())), shape=(mesh.n_faces, mesh.n_vertices))


def orientation_vertex_operator(mesh: TriangleMesh, f) -> sparse.csr_matrix:
    """Vertex-domain orientation operator ``h -> avg_faces <n x grad f, grad h>``, shape ``(n, n)``."""
    return sparse.csr_matrix(face_to_vertex(mesh) @ orientation_face_matrix(mesh, f))


def orientation_operator(mesh: TriangleMesh, basis: SpectralBasis, f, sign: int = PRESERVE, column: int | None = None) -> ReducedOperator:
    """Orientation operator of ``f`` compressed to the basis.

    ``sign=-1`` gives the orientation-reversing variant, the exact negation.
    """
    if basis.n != mesh.n_vertices:
        raise DimensionMismatch("basis and mesh have different vertex counts")
    if sign not in (PRESERVE, REVERSE):
        raise ValueError("sign must be +1 or -1")
    op = orientation_vertex_operator(mesh, f)
    mat = basis.phi.T @ (basis.mass_diag[:, None] * (op @ basis.phi))
    return ReducedOperator(sign * mat, "orientation", column)


def descriptor_operators(mesh: TriangleMesh, basis: SpectralBasis, raw, columns, orientation_sign: int | None = PRESERVE):
    """Multiplicative and (optionally) orientation operators for the chosen descriptor columns."""
    raw = np.asarray(raw)
    mult = [multiplicative_operator(basis, raw[:, c], c) for c in columns]
    orient = []
    if orientation_sign is not None:
        orient = [orientation_operator(mesh, basis, raw[:, c], orientation_sign, c) for c in columns]
    return mult, orient
