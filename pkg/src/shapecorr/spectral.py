"""Cotangent Laplace-Beltrami operator, truncated eigenbasis and wave kernel signatures."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import ConvergenceFailure, DimensionMismatch, InsufficientBasis, NumericalDegeneracy
from .mesh import TriangleMesh

logger = logging.getLogger(__name__)

MAX_COTAN = 1e8
# below this size the generalized eigenproblem is solved densely
DENSE_EIG_LIMIT = 3000


def build_laplacian(mesh: TriangleMesh) -> tuple[sparse.csr_matrix, sparse.dia_matrix]:
    """Cotangent stiffness ``W`` and lumped barycentric mass ``M``.

    ``W`` is symmetric positive semidefinite with zero row sums. Raises
    :class:`NumericalDegeneracy` when a sliver triangle produces a cotangent
    weight above ``1e8``.
    """
    v = mesh.vertices[mesh.faces]
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        a = v[:, j] - v[:, i]
        b = v[:, k] - v[:, i]
        cot = np.einsum("ij,ij->i", a, b) / np.linalg.norm(np.cross(a, b), axis=1)
        if np.abs(cot).max() > MAX_COTAN:
            raise NumericalDegeneracy(f"cotangent weight {np.abs(cot).max():.3g} exceeds {MAX_COTAN:g}")
        # the angle at corner i weights the opposite edge (j, k)
        rows += [mesh.faces[:, j], mesh.faces[:, k]]
        cols += [mesh.faces[:, k], mesh.faces[:, j]]
        vals += [-0.5 * cot, -0.5 * cot]
    off = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    W = off - sparse.diags(np.asarray(off.sum(axis=1)).ravel())
    W = sparse.csr_matrix(W)
    W.sort_indices()
    M = sparse.diags(mesh.vertex_areas)
    return W, M


@dataclass
class SpectralBasis:
    """First ``k`` generalized eigenpairs of ``W phi = lambda M phi``.

    ``phi`` columns are M-orthonormal, ``evals`` ascending and nonnegative.
    """

    phi: np.ndarray
    evals: np.ndarray
    mass: sparse.spmatrix
    stiffness: sparse.spmatrix

    @property
    def k(self) -> int:
        return self.phi.shape[1]

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    @property
    def mass_diag(self) -> np.ndarray:
        return np.asarray(self.mass.diagonal())

    def project(self, f) -> np.ndarray:
        """Reduced coefficients ``phi^T M f`` (works column-wise on 2-d input)."""
        f = np.asarray(f, dtype=np.float64)
        if f.shape[0] != self.n:
            raise DimensionMismatch(f"expected {self.n} rows, got {f.shape[0]}")
        w = self.mass_diag
        return self.phi.T @ (w[:, None] * f if f.ndim == 2 else w * f)

    def reconstruct(self, coeffs) -> np.ndarray:
        return self.phi @ coeffs

    def truncate(self, k: int) -> SpectralBasis:
        if k > self.k:
            raise InsufficientBasis(f"requested {k} eigenpairs, basis has {self.k}")
        return SpectralBasis(self.phi[:, :k], self.evals[:k], self.mass, self.stiffness)


def eigenbasis(W, M, k: int) -> SpectralBasis:
    """Smallest ``k`` eigenpairs of the pencil ``(W, M)``.

    Sign convention: the entry of largest magnitude in each column is
    positive (first such entry on ties). Deterministic for identical input.
    """
    n = W.shape[0]
    if not 1 <= k <= n:
        raise InsufficientBasis(f"k={k} must lie in [1, {n}]")
    if n <= DENSE_EIG_LIMIT:
        evals, phi = scipy.linalg.eigh(W.toarray(), M.toarray(), subset_by_index=[0, k - 1])
    else:
        v0 = np.ones(n) / np.sqrt(n)
        try:
            evals, phi = splinalg.eigsh(W.tocsc(), k=k, M=M.tocsc(), sigma=-1e-8, which="LM", v0=v0)
        except splinalg.ArpackNoConvergence as exc:
            raise ConvergenceFailure(f"eigsh did not converge: {exc}", achieved=len(exc.eigenvalues)) from exc
        order = np.argsort(evals)
        evals, phi = evals[order], phi[:, order]
        # ARPACK vectors are M-orthogonal up to round-off; renormalize
        norms = np.sqrt(np.einsum("ij,ij->j", phi, M @ phi))
        phi = phi / norms
    evals = np.where(np.abs(evals) < 1e-10 * max(1.0, abs(evals[-1])), 0.0, evals)
    if evals.min() < 0:
        raise ConvergenceFailure(f"negative eigenvalue {evals.min():.3g}", achieved=int((evals >= 0).sum()))
    evals = np.maximum(evals, 0.0)
    pivot = np.argmax(np.abs(phi), axis=0)
    signs = np.sign(phi[pivot, np.arange(k)])
    phi = phi * np.where(signs == 0, 1.0, signs)
    return SpectralBasis(np.ascontiguousarray(phi), evals, sparse.diags(M.diagonal()), W)


def laplacian_basis(mesh: TriangleMesh, k: int) -> SpectralBasis:
    W, M = build_laplacian(mesh)
    return eigenbasis(W, M, min(k, mesh.n_vertices))


@dataclass
class Shape:
    """A mesh bundled with its spectral basis."""

    mesh: TriangleMesh
    basis: SpectralBasis

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh, k: int = 50) -> Shape:
        return cls(mesh, laplacian_basis(mesh, k))


# ---------------------------------------------------------------------------
# descriptors


@dataclass
class DescriptorSet:
    """Per-vertex descriptors (``raw``, n x q) and their reduced coefficients (k x q)."""

    raw: np.ndarray
    reduced: np.ndarray

    @property
    def q(self) -> int:
        return self.raw.shape[1]

    @classmethod
    def from_raw(cls, basis: SpectralBasis, raw) -> DescriptorSet:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim == 1:
            raw = raw[:, None]
        if raw.shape[0] != basis.n or raw.shape[1] < 1:
            raise DimensionMismatch(f"descriptor matrix shape {raw.shape} does not fit {basis.n} vertices")
        return cls(raw, basis.project(raw))

    def subset(self, columns) -> DescriptorSet:
        return DescriptorSet(self.raw[:, columns], self.reduced[:, columns])


def wks_energies(evals: np.ndarray, num_energies: int) -> tuple[np.ndarray, float]:
    """Log-energy grid and Gaussian width.

    The grid spans ``[log l_min + 2 sigma, log l_max - 2 sigma]`` with
    ``sigma = 7 * spacing``, where ``l_min`` is the first nonzero eigenvalue.
    """
    positive = evals[evals > 0]
    if positive.size < 2:
        raise InsufficientBasis("need at least two nonzero eigenvalues for WKS")
    lo, hi = np.log(positive[0]), np.log(positive[-1])
    if hi <= lo:
        raise InsufficientBasis("WKS needs at least two distinct nonzero eigenvalues")
    # spacing d satisfies (hi - lo - 4 sigma) = (N - 1) d with sigma = 7 d
    d = (hi - lo) / (num_energies - 1 + 28)
    sigma = 7.0 * d
    return np.linspace(lo + 2 * sigma, hi - 2 * sigma, num_energies), sigma


def wks(basis: SpectralBasis, num_energies: int = 100, num_eigs_used: int | None = None) -> DescriptorSet:
    """Wave kernel signature.

    Each column is normalized so that its mass-weighted sum equals one.
    The zero eigenpair is excluded.
    """
    if num_eigs_used is None:
        num_eigs_used = basis.k
    if num_eigs_used > basis.k:
        raise InsufficientBasis(f"WKS needs {num_eigs_used} eigenpairs, basis has {basis.k}")
    evals = basis.evals[:num_eigs_used]
    phi = basis.phi[:, :num_eigs_used]
    keep = evals > 0
    evals, phi = evals[keep], phi[:, keep]
    energies, sigma = wks_energies(evals, num_energies)
    coef = np.exp(-((energies[None, :] - np.log(evals)[:, None]) ** 2) / (2 * sigma**2))
    coef /= coef.sum(axis=0, keepdims=True)
    raw = (phi**2) @ coef
    return DescriptorSet.from_raw(basis, raw)


def normalize_descriptors(basis: SpectralBasis, raw) -> np.ndarray:
    """Scale every column to unit mass-weighted L2 norm."""
    raw = np.asarray(raw, dtype=np.float64)
    norms = np.sqrt(basis.mass_diag @ raw**2)
    return raw / np.where(norms > 0, norms, 1.0)
