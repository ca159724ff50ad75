"""Functional map estimation and conversion to and from point-to-point maps.

Conventions: a functional map ``C12`` (``k2 x k1``) transports reduced
coefficients from shape 1 to shape 2 and is paired with the point map
``T21`` (shape 2 vertices to shape 1 vertices): ``phi2 @ C12 ~ phi1[T21]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from .errors import DimensionMismatch, SingularSystem
from .mesh import TriangleMesh
from .spectral import SpectralBasis

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 2000


# ---------------------------------------------------------------------------
# quadratic energy assembly


def commutativity_normal(D1s, D2s, k1: int, k2: int) -> np.ndarray:
    """Normal matrix of ``sum_i ||X D1_i - D2_i X||^2`` in column-major ``vec(X)``.

    ``X D1 - D2 X`` vectorizes to ``(D1^T kron I - I kron D2) vec(X)``.
    """
    n = k1 * k2
    Q = np.zeros((n, n))
    if not D1s:
        return Q
    s1 = sum(D1 @ D1.T for D1 in D1s)
    s2 = sum(D2.T @ D2 for D2 in D2s)
    cross = sum(np.kron(D1, D2) for D1, D2 in zip(D1s, D2s))
    Q += np.kron(s1, np.eye(k2))
    Q += np.kron(np.eye(k1), s2)
    Q -= cross + cross.T
    return Q


def commutativity_energy(X, D1s, D2s) -> float:
    return float(sum(np.sum((X @ D1 - D2 @ X) ** 2) for D1, D2 in zip(D1s, D2s)))


@dataclass
class FmapSolution:
    C: np.ndarray
    energies: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return sum(self.weights[k] * self.energies[k] for k in self.weights)


def _as_mats(ops):
    return [np.asarray(getattr(o, "matrix", o), dtype=np.float64) for o in ops]


def solve_initial_map(
    A1,
    A2,
    evals1,
    evals2,
    mult1=(),
    mult2=(),
    orient1=(),
    orient2=(),
    alpha_desc: float = 1.0,
    alpha_mult: float = 1.0,
    alpha_lap: float = 1e-2,
    alpha_orient: float | None = None,
    auto_scale: bool = True,
) -> FmapSolution:
    """Minimize the four-term quadratic energy over ``X`` (``k2 x k1``).

    Terms: descriptor fit ``||X A1 - A2||^2``, multiplicative commutativity,
    Laplacian commutativity ``||diag(evals2) X - X diag(evals1)||^2`` and
    orientation commutativity.

    With ``auto_scale`` the Laplacian weight is ``alpha_lap`` times the ratio
    of descriptor to Laplacian term scales, and a ``None`` orientation weight
    is set so that the orientation term matches the multiplicative one. Term
    scale is the trace of its normal matrix. Without ``auto_scale`` all
    weights are used as given (``None`` means 0).
    """
    A1 = np.asarray(A1, dtype=np.float64)
    A2 = np.asarray(A2, dtype=np.float64)
    evals1 = np.asarray(evals1, dtype=np.float64)
    evals2 = np.asarray(evals2, dtype=np.float64)
    k1, k2 = A1.shape[0], A2.shape[0]
    if A1.shape[1] != A2.shape[1] or evals1.size != k1 or evals2.size != k2:
        raise DimensionMismatch("descriptor/eigenvalue dimensions are inconsistent")
    M1, M2, O1, O2 = _as_mats(mult1), _as_mats(mult2), _as_mats(orient1), _as_mats(orient2)
    if len(M1) != len(M2) or len(O1) != len(O2):
        raise DimensionMismatch("operator lists differ in length between the shapes")
    if min(alpha_desc, alpha_mult, alpha_lap, alpha_orient or 0.0) < 0:
        raise ValueError("energy weights must be nonnegative")
    n = k1 * k2

    Q_desc = np.kron(A1 @ A1.T, np.eye(k2))
    rhs = (A2 @ A1.T).ravel(order="F")
    lap = ((evals2[:, None] - evals1[None, :]) ** 2).ravel(order="F")
    Q_mult = commutativity_normal(M1, M2, k1, k2)
    Q_orient = commutativity_normal(O1, O2, k1, k2)

    scale = {"desc": np.trace(Q_desc), "mult": np.trace(Q_mult), "lap": lap.sum(), "orient": np.trace(Q_orient)}
    w = {"desc": alpha_desc, "mult": alpha_mult, "lap": alpha_lap, "orient": alpha_orient or 0.0}
    if auto_scale:
        w["lap"] = alpha_lap * alpha_desc * scale["desc"] / scale["lap"] if scale["lap"] > 0 else 0.0
        if alpha_orient is None and scale["orient"] > 0:
            ref = alpha_mult * scale["mult"] if scale["mult"] > 0 else alpha_desc * scale["desc"]
            w["orient"] = ref / scale["orient"]
    if not O1:
        w["orient"] = 0.0

    Q = w["desc"] * Q_desc + w["mult"] * Q_mult + w["orient"] * Q_orient
    Q[np.diag_indices(n)] += w["lap"] * lap
    b = w["desc"] * rhs
    x = _solve_psd(Q, b)
    X = x.reshape((k2, k1), order="F")
    energies = {
        "desc": float(np.sum((X @ A1 - A2) ** 2)),
        "mult": commutativity_energy(X, M1, M2),
        "lap": float(np.sum((evals2[:, None] * X - X * evals1[None, :]) ** 2)),
        "orient": commutativity_energy(X, O1, O2),
    }
    return FmapSolution(X, energies, {k: float(v) for k, v in w.items()})


def _solve_psd(Q, b):
    if not (np.isfinite(Q).all() and np.isfinite(b).all()):
        raise SingularSystem("normal equations contain non-finite entries")
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(Q), b)
    except np.linalg.LinAlgError:
        pass
    reg = 1e-9 * max(1.0, np.trace(Q) / Q.shape[0])
    logger.warning("normal system not positive definite, retrying with %.3g * I", reg)
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(Q + reg * np.eye(Q.shape[0])), b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("normal equations are singular even after regularization") from exc


def energy_terms(X, A1, A2, evals1, evals2, mult1=(), mult2=(), orient1=(), orient2=()) -> dict:
    X = np.asarray(X)
    return {
        "desc": float(np.sum((X @ A1 - A2) ** 2)),
        "mult": commutativity_energy(X, _as_mats(mult1), _as_mats(mult2)),
        "lap": float(np.sum((np.asarray(evals2)[:, None] * X - X * np.asarray(evals1)[None, :]) ** 2)),
        "orient": commutativity_energy(X, _as_mats(orient1), _as_mats(orient2)),
    }


# ---------------------------------------------------------------------------
# point maps


def nearest_rows(queries, points) -> np.ndarray:
    """Index of the nearest row of ``points`` for every row of ``queries``.

    Exact search; ties go to the smallest index below ``BRUTE_FORCE_LIMIT``
    points, above it a KD-tree is used.
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    points = np.ascontiguousarray(points, dtype=np.float64)
    if queries.shape[1] != points.shape[1]:
        raise DimensionMismatch(f"row dimension {queries.shape[1]} != {points.shape[1]}")
    if points.shape[0] > BRUTE_FORCE_LIMIT:
        return cKDTree(points).query(queries)[1].astype(np.int64)
    out = np.empty(queries.shape[0], dtype=np.int64)
    psq = np.einsum("ij,ij->i", points, points)
    chunk = max(1, (1 << 22) // max(1, points.shape[0]))
    for s in range(0, queries.shape[0], chunk):
        q = queries[s : s + chunk]
        qsq = np.einsum("ij,ij->i", q, q)
        d2 = qsq[:, None] + psq[None, :] - 2.0 * (q @ points.T)
        best = d2.min(axis=1)
        # expansion round-off can reorder near ties; re-rank those exactly
        tol = 1e-10 * (qsq + psq.max()) + 1e-300
        near = d2 <= (best + tol)[:, None]
        idx = np.argmax(near, axis=1)
        multi = np.flatnonzero(near.sum(axis=1) > 1)
        for r in multi:
            cand = np.flatnonzero(near[r])
            exact = np.sum((points[cand] - q[r]) ** 2, axis=1)
            idx[r] = cand[np.argmin(exact)]
        out[s : s + chunk] = idx
    return out


def fmap_to_pointmap(phi_src, phi_tgt, C) -> np.ndarray:
    """Point map from target to source induced by ``C`` (source to target functions).

    ``T[i] = argmin_j || (phi_tgt C)[i] - phi_src[j] ||``.
    """
    phi_src = np.asarray(phi_src)
    phi_tgt = np.asarray(phi_tgt)
    C = np.asarray(C)
    if C.shape != (phi_tgt.shape[1], phi_src.shape[1]):
        raise DimensionMismatch(f"C has shape {C.shape}, expected {(phi_tgt.shape[1], phi_src.shape[1])}")
    return nearest_rows(phi_tgt @ C, phi_src)


def pointmap_to_fmap(basis_src: SpectralBasis, basis_tgt: SpectralBasis, T) -> np.ndarray:
    """Least-squares functional map ``C = phi_tgt^T M_tgt phi_src[T]`` for a target-to-source map ``T``."""
    T = np.asarray(T, dtype=np.int64)
    if T.shape != (basis_tgt.n,):
        raise DimensionMismatch(f"point map has shape {T.shape}, expected ({basis_tgt.n},)")
    if T.size and (T.min() < 0 or T.max() >= basis_src.n):
        raise DimensionMismatch("point map index out of range")
    return basis_tgt.project(basis_src.phi[T])


def orientation_score(T, src: TriangleMesh, tgt: TriangleMesh) -> float:
    """Mean sign of mapped-triangle orientation, in ``[-1, 1]``.

    Each source face is carried to the triangle spanned by the images of its
    corners; its normal is compared with the target vertex normals there.
    Faces whose corners collapse are skipped. Positive means orientation
    preserving, negative means reversing.
    """
    T = np.asarray(T, dtype=np.int64)
    img = T[src.faces]
    ok = (img[:, 0] != img[:, 1]) & (img[:, 1] != img[:, 2]) & (img[:, 0] != img[:, 2])
    if not ok.any():
        return 0.0
    img = img[ok]
    y = tgt.vertices[img]
    m = np.cross(y[:, 1] - y[:, 0], y[:, 2] - y[:, 0])
    ref = tgt.vertex_normals[img].sum(axis=1)
    return float(np.mean(np.sign(np.einsum("ij,ij->i", m, ref))))
