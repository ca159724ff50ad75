"""Bijective and continuous refinement of a pair of functional maps.

One outer iteration runs, in order: the bijective ICP sweep over the coupled
maps, outlier-region repair, coverage promotion, continuity smoothing and a
re-fit of both functional maps from the repaired point maps.

Point maps are index arrays: ``T12[i]`` is the shape-2 vertex that shape-1
vertex ``i`` goes to. ``C12`` is fitted from ``T21`` and vice versa.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .config import SolverConfig
from .errors import DimensionMismatch
from .evaluation import bijectivity, coverage
from .fmap import commutativity_normal, fmap_to_pointmap, nearest_rows, pointmap_to_fmap
from .mesh import GeodesicCache, TriangleMesh, largest_connected_component
from .operators import orientation_operator
from .spectral import Shape

logger = logging.getLogger(__name__)

RANK_TOL = 1e-12
# outlier repair needs the largest consistent region to be a majority
MIN_INLIERS = 0.5

DIAGNOSTIC_FIELDS = ("iter", "E", "E1", "E2", "E3", "E4", "coverage12", "coverage21", "bijectivity", "outlier_ratio")


@dataclass
class RefinementState:
    C12: np.ndarray
    C21: np.ndarray
    T12: np.ndarray
    T21: np.ndarray
    C11: np.ndarray | None = None
    C22: np.ndarray | None = None
    iteration: int = 0
    diagnostics: list = field(default_factory=list)

    def copy(self) -> RefinementState:
        return copy.deepcopy(self)


# ---------------------------------------------------------------------------
# spectral updates


def polar_factor(A) -> tuple[np.ndarray, bool]:
    """Orthonormal polar factor ``U V^T`` of a square matrix and a rank-deficiency flag."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"projection needs a square matrix, got {A.shape}")
    U, s, Vt = np.linalg.svd(A)
    return U @ Vt, bool(s.size == 0 or s[-1] < RANK_TOL)


def proj_orthonormal(A) -> np.ndarray:
    """Nearest orthonormal matrix in Frobenius norm."""
    Q, deficient = polar_factor(A)
    if deficient:
        logger.debug("projection of a rank-deficient matrix; result is not unique")
    return Q


def _first_preimage_nn(queries, phi, T_other):
    """``argmin_j || queries[i] - phi[T_other[j]] ||`` with ties to the smallest ``j``."""
    values, first = np.unique(T_other, return_index=True)
    return first[nearest_rows(queries, phi[values])]


class OrientationRefit:
    """Orientation term added to the functional-map re-fits.

    The target-side operators are built from the previous iterate, which keeps
    every update a linear least-squares problem:
    ``min ||C - B||^2 + alpha sum_i ||C O(phi_src_i) - O(phi_tgt C_prev_i) C||^2``.
    ``alpha`` is fixed the first time a term is used so that the orientation
    part has the same trace scale as the data term.
    """

    def __init__(self, s1: Shape, s2: Shape, cfg: SolverConfig):
        self.shapes = {1: s1, 2: s2}
        self.sign = cfg.orientation_sign or 1
        self.weight = cfg.refine_orient_weight
        self.cols = list(range(0, min(s1.basis.k, s2.basis.k), max(1, cfg.refine_orient_stride)))
        self._src_ops: dict[int, list] = {}
        self.alpha: dict[str, float] = {}
        self.residuals: dict[str, list] = {}

    def _ops(self, s: int):
        if s not in self._src_ops:
            sh = self.shapes[s]
            self._src_ops[s] = [orientation_operator(sh.mesh, sh.basis, sh.basis.phi[:, c]).matrix for c in self.cols]
        return self._src_ops[s]

    def fit(self, key: str, B, C_prev, src: int, tgt: int):
        sign = 1 if src == tgt else self.sign
        sh = self.shapes[tgt]
        D1 = self._ops(src)
        D2 = [
            orientation_operator(sh.mesh, sh.basis, sh.basis.phi @ C_prev[:, c], sign).matrix
            for c in self.cols
        ]
        kt, ks = B.shape
        Q = commutativity_normal(D1, D2, ks, kt)
        if key not in self.alpha:
            tr = np.trace(Q)
            self.alpha[key] = self.weight * kt * ks / tr if tr > 0 else 0.0
        A = self.alpha[key] * Q
        A[np.diag_indices_from(A)] += 1.0
        C = np.linalg.solve(A, B.ravel(order="F")).reshape(B.shape, order="F")
        self.residuals.setdefault(key, []).append(float(sum(np.sum((C @ a - b @ C) ** 2) for a, b in zip(D1, D2))))
        return C


def bijective_icp_step(state: RefinementState, s1: Shape, s2: Shape, cfg: SolverConfig, orient: OrientationRefit | None = None) -> RefinementState:
    """One sweep of the alternating bijective ICP updates.

    Point maps come from nearest-row search; the self maps ``C11``, ``C22``
    are least-squares fits projected onto orthonormal matrices; ``C12`` and
    ``C21`` are re-fitted and, when ``cfg.coupling`` is on, multiplied by the
    orthonormal projection of their composition.
    """
    b1, b2 = s1.basis, s2.basis
    phi1, phi2 = b1.phi, b2.phi
    st = state.copy()

    T21 = fmap_to_pointmap(phi1, phi2, st.C12)
    T12 = fmap_to_pointmap(phi2, phi1, st.C21)

    C11 = b1.project(phi1[T21[T12]])
    C22 = b2.project(phi2[T12[T21]])
    if orient is not None:
        C11 = orient.fit("C11", C11, st.C11 if st.C11 is not None else C11, 1, 1)
        C22 = orient.fit("C22", C22, st.C22 if st.C22 is not None else C22, 2, 2)
    C11 = proj_orthonormal(C11)
    C22 = proj_orthonormal(C22)

    T12 = _first_preimage_nn(phi1 @ C11, phi1, T21)
    T21 = _first_preimage_nn(phi2 @ C22, phi2, T12)

    C12 = pointmap_to_fmap(b1, b2, T21)
    if orient is not None:
        C12 = orient.fit("C12", C12, st.C12, 1, 2)
    if cfg.coupling:
        P, deficient = polar_factor(st.C21 @ C12)
        if deficient:
            logger.warning("coupling of C12 skipped: composition is rank deficient")
        else:
            C12 = C12 @ P
    C21 = pointmap_to_fmap(b2, b1, T12)
    if orient is not None:
        C21 = orient.fit("C21", C21, st.C21, 2, 1)
    if cfg.coupling:
        P, deficient = polar_factor(C12 @ C21)
        if deficient:
            logger.warning("coupling of C21 skipped: composition is rank deficient")
        else:
            C21 = C21 @ P

    st.C11, st.C22, st.C12, st.C21, st.T12, st.T21 = C11, C22, C12, C21, T12, T21
    return st


def refinement_energy(state: RefinementState, s1: Shape, s2: Shape, lambdas=(1.0, 1.0, 1.0, 1.0)) -> tuple[float, dict]:
    """Weighted sum of the four Frobenius residuals of the coupled maps.

    ``E1 = ||phi2 C12 - phi1[T21]||``, ``E2 = ||phi1 C21 - phi2[T12]||``,
    ``E3 = ||phi1 C11 - phi1[T21[T12]]||``, ``E4 = ||phi2 C22 - phi2[T12[T21]]||``
    (all squared). Missing self maps are taken as the projected least-squares
    fit to the composed point maps.
    """
    phi1, phi2 = s1.basis.phi, s2.basis.phi
    T12, T21 = state.T12, state.T21
    C11 = state.C11 if state.C11 is not None else proj_orthonormal(s1.basis.project(phi1[T21[T12]]))
    C22 = state.C22 if state.C22 is not None else proj_orthonormal(s2.basis.project(phi2[T12[T21]]))
    terms = {
        "E1": float(np.sum((phi2 @ state.C12 - phi1[T21]) ** 2)),
        "E2": float(np.sum((phi1 @ state.C21 - phi2[T12]) ** 2)),
        "E3": float(np.sum((phi1 @ C11 - phi1[T21[T12]]) ** 2)),
        "E4": float(np.sum((phi2 @ C22 - phi2[T12[T21]]) ** 2)),
    }
    total = sum(w * terms[f"E{i + 1}"] for i, w in enumerate(lambdas))
    return float(total), terms


# ---------------------------------------------------------------------------
# spatial repairs


def outlier_mask(T, src: TriangleMesh, tgt: TriangleMesh, eps: float | None = None) -> np.ndarray:
    """Source vertices outside the largest component left after cutting stretched edges.

    An edge is cut when its mapped endpoints are more than ``eps`` apart
    (default: the longest target edge).
    """
    T = np.asarray(T, dtype=np.int64)
    if eps is None:
        eps = tgt.max_edge_length
    if eps <= 0:
        raise ValueError("outlier threshold must be positive")
    e = src.edges
    y = tgt.vertices
    stretched = np.linalg.norm(y[T[e[:, 0]]] - y[T[e[:, 1]]], axis=1) > eps
    keep = largest_connected_component(src.n_vertices, e[~stretched])
    mask = np.ones(src.n_vertices, dtype=bool)
    mask[keep] = False
    return mask


def fix_outliers(T, src: TriangleMesh, tgt: TriangleMesh, eps: float | None = None, min_inliers: float = 0.0) -> np.ndarray:
    """Send every outlier vertex where its nearest (Euclidean) inlier vertex goes.

    When the inlier component holds less than ``min_inliers`` of the source
    vertices the map is returned unchanged: copying a small patch's images
    over the whole shape would collapse it.
    """
    T = np.array(T, dtype=np.int64)
    out = outlier_mask(T, src, tgt, eps)
    if not out.any():
        return T
    if (~out).mean() < min_inliers:
        logger.info("outlier repair skipped: only %.1f%% inliers", 100 * (~out).mean())
        return T
    inliers = np.flatnonzero(~out)
    _, nn = cKDTree(src.vertices[inliers]).query(src.vertices[out])
    T[out] = T[inliers[nn]]
    return T


def improve_coverage(T12, T21, src: TriangleMesh, tgt: TriangleMesh, max_passes: int | None = None) -> np.ndarray:
    """Give uncovered target vertices a preimage taken from a crowded neighbour.

    For an uncovered target vertex ``z``, the neighbour ``y`` with the largest
    preimage (at least two vertices) donates one source vertex ``x``: the
    reverse-map image ``T21[z]`` if it is in the preimage, otherwise the
    preimage member closest to it. Then ``T12[x] = z``. Passes repeat until
    nothing changes or ``max_passes`` is reached.
    """
    T = np.array(T12, dtype=np.int64)
    T21 = np.asarray(T21, dtype=np.int64)
    n2 = tgt.n_vertices
    count = np.bincount(T, minlength=n2)
    pre: dict[int, set] = {}
    for x, y in enumerate(T.tolist()):
        pre.setdefault(y, set()).add(x)
    nbrs = tgt.neighbors
    xs = src.vertices
    passes = 0
    while max_passes is None or passes < max_passes:
        passes += 1
        changed = False
        for z in np.flatnonzero(count == 0).tolist():
            cand = nbrs[z]
            cand = cand[count[cand] >= 2]
            if cand.size == 0:
                continue
            y = int(cand[np.argmax(count[cand])])
            members = sorted(pre[y])
            x0 = int(T21[z])
            if x0 in pre[y]:
                x = x0
            else:
                d = np.linalg.norm(xs[members] - xs[x0], axis=1)
                x = members[int(np.argmin(d))]
            pre[y].discard(x)
            pre.setdefault(z, set()).add(x)
            count[y] -= 1
            count[z] += 1
            T[x] = z
            changed = True
        if not changed:
            break
    return T


def _region_lcc(seeds, nbr_lists) -> list:
    """Largest connected component of ``seeds`` plus their one-rings, in the target edge graph.

    Ties go to the component holding the smallest vertex index.
    """
    region = set(seeds)
    for s in seeds:
        region.update(nbr_lists[s])
    seen: set = set()
    best: list = []
    for start in sorted(region):
        if start in seen:
            continue
        comp = [start]
        seen.add(start)
        stack = [start]
        while stack:
            u = stack.pop()
            for w in nbr_lists[u]:
                if w in region and w not in seen:
                    seen.add(w)
                    comp.append(w)
                    stack.append(w)
        if len(comp) > len(best):
            best = comp
    return best


def candidate_set(i: int, T, src: TriangleMesh, tgt: TriangleMesh) -> np.ndarray:
    """Target vertices that the continuity step may assign to source vertex ``i``."""
    nb = src.neighbors[i]
    if nb.size == 0:
        return np.zeros(0, dtype=np.int64)
    nbr_lists = [a.tolist() for a in tgt.neighbors]
    return np.array(sorted(_region_lcc({int(T[j]) for j in nb}, nbr_lists)), dtype=np.int64)


def smooth_map(T, src: TriangleMesh, tgt: TriangleMesh, max_iter: int = 5, check: bool = False) -> np.ndarray:
    """Smooth the displacement field of a point map.

    Each sweep visits source vertices in ascending order. The average
    displacement of a vertex's neighbours (taken from the previous sweep)
    predicts where it should land; the nearest target vertex within the
    candidate set of :func:`candidate_set` is chosen. The map itself is
    updated in place, so later vertices see earlier choices. Vertices without
    neighbours keep their image.
    """
    T = np.array(T, dtype=np.int64)
    X, Y = src.vertices, tgt.vertices
    src_nbrs = src.neighbors
    nbr_lists = [a.tolist() for a in tgt.neighbors]
    disp = Y[T] - X
    for _ in range(max_iter):
        prev = disp.copy()
        for i in range(src.n_vertices):
            nb = src_nbrs[i]
            if nb.size == 0:
                continue
            cand = _region_lcc({int(T[j]) for j in nb}, nbr_lists)
            if not cand:
                continue
            cand = np.array(sorted(cand))
            p = X[i] + prev[nb].mean(axis=0)
            d = np.sum((Y[cand] - p) ** 2, axis=1)
            j = int(cand[np.argmin(d)])
            if check:
                assert j in cand
            T[i] = j
            disp[i] = Y[j] - X[i]
    return T


# ---------------------------------------------------------------------------
# drivers


def _diagnostics(state, s1, s2, cfg, geod1, geod2, outlier_ratio):
    E, terms = refinement_energy(state, s1, s2, cfg.lambdas)
    row = {"iter": state.iteration, "E": E, **terms}
    row["coverage12"] = coverage(state.T12, s2.mesh)
    row["coverage21"] = coverage(state.T21, s1.mesh)
    row["bijectivity"] = bijectivity(state.T12, state.T21, s1.mesh, s2.mesh, geod1, geod2)
    row["outlier_ratio"] = outlier_ratio
    return row


def _plain_icp_step(state: RefinementState, s1: Shape, s2: Shape, orthonormal: bool = True) -> RefinementState:
    st = state.copy()
    st.T21 = fmap_to_pointmap(s1.basis.phi, s2.basis.phi, st.C12)
    st.T12 = fmap_to_pointmap(s2.basis.phi, s1.basis.phi, st.C21)
    st.C11 = st.C22 = None
    return st


def bcicp_refine(
    state0: RefinementState,
    s1: Shape,
    s2: Shape,
    cfg: SolverConfig | None = None,
    diagnostics: bool = True,
    on_iteration=None,
) -> RefinementState:
    """Run ``cfg.max_iter`` outer refinement iterations.

    Sub-steps can be switched off through ``cfg.use_*`` for ablations. The
    coverage step runs on a map whose coverage is below ``cfg.coverage_gate``;
    the continuity step is skipped for maps below ``cfg.continuity_gate``.
    ``on_iteration(state)`` is called after each iteration.
    """
    cfg = cfg or SolverConfig()
    state = state0.copy()
    m1, m2 = s1.mesh, s2.mesh
    eps12 = cfg.outlier_eps or m2.max_edge_length
    eps21 = cfg.outlier_eps or m1.max_edge_length
    geod1, geod2 = (GeodesicCache(m1), GeodesicCache(m2)) if diagnostics else (None, None)
    orient = OrientationRefit(s1, s2, cfg) if cfg.refine_orientation and cfg.orientation_sign is not None else None

    for _ in range(cfg.max_iter):
        if cfg.use_bijective:
            state = bijective_icp_step(state, s1, s2, cfg, orient)
        else:
            state = _plain_icp_step(state, s1, s2)
        T12, T21 = state.T12, state.T21

        out12 = outlier_mask(T12, m1, m2, eps12)
        out21 = outlier_mask(T21, m2, m1, eps21)
        outlier_ratio = float((out12.sum() + out21.sum()) / (m1.n_vertices + m2.n_vertices))
        if cfg.use_outliers:
            T12 = fix_outliers(T12, m1, m2, eps12, MIN_INLIERS)
            T21 = fix_outliers(T21, m2, m1, eps21, MIN_INLIERS)
        if cfg.use_coverage:
            if coverage(T12, m2) < cfg.coverage_gate:
                T12 = improve_coverage(T12, T21, m1, m2)
            if coverage(T21, m1) < cfg.coverage_gate:
                T21 = improve_coverage(T21, T12, m2, m1)
        if cfg.use_continuity:
            if coverage(T12, m2) >= cfg.continuity_gate:
                T12 = smooth_map(T12, m1, m2, cfg.smooth_iters)
            if coverage(T21, m1) >= cfg.continuity_gate:
                T21 = smooth_map(T21, m2, m1, cfg.smooth_iters)

        state.T12, state.T21 = T12, T21
        state.C12 = pointmap_to_fmap(s1.basis, s2.basis, T21)
        state.C21 = pointmap_to_fmap(s2.basis, s1.basis, T12)
        state.iteration += 1
        if diagnostics:
            row = _diagnostics(state, s1, s2, cfg, geod1, geod2, outlier_ratio)
            state.diagnostics.append(row)
            logger.info("iter %d: E=%.4g cov12=%.3f cov21=%.3f bij=%.4g outliers=%.3f", row["iter"], row["E"], row["coverage12"], row["coverage21"], row["bijectivity"], outlier_ratio)
        if on_iteration is not None:
            on_iteration(state)
    if orient is not None:
        state.orientation_residuals = orient.residuals
    return state


def icp_refine(state0: RefinementState, s1: Shape, s2: Shape, max_iter: int = 5, diagnostics: bool = True) -> RefinementState:
    """Baseline ICP: alternate nearest-row point maps and orthonormal functional maps, each direction separately."""
    state = state0.copy()
    geod1, geod2 = (GeodesicCache(s1.mesh), GeodesicCache(s2.mesh)) if diagnostics else (None, None)
    cfg = SolverConfig()
    for _ in range(max_iter):
        state = _plain_icp_step(state, s1, s2)
        state.C12 = proj_orthonormal(pointmap_to_fmap(s1.basis, s2.basis, state.T21)) if s1.basis.k == s2.basis.k else pointmap_to_fmap(s1.basis, s2.basis, state.T21)
        state.C21 = proj_orthonormal(pointmap_to_fmap(s2.basis, s1.basis, state.T12)) if s1.basis.k == s2.basis.k else pointmap_to_fmap(s2.basis, s1.basis, state.T12)
        state.iteration += 1
        if diagnostics:
            out = outlier_mask(state.T12, s1.mesh, s2.mesh).sum() + outlier_mask(state.T21, s2.mesh, s1.mesh).sum()
            state.diagnostics.append(_diagnostics(state, s1, s2, cfg, geod1, geod2, float(out / (s1.mesh.n_vertices + s2.mesh.n_vertices))))
    return state
