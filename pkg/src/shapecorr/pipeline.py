"""End-to-end matching: descriptors, initial functional maps, refinement."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .bcicp import RefinementState, bcicp_refine
from .config import SolverConfig
from .fmap import FmapSolution, fmap_to_pointmap, solve_initial_map
from .operators import descriptor_operators
from .spectral import Shape, normalize_descriptors, wks

logger = logging.getLogger(__name__)


def shape_descriptors(shape: Shape, cfg: SolverConfig, raw=None) -> np.ndarray:
    """Per-vertex descriptors scaled to unit mass-weighted norm (WKS unless ``raw`` is given)."""
    if raw is None:
        raw = wks(shape.basis, cfg.wks_energies, min(cfg.wks_eigs, shape.basis.k)).raw
    return normalize_descriptors(shape.basis, raw)


@dataclass
class InitialMaps:
    C12: FmapSolution
    C21: FmapSolution


def _solve_direction(sa: Shape, sb: Shape, da, db, cfg: SolverConfig, sign_b: int | None) -> FmapSolution:
    cols = list(range(0, da.shape[1], max(1, cfg.operator_stride)))
    mult_a, orient_a = descriptor_operators(sa.mesh, sa.basis, da, cols, None if sign_b is None else 1)
    mult_b, orient_b = descriptor_operators(sb.mesh, sb.basis, db, cols, sign_b)
    return solve_initial_map(
        sa.basis.project(da),
        sb.basis.project(db),
        sa.basis.evals,
        sb.basis.evals,
        mult_a,
        mult_b,
        orient_a,
        orient_b,
        alpha_desc=cfg.alpha_desc,
        alpha_mult=cfg.alpha_mult,
        alpha_lap=cfg.alpha_lap,
        alpha_orient=cfg.alpha_orient,
    )


def initial_maps(s1: Shape, s2: Shape, cfg: SolverConfig, raw1=None, raw2=None) -> InitialMaps:
    """Functional maps in both directions from descriptors and operator terms.

    In reverse mode the target-side orientation operators are negated, which
    turns the commutativity residual ``X O1 - O2 X`` into ``X O1 + O2 X``.
    """
    d1 = shape_descriptors(s1, cfg, raw1)
    d2 = shape_descriptors(s2, cfg, raw2)
    if d1.shape[1] != d2.shape[1]:
        raise ValueError("descriptor counts differ between shapes")
    sign = cfg.orientation_sign
    return InitialMaps(_solve_direction(s1, s2, d1, d2, cfg, sign), _solve_direction(s2, s1, d2, d1, cfg, sign))


def initial_state(s1: Shape, s2: Shape, C12, C21) -> RefinementState:
    T21 = fmap_to_pointmap(s1.basis.phi, s2.basis.phi, C12)
    T12 = fmap_to_pointmap(s2.basis.phi, s1.basis.phi, C21)
    return RefinementState(C12=np.asarray(C12), C21=np.asarray(C21), T12=T12, T21=T21)


def match(s1: Shape, s2: Shape, cfg: SolverConfig, raw1=None, raw2=None, refine: bool = True):
    """Initial maps plus refinement. Returns ``(initial_state, final_state)``."""
    init = initial_maps(s1, s2, cfg, raw1, raw2)
    state0 = initial_state(s1, s2, init.C12.C, init.C21.C)
    if not refine or cfg.max_iter == 0:
        return state0, state0
    return state0, bcicp_refine(state0, s1, s2, cfg)
