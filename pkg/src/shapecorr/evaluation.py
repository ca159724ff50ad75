"""Map quality measurements: geodesic accuracy, continuity, coverage, bijectivity.

All geodesic errors are Dijkstra distances divided by ``sqrt(total area)``
of the shape they are measured on.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .mesh import GeodesicCache, TriangleMesh


@dataclass
class GroundTruth:
    direct: np.ndarray
    symmetric: np.ndarray | None = None

    def __post_init__(self):
        self.direct = np.asarray(self.direct, dtype=np.int64)
        if self.symmetric is not None:
            self.symmetric = np.asarray(self.symmetric, dtype=np.int64)
            if self.symmetric.shape != self.direct.shape:
                raise DimensionMismatch("direct and symmetric ground truth differ in length")


@dataclass
class Accuracy:
    per_vertex: np.ndarray
    per_map: float
    direct: float
    symmetric_missing: bool


def _check_map(T, n_src, n_tgt, name="map"):
    T = np.asarray(T, dtype=np.int64)
    if T.shape != (n_src,):
        raise DimensionMismatch(f"{name} has shape {T.shape}, expected ({n_src},)")
    if T.size and (T.min() < 0 or T.max() >= n_tgt):
        raise DimensionMismatch(f"{name} index out of range [0, {n_tgt})")
    return T


def accuracy(T, gt: GroundTruth, tgt: TriangleMesh, geod: GeodesicCache | None = None) -> Accuracy:
    """Per-vertex, per-map and direct geodesic errors of a source-to-target map."""
    T = _check_map(T, gt.direct.size, tgt.n_vertices)
    geod = geod or GeodesicCache(tgt)
    d_direct = geod.pairs(T, gt.direct)
    if gt.symmetric is None:
        return Accuracy(d_direct, float(d_direct.mean()), float(d_direct.mean()), True)
    d_sym = geod.pairs(T, gt.symmetric)
    return Accuracy(
        np.minimum(d_direct, d_sym),
        float(min(d_direct.mean(), d_sym.mean())),
        float(d_direct.mean()),
        False,
    )


def coverage(T, tgt: TriangleMesh) -> float:
    """Area fraction of target vertices hit by at least one source vertex."""
    hit = np.zeros(tgt.n_vertices, dtype=bool)
    hit[np.asarray(T, dtype=np.int64)] = True
    return float(tgt.vertex_areas[hit].sum() / tgt.total_area)


def edge_distortion(T, src: TriangleMesh, tgt: TriangleMesh, geod: GeodesicCache | None = None) -> np.ndarray:
    """Per source edge: target geodesic distance of the mapped endpoints over the edge length."""
    T = _check_map(T, src.n_vertices, tgt.n_vertices)
    geod = geod or GeodesicCache(tgt, normalize=False)
    if geod.normalize:
        raise ValueError("edge distortion needs an unnormalized geodesic cache")
    e = src.edges
    return geod.pairs(T[e[:, 0]], T[e[:, 1]]) / src.edge_lengths


def continuity_and_coverage(T, src: TriangleMesh, tgt: TriangleMesh, geod: GeodesicCache | None = None):
    """``(distortion ratios per source edge, coverage fraction)``."""
    return edge_distortion(T, src, tgt, geod), coverage(T, tgt)


def bijectivity(T12, T21, mesh1: TriangleMesh, mesh2: TriangleMesh, geod1=None, geod2=None) -> float:
    """Mean normalized geodesic distance of ``T21(T12(.))`` and ``T12(T21(.))`` to the identity.

    The two compositions are averaged separately, then the two means averaged.
    """
    T12 = _check_map(T12, mesh1.n_vertices, mesh2.n_vertices, "T12")
    T21 = _check_map(T21, mesh2.n_vertices, mesh1.n_vertices, "T21")
    geod1 = geod1 or GeodesicCache(mesh1)
    geod2 = geod2 or GeodesicCache(mesh2)
    e1 = geod1.pairs(T21[T12], np.arange(mesh1.n_vertices)).mean()
    e2 = geod2.pairs(T12[T21], np.arange(mesh2.n_vertices)).mean()
    return float(0.5 * (e1 + e2))


def cumulative_curve(errors, num: int = 100, max_threshold: float = 0.25):
    """``(thresholds, fraction of errors <= threshold)`` on a uniform grid over ``[0, max_threshold]``."""
    errors = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if errors.size == 0:
        raise ValueError("cumulative curve of an empty error array")
    thresholds = np.linspace(0.0, max_threshold, num)
    frac = np.searchsorted(errors, thresholds, side="right") / errors.size
    return thresholds, frac


def write_curve_csv(path, thresholds, fractions) -> None:
    rows = ["threshold,fraction"] + [f"{t:.6g},{f:.6g}" for t, f in zip(thresholds, fractions)]
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


@dataclass
class MapReport:
    coverage: float
    continuity_mean: float
    continuity_median: float
    continuity_p90: float
    per_vertex_errors: list | None = None
    per_vertex_error: float | None = None
    per_map_error: float | None = None
    direct_error: float | None = None
    symmetric_missing: bool | None = None
    bijectivity: float | None = None
    orientation_score: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self, include_per_vertex: bool = False) -> dict:
        d = asdict(self)
        if not include_per_vertex:
            d.pop("per_vertex_errors")
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(**kwargs), indent=2, sort_keys=True)


def evaluate_map(
    T12,
    mesh1: TriangleMesh,
    mesh2: TriangleMesh,
    gt: GroundTruth | None = None,
    T21=None,
    geod1: GeodesicCache | None = None,
    geod2: GeodesicCache | None = None,
) -> MapReport:
    """Full report for a source-to-target map, with accuracy when ground truth is given."""
    from .fmap import orientation_score

    geod2 = geod2 or GeodesicCache(mesh2)
    raw2 = GeodesicCache(mesh2, normalize=False)
    ratios, cov = continuity_and_coverage(T12, mesh1, mesh2, raw2)
    report = MapReport(
        coverage=cov,
        continuity_mean=float(ratios.mean()),
        continuity_median=float(np.median(ratios)),
        continuity_p90=float(np.quantile(ratios, 0.9)),
        orientation_score=orientation_score(T12, mesh1, mesh2),
    )
    if gt is not None:
        acc = accuracy(T12, gt, mesh2, geod2)
        report.per_vertex_errors = acc.per_vertex.tolist()
        report.per_vertex_error = float(acc.per_vertex.mean())
        report.per_map_error = acc.per_map
        report.direct_error = acc.direct
        report.symmetric_missing = acc.symmetric_missing
    if T21 is not None:
        report.bijectivity = bijectivity(T12, T21, mesh1, mesh2, geod1, geod2)
    return report
