import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapecorr.errors import DimensionMismatch
from shapecorr.evaluation import (
    GroundTruth,
    accuracy,
    bijectivity,
    continuity_and_coverage,
    coverage,
    cumulative_curve,
    edge_distortion,
    evaluate_map,
    write_curve_csv,
)
from shapecorr.mesh import GeodesicCache
from shapecorr.shapes import bumpy_strip, icosphere, reflection_permutation


@pytest.fixture(scope="module")
def strip():
    m = bumpy_strip(12, 6)
    return m, reflection_permutation(m, 0, 1.5)


def test_exact_map_has_zero_error(strip):
    m, refl = strip
    gt = GroundTruth(np.arange(m.n_vertices), refl)
    acc = accuracy(np.arange(m.n_vertices), gt, m)
    assert acc.per_map == 0.0 and acc.direct == 0.0 and not acc.symmetric_missing
    assert np.all(acc.per_vertex == 0)


def test_symmetric_map_scores_zero_except_direct(strip):
    m, refl = strip
    gt = GroundTruth(np.arange(m.n_vertices), refl)
    acc = accuracy(refl, gt, m)
    assert acc.per_map == 0.0 and np.all(acc.per_vertex == 0)
    assert acc.direct > 0


def test_missing_symmetric_is_flagged(strip):
    m, refl = strip
    acc = accuracy(refl, GroundTruth(np.arange(m.n_vertices)), m)
    assert acc.symmetric_missing
    np.testing.assert_allclose(acc.per_vertex.mean(), acc.direct)


def test_accuracy_uses_normalized_distances(strip):
    m, refl = strip
    T = np.zeros(m.n_vertices, dtype=int)
    acc = accuracy(T, GroundTruth(np.arange(m.n_vertices)), m)
    raw = GeodesicCache(m, normalize=False).row(0)
    assert acc.direct == pytest.approx(raw.mean() / np.sqrt(m.total_area))


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1))
def test_per_vertex_never_exceeds_direct(seed):
    m = bumpy_strip(8, 4)
    refl = reflection_permutation(m, 0, 1.5)
    T = np.random.default_rng(seed).integers(0, m.n_vertices, m.n_vertices)
    geod = GeodesicCache(m)
    acc = accuracy(T, GroundTruth(np.arange(m.n_vertices), refl), m, geod)
    direct_pv = geod.pairs(T, np.arange(m.n_vertices))
    assert np.all(acc.per_vertex <= direct_pv + 1e-15)
    assert acc.per_map <= acc.direct + 1e-15


def test_shape_checks(strip):
    m, _ = strip
    with pytest.raises(DimensionMismatch):
        accuracy(np.zeros(3, dtype=int), GroundTruth(np.arange(m.n_vertices)), m)
    with pytest.raises(DimensionMismatch):
        GroundTruth(np.arange(4), np.arange(5))
    with pytest.raises(DimensionMismatch):
        bijectivity(np.full(m.n_vertices, m.n_vertices), np.arange(m.n_vertices), m, m)


def test_identity_continuity_and_coverage(grid5):
    ratios, cov = continuity_and_coverage(np.arange(grid5.n_vertices), grid5, grid5)
    np.testing.assert_allclose(ratios, 1.0)
    assert cov == pytest.approx(1.0)
    assert ratios.size == len(grid5.edges)


def test_constant_map_degenerate_values(grid5):
    ratios, cov = continuity_and_coverage(np.zeros(grid5.n_vertices, dtype=int), grid5, grid5)
    np.testing.assert_array_equal(ratios, 0.0)
    assert cov == pytest.approx(grid5.vertex_areas[0] / grid5.total_area)


def test_edge_distortion_needs_raw_lengths(grid5):
    with pytest.raises(ValueError):
        edge_distortion(np.arange(grid5.n_vertices), grid5, grid5, GeodesicCache(grid5))


def test_bijectivity_of_inverse_permutations():
    m = icosphere(2)
    perm = np.random.default_rng(2).permutation(m.n_vertices)
    assert bijectivity(perm, np.argsort(perm), m, m) == 0.0


def test_bijectivity_of_constant_maps():
    m = icosphere(2)
    z = np.zeros(m.n_vertices, dtype=int)
    expected = GeodesicCache(m).row(0).mean()
    assert bijectivity(z, z, m, m) == pytest.approx(expected)


def test_curve_of_zero_errors():
    t, f = cumulative_curve(np.zeros(10))
    assert t.size == 100 and t[0] == 0.0 and t[-1] == 0.25
    np.testing.assert_array_equal(f, 1.0)


def test_curve_of_single_error():
    t, f = cumulative_curve([0.1])
    np.testing.assert_array_equal(f, (t >= 0.1).astype(float))


def test_curve_of_uniform_errors():
    e = np.random.default_rng(0).uniform(0, 0.25, 10_000)
    t, f = cumulative_curve(e)
    assert np.max(np.abs(f - t / 0.25)) < 0.05


def test_curve_rejects_empty():
    with pytest.raises(ValueError):
        cumulative_curve([])


@settings(max_examples=50)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=50))
def test_curve_is_monotone(errors):
    t, f = cumulative_curve(errors)
    assert np.all(np.diff(f) >= 0)
    assert 0 <= f[0] and f[-1] <= 1
    if max(errors) <= 0.25:
        assert f[-1] == 1.0


def test_curve_csv(tmp_path):
    write_curve_csv(tmp_path / "c.csv", *cumulative_curve([0.0, 0.1]))
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "threshold,fraction" and len(lines) == 101
    assert lines[1] == "0,0.5" and lines[-1] == "0.25,1"


def test_report(strip):
    m, refl = strip
    n = m.n_vertices
    rep = evaluate_map(np.arange(n), m, m, GroundTruth(np.arange(n), refl), np.arange(n))
    assert rep.coverage == pytest.approx(1.0) and rep.bijectivity == 0.0 and rep.direct_error == 0.0
    assert rep.orientation_score == 1.0
    d = json.loads(rep.to_json())
    assert "per_vertex_errors" not in d and d["continuity_median"] == pytest.approx(1.0)
    assert len(rep.to_dict(include_per_vertex=True)["per_vertex_errors"]) == n
    bare = evaluate_map(np.arange(n), m, m)
    assert bare.direct_error is None and bare.bijectivity is None
