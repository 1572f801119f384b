from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geowitness.charts import estimate_tangent
from geowitness.errors import DegenerateError, DimensionMismatchError, ValidationError
from geowitness.occupancy import (
    OccupancySample,
    energy_distance_norm,
    energy_distance_terms,
    gaussian_w2_sq,
    mean_shift_norm,
    occ_w2_sq_norm,
    project_into_chart,
    witness_nu,
)


def brute_energy(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    d = lambda a, b: np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    n, m = len(x), len(y)
    xx = d(x, x).sum() / (n * (n - 1))
    yy = d(y, y).sum() / (m * (m - 1))
    return 2 * d(x, y).mean() - xx - yy, xx


def test_projection_examples(rng):
    chart = estimate_tangent(rng.standard_normal((40, 4)) * [4, 3, 0.1, 0.1])
    assert np.allclose(project_into_chart(chart.centroid, chart).coords, 0)
    e1 = project_into_chart(chart.centroid + chart.basis[:, 0], chart).coords
    assert np.allclose(e1, np.eye(chart.rank)[0])
    pts = rng.standard_normal((30, 4)) * 3
    coords = project_into_chart(pts, chart).coords
    assert np.all(np.linalg.norm(coords, axis=1) <= np.linalg.norm(pts - chart.centroid, axis=1) + 1e-12)
    with pytest.raises(DimensionMismatchError):
        project_into_chart(np.zeros((1, 3)), chart)


def test_w2_identical_samples_zero(rng):
    x = OccupancySample(rng.standard_normal((50, 3)), 3.0)
    assert occ_w2_sq_norm(x, x) == pytest.approx(0.0, abs=1e-12)


def test_w2_one_dimensional_closed_form():
    assert gaussian_w2_sq([0.0], [[1.0]], [0.0], [[4.0]]) == pytest.approx(1.0, abs=1e-12)


def test_w2_unit_shift_large_sample():
    rng = np.random.default_rng(7)
    x = OccupancySample(rng.standard_normal((20000, 2)), 2.0)
    y = OccupancySample(rng.standard_normal((20000, 2)) + [1, 0], 2.0)
    assert occ_w2_sq_norm(x, y) == pytest.approx(0.5, rel=0.05)


def test_energy_examples():
    raw, ref = energy_distance_terms(OccupancySample([[0.0], [2.0]], 1.0), OccupancySample([[1.0], [3.0]], 1.0))
    assert raw == pytest.approx(-1.0) and ref == pytest.approx(2.0)
    x, y = OccupancySample([[0.0], [2.0]], 1.0), OccupancySample([[1.0], [3.0]], 1.0)
    assert energy_distance_norm(x, y) == 0.0
    assert witness_nu(x, y).energy_distance_raw == pytest.approx(-1.0)
    far = energy_distance_norm(OccupancySample([[0.0], [1.0]], 1.0), OccupancySample([[10.0], [11.0]], 1.0))
    assert far == pytest.approx(18.0)


def test_energy_matches_brute_force(rng):
    x, y = rng.standard_normal((37, 3)), rng.standard_normal((23, 3)) + 0.5
    raw, ref = energy_distance_terms(OccupancySample(x, 1.0), OccupancySample(y, 1.0))
    b_raw, b_ref = brute_energy(x, y)
    assert raw == pytest.approx(b_raw, abs=1e-12) and ref == pytest.approx(b_ref, abs=1e-12)


def test_energy_blocked_path(rng):
    x, y = rng.standard_normal((1500, 2)), rng.standard_normal((300, 2))
    raw, ref = energy_distance_terms(OccupancySample(x, 1.0), OccupancySample(y, 1.0))
    b_raw, b_ref = brute_energy(x, y)
    assert raw == pytest.approx(b_raw, rel=1e-10) and ref == pytest.approx(b_ref, rel=1e-10)


def test_energy_degenerate_reference():
    with pytest.raises(DegenerateError):
        energy_distance_norm(OccupancySample([[1.0], [1.0]], 1.0), OccupancySample([[0.0], [2.0]], 1.0))


def test_mean_shift_examples(rng):
    x = OccupancySample(rng.standard_normal((10, 2)), 4.0)
    assert mean_shift_norm(x, x) == 0.0
    t = np.array([1.2, -0.5])
    assert mean_shift_norm(x, OccupancySample(x.coords + t, 4.0)) == pytest.approx(np.linalg.norm(t) / 2)
    a = OccupancySample([[1.0, 1.0], [-1.0, -1.0]], 25.0)
    b = OccupancySample([[3.0, 4.0], [3.0, 4.0]], 25.0)
    assert mean_shift_norm(a, b) == pytest.approx(1.0)


def test_rank_mismatch_and_bad_scale():
    with pytest.raises(DimensionMismatchError):
        occ_w2_sq_norm(OccupancySample(np.zeros((3, 2)), 1.0), OccupancySample(np.zeros((3, 1)), 1.0))
    with pytest.raises(ValidationError):
        OccupancySample(np.zeros((3, 2)), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_metrics_rotation_invariant(seed, k):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((25, k)) * rng.uniform(0.5, 2, k)
    y = rng.standard_normal((18, k)) + rng.standard_normal(k)
    r, _ = np.linalg.qr(rng.standard_normal((k, k)))
    a = witness_nu(OccupancySample(x, 2.0), OccupancySample(y, 2.0))
    b = witness_nu(OccupancySample(x @ r, 2.0), OccupancySample(y @ r, 2.0))
    for f in ("occ_w2_sq_norm", "energy_distance_norm", "mean_shift_norm", "energy_distance_raw"):
        assert getattr(b, f) == pytest.approx(getattr(a, f), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metrics_nonnegative(seed):
    rng = np.random.default_rng(seed)
    nu = witness_nu(OccupancySample(rng.standard_normal((12, 2)), 1.5), OccupancySample(rng.standard_normal((9, 2)), 1.5))
    assert nu.occ_w2_sq_norm >= 0 and nu.energy_distance_norm >= 0 and nu.mean_shift_norm >= 0
