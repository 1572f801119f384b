from __future__ import annotations

import numpy as np
import pytest

from geowitness.bridge import reentry_summary
from geowitness.charts import estimate_tangent, principal_angles
from geowitness.errors import ValidationError
from geowitness.synth import (
    ScenarioSpec,
    chart_translation,
    expected_gaussian_norm,
    expected_outcome,
    generate,
    mcq_displacement_scenario,
    sample_source,
    verdict_grid,
)
from geowitness.witness import EXACT_IDENTITY, NO_SUPPORT, REDISTRIBUTION, measure_witness

BASE = ScenarioSpec()


@pytest.mark.parametrize("mean,cov", [
    ([0.0], [[1.0]]),
    ([1.0, -2.0], [[1.0, 0.3], [0.3, 2.0]]),
    ([3.0, 0.0, 0.0], np.diag([0.5, 0.1, 2.0])),
])
def test_expected_gaussian_norm_against_monte_carlo(mean, cov):
    g = np.random.default_rng(0)
    draws = g.multivariate_normal(mean, cov, size=400_000)
    mc = np.linalg.norm(draws, axis=1).mean()
    assert expected_gaussian_norm(mean, cov) == pytest.approx(mc, rel=5e-3)


def test_expected_gaussian_norm_closed_forms():
    assert expected_gaussian_norm([0.0], [[1.0]]) == pytest.approx(np.sqrt(2 / np.pi), abs=1e-9)
    assert expected_gaussian_norm([0.0, 0.0], np.eye(2)) == pytest.approx(np.sqrt(np.pi / 2), abs=1e-9)
    assert expected_gaussian_norm([3.0, 4.0], np.zeros((2, 2))) == 5.0


def test_generate_examples():
    assert generate(ScenarioSpec(n=64))[2].verdict == EXACT_IDENTITY
    shifted = ScenarioSpec(n=64, rotation_deg=10.0, translation=chart_translation(16, 1, 3 * BASE.scale))
    e = generate(shifted)[2]
    assert e.q_pass and not e.nu_pass and e.verdict == REDISTRIBUTION
    assert generate(ScenarioSpec(n=64, rotation_deg=80.0))[2].verdict == NO_SUPPORT


def test_spec_validation():
    with pytest.raises(ValidationError):
        ScenarioSpec(k=7, D=16)
    with pytest.raises(ValidationError):
        ScenarioSpec(rotation_deg=95.0)
    with pytest.raises(ValidationError):
        ScenarioSpec(translation=(1.0, 2.0))
    spec = ScenarioSpec(rotation_deg=5.0, occupancy_reshape=(1.2, 0.8))
    assert ScenarioSpec.from_dict(spec.to_dict()) == spec


def test_sampling_is_seeded():
    a, b = sample_source(ScenarioSpec(n=16, seed=2)), sample_source(ScenarioSpec(n=16, seed=2))
    assert a == b
    assert sample_source(ScenarioSpec(n=16, seed=3)) != a


CONVERGENCE = [
    dict(rotation_deg=10.0, translation=chart_translation(16, 1, 3 * BASE.scale)),
    dict(rotation_deg=30.0, translation=chart_translation(16, 1, 1.5 * BASE.scale), occupancy_reshape=(2.0, 2.0)),
    dict(rotation_deg=80.0),
    dict(translation=chart_translation(16, 1, 1.0 * BASE.scale), occupancy_reshape=(1.5, 1.5)),
]


@pytest.mark.parametrize("i", range(len(CONVERGENCE)))
def test_measured_metrics_converge(i):
    spec = ScenarioSpec(n=4096, seed=i, **CONVERGENCE[i])
    source, target, expected = generate(spec)
    chart = estimate_tangent(source.values)
    q, nu, target_chart = measure_witness(chart, target.values)
    angles = principal_angles(chart.basis, target_chart.basis)
    assert np.abs(angles - expected.basis_angles_deg).max() <= 0.5
    assert nu.occ_w2_sq_norm == pytest.approx(expected.occ_w2_sq_norm, rel=0.05)
    if expected.mean_shift_norm > 0:
        assert nu.mean_shift_norm == pytest.approx(expected.mean_shift_norm, rel=0.02)
    else:
        assert nu.mean_shift_norm < 0.02


def test_verdict_grid_shape():
    grid = verdict_grid(n=32)
    assert len(grid) == 27
    verdicts = {expected_outcome(s).verdict for s in grid}
    assert verdicts == {EXACT_IDENTITY, REDISTRIBUTION, NO_SUPPORT}


def _acceptance(source, target):
    chart = estimate_tangent(source.values)
    s = reentry_summary(target, chart)
    return s.acceptance, s.rejections


def test_mcq_scenario_pattern_and_swap():
    acc, rej = _acceptance(*mcq_displacement_scenario(0))
    assert acc["informative"] > 0.5 and acc["null_control"] == 0.0
    acc, _ = _acceptance(*mcq_displacement_scenario(0, swap=True))
    assert acc["null_control"] > 0.5 and acc["informative"] == 0.0
