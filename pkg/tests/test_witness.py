from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geowitness.charts import estimate_tangent
from geowitness.coupling import CouplingReport
from geowitness.errors import ValidationError
from geowitness.occupancy import WitnessNu
from geowitness.witness import (
    EXACT_IDENTITY,
    LOCALISATION,
    NO_SUPPORT,
    REDISTRIBUTION,
    EmptyControlsWarning,
    ThresholdPolicy,
    WitnessQ,
    adjudicate,
    coupling_positive,
    gate_witness,
    measure_witness,
)

POLICY = ThresholdPolicy()
THRESHOLDS = [35.0, 70.0, 35.0, 70.0, 0.55, 0.65]


def metrics(values):
    q = WitnessQ(*values[:4])
    nu = WitnessNu(values[4], values[5], 0.0)
    return q, nu


def report(auc, gap):
    return CouplingReport(10, 10, auc, gap, gap, 0.0, (auc, auc), (gap, gap), 0.01, 0, 100, 99)


def test_perfect_match_scores_one():
    r = gate_witness(*metrics([0.0] * 6))
    assert r.q_pass and r.nu_pass and r.support_score == 1.0


def test_support_score_hand_arithmetic():
    r = gate_witness(WitnessQ(10, 20, 10, 20), WitnessNu(1.10, 0.325, 0.0))
    assert r.q_pass and not r.nu_pass
    oracle = (2 * (1 - 10 / 35) + 2 * (1 - 20 / 70) + 0 + 0.5) / 6
    assert r.support_score == pytest.approx(oracle, abs=1e-15)
    # six clamped margins: 5/7 four times, then 0 and 0.5
    assert r.support_score == pytest.approx((4 * 5 / 7 + 0.5) / 6, abs=1e-15)


@pytest.mark.parametrize("i", range(6))
def test_gate_boundaries_inclusive(i):
    at = [0.0] * 6
    at[i] = THRESHOLDS[i]
    r = gate_witness(*metrics(at))
    assert r.q_pass and r.nu_pass
    above = list(at)
    above[i] = THRESHOLDS[i] + 1e-4
    r = gate_witness(*metrics(above))
    assert (r.q_pass, r.nu_pass) == ((False, True) if i < 4 else (True, False))


def test_basis_mean_boundary_example():
    assert gate_witness(*metrics([35.0, 0, 0, 0, 0, 0])).q_pass
    assert not gate_witness(*metrics([35.0001, 0, 0, 0, 0, 0])).q_pass


def _ladder_oracle(q, nu, c, k):
    if not q:
        return NO_SUPPORT
    if not (c and k):
        return LOCALISATION
    return EXACT_IDENTITY if nu else REDISTRIBUTION


def test_adjudicate_exhaustive():
    for combo in itertools.product([True, False], repeat=4):
        v = adjudicate(*combo)
        assert v.verdict == _ladder_oracle(*combo)
        assert (v.q_pass, v.nu_pass, v.coupling_positive, v.controls_clean) == combo
        assert adjudicate(*combo) == v
    assert adjudicate(True, True, True, True).verdict == EXACT_IDENTITY
    assert adjudicate(True, False, True, True).verdict == REDISTRIBUTION
    assert adjudicate(True, True, False, True).verdict == LOCALISATION


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 200), min_size=6, max_size=6), st.integers(0, 5), st.floats(0, 50))
def test_support_score_monotone(values, i, bump):
    base = gate_witness(*metrics(values)).support_score
    raised = list(values)
    raised[i] += bump
    assert gate_witness(*metrics(raised)).support_score <= base + 1e-15
    assert 0.0 <= base <= 1.0


def test_policy_rejects_nonpositive():
    with pytest.raises(ValidationError):
        ThresholdPolicy(occ_w2_max=0.0)
    assert ThresholdPolicy.from_dict(POLICY.to_dict()) == POLICY


def test_coupling_positive_examples():
    assert coupling_positive(report(0.984, 5.50), [0.669, 0.5, 0.41]) == (True, True)
    assert coupling_positive(report(0.434, -0.49), [0.5])[0] is False
    assert coupling_positive(report(0.52, 0.1), [0.5])[0] is False
    assert coupling_positive(report(0.9, 1.0), [0.95])[1] is False


def test_empty_controls_warn():
    with pytest.warns(EmptyControlsWarning):
        assert coupling_positive(report(0.9, 1.0), []) == (True, True)


def test_measure_witness_self_replay(rng):
    pts = rng.standard_normal((300, 5)) * [3, 2, 0.1, 0.1, 0.1]
    source = estimate_tangent(pts)
    q, nu, target = measure_witness(source, pts)
    assert q.basis_angle_max_deg < 1e-6
    assert nu.occ_w2_sq_norm < 1e-12 and nu.mean_shift_norm < 1e-12
    assert gate_witness(q, nu).q_pass
