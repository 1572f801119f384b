from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geowitness.coupling import (
    CouplingReport,
    auc,
    bootstrap_replicates,
    control_percentile,
    couple,
    mean_gap,
    permutation_p,
    sign_test_one_sided,
    split_by_role,
    stratified_bootstrap_ci,
)
from geowitness.errors import DegenerateError, ValidationError

from conftest import make_table


def brute_auc(pos, neg):
    return sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg) / (len(pos) * len(neg))


score_lists = st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=12)


def test_auc_examples():
    assert auc([2, 3], [0, 1]) == 1.0
    assert auc([1], [1]) == 0.5
    assert auc([0, 2], [1, 3]) == 0.25


@settings(max_examples=200, deadline=None)
@given(score_lists, score_lists)
def test_auc_brute_force_and_symmetry(pos, neg):
    assert auc(pos, neg) == brute_auc(pos, neg)
    assert auc(pos, neg) + auc(neg, pos) == 1.0


@settings(max_examples=100, deadline=None)
@given(score_lists, score_lists)
def test_auc_monotone_transform_invariant(pos, neg):
    f = lambda v: np.exp(np.asarray(v) / 3.0) * 7 - 2
    assert auc(f(pos), f(neg)) == auc(pos, neg)


def test_empty_groups_rejected():
    with pytest.raises(DegenerateError):
        auc([], [1.0])
    with pytest.raises(DegenerateError):
        mean_gap([1.0], [])


def test_mean_gap_examples():
    assert mean_gap([1, 1], [1, 1]) == 0.0
    assert mean_gap([2, 4], [1]) == 2.0


@settings(max_examples=100, deadline=None)
@given(score_lists, score_lists)
def test_gap_antisymmetric(pos, neg):
    assert mean_gap(pos, neg) == -mean_gap(neg, pos)


def test_bootstrap_constant_data():
    assert stratified_bootstrap_ci([1, 1, 1], [0, 0, 0], "gap", 1000) == (1.0, 1.0)


def test_bootstrap_deterministic_and_thread_free(rng):
    pos, neg = rng.standard_normal(40) + 1, rng.standard_normal(35)
    a = bootstrap_replicates(pos, neg, "auc", 2500, seed=9, threads=1)
    b = bootstrap_replicates(pos, neg, "auc", 2500, seed=9, threads=4)
    assert a.tobytes() == b.tobytes()
    assert stratified_bootstrap_ci(pos, neg, "gap", 2000, seed=3) == stratified_bootstrap_ci(pos, neg, "gap", 2000, seed=3)
    assert not np.array_equal(a, bootstrap_replicates(pos, neg, "auc", 2500, seed=10))


def test_bootstrap_validation():
    with pytest.raises(ValidationError):
        stratified_bootstrap_ci([1, 2], [0, 1], "gap", 50)
    with pytest.raises(ValidationError):
        stratified_bootstrap_ci([1, 2], [0, 1], "median", 200)


def test_permutation_exhaustive_one_sixth():
    assert permutation_p([10, 11], [0, 1], exhaustive=True) == pytest.approx(1 / 6)
    assert permutation_p([10, 11], [0, 1], "gap", exhaustive=True) == pytest.approx(1 / 6)


def test_permutation_exhaustive_matches_enumeration(rng):
    pos, neg = rng.integers(0, 4, 4).astype(float), rng.integers(0, 4, 5).astype(float)
    pooled = np.concatenate([pos, neg])
    obs = auc(pos, neg)
    hits = 0
    splits = list(itertools.combinations(range(9), 4))
    for c in splits:
        if c == (0, 1, 2, 3):
            continue
        rest = [i for i in range(9) if i not in c]
        hits += auc(pooled[list(c)], pooled[rest]) >= obs
    assert permutation_p(pos, neg, exhaustive=True) == pytest.approx((1 + hits) / len(splits))


def test_permutation_upper_bound():
    assert permutation_p([0, 1], [10, 11], n_perm=999, seed=1) == 1.0
    assert permutation_p([0, 1], [10, 11], exhaustive=True) == 1.0


def test_permutation_sampled_small_for_separated(rng):
    pos, neg = rng.standard_normal(30) + 3, rng.standard_normal(30)
    assert permutation_p(pos, neg, n_perm=999, seed=2) == pytest.approx(1 / 1000)


def test_permutation_thread_determinism(rng):
    pos, neg = rng.standard_normal(20), rng.standard_normal(20)
    assert permutation_p(pos, neg, n_perm=2999, seed=4, threads=1) == permutation_p(pos, neg, n_perm=2999, seed=4, threads=3)


def test_permutation_null_is_roughly_uniform():
    from scipy.stats import kstest

    ps = []
    for s in range(60):
        g = np.random.default_rng(1000 + s)
        ps.append(permutation_p(g.standard_normal(15), g.standard_normal(15), n_perm=199, seed=s))
    assert kstest(ps, "uniform").pvalue > 0.01


def test_sign_test_examples():
    assert sign_test_one_sided(5, 5) == 0.03125
    assert sign_test_one_sided(0, 5) == 1.0
    assert sign_test_one_sided(4, 5) == 0.1875
    with pytest.raises(ValidationError):
        sign_test_one_sided(6, 5)


def test_sign_test_enumeration_and_monotone():
    for n in range(1, 21):
        ps = []
        for k in range(n + 1):
            count = sum(1 for bits in itertools.product((0, 1), repeat=n) if sum(bits) >= k) if n <= 12 else None
            p = sign_test_one_sided(k, n)
            if count is not None:
                assert p == count / 2**n
            ps.append(p)
        assert ps[0] == 1.0
        assert all(a >= b for a, b in zip(ps, ps[1:]))


def test_control_percentile_examples():
    assert control_percentile(2.0, np.linspace(0, 1, 21)) == 1.0
    assert control_percentile(0.5, [0.5]) == 0.5
    assert control_percentile(-1.0, [0.0, 1.0]) == 0.0
    with pytest.raises(DegenerateError):
        control_percentile(1.0, [])


def test_couple_report_round_trip(rng):
    r = couple(rng.standard_normal(20) + 1, rng.standard_normal(20), n_boot=500, n_perm=499, seed=5)
    assert r.n_pos == 20 and r.auc_ci[0] <= r.auc <= r.auc_ci[1] + 0.1
    assert CouplingReport.from_dict(r.to_dict()) == r


def test_split_by_role_drops_unresolved():
    t = make_table(np.zeros((4, 1)), roles=["informative", "informative", "null_control", "comparator"])
    rows = list(t.rows)
    from geowitness.dataset import RowMeta

    rows[0] = RowMeta(**{**rows[0].to_dict(), "reviewed_label": "unresolved"})
    pos, neg = split_by_role(t.with_rows(rows), [1.0, 2.0, 3.0, 4.0])
    assert pos.tolist() == [2.0] and neg.tolist() == [3.0]
