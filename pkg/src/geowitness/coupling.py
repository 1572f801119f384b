"""Behavioural-coupling statistics on authoritative row denominators."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from . import rng as _rng
from .errors import DegenerateError, ValidationError

EXHAUSTIVE_LIMIT = 500_000


def _as_group(values, name: str) -> np.ndarray:
    a = np.asarray(values, dtype=float).ravel()
    if a.size == 0:
        raise DegenerateError(f"empty {name} group")
    return a


def auc(pos, neg) -> float:
    """Mann-Whitney AUC: P(pos > neg) with ties counted one half."""
    p = _as_group(pos, "positive")
    n = np.sort(_as_group(neg, "negative"))
    below = np.searchsorted(n, p, side="left")
    not_above = np.searchsorted(n, p, side="right")
    # 2*(#less) + (#equal) as exact integers
    twice = int(np.sum(below) + np.sum(not_above))
    return twice / (2 * p.size * n.size)


def mean_gap(pos, neg) -> float:
    return float(np.mean(_as_group(pos, "positive")) - np.mean(_as_group(neg, "negative")))


STATISTICS: dict[str, Callable] = {"auc": auc, "gap": mean_gap}


def _statistic(name: str) -> Callable:
    try:
        return STATISTICS[name]
    except KeyError:
        raise ValidationError(f"unknown statistic {name!r}; expected one of {sorted(STATISTICS)}") from None


def bootstrap_replicates(pos, neg, statistic: str = "auc", n_boot: int = 10_000, seed: int = 0, threads: int = 1) -> np.ndarray:
    p = _as_group(pos, "positive")
    n = _as_group(neg, "negative")
    fn = _statistic(statistic)

    def block(i: int, count: int) -> np.ndarray:
        g = _rng.substream(seed, _rng.BOOTSTRAP, _rng.tag(statistic), i)
        ip = g.integers(0, p.size, size=(count, p.size))
        ineg = g.integers(0, n.size, size=(count, n.size))
        if statistic == "gap":
            return p[ip].mean(axis=1) - n[ineg].mean(axis=1)
        return np.array([fn(p[ip[r]], n[ineg[r]]) for r in range(count)])

    return _rng.run_blocks(block, n_boot, threads)


def stratified_bootstrap_ci(
    pos,
    neg,
    statistic: str = "auc",
    n_boot: int = 10_000,
    alpha: float = 0.05,
    seed: int = 0,
    threads: int = 1,
) -> tuple[float, float]:
    """Percentile interval from resampling each group independently."""
    if n_boot < 100:
        raise ValidationError("n_boot must be at least 100")
    reps = bootstrap_replicates(pos, neg, statistic, n_boot, seed, threads)
    lo, hi = np.quantile(reps, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


def _pooled_keys(pos: np.ndarray, neg: np.ndarray, statistic: str) -> tuple[np.ndarray, float]:
    """Per-row keys whose sum over the positive group is monotone in the statistic.

    AUC uses midranks (exact half-integers); the mean gap uses raw values.
    Returns (keys, comparison tolerance).
    """
    pooled = np.concatenate([pos, neg])
    if statistic == "auc":
        return rankdata(pooled), 0.0
    scale = float(np.sum(np.abs(pooled))) or 1.0
    return pooled, 1e-12 * scale


def permutation_p(
    pos,
    neg,
    statistic: str = "auc",
    n_perm: int = 9_999,
    seed: int = 0,
    exhaustive: bool = False,
    threads: int = 1,
) -> float:
    """One-sided (greater) label-permutation p with the add-one estimator.

    ``exhaustive`` enumerates every other split of the pooled rows into
    groups of the observed sizes instead of sampling ``n_perm`` shuffles.
    """
    p = _as_group(pos, "positive")
    n = _as_group(neg, "negative")
    _statistic(statistic)
    keys, tol = _pooled_keys(p, n, statistic)
    total = keys.size
    observed = float(np.sum(keys[: p.size]))

    if exhaustive:
        n_splits = math.comb(total, p.size)
        if n_splits > EXHAUSTIVE_LIMIT:
            raise ValidationError(f"{n_splits} splits exceed the exhaustive limit {EXHAUSTIVE_LIMIT}")
        identity = tuple(range(p.size))
        hits = 0
        for combo in itertools.combinations(range(total), p.size):
            if combo == identity:
                continue
            if float(np.sum(keys[list(combo)])) >= observed - tol:
                hits += 1
        return (1 + hits) / n_splits

    def block(i: int, count: int) -> np.ndarray:
        g = _rng.substream(seed, _rng.PERMUTATION, _rng.tag(statistic), i)
        perm = np.argsort(g.random((count, total)), axis=1)
        return keys[perm[:, : p.size]].sum(axis=1)

    sums = _rng.run_blocks(block, n_perm, threads)
    hits = int(np.sum(sums >= observed - tol))
    return (1 + hits) / (1 + n_perm)


def sign_test_one_sided(k_pos: int, n: int) -> float:
    """P(Binomial(n, 1/2) >= k_pos), exact."""
    if n < 1 or not 0 <= k_pos <= n:
        raise ValidationError(f"sign test needs 0 <= k <= n and n >= 1, got k={k_pos}, n={n}")
    tail = sum(math.comb(n, j) for j in range(k_pos, n + 1))
    return tail / 2**n


def control_percentile(observed: float, controls: Sequence[float]) -> float:
    c = np.asarray(controls, dtype=float)
    if c.size == 0:
        raise DegenerateError("empty control list")
    below = np.sum(c < observed)
    ties = np.sum(c == observed)
    return float((below + 0.5 * ties) / c.size)


@dataclass(frozen=True)
class CouplingReport:
    n_pos: int
    n_neg: int
    auc: float
    mean_gap: float
    pos_mean: float
    neg_mean: float
    auc_ci: tuple[float, float]
    gap_ci: tuple[float, float]
    permutation_p: float
    seed: int
    n_bootstrap: int
    n_permutations: int
    alpha: float = 0.05

    def to_dict(self) -> dict:
        d = asdict(self)
        d["auc_ci"] = list(self.auc_ci)
        d["gap_ci"] = list(self.gap_ci)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CouplingReport":
        kw = dict(d)
        kw["auc_ci"] = tuple(kw["auc_ci"])
        kw["gap_ci"] = tuple(kw["gap_ci"])
        return cls(**kw)


def couple(
    pos,
    neg,
    n_boot: int = 10_000,
    n_perm: int = 9_999,
    seed: int = 0,
    alpha: float = 0.05,
    perm_statistic: str = "auc",
    threads: int = 1,
) -> CouplingReport:
    p = _as_group(pos, "positive")
    n = _as_group(neg, "negative")
    return CouplingReport(
        n_pos=int(p.size),
        n_neg=int(n.size),
        auc=auc(p, n),
        mean_gap=mean_gap(p, n),
        pos_mean=float(p.mean()),
        neg_mean=float(n.mean()),
        auc_ci=stratified_bootstrap_ci(p, n, "auc", n_boot, alpha, seed, threads),
        gap_ci=stratified_bootstrap_ci(p, n, "gap", n_boot, alpha, seed, threads),
        permutation_p=permutation_p(p, n, perm_statistic, n_perm, seed, threads=threads),
        seed=int(seed),
        n_bootstrap=int(n_boot),
        n_permutations=int(n_perm),
        alpha=float(alpha),
    )


def split_by_role(table, scores, positive_role: str = "informative", negative_role: str = "null_control"):
    """Scores of authoritative rows grouped by role; unresolved rows dropped."""
    scores = np.asarray(scores, dtype=float)
    pos = [s for r, s in zip(table.rows, scores) if r.authoritative and r.role == positive_role]
    neg = [s for r, s in zip(table.rows, scores) if r.authoritative and r.role == negative_role]
    return np.asarray(pos), np.asarray(neg)
