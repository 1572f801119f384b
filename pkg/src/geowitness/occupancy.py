"""Occupancy (witness nu) metrics between two samples in chart coordinates.

The first argument is always the reference (source / frozen) sample and
supplies the normalizers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .charts import TangentChart
from .errors import DegenerateError, DimensionMismatchError, ValidationError

_BLOCK = 1024


@dataclass(frozen=True)
class OccupancySample:
    coords: np.ndarray
    source_scale_sq: float

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coords, dtype=float))
        object.__setattr__(self, "coords", c)
        if not self.source_scale_sq > 0:
            raise ValidationError("source_scale_sq must be positive")

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def k(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class WitnessNu:
    occ_w2_sq_norm: float
    energy_distance_norm: float
    mean_shift_norm: float
    energy_distance_raw: float = 0.0  # unnormalized, before clamping

    def to_dict(self) -> dict:
        return {
            "occ_w2_sq_norm": self.occ_w2_sq_norm,
            "energy_distance_norm": self.energy_distance_norm,
            "mean_shift_norm": self.mean_shift_norm,
            "energy_distance_raw": self.energy_distance_raw,
        }


def project_into_chart(points, chart: TangentChart) -> OccupancySample:
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if x.shape[1] != chart.dim:
        raise DimensionMismatchError(f"points have dim {x.shape[1]}, chart has {chart.dim}")
    return OccupancySample((x - chart.centroid) @ chart.basis, chart.occupancy_scale_sq)


def reference_sample(chart: TangentChart) -> OccupancySample:
    if chart.reference_coords is None:
        raise ValidationError("chart carries no reference sample")
    return OccupancySample(chart.reference_coords, chart.occupancy_scale_sq)


def _same_k(x: OccupancySample, y: OccupancySample) -> None:
    if x.k != y.k:
        raise DimensionMismatchError(f"chart ranks differ: {x.k} vs {y.k}")


def psd_sqrt(c: np.ndarray) -> np.ndarray:
    """Symmetric square root with negative eigenvalues clamped to zero."""
    c = (c + c.T) / 2
    w, v = np.linalg.eigh(c)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def gaussian_w2_sq(m1, c1, m2, c2) -> float:
    """Squared 2-Wasserstein distance between N(m1, c1) and N(m2, c2)."""
    m1, m2 = np.atleast_1d(m1).astype(float), np.atleast_1d(m2).astype(float)
    c1, c2 = np.atleast_2d(c1).astype(float), np.atleast_2d(c2).astype(float)
    r1 = psd_sqrt(c1)
    cross = psd_sqrt(r1 @ c2 @ r1)
    bures = np.trace(c1) + np.trace(c2) - 2.0 * np.trace(cross)
    return float(np.sum((m1 - m2) ** 2) + max(bures, 0.0))


def _moments(s: OccupancySample) -> tuple[np.ndarray, np.ndarray]:
    if s.n < 2:
        raise DegenerateError(f"need at least 2 points per sample, got {s.n}")
    cov = np.atleast_2d(np.cov(s.coords, rowvar=False, ddof=1))
    if not np.isfinite(cov).all():
        raise DegenerateError("non-finite covariance")
    return s.coords.mean(axis=0), cov


def occ_w2_sq_norm(x: OccupancySample, y: OccupancySample) -> float:
    _same_k(x, y)
    mx, cx = _moments(x)
    my, cy = _moments(y)
    return gaussian_w2_sq(mx, cx, my, cy) / x.source_scale_sq


def _mean_pair_distance(a: np.ndarray, b: np.ndarray, exclude_self: bool) -> float:
    """Mean Euclidean distance over pairs, blocked to bound memory.

    Block partial sums are combined with numpy's pairwise summation in a
    fixed order, so the result does not depend on evaluation order. With
    ``exclude_self`` the zero diagonal of a vs a is left out of the count.
    """
    partial = [cdist(a[i : i + _BLOCK], b).sum(axis=1) for i in range(0, a.shape[0], _BLOCK)]
    total = float(np.sum(np.concatenate(partial)))
    n, m = a.shape[0], b.shape[0]
    return total / (n * (n - 1)) if exclude_self else total / (n * m)


def energy_distance_terms(x: OccupancySample, y: OccupancySample) -> tuple[float, float]:
    """Return (raw energy distance, reference within-pair mean distance)."""
    _same_k(x, y)
    if x.n < 2 or y.n < 2:
        raise DegenerateError("energy distance needs at least 2 points per sample")
    xy = _mean_pair_distance(x.coords, y.coords, False)
    xx = _mean_pair_distance(x.coords, x.coords, True)
    yy = _mean_pair_distance(y.coords, y.coords, True)
    return 2.0 * xy - xx - yy, xx


def energy_distance_norm(x: OccupancySample, y: OccupancySample) -> float:
    raw, ref = energy_distance_terms(x, y)
    if ref <= 0.0:
        raise DegenerateError("degenerate reference: all reference points coincide")
    return max(raw, 0.0) / ref


def mean_shift_norm(x: OccupancySample, y: OccupancySample) -> float:
    _same_k(x, y)
    shift = x.coords.mean(axis=0) - y.coords.mean(axis=0)
    return float(np.linalg.norm(shift) / np.sqrt(x.source_scale_sq))


def witness_nu(x: OccupancySample, y: OccupancySample) -> WitnessNu:
    raw, ref = energy_distance_terms(x, y)
    if ref <= 0.0:
        raise DegenerateError("degenerate reference: all reference points coincide")
    return WitnessNu(
        occ_w2_sq_norm=occ_w2_sq_norm(x, y),
        energy_distance_norm=max(raw, 0.0) / ref,
        mean_shift_norm=mean_shift_norm(x, y),
        energy_distance_raw=raw,
    )
