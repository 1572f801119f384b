"""Held-out fold bridge protocol and re-entry diagnostics."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import rng as _rng
from .charts import TangentChart, TangentPolicy, estimate_tangent, grassmann_chordal, residual_angles
from .controls import axis_scores
from .coupling import auc, mean_gap, sign_test_one_sided, split_by_role
from .dataset import ActivationTable, Site, atomic_write_text
from .errors import DegenerateError, DimensionMismatchError, GeoWitnessError, ValidationError
from .hashing import pretty_json
from .witness import ThresholdPolicy, gate_witness, measure_witness

CENTROID_DISTANCE = "centroid_distance"
BASIS_ANGLE = "basis_angle"


def group_sort_key(g: str):
    """Numeric-aware ordering: '9' < '12' < 'a'."""
    return (0, int(g), "") if str(g).isdigit() else (1, 0, str(g))


@dataclass
class FrozenAtlas:
    charts: list[TangentChart]
    assignment_threshold: float = 2.5
    angle_threshold_deg: float = 70.0
    axes: dict[str, np.ndarray] = field(default_factory=dict)  # site key -> scoring axis

    def __post_init__(self):
        if not self.charts:
            raise ValidationError("atlas has no charts")
        keys = [c.site.key if c.site is not None else None for c in self.charts]
        if None in keys:
            raise ValidationError("every atlas chart needs a site")
        if len(set(keys)) != len(keys):
            raise ValidationError("atlas chart sites must be unique")
        if not (self.assignment_threshold > 0 and self.angle_threshold_deg > 0):
            raise ValidationError("atlas thresholds must be positive")

    def chart(self, site: Site) -> TangentChart:
        for c in self.charts:
            if c.site == site:
                return c
        raise ValidationError(f"atlas has no chart at {site.key}")

    def to_dict(self) -> dict:
        return {
            "charts": [c.to_dict() for c in self.charts],
            "assignment_threshold": self.assignment_threshold,
            "angle_threshold_deg": self.angle_threshold_deg,
            "axes": {k: np.asarray(v).tolist() for k, v in sorted(self.axes.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FrozenAtlas":
        return cls(
            charts=[TangentChart.from_dict(c) for c in d["charts"]],
            assignment_threshold=float(d.get("assignment_threshold", 2.5)),
            angle_threshold_deg=float(d.get("angle_threshold_deg", 70.0)),
            axes={k: np.asarray(v, dtype=float) for k, v in d.get("axes", {}).items()},
        )

    def save(self, path) -> None:
        atomic_write_text(path, pretty_json(self.to_dict()))

    @classmethod
    def load(cls, path) -> "FrozenAtlas":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def normalized_distances(points, chart: TangentChart) -> np.ndarray:
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if x.shape[1] != chart.dim:
        raise DimensionMismatchError(f"points have dim {x.shape[1]}, chart has {chart.dim}")
    return np.linalg.norm(x - chart.centroid, axis=1) / chart.scale


def assign_rows(atlas: FrozenAtlas, table: ActivationTable) -> dict[str, Site | None]:
    """Nearest chart by normalized centroid distance, or None beyond the threshold.

    Ties go to the earlier chart in atlas order.
    """
    if table.n_rows == 0:
        return {}
    dist = np.stack([normalized_distances(table.values, c) for c in atlas.charts], axis=1)
    best = np.argmin(dist, axis=1)  # first minimum on ties
    out: dict[str, Site | None] = {}
    for r, j, d in zip(table.rows, best, dist[np.arange(len(best)), best]):
        out[r.row_id] = atlas.charts[j].site if d <= atlas.assignment_threshold else None
    return out


@dataclass(frozen=True)
class ReentryResult:
    row_id: str
    accepted: bool
    reject_reason: str | None
    norm_centroid_distance: float
    norm_angle: float

    def to_dict(self) -> dict:
        return asdict(self)


def _reentry_arrays(points, chart: TangentChart, assignment_threshold: float, angle_threshold_deg: float):
    dist = normalized_distances(points, chart)
    ang = np.nan_to_num(residual_angles(points, chart), nan=0.0)
    norm_angle = ang / angle_threshold_deg
    far = dist > assignment_threshold
    skew = norm_angle > 1.0
    reason = np.where(far, CENTROID_DISTANCE, np.where(skew, BASIS_ANGLE, ""))
    return dist, norm_angle, ~(far | skew), reason


def reentry_check(
    row,
    chart: TangentChart,
    assignment_threshold: float = 2.5,
    angle_threshold_deg: float = 70.0,
    row_id: str = "",
) -> ReentryResult:
    """Accept iff within the distance bound and the angle bound; distance failures take precedence."""
    dist, norm_angle, ok, reason = _reentry_arrays(np.atleast_2d(row), chart, assignment_threshold, angle_threshold_deg)
    return ReentryResult(
        row_id=row_id,
        accepted=bool(ok[0]),
        reject_reason=None if ok[0] else str(reason[0]),
        norm_centroid_distance=float(dist[0]),
        norm_angle=float(norm_angle[0]),
    )


def reentry_table(table: ActivationTable, chart: TangentChart, atlas: FrozenAtlas | None = None,
                  assignment_threshold: float = 2.5, angle_threshold_deg: float = 70.0) -> list[ReentryResult]:
    if atlas is not None:
        assignment_threshold, angle_threshold_deg = atlas.assignment_threshold, atlas.angle_threshold_deg
    dist, norm_angle, ok, reason = _reentry_arrays(table.values, chart, assignment_threshold, angle_threshold_deg)
    return [
        ReentryResult(r.row_id, bool(a), None if a else str(why), float(d), float(t))
        for r, d, t, a, why in zip(table.rows, dist, norm_angle, ok, reason)
    ]


def realization_counts(table: ActivationTable, chart: TangentChart, assignment_threshold: float = 2.5,
                       angle_threshold_deg: float = 70.0) -> tuple[int, int, int, int]:
    """(n_realized, n_total, n_flip_realized, n_flip_total) over authoritative rows."""
    rows = table.select(authoritative=True)
    if rows.n_rows == 0:
        return 0, 0, 0, 0
    _, _, ok, _ = _reentry_arrays(rows.values, chart, assignment_threshold, angle_threshold_deg)
    flip = np.array([bool(r.flip_flag) for r in rows.rows])
    return int(ok.sum()), rows.n_rows, int((ok & flip).sum()), int(flip.sum())


def flip_chordal_separation(table: ActivationTable, chart: TangentChart, policy: TangentPolicy = TangentPolicy()) -> float:
    """Grassmann chordal distance to the anchor chart, flip rows minus no-flip rows.

    Both subsets are fit at the anchor chart's rank so the distances are comparable.
    """
    rows = table.select(authoritative=True)
    flip = np.array([bool(r.flip_flag) for r in rows.rows])
    if flip.sum() < 2 or (~flip).sum() < 2:
        raise DegenerateError("need at least two flip and two no-flip rows")
    fixed = TangentPolicy(max_dim=policy.max_dim, variance_explained=policy.variance_explained,
                          min_support=policy.min_support, rank=chart.rank)
    f = estimate_tangent(rows.values[flip], fixed)
    nf = estimate_tangent(rows.values[~flip], fixed)
    if f.rank != chart.rank or nf.rank != chart.rank:
        raise DegenerateError("flip or no-flip rows cannot support the anchor rank")
    return grassmann_chordal(f.basis, chart.basis) - grassmann_chordal(nf.basis, chart.basis)


def aggregate_chart(charts: Sequence[TangentChart], policy: TangentPolicy = TangentPolicy()) -> TangentChart:
    """Union-fit chart over the reconstructed support of every family chart."""
    pts = np.concatenate([c.support_points() for c in charts], axis=0)
    return estimate_tangent(pts, policy)


def strict_replay_closure(table: ActivationTable, atlas: FrozenAtlas, policy: TangentPolicy = TangentPolicy()) -> int:
    """Rows that re-enter both their assigned chart and the family-aggregate chart."""
    assigned = assign_rows(atlas, table)
    agg = aggregate_chart(atlas.charts, policy)
    count = 0
    for r, x in zip(table.rows, table.values):
        site = assigned.get(r.row_id)
        if site is None:
            continue
        a = reentry_check(x, atlas.chart(site), atlas.assignment_threshold, atlas.angle_threshold_deg)
        b = reentry_check(x, agg, atlas.assignment_threshold, atlas.angle_threshold_deg)
        count += int(a.accepted and b.accepted)
    return count


@dataclass
class ReentrySummary:
    """Per-branch re-entry tally against one frozen chart."""

    accepted: dict[str, int]
    total: dict[str, int]
    rejections: dict[str, int]
    mean_norm_distance: dict[str, float]
    mean_norm_angle: dict[str, float]
    strict_closure: int | None = None

    @property
    def acceptance(self) -> dict[str, float]:
        return {k: self.accepted[k] / self.total[k] if self.total[k] else 0.0 for k in self.total}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["acceptance"] = self.acceptance
        return d


def reentry_summary(table: ActivationTable, chart: TangentChart, assignment_threshold: float = 2.5,
                    angle_threshold_deg: float = 70.0, branch_field: str = "role") -> ReentrySummary:
    results = reentry_table(table, chart, None, assignment_threshold, angle_threshold_deg)
    branches = [getattr(r, branch_field) or r.condition for r in table.rows]
    accepted: Counter = Counter()
    total: Counter = Counter()
    rejections: Counter = Counter({CENTROID_DISTANCE: 0, BASIS_ANGLE: 0})
    dist: dict[str, list] = {}
    ang: dict[str, list] = {}
    for b, res in zip(branches, results):
        total[b] += 1
        accepted[b] += int(res.accepted)
        if not res.accepted:
            rejections[res.reject_reason] += 1
        dist.setdefault(b, []).append(res.norm_centroid_distance)
        ang.setdefault(b, []).append(res.norm_angle)
    keys = sorted(total)
    return ReentrySummary(
        accepted={k: accepted[k] for k in keys},
        total={k: total[k] for k in keys},
        rejections=dict(rejections),
        mean_norm_distance={k: float(np.mean(dist[k])) for k in keys},
        mean_norm_angle={k: float(np.mean(ang[k])) for k in keys},
    )


@dataclass
class FoldResult:
    held_out_group: str
    n_assigned: int
    auc: float | None
    mean_gap: float | None
    q_pass: bool | None
    nu_pass: bool | None
    support_score: float | None = None
    scored: bool = True
    note: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def table_row(self) -> dict:
        """Columns of the held-out fold summary table."""
        def flag(v):
            return None if v is None else ("pass" if v else "fail")

        return {
            "held_out_group": self.held_out_group,
            "assigned_rows": self.n_assigned,
            "auc": self.auc,
            "mean_gap": self.mean_gap,
            "q_support": flag(self.q_pass),
            "nu_support": flag(self.nu_pass),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FoldResult":
        return cls(**{k: d[k] for k in d if k in cls.__dataclass_fields__})


def _unscored(group: str, n: int, note: str) -> FoldResult:
    return FoldResult(group, n, None, None, None, None, None, scored=False, note=note)


def run_folds(
    atlas: FrozenAtlas,
    data: ActivationTable,
    lane: Site,
    groups: Sequence[str] | None = None,
    policy: ThresholdPolicy = ThresholdPolicy(),
    tangent_policy: TangentPolicy = TangentPolicy(),
    positive_role: str = "informative",
    negative_role: str = "null_control",
    use_stored_assignment: bool = False,
) -> list[FoldResult]:
    """Score each held-out group on rows assigned to the lane chart.

    The atlas is never refit here. ``groups`` lists the expected folds; a
    listed group with no usable rows is reported unscored, never dropped.
    """
    lane_chart = atlas.chart(lane)
    axis = atlas.axes.get(lane.key)
    if axis is None:
        raise ValidationError(f"atlas has no scoring axis for lane {lane.key}")
    rows = data.select(site=lane, authoritative=True)
    if any(r.group_id is None for r in rows.rows):
        raise ValidationError("every row needs a group_id for fold scoring")
    if use_stored_assignment:
        on_lane = np.array([r.assigned_site == lane.key for r in rows.rows], dtype=bool)
    else:
        assigned = assign_rows(atlas, rows)
        on_lane = np.array([assigned[r.row_id] == lane for r in rows.rows], dtype=bool)
    present = {r.group_id for r in rows.rows}
    wanted = sorted(set(groups) | present if groups is not None else present, key=group_sort_key)

    out = []
    for g in wanted:
        mask = on_lane & np.array([r.group_id == g for r in rows.rows], dtype=bool)
        fold = rows.subset(mask)
        if fold.n_rows == 0:
            out.append(_unscored(g, 0, "no assigned rows" if g in present else "group absent from data"))
            continue
        scores = axis_scores(fold.values, lane_chart.centroid, axis)
        pos, neg = split_by_role(fold, scores, positive_role, negative_role)
        if pos.size == 0 or neg.size == 0:
            out.append(_unscored(g, fold.n_rows, "one condition has no assigned rows"))
            continue
        try:
            q, nu, _ = measure_witness(lane_chart, fold.values, tangent_policy=tangent_policy)
        except GeoWitnessError as exc:
            out.append(_unscored(g, fold.n_rows, f"witness unavailable: {exc}"))
            continue
        w = gate_witness(q, nu, policy)
        out.append(FoldResult(g, fold.n_rows, auc(pos, neg), mean_gap(pos, neg), w.q_pass, w.nu_pass, w.support_score))
    return out


@dataclass
class BridgeSummary:
    mean_auc: float
    mean_gap: float
    gap_ci: tuple[float, float]
    sign_p: float
    q_pass_fraction: float
    nu_pass_fraction: float
    n_scored: int
    n_positive: int
    mean_support_score: float | None
    folds: list[FoldResult]
    seed: int
    n_bootstrap: int

    def to_dict(self) -> dict:
        return {
            "mean_auc": self.mean_auc,
            "mean_gap": self.mean_gap,
            "gap_ci": list(self.gap_ci),
            "sign_p": self.sign_p,
            "q_pass_fraction": self.q_pass_fraction,
            "nu_pass_fraction": self.nu_pass_fraction,
            "n_scored": self.n_scored,
            "n_positive": self.n_positive,
            "mean_support_score": self.mean_support_score,
            "seed": self.seed,
            "n_bootstrap": self.n_bootstrap,
            "folds": [f.table_row() for f in self.folds],
            "fold_details": [f.to_dict() for f in self.folds],
        }


def aggregate_folds(folds: Sequence[FoldResult], n_boot: int = 10_000, seed: int = 0, alpha: float = 0.05) -> BridgeSummary:
    """Unweighted fold means, fold-resampling bootstrap of the gap, sign test.

    Folds are ordered by group id first and sums are exactly rounded, so the
    result does not depend on the order of ``folds``.
    """
    ordered = sorted(folds, key=lambda f: group_sort_key(f.held_out_group))
    scored = [f for f in ordered if f.scored]
    if not scored:
        raise DegenerateError("no scored folds to aggregate")
    n = len(scored)
    aucs = np.array([f.auc for f in scored])
    gaps = np.array([f.mean_gap for f in scored])
    g = _rng.substream(seed, _rng.FOLD_BOOTSTRAP)
    idx = g.integers(0, n, size=(n_boot, n))
    reps = np.sort(gaps[idx], axis=1).sum(axis=1) / n
    lo, hi = np.quantile(reps, [alpha / 2, 1 - alpha / 2])
    n_pos = int(np.sum(gaps > 0))
    support = [f.support_score for f in scored if f.support_score is not None]
    return BridgeSummary(
        mean_auc=math.fsum(aucs) / n,
        mean_gap=math.fsum(gaps) / n,
        gap_ci=(float(lo), float(hi)),
        sign_p=sign_test_one_sided(n_pos, n),
        q_pass_fraction=sum(bool(f.q_pass) for f in scored) / n,
        nu_pass_fraction=sum(bool(f.nu_pass) for f in scored) / n,
        n_scored=n,
        n_positive=n_pos,
        mean_support_score=math.fsum(support) / len(support) if support else None,
        folds=list(ordered),
        seed=int(seed),
        n_bootstrap=int(n_boot),
    )
