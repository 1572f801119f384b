"""Control families: null labels, random subspace, orthogonal complement, nearby same-span chart."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from . import rng as _rng
from .charts import TangentChart, check_orthonormal, principal_angles
from .coupling import CouplingReport, couple, split_by_role
from .dataset import ActivationTable, Site
from .errors import DegenerateError, ValidationError

KINDS = ("null_labels", "random_subspace", "orthogonal_complement", "nearby_same_span")


@dataclass(frozen=True)
class ControlSpec:
    kind: str
    seed: int
    site: Site | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown control kind {self.kind!r}")
        if self.kind == "nearby_same_span" and self.site is None:
            raise ValidationError("nearby_same_span control needs a site")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": int(self.seed)}
        if self.site is not None:
            d["site"] = self.site.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ControlSpec":
        site = d.get("site")
        if isinstance(site, str):
            site = Site.parse(site)
        elif site is not None:
            site = Site.from_dict(site)
        return cls(str(d["kind"]), int(d["seed"]), site)


@dataclass(frozen=True)
class ScoringConfig:
    """How rows are scored at the frozen site and how coupling is resampled."""

    axis: np.ndarray
    positive_role: str = "informative"
    negative_role: str = "null_control"
    n_boot: int = 1000
    n_perm: int = 999
    alpha: float = 0.05
    threads: int = 1

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float).ravel()
        norm = np.linalg.norm(a)
        if not norm > 0:
            raise DegenerateError("scoring axis has zero norm")
        object.__setattr__(self, "axis", a)


def axis_scores(points, centroid, axis) -> np.ndarray:
    """Signed projection <x - centroid, a> / |a|."""
    a = np.asarray(axis, dtype=float)
    return (np.atleast_2d(points) - centroid) @ (a / np.linalg.norm(a))


def frame_scores(points, centroid, frame) -> np.ndarray:
    """Norm of the projection of x - centroid onto a frame."""
    return np.linalg.norm((np.atleast_2d(points) - centroid) @ frame, axis=1)


def random_subspace(dim: int, k: int, seed: int) -> np.ndarray:
    if not 1 <= k <= dim:
        raise ValidationError(f"need 1 <= k <= D, got k={k}, D={dim}")
    g = _rng.substream(seed, _rng.CONTROL, _rng.tag("random_subspace"))
    q, r = np.linalg.qr(g.standard_normal((dim, k)))
    # sign fix makes the draw Haar-distributed
    return q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))


def orthogonal_complement_subspace(basis, k_out: int, seed: int) -> np.ndarray:
    b = check_orthonormal(basis, "basis")
    dim, k = b.shape
    if k + k_out > dim:
        raise ValidationError(f"complement has dimension {dim - k}, cannot hold {k_out} directions")
    g = _rng.substream(seed, _rng.CONTROL, _rng.tag("orthogonal_complement"))
    z = g.standard_normal((dim, k_out))
    # project out the basis twice for numerical orthogonality
    for _ in range(2):
        z = z - b @ (b.T @ z)
    q, _ = np.linalg.qr(z)
    for _ in range(2):
        q = q - b @ (b.T @ q)
        q, _ = np.linalg.qr(q)
    return q


def _permuted(table: ActivationTable, seed: int) -> ActivationTable:
    """Shuffle (condition, role) across rows, keeping group sizes."""
    g = _rng.substream(seed, _rng.CONTROL, _rng.tag("null_labels"))
    perm = g.permutation(table.n_rows)
    rows = [replace(r, condition=table.rows[j].condition, role=table.rows[j].role) for r, j in zip(table.rows, perm)]
    return table.with_rows(rows)


@dataclass
class ControlResult:
    spec: ControlSpec
    report: CouplingReport
    basis_angle_mean_deg: float

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "report": self.report.to_dict(),
            "basis_angle_mean_deg": self.basis_angle_mean_deg,
        }


def _score_and_couple(table, scores, scorer: ScoringConfig, seed: int) -> CouplingReport:
    pos, neg = split_by_role(table, scores, scorer.positive_role, scorer.negative_role)
    if pos.size == 0 or neg.size == 0:
        raise DegenerateError("control denominators are empty")
    return couple(pos, neg, scorer.n_boot, scorer.n_perm, seed, scorer.alpha, threads=scorer.threads)


def run_control(
    spec: ControlSpec,
    frozen_chart: TangentChart,
    data: ActivationTable,
    scorer: ScoringConfig,
    charts: Mapping[Site, TangentChart] | None = None,
) -> ControlResult:
    site = frozen_chart.site
    rows = data.select(site=site) if site is not None else data
    if rows.n_rows == 0:
        raise DegenerateError(f"no rows at frozen site {site.key if site else '?'}")
    if spec.kind == "null_labels":
        shuffled = _permuted(rows, spec.seed)
        scores = axis_scores(shuffled.values, frozen_chart.centroid, scorer.axis)
        return ControlResult(spec, _score_and_couple(shuffled, scores, scorer, spec.seed), 0.0)
    if spec.kind in ("random_subspace", "orthogonal_complement"):
        if spec.kind == "random_subspace":
            frame = random_subspace(frozen_chart.dim, frozen_chart.rank, spec.seed)
        else:
            frame = orthogonal_complement_subspace(frozen_chart.basis, frozen_chart.rank, spec.seed)
        scores = frame_scores(rows.values, frozen_chart.centroid, frame)
        angle = float(np.mean(principal_angles(frozen_chart.basis, frame)))
        return ControlResult(spec, _score_and_couple(rows, scores, scorer, spec.seed), angle)
    # nearby_same_span
    if site is not None and (spec.site.span != site.span or spec.site == site):
        raise ValidationError("nearby control must share the span and differ from the frozen site")
    nearby = (charts or {}).get(spec.site)
    if nearby is None:
        raise ValidationError(f"missing nearby chart for {spec.site.key}")
    near_rows = data.select(site=spec.site)
    if near_rows.n_rows == 0:
        raise DegenerateError(f"no rows at nearby site {spec.site.key}")
    scores = frame_scores(near_rows.values, nearby.centroid, nearby.basis)
    angle = float(np.mean(principal_angles(frozen_chart.basis, nearby.basis)))
    return ControlResult(spec, _score_and_couple(near_rows, scores, scorer, spec.seed), angle)


def run_control_battery(
    frozen_chart: TangentChart,
    data: ActivationTable,
    specs: Sequence[ControlSpec],
    scorer: ScoringConfig,
    charts: Mapping[Site, TangentChart] | None = None,
) -> list[ControlResult]:
    """One ControlResult per spec, in spec order."""
    return [run_control(s, frozen_chart, data, scorer, charts) for s in specs]


def default_battery(seed: int, n_null: int = 7, n_random: int = 7, n_orthogonal: int = 7) -> list[ControlSpec]:
    specs = []
    base = int(seed) * 1000
    specs += [ControlSpec("null_labels", base + i) for i in range(n_null)]
    specs += [ControlSpec("random_subspace", base + 100 + i) for i in range(n_random)]
    specs += [ControlSpec("orthogonal_complement", base + 200 + i) for i in range(n_orthogonal)]
    return specs
