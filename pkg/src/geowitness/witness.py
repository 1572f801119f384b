"""Threshold gating, support score and the claim ladder."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Sequence

import numpy as np

from .charts import TangentChart, empirical_tangent_angles, estimate_tangent, principal_angles, TangentPolicy
from .occupancy import WitnessNu, project_into_chart, reference_sample, witness_nu
from .errors import ValidationError

EXACT_IDENTITY = "exact_identity"
REDISTRIBUTION = "redistribution"
LOCALISATION = "localisation_without_closure"
NO_SUPPORT = "no_support"
VERDICTS = (EXACT_IDENTITY, REDISTRIBUTION, LOCALISATION, NO_SUPPORT)


class EmptyControlsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ThresholdPolicy:
    basis_mean_max_deg: float = 35.0
    basis_max_max_deg: float = 70.0
    emp_mean_max_deg: float = 35.0
    emp_max_max_deg: float = 70.0
    occ_w2_max: float = 0.55
    energy_max: float = 0.65
    coupling_auc_margin: float = 0.05
    control_percentile_min: float = 0.95

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValidationError(f"threshold {f.name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "ThresholdPolicy":
        return cls(**(d or {}))


@dataclass(frozen=True)
class WitnessQ:
    basis_angle_mean_deg: float
    basis_angle_max_deg: float
    emp_tangent_angle_mean_deg: float
    emp_tangent_angle_max_deg: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WitnessReport:
    q: WitnessQ
    nu: WitnessNu
    q_pass: bool
    nu_pass: bool
    support_score: float

    def to_dict(self) -> dict:
        return {
            "q": self.q.to_dict(),
            "nu": self.nu.to_dict(),
            "q_pass": self.q_pass,
            "nu_pass": self.nu_pass,
            "support_score": self.support_score,
        }


@dataclass(frozen=True)
class ClaimVerdict:
    verdict: str
    q_pass: bool
    nu_pass: bool
    coupling_positive: bool
    controls_clean: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _gated(q: WitnessQ, nu: WitnessNu, policy: ThresholdPolicy) -> list[tuple[float, float]]:
    return [
        (q.basis_angle_mean_deg, policy.basis_mean_max_deg),
        (q.basis_angle_max_deg, policy.basis_max_max_deg),
        (q.emp_tangent_angle_mean_deg, policy.emp_mean_max_deg),
        (q.emp_tangent_angle_max_deg, policy.emp_max_max_deg),
        (nu.occ_w2_sq_norm, policy.occ_w2_max),
        (nu.energy_distance_norm, policy.energy_max),
    ]


def gate_witness(q: WitnessQ, nu: WitnessNu, policy: ThresholdPolicy = ThresholdPolicy()) -> WitnessReport:
    pairs = _gated(q, nu, policy)
    q_pass = all(v <= t for v, t in pairs[:4])
    nu_pass = all(v <= t for v, t in pairs[4:])
    score = math.fsum(min(max(1.0 - v / t, 0.0), 1.0) for v, t in pairs) / len(pairs)
    return WitnessReport(q=q, nu=nu, q_pass=q_pass, nu_pass=nu_pass, support_score=score)


def witness_q(source: TangentChart, target_points, target_chart: TangentChart) -> WitnessQ:
    angles = principal_angles(source.basis, target_chart.basis)
    emp_mean, emp_max = empirical_tangent_angles(target_points, source)
    return WitnessQ(
        basis_angle_mean_deg=float(np.mean(angles)),
        basis_angle_max_deg=float(np.max(angles)),
        emp_tangent_angle_mean_deg=emp_mean,
        emp_tangent_angle_max_deg=emp_max,
    )


def measure_witness(
    source: TangentChart,
    target_points,
    target_chart: TangentChart | None = None,
    tangent_policy: TangentPolicy = TangentPolicy(),
) -> tuple[WitnessQ, WitnessNu, TangentChart]:
    """Witness metrics of target rows against a frozen source chart.

    The target chart is re-fit on ``target_points`` unless one is given.
    Occupancy compares the source chart's reference sample with the target
    rows projected into the source chart.
    """
    pts = np.atleast_2d(np.asarray(target_points, dtype=float))
    if target_chart is None:
        target_chart = estimate_tangent(pts, tangent_policy)
    q = witness_q(source, pts, target_chart)
    nu = witness_nu(reference_sample(source), project_into_chart(pts, source))
    return q, nu, target_chart


def adjudicate(q_pass: bool, nu_pass: bool, coupling_positive: bool, controls_clean: bool) -> ClaimVerdict:
    if not q_pass:
        verdict = NO_SUPPORT
    elif not (coupling_positive and controls_clean):
        verdict = LOCALISATION
    elif nu_pass:
        verdict = EXACT_IDENTITY
    else:
        verdict = REDISTRIBUTION
    return ClaimVerdict(verdict, bool(q_pass), bool(nu_pass), bool(coupling_positive), bool(controls_clean))


def coupling_positive(report, controls: Sequence[float], policy: ThresholdPolicy = ThresholdPolicy()) -> tuple[bool, bool]:
    """(coupling positive, controls clean) for a coupling report.

    An empty control list counts as clean but emits EmptyControlsWarning.
    """
    positive = report.auc >= 0.5 + policy.coupling_auc_margin and report.mean_gap > 0
    controls = list(controls)
    if not controls:
        warnings.warn("no control AUCs supplied; controls_clean defaults to true", EmptyControlsWarning, stacklevel=2)
        return bool(positive), True
    bar = float(np.quantile(np.asarray(controls, dtype=float), policy.control_percentile_min))
    return bool(positive), bool(report.auc > bar)
