"""Candidate band search, witness-first ranking, freeze and replay."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .charts import TangentChart, TangentPolicy, estimate_tangent
from .controls import ControlSpec, ScoringConfig, axis_scores, default_battery, run_control_battery
from .coupling import CouplingReport, couple, split_by_role
from .dataset import (
    ActivationTable,
    DatasetManifest,
    Site,
    atomic_write_text,
    content_hash,
    freeze_manifest,
    load_table,
    role_counts,
)
from .errors import (
    DegenerateError,
    DenominatorMismatchError,
    FreezeViolationError,
    HashMismatchError,
    ValidationError,
)
from .hashing import digest_json, pretty_json
from .witness import ClaimVerdict, ThresholdPolicy, WitnessReport, adjudicate, coupling_positive, gate_witness, measure_witness

log = logging.getLogger(__name__)

FREEZE_SCHEMA_VERSION = 1


def enumerate_band(layers: Sequence[int], spans: Sequence[str], surface: str) -> list[Site]:
    """Layer-major Cartesian product of layers and spans."""
    if not layers or not spans:
        raise ValidationError("band needs at least one layer and one span")
    return [Site(int(layer), span, surface) for layer in layers for span in spans]


class SourceFamily:
    """Frozen source-defined family: an ordered list of charts."""

    def __init__(self, charts: Sequence[TangentChart]):
        if not charts:
            raise ValidationError("source family is empty")
        self.charts = list(charts)

    def match(self, site: Site) -> TangentChart:
        """Chart at the same (layer, span); else the first chart with the same span."""
        for c in self.charts:
            if c.site is not None and (c.site.layer, c.site.span) == (site.layer, site.span):
                return c
        for c in self.charts:
            if c.site is not None and c.site.span == site.span:
                return c
        if len(self.charts) == 1:
            return self.charts[0]
        raise ValidationError(f"no source chart matches site {site.key}")

    def to_dict(self) -> dict:
        return {"charts": [c.to_dict() for c in self.charts]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SourceFamily":
        return cls([TangentChart.from_dict(c) for c in d["charts"]])

    @property
    def digest(self) -> str:
        return digest_json(self.to_dict())

    def save(self, path) -> None:
        atomic_write_text(path, pretty_json(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SourceFamily":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class CandidateScore:
    site: Site
    candidate_index: int
    axis_norm: float
    summary_score: float
    witness: WitnessReport
    n_rows: int = 0

    def to_dict(self) -> dict:
        return {
            "site": self.site.to_dict(),
            "candidate_index": self.candidate_index,
            "axis_norm": self.axis_norm,
            "summary_score": self.summary_score,
            "n_rows": self.n_rows,
            "witness": self.witness.to_dict(),
        }


def rank_key(c: CandidateScore):
    """Witness-first ordering: q_pass, then support score, then discovery strength."""
    return (not c.witness.q_pass, -c.witness.support_score, -c.summary_score, c.candidate_index)


def condition_axis(rows: ActivationTable, positive_role: str = "informative", negative_role: str = "null_control") -> np.ndarray:
    pos = rows.select(authoritative=True, role=positive_role)
    neg = rows.select(authoritative=True, role=negative_role)
    if pos.n_rows == 0 or neg.n_rows == 0:
        raise DegenerateError("axis needs rows from both conditions")
    return pos.values.mean(axis=0) - neg.values.mean(axis=0)


def score_candidates(
    band: Sequence[Site],
    data: ActivationTable,
    source_family: SourceFamily,
    policy: ThresholdPolicy = ThresholdPolicy(),
    tangent_policy: TangentPolicy = TangentPolicy(),
    positive_role: str = "informative",
    negative_role: str = "null_control",
) -> list[CandidateScore]:
    out = []
    for idx, site in enumerate(band):
        rows = data.select(site=site, authoritative=True)
        if rows.n_rows == 0:
            raise ValidationError(f"site {site.key} has no rows")
        q, nu, _ = measure_witness(source_family.match(site), rows.values, tangent_policy=tangent_policy)
        axis = condition_axis(rows, positive_role, negative_role)
        axis_norm = float(np.linalg.norm(axis))
        out.append(
            CandidateScore(
                site=site,
                candidate_index=idx,
                axis_norm=axis_norm,
                summary_score=axis_norm * math.sqrt(rows.n_rows),
                witness=gate_witness(q, nu, policy),
                n_rows=rows.n_rows,
            )
        )
    return sorted(out, key=rank_key)


def check_disjoint(discovery: ActivationTable, confirmatory: ActivationTable) -> None:
    shared = sorted(set(discovery.row_ids) & set(confirmatory.row_ids))
    if shared:
        raise FreezeViolationError(
            f"{len(shared)} row_id(s) shared between discovery and confirmatory tables, first {shared[0]!r}",
            row_ids=shared,
        )


@dataclass
class FreezeManifest:
    source_family: SourceFamily
    band: list[Site]
    selected: CandidateScore
    frozen_chart: TangentChart
    axis: np.ndarray
    discovery: DatasetManifest
    confirmatory: DatasetManifest
    expected_counts: dict[str, int]
    policy: ThresholdPolicy
    seed: int
    controls: list[ControlSpec] = field(default_factory=list)
    n_boot: int = 10_000
    n_perm: int = 9_999
    alpha: float = 0.05
    refit_confirmatory: bool = True
    positive_role: str = "informative"
    negative_role: str = "null_control"
    tangent_policy: TangentPolicy = TangentPolicy()

    @property
    def source_family_hash(self) -> str:
        return self.source_family.digest

    def body(self) -> dict:
        tp = self.tangent_policy
        return {
            "schema_version": FREEZE_SCHEMA_VERSION,
            "source_family_hash": self.source_family_hash,
            "source_family": self.source_family.to_dict(),
            "band": [s.to_dict() for s in self.band],
            "selected": self.selected.to_dict(),
            "frozen_chart": self.frozen_chart.to_dict(),
            "axis": self.axis.tolist(),
            "discovery": self.discovery.to_dict(include_paths=False),
            "confirmatory": self.confirmatory.to_dict(include_paths=False),
            "expected_counts": dict(sorted(self.expected_counts.items())),
            "policy": self.policy.to_dict(),
            "tangent_policy": {"max_dim": tp.max_dim, "variance_explained": tp.variance_explained,
                               "min_support": tp.min_support, "rank": tp.rank},
            "seed": int(self.seed),
            "controls": [c.to_dict() for c in self.controls],
            "n_boot": int(self.n_boot),
            "n_perm": int(self.n_perm),
            "alpha": float(self.alpha),
            "refit_confirmatory": bool(self.refit_confirmatory),
            "positive_role": self.positive_role,
            "negative_role": self.negative_role,
        }

    def to_dict(self) -> dict:
        body = self.body()
        body["manifest_hash"] = digest_json(body)
        return body

    @property
    def manifest_hash(self) -> str:
        return digest_json(self.body())

    def save(self, path) -> Path:
        atomic_write_text(path, pretty_json(self.to_dict()))
        return Path(path)

    @classmethod
    def from_dict(cls, d: Mapping) -> "FreezeManifest":
        body = {k: v for k, v in d.items() if k != "manifest_hash"}
        if "manifest_hash" in d and digest_json(body) != d["manifest_hash"]:
            raise HashMismatchError("freeze manifest body does not match its manifest_hash")
        family = SourceFamily.from_dict(d["source_family"])
        if family.digest != d["source_family_hash"]:
            raise HashMismatchError("source family does not match source_family_hash")
        sel = d["selected"]
        w = sel["witness"]
        from .occupancy import WitnessNu
        from .witness import WitnessQ

        witness = WitnessReport(
            q=WitnessQ(**w["q"]), nu=WitnessNu(**w["nu"]),
            q_pass=w["q_pass"], nu_pass=w["nu_pass"], support_score=w["support_score"],
        )
        tp = d.get("tangent_policy") or {}
        return cls(
            source_family=family,
            band=[Site.from_dict(s) for s in d["band"]],
            selected=CandidateScore(Site.from_dict(sel["site"]), sel["candidate_index"], sel["axis_norm"],
                                    sel["summary_score"], witness, sel.get("n_rows", 0)),
            frozen_chart=TangentChart.from_dict(d["frozen_chart"]),
            axis=np.asarray(d["axis"], dtype=float),
            discovery=DatasetManifest.from_dict(d["discovery"]),
            confirmatory=DatasetManifest.from_dict(d["confirmatory"]),
            expected_counts=dict(d["expected_counts"]),
            policy=ThresholdPolicy.from_dict(d["policy"]),
            seed=int(d["seed"]),
            controls=[ControlSpec.from_dict(c) for c in d.get("controls", [])],
            n_boot=int(d["n_boot"]),
            n_perm=int(d["n_perm"]),
            alpha=float(d["alpha"]),
            refit_confirmatory=bool(d["refit_confirmatory"]),
            positive_role=d.get("positive_role", "informative"),
            negative_role=d.get("negative_role", "null_control"),
            tangent_policy=TangentPolicy(**tp) if tp else TangentPolicy(),
        )

    @classmethod
    def load(cls, path) -> "FreezeManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def freeze(
    selected: CandidateScore,
    discovery_path,
    confirmatory_path,
    source_family: SourceFamily,
    band: Sequence[Site],
    policy: ThresholdPolicy = ThresholdPolicy(),
    seed: int = 0,
    controls: Sequence[ControlSpec] | None = None,
    n_boot: int = 10_000,
    n_perm: int = 9_999,
    alpha: float = 0.05,
    refit_confirmatory: bool = True,
    tangent_policy: TangentPolicy = TangentPolicy(),
    positive_role: str = "informative",
    negative_role: str = "null_control",
    out_path=None,
) -> FreezeManifest:
    """Fix the selected site, its chart and scoring axis, and the confirmatory bytes.

    The confirmatory table is only read to check row-id disjointness and to
    record its denominators; nothing is scored here.
    """
    discovery = load_table(discovery_path)
    confirmatory = load_table(confirmatory_path)
    check_disjoint(discovery, confirmatory)
    rows = discovery.select(site=selected.site, authoritative=True)
    chart = estimate_tangent(rows.values, tangent_policy, site=selected.site)
    axis = condition_axis(rows, positive_role, negative_role)
    conf_rows = confirmatory.select(site=selected.site)
    counts = role_counts(conf_rows)
    expected = {r: counts.get(r, 0) for r in (positive_role, negative_role)}
    manifest = FreezeManifest(
        source_family=source_family,
        band=list(band),
        selected=selected,
        frozen_chart=chart,
        axis=axis,
        discovery=freeze_manifest([discovery_path]),
        confirmatory=freeze_manifest([confirmatory_path]),
        expected_counts=expected,
        policy=policy,
        seed=int(seed),
        controls=list(controls) if controls is not None else default_battery(seed),
        n_boot=n_boot,
        n_perm=n_perm,
        alpha=alpha,
        refit_confirmatory=refit_confirmatory,
        positive_role=positive_role,
        negative_role=negative_role,
        tangent_policy=tangent_policy,
    )
    if out_path is not None:
        manifest.save(out_path)
    return manifest


@dataclass
class ReplayResult:
    witness: WitnessReport
    coupling: CouplingReport
    verdict: ClaimVerdict
    controls: list = field(default_factory=list)
    control_percentile: float | None = None
    manifest_hash: str = ""
    confirmatory_hash: str = ""
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "manifest_hash": self.manifest_hash,
            "confirmatory_hash": self.confirmatory_hash,
            "witness": self.witness.to_dict(),
            "coupling": self.coupling.to_dict(),
            "verdict": self.verdict.to_dict(),
            "controls": [c.to_dict() for c in self.controls],
            "control_percentile": self.control_percentile,
            "warnings": list(self.warnings),
        }

    def __iter__(self):
        return iter((self.witness, self.coupling, self.verdict))


def replay(manifest: FreezeManifest, confirmatory_path, threads: int = 1) -> ReplayResult:
    """Score the frozen site on confirmatory rows.

    Refuses with HashMismatchError if the confirmatory bytes differ from
    the frozen digest and DenominatorMismatchError if the authoritative
    counts differ from the declared ones.
    """
    import warnings as _warnings

    from .coupling import control_percentile
    from .witness import EmptyControlsWarning

    found = content_hash([confirmatory_path])
    if found != manifest.confirmatory.content_hash:
        raise HashMismatchError(
            "confirmatory input does not match the frozen digest",
            expected=manifest.confirmatory.content_hash,
            found=found,
        )
    table = load_table(confirmatory_path)
    site = manifest.selected.site
    rows = table.select(site=site, authoritative=True)
    counts = role_counts(rows)
    found_counts = {r: counts.get(r, 0) for r in manifest.expected_counts}
    if found_counts != manifest.expected_counts:
        raise DenominatorMismatchError(
            f"denominators {found_counts} differ from declared {manifest.expected_counts}",
            expected=manifest.expected_counts,
            found=found_counts,
        )

    chart = manifest.frozen_chart
    scores = axis_scores(rows.values, chart.centroid, manifest.axis)
    pos, neg = split_by_role(rows, scores, manifest.positive_role, manifest.negative_role)
    report = couple(pos, neg, manifest.n_boot, manifest.n_perm, manifest.seed, manifest.alpha, threads=threads)

    source = manifest.source_family.match(site)
    target_chart = None if manifest.refit_confirmatory else chart
    q, nu, _ = measure_witness(source, rows.values, target_chart, manifest.tangent_policy)
    witness = gate_witness(q, nu, manifest.policy)

    scorer = ScoringConfig(
        axis=manifest.axis,
        positive_role=manifest.positive_role,
        negative_role=manifest.negative_role,
        n_boot=max(100, manifest.n_boot // 10),
        n_perm=max(99, manifest.n_perm // 10),
        alpha=manifest.alpha,
        threads=threads,
    )
    nearby = {c.site: c for c in manifest.source_family.charts if c.site is not None}
    results = run_control_battery(chart, table.select(authoritative=True), manifest.controls, scorer, nearby)
    control_aucs = [r.report.auc for r in results]
    notes = []
    with _warnings.catch_warnings(record=True) as caught:
        _warnings.simplefilter("always", EmptyControlsWarning)
        positive, clean = coupling_positive(report, control_aucs, manifest.policy)
    if caught:
        notes.append("no_controls")
    verdict = adjudicate(witness.q_pass, witness.nu_pass, positive, clean)
    return ReplayResult(
        witness=witness,
        coupling=report,
        verdict=verdict,
        controls=results,
        control_percentile=control_percentile(report.auc, control_aucs) if control_aucs else None,
        manifest_hash=manifest.manifest_hash,
        confirmatory_hash=found,
        warnings=notes,
    )
