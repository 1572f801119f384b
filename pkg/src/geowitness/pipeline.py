"""Run configuration, content-addressed stage reports and the staged pipeline.

Every stage writes ``<stage>-<digest>.json`` where the digest is taken over
the report body (resolved config, seed, input digests, result). Reports
carry no timestamps and no thread counts, so re-running a report's config
on the same bytes reproduces it byte for byte.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .bridge import BridgeSummary, FoldResult, FrozenAtlas, aggregate_folds, reentry_summary, run_folds
from .charts import TangentPolicy, estimate_tangent
from .controls import ControlSpec, default_battery
from .dataset import (
    DEFAULT_ALIASES,
    ActivationTable,
    ConditionAliasMap,
    Site,
    atomic_write_text,
    content_hash,
    denominator_counts,
    load_table,
    resolve_conditions,
    role_counts,
)
from .errors import DenominatorMismatchError, GeoWitnessError, ValidationError
from .hashing import digest_json, pretty_json, sha256_hex
from .search import FreezeManifest, SourceFamily, enumerate_band, freeze, replay, score_candidates
from .witness import ThresholdPolicy, adjudicate

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
STAGES = ("ingest", "tangent", "search", "freeze", "replay", "controls", "bridge", "reentry", "report")

UNITS = {
    "ingest": "input tables",
    "tangent": "source-defined family",
    "search": "candidate band",
    "freeze": "selected site",
    "replay": "frozen site on confirmatory rows",
    "controls": "control battery",
    "bridge": "held-out group folds",
    "reentry": "target rows against the frozen chart",
}


def file_digest(path) -> str:
    """Content hash of a table (with sidecar) or the SHA-256 of any other file."""
    p = Path(path)
    if p.suffix == ".atlg":
        return content_hash([p])
    return sha256_hex(p.read_bytes())


def write_report(out_dir, stage: str, result: Any, config: Mapping | None = None,
                 seed: int | None = None, inputs: Mapping[str, str] | None = None,
                 outcome: str | None = None, verdict: str | None = None) -> Path:
    body = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "stage": stage,
        "config": dict(config or {}),
        "seed": seed,
        "inputs": dict(sorted((inputs or {}).items())),
        "result": result,
    }
    if outcome is not None:
        body["outcome"] = outcome
    if verdict is not None:
        body["verdict"] = verdict
    digest = digest_json(body)
    body["report_digest"] = digest
    path = Path(out_dir) / f"{stage}-{digest[:16]}.json"
    atomic_write_text(path, pretty_json(body))
    return path


def parse_expect(items) -> dict[str, int]:
    """``["informative=32", ...]`` or a mapping -> {role: count}."""
    if isinstance(items, Mapping):
        return {str(k): int(v) for k, v in items.items()}
    out = {}
    for item in items or ():
        role, sep, count = str(item).partition("=")
        if not sep or not count.strip().isdigit():
            raise ValidationError(f"expected ROLE=COUNT, got {item!r}")
        out[role.strip()] = int(count)
    return out


def _path(base: Path, value) -> str | None:
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else (base / p).resolve())


@dataclass
class RunConfig:
    """Fully serializable description of one pipeline run.

    Relative paths are resolved against ``base_dir`` (the config file's
    directory) when the config is loaded.
    """

    discovery: str | None = None
    confirmatory: str | None = None
    source: str | None = None
    family: str | None = None
    manifest: str | None = None
    aliases: dict | None = None
    band: dict | None = None
    policy: dict = field(default_factory=dict)
    tangent: dict = field(default_factory=dict)
    controls: dict | list | None = None
    seed: int = 0
    n_boot: int = 10_000
    n_perm: int = 9_999
    alpha: float = 0.05
    refit_confirmatory: bool = True
    select: int = 0
    expect: dict = field(default_factory=dict)
    bridge: dict | None = None
    reentry: dict | None = None
    stages: list | None = None

    _PATH_FIELDS = ("discovery", "confirmatory", "source", "family", "manifest")

    @classmethod
    def from_dict(cls, d: Mapping, base_dir=".") -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        base = Path(base_dir)
        kw = dict(d)
        for name in cls._PATH_FIELDS:
            kw[name] = _path(base, kw.get(name))
        if isinstance(kw.get("aliases"), str):
            kw["aliases"] = json.loads(Path(_path(base, kw["aliases"])).read_text(encoding="utf-8"))
        for section, keys in (("bridge", ("folds", "atlas", "table")), ("reentry", ("family", "table"))):
            if kw.get(section):
                sec = dict(kw[section])
                for k in keys:
                    if k in sec:
                        sec[k] = _path(base, sec[k])
                kw[section] = sec
        kw["expect"] = parse_expect(kw.get("expect") or {})
        cfg = cls(**kw)
        if cfg.stages is not None:
            bad = [s for s in cfg.stages if s not in STAGES]
            if bad:
                raise ValidationError(f"unknown stages {bad}; expected a subset of {list(STAGES)}")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{p}: config is not valid JSON: {exc}") from None
        return cls.from_dict(data, p.parent)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if not k.startswith("_")}

    @property
    def threshold_policy(self) -> ThresholdPolicy:
        return ThresholdPolicy.from_dict(self.policy)

    @property
    def tangent_policy(self) -> TangentPolicy:
        return TangentPolicy(**self.tangent)

    @property
    def alias_map(self) -> ConditionAliasMap:
        return ConditionAliasMap.from_dict(self.aliases) if self.aliases else DEFAULT_ALIASES

    def control_specs(self) -> list[ControlSpec]:
        if self.controls is None:
            return default_battery(self.seed)
        if isinstance(self.controls, list):
            return [ControlSpec.from_dict(c) for c in self.controls]
        c = dict(self.controls)
        return default_battery(self.seed, int(c.get("n_null", 7)), int(c.get("n_random", 7)),
                               int(c.get("n_orthogonal", 7)))

    def band_sites(self, table: ActivationTable | None) -> list[Site]:
        if self.band:
            return enumerate_band(self.band["layers"], self.band["spans"], self.band.get("surface", "delta"))
        if table is None:
            raise ValidationError("no band configured and no discovery table to read sites from")
        return table.sites()


def load_resolved(path, aliases: ConditionAliasMap) -> ActivationTable:
    return resolve_conditions(load_table(path), aliases)


def check_expected(table: ActivationTable, expect: Mapping[str, int], name: str) -> None:
    if not expect:
        return
    found = role_counts(table)
    bad = {r: (n, found.get(r, 0)) for r, n in expect.items() if found.get(r, 0) != n}
    if bad:
        detail = ", ".join(f"{r}: declared {n}, found {m}" for r, (n, m) in sorted(bad.items()))
        raise DenominatorMismatchError(f"{name} denominators differ from declared counts ({detail})",
                                       expected=dict(expect), found=found)


def table_summary(table: ActivationTable) -> dict:
    return {
        "n_rows": table.n_rows,
        "dim": table.dim,
        "sites": [s.key for s in table.sites()],
        "counts_by_condition_and_label": denominator_counts(table),
        "role_counts": role_counts(table),
    }


def fit_family(table: ActivationTable, sites, policy: TangentPolicy) -> SourceFamily:
    charts = []
    for site in sites:
        rows = table.select(site=site, authoritative=True)
        if rows.n_rows:
            charts.append(estimate_tangent(rows.values, policy, site=site))
    if not charts:
        raise ValidationError("no rows at any requested site to fit a family")
    return SourceFamily(charts)


def chart_summary(chart) -> dict:
    return {
        "site": chart.site.key if chart.site is not None else None,
        "rank": chart.rank,
        "n_support": chart.n_support,
        "scale": chart.scale,
        "spectrum": chart.spectrum.tolist(),
        "content_hash": chart.to_dict()["content_hash"],
    }


def load_folds(path) -> list[FoldResult]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    rows = data["folds"] if isinstance(data, Mapping) else data
    return [FoldResult.from_dict(r) for r in rows]


def bridge_verdict(summary: BridgeSummary) -> str:
    """Ladder verdict for a fold bridge: q and nu must hold in every scored fold."""
    positive = summary.n_positive == summary.n_scored and summary.mean_auc > 0.5
    return adjudicate(summary.q_pass_fraction == 1.0, summary.nu_pass_fraction == 1.0, positive, True).verdict


def control_ranking(observed_auc: float, controls) -> list[dict]:
    rows = [{"label": "frozen site", "kind": "frozen", "seed": None, "auc": observed_auc}]
    rows += [{"label": f"{c.spec.kind}#{c.spec.seed}", "kind": c.spec.kind, "seed": c.spec.seed,
              "auc": c.report.auc, "basis_angle_mean_deg": c.basis_angle_mean_deg} for c in controls]
    return sorted(rows, key=lambda r: (-r["auc"], r["label"]))


@dataclass
class StageRecord:
    stage: str
    status: str  # "ok", "skipped", "failed"
    outcome: str = ""
    verdict: str | None = None
    report: str | None = None

    def to_dict(self) -> dict:
        return {"stage": self.stage, "unit": UNITS.get(self.stage, ""), "status": self.status,
                "outcome": self.outcome, "verdict": self.verdict,
                "report": Path(self.report).name if self.report else None}


class PipelineFailure(Exception):
    """Raised after the summary is written; carries the original error."""

    def __init__(self, error: GeoWitnessError | OSError, summary_path: Path):
        super().__init__(str(error))
        self.error = error
        self.summary_path = summary_path


@dataclass
class PipelineResult:
    summary: dict
    summary_path: Path
    reports: dict[str, Path]


class _Run:
    def __init__(self, cfg: RunConfig, out_dir, threads: int):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.threads = threads
        self.config = cfg.to_dict()
        self.records: list[StageRecord] = []
        self.reports: dict[str, Path] = {}
        self.tables: dict[str, ActivationTable] = {}
        self.family: SourceFamily | None = None
        self.ranking = None
        self.manifest_path: Path | None = None
        self.replayed = None
        self.bridge_summary = None

    def wanted(self, stage: str) -> bool:
        return self.cfg.stages is None or stage in self.cfg.stages

    def explicit(self, stage: str) -> bool:
        return self.cfg.stages is not None and stage in self.cfg.stages

    def emit(self, stage: str, result, inputs, outcome: str, verdict: str | None = None) -> None:
        path = write_report(self.out, stage, result, self.config, self.cfg.seed, inputs, outcome, verdict)
        self.reports[stage] = path
        self.records.append(StageRecord(stage, "ok", outcome, verdict, str(path)))
        log.info("%s: %s", stage, outcome)

    def skip(self, stage: str, why: str) -> None:
        if self.explicit(stage):
            raise ValidationError(f"stage {stage} requested but {why}")
        self.records.append(StageRecord(stage, "skipped", why))

    # stages -------------------------------------------------------------

    def ingest(self):
        cfg = self.cfg
        named = {k: getattr(cfg, k) for k in ("source", "discovery", "confirmatory") if getattr(cfg, k)}
        if not named:
            return self.skip("ingest", "no input tables configured")
        result, inputs = {}, {}
        for name, path in named.items():
            table = load_resolved(path, cfg.alias_map)
            self.tables[name] = table
            inputs[name] = content_hash([path])
            result[name] = table_summary(table) | {"content_hash": inputs[name]}
        self.emit("ingest", result, inputs, f"{len(named)} table(s) resolved and hashed")

    def tangent(self):
        cfg = self.cfg
        if cfg.family:
            self.family = SourceFamily.load(cfg.family)
            inputs = {"family": file_digest(cfg.family)}
        elif "source" in self.tables:
            sites = cfg.band_sites(self.tables.get("discovery", self.tables["source"]))
            self.family = fit_family(self.tables["source"], sites, cfg.tangent_policy)
            self.family.save(self.out / f"family-{self.family.digest[:16]}.json")
            inputs = {"source": content_hash([cfg.source])}
        else:
            return self.skip("tangent", "no source family or source table configured")
        result = {"family_digest": self.family.digest, "charts": [chart_summary(c) for c in self.family.charts]}
        ranks = ",".join(str(c.rank) for c in self.family.charts)
        self.emit("tangent", result, inputs, f"{len(self.family.charts)} chart(s), ranks {ranks}")

    def search(self):
        cfg = self.cfg
        if cfg.manifest:
            return self.skip("search", "using a pre-frozen manifest")
        if self.family is None or "discovery" not in self.tables:
            return self.skip("search", "needs a source family and a discovery table")
        band = cfg.band_sites(self.tables["discovery"])
        self.ranking = score_candidates(band, self.tables["discovery"], self.family, cfg.threshold_policy,
                                        cfg.tangent_policy)
        top = self.ranking[0]
        result = {"band": [s.key for s in band], "ranking": [c.to_dict() for c in self.ranking]}
        inputs = {"discovery": content_hash([cfg.discovery]), "family": self.family.digest}
        self.emit("search", result, inputs, f"top candidate {top.site.key} (q_pass={top.witness.q_pass})")

    def freeze(self):
        cfg = self.cfg
        if cfg.manifest:
            self.manifest_path = Path(cfg.manifest)
            return self.skip("freeze", "using a pre-frozen manifest")
        if self.ranking is None or not cfg.confirmatory:
            return self.skip("freeze", "needs a search ranking and a confirmatory table")
        if not 0 <= cfg.select < len(self.ranking):
            raise ValidationError(f"select={cfg.select} is outside the ranking of {len(self.ranking)}")
        selected = self.ranking[cfg.select]
        check_expected(self.tables["confirmatory"].select(site=selected.site, authoritative=True),
                       cfg.expect, "confirmatory")
        m = freeze(selected, cfg.discovery, cfg.confirmatory, self.family,
                   cfg.band_sites(self.tables["discovery"]), cfg.threshold_policy, cfg.seed,
                   cfg.control_specs(), cfg.n_boot, cfg.n_perm, cfg.alpha, cfg.refit_confirmatory,
                   cfg.tangent_policy)
        self.manifest_path = self.out / f"manifest-{m.manifest_hash[:16]}.json"
        m.save(self.manifest_path)
        result = {"manifest_hash": m.manifest_hash, "manifest": self.manifest_path.name,
                  "selected": selected.site.key, "expected_counts": m.expected_counts,
                  "confirmatory_hash": m.confirmatory.content_hash}
        self.emit("freeze", result, {"discovery": m.discovery.content_hash, "confirmatory": m.confirmatory.content_hash},
                  f"froze {selected.site.key}")

    def replay(self):
        cfg = self.cfg
        if self.manifest_path is None or not cfg.confirmatory:
            return self.skip("replay", "needs a freeze manifest and a confirmatory table")
        manifest = FreezeManifest.load(self.manifest_path)
        self.replayed = replay(manifest, cfg.confirmatory, threads=self.threads)
        r = self.replayed
        outcome = (f"AUC {r.coupling.auc:.3f}, gap {r.coupling.mean_gap:.3f}, "
                   f"q_pass={r.witness.q_pass}, nu_pass={r.witness.nu_pass}")
        inputs = {"manifest": manifest.manifest_hash, "confirmatory": r.confirmatory_hash}
        self.emit("replay", r.to_dict(), inputs, outcome, r.verdict.verdict)

    def controls(self):
        if self.replayed is None:
            return self.skip("controls", "needs a replay")
        r = self.replayed
        result = {
            "control_percentile": r.control_percentile,
            "ranking": control_ranking(r.coupling.auc, r.controls),
            "battery": [c.to_dict() for c in r.controls],
        }
        top = max((c.report.auc for c in r.controls), default=None)
        outcome = f"{len(r.controls)} controls, max AUC {top:.3f}" if top is not None else "no controls"
        self.emit("controls", result, {"replay": self.reports["replay"].stem.split("-")[-1]}, outcome)

    def bridge(self):
        spec = self.cfg.bridge
        if not spec:
            return self.skip("bridge", "no bridge section configured")
        n_boot = int(spec.get("n_boot", self.cfg.n_boot))
        if "folds" in spec:
            folds = load_folds(spec["folds"])
            inputs = {"folds": file_digest(spec["folds"])}
        else:
            atlas = FrozenAtlas.load(spec["atlas"])
            data = load_resolved(spec["table"], self.cfg.alias_map)
            folds = run_folds(atlas, data, Site.parse(spec["lane"]), spec.get("groups"),
                              self.cfg.threshold_policy, self.cfg.tangent_policy,
                              use_stored_assignment=bool(spec.get("use_stored_assignment", False)))
            inputs = {"atlas": file_digest(spec["atlas"]), "table": content_hash([spec["table"]])}
        summary = aggregate_folds(folds, n_boot=n_boot, seed=self.cfg.seed, alpha=self.cfg.alpha)
        self.bridge_summary = summary
        outcome = (f"mean AUC {summary.mean_auc:.3f}, mean gap {summary.mean_gap:.3f}, "
                   f"{summary.n_positive}/{summary.n_scored} positive, sign p {summary.sign_p:.5f}")
        self.emit("bridge", summary.to_dict(), inputs, outcome, bridge_verdict(summary))

    def reentry(self):
        cfg = self.cfg
        spec = cfg.reentry or {}
        branch = spec.get("branch_field", "role")
        thr = float(spec.get("assignment_threshold", 2.5))
        ang = float(spec.get("angle_threshold_deg", 70.0))
        if spec.get("family") and spec.get("site") and spec.get("table"):
            site = Site.parse(spec["site"])
            chart = SourceFamily.load(spec["family"]).match(site)
            rows = load_resolved(spec["table"], cfg.alias_map).select(site=site)
            inputs = {"family": file_digest(spec["family"]), "table": content_hash([spec["table"]])}
        elif self.manifest_path is not None and "confirmatory" in self.tables:
            manifest = FreezeManifest.load(self.manifest_path)
            site = manifest.selected.site
            chart = manifest.source_family.match(site)
            rows = self.tables["confirmatory"].select(site=site)
            inputs = {"manifest": manifest.manifest_hash, "confirmatory": content_hash([cfg.confirmatory])}
        else:
            return self.skip("reentry", "no re-entry target configured")
        s = reentry_summary(rows, chart, thr, ang, branch)
        rates = ", ".join(f"{k} {v:.2f}" for k, v in s.acceptance.items())
        self.emit("reentry", s.to_dict() | {"site": site.key}, inputs, f"acceptance {rates}")

    def summary(self, status: str, error: GeoWitnessError | OSError | None = None, failed: str | None = None) -> dict:
        if self.replayed is not None:
            verdict = self.replayed.verdict.verdict
        elif self.bridge_summary is not None:
            verdict = bridge_verdict(self.bridge_summary)
        else:
            verdict = None
        out = {
            "status": status,
            "verdict": verdict,
            "stages": [r.to_dict() for r in self.records],
        }
        if self.bridge_summary is not None:
            out["bridge"] = {k: v for k, v in self.bridge_summary.to_dict().items() if k != "folds"}
        if self.replayed is not None:
            out["replay"] = {"auc": self.replayed.coupling.auc, "mean_gap": self.replayed.coupling.mean_gap,
                             "verdict": self.replayed.verdict.to_dict()}
        if failed is not None:
            out["failed_stage"] = failed
            out["error"] = error.to_dict() if isinstance(error, GeoWitnessError) else {"reason": "io_error",
                                                                                        "message": str(error)}
        return out


def run_pipeline(cfg: RunConfig, out_dir, threads: int = 1) -> PipelineResult:
    """Run the configured stages in order and write one report per stage.

    A stage error stops the run; the summary is still written with
    status ``incomplete`` and the error's reason code, then
    :class:`PipelineFailure` is raised.
    """
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    run = _Run(cfg, out_dir, threads)
    steps: dict[str, Callable] = {s: getattr(run, s) for s in STAGES if s != "report"}
    for stage, fn in steps.items():
        if not run.wanted(stage):
            continue
        try:
            fn()
        except (GeoWitnessError, OSError) as exc:
            run.records.append(StageRecord(stage, "failed", getattr(exc, "reason", "io_error")))
            summary = run.summary("incomplete", exc, stage)
            path = write_report(out_dir, "report", summary, run.config, cfg.seed, {})
            raise PipelineFailure(exc, path) from exc
    summary = run.summary("complete")
    path = write_report(out_dir, "report", summary, run.config, cfg.seed,
                        {s: p.stem.rsplit("-", 1)[-1] for s, p in run.reports.items()})
    run.reports["report"] = path
    return PipelineResult(summary, path, run.reports)


def summarize_reports(paths) -> dict:
    """Summary rows from existing stage report files, in pipeline order."""
    found = []
    for p in paths:
        body = json.loads(Path(p).read_text(encoding="utf-8"))
        stage = body.get("stage")
        if stage in UNITS:
            found.append((STAGES.index(stage), Path(p).name, body))
    rows = []
    verdict = None
    for _, name, body in sorted(found):
        v = body.get("verdict")
        if body["stage"] == "replay" or (body["stage"] == "bridge" and verdict is None):
            verdict = v
        rows.append({"stage": body["stage"], "unit": UNITS[body["stage"]], "status": "ok",
                     "outcome": body.get("outcome", ""), "verdict": v, "report": name})
    return {"status": "complete" if rows else "empty", "verdict": verdict, "stages": rows}


def write_scenario(spec, out_dir, n_boot: int = 2_000, n_perm: int = 1_999,
                   policy: ThresholdPolicy = ThresholdPolicy()) -> dict[str, Path]:
    """Write a synthetic scenario as tables, a fitted family, the analytic expectation and a run config."""
    from .dataset import save_table
    from .synth import expected_outcome, sample_source, sample_target

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    source = sample_source(spec)
    paths = {
        "source": save_table(source, out / "source.atlg"),
        "discovery": save_table(sample_target(spec, 0, "dis"), out / "discovery.atlg"),
        "confirmatory": save_table(sample_target(spec, 1, "con"), out / "confirmatory.atlg"),
    }
    family = SourceFamily([estimate_tangent(source.values, site=spec.site)])
    paths["family"] = out / "family.json"
    family.save(paths["family"])
    paths["expected"] = out / "expected.json"
    atomic_write_text(paths["expected"], pretty_json({"scenario": spec.to_dict(),
                                                      "expected": expected_outcome(spec, policy).to_dict()}))
    config = {
        "source": "source.atlg",
        "family": "family.json",
        "discovery": "discovery.atlg",
        "confirmatory": "confirmatory.atlg",
        "band": {"layers": [spec.site.layer], "spans": [spec.site.span], "surface": spec.site.surface},
        "policy": policy.to_dict(),
        "seed": int(spec.seed),
        "n_boot": int(n_boot),
        "n_perm": int(n_perm),
        "expect": {"informative": spec.n, "null_control": spec.n},
    }
    paths["config"] = out / "pipeline.json"
    atomic_write_text(paths["config"], pretty_json(config))
    return paths


def write_mcq_scenario(seed: int, out_dir, swap: bool = False) -> dict[str, Path]:
    """Write the displacement scenario with a re-entry-only run config."""
    from .dataset import save_table
    from .synth import mcq_displacement_scenario

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    source, target = mcq_displacement_scenario(seed, swap=swap)
    site = source.rows[0].site
    paths = {"source": save_table(source, out / "source.atlg"), "target": save_table(target, out / "target.atlg")}
    paths["family"] = out / "family.json"
    SourceFamily([estimate_tangent(source.values, site=site)]).save(paths["family"])
    config = {
        "seed": int(seed),
        "reentry": {"family": "family.json", "site": site.key, "table": "target.atlg", "branch_field": "role"},
        "stages": ["reentry"],
    }
    paths["config"] = out / "pipeline.json"
    atomic_write_text(paths["config"], pretty_json(config))
    return paths
