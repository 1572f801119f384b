"""Command-line entry point.

Exit codes: 0 success, 2 validation failure, 3 refusal (hash, denominator
or freeze discipline), 4 I/O error. Refusals print their reason code on
stderr as JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bridge import FrozenAtlas, aggregate_folds, reentry_summary, run_folds
from .charts import TangentPolicy
from .controls import ScoringConfig, axis_scores, default_battery, run_control_battery
from .coupling import couple, split_by_role
from .dataset import (
    DEFAULT_ALIASES,
    ConditionAliasMap,
    Site,
    build_contrast,
    content_hash,
    load_table,
    save_table,
)
from .errors import GeoWitnessError, RefusalError, ValidationError
from .pipeline import (
    UNITS,
    PipelineFailure,
    bridge_verdict,
    RunConfig,
    check_expected,
    chart_summary,
    control_ranking,
    file_digest,
    fit_family,
    load_folds,
    load_resolved,
    parse_expect,
    run_pipeline,
    summarize_reports,
    table_summary,
    write_mcq_scenario,
    write_report,
    write_scenario,
)
from .search import FreezeManifest, SourceFamily, condition_axis, enumerate_band, freeze, replay, score_candidates
from .synth import ScenarioSpec, chart_translation, expected_outcome
from .validate import validate_paths
from .witness import ThresholdPolicy, gate_witness, measure_witness

log = logging.getLogger("geowitness")

EXIT_OK, EXIT_VALIDATION, EXIT_REFUSAL, EXIT_IO = 0, 2, 3, 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, RefusalError):
        return EXIT_REFUSAL
    if isinstance(exc, (GeoWitnessError, ValueError, KeyError)):
        return EXIT_VALIDATION
    if isinstance(exc, OSError):
        return EXIT_IO
    raise exc


def _error_payload(exc: BaseException) -> dict:
    if isinstance(exc, GeoWitnessError):
        return exc.to_dict()
    if isinstance(exc, OSError):
        return {"reason": "io_error", "message": str(exc)}
    return {"reason": "validation_failure", "message": str(exc)}


# helpers --------------------------------------------------------------------


def _aliases(args) -> ConditionAliasMap:
    return ConditionAliasMap.from_file(args.aliases) if getattr(args, "aliases", None) else DEFAULT_ALIASES


def _policy(args) -> ThresholdPolicy:
    cfg = _config(args)
    return ThresholdPolicy.from_dict(cfg.get("policy") if cfg else None)


def _config(args) -> dict:
    if not args.config:
        return {}
    try:
        return json.loads(Path(args.config).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{args.config}: config is not valid JSON: {exc}") from None


def _tangent_policy(args) -> TangentPolicy:
    kw = dict(_config(args).get("tangent") or {})
    if getattr(args, "rank", None) is not None:
        kw["rank"] = args.rank
    if getattr(args, "max_dim", None) is not None:
        kw["max_dim"] = args.max_dim
    if getattr(args, "variance", None) is not None:
        kw["variance_explained"] = args.variance
    return TangentPolicy(**kw)


def _csv(text: str | None, cast=str) -> list:
    return [cast(x.strip()) for x in text.split(",") if x.strip()] if text else []


def _band(args, table) -> list[Site]:
    if args.layers and args.spans:
        return enumerate_band(_csv(args.layers, int), _csv(args.spans), args.surface)
    return table.sites()


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _argv_config(args, *names) -> dict:
    """The resolved arguments that shape a stage's result (never --threads or --out)."""
    cfg = {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}
    for key, value in list(cfg.items()):
        if key in ("table", "on", "off", "family", "manifest", "discovery", "confirmatory", "atlas", "folds",
                   "aliases", "config"):
            cfg[key] = str(Path(value).resolve())
        elif isinstance(value, list):
            cfg[key] = [str(Path(v).resolve()) for v in value] if key == "paths" else value
    return cfg


def _emit(args, stage: str, result, config: dict, inputs: dict, outcome: str | None = None,
          verdict: str | None = None) -> Path:
    path = write_report(_out(args), stage, result, config, args.seed, inputs, outcome, verdict)
    print(path)
    return path


# subcommands -----------------------------------------------------------------


def cmd_ingest(args) -> int:
    table = load_resolved(args.table, _aliases(args))
    expect = parse_expect(args.expect)
    check_expected(table, expect, Path(args.table).name)
    digest = content_hash([args.table])
    if args.resolved_out:
        save_table(table, args.resolved_out)
    _emit(args, "ingest", table_summary(table) | {"content_hash": digest},
          _argv_config(args, "table", "aliases", "expect", "resolved_out"), {"table": digest})
    return EXIT_OK


def cmd_contrast(args) -> int:
    on, off = load_table(args.on), load_table(args.off)
    delta = build_contrast(on, off)
    save_table(delta, args.output)
    _emit(args, "contrast", {"n_rows": delta.n_rows, "output_hash": content_hash([args.output])},
          _argv_config(args, "on", "off", "output"), {"on": content_hash([args.on]), "off": content_hash([args.off])})
    return EXIT_OK


def cmd_tangent(args) -> int:
    table = load_resolved(args.table, _aliases(args))
    sites = [Site.parse(s) for s in args.site] if args.site else table.sites()
    family = fit_family(table, sites, _tangent_policy(args))
    out = _out(args)
    family_path = Path(args.family_out) if args.family_out else out / f"family-{family.digest[:16]}.json"
    family.save(family_path)
    print(family_path)
    result = {"family_digest": family.digest, "charts": [chart_summary(c) for c in family.charts]}
    _emit(args, "tangent", result, _argv_config(args, "table", "site", "rank", "max_dim", "variance"),
          {"table": content_hash([args.table])})
    return EXIT_OK


def cmd_witness(args) -> int:
    family = SourceFamily.load(args.family)
    table = load_resolved(args.table, _aliases(args))
    site = Site.parse(args.site)
    rows = table.select(site=site, authoritative=True)
    q, nu, target = measure_witness(family.match(site), rows.values, tangent_policy=_tangent_policy(args))
    report = gate_witness(q, nu, _policy(args))
    result = report.to_dict() | {"site": site.key, "target_rank": target.rank, "n_rows": rows.n_rows}
    _emit(args, "witness", result, _argv_config(args, "family", "table", "site"),
          {"family": family.digest, "table": content_hash([args.table])})
    print(f"q_pass={report.q_pass} nu_pass={report.nu_pass} support={report.support_score:.3f}")
    return EXIT_OK


def cmd_couple(args) -> int:
    table = load_resolved(args.table, _aliases(args))
    inputs = {"table": content_hash([args.table])}
    if args.manifest:
        m = FreezeManifest.load(args.manifest)
        site, axis, centroid = m.selected.site, m.axis, m.frozen_chart.centroid
        inputs["manifest"] = m.manifest_hash
    else:
        if not args.site:
            raise ValidationError("couple needs --manifest or --site")
        site = Site.parse(args.site)
        rows = table.select(site=site, authoritative=True)
        axis, centroid = condition_axis(rows), rows.values.mean(axis=0)
    rows = table.select(site=site, authoritative=True)
    pos, neg = split_by_role(rows, axis_scores(rows.values, centroid, axis))
    report = couple(pos, neg, args.n_boot, args.n_perm, args.seed, args.alpha, args.statistic, args.threads)
    result = report.to_dict() | {"site": site.key, "in_sample_axis": not args.manifest}
    _emit(args, "couple", result, _argv_config(args, "table", "manifest", "site", "n_boot", "n_perm", "alpha",
                                               "statistic"), inputs)
    print(f"AUC {report.auc:.4f} CI [{report.auc_ci[0]:.4f}, {report.auc_ci[1]:.4f}] "
          f"gap {report.mean_gap:.4f} p {report.permutation_p:.4g}")
    return EXIT_OK


def _print_ranking(rows: list[dict], percentile) -> None:
    print(f"{'rank':>4}  {'surface':<28} {'AUC':>7}")
    for i, r in enumerate(rows, 1):
        print(f"{i:>4}  {r['label']:<28} {r['auc']:>7.4f}")
    if percentile is not None:
        print(f"frozen-site percentile among controls: {percentile:.3f}")


def cmd_controls(args) -> int:
    from .coupling import control_percentile

    m = FreezeManifest.load(args.manifest)
    table = load_resolved(args.table, _aliases(args)).select(authoritative=True)
    specs = default_battery(args.seed, *_csv(args.battery, int)) if args.battery else m.controls
    scorer = ScoringConfig(m.axis, m.positive_role, m.negative_role, args.n_boot, args.n_perm, m.alpha, args.threads)
    nearby = {c.site: c for c in m.source_family.charts if c.site is not None}
    results = run_control_battery(m.frozen_chart, table, specs, scorer, nearby)
    rows = table.select(site=m.selected.site)
    pos, neg = split_by_role(rows, axis_scores(rows.values, m.frozen_chart.centroid, m.axis),
                             m.positive_role, m.negative_role)
    observed = couple(pos, neg, args.n_boot, args.n_perm, m.seed, m.alpha, threads=args.threads)
    aucs = [r.report.auc for r in results]
    pct = control_percentile(observed.auc, aucs) if aucs else None
    ranking = control_ranking(observed.auc, results)
    _emit(args, "controls", {"control_percentile": pct, "ranking": ranking, "battery": [r.to_dict() for r in results]},
          _argv_config(args, "manifest", "table", "battery", "n_boot", "n_perm"),
          {"manifest": m.manifest_hash, "table": content_hash([args.table])})
    _print_ranking(ranking, pct)
    return EXIT_OK


def cmd_search(args) -> int:
    family = SourceFamily.load(args.family)
    table = load_resolved(args.table, _aliases(args))
    band = _band(args, table)
    ranking = score_candidates(band, table, family, _policy(args), _tangent_policy(args))
    _emit(args, "search", {"band": [s.key for s in band], "ranking": [c.to_dict() for c in ranking]},
          _argv_config(args, "family", "table", "layers", "spans", "surface"),
          {"family": family.digest, "table": content_hash([args.table])})
    for i, c in enumerate(ranking):
        print(f"{i:>3}  {c.site.key:<24} q_pass={c.witness.q_pass!s:<5} support={c.witness.support_score:.3f} "
              f"score={c.summary_score:.3f}")
    return EXIT_OK


def cmd_freeze(args) -> int:
    family = SourceFamily.load(args.family)
    disc = load_resolved(args.discovery, _aliases(args))
    band = _band(args, disc)
    ranking = score_candidates(band, disc, family, _policy(args), _tangent_policy(args))
    if not 0 <= args.select < len(ranking):
        raise ValidationError(f"--select {args.select} is outside the ranking of {len(ranking)}")
    selected = ranking[args.select]
    expect = parse_expect(args.expect)
    if expect:
        conf = load_resolved(args.confirmatory, _aliases(args))
        check_expected(conf.select(site=selected.site, authoritative=True), expect, "confirmatory")
    specs = default_battery(args.seed, *_csv(args.battery, int)) if args.battery else None
    m = freeze(selected, args.discovery, args.confirmatory, family, band, _policy(args), args.seed, specs,
               args.n_boot, args.n_perm, args.alpha, not args.no_refit, _tangent_policy(args))
    path = Path(args.manifest_out) if args.manifest_out else _out(args) / f"manifest-{m.manifest_hash[:16]}.json"
    m.save(path)
    print(path)
    _emit(args, "freeze", {"manifest_hash": m.manifest_hash, "selected": selected.site.key,
                           "expected_counts": m.expected_counts},
          _argv_config(args, "family", "discovery", "confirmatory", "layers", "spans", "surface", "select",
                       "n_boot", "n_perm", "alpha", "no_refit", "battery"),
          {"discovery": m.discovery.content_hash, "confirmatory": m.confirmatory.content_hash})
    return EXIT_OK


def cmd_replay(args) -> int:
    m = FreezeManifest.load(args.manifest)
    r = replay(m, args.table, threads=args.threads)
    outcome = (f"AUC {r.coupling.auc:.4f}, gap {r.coupling.mean_gap:.4f}, "
               f"q_pass={r.witness.q_pass}, nu_pass={r.witness.nu_pass}")
    _emit(args, "replay", r.to_dict(), _argv_config(args, "manifest", "table"),
          {"manifest": m.manifest_hash, "confirmatory": r.confirmatory_hash}, outcome, r.verdict.verdict)
    print(f"verdict {r.verdict.verdict}: {outcome}")
    return EXIT_OK


def cmd_bridge(args) -> int:
    if args.folds:
        folds = load_folds(args.folds)
        inputs = {"folds": file_digest(args.folds)}
    else:
        if not (args.atlas and args.table and args.lane):
            raise ValidationError("bridge needs --folds, or --atlas with --table and --lane")
        atlas = FrozenAtlas.load(args.atlas)
        data = load_resolved(args.table, _aliases(args))
        folds = run_folds(atlas, data, Site.parse(args.lane), _csv(args.groups) or None, _policy(args),
                          _tangent_policy(args), use_stored_assignment=args.stored_assignment)
        inputs = {"atlas": file_digest(args.atlas), "table": content_hash([args.table])}
    s = aggregate_folds(folds, n_boot=args.n_boot, seed=args.seed, alpha=args.alpha)
    outcome = f"mean AUC {s.mean_auc:.3f}, mean gap {s.mean_gap:.3f}, sign p {s.sign_p:.5f}"
    _emit(args, "bridge", s.to_dict(), _argv_config(args, "folds", "atlas", "table", "lane", "groups", "n_boot",
                                                    "alpha", "stored_assignment"), inputs, outcome, bridge_verdict(s))
    print(f"{'group':>6} {'rows':>5} {'AUC':>6} {'gap':>7}  q     nu")
    for f in s.folds:
        row = f.table_row()
        auc = "-" if f.auc is None else f"{f.auc:.3f}"
        gap = "-" if f.mean_gap is None else f"{f.mean_gap:.2f}"
        print(f"{row['held_out_group']:>6} {row['assigned_rows']:>5} {auc:>6} {gap:>7}  "
              f"{row['q_support'] or '-':<5} {row['nu_support'] or '-'}")
    print(f"mean AUC {s.mean_auc:.3f}, mean gap {s.mean_gap:.3f} [{s.gap_ci[0]:.2f}, {s.gap_ci[1]:.2f}], "
          f"sign p {s.sign_p:.5f}")
    return EXIT_OK


def cmd_reentry(args) -> int:
    family = SourceFamily.load(args.family)
    site = Site.parse(args.site)
    table = load_resolved(args.table, _aliases(args)).select(site=site)
    s = reentry_summary(table, family.match(site), args.assignment_threshold, args.angle_threshold,
                        args.branch_field)
    _emit(args, "reentry", s.to_dict() | {"site": site.key},
          _argv_config(args, "family", "site", "table", "assignment_threshold", "angle_threshold", "branch_field"),
          {"family": family.digest, "table": content_hash([args.table])})
    for b, rate in s.acceptance.items():
        print(f"{b:<16} {s.accepted[b]:>5} / {s.total[b]:<5} = {rate:.2f}")
    print("rejections: " + ", ".join(f"{k} {v}" for k, v in s.rejections.items()))
    return EXIT_OK


def cmd_synth(args) -> int:
    out = _out(args)
    if args.mcq:
        paths = write_mcq_scenario(args.seed, out, swap=args.swap)
    else:
        base = ScenarioSpec(D=args.D, k=args.k, n=args.n)
        spec = ScenarioSpec(
            D=args.D, k=args.k, n=args.n, rotation_deg=args.rotation,
            translation=chart_translation(args.D, 1 if args.k > 1 else 0, args.translation * base.scale),
            occupancy_reshape=tuple([args.reshape] * args.k), signal_gap=args.gap, seed=args.seed,
        )
        paths = write_scenario(spec, out, args.n_boot, args.n_perm, _policy(args))
        print(f"expected verdict {expected_outcome(spec, _policy(args)).verdict}")
    for name, p in paths.items():
        print(f"{name}: {p}")
    return EXIT_OK


def cmd_validate(args) -> int:
    findings = validate_paths(args.paths, _aliases(args), parse_expect(args.expect))
    for f in findings:
        print(f"{f['path']}: {f['message']}")
    if not findings:
        print("ok")
    return EXIT_VALIDATION if findings else EXIT_OK


def cmd_report(args) -> int:
    directory = Path(args.directory)
    paths = sorted(p for p in directory.glob("*-*.json") if p.stem.split("-", 1)[0] in UNITS)
    summary = summarize_reports(paths)
    _emit(args, "report", summary, {"directory": str(directory.resolve())},
          {p.stem.split("-", 1)[0]: p.stem.rsplit("-", 1)[-1] for p in paths})
    _print_summary(summary)
    return EXIT_OK


def _print_summary(summary: dict) -> None:
    print(f"{'stage':<10} {'unit':<38} {'verdict':<30} outcome")
    for row in summary["stages"]:
        outcome = row.get("outcome", "")
        if row.get("status") == "skipped":
            outcome = f"(skipped) {outcome}"
        print(f"{row['stage']:<10} {row['unit']:<38} {row.get('verdict') or '-':<30} {outcome}")
    print(f"status {summary['status']}, verdict {summary.get('verdict')}")


def cmd_pipeline(args) -> int:
    if not args.config:
        raise ValidationError("pipeline needs --config")
    cfg = RunConfig.load(args.config)
    if args.seed_given:
        cfg.seed = args.seed
    try:
        result = run_pipeline(cfg, _out(args), threads=args.threads)
    except PipelineFailure as exc:
        print(exc.summary_path)
        raise exc.error from None
    print(result.summary_path)
    _print_summary(result.summary)
    return EXIT_OK


# parser ----------------------------------------------------------------------


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="JSON run configuration")
    p.add_argument("--seed", type=int, default=d(None), help="base seed (default 0)")
    p.add_argument("--out", default=d("."), help="output directory for reports")
    p.add_argument("--threads", type=int, default=d(1), help="worker threads for resampling")
    p.add_argument("--aliases", default=d(None), help="condition alias map JSON")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geowitness", description="Chart witnesses, coupling and freeze/replay.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    def resampling(p, n_boot=10_000, n_perm=9_999):
        p.add_argument("--n-boot", type=int, default=n_boot)
        p.add_argument("--n-perm", type=int, default=n_perm)
        p.add_argument("--alpha", type=float, default=0.05)

    def tangent_flags(p):
        p.add_argument("--rank", type=int)
        p.add_argument("--max-dim", type=int)
        p.add_argument("--variance", type=float)

    def band_flags(p):
        p.add_argument("--layers", help="comma-separated layers")
        p.add_argument("--spans", help="comma-separated spans")
        p.add_argument("--surface", default="delta")

    p = add("ingest", cmd_ingest, "load, resolve aliases and hash a table")
    p.add_argument("table")
    p.add_argument("--expect", nargs="*", default=[], metavar="ROLE=N")
    p.add_argument("--resolved-out")

    p = add("contrast", cmd_contrast, "row-matched on-minus-off contrast table")
    p.add_argument("on")
    p.add_argument("off")
    p.add_argument("--output", required=True)

    p = add("tangent", cmd_tangent, "fit tangent charts per site into a family file")
    p.add_argument("table")
    p.add_argument("--site", nargs="*", help="site keys like L24/reason/delta (default: every site)")
    p.add_argument("--family-out")
    tangent_flags(p)

    p = add("witness", cmd_witness, "q and nu witness metrics of a target site against the family")
    p.add_argument("--family", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--site", required=True)
    tangent_flags(p)

    p = add("couple", cmd_couple, "AUC, mean gap, bootstrap CIs and permutation p")
    p.add_argument("table")
    p.add_argument("--manifest", help="score with a frozen axis")
    p.add_argument("--site")
    p.add_argument("--statistic", choices=("auc", "gap"), default="auc")
    resampling(p)

    p = add("controls", cmd_controls, "run a control battery against a frozen manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--battery", help="n_null,n_random,n_orthogonal (default: the manifest's battery)")
    resampling(p, 1_000, 999)

    p = add("search", cmd_search, "rank candidate sites witness-first")
    p.add_argument("--family", required=True)
    p.add_argument("--table", required=True)
    band_flags(p)
    tangent_flags(p)

    p = add("freeze", cmd_freeze, "freeze the selected candidate into a manifest")
    p.add_argument("--family", required=True)
    p.add_argument("--discovery", required=True)
    p.add_argument("--confirmatory", required=True)
    p.add_argument("--select", type=int, default=0, help="position in the ranking")
    p.add_argument("--expect", nargs="*", default=[], metavar="ROLE=N")
    p.add_argument("--battery", help="n_null,n_random,n_orthogonal")
    p.add_argument("--no-refit", action="store_true", help="score the witness in the frozen chart")
    p.add_argument("--manifest-out")
    band_flags(p)
    tangent_flags(p)
    resampling(p)

    p = add("replay", cmd_replay, "score a frozen manifest on confirmatory data")
    p.add_argument("--manifest", required=True)
    p.add_argument("--table", required=True)

    p = add("bridge", cmd_bridge, "held-out fold bridge")
    p.add_argument("--folds", help="JSON list of fold rows")
    p.add_argument("--atlas")
    p.add_argument("--table")
    p.add_argument("--lane")
    p.add_argument("--groups", help="comma-separated expected groups")
    p.add_argument("--stored-assignment", action="store_true")
    p.add_argument("--n-boot", type=int, default=10_000)
    p.add_argument("--alpha", type=float, default=0.05)
    tangent_flags(p)

    p = add("reentry", cmd_reentry, "re-entry tally of target rows into a frozen chart")
    p.add_argument("--family", required=True)
    p.add_argument("--site", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--assignment-threshold", type=float, default=2.5)
    p.add_argument("--angle-threshold", type=float, default=70.0)
    p.add_argument("--branch-field", default="role", choices=("role", "condition", "group_id", "reviewed_label"))

    p = add("synth", cmd_synth, "write a synthetic scenario with a run config")
    p.add_argument("--D", type=int, default=16)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--rotation", type=float, default=0.0, help="degrees")
    p.add_argument("--translation", type=float, default=0.0, help="in source-scale units")
    p.add_argument("--reshape", type=float, default=1.0, help="variance multiplier")
    p.add_argument("--gap", type=float, default=2.5, help="condition-mean separation")
    p.add_argument("--mcq", action="store_true", help="write the displacement re-entry scenario instead")
    p.add_argument("--swap", action="store_true")
    p.add_argument("--n-boot", type=int, default=2_000)
    p.add_argument("--n-perm", type=int, default=1_999)

    p = add("validate", cmd_validate, "check file formats, denominators and alias coverage")
    p.add_argument("paths", nargs="+")
    p.add_argument("--expect", nargs="*", default=[], metavar="ROLE=N")

    p = add("report", cmd_report, "summarize the stage reports in a directory")
    p.add_argument("directory")

    add("pipeline", cmd_pipeline, "run every configured stage from --config")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = int(_config(args).get("seed", 0)) if args.command != "pipeline" and args.config else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (GeoWitnessError, ValueError, KeyError, OSError) as exc:
        code = exit_code_for(exc)
        print(json.dumps(_error_payload(exc), sort_keys=True, default=str), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
