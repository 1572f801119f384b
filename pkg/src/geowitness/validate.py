"""File, denominator and alias-coverage checks that report findings instead of raising."""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import DEFAULT_ALIASES, ConditionAliasMap, RowMeta, decode_matrix, meta_path_for
from .errors import GeoWitnessError


def _finding(path, kind: str, message: str, row: int | None = None) -> dict:
    out = {"path": str(path), "kind": kind, "message": message}
    if row is not None:
        out["row"] = row
    return out


def _check_table(path: Path, aliases: ConditionAliasMap, expect: Mapping[str, int]) -> list[dict]:
    found: list[dict] = []
    try:
        values = decode_matrix(path.read_bytes(), path)
    except GeoWitnessError as exc:
        return [_finding(path, exc.reason, str(exc))]
    meta = meta_path_for(path)
    if not meta.exists():
        return [_finding(meta, "missing_metadata", "metadata sidecar not found")]

    rows: list[RowMeta | None] = []
    lines = [line for line in meta.read_text(encoding="utf-8").splitlines() if line.strip()]
    for i, line in enumerate(lines):
        try:
            rows.append(RowMeta.from_dict(json.loads(line), index=i))
        except json.JSONDecodeError as exc:
            rows.append(None)
            found.append(_finding(meta, "bad_metadata", f"metadata row {i} is not JSON: {exc.msg}", i))
        except GeoWitnessError as exc:
            rows.append(None)
            found.append(_finding(meta, exc.reason, f"metadata row {i}: {exc}", i))

    n = values.shape[0]
    if len(rows) < n:
        found.append(_finding(meta, "missing_metadata_row",
                              f"metadata row {len(rows)} missing: matrix has {n} rows, metadata has {len(rows)}",
                              len(rows)))
    elif len(rows) > n:
        found.append(_finding(meta, "extra_metadata_row",
                              f"metadata row {n} has no matrix row: matrix has {n} rows, metadata has {len(rows)}", n))

    bad = np.flatnonzero(~np.isfinite(values).all(axis=1))
    if bad.size:
        found.append(_finding(path, "non_finite", f"row {bad[0]} has a non-finite value ({bad.size} row(s) total)",
                              int(bad[0])))

    seen: dict[str, int] = {}
    for i, r in enumerate(rows):
        if r is None:
            continue
        if r.row_id in seen:
            found.append(_finding(meta, "duplicate_row_id", f"row {i} repeats row_id {r.row_id!r} from row {seen[r.row_id]}", i))
        seen.setdefault(r.row_id, i)
        if r.condition not in aliases.entries:
            found.append(_finding(meta, "unmapped_condition", f"row {i}: condition {r.condition!r} is not in the alias map", i))

    if expect:
        by_site: dict[str, Counter] = {}
        for r in rows:
            if r is None or not r.authoritative or r.condition not in aliases.entries:
                continue
            role = aliases.resolve(r.condition)[1]
            by_site.setdefault(r.site.key, Counter())[role] += 1
        for site, counts in sorted(by_site.items()):
            for role, want in sorted(expect.items()):
                if counts.get(role, 0) != want:
                    found.append(_finding(path, "denominator_mismatch",
                                          f"{site}: {role} declared {want}, found {counts.get(role, 0)}"))
    return found


def _check_json(path: Path) -> list[dict]:
    from .search import FreezeManifest

    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        return [_finding(path, "bad_json", f"not valid JSON: {exc.msg}")]
    if isinstance(data, Mapping) and "manifest_hash" in data:
        try:
            FreezeManifest.from_dict(data)
        except GeoWitnessError as exc:
            return [_finding(path, exc.reason, str(exc))]
    return []


def validate_paths(paths: Sequence, aliases: ConditionAliasMap = DEFAULT_ALIASES,
                   expect: Mapping[str, int] | None = None) -> list[dict]:
    """Findings for every path; an empty list means everything checked out."""
    findings: list[dict] = []
    for raw in paths:
        p = Path(raw)
        if p.suffix == ".jsonl":
            p = p.with_suffix(".atlg")
        if not p.exists():
            findings.append(_finding(p, "missing_file", "file not found"))
        elif p.suffix == ".atlg":
            findings += _check_table(p, aliases, expect or {})
        elif p.suffix == ".json":
            findings += _check_json(p)
        else:
            findings.append(_finding(p, "unsupported", f"unsupported file type {p.suffix!r}"))
    return findings
