"""On-disk data model: activation tables, row metadata, alias maps, manifests.

An activation table lives in two files::

    name.atlg    magic b"ATLG", u32 version, u64 n_rows, u64 dim,
                 then n_rows*dim little-endian float64, row-major
    name.jsonl   one RowMeta object per line, aligned by row index

Manifests are JSON and record a SHA-256 over the canonical concatenation of
every referenced file.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    FrozenDataError,
    MalformedHeaderError,
    NonFiniteError,
    RowCountMismatchError,
    UnmappedConditionError,
    UnmatchedRowError,
    ValidationError,
)
from .hashing import pretty_json, sha256_hex

MAGIC = b"ATLG"
FORMAT_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")

SPANS = ("reason", "late_reason", "answer")
SURFACES = ("hidden_on", "hidden_off", "delta")
LABELS = ("positive", "negative", "unresolved")
ROLES = ("informative", "null_control", "comparator")


@dataclass(frozen=True, order=True)
class Site:
    """Capture site of a row: (layer, span, surface)."""

    layer: int
    span: str
    surface: str

    @property
    def key(self) -> str:
        return f"L{self.layer}/{self.span}/{self.surface}"

    @classmethod
    def parse(cls, text: str) -> "Site":
        parts = text.strip().split("/")
        if len(parts) != 3:
            raise ValidationError(f"site must look like L24/reason/delta, got {text!r}")
        layer = parts[0][1:] if parts[0][:1] in ("L", "l") else parts[0]
        return cls(int(layer), parts[1], parts[2])

    def to_dict(self) -> dict:
        return {"layer": self.layer, "span": self.span, "surface": self.surface}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Site":
        return cls(int(d["layer"]), str(d["span"]), str(d["surface"]))


@dataclass(frozen=True)
class RowMeta:
    row_id: str
    condition: str
    span: str
    layer: int
    surface: str
    group_id: str | None = None
    pair_id: str | None = None
    reviewed_label: str | None = None
    signed_score: float | None = None
    flip_flag: bool | None = None
    # attached by resolve_conditions
    role: str | None = None
    # optional stored assignment (site key) recorded upstream
    assigned_site: str | None = None

    def __post_init__(self):
        if self.span not in SPANS:
            raise ValidationError(f"row {self.row_id!r}: unknown span {self.span!r}")
        if self.surface not in SURFACES:
            raise ValidationError(f"row {self.row_id!r}: unknown surface {self.surface!r}")
        if self.reviewed_label is not None and self.reviewed_label not in LABELS:
            raise ValidationError(f"row {self.row_id!r}: unknown reviewed_label {self.reviewed_label!r}")
        if self.flip_flag is not None and self.reviewed_label is None:
            raise ValidationError(f"row {self.row_id!r}: flip_flag set without reviewed_label")
        if self.role is not None and self.role not in ROLES:
            raise ValidationError(f"row {self.row_id!r}: unknown role {self.role!r}")

    @property
    def site(self) -> Site:
        return Site(self.layer, self.span, self.surface)

    @property
    def authoritative(self) -> bool:
        return self.reviewed_label != "unresolved"

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: Mapping, index: int | None = None) -> "RowMeta":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        where = f" (metadata row {index})" if index is not None else ""
        if unknown:
            raise ValidationError(f"unknown metadata fields {sorted(unknown)}{where}", row=index)
        for required in ("row_id", "condition", "span", "layer", "surface"):
            if required not in d:
                raise ValidationError(f"missing field {required!r}{where}", row=index)
        kw = dict(d)
        kw["row_id"] = str(kw["row_id"])
        kw["layer"] = int(kw["layer"])
        if kw.get("signed_score") is not None:
            kw["signed_score"] = float(kw["signed_score"])
        return cls(**kw)


class ActivationTable:
    """An immutable n x D float64 matrix with per-row metadata."""

    __slots__ = ("values", "rows", "_index")

    def __init__(self, values, rows: Sequence[RowMeta]):
        arr = np.array(values, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValidationError(f"values must be 2-D, got shape {arr.shape}")
        rows = tuple(rows)
        if len(rows) != arr.shape[0]:
            raise RowCountMismatchError(
                f"matrix has {arr.shape[0]} rows but metadata has {len(rows)}",
                n_matrix=arr.shape[0],
                n_meta=len(rows),
            )
        finite = np.isfinite(arr).all(axis=1)
        if not finite.all():
            bad = int(np.flatnonzero(~finite)[0])
            raise NonFiniteError(f"non-finite value in row {bad}", row=bad)
        index: dict[str, int] = {}
        for i, r in enumerate(rows):
            if r.row_id in index:
                raise ValidationError(f"duplicate row_id {r.row_id!r} at row {i}", row=i)
            index[r.row_id] = i
        arr.flags.writeable = False
        self.values = arr
        self.rows = rows
        self._index = index

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def row_ids(self) -> list[str]:
        return [r.row_id for r in self.rows]

    def index_of(self, row_id: str) -> int:
        return self._index[row_id]

    def __len__(self) -> int:
        return self.n_rows

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActivationTable):
            return NotImplemented
        return (
            self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
            and self.rows == other.rows
        )

    def __repr__(self) -> str:
        return f"ActivationTable(n_rows={self.n_rows}, dim={self.dim})"

    def subset(self, mask_or_index) -> "ActivationTable":
        idx = np.asarray(mask_or_index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return ActivationTable(self.values[idx], [self.rows[i] for i in idx])

    def select(self, site: Site | None = None, authoritative: bool = False, **meta) -> "ActivationTable":
        """Rows at ``site`` whose metadata fields equal the given keywords."""
        keep = []
        for i, r in enumerate(self.rows):
            if site is not None and r.site != site:
                continue
            if authoritative and not r.authoritative:
                continue
            if any(getattr(r, k) != v for k, v in meta.items()):
                continue
            keep.append(i)
        return self.subset(np.array(keep, dtype=int))

    def sites(self) -> list[Site]:
        return sorted({r.site for r in self.rows})

    def with_rows(self, rows: Sequence[RowMeta]) -> "ActivationTable":
        return ActivationTable(self.values, rows)


def meta_path_for(path: str | os.PathLike) -> Path:
    return Path(path).with_suffix(".jsonl")


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    _atomic_write(Path(path), text.encode("utf-8"))


def encode_matrix(values: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(values, dtype="<f8")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, arr.shape[0], arr.shape[1]) + arr.tobytes()


def encode_meta(rows: Iterable[RowMeta]) -> bytes:
    lines = [json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) for r in rows]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def save_table(
    table: ActivationTable,
    path: str | os.PathLike,
    frozen: Iterable["DatasetManifest"] = (),
) -> Path:
    """Write ``path`` (matrix) and its ``.jsonl`` sidecar atomically.

    Refuses to overwrite any file referenced by a frozen manifest.
    """
    path = Path(path)
    meta = meta_path_for(path)
    for manifest in frozen:
        if manifest.frozen and manifest.references(path, meta):
            raise FrozenDataError(f"{path} is referenced by a frozen manifest", path=str(path))
    _atomic_write(path, encode_matrix(table.values))
    _atomic_write(meta, encode_meta(table.rows))
    return path


def decode_matrix(data: bytes, path) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: file shorter than header")
    magic, version, n_rows, dim = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 8 * n_rows * dim
    if len(data) != expected:
        raise MalformedHeaderError(
            f"{path}: header declares {n_rows}x{dim} but payload has {len(data) - _HEADER.size} bytes"
        )
    arr = np.frombuffer(data, dtype="<f8", offset=_HEADER.size, count=n_rows * dim)
    return arr.reshape(n_rows, dim).astype(np.float64)


def _decode_meta(text: str, path) -> list[RowMeta]:
    rows = []
    for i, line in enumerate(l for l in text.splitlines() if l.strip()):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: metadata row {i} is not JSON: {exc}", row=i) from None
        rows.append(RowMeta.from_dict(obj, index=i))
    return rows


def load_table(path: str | os.PathLike) -> ActivationTable:
    path = Path(path)
    values = decode_matrix(path.read_bytes(), path)
    meta = meta_path_for(path)
    rows = _decode_meta(meta.read_text(encoding="utf-8"), meta)
    if len(rows) != values.shape[0]:
        raise RowCountMismatchError(
            f"{path}: header declares {values.shape[0]} rows but {meta.name} has {len(rows)}",
            n_matrix=values.shape[0],
            n_meta=len(rows),
        )
    return ActivationTable(values, rows)


def build_contrast(on: ActivationTable, off: ActivationTable) -> ActivationTable:
    """Rowwise on - off, matched by exact row_id; metadata inherited from ``on``."""
    if on.dim != off.dim:
        raise DimensionMismatchError(f"dimension mismatch: {on.dim} vs {off.dim}")
    order = []
    for r in on.rows:
        try:
            order.append(off.index_of(r.row_id))
        except KeyError:
            raise UnmatchedRowError(f"row {r.row_id!r} has no match in the off table", row_id=r.row_id) from None
    delta = on.values - off.values[np.array(order, dtype=int)] if order else np.empty((0, on.dim))
    rows = [replace(r, surface="delta") for r in on.rows]
    return ActivationTable(delta, rows)


@dataclass(frozen=True)
class ConditionAliasMap:
    entries: Mapping[str, str]
    roles: Mapping[str, str]

    def __post_init__(self):
        for canonical in self.entries.values():
            if canonical not in self.roles:
                raise ValidationError(f"canonical condition {canonical!r} has no role")
        for role in self.roles.values():
            if role not in ROLES:
                raise ValidationError(f"unknown role {role!r}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConditionAliasMap":
        return cls(dict(d["entries"]), dict(d["roles"]))

    @classmethod
    def from_file(cls, path) -> "ConditionAliasMap":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {"entries": dict(self.entries), "roles": dict(self.roles)}

    def resolve(self, tag: str) -> tuple[str, str]:
        try:
            canonical = self.entries[tag]
        except KeyError:
            raise UnmappedConditionError(f"condition tag {tag!r} is not in the alias map", tag=tag) from None
        return canonical, self.roles[canonical]


INFORMATIVE = "constitutions-v2-high_effective_mi"
NULL_RANDOM = "null_random_v1"
ADAPTER_OFF = "adapter_off_comparator"

# main cross-model comparison; canonical ids map to themselves
DEFAULT_ALIASES = ConditionAliasMap(
    entries={
        "low_si_on": INFORMATIVE,
        "high_si_on": NULL_RANDOM,
        "high_si_off": ADAPTER_OFF,
        INFORMATIVE: INFORMATIVE,
        NULL_RANDOM: NULL_RANDOM,
        ADAPTER_OFF: ADAPTER_OFF,
    },
    roles={INFORMATIVE: "informative", NULL_RANDOM: "null_control", ADAPTER_OFF: "comparator"},
)


def resolve_conditions(table: ActivationTable, aliases: ConditionAliasMap = DEFAULT_ALIASES) -> ActivationTable:
    rows = []
    for r in table.rows:
        canonical, role = aliases.resolve(r.condition)
        rows.append(replace(r, condition=canonical, role=role))
    return table.with_rows(rows)


def denominator_counts(table: ActivationTable) -> dict[str, dict[str, int]]:
    """Counts by condition and reviewed label; unresolved rows excluded."""
    counts: dict[str, Counter] = {}
    for r in table.rows:
        if not r.authoritative:
            continue
        counts.setdefault(r.condition, Counter())[r.reviewed_label or "unreviewed"] += 1
    return {c: dict(sorted(v.items())) for c, v in sorted(counts.items())}


def role_counts(table: ActivationTable) -> dict[str, int]:
    c = Counter(r.role for r in table.rows if r.authoritative and r.role is not None)
    return dict(sorted(c.items()))


@dataclass
class DatasetManifest:
    content_hash: str
    counts_by_condition_and_label: dict
    paths: list[str] = field(default_factory=list)
    frozen: bool = True
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def references(self, *paths) -> bool:
        mine = {str(Path(p).resolve()) for p in self.paths}
        return any(str(Path(p).resolve()) in mine for p in paths)

    def to_dict(self, include_paths: bool = True) -> dict:
        d = {
            "schema_version": self.schema_version,
            "content_hash": self.content_hash,
            "counts": self.counts_by_condition_and_label,
            "frozen": self.frozen,
        }
        if include_paths:
            d["paths"] = list(self.paths)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetManifest":
        return cls(
            content_hash=d["content_hash"],
            counts_by_condition_and_label=d.get("counts", {}),
            paths=list(d.get("paths", [])),
            frozen=bool(d.get("frozen", True)),
            schema_version=int(d.get("schema_version", MANIFEST_SCHEMA_VERSION)),
        )

    def save(self, path) -> None:
        atomic_write_text(path, pretty_json(self.to_dict()))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _expand(paths: Sequence) -> list[Path]:
    out = []
    for p in paths:
        p = Path(p)
        out.append(p)
        if p.suffix == ".atlg":
            out.append(meta_path_for(p))
    # dedupe, keep deterministic
    return sorted({q.resolve() for q in out}, key=lambda q: q.as_posix())


def content_hash(paths: Sequence) -> str:
    """SHA-256 over length-prefixed (relative path, bytes) records in sorted path order.

    Paths are taken relative to their common parent so the digest survives
    relocating the whole directory.
    """
    files = _expand(paths)
    if not files:
        raise ValidationError("no paths to hash")
    if len(files) == 1:
        root = files[0].parent
    else:
        root = Path(os.path.commonpath([str(f) for f in files]))
    buf = bytearray()
    for f in files:
        try:
            data = f.read_bytes()
        except OSError as exc:
            raise OSError(f"cannot read {f}: {exc.strerror}") from exc
        name = f.relative_to(root).as_posix().encode("utf-8")
        buf += struct.pack("<Q", len(name)) + name
        buf += struct.pack("<Q", len(data)) + data
    return sha256_hex(bytes(buf))


def freeze_manifest(paths: Sequence) -> DatasetManifest:
    if not paths:
        raise ValidationError("freeze_manifest needs at least one path")
    digest = content_hash(paths)
    counts: dict = {}
    for p in paths:
        if Path(p).suffix == ".atlg":
            for cond, by_label in denominator_counts(load_table(p)).items():
                slot = counts.setdefault(cond, {})
                for label, n in by_label.items():
                    slot[label] = slot.get(label, 0) + n
    files = [str(Path(p)) for p in paths]
    return DatasetManifest(content_hash=digest, counts_by_condition_and_label=counts, paths=files, frozen=True)


def verify_manifest(manifest: DatasetManifest, paths: Sequence | None = None) -> bool:
    return content_hash(paths if paths is not None else manifest.paths) == manifest.content_hash
