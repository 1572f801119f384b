from __future__ import annotations

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from geowitness.dataset import (
    DEFAULT_ALIASES,
    ActivationTable,
    DatasetManifest,
    RowMeta,
    Site,
    build_contrast,
    content_hash,
    denominator_counts,
    freeze_manifest,
    load_table,
    meta_path_for,
    resolve_conditions,
    role_counts,
    save_table,
    verify_manifest,
)
from geowitness.errors import (
    DimensionMismatchError,
    FrozenDataError,
    MalformedHeaderError,
    NonFiniteError,
    RowCountMismatchError,
    UnmappedConditionError,
    UnmatchedRowError,
    ValidationError,
)

from conftest import make_rows, make_table


def test_round_trip_bit_exact(tmp_path, rng):
    t = make_table(rng.standard_normal((7, 5)))
    path = save_table(t, tmp_path / "t.atlg")
    back = load_table(path)
    assert back == t
    assert back.values.tobytes() == t.values.tobytes()
    assert meta_path_for(path).exists()


def test_header_layout(tmp_path):
    t = make_table(np.arange(6.0).reshape(3, 2))
    path = save_table(t, tmp_path / "t.atlg")
    raw = path.read_bytes()
    magic, version, n, d = struct.unpack_from("<4sIQQ", raw)
    assert (magic, version, n, d) == (b"ATLG", 1, 3, 2)
    assert np.frombuffer(raw[24:], "<f8").tolist() == [0, 1, 2, 3, 4, 5]


def test_row_count_mismatch(tmp_path):
    t = make_table(np.zeros((2, 3)))
    path = save_table(t, tmp_path / "t.atlg")
    extra = make_rows(3)
    meta_path_for(path).write_text("\n".join(json.dumps(r.to_dict()) for r in extra) + "\n")
    with pytest.raises(RowCountMismatchError):
        load_table(path)


def test_nan_names_row(tmp_path):
    values = np.zeros((10, 3))
    t = make_table(values)
    path = save_table(t, tmp_path / "t.atlg")
    raw = bytearray(path.read_bytes())
    struct.pack_into("<d", raw, 24 + 8 * (7 * 3 + 1), float("nan"))
    path.write_bytes(bytes(raw))
    with pytest.raises(NonFiniteError) as err:
        load_table(path)
    assert err.value.row == 7
    assert "7" in str(err.value)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.atlg"
    p.write_bytes(b"NOPE" + bytes(20))
    meta_path_for(p).write_text("")
    with pytest.raises(MalformedHeaderError):
        load_table(p)


def test_truncated_payload(tmp_path):
    path = save_table(make_table(np.ones((3, 2))), tmp_path / "t.atlg")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(MalformedHeaderError):
        load_table(path)


def test_duplicate_row_ids_rejected():
    rows = make_rows(2)
    rows[1] = RowMeta(**{**rows[1].to_dict(), "row_id": rows[0].row_id})
    with pytest.raises(ValidationError):
        ActivationTable(np.zeros((2, 2)), rows)


def test_flip_flag_requires_label():
    with pytest.raises(ValidationError):
        RowMeta("a", "x", "reason", 1, "delta", flip_flag=True)
    assert RowMeta("a", "x", "reason", 1, "delta", reviewed_label="positive", flip_flag=True).flip_flag


def test_values_are_immutable(rng):
    t = make_table(rng.standard_normal((3, 2)))
    with pytest.raises(ValueError):
        t.values[0, 0] = 1.0


def test_contrast_identical_tables_is_zero(rng):
    t = make_table(rng.standard_normal((4, 3)))
    d = build_contrast(t, t)
    assert np.all(d.values == 0)
    assert all(r.surface == "delta" for r in d.rows)


def test_contrast_componentwise():
    on = make_table([[3.0, 1.0]], site=Site(1, "reason", "hidden_on"))
    off = make_table([[1.0, 1.0]], site=Site(1, "reason", "hidden_off"))
    assert build_contrast(on, off).values.tolist() == [[2.0, 0.0]]


def test_contrast_matches_by_row_id_not_order(rng):
    on = make_table(rng.standard_normal((5, 2)))
    perm = [3, 0, 4, 1, 2]
    off = ActivationTable(on.values[perm] * 0.5, [on.rows[i] for i in perm])
    assert np.allclose(build_contrast(on, off).values, 0.5 * on.values)


def test_contrast_unmatched_row_named(rng):
    on = make_table(rng.standard_normal((2, 2)), prefix="r")
    rows = make_rows(2, prefix="r")
    rows[1] = RowMeta(**{**rows[1].to_dict(), "row_id": "other"})
    off = ActivationTable(np.zeros((2, 2)), rows)
    on = ActivationTable(on.values, make_rows(1, prefix="r") + [RowMeta(**{**rows[0].to_dict(), "row_id": "r9"})])
    with pytest.raises(UnmatchedRowError) as err:
        build_contrast(on, off)
    assert err.value.row_id == "r9"


def test_contrast_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        build_contrast(make_table(np.zeros((1, 2))), make_table(np.zeros((1, 3))))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-1e6, 1e6)), arrays(np.float64, (4, 3), elements=st.floats(-1e6, 1e6)))
def test_contrast_antisymmetric(a, b):
    ta, tb = make_table(a), make_table(b)
    assert np.array_equal(build_contrast(ta, tb).values, -build_contrast(tb, ta).values)


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)),
           elements=st.floats(allow_nan=False, allow_infinity=False, width=64)),
)
def test_round_trip_property(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "t.atlg"
    t = make_table(values)
    assert load_table(save_table(t, path)) == t


def test_alias_resolution():
    rows = [RowMeta("a", "low_si_on", "reason", 1, "delta"), RowMeta("b", "high_si_on", "reason", 1, "delta"),
            RowMeta("c", "high_si_off", "reason", 1, "delta")]
    t = resolve_conditions(ActivationTable(np.zeros((3, 1)), rows))
    assert [(r.condition, r.role) for r in t.rows] == [
        ("constitutions-v2-high_effective_mi", "informative"),
        ("null_random_v1", "null_control"),
        ("adapter_off_comparator", "comparator"),
    ]


def test_alias_unmapped_tag_named():
    t = ActivationTable(np.zeros((1, 1)), [RowMeta("a", "unknown_arm", "reason", 1, "delta")])
    with pytest.raises(UnmappedConditionError) as err:
        resolve_conditions(t, DEFAULT_ALIASES)
    assert err.value.tag == "unknown_arm"


def test_unresolved_rows_excluded_from_denominators():
    roles = ["informative"] * 3 + ["null_control"] * 2
    t = make_table(np.zeros((5, 1)), roles=roles)
    rows = list(t.rows)
    rows[0] = RowMeta(**{**rows[0].to_dict(), "reviewed_label": "unresolved"})
    rows[1] = RowMeta(**{**rows[1].to_dict(), "reviewed_label": "positive"})
    t = t.with_rows(rows)
    assert role_counts(t) == {"informative": 2, "null_control": 2}
    counts = denominator_counts(t)
    assert counts["constitutions-v2-high_effective_mi"] == {"positive": 1, "unreviewed": 1}
    assert t.select(authoritative=True).n_rows == 4


def test_manifest_determinism_and_sensitivity(tmp_path, rng):
    path = save_table(make_table(rng.standard_normal((4, 2))), tmp_path / "t.atlg")
    m1, m2 = freeze_manifest([path]), freeze_manifest([path])
    assert m1.content_hash == m2.content_hash and m1.frozen
    assert len(m1.content_hash) == 64 and m1.content_hash == m1.content_hash.lower()
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0x01
    path.write_bytes(bytes(raw))
    assert freeze_manifest([path]).content_hash != m1.content_hash
    assert not verify_manifest(m1)


def test_manifest_sidecar_is_hashed(tmp_path, rng):
    path = save_table(make_table(rng.standard_normal((2, 2))), tmp_path / "t.atlg")
    before = content_hash([path])
    meta = meta_path_for(path)
    meta.write_text(meta.read_text().replace("r0", "r9"))
    assert content_hash([path]) != before


def test_manifest_order_insensitive_and_relocatable(tmp_path, rng):
    a = save_table(make_table(rng.standard_normal((2, 2)), prefix="a"), tmp_path / "one" / "a.atlg")
    b = save_table(make_table(rng.standard_normal((2, 2)), prefix="b"), tmp_path / "one" / "b.atlg")
    h = content_hash([a, b])
    assert content_hash([b, a]) == h
    moved = tmp_path / "two"
    (tmp_path / "one").rename(moved)
    assert content_hash([moved / "a.atlg", moved / "b.atlg"]) == h


def test_manifest_empty_list_rejected():
    with pytest.raises(ValidationError):
        freeze_manifest([])


def test_manifest_unreadable_path(tmp_path):
    with pytest.raises(OSError):
        freeze_manifest([tmp_path / "missing.atlg"])


def test_manifest_json_round_trip(tmp_path, rng):
    path = save_table(make_table(rng.standard_normal((4, 2))), tmp_path / "t.atlg")
    m = freeze_manifest([path])
    m.save(tmp_path / "m.json")
    back = DatasetManifest.load(tmp_path / "m.json")
    assert back == m
    assert json.loads((tmp_path / "m.json").read_text())["schema_version"] == 1


def test_frozen_manifest_blocks_overwrite(tmp_path, rng):
    t = make_table(rng.standard_normal((3, 2)))
    path = save_table(t, tmp_path / "t.atlg")
    m = freeze_manifest([path])
    with pytest.raises(FrozenDataError):
        save_table(t, path, frozen=[m])
    save_table(t, tmp_path / "other.atlg", frozen=[m])


def test_site_key_round_trip():
    s = Site(24, "late_reason", "delta")
    assert s.key == "L24/late_reason/delta"
    assert Site.parse(s.key) == s
    with pytest.raises(ValidationError):
        Site.parse("24-reason")
