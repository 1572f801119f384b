from __future__ import annotations

import numpy as np
import pytest

from geowitness.dataset import INFORMATIVE, NULL_RANDOM, ActivationTable, RowMeta, Site

SITE = Site(24, "reason", "delta")


def make_rows(n, prefix="r", site=SITE, roles=None, **extra):
    rows = []
    for i in range(n):
        role = roles[i] if roles is not None else ("informative" if i < n // 2 else "null_control")
        rows.append(RowMeta(
            row_id=f"{prefix}{i}",
            condition=INFORMATIVE if role == "informative" else NULL_RANDOM,
            span=site.span, layer=site.layer, surface=site.surface,
            role=role, **extra,
        ))
    return rows


def make_table(values, prefix="r", site=SITE, roles=None, **extra) -> ActivationTable:
    values = np.asarray(values, dtype=float)
    return ActivationTable(values, make_rows(values.shape[0], prefix, site, roles, **extra))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
