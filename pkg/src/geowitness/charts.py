"""Local tangent charts and angle-based witness metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Site
from .errors import DegenerateError, DimensionMismatchError, InsufficientSupportError, ValidationError
from .hashing import digest_json

ORTHONORMAL_TOL = 1e-8
# tolerance on cumulative explained variance so exact ratios (9/10) hit the threshold
_RANK_TOL = 1e-12


@dataclass(frozen=True)
class TangentPolicy:
    max_dim: int = 6
    variance_explained: float = 0.90
    min_support: int = 1
    rank: int | None = None  # force a fixed rank (clipped to what the data supports)


@dataclass(eq=False)
class TangentChart:
    """Affine chart: centroid plus orthonormal D x k basis.

    ``reference_coords`` holds the support points expressed in chart
    coordinates; occupancy comparisons use it as the source sample.
    """

    centroid: np.ndarray
    basis: np.ndarray
    spectrum: np.ndarray
    occupancy_scale_sq: float
    n_support: int
    site: Site | None = None
    reference_coords: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.occupancy_scale_sq))

    def to_dict(self, with_hash: bool = True) -> dict:
        d = {
            "site": self.site.to_dict() if self.site is not None else None,
            "centroid": self.centroid.tolist(),
            "basis": self.basis.tolist(),
            "spectrum": self.spectrum.tolist(),
            "occupancy_scale_sq": float(self.occupancy_scale_sq),
            "n_support": int(self.n_support),
            "reference_coords": None if self.reference_coords is None else self.reference_coords.tolist(),
        }
        if with_hash:
            d["content_hash"] = digest_json(d)
        return d

    @classmethod
    def from_dict(cls, d: dict, verify: bool = True) -> "TangentChart":
        if verify and "content_hash" in d:
            body = {k: v for k, v in d.items() if k != "content_hash"}
            if digest_json(body) != d["content_hash"]:
                from .errors import HashMismatchError

                raise HashMismatchError("chart content hash does not match its body")
        ref = d.get("reference_coords")
        return cls(
            centroid=np.asarray(d["centroid"], dtype=float),
            basis=np.asarray(d["basis"], dtype=float).reshape(len(d["centroid"]), -1),
            spectrum=np.asarray(d["spectrum"], dtype=float),
            occupancy_scale_sq=float(d["occupancy_scale_sq"]),
            n_support=int(d["n_support"]),
            site=Site.from_dict(d["site"]) if d.get("site") else None,
            reference_coords=None if ref is None else np.asarray(ref, dtype=float).reshape(-1, len(d["spectrum"])),
        )

    def support_points(self) -> np.ndarray:
        """Reconstruct support points (their in-chart part) in ambient coordinates."""
        if self.reference_coords is None:
            raise ValidationError("chart carries no reference sample")
        return self.centroid + self.reference_coords @ self.basis.T


def _sign_fix(basis: np.ndarray) -> np.ndarray:
    """Flip columns so the first non-negligible coordinate is positive."""
    out = basis.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * max(np.abs(col).max(), 1.0))
        if nz.size and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def select_rank(variances: np.ndarray, target: float, max_dim: int) -> int:
    """Smallest rank whose cumulative explained variance reaches ``target``."""
    total = variances.sum()
    ratios = np.cumsum(variances) / total
    hit = np.flatnonzero(ratios >= target - _RANK_TOL)
    k = int(hit[0]) + 1 if hit.size else len(variances)
    return max(1, min(k, max_dim))


def estimate_tangent(points, policy: TangentPolicy = TangentPolicy(), site: Site | None = None) -> TangentChart:
    x = np.asarray(points, dtype=float)
    if x.ndim != 2:
        raise ValidationError(f"points must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if n < max(policy.min_support, 2):
        raise InsufficientSupportError(f"need at least {max(policy.min_support, 2)} points, got {n}")
    if not np.isfinite(x).all():
        raise ValidationError("points contain non-finite values")
    centroid = x.mean(axis=0)
    centered = x - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    variances = s**2 / (n - 1)
    total = float(variances.sum())
    if total <= 0.0:
        raise DegenerateError("zero total variance: all points identical")
    # drop numerically-null directions before rank selection
    usable = int(np.sum(s > s[0] * 1e-10))
    if policy.rank is not None:
        k = max(1, min(policy.rank, usable, policy.max_dim))
    else:
        k = min(select_rank(variances, policy.variance_explained, policy.max_dim), usable)
    basis = _sign_fix(vt[:k].T)
    return TangentChart(
        centroid=centroid,
        basis=basis,
        spectrum=variances[:k].copy(),
        occupancy_scale_sq=total,
        n_support=n,
        site=site,
        reference_coords=centered @ basis,
    )


def check_orthonormal(frame: np.ndarray, name: str = "frame") -> np.ndarray:
    a = np.asarray(frame, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    gram = a.T @ a
    dev = np.abs(gram - np.eye(a.shape[1])).max() if a.size else 0.0
    if dev > ORTHONORMAL_TOL:
        raise ValidationError(f"{name} is not orthonormal (Gram deviation {dev:.3g})")
    return a


def principal_angles(a, b) -> np.ndarray:
    """Principal angles in degrees between span(a) and span(b), ascending.

    Cosines come from the singular values of a^T b; for small angles the
    sines of the residual b - a a^T b are used instead, which keeps full
    precision near 0 where arccos is ill-conditioned.
    """
    a = check_orthonormal(a, "A")
    b = check_orthonormal(b, "B")
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatchError(f"ambient dimensions differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[1] < b.shape[1]:
        a, b = b, a
    m = a.T @ b
    cos = np.clip(np.linalg.svd(m, compute_uv=False), 0.0, 1.0)  # descending
    resid = b - a @ m
    sin = np.clip(np.linalg.svd(resid, compute_uv=False), 0.0, 1.0)[::-1]  # ascending
    theta = np.where(cos**2 <= 0.5, np.arccos(cos), np.arcsin(sin))
    return np.sort(np.degrees(theta))


def grassmann_chordal(a, b) -> float:
    a = check_orthonormal(a, "A")
    b = check_orthonormal(b, "B")
    if a.shape[1] != b.shape[1]:
        raise ValidationError(f"rank mismatch: {a.shape[1]} vs {b.shape[1]}")
    theta = np.radians(principal_angles(a, b))
    return float(np.sqrt(np.sum(np.sin(theta) ** 2)))


def residual_angles(points, chart: TangentChart) -> np.ndarray:
    """Per-point angle (degrees) between x - centroid and the chart span.

    Points within 1e-12 * scale of the centroid have no direction and are
    returned as NaN.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if x.shape[1] != chart.dim:
        raise DimensionMismatchError(f"points have dim {x.shape[1]}, chart has {chart.dim}")
    v = x - chart.centroid
    inside = v @ chart.basis
    along = np.linalg.norm(inside, axis=1)
    off = np.linalg.norm(v - inside @ chart.basis.T, axis=1)
    norm = np.linalg.norm(v, axis=1)
    eps = 1e-12 * chart.scale
    ang = np.degrees(np.arctan2(off, along))
    return np.where(norm > eps, ang, np.nan)


def empirical_tangent_angles(points, chart: TangentChart) -> tuple[float, float]:
    ang = residual_angles(points, chart)
    ang = ang[~np.isnan(ang)]
    if ang.size == 0:
        raise DegenerateError("all points coincide with the chart centroid")
    return float(ang.mean()), float(ang.max())
