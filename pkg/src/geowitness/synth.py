"""Synthetic source/target families with analytically known geometry.

Scenarios are built in canonical coordinates and mapped to ambient space by
a seeded random rotation Q and centroid c:

* axes 0..k-1 span the source chart; the condition signal lies on axis 0
* axis k is the rotation partner: the target is rotated by ``rotation_deg``
  in the (axis 0, axis k) plane
* ``translation`` is a canonical D-vector added after the rotation

Expected metric values come from closed forms (Gaussian W2, Gaussian
projections) and from one-dimensional quadrature for mean Euclidean norms,
never from the estimators under test.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.stats import norm

from . import rng as _rng
from .charts import select_rank
from .dataset import INFORMATIVE, NULL_RANDOM, ActivationTable, RowMeta, Site
from .errors import ValidationError
from .occupancy import gaussian_w2_sq
from .witness import ThresholdPolicy, adjudicate

DEFAULT_SITE = Site(24, "late_reason", "delta")


@dataclass(frozen=True)
class ScenarioSpec:
    D: int = 16
    k: int = 2
    n: int = 512
    rotation_deg: float = 0.0
    translation: tuple[float, ...] | None = None
    occupancy_reshape: tuple[float, ...] | None = None
    signal_gap: float = 2.5
    seed: int = 0
    noise: float = 0.0
    site: Site = DEFAULT_SITE
    n_groups: int = 0

    def __post_init__(self):
        if not 1 <= self.k <= min(self.D, 6):
            raise ValidationError(f"need 1 <= k <= min(D, 6), got k={self.k}, D={self.D}")
        if self.k >= self.D:
            raise ValidationError("rotation partner axis needs k < D")
        if self.n < 8:
            raise ValidationError("n must be at least 8")
        if self.translation is not None and len(self.translation) != self.D:
            raise ValidationError(f"translation must have length D={self.D}")
        if self.occupancy_reshape is not None:
            if len(self.occupancy_reshape) != self.k or min(self.occupancy_reshape) <= 0:
                raise ValidationError(f"occupancy_reshape must be {self.k} positive multipliers")
        if not 0.0 <= self.rotation_deg <= 90.0:
            raise ValidationError("rotation_deg must lie in [0, 90]")

    @property
    def t(self) -> np.ndarray:
        return np.zeros(self.D) if self.translation is None else np.asarray(self.translation, dtype=float)

    @property
    def m(self) -> np.ndarray:
        return np.ones(self.k) if self.occupancy_reshape is None else np.asarray(self.occupancy_reshape, dtype=float)

    def source_cov(self) -> np.ndarray:
        """Population covariance of the pooled source sample in chart coordinates."""
        c = np.eye(self.k)
        c[0, 0] += self.signal_gap**2 / 4
        return c

    @property
    def scale(self) -> float:
        return float(np.sqrt(np.trace(self.source_cov())))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["site"] = self.site.to_dict()
        d["translation"] = None if self.translation is None else list(self.translation)
        d["occupancy_reshape"] = None if self.occupancy_reshape is None else list(self.occupancy_reshape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        kw = dict(d)
        if "site" in kw and not isinstance(kw["site"], Site):
            kw["site"] = Site.parse(kw["site"]) if isinstance(kw["site"], str) else Site.from_dict(kw["site"])
        for key in ("translation", "occupancy_reshape"):
            if kw.get(key) is not None:
                kw[key] = tuple(float(v) for v in kw[key])
        return cls(**kw)


def chart_translation(spec_D: int, along_axis: int, amount: float) -> tuple[float, ...]:
    t = [0.0] * spec_D
    t[along_axis] = float(amount)
    return tuple(t)


def expected_gaussian_norm(mean, cov) -> float:
    """E|v| for v ~ N(mean, cov).

    Uses sqrt(a) = 1/(2 sqrt(pi)) * int_0^inf (1 - exp(-s a)) s^(-3/2) ds and
    the Gaussian Laplace transform of |v|^2, then quadrature in s = u^2.
    """
    mu = np.atleast_1d(np.asarray(mean, dtype=float))
    c = np.atleast_2d(np.asarray(cov, dtype=float))
    lam, vec = np.linalg.eigh((c + c.T) / 2)
    lam = np.clip(lam, 0.0, None)
    mu2 = (vec.T @ mu) ** 2
    if not lam.any() and not mu2.any():
        return 0.0

    def one_minus_phi(u: float) -> float:
        s = u * u
        d = 1.0 + 2.0 * s * lam
        log_phi = -0.5 * np.sum(np.log(d)) - s * np.sum(mu2 / d)
        return -math.expm1(log_phi)

    def integrand(u: float) -> float:
        if u == 0.0:
            return 2.0 * float(np.sum(lam) + np.sum(mu2))
        return 2.0 * one_minus_phi(u) / (u * u)

    spread = math.sqrt(float(np.sum(lam) + np.sum(mu2)))
    knot = 1.0 / max(spread, 1e-12)
    a, _ = integrate.quad(integrand, 0.0, knot, limit=400, epsabs=1e-13, epsrel=1e-11)
    b, _ = integrate.quad(integrand, knot, np.inf, limit=400, epsabs=1e-13, epsrel=1e-11)
    return (a + b) / (2.0 * math.sqrt(math.pi))


def _mixture_pair_mean(comp_a, comp_b) -> float:
    """E|X - Y| for independent equal-weight Gaussian mixtures."""
    total = 0.0
    for (ma, ca), (mb, cb) in itertools.product(comp_a, comp_b):
        total += expected_gaussian_norm(ma - mb, ca + cb)
    return total / (len(comp_a) * len(comp_b))


@dataclass
class ExpectedOutcome:
    basis_angles_deg: list[float]
    emp_angle_bound_deg: float | None
    occ_w2_sq_norm: float
    energy_distance_norm: float
    mean_shift_norm: float
    auc: float
    mean_gap: float
    scale_sq: float
    q_pass: bool | None
    nu_pass: bool
    coupling_positive: bool
    controls_clean: bool
    verdict: str | None
    margins: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _frame(spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray]:
    g = _rng.substream(spec.seed, _rng.SYNTH, _rng.tag("frame"))
    q, r = np.linalg.qr(g.standard_normal((spec.D, spec.D)))
    q = q * np.sign(np.diag(r))
    centroid = 2.0 * g.standard_normal(spec.D)
    return q, centroid


def _target_components(spec: ScenarioSpec):
    th = math.radians(spec.rotation_deg)
    k, m, t = spec.k, spec.m, spec.t
    cov = np.diag(m.copy())
    cov[0, 0] = math.cos(th) ** 2 * m[0]
    comps = []
    for sign in (1.0, -1.0):
        mu = t[:k].copy()
        mu[0] += sign * math.cos(th) * spec.signal_gap / 2
        comps.append((mu, cov))
    return comps


def _source_components(spec: ScenarioSpec):
    comps = []
    for sign in (1.0, -1.0):
        mu = np.zeros(spec.k)
        mu[0] = sign * spec.signal_gap / 2
        comps.append((mu, np.eye(spec.k)))
    return comps


def expected_outcome(spec: ScenarioSpec, policy: ThresholdPolicy = ThresholdPolicy()) -> ExpectedOutcome:
    k, th_deg = spec.k, spec.rotation_deg
    src_cov = spec.source_cov()
    # population rank selection must reproduce k on both sides
    src_var = np.sort(np.diag(src_cov))[::-1]
    tgt_var = spec.m.copy()
    tgt_var[0] += spec.signal_gap**2 / 4
    tgt_var = np.sort(tgt_var)[::-1]
    if select_rank(src_var, 0.9, 6) != k or select_rank(tgt_var, 0.9, 6) != k:
        raise ValidationError("scenario variances do not select chart rank k on both sides")

    scale_sq = float(np.trace(src_cov))
    tgt = _target_components(spec)
    tgt_mean = np.mean([mu for mu, _ in tgt], axis=0)
    tgt_cov = tgt[0][1] + np.cov(np.array([mu for mu, _ in tgt]).T, ddof=0).reshape(k, k)
    w2 = gaussian_w2_sq(np.zeros(k), src_cov, tgt_mean, tgt_cov) / scale_sq
    shift = float(np.linalg.norm(spec.t[:k]) / math.sqrt(scale_sq))

    src = _source_components(spec)
    exy = _mixture_pair_mean(src, tgt)
    exx = _mixture_pair_mean(src, src)
    eyy = _mixture_pair_mean(tgt, tgt)
    energy = max(2 * exy - exx - eyy, 0.0) / exx

    angles = [0.0] * (k - 1) + [float(th_deg)]
    t = spec.t
    if th_deg == 0.0:
        emp_bound = 0.0
    elif t[0] == 0.0 and t[k] == 0.0 and spec.noise == 0.0:
        emp_bound = float(th_deg)
    else:
        emp_bound = None

    basis_mean, basis_max = float(np.mean(angles)), float(np.max(angles))
    if basis_max > policy.basis_max_max_deg or basis_mean > policy.basis_mean_max_deg:
        q_pass: bool | None = False
    elif emp_bound is not None and emp_bound <= min(policy.emp_mean_max_deg, policy.emp_max_max_deg):
        q_pass = True
    else:
        q_pass = None  # empirical-tangent mean is not pinned analytically here
    nu_pass = w2 <= policy.occ_w2_max and energy <= policy.energy_max

    sd = math.sqrt(spec.m[0])
    pop_auc = float(norm.cdf(spec.signal_gap / (math.sqrt(2.0) * sd))) if spec.signal_gap != 0 else 0.5
    positive = pop_auc >= 0.5 + policy.coupling_auc_margin and spec.signal_gap > 0
    # every control family scores symmetric statistics, centred on AUC 0.5
    clean = positive

    margins = {
        "occ_w2_sq_norm": abs(w2 - policy.occ_w2_max) / policy.occ_w2_max,
        "energy_distance_norm": abs(energy - policy.energy_max) / policy.energy_max,
        "basis_angle_mean_deg": abs(basis_mean - policy.basis_mean_max_deg) / policy.basis_mean_max_deg,
        "basis_angle_max_deg": abs(basis_max - policy.basis_max_max_deg) / policy.basis_max_max_deg,
        "auc": abs(pop_auc - (0.5 + policy.coupling_auc_margin)) / (0.5 + policy.coupling_auc_margin),
    }
    verdict = adjudicate(q_pass, nu_pass, positive, clean).verdict if q_pass is not None else None
    return ExpectedOutcome(
        basis_angles_deg=angles,
        emp_angle_bound_deg=emp_bound,
        occ_w2_sq_norm=float(w2),
        energy_distance_norm=float(energy),
        mean_shift_norm=shift,
        auc=pop_auc,
        mean_gap=float(spec.signal_gap),
        scale_sq=scale_sq,
        q_pass=q_pass,
        nu_pass=bool(nu_pass),
        coupling_positive=bool(positive),
        controls_clean=bool(clean),
        verdict=verdict,
        margins=margins,
    )


def _rows(spec: ScenarioSpec, prefix: str, n_total: int) -> list[RowMeta]:
    rows = []
    for i in range(n_total):
        informative = i < n_total // 2
        rows.append(
            RowMeta(
                row_id=f"{prefix}-{i:06d}",
                condition=INFORMATIVE if informative else NULL_RANDOM,
                span=spec.site.span,
                layer=spec.site.layer,
                surface=spec.site.surface,
                group_id=str(i % spec.n_groups) if spec.n_groups else None,
                role="informative" if informative else "null_control",
            )
        )
    return rows


def _canonical_sample(spec: ScenarioSpec, g: np.random.Generator, target: bool) -> np.ndarray:
    n, k, D = spec.n, spec.k, spec.D
    z = np.zeros((2 * n, D))
    sd = np.sqrt(spec.m) if target else np.ones(k)
    z[:, :k] = g.standard_normal((2 * n, k)) * sd
    z[:n, 0] += spec.signal_gap / 2
    z[n:, 0] -= spec.signal_gap / 2
    if spec.noise > 0:
        z[:, k:] += spec.noise * g.standard_normal((2 * n, D - k))
    if target:
        th = math.radians(spec.rotation_deg)
        a, b = z[:, 0].copy(), z[:, k].copy()
        z[:, 0] = math.cos(th) * a - math.sin(th) * b
        z[:, k] = math.sin(th) * a + math.cos(th) * b
        z += spec.t
    return z


def sample_source(spec: ScenarioSpec, draw: int = 0, prefix: str = "src") -> ActivationTable:
    q, c = _frame(spec)
    g = _rng.substream(spec.seed, _rng.SYNTH, _rng.tag("source"), draw)
    z = _canonical_sample(spec, g, target=False)
    return ActivationTable(c + z @ q.T, _rows(spec, f"{prefix}{draw}" if draw else prefix, 2 * spec.n))


def sample_target(spec: ScenarioSpec, draw: int = 0, prefix: str = "tgt") -> ActivationTable:
    q, c = _frame(spec)
    g = _rng.substream(spec.seed, _rng.SYNTH, _rng.tag("target"), draw)
    z = _canonical_sample(spec, g, target=True)
    return ActivationTable(c + z @ q.T, _rows(spec, f"{prefix}{draw}" if draw else prefix, 2 * spec.n))


def generate(spec: ScenarioSpec, policy: ThresholdPolicy = ThresholdPolicy()):
    """(source table, target table, expected outcome) for one scenario."""
    return sample_source(spec), sample_target(spec), expected_outcome(spec, policy)


def ambient_frame(spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray]:
    """(Q, centroid) mapping canonical to ambient coordinates."""
    return _frame(spec)


def verdict_grid(
    D: int = 16,
    k: int = 2,
    n: int = 512,
    seed: int = 0,
    rotations: Sequence[float] = (0.0, 20.0, 80.0),
    translations: Sequence[float] = (0.0, 0.25, 2.0),
    reshapes: Sequence[float] = (1.0, 1.3, 9.0),
) -> list[ScenarioSpec]:
    """3x3x3 grid kept away from every threshold.

    Translations are in units of the source scale and move along chart
    axis 1, orthogonal to the rotated axis; reshapes multiply every chart
    variance of the target.
    """
    if k < 2:
        raise ValidationError("grid needs k >= 2 so translation can avoid the rotated axis")
    base = ScenarioSpec(D=D, k=k, n=n)
    specs = []
    for i, (rot, tr, rs) in enumerate(itertools.product(rotations, translations, reshapes)):
        specs.append(
            ScenarioSpec(
                D=D,
                k=k,
                n=n,
                rotation_deg=rot,
                translation=chart_translation(D, 1, tr * base.scale),
                occupancy_reshape=tuple([rs] * k),
                seed=seed + i,
            )
        )
    return specs


def mcq_displacement_scenario(
    seed: int = 0,
    n: int = 192,
    D: int = 32,
    k: int = 3,
    near_shift: float = 1.6,
    far_shift: float = 7.0,
    swap: bool = False,
    site: Site = Site(24, "reason", "hidden_on"),
) -> tuple[ActivationTable, ActivationTable]:
    """(source table, target table) for the one-sided re-entry pattern.

    The target's informative branch is displaced mildly within the chart
    (``near_shift`` source scales) and the null-control branch far
    (``far_shift``); ``swap`` exchanges the constructions.
    """
    g = _rng.substream(seed, _rng.SYNTH, _rng.tag("mcq"))
    q, r = np.linalg.qr(g.standard_normal((D, D)))
    q = q * np.sign(np.diag(r))
    c = 2.0 * g.standard_normal(D)
    off_sd = 0.05

    def draw(count: int, shift: float, spread: float, off: float) -> np.ndarray:
        z = np.zeros((count, D))
        z[:, :k] = spread * g.standard_normal((count, k))
        z[:, k:] = off * g.standard_normal((count, D - k))
        z[:, 0] += shift
        return c + z @ q.T

    src_scale = math.sqrt(k + (D - k) * off_sd**2)
    source = draw(2 * n, 0.0, 1.0, off_sd)
    near = draw(n, near_shift * src_scale, 1.1, 0.15)
    far = draw(n, far_shift * src_scale, 1.1, 0.15)
    informative, control = (far, near) if swap else (near, far)

    def rows(prefix: str, count: int, split: bool) -> list[RowMeta]:
        out = []
        for i in range(count):
            inf = (i < count // 2) if split else (i < n)
            out.append(RowMeta(
                row_id=f"{prefix}-{i:05d}",
                condition=INFORMATIVE if inf else NULL_RANDOM,
                span=site.span, layer=site.layer, surface=site.surface,
                role="informative" if inf else "null_control",
            ))
        return out

    src_table = ActivationTable(source, rows("mcq-src", 2 * n, True))
    tgt_table = ActivationTable(np.vstack([informative, control]), rows("mcq-tgt", 2 * n, False))
    return src_table, tgt_table


def _grid_auc(pos: np.ndarray, neg: np.ndarray) -> float:
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def fold_bridge_scenario(
    target_aucs: Sequence[float],
    counts: Sequence[int],
    groups: Sequence[str] | None = None,
    seed: int = 0,
    D: int = 8,
    lane: Site = Site(24, "reason", "delta"),
):
    """(atlas, table) whose held-out groups hit prescribed per-fold AUCs.

    Each group's scores are deterministic normal-quantile grids for the two
    conditions, offset along the lane axis; the offset is solved by bisection
    so the grid AUC matches the target. Rows also carry seeded spread on the
    second chart axis and small off-chart noise, and a decoy chart sits far
    from the lane so assignment is exercised.
    """
    from .bridge import FrozenAtlas
    from .charts import estimate_tangent

    if len(target_aucs) != len(counts):
        raise ValidationError("need one row count per target AUC")
    groups = [str(g) for g in (groups or range(len(counts)))]
    g = _rng.substream(seed, _rng.SYNTH, _rng.tag("folds"))
    q, r = np.linalg.qr(g.standard_normal((D, D)))
    q = q * np.sign(np.diag(r))
    c = 2.0 * g.standard_normal(D)
    sds = np.array([2.0, 1.5] + [0.05] * (D - 2))

    def embed(z: np.ndarray, centre: np.ndarray) -> np.ndarray:
        return centre + z @ q.T

    support = g.standard_normal((4000, D)) * sds
    lane_chart = estimate_tangent(embed(support, c), site=lane)
    decoy_site = Site(lane.layer, "late_reason" if lane.span != "late_reason" else "reason", lane.surface)
    decoy = estimate_tangent(embed(g.standard_normal((4000, D)) * sds, c + 40.0 * q[:, 2]), site=decoy_site)
    atlas = FrozenAtlas([lane_chart, decoy], axes={lane.key: q[:, 0].copy(), decoy_site.key: q[:, 0].copy()})

    values, rows = [], []
    for grp, target, n in zip(groups, target_aucs, counts):
        n_pos, n_neg = (n + 1) // 2, n // 2
        if n_neg < 1:
            raise ValidationError("each group needs at least two rows")
        zp = norm.ppf((np.arange(n_pos) + 0.5) / n_pos)
        zn = norm.ppf((np.arange(n_neg) + 0.5) / n_neg)
        lo, hi = -12.0, 12.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if _grid_auc(zp + mid, zn) < target:
                lo = mid
            else:
                hi = mid
        shift = hi
        z = np.zeros((n, D))
        z[:n_pos, 0] = zp + shift / 2
        z[n_pos:, 0] = zn - shift / 2
        z[:, 1] = 1.5 * g.permutation(norm.ppf((np.arange(n) + 0.5) / n))
        z[:, 2:] = 0.05 * g.standard_normal((n, D - 2))
        values.append(embed(z, c))
        for j in range(n):
            inf = j < n_pos
            rows.append(RowMeta(
                row_id=f"g{grp}-{j:04d}", condition=INFORMATIVE if inf else NULL_RANDOM,
                span=lane.span, layer=lane.layer, surface=lane.surface, group_id=grp,
                role="informative" if inf else "null_control",
            ))
    return atlas, ActivationTable(np.vstack(values), rows)
