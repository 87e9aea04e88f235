"""Transition densities: kernel estimates, Gaussian envelopes, torus kernels."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .field import TorusGrid, interp_periodic

MIN_SAMPLES = 1000
# bandwidth used when the sample has no spread at all
POINT_MASS_BANDWIDTH = 1e-2


def silverman_bandwidth(samples: np.ndarray) -> float:
    """``0.9 min(sd, IQR / 1.34) n^(-1/5)`` with fallbacks for degenerate samples."""
    x = np.asarray(samples, dtype=float)
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = max(sd, (q75 - q25) / 1.34)
    if spread <= 0:
        return POINT_MASS_BANDWIDTH
    return float(0.9 * spread * len(x) ** (-0.2))


@dataclass(frozen=True)
class DensityEstimate:
    """Density values on an evaluation grid.

    ``period`` is None on the line; otherwise the points cover one period and
    integration is the periodic trapezoid rule. ``evaluator`` (optional)
    evaluates the same density anywhere.
    """

    points: np.ndarray
    values: np.ndarray
    bandwidth: float
    n_samples: int
    period: float | None = None
    quantiles: tuple[float, float] | None = None
    provenance: dict = field(default_factory=dict)
    evaluator: Callable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("density values must be non-negative")

    def integral(self) -> float:
        if self.period is not None:
            return float(self.values.sum() * (self.points[1] - self.points[0]))
        return float(np.trapezoid(self.values, self.points))

    def __call__(self, y):
        if self.evaluator is not None:
            return self.evaluator(np.asarray(y, dtype=float))
        if self.period is not None:
            p = self.period
            xp = np.concatenate([self.points, [self.points[0] + p]])
            fp = np.concatenate([self.values, self.values[:1]])
            y = np.mod(np.asarray(y) - self.points[0], p) + self.points[0]
            return np.interp(y, xp, fp)
        return np.interp(y, self.points, self.values, left=0.0, right=0.0)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "density"])
            for y, v in zip(self.points, self.values):
                w.writerow([repr(float(y)), repr(float(v))])

    def metadata(self) -> dict:
        return {"bandwidth": self.bandwidth, "n_samples": self.n_samples,
                "period": self.period, "quantiles": self.quantiles,
                "integral": self.integral(), **self.provenance}


def _kde(samples: np.ndarray, y: np.ndarray, bw: float, period: float | None) -> np.ndarray:
    """Gaussian kernel sum evaluated at ``y``, chunked over samples."""
    out = np.zeros(y.shape)
    norm = 1.0 / (len(samples) * bw * np.sqrt(2.0 * np.pi))
    if period is None:
        shifts = np.zeros(1)
    else:
        reach = int(np.ceil(10.0 * bw / period)) + 1
        shifts = np.arange(-reach, reach + 1) * period
    for a in range(0, len(samples), 8192):
        s = samples[a:a + 8192]
        for k in shifts:
            d = (y[:, None] - s[None, :] - k) / bw
            out += np.exp(-0.5 * d * d).sum(axis=1)
    return out * norm


def estimate_density(
    samples,
    bandwidth: float | str = "silverman",
    period: float | None = None,
    points: np.ndarray | None = None,
    n_points: int = 512,
    provenance: dict | None = None,
) -> DensityEstimate:
    """Gaussian kernel density estimate; wrapped kernels when ``period`` is set.

    On the line the default grid spans the sample range plus six bandwidths.
    The 0.25% and 99.75% sample quantiles are stored for later tail cuts.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {len(x)}")
    if period is not None:
        x = np.mod(x + 0.5 * period, period) - 0.5 * period
    bw = silverman_bandwidth(x) if bandwidth == "silverman" else float(bandwidth)
    if not bw > 0:
        raise ValueError(f"bandwidth must be positive, got {bw}")
    if points is None:
        if period is None:
            points = np.linspace(x.min() - 6 * bw, x.max() + 6 * bw, n_points)
        else:
            points = TorusGrid(n_points, period).points
    points = np.asarray(points, dtype=float)
    vals = _kde(x, points, bw, period)
    q = tuple(float(v) for v in np.quantile(x, [0.0025, 0.9975]))
    return DensityEstimate(points, vals, bw, len(x), period, q, dict(provenance or {}),
                           evaluator=lambda y: _kde(x, np.atleast_1d(y), bw, period))


def gaussian_density(t: float, center: float = 0.0, points=None) -> DensityEstimate:
    """Exact ``N(center, t)`` density as a :class:`DensityEstimate`."""
    if points is None:
        s = np.sqrt(t)
        points = np.linspace(center - 8 * s, center + 8 * s, 1025)

    def ev(y):
        return np.exp(-((y - center) ** 2) / (2 * t)) / np.sqrt(2 * np.pi * t)

    s = np.sqrt(t)
    q = (center - 2.807 * s, center + 2.807 * s)
    return DensityEstimate(np.asarray(points), ev(np.asarray(points)), 0.0, 0, None, q,
                           {"source": "exact gaussian", "t": t}, evaluator=ev)


# -- Gaussian envelopes ----------------------------------------------------------------


class SandwichError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianSandwich:
    """``C'^-1 g_{c'} <= p <= C g_c`` with ``g_c = (2 pi t)^(-1/2) exp(-c r^2 / t)``.

    Brownian motion has ``C = C' = 1`` and ``c = c' = 1/2``.
    """

    C_upper: float
    c_upper: float
    C_lower: float
    c_lower: float
    t: float
    center: float
    n_nodes: int
    region: tuple[float, float]
    upper_margin: float
    lower_margin: float

    def upper(self, y):
        r2 = (np.asarray(y) - self.center) ** 2
        return self.C_upper * np.exp(-self.c_upper * r2 / self.t) / np.sqrt(2 * np.pi * self.t)

    def lower(self, y):
        r2 = (np.asarray(y) - self.center) ** 2
        return np.exp(-self.c_lower * r2 / self.t) / (self.C_lower * np.sqrt(2 * np.pi * self.t))

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "C_upper", "c_upper", "C_lower", "c_lower", "t", "center", "n_nodes",
            "upper_margin", "lower_margin")} | {"region": list(self.region)}


def fit_gaussian_sandwich(
    d: DensityEstimate, t: float, center: float = 0.0, region: tuple | None = None,
    floor: float = 0.0,
) -> GaussianSandwich:
    """Tightest envelopes by linear programming in ``(log C, c)``.

    Only nodes inside ``region`` (default: the stored central 99.5% sample
    quantile range) are used, since kernel-estimate noise dominates the far
    tail. The upper envelope minimises its summed log-excess over the nodes
    subject to lying above the density; the lower one mirrors it.
    """
    lo, hi = region if region is not None else d.quantiles
    sel = (d.points >= lo) & (d.points <= hi) & (d.values > floor)
    if sel.sum() < 3:
        raise SandwichError("fewer than three usable nodes in the fitting region")
    r2t = (d.points[sel] - center) ** 2 / t
    ell = np.log(d.values[sel]) + 0.5 * np.log(2 * np.pi * t)
    # variables (a, c); envelope log-height a - c r2t
    ones = np.ones_like(r2t)
    up = linprog(c=[len(r2t), -r2t.sum()], A_ub=np.column_stack([-ones, r2t]), b_ub=-ell,
                 bounds=[(None, None), (0, None)], method="highs")
    lw = linprog(c=[-len(r2t), r2t.sum()], A_ub=np.column_stack([ones, -r2t]), b_ub=ell,
                 bounds=[(None, None), (0, None)], method="highs")
    if up.status != 0 or lw.status != 0:
        bad = d.points[sel][np.argmax(ell)]
        raise SandwichError(f"envelope fit infeasible (status {up.status}, {lw.status}) near y={bad}")
    a_u, c_u = up.x
    a_l, c_l = lw.x
    um = float(np.min(a_u - c_u * r2t - ell))
    lm = float(np.min(ell - (a_l - c_l * r2t)))
    return GaussianSandwich(float(np.exp(a_u)), float(c_u), float(np.exp(-a_l)), float(c_l),
                            float(t), float(center), int(sel.sum()), (float(lo), float(hi)), um, lm)


def sandwich_stability(fits: list[GaussianSandwich]) -> float:
    """Largest max/min ratio of any fitted constant across a list of fits."""
    worst = 1.0
    for key in ("C_upper", "c_upper", "C_lower", "c_lower"):
        v = np.array([getattr(f, key) for f in fits])
        if np.any(v <= 0):
            return np.inf
        worst = max(worst, float(v.max() / v.min()))
    return worst


# -- periodisation and the torus kernel -------------------------------------------------


def periodize(
    d: DensityEstimate, period: float = 1.0, n_points: int = 256, prefactor: float = 1.0,
    tol: float = 1e-10, max_images: int = 10000,
) -> DensityEstimate:
    """``prefactor * sum_k p(y + k period)`` on one period.

    Images are added in symmetric pairs until a pair contributes less than
    ``tol`` everywhere. Without an evaluator the line density must have
    decayed below ``1e-12`` at its grid ends.
    """
    if d.period is not None:
        raise ValueError("input is already periodic")
    if d.evaluator is None:
        edge = max(d.values[0], d.values[-1])
        if edge > 1e-12:
            raise ValueError(f"line density is {edge:.2e} at the truncation radius, above 1e-12")
    y = TorusGrid(n_points, period).points
    base = np.asarray(d(y), dtype=float)
    total = base.copy()
    for k in range(1, max_images + 1):
        pair = np.asarray(d(y + k * period)) + np.asarray(d(y - k * period))
        total += pair
        if pair.max() < tol:
            break
    else:
        raise ValueError(f"image sum did not converge within {max_images} periods")
    total *= prefactor
    if np.any(total < prefactor * base):
        raise AssertionError("wrapped density fell below the unwrapped one")
    return DensityEstimate(y, total, d.bandwidth, d.n_samples, period, None,
                           dict(d.provenance, periodized=True, prefactor=prefactor))


def image_sum_bound(t: float, r: float, period: float = 1.0) -> float:
    """Upper bound on ``sum_{k != 0} g_t(y + k period)`` for ``|y| <= r < period/2``.

    Each image is at distance at least ``k period - r``; the tail of the
    resulting series is bounded by a geometric sum.
    """
    s = 0.0
    k = 1
    while True:
        dist = k * period - r
        term = 2.0 * np.exp(-dist * dist / (2 * t)) / np.sqrt(2 * np.pi * t)
        s += term
        if term < 1e-18 * max(s, 1e-300) or k > 10000:
            return float(s)
        k += 1


def log_torus_heat_kernel(s, y, period: float = 1.0, prefactor: float | None = None):
    """``log(prefactor * sum_k g_s(y + k period))``, stable for tiny ``s``."""
    from scipy.special import logsumexp

    prefactor = period if prefactor is None else prefactor
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    reach = int(np.ceil(12.0 * np.sqrt(s.max()) / period)) + 2
    k = np.arange(-reach, reach + 1) * period
    z = y[..., None] + k
    return (np.log(prefactor) - 0.5 * np.log(2 * np.pi * s)
            + logsumexp(-z * z / (2 * s[..., None]), axis=-1))


def torus_heat_kernel(s, y, period: float = 1.0, prefactor: float | None = None):
    """``prefactor * sum_k g_s(y + k period)`` with ``g_s`` the Gaussian of variance ``s``.

    The prefactor defaults to ``period``, which makes the kernel integrate to
    one against the normalised measure ``dy / period``.
    """
    return np.exp(log_torus_heat_kernel(s, y, period, prefactor))


def torus_distance(y, period: float):
    d = np.mod(np.asarray(y, dtype=float), period)
    return np.minimum(d, period - d)


@dataclass(frozen=True)
class TorusBoundReport:
    passed: bool
    lower_margin: np.ndarray
    upper_margin: np.ndarray
    n_checked: int


def torus_heat_bounds_check(s, y, period_mode: str = "2pi") -> TorusBoundReport:
    """Check ``L g_s(|y|_T) <= p_T(s, y) <= 2 (1 + L (2 pi s)^(-1/2)) exp(-|y|_T^2 / 2s)``.

    ``p_T = L sum_k g_s(y + k L)`` with ``L = 2 pi`` in ``"2pi"`` mode and
    ``L = 1`` in ``"unit"`` mode. Margins are log-ratios (``log p - log lower``
    and ``log upper - log p``), so both must be non-negative.
    """
    L = {"2pi": 2 * np.pi, "unit": 1.0}[period_mode]
    s, y = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(y, dtype=float))
    if np.any(s <= 0):
        raise ValueError("s must be positive")
    logp = log_torus_heat_kernel(s, y, L, L)
    dist = torus_distance(y, L)
    expo = -dist * dist / (2 * s)
    log_lower = np.log(L) - 0.5 * np.log(2 * np.pi * s) + expo
    log_upper = np.log(2.0 * (1.0 + L / np.sqrt(2 * np.pi * s))) + expo
    lm = logp - log_lower
    um = log_upper - logp
    # rounding in the log-sum-exp grows with the size of the exponent
    tol = 1e-12 * np.maximum(1.0, np.abs(expo))
    ok = bool(np.all(lm >= -tol) and np.all(um >= -tol))
    return TorusBoundReport(ok, lm, um, int(logp.size))


def gradient_ratio(d, t: float | None = None, period: float | None = None, n_points: int = 512):
    """``sup |dp / p|`` over the torus by centred differences of ``log p``.

    ``d`` is a periodic :class:`DensityEstimate` or, when ``t`` is given and
    ``d`` is None, the exact torus heat kernel of period ``period``.
    """
    if d is None:
        if t is None or period is None:
            raise ValueError("analytic mode needs t and period")
        y = TorusGrid(n_points, period).points
        vals = torus_heat_kernel(t, y, period)
    else:
        if d.period is None:
            raise ValueError("gradient_ratio needs a periodic density")
        y, vals, period = d.points, d.values, d.period
    if np.any(vals <= 0):
        raise ValueError(f"density touches zero at y={y[np.argmin(vals)]:.4f}")
    h = y[1] - y[0]
    lp = np.log(vals)
    grad = (np.roll(lp, -1) - np.roll(lp, 1)) / (2 * h)
    return float(np.abs(grad).max())


# -- pull-back through the Zvonkin map --------------------------------------------------


def pullback_density(p_y: DensityEstimate, zmap, s: float, points) -> DensityEstimate:
    """``p_gamma(y) = p_Y(Phi(s, y)) dPhi(s, y)`` on the line."""
    j = zmap.u.index_of(s)
    y = np.asarray(points, dtype=float)
    jac = 1.0 + interp_periodic(zmap.du.data[j], zmap.grid, y)
    vals = np.asarray(p_y(zmap.phi_frame(j, y))) * jac
    return DensityEstimate(y, vals, p_y.bandwidth, p_y.n_samples, None, None,
                           dict(p_y.provenance, pulled_back=True, s=s))


def export_density(d: DensityEstimate, out_dir, stem: str, sandwich: GaussianSandwich | None = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d.to_csv(out / f"{stem}.csv")
    meta = d.metadata()
    if sandwich is not None:
        meta["sandwich"] = sandwich.as_dict()
    (out / f"{stem}.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=float))
