"""Zvonkin change of variables ``Phi(s, y) = y + u(s, y)`` for a rough drift.

``u`` solves ``(ds + Lap/2 + b d) u = -b + lam u`` with ``u(t) = 0``. By Ito's
formula ``Y_s = Phi(s, gamma_s)`` then has drift ``lam u`` and diffusion
``1 + du``, with no trace of ``b`` left in the drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp

from .control import ControlPolicy, simulate_paths
from .field import (
    SpaceTimeField,
    TorusField,
    derivative_values,
    interp_periodic,
    steps_for,
)
from .pde import BackwardPdeProblem, solve_backward_pde
from .rng import path_blocks, stream

LAMBDA_CAP = 2.0**20


class ZvonkinError(RuntimeError):
    pass


@dataclass(frozen=True)
class ZvonkinMap:
    lam: float
    u: SpaceTimeField
    du: SpaceTimeField = field(repr=False)
    grad_bound: float
    trace: tuple = ()

    @property
    def grid(self):
        return self.u.grid

    @property
    def horizon(self) -> float:
        return self.u.horizon

    def _frame(self, s: float) -> int:
        return self.u.index_of(s)

    def phi_frame(self, j: int, y) -> np.ndarray:
        return np.asarray(y, dtype=float) + interp_periodic(self.u.data[j], self.grid, y)

    def phi(self, s: float, y) -> np.ndarray:
        return self.phi_frame(self._frame(s), y)

    def phi_inverse_frame(self, j: int, z) -> np.ndarray:
        """Exact inverse of the piecewise-linear map ``y -> y + u(s_j, y)``.

        Since ``Phi(y + period) = Phi(y) + period`` and the map increases on
        every cell, the inverse is the piecewise-linear interpolant through
        the swapped knots.
        """
        g = self.grid
        p = g.period
        knots = np.concatenate([g.points, [g.points[0] + p]])
        vals = knots + np.concatenate([self.u.data[j], self.u.data[j][:1]])
        z = np.asarray(z, dtype=float)
        # shift z into the image of one period [knots[0], knots[0] + p)
        base = vals[0]
        k = np.floor((z - base) / p)
        return np.interp(z - k * p, vals, knots) + k * p

    def phi_inverse(self, s: float, z) -> np.ndarray:
        return self.phi_inverse_frame(self._frame(s), z)

    def drift_frame(self, j: int, z) -> np.ndarray:
        """``b~ = lam u(s, Phi^{-1}(s, z))``."""
        y = self.phi_inverse_frame(j, z)
        return self.lam * interp_periodic(self.u.data[j], self.grid, y)

    def diffusion_frame(self, j: int, z) -> np.ndarray:
        """``sigma~ = (1 + du)(s, Phi^{-1}(s, z))``."""
        y = self.phi_inverse_frame(j, z)
        return 1.0 + interp_periodic(self.du.data[j], self.grid, y)

    def lipschitz_sandwich(self) -> tuple[float, float]:
        """Extreme ratios ``|Phi(y) - Phi(z)| / |y - z|`` over all grid pairs.

        For a piecewise-linear map the extremes over all pairs are attained
        on neighbouring knots, so the cell slopes suffice.
        """
        slopes = 1.0 + np.diff(np.concatenate([self.u.data, self.u.data[:, :1]], axis=1),
                               axis=1) / self.grid.spacing
        return float(slopes.min()), float(slopes.max())

    def inverse_error(self) -> float:
        """Max over frames of ``|Phi^{-1}(Phi(y)) - y|`` on the grid."""
        y = self.grid.points
        return float(max(np.abs(self.phi_inverse_frame(j, self.phi_frame(j, y)) - y).max()
                         for j in range(len(self.u.times))))

    def trace_records(self) -> list[dict]:
        return [{"lambda": lam, "grad_bound": gb} for lam, gb in self.trace]


def solve_zvonkin_pde(b: SpaceTimeField, t: float, lam: float) -> SpaceTimeField:
    zero = TorusField.constant(b.grid, 0.0)
    return solve_backward_pde(BackwardPdeProblem(b, "minus-b", zero, lam, t))


def build_zvonkin_map(
    b: SpaceTimeField, t: float, lam_init: float = 1.0, lam_cap: float = LAMBDA_CAP
) -> ZvonkinMap:
    """Double ``lam`` from ``lam_init`` until ``sup |du| < 1/2``.

    Raises :class:`ZvonkinError` once ``lam`` would pass ``lam_cap``.
    """
    if not lam_init > 0:
        raise ValueError("lam_init must be positive")
    if b.horizon > t + 1e-12:
        b = SpaceTimeField(b.grid, b.times[: b.index_of(t) + 1], b.data[: b.index_of(t) + 1])
    lam = float(lam_init)
    trace = []
    while lam <= lam_cap:
        u = solve_zvonkin_pde(b, t, lam)
        du = u.map_frames(lambda d: derivative_values(d, b.grid))
        gb = float(np.abs(du.data).max())
        trace.append((lam, gb))
        if gb < 0.5:
            return ZvonkinMap(lam, u, du, gb, tuple(trace))
        lam *= 2.0
    raise ZvonkinError(f"no admissible lambda up to {lam_cap:g}; last grad_bound {trace[-1][1]:.4f}")


def grad_bound_sweep(b: SpaceTimeField, t: float, lams) -> list[float]:
    out = []
    for lam in lams:
        u = solve_zvonkin_pde(b, t, lam)
        out.append(float(np.abs(derivative_values(u.data, b.grid)).max()))
    return out


@dataclass(frozen=True)
class TransformedEnsemble:
    """Paths of ``Y`` at the stored times and their pull-backs ``Phi^{-1}(s, Y_s)``."""

    times: np.ndarray
    y: np.ndarray = field(repr=False)
    gamma: np.ndarray = field(repr=False)
    qv: np.ndarray = field(repr=False)
    qv_model: np.ndarray = field(repr=False)
    seed: int = 0

    def at(self, s: float) -> np.ndarray:
        return self.y[int(round(s / (self.times[1] - self.times[0])))]


def simulate_transformed(
    zmap: ZvonkinMap, x: float, t: float, n_paths: int, dt: float, seed: int,
    store_every: int = 1,
) -> TransformedEnsemble:
    """Euler-Maruyama for ``dY = b~ ds + sigma~ dB`` from ``Y_0 = Phi(0, x)``.

    Also returns the realised quadratic variation ``sum (dY)^2`` and the
    model value ``int sigma~^2 ds`` per path.
    """
    n = steps_for(t, dt)
    if abs(zmap.u.dt - dt) > 1e-12:
        raise ValueError(f"map mesh step {zmap.u.dt} differs from dt {dt}")
    if zmap.horizon < t - 1e-12:
        raise ValueError("map does not cover [0, t]")
    keep = list(range(0, n + 1, store_every))
    ys = np.empty((len(keep), n_paths))
    qv = np.empty(n_paths)
    qm = np.empty(n_paths)
    sq = np.sqrt(dt)
    for block, (lo, hi) in enumerate(path_blocks(n_paths)):
        rng = stream(seed, "zvonkin", block)
        m = hi - lo
        y = np.full(m, float(zmap.phi_frame(0, np.array([x]))[0]))
        acc = np.zeros(m)
        model = np.zeros(m)
        row = 0
        for j in range(n):
            if j % store_every == 0:
                ys[row, lo:hi] = y
                row += 1
            sig = zmap.diffusion_frame(j, y)
            dy = zmap.drift_frame(j, y) * dt + sig * sq * rng.standard_normal(m)
            acc += dy * dy
            model += sig * sig * dt
            y = y + dy
        if n % store_every == 0:
            ys[row, lo:hi] = y
        qv[lo:hi] = acc
        qm[lo:hi] = model
    times = dt * np.array(keep)
    gamma = np.stack([zmap.phi_inverse_frame(j, ys[r]) for r, j in enumerate(keep)])
    return TransformedEnsemble(times, ys, gamma, qv, qm, int(seed))


class _Recorder:
    """Keep copies of the path state at selected step indices."""

    def __init__(self, steps, n):
        self.steps = set(steps)
        self.n = n

    def __call__(self, j, g):
        return g.copy() if j in self.steps else None


@dataclass(frozen=True)
class LawReport:
    times: tuple
    statistics: tuple
    p_values: tuple
    lam: float
    grad_bound: float
    qv_fraction_in_bounds: float
    qv_mean_gap: float
    qv_gap_std_error: float

    def passed(self, level: float = 0.01) -> bool:
        return (min(self.p_values) > level and self.grad_bound < 0.5
                and self.qv_fraction_in_bounds == 1.0)

    def to_dict(self) -> dict:
        return {"times": list(self.times), "ks_statistic": list(self.statistics),
                "p_value": list(self.p_values), "lambda": self.lam,
                "grad_bound": self.grad_bound, "qv_fraction_in_bounds": self.qv_fraction_in_bounds}


def law_equivalence_check(
    b: SpaceTimeField, zmap: ZvonkinMap, x: float, t: float, n_paths: int, seed: int,
    dt: float | None = None,
) -> LawReport:
    """Two-sample KS between ``Phi(s, gamma_s)`` and ``Y_s`` at ``s in {t/4, t/2, t}``.

    The two routes use unrelated streams so the samples are independent.
    """
    dt = zmap.u.dt if dt is None else dt
    probes = (t / 4, t / 2, t)
    direct = simulate_direct_paths(b, x, t, n_paths, dt, seed, probes)
    trans = simulate_transformed(zmap, x, t, n_paths, dt, seed + 1_000_003)
    stats, pvals = [], []
    for s in probes:
        j = int(round(s / dt))
        lhs = zmap.phi_frame(j, direct[s])
        res = ks_2samp(lhs, trans.y[j])
        stats.append(float(res.statistic))
        pvals.append(float(res.pvalue))
    lo, hi = t / 4, 9 * t / 4
    inside = np.mean((trans.qv >= lo) & (trans.qv <= hi))
    gap = trans.qv - trans.qv_model
    return LawReport(probes, tuple(stats), tuple(pvals), zmap.lam, zmap.grad_bound,
                     float(inside), float(gap.mean()), float(gap.std(ddof=1) / np.sqrt(len(gap))))


def simulate_direct_paths(b, x, t, n_paths, dt, seed, probes) -> dict[float, np.ndarray]:
    """``gamma`` driven by ``b(s, .)`` in forward time, sampled at ``probes``."""
    steps = {int(round(s / dt)): s for s in probes}
    ens = simulate_paths(b, ControlPolicy.zero(), x, t, n_paths, dt, seed,
                         reverse_drift=False, record=_Recorder(steps, steps_for(t, dt)))
    rec = ens.extra["record"]
    return {s: rec[j] for j, s in steps.items()}


def sigma_bounds(zmap: ZvonkinMap) -> tuple[float, float]:
    d = 1.0 + zmap.du.data
    return float(d.min()), float(d.max())


def transformed_drift_bound(zmap: ZvonkinMap) -> tuple[float, float]:
    """``(sup |b~|, lam sup |u|)`` over the stored frames."""
    z = zmap.grid.points
    sup_bt = max(np.abs(zmap.drift_frame(j, z)).max() for j in range(len(zmap.u.times)))
    return float(sup_bt), float(zmap.lam * np.abs(zmap.u.data).max())

