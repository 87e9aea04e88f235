"""Monte Carlo engine for controlled diffusions on the torus.

Paths are simulated in unwrapped coordinates

    d gamma_s = (b(t - s, gamma_s) + v_s) ds + dB_s,   gamma_0 = x,

and wrapped only when a periodic field is evaluated. Work is split into
fixed-size blocks with independent Philox streams, so every number depends
on the seed alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtri
from scipy.stats import truncnorm

from .field import (
    SpaceTimeField,
    TorusField,
    derivative_values,
    heat_values,
    interp_periodic,
    steps_for,
)
from .noise import EnhancedNoise, NoiseRealization
from .rng import path_blocks, stream


@dataclass(frozen=True)
class ControlPolicy:
    """``zero``, ``constant`` (value ``c``) or ``feedback``.

    A feedback field ``F`` on ``[0, t]`` acts as ``v_s = F(t - s, gamma_s)``:
    linear in space, frozen in time on each Euler step.
    """

    kind: str
    c: float = 0.0
    field: SpaceTimeField | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "feedback"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "feedback" and self.field is None:
            raise ValueError("feedback policy needs a field")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, c: float):
        return cls("constant", float(c))

    @classmethod
    def feedback(cls, fld: SpaceTimeField):
        return cls("feedback", field=fld)

    def label(self) -> str:
        if self.kind == "constant":
            return f"constant({self.c:g})"
        return self.kind


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    std_error: float
    n_paths: int

    @classmethod
    def from_samples(cls, values: np.ndarray) -> "ValueEstimate":
        values = np.asarray(values, dtype=float)
        n = len(values)
        sd = values.std(ddof=1) if n > 1 else 0.0
        return cls(float(values.mean()), float(sd / np.sqrt(n)), n)

    def to_json(self, seed=None, config_hash: str | None = None) -> str:
        rec = {"estimate": self.mean, "std_error": self.std_error, "n_paths": self.n_paths,
               "seed": seed, "config_hash": config_hash}
        return json.dumps(rec, sort_keys=True)


@dataclass(frozen=True)
class PathEnsemble:
    """Per-path outputs of one simulation.

    ``terminal`` is unwrapped; ``reward`` is ``int |reward_field(t - s, gamma_s)|^2 ds``
    and ``cost`` is ``int v_s^2 ds / 2``, both by left-endpoint quadrature.
    """

    x: float
    t: float
    dt: float
    seed: int
    terminal: np.ndarray = field(repr=False)
    reward: np.ndarray = field(repr=False)
    cost: np.ndarray = field(repr=False)
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def n_paths(self) -> int:
        return len(self.terminal)

    def wrapped(self, period: float = 1.0) -> np.ndarray:
        return np.mod(self.terminal + 0.5 * period, period) - 0.5 * period


def _frame_lookup(fld: SpaceTimeField | None, t: float, dt: float, reverse: bool, name: str):
    """Return ``j -> frame index`` for Euler step ``j`` at ``s_j = j dt``."""
    if fld is None:
        return None
    if abs(fld.dt - dt) > 1e-12 * max(dt, 1.0):
        raise ValueError(f"{name} mesh step {fld.dt} differs from dt {dt}")
    n = steps_for(t, dt)
    if fld.horizon < t - 1e-12:
        raise ValueError(f"{name} covers [0, {fld.horizon}] but t = {t}")
    return (lambda j: n - j) if reverse else (lambda j: j)


def simulate_paths(
    b: SpaceTimeField | None,
    policy: ControlPolicy,
    x: float,
    t: float,
    n_paths: int,
    dt: float,
    seed: int,
    reward_field: SpaceTimeField | None = None,
    reverse_drift: bool = True,
    record: Callable | None = None,
) -> PathEnsemble:
    """Euler-Maruyama for the controlled diffusion with ``sqrt(dt) N(0, 1)`` increments.

    Parameters
    ----------
    b : SpaceTimeField or None
        Drift. With ``reverse_drift`` (default) step ``j`` uses frame
        ``t - s_j``, as the value representation needs; otherwise frame ``s_j``.
    reward_field : SpaceTimeField or None
        If given, ``reward`` accumulates ``reward_field(t - s, gamma_s)^2 ds``.
    record : callable, optional
        ``record(j, gamma)`` is called before step ``j`` and after the final
        step (``j = N``). Non-None results are gathered across blocks into
        ``extra["record"][j]``.
    """
    if n_paths <= 0:
        raise ValueError("n_paths must be positive")
    n = steps_for(t, dt)
    b_idx = _frame_lookup(b, t, dt, reverse_drift, "drift")
    r_idx = _frame_lookup(reward_field, t, dt, True, "reward field")
    v_idx = None
    if policy.kind == "feedback":
        v_idx = _frame_lookup(policy.field, t, dt, True, "feedback field")
    sq = np.sqrt(dt)

    terminal = np.empty(n_paths)
    reward = np.zeros(n_paths)
    cost = np.zeros(n_paths)
    records = []
    for block, (lo, hi) in enumerate(path_blocks(n_paths)):
        rng = stream(seed, "paths", block)
        m = hi - lo
        g = np.full(m, float(x))
        rw = np.zeros(m)
        cs = np.zeros(m)
        rec = {}
        for j in range(n):
            if record is not None:
                rec[j] = record(j, g)
            drift = np.zeros(m)
            if b_idx is not None:
                drift += interp_periodic(b.data[b_idx(j)], b.grid, g)
            if policy.kind == "constant":
                v = policy.c
                cs += 0.5 * v * v * dt
                drift += v
            elif policy.kind == "feedback":
                fld = policy.field
                v = interp_periodic(fld.data[v_idx(j)], fld.grid, g)
                cs += 0.5 * v * v * dt
                drift += v
            if r_idx is not None:
                q = interp_periodic(reward_field.data[r_idx(j)], reward_field.grid, g)
                rw += q * q * dt
            g = g + drift * dt + sq * rng.standard_normal(m)
        if record is not None:
            rec[n] = record(n, g)
            records.append(rec)
        terminal[lo:hi] = g
        reward[lo:hi] = rw
        cost[lo:hi] = cs
    extra = {}
    if record is not None:
        extra["record"] = {
            j: np.concatenate([r[j] for r in records], axis=-1)
            for j in records[0] if records[0][j] is not None
        }
    return PathEnsemble(float(x), float(t), float(dt), int(seed), terminal, reward, cost, extra)


# -- variational formula --------------------------------------------------------------


def log_mean_exp(values: np.ndarray) -> ValueEstimate:
    """``log mean exp(F)`` with a delta-method standard error."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    lme = float(logsumexp(values) - np.log(n))
    w = np.exp(values - lme)
    return ValueEstimate(lme, float(w.std(ddof=1) / np.sqrt(n)), n)


@dataclass(frozen=True)
class BoueDupuisResult:
    lhs: ValueEstimate
    rhs_best: ValueEstimate
    best_policy: str
    rhs_all: dict

    def consistent(self, n_se: float = 3.0) -> bool:
        """``rhs_best <= lhs`` up to ``n_se`` combined standard errors."""
        se = np.hypot(self.lhs.std_error, self.rhs_best.std_error)
        return self.rhs_best.mean <= self.lhs.mean + n_se * se


def boue_dupuis_check(
    F: Callable[[np.ndarray], np.ndarray],
    policies: list[ControlPolicy],
    n_paths: int,
    seed: int,
    horizon: float = 1.0,
    dt: float = 0.01,
) -> BoueDupuisResult:
    """Compare ``log E exp F(B_T)`` with ``max_v E[F(B_T + int v) - int v^2 / 2]``.

    ``F`` acts on terminal points (unwrapped). Each policy gets its own
    stream; the left-hand side uses an uncontrolled ensemble.
    """
    if not policies:
        raise ValueError("at least one policy is required")
    free = simulate_paths(None, ControlPolicy.zero(), 0.0, horizon, n_paths, dt,
                          _derive(seed, 0))
    lhs = log_mean_exp(F(free.terminal))
    rhs = {}
    for i, pol in enumerate(policies, start=1):
        ens = simulate_paths(None, pol, 0.0, horizon, n_paths, dt, _derive(seed, i))
        rhs[f"{i - 1}:{pol.label()}"] = ValueEstimate.from_samples(F(ens.terminal) - ens.cost)
    best = max(rhs, key=lambda k: rhs[k].mean)
    return BoueDupuisResult(lhs, rhs[best], best, rhs)


def _derive(seed: int, k: int) -> int:
    """Deterministic child seed for the ``k``-th sub-experiment."""
    return int(np.random.SeedSequence([int(seed), k]).generate_state(1, np.uint64)[0] >> 1)


# -- conditioning ---------------------------------------------------------------------


def _log_interval_prob(x, t, a, b):
    """``log(Phi((b - x)/sqrt t) - Phi((a - x)/sqrt t))`` without cancellation."""
    s = np.sqrt(t)
    lo = (a - x) / s
    hi = (b - x) / s
    # reflect to the lower tail where log_ndtr keeps relative accuracy
    flip = lo > 0
    lo2 = np.where(flip, -hi, lo)
    hi2 = np.where(flip, -lo, hi)
    la, lb = log_ndtr(lo2), log_ndtr(hi2)
    with np.errstate(divide="ignore"):
        return lb + np.log1p(-np.exp(la - lb))


def conditioned_entropy(x: float, t: float, interval, period: float | None = None) -> float:
    """``-log P_x(B_t in [a, b])``; with ``period`` the event is on the torus.

    This is the relative entropy of Brownian motion conditioned on the event
    with respect to the free law.
    """
    a, b = map(float, interval)
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if not a < b:
        raise ValueError(f"empty interval [{a}, {b}]")
    if period is None:
        lp = float(_log_interval_prob(x, t, a, b))
    else:
        if b - a >= period:
            return 0.0
        reach = int(np.ceil((abs(x) + 12.0 * np.sqrt(t) + abs(a) + abs(b)) / period)) + 1
        ks = np.arange(-reach, reach + 1) * period
        lp = float(logsumexp(_log_interval_prob(x, t, a + ks, b + ks)))
    if not np.isfinite(lp):
        raise FloatingPointError(f"P(B_{t} in [{a}, {b}]) underflows from x={x}")
    return max(-lp, 0.0)


def entropy_jensen_bound(x: float, t: float, interval) -> float:
    """Upper bound from Jensen on the log-probability of the interval.

    ``-log P <= -log|I| - mean_I log p_t(x, .)``, which is
    ``log(sqrt(2 pi t)/|I|) + mean_I (y - x)^2 / (2 t)``.
    """
    a, b = map(float, interval)
    width = b - a
    # mean of (y - x)^2 over uniform y in [a, b]
    m2 = ((b - x) ** 3 - (a - x) ** 3) / (3.0 * width)
    return float(np.log(np.sqrt(2.0 * np.pi * t) / width) + m2 / (2.0 * t))


@dataclass(frozen=True)
class JensenFit:
    K: float
    argmax: tuple[float, float]
    n_checked: int
    violations: int
    worst_ratio: float


def fit_entropy_constant(
    t_range=(0.01, 1.0),
    x_range=(1.0, 5.0),
    interval=(-1.0, 1.0),
    n_grid: int = 60,
    n_validate: int = 2000,
    seed: int = 0,
) -> JensenFit:
    """Fit ``K = sup H(x, t) / (1 + x^2 / t)`` on a box, then validate it.

    The supremum is located by a log-spaced grid search followed by a bounded
    local refinement; validation counts points where the ratio exceeds ``K``.
    """
    from scipy.optimize import minimize

    def ratio(p):
        tt, xx = p
        return conditioned_entropy(xx, tt, interval) / (1.0 + xx * xx / tt)

    ts = np.geomspace(*t_range, n_grid)
    xs = np.linspace(*x_range, n_grid)
    vals = np.array([[ratio((tt, xx)) for xx in xs] for tt in ts])
    order = np.argsort(vals, axis=None)[::-1][:5]
    best_val, best_pt = -np.inf, None
    for flat in order:
        i, j = np.unravel_index(flat, vals.shape)
        res = minimize(lambda p: -ratio(p), x0=[ts[i], xs[j]], method="L-BFGS-B",
                       bounds=[t_range, x_range])
        for cand, val in ((res.x, -res.fun), ((ts[i], xs[j]), vals[i, j])):
            if val > best_val:
                best_val, best_pt = float(val), (float(cand[0]), float(cand[1]))
    rng = stream(seed, "jensen-validate")
    tv = np.exp(rng.uniform(np.log(t_range[0]), np.log(t_range[1]), n_validate))
    xv = rng.uniform(*x_range, n_validate)
    checks = np.concatenate([vals.ravel(), [ratio(p) for p in zip(tv, xv)]])
    return JensenFit(best_val, best_pt, len(checks), int(np.sum(checks > best_val)),
                     float(checks.max()))


def sample_conditioned_terminal(
    x: float, t: float, interval, n: int, rng: np.random.Generator, period: float | None = None
) -> np.ndarray:
    """Draw ``B_t`` from ``x`` conditioned on ``B_t`` (wrapped, with ``period``) in ``[a, b]``."""
    a, b = map(float, interval)
    s = np.sqrt(t)
    if period is None:
        shifts = np.zeros(1)
    else:
        reach = int(np.ceil((abs(x) + 12.0 * s) / period)) + 1
        shifts = np.arange(-reach, reach + 1) * period
    logw = _log_interval_prob(x, t, a + shifts, b + shifts)
    w = np.exp(logw - logsumexp(logw))
    which = rng.choice(len(shifts), size=n, p=w)
    lo = (a + shifts[which] - x) / s
    hi = (b + shifts[which] - x) / s
    return x + s * truncnorm.ppf(rng.uniform(size=n), lo, hi)


@dataclass(frozen=True)
class ConditionedValue:
    estimate: ValueEstimate
    acceptance_rate: float
    method: str


def bridge_conditioned_terminal_value(
    hbar: TorusField,
    noise: NoiseRealization | None,
    x: float,
    t: float,
    interval,
    n_paths: int,
    seed: int,
    dt: float | None = None,
    c_ren: float = 0.0,
    b: SpaceTimeField | None = None,
    periodic: bool = True,
    acceptance_floor: float = 1e-3,
) -> ConditionedValue:
    """Conditioned mean of ``hbar(B_t) + int_0^t (xi - c_ren)(t - s, B_s) ds``.

    Without drift the terminal point is drawn exactly from the conditioned law
    and the path filled in by a Brownian bridge. With a drift ``b`` paths are
    simulated forward and kept only if they end in the interval.
    """
    grid = hbar.grid
    period = grid.period if periodic else None
    if noise is not None:
        dt = noise.dt
        if noise.grid != grid:
            raise ValueError("noise grid differs from the initial-condition grid")
        if noise.horizon < t - 1e-12:
            raise ValueError("noise does not cover [0, t]")
    if dt is None:
        raise ValueError("dt is required when no noise is given")
    n = steps_for(t, dt)
    times = dt * np.arange(n + 1)

    def forcing(j, g):
        # cell covering forward time (t - s_{j+1}, t - s_j]
        if noise is None:
            return 0.0
        return interp_periodic(noise.cells[n - 1 - j], grid, g) - c_ren

    def inside(g):
        gg = g if period is None else np.mod(g + 0.5 * period, period) - 0.5 * period
        return (gg >= interval[0]) & (gg <= interval[1])

    samples = []
    attempted = accepted = 0
    if b is None:
        for block, (lo, hi) in enumerate(path_blocks(n_paths)):
            rng = stream(seed, "bridge", block)
            m = hi - lo
            end = sample_conditioned_terminal(x, t, interval, m, rng, period)
            # Brownian bridge from x to end, built forward step by step
            g = np.full(m, float(x))
            acc = np.zeros(m)
            for j in range(n):
                acc += forcing(j, g) * dt
                rem = t - times[j]
                mean = g + (end - g) * dt / rem
                sd = np.sqrt(dt * (rem - dt) / rem)
                g = mean + sd * rng.standard_normal(m) if j < n - 1 else end
            samples.append(interp_periodic(hbar.values, grid, g) + acc)
        attempted = accepted = n_paths
        method = "bridge"
    else:
        block = 0
        while accepted < n_paths:
            rng = stream(seed, "reject", block)
            m = 4096
            g = np.full(m, float(x))
            acc = np.zeros(m)
            bidx = _frame_lookup(b, t, dt, True, "drift")
            for j in range(n):
                acc += forcing(j, g) * dt
                g = g + interp_periodic(b.data[bidx(j)], b.grid, g) * dt \
                    + np.sqrt(dt) * rng.standard_normal(m)
            keep = inside(g)
            attempted += m
            accepted += int(keep.sum())
            samples.append((interp_periodic(hbar.values, grid, g) + acc)[keep])
            block += 1
            if attempted >= 20 * 4096 and accepted / attempted < acceptance_floor:
                raise RuntimeError(
                    f"acceptance rate {accepted / attempted:.2e} below floor {acceptance_floor}"
                )
        method = "rejection"
    vals = np.concatenate(samples)[:n_paths]
    return ConditionedValue(ValueEstimate.from_samples(vals), accepted / attempted, method)


# -- value representation ---------------------------------------------------------------


def remainder_feedback(h: SpaceTimeField, trees: EnhancedNoise, t: float) -> SpaceTimeField:
    """``d(h - Y - Yv - YR)`` on ``[0, t]``, the optimal feedback field."""
    last = h.index_of(t)
    rem = h.data[: last + 1] - trees.total.data[: last + 1]
    return SpaceTimeField(h.grid, h.times[: last + 1], derivative_values(rem, h.grid))


def representation_value(
    hbar: TorusField,
    trees: EnhancedNoise,
    policy: ControlPolicy,
    t: float,
    x: float,
    n_paths: int,
    dt: float,
    seed: int,
) -> ValueEstimate:
    """Monte Carlo value of a policy for the remainder ``h - Y - Yv - YR`` at ``(t, x)``.

    The integrand is ``(hbar - Y - Yv - YR)(0, gamma_t)
    + int |dYR(t - s, gamma_s)|^2 / 2 ds - int v_s^2 / 2 ds`` with ``gamma``
    driven by ``b(t - s, .)`` plus the control. Every policy gives a lower
    bound; the feedback built from the exact remainder attains it.
    """
    grid = hbar.grid
    if trees.grid != grid:
        raise ValueError("trees and initial condition live on different grids")
    dyr = trees.y_r.map_frames(lambda d: derivative_values(d, grid))
    ens = simulate_paths(trees.b, policy, x, t, n_paths, dt, seed, reward_field=dyr)
    start = hbar.values - trees.total.data[0]
    vals = interp_periodic(start, grid, ens.terminal) + 0.5 * ens.reward - ens.cost
    return ValueEstimate.from_samples(vals)


@dataclass(frozen=True)
class EntropyIdentity:
    relative_entropy: ValueEstimate
    half_energy: ValueEstimate
    difference: ValueEstimate


def entropy_identity_check(
    F: TorusField, horizon: float, x: float, n_paths: int, dt: float, seed: int
) -> EntropyIdentity:
    """Relative entropy of the tilt ``dQ/dP = exp F(B_T) / E exp F`` two ways.

    Both ``E_Q[log dQ/dP]`` and ``E_Q[int nu^2] / 2`` are computed on the same
    free Brownian paths by weighting with ``dQ/dP``. The optimal drift is
    ``nu(s, y) = d log P_{T-s} exp(F)(y)``.
    """
    grid = F.grid
    n = steps_for(horizon, dt)
    shift = F.values.max()
    heat = np.stack([heat_values(np.exp(F.values - shift), grid, horizon - j * dt)
                     for j in range(n + 1)])
    nu = derivative_values(np.log(heat), grid)

    def energy(j, g):
        return interp_periodic(nu[j], grid, g) ** 2 if j < n else None

    ens = simulate_paths(None, ControlPolicy.zero(), x, horizon, n_paths, dt, seed,
                         record=energy)
    en = 0.5 * dt * sum(ens.extra["record"].values())
    fv = interp_periodic(F.values, grid, ens.terminal)
    log_z = logsumexp(fv) - np.log(len(fv))
    w = np.exp(fv - log_z)
    ent = w * (fv - log_z)
    quad = w * en
    return EntropyIdentity(ValueEstimate.from_samples(ent), ValueEstimate.from_samples(quad),
                           ValueEstimate.from_samples(ent - quad))


def gaussian_truncated_sample(x: float, t: float, interval, n: int, seed: int) -> np.ndarray:
    """Inverse-CDF draws of ``x + sqrt(t) Z`` conditioned on ``[a, b]`` (line)."""
    from scipy.special import ndtr

    a, b = interval
    s = np.sqrt(t)
    lo, hi = ndtr((a - x) / s), ndtr((b - x) / s)
    u = stream(seed, "inverse-cdf").uniform(size=n)
    return x + s * ndtri(lo + u * (hi - lo))


def ensemble_record(est: ValueEstimate, seed, config_hash=None) -> dict:
    return json.loads(est.to_json(seed, config_hash))

