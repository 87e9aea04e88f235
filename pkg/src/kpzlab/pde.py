"""Deterministic PDE layer: backward drift equations, two KPZ solvers, Hopf-Lax."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.special import logsumexp

from .field import (
    EtdStepper,
    SpaceTimeField,
    TorusField,
    TorusGrid,
    derivative_values,
    interp_periodic,
    steps_for,
)
from .noise import (
    DEFAULT_CEILING,
    InstabilityError,
    NoiseRealization,
    check_ceiling,
    ito_constant,
    renormalization_constant,
)

# -- backward equation -------------------------------------------------------------


@dataclass(frozen=True)
class BackwardPdeProblem:
    """``(ds + Lap/2 + b d) phi = f + lam phi`` on ``[0, t]`` with ``phi(t) = terminal``.

    ``f`` may be the string ``"minus-b"`` for the source used by the
    Zvonkin construction.
    """

    b: SpaceTimeField | None
    f: Union[SpaceTimeField, str, None]
    terminal: TorusField
    lam: float
    horizon: float
    dt: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if isinstance(self.f, str) and self.f != "minus-b":
            raise ValueError(f"unknown source tag {self.f!r}")
        if self.f == "minus-b" and self.b is None:
            raise ValueError("source 'minus-b' needs a drift")
        for fld in (self.b, self.f):
            if isinstance(fld, SpaceTimeField):
                if fld.grid != self.terminal.grid:
                    raise ValueError("drift/source grid differs from terminal grid")
                if fld.horizon < self.horizon - 1e-12:
                    raise ValueError(f"mesh ends at {fld.horizon} before horizon {self.horizon}")
        dts = {round(f.dt, 15) for f in (self.b, self.f) if isinstance(f, SpaceTimeField)}
        if len(dts) > 1:
            raise ValueError(f"drift and source use different time steps {sorted(dts)}")
        if self.dt is None and not dts:
            raise ValueError("no time mesh: give dt or a space-time drift/source")
        if self.dt is not None and dts and abs(dts.pop() - self.dt) > 1e-15:
            raise ValueError("dt disagrees with the drift/source mesh")

    @property
    def step(self) -> float:
        if self.dt is not None:
            return self.dt
        return next(f.dt for f in (self.b, self.f) if isinstance(f, SpaceTimeField))


def solve_backward_pde(p: BackwardPdeProblem, ceiling: float = DEFAULT_CEILING) -> SpaceTimeField:
    """Integrate backward from ``phi(t)`` and return ``phi`` on ``0, dt, ..., t``.

    In reversed time ``tau = t - s`` the equation reads
    ``d_tau phi = Lap/2 phi - lam phi + b d phi - f``. The heat part and the
    damping ``lam`` go into the exponential factor (so large ``lam`` is stable);
    ``b d phi - f`` is frozen at the start of each step.
    """
    grid = p.terminal.grid
    dt = p.step
    n = steps_for(p.horizon, dt)
    stepper = EtdStepper(grid, dt, damping=p.lam)
    b = p.b.data if p.b is not None else None
    if p.f == "minus-b":
        f = -b
    elif isinstance(p.f, SpaceTimeField):
        f = p.f.data
    else:
        f = None

    out = np.empty((n + 1, grid.n_points))
    out[n] = p.terminal.values
    for i in range(n, 0, -1):
        # step from s_i to s_{i-1} using coefficients at s_i
        src = np.zeros(grid.n_points)
        if b is not None:
            src += b[i] * derivative_values(out[i], grid)
        if f is not None:
            src -= f[i]
        out[i - 1] = stepper.step(out[i], src)
        check_ceiling(out[i - 1], ceiling, "backward solution", n - i + 1)
    return SpaceTimeField(grid, dt * np.arange(n + 1), out)


# -- KPZ ----------------------------------------------------------------------------


@dataclass(frozen=True)
class KpzSolution:
    h: SpaceTimeField
    method: str
    seed: int | None
    mollification_scale: float
    c_ren: float

    def provenance(self) -> dict:
        return {"method": self.method, "seed": self.seed,
                "mollification_scale": self.mollification_scale, "c_ren": self.c_ren}


def log_heat_kernel(grid: TorusGrid, dt: float) -> np.ndarray:
    """Log of the row-normalised periodic Gaussian kernel of variance ``dt``.

    Entry ``[i, j]`` weights ``x_j`` when updating ``x_i``. Working in log
    space keeps the Cole-Hopf update positive for arbitrarily negative data.
    """
    x = grid.points
    d = x[:, None] - x[None, :]
    reach = int(np.ceil(12.0 * np.sqrt(dt) / grid.period)) + 1
    images = np.arange(-reach, reach + 1)[:, None, None] * grid.period
    lk = logsumexp(-((d[None] + images) ** 2) / (2.0 * dt), axis=0)
    return lk - logsumexp(lk, axis=1, keepdims=True)


def log_heat_step(h: np.ndarray, lk: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """``log(K exp(h))`` row-wise for a batch ``h`` of shape ``(batch, n)``.

    A matrix product on ``exp(h - max h)`` is exact to rounding unless a row
    sum is so small that underflowed terms could matter; those entries are
    recomputed with a full log-sum-exp.
    """
    c = h.max(axis=1, keepdims=True)
    s = np.exp(h - c) @ kernel.T
    with np.errstate(divide="ignore"):
        out = np.log(s) + c
    bad = np.nonzero(s < 1e-290)
    if len(bad[0]):
        out[bad] = logsumexp(lk[bad[1]] + h[bad[0]], axis=1)
    return out


def _initial_batch(h0) -> tuple[np.ndarray, bool]:
    if isinstance(h0, TorusField):
        return h0.values[None, :], True
    arr = np.asarray(h0, dtype=float)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def _c_ren(noise: NoiseRealization, c_ren: float | None) -> float:
    return renormalization_constant(noise) if c_ren is None else float(c_ren)


def cole_hopf_frames(
    h0: np.ndarray,
    noise: NoiseRealization,
    c_ren: float,
    update: str = "linear",
    keep: Callable[[int], bool] | None = None,
) -> dict[int, np.ndarray]:
    """Batched log-domain stochastic heat equation.

    ``h0`` has shape ``(batch, n_points)``. Returns the frames whose step
    index satisfies ``keep`` (all frames when ``keep`` is None). Every row
    sees the same noise.
    """
    grid, dt = noise.grid, noise.dt
    if update not in ("linear", "exponential"):
        raise ValueError(f"update must be 'linear' or 'exponential', got {update!r}")
    if not np.all(np.isfinite(h0)):
        raise ValueError("initial data must be finite")
    lk = log_heat_kernel(grid, dt)
    kernel = np.exp(lk)
    shift_lin = (ito_constant(noise) - c_ren) * dt
    h = np.array(h0, dtype=float)
    frames = {}
    if keep is None or keep(0):
        frames[0] = h.copy()
    for j in range(noise.n_steps):
        h = log_heat_step(h, lk, kernel)
        xi = noise.cells[j]
        if update == "linear":
            factor = 1.0 + xi * dt
            if np.any(factor <= 0):
                bad = int(np.argmin(factor))
                raise InstabilityError(
                    f"w lost positivity at step {j + 1}, x={grid.points[bad]:.4f}; reduce dt"
                )
            h += np.log(factor) + shift_lin
        else:
            h += (xi - c_ren) * dt
        if keep is None or keep(j + 1):
            frames[j + 1] = h.copy()
    return frames


def solve_kpz_cole_hopf(
    hbar,
    noise: NoiseRealization,
    c_ren: float | None = None,
    update: str = "linear",
) -> KpzSolution:
    """KPZ through ``w = exp(h)``: heat step, then ``w <- w (1 + xi dt)``.

    Since ``log(1 + xi dt)`` loses ``E[xi^2] dt^2 / 2`` per step relative to
    ``xi dt``, the height is ``h = log w + (c_ito - c_ren) t`` so that it
    targets the same renormalised equation as :func:`solve_kpz_direct`.
    ``update="exponential"`` uses ``w <- w exp((xi - c_ren) dt)`` instead.
    """
    h0, single = _initial_batch(hbar)
    if not single:
        raise ValueError("solve_kpz_cole_hopf takes one initial condition")
    c = _c_ren(noise, c_ren)
    frames = cole_hopf_frames(h0, noise, c, update)
    data = np.stack([frames[j][0] for j in range(noise.n_steps + 1)])
    return KpzSolution(SpaceTimeField(noise.grid, noise.times, data), "cole-hopf",
                       noise.seed, noise.mollification_scale, c)


def solve_kpz_direct(
    hbar,
    noise: NoiseRealization,
    c_ren: float | None = None,
    ceiling: float = DEFAULT_CEILING,
) -> KpzSolution:
    """Explicit spectral stepping of ``h_t = Lap h / 2 + |dh|^2 / 2 - c_ren + xi``.

    The heat part and the frozen nonlinearity use exponential differencing;
    the noise increment ``xi dt`` is added after the step, as in the
    Cole-Hopf route.
    """
    grid = noise.grid
    h0 = hbar.values if isinstance(hbar, TorusField) else np.asarray(hbar, dtype=float)
    c = _c_ren(noise, c_ren)
    stepper = EtdStepper(grid, noise.dt)
    out = np.empty((noise.n_steps + 1, grid.n_points))
    out[0] = h0
    for j in range(noise.n_steps):
        dh = derivative_values(out[j], grid)
        out[j + 1] = stepper.step(out[j], 0.5 * dh * dh - c) + noise.cells[j] * noise.dt
        check_ceiling(out[j + 1], ceiling, "direct KPZ solution", j + 1)
    return KpzSolution(SpaceTimeField(grid, noise.times, out), "direct",
                       noise.seed, noise.mollification_scale, c)


# -- Hopf-Lax ------------------------------------------------------------------------


def _sample_initial(hbar, window: float | None, n_window: int):
    """Nodes, values, an exact evaluator and the period (None on the line)."""
    if isinstance(hbar, TorusField):
        g = hbar.grid
        return g.points, hbar.values, (lambda y: interp_periodic(hbar.values, g, y)), g.period
    if window is None:
        raise ValueError("a line window [-L, L] is needed for non-periodic data")
    y = np.linspace(-window, window, n_window)
    return y, np.asarray(hbar(y), dtype=float), hbar, None


def hopf_lax(hbar, t: float, x, window: float | None = None, n_window: int = 20001):
    """``max_y hbar(y) - (x - y)^2 / (2 t)``: grid search plus local polish.

    ``hbar`` is a :class:`TorusField` (maximised over the periodic extension
    of its linear interpolant) or a callable on the line, sampled on
    ``[-window, window]``. Around the grid maximiser the vertices of the
    parabolas through three consecutive samples are evaluated exactly and
    kept if better. This never overshoots the true maximum and is exact for
    data that is quadratic or piecewise linear near the maximiser.
    """
    if not t > 0:
        raise ValueError(f"hopf_lax needs t > 0, got {t}")
    y, vals, evaluate, period = _sample_initial(hbar, window, n_window)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if period is not None:
        # enough images that the penalty exceeds the oscillation of hbar
        spread = float(vals.max() - vals.min())
        reach = int(np.ceil(np.sqrt(2.0 * t * spread) / period)) + 1
        y = np.concatenate([y + k * period for k in range(-reach, reach + 1)])
        vals = np.tile(vals, 2 * reach + 1)
        xs_eval = np.mod(xs + 0.5 * period, period) - 0.5 * period
    else:
        xs_eval = xs
    last = len(y) - 1
    out = np.empty(xs.shape)
    for a in range(0, len(xs_eval), 128):
        xc = xs_eval[a:a + 128]
        g = vals[None, :] - (xc[:, None] - y[None, :]) ** 2 / (2.0 * t)
        i = np.argmax(g, axis=1)
        rows = np.arange(len(xc))
        best = g[rows, i]
        for c in (i - 1, i, i + 1):
            c = np.clip(c, 1, last - 1)
            g0, g1, g2 = g[rows, c - 1], g[rows, c], g[rows, c + 1]
            curv = g0 - 2.0 * g1 + g2
            ok = curv < 0
            off = np.where(ok, 0.5 * (g0 - g2) / np.where(ok, curv, -1.0), 0.0)
            yv = y[c] + np.clip(off, -1.0, 1.0) * (y[c + 1] - y[c])
            val = np.asarray(evaluate(yv), dtype=float) - (xc - yv) ** 2 / (2.0 * t)
            best = np.where(ok, np.maximum(best, val), best)
        out[a:a + 128] = best
    return out if np.ndim(x) else float(out[0])


def one_sided_second_difference(hbar, t: float, x, eps: float, **kw):
    """``h(t, x + eps) + h(t, x - eps) - 2 h(t, x)`` for the Hopf-Lax value ``h``."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=float)
    return (hopf_lax(hbar, t, x + eps, **kw) + hopf_lax(hbar, t, x - eps, **kw)
            - 2.0 * hopf_lax(hbar, t, x, **kw))
