"""Periodic grids, fields and the spectral calculus shared by every solver.

All spectral operations go through ``numpy.fft.rfft``/``irfft``; the zero mode
is handled exactly (its derivative multiplier is 0, its heat multiplier is 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the circle of length ``period``.

    Points are ``x_j = -period/2 + j * spacing`` so the torus is identified
    with ``[-period/2, period/2)``.
    """

    n_points: int
    period: float = 1.0

    def __post_init__(self):
        n = int(self.n_points)
        if n <= 0 or n & (n - 1):
            raise ValueError(f"n_points must be a positive power of two, got {self.n_points}")
        if not self.period > 0:
            raise ValueError(f"period must be positive, got {self.period}")
        object.__setattr__(self, "n_points", n)
        object.__setattr__(self, "period", float(self.period))

    @property
    def spacing(self) -> float:
        return self.period / self.n_points

    @property
    def points(self) -> np.ndarray:
        return -0.5 * self.period + self.spacing * np.arange(self.n_points)

    @property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers ``2*pi*k/period`` for the rfft layout."""
        return 2.0 * np.pi * np.fft.rfftfreq(self.n_points, d=self.spacing)

    @property
    def mode_indices(self) -> np.ndarray:
        """Integer mode numbers ``k`` for the rfft layout."""
        return np.arange(self.n_points // 2 + 1)

    def wrap(self, x):
        """Map real coordinates into ``[-period/2, period/2)``."""
        p = self.period
        return np.mod(np.asarray(x, dtype=float) + 0.5 * p, p) - 0.5 * p

    def distance(self, x, y):
        """Torus distance ``|x - y|_T``."""
        d = np.abs(self.wrap(np.asarray(x) - np.asarray(y)))
        return np.minimum(d, self.period - d)


def _as_values(grid: TorusGrid, values) -> np.ndarray:
    v = np.array(values, dtype=float)
    if v.shape != (grid.n_points,):
        raise ValueError(f"expected {grid.n_points} values, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("field values must be finite")
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class TorusField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_values(self.grid, self.values))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "TorusField":
        return cls(grid, fn(grid.points))

    @classmethod
    def constant(cls, grid: TorusGrid, c: float) -> "TorusField":
        return cls(grid, np.full(grid.n_points, float(c)))

    def __add__(self, other):
        if isinstance(other, TorusField):
            _check_same_grid(self.grid, other.grid)
            return TorusField(self.grid, self.values + other.values)
        return TorusField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, TorusField):
            _check_same_grid(self.grid, other.grid)
            return TorusField(self.grid, self.values - other.values)
        return TorusField(self.grid, self.values - other)

    def __mul__(self, c):
        return TorusField(self.grid, self.values * c)

    __rmul__ = __mul__

    def mean(self) -> float:
        return float(self.values.mean())

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def __call__(self, x):
        """Periodic linear interpolation at arbitrary (unwrapped) points."""
        return interp_periodic(self.values, self.grid, x)


def _check_same_grid(a: TorusGrid, b: TorusGrid):
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


@dataclass(frozen=True)
class SpaceTimeField:
    """Frames of a periodic field on a uniform time mesh starting at 0."""

    grid: TorusGrid
    times: np.ndarray
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        data = np.array(self.data, dtype=float)
        if times.ndim != 1 or len(times) < 1 or times[0] != 0.0:
            raise ValueError("times must be a 1-d array starting at 0")
        if data.shape != (len(times), self.grid.n_points):
            raise ValueError(f"data shape {data.shape} does not match {len(times)} frames")
        if len(times) > 1:
            steps = np.diff(times)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
                raise ValueError("time mesh must be uniform")
            if steps[0] <= 0:
                raise ValueError("times must be increasing")
        if not np.all(np.isfinite(data)):
            raise ValueError("space-time field contains non-finite values")
        times.setflags(write=False)
        data.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, grid: TorusGrid, dt: float, horizon: float) -> "SpaceTimeField":
        n_steps = steps_for(horizon, dt)
        return cls(grid, dt * np.arange(n_steps + 1), np.zeros((n_steps + 1, grid.n_points)))

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def frames(self) -> list[TorusField]:
        return [TorusField(self.grid, row) for row in self.data]

    def __len__(self):
        return len(self.times)

    def frame(self, i: int) -> TorusField:
        return TorusField(self.grid, self.data[i])

    def index_of(self, t: float) -> int:
        """Index of the mesh time equal to ``t`` (within rounding)."""
        if len(self.times) == 1:
            if abs(t) > 1e-12:
                raise ValueError(f"time {t} not on mesh")
            return 0
        i = int(round(t / self.dt))
        if i < 0 or i >= len(self.times) or abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} not on mesh of step {self.dt} up to {self.horizon}")
        return i

    def at(self, t: float) -> TorusField:
        return self.frame(self.index_of(t))

    def time_reversed(self, horizon: float) -> "SpaceTimeField":
        """Frames ``g(s) = f(horizon - s)`` for ``s`` in ``[0, horizon]``."""
        last = self.index_of(horizon)
        return SpaceTimeField(self.grid, self.times[: last + 1], self.data[last::-1])

    def map_frames(self, fn) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.times, fn(self.data))

    def __add__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        _check_same_grid(self.grid, other.grid)
        if self.times.shape != other.times.shape or not np.allclose(self.times, other.times):
            raise ValueError("time mesh mismatch")
        return SpaceTimeField(self.grid, self.times, self.data + other.data)

    def __sub__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        return self + other.map_frames(np.negative)

    def sup_norm(self) -> float:
        return float(np.abs(self.data).max())


def steps_for(horizon: float, dt: float) -> int:
    """Number of steps of size ``dt`` in ``horizon``; ``dt`` must divide it."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"dt={dt} does not divide horizon {horizon}")
    return n


def interp_periodic(values: np.ndarray, grid: TorusGrid, x) -> np.ndarray:
    """Linear interpolation of grid samples (last axis) at points ``x``.

    ``values`` may be 1-d or carry leading batch axes broadcastable with ``x``.
    """
    h = grid.spacing
    s = np.mod(np.asarray(x, dtype=float) + 0.5 * grid.period, grid.period) / h
    i = np.floor(s).astype(np.intp)
    w = s - i
    i %= grid.n_points
    j = (i + 1) % grid.n_points
    if values.ndim == 1:
        return values[i] * (1.0 - w) + values[j] * w
    return np.take_along_axis(values, i, -1) * (1.0 - w) + np.take_along_axis(values, j, -1) * w


# -- spectral calculus on raw arrays (last axis is space) ---------------------


def derivative_values(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    n = grid.n_points
    spec = np.fft.rfft(values, axis=-1)
    mult = 1j * grid.wavenumbers
    # Nyquist mode has no odd counterpart in a real signal
    if n % 2 == 0:
        mult[-1] = 0.0
    return np.fft.irfft(spec * mult, n=n, axis=-1)


def heat_multiplier(grid: TorusGrid, t: float) -> np.ndarray:
    return np.exp(-0.5 * grid.wavenumbers**2 * t)


def heat_values(values: np.ndarray, grid: TorusGrid, t: float) -> np.ndarray:
    spec = np.fft.rfft(values, axis=-1) * heat_multiplier(grid, t)
    return np.fft.irfft(spec, n=grid.n_points, axis=-1)


class EtdStepper:
    """First-order exponential time differencing for ``u' = -(k^2/2 + lam) u + N``.

    ``step`` returns ``E u + phi1 N`` in physical space, which is exact when
    ``N`` is constant over the step.
    """

    def __init__(self, grid: TorusGrid, dt: float, damping: float = 0.0):
        self.grid = grid
        self.dt = dt
        lin = -(0.5 * grid.wavenumbers**2 + damping)
        self.E = np.exp(lin * dt)
        small = np.abs(lin * dt) < 1e-8
        safe = np.where(small, 1.0, lin)
        self.phi1 = np.where(small, dt * (1.0 + 0.5 * lin * dt), (self.E - 1.0) / safe)

    def step(self, u: np.ndarray, forcing: np.ndarray | None = None) -> np.ndarray:
        spec = self.E * np.fft.rfft(u, axis=-1)
        if forcing is not None:
            spec = spec + self.phi1 * np.fft.rfft(forcing, axis=-1)
        return np.fft.irfft(spec, n=self.grid.n_points, axis=-1)


# -- public operations ---------------------------------------------------------


def spectral_derivative(f: TorusField) -> TorusField:
    """Exact Fourier derivative of a periodic field."""
    return TorusField(f.grid, derivative_values(f.values, f.grid))


def heat_semigroup(f: TorusField, t: float) -> TorusField:
    """Apply ``exp(t * Laplacian / 2)``: mode ``k`` decays by ``exp(-(2 pi k/L)^2 t / 2)``."""
    if t < 0:
        raise ValueError(f"heat_semigroup needs t >= 0, got {t}")
    if t == 0:
        return f
    return TorusField(f.grid, heat_values(f.values, f.grid, t))


def holder_seminorm(f: TorusField, alpha: float) -> float:
    """Grid estimator of ``sup_{x != y} |f(x) - f(y)| / |x - y|_T^alpha``.

    This is a computable stand-in for the Hölder-Besov norm: the maximum is
    taken over all pairs of grid points with torus distance.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return holder_quotient(f.values, f.grid, alpha)


def holder_quotient(values: np.ndarray, grid: TorusGrid, alpha: float) -> float:
    """Max Hölder quotient over all grid pairs; any ``alpha > 0`` accepted."""
    n = grid.n_points
    best = 0.0
    # pairs at lag m and n - m have the same torus distance
    for m in range(1, n // 2 + 1):
        diff = np.abs(values - np.roll(values, -m)).max()
        dist = min(m, n - m) * grid.spacing
        best = max(best, diff / dist**alpha)
    return float(best)


def second_difference_exponent(values: np.ndarray, grid: TorusGrid, lags) -> float:
    """Regression slope of ``log sup_x |f(x+d) - 2f(x) + f(x-d)|`` against ``log d``.

    Second differences resolve Hölder exponents in ``(0, 2)``, which covers
    fields smoother than Lipschitz.
    """
    lags = np.asarray(lags, dtype=int)
    sizes = np.array([
        np.abs(np.roll(values, -m) - 2.0 * values + np.roll(values, m)).max() for m in lags
    ])
    slope, _ = np.polyfit(np.log(lags * grid.spacing), np.log(sizes), 1)
    return float(slope)
