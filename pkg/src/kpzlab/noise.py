"""Mollified space-time white noise and the enhancement trees built from it.

The trees solve, from zero initial data,

    (dt - Lap/2) Y   = xi
    (dt - Lap/2) Yv  = |dY|^2 / 2 - c_ren
    (dt - Lap/2) YR  = |dYv|^2 / 2 + dY dYv + d(Y + Yv) dYR

with ``d`` the spatial derivative. All three are stepped with first-order
exponential time differencing; nonlinear sources are frozen at the left end
of each step.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .field import (
    EtdStepper,
    SpaceTimeField,
    TorusGrid,
    derivative_values,
    steps_for,
)
from .rng import stream

DEFAULT_CEILING = 1e8


class InstabilityError(FloatingPointError):
    """A field left the configured magnitude ceiling during time stepping."""


def check_ceiling(values: np.ndarray, ceiling: float, what: str, step: int):
    if not np.all(np.isfinite(values)) or np.abs(values).max() > ceiling:
        raise InstabilityError(
            f"{what} exceeded ceiling {ceiling:g} at step {step}; reduce dt"
        )


def mode_cutoff(grid: TorusGrid, mollification_scale: float) -> int | None:
    """Largest retained integer mode, or ``None`` when nothing is cut."""
    if mollification_scale < 0:
        raise ValueError("mollification_scale must be non-negative")
    if mollification_scale == 0:
        return None
    k = int(np.floor(1.0 / mollification_scale + 1e-12))
    return None if k >= grid.n_points // 2 else k


def retained_modes(grid: TorusGrid, mollification_scale: float) -> int:
    k = mode_cutoff(grid, mollification_scale)
    return grid.n_points if k is None else 2 * k + 1


def mollify(cells: np.ndarray, grid: TorusGrid, mollification_scale: float) -> np.ndarray:
    """Sharp spatial Fourier cutoff ``|k| <= 1/eps_m`` along the last axis."""
    k = mode_cutoff(grid, mollification_scale)
    if k is None:
        return cells
    spec = np.fft.rfft(cells, axis=-1)
    spec[..., k + 1:] = 0.0
    return np.fft.irfft(spec, n=grid.n_points, axis=-1)


@dataclass(frozen=True)
class NoiseRealization:
    """Cell values of mollified noise; row ``j`` is constant on ``[j dt, (j+1) dt)``.

    ``seed is None`` marks the deterministic zero forcing.
    """

    grid: TorusGrid
    dt: float
    horizon: float
    seed: int | None
    mollification_scale: float
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        n_steps = steps_for(self.horizon, self.dt)
        cells = np.array(self.cells, dtype=float)
        if cells.shape != (n_steps, self.grid.n_points):
            raise ValueError(f"cells shape {cells.shape} != ({n_steps}, {self.grid.n_points})")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def zero(cls, grid: TorusGrid, dt: float, horizon: float) -> "NoiseRealization":
        n_steps = steps_for(horizon, dt)
        return cls(grid, dt, horizon, None, 0.0, np.zeros((n_steps, grid.n_points)))

    @property
    def is_zero(self) -> bool:
        return self.seed is None

    @property
    def n_steps(self) -> int:
        return self.cells.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def variance_rate(self) -> float:
        """Pointwise variance of ``xi * dt`` per unit time, ``E[xi^2] dt``."""
        if self.is_zero:
            return 0.0
        return retained_modes(self.grid, self.mollification_scale) / self.grid.period

    def provenance(self) -> dict:
        return {
            "seed": self.seed,
            "mollification_scale": self.mollification_scale,
            "n_points": self.grid.n_points,
            "dt": self.dt,
            "horizon": self.horizon,
        }


def sample_noise(
    grid: TorusGrid, dt: float, horizon: float, seed: int, mollification_scale: float
) -> NoiseRealization:
    """Draw i.i.d. N(0, 1/(spacing dt)) cells and apply the spatial cutoff."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if horizon < dt:
        raise ValueError(f"horizon {horizon} shorter than dt {dt}")
    n_steps = steps_for(horizon, dt)
    rng = stream(seed, "noise", grid.n_points)
    raw = rng.standard_normal((n_steps, grid.n_points)) / np.sqrt(grid.spacing * dt)
    return NoiseRealization(grid, dt, horizon, int(seed), float(mollification_scale),
                            mollify(raw, grid, mollification_scale))


def coarsen(noise: NoiseRealization, factor: int) -> NoiseRealization:
    """Average ``factor`` consecutive time cells; same Brownian sheet, coarser dt."""
    factor = int(factor)
    if factor < 1 or noise.n_steps % factor:
        raise ValueError(f"factor {factor} must divide the {noise.n_steps} time cells")
    if factor == 1:
        return noise
    cells = noise.cells.reshape(-1, factor, noise.grid.n_points).mean(axis=1)
    return NoiseRealization(noise.grid, noise.dt * factor, noise.horizon, noise.seed,
                            noise.mollification_scale, cells)


def ito_constant(noise: NoiseRealization) -> float:
    """Drift ``E[xi^2] dt / 2`` lost by ``log(1 + xi dt)`` per unit time."""
    return 0.5 * noise.variance_rate


def solve_linear_tree(noise: NoiseRealization) -> np.ndarray:
    """Frames of Y with ``Y(0) = 0``, shape ``(n_steps + 1, n_points)``."""
    grid = noise.grid
    stepper = EtdStepper(grid, noise.dt)
    out = np.zeros((noise.n_steps + 1, grid.n_points))
    for j in range(noise.n_steps):
        out[j + 1] = stepper.step(out[j], noise.cells[j])
    return out


def renormalization_constant(noise: NoiseRealization, y: np.ndarray | None = None) -> float:
    """Space-time average of ``|dY|^2 / 2`` after a burn-in of ``eps_m^2``.

    The average runs over the left-end frames that feed the ``Yv`` source,
    so subtracting it centres that source exactly on this realization.
    """
    if noise.is_zero:
        return 0.0
    if y is None:
        y = solve_linear_tree(noise)
    burn = max(noise.mollification_scale, noise.grid.spacing) ** 2
    first = min(int(np.ceil(burn / noise.dt - 1e-9)), noise.n_steps - 1)
    dy = derivative_values(y[first:noise.n_steps], noise.grid)
    return float(0.5 * np.mean(dy * dy))


@dataclass(frozen=True)
class EnhancedNoise:
    y: SpaceTimeField
    y_vee: SpaceTimeField
    y_r: SpaceTimeField
    c_ren: float
    mollification_scale: float
    seed: int | None
    b: SpaceTimeField = field(init=False, repr=False)

    def __post_init__(self):
        total = self.y.data + self.y_vee.data + self.y_r.data
        b = SpaceTimeField(self.y.grid, self.y.times, derivative_values(total, self.y.grid))
        object.__setattr__(self, "b", b)

    @property
    def grid(self) -> TorusGrid:
        return self.y.grid

    @property
    def dt(self) -> float:
        return self.y.dt

    @property
    def horizon(self) -> float:
        return self.y.horizon

    @property
    def total(self) -> SpaceTimeField:
        """``Y + Yv + YR``."""
        return self.y + self.y_vee + self.y_r


def build_trees(
    noise: NoiseRealization,
    c_ren: float | None = None,
    ceiling: float = DEFAULT_CEILING,
) -> EnhancedNoise:
    """Solve the three tree equations on the noise mesh and store every frame."""
    grid = noise.grid
    y = solve_linear_tree(noise)
    check_ceiling(y, ceiling, "Y", noise.n_steps)
    if c_ren is None:
        c_ren = renormalization_constant(noise, y)
    dy = derivative_values(y, grid)

    stepper = EtdStepper(grid, noise.dt)
    shape = (noise.n_steps + 1, grid.n_points)
    yv = np.zeros(shape)
    yr = np.zeros(shape)
    dyv = np.zeros(grid.n_points)
    for j in range(noise.n_steps):
        dyr = derivative_values(yr[j], grid)
        yv[j + 1] = stepper.step(yv[j], 0.5 * dy[j] ** 2 - c_ren)
        src = 0.5 * dyv**2 + dy[j] * dyv + (dy[j] + dyv) * dyr
        yr[j + 1] = stepper.step(yr[j], src)
        check_ceiling(yv[j + 1], ceiling, "Yv", j + 1)
        check_ceiling(yr[j + 1], ceiling, "YR", j + 1)
        dyv = derivative_values(yv[j + 1], grid)

    times = noise.times
    return EnhancedNoise(
        SpaceTimeField(grid, times, y),
        SpaceTimeField(grid, times, yv),
        SpaceTimeField(grid, times, yr),
        float(c_ren),
        noise.mollification_scale,
        noise.seed,
    )


# -- binary snapshot -------------------------------------------------------------

_MAGIC = b"KPZTREE1"


def save_snapshot(trees: EnhancedNoise, path) -> None:
    """Header (JSON, length-prefixed) then little-endian float64 frames.

    Each frame stores ``Y``, ``Yv`` and ``YR`` back to back; frames follow in
    time order.
    """
    header = {
        "n_points": trees.grid.n_points,
        "period": trees.grid.period,
        "dt": trees.dt,
        "horizon": trees.horizon,
        "n_frames": len(trees.y.times),
        "seed": trees.seed,
        "mollification_scale": trees.mollification_scale,
        "c_ren": trees.c_ren,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    body = np.stack([trees.y.data, trees.y_vee.data, trees.y_r.data], axis=1)
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(body.astype("<f8").tobytes())


def load_snapshot(path) -> EnhancedNoise:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a tree snapshot")
    (size,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + size])
    grid = TorusGrid(header["n_points"], header["period"])
    nf = header["n_frames"]
    body = np.frombuffer(raw[12 + size:], dtype="<f8").reshape(nf, 3, grid.n_points)
    times = header["dt"] * np.arange(nf)
    return EnhancedNoise(
        SpaceTimeField(grid, times, body[:, 0]),
        SpaceTimeField(grid, times, body[:, 1]),
        SpaceTimeField(grid, times, body[:, 2]),
        header["c_ren"],
        header["mollification_scale"],
        header["seed"],
    )
