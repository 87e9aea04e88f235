import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kpzlab.field import EtdStepper, TorusGrid, derivative_values
from kpzlab.noise import (
    InstabilityError,
    NoiseRealization,
    build_trees,
    coarsen,
    ito_constant,
    load_snapshot,
    mode_cutoff,
    renormalization_constant,
    retained_modes,
    sample_noise,
    save_snapshot,
    solve_linear_tree,
)


def stationary_c_ren(grid, dt, K):
    """``E |dY|^2 / 2`` for the stationary ETD1 recursion.

    Each retained mode pair ``+-k`` adds pointwise variance ``phi1^2 / (L dt)``
    per step and is damped by ``E^2``, so the stationary variance of the
    derivative is ``(2 pi k)^2 phi1^2 / (L dt (1 - E^2))`` per real mode.
    As ``dt -> 0`` this tends to ``K`` (one half per retained mode).
    """
    stepper = EtdStepper(grid, dt)
    k = np.arange(1, K + 1)
    E, p = stepper.E[k], stepper.phi1[k]
    q = (2 * np.pi * k) ** 2
    return float(np.sum(q * p**2 / (1 - E**2)) / (grid.period * dt))


def test_mode_cutoff():
    g = TorusGrid(256)
    assert mode_cutoff(g, 1 / 16) == 16
    assert retained_modes(g, 1 / 16) == 33
    assert mode_cutoff(g, 0.0) is None
    assert retained_modes(TorusGrid(16), 1 / 16) == 16  # cutoff above Nyquist: nothing cut


def test_raw_cell_variance():
    g = TorusGrid(64)
    nz = sample_noise(g, 1e-3, 1.0, 1, 0.0)
    # cells are N(0, 1/(dx dt)); 64000 cells give relative sd ~ 0.0056
    assert nz.cells.var() * g.spacing * nz.dt == pytest.approx(1.0, rel=0.03)


def test_mollified_variance_and_spectrum():
    g = TorusGrid(128)
    nz = sample_noise(g, 1e-3, 1.0, 2, 1 / 8)
    spec = np.fft.rfft(nz.cells, axis=-1)
    assert np.abs(spec[:, 9:]).max() < 1e-9
    # projection onto 17 of 128 modes: pointwise variance m / (L dt)
    assert nz.cells.var() * nz.dt == pytest.approx(17.0, rel=0.05)
    assert nz.variance_rate == 17.0
    assert ito_constant(nz) == 8.5


def test_zero_noise_has_no_ito_drift():
    nz = NoiseRealization.zero(TorusGrid(8), 0.1, 1.0)
    assert nz.is_zero and ito_constant(nz) == 0.0 and renormalization_constant(nz) == 0.0


def test_sampling_is_deterministic():
    g = TorusGrid(32)
    a = sample_noise(g, 0.01, 0.5, 11, 1 / 4)
    b = sample_noise(g, 0.01, 0.5, 11, 1 / 4)
    np.testing.assert_array_equal(a.cells, b.cells)


@given(st.sampled_from([2, 4, 5, 10]))
def test_coarsen_preserves_the_sheet(factor):
    g = TorusGrid(16)
    nz = sample_noise(g, 1e-3, 0.1, 3, 0.0)
    c = coarsen(nz, factor)
    assert c.dt == pytest.approx(factor * 1e-3)
    np.testing.assert_allclose((c.cells * c.dt).sum(axis=0), (nz.cells * nz.dt).sum(axis=0),
                               rtol=1e-10, atol=1e-10)


def test_coarsen_rejects_non_divisor():
    nz = sample_noise(TorusGrid(8), 0.1, 1.0, 0, 0.0)
    with pytest.raises(ValueError):
        coarsen(nz, 3)


def test_linear_tree_matches_duhamel_sum():
    # Y_N = sum_i E^(N-1-i) phi1 xi_i mode by mode
    g = TorusGrid(32)
    nz = sample_noise(g, 0.01, 0.2, 4, 1 / 4)
    y = solve_linear_tree(nz)
    st_ = EtdStepper(g, nz.dt)
    xi = np.fft.rfft(nz.cells, axis=-1)
    N = nz.n_steps
    powers = st_.E[None, :] ** (N - 1 - np.arange(N))[:, None]
    yN = np.fft.irfft((powers * st_.phi1 * xi).sum(axis=0), n=g.n_points)
    np.testing.assert_allclose(y[-1], yN, atol=1e-12)


def test_linear_tree_variance_oracle():
    # E[Y_N(x)^2] = (1/(L dt)) sum_k phi1_k^2 (1 - E_k^(2N)) / (1 - E_k^2), k = 0 term N dt
    g, dt, N = TorusGrid(64), 1e-3, 100
    st_ = EtdStepper(g, dt)
    k = np.arange(1, 9)
    E, p = st_.E[k], st_.phi1[k]
    expect = N * dt / g.period + 2 * np.sum(p**2 * (1 - E ** (2 * N)) / (1 - E**2)) / (g.period * dt)
    got = np.mean([solve_linear_tree(sample_noise(g, dt, N * dt, s, 1 / 8))[-1] ** 2
                   for s in range(60)])
    assert got == pytest.approx(expect, rel=0.15)


def test_renormalization_constant_matches_stationary_oracle():
    g, dt = TorusGrid(256), 1e-3
    vals = [renormalization_constant(sample_noise(g, dt, 0.5, s, 1 / 16)) for s in range(3)]
    assert np.mean(vals) == pytest.approx(stationary_c_ren(g, dt, 16), rel=0.03)
    assert stationary_c_ren(g, 1e-6, 16) == pytest.approx(16.0, rel=1e-3)


def test_trees_zero_noise():
    trees = build_trees(NoiseRealization.zero(TorusGrid(16), 0.01, 0.1))
    assert trees.c_ren == 0.0
    assert trees.total.sup_norm() == 0.0 and trees.b.sup_norm() == 0.0


def test_trees_vee_source_is_centred():
    g = TorusGrid(64)
    nz = sample_noise(g, 1e-3, 0.2, 5, 1 / 8)
    trees = build_trees(nz)
    dy = derivative_values(trees.y.data[:-1], g)
    first = int(np.ceil((1 / 8) ** 2 / nz.dt - 1e-9))
    src = 0.5 * dy[first:] ** 2 - trees.c_ren
    assert abs(src.mean()) < 1e-10


def test_trees_drift_is_derivative_of_total():
    g = TorusGrid(32)
    trees = build_trees(sample_noise(g, 1e-3, 0.05, 6, 1 / 4))
    np.testing.assert_allclose(trees.b.data, derivative_values(trees.total.data, g), atol=1e-12)


def test_tree_ceiling_raises():
    nz = sample_noise(TorusGrid(32), 1e-3, 0.05, 6, 1 / 4)
    with pytest.raises(InstabilityError, match="ceiling"):
        build_trees(nz, ceiling=1e-6)


def test_snapshot_round_trip(tmp_path):
    trees = build_trees(sample_noise(TorusGrid(16), 0.01, 0.1, 9, 1 / 4))
    path = tmp_path / "t.bin"
    save_snapshot(trees, path)
    back = load_snapshot(path)
    for name in ("y", "y_vee", "y_r"):
        np.testing.assert_array_equal(getattr(back, name).data, getattr(trees, name).data)
    assert back.c_ren == trees.c_ren and back.seed == 9
    assert path.read_bytes()[:8] == b"KPZTREE1"


def test_snapshot_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"not a snapshot")
    with pytest.raises(ValueError):
        load_snapshot(p)
