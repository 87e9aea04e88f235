import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kpzlab.field import SpaceTimeField, TorusGrid
from kpzlab.heatkernel import (
    MIN_SAMPLES,
    POINT_MASS_BANDWIDTH,
    SandwichError,
    estimate_density,
    export_density,
    fit_gaussian_sandwich,
    gaussian_density,
    gradient_ratio,
    image_sum_bound,
    periodize,
    pullback_density,
    sandwich_stability,
    silverman_bandwidth,
    torus_heat_bounds_check,
    torus_heat_kernel,
)
from kpzlab.rng import stream
from kpzlab.zvonkin import build_zvonkin_map


def normal(n, seed=0, scale=1.0):
    return scale * stream(seed, "test-density").standard_normal(n)


def test_silverman_formula():
    x = normal(5000)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    assert silverman_bandwidth(x) == pytest.approx(0.9 * min(sd, iqr / 1.34) * 5000 ** -0.2)


def test_point_mass_uses_fallback_bandwidth():
    d = estimate_density(np.zeros(MIN_SAMPLES))
    assert d.bandwidth == POINT_MASS_BANDWIDTH
    assert d.integral() == pytest.approx(1.0, abs=0.01)


def test_too_few_samples():
    with pytest.raises(ValueError, match="at least"):
        estimate_density(np.zeros(MIN_SAMPLES - 1))


@pytest.mark.parametrize("period", [None, 1.0])
def test_density_integrates_to_one(period):
    d = estimate_density(normal(20000, scale=0.4), period=period)
    assert d.integral() == pytest.approx(1.0, abs=0.01)


def test_kde_recovers_standard_normal():
    d = estimate_density(normal(100000))
    exact = np.exp(-d.points**2 / 2) / np.sqrt(2 * np.pi)
    # peak bias h^2 |f''(0)| / 2 ~ 0.0016 plus four pointwise sd sqrt(f R(K) / (n h)) ~ 0.0035
    assert np.abs(d.values - exact).max() < 0.02


def test_sandwich_of_exact_gaussian():
    f = fit_gaussian_sandwich(gaussian_density(0.3), 0.3)
    for key, val in (("C_upper", 1.0), ("c_upper", 0.5), ("C_lower", 1.0), ("c_lower", 0.5)):
        assert getattr(f, key) == pytest.approx(val, abs=1e-8)


def test_sandwich_of_wider_gaussian():
    # N(0, 2t) = 2^{-1/2} g_{1/4}: envelope constants C = 2^{-1/2}, C' = 2^{1/2}, c = c' = 1/4
    t = 0.2
    g = gaussian_density(2 * t)
    f = fit_gaussian_sandwich(g, t)
    assert f.C_upper == pytest.approx(2**-0.5, rel=1e-8)
    assert f.C_lower == pytest.approx(2**0.5, rel=1e-8)
    assert f.c_upper == pytest.approx(0.25, rel=1e-8)
    assert f.c_lower == pytest.approx(0.25, rel=1e-8)
    assert f.upper_margin >= -1e-9 and f.lower_margin >= -1e-9


def test_sandwich_envelopes_hold_on_region():
    d = estimate_density(normal(50000, 1, np.sqrt(0.25)))
    f = fit_gaussian_sandwich(d, 0.25)
    sel = (d.points >= f.region[0]) & (d.points <= f.region[1])
    y = d.points[sel]
    assert np.all(f.lower(y) <= d.values[sel] * (1 + 1e-9))
    assert np.all(d.values[sel] <= f.upper(y) * (1 + 1e-9))
    assert abs(f.c_upper - 0.5) < 0.05 and abs(f.c_lower - 0.5) < 0.05


def test_sandwich_needs_nodes():
    with pytest.raises(SandwichError):
        fit_gaussian_sandwich(gaussian_density(0.3), 0.3, region=(5.0, 5.001))


def test_sandwich_stability_of_identical_fits():
    f = fit_gaussian_sandwich(gaussian_density(0.3), 0.3)
    assert sandwich_stability([f, f]) == 1.0


def test_periodize_matches_torus_kernel():
    t = 0.01
    p = periodize(gaussian_density(t), 1.0, 128)
    np.testing.assert_allclose(p.values, torus_heat_kernel(t, p.points, 1.0, 1.0), rtol=1e-10)
    assert p.integral() == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("t, small", [(0.01, True), (0.05, False)])
def test_wrapping_error_on_central_half(t, small):
    # on |y| <= 1/4 the nearest image is at distance 3/4; its weight
    # exp(-9/(32 t)) / sqrt(2 pi t) is ~7e-13 at t = 0.01 but ~6e-3 at t = 0.05
    g = gaussian_density(t)
    p = periodize(g, 1.0, 256)
    sel = np.abs(p.points) <= 0.25
    err = np.abs(p.values[sel] - g(p.points[sel])).max()
    bound = image_sum_bound(t, 0.25)
    assert err <= bound * (1 + 1e-9)
    assert bool(err < 1e-6) == small


def test_periodize_long_time_is_uniform():
    p = periodize(gaussian_density(10.0), 1.0, 64)
    np.testing.assert_allclose(p.values, 1.0, atol=1e-6)


def test_periodize_rejects_truncated_density():
    d = gaussian_density(0.5, points=np.linspace(-1, 1, 101))
    d = type(d)(d.points, d.values, 0.0, 0)  # drop the evaluator
    with pytest.raises(ValueError, match="truncation"):
        periodize(d)


@given(st.floats(0.001, 0.5), st.floats(0.0, 0.49))
def test_image_sum_bound_dominates(t, r):
    ks = np.arange(1, 200)
    actual = sum(np.exp(-((r + k) ** 2) / (2 * t)) + np.exp(-((r - k) ** 2) / (2 * t)) for k in ks)
    actual /= np.sqrt(2 * np.pi * t)
    assert image_sum_bound(t, r) >= actual * (1 - 1e-12)


@pytest.mark.parametrize("mode", ["2pi", "unit"])
def test_torus_bounds_sweep(mode):
    L = 2 * np.pi if mode == "2pi" else 1.0
    S, Y = np.meshgrid(np.geomspace(1e-4, 20, 50), np.linspace(-L / 2, L / 2, 81))
    rep = torus_heat_bounds_check(S, Y, mode)
    assert rep.passed and rep.n_checked == S.size


@given(st.floats(0.001, 3.0))
def test_torus_kernel_normalised(s):
    y = TorusGrid(512, 2 * np.pi).points
    assert np.mean(torus_heat_kernel(s, y, 2 * np.pi)) == pytest.approx(1.0, rel=1e-9)


def test_gradient_ratio_small_time_limit():
    # log p ~ -y^2 / (2t) up to the antipode, so t sup|d log p| -> L/2
    assert 0.01 * gradient_ratio(None, 0.01, 2 * np.pi, 2048) == pytest.approx(np.pi, rel=0.03)


def test_gradient_ratio_kde_route_agrees():
    t = 0.1
    x = normal(200000, 2, np.sqrt(t))
    d = estimate_density(x, period=1.0, n_points=256)
    exact = gradient_ratio(None, t, 1.0, 256)
    assert gradient_ratio(d) == pytest.approx(exact, rel=0.15)


def test_pullback_through_identity_map():
    g = TorusGrid(32)
    b = SpaceTimeField.zeros(g, 0.01, 0.2)
    zmap = build_zvonkin_map(b, 0.2)
    d = gaussian_density(0.2)
    y = np.linspace(-1, 1, 21)
    back = pullback_density(d, zmap, 0.1, y)
    np.testing.assert_allclose(back.values, d(y), atol=1e-15)


def test_export(tmp_path):
    d = estimate_density(normal(2000))
    f = fit_gaussian_sandwich(d, 1.0)
    export_density(d, tmp_path, "bm", f)
    meta = json.loads((tmp_path / "bm.json").read_text())
    assert meta["n_samples"] == 2000 and "sandwich" in meta
    assert (tmp_path / "bm.csv").read_text().splitlines()[0] == "y,density"
