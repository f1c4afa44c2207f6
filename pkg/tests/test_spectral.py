import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import periodized_gaussian
from nlsmass.grid import FREQUENCY, Field, GridError, make_grid
from nlsmass.spectral import (Propagator, TimeBox, evaluate_on_spacetime_grid, forward_transform,
                              free_evolve, free_spacetime_norm, gradient_sq_norm, inverse_transform,
                              laplacian, nyquist_fraction, resample, shift)


def gaussian(spec, center=0.0, xi0=0.0):
    return Field.from_function(spec, lambda *x: np.exp(-np.pi * sum((c - center) ** 2 for c in x)
                                                       + 2j * np.pi * xi0 * x[0]))


def test_transform_of_gaussian_is_gaussian():
    # exp(-pi x^2) is its own transform under the e^{-2 pi i x xi} convention
    spec = make_grid(1, 16.0, 256)
    hat = forward_transform(gaussian(spec))
    xi = spec.axis(FREQUENCY)
    assert np.max(np.abs(hat.values - np.exp(-np.pi * xi**2))) < 1e-13


def test_transform_modulation_shifts_spectrum():
    spec = make_grid(1, 16.0, 256)
    hat = forward_transform(gaussian(spec, xi0=2.0))
    xi = spec.axis(FREQUENCY)
    assert np.max(np.abs(hat.values - np.exp(-np.pi * (xi - 2.0) ** 2))) < 1e-12


@given(st.integers(1, 3), st.integers(0, 2**31))
def test_roundtrip_and_plancherel(dim, seed):
    spec = make_grid(dim, 5.0, 16)
    rng = np.random.default_rng(seed)
    f = Field(spec, rng.normal(size=spec.shape) + 1j * rng.normal(size=spec.shape))
    hat = forward_transform(f)
    assert np.isclose(hat.mass(), f.mass(), rtol=1e-12)
    assert np.allclose(inverse_transform(hat).values, f.values, atol=1e-12)


def test_domain_tags_enforced():
    spec = make_grid(1, 1.0, 8)
    with pytest.raises(GridError):
        inverse_transform(Field.zeros(spec))
    with pytest.raises(GridError):
        forward_transform(Field.zeros(spec, FREQUENCY))


@pytest.mark.parametrize("t", [-1.0, -0.3, 0.05, 0.5, 1.0])
def test_free_gaussian_matches_periodized_closed_form(t):
    spec = make_grid(1, 32.0, 512)
    u = free_evolve(gaussian(spec), t)
    exact = periodized_gaussian(spec.axis(), t, spec.extent)
    assert np.max(np.abs(u.values - exact)) < 1e-12


def test_free_gaussian_2d():
    spec = make_grid(2, 16.0, 128)
    t = 0.2
    u = free_evolve(gaussian(spec), t)
    x, y = spec.coords()
    exact = periodized_gaussian([x, y], t, spec.extent)
    assert np.max(np.abs(u.values - exact)) < 1e-12


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_group_property_and_unitarity(s, t):
    spec = make_grid(1, 8.0, 64)
    f = gaussian(spec, xi0=1.0)
    prop = Propagator(spec)
    a = prop(prop(f, s), t)
    b = prop(f, s + t)
    assert np.allclose(a.values, b.values, atol=1e-11)
    assert abs(a.mass() - f.mass()) < 1e-12 * f.mass()


def test_packet_moves_along_4pi_t_xi0():
    spec = make_grid(1, 64.0, 1024)
    xi0, t = 1.5, 0.5
    u = free_evolve(gaussian(spec, xi0=xi0), t)
    x = spec.axis()
    dens = np.abs(u.values) ** 2
    center = np.sum(x * dens) / np.sum(dens)
    assert abs(center - 4 * np.pi * t * xi0) < 1e-8


def test_spacetime_series_and_norm():
    spec = make_grid(1, 32.0, 256)
    g = gaussian(spec)
    times = np.linspace(0, 0.5, 11)
    series = evaluate_on_spacetime_grid(g, times)
    assert np.allclose(series[0].values, g.values)
    assert np.allclose(series[10].values, free_evolve(g, 0.5).values)
    assert free_spacetime_norm(g, times, 6) > 0
    with pytest.raises(GridError):
        evaluate_on_spacetime_grid(g, [0.2, 0.1])


def test_shift_is_translation():
    spec = make_grid(1, 16.0, 256)
    moved = shift(gaussian(spec), [1.25])
    assert np.max(np.abs(moved.values - gaussian(spec, center=1.25).values)) < 1e-12


def test_laplacian_and_gradient_of_gaussian():
    spec = make_grid(1, 16.0, 256)
    x = spec.axis()
    g = gaussian(spec)
    exact = (4 * np.pi**2 * x**2 - 2 * np.pi) * np.exp(-np.pi * x**2)
    assert np.max(np.abs(laplacian(g).values - exact)) < 1e-10
    # ||g'||^2 = pi / sqrt(2) for exp(-pi x^2)
    assert abs(gradient_sq_norm(g) - np.pi / np.sqrt(2)) < 1e-12


def test_nyquist_fraction_flags_rough_data():
    spec = make_grid(1, 16.0, 256)
    assert nyquist_fraction(gaussian(spec)) < 1e-20
    rough = Field(spec, np.sign(spec.axis()))
    assert nyquist_fraction(rough) > 1e-4


def test_resample_dilates_band_limited_data():
    spec = make_grid(1, 32.0, 512)
    g = gaussian(spec)
    r = resample(g, 2.0, [1.0])
    exact = np.exp(-np.pi * ((spec.axis() - 1.0) / 2.0) ** 2)
    assert np.max(np.abs(r.values - exact)) < 1e-12


def test_timebox():
    box = TimeBox(-1.0, 1.0, 5)
    assert np.allclose(box.times, [-1, -0.5, 0, 0.5, 1])
    assert np.allclose(box.scaled(2).times, 2 * box.times)
    assert TimeBox(0.3, 0.3, 1).times.tolist() == [0.3]
    with pytest.raises(ValueError):
        TimeBox(1.0, 0.0, 3)
