from __future__ import annotations

import math

import numpy as np
import pytest

from mdis.averaging import (
    NumericalBlowupError,
    averaged_drift_example1,
    cell_gradient_factor,
    homogenized_drift_example3,
    rough_potential_constants,
    solve_averaged_ode,
)
from mdis.model import ParameterError


def bessel_i0(x: float) -> float:
    """Power series sum_k (x/2)^{2k} / (k!)^2, summed until the terms vanish."""
    terms, k, term = [], 0, 1.0
    while term > 1e-300:
        terms.append(term)
        k += 1
        term *= (x / 2.0) ** 2 / (k * k)
        if k > 500:
            break
    return math.fsum(terms)


def test_reference_constants():
    c = rough_potential_constants(1.0)
    assert round(c.L_hat, 2) == 9.84
    assert round(c.kappa_hom, 3) == 0.408


def test_bessel_identity():
    # Q = sqrt(2) sin(y + pi/4), so both integrals equal 2 pi I0(sqrt(2)/D)
    c = rough_potential_constants(1.0)
    exact = 2.0 * math.pi * bessel_i0(math.sqrt(2.0))
    assert c.L == pytest.approx(exact, rel=1e-10)
    assert c.L_hat == pytest.approx(exact, rel=1e-10)
    c2 = rough_potential_constants(0.5)
    assert c2.L == pytest.approx(2.0 * math.pi * bessel_i0(2.0 * math.sqrt(2.0)), rel=1e-10)


def test_flat_limit():
    c = rough_potential_constants(1e9)
    assert c.L == pytest.approx(2.0 * math.pi, rel=1e-6)
    assert c.kappa_hom == pytest.approx(1.0, abs=1e-6)


def test_quadrature_converged():
    a = rough_potential_constants(1.0, 4096)
    b = rough_potential_constants(1.0, 8192)
    assert f"{a.kappa_hom:.10f}" == f"{b.kappa_hom:.10f}"
    assert f"{a.L_hat:.10f}" == f"{b.L_hat:.10f}"


@pytest.mark.parametrize("D, n", [(0.0, 4096), (-1.0, 4096), (1.0, 4097), (1.0, 32)])
def test_constants_reject_bad_input(D, n):
    with pytest.raises(ParameterError):
        rough_potential_constants(D, n)


def test_cell_factor():
    c = rough_potential_constants(1.0)
    assert round(float(cell_gradient_factor(math.pi / 4, c)), 2) == 2.63
    # mean and second moment under exp(-Q/D)/L both equal kappa (so q = 2 kappa D)
    y = np.linspace(0, 2 * math.pi, 4001)
    density = np.exp(-(np.cos(y) + np.sin(y))) / c.L
    factor = cell_gradient_factor(y, c)
    assert np.trapezoid(factor * density, y) == pytest.approx(c.kappa_hom, rel=1e-8)
    assert np.trapezoid(factor**2 * density, y) == pytest.approx(c.kappa_hom, rel=1e-8)


def test_equilibrium_path_is_constant():
    path = solve_averaged_ode(averaged_drift_example1, [-1.0], 0.0, 1.0, 5e-4)
    np.testing.assert_allclose(path.values, -1.0, atol=1e-9)
    assert len(path) == 2001
    assert path.times[-1] == 1.0


def test_double_well_against_logistic_solution():
    # u = x^2 solves u' = -4u(u-1): u(t) = 1 / (1 + (1/u0 - 1) e^{-4t})
    x0 = 0.9
    path = solve_averaged_ode(averaged_drift_example1, [x0], 0.0, 1.0, 1e-4)
    u = 1.0 / (1.0 + (1.0 / x0**2 - 1.0) * np.exp(-4.0 * path.times))
    np.testing.assert_allclose(path.values[:, 0], np.sqrt(u), atol=1e-8)


def test_double_well_against_fine_scalar_rk4():
    def rk4(x, T, n):
        h = T / n
        f = lambda v: -2.0 * v * (v * v - 1.0)
        for _ in range(n):
            k1 = f(x)
            k2 = f(x + 0.5 * h * k1)
            k3 = f(x + 0.5 * h * k2)
            k4 = f(x + h * k3)
            x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return x

    path = solve_averaged_ode(averaged_drift_example1, [0.9], 0.0, 1.0, 1e-4)
    assert path.terminal[0] == pytest.approx(rk4(0.9, 1.0, 1_000_000), abs=1e-8)


def test_homogenized_path_is_exponential():
    kap = rough_potential_constants(1.0).kappa_hom
    path = solve_averaged_ode(homogenized_drift_example3(kap), [0.5], 0.0, 1.0, 1e-3)
    np.testing.assert_allclose(path.values[:, 0], 0.5 * np.exp(-kap * path.times), rtol=1e-11)
    zero = solve_averaged_ode(homogenized_drift_example3(kap), [0.0], 0.0, 1.0, 1e-3)
    assert np.all(zero.values == 0.0)


def test_truncated_last_step():
    path = solve_averaged_ode(lambda x: -x, [1.0], 0.0, 1.0, 0.3)
    np.testing.assert_allclose(path.times, [0.0, 0.3, 0.6, 0.9, 1.0])
    assert path.terminal[0] == pytest.approx(math.exp(-1.0), rel=1e-4)


def test_path_is_read_only_and_interpolates():
    path = solve_averaged_ode(lambda x: np.ones_like(x), [0.0], 0.0, 1.0, 0.25)
    with pytest.raises(ValueError):
        path.values[0, 0] = 5.0
    assert path.at(0.6)[0] == pytest.approx(0.6)
    assert path.x0[0] == 0.0


def test_blowup_is_reported():
    with pytest.raises(NumericalBlowupError) as info:
        solve_averaged_ode(lambda x: x * x, [1.0], 0.0, 2.0, 1e-3)
    assert 0.9 < info.value.time < 1.1


def test_bad_grid():
    with pytest.raises(ParameterError):
        solve_averaged_ode(lambda x: x, [0.0], 0.0, 1.0, 0.0)
    with pytest.raises(ParameterError):
        solve_averaged_ode(lambda x: x, [0.0], 1.0, 1.0, 0.1)


def test_rest_point_shortcut_matches_rk4_loop():
    from mdis.averaging import _rk4_step

    path = solve_averaged_ode(averaged_drift_example1, [1.0], 0.0, 0.5, 0.01)
    x, loop = np.array([1.0]), [np.array([1.0])]
    for k in range(len(path) - 1):
        x = _rk4_step(averaged_drift_example1, x, path.times[k], path.times[k + 1] - path.times[k])
        loop.append(x)
    np.testing.assert_array_equal(path.values, np.array(loop))


def test_interpolation_matches_numpy_interp():
    path = solve_averaged_ode(lambda x: -0.4 * x, [0.5], 0.0, 1.0, 0.01)
    t = np.random.default_rng(5).uniform(-0.1, 1.1, 500)
    want = np.interp(t, path.times, np.array(path.values[:, 0]))
    np.testing.assert_allclose(path.at(t)[:, 0], want, rtol=0, atol=1e-15)
    assert path.at(0.3).shape == (1,)
