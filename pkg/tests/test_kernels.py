import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.special import gamma as gamma_fn

from viscokernel.kernels import (FractionalKernel, SampledSignal, SoeKernel, check_alikhanov,
                                 check_fourier_coercivity, discrete_convolve, l1_distance,
                                 soe_evaluate, verify_convolution_identities)
from viscokernel.rational import soe_from_fractional
from viscokernel.checks import identity_orders, random_alikhanov


def test_constant_kernel():
    assert soe_evaluate(SoeKernel([1.0], [0.0]), 5.0) == 1.0


def test_sum_of_weights_at_zero():
    assert soe_evaluate(SoeKernel([2.0, -1.0], [1.0, 1.0]), 0.0) == 1.0


def test_aaa_kernel_at_one():
    k = soe_from_fractional(0.7, max_modes=22)
    ref = 1.0 / gamma_fn(0.7)
    assert abs(k(1.0) - ref) / ref < 1e-4


def test_soe_rejects_nonfinite_time():
    k = SoeKernel([1.0], [1.0])
    with pytest.raises(ValueError):
        k(float("nan"))
    with pytest.raises(ValueError):
        k(math.inf)


def test_soe_invariants():
    with pytest.raises(ValueError):
        SoeKernel([], [])
    with pytest.raises(ValueError):
        SoeKernel([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        SoeKernel([1.0], [-0.5])
    k = SoeKernel([1.0, 2.0], [0.5, 3.0])
    with pytest.raises(ValueError):
        k.weights[0] = 5.0


def test_fractional_kernel():
    g = FractionalKernel(0.7)
    with pytest.raises(ValueError):
        g(0.0)
    assert g(1.0) == pytest.approx(1 / gamma_fn(0.7), rel=1e-15)
    assert FractionalKernel(1.0)(0.0) == 1.0
    with pytest.raises(ValueError):
        FractionalKernel(1.2)
    with pytest.raises(ValueError):
        FractionalKernel(0.0)


def test_convolve_zero_kernel():
    f = SampledSignal.from_function(np.sin, 0.1, 20)
    assert np.all(discrete_convolve(SoeKernel.zero(), f).values == 0)


def test_convolve_ones():
    f = SampledSignal(0.1, np.ones(11))
    g = discrete_convolve(SoeKernel.constant(1.0), f)
    assert g.values[0] == 0.0
    assert g.values[10] == pytest.approx(1.0, abs=1e-14)


def test_convolve_exponentials():
    # the integrand is constant in s, so the trapezoidal rule is exact here
    f = SampledSignal.from_function(lambda t: np.exp(-t), 1e-2, 200)
    g = discrete_convolve(SoeKernel([1.0], [1.0]), f)
    assert np.max(np.abs(g.values - f.times * np.exp(-f.times))) < 1e-14


def test_convolve_second_order():
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        f = SampledSignal.from_function(np.cos, dt, int(round(3.0 / dt)))
        t = f.times
        exact = (2 * np.cos(t) + np.sin(t) - 2 * np.exp(-2 * t)) / 5
        g = discrete_convolve(SoeKernel([1.0], [2.0]), f)
        errs.append(np.max(np.abs(g.values - exact)))
    assert errs[0] < 1e-4
    for a, b in zip(errs, errs[1:]):
        assert math.log2(a / b) > 1.9


def test_convolve_dt_mismatch():
    f = SampledSignal(0.1, np.ones(5))
    k = SampledSignal(0.2, np.ones(5))
    with pytest.raises(ValueError):
        discrete_convolve(k, f)


def test_convolve_vector_signal_matches_columns():
    t = np.linspace(0, 1, 51)
    f = SampledSignal(t[1], np.stack([np.sin(t), np.cos(t)], axis=1))
    k = SoeKernel([0.5, 1.0], [2.0, 0.1])
    g = discrete_convolve(k, f).values
    for c in range(2):
        gc = discrete_convolve(k, SampledSignal(t[1], f.values[:, c])).values
        np.testing.assert_array_equal(g[:, c], gc)


def test_identities_zero_kernel():
    w = SampledSignal.from_function(np.sin, 1e-2, 100)
    rep = verify_convolution_identities(SoeKernel.zero(), w)
    assert rep.leibniz == 0.0
    assert rep.transposition == 0.0


def test_leibniz_linear_signal():
    w = SampledSignal.from_function(lambda t: t, 1e-3, 1000)
    assert verify_convolution_identities(SoeKernel([1.0], [1.0]), w).leibniz < 1e-4


def test_transposition_sine():
    w = SampledSignal.from_function(np.sin, 1e-3, 1000)
    assert verify_convolution_identities(SoeKernel([1.0], [1.0]), w, w).transposition < 1e-4


def test_identity_orders():
    k = SoeKernel([0.7, 0.4], [1.3, 0.2])
    orders = identity_orders(k, lambda t: np.sin(2 * t) + t ** 2, lambda t: np.cos(3 * t) + 1)
    for name, rep in orders.items():
        assert rep["order"] >= 1.9, name


def test_alikhanov_zero_kernel():
    w = SampledSignal.from_function(np.sin, 0.01, 50)
    assert check_alikhanov(SampledSignal(0.01, np.zeros(51)), w) == 0.0


def test_alikhanov_constant_w():
    dt = 1e-3
    t = dt * np.arange(1001)
    val = check_alikhanov(SampledSignal(dt, np.exp(-t)), SampledSignal(dt, np.full(1001, 2.0)))
    assert abs(val) < 1e-5


def test_alikhanov_precondition():
    w = SampledSignal(0.1, np.ones(5))
    with pytest.raises(ValueError):
        check_alikhanov(SampledSignal(0.1, [1.0, 2.0, 0.5, 0.1, 0.0]), w)
    with pytest.raises(ValueError):
        check_alikhanov(SampledSignal(0.1, [-1.0, -1.0, -1.0, -1.0, -1.0]), w)


def test_alikhanov_random():
    vals = random_alikhanov(np.random.default_rng(7), trials=100)
    assert min(vals) >= -1e-10


def test_coercivity_single_mode():
    grid = np.linspace(-50, 50, 1001)
    rep = check_fourier_coercivity(SoeKernel([1.0], [1.0]), 2.0, grid)
    assert rep.gamma_lower == pytest.approx(1.0, rel=1e-12)
    assert rep.passed


def test_coercivity_delta_positive():
    with pytest.raises(ValueError):
        check_fourier_coercivity(SoeKernel([1.0], [1.0]), 0.0, [0.0, 1.0])


def test_coercivity_fractional_grid_minimum():
    pos = np.geomspace(1, 1e3, 200)
    grid = np.concatenate([-pos[::-1], pos])
    rep = check_fourier_coercivity(FractionalKernel(0.7), 0.7, grid)
    direct = np.min(math.cos(0.35 * math.pi) * np.abs(grid) ** -0.7 * (1 + grid ** 2) ** 0.35)
    assert rep.gamma_lower == pytest.approx(direct, rel=1e-13)
    assert rep.gamma_lower >= math.cos(0.35 * math.pi) * 0.99


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(1e-3, 10.0), st.floats(1e-3, 100.0)), min_size=1, max_size=8))
def test_coercivity_positive_weights(modes):
    w, r = zip(*modes)
    grid = np.concatenate([-np.geomspace(1e-3, 1e3, 50)[::-1], [0.0], np.geomspace(1e-3, 1e3, 50)])
    rep = check_fourier_coercivity(SoeKernel(w, r), 1.0, grid)
    assert rep.gamma_lower > 0
    assert rep.passed


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(0.05, 2.0))
def test_l1_constant_offset(c, T):
    k = SoeKernel([1.0, 0.3], [2.0, 0.5])
    shifted = SoeKernel([1.0, 0.3, c], [2.0, 0.5, 0.0])
    dt = 0.01
    assert l1_distance(shifted, k, dt, T + dt) == pytest.approx(abs(c) * T, rel=1e-12, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(0, 20)), min_size=1, max_size=6),
       st.floats(0.01, 10))
def test_laplace_transform_matches_quadrature(modes, s):
    w, r = zip(*modes)
    k = SoeKernel(w, r)
    quad = integrate.quad(lambda t: k(t) * math.exp(-s * t), 0, math.inf, limit=200)[0]
    assert float(k.laplace(s)) == pytest.approx(quad, rel=1e-7, abs=1e-9)
