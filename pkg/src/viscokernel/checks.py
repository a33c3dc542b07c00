"""Numerical property suites for kernels and the modal oracle."""
from __future__ import annotations

import math

import numpy as np

from .kernels import (FractionalKernel, SampledSignal, SoeKernel, check_alikhanov,
                      check_fourier_coercivity, verify_convolution_identities)
from .modal import ModalSystem, recover_kernel_laplace, simulate_mode


def identity_orders(k: SoeKernel, w, q, T: float = 1.0, dts=(1e-2, 5e-3, 2.5e-3)) -> dict:
    """Observed convergence order of each identity residual under dt halving."""
    reps = []
    for dt in dts:
        n = int(round(T / dt))
        reps.append(verify_convolution_identities(k, SampledSignal.from_function(w, dt, n),
                                                  SampledSignal.from_function(q, dt, n)))
    out = {}
    for name in ("leibniz", "parts", "transposition"):
        r = [getattr(rep, name) for rep in reps]
        rates = [math.log(r[i] / r[i + 1]) / math.log(dts[i] / dts[i + 1])
                 for i in range(len(r) - 1) if r[i + 1] > 0]
        out[name] = {"residuals": r, "order": min(rates) if rates else math.inf}
    return out


def random_alikhanov(rng: np.random.Generator, trials: int = 100) -> list[float]:
    vals = []
    for _ in range(trials):
        n = int(rng.integers(20, 200))
        dt = float(rng.uniform(1e-3, 1e-1))
        k = np.sort(rng.uniform(0.0, 2.0, n + 1))[::-1]
        cut = rng.random(n + 1) < 0.1
        cut[0] = False
        k[cut] = 0.0
        k = np.minimum.accumulate(k)
        t = dt * np.arange(n + 1)
        freqs = rng.uniform(0.2, 5.0, 3)
        amps = rng.normal(size=(3, 2))
        w = np.stack([sum(amps[j, c] * np.sin(freqs[j] * t + c) for j in range(3)) for c in range(2)], axis=1)
        w += rng.normal(size=2)
        vals.append(check_alikhanov(SampledSignal(dt, k), SampledSignal(dt, w)))
    return vals


def random_coercivity(rng: np.random.Generator, trials: int = 50, delta: float = 2.0) -> list[float]:
    grid = np.concatenate([-np.geomspace(1e-3, 1e3, 200)[::-1], [0.0], np.geomspace(1e-3, 1e3, 200)])
    out = []
    for _ in range(trials):
        m = int(rng.integers(1, 10))
        k = SoeKernel(rng.uniform(0.01, 2.0, m), rng.uniform(0.01, 50.0, m))
        out.append(check_fourier_coercivity(k, delta, grid).gamma_lower)
    return out


def modal_round_trip(kernels=None, lam: float = 4.0, dt: float = 1e-3, T: float = 200.0,
                     s_points=(0.5, 1.0, 2.0, 5.0)) -> list[float]:
    """Max relative error of recovered L k over s_points, per kernel."""
    kernels = kernels if kernels is not None else [SoeKernel([1.0], [1.0]),
                                                   SoeKernel([0.5, 0.3], [0.5, 3.0])]
    errs = []
    for k in kernels:
        sys = ModalSystem(lam, kernel=k)
        pts = recover_kernel_laplace(simulate_mode(sys, dt, T), sys, s_points)
        e = [abs(p.value - float(k.laplace(p.s))) / abs(float(k.laplace(p.s)))
             for p in pts if not p.skipped]
        errs.append(max(e) if e else math.inf)
    return errs


def property_suite(seed: int = 0, modal: bool = True) -> dict:
    rng = np.random.default_rng(seed)
    k = SoeKernel([0.7, 0.4], [1.3, 0.2])
    orders = identity_orders(k, lambda t: np.sin(2 * t) + t ** 2, lambda t: np.cos(3 * t) + 1)
    alik = random_alikhanov(rng)
    coer = random_coercivity(rng)
    frac = check_fourier_coercivity(FractionalKernel(0.7), 0.7,
                                    np.concatenate([-np.geomspace(1, 1e3, 100)[::-1], np.geomspace(1, 1e3, 100)]))
    rep = {
        "identity_orders": orders,
        "identity_min_order": min(v["order"] for v in orders.values()),
        "alikhanov_min": min(alik),
        "coercivity_min_gamma": min(coer),
        "fractional_gamma": frac.gamma_lower,
    }
    passed = (rep["identity_min_order"] >= 1.9 and rep["alikhanov_min"] >= -1e-10
              and rep["coercivity_min_gamma"] > 0)
    if modal:
        rep["modal_errors"] = modal_round_trip()
        passed = passed and max(rep["modal_errors"]) < 1e-3
    rep["passed"] = bool(passed)
    return rep
