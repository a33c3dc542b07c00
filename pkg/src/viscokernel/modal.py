"""Single-mode oscillators with memory and Laplace-domain kernel recovery.

A modal coordinate obeys

    u'' + lam u + lam (k * u')(t) = l(t) f,   u(0) = u'(0) = 0,

observed as y = gain * u.  Taking Laplace transforms gives

    L k(s) = ( f gain L l(s) / L y(s) - s^2 - lam ) / (lam s),

which is evaluated with transforms computed by quadrature on [0, T].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .forward import Coupling, NewmarkSOE, SolverConfig
from .kernels import SampledSignal, SoeKernel
from .rational import RationalLaplace


def smooth_pulse(width: float = 1.0) -> Callable[[float], float]:
    """sin^2(pi t / width) on [0, width], zero afterwards."""
    if not width > 0:
        raise ValueError("pulse width must be positive")

    def prof(t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= 0) & (t < width), np.sin(np.pi * t / width) ** 2, 0.0)
    return prof


@dataclass(eq=False)
class ModalSystem:
    lam: float
    f: float = 1.0
    gain: float = 1.0
    profile: Callable = field(default_factory=smooth_pulse)
    kernel: SoeKernel = field(default_factory=SoeKernel.zero)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("modal eigenvalue must be positive")


def _transition(sys: ModalSystem, config: SolverConfig):
    """One Newmark+SOE step at dimension one as x1 = Phi x + psi f1,
    x = (u, v, a, q_1..q_m)."""
    one = np.array([[1.0]])
    K = np.array([[sys.lam]])
    solver = NewmarkSOE(one, K, [Coupling(K, sys.kernel)], config)
    m = sys.kernel.m
    n = 3 + m

    def apply(x, f1):
        u, v, a = x[0:1], x[1:2], x[2:3]
        q = x[3:].reshape(m, 1)
        u1, v1, a1, (q1,) = solver.step(u, v, a, [q], np.array([f1]))
        return np.concatenate([u1, v1, a1, q1.ravel()])

    Phi = np.column_stack([apply(e, 0.0) for e in np.eye(n)])
    psi = apply(np.zeros(n), 1.0)
    return Phi, psi


def simulate_mode(sys: ModalSystem, dt: float, T: float) -> SampledSignal:
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * T:
        raise ValueError("T must be a positive multiple of dt")
    cfg = SolverConfig(T_final=T, n_steps=n_steps)
    Phi, psi = _transition(sys, cfg)
    t = cfg.times
    load = sys.f * np.asarray(sys.profile(t), dtype=float)
    x = np.zeros(Phi.shape[0])
    x[2] = load[0]            # unit mass: a0 = f(0)
    u = np.empty(n_steps + 1)
    u[0] = x[0]
    for j in range(1, n_steps + 1):
        x = Phi @ x + psi * load[j]
        u[j] = x[0]
    return SampledSignal(cfg.dt, sys.gain * u)


def laplace_trapz(values: np.ndarray, dt: float, s: float) -> float:
    t = np.arange(values.size) * dt
    return float(np.trapezoid(values * np.exp(-s * t), dx=dt))


@dataclass(frozen=True)
class RecoveredPoint:
    s: float
    value: float | None
    tail_bound: float          # bound on the truncated part of L y
    value_bound: float         # induced bound on the error of L k
    skipped: bool = False
    reason: str = ""

    def to_dict(self) -> dict:
        return {"s": self.s, "value": self.value, "tail_bound": self.tail_bound,
                "value_bound": self.value_bound, "skipped": self.skipped, "reason": self.reason}


def recover_kernel_laplace(y: SampledSignal, sys: ModalSystem, s_points,
                           cond_tol: float = 1e-12, tail_frac: float = 0.05) -> list[RecoveredPoint]:
    """Pointwise recovery of L k from a simulated or measured modal response.

    The transform of y is truncated at T = (len(y)-1) dt.  Its tail is
    bounded by max|y| over the last ``tail_frac`` of the record times
    exp(-sT)/s; a single end value would vanish at a zero crossing.
    """
    vals = np.asarray(y.values, dtype=float)
    if vals.ndim != 1:
        raise ValueError("modal recovery needs a scalar signal")
    dt = y.dt
    T = (vals.size - 1) * dt
    t = np.arange(vals.size) * dt
    tail_amp = float(np.max(np.abs(vals[int((1.0 - tail_frac) * (vals.size - 1)):])))
    scale = float(np.max(np.abs(vals))) if vals.size else 0.0
    load = np.asarray(sys.profile(t), dtype=float)
    out = []
    for s in s_points:
        s = float(s)
        if not s > 0:
            raise ValueError("Laplace points must be positive")
        Ly = laplace_trapz(vals, dt, s)
        Ll = laplace_trapz(load, dt, s)
        tail = tail_amp * math.exp(-s * T) / s
        if abs(Ly) <= cond_tol * max(scale, 1e-300) / s:
            out.append(RecoveredPoint(s, None, tail, math.inf, True, "|L y| below conditioning threshold"))
            continue
        num = sys.f * sys.gain * Ll
        val = (num / Ly - s * s - sys.lam) / (sys.lam * s)
        bound = abs(num) * tail / (abs(Ly) * max(abs(Ly) - tail, 1e-300)) / (sys.lam * s)
        out.append(RecoveredPoint(s, val, tail, bound))
    return out


# --- scalar constitutive models ----------------------------------------------

def _ivp(rhs, n, T, t_eval, max_step, rtol, atol, dtype=float):
    sol = solve_ivp(rhs, (0.0, T), np.zeros(n, dtype=dtype), method="DOP853", t_eval=t_eval,
                    rtol=rtol, atol=atol, max_step=max_step)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y[0].real


def model1_response(k_sigma: SoeKernel, k: SoeKernel, modulus: float, profile, T: float,
                    t_eval, max_step: float = 0.01, rtol: float = 1e-11, atol: float = 1e-13):
    """u'' + sigma = l(t) with  sigma + k_sigma * sigma' = modulus u + k * u'.

    States: u, v, sigma, z_j (memory of sigma'), y_k (memory of u').
    """
    a, b = k_sigma.weights, k_sigma.rates
    w, r = k.weights, k.rates
    na, nk = a.size, w.size
    den = 1.0 + a.sum()
    if den <= 0:
        raise ValueError("1 + sum of k_sigma weights must be positive")

    def rhs(t, x):
        v, sig = x[1], x[2]
        z = x[3:3 + na]
        yk = x[3 + na:]
        dsig = (modulus * v + w.sum() * v - w @ (r * yk) + a @ (b * z)) / den
        return np.concatenate([[v, float(profile(t)) - sig, dsig], -b * z + dsig, -r * yk + v])

    return _ivp(rhs, 3 + na + nk, T, t_eval, max_step, rtol, atol)


def model2_response(k2: RationalLaplace, modulus: float, profile, T: float, t_eval,
                    max_step: float = 0.01, rtol: float = 1e-11, atol: float = 1e-13):
    """u'' + modulus u + k2 * u' = l(t) for a strictly proper rational kernel."""
    if k2.constant != 0:
        raise ValueError("kernel transform must be strictly proper")
    p, res = k2.poles, k2.residues
    n = p.size

    def rhs(t, x):
        u, v = x[0].real, x[1].real
        zeta = x[2:]
        h = float(np.real(res @ zeta)) if n else 0.0
        acc = float(profile(t)) - modulus * u - h
        return np.concatenate([[v, acc], p * zeta + v])

    return _ivp(rhs, 2 + n, T, t_eval, max_step, rtol, atol, dtype=complex)
