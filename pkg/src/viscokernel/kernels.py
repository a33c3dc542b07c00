"""Scalar memory kernels and discrete convolution utilities.

A kernel is either a sum of exponentials (the representation used by the
time stepper and the optimizer) or a fractional Abel kernel
``t**(alpha - 1) / Gamma(alpha)`` that serves as a reference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import gamma as gamma_fn


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SoeKernel:
    """k(t) = sum_k weights[k] * exp(-rates[k] * t)."""

    weights: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float)).ravel()
        r = np.atleast_1d(np.asarray(self.rates, dtype=float)).ravel()
        if w.size == 0 or w.size != r.size:
            raise ValueError(
                f"weights and rates must be non-empty and of equal length, got {w.size} and {r.size}")
        if not np.all(np.isfinite(w)):
            raise ValueError("kernel weights must be finite")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("kernel rates must be finite and non-negative")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "rates", _frozen(r))

    @property
    def m(self) -> int:
        return self.weights.size

    def __eq__(self, other):
        if not isinstance(other, SoeKernel):
            return NotImplemented
        return (np.array_equal(self.weights, other.weights)
                and np.array_equal(self.rates, other.rates))

    __hash__ = object.__hash__

    @classmethod
    def zero(cls) -> "SoeKernel":
        return cls([0.0], [0.0])

    @classmethod
    def constant(cls, c: float) -> "SoeKernel":
        return cls([c], [0.0])

    def __call__(self, t):
        return soe_evaluate(self, t)

    def laplace(self, s):
        """Laplace transform sum_k w_k / (s + lambda_k)."""
        s = np.asarray(s)
        return np.sum(self.weights / (s[..., None] + self.rates), axis=-1)

    def is_zero(self) -> bool:
        return not np.any(self.weights)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "rates": self.rates.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SoeKernel":
        return cls(d["weights"], d["rates"])


@dataclass(frozen=True)
class FractionalKernel:
    """Abel kernel g_alpha(t) = t**(alpha-1) / Gamma(alpha), 0 < alpha <= 1."""

    alpha: float

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(~np.isfinite(t)):
            raise ValueError("time must be finite")
        if self.alpha < 1.0 and np.any(t <= 0):
            raise ValueError("fractional kernel is singular at t=0; sample from t > 0")
        if np.any(t < 0):
            raise ValueError("time must be non-negative")
        return t ** (self.alpha - 1.0) / gamma_fn(self.alpha)

    def laplace(self, s):
        return np.asarray(s, dtype=float) ** (-self.alpha)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha}


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Uniformly sampled time series, values[n] ~ f(n*dt).

    ``values`` has shape (N,) for scalar signals or (N, d) for vector ones.
    """

    dt: float
    values: np.ndarray

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 0 or v.shape[0] < 1:
            raise ValueError("a signal needs at least one sample")
        object.__setattr__(self, "values", _frozen(v))

    def __len__(self):
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self))

    @classmethod
    def from_function(cls, f, dt: float, n: int) -> "SampledSignal":
        t = dt * np.arange(n + 1)
        return cls(dt, f(t))


Kernelish = Union[SoeKernel, SampledSignal]


def soe_evaluate(k: SoeKernel, t):
    """Closed-form evaluation of an SOE kernel at t >= 0 (scalar or array)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t_arr)):
        raise ValueError("time must be finite")
    if np.any(t_arr < 0):
        raise ValueError("SOE kernels are evaluated for t >= 0 only")
    out = np.exp(-np.multiply.outer(t_arr, k.rates)) @ k.weights
    return float(out) if out.ndim == 0 else out


def _kernel_samples(k: Kernelish, dt: float, n: int) -> np.ndarray:
    if isinstance(k, SoeKernel):
        return soe_evaluate(k, dt * np.arange(n))
    if not math.isclose(k.dt, dt, rel_tol=1e-12):
        raise ValueError(f"kernel dt {k.dt} does not match signal dt {dt}")
    if len(k) < n:
        raise ValueError(f"sampled kernel has {len(k)} samples, need {n}")
    return np.asarray(k.values[:n], dtype=float)


def discrete_convolve(k: Kernelish, f: SampledSignal) -> SampledSignal:
    """Trapezoidal approximation of (k*f)(t_n) = int_0^t_n k(t_n - s) f(s) ds."""
    n = len(f)
    dt = f.dt
    kv = _kernel_samples(k, dt, n)
    fv = f.values
    vec = fv.ndim == 2
    cols = fv if vec else fv[:, None]
    out = np.empty_like(cols)
    for c in range(cols.shape[1]):
        full = np.convolve(kv, cols[:, c])[:n]
        out[:, c] = dt * (full - 0.5 * kv * cols[0, c] - 0.5 * kv[0] * cols[:, c])
    out[0] = 0.0
    return SampledSignal(dt, out if vec else out[:, 0])


def _trapz(y: np.ndarray, dt: float) -> float:
    return float(dt * (np.sum(y) - 0.5 * (y[0] + y[-1])))


def _deriv(y: np.ndarray, dt: float) -> np.ndarray:
    return np.gradient(y, dt, edge_order=2)


@dataclass(frozen=True)
class IdentityReport:
    """Discrete residuals of the Leibniz, integration-by-parts and
    transposition identities, with constants C = residual / dt**2."""

    dt: float
    leibniz: float
    parts: float
    transposition: float

    @property
    def constants(self) -> dict:
        h2 = self.dt ** 2
        return {"leibniz": self.leibniz / h2, "parts": self.parts / h2,
                "transposition": self.transposition / h2}

    @property
    def max_residual(self) -> float:
        return max(self.leibniz, self.parts, self.transposition)


def verify_convolution_identities(k: SoeKernel, w: SampledSignal,
                                  q: SampledSignal | None = None) -> IdentityReport:
    """Evaluate the three convolution identities on sampled scalar signals.

    Derivatives use second-order finite differences, integrals the
    trapezoidal rule; ``q`` defaults to ``w``.
    """
    if len(w) < 3:
        raise ValueError("need at least 3 samples to differentiate")
    q = w if q is None else q
    if len(q) != len(w) or not math.isclose(q.dt, w.dt, rel_tol=1e-12):
        raise ValueError("w and q must share dt and length")
    dt = w.dt
    wv = np.asarray(w.values, dtype=float)
    qv = np.asarray(q.values, dtype=float)
    t = w.times
    kt = soe_evaluate(k, t)

    # (k*w)_t = k*w_t + k(t) w(0)
    kw = discrete_convolve(k, w).values
    lhs = _deriv(kw, dt)
    rhs = discrete_convolve(k, SampledSignal(dt, _deriv(wv, dt))).values + kt * wv[0]
    leibniz = float(np.max(np.abs(lhs - rhs)))

    # int w_t(t) q(T-t) = int w(t) q_t(T-t) + w(T) q(0) - w(0) q(T)
    wt = _deriv(wv, dt)
    qt = _deriv(qv, dt)
    q_rev = qv[::-1]
    qt_rev = qt[::-1]
    lhs_p = _trapz(wt * q_rev, dt)
    rhs_p = _trapz(wv * qt_rev, dt) + wv[-1] * qv[0] - wv[0] * qv[-1]
    parts = abs(lhs_p - rhs_p)

    # int (k*w)(t) q(T-t) = int w(t) (k*q)(T-t)
    kq = discrete_convolve(k, q).values
    transposition = abs(_trapz(kw * q_rev, dt) - _trapz(wv * kq[::-1], dt))
    return IdentityReport(dt, leibniz, parts, transposition)


def check_alikhanov(k: SampledSignal, w: SampledSignal) -> float:
    """LHS - RHS of the Alikhanov-type lower bound

        int_0^T <w, k*w_t> dt  >=  1/2 (k*|w|^2)(T) - 1/2 int_0^T k dt |w(0)|^2

    for k piecewise constant (k.values[j] on [j dt, (j+1) dt)) and w the
    piecewise-linear interpolant of its samples.  Both sides are integrated
    exactly for this function class, so a negative return can only come
    from rounding.
    """
    if not math.isclose(k.dt, w.dt, rel_tol=1e-12):
        raise ValueError("k and w must share dt")
    dt = w.dt
    wv = np.asarray(w.values, dtype=float)
    if wv.ndim == 1:
        wv = wv[:, None]
    n_int = wv.shape[0] - 1
    if n_int < 1:
        raise ValueError("w needs at least two samples")
    kv = np.asarray(k.values, dtype=float)[:n_int]
    if kv.size < n_int:
        raise ValueError(f"k needs at least {n_int} samples")
    if np.any(kv < 0) or np.any(np.diff(kv) > 0):
        raise ValueError("k must be non-negative and non-increasing")

    d = np.diff(wv, axis=0)  # increments on each interval
    # (k*w_t)(t_n) = sum_{i<n} k[n-1-i] d[i], linear between grid points
    c = np.zeros_like(wv)
    for col in range(wv.shape[1]):
        c[1:, col] = np.convolve(kv, d[:, col])[:n_int]
    w0, w1 = wv[:-1], wv[1:]
    c0, c1 = c[:-1], c[1:]
    lhs = dt / 6.0 * np.sum(2 * w0 * c0 + w0 * c1 + w1 * c0 + 2 * w1 * c1)

    sq = dt / 3.0 * np.sum(w0 * w0 + w0 * w1 + w1 * w1, axis=1)
    conv_T = float(np.dot(kv[::-1], sq))
    rhs = 0.5 * conv_T - 0.5 * dt * float(np.sum(kv)) * float(np.dot(wv[0], wv[0]))
    return float(lhs - rhs)


@dataclass(frozen=True)
class CoercivityReport:
    """Frequency-domain coercivity check.

    ``min_quadratic_form`` is the smallest value of Re(Fk) on the grid, i.e.
    the spectral density of the quadratic form int (k*y) y dt; ``gamma_lower``
    the largest gamma with Re(Fk)(w) >= gamma (1+w^2)^(-delta/2) on the grid.
    """

    min_quadratic_form: float
    gamma_lower: float
    delta: float
    passed: bool


def fourier_real_part(k: SoeKernel | FractionalKernel, omega) -> np.ndarray:
    """Re of int_0^inf k(t) exp(-i omega t) dt."""
    omega = np.asarray(omega, dtype=float)
    if isinstance(k, FractionalKernel):
        with np.errstate(divide="ignore"):
            return math.cos(k.alpha * math.pi / 2) * np.abs(omega) ** (-k.alpha)
    lam = k.rates
    w2 = omega[..., None] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(lam > 0, k.weights * lam / (lam ** 2 + w2),
                         np.where(w2 == 0, np.sign(k.weights) * np.inf, 0.0))
    return np.sum(terms, axis=-1)


def check_fourier_coercivity(k: SoeKernel | FractionalKernel, delta: float,
                             grid: Sequence[float], tol: float = 1e-12) -> CoercivityReport:
    if delta <= 0:
        raise ValueError("delta must be positive")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or not np.all(np.isfinite(grid)):
        raise ValueError("frequency grid must be finite and non-empty")
    re = fourier_real_part(k, grid)
    scaled = re * (1.0 + grid ** 2) ** (delta / 2.0)
    finite = np.isfinite(re)
    min_form = float(np.min(re[finite])) if np.any(finite) else math.inf
    gamma = float(np.min(scaled))
    gamma = max(gamma, 0.0)
    return CoercivityReport(min_form, gamma, float(delta), min_form >= -tol)


def l1_distance(k1, k2, t0: float, t1: float, n_points: int = 2001) -> float:
    """Trapezoidal int_{t0}^{t1} |k1 - k2| dt on a uniform grid."""
    t = np.linspace(t0, t1, n_points)
    diff = np.abs(np.asarray(k1(t), dtype=float) - np.asarray(k2(t), dtype=float))
    return float(np.trapezoid(diff, t))


def kernel_from_dict(d: dict):
    if "alpha" in d:
        return FractionalKernel(float(d["alpha"]))
    return SoeKernel.from_dict(d)
