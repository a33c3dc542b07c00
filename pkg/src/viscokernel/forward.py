"""Newmark time stepping with SOE memory carried by exponential recurrences.

Semi-discrete system

    M a + K u + sum_c K_c (k_c * v) = f

where each coupling c pairs a stiffness-like operator K_c with an SOE kernel
k_c.  The convolution at t_{n+1} is sum_k w_k q_k^{n+1} with

    q_k^{n+1} = E_k q_k^n + alpha_k v^{n+1} + beta_k v^n,

exact for piecewise-linear velocity.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernels import SoeKernel

_SERIES_X = 1.0
_NTERMS = 26


class SolverError(RuntimeError):
    """Effective matrix not SPD or linear solve failed."""


@dataclass(frozen=True)
class SolverConfig:
    T_final: float = 4.0
    n_steps: int = 100
    beta: float = 0.25
    gamma: float = 0.5

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.T_final > 0:
            raise ValueError("T_final must be positive")
        if not 0.0 <= self.beta <= 0.5:
            raise ValueError("Newmark beta must lie in [0, 0.5]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("Newmark gamma must lie in [0, 1]")

    @property
    def dt(self) -> float:
        return self.T_final / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


def _fa(x):
    """(x - 1 + e^-x)/x^2 and its derivative."""
    x = np.asarray(x, dtype=float)
    f = np.empty_like(x)
    g = np.empty_like(x)
    small = x < _SERIES_X
    xs = x[small]
    j = np.arange(_NTERMS)
    fact = np.array([math.factorial(int(n) + 2) for n in j], dtype=float)
    sgn = (-1.0) ** j
    f[small] = np.sum(sgn * xs[:, None] ** j / fact, axis=1)
    jj = j[1:]
    g[small] = np.sum(sgn[1:] * jj * xs[:, None] ** (jj - 1) / fact[1:], axis=1)
    xl = x[~small]
    e = np.exp(-xl)
    f[~small] = (xl - 1.0 + e) / xl ** 2
    g[~small] = (2.0 - xl - (2.0 + xl) * e) / xl ** 3
    return f, g


def _fb(x):
    """(1 - e^-x (1 + x))/x^2 and its derivative."""
    x = np.asarray(x, dtype=float)
    f = np.empty_like(x)
    g = np.empty_like(x)
    small = x < _SERIES_X
    xs = x[small]
    n = np.arange(2, _NTERMS + 2)
    fact = np.array([math.factorial(int(k)) for k in n], dtype=float)
    sgn = (-1.0) ** n
    f[small] = np.sum(sgn * (n - 1) * xs[:, None] ** (n - 2) / fact, axis=1)
    n3 = n[1:]
    g[small] = np.sum(sgn[1:] * (n3 - 1) * (n3 - 2) * xs[:, None] ** (n3 - 3) / fact[1:], axis=1)
    xl = x[~small]
    e = np.exp(-xl)
    f[~small] = (1.0 - e * (1.0 + xl)) / xl ** 2
    g[~small] = (-2.0 + e * (xl ** 2 + 2.0 * xl + 2.0)) / xl ** 3
    return f, g


@dataclass(frozen=True)
class StepCoefficients:
    E: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    dE: np.ndarray      # derivatives with respect to the rate lambda
    dalpha: np.ndarray
    dbeta: np.ndarray


def soe_step_coefficients(rates, dt: float) -> StepCoefficients:
    lam = np.asarray(rates, dtype=float)
    x = lam * dt
    fa, dfa = _fa(x)
    fb, dfb = _fb(x)
    E = np.exp(-x)
    return StepCoefficients(E, dt * fa, dt * fb, -dt * E, dt * dt * dfa, dt * dt * dfb)


@dataclass(eq=False)
class Coupling:
    """One memory term: operator K paired with an SOE kernel."""
    K: sp.spmatrix
    kernel: SoeKernel

    def coefficients(self, dt: float) -> StepCoefficients:
        return soe_step_coefficients(self.kernel.rates, dt)


@dataclass(eq=False)
class TrajectoryRecord:
    t: np.ndarray
    u: np.ndarray                 # (N+1, n)
    v: np.ndarray
    a: np.ndarray
    q: list                       # per coupling, (N+1, m, n) or None
    y: np.ndarray | None = None   # (N+1, 3) observations
    memory_energy: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return self.t.size - 1


@dataclass(eq=False)
class EnergyTrace:
    """Mechanical energies plus the energy held by the memory variables,
    sum_c sum_k w_k/2 q_k^T K_c q_k.  Only mechanical + memory is
    guaranteed to decay for positive weights; the memory part can flow
    back into the mechanical energies after a load is released."""
    t: np.ndarray
    kinetic: np.ndarray
    elastic: np.ndarray
    memory: np.ndarray | None = None

    def __post_init__(self):
        if self.memory is None:
            self.memory = np.zeros_like(self.kinetic)

    @property
    def total(self) -> np.ndarray:
        return self.kinetic + self.elastic

    @property
    def stored(self) -> np.ndarray:
        return self.total + self.memory


class NewmarkSOE:
    """Generic integrator; the effective matrix is factored once."""

    def __init__(self, M, K, couplings: list[Coupling], config: SolverConfig):
        self.M = sp.csc_matrix(M)
        self.K = sp.csc_matrix(K)
        self.couplings = [c for c in couplings]
        self.config = config
        dt, b, g = config.dt, config.beta, config.gamma
        self.coef = [c.coefficients(dt) for c in self.couplings]
        self.A = [float(np.dot(c.kernel.weights, co.alpha)) for c, co in zip(self.couplings, self.coef)]
        S = self.M + b * dt * dt * self.K
        for c, A in zip(self.couplings, self.A):
            if A != 0.0:
                S = S + g * dt * A * sp.csc_matrix(c.K)
        self.S = sp.csc_matrix(S)
        self._lu = self._factor(self.S)
        self._lu_M = None

    @staticmethod
    def _factor(S):
        try:
            lu = spla.splu(S, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc
        d = lu.U.diagonal()
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise SolverError("effective matrix is not positive definite "
                              "(kernel parameters produce negative damping)")
        return lu

    def solve(self, r: np.ndarray) -> np.ndarray:
        return self._lu.solve(r)

    def initial_acceleration(self, f0: np.ndarray) -> np.ndarray:
        if not np.any(f0):
            return np.zeros_like(f0)
        if self._lu_M is None:
            self._lu_M = self._factor(self.M)
        return self._lu_M.solve(f0)

    def memory_force(self, qs, v):
        """sum_c K_c (sum_k w_k (E_k q_k + beta_k v)) without the implicit part."""
        out = np.zeros_like(v)
        for c, co, q in zip(self.couplings, self.coef, qs):
            w = c.kernel.weights
            hist = (w * co.E) @ q + float(np.dot(w, co.beta)) * v
            out += c.K @ hist
        return out

    def memory_energy(self, qs) -> float:
        e = 0.0
        for c, q in zip(self.couplings, qs):
            Kq = (c.K @ q.T).T
            e += 0.5 * float(np.dot(c.kernel.weights, np.einsum("ki,ki->k", q, Kq)))
        return e

    def step(self, u, v, a, qs, f1):
        dt, b, g = self.config.dt, self.config.beta, self.config.gamma
        ut = u + dt * v + dt * dt * (0.5 - b) * a
        vt = v + dt * (1.0 - g) * a
        r = f1 - self.K @ ut - self.memory_force(qs, v)
        for c, A in zip(self.couplings, self.A):
            if A != 0.0:
                r -= A * (c.K @ vt)
        a1 = self.solve(r)
        u1 = ut + b * dt * dt * a1
        v1 = vt + g * dt * a1
        q1 = [co.E[:, None] * q + co.alpha[:, None] * v1 + co.beta[:, None] * v
              for co, q in zip(self.coef, qs)]
        return u1, v1, a1, q1

    def run(self, load, store_memory: bool = True) -> TrajectoryRecord:
        """load: callable t -> force vector."""
        cfg = self.config
        N, n = cfg.n_steps, self.M.shape[0]
        t = cfg.times
        U = np.zeros((N + 1, n))
        V = np.zeros((N + 1, n))
        A = np.zeros((N + 1, n))
        qs = [np.zeros((c.kernel.m, n)) for c in self.couplings]
        Q = [np.zeros((N + 1, c.kernel.m, n)) for c in self.couplings] if store_memory else None
        Em = np.zeros(N + 1)
        A[0] = self.initial_acceleration(np.asarray(load(t[0]), dtype=float))
        u, v, a = U[0], V[0], A[0]
        for j in range(1, N + 1):
            u, v, a, qs = self.step(u, v, a, qs, np.asarray(load(t[j]), dtype=float))
            U[j], V[j], A[j] = u, v, a
            Em[j] = self.memory_energy(qs)
            if store_memory:
                for Qc, q in zip(Q, qs):
                    Qc[j] = q
        return TrajectoryRecord(t, U, V, A, Q, memory_energy=Em)


def beam_couplings(asm, k_eps: SoeKernel | None, k_tr: SoeKernel | None) -> list[Coupling]:
    out = []
    if k_tr is not None and not k_tr.is_zero():
        out.append(Coupling(asm.K_trace, k_tr))
    if k_eps is not None and not k_eps.is_zero():
        out.append(Coupling(asm.K_eps, k_eps))
    return out


def solve_forward(asm, k_eps: SoeKernel | None, k_tr: SoeKernel | None, load_spec,
                  config: SolverConfig, store_memory: bool = True):
    """Beam run; returns (TrajectoryRecord, EnergyTrace)."""
    solver = NewmarkSOE(asm.M, asm.K_C, beam_couplings(asm, k_eps, k_tr), config)
    traj = solver.run(lambda t: asm.load_vector(load_spec, t), store_memory=store_memory)
    traj.y = traj.u @ asm.Obs.T
    return traj, energy_monitor(traj, asm)


def energy_monitor(traj: TrajectoryRecord, asm) -> EnergyTrace:
    M = asm.M if hasattr(asm, "M") else asm[0]
    K = asm.K_C if hasattr(asm, "K_C") else asm[1]
    kin = 0.5 * np.einsum("ij,ij->i", traj.v, (M @ traj.v.T).T)
    ela = 0.5 * np.einsum("ij,ij->i", traj.u, (K @ traj.u.T).T)
    mem = None if traj.memory_energy is None else traj.memory_energy.copy()
    # round-off can leave -1e-30 on an all-zero state
    return EnergyTrace(traj.t.copy(), np.maximum(kin, 0.0), np.maximum(ela, 0.0), mem)


def newmark_elastic(M, K, load, config: SolverConfig):
    """Plain Newmark elastodynamics (no memory), written independently of
    NewmarkSOE for cross-checking."""
    dt, b, g = config.dt, config.beta, config.gamma
    N = config.n_steps
    M = sp.csc_matrix(M)
    K = sp.csc_matrix(K)
    # same factorization settings as NewmarkSOE, so the two agree to rounding
    lu = spla.splu(sp.csc_matrix(M + b * dt * dt * K), permc_spec="MMD_AT_PLUS_A",
                   diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    n = M.shape[0]
    u = np.zeros((N + 1, n))
    v = np.zeros((N + 1, n))
    a = np.zeros((N + 1, n))
    f0 = np.asarray(load(0.0), float)
    if np.any(f0):
        a[0] = spla.splu(M).solve(f0)
    for j in range(N):
        up = u[j] + dt * v[j] + dt * dt * (0.5 - b) * a[j]
        vp = v[j] + dt * (1 - g) * a[j]
        a[j + 1] = lu.solve(np.asarray(load((j + 1) * dt), float) - K @ up)
        u[j + 1] = up + b * dt * dt * a[j + 1]
        v[j + 1] = vp + g * dt * a[j + 1]
    return u, v, a


def write_trajectory_csv(path, traj: TrajectoryRecord, energy: EnergyTrace | None = None):
    cols = ["t", "y1", "y2", "y3"]
    if energy is not None:
        cols += ["kinetic", "elastic", "total", "memory"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for n, t in enumerate(traj.t):
            row = [t, *traj.y[n]]
            if energy is not None:
                row += [energy.kinetic[n], energy.elastic[n], energy.total[n], energy.memory[n]]
            w.writerow([format(float(x), ".17g") for x in row])
