"""Discrete adjoint and tangent-linear models of the Newmark+SOE scheme.

The reverse sweep is the transpose of ``NewmarkSOE.step`` line by line, so
gradients agree with finite differences of the discrete objective up to
round-off.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import Coupling, NewmarkSOE, TrajectoryRecord
from .kernels import SoeKernel


@dataclass(frozen=True)
class ThetaLayout:
    """theta = (w_tr, s_tr, w_eps, s_eps) with lambda = lambda_min + s**2.

    For ``kind="single"`` one kernel drives both couplings and
    theta = (w, s).
    """
    kind: str = "two"
    m_tr: int = 8
    m_eps: int = 8
    lambda_min: float = 0.0

    def __post_init__(self):
        if self.kind not in ("single", "two"):
            raise ValueError("layout kind must be 'single' or 'two'")
        if self.m_tr < 1 or self.m_eps < 1:
            raise ValueError("mode counts must be >= 1")
        if self.kind == "single" and self.m_tr != self.m_eps:
            raise ValueError("single-kernel layout needs m_tr == m_eps")
        if self.lambda_min < 0:
            raise ValueError("lambda_min must be >= 0")

    @property
    def size(self) -> int:
        return 2 * self.m_eps if self.kind == "single" else 2 * (self.m_tr + self.m_eps)

    def _split(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"theta must have length {self.size}")
        if self.kind == "single":
            m = self.m_eps
            return (theta[:m], theta[m:]), (theta[:m], theta[m:])
        a, b = self.m_tr, self.m_eps
        return (theta[:a], theta[a:2 * a]), (theta[2 * a:2 * a + b], theta[2 * a + b:])

    def unpack(self, theta) -> tuple[SoeKernel, SoeKernel]:
        (wt, st), (we, se) = self._split(theta)
        return (SoeKernel(wt, self.lambda_min + st ** 2), SoeKernel(we, self.lambda_min + se ** 2))

    def pack(self, k_tr: SoeKernel, k_eps: SoeKernel | None = None) -> np.ndarray:
        def part(k):
            if np.any(k.rates < self.lambda_min):
                raise ValueError("rate below lambda_min cannot be represented")
            return np.concatenate([k.weights, np.sqrt(k.rates - self.lambda_min)])
        if self.kind == "single":
            if k_tr.m != self.m_eps:
                raise ValueError("mode count does not match layout")
            return part(k_tr)
        if k_tr.m != self.m_tr or k_eps is None or k_eps.m != self.m_eps:
            raise ValueError("mode counts do not match layout")
        return np.concatenate([part(k_tr), part(k_eps)])

    def chain(self, theta, g_tr, g_eps) -> np.ndarray:
        """(dJ/dw, dJ/dlambda) per kernel -> dJ/dtheta."""
        (_, st), (_, se) = self._split(theta)
        gw_t, gl_t = g_tr
        gw_e, gl_e = g_eps
        if self.kind == "single":
            return np.concatenate([gw_t + gw_e, 2.0 * se * (gl_t + gl_e)])
        return np.concatenate([gw_t, 2.0 * st * gl_t, gw_e, 2.0 * se * gl_e])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "m_tr": self.m_tr, "m_eps": self.m_eps,
                "lambda_min": self.lambda_min,
                "order": ["w_tr", "s_tr", "w_eps", "s_eps"] if self.kind == "two" else ["w", "s"]}


@dataclass
class AdjointResult:
    """Parameter cotangents per coupling and the adjoint acceleration history."""
    grad_w: list
    grad_lam: list
    mu_a: np.ndarray   # (N+1, n); row j pairs with the solve at step j


def adjoint_sweep(solver: NewmarkSOE, traj: TrajectoryRecord, seeds: np.ndarray,
                  keep_history: bool = False) -> AdjointResult:
    """Reverse sweep for a functional with dJ/du^n = seeds[n].

    Needs the memory states stored by the forward run.
    """
    cfg = solver.config
    dt, b, g = cfg.dt, cfg.beta, cfg.gamma
    N = traj.n_steps
    if traj.q is None or len(traj.q) != len(solver.couplings):
        raise ValueError("trajectory lacks the memory states needed by the adjoint")
    if seeds.shape != traj.u.shape:
        raise ValueError("seeds must match the displacement history shape")
    ncp = len(solver.couplings)
    W = [c.kernel.weights for c in solver.couplings]
    co = solver.coef
    gE = [np.zeros_like(w) for w in W]
    ga = [np.zeros_like(w) for w in W]
    gb = [np.zeros_like(w) for w in W]
    gw = [np.zeros_like(w) for w in W]
    Abar = np.zeros(ncp)
    n = traj.u.shape[1]
    ubar = seeds[N].copy()
    vbar = np.zeros(n)
    abar = np.zeros(n)
    qbar = [np.zeros((c.kernel.m, n)) for c in solver.couplings]
    hist = np.zeros((N + 1, n)) if keep_history else None
    for j in range(N, 0, -1):
        v_prev = traj.v[j - 1]
        v_j = traj.v[j]
        vbar_prev = np.zeros(n)
        qbar_prev = []
        for c in range(ncp):
            qp = traj.q[c][j - 1]
            vbar += co[c].alpha @ qbar[c]
            qbar_prev.append(co[c].E[:, None] * qbar[c])
            vbar_prev += co[c].beta @ qbar[c]
            gE[c] += np.einsum("kn,kn->k", qbar[c], qp)
            ga[c] += qbar[c] @ v_j
            gb[c] += qbar[c] @ v_prev
        utbar = ubar
        vtbar = vbar.copy()
        abar = abar + g * dt * vbar + b * dt * dt * ubar
        rbar = solver.solve(abar)
        if keep_history:
            hist[j] = rbar
        utbar = utbar - solver.K @ rbar
        for c, cp in enumerate(solver.couplings):
            z = cp.K @ rbar
            qp = traj.q[c][j - 1]
            w = W[c]
            zq = qp @ z
            zv = float(z @ v_prev)
            qbar_prev[c] -= (w * co[c].E)[:, None] * z[None, :]
            vbar_prev -= float(np.dot(w, co[c].beta)) * z
            vtbar -= solver.A[c] * z
            gw[c] -= co[c].E * zq + co[c].beta * zv
            gE[c] -= w * zq
            gb[c] -= w * zv
            Abar[c] -= float(z @ v_j)
        ubar = utbar + seeds[j - 1]
        vbar = vbar_prev + dt * utbar + vtbar
        abar = dt * dt * (0.5 - b) * utbar + dt * (1.0 - g) * vtbar
        qbar = qbar_prev
    grad_w, grad_lam = [], []
    for c in range(ncp):
        gw[c] += Abar[c] * co[c].alpha
        ga[c] += Abar[c] * W[c]
        grad_w.append(gw[c])
        grad_lam.append(gE[c] * co[c].dE + ga[c] * co[c].dalpha + gb[c] * co[c].dbeta)
    return AdjointResult(grad_w, grad_lam, hist)


def tangent_linear(solver: NewmarkSOE, traj: TrajectoryRecord, dw: list, dlam: list) -> np.ndarray:
    """Forward-mode derivative of the displacement history along (dw, dlam)."""
    cfg = solver.config
    dt, b, g = cfg.dt, cfg.beta, cfg.gamma
    N = traj.n_steps
    n = traj.u.shape[1]
    co = solver.coef
    cps = solver.couplings
    dE = [co[c].dE * dlam[c] for c in range(len(cps))]
    da_ = [co[c].dalpha * dlam[c] for c in range(len(cps))]
    db_ = [co[c].dbeta * dlam[c] for c in range(len(cps))]
    dA = [float(np.dot(dw[c], co[c].alpha) + np.dot(cps[c].kernel.weights, da_[c])) for c in range(len(cps))]
    du = np.zeros(n)
    dv = np.zeros(n)
    da = np.zeros(n)
    dq = [np.zeros((cp.kernel.m, n)) for cp in cps]
    out = np.zeros((N + 1, n))
    for j in range(1, N + 1):
        v_prev, a_prev = traj.v[j - 1], traj.a[j - 1]
        vt = v_prev + dt * (1.0 - g) * a_prev
        dut = du + dt * dv + dt * dt * (0.5 - b) * da
        dvt = dv + dt * (1.0 - g) * da
        dr = -(solver.K @ dut)
        for c, cp in enumerate(cps):
            w = cp.kernel.weights
            qp = traj.q[c][j - 1]
            hist = ((dw[c] * co[c].E + w * dE[c]) @ qp + (w * co[c].E) @ dq[c]
                    + float(np.dot(dw[c], co[c].beta) + np.dot(w, db_[c])) * v_prev
                    + float(np.dot(w, co[c].beta)) * dv
                    + dA[c] * vt + solver.A[c] * dvt)
            dr -= cp.K @ hist
            dr -= g * dt * dA[c] * (cp.K @ traj.a[j])
        da1 = solver.solve(dr)
        du1 = dut + b * dt * dt * da1
        dv1 = dvt + g * dt * da1
        dq = [dE[c][:, None] * traj.q[c][j - 1] + co[c].E[:, None] * dq[c]
              + da_[c][:, None] * traj.v[j] + co[c].alpha[:, None] * dv1
              + db_[c][:, None] * v_prev + co[c].beta[:, None] * dv
              for c in range(len(cps))]
        du, dv, da = du1, dv1, da1
        out[j] = du
    return out


# --- objective ----------------------------------------------------------------

@dataclass(frozen=True)
class Regularization:
    """gamma/2 * int_0^T k(t)^2 dt per kernel (closed form for SOE kernels)."""
    gamma_tr: float = 0.0
    gamma_eps: float = 0.0

    @property
    def active(self) -> bool:
        return self.gamma_tr != 0.0 or self.gamma_eps != 0.0


def l2_sq_and_grad(k: SoeKernel, T: float):
    """int_0^T k^2 dt and its derivatives with respect to w and lambda."""
    w, lam = k.weights, k.rates
    S = lam[:, None] + lam[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.exp(-S * T)
        G = np.where(S > 0, -np.expm1(-S * T) / np.where(S > 0, S, 1.0), T)
        dG = np.where(S > 0, (T * e * S - (1.0 - e)) / np.where(S > 0, S, 1.0) ** 2, -0.5 * T * T)
    val = float(w @ G @ w)
    gw = 2.0 * G @ w
    # d/dlam_i of sum_ij w_i w_j G(lam_i + lam_j) = 2 w_i sum_j w_j dG_ij
    gl = 2.0 * w * (dG @ w)
    return val, gw, gl


@dataclass(eq=False)
class GradientReport:
    grad: np.ndarray
    value: float
    breakdown: dict
    fd_check: dict | None = None

    def to_dict(self) -> dict:
        out = {"objective": self.value, "gradient": self.grad.tolist(), "breakdown": self.breakdown}
        if self.fd_check is not None:
            out["fd_check"] = self.fd_check
        return out


def excitation_weight(problem, exc) -> float:
    """Coefficient c_e with J_e = c_e/2 * dt * sum_n |y_n - m_n|^2."""
    if problem.objective_kind == "single_kernel":
        return exc.weight
    ref = float(np.sum(exc.measurements ** 2)) * problem.config.dt
    if ref == 0:
        raise ValueError("relative misfit needs non-zero measurements")
    return exc.weight / ref


def _solver_for(problem, k_tr, k_eps, exc) -> NewmarkSOE:
    asm = problem.assembly
    couplings = [Coupling(asm.K_trace, k_tr), Coupling(asm.K_eps, k_eps)]
    return NewmarkSOE(asm.M, asm.K_C, couplings, problem.config)


def _run(problem, solver, exc, store_memory=True):
    asm = problem.assembly
    traj = solver.run(lambda t: asm.load_vector(exc.load, t), store_memory=store_memory)
    traj.y = traj.u @ asm.Obs.T
    return traj


def objective_terms(problem, theta, need_grad: bool = True):
    """Evaluate J (and optionally dJ/dtheta). Returns (J, grad|None, breakdown)."""
    layout = problem.layout
    k_tr, k_eps = layout.unpack(theta)
    dt = problem.config.dt
    nm = problem.n_meas
    total = 0.0
    breakdown = {}
    g_tr = [np.zeros(k_tr.m), np.zeros(k_tr.m)]
    g_eps = [np.zeros(k_eps.m), np.zeros(k_eps.m)]
    for exc in problem.excitations:
        solver = _solver_for(problem, k_tr, k_eps, exc)
        traj = _run(problem, solver, exc, store_memory=need_grad)
        c = excitation_weight(problem, exc)
        res = np.zeros_like(traj.y)
        res[: nm + 1] = traj.y[: nm + 1] - exc.measurements[: nm + 1]
        Je = 0.5 * c * dt * float(np.sum(res ** 2))
        breakdown[exc.name] = Je
        total += Je
        if need_grad and nm >= 0 and np.any(res):
            seeds = (c * dt) * (res @ problem.assembly.Obs)
            adj = adjoint_sweep(solver, traj, seeds)
            g_tr[0] += adj.grad_w[0]
            g_tr[1] += adj.grad_lam[0]
            g_eps[0] += adj.grad_w[1]
            g_eps[1] += adj.grad_lam[1]
    reg = problem.regularization
    if reg.active:
        T = problem.config.T_final
        Jr = 0.0
        for gam, k, gk in ((reg.gamma_tr, k_tr, g_tr), (reg.gamma_eps, k_eps, g_eps)):
            if gam == 0.0:
                continue
            val, gw, gl = l2_sq_and_grad(k, T)
            Jr += 0.5 * gam * val
            gk[0] += 0.5 * gam * gw
            gk[1] += 0.5 * gam * gl
        breakdown["regularization"] = Jr
        total += Jr
    grad = layout.chain(theta, g_tr, g_eps) if need_grad else None
    return total, grad, breakdown


def gradient(theta, problem) -> GradientReport:
    J, g, br = objective_terms(problem, theta, need_grad=True)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    return GradientReport(g, J, br)


def observation_jacobian_products(problem, theta, exc, dtheta, r):
    """(<dY, r>, <dtheta, Y^T r>) for the observation map of one excitation,
    via the tangent-linear and adjoint models respectively."""
    layout = problem.layout
    k_tr, k_eps = layout.unpack(theta)
    solver = _solver_for(problem, k_tr, k_eps, exc)
    traj = _run(problem, solver, exc)
    (wt, st), (we, se) = layout._split(theta)
    (dwt, dst), (dwe, dse) = layout._split(dtheta)
    dU = tangent_linear(solver, traj, [dwt, dwe], [2 * st * dst, 2 * se * dse])
    dY = dU @ problem.assembly.Obs.T
    fwd = float(np.sum(dY * r))
    adj = adjoint_sweep(solver, traj, r @ problem.assembly.Obs)
    gth = layout.chain(theta, (adj.grad_w[0], adj.grad_lam[0]), (adj.grad_w[1], adj.grad_lam[1]))
    return fwd, float(gth @ dtheta)


def finite_difference_gradient(fun, theta, rel_step: float = 1e-6, idx=None, order: int = 2):
    """Central differences with h = rel_step * (1 + |theta_i|).

    order=4 and order=6 use the five- and seven-point stencils, which
    tolerate a larger h and so suffer less from round-off in fun.
    """
    if order not in (2, 4, 6):
        raise ValueError("order must be 2, 4 or 6")
    theta = np.asarray(theta, dtype=float)
    idx = range(theta.size) if idx is None else idx
    out = np.zeros(theta.size)

    def at(i, step):
        tp = theta.copy()
        tp[i] += step
        return fun(tp)

    for i in idx:
        h = rel_step * (1.0 + abs(theta[i]))
        c1 = (at(i, h) - at(i, -h)) / (2.0 * h)
        if order == 2:
            out[i] = c1
            continue
        c2 = (at(i, 2 * h) - at(i, -2 * h)) / (4.0 * h)
        if order == 4:
            out[i] = (4.0 * c1 - c2) / 3.0
        else:
            c3 = (at(i, 3 * h) - at(i, -3 * h)) / (6.0 * h)
            out[i] = (15.0 * c1 - 6.0 * c2 + c3) / 10.0
    return out


def gradcheck(problem, theta, rel_step: float = 1e-6, order: int = 2) -> dict:
    """Adjoint gradient vs central differences, coordinate by coordinate."""
    rep = gradient(theta, problem)

    def J(th):
        return objective_terms(problem, th, need_grad=False)[0]

    fd = finite_difference_gradient(J, theta, rel_step, order=order)
    rel = relative_errors(rep.grad, fd)
    return {"analytic": rep.grad, "fd": fd, "rel_error": rel,
            "max_rel_error": float(np.max(rel)), "objective": rep.value,
            "rel_step": rel_step, "order": order}


def relative_errors(g, fd):
    """|g - fd| / max(|g|, |fd|), with exact zeros counting as agreement."""
    den = np.maximum(np.abs(g), np.abs(fd))
    return np.where(den > 0, np.abs(g - fd) / np.where(den > 0, den, 1.0), 0.0)
