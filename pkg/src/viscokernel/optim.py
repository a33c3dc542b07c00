"""Limited-memory BFGS with a strong-Wolfe line search (bracket + zoom)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class OptimizerSettings:
    memory: int = 10
    max_iters: int = 14
    c1: float = 1e-4
    c2: float = 0.9
    tol_grad: float = 1e-12
    tol_change: float = 1e-14
    max_ls: int = 25

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.memory < 1 or self.max_iters < 0 or self.max_ls < 1:
            raise ValueError("memory, max_iters and max_ls must be positive")


@dataclass
class OptimizeResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    history: list = field(default_factory=list)        # f at x0 then after each iteration
    grad_norms: list = field(default_factory=list)
    steps: list = field(default_factory=list)          # accepted step lengths
    n_evals: int = 0
    n_iters: int = 0
    status: str = "max_iters"
    line_search_failed: bool = False


def _cubic_min(x1, f1, g1, x2, f2, g2, bounds=None):
    lo, hi = bounds if bounds is not None else (min(x1, x2), max(x1, x2))
    vals = (x1, f1, g1, x2, f2, g2)
    if not all(math.isfinite(v) for v in vals) or x1 == x2:
        return 0.5 * (lo + hi)
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    d2sq = d1 * d1 - g1 * g2
    if d2sq >= 0:
        d2 = math.sqrt(d2sq)
        if x1 <= x2:
            den = g2 - g1 + 2.0 * d2
            pos = x2 - (x2 - x1) * ((g2 + d2 - d1) / den) if den != 0 else 0.5 * (lo + hi)
        else:
            den = g1 - g2 + 2.0 * d2
            pos = x1 - (x1 - x2) * ((g1 + d2 - d1) / den) if den != 0 else 0.5 * (lo + hi)
        if not math.isfinite(pos):
            return 0.5 * (lo + hi)
        return min(max(pos, lo), hi)
    return 0.5 * (lo + hi)


def strong_wolfe(phi, t, f0, g0, gtd0, d, c1=1e-4, c2=0.9, tol_change=1e-9, max_ls=25):
    """phi(t) -> (f, g). Returns (f, g, t, n_evals, satisfied)."""
    d_norm = float(np.max(np.abs(d)))
    f_new, g_new = phi(t)
    evals = 1
    gtd_new = float(g_new @ d) if np.all(np.isfinite(g_new)) else math.nan
    t_prev, f_prev, g_prev, gtd_prev = 0.0, f0, g0, gtd0
    done = False
    it = 0
    bracket = bf = bg = bgtd = None
    while it < max_ls:
        if (not math.isfinite(f_new)) or f_new > f0 + c1 * t * gtd0 or (it > 1 and f_new >= f_prev):
            bracket, bf, bg, bgtd = [t_prev, t], [f_prev, f_new], [g_prev, g_new], [gtd_prev, gtd_new]
            break
        if abs(gtd_new) <= -c2 * gtd0:
            bracket, bf, bg, bgtd = [t], [f_new], [g_new], [gtd_new]
            done = True
            break
        if gtd_new >= 0:
            bracket, bf, bg, bgtd = [t_prev, t], [f_prev, f_new], [g_prev, g_new], [gtd_prev, gtd_new]
            break
        lo, hi = t + 0.01 * (t - t_prev), 10.0 * t
        tmp = t
        t = _cubic_min(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, bounds=(lo, hi))
        t_prev, f_prev, g_prev, gtd_prev = tmp, f_new, g_new, gtd_new
        f_new, g_new = phi(t)
        evals += 1
        gtd_new = float(g_new @ d) if np.all(np.isfinite(g_new)) else math.nan
        it += 1
    if it == max_ls:
        bracket, bf, bg, bgtd = [0.0, t], [f0, f_new], [g0, g_new], [gtd0, gtd_new]

    insuf = False
    low, high = (0, 1) if bf[0] <= bf[-1] else (1, 0)
    while not done and it < max_ls:
        if abs(bracket[1] - bracket[0]) * d_norm < tol_change:
            break
        t = _cubic_min(bracket[0], bf[0], bgtd[0], bracket[1], bf[1], bgtd[1])
        bmax, bmin = max(bracket), min(bracket)
        eps = 0.1 * (bmax - bmin)
        if min(bmax - t, t - bmin) < eps:
            if insuf or t >= bmax or t <= bmin:
                t = bmax - eps if abs(t - bmax) < abs(t - bmin) else bmin + eps
                insuf = False
            else:
                insuf = True
        else:
            insuf = False
        f_new, g_new = phi(t)
        evals += 1
        gtd_new = float(g_new @ d) if np.all(np.isfinite(g_new)) else math.nan
        it += 1
        if (not math.isfinite(f_new)) or f_new > f0 + c1 * t * gtd0 or f_new >= bf[low]:
            bracket[high], bf[high], bg[high], bgtd[high] = t, f_new, g_new, gtd_new
            low, high = (0, 1) if bf[0] <= bf[1] else (1, 0)
        else:
            if abs(gtd_new) <= -c2 * gtd0:
                done = True
            elif gtd_new * (bracket[high] - bracket[low]) >= 0:
                bracket[high], bf[high], bg[high], bgtd[high] = bracket[low], bf[low], bg[low], bgtd[low]
            bracket[low], bf[low], bg[low], bgtd[low] = t, f_new, g_new, gtd_new
    if len(bracket) == 1:
        low = 0
    t, f_new, g_new = bracket[low], bf[low], bg[low]
    ok = (t > 0 and math.isfinite(f_new) and np.all(np.isfinite(g_new))
          and f_new <= f0 + c1 * t * gtd0 and abs(float(g_new @ d)) <= c2 * abs(gtd0))
    return f_new, g_new, t, evals, ok


def lbfgs(fun, x0, settings: OptimizerSettings = OptimizerSettings(), callback=None) -> OptimizeResult:
    """Minimize fun(x) -> (f, g).

    Evaluations that raise ArithmeticError/RuntimeError/ValueError or return
    non-finite values are reported to the line search as f = inf, which
    makes it shrink the step.
    """
    st = settings
    n_evals = 0

    def safe(x):
        nonlocal n_evals
        n_evals += 1
        try:
            f, g = fun(x)
        except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError):
            return math.inf, np.full(x.size, math.nan)
        f = float(f)
        g = np.asarray(g, dtype=float)
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            return math.inf, np.full(x.size, math.nan)
        return f, g

    x = np.array(x0, dtype=float)
    f, g = safe(x)
    if not math.isfinite(f):
        raise FloatingPointError("objective is not finite at the initial point")
    res = OptimizeResult(x.copy(), f, g.copy(), [f], [float(np.linalg.norm(g))])
    if np.max(np.abs(g)) <= st.tol_grad:
        res.status = "gradient_tolerance"
        res.n_evals = n_evals
        return res
    S: list[np.ndarray] = []
    Y: list[np.ndarray] = []
    H_diag = 1.0
    d = -g
    t = 0.0
    g_prev = None
    for it in range(1, st.max_iters + 1):
        if it > 1:
            y = g - g_prev
            s = d * t
            ys = float(y @ s)
            if ys > 1e-12 * float(np.linalg.norm(y) * np.linalg.norm(s)):
                if len(S) == st.memory:
                    S.pop(0)
                    Y.pop(0)
                S.append(s)
                Y.append(y)
                H_diag = ys / float(y @ y)
            q = -g.copy()
            al = [0.0] * len(S)
            for i in range(len(S) - 1, -1, -1):
                rho = 1.0 / float(Y[i] @ S[i])
                al[i] = rho * float(S[i] @ q)
                q -= al[i] * Y[i]
            r = q * H_diag
            for i in range(len(S)):
                rho = 1.0 / float(Y[i] @ S[i])
                be = rho * float(Y[i] @ r)
                r += S[i] * (al[i] - be)
            d = r
        g_prev = g.copy()
        gtd = float(g @ d)
        if gtd >= 0:
            res.status = "not_descent"
            break
        t0 = min(1.0, 1.0 / float(np.sum(np.abs(g)))) if it == 1 else 1.0
        f_new, g_new, t, ev, ok = strong_wolfe(
            lambda tt: safe(x + tt * d), t0, f, g, gtd, d, st.c1, st.c2,
            tol_change=1e-12, max_ls=st.max_ls)
        if not ok:
            res.line_search_failed = True
            res.status = "line_search_failed"
            break
        x = x + t * d
        f_old, f, g = f, f_new, g_new
        res.history.append(f)
        res.grad_norms.append(float(np.linalg.norm(g)))
        res.steps.append(t)
        res.n_iters = it
        res.x, res.f, res.g = x.copy(), f, g.copy()
        if callback is not None:
            callback(it, x, f, g)
        if np.max(np.abs(g)) <= st.tol_grad:
            res.status = "gradient_tolerance"
            break
        if abs(f - f_old) <= st.tol_change * max(abs(f_old), 1e-300):
            res.status = "objective_stalled"
            break
        if np.max(np.abs(t * d)) <= st.tol_change * max(1.0, np.max(np.abs(x))):
            res.status = "step_stalled"
            break
    res.n_evals = n_evals
    return res
