"""Rational Laplace-domain kernel representations.

AAA fitting of real-axis samples, barycentric-to-pole/residue conversion,
SOE construction for fractional kernels, and the Laplace-domain algebra
that reduces the three-kernel constitutive law to two kernels.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.polynomial import polynomial as P

from .kernels import FractionalKernel, SoeKernel

MAX_DEGREE = 64


class RationalError(ValueError):
    """Raised for unusable rational representations (unstable poles,
    complex poles where a real kernel is required, degenerate fits)."""


@dataclass(frozen=True, eq=False)
class RationalLaplace:
    """F(s) = constant + sum_j residues[j] / (s - poles[j])."""

    poles: np.ndarray
    residues: np.ndarray
    constant: float = 0.0

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.poles, dtype=complex)).ravel()
        r = np.atleast_1d(np.asarray(self.residues, dtype=complex)).ravel()
        if p.size != r.size:
            raise ValueError("poles and residues must have equal length")
        object.__setattr__(self, "poles", p)
        object.__setattr__(self, "residues", r)
        object.__setattr__(self, "constant", float(np.real(self.constant)))

    @property
    def degree(self) -> int:
        return self.poles.size

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        if self.poles.size == 0:
            return np.full(s.shape, self.constant, dtype=complex)
        return self.constant + np.sum(self.residues / (s[..., None] - self.poles), axis=-1)

    @classmethod
    def zero(cls) -> "RationalLaplace":
        return cls(np.zeros(0), np.zeros(0), 0.0)

    @classmethod
    def from_soe(cls, k: SoeKernel) -> "RationalLaplace":
        keep = k.weights != 0
        return cls(-k.rates[keep], k.weights[keep], 0.0)

    def to_soe(self, imag_tol: float = 1e-8) -> SoeKernel:
        """Convert to an SOE kernel; needs real, non-positive poles and c = 0."""
        if abs(self.constant) > 0:
            raise RationalError(f"constant term {self.constant} has no SOE counterpart")
        if self.poles.size == 0:
            return SoeKernel.zero()
        re, im = self.poles.real, self.poles.imag
        bad = np.abs(im) > imag_tol * np.maximum(np.abs(re), np.finfo(float).tiny)
        if np.any(bad):
            raise RationalError(f"complex poles {self.poles[bad]} cannot form a real SOE kernel")
        if np.any(re > 0):
            raise RationalError(f"positive poles {re[re > 0]} give growing exponentials")
        return SoeKernel(self.residues.real, np.maximum(-re, 0.0))

    def to_dict(self) -> dict:
        return {
            "poles_re": self.poles.real.tolist(),
            "poles_im": self.poles.imag.tolist(),
            "residues_re": self.residues.real.tolist(),
            "residues_im": self.residues.imag.tolist(),
            "constant": self.constant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RationalLaplace":
        poles = np.asarray(d["poles_re"], float) + 1j * np.asarray(d.get("poles_im", [0.0] * len(d["poles_re"])), float)
        res = np.asarray(d["residues_re"], float) + 1j * np.asarray(d.get("residues_im", [0.0] * len(d["residues_re"])), float)
        return cls(poles, res, d.get("constant", 0.0))


@dataclass(frozen=True, eq=False)
class BarycentricFit:
    """r(s) = sum_j beta_j f_j/(s - z_j) / sum_j beta_j/(s - z_j)."""

    support: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    error: float

    @property
    def degree(self) -> int:
        return self.support.size - 1

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        z, f, b = self.support, self.values, self.weights
        with np.errstate(divide="ignore", invalid="ignore"):
            C = 1.0 / (s[..., None] - z)
            r = (C @ (b * f)) / (C @ b)
        # exact hits on support points
        hit = np.isclose(s[..., None], z, rtol=0, atol=0)
        if np.any(hit):
            idx = np.nonzero(hit)
            r = np.array(r, copy=True)
            r[idx[:-1]] = f[idx[-1]]
        return r


def aaa_fit(points, values, tol: float = 1e-12, max_degree: int = 100,
            relative: bool = True, proper: bool = False) -> BarycentricFit:
    """Greedy AAA rational approximation of real-axis samples.

    With ``relative=True`` the residual and the Loewner least-squares rows are
    scaled by 1/|F|, so ``tol`` bounds the pointwise relative error; otherwise
    errors are measured relative to max|F|.  ``max_degree`` caps the number of
    poles (support points minus one).

    ``proper=True`` restricts the weights to sum(beta*f) = 0, which forces
    r(inf) = 0.  Kernel transforms vanish at infinity, and without the
    constraint the fit parks part of the small-s mass in a constant.
    """
    z = np.asarray(points, dtype=float).ravel()
    f = np.asarray(values).ravel()
    f = f.astype(complex if np.iscomplexobj(f) else float)
    if z.size != f.size:
        raise ValueError("points and values must have equal length")
    if np.unique(z).size < 2 or np.any(z <= 0) or not np.all(np.isfinite(z)):
        raise ValueError("need at least two distinct positive finite sample points")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not np.all(np.isfinite(f)):
        raise ValueError("sample values must be finite")
    if relative:
        if np.any(f == 0):
            raise ValueError("relative AAA needs non-zero sample values")
        scale = 1.0 / np.abs(f)
    else:
        fmax = np.max(np.abs(f))
        scale = np.full(z.size, 1.0 / fmax if fmax > 0 else 1.0)

    mask = np.ones(z.size, dtype=bool)
    r = np.full(z.size, np.mean(f), dtype=f.dtype)
    sup: list[int] = []
    weights = np.ones(1, dtype=f.dtype)
    err = math.inf
    for _ in range(min(max_degree, z.size - 1) + 1):
        j = int(np.argmax(np.where(mask, np.abs(f - r) * scale, -1.0)))
        sup.append(j)
        mask[j] = False
        zs, fs = z[sup], f[sup]
        if len(sup) == 1:
            weights = np.ones(1, dtype=f.dtype)
            r = np.full(z.size, fs[0], dtype=f.dtype)
        else:
            C = 1.0 / (z[mask, None] - zs[None, :])
            A = (scale[mask, None] * (f[mask, None] * C - C * fs[None, :]))
            try:
                if proper:
                    Q = _row_null_space(fs.conj())
                    _, _, vh = np.linalg.svd(A @ Q, full_matrices=False)
                    weights = Q @ vh[-1].conj()
                else:
                    _, _, vh = np.linalg.svd(A, full_matrices=False)
                    weights = vh[-1].conj()
            except np.linalg.LinAlgError as exc:
                raise RationalError(f"SVD failed in AAA step {len(sup)}") from exc
            r = f.copy()
            r[mask] = (C @ (weights * fs)) / (C @ weights)
        err = float(np.max(np.abs(f - r) * scale))
        if err <= tol or not mask.any():
            break
    if np.all(weights == 0):
        raise RationalError("AAA produced all-zero barycentric weights")
    return BarycentricFit(z[sup].copy(), f[sup].copy(), weights, err)


def _row_null_space(a: np.ndarray) -> np.ndarray:
    """Orthonormal basis of {x : a @ x = 0} built from pivoted elimination,
    which keeps small components accurate when |a| spans many decades."""
    p = int(np.argmax(np.abs(a)))
    others = [j for j in range(a.size) if j != p]
    N = np.zeros((a.size, a.size - 1), dtype=a.dtype)
    for c, j in enumerate(others):
        N[j, c] = 1.0
        N[p, c] = -a[j] / a[p]
    Q, _ = np.linalg.qr(N)
    return Q


def to_pole_residue(fit: BarycentricFit, stability_tol: float = 1e-10,
                    polish: bool = True) -> RationalLaplace:
    """Poles from the arrow-pencil eigenproblem, residues from the barycentric limit.

    Poles clustered near the origin make the limit formula lose a few digits.
    With ``polish`` the residues and constant are then refined by a relative
    least-squares match to the barycentric form itself on a log grid over the
    support range; the refined set is kept only if it reconstructs better.
    """
    z, f, b = fit.support, fit.values, fit.weights
    m = z.size
    if m == 1:
        return RationalLaplace(np.zeros(0), np.zeros(0), float(np.real(f[0])))
    if abs(np.sum(b)) < 1e-14 * np.sum(np.abs(b)):
        raise RationalError("barycentric form has no finite limit at infinity")
    dtype = b.dtype
    # diagonal balancing: |b_j| spans many decades on log-spaced data
    ab = np.abs(b)
    d = np.where(ab > 0, 1.0 / np.sqrt(np.where(ab > 0, ab, 1.0)), 1.0)
    E = np.zeros((m + 1, m + 1), dtype=dtype)
    E[0, 1:] = b * d
    E[1:, 0] = 1.0 / d
    E[1:, 1:] = np.diag(z)
    B = np.eye(m + 1, dtype=dtype)
    B[0, 0] = 0.0
    try:
        ev = scipy.linalg.eigvals(E, B)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RationalError("generalized eigenvalue solve failed") from exc
    poles = ev[np.isfinite(ev)]
    # real data: snap numerically-real poles onto the axis
    snap = np.abs(poles.imag) <= 1e-12 * np.maximum(np.abs(poles), 1.0)
    poles = np.where(snap, poles.real + 0j, poles)
    zscale = max(1.0, float(np.max(np.abs(z))))
    if np.any(poles.real > stability_tol * zscale):
        raise RationalError(f"unstable pole(s) {poles[poles.real > stability_tol * zscale]}")
    # residue = N(p) / D'(p)
    C = 1.0 / (poles[:, None] - z[None, :])
    num = C @ (b * f)
    dden = -(C ** 2) @ b
    residues = num / dden
    constant = float(np.real(np.sum(b * f) / np.sum(b)))
    out = RationalLaplace(poles, residues, constant)
    if polish and np.all(poles.imag == 0) and np.isrealobj(f):
        out = _polish_residues(fit, out)
    return out


def _polish_residues(fit: BarycentricFit, rl: RationalLaplace) -> RationalLaplace:
    z = fit.support
    lo, hi = float(z.min()), float(z.max())
    g = np.logspace(math.log10(lo), math.log10(hi), 8 * z.size) if hi > lo else z.copy()
    g = g[np.min(np.abs(g[:, None] - rl.poles.real[None, :]), axis=1) > 1e-12 * np.maximum(g, 1.0)]
    target = fit(g).real
    if g.size <= rl.degree + 1 or np.any(target == 0) or not np.all(np.isfinite(target)):
        return rl
    wts = 1.0 / np.abs(target)
    A = np.hstack([1.0 / (g[:, None] - rl.poles.real[None, :]), np.ones((g.size, 1))])
    x, *_ = np.linalg.lstsq(A * wts[:, None], target * wts, rcond=None)
    cand = RationalLaplace(rl.poles, x[:-1], float(x[-1]))
    e_old = np.max(np.abs(rl(g).real - target) * wts)
    e_new = np.max(np.abs(cand(g).real - target) * wts)
    return cand if e_new < e_old else rl


def fractional_samples(alpha: float, s_range=(1e-3, 1e3), n_samples: int = 400):
    s = np.logspace(math.log10(s_range[0]), math.log10(s_range[1]), n_samples)
    return s, s ** (-alpha)


def _refit_residues(poles: np.ndarray, s: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Relative least-squares residues for fixed real poles, zero constant."""
    A = 1.0 / (s[:, None] - poles[None, :])
    wts = 1.0 / np.abs(F)
    res, *_ = np.linalg.lstsq(A * wts[:, None], F * wts, rcond=None)
    return res


def soe_from_fractional(alpha: float, s_range=(1e-3, 1e3), n_samples: int = 400,
                        tol: float = 1e-13, max_modes: int = 22,
                        s_pad: float = 3.0) -> SoeKernel:
    """SOE surrogate of g_alpha from a strictly proper AAA fit of s**(-alpha).

    Samples run over [s_min, s_pad*s_max]: the small-t end of the time window
    [1/s_max, 1/s_min] is governed by the transform just beyond s_max.
    The AAA pole set is kept; residues are refitted with zero constant term,
    since a constant in the Laplace domain is a Dirac mass in time.
    """
    if not (0 < alpha <= 1):
        raise ValueError("alpha must lie in (0, 1]")
    if s_pad < 1:
        raise ValueError("s_pad must be >= 1")
    s, F = fractional_samples(alpha, (s_range[0], s_pad * s_range[1]), n_samples)
    fit = aaa_fit(s, F, tol=tol, max_degree=max_modes, proper=True)
    rl = to_pole_residue(fit, polish=False)
    poles = rl.poles
    if poles.size == 0:
        raise RationalError("fit produced no poles")
    bad = np.abs(poles.imag) > 1e-8 * np.abs(poles.real)
    if np.any(bad):
        raise RationalError(f"complex poles {poles[bad]} in fractional fit")
    # a pole at the origin (alpha = 1) may land a rounding error to the right
    zero_tol = 1e-10 * s_range[0]
    if np.any(poles.real > zero_tol):
        raise RationalError("positive pole in fractional fit")
    lam = -poles.real
    lam[np.abs(lam) <= zero_tol] = 0.0
    res = _refit_residues(-lam, s, F)
    # drop modes the refit switched off exactly
    keep = res != 0
    order = np.argsort(lam[keep])
    return SoeKernel(res[keep][order], lam[keep][order])


def laplace_relative_error(k: SoeKernel, alpha: float, s_range=(1e-3, 1e3),
                           n_samples: int = 400) -> float:
    s, F = fractional_samples(alpha, s_range, n_samples)
    return float(np.max(np.abs(k.laplace(s) - F) / np.abs(F)))


def time_relative_error(k: SoeKernel, alpha: float, t_range, n_points: int = 400) -> float:
    """Max relative deviation from g_alpha on log-spaced points of t_range."""
    t = np.logspace(math.log10(t_range[0]), math.log10(t_range[1]), n_points)
    g = FractionalKernel(alpha)(t)
    return float(np.max(np.abs(k(t) - g) / np.abs(g)))


# --- kernel reduction -------------------------------------------------------

def _as_polys(F: RationalLaplace):
    """Numerator and denominator coefficient vectors (ascending powers)."""
    den = P.polyfromroots(F.poles) if F.degree else np.array([1.0 + 0j])
    num = F.constant * den
    for j in range(F.degree):
        others = np.delete(F.poles, j)
        term = F.residues[j] * (P.polyfromroots(others) if others.size else np.array([1.0 + 0j]))
        num = P.polyadd(num, term)
    return np.atleast_1d(num).astype(complex), np.atleast_1d(den).astype(complex)


def _trim(c: np.ndarray, tol: float) -> np.ndarray:
    c = np.atleast_1d(c)
    scale = np.max(np.abs(c)) if c.size else 0.0
    if scale == 0:
        return np.zeros(1, dtype=complex)
    n = c.size
    while n > 1 and abs(c[n - 1]) <= tol * scale:
        n -= 1
    return c[:n]


def _rational_from_polys(num: np.ndarray, den: np.ndarray, tol: float = 1e-12) -> RationalLaplace:
    """Pole/residue form of num/den with cancellation of common roots."""
    den = _trim(den, 1e-15)
    if num.size == 0 or np.max(np.abs(num)) == 0:
        return RationalLaplace.zero()
    num = _trim(num, 1e-15)
    if den.size - 1 > MAX_DEGREE or num.size - 1 > MAX_DEGREE:
        raise RationalError(f"degree exceeds cap {MAX_DEGREE}")
    if num.size > den.size:
        raise RationalError("improper rational function (not a kernel transform)")
    roots = P.polyroots(den) if den.size > 1 else np.zeros(0, dtype=complex)
    lead = den[-1]
    # cancel common roots (polynomial GCD cleanup)
    kept = []
    nscale = np.sum(np.abs(num)) * np.max(np.abs(roots) + 1.0) ** (num.size - 1) if roots.size else 1.0
    for p in roots:
        if abs(P.polyval(p, num)) <= tol * nscale:
            num, rem = P.polydiv(num, np.array([-p, 1.0]))
            num = np.atleast_1d(num)
        else:
            kept.append(p)
    poles = np.array(kept, dtype=complex)
    constant = 0.0
    if num.size == poles.size + 1:
        constant = num[-1] / lead
        num = P.polysub(num, constant * lead * (P.polyfromroots(poles) if poles.size else np.array([1.0])))
        num = np.atleast_1d(num)[: max(poles.size, 1)]
    residues = np.empty(poles.size, dtype=complex)
    for j, p in enumerate(poles):
        others = np.delete(poles, j)
        residues[j] = P.polyval(p, num) / (lead * np.prod(p - others))
    # conjugate-pair cleanup for real data
    snap = np.abs(poles.imag) <= 1e-10 * np.maximum(np.abs(poles), 1.0)
    poles = np.where(snap, poles.real + 0j, poles)
    residues = np.where(snap, residues.real + 0j, residues)
    return RationalLaplace(poles, residues, float(np.real(constant)))


def _combine(num_terms, den_terms):
    """sum of products of polynomial factors"""
    out = np.zeros(1, dtype=complex)
    for coef, factors in num_terms:
        prod = np.array([coef], dtype=complex)
        for f in factors:
            prod = P.polymul(prod, f)
        out = P.polyadd(out, prod)
    return out


def _check_model1_denominator(k_sigma: RationalLaplace):
    """1 + s L k_sigma(s) must not vanish in the closed right half-plane."""
    Ns, Ds = _as_polys(k_sigma)
    poly = P.polyadd(Ds, P.polymul(np.array([0.0, 1.0]), Ns))
    poly = _trim(poly, 1e-15)
    if poly.size <= 1:
        return
    for r in P.polyroots(poly):
        if r.real >= -1e-12 * max(1.0, abs(r)):
            # genuine zero unless it is cancelled by a pole of k_sigma
            if np.min(np.abs(k_sigma.poles - r), initial=np.inf) <= 1e-9 * max(1.0, abs(r)):
                continue
            val = 1.0 + r * k_sigma(r)
            if abs(val) < 1e-8:
                raise RationalError(f"1 + s*L k_sigma vanishes at s={r} (right half-plane)")


def _reduce_one(k_num: RationalLaplace, coef: float, k_sigma: RationalLaplace) -> RationalLaplace:
    """ILT[(L k_num - coef L k_sigma) / (1 + s L k_sigma)] in pole/residue form."""
    N1, D1 = _as_polys(k_num)
    Ns, Ds = _as_polys(k_sigma)
    s = np.array([0.0, 1.0])
    num = _combine([(1.0, [N1, Ds]), (-coef, [Ns, D1])], None)
    den = P.polymul(D1, P.polyadd(Ds, P.polymul(s, Ns)))
    ref = np.sum(np.abs(P.polymul(N1, Ds))) + abs(coef) * np.sum(np.abs(P.polymul(Ns, D1)))
    if ref == 0 or np.max(np.abs(num)) <= 1e-13 * ref:
        return RationalLaplace.zero()
    out = _rational_from_polys(num, den)
    zscale = max(1.0, float(np.max(np.abs(out.poles)))) if out.degree else 1.0
    if np.any(out.poles.real > 1e-10 * zscale):
        raise RationalError(f"reduced kernel has unstable poles {out.poles[out.poles.real > 0]}")
    cond = reduction_condition(out)
    if cond > 1e12:
        raise RationalError(f"reduced kernel residues are ill-conditioned (estimate {cond:.3g})")
    if cond > 1e8:
        warnings.warn(f"reduced kernel residues poorly conditioned (estimate {cond:.3g})")
    return out


def reduction_condition(F: RationalLaplace, s_range=(1e-2, 1e2)) -> float:
    """Ratio of summed residue magnitudes to the size of F on the real axis;
    large values flag cancellation between nearly coincident poles."""
    if F.degree == 0:
        return 1.0
    s = np.logspace(math.log10(s_range[0]), math.log10(s_range[1]), 200)
    terms = np.abs(F.residues[None, :] / (s[:, None] - F.poles[None, :]))
    size = np.abs(F(s))
    return float(np.max(np.sum(terms, axis=1) / np.maximum(size, 1e-300)))


def reduce_kernels(k_sigma: RationalLaplace, k_eps: RationalLaplace, k_treps: RationalLaplace,
                   mu: float, lam: float, d: int = 3, viscous: str = "identity"):
    """Three-kernel (k_sigma, k_eps, k_treps) -> two-kernel form.

    Returns transforms of

        k_eps2   = ILT[(L k_eps   - 2 mu  L k_sigma) / (1 + s L k_sigma)]
        k_treps2 = ILT[(L k_treps - c_tr  L k_sigma) / (1 + s L k_sigma)]

    with c_tr = lam when the viscous strain operator is the identity, and
    c_tr = lam + 2 mu / d when it is the deviatoric projector.
    """
    if viscous not in ("identity", "deviatoric"):
        raise ValueError("viscous must be 'identity' or 'deviatoric'")
    if k_sigma.degree == 0 and k_sigma.constant == 0:
        return k_eps, k_treps
    if k_sigma.constant != 0:
        raise RationalError("k_sigma with a constant Laplace term is not a kernel")
    _check_model1_denominator(k_sigma)
    c_tr = lam if viscous == "identity" else lam + 2.0 * mu / d
    return (_reduce_one(k_eps, 2.0 * mu, k_sigma), _reduce_one(k_treps, c_tr, k_sigma))


def reduce_four_to_three(k_sigma: RationalLaplace, k_trsigma: RationalLaplace,
                         k_eps: RationalLaplace, k_treps: RationalLaplace,
                         mu: float, lam: float, d: int = 3,
                         viscous: str = "deviatoric") -> RationalLaplace:
    """Trace kernel k_treps^(1) of the three-kernel form from the four-kernel law.

    For a deviatoric viscous operator:
        L k1 = [(2mu + d lam)(K_s - K_trs) + K_tre (1 + s K_s)] / (d (1 + s K_trs)).
    For the identity operator an extra -K_e (1 + s K_trs) enters the bracket.
    """
    if viscous not in ("identity", "deviatoric"):
        raise ValueError("viscous must be 'identity' or 'deviatoric'")
    Ns, Ds = _as_polys(k_sigma)
    Nt, Dt = _as_polys(k_trsigma)
    Ne, De = _as_polys(k_eps)
    Nte, Dte = _as_polys(k_treps)
    s = np.array([0.0, 1.0])
    bulk = 2.0 * mu + d * lam
    # common denominator Ds*Dt*Dte*De for the bracket
    terms = [
        (bulk, [Ns, Dt, Dte, De]),
        (-bulk, [Nt, Ds, Dte, De]),
        (1.0, [Nte, P.polyadd(Ds, P.polymul(s, Ns)), Dt, De]),
    ]
    if viscous == "identity":
        terms.append((-1.0, [Ne, P.polyadd(Dt, P.polymul(s, Nt)), Ds, Dte]))
    num = _combine(terms, None)
    den = d * P.polymul(P.polymul(P.polymul(Ds, Dte), De), P.polyadd(Dt, P.polymul(s, Nt)))
    if np.max(np.abs(num)) == 0:
        return RationalLaplace.zero()
    return _rational_from_polys(num, den)


def reduction_residual(k_sigma: RationalLaplace, k_eps: RationalLaplace, k_treps: RationalLaplace,
                       k_eps2: RationalLaplace, k_treps2: RationalLaplace, mu: float, lam: float,
                       s, d: int = 3, viscous: str = "identity") -> float:
    """Largest relative deviation of the reduced transforms from
    (L k - c L k_sigma) / (1 + s L k_sigma) at the points s."""
    s = np.asarray(s, dtype=float)
    c_tr = lam if viscous == "identity" else lam + 2.0 * mu / d
    den = 1.0 + s * k_sigma(s)
    worst = 0.0
    for k, k2, c in ((k_eps, k_eps2, 2.0 * mu), (k_treps, k_treps2, c_tr)):
        ref = (k(s) - c * k_sigma(s)) / den
        scale = np.maximum(np.abs(ref), 1e-300)
        worst = max(worst, float(np.max(np.abs(k2(s) - ref) / scale)))
    return worst
