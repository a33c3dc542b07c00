"""Kernel calibration from noisy tip observations.

Measurements are synthesized by a forward run with the truth kernels, cut
to [0, t_meas] and perturbed by seeded Gaussian noise.  The objective is
minimized by LBFGS with a strong-Wolfe line search.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import Regularization, ThetaLayout, objective_terms
from .fem import BeamAssembly, LoadSpec, MaterialParams, assemble, build_mesh
from .forward import SolverConfig, solve_forward
from .kernels import FractionalKernel, SoeKernel, l1_distance
from .optim import OptimizerSettings, lbfgs
from .rational import soe_from_fractional

OMEGA_DEFAULT = 10.0
INITIAL_S_RANGE = (0.1, 100.0)
# LBFGS defaults to 14 iterations; the experiments need a longer horizon
PROTOCOL_SETTINGS = OptimizerSettings(max_iters=100)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise with std = level * max_t |component|."""
    level: float = 0.0
    seed: int = 0
    kind: str = "gaussian_max"

    def __post_init__(self):
        if not self.level >= 0:
            raise ValueError("noise level must be >= 0")
        if self.kind != "gaussian_max":
            raise ValueError(f"unsupported noise kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"level": self.level, "seed": self.seed, "kind": self.kind}


@dataclass(eq=False)
class Excitation:
    name: str
    load: LoadSpec
    weight: float = 1.0
    measurements: np.ndarray | None = None   # (n_meas + 1, 3)
    clean: np.ndarray | None = None          # full noise-free series, if synthesized


@dataclass(eq=False)
class CalibrationProblem:
    assembly: BeamAssembly
    config: SolverConfig
    excitations: list
    objective_kind: str = "single_kernel"
    t_meas: float = 2.0
    layout: ThetaLayout = field(default_factory=lambda: ThetaLayout("single"))
    regularization: Regularization = field(default_factory=Regularization)

    def __post_init__(self):
        if self.objective_kind not in ("single_kernel", "two_kernel"):
            raise ValueError("objective_kind must be 'single_kernel' or 'two_kernel'")
        if not 0 <= self.t_meas <= self.config.T_final * (1 + 1e-12):
            raise ValueError("t_meas must lie in [0, T_final]")
        if not self.excitations:
            raise ValueError("at least one excitation is required")

    @property
    def n_meas(self) -> int:
        return int(round(self.t_meas / self.config.dt))

    def check_measurements(self):
        for exc in self.excitations:
            if exc.measurements is None:
                raise ValueError(f"excitation {exc.name!r} has no measurements")
            if exc.measurements.shape != (self.n_meas + 1, 3):
                raise ValueError(f"measurements for {exc.name!r} must have shape "
                                 f"({self.n_meas + 1}, 3) on the solver grid")


@dataclass(eq=False)
class CalibrationResult:
    theta: np.ndarray
    k_tr: SoeKernel
    k_eps: SoeKernel
    loss_history: list
    grad_norms: list
    status: str
    line_search_failed: bool
    n_evals: int
    l1_error: dict = field(default_factory=dict)
    prediction: dict = field(default_factory=dict)        # name -> (N+1, 3)
    prediction_error: dict = field(default_factory=dict)  # name -> rel l2 of |y| on (t_meas, T]
    metadata: dict = field(default_factory=dict)

    @property
    def n_iters(self) -> int:
        return len(self.loss_history) - 1

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "kernels": {"trace": self.k_tr.to_dict(), "deviatoric": self.k_eps.to_dict()},
            "loss_history": list(self.loss_history),
            "grad_norms": list(self.grad_norms),
            "status": self.status,
            "line_search_failed": self.line_search_failed,
            "n_evals": self.n_evals,
            "l1_error": dict(self.l1_error),
            "prediction_error": dict(self.prediction_error),
            "metadata": self.metadata,
        }


def add_noise(signal: np.ndarray, noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    if noise.level == 0:
        return signal.copy()
    scale = noise.level * np.max(np.abs(signal), axis=0)
    return signal + rng.standard_normal(signal.shape) * scale


def synthesize_measurements(problem: CalibrationProblem, k_tr: SoeKernel, k_eps: SoeKernel,
                            noise: NoiseSpec) -> CalibrationProblem:
    """Fill every excitation with noisy data on [0, t_meas]; returns the problem."""
    rng = np.random.default_rng(noise.seed)
    nm = problem.n_meas
    for exc in problem.excitations:
        traj, _ = solve_forward(problem.assembly, k_eps, k_tr, exc.load, problem.config,
                                store_memory=False)
        exc.clean = traj.y.copy()
        exc.measurements = add_noise(traj.y[: nm + 1], noise, rng)
    return problem


def evaluate_objective(theta, problem: CalibrationProblem):
    J, _, breakdown = objective_terms(problem, theta, need_grad=False)
    return J, breakdown


def kernel_l1_error(pred, truth, dt: float, t_meas: float, n_points: int = 2001) -> float:
    return l1_distance(pred, truth, dt, t_meas, n_points)


def predict(problem: CalibrationProblem, k_tr: SoeKernel, k_eps: SoeKernel) -> dict:
    out = {}
    for exc in problem.excitations:
        traj, _ = solve_forward(problem.assembly, k_eps, k_tr, exc.load, problem.config,
                                store_memory=False)
        out[exc.name] = traj.y
    return out


def prediction_error(pred: np.ndarray, clean: np.ndarray, n_meas: int) -> float:
    """Relative l2 error of the tip displacement norm |y(t)| after the
    measurement window."""
    a = np.linalg.norm(pred[n_meas + 1:], axis=1)
    b = np.linalg.norm(clean[n_meas + 1:], axis=1)
    ref = np.linalg.norm(b)
    d = np.linalg.norm(a - b)
    return float(d / ref) if ref > 0 else float(d)


def lbfgs_minimize(problem: CalibrationProblem, theta0, settings: OptimizerSettings = OptimizerSettings(),
                   truth: tuple | None = None, callback=None) -> CalibrationResult:
    """truth: optional (k_tr, k_eps) used for the L1 kernel errors."""
    problem.check_measurements()

    def fun(th):
        J, g, _ = objective_terms(problem, th, need_grad=True)
        return J, g

    opt = lbfgs(fun, np.asarray(theta0, dtype=float), settings, callback)
    k_tr, k_eps = problem.layout.unpack(opt.x)
    res = CalibrationResult(opt.x, k_tr, k_eps, opt.history, opt.grad_norms, opt.status,
                            opt.line_search_failed, opt.n_evals)
    dt = problem.config.dt
    if truth is not None:
        t_tr, t_eps = truth
        if problem.layout.kind == "single":
            res.l1_error["kernel"] = kernel_l1_error(k_eps, t_eps, dt, problem.t_meas)
        else:
            res.l1_error["trace"] = kernel_l1_error(k_tr, t_tr, dt, problem.t_meas)
            res.l1_error["deviatoric"] = kernel_l1_error(k_eps, t_eps, dt, problem.t_meas)
    res.prediction = predict(problem, k_tr, k_eps)
    for exc in problem.excitations:
        if exc.clean is not None and problem.n_meas < problem.config.n_steps:
            res.prediction_error[exc.name] = prediction_error(
                res.prediction[exc.name], exc.clean, problem.n_meas)
    res.metadata = {
        "objective_kind": problem.objective_kind,
        "t_meas": problem.t_meas,
        "n_meas": problem.n_meas,
        "layout": problem.layout.to_dict(),
        "noise_scaling": "level * max_t |component| on [0, t_meas]",
        "objective_scaling": "0.5 * c_e * dt * sum_n |y_n - m_n|^2",
    }
    return res


# --- experiment protocols ---------------------------------------------------

def truth_kernel(alpha: float = 0.7, modes: int = 22) -> SoeKernel:
    return soe_from_fractional(alpha, max_modes=modes)


def initial_guess(alpha: float = 0.5, modes: int = 8) -> SoeKernel:
    return soe_from_fractional(alpha, s_range=INITIAL_S_RANGE, max_modes=modes)


@dataclass(frozen=True)
class ExperimentSetup:
    Lx: float = 1.0
    Ly: float = 0.1
    Lz: float = 0.04
    nx: int = 12
    ny: int = 2
    nz: int = 1
    material: MaterialParams = MaterialParams()
    solver: SolverConfig = SolverConfig()
    t_meas: float = 2.0
    t_load: float = 0.8
    B0: float = 1.0
    T0: float = 100.0
    omega: float = OMEGA_DEFAULT

    def assembly(self) -> BeamAssembly:
        mesh = build_mesh(self.Lx, self.Ly, self.Lz, self.nx, self.ny, self.nz)
        return assemble(mesh, self.material)


def single_kernel_problem(setup: ExperimentSetup, noise: NoiseSpec, truth: SoeKernel,
                          m: int, asm: BeamAssembly | None = None) -> CalibrationProblem:
    asm = asm if asm is not None else setup.assembly()
    exc = Excitation("bending", LoadSpec("bending", setup.B0, setup.t_load), 1.0)
    prob = CalibrationProblem(asm, setup.solver, [exc], "single_kernel", setup.t_meas,
                              ThetaLayout("single", m, m))
    return synthesize_measurements(prob, truth, truth, noise)


def two_kernel_problem(setup: ExperimentSetup, noise: NoiseSpec, truth_tr: SoeKernel,
                       truth_eps: SoeKernel, m_tr: int, m_eps: int,
                       asm: BeamAssembly | None = None) -> CalibrationProblem:
    asm = asm if asm is not None else setup.assembly()
    excs = [Excitation("bending", LoadSpec("bending", setup.B0, setup.t_load), 1.0),
            Excitation("extension", LoadSpec("extension", setup.T0, setup.t_load), setup.omega)]
    prob = CalibrationProblem(asm, setup.solver, excs, "two_kernel", setup.t_meas,
                              ThetaLayout("two", m_tr, m_eps))
    return synthesize_measurements(prob, truth_tr, truth_eps, noise)


def single_kernel_experiment(setup: ExperimentSetup = ExperimentSetup(), noise: NoiseSpec = NoiseSpec(0.02, 0),
                             settings: OptimizerSettings = PROTOCOL_SETTINGS,
                             truth: SoeKernel | None = None, init: SoeKernel | None = None) -> CalibrationResult:
    truth = truth if truth is not None else truth_kernel(0.7)
    init = init if init is not None else initial_guess()
    prob = single_kernel_problem(setup, noise, truth, init.m)
    res = lbfgs_minimize(prob, prob.layout.pack(init), settings, truth=(truth, truth))
    res.metadata["noise"] = noise.to_dict()
    return res


def two_kernel_experiment(setup: ExperimentSetup = ExperimentSetup(), noise: NoiseSpec = NoiseSpec(0.02, 0),
                          settings: OptimizerSettings = PROTOCOL_SETTINGS,
                          alpha_tr: float = 0.9, alpha_eps: float = 0.7) -> CalibrationResult:
    t_tr, t_eps = truth_kernel(alpha_tr), truth_kernel(alpha_eps)
    init = initial_guess()
    prob = two_kernel_problem(setup, noise, t_tr, t_eps, init.m, init.m)
    res = lbfgs_minimize(prob, prob.layout.pack(init, init), settings, truth=(t_tr, t_eps))
    res.metadata["noise"] = noise.to_dict()
    res.metadata["omega"] = setup.omega
    return res


def fractional_truth(alpha: float) -> FractionalKernel:
    return FractionalKernel(alpha)
