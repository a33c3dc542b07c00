"""Viscoelastic beam dynamics with memory kernels, and kernel calibration
from tip observations."""

__version__ = "0.1.0"

from .kernels import FractionalKernel, SampledSignal, SoeKernel
from .rational import RationalLaplace, aaa_fit, reduce_kernels, soe_from_fractional, to_pole_residue
from .fem import BeamAssembly, LoadSpec, MaterialParams, assemble, build_mesh
from .forward import NewmarkSOE, SolverConfig, SolverError, solve_forward
from .adjoint import Regularization, ThetaLayout, gradient
from .calibration import CalibrationProblem, NoiseSpec, lbfgs_minimize, synthesize_measurements
from .optim import OptimizerSettings, lbfgs
from .modal import ModalSystem, recover_kernel_laplace, simulate_mode

__all__ = [
    "FractionalKernel", "SampledSignal", "SoeKernel",
    "RationalLaplace", "aaa_fit", "reduce_kernels", "soe_from_fractional", "to_pole_residue",
    "BeamAssembly", "LoadSpec", "MaterialParams", "assemble", "build_mesh",
    "NewmarkSOE", "SolverConfig", "SolverError", "solve_forward",
    "Regularization", "ThetaLayout", "gradient",
    "CalibrationProblem", "NoiseSpec", "lbfgs_minimize", "synthesize_measurements",
    "OptimizerSettings", "lbfgs",
    "ModalSystem", "recover_kernel_laplace", "simulate_mode",
]
