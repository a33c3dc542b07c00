"""Command-line entry point.

Exit codes: 0 all outputs written and checks passed, 1 outputs written but
a check failed, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import Regularization, ThetaLayout, gradcheck
from .calibration import (CalibrationProblem, Excitation, NoiseSpec, lbfgs_minimize,
                          synthesize_measurements)
from .checks import property_suite
from .fem import LoadSpec, MaterialParams, assemble, build_mesh
from .forward import SolverConfig, SolverError, solve_forward
from .io import (ConfigError, RunConfig, dump_json, kernel_from_spec, rational_from_spec,
                 read_csv, write_csv)
from .modal import ModalSystem, recover_kernel_laplace, simulate_mode, smooth_pulse
from .optim import OptimizerSettings
from .rational import (RationalError, laplace_relative_error, reduce_kernels,
                       reduction_residual, soe_from_fractional, time_relative_error)


def _assembly(cfg: RunConfig):
    g, m = cfg.geometry, cfg.material
    mesh = build_mesh(g.Lx, g.Ly, g.Lz, g.nx, g.ny, g.nz)
    return assemble(mesh, MaterialParams(m.E, m.nu, m.rho))


def _solver(cfg: RunConfig) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(s.T, s.n_steps, s.beta, s.gamma)


def _truths(cfg: RunConfig):
    k_eps = kernel_from_spec(cfg.kernels.truth_eps, "config.kernels.truth_eps", cfg.base_dir)
    if cfg.kernels.truth_tr is None:
        return k_eps, k_eps
    return kernel_from_spec(cfg.kernels.truth_tr, "config.kernels.truth_tr", cfg.base_dir), k_eps


# --- commands --------------------------------------------------------------------

def _load_axis(kind: str) -> int:
    return 1 if kind == "bending" else 0


def cmd_forward(cfg: RunConfig, out: Path) -> bool:
    asm = _assembly(cfg)
    k_tr, k_eps = _truths(cfg)
    ld = cfg.load
    traj, en = solve_forward(asm, k_eps, k_tr, LoadSpec(ld.kind, ld.magnitude, ld.t_load), _solver(cfg),
                             store_memory=False)
    write_csv(out / "tip.csv", ["t", "y1", "y2", "y3"], [traj.t, *traj.y.T])
    write_csv(out / "energy.csv", ["t", "kinetic", "elastic", "total", "memory", "stored"],
              [en.t, en.kinetic, en.elastic, en.total, en.memory, en.stored])
    ok = bool(np.all(np.isfinite(traj.y)) and np.all(en.total >= 0))
    i = int(np.argmax(np.abs(traj.y[:, _load_axis(ld.kind)])))
    dump_json({"command": "forward", "passed": ok, "n_dof": asm.n_dof,
               "peak": {"t": traj.t[i], "value": traj.y[i, _load_axis(ld.kind)]},
               "config": cfg.to_dict()}, out / "summary.json")
    return ok


def _problem(cfg: RunConfig, asm, layout_kind: str, m_tr: int, m_eps: int) -> CalibrationProblem:
    inv, ld = cfg.inverse, cfg.load
    excs = [Excitation("bending", LoadSpec("bending", ld.magnitude, ld.t_load), 1.0)]
    if inv.objective == "two_kernel":
        excs.append(Excitation("extension", LoadSpec("extension", inv.extension_magnitude, ld.t_load), inv.omega))
    return CalibrationProblem(asm, _solver(cfg), excs, inv.objective, inv.t_meas,
                              ThetaLayout(layout_kind, m_tr, m_eps),
                              Regularization(inv.gamma_tr, inv.gamma_eps))


def _load_measurements(cfg: RunConfig, prob: CalibrationProblem):
    header, data = read_csv(cfg.resolve(cfg.inverse.measurements))
    nm = prob.n_meas
    if data.shape[0] < nm + 1:
        raise ConfigError(f"config.inverse.measurements: need {nm + 1} rows on [0, t_meas]")
    if not np.allclose(data[: nm + 1, 0], prob.config.times[: nm + 1], rtol=0, atol=1e-9 * prob.config.T_final):
        raise ConfigError("config.inverse.measurements: time column must match the solver grid")
    for exc in prob.excitations:
        cols = [f"{exc.name}_y{c}" for c in (1, 2, 3)]
        missing = [c for c in cols if c not in header]
        if missing:
            raise ConfigError(f"config.inverse.measurements: missing columns {missing}")
        exc.measurements = data[: nm + 1, [header.index(c) for c in cols]]


def cmd_calibrate(cfg: RunConfig, out: Path) -> bool:
    inv = cfg.inverse
    asm = _assembly(cfg)
    init = kernel_from_spec(cfg.kernels.initial, "config.kernels.initial", cfg.base_dir)
    single = inv.objective == "single_kernel"
    prob = _problem(cfg, asm, "single" if single else "two", init.m, init.m)
    truth = None
    noise = NoiseSpec(inv.noise_level, cfg.seed)
    if inv.measurements is not None:
        _load_measurements(cfg, prob)
    else:
        k_tr, k_eps = _truths(cfg)
        if single:
            k_tr = k_eps
        synthesize_measurements(prob, k_tr, k_eps, noise)
        truth = (k_tr, k_eps)
    settings = OptimizerSettings(inv.memory, inv.max_iters, inv.c1, inv.c2, inv.tol_grad,
                                 inv.tol_change, inv.max_ls)
    theta0 = prob.layout.pack(init) if single else prob.layout.pack(init, init)
    res = lbfgs_minimize(prob, theta0, settings, truth=truth)
    res.metadata["noise"] = noise.to_dict() if inv.measurements is None else None

    h = np.asarray(res.loss_history)
    monotone = bool(np.all(np.diff(h) <= 0))
    ok = monotone and bool(np.all(np.isfinite(res.theta)))
    body = res.to_dict()
    body.update({"command": "calibrate", "passed": ok, "config": cfg.to_dict()})
    dump_json(body, out / "result.json")
    write_csv(out / "loss.csv", ["iteration", "loss", "grad_norm"],
              [np.arange(h.size), h, res.grad_norms])
    dt, T = prob.config.dt, prob.config.T_final
    t = np.linspace(dt, T, 400)
    cols, names = [t], ["t"]
    for label, k in (("trace", res.k_tr), ("deviatoric", res.k_eps)):
        cols.append(k(t))
        names.append(f"pred_{label}")
    if truth is not None:
        for label, k in (("trace", truth[0]), ("deviatoric", truth[1])):
            cols.append(k(t))
            names.append(f"truth_{label}")
    write_csv(out / "kernels.csv", names, cols)
    tt = prob.config.times
    cols, names = [tt], ["t"]
    for exc in prob.excitations:
        for c in range(3):
            cols.append(res.prediction[exc.name][:, c])
            names.append(f"{exc.name}_pred_y{c + 1}")
        if exc.clean is not None:
            for c in range(3):
                cols.append(exc.clean[:, c])
                names.append(f"{exc.name}_truth_y{c + 1}")
    write_csv(out / "prediction.csv", names, cols)
    nm = prob.n_meas
    cols, names = [tt[: nm + 1]], ["t"]
    for exc in prob.excitations:
        for c in range(3):
            cols.append(exc.measurements[:, c])
            names.append(f"{exc.name}_y{c + 1}")
    write_csv(out / "measurements.csv", names, cols)
    return ok


def cmd_gradcheck(cfg: RunConfig, out: Path) -> bool:
    gc = cfg.gradcheck
    asm = _assembly(cfg)
    init = kernel_from_spec(cfg.kernels.initial, "config.kernels.initial", cfg.base_dir)
    k_tr, k_eps = _truths(cfg)
    if gc.layout == "single":
        cfg.inverse.objective = "single_kernel"
        prob = _problem(cfg, asm, "single", init.m, init.m)
        synthesize_measurements(prob, k_eps, k_eps, NoiseSpec(cfg.inverse.noise_level, cfg.seed))
        base = prob.layout.pack(init)
    else:
        cfg.inverse.objective = "two_kernel"
        prob = _problem(cfg, asm, "two", init.m, init.m)
        synthesize_measurements(prob, k_tr, k_eps, NoiseSpec(cfg.inverse.noise_level, cfg.seed))
        base = prob.layout.pack(init, init)
    rng = np.random.default_rng(cfg.seed)
    theta = base * (1.0 + gc.perturbation * rng.standard_normal(base.size))
    rep = gradcheck(prob, theta, gc.rel_step, gc.order)
    write_csv(out / "gradcheck.csv", ["index", "analytic", "fd", "rel_error"],
              [np.arange(theta.size), rep["analytic"], rep["fd"], rep["rel_error"]])
    ok = bool(rep["max_rel_error"] < gc.tolerance)
    dump_json({"command": "gradcheck", "passed": ok, "max_rel_error": rep["max_rel_error"],
               "objective": rep["objective"], "theta": theta, "rel_step": gc.rel_step,
               "order": gc.order, "tolerance": gc.tolerance, "config": cfg.to_dict()},
              out / "summary.json")
    return ok


def cmd_aaa(cfg: RunConfig, out: Path) -> bool:
    a = cfg.aaa
    k = soe_from_fractional(a.alpha, tuple(a.s_range), a.n_samples, max_modes=a.modes)
    lap = laplace_relative_error(k, a.alpha, tuple(a.s_range))
    tim = time_relative_error(k, a.alpha, tuple(a.t_range))
    dump_json(k.to_dict(), out / "kernel.json")
    ok = bool(np.all(k.rates >= 0) and np.isfinite(lap) and np.isfinite(tim))
    dump_json({"command": "aaa", "passed": ok, "alpha": a.alpha, "modes": k.m,
               "laplace_rel_error": lap, "time_rel_error": tim, "s_range": a.s_range,
               "t_range": a.t_range}, out / "summary.json")
    return ok


def cmd_reduce(cfg: RunConfig, out: Path) -> bool:
    r = cfg.reduce
    ks = rational_from_spec(r.k_sigma, "config.reduce.k_sigma", cfg.base_dir)
    ke = rational_from_spec(r.k_eps, "config.reduce.k_eps", cfg.base_dir)
    kt = rational_from_spec(r.k_treps, "config.reduce.k_treps", cfg.base_dir)
    mat = MaterialParams(cfg.material.E, cfg.material.nu, cfg.material.rho)
    ke2, kt2 = reduce_kernels(ks, ke, kt, mat.mu, mat.lam, viscous=r.viscous)
    dump_json(ke2.to_dict(), out / "k_eps.json")
    dump_json(kt2.to_dict(), out / "k_treps.json")
    s = np.geomspace(1e-2, 1e2, 100)
    res = reduction_residual(ks, ke, kt, ke2, kt2, mat.mu, mat.lam, s, viscous=r.viscous)
    ok = bool(res <= 1e-8)
    dump_json({"command": "reduce", "passed": ok, "identity_residual": res, "mu": mat.mu,
               "lam": mat.lam, "viscous": r.viscous}, out / "summary.json")
    return ok


def cmd_modal(cfg: RunConfig, out: Path) -> bool:
    m = cfg.modal
    k = kernel_from_spec(m.kernel, "config.modal.kernel", cfg.base_dir)
    sys_ = ModalSystem(m.lam, m.f, m.gain, smooth_pulse(m.pulse_width), k)
    y = simulate_mode(sys_, m.dt, m.T)
    pts = recover_kernel_laplace(y, sys_, m.s_points)
    s = np.array([p.s for p in pts])
    val = np.array([np.nan if p.skipped else p.value for p in pts])
    truth = np.asarray(k.laplace(s), dtype=float)
    err = np.abs(val - truth)
    write_csv(out / "modal.csv", ["s", "re_Lk", "truth", "error", "tail_bound"],
              [s, val, truth, err, [p.value_bound for p in pts]])
    ok = not any(p.skipped for p in pts)
    dump_json({"command": "modal-recover", "passed": ok, "points": [p.to_dict() for p in pts],
               "max_abs_error": float(np.nanmax(err)) if err.size else 0.0}, out / "summary.json")
    return ok


def cmd_verify(cfg: RunConfig, out: Path) -> bool:
    rep = property_suite(cfg.seed)
    rep["command"] = "verify-kernels"
    dump_json(rep, out / "summary.json")
    return rep["passed"]


COMMANDS = {
    "forward": cmd_forward,
    "calibrate": cmd_calibrate,
    "gradcheck": cmd_gradcheck,
    "aaa": cmd_aaa,
    "reduce": cmd_reduce,
    "modal-recover": cmd_modal,
    "verify-kernels": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="viscokernel",
                                description="Viscoelastic beam simulation and memory-kernel calibration.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=str, default=None, help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--out", type=str, default="out", help="output directory")
        sp.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.threads is not None:
            from threadpoolctl import threadpool_limits
            ctx = threadpool_limits(args.threads)
        else:
            ctx = nullcontext()
        with ctx:
            ok = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RationalError, SolverError, FloatingPointError, RuntimeError, ValueError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return 3
    if not ok:
        print(f"{args.command}: outputs written to {args.out}, but a check failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
