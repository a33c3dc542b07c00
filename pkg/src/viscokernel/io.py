"""Config parsing and file formats (JSON for structure, CSV for time series)."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .kernels import FractionalKernel, SoeKernel
from .rational import RationalLaplace


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def fmt(x) -> str:
    return format(float(x), ".17g")


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(obj, path) -> None:
    text = json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def write_csv(path, header: list[str], columns) -> None:
    """Columns of equal length; column 0 is the abscissa."""
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    if len(cols) != len(header):
        raise ValueError("header and columns differ in length")
    n = cols[0].size
    if any(c.size != n for c in cols):
        raise ValueError("all columns must have equal length")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            w.writerow([fmt(c[i]) for c in cols])


def read_csv(path, require_increasing: bool = True):
    """Returns (header, array of shape (rows, cols))."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty CSV")
    header = rows[0]
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from exc
    if require_increasing and data.shape[0] > 1 and np.any(np.diff(data[:, 0]) <= 0):
        raise ConfigError(f"{path}: first column must be strictly increasing")
    return header, data


# --- configuration tree -------------------------------------------------------

@dataclass
class GeometryCfg:
    Lx: float = 1.0
    Ly: float = 0.1
    Lz: float = 0.04
    nx: int = 60
    ny: int = 10
    nz: int = 5


@dataclass
class MaterialCfg:
    E: float = 1e3
    nu: float = 0.3
    rho: float = 1.0


@dataclass
class SolverCfg:
    T: float = 4.0
    n_steps: int = 100
    beta: float = 0.25
    gamma: float = 0.5


@dataclass
class LoadCfg:
    kind: str = "bending"
    magnitude: float = 1.0
    t_load: float = 0.8


@dataclass
class KernelsCfg:
    # each entry: {"alpha": a, "modes": m[, "s_range": [lo, hi]]}, {"weights", "rates"},
    # {"path": file} or null (zero kernel)
    truth_eps: dict | None = field(default_factory=lambda: {"alpha": 0.7, "modes": 22})
    truth_tr: dict | None = None          # None: same as truth_eps
    initial: dict | None = field(default_factory=lambda: {"alpha": 0.5, "modes": 8, "s_range": [0.1, 100.0]})


@dataclass
class InverseCfg:
    objective: str = "single_kernel"
    t_meas: float = 2.0
    omega: float = 10.0
    extension_magnitude: float = 100.0
    noise_level: float = 0.02
    measurements: str | None = None       # CSV path; otherwise synthesized
    max_iters: int = 100
    memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    tol_grad: float = 1e-12
    tol_change: float = 1e-14
    max_ls: int = 25
    gamma_tr: float = 0.0
    gamma_eps: float = 0.0


@dataclass
class ModalCfg:
    lam: float = 4.0
    f: float = 1.0
    gain: float = 1.0
    pulse_width: float = 1.0
    dt: float = 1e-3
    T: float = 200.0
    s_points: list = field(default_factory=lambda: [0.5, 1.0, 2.0, 5.0])
    kernel: dict | None = field(default_factory=lambda: {"weights": [1.0], "rates": [1.0]})


@dataclass
class AaaCfg:
    alpha: float = 0.7
    modes: int = 22
    s_range: list = field(default_factory=lambda: [1e-3, 1e3])
    n_samples: int = 400
    t_range: list = field(default_factory=lambda: [0.04, 4.0])


@dataclass
class ReduceCfg:
    k_sigma: dict | None = None
    k_eps: dict | None = None
    k_treps: dict | None = None
    viscous: str = "identity"


@dataclass
class GradcheckCfg:
    rel_step: float = 1e-2
    order: int = 6
    layout: str = "two"
    perturbation: float = 0.2
    tolerance: float = 1e-6


@dataclass
class RunConfig:
    geometry: GeometryCfg = field(default_factory=GeometryCfg)
    material: MaterialCfg = field(default_factory=MaterialCfg)
    solver: SolverCfg = field(default_factory=SolverCfg)
    load: LoadCfg = field(default_factory=LoadCfg)
    kernels: KernelsCfg = field(default_factory=KernelsCfg)
    inverse: InverseCfg = field(default_factory=InverseCfg)
    modal: ModalCfg = field(default_factory=ModalCfg)
    aaa: AaaCfg = field(default_factory=AaaCfg)
    reduce: ReduceCfg = field(default_factory=ReduceCfg)
    gradcheck: GradcheckCfg = field(default_factory=GradcheckCfg)
    seed: int = 0
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be a JSON object")
        cfg = cls(base_dir=str(base_dir))
        for key, val in d.items():
            if key == "seed":
                cfg.seed = _coerce("config.seed", val, int)
                continue
            if key not in SECTIONS:
                raise ConfigError(f"config.{key}: unknown section")
            if not isinstance(val, dict):
                raise ConfigError(f"config.{key}: must be an object")
            sec = getattr(cfg, key)
            names = {f.name: f for f in fields(sec)}
            for k, v in val.items():
                if k not in names:
                    raise ConfigError(f"config.{key}.{k}: unknown key")
                default = getattr(sec, k)
                if isinstance(default, bool) or default is None or isinstance(default, (dict, list, str)):
                    setattr(sec, k, v)
                else:
                    setattr(sec, k, _coerce(f"config.{key}.{k}", v, type(default)))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        p = Path(path)
        return cls.from_dict(load_json(p), base_dir=str(p.parent))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def validate(self):
        g = self.geometry
        for k in ("Lx", "Ly", "Lz"):
            if not getattr(g, k) > 0:
                raise ConfigError(f"config.geometry.{k}: must be positive")
        for k in ("nx", "ny", "nz"):
            if getattr(g, k) < 1:
                raise ConfigError(f"config.geometry.{k}: must be >= 1")
        m = self.material
        if not m.E > 0:
            raise ConfigError("config.material.E: must be positive")
        if not -1 < m.nu < 0.5:
            raise ConfigError("config.material.nu: must lie in (-1, 0.5)")
        if not m.rho > 0:
            raise ConfigError("config.material.rho: must be positive")
        s = self.solver
        if s.n_steps < 1:
            raise ConfigError("config.solver.n_steps: must be >= 1")
        if not s.T > 0:
            raise ConfigError("config.solver.T: must be positive")
        if not 0 <= s.beta <= 0.5:
            raise ConfigError("config.solver.beta: must lie in [0, 0.5]")
        if not 0 <= s.gamma <= 1:
            raise ConfigError("config.solver.gamma: must lie in [0, 1]")
        if self.load.kind not in ("bending", "extension"):
            raise ConfigError("config.load.kind: must be 'bending' or 'extension'")
        if not self.load.t_load > 0:
            raise ConfigError("config.load.t_load: must be positive")
        inv = self.inverse
        if inv.objective not in ("single_kernel", "two_kernel"):
            raise ConfigError("config.inverse.objective: must be 'single_kernel' or 'two_kernel'")
        if not 0 <= inv.t_meas <= s.T:
            raise ConfigError("config.inverse.t_meas: must lie in [0, solver.T]")
        if not inv.noise_level >= 0:
            raise ConfigError("config.inverse.noise_level: must be >= 0")
        if not 0 < inv.c1 < inv.c2 < 1:
            raise ConfigError("config.inverse: need 0 < c1 < c2 < 1")
        if inv.measurements is not None and not self.resolve(inv.measurements).exists():
            raise ConfigError(f"config.inverse.measurements: file not found: {inv.measurements}")
        for name in ("truth_eps", "truth_tr", "initial"):
            spec = getattr(self.kernels, name)
            if isinstance(spec, dict) and "path" in spec and not self.resolve(spec["path"]).exists():
                raise ConfigError(f"config.kernels.{name}.path: file not found: {spec['path']}")
        if self.gradcheck.order not in (2, 4, 6):
            raise ConfigError("config.gradcheck.order: must be 2, 4 or 6")
        if self.gradcheck.layout not in ("single", "two"):
            raise ConfigError("config.gradcheck.layout: must be 'single' or 'two'")

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


SECTIONS = ("geometry", "material", "solver", "load", "kernels", "inverse", "modal", "aaa",
            "reduce", "gradcheck")


def _coerce(where, v, typ):
    try:
        if typ is int:
            if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                raise TypeError
            return int(v)
        if typ is float:
            if isinstance(v, bool):
                raise TypeError
            return float(v)
    except (TypeError, ValueError):
        pass
    else:
        return v
    raise ConfigError(f"{where}: expected {typ.__name__}, got {v!r}")


def kernel_from_spec(spec, where: str, base_dir: str = "."):
    """SOE kernel from a config entry (AAA spec, inline SOE, file, or null)."""
    from .rational import soe_from_fractional

    if spec is None:
        return SoeKernel.zero()
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: kernel spec must be an object or null")
    if "path" in spec:
        p = Path(spec["path"])
        p = p if p.is_absolute() else Path(base_dir) / p
        return kernel_from_spec(load_json(p), where, str(p.parent))
    if "alpha" in spec:
        try:
            kw = {"max_modes": int(spec.get("modes", 22))}
            if "s_range" in spec:
                kw["s_range"] = tuple(float(x) for x in spec["s_range"])
            return soe_from_fractional(float(spec["alpha"]), **kw)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    if "weights" in spec:
        try:
            return SoeKernel.from_dict(spec)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    if "poles_re" in spec:
        try:
            return RationalLaplace.from_dict(spec).to_soe()
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: unrecognized kernel spec keys {sorted(spec)}")


def rational_from_spec(spec, where: str, base_dir: str = ".") -> RationalLaplace:
    if spec is None:
        return RationalLaplace.zero()
    if isinstance(spec, dict) and "path" in spec:
        p = Path(spec["path"])
        p = p if p.is_absolute() else Path(base_dir) / p
        return rational_from_spec(load_json(p), where, str(p.parent))
    if isinstance(spec, dict) and "poles_re" in spec:
        try:
            return RationalLaplace.from_dict(spec)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    return RationalLaplace.from_soe(kernel_from_spec(spec, where, base_dir))


def read_kernel_file(path):
    d = load_json(path)
    if "alpha" in d and "weights" not in d:
        return FractionalKernel(float(d["alpha"]))
    if "poles_re" in d:
        return RationalLaplace.from_dict(d)
    return SoeKernel.from_dict(d)
