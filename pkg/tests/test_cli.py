import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from viscokernel.cli import main
from viscokernel.io import dump_json, load_json, read_csv
from viscokernel.kernels import SoeKernel
from viscokernel.rational import RationalLaplace

from conftest import csv_columns

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
DESK = {"geometry": {"nx": 12, "ny": 2, "nz": 1}}


def write_cfg(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d), encoding="utf-8")
    return str(p)


def run(cmd, cfg, out, *extra):
    return main([cmd, "--config", str(cfg), "--out", str(out), *extra])


def all_outputs_readable(out):
    for p in Path(out).iterdir():
        if p.suffix == ".csv":
            read_csv(p)
        elif p.suffix == ".json":
            load_json(p)


def test_single_step_forward(tmp_path):
    cfg = write_cfg(tmp_path, {**DESK, "solver": {"n_steps": 1}})
    assert run("forward", cfg, tmp_path / "o") == 0
    tip = csv_columns(tmp_path / "o" / "tip.csv")
    np.testing.assert_array_equal(tip["t"], [0.0, 4.0])
    all_outputs_readable(tmp_path / "o")


def test_zero_kernel_energy(tmp_path):
    assert run("forward", CONFIGS / "forward_desk_elastic.json", tmp_path) == 0
    en = csv_columns(tmp_path / "energy.csv")
    E = en["total"][en["t"] >= 0.8 - 1e-12]
    assert np.max(np.abs(E - E[0])) <= 0.01 * E[0]
    summary = load_json(tmp_path / "summary.json")
    assert summary["passed"] and summary["n_dof"] == 216


def test_reduce_zero_sigma_is_byte_identical(tmp_path):
    ke = RationalLaplace.from_soe(SoeKernel([2.0, 0.5], [2.0, 0.3]))
    kt = RationalLaplace.from_soe(SoeKernel([1.0], [0.7]))
    dump_json(ke.to_dict(), tmp_path / "ke.json")
    dump_json(kt.to_dict(), tmp_path / "kt.json")
    cfg = write_cfg(tmp_path, {"reduce": {"k_sigma": None, "k_eps": {"path": "ke.json"},
                                          "k_treps": {"path": "kt.json"}}})
    assert run("reduce", cfg, tmp_path / "o") == 0
    assert (tmp_path / "o" / "k_eps.json").read_bytes() == (tmp_path / "ke.json").read_bytes()
    assert (tmp_path / "o" / "k_treps.json").read_bytes() == (tmp_path / "kt.json").read_bytes()


def test_reduce_example(tmp_path):
    assert run("reduce", CONFIGS / "reduce_example.json", tmp_path) == 0
    assert load_json(tmp_path / "summary.json")["identity_residual"] < 1e-8


def test_aaa(tmp_path):
    assert run("aaa", CONFIGS / "aaa_g07.json", tmp_path) == 0
    s = load_json(tmp_path / "summary.json")
    assert s["laplace_rel_error"] <= 1e-9 and s["time_rel_error"] <= 1e-4
    assert SoeKernel.from_dict(load_json(tmp_path / "kernel.json")).m == 22


def test_gradcheck(tmp_path):
    assert run("gradcheck", CONFIGS / "gradcheck_desk.json", tmp_path) == 0
    s = load_json(tmp_path / "summary.json")
    assert s["passed"] and s["max_rel_error"] < 1e-6
    g = csv_columns(tmp_path / "gradcheck.csv")
    assert g["index"].size == 32


def test_modal(tmp_path):
    assert run("modal-recover", CONFIGS / "modal_exp.json", tmp_path) == 0
    m = csv_columns(tmp_path / "modal.csv")
    assert np.all(m["error"] / m["truth"] < 1e-3)


def test_verify_kernels(tmp_path):
    assert main(["verify-kernels", "--out", str(tmp_path)]) == 0
    assert load_json(tmp_path / "summary.json")["passed"]


def test_exit_code_check_failed(tmp_path):
    d = {**DESK, "solver": {"n_steps": 10}, "kernels": {"truth_eps": {"weights": [0.1], "rates": [1.0]},
                                                        "initial": {"weights": [0.2], "rates": [2.0]}},
         "gradcheck": {"layout": "single", "tolerance": 1e-300}}
    assert run("gradcheck", write_cfg(tmp_path, d), tmp_path / "o") == 1
    assert not load_json(tmp_path / "o" / "summary.json")["passed"]


def test_exit_code_config_error(tmp_path, capsys):
    assert run("forward", write_cfg(tmp_path, {"geometry": {"nx": -1}}), tmp_path / "o") == 2
    assert "config.geometry.nx" in capsys.readouterr().err
    assert run("forward", tmp_path / "missing.json", tmp_path / "o") == 2
    assert main(["forward", "--threads", "0", "--out", str(tmp_path / "o")]) == 2


def test_exit_code_runtime_error(tmp_path, capsys):
    d = {**DESK, "kernels": {"truth_eps": {"weights": [-1e6], "rates": [1.0]}}}
    assert run("forward", write_cfg(tmp_path, d), tmp_path / "o") == 3
    assert "forward failed" in capsys.readouterr().err


def short_calibration(tmp_path):
    d = json.loads((CONFIGS / "calibrate_desk_single.json").read_text())
    d["inverse"]["max_iters"] = 3
    return write_cfg(tmp_path, d, "short.json")


def test_calibrate_outputs_and_seed(tmp_path):
    cfg = short_calibration(tmp_path)
    for name, seed in (("a", "5"), ("b", "5"), ("c", "6")):
        assert run("calibrate", cfg, tmp_path / name, "--seed", seed, "--threads", "1") == 0
    for f in ("result.json", "loss.csv", "kernels.csv", "prediction.csv", "measurements.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a" / "measurements.csv").read_bytes() != (tmp_path / "c" / "measurements.csv").read_bytes()
    res = load_json(tmp_path / "a" / "result.json")
    assert res["passed"] and len(res["loss_history"]) == 4
    assert np.all(np.diff(res["loss_history"]) <= 0)
    all_outputs_readable(tmp_path / "a")


def test_calibrate_from_measurement_file(tmp_path):
    cfg = short_calibration(tmp_path)
    assert run("calibrate", cfg, tmp_path / "a", "--seed", "5") == 0
    d = json.loads(Path(cfg).read_text())
    shutil.copy(tmp_path / "a" / "measurements.csv", tmp_path / "meas.csv")
    d["inverse"]["measurements"] = "meas.csv"
    assert run("calibrate", write_cfg(tmp_path, d, "fromfile.json"), tmp_path / "b") == 0
    a = load_json(tmp_path / "a" / "result.json")
    b = load_json(tmp_path / "b" / "result.json")
    assert a["loss_history"] == b["loss_history"]
    assert b["l1_error"] == {}


def test_console_script():
    exe = shutil.which("viscokernel")
    if exe is None:
        pytest.skip("console script not installed")
    out = subprocess.run([exe, "--help"], capture_output=True, text=True, check=True).stdout
    for cmd in ("forward", "calibrate", "gradcheck", "aaa", "reduce", "modal-recover", "verify-kernels"):
        assert cmd in out
