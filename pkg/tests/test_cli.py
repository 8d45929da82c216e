import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fewfermions import __version__
from fewfermions.cli import main


def write_config(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


SPECTRUM = """
kind = "spectrum"
[sector]
n_orb = 6
n_up = 1
n_down = 1
[model]
g = [0.0, 5.0, 20.0]
[solver]
k = 20
"""


def test_spectrum_contains_flat_pair_level(tmp_path):
    out = tmp_path / "run"
    assert main(["spectrum", "--config", write_config(tmp_path, SPECTRUM), "--out", str(out)]) == 0
    text = (out / "spectrum.csv").read_bytes()
    assert b"\r" not in text
    header = text.decode("utf-8").splitlines()[0]
    assert header == "g,level_index,energy_hbar_omega,energy_minus_EF_hbar_omega,residual_hbar_omega"
    rows = read_rows(out / "spectrum.csv")
    assert len(rows) == 60
    for g in ("0", "5", "20"):
        offsets = [float(r["energy_minus_EF_hbar_omega"]) for r in rows if r["g"] == g]
        assert min(abs(o - 1.0) for o in offsets) < 1e-10
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["basis_dim"] == 36
    assert manifest["version"] == __version__
    assert manifest["fermi_energy"] == 1.0
    assert manifest["outputs"] == ["spectrum.csv"]
    assert "wall_time_s" in manifest and manifest["solver"]["used"] == ["dense"]
    assert not list(out.glob("*.partial.csv"))


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, """
kind = "spectrum"
[sector]
n_orb = 7
n_up = 2
n_down = 1
[model]
g = [1.0, 12.0]
delta = 0.01
[solver]
method = "lanczos"
k = 5
""")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["spectrum", "--config", cfg, "--out", str(a), "--threads", "1"]) == 0
    assert main(["spectrum", "--config", cfg, "--out", str(b), "--threads", "1"]) == 0
    assert (a / "spectrum.csv").read_bytes() == (b / "spectrum.csv").read_bytes()
    assert json.loads((a / "manifest.json").read_text())["solver"]["used"] == ["lanczos"]


def test_seventeen_significant_digits(tmp_path):
    out = tmp_path / "run"
    main(["spectrum", "--config", write_config(tmp_path, SPECTRUM), "--out", str(out)])
    rows = read_rows(out / "spectrum.csv")
    value = rows[1]["energy_hbar_omega"]
    assert float(value) == float(format(float(value), ".17g"))
    assert len(value.replace(".", "").replace("-", "").lstrip("0")) <= 17


def test_occupations_fermi_sea(tmp_path):
    cfg = write_config(tmp_path, """
kind = "occupations"
[sector]
n_orb = 6
n_up = 4
n_down = 1
[model]
g = [0.0, 8.0]
[ensemble]
temperatures = [0.0, 0.3, "inf"]
""")
    out = tmp_path / "occ"
    assert main(["occupations", "--config", cfg, "--out", str(out)]) == 0
    rows = read_rows(out / "occupations.csv")
    assert list(rows[0]) == ["g", "temperature_kBT_over_hbar_omega", "spin", "orbital", "probability"]
    hit = [r for r in rows if (r["g"], r["temperature_kBT_over_hbar_omega"], r["spin"], r["orbital"])
           == ("0", "0", "down", "0")]
    assert float(hit[0]["probability"]) == pytest.approx(1.0, abs=1e-12)
    assert {r["temperature_kBT_over_hbar_omega"] for r in rows} == {"0", "0.29999999999999999", "inf"}
    # one-body sum rule in each (g, T, spin) block
    for g in ("0", "8"):
        for spin, n in (("up", 4), ("down", 1)):
            total = sum(float(r["probability"]) for r in rows
                        if r["g"] == g and r["spin"] == spin and r["temperature_kBT_over_hbar_omega"] == "inf")
            assert total == pytest.approx(n, abs=1e-12)
    manifest = json.loads((out / "manifest.json").read_text())
    assert any("not well separated" in w for w in manifest["warnings"])


def test_cdf_rows_monotone(tmp_path):
    cfg = write_config(tmp_path, """
kind = "cdf"
[sector]
n_orb = 6
n_up = 2
n_down = 1
[model]
g = 9.0
[ensemble]
temperatures = { start = 0.0, stop = 0.5, step = 0.25 }
""")
    out = tmp_path / "cdf"
    assert main(["cdf", "--config", cfg, "--out", str(out)]) == 0
    rows = read_rows(out / "cdf.csv")
    assert list(rows[0]) == ["g", "temperature_kBT_over_hbar_omega", "cutoff_n", "value"]
    assert len(rows) == 3 * 6
    for t in ("0", "0.25", "0.5"):
        vals = [float(r["value"]) for r in rows if r["temperature_kBT_over_hbar_omega"] == t]
        assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))
        assert vals[-1] == 0.0


DYNAMICS = """
kind = "dynamics"
[sector]
n_orb = 5
n_up = 1
n_down = 3
[dynamics]
g = 12.0
delta_after = {delta}
initial_state = 3
times = {{ start = 0.0, stop = 50.0, step = 2.5 }}
propagator = "{route}"
"""


@pytest.mark.parametrize("route", ["spectral", "krylov"])
def test_dynamics_stationary_without_gradient(tmp_path, route):
    out = tmp_path / "dyn"
    cfg = write_config(tmp_path, DYNAMICS.format(delta=0.0, route=route))
    assert main(["dynamics", "--config", cfg, "--out", str(out)]) == 0
    rows = read_rows(out / "dynamics.csv")
    assert list(rows[0]) == ["time_inverse_omega", "p_1", "p_2", "p_3", "p_4", "leakage", "norm"]
    p = np.array([[float(r[f"p_{k}"]) for k in range(1, 5)] for r in rows])
    assert np.ptp(p, axis=0).max() < 1e-8
    assert p[0, 3] == pytest.approx(1.0, abs=1e-12)


def test_dynamics_gradient_mixes(tmp_path):
    out = tmp_path / "dyn"
    cfg = write_config(tmp_path, DYNAMICS.format(delta=0.05, route="auto"))
    assert main(["dynamics", "--config", cfg, "--out", str(out)]) == 0
    rows = read_rows(out / "dynamics.csv")
    p = np.array([[float(r[f"p_{k}"]) for k in range(1, 5)] for r in rows])
    leak = np.array([float(r["leakage"]) for r in rows])
    norm = np.array([float(r["norm"]) for r in rows])
    assert np.abs(p.sum(axis=1) + leak - 1).max() < 1e-10
    assert np.abs(norm - 1).max() < 1e-10
    assert np.ptp(p, axis=0).max() > 0.1


def test_dynamics_index_out_of_range(tmp_path):
    cfg = write_config(tmp_path, DYNAMICS.format(delta=0.0, route="auto").replace("initial_state = 3",
                                                                                    "initial_state = 4"))
    assert main(["dynamics", "--config", cfg, "--out", str(tmp_path / "x")]) == 2


def test_config_errors_exit_two(tmp_path, capsys):
    bad = write_config(tmp_path, SPECTRUM.replace("k = 20", "k = -1"), "bad.toml")
    assert main(["spectrum", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "solver.k" in capsys.readouterr().err
    good = write_config(tmp_path, SPECTRUM, "good.toml")
    assert main(["cdf", "--config", good]) == 2
    assert main(["spectrum", "--config", str(tmp_path / "nope.toml")]) == 2
    assert main(["validate-config", "--config", bad]) == 2
    assert main(["spectrum"]) == 2
    assert main(["spectrum", "--config", good, "--threads", "0"]) == 2
    dense_too_big = SPECTRUM.replace("n_orb = 6", "n_orb = 64").replace("k = 20", 'k = 2\nmethod = "dense"')
    assert main(["spectrum", "--config", write_config(tmp_path, dense_too_big, "big.toml"),
                 "--out", str(tmp_path / "big")]) == 2


def test_validate_config_ok(tmp_path, capsys):
    assert main(["validate-config", "--config", write_config(tmp_path, SPECTRUM)]) == 0
    assert "dim=36" in capsys.readouterr().out


def test_solver_failure_keeps_marked_partial_output(tmp_path):
    cfg = write_config(tmp_path, """
kind = "spectrum"
[sector]
n_orb = 8
n_up = 2
n_down = 2
[model]
g = [0.0, 5.0]
[solver]
method = "lanczos"
k = 6
max_matvecs = 8
""")
    out = tmp_path / "fail"
    assert main(["spectrum", "--config", cfg, "--out", str(out)]) == 3
    assert not (out / "spectrum.csv").exists()
    rows = read_rows(out / "spectrum.partial.csv")
    assert {r["g"] for r in rows} == {"0"}  # diagonal g=0 point finished before the failure
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "solver-failure"
    assert manifest["outputs"] == ["spectrum.partial.csv"]
    assert "ConvergenceError" in manifest["error"]


def test_oracle_subset(tmp_path, capsys):
    out = tmp_path / "oracle"
    assert main(["oracle", "--criteria", "5", "--out", str(out)]) == 0
    assert "[PASS] criterion 5" in capsys.readouterr().out
    rows = read_rows(out / "acceptance.csv")
    assert rows[0]["criterion"] == "5" and rows[0]["status"] == "pass"
    assert json.loads((out / "manifest.json").read_text())["all_passed"] is True
    assert main(["oracle", "--criteria", "42"]) == 2
    assert main(["oracle", "--criteria", "x"]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fewfermions", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.strip() == __version__
