"""Command-line interface: exit codes, stable JSON, artifacts."""

import json

import pytest

from growfrag.cli import dumps_stable, main
from growfrag.errors import ConfigError

CANONICAL = """
[model]
growth = constant
growth_c0 = 1.0
kernel = uniform
rate = linear
rate_k0 = 1.0
irreducible = true

[numerics]
grid_n = 128
x_min = 0.01
x_max = 40.0

[run]
seed = 11
n_paths = 60
n_particles = 120
t_end = 0.5
x0 = 1.0
f = id
regime = pseudo-entrance
alpha = 2.0
"""

CRITICAL = """
[model]
growth = linear
growth_c0 = 1.0
kernel = uniform
rate = constant
rate_k0 = 1.0

[numerics]
grid_n = 128
x_min = 0.02
x_max = 40.0
method = heun

[run]
seed = 3
t_end = 3.0
regime = lnx
"""

MITOSIS = """
[model]
growth = constant
kernel = mitosis
rate = constant

[numerics]
grid_n = 96
x_min = 0.01
x_max = 40.0

[run]
seed = 5
n_particles = 120
t_end = 1.0
regime = constant
"""


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# -- stable JSON -------------------------------------------------------------

def test_dumps_stable_orders_and_formats():
    text = dumps_stable({"b": 1, "a": [1.5, True, None], "c": "x\"y"})
    assert text.index('"b"') < text.index('"a"') < text.index('"c"')
    assert json.loads(text) == {"b": 1, "a": [1.5, True, None], "c": 'x"y'}


def test_dumps_stable_rejects_nonfinite():
    with pytest.raises(ConfigError):
        dumps_stable({"x": float("nan")})


# -- check -----------------------------------------------------------------

def test_check_canonical_passes(tmp_path, capsys):
    cfg = _write(tmp_path, CANONICAL)
    code, out, _ = _run(capsys, "check", "--config", cfg, "--out",
                        str(tmp_path))
    assert code == 0
    payload = json.loads(out)
    assert payload["passed"] is True
    thr = payload["thresholds"]["uniform_kernel"]["threshold"]
    assert thr == pytest.approx(5.8284271247461907, abs=1e-6)
    assert (tmp_path / "check.json").read_text() == out


def test_check_critical_fails(tmp_path, capsys):
    # constant rate cannot exceed the high threshold at infinity
    cfg = _write(tmp_path, CRITICAL)
    code, out, _ = _run(capsys, "check", "--config", cfg, "--out",
                        str(tmp_path))
    assert code == 1
    payload = json.loads(out)
    assert payload["passed"] is False
    failed = [c["name"] for c in payload["checks"] if not c["pass"]]
    assert failed == ["rate-above-high-threshold-at-infinity"]


# -- config validation ---------------------------------------------------------

def test_unknown_key_rejected(tmp_path, capsys):
    cfg = _write(tmp_path, CANONICAL + "\nbogus_knob = 1\n")
    code, out, err = _run(capsys, "check", "--config", cfg, "--out",
                          str(tmp_path))
    assert code == 2
    assert out == ""
    payload = json.loads(err)
    assert payload["error"] == "config"
    assert payload["key"] == "bogus_knob"


def test_nonpositive_path_count_rejected(tmp_path, capsys):
    cfg = _write(tmp_path, CANONICAL.replace("n_paths = 60", "n_paths = 0"))
    code, _, err = _run(capsys, "simulate", "--config", cfg, "--out",
                        str(tmp_path))
    assert code == 2
    assert json.loads(err)["key"] == "n_paths"


def test_missing_config_rejected(tmp_path, capsys):
    code, _, err = _run(capsys, "check", "--config",
                        str(tmp_path / "absent.ini"))
    assert code == 2
    assert json.loads(err)["error"] == "config"


def test_bad_domain_rejected(tmp_path, capsys):
    cfg = _write(tmp_path, CANONICAL.replace("x_min = 0.01", "x_min = 2.0"))
    code, _, err = _run(capsys, "check", "--config", cfg)
    assert code == 2
    assert json.loads(err)["key"] == "x_min"


# -- numerical subcommands -------------------------------------------------------

def test_spectral_reports_negative_lambda0(tmp_path, capsys):
    cfg = _write(tmp_path, CANONICAL)
    code, out, _ = _run(capsys, "spectral", "--config", cfg, "--out",
                        str(tmp_path))
    assert code == 0
    payload = json.loads(out)
    assert payload["lambda0"] < 0.0
    assert payload["residuals"]["right"] <= 1e-8
    assert (tmp_path / "triple.csv").exists()


def test_simulate_runs_and_reports(tmp_path, capsys):
    cfg = _write(tmp_path, CANONICAL)
    code, out, _ = _run(capsys, "simulate", "--config", cfg, "--out",
                        str(tmp_path))
    assert code == 0
    payload = json.loads(out)
    assert payload["estimate"] > 0.0
    assert payload["n_paths"] == 60
    assert (tmp_path / "path.csv").exists()


def test_pde_runs_and_reports(tmp_path, capsys):
    cfg = _write(tmp_path, CANONICAL)
    code, out, _ = _run(capsys, "pde", "--config", cfg, "--out",
                        str(tmp_path))
    assert code == 0
    payload = json.loads(out)
    assert payload["summary"][-1]["t"] == pytest.approx(0.5)
    assert (tmp_path / "density.csv").exists()


def test_qsd_reports_rate_identity(tmp_path, capsys):
    cfg = _write(tmp_path, MITOSIS)
    code, out, _ = _run(capsys, "qsd", "--config", cfg, "--out",
                        str(tmp_path))
    assert code == 0
    payload = json.loads(out)
    assert payload["lambda0"] == pytest.approx(
        payload["lambda0X"] - payload["b"], abs=1e-15)
    assert payload["supported"] is True
    assert (tmp_path / "ensemble.csv").exists()


def test_converge_critical_has_no_gap(tmp_path, capsys):
    cfg = _write(tmp_path, CRITICAL)
    code, out, _ = _run(capsys, "converge", "--config", cfg, "--out",
                        str(tmp_path))
    assert code == 0
    payload = json.loads(out)
    assert payload["rate_positive"] or payload["r_squared"] < 0.9


def test_converge_refuses_foreign_spectral_summary(tmp_path, capsys):
    cfg_a = _write(tmp_path, CANONICAL, "a.ini")
    code, _, _ = _run(capsys, "spectral", "--config", cfg_a, "--out",
                      str(tmp_path))
    assert code == 0
    other = CRITICAL + f"spectral_json = {tmp_path / 'spectral.json'}\n"
    cfg_b = _write(tmp_path, other, "b.ini")
    code, _, err = _run(capsys, "converge", "--config", cfg_b, "--out",
                        str(tmp_path))
    assert code == 2
    assert json.loads(err)["key"] == "spectral_json"


# -- determinism --------------------------------------------------------------

def test_reruns_are_byte_identical(tmp_path, capsys):
    cfg = _write(tmp_path, CANONICAL)
    outputs = []
    for sub in ("out1", "out2"):
        code, out, _ = _run(capsys, "simulate", "--config", cfg, "--out",
                            str(tmp_path / sub))
        assert code == 0
        outputs.append((tmp_path / sub / "simulate.json").read_bytes())
    assert outputs[0] == outputs[1]


def test_threading_does_not_change_results(tmp_path, capsys):
    cfg = _write(tmp_path, CANONICAL)
    results = []
    for threads, sub in (("1", "t1"), ("3", "t3")):
        code, out, _ = _run(capsys, "simulate", "--config", cfg,
                            "--threads", threads, "--out",
                            str(tmp_path / sub))
        assert code == 0
        results.append(out)
    assert results[0] == results[1]


def test_seed_override_changes_output(tmp_path, capsys):
    cfg = _write(tmp_path, CANONICAL)
    _, out_a, _ = _run(capsys, "simulate", "--config", cfg, "--seed", "1",
                       "--out", str(tmp_path / "s1"))
    _, out_b, _ = _run(capsys, "simulate", "--config", cfg, "--seed", "2",
                       "--out", str(tmp_path / "s2"))
    assert json.loads(out_a)["estimate"] != json.loads(out_b)["estimate"]
