import csv
import json
from dataclasses import replace
from importlib import resources

import jsonschema
import numpy as np
import pytest

from beamjump import config as cfgmod
from beamjump.cli import main
from beamjump.errors import ConfigError
from beamjump.presets import PRESETS, get_preset


def _write_cfg(tmp_path, cfg, name="run.ini"):
    path = tmp_path / name
    path.write_text(cfgmod.emit(cfg))
    return str(path)


def _read_csv(path):
    with open(path) as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    return rows[0], np.array([[v or "nan" for v in r] for r in rows[1:]], dtype=float)


def _schema():
    return json.loads(resources.files("beamjump").joinpath("schemas/report.schema.json")
                      .read_text())


# ---------------------------------------------------------------- configuration


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_config_round_trip(name):
    text = cfgmod.emit(get_preset(name))
    assert cfgmod.emit(cfgmod.parse(text)) == text


def test_config_field_errors():
    with pytest.raises(ConfigError, match="solver.dt"):
        cfgmod.parse("[solver]\ndt = -1\n")
    with pytest.raises(ConfigError, match="model.bogus"):
        cfgmod.parse("[model]\nbogus = 1\n")
    with pytest.raises(ConfigError, match="basis.n_modes"):
        cfgmod.parse("[basis]\nn_modes = two\n")


def test_exit_config_error(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[solver]\ndt = 5\nT = 1\n")
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "solver.dt" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.ini")]) == 2


# ---------------------------------------------------------------- simulate


def test_zero_model_all_zero_csv(tmp_path):
    cfg = replace(get_preset("zero"), initial=cfgmod.InitialSection())
    out = tmp_path / "o"
    assert main(["simulate", "--config", _write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    header, data = _read_csv(out / "trajectory.csv")
    assert header[0] == "t"
    assert np.all(data[:, 1:] == 0.0)
    text = (out / "trajectory.csv").read_text()
    assert text.startswith("# command: simulate\n# config_name:")
    assert f"# config_sha256: {cfgmod.config_hash(cfg)}" in text
    side = json.loads((out / "trajectory.json").read_text())
    assert side["seed"] == 0 and side["config_sha256"] == cfgmod.config_hash(cfg)


def test_simulate_does_not_mutate_config(tmp_path):
    path = _write_cfg(tmp_path, get_preset("zero"))
    before = open(path, "rb").read()
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "o"), "--seed", "3",
                 "--dt", "0.02"]) == 0
    assert open(path, "rb").read() == before


def test_simulate_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"o{k}"
        assert main(["simulate", "--preset", "isometry", "--seed", "11", "--out", str(d)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]
    d = tmp_path / "o2"
    main(["simulate", "--preset", "isometry", "--seed", "12", "--out", str(d)])
    assert (d / "trajectory.csv").read_bytes() != outs[0]["trajectory.csv"]


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BEAMJUMP_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--preset", "zero"]) == 0
    assert (tmp_path / "env" / "trajectory.csv").exists()
    assert main(["simulate", "--preset", "zero", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "trajectory.csv").exists()


def test_damped_beam_envelope_nonincreasing(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--preset", "damped-beam", "--out", str(out)]) == 0
    header, data = _read_csv(out / "trajectory.csv")
    h = data[:, header.index("h_norm")]
    t = data[:, 0]
    # envelope: maxima over consecutive 2 s windows
    env = [h[(t >= s) & (t < s + 2.0)].max() for s in np.arange(0.0, 20.0, 2.0)]
    assert np.all(np.diff(env) <= 0)
    assert env[-1] < 0.5 * env[0]


def test_solver_fault_exit(tmp_path, capsys):
    cfg = get_preset("isometry")
    cfg = replace(cfg, solver=replace(cfg.solver, n_cap=1.5), initial=cfgmod.InitialSection(
        b=(1.0,)), noise=replace(cfg.noise, masses=(50.0,)))
    assert main(["simulate", "--config", _write_cfg(tmp_path, cfg), "--out",
                 str(tmp_path / "o")]) == 3
    assert "solver fault" in capsys.readouterr().err


# ---------------------------------------------------------------- ensemble


def test_ensemble_report_validates(tmp_path):
    cfg = get_preset("khasminskii-demo")
    cfg = replace(cfg, solver=replace(cfg.solver, T=1.0))
    out = tmp_path / "o"
    code = main(["ensemble", "--config", _write_cfg(tmp_path, cfg), "--paths", "200", "--out",
                 str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, _schema())
    assert report["passed"] and report["checks"][0]["details"]["C"] == 1.5
    header = [l for l in (out / "curves.csv").read_text().splitlines() if not l.startswith("#")][0]
    assert header.split(",")[:9] == ["check", "series", "level", "dt_level", "t", "estimate",
                                     "ci_lo", "ci_hi", "bound"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_sha256"] == report["meta"]["config_sha256"]


def test_ensemble_degenerate(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["ensemble", "--preset", "damped-beam", "--paths", "1", "--out", str(out)]) == 0
    assert "degenerate" in capsys.readouterr().out
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, _schema())
    for c in report["checks"]:
        assert c["status"] == "skipped" and "degenerate" in c["reason"]


def test_ensemble_violation_exit(tmp_path):
    cfg = get_preset("khasminskii-demo")
    cfg = replace(cfg, model=replace(cfg.model, K_f=0.0, K_g=0.0, beta=0.0, drift="none"),
                  noise=replace(cfg.noise, marks=(-3.0, 3.0), masses=(2.5, 2.5)),
                  solver=replace(cfg.solver, T=2.0, dt=0.01))
    out = tmp_path / "o"
    assert main(["ensemble", "--config", _write_cfg(tmp_path, cfg), "--paths", "300",
                 "--out", str(out)]) == 4
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, _schema())
    assert not report["passed"]


def test_ensemble_byte_identical(tmp_path):
    cfg = get_preset("khasminskii-demo")
    cfg = replace(cfg, solver=replace(cfg.solver, T=0.5))
    path = _write_cfg(tmp_path, cfg)
    outs = []
    for k in range(2):
        d = tmp_path / f"o{k}"
        main(["ensemble", "--config", path, "--paths", "100", "--seed", "5", "--out", str(d)])
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]


# ---------------------------------------------------------------- verify / picard


def test_verify_zero_preset(tmp_path):
    out = tmp_path / "o"
    assert main(["verify", "--preset", "zero", "--out", str(out)]) == 0
    jsonschema.validate(json.loads((out / "report.json").read_text()), _schema())


def test_picard_compare_linear(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["picard-compare", "--preset", "picard-linear", "--out", str(out)]) == 0
    header, data = _read_csv(out / "comparison.csv")
    gaps = data[:, header.index("gap")]
    assert np.all(np.abs(gaps[:-1] / gaps[1:] - 2.0) <= 0.4)
    jsonschema.validate(json.loads((out / "report.json").read_text()), _schema())


def test_picard_compare_zero_model(tmp_path):
    out = tmp_path / "o"
    assert main(["picard-compare", "--preset", "picard-zero", "--out", str(out)]) == 0
    header, data = _read_csv(out / "comparison.csv")
    assert np.all(data[:, header.index("gap")] <= 1e-12)


def test_picard_nonconvergence_exit(tmp_path, capsys):
    cfg = get_preset("picard-demo")
    cfg = replace(cfg, solver=replace(cfg.solver, picard_lambda=0.5, picard_max_iter=3))
    code = main(["picard-compare", "--config", _write_cfg(tmp_path, cfg), "--out",
                 str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 5
    factor = (1.0 * 0.61 + 0.2828427124746190) / (2 * 0.5)
    assert f"= {factor:.6g} > 1/2" in err


def test_picard_requires_truncation(tmp_path):
    assert main(["picard-compare", "--preset", "zero", "--out", str(tmp_path / "o")]) == 2
