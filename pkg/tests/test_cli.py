import json
from pathlib import Path

import pytest

from toa_lab.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_NUMERIC, EXIT_OK, RunConfig, cmd_figure1, main
from toa_lab.errors import ConfigError
from toa_lab.phase_space import ApparatusWindow1D
from toa_lab.states import GaussianPacket

GOLDEN = Path(__file__).parent / "golden" / "figure1"


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return header, body[0].split(","), [row.split(",") for row in body[1:]]


def write_json(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


# --------------------------------------------------------------------------- compute


def test_compute_kw_csv(tmp_path):
    out = tmp_path / "kw.csv"
    assert main(["compute", "--kind", "kw", "--t", "-0.2", "--preset", "figure1", "--out", str(out)]) == EXIT_OK
    header, cols, rows = read_csv(out)
    assert cols == ["T", "value"]
    assert len(rows) == 601
    assert header[0].startswith("# toa-lab ")
    assert "kind=kw" in header[1] and "norm_estimate=" in header[1]
    params = json.loads(header[2][len("# params="):])
    assert params["state"]["x0"] == -2.5 and params["apparatus"]["sigma"] == 0.1
    assert float(header[1].split("norm_estimate=")[1]) == pytest.approx(1.0, abs=1e-8)


def test_compute_kijowski_reports_norm(capsys):
    assert main(["compute", "--kind", "kijowski", "--preset", "figure1", "--grid=-0.5:1:7"]) == EXIT_OK
    text = capsys.readouterr().out
    norm = float(text.splitlines()[1].split("norm_estimate=")[1])
    assert norm == pytest.approx(1.0, abs=1e-6)
    assert '"norm_route": "energy_parseval"' in text


def test_compute_is_byte_identical(tmp_path):
    args = ["compute", "--kind", "j_tilde", "--preset", "figure1", "--grid=-1:1:41"]
    main(args + ["--out", str(tmp_path / "a.csv")])
    main(args + ["--out", str(tmp_path / "b.csv")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_compute_json(tmp_path, capsys):
    state = write_json(tmp_path, "s.json", {"type": "gaussian", "x0": -2.5, "k0": 3.0, "delta": 1.0})
    app = write_json(tmp_path, "a.json", {"type": "et", "spread_i": 1.0, "spread_f": 1.0})
    assert main(["compute", "--kind", "et_marginal", "--state", state, "--apparatus", app, "--grid=0:0.5:6",
                 "--format", "json"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["schema"] == 1 and doc["kind"] == "et_marginal" and len(doc["value"]) == 6


def test_compute_et_joint(tmp_path):
    out = tmp_path / "j.csv"
    state = write_json(tmp_path, "s.json", {"type": "gaussian", "x0": -2.5, "k0": 3.0, "delta": 1.0})
    app = write_json(tmp_path, "a.json", {"type": "et", "spread_i": 1.0, "spread_f": 1.0,
                                          "center_i": 3.0, "center_f": -3.0})
    assert main(["compute", "--kind", "et_joint", "--state", state, "--apparatus", app, "--grid=0:0.4:3",
                 "--energy-grid", "2:6:3", "--out", str(out)]) == EXIT_OK
    header, cols, rows = read_csv(out)
    assert cols == ["mu_E", "mu_T", "value"] and len(rows) == 9
    assert all(float(r[2]) >= 0 for r in rows)


# --------------------------------------------------------------------------- errors


def test_bad_grid_exit_2(capsys):
    assert main(["compute", "--preset", "figure1", "--grid", "0:1:1"]) == EXIT_CONFIG
    assert "grid.n" in capsys.readouterr().err


def test_missing_state_exit_2(capsys):
    assert main(["compute", "--kind", "kijowski"]) == EXIT_CONFIG
    assert "state" in capsys.readouterr().err


def test_kind_apparatus_mismatch(tmp_path, capsys):
    state = write_json(tmp_path, "s.json", {"type": "gaussian", "x0": -2.5, "k0": 3.0, "delta": 1.0})
    assert main(["compute", "--kind", "kw", "--state", state]) == EXIT_CONFIG
    assert "apparatus" in capsys.readouterr().err


def test_bad_json_reports_line(tmp_path, capsys):
    bad = tmp_path / "s.json"
    bad.write_text('{"type": "gaussian",\n "x0": }')
    assert main(["compute", "--state", str(bad)]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_bad_apparatus_field(tmp_path, capsys):
    state = write_json(tmp_path, "s.json", {"type": "gaussian", "x0": -2.5, "k0": 3.0, "delta": 1.0})
    app = write_json(tmp_path, "a.json", {"type": "et", "spread_i": -1.0, "spread_f": 1.0})
    assert main(["compute", "--kind", "et_marginal", "--state", state, "--apparatus", app]) == EXIT_CONFIG
    assert "spread_i" in capsys.readouterr().err


def test_numeric_failure_exit_3(tmp_path, capsys):
    state = write_json(tmp_path, "s.json", {"type": "gaussian", "x0": -2.5, "k0": 3.0, "delta": 1.0})
    app = write_json(tmp_path, "a.json", {"type": "et", "spread_i": 1.0, "spread_f": 1.0})
    out = tmp_path / "j.csv"
    # mu_T spacing of 1 cannot resolve the apparatus window
    assert main(["compute", "--kind", "et_joint", "--state", state, "--apparatus", app, "--grid=0:4:5",
                 "--energy-grid", "2:6:3", "--out", str(out)]) == EXIT_NUMERIC
    assert "numerical failure" in capsys.readouterr().err
    assert not out.exists()


def test_run_config_validation():
    st = GaussianPacket(0, 1, 1)
    with pytest.raises(ConfigError):
        RunConfig(st, kind="nope")
    with pytest.raises(ConfigError):
        RunConfig(st, kind="et_joint")
    with pytest.raises(ConfigError):
        RunConfig(st, kind="kijowski", fmt="xml")
    assert RunConfig(st, kind="kw", window=ApparatusWindow1D(0.5)).model is not None
    assert RunConfig(st, kind="kw", window=ApparatusWindow1D(0.5, 0.2)).model is None


def test_unknown_preset(capsys):
    assert main(["compute", "--preset", "nope"]) == EXIT_CONFIG
    assert "preset" in capsys.readouterr().err


# --------------------------------------------------------------------------- audit


def test_audit_report(tmp_path):
    state = write_json(tmp_path, "s.json", {"type": "gaussian", "x0": -2.5, "k0": 3.0, "delta": 1.0})
    out = tmp_path / "audit.json"
    code = main(["audit", "--state", state, "--grid=0:2:9", "--out", str(out)])
    report = json.loads(out.read_text())
    assert report["schema"] == 1
    checks = {c["name"]: c for c in report["checks"]}
    assert checks["kw_covariance"]["status"] == "expected-fail"
    assert checks["kw_covariance"]["residual"] > checks["kw_covariance"]["tolerance"]
    for name in ("j_tilde_covariance", "kijowski_covariance", "et_covariance", "et_marginal_vs_kijowski",
                 "kijowski_normalization", "kw_normalization"):
        assert checks[name]["status"] == "pass", name
    assert set(checks["kw_positivity"]) >= {"name", "residual", "tolerance", "pass"}
    assert code == (EXIT_OK if report["pass"] else EXIT_FAIL)
    assert report["pass"]


# --------------------------------------------------------------------------- figure


def test_figure1_golden_files_regenerate_byte_identically(tmp_path):
    for preset in ("figure1", "figure1-symmetric"):
        paths = cmd_figure1(tmp_path, preset)
        assert len(paths) == 3
        for path in paths:
            assert path.read_bytes() == (GOLDEN / path.name).read_bytes(), path.name


def test_figure1_cli(tmp_path, capsys):
    assert main(["figure1", "--out", str(tmp_path)]) == EXIT_OK
    names = sorted(Path(p).name for p in capsys.readouterr().out.split())
    assert names == ["figure1_j_tilde.csv", "figure1_kw_t-0.1.csv", "figure1_kw_t-0.2.csv"]
    header, cols, rows = read_csv(tmp_path / "figure1_kw_t-0.1.csv")
    assert cols == ["T", "value", "kind", "t"] and len(rows) == 601
    assert float(rows[0][0]) == -1.5 and float(rows[-1][0]) == 1.5


def test_compute_from_files(tmp_path, capsys):
    state = write_json(tmp_path, "s.json", {"type": "gaussian", "x0": -2.5, "k0": 3.0, "delta": 1.0})
    app = write_json(tmp_path, "a.json", {"type": "window", "sigma": 0.8})
    assert main(["compute", "--kind", "von_neumann", "--state", state, "--apparatus", app,
                 "--grid=0.5:1:3"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[3] == "T,value" and len(lines) == 4 + 3
    assert '"sigma": 0.8' in lines[2]
