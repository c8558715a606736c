from __future__ import annotations

import csv
import json
import logging
import math

import pytest

from dtorus.cli import EXIT_ERROR, EXIT_OK, EXIT_UNSOLVABLE, run


@pytest.fixture(autouse=True)
def _reset_logging():
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if type(handler) in (logging.StreamHandler, logging.FileHandler):
            root.removeHandler(handler)
            handler.close()


def _rows(path):
    with path.open(newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def test_torus_csv_with_manifest(tmp_path):
    out = tmp_path / "torus.csv"
    assert run(["torus", "--system", "catalog:paper-2d", "--grid", "-1:1:5", "--out", str(out), "--jobs", "2"]) == EXIT_OK
    header, *rows = _rows(out)
    assert header == ["phi1", "u_1", "u_2", "residual_norm", "T", "tail_bound"]
    assert len(rows) == 5
    for row in rows:
        phi, u1, u2 = float(row[0]), float(row[1]), float(row[2])
        assert u1 == pytest.approx(-1 / (3 * math.cosh(phi) ** 2), abs=1e-6)
        assert u2 == pytest.approx(-1 / (2 * math.cosh(phi) ** 3), abs=1e-6)
        assert float(row[4]) == 40.0
    manifest = json.loads((tmp_path / "torus.csv.manifest.json").read_text(encoding="utf-8"))
    assert manifest["tool"] == "dtorus"
    assert manifest["options"]["grid"] == "-1:1:5"
    assert manifest["options"]["format"] == "csv"
    assert manifest["system"]["n"] == 2


def test_rerun_is_byte_identical(tmp_path):
    out = tmp_path / "torus.csv"
    argv = ["torus", "--system", "catalog:paper-2d", "--grid", "0:2:3", "--out", str(out), "--jobs", "1"]
    assert run(argv) == EXIT_OK
    first = out.read_bytes(), (tmp_path / "torus.csv.manifest.json").read_bytes()
    assert run(argv) == EXIT_OK
    assert (out.read_bytes(), (tmp_path / "torus.csv.manifest.json").read_bytes()) == first


def test_parallelism_does_not_change_results(tmp_path):
    outputs = []
    for jobs in ("1", "3"):
        out = tmp_path / f"torus-{jobs}.csv"
        assert run(["torus", "--system", "catalog:paper-2d", "--grid", "-2:2:6", "--out", str(out), "--jobs", jobs]) == EXIT_OK
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_torus_json_to_stdout(capsys):
    assert run(["torus", "--system", "catalog:paper-2d", "--grid", "0:1:2", "--jobs", "1"]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    summary = payload["summary"]
    assert summary["points"] == 2
    assert summary["mode"] == ["one", "two"]
    assert summary["known_torus_max_error"] <= 1e-6
    assert payload["points"][0]["solvable"] is True
    assert payload["manifest"]["options"]["command"] == "torus"


def test_unsolvable_torus_exits_2(capsys):
    code = run(["torus", "--system", "catalog:paper-2d", "--forcing", "1=1", "--grid", "0:1:2", "--glue", "one,two", "--jobs", "1"])
    assert code == EXIT_UNSOLVABLE
    summary = json.loads(capsys.readouterr().out)["summary"]
    assert summary["unsolvable_points"] == [0, 1]
    assert summary["known_torus_max_error"] is None


def test_solvability_negative_verdict(capsys):
    code = run(["solvability", "--system", "catalog:paper-2d", "--forcing", "1=1", "--variant", "one"])
    assert code == EXIT_UNSOLVABLE
    payload = json.loads(capsys.readouterr().out)
    (report,) = payload["reports"]
    assert report["variant"] == "one"
    assert report["residual_norm"] == pytest.approx(math.pi, abs=1e-4)
    assert report["solvable"] is False
    assert report["xi"] is None


def test_solvability_both_variants(capsys):
    code = run(["solvability", "--system", "catalog:paper-2d", "--phi", "-0.5", "--c", "1,2"])
    assert code == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert [r["variant"] for r in payload["reports"]] == ["one", "two"]
    assert all(r["solvable"] for r in payload["reports"])
    assert payload["reports"][0]["xi"] == [1.0, 2.0]
    assert payload["phi"] == [-0.5]
    assert payload["degeneracy"] == {"one": 1.0, "two": 1.0}
    assert len(payload["certificates"]) == 2


def test_forced_xi(capsys):
    code = run(["solvability", "--system", "catalog:paper-2d", "--forcing", "1=1", "--variant", "one", "--force"])
    assert code == EXIT_UNSOLVABLE
    (report,) = json.loads(capsys.readouterr().out)["reports"]
    assert report["xi"] is not None


def test_analyze_paper_2d(capsys):
    assert run(["analyze", "--system", "catalog:paper-2d", "--seed", "7"]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    critical = payload["critical"]
    assert critical["rank"] == 0
    assert critical["D"] == [[0.0, 0.0], [0.0, 0.0]]
    assert critical["regime"] == "critical"
    assert payload["projectors"]["estimated"] is False
    sides = [c["side"] for c in payload["certificates"]]
    assert sides == ["plus", "minus"]
    assert all(c["alpha"] > 0 for c in payload["certificates"])
    assert payload["flow"]["cocycle_check"]["seed"] == 7
    check = payload["flow"]["cocycle_check"]
    assert check["max_relative_defect"] <= 1e-6
    assert check["max_abs_defect"] >= check["max_relative_defect"]
    assert payload["flow"]["omega_forward_end"][0][0] == pytest.approx(math.cosh(10.0), rel=1e-8)


def test_analyze_short_span_skips_certificates(capsys):
    assert run(["analyze", "--system", "catalog:paper-2d", "--span", "-1:1"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["certificates"] == []


def test_analyze_system_file(tmp_path, capsys):
    path = tmp_path / "scalar.json"
    path.write_text(json.dumps({"m": 1, "n": 1, "a": ["1"], "P": [["-1"]], "f": ["sin(phi)"]}), encoding="utf-8")
    assert run(["analyze", "--system", str(path), "--span", "-20:20", "--estimate-projectors"]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["projectors"]["estimated"] is True
    assert payload["critical"]["regime"] == "regular"


def test_verify_backward(capsys):
    code = run(["verify", "--system", "catalog:paper-2d", "--grid", "-1:1:3", "--t-star", "-2", "--jobs", "1"])
    assert code == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["summary"]["t_star"] == -2.0
    assert payload["summary"]["invariance_defect"] <= 1e-5
    assert len(payload["defects"]) == 3
    assert max(payload["shifted_residuals"]) <= 1e-8


def test_ramp_csv(tmp_path):
    out = tmp_path / "ramp.csv"
    assert run(["ramp", "--Ns", "3,5", "--phi", "0.5", "--out", str(out), "--jobs", "2"]) == EXIT_OK
    header, first, second = _rows(out)
    assert header == ["N", "u_1", "u_2", "u_3", "u_4", "u_5", "residual_norm", "known_error", "max_change"]
    assert first[0] == "3" and first[4:6] == ["", ""] and first[-1] == ""
    assert second[0] == "5" and float(second[-1]) <= 1e-9
    assert float(second[1]) == pytest.approx(-1 / (3 * math.cosh(0.5) ** 2), abs=1e-9)
    assert (tmp_path / "ramp.csv.manifest.json").exists()


def test_ramp_needs_the_l2_catalog(capsys):
    assert run(["ramp", "--system", "catalog:paper-2d"]) == EXIT_ERROR
    assert "paper-l2" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv, message",
    [
        (["torus", "--system", "catalog:paper-2d", "--bogus"], "unrecognized arguments"),
        (["torus"], "needs --system"),
        (["torus", "--system", "missing.json"], "not found"),
        (["torus", "--system", "catalog:nope"], "unknown catalog name"),
        (["torus", "--system", "catalog:paper-2d", "--variant", "one", "--glue", "auto"], "mutually exclusive"),
        (["torus", "--system", "catalog:paper-2d", "--grid", "0:1"], "lo:hi:count"),
        (["solvability", "--system", "catalog:paper-2d", "--forcing", "x=1"], "1-based"),
        (["solvability", "--system", "catalog:paper-2d", "--phi", "0,1"], "m=1"),
        (["torus", "--system", "catalog:paper-2d", "--glue", "one"], "entries"),
        (["frobnicate"], "invalid choice"),
    ],
)
def test_errors_exit_1(argv, message, capsys):
    assert run(argv) == EXIT_ERROR
    assert message in capsys.readouterr().err


def test_help_exits_cleanly(capsys):
    assert run(["--help"]) == EXIT_OK
    assert "torus" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["--help"], ["torus", "--help"], ["solvability", "--help"]])
def test_help_documents_unary_minus_precedence(argv, capsys):
    assert run(argv) == EXIT_OK
    out = capsys.readouterr().out
    assert "binds tighter than unary minus" in out
    assert "-2^2 = -4" in out


def test_jobs_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("DTORUS_JOBS", "3")
    assert run(["torus", "--system", "catalog:paper-2d", "--grid", "0:0:1"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["manifest"]["options"]["jobs"] == 3


def test_bad_jobs_environment(monkeypatch, capsys):
    monkeypatch.setenv("DTORUS_JOBS", "many")
    assert run(["torus", "--system", "catalog:paper-2d", "--grid", "0:0:1"]) == EXIT_ERROR
    assert "DTORUS_JOBS" in capsys.readouterr().err


def test_log_file_from_environment(monkeypatch, tmp_path, capsys):
    log_file = tmp_path / "logs" / "run.log"
    monkeypatch.setenv("DTORUS_LOG_FILE", str(log_file))
    assert run(["solvability", "--system", "catalog:paper-2d", "--variant", "two"]) == EXIT_OK
    capsys.readouterr()
    text = log_file.read_text(encoding="utf-8")
    assert "dtorus.cli" in text and "solvability variant=two" in text
