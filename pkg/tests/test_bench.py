import csv
import json

import jsonschema
import pytest

from structmg.bench import (
    CSV_COLUMNS,
    BenchConfig,
    load_config_file,
    main,
    report_schema,
    run_experiment,
    sweep,
    write_reports,
)


@pytest.fixture(scope="module")
def laplace_report():
    return run_experiment(BenchConfig(problem="laplace", n=32))


def test_laplace_report(laplace_report):
    r = laplace_report
    assert r.converged and r.iterations <= 20 and r.error is None
    assert r.C_G == pytest.approx(1.14, abs=0.01)
    assert len(r.history) == r.iterations + 1
    assert r.T_tot >= r.T_setup + r.iterations * r.T_single - 1e-6
    assert len(r.x_hash) == 64


def test_repeat_and_threads_same_hash(laplace_report):
    again = run_experiment(BenchConfig(problem="laplace", n=32))
    threaded = run_experiment(BenchConfig(problem="laplace", n=32, threads=4))
    assert again.x_hash == laplace_report.x_hash == threaded.x_hash
    assert again.iterations == laplace_report.iterations == threaded.iterations


@pytest.mark.parametrize(
    "bad",
    [dict(problem="heat"), dict(n=1), dict(solver="bicg"), dict(tol=-1.0),
     dict(strides="2,2"), dict(threads=0), dict(smoother="sor")],
)
def test_config_validation(bad):
    with pytest.raises(ValueError, match="invalid config"):
        BenchConfig(**bad)


@pytest.fixture(scope="module")
def ablation():
    return sweep(
        dict(n=24, eps=None),
        {"smoother": ["pgs", "lgs", "ilu"], "problem": ["laplace", "aniso", "skew"]},
    )


def test_sweep_rows_and_trends(ablation):
    assert len(ablation) == 9
    assert all(r.error is None and r.converged for r in ablation)
    it = {(r.config["smoother"], r.config["problem"]): r.iterations for r in ablation}
    assert it["lgs", "aniso"] < it["pgs", "aniso"]
    assert it["ilu", "skew"] <= it["lgs", "skew"]


def test_sweep_records_errors():
    rows = sweep(dict(problem="laplace", n=6), {"n": ["6", "1"]})
    assert rows[0].error is None
    assert rows[1].error and "n" in rows[1].error


def test_outputs_csv_and_json(tmp_path, ablation):
    jpath = tmp_path / "r.json"
    write_reports(jpath, ablation)
    jsonschema.validate(json.loads(jpath.read_text()), report_schema())
    cpath = tmp_path / "r.csv"
    write_reports(cpath, ablation)
    with open(cpath) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 9 and list(rows[0]) == CSV_COLUMNS
    with pytest.raises(ValueError):
        write_reports(tmp_path / "r.txt", ablation)


def test_error_report_validates():
    bad = {"reports": [run_experiment(BenchConfig(n=4)).to_dict()]}
    bad["reports"][0]["config"]["n"] = 1
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(bad, report_schema())
    rows = sweep(dict(problem="laplace", n=6), {"n": ["1"]})
    jsonschema.validate({"reports": [r.to_dict() for r in rows]}, report_schema())


def test_config_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nproblem = aniso\nn = 10\ntol-mode = abs\neps = 0.01\n")
    assert load_config_file(p) == {"problem": "aniso", "n": 10, "tol_mode": "abs", "eps": 0.01}
    p.write_text("bogus = 1\n")
    with pytest.raises(ValueError):
        load_config_file(p)


def test_cli_run_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("problem = aniso\nn = 12\nsmoother = lgs\n")
    out = tmp_path / "r.json"
    assert main(["run", "--config", str(cfg), "--n", "8", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())["reports"][0]
    assert rep["config"]["n"] == 8 and rep["config"]["problem"] == "aniso"
    assert rep["config"]["smoother"] == "lgs"
    text = capsys.readouterr().out
    assert "C_G" in text and "8x8x8" in text


def test_cli_exit_codes(capsys):
    assert main(["run", "--n", "8"]) == 0
    assert main(["run", "--n", "16", "--maxiter", "2", "--tol", "1e-14"]) == 2
    assert main(["run", "--n", "1"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["run", "--smoother", "sor"])
    assert exc.value.code == 1
    assert main(["sweep", "--n", "8", "--vary", "smoother=pgs,jacobi"]) == 0
    assert main(["sweep", "--n", "8", "--vary", "n=8,1"]) == 1
    assert main(["sweep", "--n", "8", "--vary", "colour=red"]) == 1


def test_cli_gmres_fp32(capsys):
    assert main(["run", "--n", "8", "--solver", "gmres", "--precision", "fp32", "--tol", "1e-5"]) == 0


def test_sweep_strides_values(capsys):
    assert main(["sweep", "--n", "8", "--coarsest-size", "8", "--vary", "strides=2,2,2;1,1,2"]) == 0
    out = capsys.readouterr().out
    assert "strides=2,2,2" in out and "strides=1,1,2" in out


def test_dump_chains(capsys):
    assert main(["dump-chains", "--r", "3d8c", "--a", "3d7"]) == 0
    assert "56" in capsys.readouterr().out
    assert main(["dump-chains", "--r", "2d9v", "--a", "2d9", "--pseudo"]) == 0
    assert "AC[C]" in capsys.readouterr().out


def test_dump_schedule(capsys):
    assert main(["dump-schedule", "--pattern", "3d19", "--dims", "6,8,4", "--threads", "2"]) == 0
    out = capsys.readouterr().out
    assert out.strip()
    assert main(["dump-schedule", "--pattern", "3d7", "--direction", "backward"]) == 0
