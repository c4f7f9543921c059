import csv
import io
import subprocess
import sys

import pytest

from busarrival.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out-dir", d / "data", "--seed", 7, "--sections", 16, "--gps-days", 1) == 0
    assert run("fit", "--series", d / "data" / "series.csv", "--out-dir", d / "models") == 0
    return d


def _trace(capsys):
    out = capsys.readouterr().out
    return list(csv.DictReader(io.StringIO(out)))


def test_synth_outputs(fixture_dir):
    names = {p.name for p in (fixture_dir / "data").iterdir()}
    assert {"series.csv", "gps.csv", "gps.cfg"} <= names


def test_fit_is_byte_identical(fixture_dir, tmp_path):
    assert run("fit", "--series", fixture_dir / "data" / "series.csv", "--out-dir", tmp_path) == 0
    for name in ("sar_models.csv", "nsar_models.csv"):
        assert (tmp_path / name).read_bytes() == (fixture_dir / "models" / name).read_bytes()


@pytest.mark.parametrize("model", ["sar", "nsar"])
def test_predict_afternoon_trace_pattern(fixture_dir, capsys, model):
    capsys.readouterr()
    code = run(
        "predict", "--series", fixture_dir / "data" / "series.csv", "--models-dir", fixture_dir / "models",
        "--at", 2, "--time", "14:30:00", "--to-stop", 16, "--model", model,
    )
    assert code == 0
    rows = _trace(capsys)
    assert [int(r["section"]) for r in rows] == list(range(3, 17))
    fut = [int(r["futstep"]) for r in rows]
    assert fut[:3] == [1, 1, 1] and fut[3:7] == [2, 2, 2, 2]
    assert all(int(r["exp_bin"]) == 10 + int(r["futstep"]) for r in rows)


def test_ingest_then_diagnose_and_evaluate(fixture_dir, tmp_path):
    data = fixture_dir / "data"
    assert run("ingest", "--gps", data / "gps.csv", "--config", data / "gps.cfg", "--out-dir", tmp_path / "ing") == 0
    assert (tmp_path / "ing" / "series.csv").exists() and (tmp_path / "ing" / "records.csv").exists()
    assert run("diagnose", "--series", data / "series.csv", "--out-dir", tmp_path / "diag", "--svg") == 0
    assert (tmp_path / "diag" / "tests.csv").read_text().startswith("section,test,statistic,p_value,decision\n")
    assert (tmp_path / "diag" / "acf_section001.svg").exists()
    code = run("evaluate", "--series", data / "series.csv", "--out-dir", tmp_path / "ev",
               "--methods", "sar,nsar,historical_average,exp_smoothing", "--no-eta")
    assert code == 0
    ext = run("evaluate", "--series", data / "series.csv", "--out-dir", tmp_path / "ev2",
              "--methods", "historical_average", "--external", tmp_path / "ev" / "predictions.csv", "--no-eta")
    assert ext == 0
    methods = {r["method"] for r in csv.DictReader(open(tmp_path / "ev2" / "report.csv"))}
    assert {"historical_average", "sar", "nsar"} <= methods


def test_usage_errors_exit_one(fixture_dir, tmp_path, capsys):
    assert run("bogus") == 1
    assert run("fit", "--series", "x") == 1  # missing --out-dir
    assert run("fit", "--series", fixture_dir / "data" / "series.csv", "--out-dir", tmp_path, "--set", "nope=1") == 1
    err = capsys.readouterr().err
    assert "valid keys" in err and "section_length" in err
    assert run("predict", "--series", "s", "--models-dir", "m", "--at", 5, "--time", "14:30", "--to-stop", 3) == 1
    assert run("evaluate", "--series", fixture_dir / "data" / "series.csv", "--out-dir", tmp_path, "--methods", "zzz") == 1


def test_data_errors_exit_two(fixture_dir, tmp_path):
    assert run("fit", "--series", tmp_path / "missing.csv", "--out-dir", tmp_path) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("device_id,timestamp,lat,lon\nbus,notatime,1,2\n")
    assert run("ingest", "--gps", bad, "--out-dir", tmp_path / "o") == 2
    assert run("fit", "--series", fixture_dir / "data" / "series.csv", "--out-dir", tmp_path, "--set", "train_days=40") == 2
    assert run("predict", "--series", fixture_dir / "data" / "series.csv", "--models-dir", tmp_path / "none",
               "--at", 2, "--time", "14:30", "--to-stop", 5) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "busarrival", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "synth" in proc.stdout
