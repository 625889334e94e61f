"""Command-line interface tests: parsing, exit codes, determinism, schemas."""

import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from easelect import PRESETS, RngStream, generate
from easelect.cli import main

SCHEMA_DIR = Path(__file__).resolve().parent.parent / "schemas"


def _schema_validator(name):
    from referencing import Registry, Resource

    resources = []
    for path in SCHEMA_DIR.glob("*.json"):
        schema = json.loads(path.read_text())
        res = Resource.from_contents(schema)
        resources.append((schema["$id"], res))
        resources.append((path.name, res))
    registry = Registry().with_resources(resources)
    target = json.loads((SCHEMA_DIR / name).read_text())
    return jsonschema.Draft7Validator(target, registry=registry)


def _write_csvs(tmp_path, seed=0, n=40, p=6, q=2, active=(2, 5)):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((p, n))
    b = np.zeros((q, p))
    b[:, np.asarray(active) - 1] = 4.0
    y = b @ x + rng.standard_normal((q, n))
    ypath, xpath = tmp_path / "y.csv", tmp_path / "x.csv"
    np.savetxt(ypath, y.T, delimiter=",")
    np.savetxt(xpath, x.T, delimiter=",")
    return str(ypath), str(xpath)


class TestFit:
    def test_recovers_planted_support(self, tmp_path):
        ypath, xpath = _write_csvs(tmp_path)
        out = tmp_path / "fit.json"
        code = main([
            "fit", "--y", ypath, "--x", xpath, "--epsilon", "0.5",
            "--steps", "2000", "--burnin", "500", "--seed", "3",
            "--out", str(out),
        ])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["map_model"] == [2, 5]
        _schema_validator("chain_summary.schema.json").validate(payload)

    def test_malformed_csv_exits_2(self, tmp_path, capsys):
        ypath, xpath = _write_csvs(tmp_path)
        bad = tmp_path / "bad.csv"
        lines = Path(xpath).read_text().splitlines()
        lines[4] = lines[4].replace(",", ",oops,", 1)
        bad.write_text("\n".join(lines) + "\n")
        code = main(["fit", "--y", ypath, "--x", str(bad), "--epsilon", "0.5"])
        assert code == 2
        assert "line 5" in capsys.readouterr().err

    def test_row_count_mismatch_exits_2(self, tmp_path):
        ypath, xpath = _write_csvs(tmp_path)
        trimmed = tmp_path / "short.csv"
        trimmed.write_text("\n".join(Path(ypath).read_text().splitlines()[:-2]) + "\n")
        assert main(["fit", "--y", str(trimmed), "--x", xpath, "--epsilon", "0.5"]) == 2

    def test_degenerate_epsilon_exits_3(self, tmp_path):
        ypath, xpath = _write_csvs(tmp_path)
        code = main([
            "fit", "--y", ypath, "--x", xpath, "--epsilon", "1e12",
            "--steps", "200", "--burnin", "50",
        ])
        assert code == 3

    def test_seed_determinism(self, tmp_path):
        ypath, xpath = _write_csvs(tmp_path)
        outs = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            code = main([
                "fit", "--y", ypath, "--x", xpath, "--epsilon", "0.5",
                "--steps", "1000", "--burnin", "200", "--seed", "11",
                "--out", str(out),
            ])
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_table_format(self, tmp_path, capsys):
        ypath, xpath = _write_csvs(tmp_path)
        code = main([
            "fit", "--y", ypath, "--x", xpath, "--epsilon", "0.5",
            "--steps", "800", "--burnin", "200", "--format", "table",
        ])
        assert code == 0
        text = capsys.readouterr().out
        assert "prob" in text and "acceptance_rate" in text


class TestTune:
    def test_bic_tune_and_schema(self, tmp_path):
        ypath, xpath = _write_csvs(tmp_path, seed=1)
        out = tmp_path / "tune.json"
        code = main([
            "tune", "--y", ypath, "--x", xpath, "--grid", "0.3:2:3",
            "--method", "bic", "--steps", "800", "--burnin", "200",
            "--seed", "5", "--out", str(out),
        ])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["method"] == "bic"
        assert len(payload["table"]) == 3
        _schema_validator("tuning_result.schema.json").validate(payload)

    def test_cv_tune(self, tmp_path):
        ypath, xpath = _write_csvs(tmp_path, seed=2)
        out = tmp_path / "cv.json"
        code = main([
            "tune", "--y", ypath, "--x", xpath, "--grid", "0.3:2:2",
            "--method", "cv", "--folds", "3", "--steps", "300",
            "--burnin", "50", "--final-steps", "600", "--final-burnin", "100",
            "--seed", "5", "--out", str(out),
        ])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["method"] == "cv"
        _schema_validator("tuning_result.schema.json").validate(payload)

    def test_grid_parsing_matches_protocols(self, tmp_path):
        from easelect.tuning import EpsilonGrid

        assert len(EpsilonGrid.parse("0.05:10:24")) == 24
        assert len(EpsilonGrid.parse("0.01:0.2:16")) == 16

    def test_bad_grid_exits_4(self, tmp_path):
        ypath, xpath = _write_csvs(tmp_path)
        assert main(["tune", "--y", ypath, "--x", xpath, "--grid", "oops"]) == 4


class TestSimulateAndSummarize:
    def test_simulate_roundtrip_full_precision(self, tmp_path):
        outdir = tmp_path / "sim"
        code = main(["simulate", "--preset", "ld-sparse", "--seed", "9",
                     "--out", str(outdir)])
        assert code == 0
        design = PRESETS["ld-sparse"]
        data, model, b0, v0 = generate(design, RngStream(9))
        y_read = np.loadtxt(outdir / "y.csv", delimiter=",")
        x_read = np.loadtxt(outdir / "x.csv", delimiter=",")
        assert np.array_equal(y_read.T, data.y)
        assert np.array_equal(x_read.T, data.x)
        truth = json.loads((outdir / "truth.json").read_text())
        assert truth["true_model"] == list(model)
        _schema_validator("dataset_truth.schema.json").validate(truth)

    def test_unknown_preset_exits_4(self, tmp_path):
        assert main(["simulate", "--preset", "nope", "--out", str(tmp_path / "x")]) == 4

    def test_summarize(self, tmp_path, capsys):
        ypath, xpath = _write_csvs(tmp_path)
        out = tmp_path / "fit.json"
        main([
            "fit", "--y", ypath, "--x", xpath, "--epsilon", "0.5",
            "--steps", "800", "--burnin", "200", "--out", str(out),
        ])
        capsys.readouterr()
        code = main(["summarize", str(out)])
        assert code == 0
        assert "prob" in capsys.readouterr().out

    def test_summarize_bad_file_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["summarize", str(bad)]) == 2


class TestBenchmark:
    def test_smoke_and_schema(self, tmp_path):
        out = tmp_path / "bench.json"
        code = main([
            "benchmark", "--preset", "ld-sparse", "--reps", "2", "--seed", "7",
            "--method", "fixed", "--epsilon", "0.5", "--steps", "600",
            "--burnin", "150", "--out", str(out),
        ])
        assert code == 0
        payload = json.loads(out.read_text())
        assert len(payload["results"]) == 2
        _schema_validator("benchmark_report.schema.json").validate(payload)

    def test_unknown_preset_exits_4(self):
        assert main(["benchmark", "--preset", "bogus", "--reps", "1"]) == 4

    def test_threads_byte_identical(self, tmp_path):
        blobs = []
        for name, threads in (("t1.json", "1"), ("t2.json", "2")):
            out = tmp_path / name
            code = main([
                "benchmark", "--preset", "ld-sparse", "--reps", "2",
                "--seed", "7", "--method", "fixed", "--epsilon", "0.5",
                "--steps", "400", "--burnin", "100", "--threads", threads,
                "--out", str(out),
            ])
            assert code == 0
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]


def test_unknown_flag_exits_4():
    assert main(["fit", "--nonsense"]) == 4
