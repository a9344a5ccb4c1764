import json

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from slideprobe.cli import main
from slideprobe.fixtures import FIXTURE_DATASET_ID, GRADIENT_SLIDE_ID


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One data dir per module, with fixtures generated through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    result = CliRunner().invoke(
        main, ["--data-dir", str(root / "data"), "make-fixtures"]
    )
    assert result.exit_code == 0, result.output
    return root


def run(workdir, *args, expect_ok=True):
    result = CliRunner().invoke(
        main, ["--data-dir", str(workdir / "data"), *args]
    )
    if expect_ok:
        assert result.exit_code == 0, result.output
    return result


class TestIngest:
    def test_ingest_reports_slide_id(self, workdir, tmp_path):
        raster = np.random.default_rng(0).integers(0, 256, (64, 64, 3), np.uint8)
        path = tmp_path / "tiny.png"
        Image.fromarray(raster).save(path)
        result = run(workdir, "ingest", str(path), "--mpp", "1.0", "--id", "tiny")
        assert result.output.strip() == "tiny"

    def test_duplicate_id_exits_nonzero(self, workdir, tmp_path):
        raster = np.zeros((16, 16, 3), np.uint8)
        path = tmp_path / "dup.png"
        Image.fromarray(raster).save(path)
        run(workdir, "ingest", str(path), "--mpp", "1.0", "--id", "cli-dup")
        result = run(workdir, "ingest", str(path), "--mpp", "1.0", "--id", "cli-dup",
                     expect_ok=False)
        assert result.exit_code == 1


class TestScoreAndSweep:
    def test_score_human_output(self, workdir):
        result = run(workdir, "score", GRADIENT_SLIDE_ID, "--x", "1024", "--y", "256")
        assert result.output.startswith("logit ")

    def test_score_json_output(self, workdir):
        result = run(workdir, "--json", "score", GRADIENT_SLIDE_ID,
                     "--x", "1024", "--y", "256")
        body = json.loads(result.output)
        assert "logit" in body and "saliency" in body

    def test_sweep_prints_logit_sequence(self, workdir):
        result = run(workdir, "sweep", GRADIENT_SLIDE_ID,
                     "--x", "150", "--y", "256", "--steps", "3")
        assert result.output.startswith("trace ")
        assert len(result.output.split(": ")[1].split()) == 4

    def test_sweep_csv_export(self, workdir, tmp_path):
        csv_path = tmp_path / "trace.csv"
        run(workdir, "sweep", GRADIENT_SLIDE_ID, "--x", "150", "--y", "256",
            "--steps", "2", "--csv", str(csv_path))
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "index,x,y,logit"
        assert len(lines) == 4

    def test_unknown_slide_fails_with_json_error(self, workdir):
        result = run(workdir, "--json", "score", "ghost", "--x", "1", "--y", "1",
                     expect_ok=False)
        assert result.exit_code == 1
        err = json.loads(result.output.strip().splitlines()[-1])
        assert err["status"] == 404


class TestEval:
    def test_eval_writes_result_files(self, workdir, tmp_path):
        out = tmp_path / "results"
        result = run(workdir, "eval",
                     "--dataset", FIXTURE_DATASET_ID,
                     "--explanations", "tumor_lymphocyte,cow_camel",
                     "--boot", "100", "--seed", "7", "--out", str(out))
        assert "| Explanation |" in result.output
        assert (out / "tumor_lymphocyte.json").exists()
        assert (out / "cow_camel_samples.csv").exists()
        assert (out / "comparison.md").exists()

    def test_eval_rerun_is_byte_identical(self, workdir, tmp_path):
        args = ["eval", "--dataset", FIXTURE_DATASET_ID,
                "--explanations", "tumor_lymphocyte,tumor_lymphocyte_inverse",
                "--vlm", "mock", "--boot", "100", "--seed", "7"]
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run(workdir, *args, "--out", str(out_a))
        run(workdir, *args, "--out", str(out_b))
        for name in ("tumor_lymphocyte.json", "tumor_lymphocyte_inverse.json",
                     "comparison.md"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_eval_dataset_from_file(self, workdir, tmp_path):
        ds = {
            "id": "cli-mini",
            "items": [
                {"patch_ref": "fixture:tumor_solid#0", "mil_logit": 2.0},
                {"patch_ref": "fixture:tumor_solid#1", "mil_logit": 1.5},
                {"patch_ref": "fixture:lymphocytes#0", "mil_logit": -2.0},
                {"patch_ref": "fixture:lymphocytes#1", "mil_logit": -1.0},
            ],
        }
        path = tmp_path / "ds.json"
        path.write_text(json.dumps(ds))
        out = tmp_path / "results"
        run(workdir, "eval", "--dataset", str(path),
            "--explanations", "tumor_lymphocyte,cow_camel",
            "--thresholds", "0", "--boot", "50", "--out", str(out))
        assert (out / "tumor_lymphocyte.json").exists()

    def test_unknown_explanation_fails(self, workdir, tmp_path):
        result = run(workdir, "eval", "--dataset", FIXTURE_DATASET_ID,
                     "--explanations", "tumor_lymphocyte,ghost",
                     "--out", str(tmp_path / "x"), expect_ok=False)
        assert result.exit_code == 1


class TestMakeFixtures:
    def test_idempotent(self, workdir):
        first = run(workdir, "--json", "make-fixtures")
        second = run(workdir, "--json", "make-fixtures")
        assert json.loads(first.output) == json.loads(second.output)
