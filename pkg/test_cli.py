import json

import pandas as pd
import pytest

from src.cli import EXIT_INPUT, EXIT_OK, RunManifest, main, parse_floats
from src.errors import ConfigError
from src.frame_io import read_trajectory


def generate(out, *extra):
    argv = ["generate", "--out", str(out), "--frames", "3", "--width", "64", "--height", "48", *extra]
    assert main(argv) == EXIT_OK
    return out


class TestGenerate:
    def test_layout(self, tmp_path):
        run = generate(tmp_path / "run")
        assert sorted(p.name for p in (run / "frames").iterdir()) == ["000000.pgm", "000001.pgm", "000002.pgm"]
        for name in ("map.smesh", "groundtruth.csv", "odometry.csv", "camera.json", "manifest.json"):
            assert (run / name).exists()
        ids, poses = read_trajectory(run / "groundtruth.csv")
        assert ids == [0, 1, 2]
        camera = json.loads((run / "camera.json").read_text())
        assert (camera["width"], camera["height"]) == (64, 48)

    def test_same_seed_same_files(self, tmp_path):
        a = generate(tmp_path / "a", "--seed", "4", "--noise-flip", "0.05")
        b = generate(tmp_path / "b", "--seed", "4", "--noise-flip", "0.05")
        for name in ("map.smesh", "groundtruth.csv", "odometry.csv", "frames/000002.pgm"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seed_changes_map(self, tmp_path):
        a = generate(tmp_path / "a", "--seed", "1")
        b = generate(tmp_path / "b", "--seed", "2")
        assert (a / "map.smesh").read_bytes() != (b / "map.smesh").read_bytes()

    def test_logits_format(self, tmp_path):
        run = generate(tmp_path / "run", "--format", "slog")
        assert len(list((run / "frames").glob("*.slog"))) == 3

    def test_manifest(self, tmp_path):
        run = generate(tmp_path / "run", "--seed", "7")
        manifest = RunManifest.read(run / "manifest.json")
        assert manifest.command == "generate"
        assert manifest.seeds["scene"] == 7
        assert manifest.outputs["frames"] == 3

    def test_replay(self, tmp_path):
        run = generate(tmp_path / "run")
        before = (run / "groundtruth.csv").read_bytes()
        (run / "groundtruth.csv").unlink()
        assert main(["replay", "--manifest", str(run / "manifest.json")]) == EXIT_OK
        assert (run / "groundtruth.csv").read_bytes() == before


class TestEval:
    def test_identical_trajectories(self, tmp_path):
        run = generate(tmp_path / "run")
        gt = str(run / "groundtruth.csv")
        out = tmp_path / "eval"
        assert main(["eval", "--gt", gt, "--est", gt, "--out-dir", str(out)]) == EXIT_OK

        errors = pd.read_csv(out / "errors.csv")
        assert len(errors) == 3
        assert errors["trans"].abs().max() == pytest.approx(0.0, abs=1e-9)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["trans"]["max"] == pytest.approx(0.0, abs=1e-9)
        assert summary["rot_deg"]["median"] == pytest.approx(0.0, abs=1e-5)
        cdf = pd.read_csv(out / "cdf_trans.csv")
        assert list(cdf.columns) == ["meters", "fraction"]
        assert cdf["fraction"].iloc[-1] == 1.0
        for name in ("cdf_rot.csv", "cdf_lat.csv", "cdf_lon.csv", "cdf_vert.csv", "manifest.json"):
            assert (out / name).exists()

    def test_bad_trajectory(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,trajectory\n1,2,3\n")
        assert main(["eval", "--gt", str(bad), "--est", str(bad), "--out-dir", str(tmp_path / "eval")]) == EXIT_INPUT

    def test_missing_file(self, tmp_path):
        missing = str(tmp_path / "missing.csv")
        assert main(["eval", "--gt", missing, "--est", missing, "--out-dir", str(tmp_path / "eval")]) == EXIT_INPUT


class TestLocalize:
    def test_missing_run_dir(self, tmp_path):
        assert main(["localize", "--run", str(tmp_path / "nowhere")]) == EXIT_INPUT

    def test_bad_init(self, tmp_path):
        run = generate(tmp_path / "run")
        assert main(["localize", "--run", str(run), "--init", "1 2 3", "--levels", "4"]) == EXIT_INPUT

    def test_frame_odometry_mismatch(self, tmp_path):
        run = generate(tmp_path / "run")
        (run / "frames" / "000002.pgm").unlink()
        assert main(["localize", "--run", str(run), "--levels", "4"]) == EXIT_INPUT

    @pytest.mark.slow
    def test_noise_free_run(self, tmp_path):
        run = tmp_path / "run"
        assert main(["generate", "--out", str(run), "--frames", "6", "--width", "320", "--height", "256"]) == EXIT_OK
        assert main(["localize", "--run", str(run), "--levels", "4", "--window", "3"]) == EXIT_OK
        ids, _ = read_trajectory(run / "estimate.csv")
        assert ids == list(range(6))
        out = tmp_path / "eval"
        assert main(["eval", "--gt", str(run / "groundtruth.csv"), "--est", str(run / "estimate.csv"),
                     "--out-dir", str(out)]) == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert summary["trans"]["max"] < 0.1


class TestPf:
    def test_runs_on_generated_scenario(self, tmp_path):
        run = generate(tmp_path / "run")
        assert main(["pf", "--run", str(run), "--particles", "4", "--out", str(tmp_path / "pf.csv")]) == EXIT_OK
        ids, poses = read_trajectory(tmp_path / "pf.csv")
        assert ids == [0, 1, 2]


def test_parse_floats():
    assert parse_floats("1, 2 3", 3, "--x") == [1.0, 2.0, 3.0]
    with pytest.raises(ConfigError):
        parse_floats("1 2", 3, "--x")
    with pytest.raises(ConfigError):
        parse_floats("a b c", 3, "--x")
