"""Command-line interface: subcommands, exit codes and output files."""

import json
import subprocess
import sys

import numpy as np
import pytest

from weakflow.cli import main

SMALL_TRAIN = """\
geometry:
  kind: circular_pipe
physics:
  inlet: poiseuille
sampling:
  n_inlet: 20
  n_outlet: 20
  n_wall: 50
  n_interior: 200
  batch_size: 100
  chunk_size: 64
cv:
  n_large: 2
  n_medium: 4
  n_small: 6
  n_sphere_draws: 128
  wall_pool_size: 20000
  skeleton_seeds: 64
optim:
  epochs: 4
  t_switch: 2
  checkpoint_every: 2
model:
  width: 16
  depth: 2
seed: 5
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "c.yaml").write_text(SMALL_TRAIN)
    assert main(["train", "--config", str(root / "c.yaml"), "--out", str(root / "run")]) == 0
    return root


class TestSelftest:
    def test_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "weakflow.cli", "selftest", "--trials", "20"],
                             capture_output=True, text=True)
        assert res.returncode == 0, res.stdout + res.stderr
        lines = res.stdout.strip().splitlines()
        assert len(lines) == 5 and all(line.startswith("PASS") for line in lines)


class TestPlace:
    def test_gyroid_outputs(self, tmp_path, capsys):
        assert main(["place", "--geometry", "gyroid", "--out", str(tmp_path / "p")]) == 0
        out = tmp_path / "p"
        for s in ("large", "medium", "small"):
            c = np.loadtxt(out / f"centers_{s}.csv", delimiter=",", skiprows=1, ndmin=2)
            assert c.shape == ({"large": 40, "medium": 200, "small": 500}[s], 3)
        radii = json.loads((out / "radii.json").read_text())["radii"]
        assert radii == {"r_L": 1.0, "r_M": 0.5, "r_S": 0.25}
        assert "radii.json" in capsys.readouterr().out


class TestErrors:
    def test_train_without_geometry(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path / "r")]) == 1
        err = capsys.readouterr().err
        assert err.startswith("config error") and "geometry.kind" in err

    def test_non_empty_out(self, tmp_path, capsys):
        (tmp_path / "keep.txt").write_text("x")
        assert main(["inspect-geometry", "--geometry", "circular_pipe", "--out", str(tmp_path)]) == 1
        assert "--force" in capsys.readouterr().err
        assert main(["inspect-geometry", "--geometry", "circular_pipe", "--out", str(tmp_path), "--force"]) == 0

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main(["fly"])
        assert exc.value.code == 2

    def test_unknown_config_key(self, tmp_path, capsys):
        (tmp_path / "c.yaml").write_text("cv:\n  n_huge: 1\n")
        assert main(["inspect-geometry", "--config", str(tmp_path / "c.yaml"), "--geometry", "gyroid"]) == 1
        assert "unknown config key 'cv.n_huge'" in capsys.readouterr().err

    def test_missing_checkpoint(self, tmp_path, capsys):
        assert main(["eval", "--geometry", "circular_pipe", "--checkpoint", str(tmp_path / "none.ckpt")]) == 1
        assert capsys.readouterr().err.startswith("io error")


class TestInspect:
    def test_pipe_areas(self, capsys):
        assert main(["inspect-geometry", "--geometry", "circular_pipe"]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["kind"] == "circular_pipe"
        assert info["wall_area"] == pytest.approx(2 * np.pi * 0.4 * 5, rel=0.01)
        assert info["fluid_volume_fraction"] == pytest.approx(np.pi * 0.16, rel=0.02)


class TestTrainEval:
    def test_run_directory(self, trained):
        run = trained / "run"
        for name in ("config.yaml", "manifest.json", "run.log", "loss_log.csv", "model_final.ckpt"):
            assert (run / name).exists(), name
        manifest = json.loads((run / "manifest.json").read_text())
        assert manifest["seeds"]["init"] == 9

    def test_eval_reference(self, trained, capsys):
        out = trained / "ev"
        rc = main(["eval", "--checkpoint", str(trained / "run" / "model_final.ckpt"), "--grid", "6",
                   "--reference", "hagen-poiseuille", "--stations", "4", "--samples", "256", "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "eval.json").read_text())
        assert report["geometry"] == "circular_pipe"
        assert np.isfinite(report["errors"]["rel_l2_speed"])
        assert len(report["mass_flow"]["ratio"]) == 4
        rows = (out / "mass_flow.csv").read_text().splitlines()
        assert rows[0] == "x,Q,Q_over_Qin,stderr" and len(rows) == 5
        assert all(np.isfinite(float(v)) for v in rows[1].split(","))
        assert (out / "mass_flow.svg").exists() and (out / "field.csv").exists()

    def test_eval_csv_reference(self, trained, capsys):
        from weakflow.evaluation import load_field_csv

        out = trained / "ev2"
        main(["eval", "--checkpoint", str(trained / "run" / "model_final.ckpt"), "--grid", "6",
              "--stations", "2", "--samples", "64", "--out", str(out)])
        out3 = trained / "ev3"
        rc = main(["eval", "--checkpoint", str(trained / "run" / "model_final.ckpt"),
                   "--reference", f"csv:{out / 'field.csv'}", "--stations", "2", "--samples", "64",
                   "--out", str(out3)])
        assert rc == 0
        # the model compared against its own export has zero error
        report = json.loads((out3 / "eval.json").read_text())
        assert report["errors"]["mse_speed"] == 0.0 and report["errors"]["mse_p"] == 0.0
        assert len(load_field_csv(out3 / "field.csv")[0]) == report["grid"]["n_points"]
