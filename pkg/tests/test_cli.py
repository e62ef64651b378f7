"""Command-line surface: full mini pipeline, exit codes, idempotence."""

import json

import numpy as np
import pytest

from splatcast.cli import main
from splatcast.pipeline import read_metrics_csv
from splatcast.scene import TrajectorySet


def run(args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One tiny scene + trained models shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    scene_dir = root / "scene"
    assert run(["generate-scene", "--preset", "circular", "--gaussians", 12,
                "--frames", 20, "--split", 0.8, "--out", scene_dir,
                "--seed", 7, "--image-size", 32]) == 0
    cfg = {
        "interp": {"time_octaves": 4, "space_octaves": 2, "hidden": 32, "depth": 2},
        "interp_train": {"epochs": 120, "times_per_batch": 8, "lr": 3e-3,
                         "dtype": "float32", "target_l1": 1e-3},
        "sampler": {"n_context": 8, "n_target": 4, "context_span": 0.4},
        "model": {"d_model": 16, "n_heads": 2, "n_layers": 1, "d_ff": 32,
                  "d_latent": 8, "ode_hidden": 16, "ode_layers": 2,
                  "dec_hidden": 16, "dec_layers": 2, "dtype": "float32"},
        "train": {"batch_size": 12, "epochs": 3, "lr_max": 5e-3, "seed": 0},
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    assert run(["train-interp", "--truth", scene_dir / "truth_train.ogtj",
                "--out", root / "interp.ckpt", "--config", cfg_path,
                "--seed", 0]) == 0
    assert run(["train-forecast", "--interp", root / "interp.ckpt",
                "--out", root / "forecaster.ckpt", "--config", cfg_path,
                "--log", root / "train_log.csv"]) == 0
    return root, scene_dir, cfg_path


def test_train_interp_from_scene_spec(workdir, tmp_path):
    _, scene_dir, cfg_path = workdir
    out = tmp_path / "interp_scene.ckpt"
    assert run(["train-interp", "--scene", scene_dir / "scene.json",
                "--frames", 20, "--split", 0.8,
                "--out", out, "--config", cfg_path, "--epochs", 3,
                "--seed", 0]) == 0
    assert out.exists()
    # exactly one of --scene / --truth must be given
    assert run(["train-interp", "--out", tmp_path / "x.ckpt"]) == 2


def test_train_forecast_writes_epoch_checkpoints(workdir):
    root, _, _ = workdir
    epochs_dir = root / "forecaster.epochs"
    assert sorted(epochs_dir.glob("epoch_*.ckpt"))


def test_generate_scene_counts(workdir):
    _, scene_dir, _ = workdir
    index = json.loads((scene_dir / "frames" / "index.json").read_text())
    assert len(index) == 20
    assert sum(1 for e in index if e["split"] == "train") == 16
    assert sum(1 for e in index if e["split"] == "eval") == 4
    ts = [e["t"] for e in index]
    assert all(b > a for a, b in zip(ts, ts[1:]))


def test_generate_scene_deterministic(tmp_path):
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert run(["generate-scene", "--preset", "linear", "--gaussians", 5,
                    "--frames", 6, "--split", 0.5, "--out", out,
                    "--seed", 3, "--image-size", 24]) == 0
        outs.append(out)
    for rel in ("scene.json", "truth.ogtj", "frames/train_0000.ppm"):
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()


def test_generate_scene_zero_gaussians_usage_error(tmp_path):
    assert run(["generate-scene", "--preset", "circular", "--gaussians", 0,
                "--frames", 4, "--split", 0.5, "--out", tmp_path / "x"]) == 2


def test_generate_scene_bad_preset_usage_error(tmp_path):
    assert run(["generate-scene", "--preset", "warp", "--gaussians", 4,
                "--frames", 4, "--split", 0.5, "--out", tmp_path / "x"]) == 2


def test_extrapolate_and_render_and_evaluate(workdir, tmp_path):
    root, scene_dir, cfg_path = workdir
    pred = tmp_path / "pred.ogtj"
    assert run(["extrapolate", "--interp", root / "interp.ckpt",
                "--forecaster", root / "forecaster.ckpt",
                "--out", pred, "--times", "0.82,0.9,1.0"]) == 0
    traj = TrajectorySet.load(pred)
    assert traj.timestamps.size == 3 and traj.num_gaussians == 12

    frames_dir = tmp_path / "frames"
    assert run(["render", "--trajectory", pred, "--scene",
                scene_dir / "scene.json", "--out", frames_dir]) == 0
    assert sorted(frames_dir.glob("frame_*.ppm"))

    csv_path = tmp_path / "metrics.csv"
    assert run(["evaluate", "--trajectory", pred, "--scene",
                scene_dir / "scene.json", "--out", csv_path,
                "--variant", "deterministic"]) == 0
    rows = read_metrics_csv(csv_path)
    assert len(rows) == 3
    assert all(r.variant == "deterministic" for r in rows)


def test_extrapolate_arbitrary_times_off_grid(workdir, tmp_path):
    root, _, _ = workdir
    pred = tmp_path / "odd.ogtj"
    assert run(["extrapolate", "--interp", root / "interp.ckpt",
                "--forecaster", root / "forecaster.ckpt",
                "--out", pred, "--times", "0.8123,0.8777,0.95111"]) == 0
    traj = TrajectorySet.load(pred)
    np.testing.assert_allclose(traj.timestamps, [0.8123, 0.8777, 0.95111],
                               atol=1e-9)


def test_extrapolate_boundary_matches_interp_query(workdir, tmp_path):
    # prediction decoded at the window end should be close to the frozen
    # interpolation state there, within training error
    root, _, _ = workdir
    from splatcast.interp import load_interp
    interp = load_interp(root / "interp.ckpt")
    pred = tmp_path / "edge.ogtj"
    assert run(["extrapolate", "--interp", root / "interp.ckpt",
                "--forecaster", root / "forecaster.ckpt",
                "--out", pred, "--times", f"{interp.t_max!r}"]) == 0
    traj = TrajectorySet.load(pred)
    ref = interp.query(interp.t_max)
    gap = np.abs(traj.params[:, 0, :] - ref).mean()
    log = (root / "train_log.csv").read_text().strip().splitlines()
    final_loss = float(log[-1].split(",")[1])
    assert np.isfinite(gap)
    assert gap < max(5.0 * final_loss, 0.5)


def test_extrapolate_timestamp_baseline_variant(workdir, tmp_path):
    root, _, _ = workdir
    pred = tmp_path / "ood.ogtj"
    assert run(["extrapolate", "--interp", root / "interp.ckpt",
                "--variant", "timestamp-baseline",
                "--out", pred, "--times", "0.85,0.95"]) == 0
    assert TrajectorySet.load(pred).timestamps.size == 2


def test_extrapolate_autoregressive_variant(workdir, tmp_path):
    root, _, _ = workdir
    pred = tmp_path / "ar.ogtj"
    assert run(["extrapolate", "--interp", root / "interp.ckpt",
                "--forecaster", root / "forecaster.ckpt",
                "--variant", "autoregressive",
                "--out", pred, "--horizon", 0.2, "--steps", 4]) == 0
    assert TrajectorySet.load(pred).timestamps.size == 4


def test_evaluate_identical_trajectories_maxes_metrics(workdir, tmp_path):
    _, scene_dir, _ = workdir
    truth = TrajectorySet.load(scene_dir / "truth.ogtj")
    sub = TrajectorySet(truth.timestamps[16:], truth.params[:, 16:])
    pred = tmp_path / "exact.ogtj"
    sub.save(pred)
    csv_path = tmp_path / "exact.csv"
    assert run(["evaluate", "--trajectory", pred, "--scene",
                scene_dir / "scene.json", "--out", csv_path]) == 0
    for r in read_metrics_csv(csv_path):
        assert r.psnr == 99.0
        assert r.ssim == pytest.approx(1.0, abs=1e-9)


def test_plot_emits_figure(workdir, tmp_path):
    root, scene_dir, _ = workdir
    pred = tmp_path / "pred.ogtj"
    run(["extrapolate", "--interp", root / "interp.ckpt",
         "--forecaster", root / "forecaster.ckpt",
         "--out", pred, "--times", "0.85,0.95"])
    csv_path = tmp_path / "m.csv"
    run(["evaluate", "--trajectory", pred, "--scene", scene_dir / "scene.json",
         "--out", csv_path, "--variant", "deterministic"])
    out = tmp_path / "curves.svg"
    assert run(["plot", "--metrics", csv_path, "--out", out]) == 0
    text = out.read_text()
    assert text.lstrip().startswith("<?xml")
    assert "svg" in text[:200]


def test_missing_artifact_exit_code(tmp_path):
    assert run(["train-interp", "--truth", tmp_path / "absent.ogtj",
                "--out", tmp_path / "o.ckpt"]) == 3
    assert run(["extrapolate", "--interp", tmp_path / "absent.ckpt",
                "--out", tmp_path / "p.ogtj"]) == 3


def test_usage_error_exit_code():
    assert run(["no-such-command"]) == 2
    assert run(["generate-scene", "--preset", "circular"]) == 2


def test_seed_env_var_used(tmp_path, monkeypatch):
    monkeypatch.setenv("ODEGS_SEED", "11")
    a = tmp_path / "a"
    assert run(["generate-scene", "--preset", "circular", "--gaussians", 4,
                "--frames", 4, "--split", 0.5, "--out", a,
                "--image-size", 24]) == 0
    b = tmp_path / "b"
    assert run(["generate-scene", "--preset", "circular", "--gaussians", 4,
                "--frames", 4, "--split", 0.5, "--out", b, "--seed", 11,
                "--image-size", 24]) == 0
    assert (a / "scene.json").read_text() == (b / "scene.json").read_text()
