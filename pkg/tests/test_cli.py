import hashlib
import subprocess
import sys

import numpy as np
import pytest

from lccal.cli import EXIT_CONVERGENCE, EXIT_INVALID, EXIT_OK, INTRINSICS, SEED, ConfigError, build_config, main
from lccal.geometry import RigidTransform, pose_error, read_pose, write_poses
from lccal.io import save_point_cloud
from lccal.projection import PointCloud


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(d), "--seed", "5"]) == EXIT_OK
    return d


def test_synth_outputs(synth_dir):
    names = {p.name for p in synth_dir.iterdir()}
    assert {"lidar.bin", "camcloud.bin", "ldp.pgm", "cdp.pgm", "ncdp.pgm", "truth.txt", "meta.txt"} <= names


def test_synth_deterministic(tmp_path, synth_dir):
    assert main(["synth", "--out", str(tmp_path), "--seed", "5"]) == EXIT_OK
    assert tree_digest(tmp_path) == tree_digest(synth_dir)


def test_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("seed = 3\nfx = 500\n")
    params = (SEED, *INTRINSICS)
    from lccal.io import load_config
    file_values = load_config(cfg)
    assert build_config(params, file_values, {}, {}).seed == 3
    assert build_config(params, file_values, {}, {"LCCAL_SEED": "9"}).seed == 9
    assert build_config(params, file_values, {"seed": "11"}, {"LCCAL_SEED": "9"}).seed == 11
    assert build_config(params, file_values, {}, {}).fx == 500.0
    with pytest.raises(ConfigError):
        build_config(params, {"bogus": "1"}, {}, {})
    with pytest.raises(ConfigError):
        build_config(params, {"fx": "-2"}, {}, {})


def test_env_seed_changes_output(tmp_path, monkeypatch, synth_dir):
    monkeypatch.setenv("LCCAL_SEED", "6")
    assert main(["synth", "--out", str(tmp_path)]) == EXIT_OK
    assert tree_digest(tmp_path) != tree_digest(synth_dir)


def test_augment_deterministic(tmp_path, synth_dir):
    args = ["augment", "--lidar", str(synth_dir / "lidar.bin"), "--camcloud", str(synth_dir / "camcloud.bin"),
            "--extrinsic", str(synth_dir / "truth.txt"), "--meta", str(synth_dir / "meta.txt"),
            "--count", "3", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert len(list((tmp_path / "a").iterdir())) == 3


def test_refine_depth_and_evaluate(tmp_path, synth_dir, capsys):
    out = tmp_path / "metric.pgm"
    assert main(["refine-depth", "--ldp", str(synth_dir / "ldp.pgm"), "--ncdp", str(synth_dir / "ncdp.pgm"),
                 "--out", str(out), "--zero-is-invalid", "true", "--diff-dir", str(tmp_path / "diff"),
                 "--anchors-out", str(tmp_path / "anchors.txt")]) == EXIT_OK
    assert len(list((tmp_path / "diff").iterdir())) == 3
    capsys.readouterr()
    assert main(["evaluate", "--depth", str(out), "--depth-truth", str(synth_dir / "cdp.pgm")]) == EXIT_OK
    report = dict(line.split(" = ") for line in capsys.readouterr().out.splitlines())
    assert float(report["delta1"]) > 0.9


def test_evaluate_self_is_zero(synth_dir, capsys):
    truth = str(synth_dir / "truth.txt")
    assert main(["evaluate", "--estimate", truth, "--truth", truth]) == EXIT_OK
    out = capsys.readouterr().out
    assert "e_r = 0.0" in out and "e_t = 0.0" in out and "degenerate = false" in out


def test_calibrate_shared_and_fuse(tmp_path, synth_dir):
    truth = read_pose(synth_dir / "truth.txt")
    init = RigidTransform.from_euler(2.0, -1.5, 1.0, (0.1, -0.1, 0.15)) @ truth
    write_poses(tmp_path / "init.txt", [init])
    out = tmp_path / "est.txt"
    assert main(["calibrate", "--frames", str(synth_dir), "--init", str(tmp_path / "init.txt"),
                 "--out", str(out)]) == EXIT_OK
    err = pose_error(read_pose(out), truth)
    assert err.rotation_deg < 0.5 and err.translation_m < 0.05

    per = tmp_path / "per"
    assert main(["calibrate", "--frames", str(synth_dir), str(synth_dir), "--init", str(tmp_path / "init.txt"),
                 "--out", str(per), "--mode", "per-frame", "--jobs", "2"]) == EXIT_OK
    assert (per / "scores.txt").exists()
    assert main(["fuse", "--poses", str(per)]) == EXIT_OK
    fused = read_pose(per / "fused.txt")
    assert pose_error(fused, read_pose(per / "frame_0000.txt")).rotation_deg < 1e-6


def test_convergence_failure_exit_code(tmp_path):
    pts = np.zeros((50, 3))
    pts[:, 0] = np.linspace(0, 1, 50)
    save_point_cloud(tmp_path / "lidar.bin", PointCloud(pts))
    save_point_cloud(tmp_path / "camcloud.bin", PointCloud(pts + [0.1, 0.2, 0.0]))
    (tmp_path / "meta.txt").write_text("fx=600\nfy=600\ncx=256\ncy=128\nwidth=512\nheight=256\n")
    code = main(["calibrate", "--frames", str(tmp_path), "--out", str(tmp_path / "o.txt"),
                 "--crop-to-image", "false", "--damping-max", "1e-2", "--cond-max", "1e6"])
    assert code == EXIT_CONVERGENCE


@pytest.mark.parametrize("argv", [
    ["evaluate"],
    ["evaluate", "--estimate", "/nonexistent/pose.txt", "--truth", "/nonexistent/pose.txt"],
    ["refine-depth", "--ldp", "x"],
    ["synth", "--out", "/tmp/x", "--seed", "abc"],
    ["fuse", "--poses", "/tmp", "--ratio", "1.5"],
])
def test_invalid_input_exit_code(argv):
    assert main(argv) == EXIT_INVALID


def test_bad_file_contents_exit_code(tmp_path):
    (tmp_path / "lidar.bin").write_bytes(b"\0" * 17)
    (tmp_path / "camcloud.bin").write_bytes(b"\0" * 16)
    (tmp_path / "meta.txt").write_text("fx=600\nfy=600\ncx=256\ncy=128\nwidth=512\nheight=256\n")
    assert main(["calibrate", "--frames", str(tmp_path), "--out", str(tmp_path / "o.txt")]) == EXIT_INVALID


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["synth", "--out", str(tmp_path / "o"), "-c", str(cfg)]) == EXIT_INVALID


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "lccal", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "lccal" in r.stdout
    r = subprocess.run([sys.executable, "-m", "lccal", "evaluate"], capture_output=True, text=True)
    assert r.returncode == EXIT_INVALID and "nothing to evaluate" in r.stderr


def test_remaining_subcommands_deterministic(tmp_path, synth_dir):
    runs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        d.mkdir()
        assert main(["refine-depth", "--ldp", str(synth_dir / "ldp.pgm"), "--ncdp", str(synth_dir / "ncdp.pgm"),
                     "--out", str(d / "m.pgm"), "--diff-dir", str(d / "diff")]) == EXIT_OK
        assert main(["overlay", "--ldp", str(synth_dir / "ldp.pgm"), "--background", str(synth_dir / "cdp.pgm"),
                     "--out", str(d / "o.ppm")]) == EXIT_OK
        assert main(["calibrate", "--frames", str(synth_dir), "--init", str(synth_dir / "truth.txt"),
                     "--out", str(d / "per"), "--mode", "per-frame", "--max-iters", "3"]) == EXIT_OK
        assert main(["fuse", "--poses", str(d / "per")]) == EXIT_OK
        assert main(["evaluate", "--estimate", str(d / "per" / "fused.txt"), "--truth", str(synth_dir / "truth.txt"),
                     "--out", str(d / "report.txt")]) == EXIT_OK
        runs.append(tree_digest(d))
    assert runs[0] == runs[1]
