import json
import os

import numpy as np
import pytest

from scdepth import fileio, synth
from scdepth.cli import main
from scdepth.geometry import PoseSE3, exp_so3


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


def tree_bytes(path):
    return {name: open(os.path.join(path, name), "rb").read() for name in sorted(os.listdir(path))}


@pytest.fixture
def scene_dir(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(synth.fronto_parallel_scene(0, (40, 40)).to_json())
    out = tmp_path / "scene"
    assert run(capsys, "synth", spec, out)[0] == 0
    return out


def line_poses(n, step=1.0, scale=1.0):
    return [PoseSE3(np.eye(3), [0.0, 0.0, scale * step * k]) for k in range(n)]


def test_scene_and_synth(tmp_path, capsys):
    code, out, _ = run(capsys, "scene", "moving-box", "--size", 24)
    assert code == 0
    (tmp_path / "s.json").write_text(out)
    assert run(capsys, "synth", tmp_path / "s.json", tmp_path / "a")[0] == 0
    assert run(capsys, "synth", tmp_path / "s.json", tmp_path / "b")[0] == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a == b
    assert {"frame_000.ppm", "depth_001.pfm", "occlusion_000.pgm", "dynamic_001.pgm",
            "poses.txt", "intrinsics.json", "scene.json"} <= set(a)
    dyn = fileio.read_pnm(tmp_path / "a" / "dynamic_000.pgm")
    assert dyn.max() == 1.0


def test_minimal_spec_round_trips(tmp_path, capsys):
    spec = {"width": 12, "height": 10, "channels": 1, "planes": [{"normal": [0, 0, 1], "offset": 3.0}],
            "camera_motion": {"frames": 3, "step_translation": [0.05, 0, 0]}}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    assert run(capsys, "synth", tmp_path / "s.json", tmp_path / "o")[0] == 0
    o = tmp_path / "o"
    assert len(fileio.read_kitti_poses(o / "poses.txt")) == 3
    for name in ("frame_002.pgm", "depth_002.pfm"):
        reader, writer = ((fileio.read_pnm, fileio.write_pnm) if name.endswith("pgm")
                          else (fileio.read_pfm, fileio.write_pfm))
        writer(tmp_path / name, reader(o / name))
        assert (tmp_path / name).read_bytes() == (o / name).read_bytes()
    fileio.write_kitti_poses(tmp_path / "p.txt", fileio.read_kitti_poses(o / "poses.txt"))
    assert (tmp_path / "p.txt").read_bytes() == (o / "poses.txt").read_bytes()


def test_synth_errors(tmp_path, capsys):
    spec = {"width": 12, "height": 10, "camera_motion": {"frames": 2},
            "planes": [{"normal": [0, 0, 1], "offset": 3.0, "center": [0, 0, 3],
                        "half_extent": [0.1, 0.1]}]}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    code, _, err = run(capsys, "synth", tmp_path / "s.json", tmp_path / "o")
    assert code == 2 and "invalid scene" in err
    (tmp_path / "bad.json").write_text("[")
    assert run(capsys, "synth", tmp_path / "bad.json", tmp_path / "o")[0] == 2
    assert run(capsys, "synth", tmp_path / "missing.json", tmp_path / "o")[0] == 2


def test_loss_at_ground_truth(scene_dir, capsys):
    r = run_json(capsys, "loss", "--scene-dir", scene_dir, "--pair", 0, 1)
    assert r["total"] < 1e-3 and r["valid_count"] > 0
    assert set(r) >= {"l_p", "l_p_masked", "l_s", "l_gc", "total", "valid_count"}
    g = run_json(capsys, "loss", "--scene-dir", scene_dir, "--pair", 0, 1, "--gamma", 0)
    assert g["l_gc"] == r["l_gc"] and g["total"] == g["l_p_masked"] + 0.1 * g["l_s"]


def test_loss_duplicated_frame(scene_dir, tmp_path, capsys):
    fileio.write_kitti_poses(tmp_path / "p.txt", [PoseSE3.identity()] * 2)
    img, dep = scene_dir / "frame_000.ppm", scene_dir / "depth_000.pfm"
    r = run_json(capsys, "loss", "--images", img, img, "--depths", dep, dep,
                 "--poses", tmp_path / "p.txt", "--intrinsics", scene_dir / "intrinsics.json",
                 "--dump-dir", tmp_path / "dump")
    assert r["total"] == 0.0
    assert np.all(fileio.read_pfm(tmp_path / "dump" / "mask.pfm") == 1.0)
    assert np.all(fileio.read_pfm(tmp_path / "dump" / "d_diff.pfm") == 0.0)


def test_loss_shape_mismatch(scene_dir, tmp_path, capsys):
    fileio.write_pfm(tmp_path / "small.pfm", np.ones((5, 5)))
    code, _, err = run(capsys, "loss", "--scene-dir", scene_dir, "--depths",
                       tmp_path / "small.pfm", scene_dir / "depth_001.pfm")
    assert code == 2 and "shape" in err


def test_gradcheck(capsys):
    a = run_json(capsys, "gradcheck", "--count", 6, "--seed", 4)
    assert a["pass"] and a["max_rel_err"] < 1e-4
    b = run_json(capsys, "gradcheck", "--count", 6, "--seed", 4)
    assert a == b
    code, out, _ = run(capsys, "gradcheck", "--count", 3, "--tolerance", 1e-12)
    assert code == 1 and json.loads(out)["pass"] is False


def test_refine_pair(scene_dir, tmp_path, capsys):
    args = ("refine", "--scene-dir", scene_dir, "--frames", 0, 1, "--perturb-rot-deg", 1,
            "--perturb-trans", 0.05, "--max-iters", 60, "--seed", 3)
    r = run_json(capsys, *args, "--out", tmp_path / "a")
    assert r["final_total"] < r["initial_total"]
    rows = fileio.read_csv(tmp_path / "a" / "trace.csv")
    totals = [float(x["total"]) for x in rows]
    assert list(rows[0]) == ["iter", "l_p_masked", "l_s", "l_gc", "total"]
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    assert len(fileio.read_kitti_poses(tmp_path / "a" / "pose.txt")) == 1
    assert fileio.read_pfm(tmp_path / "a" / "depth_000.pfm").shape == (40, 40)
    run_json(capsys, *args, "--out", tmp_path / "b")
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_refine_empty_valid_set(scene_dir, tmp_path, capsys):
    code, _, err = run(capsys, "refine", "--scene-dir", scene_dir, "--translation-scales", 1e4,
                       "--out", tmp_path / "o")
    assert code == 3


def test_refine_sequence_scale_ratio(tmp_path, capsys):
    spec = synth.fronto_parallel_scene(0, (32, 32), frames=3,
                                       step=PoseSE3(exp_so3([0.005, -0.01, 0.0]), [0.25, -0.05, 0.0]))
    (tmp_path / "s.json").write_text(spec.to_json())
    run(capsys, "synth", tmp_path / "s.json", tmp_path / "q")
    ratios = {}
    for g in ("0", "0.5"):
        r = run_json(capsys, "refine", "--scene-dir", tmp_path / "q", "--frames", 0, 1, 2,
                     "--depth-scales", 1, 1, 2, "--no-pose", "--step-logdepth", 0.05,
                     "--gamma", g, "--max-iters", 80, "--out", tmp_path / g)
        ratios[g] = r["median_depth_ratio"]
    assert abs(ratios["0"] - 2) < 0.2 and abs(ratios["0.5"] - 1) < 0.1


def test_eval_traj(tmp_path, capsys):
    gt = line_poses(301)
    fileio.write_kitti_poses(tmp_path / "gt.txt", gt)
    fileio.write_kitti_poses(tmp_path / "half.txt", line_poses(301, scale=0.5))
    r = run_json(capsys, "eval-traj", tmp_path / "gt.txt", tmp_path / "gt.txt")
    assert r["t_err"] == 0 and r["r_err"] == 0
    r = run_json(capsys, "eval-traj", tmp_path / "half.txt", tmp_path / "gt.txt",
                 "--align", "global", "--out", tmp_path / "o")
    assert abs(r["t_err"]) < 1e-9 and abs(r["scale"] - 2) < 1e-12
    assert (tmp_path / "o" / "trajectory.svg").exists()
    assert len(fileio.read_csv(tmp_path / "o" / "aligned.csv")) == 301
    r = run_json(capsys, "eval-traj", tmp_path / "half.txt", tmp_path / "gt.txt", "--align", "none")
    assert abs(r["t_err"] - 50.0) < 1e-9
    r = run_json(capsys, "eval-traj", tmp_path / "half.txt", tmp_path / "gt.txt",
                 "--align", "per-frame")
    assert abs(r["t_err"]) < 1e-9


def test_eval_traj_errors(tmp_path, capsys):
    fileio.write_kitti_poses(tmp_path / "a.txt", line_poses(301))
    fileio.write_kitti_poses(tmp_path / "b.txt", line_poses(300))
    fileio.write_kitti_poses(tmp_path / "s.txt", line_poses(50))
    assert run(capsys, "eval-traj", tmp_path / "a.txt", tmp_path / "b.txt")[0] == 2
    code, _, err = run(capsys, "eval-traj", tmp_path / "s.txt", tmp_path / "s.txt")
    assert code == 4 and "shorter" in err


def test_eval_depth(tmp_path, capsys):
    (tmp_path / "gt").mkdir()
    for sub in ("same", "double", "const"):
        (tmp_path / sub).mkdir()
    rng = np.random.default_rng(0)
    for k in range(2):
        d = rng.uniform(1, 40, (6, 8))
        name = f"depth_{k:03d}.pfm"
        fileio.write_pfm(tmp_path / "gt" / name, d)
        fileio.write_pfm(tmp_path / "same" / name, d)
        fileio.write_pfm(tmp_path / "double" / name, 2 * d.astype(np.float32))
    r = run_json(capsys, "eval-depth", tmp_path / "same", tmp_path / "gt")
    assert r["mean"] == {"abs_rel": 0.0, "sq_rel": 0.0, "rms": 0.0, "rms_log": 0.0,
                         "a1": 1.0, "a2": 1.0, "a3": 1.0}
    assert len(r["frames"]) == 2
    r = run_json(capsys, "eval-depth", tmp_path / "double", tmp_path / "gt")
    assert r["mean"]["abs_rel"] < 1e-7 and r["mean"]["a1"] == 1.0
    (tmp_path / "cg").mkdir()
    fileio.write_pfm(tmp_path / "cg" / "x.pfm", np.full((4, 4), 10.0))
    fileio.write_pfm(tmp_path / "const" / "x.pfm", np.full((4, 4), 13.0))
    r = run_json(capsys, "eval-depth", tmp_path / "const", tmp_path / "cg", "--no-median-scale")
    assert abs(r["mean"]["abs_rel"] - 0.3) < 1e-6 and r["mean"]["a1"] == 0.0
    fileio.write_pfm(tmp_path / "same" / "extra.pfm", np.ones((6, 8)))
    code, _, err = run(capsys, "eval-depth", tmp_path / "same", tmp_path / "gt")
    assert code == 2 and "missing" in err
