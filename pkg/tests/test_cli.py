import json

import pytest

from deformodo.cli import main
from deformodo.evaluation import ate
from deformodo.trajectory import Trajectory


def run(*argv):
    return main([str(a) for a in argv])


def checksums(path):
    return json.loads(path.read_text())["outputs"]


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "d"
    assert run("synth", "--scene", "box", "--level", "0", "--frames", 10, "--res", "16x16",
               "--seed", 1, "--out", out) == 0
    return out


def test_synth_layout(tiny):
    assert len(list(tiny.glob("frame_*.depth.drkr"))) == 10
    assert len(list(tiny.glob("frame_*.flow.drkr"))) == 9
    assert len(Trajectory.load(tiny / "trajectory_gt.txt")) == 10
    doc = json.loads((tiny / "run_manifest.json").read_text())
    assert doc["command"][:2] == ["deformodo", "synth"] and doc["seed"] == 1
    assert "timing" in doc


def test_usage_errors(tmp_path, capsys):
    assert run("synth", "--level", 4, "--out", tmp_path / "x") == 2
    assert run("synth", "--res", "800x600", "--out", tmp_path / "x") == 2
    assert run("synth", "--res", "big", "--out", tmp_path / "x") == 2
    assert run("frobnicate") == 2
    assert run() == 2
    assert not (tmp_path / "x").exists()


def test_seed_env_override(tmp_path, monkeypatch, tiny):
    monkeypatch.setenv("DRK_SEED", "1")
    assert run("synth", "--scene", "box", "--frames", 10, "--res", "16x16", "--seed", 99,
               "--out", tmp_path / "e") == 0
    assert checksums(tmp_path / "e" / "run_manifest.json") == checksums(tiny / "run_manifest.json")
    monkeypatch.setenv("DRK_SEED", "abc")
    assert run("synth", "--out", tmp_path / "f") == 2


def test_seed_changes_output(tmp_path, tiny):
    run("synth", "--scene", "box", "--frames", 10, "--res", "16x16", "--seed", 2, "--out", tmp_path / "s")
    assert checksums(tmp_path / "s" / "run_manifest.json") != checksums(tiny / "run_manifest.json")


def test_eval_commands(tiny, tmp_path, capsys):
    gt = tiny / "trajectory_gt.txt"
    assert run("eval", "ate", "--gt", gt, "--est", gt, "--out", tmp_path / "a.csv") == 0
    rows = dict(l.split(",")[:2] for l in (tmp_path / "a.csv").read_text().splitlines()[1:])
    assert float(rows["ate_sim3"]) < 1e-12
    assert run("eval", "rpe", "--gt", gt, "--est", gt, "--out", tmp_path / "r.csv") == 0
    assert (tmp_path / "r.csv.manifest.json").exists()
    assert run("eval", "apte", "--gt", gt, "--est", gt, "--out", tmp_path / "p.csv") == 2
    short = tmp_path / "short.txt"
    g = Trajectory.load(gt)
    g.subset(g.frame_ids[:5]).save(short)
    assert run("eval", "ate", "--gt", gt, "--est", short, "--out", tmp_path / "m.csv") == 1
    assert "frame" in capsys.readouterr().err
    assert run("eval", "ate", "--gt", tmp_path / "nope.txt", "--est", gt, "--out", tmp_path / "n.csv") == 1


def test_eval_apte_on_reversed_ground_truth(tiny, tmp_path):
    g = Trajectory.load(tiny / "trajectory_gt.txt")
    back = Trajectory(g.frame_ids, list(reversed(g.poses)))
    g.save(tmp_path / "f.txt")
    back.save(tmp_path / "b.txt")
    assert run("eval", "apte", "--gt", tmp_path / "f.txt", "--est", tmp_path / "f.txt",
               "--est-back", tmp_path / "b.txt", "--out", tmp_path / "apte.csv") == 0
    last = (tmp_path / "apte.csv").read_text().splitlines()[-1]
    assert last.startswith("mean,") and float(last.split(",")[1]) < 1e-9


def test_odom_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    assert run("odom", "--data", tmp_path / "empty", "--out", tmp_path / "t.txt") == 1


def test_odom_and_palindrome(rigid_small, tmp_path):
    out = tmp_path / "odom" / "traj.txt"
    assert run("odom", "--data", rigid_small, "--out", out) == 0
    est, gt = Trajectory.load(out), Trajectory.load(rigid_small / "trajectory_gt.txt")
    assert ate(est, gt, "se3") < 1e-4
    assert (tmp_path / "odom" / "diagnostics.csv").exists()
    assert run("palindrome", "--data", rigid_small, "--out", tmp_path / "p1") == 0
    assert run("palindrome", "--data", rigid_small, "--out", tmp_path / "p2") == 0
    assert checksums(tmp_path / "p1" / "run_manifest.json") == checksums(tmp_path / "p2" / "run_manifest.json")


def test_palindrome_missing_source(tmp_path):
    assert run("palindrome", "--data", tmp_path / "none", "--out", tmp_path / "p") == 1


def test_palindrome_round_trip(rigid_small, tmp_path):
    pal, run_dir = tmp_path / "pal", tmp_path / "run"
    assert run("palindrome", "--data", rigid_small, "--out", pal) == 0
    assert run("odom", "--data", pal, "--out", run_dir / "traj.txt") == 0
    fwd, back = run_dir / "traj.forward.txt", run_dir / "traj.backward.txt"
    assert len(Trajectory.load(fwd)) == len(Trajectory.load(back)) == 6
    assert run("eval", "apte", "--gt", pal / "trajectory_gt.txt", "--est", fwd, "--est-back", back,
               "--out", run_dir / "apte.csv") == 0
    rows = (run_dir / "apte.csv").read_text().splitlines()
    assert rows[0] == "k,apte_k" and len(rows) == 7
    assert float(rows[-1].split(",")[1]) < 1e-4  # rigid scene: the loop closes
    stray = Trajectory(range(100, 106), Trajectory.load(back).poses)
    stray.save(tmp_path / "stray.txt")
    assert run("eval", "apte", "--gt", pal / "trajectory_gt.txt", "--est", fwd,
               "--est-back", tmp_path / "stray.txt", "--out", tmp_path / "x.csv") == 1
