"""Sequence generation, tracked runs, evaluation, and the CLI."""

import numpy as np
import pytest

from edgetrack.geometry import PoseSE3, exp_map_np
from edgetrack.harness import (
    GROUND_TRUTH_NAME,
    POSES_NAME,
    STATS_NAME,
    EvaluationReport,
    KeyPoseTrajectory,
    OrbitTrajectory,
    evaluate,
    generate_sequence,
    load_pose_csv,
    occlude_strip,
    parse_config,
    profile,
    render_frame_gray,
    run_tracking,
    save_pose_csv,
    standard_camera,
    standard_trajectory,
)
from edgetrack.tracking import TrackerConfig

from conftest import pose_errors


# ---------------------------------------------------------------------------
# Trajectories.

def test_orbit_radius_and_aim():
    traj = OrbitTrajectory(frames=10, radius_mm=150.0)
    for k in (0, 4, 9):
        pose = traj.pose(k)
        assert np.linalg.norm(pose.camera_center()) == pytest.approx(150.0)
        # the target sits on the optical axis when aim_offset is zero
        R = pose.rotation()
        c = R @ np.zeros(3) + pose.t
        assert c[2] == pytest.approx(150.0)
        assert abs(c[0]) < 1e-9 and abs(c[1]) < 1e-9


def test_orbit_rejects_bad_parameters():
    with pytest.raises(ValueError):
        OrbitTrajectory(frames=-1)
    with pytest.raises(ValueError):
        OrbitTrajectory(frames=5, radius_mm=0.0)


def test_key_pose_trajectory_hits_endpoints():
    a = PoseSE3(np.array([0.1, -0.2, 0.05]), np.array([1.0, 2.0, 150.0]))
    b = PoseSE3(np.array([-0.3, 0.4, 0.2]), np.array([-5.0, 1.0, 180.0]))
    traj = KeyPoseTrajectory(frames=7, keys=[a, b])
    ang0, d0 = pose_errors(traj.pose(0), a)
    ang1, d1 = pose_errors(traj.pose(6), b)
    assert ang0 < 1e-12 and d0 < 1e-12
    assert ang1 < 1e-10 and d1 < 1e-12
    mid = traj.pose(3)
    assert mid.t == pytest.approx((a.t + b.t) / 2.0)


def test_key_pose_trajectory_validation():
    with pytest.raises(ValueError):
        KeyPoseTrajectory(frames=5, keys=[])


# ---------------------------------------------------------------------------
# Rendering and occlusion.

def test_render_draws_dark_edges_on_white(cube_model, qvga_camera):
    pose = standard_trajectory(1).pose(0)
    img = render_frame_gray(cube_model, pose, qvga_camera, sigma=0.0).pixels
    dark = np.count_nonzero(img < 128)
    assert 200 < dark < 20000
    assert img.max() == 255


def test_render_noise_changes_with_rng(cube_model, qvga_camera):
    pose = standard_trajectory(1).pose(0)
    a = render_frame_gray(cube_model, pose, qvga_camera, sigma=2.0,
                          rng=np.random.default_rng(1)).pixels
    b = render_frame_gray(cube_model, pose, qvga_camera, sigma=2.0,
                          rng=np.random.default_rng(2)).pixels
    c = render_frame_gray(cube_model, pose, qvga_camera, sigma=2.0,
                          rng=np.random.default_rng(1)).pixels
    assert not np.array_equal(a, b)
    assert np.array_equal(a, c)


def test_occlude_strip_hides_requested_share(cube_model, qvga_camera):
    pose = standard_trajectory(1).pose(0)
    img = render_frame_gray(cube_model, pose, qvga_camera, sigma=0.0).pixels
    before = np.count_nonzero(img < 255)
    covered = img.copy()
    occlude_strip(covered, 0.2)
    after = np.count_nonzero(covered < 255)
    removed = (before - after) / before
    assert 0.15 <= removed <= 0.30
    # strip is a full-height white band
    cols = np.nonzero((covered == 255).all(axis=0) & ~(img == 255).all(axis=0))[0]
    assert cols.size > 0


# ---------------------------------------------------------------------------
# Sequence generation.

def test_generate_sequence_is_deterministic(tmp_path, cube_model, qvga_camera):
    traj = standard_trajectory(3)
    for sub in ("a", "b"):
        n = generate_sequence(cube_model, qvga_camera, traj, sigma=2.0,
                              out_dir=tmp_path / sub, seed=7)
        assert n == 3
    for name in ["frame_%06d.pgm" % k for k in range(3)] + [GROUND_TRUTH_NAME]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    n = generate_sequence(cube_model, qvga_camera, traj, sigma=2.0,
                          out_dir=tmp_path / "c", seed=8)
    assert (tmp_path / "a" / "frame_000000.pgm").read_bytes() != (
        tmp_path / "c" / "frame_000000.pgm"
    ).read_bytes()


def test_generate_zero_frames(tmp_path, cube_model, qvga_camera):
    n = generate_sequence(cube_model, qvga_camera, OrbitTrajectory(frames=0),
                          sigma=0.0, out_dir=tmp_path / "empty", seed=0)
    assert n == 0
    assert load_pose_csv(tmp_path / "empty" / GROUND_TRUTH_NAME) == []


def test_ground_truth_round_trips(tmp_path, cube_model, qvga_camera):
    traj = standard_trajectory(4)
    generate_sequence(cube_model, qvga_camera, traj, sigma=0.0,
                      out_dir=tmp_path / "s", seed=0)
    rows = load_pose_csv(tmp_path / "s" / GROUND_TRUTH_NAME)
    assert [k for k, _ in rows] == [0, 1, 2, 3]
    # arccos of a near-1 trace floors the angle metric at ~3e-8
    for k, pose in rows:
        ang, dist = pose_errors(pose, traj.pose(k))
        assert ang < 1e-7 and dist < 1e-12


# ---------------------------------------------------------------------------
# Tracked runs.

def test_run_tracking_noiseless_short_sequence(tmp_path, cube_model, qvga_camera):
    traj = standard_trajectory(4)
    generate_sequence(cube_model, qvga_camera, traj, sigma=0.0,
                      out_dir=tmp_path / "s", seed=0)
    records = run_tracking(tmp_path / "s", cube_model, qvga_camera,
                           TrackerConfig(), traj.pose(0), out_dir=tmp_path / "run")
    assert len(records) == 4
    assert all(r.status == "ok" for r in records)
    # frame 0 starts at its own ground truth; the refined pose stays close
    ang, dist = pose_errors(records[0].pose, traj.pose(0))
    assert dist < 0.5
    assert (tmp_path / "run" / POSES_NAME).exists()
    assert (tmp_path / "run" / STATS_NAME).exists()
    stats_text = (tmp_path / "run" / STATS_NAME).read_text()
    assert stats_text.splitlines()[0].startswith("frame,sampled,matched,err,iters")
    rep = evaluate(tmp_path / "run" / POSES_NAME, tmp_path / "s" / GROUND_TRUTH_NAME)
    assert rep.frames == 4
    assert rep.mean_distance < 1.5


def test_run_tracking_coasts_then_loses(tmp_path, cube_model, qvga_camera):
    traj = standard_trajectory(6)
    generate_sequence(cube_model, qvga_camera, traj, sigma=0.0,
                      out_dir=tmp_path / "s", seed=0)
    # blank out frames 2.. so matching fails from there on
    from edgetrack.imaging import GrayImage, save_image

    blank = GrayImage(pixels=np.full((240, 320), 255, dtype=np.uint8))
    for k in range(2, 6):
        save_image(blank, tmp_path / "s" / ("frame_%06d.pgm" % k))
    records = run_tracking(tmp_path / "s", cube_model, qvga_camera,
                           TrackerConfig(), traj.pose(0), coast_frames=2)
    assert [r.status for r in records] == ["ok", "ok", "coast", "coast", "lost", "lost"]
    for r in records[2:]:
        assert r.matched == 0 and np.isnan(r.err)
        ang, dist = pose_errors(r.pose, records[1].pose)
        assert ang == 0.0 and dist == 0.0  # carries the last good pose


def test_run_tracking_missing_frames_raises(tmp_path, cube_model, qvga_camera):
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError):
        run_tracking(tmp_path / "empty", cube_model, qvga_camera,
                     TrackerConfig(), PoseSE3(np.zeros(3), np.array([0.0, 0.0, 150.0])))


# ---------------------------------------------------------------------------
# Evaluation.

def write_pose_csv(path, rows):
    save_pose_csv(path, rows)
    return path


def test_evaluate_identity_and_known_shift(tmp_path):
    rng = np.random.default_rng(5)
    rows = []
    for k in range(5):
        rows.append((k, PoseSE3(np.zeros(3), np.array([*rng.uniform(-5, 5, 2), 150.0]))))
    truth = write_pose_csv(tmp_path / "truth.csv", rows)
    same = write_pose_csv(tmp_path / "same.csv", rows)
    rep = evaluate(same, truth)
    assert rep.mean_distance == 0.0 and rep.max_distance == 0.0
    assert rep.per_axis_mae == (0.0, 0.0, 0.0)

    # identity rotation: shifting t by -1 in x moves the camera center +1
    shifted = [(k, PoseSE3(p.omega, p.t - np.array([1.0, 0.0, 0.0]))) for k, p in rows]
    rep = evaluate(write_pose_csv(tmp_path / "shift.csv", shifted), truth)
    assert rep.mean_distance == pytest.approx(1.0)
    assert rep.per_axis_mae[0] == pytest.approx(1.0)
    assert rep.per_axis_mae[1] == pytest.approx(0.0, abs=1e-12)


def test_evaluate_frame_count_mismatch(tmp_path):
    rows = [(k, PoseSE3(np.zeros(3), np.array([0.0, 0.0, 150.0]))) for k in range(3)]
    truth = write_pose_csv(tmp_path / "t.csv", rows)
    short = write_pose_csv(tmp_path / "p.csv", rows[:2])
    with pytest.raises(ValueError):
        evaluate(short, truth)


# ---------------------------------------------------------------------------
# Profiling.

def test_profile_share_accounting():
    from edgetrack.harness import FrameRecord

    records = [
        FrameRecord(frame=k, pose=PoseSE3(np.zeros(3), np.zeros(3)),
                    sampled=50, matched=40, err=1.0, iters=3, attempts=4,
                    t_total=0.010, t_visible=0.004, t_gray=0.001,
                    t_me=0.003, t_pose=0.001, status="ok")
        for k in range(5)
    ]
    rep = profile(records)
    assert rep.frames == 5
    assert rep.mean_total_ms == pytest.approx(10.0)
    assert rep.shares["visible_edges"] == pytest.approx(40.0)
    assert rep.shares["gray_scaling"] == pytest.approx(10.0)
    assert rep.shares["moving_edges"] == pytest.approx(30.0)
    assert rep.shares["pose_calculation"] == pytest.approx(10.0)
    assert rep.shares["overhead"] == pytest.approx(10.0)
    assert sum(rep.shares.values()) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        profile([])


# ---------------------------------------------------------------------------
# Config files.

def test_parse_config_defaults():
    rc = parse_config(None)
    cam = standard_camera()
    assert rc.camera == cam
    assert rc.tracker.sampling_step == 10.0
    assert rc.tracker.search_range == 8
    assert rc.tracker.gradient_threshold == 10.0
    assert rc.tracker.backend == "float"
    assert rc.coast_frames == 3


def test_parse_config_overrides_and_comments(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# camera\n"
        "fx = 640.5\n"
        "width = 640   # VGA\n"
        "sampling_step = 8\n"
        "search_range = 12\n"
        "lm_max_iter = 25\n"
        "coast_frames = 5\n"
        "\n"
    )
    rc = parse_config(cfg, backend="q40_23")
    assert rc.camera.fx == 640.5 and rc.camera.width == 640
    assert rc.camera.fy == standard_camera().fy
    assert rc.tracker.sampling_step == 8.0
    assert rc.tracker.search_range == 12
    assert rc.tracker.lm.max_iterations == 25
    assert rc.tracker.backend == "q40_23"
    assert rc.coast_frames == 5


def test_parse_config_errors_carry_line_numbers(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("fx = 500\nbogus_key = 1\n")
    with pytest.raises(ValueError, match="line 2"):
        parse_config(cfg)
    cfg.write_text("fx 500\n")
    with pytest.raises(ValueError, match="line 1"):
        parse_config(cfg)
    cfg.write_text("width = wide\n")
    with pytest.raises(ValueError, match="line 1"):
        parse_config(cfg)


# ---------------------------------------------------------------------------
# CLI.

def test_cli_full_cycle(tmp_path, cube_model_path, capsys):
    from edgetrack.cli import main

    seq = tmp_path / "seq"
    run = tmp_path / "run"
    assert main(["synth", "--model", str(cube_model_path), "--frames", "5",
                 "--out", str(seq), "--seed", "3", "--noise", "2"]) == 0
    assert main(["track", "--model", str(cube_model_path), "--sequence", str(seq),
                 "--init", str(seq / GROUND_TRUTH_NAME), "--out", str(run)]) == 0
    out = capsys.readouterr().out
    assert "5 frames" in out and "5 ok" in out
    assert main(["eval", "--poses", str(run / POSES_NAME),
                 "--truth", str(seq / GROUND_TRUTH_NAME)]) == 0
    out = capsys.readouterr().out
    assert "mean camera-center distance" in out
    assert main(["bench", "--model", str(cube_model_path),
                 "--sequence", str(seq)]) == 0
    out = capsys.readouterr().out
    assert "ms/frame" in out and "pose_calculation" in out


def test_cli_reports_errors_as_exit_code(tmp_path, capsys):
    from edgetrack.cli import main

    rc = main(["track", "--model", str(tmp_path / "missing.txt"),
               "--sequence", str(tmp_path), "--init", "0,0,0,0,0,150",
               "--out", str(tmp_path / "run")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_cli_init_literal(tmp_path, cube_model_path, capsys):
    from edgetrack.cli import main

    seq = tmp_path / "seq"
    assert main(["synth", "--model", str(cube_model_path), "--frames", "2",
                 "--out", str(seq), "--noise", "0"]) == 0
    truth = load_pose_csv(seq / GROUND_TRUTH_NAME)
    p0 = truth[0][1]
    lit = ",".join(repr(float(v)) for v in [*p0.omega, *p0.t])
    run = tmp_path / "run"
    # --init= form: the literal may begin with a minus sign
    assert main(["track", "--model", str(cube_model_path), "--sequence", str(seq),
                 f"--init={lit}", "--out", str(run)]) == 0
    rep = evaluate(run / POSES_NAME, seq / GROUND_TRUTH_NAME)
    assert rep.mean_distance < 1.5
