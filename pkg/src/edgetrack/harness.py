"""Synthetic sequences, end-to-end tracking runs, and their evaluation.

The generator renders the model's visible edges as dark anti-aliased lines
on a white background and writes the ground-truth pose of every frame; the
accuracy oracle is that pose file, never the images.  The runner replays a
sequence through track_frame with a bounded coasting policy and records
per-frame statistics; evaluation compares camera centers against the truth.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import (
    CameraIntrinsics,
    PoseSE3,
    WireframeModel,
    exp_map_np,
    log_rotation_np,
    look_at_pose,
)
from .imaging import ColorImage, GrayImage, frame_filename, load_image, save_image
from .pose_estimation import DegenerateGeometryError, LMSettings, track_frame
from .rasterizer import (
    decode_id_array,
    depth_buffer_to_image,
    id_buffer_to_image,
    render_id_buffer,
)
from .tracking import InsufficientMeasurementsError, TrackerConfig

GROUND_TRUTH_NAME = "ground_truth.csv"
POSES_NAME = "poses.csv"
STATS_NAME = "stats.csv"

POSE_COLUMNS = "frame,wx,wy,wz,tx,ty,tz"
STATS_COLUMNS = (
    "frame,sampled,matched,err,iters,t_total_ms,t_visible_ms,"
    "t_gray_ms,t_me_ms,t_pose_ms,status"
)

# Desk-scale defaults: every headline accuracy number refers to this setup.
STANDARD_SIDE_MM = 60.0
STANDARD_RADIUS_MM = 150.0
STANDARD_RATE_RAD = math.radians(0.5)
STANDARD_FRAMES = 60
STANDARD_SIGMA = 2.0


def standard_camera() -> CameraIntrinsics:
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=160.0, cy=120.0, width=320, height=240)


# ---------------------------------------------------------------------------
# Trajectories.

@dataclass
class OrbitTrajectory:
    """Camera circling a target at fixed radius and elevation.

    ``aim_offset`` shifts the look-at point away from the orbit center so
    the model can sit off-center (or partially out of frame) while the
    camera distance stays fixed.
    """

    frames: int
    radius_mm: float = STANDARD_RADIUS_MM
    rate_rad: float = STANDARD_RATE_RAD
    elevation_rad: float = 0.45
    phase_rad: float = 0.35
    target: tuple = (0.0, 0.0, 0.0)
    aim_offset: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.frames < 0:
            raise ValueError("frame count must be >= 0")
        if self.radius_mm <= 0:
            raise ValueError("orbit radius must be positive")

    def pose(self, index: int) -> PoseSE3:
        theta = self.phase_rad + self.rate_rad * index
        ce = math.cos(self.elevation_rad)
        center = np.asarray(self.target, dtype=float)
        camera = center + self.radius_mm * np.array(
            [ce * math.cos(theta), math.sin(self.elevation_rad), ce * math.sin(theta)]
        )
        aim = center + np.asarray(self.aim_offset, dtype=float)
        return look_at_pose(camera, aim, down=np.array([0.0, 1.0, 0.0]))


@dataclass
class KeyPoseTrajectory:
    """Linear interpolation between key poses (translation lerp, rotation
    geodesic) sampled at evenly spaced frames."""

    frames: int
    keys: list = field(default_factory=list)

    def __post_init__(self):
        if self.frames < 0:
            raise ValueError("frame count must be >= 0")
        if self.frames > 0 and len(self.keys) < 2:
            raise ValueError("need at least two key poses")

    def pose(self, index: int) -> PoseSE3:
        if self.frames == 1:
            return self.keys[0].copy()
        u = index / (self.frames - 1) * (len(self.keys) - 1)
        seg = min(int(u), len(self.keys) - 2)
        tau = u - seg
        a, b = self.keys[seg], self.keys[seg + 1]
        Ra, Rb = exp_map_np(a.omega), exp_map_np(b.omega)
        delta = log_rotation_np(Rb @ Ra.T)
        R = exp_map_np(tau * delta) @ Ra
        t = (1.0 - tau) * np.asarray(a.t) + tau * np.asarray(b.t)
        return PoseSE3(log_rotation_np(R), t)


def standard_trajectory(frames: int = STANDARD_FRAMES) -> OrbitTrajectory:
    """The desk-scale orbit every headline number refers to.

    Elevation, phase, and the off-center aim are chosen so a typical frame
    samples 60-90 visible control points at the default 10 px spacing.
    """
    return OrbitTrajectory(frames=frames, aim_offset=(32.0, 24.0, 0.0))


# ---------------------------------------------------------------------------
# Sequence generation.

def _visible_runs(model: WireframeModel, pose: PoseSE3, K: CameraIntrinsics):
    """Visible parts of each edge as 2D sub-segments.

    Walks the ID buffer along each edge's pixel trace and keeps maximal runs
    the edge owns, so the drawn lines inherit the rasterizer's hidden-line
    decisions.
    """
    id_buf, _ = render_id_buffer(model, pose, K)
    ids = decode_id_array(id_buf.rgb)
    R = exp_map_np(pose.omega)
    cam = (R @ np.asarray(model.vertices, dtype=float).T).T + pose.t
    runs = []
    for i, e in enumerate(model.edges):
        a, b = cam[e[0]], cam[e[1]]
        if a[2] <= 0 and b[2] <= 0:
            continue
        # near clip at 1 mm, same plane as the rasterizer
        if a[2] < 1.0 or b[2] < 1.0:
            s = (1.0 - a[2]) / (b[2] - a[2])
            if a[2] < 1.0:
                a = a + s * (b - a)
            else:
                b = a + s * (b - a)
        pa = np.array([K.fx * a[0] / a[2] + K.cx, K.fy * a[1] / a[2] + K.cy])
        pb = np.array([K.fx * b[0] / b[2] + K.cx, K.fy * b[1] / b[2] + K.cy])
        steps = int(max(1, math.ceil(max(abs(pb[0] - pa[0]), abs(pb[1] - pa[1])))))
        taus = np.arange(steps + 1) / steps
        px = pa[0] + taus * (pb[0] - pa[0])
        py = pa[1] + taus * (pb[1] - pa[1])
        xi = np.floor(px + 0.5).astype(int)
        yi = np.floor(py + 0.5).astype(int)
        inside = (xi >= 0) & (xi < K.width) & (yi >= 0) & (yi < K.height)
        owned = np.zeros(steps + 1, dtype=bool)
        owned[inside] = ids[yi[inside], xi[inside]] == i
        start = None
        pad = 0.5 / steps
        for k in range(steps + 2):
            on = k <= steps and owned[k]
            if on and start is None:
                start = k
            elif not on and start is not None:
                t0 = max(0.0, taus[start] - pad)
                t1 = min(1.0, taus[k - 1] + pad)
                runs.append((pa + t0 * (pb - pa), pa + t1 * (pb - pa)))
                start = None
    return runs


def _draw_aa_segment(img: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Darken pixels within the anti-aliased band of one segment.

    Intensity ramps 0..255 over point-to-segment distance 0.5..1.5 px,
    giving a dark line an effective width of 2 px.
    """
    h, w = img.shape
    x0 = max(0, int(math.floor(min(a[0], b[0]) - 2)))
    x1 = min(w - 1, int(math.ceil(max(a[0], b[0]) + 2)))
    y0 = max(0, int(math.floor(min(a[1], b[1]) - 2)))
    y1 = min(h - 1, int(math.ceil(max(a[1], b[1]) + 2)))
    if x0 > x1 or y0 > y1:
        return
    xs = np.arange(x0, x1 + 1, dtype=float)
    ys = np.arange(y0, y1 + 1, dtype=float)[:, None]
    d = b - a
    dd = float(d[0] * d[0] + d[1] * d[1])
    if dd == 0.0:
        dist = np.hypot(xs - a[0], ys - a[1])
    else:
        tau = ((xs - a[0]) * d[0] + (ys - a[1]) * d[1]) / dd
        tau = np.clip(tau, 0.0, 1.0)
        dist = np.hypot(xs - (a[0] + tau * d[0]), ys - (a[1] + tau * d[1]))
    shade = np.clip((dist - 0.5) * 255.0, 0.0, 255.0)
    region = img[y0 : y1 + 1, x0 : x1 + 1]
    np.minimum(region, shade.astype(np.uint8), out=region)


def occlude_strip(img: np.ndarray, fraction: float):
    """White out a vertical strip holding the middle `fraction` of the
    drawn edge pixels, by column-count quantiles; mutates img."""
    ys, xs = np.nonzero(img < 255)
    if xs.size == 0:
        return
    lo = float(np.quantile(xs, 0.5 - fraction / 2.0))
    hi = float(np.quantile(xs, 0.5 + fraction / 2.0))
    img[:, int(math.floor(lo)) : int(math.ceil(hi)) + 1] = 255


def render_frame_gray(model: WireframeModel, pose: PoseSE3, K: CameraIntrinsics,
                      sigma: float = 0.0, rng=None,
                      occlusion_fraction: float = 0.0) -> GrayImage:
    """One synthetic frame: visible edges as dark AA lines plus noise."""
    img = np.full((K.height, K.width), 255, dtype=np.uint8)
    for a, b in _visible_runs(model, pose, K):
        _draw_aa_segment(img, a, b)
    if occlusion_fraction > 0.0:
        occlude_strip(img, occlusion_fraction)
    if sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng()
        noisy = img.astype(np.float64) + rng.normal(0.0, sigma, img.shape)
        img = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
    return GrayImage(pixels=img)


def save_pose_csv(path, rows, header_lines=()):
    """Rows of (frame, PoseSE3) to CSV; repr-precision floats."""
    lines = [f"# {h}" for h in header_lines]
    lines.append(POSE_COLUMNS)
    for idx, pose in rows:
        vals = [repr(float(v)) for v in (*pose.omega, *pose.t)]
        lines.append(f"{idx}," + ",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_pose_csv(path):
    """List of (frame, PoseSE3) from a pose CSV, `#` comments skipped."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("frame"):
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise ValueError(f"pose CSV row needs 7 columns: {line!r}")
        idx = int(parts[0])
        vals = [float(v) for v in parts[1:]]
        rows.append((idx, PoseSE3(np.array(vals[0:3]), np.array(vals[3:6]))))
    return rows


def generate_sequence(model: WireframeModel, K: CameraIntrinsics, traj,
                      sigma: float, out_dir, seed: int = 0,
                      occlusion_fraction: float = 0.0) -> int:
    """Write PGM frames plus the ground-truth pose CSV; returns frame count.

    Deterministic for a given seed; each frame's noise derives from
    (seed, frame index) so frames are independent of generation order.
    A nonzero occlusion_fraction hides that share of the drawn edge pixels
    behind a background-colored strip in every frame.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(traj.frames):
        pose = traj.pose(k)
        rng = np.random.default_rng([seed, k]) if sigma > 0.0 else None
        frame = render_frame_gray(model, pose, K, sigma=sigma, rng=rng,
                                  occlusion_fraction=occlusion_fraction)
        save_image(frame, out / frame_filename(k))
        rows.append((k, pose))
    save_pose_csv(out / GROUND_TRUTH_NAME, rows,
                  header_lines=[f"seed = {seed}", f"sigma = {sigma}"])
    return traj.frames


# ---------------------------------------------------------------------------
# Tracking runs.

@dataclass
class FrameRecord:
    frame: int
    pose: PoseSE3
    sampled: int
    matched: int
    err: float
    iters: int
    attempts: int
    t_total: float
    t_visible: float
    t_gray: float
    t_me: float
    t_pose: float
    status: str


def _sequence_frames(sequence_dir) -> list:
    frames = sorted(Path(sequence_dir).glob("frame_*.pgm"))
    frames += sorted(Path(sequence_dir).glob("frame_*.ppm"))
    if not frames:
        raise FileNotFoundError(f"no frame_*.pgm files under {sequence_dir}")
    return frames


def run_tracking(sequence_dir, model: WireframeModel, K: CameraIntrinsics,
                 cfg: TrackerConfig, init_pose: PoseSE3, coast_frames: int = 3,
                 out_dir=None, dump_buffers: bool = False) -> list:
    """Track every frame of a sequence; returns the per-frame records.

    Failed frames coast on the previous pose for up to coast_frames in a
    row, then report status "lost"; the run always covers every file.
    When out_dir is set, writes the pose and stats CSVs (and optionally the
    ID/depth buffers per frame).
    """
    records = []
    pose = init_pose.copy()
    coasted = 0
    for idx, path in enumerate(_sequence_frames(sequence_dir)):
        t_start = time.perf_counter()
        image = load_image(path)
        t_loaded = time.perf_counter()
        if isinstance(image, ColorImage):
            from .imaging import to_gray

            gray = to_gray(image)
        else:
            gray = image
        t_gray = time.perf_counter() - t_loaded
        try:
            pose, stats = track_frame(pose, gray, model, K, cfg)
            coasted = 0
            status = "ok"
            sampled, matched = stats.sampled, stats.matched
            err, iters, attempts = stats.err, stats.iterations, stats.attempts
            t_visible, t_me, t_pose = stats.t_visible, stats.t_me, stats.t_pose
        except (InsufficientMeasurementsError, DegenerateGeometryError):
            coasted += 1
            status = "coast" if coasted <= coast_frames else "lost"
            sampled = matched = iters = attempts = 0
            err = float("nan")
            t_visible = t_me = t_pose = 0.0
        t_total = time.perf_counter() - t_start
        records.append(
            FrameRecord(
                frame=idx, pose=pose.copy(), sampled=sampled, matched=matched,
                err=err, iters=iters, attempts=attempts, t_total=t_total,
                t_visible=t_visible, t_gray=t_gray, t_me=t_me, t_pose=t_pose,
                status=status,
            )
        )
        if dump_buffers and out_dir is not None:
            bdir = Path(out_dir) / "buffers"
            bdir.mkdir(parents=True, exist_ok=True)
            id_buf, depth_buf = render_id_buffer(model, pose, K)
            save_image(id_buffer_to_image(id_buf), bdir / f"frame_{idx:06d}_id.ppm")
            save_image(depth_buffer_to_image(depth_buf), bdir / f"frame_{idx:06d}_depth.pgm")
    if out_dir is not None:
        write_run_outputs(out_dir, records)
    return records


def write_run_outputs(out_dir, records):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_pose_csv(out / POSES_NAME, [(r.frame, r.pose) for r in records])
    lines = [STATS_COLUMNS]
    for r in records:
        lines.append(
            f"{r.frame},{r.sampled},{r.matched},{r.err:.6f},{r.iters},"
            f"{r.t_total * 1e3:.3f},{r.t_visible * 1e3:.3f},{r.t_gray * 1e3:.3f},"
            f"{r.t_me * 1e3:.3f},{r.t_pose * 1e3:.3f},{r.status}"
        )
    (out / STATS_NAME).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Evaluation and profiling.

@dataclass
class EvaluationReport:
    frames: int
    per_frame: np.ndarray  # (N, 3) camera-center deltas, mm
    per_axis_mae: tuple
    mean_distance: float
    max_distance: float

    def summary(self) -> str:
        x, y, z = self.per_axis_mae
        return (
            f"{self.frames} frames; mean camera-center distance "
            f"{self.mean_distance:.3f} mm (max {self.max_distance:.3f}); "
            f"per-axis mean absolute error x={x:.3f} y={y:.3f} z={z:.3f} mm"
        )


def evaluate(pose_csv, truth_csv) -> EvaluationReport:
    """Camera-center accuracy of a tracked run against ground truth."""
    poses = load_pose_csv(pose_csv)
    truth = load_pose_csv(truth_csv)
    if len(poses) != len(truth):
        raise ValueError(
            f"frame-count mismatch: {len(poses)} poses vs {len(truth)} truth rows"
        )
    deltas = []
    for (_, a), (_, b) in zip(poses, truth):
        deltas.append(a.camera_center() - b.camera_center())
    deltas = np.asarray(deltas, dtype=float).reshape(len(poses), 3)
    dists = np.linalg.norm(deltas, axis=1) if len(deltas) else np.zeros(0)
    mae = tuple(float(v) for v in np.mean(np.abs(deltas), axis=0)) if len(deltas) else (0.0, 0.0, 0.0)
    return EvaluationReport(
        frames=len(poses),
        per_frame=deltas,
        per_axis_mae=mae,
        mean_distance=float(np.mean(dists)) if len(dists) else 0.0,
        max_distance=float(np.max(dists)) if len(dists) else 0.0,
    )


@dataclass
class ProfileReport:
    frames: int
    mean_total_ms: float
    shares: dict  # stage -> percentage of mean total

    def summary(self) -> str:
        parts = [f"{k} {v:.1f}%" for k, v in self.shares.items()]
        return (
            f"{self.frames} frames; mean {self.mean_total_ms:.2f} ms/frame; "
            + ", ".join(parts)
        )


def profile(records) -> ProfileReport:
    """Mean frame time and per-stage shares of the four pipeline stages."""
    if not records:
        raise ValueError("profile needs at least one tracked frame")
    total = float(np.mean([r.t_total for r in records]))
    stages = {
        "visible_edges": float(np.mean([r.t_visible for r in records])),
        "gray_scaling": float(np.mean([r.t_gray for r in records])),
        "moving_edges": float(np.mean([r.t_me for r in records])),
        "pose_calculation": float(np.mean([r.t_pose for r in records])),
    }
    shares = {k: (100.0 * v / total if total > 0 else 0.0) for k, v in stages.items()}
    used = sum(shares.values())
    shares["overhead"] = max(0.0, 100.0 - used)
    return ProfileReport(frames=len(records), mean_total_ms=total * 1e3, shares=shares)


# ---------------------------------------------------------------------------
# Config files.

CONFIG_KEYS = {
    "fx": float, "fy": float, "cx": float, "cy": float,
    "width": int, "height": int,
    "sampling_step": float, "search_range": int, "gradient_threshold": float,
    "lm_max_iter": int, "lm_lambda0": float, "coast_frames": int,
}


@dataclass
class RunConfig:
    camera: CameraIntrinsics
    tracker: TrackerConfig
    coast_frames: int = 3


def parse_config(path=None, backend: str = "float") -> RunConfig:
    """Key = value config file over the standard defaults; unknown keys fail."""
    values = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ValueError(f"line {lineno}: expected `key = value`, got {line!r}")
            key, _, raw = body.partition("=")
            key = key.strip()
            if key not in CONFIG_KEYS:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            try:
                values[key] = CONFIG_KEYS[key](raw.strip())
            except ValueError as exc:
                raise ValueError(f"line {lineno}: bad value for {key}: {raw.strip()!r}") from exc
    cam = standard_camera()
    camera = CameraIntrinsics(
        fx=values.get("fx", cam.fx), fy=values.get("fy", cam.fy),
        cx=values.get("cx", cam.cx), cy=values.get("cy", cam.cy),
        width=values.get("width", cam.width), height=values.get("height", cam.height),
    )
    lm = LMSettings(
        lambda0=values.get("lm_lambda0", 1e-3),
        max_iterations=values.get("lm_max_iter", 50),
    )
    tracker = TrackerConfig(
        sampling_step=values.get("sampling_step", 10.0),
        search_range=values.get("search_range", 8),
        gradient_threshold=values.get("gradient_threshold", 10.0),
        backend=backend,
        lm=lm,
    )
    return RunConfig(camera=camera, tracker=tracker,
                     coast_frames=values.get("coast_frames", 3))
