"""Shared fixtures: model files, random scenes, and the standard camera."""

import numpy as np
import pytest

from edgetrack.geometry import CameraIntrinsics, WireframeModel, load_model, look_at_pose

CUBE_VERTICES = [
    (-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
    (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1),
]
CUBE_FACES = [
    (1, 2, 3), (1, 3, 4), (5, 6, 7), (5, 7, 8),
    (1, 2, 6), (1, 6, 5), (4, 3, 7), (4, 7, 8),
    (1, 4, 8), (1, 8, 5), (2, 3, 7), (2, 7, 6),
]
CUBE_EDGES = [
    (1, 2), (2, 3), (3, 4), (4, 1),
    (5, 6), (6, 7), (7, 8), (8, 5),
    (1, 5), (2, 6), (3, 7), (4, 8),
]


def cube_model_text(side: float = 60.0) -> str:
    """Axis-aligned cube centered on the origin, 12 explicit contour edges."""
    half = side / 2.0
    lines = ["# cube, side %g mm" % side]
    for x, y, z in CUBE_VERTICES:
        lines.append(f"v {x * half} {y * half} {z * half}")
    for f in CUBE_FACES:
        lines.append("f %d %d %d" % f)
    for e in CUBE_EDGES:
        lines.append("e %d %d" % e)
    return "\n".join(lines) + "\n"


@pytest.fixture
def cube_model_path(tmp_path):
    path = tmp_path / "cube.model"
    path.write_text(cube_model_text())
    return path


@pytest.fixture
def cube_model(cube_model_path):
    return load_model(cube_model_path)


@pytest.fixture
def qvga_camera():
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=160.0, cy=120.0, width=320, height=240)


def random_convex_model(rng, n_points: int = 14, radius: float = 30.0) -> WireframeModel:
    """Convex polyhedron from random sphere points; edges derived from faces."""
    from scipy.spatial import ConvexHull

    pts = rng.normal(size=(n_points, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    pts *= radius
    faces = ConvexHull(pts).simplices
    pairs = set()
    for f in faces:
        a, b, c = int(f[0]), int(f[1]), int(f[2])
        pairs.update({(min(a, b), max(a, b)), (min(b, c), max(b, c)), (min(a, c), max(a, c))})
    return WireframeModel(vertices=pts, faces=faces, edges=sorted(pairs))


def random_orbit_pose(rng, distance_range=(120.0, 260.0)):
    """Camera on a random bearing looking at the origin."""
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    camera = direction * rng.uniform(*distance_range)
    down = rng.normal(size=3)
    while np.linalg.norm(np.cross(down, -direction)) < 1e-6:
        down = rng.normal(size=3)
    return look_at_pose(camera, target=(0.0, 0.0, 0.0), down=down)


def silhouette_edge_ids(model, pose) -> set:
    """Edges between a front- and a back-facing face for this view.

    Points on such edges sit exactly on the silhouette: their visibility is
    tangent-marginal, and the ID buffer can legitimately report either state.
    The model interior must contain the origin (true for the test shapes).
    """
    center = pose.camera_center()
    verts = model.vertices
    facing = []
    for f in model.faces:
        a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
        n = np.cross(b - a, c - a)
        if np.dot(n, a + b + c) < 0.0:  # orient outward from the origin
            n = -n
        facing.append(bool(np.dot(n, a - center) < 0.0))
    by_pair = {}
    for fi, f in enumerate(model.faces):
        a, b, c = int(f[0]), int(f[1]), int(f[2])
        for p in ((a, b), (b, c), (a, c)):
            by_pair.setdefault((min(p), max(p)), []).append(fi)
    out = set()
    for i, e in enumerate(model.edges):
        a, b = int(e[0]), int(e[1])
        adj = by_pair.get((min(a, b), max(a, b)), [])
        if len(adj) != 2 or facing[adj[0]] != facing[adj[1]]:
            out.add(i)
    return out


def perturbed_pose(pose, angle_rad: float, dist_mm: float, rng):
    """Pose offset by a rotation of angle_rad and a translation of dist_mm."""
    from edgetrack.geometry import PoseSE3, exp_map_np, log_rotation_np

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    shift = rng.normal(size=3)
    shift *= dist_mm / np.linalg.norm(shift)
    R = exp_map_np(angle_rad * axis) @ exp_map_np(pose.omega)
    return PoseSE3(log_rotation_np(R), pose.t + shift)


def synthetic_measurements(model, pose, K, step: float = 10.0):
    """Noiseless control points with exact matches at a known pose.

    Samples each edge uniformly in 3D and projects; independent of the
    tracker's image-driven sampling so it can serve as its oracle.
    """
    from edgetrack.geometry import exp_map_np
    from edgetrack.tracking import ControlPoint

    R = exp_map_np(pose.omega)
    out = []
    for ei, (ia, ib) in enumerate(model.edges):
        A = np.asarray(model.vertices[ia], dtype=float)
        B = np.asarray(model.vertices[ib], dtype=float)
        ca = R @ A + pose.t
        cb = R @ B + pose.t
        if ca[2] <= 0 or cb[2] <= 0:
            continue
        pa = np.array([K.fx * ca[0] / ca[2] + K.cx, K.fy * ca[1] / ca[2] + K.cy])
        pb = np.array([K.fx * cb[0] / cb[2] + K.cx, K.fy * cb[1] / cb[2] + K.cy])
        d = pb - pa
        length = float(np.hypot(d[0], d[1]))
        count = int(length // step)
        if count == 0:
            continue
        n = np.array([-d[1], d[0]]) / length
        for k in range(count):
            tau = (k + 0.5) / count
            X = A + tau * (B - A)
            c = R @ X + pose.t
            q = (K.fx * c[0] / c[2] + K.cx, K.fy * c[1] / c[2] + K.cy)
            out.append(
                ControlPoint(
                    edge_index=ei, p=q, n=(float(n[0]), float(n[1])),
                    X=(float(X[0]), float(X[1]), float(X[2])), match=q,
                )
            )
    return out


def pose_errors(pose_a, pose_b):
    """(geodesic rotation angle, translation distance) between two poses."""
    from edgetrack.geometry import exp_map_np

    Ra = exp_map_np(pose_a.omega)
    Rb = exp_map_np(pose_b.omega)
    cosang = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    ang = float(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return ang, float(np.linalg.norm(np.asarray(pose_a.t) - np.asarray(pose_b.t)))
