"""Wireframe models, pinhole camera projection, and SE(3) poses.

Rotation is parameterized by an exponential-map vector: direction is the
rotation axis, norm is the angle in radians.  The pose convention is
camera-from-world (``x_cam = R x_world + t``), translations in millimeters,
image y growing downward.

Scalar-level routines (`exp_map`, `project_point`) are written against the
realmath backend protocol so they run identically in floating point and fixed
point.  Bulk float paths for the rasterizer and harness use numpy directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_EDGES = 32767  # edge IDs occupy 15 bits; index 32767 would encode to black


class ModelFormatError(ValueError):
    """A model file could not be parsed or violates model invariants."""


class BehindCameraError(ValueError):
    """A point with non-positive camera-space depth was projected."""


# ---------------------------------------------------------------------------
# Domain types.

@dataclass
class WireframeModel:
    """Triangulated solid with an explicit list of contour edges to track."""

    vertices: np.ndarray  # (N, 3) float64, mm
    faces: np.ndarray  # (M, 3) int32, vertex indices
    edges: np.ndarray  # (E, 2) int32, vertex indices; row order is the edge ID

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int32).reshape(-1, 3)
        self.edges = np.asarray(self.edges, dtype=np.int32).reshape(-1, 2)
        n = len(self.vertices)
        for name, idx in (("face", self.faces), ("edge", self.edges)):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ModelFormatError(f"{name} vertex index out of range")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise ModelFormatError("zero-length edge")
        pairs = {tuple(sorted(e)) for e in self.edges.tolist()}
        if len(pairs) != len(self.edges):
            raise ModelFormatError("duplicate undirected edge")
        if len(self.edges) > MAX_EDGES:
            raise ModelFormatError(
                f"{len(self.edges)} edges exceed the {MAX_EDGES} edge-ID capacity"
            )


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels; no distortion model."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def to_backend(self, backend) -> "BackendIntrinsics":
        return BackendIntrinsics(
            fx=backend.from_float(self.fx),
            fy=backend.from_float(self.fy),
            cx=backend.from_float(self.cx),
            cy=backend.from_float(self.cy),
        )


@dataclass(frozen=True)
class BackendIntrinsics:
    """Intrinsics pre-converted to one backend's scalar type."""

    fx: object
    fy: object
    cx: object
    cy: object


@dataclass
class PoseSE3:
    """Camera-from-world pose: exp-map rotation vector plus translation (mm)."""

    omega: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.omega = _canonical_omega(np.asarray(self.omega, dtype=np.float64).reshape(3))
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3).copy()

    def rotation(self) -> np.ndarray:
        return exp_map_np(self.omega)

    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates: -R^T t."""
        return -self.rotation().T @ self.t

    def copy(self) -> "PoseSE3":
        return PoseSE3(self.omega.copy(), self.t.copy())


def _canonical_omega(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    if theta <= math.pi or theta == 0.0:
        return omega.copy()
    reduced = math.fmod(theta, 2.0 * math.pi)
    if reduced > math.pi:
        reduced -= 2.0 * math.pi  # negative: flips the axis below
    return omega * (reduced / theta)


# ---------------------------------------------------------------------------
# Exponential map.

_TAYLOR_ANGLE = 1e-6


def exp_map(omega: Sequence, backend) -> list:
    """Rodrigues rotation from three backend scalars, as a 3x3 nested list."""
    wx, wy, wz = omega
    xx, yy, zz = wx * wx, wy * wy, wz * wz
    xy, xz, yz = wx * wy, wx * wz, wy * wz
    theta_sq = xx + yy + zz
    theta = backend.sqrt(theta_sq)
    if backend.to_float(theta) < _TAYLOR_ANGLE:
        # I + W + W^2/2: second-order Taylor, no division by the tiny angle
        return [
            [1 - (yy + zz) / 2, xy / 2 - wz, xz / 2 + wy],
            [xy / 2 + wz, 1 - (xx + zz) / 2, yz / 2 - wx],
            [xz / 2 - wy, yz / 2 + wx, 1 - (xx + yy) / 2],
        ]
    a = backend.sin(theta) / theta
    b = (1 - backend.cos(theta)) / theta_sq
    return [
        [1 - b * (yy + zz), b * xy - a * wz, b * xz + a * wy],
        [b * xy + a * wz, 1 - b * (xx + zz), b * yz - a * wx],
        [b * xz - a * wy, b * yz + a * wx, 1 - b * (xx + yy)],
    ]


def exp_map_np(omega: np.ndarray) -> np.ndarray:
    """Float-path Rodrigues rotation as a numpy 3x3 array."""
    from .realmath import FloatBackend

    w = np.asarray(omega, dtype=np.float64).reshape(3)
    return np.array(exp_map((w[0], w[1], w[2]), FloatBackend()), dtype=np.float64)


def log_rotation_np(R: np.ndarray) -> np.ndarray:
    """Exp-map vector of a rotation matrix (float path, ||result|| in [0, pi])."""
    v = np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]], dtype=np.float64
    )
    sin_theta = 0.5 * float(np.linalg.norm(v))
    cos_theta = 0.5 * (float(np.trace(R)) - 1.0)
    theta = math.atan2(sin_theta, min(1.0, max(-1.0, cos_theta)))
    if theta < 1e-6:
        return 0.5 * v
    if theta < math.pi - 1e-4:
        return v * (theta / (2.0 * sin_theta))
    # Near pi the skew part vanishes; recover the axis from the diagonal.
    k = int(np.argmax(np.diag(R)))
    axis = np.empty(3)
    axis[k] = math.sqrt(max(0.0, (R[k, k] + 1.0) / 2.0))
    for i in range(3):
        if i != k:
            axis[i] = (R[k, i] + R[i, k]) / (4.0 * axis[k])
    axis /= np.linalg.norm(axis)
    if sin_theta > 1e-12 and np.dot(axis, v) < 0.0:
        axis = -axis
    return axis * theta


def look_at_pose(camera_pos, target=(0.0, 0.0, 0.0), down=(0.0, 1.0, 0.0)) -> PoseSE3:
    """Camera-from-world pose with the camera at camera_pos facing target.

    ``down`` is a world-space hint for the image's downward direction (image
    y grows downward); it falls back to +x when collinear with the view axis.
    """
    c = np.asarray(camera_pos, dtype=np.float64).reshape(3)
    z = np.asarray(target, dtype=np.float64).reshape(3) - c
    norm = np.linalg.norm(z)
    if norm == 0.0:
        raise ValueError("camera position coincides with the look-at target")
    z = z / norm
    d = np.asarray(down, dtype=np.float64).reshape(3)
    x = np.cross(d, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(np.array([1.0, 0.0, 0.0]), z)
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(np.array([0.0, 0.0, 1.0]), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return PoseSE3(log_rotation_np(R), -R @ c)


# ---------------------------------------------------------------------------
# Projection.

def project_point(X: Sequence, R: Sequence, t: Sequence, K: BackendIntrinsics, backend):
    """Project one world point; returns (u, v, depth) in backend scalars.

    R and t are camera-from-world in backend scalars (R a 3x3 nested list).
    Raises BehindCameraError when camera-space z <= 0.
    """
    x, y, z = X
    xc = R[0][0] * x + R[0][1] * y + R[0][2] * z + t[0]
    yc = R[1][0] * x + R[1][1] * y + R[1][2] * z + t[1]
    zc = R[2][0] * x + R[2][1] * y + R[2][2] * z + t[2]
    if not zc > backend.zero:
        raise BehindCameraError(f"point depth {backend.to_float(zc)} mm is not positive")
    u = K.fx * xc / zc + K.cx
    v = K.fy * yc / zc + K.cy
    return u, v, zc


def project_np(points: np.ndarray, R: np.ndarray, t: np.ndarray, K: CameraIntrinsics):
    """Vectorized float projection; returns (uv (N,2), depth (N,)), unclipped.

    Depths may be non-positive; callers clip.  Rows with z <= 0 get NaN uv.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = pts @ np.asarray(R, dtype=np.float64).T + np.asarray(t, dtype=np.float64)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(z > 0.0, K.fx * cam[:, 0] / z + K.cx, np.nan)
        v = np.where(z > 0.0, K.fy * cam[:, 1] / z + K.cy, np.nan)
    return np.stack([u, v], axis=1), z


def transform_np(points: np.ndarray, R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """World points to camera space, vectorized float path."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return pts @ np.asarray(R, dtype=np.float64).T + np.asarray(t, dtype=np.float64)


# ---------------------------------------------------------------------------
# Model file I/O.

def load_model(path) -> WireframeModel:
    """Parse a wireframe model file.

    Format, one item per line, ``#`` starts a comment, indices 1-based::

        v <x> <y> <z>   vertex (mm)
        f <i> <j> <k>   triangular face
        e <i> <j>       contour edge (optional)

    Without ``e`` lines, edges are the unique undirected vertex pairs of all
    faces, ordered lexicographically by sorted pair.  With ``e`` lines, edge
    IDs follow order of appearance.
    """
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, tuple]] = []  # (lineno, indices)
    edges: list[tuple[int, tuple]] = []
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.readlines()
    for lineno, raw_line in enumerate(lines, start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        if kind == "v":
            if len(args) != 3:
                raise ModelFormatError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                vertices.append(tuple(float(a) for a in args))
            except ValueError:
                raise ModelFormatError(f"line {lineno}: bad vertex coordinate") from None
        elif kind == "f":
            faces.append((lineno, _parse_indices(args, 3, lineno)))
        elif kind == "e":
            edges.append((lineno, _parse_indices(args, 2, lineno)))
        else:
            raise ModelFormatError(f"line {lineno}: unknown directive {kind!r}")
    if not vertices:
        raise ModelFormatError("model has no vertices")
    n = len(vertices)
    for lineno, idx in faces + edges:
        for i in idx:
            if i >= n:
                raise ModelFormatError(
                    f"line {lineno}: vertex index {i + 1} exceeds vertex count {n}"
                )
    edge_rows = [idx for _, idx in edges]
    if not edge_rows:
        pair_set = set()
        for _, f in faces:
            for a, b in ((f[0], f[1]), (f[1], f[2]), (f[0], f[2])):
                pair_set.add((min(a, b), max(a, b)))
        edge_rows = sorted(pair_set)
    if len(edge_rows) > MAX_EDGES:
        raise ModelFormatError(
            f"{len(edge_rows)} edges exceed the {MAX_EDGES} edge-ID capacity"
        )
    return WireframeModel(
        vertices=np.array(vertices, dtype=np.float64).reshape(n, 3),
        faces=np.array([f for _, f in faces], dtype=np.int32).reshape(-1, 3),
        edges=np.array(edge_rows, dtype=np.int32).reshape(-1, 2),
    )


def _parse_indices(args, count, lineno):
    if len(args) != count:
        raise ModelFormatError(f"line {lineno}: expected {count} vertex indices")
    try:
        idx = [int(a) for a in args]
    except ValueError:
        raise ModelFormatError(f"line {lineno}: bad vertex index") from None
    for i in idx:
        if i < 1:
            raise ModelFormatError(f"line {lineno}: vertex index {i} below 1 (1-based)")
    return tuple(i - 1 for i in idx)
