"""Pose refinement from edge-normal reprojection residuals.

Each matched control point contributes a signed scalar residual: the
component of (match - projection) along the edge normal.  A Levenberg-
Marquardt loop minimizes the sum of squared residuals over the 6 pose
parameters, with the rotation updated incrementally on the left so the
Jacobian never differentiates through the exponential map at large angles.

Everything runs on the realmath backend scalars, so the same code path
produces float results or bit-reproducible fixed-point results.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import (
    BehindCameraError,
    CameraIntrinsics,
    PoseSE3,
    WireframeModel,
    exp_map,
    log_rotation_np,
)
from .imaging import GrayImage
from .rasterizer import render_id_buffer
from .realmath import FixedPoint, get_backend

# Relative pivot size below which the damped normal system counts as singular.
_PIVOT_RTOL = 1e-12


class DegenerateGeometryError(ValueError):
    """Measurement geometry leaves pose directions unobservable."""


@dataclass
class LMSettings:
    """Damping schedule and stopping rules for the pose solver.

    ``tol_relative`` / ``tol_step`` of None pick per-backend defaults:
    1e-6 / 1e-8 for float, 1e-4 / 1e-5 for the fixed-point formats, whose
    cost surface is quantized too coarsely for the float thresholds.
    """

    lambda0: float = 1e-3
    lambda_scale: float = 10.0
    lambda_max: float = 1e4
    max_iterations: int = 50
    max_rejections: int = 10
    tol_relative: Optional[float] = None
    tol_step: Optional[float] = None

    def __post_init__(self):
        if self.lambda0 <= 0 or self.lambda_scale <= 1:
            raise ValueError("damping requires lambda0 > 0 and scale > 1")
        if self.lambda_max < self.lambda0:
            raise ValueError("lambda_max must be >= lambda0")

    def resolved_tolerances(self, backend) -> tuple[float, float]:
        is_float = backend.resolution < 1e-15
        rel = self.tol_relative if self.tol_relative is not None else (1e-6 if is_float else 1e-4)
        step = self.tol_step if self.tol_step is not None else (1e-8 if is_float else 1e-5)
        return rel, step


def _scalar_float(x) -> float:
    """Exact float view of a backend scalar, for control-flow tests only."""
    return x.to_float() if isinstance(x, FixedPoint) else float(x)


# ---------------------------------------------------------------------------
# Residual and Jacobian.

def residual(p, q, n):
    """Signed distance of the match q from the projected point p along n.

    The unit-normal check allows a few ulps of slack for fixed-point
    scalars: storing a unit vector at Q47.16 resolution already perturbs
    the squared norm by more than the float tolerance.
    """
    nn = n[0] * n[0] + n[1] * n[1]
    tol = 1e-6
    if isinstance(nn, FixedPoint):
        tol = max(tol, 16.0 * nn.FORMAT.resolution)
    if abs(_scalar_float(nn) - 1.0) > tol:
        raise ValueError("edge normal must be unit length")
    return (q[0] - p[0]) * n[0] + (q[1] - p[1]) * n[1]


def _rotate(R, v):
    return (
        R[0][0] * v[0] + R[0][1] * v[1] + R[0][2] * v[2],
        R[1][0] * v[0] + R[1][1] * v[1] + R[1][2] * v[2],
        R[2][0] * v[0] + R[2][1] * v[1] + R[2][2] * v[2],
    )


def _project_with_cam(X, R, t, Kb, backend):
    """Projected 2D point plus the rotated-only and camera-space 3D points."""
    v = _rotate(R, X)
    c = (v[0] + t[0], v[1] + t[1], v[2] + t[2])
    if not c[2] > backend.zero:
        raise BehindCameraError("point behind camera")
    u = Kb.fx * c[0] / c[2] + Kb.cx
    w = Kb.fy * c[1] / c[2] + Kb.cy
    return (u, w), v, c


def _jacobian_row(v, c, n, Kb):
    """Jacobian row from the rotated point v and camera point c.

    With g = n^T * d(projection)/d(camera point), the row is (g x v, -g):
    the rotation block comes from a left-multiplied increment exp(eps)*R,
    which keeps the linearization well-behaved at any rotation magnitude.
    """
    z = c[2]
    gx = n[0] * Kb.fx / z
    gy = n[1] * Kb.fy / z
    gz = -(n[0] * (Kb.fx * c[0] / z) + n[1] * (Kb.fy * c[1] / z)) / z
    return (
        gy * v[2] - gz * v[1],
        gz * v[0] - gx * v[2],
        gx * v[1] - gy * v[0],
        -gx,
        -gy,
        -gz,
    )


def residual_jacobian(X, R, t, Kb, n, backend):
    """Row of ∂r/∂(rotation increment, translation) at the current pose."""
    _, v, c = _project_with_cam(X, R, t, Kb, backend)
    return _jacobian_row(v, c, n, Kb)


def _build_system(measurements, R, t, Kb, backend):
    """All residuals and Jacobian rows at the pose (R, t)."""
    rs = []
    rows = []
    for m in measurements:
        p, v, c = _project_with_cam(m.X, R, t, Kb, backend)
        rs.append(residual(p, m.match, m.n))
        rows.append(_jacobian_row(v, c, m.n, Kb))
    return rs, rows


def _solve_linear6(A, b, backend):
    """Gaussian elimination with partial pivoting; None when singular."""
    aug = [list(A[i]) + [b[i]] for i in range(6)]
    ref = max(abs(_scalar_float(A[i][j])) for i in range(6) for j in range(6))
    if ref == 0.0:
        return None
    for col in range(6):
        piv = max(range(col, 6), key=lambda r: abs(_scalar_float(aug[r][col])))
        if abs(_scalar_float(aug[piv][col])) <= _PIVOT_RTOL * ref:
            return None
        if piv != col:
            aug[col], aug[piv] = aug[piv], aug[col]
        pivot = aug[col][col]
        for r in range(col + 1, 6):
            factor = aug[r][col] / pivot
            for cc in range(col, 7):
                aug[r][cc] = aug[r][cc] - factor * aug[col][cc]
    x = [backend.zero] * 6
    for row in range(5, -1, -1):
        acc = aug[row][6]
        for cc in range(row + 1, 6):
            acc = acc - aug[row][cc] * x[cc]
        x[row] = acc / aug[row][row]
    return x


def _mat_mul3(A, B):
    return [
        [sum(A[i][k] * B[k][j] for k in range(3)) for j in range(3)]
        for i in range(3)
    ]


def _pose_from_backend(R, t, backend) -> PoseSE3:
    Rf = np.array([[backend.to_float(R[i][j]) for j in range(3)] for i in range(3)])
    tf = np.array([backend.to_float(v) for v in t])
    return PoseSE3(log_rotation_np(Rf), tf)


# ---------------------------------------------------------------------------
# Levenberg-Marquardt.

def solve_lm(measurements, pose0: PoseSE3, K: CameraIntrinsics, settings: LMSettings, backend):
    """Minimize the squared edge-normal residuals over the 6 pose parameters.

    Returns (refined pose, sum of absolute residuals, accepted steps).
    Rejected trial steps escalate the damping; a normal system that stays
    singular through the whole escalation raises DegenerateGeometryError.
    """
    pose, err, iterations, _ = _solve_lm_full(measurements, pose0, K, settings, backend)
    return pose, err, iterations


def _solve_lm_full(measurements, pose0: PoseSE3, K: CameraIntrinsics,
                   settings: LMSettings, backend):
    """solve_lm plus the total trial-step count (accepted and rejected):
    the honest measure of how hard the minimization worked."""
    be = backend
    tol_rel, tol_step = settings.resolved_tolerances(be)
    tol_rel_b = be.from_float(tol_rel)
    tol_step_b = be.from_float(tol_step)
    Kb = K.to_backend(be)
    R = exp_map(tuple(be.from_float(w) for w in pose0.omega), be)
    t = [be.from_float(v) for v in pose0.t]

    rs, rows = _build_system(measurements, R, t, Kb, be)
    cost = be.zero
    for r in rs:
        cost = cost + r * r
    iterations = 0
    attempts = 0
    lam = be.from_float(settings.lambda0)
    if not cost > be.zero:
        return _pose_from_backend(R, t, be), 0.0, 0, 0

    for _ in range(settings.max_iterations):
        A = [[be.zero] * 6 for _ in range(6)]
        g = [be.zero] * 6
        for r, row in zip(rs, rows):
            for i in range(6):
                g[i] = g[i] + row[i] * r
                for j in range(i, 6):
                    A[i][j] = A[i][j] + row[i] * row[j]
        for i in range(6):
            for j in range(i):
                A[i][j] = A[j][i]

        rejections = 0
        accepted = False
        singular = False
        while True:
            attempts += 1
            damped = [list(A[i]) for i in range(6)]
            for i in range(6):
                damped[i][i] = A[i][i] + lam * A[i][i]
            delta = _solve_linear6(damped, [-v for v in g], be)
            singular = delta is None
            if not singular:
                R_new = _mat_mul3(exp_map((delta[0], delta[1], delta[2]), be), R)
                t_new = [t[i] + delta[3 + i] for i in range(3)]
                try:
                    rs_new, rows_new = _build_system(measurements, R_new, t_new, Kb, be)
                except BehindCameraError:
                    rs_new = None
                if rs_new is not None:
                    cost_new = be.zero
                    for r in rs_new:
                        cost_new = cost_new + r * r
                    if cost_new < cost:
                        accepted = True
                        break
            rejections += 1
            if rejections > settings.max_rejections:
                break
            # The cap keeps the damped diagonal inside the fixed-point
            # range; steps are already negligible at that damping.
            lam = lam * be.from_float(settings.lambda_scale)
            lam_cap = be.from_float(settings.lambda_max)
            if lam > lam_cap:
                lam = lam_cap

        if not accepted:
            if singular:
                raise DegenerateGeometryError(
                    "normal system singular after full damping escalation"
                )
            break
        lam = lam / be.from_float(settings.lambda_scale)
        iterations += 1
        decrease = cost - cost_new
        rel_small = decrease < tol_rel_b * cost
        step_sq = be.zero
        for d in delta:
            step_sq = step_sq + d * d
        step_small = be.sqrt(step_sq) < tol_step_b
        R, t, rs, rows, cost = R_new, t_new, rs_new, rows_new, cost_new
        if rel_small or step_small or not cost > be.zero:
            break

    err = 0.0
    for r in rs:
        err += abs(_scalar_float(r))
    return _pose_from_backend(R, t, be), err, iterations, attempts


# ---------------------------------------------------------------------------
# Per-frame pipeline.

@dataclass
class FrameStats:
    """Counters and stage timings for one tracked frame."""

    sampled: int
    matched: int
    err: float
    iterations: int  # accepted LM steps
    attempts: int  # all LM trial steps, including rejected ones
    t_visible: float  # render + visibility bookkeeping, seconds
    t_me: float  # measurement collection incl. the 1D search
    t_pose: float  # LM refinement
    t_gray: float = 0.0  # gray conversion, filled by the caller when it converts


def track_frame(prev_pose: PoseSE3, gray: GrayImage, model: WireframeModel,
                K: CameraIntrinsics, cfg) -> tuple[PoseSE3, FrameStats]:
    """Refine the previous pose against one gray frame.

    Renders the ID buffer at the prediction, collects matched control
    points, and runs the LM solver from the prediction.  Insufficient
    measurements or degenerate geometry propagate to the caller, which
    owns the coast-or-abort policy.
    """
    from .tracking import collect_measurements

    if (gray.width, gray.height) != (K.width, K.height):
        raise ValueError("image dimensions do not match the camera")
    be = get_backend(cfg.backend)
    t0 = time.perf_counter()
    id_buf, _ = render_id_buffer(model, prev_pose, K)
    t1 = time.perf_counter()
    ms = collect_measurements(model, prev_pose, K, gray, id_buf, cfg, be)
    t2 = time.perf_counter()
    pose, err, iterations, attempts = _solve_lm_full(ms.points, prev_pose, K, cfg.lm, be)
    t3 = time.perf_counter()
    stats = FrameStats(
        sampled=ms.n_sampled,
        matched=ms.n_matched,
        err=err,
        iterations=iterations,
        attempts=attempts,
        t_visible=t1 - t0,
        t_me=t2 - t1,
        t_pose=t3 - t2,
    )
    return pose, stats
