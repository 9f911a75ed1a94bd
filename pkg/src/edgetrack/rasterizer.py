"""Software rendering of edge-ID and depth buffers, and visibility testing.

Hidden-line removal works in two passes: all triangular faces are filled into
a depth buffer (nearest camera-space z wins, depth perspective-correct via
linear 1/z interpolation), then each contour edge is line-stepped and its
encoded ID color written wherever it survives the hidden-line test: the
frontmost face at the pixel is one of the edge's own faces, or nothing was
drawn there, or the line depth is within a small relative bias of the stored
depth.  Edge IDs are packed into RGB with a spacing of 8 between channel
levels; black is reserved for background.

A pixel's edge ID answers "is this control point visible" without GPU
occlusion queries.  An independent ray-casting oracle (`visibility_oracle`)
exists purely to cross-check the buffer-based test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, PoseSE3, WireframeModel, transform_np
from .imaging import ColorImage, GrayImage, RGB888

NEAR_PLANE_MM = 1.0
DEPTH_BIAS = 1e-3  # relative; edges sit on their faces, avoid self-occlusion
BACKGROUND = -1  # decoded-ID sentinel for black pixels

MAX_EDGE_ID = 32766  # (32767 + 1) * 8 would encode to black = background


class CapacityError(ValueError):
    """Edge index outside the 15-bit ID coding capacity."""


# ---------------------------------------------------------------------------
# Edge-ID codec.

def encode_edge_id(i: int) -> tuple[int, int, int]:
    """Pack edge index i into an (R, G, B) triple, channels multiples of 8."""
    if not 0 <= i <= MAX_EDGE_ID:
        raise CapacityError(f"edge index {i} outside [0, {MAX_EDGE_ID}]")
    b_code = (i + 1) * 8
    g_code = (b_code // 256) * 8
    r_code = (g_code // 256) * 8
    return (r_code % 256, g_code % 256, b_code % 256)


def decode_edge_id(r: int, g: int, b: int) -> int:
    """Inverse of encode_edge_id; black returns the BACKGROUND sentinel."""
    if r == 0 and g == 0 and b == 0:
        return BACKGROUND
    rg = (r // 8) * 256 + g
    rgb = (rg // 8) * 256 + b
    return rgb // 8 - 1


def decode_id_array(rgb: np.ndarray) -> np.ndarray:
    """Vectorized decode of an (h, w, 3) uint8 buffer to int32 IDs."""
    r = rgb[..., 0].astype(np.int32)
    g = rgb[..., 1].astype(np.int32)
    b = rgb[..., 2].astype(np.int32)
    rg = (r // 8) * 256 + g
    ids = ((rg // 8) * 256 + b) // 8 - 1
    ids[(r == 0) & (g == 0) & (b == 0)] = BACKGROUND
    return ids


# ---------------------------------------------------------------------------
# Buffers.

@dataclass
class DepthBuffer:
    """Per-pixel camera-space z in mm; +inf where nothing was drawn."""

    width: int
    height: int
    depth: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.depth is None:
            self.depth = np.full((self.height, self.width), np.inf, dtype=np.float64)


@dataclass
class IdBuffer:
    """Per-pixel encoded edge-ID color; black (0,0,0) is background."""

    width: int
    height: int
    rgb: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.rgb is None:
            self.rgb = np.zeros((self.height, self.width, 3), dtype=np.uint8)

    def decode_at(self, x: int, y: int) -> int:
        r, g, b = self.rgb[y, x]
        return decode_edge_id(int(r), int(g), int(b))


# ---------------------------------------------------------------------------
# Rendering.

def _clip_polygon_near(points_cam: list[np.ndarray]) -> list[np.ndarray]:
    """Sutherland-Hodgman clip of a camera-space polygon against z >= near."""
    out: list[np.ndarray] = []
    n = len(points_cam)
    for i in range(n):
        a, b = points_cam[i], points_cam[(i + 1) % n]
        a_in, b_in = a[2] >= NEAR_PLANE_MM, b[2] >= NEAR_PLANE_MM
        if a_in:
            out.append(a)
        if a_in != b_in:
            s = (NEAR_PLANE_MM - a[2]) / (b[2] - a[2])
            out.append(a + s * (b - a))
    return out


def _clip_segment_near(a: np.ndarray, b: np.ndarray):
    """Clip a camera-space segment against z >= near; None when fully behind."""
    a_in, b_in = a[2] >= NEAR_PLANE_MM, b[2] >= NEAR_PLANE_MM
    if not a_in and not b_in:
        return None
    if a_in and b_in:
        return a, b
    s = (NEAR_PLANE_MM - a[2]) / (b[2] - a[2])
    cross = a + s * (b - a)
    return (cross, b) if not a_in else (a, cross)


def _project_cam(p: np.ndarray, K: CameraIntrinsics) -> tuple[float, float]:
    return (K.fx * p[0] / p[2] + K.cx, K.fy * p[1] / p[2] + K.cy)


def _fill_triangle(depth: np.ndarray, owner: np.ndarray, face_index: int,
                   pts: list, K: CameraIntrinsics):
    """Depth fill of one camera-space triangle, pixel centers at ints.

    ``owner`` records which face currently holds each pixel's nearest depth;
    the edge pass uses it for hidden-line adjacency tests.
    """
    uv = [_project_cam(p, K) for p in pts]
    inv_z = [1.0 / p[2] for p in pts]
    (x0, y0), (x1, y1), (x2, y2) = uv
    area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    if area == 0.0:
        return
    h, w = depth.shape
    xs_min = max(0, math.ceil(min(x0, x1, x2)))
    xs_max = min(w - 1, math.floor(max(x0, x1, x2)))
    ys_min = max(0, math.ceil(min(y0, y1, y2)))
    ys_max = min(h - 1, math.floor(max(y0, y1, y2)))
    if xs_min > xs_max or ys_min > ys_max:
        return
    xs = np.arange(xs_min, xs_max + 1, dtype=np.float64)
    ys = np.arange(ys_min, ys_max + 1, dtype=np.float64)[:, None]
    e12 = (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)  # barycentric of v0
    e20 = (x0 - x2) * (ys - y2) - (y0 - y2) * (xs - x2)  # barycentric of v1
    e01 = (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0)  # barycentric of v2
    if area > 0.0:
        mask = (e12 >= 0.0) & (e20 >= 0.0) & (e01 >= 0.0)
    else:
        mask = (e12 <= 0.0) & (e20 <= 0.0) & (e01 <= 0.0)
    if not mask.any():
        return
    inv_z_px = (e12 * inv_z[0] + e20 * inv_z[1] + e01 * inv_z[2]) / area
    with np.errstate(divide="ignore"):
        z = 1.0 / inv_z_px
    region = depth[ys_min:ys_max + 1, xs_min:xs_max + 1]
    owner_region = owner[ys_min:ys_max + 1, xs_min:xs_max + 1]
    write = mask & (z < region)
    region[write] = z[write]
    owner_region[write] = face_index


def _edge_pixels(a: np.ndarray, b: np.ndarray, K: CameraIntrinsics, w: int, h: int):
    """Integer line-stepping of a camera-space segment; yields (x, y, z)."""
    ua, va = _project_cam(a, K)
    ub, vb = _project_cam(b, K)
    inv_za, inv_zb = 1.0 / a[2], 1.0 / b[2]
    steps = max(1, math.ceil(max(abs(ub - ua), abs(vb - va))))
    last = None
    for k in range(steps + 1):
        s = k / steps
        x = math.floor(ua + s * (ub - ua) + 0.5)
        y = math.floor(va + s * (vb - va) + 0.5)
        if (x, y) == last:
            continue
        last = (x, y)
        if 0 <= x < w and 0 <= y < h:
            inv_z = inv_za + s * (inv_zb - inv_za)
            yield x, y, 1.0 / inv_z


def _edge_face_adjacency(model: WireframeModel) -> list[set]:
    """For each edge, the indices of faces containing both its endpoints."""
    by_pair: dict[tuple[int, int], set] = {}
    for fi, f in enumerate(model.faces):
        a, b, c = int(f[0]), int(f[1]), int(f[2])
        for p in ((a, b), (b, c), (a, c)):
            by_pair.setdefault((min(p), max(p)), set()).add(fi)
    out = []
    for e in model.edges:
        a, b = int(e[0]), int(e[1])
        out.append(by_pair.get((min(a, b), max(a, b)), set()))
    return out


def render_id_buffer(
    model: WireframeModel, pose: PoseSE3, K: CameraIntrinsics
) -> tuple[IdBuffer, DepthBuffer]:
    """Render the model's faces to depth and its edges to ID colors."""
    depth_buf = DepthBuffer(K.width, K.height)
    id_buf = IdBuffer(K.width, K.height)
    cam = transform_np(model.vertices, pose.rotation(), pose.t)

    owner = np.full((K.height, K.width), -1, dtype=np.int32)
    for fi, f in enumerate(model.faces):
        poly = _clip_polygon_near([cam[f[0]], cam[f[1]], cam[f[2]]])
        for j in range(1, len(poly) - 1):  # fan-triangulate the clipped polygon
            _fill_triangle(depth_buf.depth, owner, fi, [poly[0], poly[j], poly[j + 1]], K)

    # An edge pixel survives hidden-line removal when the frontmost surface
    # there is one of the edge's own faces (the edge bounds the visible
    # surface), when nothing was drawn there, or when the line depth is
    # within the relative bias of the stored depth.  The adjacency clause
    # covers steep faces whose pixel-center depth sits well in front of the
    # exact edge depth, where any fixed bias would misjudge.
    adjacency = _edge_face_adjacency(model)
    depth = depth_buf.depth

    # Among edges crossing one pixel the nearest wins, independent of order.
    edge_depth = np.full((K.height, K.width), np.inf, dtype=np.float64)
    for i, e in enumerate(model.edges):
        seg = _clip_segment_near(cam[e[0]], cam[e[1]])
        if seg is None:
            continue
        color = encode_edge_id(i)
        own_faces = adjacency[i]
        for x, y, z in _edge_pixels(seg[0], seg[1], K, K.width, K.height):
            passes = owner[y, x] in own_faces or z <= depth[y, x] * (1.0 + DEPTH_BIAS)
            if passes and z < edge_depth[y, x]:
                edge_depth[y, x] = z
                id_buf.rgb[y, x] = color
    return id_buf, depth_buf


# ---------------------------------------------------------------------------
# Visibility tests.

def _round_px(v: float) -> int:
    return math.floor(v + 0.5) if v >= 0.0 else math.ceil(v - 0.5)


def is_point_visible(p, edge_index: int, id_buffer: IdBuffer, strict: bool = False) -> bool:
    """True when the ID buffer credits pixel round(p) (or a 3x3 neighbor) to edge_index.

    The neighborhood absorbs the quantization gap between sub-pixel control
    points and the integer-rasterized buffer; ``strict`` restricts the test
    to the exact pixel.
    """
    x, y = _round_px(float(p[0])), _round_px(float(p[1]))
    if not (0 <= x < id_buffer.width and 0 <= y < id_buffer.height):
        return False
    if id_buffer.decode_at(x, y) == edge_index:
        return True
    if strict:
        return False
    for ny in range(max(0, y - 1), min(id_buffer.height, y + 2)):
        for nx in range(max(0, x - 1), min(id_buffer.width, x + 2)):
            if id_buffer.decode_at(nx, ny) == edge_index:
                return True
    return False


def visibility_oracle(
    model: WireframeModel, pose: PoseSE3, K: CameraIntrinsics, p3d, tol: float = 1e-6
) -> bool:
    """Ray-cast visibility of a world point on a model edge.

    Visible iff the open segment from the camera center to the point crosses
    no model face strictly nearer than the point (relative tolerance excludes
    the faces the edge itself lies on).
    """
    del K  # visibility is viewport-independent; kept for signature symmetry
    center = pose.camera_center()
    target = np.asarray(p3d, dtype=np.float64)
    direction = target - center
    dist = float(np.linalg.norm(direction))
    if dist == 0.0:
        return False
    direction = direction / dist

    v0 = model.vertices[model.faces[:, 0]]
    e1 = model.vertices[model.faces[:, 1]] - v0
    e2 = model.vertices[model.faces[:, 2]] - v0
    # Moller-Trumbore, vectorized across faces.
    pvec = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_det = np.where(np.abs(det) > 1e-12, 1.0 / det, 0.0)
        tvec = center - v0
        u = np.einsum("ij,ij->i", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1)
        v = np.einsum("ij,j->i", qvec, direction) * inv_det
        s = np.einsum("ij,ij->i", e2, qvec) * inv_det
    hit = (
        (np.abs(det) > 1e-12)
        & (u >= -1e-9)
        & (v >= -1e-9)
        & (u + v <= 1.0 + 1e-9)
        & (s > dist * tol)
        & (s < dist * (1.0 - tol))
    )
    return not bool(hit.any())


# ---------------------------------------------------------------------------
# Debug dumps.

def id_buffer_to_image(id_buffer: IdBuffer) -> ColorImage:
    return ColorImage(id_buffer.rgb.copy(), RGB888)


def depth_buffer_to_image(depth_buffer: DepthBuffer) -> GrayImage:
    """Nearest depth maps dark, farthest light; empty pixels white."""
    d = depth_buffer.depth
    finite = np.isfinite(d)
    out = np.full(d.shape, 255, dtype=np.uint8)
    if finite.any():
        lo, hi = float(d[finite].min()), float(d[finite].max())
        span = hi - lo if hi > lo else 1.0
        out[finite] = np.clip((d[finite] - lo) / span * 254.0, 0.0, 254.0).astype(np.uint8)
    return GrayImage(out)
