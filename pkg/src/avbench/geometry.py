"""SE(3) transforms, sweep accumulation, distances, angle math, and IOU kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BoxRecord, Vec3

Quaternion = tuple[float, float, float, float]  # (w, x, y, z)

_AREA_EPS = 1e-12  # m^2, suppresses sliver polygons from clipping


def quat_multiply(a: Quaternion, b: Quaternion) -> Quaternion:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_conjugate(q: Quaternion) -> Quaternion:
    w, x, y, z = q
    return (w, -x, -y, -z)


def quat_rotate(q: Quaternion, points: np.ndarray) -> np.ndarray:
    """Rotate (N, 3) points by a unit quaternion."""
    w, x, y, z = q
    u = np.array([x, y, z])
    pts = np.asarray(points, dtype=float)
    uv = np.cross(u, pts)
    uuv = np.cross(u, uv)
    return pts + 2.0 * (w * uv + uuv)


def quat_from_yaw(yaw: float) -> Quaternion:
    return (math.cos(yaw / 2.0), 0.0, 0.0, math.sin(yaw / 2.0))


def yaw_from_quat(q: Quaternion) -> float:
    """Heading of the rotated x-axis projected onto the ground plane."""
    vx = quat_rotate(q, np.array([[1.0, 0.0, 0.0]]))[0]
    return math.atan2(vx[1], vx[0])


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) pose as a unit quaternion (w, x, y, z) plus a translation."""

    rotation: Quaternion
    translation: Vec3

    def __post_init__(self) -> None:
        rot = tuple(float(v) for v in self.rotation)
        if len(rot) != 4:
            raise ValueError("rotation must have 4 components (w, x, y, z)")
        norm = math.sqrt(sum(v * v for v in rot))
        if not math.isfinite(norm) or abs(norm - 1.0) > 1e-9:
            raise ValueError(f"rotation quaternion norm {norm} not within 1e-9 of 1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(
            self, "translation", tuple(float(v) for v in self.translation)
        )

    @staticmethod
    def identity() -> RigidTransform:
        return RigidTransform((1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (N, 3) points into the parent frame."""
        return quat_rotate(self.rotation, points) + np.asarray(self.translation)

    def inverse(self) -> RigidTransform:
        inv_rot = quat_conjugate(self.rotation)
        # renormalize so accumulated rounding stays inside the 1e-9 gate
        norm = math.sqrt(sum(v * v for v in inv_rot))
        inv_rot = tuple(v / norm for v in inv_rot)
        inv_t = -quat_rotate(inv_rot, np.asarray([self.translation]))[0]
        return RigidTransform(inv_rot, tuple(inv_t))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Chain two poses: the result applies ``b`` first, then ``a``."""
    rot = quat_multiply(a.rotation, b.rotation)
    norm = math.sqrt(sum(v * v for v in rot))
    rot = tuple(v / norm for v in rot)
    t = quat_rotate(a.rotation, np.asarray([b.translation]))[0] + np.asarray(
        a.translation
    )
    return RigidTransform(rot, tuple(t))


@dataclass(frozen=True)
class Sweep:
    """One lidar return set: (N, 4) rows of x, y, z, intensity in sensor frame."""

    points: np.ndarray
    timestamp_us: int
    sensor_to_global: RigidTransform

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError("sweep points must be an (N, 4) array")
        if not np.isfinite(pts[:, :3]).all():
            raise ValueError("sweep point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "timestamp_us", int(self.timestamp_us))


@dataclass(frozen=True)
class DecoratedCloud:
    """Accumulated cloud: (N, 5) rows of x, y, z, intensity, time_delta seconds."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 5:
            raise ValueError("decorated points must be an (N, 5) array")
        object.__setattr__(self, "points", pts)


def accumulate_sweeps(
    sweeps: list[Sweep],
    keyframe_pose: RigidTransform,
    keyframe_time_us: int,
    window_s: float = 0.5,
) -> DecoratedCloud:
    """Merge past sweeps into the keyframe frame with a per-point time delta.

    Each surviving point is moved through inverse(keyframe_pose) composed with
    the sweep's own pose, and decorated with (keyframe_time - sweep_time) in
    seconds. Sweeps strictly older than ``window_s`` are dropped whole; the
    window endpoint is inclusive. Output lists sweeps newest-first with point
    order preserved within each sweep.

    Raises ValueError if any sweep is stamped after the keyframe.
    """
    for sweep in sweeps:
        if sweep.timestamp_us > keyframe_time_us:
            raise ValueError(
                f"sweep at {sweep.timestamp_us}us is after keyframe "
                f"{keyframe_time_us}us"
            )
    global_to_key = keyframe_pose.inverse()
    chunks: list[np.ndarray] = []
    for sweep in sorted(sweeps, key=lambda s: -s.timestamp_us):
        delta_s = (keyframe_time_us - sweep.timestamp_us) / 1e6
        if delta_s > window_s:
            continue
        to_key = compose(global_to_key, sweep.sensor_to_global)
        xyz = to_key.apply(sweep.points[:, :3])
        out = np.empty((len(xyz), 5))
        out[:, :3] = xyz
        out[:, 3] = sweep.points[:, 3]
        out[:, 4] = delta_s
        chunks.append(out)
    if not chunks:
        return DecoratedCloud(np.empty((0, 5)))
    return DecoratedCloud(np.vstack(chunks))


# ---------------------------------------------------------------------------
# Distances and angles
# ---------------------------------------------------------------------------

def center_distance_2d(a: BoxRecord, b: BoxRecord) -> float:
    """Euclidean distance between box centers on the ground plane (z ignored)."""
    return math.hypot(
        a.translation[0] - b.translation[0], a.translation[1] - b.translation[1]
    )


def yaw_diff(a: float, b: float, period: float = 2.0 * math.pi) -> float:
    """Smallest angular difference under the given period, in [0, period/2]."""
    return abs(math.remainder(a - b, period))


def velocity_error(a: BoxRecord, b: BoxRecord) -> float | None:
    """2D L2 velocity difference; None when either velocity is absent."""
    if a.velocity is None or b.velocity is None:
        return None
    return math.hypot(a.velocity[0] - b.velocity[0], a.velocity[1] - b.velocity[1])


# ---------------------------------------------------------------------------
# IOU kernels
# ---------------------------------------------------------------------------

def scale_iou(size_a: Vec3, size_b: Vec3) -> float:
    """IOU of two cuboids after aligning centers and orientations.

    Co-centered axis-aligned boxes intersect in the per-axis minimum, so the
    value has the closed form prod(min) / (Va + Vb - prod(min)).
    """
    inter = 1.0
    vol_a = 1.0
    vol_b = 1.0
    for da, db in zip(size_a, size_b):
        inter *= min(da, db)
        vol_a *= da
        vol_b *= db
    return inter / (vol_a + vol_b - inter)


def _bev_corners(box: BoxRecord) -> list[tuple[float, float]]:
    # counter-clockwise footprint corners; +x is the heading (length) axis
    w, l, _ = box.size
    hx, hy = l / 2.0, w / 2.0
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    cx, cy = box.translation[0], box.translation[1]
    local = ((hx, hy), (-hx, hy), (-hx, -hy), (hx, -hy))
    return [(cx + c * x - s * y, cy + s * x + c * y) for x, y in local]


def _polygon_area(poly: list[tuple[float, float]]) -> float:
    area = 0.0
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        area += x1 * y2 - x2 * y1
    return abs(area) / 2.0


def _clip_polygon(
    subject: list[tuple[float, float]], clip: list[tuple[float, float]]
) -> list[tuple[float, float]]:
    """Clip a convex subject polygon against a counter-clockwise convex window."""
    output = subject
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        input_poly = output
        output = []

        def side(p: tuple[float, float]) -> float:
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        m = len(input_poly)
        for j in range(m):
            cur = input_poly[j]
            nxt = input_poly[(j + 1) % m]
            cur_in = side(cur) >= 0.0
            nxt_in = side(nxt) >= 0.0
            if cur_in:
                output.append(cur)
            if cur_in != nxt_in:
                # edge crossing: side() is linear along cur->nxt, root at t
                dx, dy = nxt[0] - cur[0], nxt[1] - cur[1]
                denom = ex * dy - ey * dx
                if denom != 0.0:
                    t = -side(cur) / denom
                    output.append((cur[0] + t * dx, cur[1] + t * dy))
    return output


def _bev_intersection_area(a: BoxRecord, b: BoxRecord) -> float:
    inter_poly = _clip_polygon(_bev_corners(a), _bev_corners(b))
    if len(inter_poly) < 3:
        return 0.0
    area = _polygon_area(inter_poly)
    return area if area >= _AREA_EPS else 0.0


def bev_iou(a: BoxRecord, b: BoxRecord) -> float:
    """IOU of the yaw-rotated ground-plane rectangles."""
    inter = _bev_intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    area_a = a.size[0] * a.size[1]
    area_b = b.size[0] * b.size[1]
    return inter / (area_a + area_b - inter)


def iou_3d(a: BoxRecord, b: BoxRecord) -> float:
    """Volumetric IOU: BEV intersection extruded over the z-extent overlap."""
    inter_area = _bev_intersection_area(a, b)
    if inter_area == 0.0:
        return 0.0
    za0 = a.translation[2] - a.size[2] / 2.0
    za1 = a.translation[2] + a.size[2] / 2.0
    zb0 = b.translation[2] - b.size[2] / 2.0
    zb1 = b.translation[2] + b.size[2] / 2.0
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0.0:
        return 0.0
    inter = inter_area * dz
    vol_a = a.size[0] * a.size[1] * a.size[2]
    vol_b = b.size[0] * b.size[1] * b.size[2]
    return inter / (vol_a + vol_b - inter)
