"""Constant-curvature forward model of the tendon-driven arm under a fixed camera.

The operative arm is a single planar segment: a circular arc of fixed length
whose total bend angle is a linear function of the motor variable q. Spacer
disks sit at equal arc-length stations and two tendons run parallel to the
backbone at a fixed in-plane offset. The supportive arm is kept only as a
static vertical bar of scene context. Everything here is pure geometry;
shading and pixel quantization happen in :mod:`arm2joint.raster`.

The camera looks along -Z at the bending plane Z=0, so depth is constant for
all arm points and the projected tip column is strictly monotone in q.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# admissible |q| for dataset labels, radians
LABEL_MAX = 7.0 * math.pi / 2.0

ARC_SAMPLES = 64
DISK_THICKNESS_PX = 2
BAR_THICKNESS_PX = 1
# clearance between the straight-pose tip and the static supportive bar, meters
_BAR_GAP_M = 0.015
_STRAIGHT_EPS = 1e-12


@dataclass(frozen=True)
class ArmConfig:
    """Geometry of the operative arm (meters, radians)."""

    backbone_length: float = 0.4
    backbone_radius: float = 0.0009
    tendon_offset: float = 0.01855
    disk_count: int = 10
    motor_to_curvature_gain: float = 0.12

    def validate(self):
        for name in ("backbone_length", "backbone_radius", "tendon_offset"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"arm.{name} must be strictly positive")
        if self.disk_count < 2:
            raise ValidationError("arm.disk_count must be at least 2")
        if not self.motor_to_curvature_gain > 0:
            raise ValidationError("arm.motor_to_curvature_gain must be strictly positive")
        if abs(self.motor_to_curvature_gain) * LABEL_MAX >= math.pi:
            raise ValidationError(
                "arm.motor_to_curvature_gain maps the label range onto bend angles "
                "outside (-pi, pi); the arc would self-overlap"
            )


@dataclass(frozen=True)
class CameraConfig:
    """Fixed pinhole camera; position/target in the world frame (meters)."""

    image_width: int = 96
    image_height: int = 96
    horizontal_fov: float = 78.0
    camera_position: tuple = (0.0, 0.2, 0.55)
    camera_target: tuple = (0.0, 0.2, 0.0)
    background_shade: float = 0.85

    def validate(self):
        if self.image_width < 32 or self.image_height < 32:
            raise ValidationError("cam.image_width and cam.image_height must be >= 32")
        if not 0.0 < self.horizontal_fov < 180.0:
            raise ValidationError("cam.horizontal_fov must lie in (0, 180) degrees")
        if len(self.camera_position) != 3 or len(self.camera_target) != 3:
            raise ValidationError("cam.camera_position and cam.camera_target must be 3-vectors")
        if tuple(self.camera_position) == tuple(self.camera_target):
            raise ValidationError("cam.camera_position must differ from cam.camera_target")
        if not 0.0 <= self.background_shade <= 1.0:
            raise ValidationError("cam.background_shade must lie in [0, 1]")


@dataclass
class ArmShape:
    """Projected scene geometry in float pixel coordinates (raster rounds/clips).

    ``disk_segments`` and ``context_segments`` are lists of
    ``(endpoints (2, 2) array, thickness_px)`` pairs.
    """

    backbone_points: np.ndarray
    disk_segments: list
    tendon_polylines: list
    context_segments: list = field(default_factory=list)


def bend_angle(q: float, cfg: ArmConfig) -> float:
    """Total bend angle of the arc for motor variable q (odd, linear map)."""
    cfg.validate()
    if not math.isfinite(q):
        raise ValidationError("q must be finite")
    return cfg.motor_to_curvature_gain * q


def backbone_world(q: float, arm: ArmConfig, samples: int = ARC_SAMPLES):
    """World-frame backbone samples and their in-plane unit normals.

    Returns ``(points (n, 2), normals (n, 2))`` for the bending plane, with the
    base at the origin pointing +Y and positive bend curving toward +X.
    """
    theta = bend_angle(q, arm)
    length = arm.backbone_length
    t = np.linspace(0.0, 1.0, samples)
    if abs(theta) < _STRAIGHT_EPS:
        x = np.zeros_like(t)
        y = length * t
        nx = np.ones_like(t)
        ny = np.zeros_like(t)
    else:
        phi = theta * t
        radius = length / theta
        x = radius * (1.0 - np.cos(phi))
        y = radius * np.sin(phi)
        nx = np.cos(phi)
        ny = -np.sin(phi)
    return np.stack([x, y], axis=1), np.stack([nx, ny], axis=1)


def _camera_frame(cam: CameraConfig):
    pos = np.asarray(cam.camera_position, dtype=np.float64)
    target = np.asarray(cam.camera_target, dtype=np.float64)
    forward = target - pos
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        raise ValidationError("camera axis may not be parallel to the world vertical")
    right = right / nr
    up = np.cross(right, forward)
    return pos, right, up, forward


def project_points(points_xy: np.ndarray, cam: CameraConfig) -> np.ndarray:
    """Pinhole-project world points from the bending plane Z=0 to pixel (u, v).

    Coordinates stay finite for any input; frame clipping is the rasterizer's
    job. v grows downward (row direction), u rightward (column direction).
    """
    pos, right, up, forward = _camera_frame(cam)
    pts = np.zeros((len(points_xy), 3), dtype=np.float64)
    pts[:, :2] = points_xy
    rel = pts - pos
    xc = rel @ right
    yc = rel @ up
    zc = np.maximum(rel @ forward, 1e-6)
    focal = (cam.image_width / 2.0) / math.tan(math.radians(cam.horizontal_fov) / 2.0)
    u = cam.image_width / 2.0 + focal * xc / zc
    v = cam.image_height / 2.0 - focal * yc / zc
    return np.stack([u, v], axis=1)


def arm_shape(q: float, arm: ArmConfig, cam: CameraConfig) -> ArmShape:
    """Full projected scene for motor variable q: backbone, disks, tendons, context."""
    arm.validate()
    cam.validate()

    centers, normals = backbone_world(q, arm)
    backbone_px = project_points(centers, cam)

    off = arm.tendon_offset
    tendon_polylines = [
        project_points(centers + off * normals, cam),
        project_points(centers - off * normals, cam),
    ]

    disk_centers, disk_normals = backbone_world(q, arm, samples=arm.disk_count)
    disk_segments = []
    for c, n in zip(disk_centers, disk_normals):
        ends = np.stack([c - off * n, c + off * n])
        disk_segments.append((project_points(ends, cam), DISK_THICKNESS_PX))

    # supportive arm: static vertical bar descending to just above the straight-pose tip
    length = arm.backbone_length
    bar_world = np.array([[0.0, length + _BAR_GAP_M], [0.0, 6.0 * length]])
    context = [(project_points(bar_world, cam), BAR_THICKNESS_PX)]

    return ArmShape(backbone_px, disk_segments, tendon_polylines, context)
