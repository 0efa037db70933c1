"""Hard-edged software rasterizer and bit-exact binary PPM/PGM image I/O.

No anti-aliasing anywhere: primitives are stamped with square pens on integer
pixels, so a given scene renders to byte-identical buffers on every run.
Intensities are floats in [0, 1]; files store 8-bit values produced by
round-half-up quantization (v -> floor(255*v + 0.5)).
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arm_sim import ArmShape, CameraConfig
from .errors import ValidationError

PROVENANCES = ("synthetic", "ingested", "augmented")

# fixed palette (RGB, [0, 1]); background comes from CameraConfig.background_shade
BACKBONE_SHADE = (0.08, 0.10, 0.16)
TENDON_SHADE = (0.30, 0.28, 0.26)
DISK_SHADE = (0.98, 0.90, 0.62)
CONTEXT_SHADE = (0.42, 0.42, 0.46)

DEFAULT_BACKBONE_THICKNESS = 3


class PpmError(ValueError):
    """A netpbm file is malformed."""


class PpmHeaderError(PpmError):
    pass


class PpmMaxvalError(PpmError):
    pass


class PpmPayloadError(PpmError):
    pass


@dataclass
class Image:
    """Dense RGB image: float32 (H, W, 3) with every value in [0, 1]."""

    data: np.ndarray
    provenance: str = "synthetic"

    def validate(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValidationError(f"image data must be (H, W, 3), got {self.data.shape}")
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        if not np.isfinite(self.data).all():
            raise ValidationError("image contains non-finite values")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValidationError("image values must lie in [0, 1]")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


def quantize(data: np.ndarray) -> np.ndarray:
    """[0,1] floats -> uint8 via round-half-up (platform-independent)."""
    v = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def dequantize(data: np.ndarray) -> np.ndarray:
    """uint8 -> float32 in [0, 1]."""
    return data.astype(np.float32) / np.float32(255.0)


def _iround(x: float) -> int:
    # round half up, independent of the platform's banker's rounding
    return int(math.floor(x + 0.5))


def _clip_segment(x0, y0, x1, y1, xmax, ymax, margin):
    """Liang-Barsky clip of a float segment to the padded frame box, or None."""
    t0, t1 = 0.0, 1.0
    dx, dy = x1 - x0, y1 - y0
    for p, q in (
        (-dx, x0 - (-margin)),
        (dx, (xmax + margin) - x0),
        (-dy, y0 - (-margin)),
        (dy, (ymax + margin) - y0),
    ):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            if r > t0:
                t0 = r
        else:
            if r < t0:
                return None
            if r < t1:
                t1 = r
    return (x0 + t0 * dx, y0 + t0 * dy, x0 + t1 * dx, y0 + t1 * dy)


def _bresenham(x0, y0, x1, y1):
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        yield x0, y0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def draw_polyline(buf: np.ndarray, points, shade, thickness: int = 1):
    """Stamp a hard-edged polyline onto buf in place; out-of-frame parts are clipped.

    A polyline with fewer than two points draws nothing.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        return
    if thickness < 1:
        raise ValidationError("thickness must be >= 1")
    col = np.asarray(shade, dtype=buf.dtype)
    h, w = buf.shape[:2]
    lo = -(thickness // 2)
    hi = thickness + lo
    for i in range(len(pts) - 1):
        seg = _clip_segment(pts[i, 0], pts[i, 1], pts[i + 1, 0], pts[i + 1, 1],
                            w - 1, h - 1, thickness + 1.0)
        if seg is None:
            continue
        ax, ay, bx, by = (_iround(c) for c in seg)
        for x, y in _bresenham(ax, ay, bx, by):
            y0, y1 = max(0, y + lo), min(h, y + hi)
            x0, x1 = max(0, x + lo), min(w, x + hi)
            if y0 < y1 and x0 < x1:
                buf[y0:y1, x0:x1] = col


def render(shape: ArmShape, cam: CameraConfig,
           backbone_thickness: int = DEFAULT_BACKBONE_THICKNESS) -> Image:
    """Rasterize a projected arm scene to a synthetic image.

    Draw order (back to front): context bars, tendons, backbone, spacer disks.
    """
    cam.validate()
    buf = np.full((cam.image_height, cam.image_width, 3),
                  np.float32(cam.background_shade), dtype=np.float32)
    for seg, t in shape.context_segments:
        draw_polyline(buf, seg, CONTEXT_SHADE, t)
    for poly in shape.tendon_polylines:
        draw_polyline(buf, poly, TENDON_SHADE, 1)
    draw_polyline(buf, shape.backbone_points, BACKBONE_SHADE, backbone_thickness)
    for seg, t in shape.disk_segments:
        draw_polyline(buf, seg, DISK_SHADE, t)
    return Image(buf, "synthetic")


def resize_nearest_array(data: np.ndarray, width: int, height: int) -> np.ndarray:
    """Nearest-neighbor resize by index: out[i, j] = in[floor(i*H/h), floor(j*W/w)]."""
    if width < 1 or height < 1:
        raise ValidationError("target size must be >= 1 in both dimensions")
    in_h, in_w = data.shape[:2]
    rows = (np.arange(height) * in_h) // height
    cols = (np.arange(width) * in_w) // width
    return data[rows][:, cols]


def resize_nearest(img: Image, width: int, height: int) -> Image:
    """Nearest-neighbor resize; introduces no new intensity values."""
    return Image(resize_nearest_array(img.data, width, height), img.provenance)


def _parse_netpbm(raw: bytes, magic: bytes, path) -> tuple:
    if raw[:2] != magic:
        raise PpmHeaderError(f"{path}: expected {magic.decode()} magic, "
                             f"got {raw[:2]!r}")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos:pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise PpmHeaderError(f"{path}: malformed header (expected integer field)")
        fields.append(int(raw[start:pos]))
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise PpmHeaderError(f"{path}: missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PpmHeaderError(f"{path}: non-positive image dimensions")
    if maxval != 255:
        raise PpmMaxvalError(f"{path}: maxval must be 255, got {maxval}")
    return width, height, raw[pos:]


def _read_payload(path, magic, channels):
    raw = Path(path).read_bytes()
    width, height, payload = _parse_netpbm(raw, magic, path)
    expected = width * height * channels
    if len(payload) < expected:
        raise PpmPayloadError(f"{path}: truncated payload "
                              f"({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise PpmPayloadError(f"{path}: {len(payload) - expected} trailing bytes")
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width)
    return arr.reshape(height, width, channels)


def write_ppm_bytes(data: np.ndarray, path):
    """Write an already-quantized uint8 (H, W, 3) array as binary P6."""
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(data, dtype=np.uint8).tobytes())


def write_ppm(img: Image, path):
    """Quantize and write a binary P6 file; read_ppm inverts it exactly."""
    img.validate()
    write_ppm_bytes(quantize(img.data), path)


def read_ppm_bytes(path) -> np.ndarray:
    """Read a binary P6 file to its raw uint8 (H, W, 3) array."""
    return _read_payload(path, b"P6", 3)


def read_ppm(path) -> Image:
    return Image(dequantize(read_ppm_bytes(path)), "ingested")


def write_pgm(data: np.ndarray, path):
    """Write a [0,1] float (H, W) array as binary P5."""
    q = quantize(data)
    h, w = q.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 file to float32 (H, W) in [0, 1]."""
    return dequantize(_read_payload(path, b"P5", 1))
