"""Synthetic continuum-arm image-to-joint regression pipeline."""

__version__ = "0.1.0"

from .arm_sim import LABEL_MAX, ArmConfig, ArmShape, CameraConfig, arm_shape, bend_angle
from .data import Dataset, Split, contiguous_split
from .errors import ConfigError, ValidationError
from .raster import Image, read_ppm, render, resize_nearest, write_ppm
