"""Seeded, reproducible image corruption suite for the robustness experiments.

Five corruption kinds: additive Gaussian noise, multiplicative speckle noise,
salt-and-pepper impulse noise, power-law gamma illumination change, and a
randomly placed constant-shade square occlusion. Every application is a pure
function of (image, spec) including the spec's seed, so corrupted datasets are
regenerable byte-for-byte.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, contiguous_split
from .errors import ValidationError
from .raster import Image, dequantize, quantize
from .seeding import derive_seed, make_rng

KINDS = ("gaussian", "speckle", "impulse", "gamma", "occlusion")

# illumination presets exposed side by side; see AugmentSpec.gamma
GAMMA_BRIGHT = 0.2
GAMMA_DARK = 2.0

OCCLUSION_SHADE = 0.2

DEFAULT_MAX_ITEMS = 100_000


@dataclass(frozen=True)
class AugmentSpec:
    """One corruption recipe; only the fields of the selected kind matter."""

    kind: str
    gaussian_std: float = 0.01
    gaussian_mean: float = 0.0
    impulse_prob: float = 0.01
    gamma: float = 1.0
    occlusion_side: int | None = None  # None: ceil(width / 3) at apply time
    seed: int = 0

    def validate(self):
        if self.kind not in KINDS:
            raise ValidationError(f"spec.kind must be one of {KINDS}, got {self.kind!r}")
        if not self.gaussian_std >= 0:
            raise ValidationError("spec.gaussian_std must be >= 0")
        if not math.isfinite(self.gaussian_mean):
            raise ValidationError("spec.gaussian_mean must be finite")
        if not 0.0 <= self.impulse_prob <= 1.0:
            raise ValidationError("spec.impulse_prob must lie in [0, 1]")
        if not self.gamma > 0:
            raise ValidationError("spec.gamma must be strictly positive")
        if self.occlusion_side is not None and self.occlusion_side < 1:
            raise ValidationError("spec.occlusion_side must be >= 1")


def default_specs() -> tuple:
    """The six documented corruption categories with their default strengths."""
    return (
        AugmentSpec("gaussian", gaussian_std=0.01),
        AugmentSpec("speckle", gaussian_std=0.01),
        AugmentSpec("impulse", impulse_prob=0.01),
        AugmentSpec("gamma", gamma=GAMMA_BRIGHT),
        AugmentSpec("gamma", gamma=GAMMA_DARK),
        AugmentSpec("occlusion"),
    )


def occlusion_side_for(spec: AugmentSpec, width: int) -> int:
    side = spec.occlusion_side if spec.occlusion_side is not None else math.ceil(width / 3)
    return side


def apply(img: Image, spec: AugmentSpec) -> Image:
    """Corrupt one image. Deterministic given spec.seed; output stays in [0, 1]."""
    spec.validate()
    data = img.data
    h, w = data.shape[:2]
    rng = make_rng(spec.seed)

    if spec.kind == "gaussian":
        noise = rng.standard_normal(data.shape) * spec.gaussian_std + spec.gaussian_mean
        out = np.clip(data + noise, 0.0, 1.0).astype(np.float32)
    elif spec.kind == "speckle":
        noise = rng.standard_normal(data.shape) * spec.gaussian_std
        out = np.clip(data * (1.0 + noise), 0.0, 1.0).astype(np.float32)
    elif spec.kind == "impulse":
        hit = rng.random((h, w)) < spec.impulse_prob
        salt = rng.random((h, w)) < 0.5
        out = data.copy()
        out[hit] = salt[hit].astype(np.float32)[:, None]
    elif spec.kind == "gamma":
        out = np.power(data.astype(np.float64), spec.gamma).astype(np.float32)
    else:  # occlusion
        side = occlusion_side_for(spec, w)
        if side > min(h, w):
            raise ValidationError(f"spec.occlusion_side {side} exceeds image size {(h, w)}")
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        out = data.copy()
        out[top:top + side, left:left + side, :] = np.float32(OCCLUSION_SHADE)

    return Image(out, "augmented")


def check_augmented_size(base: Dataset, specs, copies_per_spec: int,
                         max_items: int = DEFAULT_MAX_ITEMS) -> int:
    """Validate inputs and return the total output item count."""
    base.validate()
    for spec in specs:
        spec.validate()
    if copies_per_spec < 0:
        raise ValidationError("copies_per_spec must be >= 0")
    total = len(base) * (1 + len(specs) * copies_per_spec)
    if total > max_items:
        raise ValidationError(f"augmented dataset would hold {total} items, "
                              f"above the configured maximum {max_items}")
    return total


def iter_augmented_items(base: Dataset, specs, copies_per_spec: int,
                         master_seed: int):
    """Yield (uint8 image, label): base items first, then corrupted variants.

    Append order is spec-major, then copy, then item; the variant of item i
    under spec s, copy c uses seed derive_seed(master_seed, s, c, i), so any
    slice of the stream is regenerable independently.
    """
    for img, q in zip(base.images, base.labels):
        yield img.copy(), float(q)
    for s_idx, spec in enumerate(specs):
        for copy in range(copies_per_spec):
            for i, (img, q) in enumerate(zip(base.images, base.labels)):
                seeded = replace(spec, seed=derive_seed(master_seed, s_idx, copy, i))
                out = apply(Image(dequantize(img), "augmented"), seeded)
                yield quantize(out.data), float(q)


def build_augmented_dataset(base: Dataset, specs, copies_per_spec: int = 1,
                            master_seed: int = 0,
                            max_items: int = DEFAULT_MAX_ITEMS) -> Dataset:
    """Base items followed by seeded corrupted variants, labels carried over."""
    specs = list(specs)
    check_augmented_size(base, specs, copies_per_spec, max_items)
    images, labels = [], []
    for img, q in iter_augmented_items(base, specs, copies_per_spec, master_seed):
        images.append(img)
        labels.append(q)
    return Dataset(images, np.asarray(labels), base.resolution,
                   contiguous_split(len(images)))
