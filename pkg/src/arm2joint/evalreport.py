"""Test-set metrics, robustness comparisons, feature-map export, single-image predict."""

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .augment import AugmentSpec, apply
from .data import Dataset
from .errors import ValidationError
from .raster import Image, dequantize, quantize, read_ppm, write_pgm
from .seeding import derive_seed
from .train import _batch_images, _batches, preprocess

DEFAULT_BIN_WIDTH = 0.025


@dataclass
class EvalReport:
    """Per-item predictions with recomputable aggregates and an error histogram."""

    labels: np.ndarray
    preds: np.ndarray
    abs_errors: np.ndarray
    mse: float
    mae: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    mean_inference_seconds: float

    def __len__(self):
        return len(self.labels)

    def to_csv(self) -> str:
        """Per-item rows plus an aggregate footer (timing excluded: it is not
        reproducible byte-for-byte and is reported on stdout instead)."""
        lines = ["index,q_rad,q_hat_rad,abs_err_rad"]
        for i, (q, p, e) in enumerate(zip(self.labels, self.preds, self.abs_errors)):
            lines.append(f"{i},{q!r},{p!r},{e!r}")
        lines.append(f"# mse = {self.mse!r}")
        lines.append(f"# mae = {self.mae!r}")
        lines.append(f"# hist_edges = {' '.join(repr(float(e)) for e in self.hist_edges)}")
        lines.append(f"# hist_counts = {' '.join(str(int(c)) for c in self.hist_counts)}")
        return "\n".join(lines) + "\n"


@dataclass
class RobustnessReport:
    """Per corruption kind: MAE of the clean-trained vs augmentation-trained model."""

    entries: list  # (kind_label, mae_clean_trained, mae_aug_trained)

    def to_csv(self) -> str:
        lines = ["corruption,mae_clean_trained,mae_aug_trained"]
        for label, clean, aug in self.entries:
            lines.append(f"{label},{clean!r},{aug!r}")
        return "\n".join(lines) + "\n"


def report_from_predictions(labels, preds, bin_width: float = DEFAULT_BIN_WIDTH,
                            inference_seconds: float = 0.0) -> EvalReport:
    """Assemble a report from already-computed predictions."""
    labels = np.asarray(labels, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    if labels.shape != preds.shape or labels.ndim != 1 or len(labels) == 0:
        raise ValidationError("labels and predictions must be equal-length 1-D arrays")
    if not bin_width > 0:
        raise ValidationError("bin width must be strictly positive")
    errs = np.abs(preds - labels)
    nbins = max(1, math.ceil(errs.max() / bin_width)) if errs.max() > 0 else 1
    edges = np.arange(nbins + 1, dtype=np.float64) * bin_width
    counts, _ = np.histogram(errs, bins=edges)
    return EvalReport(
        labels=labels,
        preds=preds,
        abs_errors=errs,
        mse=float(np.mean(errs * errs)),
        mae=float(np.mean(errs)),
        hist_edges=edges,
        hist_counts=counts,
        mean_inference_seconds=inference_seconds,
    )


def evaluate(spec: nn.ModelSpec, state: nn.ModelState, data: Dataset,
             bin_width: float = DEFAULT_BIN_WIDTH, batch_size: int = 16) -> EvalReport:
    """Evaluate on the dataset's test split."""
    data.validate()
    nn.check_state_matches(spec, state)
    test_idx = np.asarray(data.split.test)
    if len(test_idx) == 0:
        raise ValidationError("dataset has an empty test split")
    preds = []
    t0 = time.perf_counter()
    for b in _batches(test_idx, batch_size):
        pred, _ = nn.forward(spec, state, _batch_images(data, b, spec.input_hw))
        preds.append(pred[:, 0].astype(np.float64))
    elapsed = time.perf_counter() - t0
    return report_from_predictions(data.labels[test_idx], np.concatenate(preds),
                                   bin_width, elapsed / len(test_idx))


def spec_label(spec: AugmentSpec) -> str:
    if spec.kind in ("gaussian", "speckle"):
        return f"{spec.kind}:{spec.gaussian_std!r}"
    if spec.kind == "impulse":
        return f"impulse:{spec.impulse_prob!r}"
    if spec.kind == "gamma":
        return f"gamma:{spec.gamma!r}"
    side = "" if spec.occlusion_side is None else f":{spec.occlusion_side}"
    return f"occlusion{side}"


def robustness_suite(spec: nn.ModelSpec, clean_state: nn.ModelState,
                     aug_state: nn.ModelState, base_test: Dataset, specs,
                     eval_seed: int = 0, batch_size: int = 16) -> RobustnessReport:
    """Corrupt the test images once per kind (fixed seeds), evaluate both models."""
    specs = list(specs)
    if not specs:
        raise ValidationError("robustness suite needs at least one corruption spec")
    base_test.validate()
    test_idx = np.asarray(base_test.split.test)
    if len(test_idx) == 0:
        raise ValidationError("dataset has an empty test split")

    entries = []
    for s_idx, aug in enumerate(specs):
        corrupted = []
        for j, i in enumerate(test_idx):
            seeded = replace(aug, seed=derive_seed(eval_seed, s_idx, j))
            out = apply(Image(dequantize(base_test.images[i]), "augmented"), seeded)
            corrupted.append(quantize(out.data))
        labels = base_test.labels[test_idx]
        maes = []
        for state in (clean_state, aug_state):
            preds = []
            for b in _batches(np.arange(len(corrupted)), batch_size):
                x = np.stack([corrupted[i] for i in b])
                x = _stack_preprocess(x, spec.input_hw)
                pred, _ = nn.forward(spec, state, x)
                preds.append(pred[:, 0].astype(np.float64))
            maes.append(float(np.mean(np.abs(np.concatenate(preds) - labels))))
        entries.append((spec_label(aug), maes[0], maes[1]))
    return RobustnessReport(entries)


def _stack_preprocess(batch_u8: np.ndarray, target_hw):
    out = np.empty((len(batch_u8), target_hw[0], target_hw[1], 3), dtype=np.float32)
    for k, img in enumerate(batch_u8):
        out[k] = preprocess(Image(dequantize(img), "augmented"), target_hw)
    return out


def feature_maps(spec: nn.ModelSpec, state: nn.ModelState, img: Image,
                 layer_index: int = 4, out_path=None) -> np.ndarray:
    """Activation grid at an architecture-table row (1 = input), one tile per channel.

    Channels are min-max normalized independently, tiled row-major into a
    near-square grid with 1-px separators (shade 0); trailing empty cells stay 0.
    Returns the grid as float32 in [0, 1]; writes a PGM when out_path is given.
    """
    if not 1 <= layer_index <= len(spec.layers) + 1:
        raise ValidationError(f"layer index {layer_index} outside "
                              f"1..{len(spec.layers) + 1}")
    x = preprocess(img, spec.input_hw)[None]
    act = nn.forward_activation(spec, state, x, layer_index)
    if act.ndim != 4:
        raise ValidationError(f"row {layer_index} is not spatial "
                              f"(shape {act.shape[1:]}); no channel maps to tile")
    maps = act[0]
    th, tw, channels = maps.shape
    cols = math.ceil(math.sqrt(channels))
    rows = math.ceil(channels / cols)
    grid = np.zeros((rows * th + rows - 1, cols * tw + cols - 1), dtype=np.float32)
    for c in range(channels):
        tile = maps[:, :, c].astype(np.float64)
        lo, hi = tile.min(), tile.max()
        norm = (tile - lo) / (hi - lo) if hi > lo else np.zeros_like(tile)
        r, k = divmod(c, cols)
        grid[r * (th + 1):r * (th + 1) + th,
             k * (tw + 1):k * (tw + 1) + tw] = norm.astype(np.float32)
    if out_path is not None:
        write_pgm(grid, out_path)
    return grid


def predict(spec: nn.ModelSpec, state: nn.ModelState, image_path) -> tuple:
    """Predict the joint variable for one image file; returns (q_hat, seconds)."""
    img = read_ppm(image_path)
    t0 = time.perf_counter()
    x = preprocess(img, spec.input_hw)[None]
    pred, _ = nn.forward(spec, state, x)
    return float(pred[0, 0]), time.perf_counter() - t0
