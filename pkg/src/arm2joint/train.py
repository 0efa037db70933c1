"""Dataset assembly, the two-stage transfer/fine-tune protocol, and K-fold runs.

Stage 1 trains only the dense head on top of the frozen conv stack; since the
stack cannot change, its flattened outputs are computed once per stage and the
head is fit on those cached features (numerically identical to re-running the
full forward every batch, just cheaper). Stage 2 freezes the head and trains
the conv layers at a reduced learning rate for fewer epochs. Batches walk the
training split in its stored order; nothing is shuffled anywhere, so a (seed,
config, data) triple fixes every loss value.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .arm_sim import LABEL_MAX, ArmConfig, CameraConfig, arm_shape
from .data import Dataset, Split, contiguous_split
from .errors import ValidationError
from .nn import optim
from .raster import Image, quantize, render, resize_nearest_array
from .seeding import make_rng

# stage-2 defaults relative to stage 1
STAGE2_LR_DIVISOR = 10.0
STAGE2_EPOCH_DIVISOR = 5

_PRESET_STAGE1 = {
    "paper": (1e-6, 150),
    "desk": (1e-3, 30),
}


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for both training stages.

    stage2 values default to stage1_lr / 10 and stage1_epochs // 5. Setting
    both epoch counts to zero yields an evaluation-only run (no updates).
    """

    preset: str = "desk"
    stage1_lr: float | None = None
    stage1_epochs: int | None = None
    batch_size: int = 16
    stage2_lr: float | None = None
    stage2_epochs: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.preset not in _PRESET_STAGE1:
            raise ValidationError(f"unknown preset {self.preset!r}")
        lr1, ep1 = _PRESET_STAGE1[self.preset]
        if self.stage1_lr is None:
            object.__setattr__(self, "stage1_lr", lr1)
        if self.stage1_epochs is None:
            object.__setattr__(self, "stage1_epochs", ep1)
        if self.stage2_lr is None:
            object.__setattr__(self, "stage2_lr", self.stage1_lr / STAGE2_LR_DIVISOR)
        if self.stage2_epochs is None:
            object.__setattr__(self, "stage2_epochs",
                               self.stage1_epochs // STAGE2_EPOCH_DIVISOR)
        self.validate()

    def validate(self):
        if self.batch_size < 1:
            raise ValidationError("train.batch must be >= 1")
        if not 0 < self.stage2_lr < self.stage1_lr:
            raise ValidationError("stage-2 learning rate must be below stage 1's")
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValidationError("epoch counts must be >= 0")
        if (self.stage1_epochs or self.stage2_epochs) \
                and not self.stage2_epochs < self.stage1_epochs:
            raise ValidationError("stage 2 must run fewer epochs than stage 1")


@dataclass
class EpochRow:
    stage: int
    epoch: int
    train_mse: float
    val_mse: float
    seconds: float


@dataclass
class TrainReport:
    """Per-epoch learning curves plus the final test metrics of the best state."""

    rows: list = field(default_factory=list)
    best_val_mse: float = float("inf")
    final_test_mse: float = float("nan")
    final_test_mae: float = float("nan")
    freeze_checks: int = 0

    def stage_rows(self, stage: int):
        return [r for r in self.rows if r.stage == stage]

    def metrics_csv(self) -> str:
        lines = ["stage,epoch,train_mse,val_mse"]
        for r in self.rows:
            lines.append(f"{r.stage},{r.epoch},{r.train_mse!r},{r.val_mse!r}")
        return "\n".join(lines) + "\n"


def generate_dataset(n: int, arm: ArmConfig, cam: CameraConfig, seed: int,
                     out_dir=None) -> Dataset:
    """Render n images at labels drawn uniformly from the admissible range.

    Labels come from the Philox stream of ``seed``; the same call is
    byte-reproducible. When out_dir is given (it must exist) the images and
    labels.csv are written there as well.
    """
    if n < 1:
        raise ValidationError("gen.count must be >= 1")
    arm.validate()
    cam.validate()
    rng = make_rng(seed)
    labels = rng.uniform(-LABEL_MAX, LABEL_MAX, size=n)
    images = []
    for q in labels:
        img = render(arm_shape(float(q), arm, cam), cam)
        images.append(quantize(img.data))
    ds = Dataset(images, labels, (cam.image_height, cam.image_width),
                 contiguous_split(n) if n >= 3 else
                 Split(np.arange(n), np.arange(0), np.arange(0)))
    if out_dir is not None:
        ds.save_dir(out_dir)
    return ds


def preprocess(img: Image, target_hw) -> np.ndarray:
    """Nearest-neighbor resize to the model input, values normalized to [0, 1]."""
    h, w = target_hw
    data = resize_nearest_array(img.data, w, h)
    return np.clip(data, 0.0, 1.0).astype(np.float32)


def _batch_images(ds: Dataset, idxs, target_hw) -> np.ndarray:
    h, w = target_hw
    out = np.empty((len(idxs), h, w, 3), dtype=np.float32)
    for k, i in enumerate(idxs):
        img = ds.images[i]
        if img.shape[:2] != (h, w):
            img = resize_nearest_array(img, w, h)
        out[k] = img.astype(np.float32) / np.float32(255.0)
    return out


def _batch_labels(ds: Dataset, idxs) -> np.ndarray:
    return ds.labels[np.asarray(idxs)].astype(np.float32)[:, None]


def _batches(indices, batch_size):
    for start in range(0, len(indices), batch_size):
        yield indices[start:start + batch_size]


def _dataset_features(spec, state, ds, idxs, batch_size):
    """Flattened frozen-stack outputs for the given items, row-aligned to idxs."""
    chunks = []
    for b in _batches(np.asarray(idxs), batch_size):
        chunks.append(nn.features(spec, state, _batch_images(ds, b, spec.input_hw)))
    return np.concatenate(chunks, axis=0)


def _eval_mse(spec, state, ds, idxs, batch_size):
    total = 0.0
    for b in _batches(np.asarray(idxs), batch_size):
        pred, _ = nn.forward(spec, state, _batch_images(ds, b, spec.input_hw))
        d = pred.astype(np.float64) - _batch_labels(ds, b).astype(np.float64)
        total += float((d * d).sum())
    return total / len(idxs)


def _predictions(spec, state, ds, idxs, batch_size):
    preds = []
    for b in _batches(np.asarray(idxs), batch_size):
        pred, _ = nn.forward(spec, state, _batch_images(ds, b, spec.input_hw))
        preds.append(pred[:, 0].astype(np.float64))
    return np.concatenate(preds)


def pretrain_base(spec: nn.ModelSpec, data: Dataset, epochs: int, lr: float = 1e-3,
                  seed: int = 0, batch_size: int = 16, out_path=None) -> nn.ModelState:
    """Briefly train all layers end-to-end on a small auxiliary dataset.

    The result stands in for an externally pretrained base: the two-stage
    protocol freezes its conv stack in stage 1. Zero epochs returns (and
    saves) the raw initialization.
    """
    data.validate()
    if epochs < 0:
        raise ValidationError("pretrain epochs must be >= 0")
    state = nn.init_state(spec, seed)
    mask = nn.all_trainable_mask(spec)
    order = np.arange(len(data))
    for _ in range(epochs):
        for b in _batches(order, batch_size):
            x = _batch_images(data, b, spec.input_hw)
            yb = _batch_labels(data, b)
            pred, cache = nn.forward(spec, state, x)
            loss = nn.mse(pred, yb)
            if not np.isfinite(loss):
                raise ValidationError("pretraining diverged: non-finite loss")
            grads, _ = nn.backward(cache, nn.mse_grad(pred, yb))
            optim.adam_step(spec, state, grads, mask, lr)
    if out_path is not None:
        nn.save_weights(spec, state, out_path)
    return state


def _conv_param_indices(spec):
    return [i for i in spec.param_layers() if isinstance(spec.layers[i], nn.Conv2D)]


def _head_param_indices(spec):
    return [i for i in spec.param_layers() if isinstance(spec.layers[i], nn.Dense)]


def _snapshot(state, indices):
    return {i: {n: state.params[i][n].copy() for n in ("w", "b")} for i in indices}


def _assert_unchanged(state, snap, names, what):
    for i, tensors in snap.items():
        for n, arr in tensors.items():
            if not np.array_equal(state.params[i][n], arr):
                raise ValidationError(f"{what} parameter {names[i]}.{n} changed "
                                      "while frozen")


def train_two_stage(spec: nn.ModelSpec, base_state: nn.ModelState, data: Dataset,
                    cfg: TrainConfig) -> tuple:
    """Head-only stage then conv-only stage; returns (best-val state, report).

    Freeze contracts are verified bitwise after every epoch. The returned
    state is the parameter snapshot with the lowest validation MSE seen across
    both stages (the incoming base state if no epochs run).
    """
    data.validate()
    cfg.validate()
    nn.check_state_matches(spec, base_state)
    if len(data.split.train) == 0 or len(data.split.val) == 0:
        raise ValidationError("training requires non-empty train and val splits")

    state = base_state.clone()
    names = spec.layer_names()
    report = TrainReport()
    best_state = state.clone()
    train_idx = np.asarray(data.split.train)
    val_idx = np.asarray(data.split.val)
    head = _head_param_indices(spec)[0]

    def consider(val_mse):
        if val_mse < report.best_val_mse:
            report.best_val_mse = val_mse
            nonlocal best_state
            best_state = state.clone()

    # stage 1: conv stack frozen, head trained on cached features
    if cfg.stage1_epochs > 0:
        head_mask = nn.head_only_mask(spec)
        conv_snap = _snapshot(state, _conv_param_indices(spec))
        feats_train = _dataset_features(spec, state, data, train_idx, cfg.batch_size)
        feats_val = _dataset_features(spec, state, data, val_idx, cfg.batch_size)
        y_train = _batch_labels(data, train_idx)
        y_val = _batch_labels(data, val_idx)
        w = state.params[head]["w"]
        b = state.params[head]["b"]
        for epoch in range(1, cfg.stage1_epochs + 1):
            t0 = time.perf_counter()
            running, seen = 0.0, 0
            for rows in _batches(np.arange(len(train_idx)), cfg.batch_size):
                fb = feats_train[rows]
                yb = y_train[rows]
                pred = fb @ w + b
                loss = nn.mse(pred, yb)
                if not np.isfinite(loss):
                    raise ValidationError("stage 1 diverged: non-finite loss")
                g = nn.mse_grad(pred, yb)
                grads = {head: {"w": fb.T @ g,
                                "b": g.sum(axis=0, dtype=np.float64).astype(g.dtype)}}
                optim.adam_step(spec, state, grads, head_mask, cfg.stage1_lr)
                running += loss * len(rows)
                seen += len(rows)
            val_mse = nn.mse(feats_val @ w + b, y_val)
            _assert_unchanged(state, conv_snap, names, "stage 1: conv")
            report.freeze_checks += 1
            report.rows.append(EpochRow(1, epoch, running / seen, val_mse,
                                        time.perf_counter() - t0))
            consider(val_mse)

    # stage 2: head frozen, conv stack fine-tuned at the reduced rate
    if cfg.stage2_epochs > 0:
        conv_mask = nn.conv_only_mask(spec)
        head_snap = _snapshot(state, [head])
        for epoch in range(1, cfg.stage2_epochs + 1):
            t0 = time.perf_counter()
            running, seen = 0.0, 0
            for bidx in _batches(train_idx, cfg.batch_size):
                x = _batch_images(data, bidx, spec.input_hw)
                yb = _batch_labels(data, bidx)
                pred, cache = nn.forward(spec, state, x)
                loss = nn.mse(pred, yb)
                if not np.isfinite(loss):
                    raise ValidationError("stage 2 diverged: non-finite loss")
                grads, _ = nn.backward(cache, nn.mse_grad(pred, yb))
                optim.adam_step(spec, state, grads, conv_mask, cfg.stage2_lr)
                running += loss * len(bidx)
                seen += len(bidx)
            val_mse = _eval_mse(spec, state, data, val_idx, cfg.batch_size)
            _assert_unchanged(state, head_snap, names, "stage 2: head")
            report.freeze_checks += 1
            report.rows.append(EpochRow(2, epoch, running / seen, val_mse,
                                        time.perf_counter() - t0))
            consider(val_mse)

    if len(data.split.test):
        preds = _predictions(spec, best_state, data, data.split.test, cfg.batch_size)
        errs = preds - data.labels[np.asarray(data.split.test)]
        report.final_test_mse = float(np.mean(errs * errs))
        report.final_test_mae = float(np.mean(np.abs(errs)))
    return best_state, report


def kfold(spec: nn.ModelSpec, data: Dataset, k: int, cfg: TrainConfig,
          base_state: nn.ModelState) -> tuple:
    """Contiguous unshuffled K-fold; returns (per-fold MAE array, their variance).

    Folds are consecutive index blocks in the dataset's stored order. Each
    fold trains from a clone of base_state on the remaining blocks (last tenth
    of them held out as the validation split) and reports test MAE on the fold.
    """
    data.validate()
    n = len(data)
    if k < 2 or k > n:
        raise ValidationError(f"k must lie in [2, {n}]")
    if n % k:
        raise ValidationError(f"k = {k} does not divide the item count {n}")
    fold_size = n // k
    maes = []
    for f in range(k):
        test_idx = np.arange(f * fold_size, (f + 1) * fold_size)
        rest = np.concatenate([np.arange(0, f * fold_size),
                               np.arange((f + 1) * fold_size, n)])
        n_val = max(1, len(rest) // 10)
        split = Split(rest[:-n_val], rest[-n_val:], test_idx)
        fold_data = data.with_split(split)
        _, report = train_two_stage(spec, base_state.clone(), fold_data, cfg)
        maes.append(report.final_test_mae)
    maes = np.asarray(maes)
    return maes, float(np.var(maes))
