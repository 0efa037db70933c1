"""Minimal dense-tensor CNN core: five layer types, reverse-mode gradients, MSE.

Tensors are plain numpy arrays in NHWC layout. The architecture is described
by a ModelSpec (ordered layer descriptors plus the input size); learned
parameters, Adam moments, and the step counter live in a ModelState aligned to
it. Convolutions are fixed 3x3 / stride 1 / zero same-padding, pooling is
2x2 / stride 2 with floor semantics: the shapes a 300x300 input produces match
the reference architecture table row for row.

Row indexing convention used by shape tables and feature-map export: row 1 is
the input, row k+1 is the output of layers[k-1].
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..seeding import make_rng
from . import kernels


class LayerShapeError(ValidationError):
    """Tensor shape does not chain through a layer."""


@dataclass(frozen=True)
class Conv2D:
    out_channels: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool2D:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    out_features: int


@dataclass(frozen=True)
class ModelSpec:
    """Input size plus ordered layer descriptors; final layer is Dense(1)."""

    input_hw: tuple
    layers: tuple

    def validate(self):
        if len(self.input_hw) != 2 or min(self.input_hw) < 1:
            raise ValidationError(f"bad input size {self.input_hw}")
        if not self.layers or not isinstance(self.layers[-1], Dense) \
                or self.layers[-1].out_features != 1:
            raise ValidationError("final layer must be Dense with a single output")
        self.feature_shapes()  # raises if shapes do not chain

    def feature_shapes(self):
        """Per-row output shapes without the batch axis; row 0 is the input."""
        shape = (self.input_hw[0], self.input_hw[1], 3)
        rows = [shape]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv2D):
                if len(shape) != 3:
                    raise LayerShapeError(f"layer {i} (Conv2D): expected a spatial "
                                          f"input, got {shape}")
                if layer.out_channels < 1:
                    raise ValidationError(f"layer {i} (Conv2D): out_channels must be >= 1")
                shape = (shape[0], shape[1], layer.out_channels)
            elif isinstance(layer, MaxPool2D):
                if len(shape) != 3 or shape[0] < 2 or shape[1] < 2:
                    raise LayerShapeError(f"layer {i} (MaxPool2D): input {shape} too small")
                shape = (shape[0] // 2, shape[1] // 2, shape[2])
            elif isinstance(layer, Flatten):
                if len(shape) != 3:
                    raise LayerShapeError(f"layer {i} (Flatten): already flat: {shape}")
                shape = (shape[0] * shape[1] * shape[2],)
            elif isinstance(layer, Dense):
                if len(shape) != 1:
                    raise LayerShapeError(f"layer {i} (Dense): expected flat input, "
                                          f"got {shape}")
                shape = (layer.out_features,)
            elif isinstance(layer, ReLU):
                pass
            else:
                raise ValidationError(f"unknown layer descriptor {layer!r}")
            rows.append(shape)
        return rows

    def param_layers(self):
        """Indices of layers that carry weights, in order."""
        return [i for i, l in enumerate(self.layers) if isinstance(l, (Conv2D, Dense))]

    def layer_names(self):
        """Stable names for parameterized layers: conv1.., dense1.."""
        names = {}
        n_conv = n_dense = 0
        for i in self.param_layers():
            if isinstance(self.layers[i], Conv2D):
                n_conv += 1
                names[i] = f"conv{n_conv}"
            else:
                n_dense += 1
                names[i] = f"dense{n_dense}"
        return names


def vgg_spec(input_hw, channels) -> ModelSpec:
    """The truncated-VGG topology over six conv channel widths."""
    c1, c2, c3, c4, c5, c6 = channels
    layers = (
        Conv2D(c1), ReLU(), MaxPool2D(),
        Conv2D(c2), ReLU(), MaxPool2D(),
        Conv2D(c3), Conv2D(c4), ReLU(), MaxPool2D(),
        Conv2D(c5), Conv2D(c6), ReLU(), MaxPool2D(),
        Flatten(), Dense(1),
    )
    spec = ModelSpec(tuple(input_hw), layers)
    spec.validate()
    return spec


def paper_spec() -> ModelSpec:
    """Full-size preset: 300x300 input, conv widths 64..512 (shape tests only)."""
    return vgg_spec((300, 300), (64, 128, 256, 256, 512, 512))


def desk_spec() -> ModelSpec:
    """CPU-friendly preset: 96x96 input, conv widths scaled by 1/8."""
    return vgg_spec((96, 96), (8, 16, 32, 32, 64, 64))


def model_spec_for_preset(preset: str) -> ModelSpec:
    if preset == "paper":
        return paper_spec()
    if preset == "desk":
        return desk_spec()
    raise ValidationError(f"unknown preset {preset!r}")


@dataclass
class FreezeMask:
    """Per-parameterized-layer trainable flags, aligned to spec.param_layers()."""

    trainable: tuple

    def validate(self, spec: ModelSpec):
        if len(self.trainable) != len(spec.param_layers()):
            raise ValidationError("freeze mask length does not match parameterized layers")
        if not any(self.trainable):
            raise ValidationError("at least one layer must stay trainable")


def head_only_mask(spec: ModelSpec) -> FreezeMask:
    return FreezeMask(tuple(isinstance(spec.layers[i], Dense) for i in spec.param_layers()))


def conv_only_mask(spec: ModelSpec) -> FreezeMask:
    return FreezeMask(tuple(isinstance(spec.layers[i], Conv2D) for i in spec.param_layers()))


def all_trainable_mask(spec: ModelSpec) -> FreezeMask:
    return FreezeMask(tuple(True for _ in spec.param_layers()))


@dataclass
class ModelState:
    """Parameters plus Adam moments, keyed by layer index within the spec."""

    params: dict
    m: dict
    v: dict
    t: int = 0

    def clone(self) -> "ModelState":
        return ModelState(
            {k: {n: a.copy() for n, a in p.items()} for k, p in self.params.items()},
            {k: {n: a.copy() for n, a in p.items()} for k, p in self.m.items()},
            {k: {n: a.copy() for n, a in p.items()} for k, p in self.v.items()},
            self.t,
        )

    def astype(self, dtype) -> "ModelState":
        out = self.clone()
        for store in (out.params, out.m, out.v):
            for p in store.values():
                for n in p:
                    p[n] = p[n].astype(dtype)
        return out


def param_shapes(spec: ModelSpec):
    """Weight/bias shapes per parameterized layer index."""
    rows = spec.feature_shapes()
    shapes = {}
    for i in spec.param_layers():
        layer = spec.layers[i]
        in_shape = rows[i]
        if isinstance(layer, Conv2D):
            shapes[i] = {"w": (3, 3, in_shape[2], layer.out_channels),
                         "b": (layer.out_channels,)}
        else:
            shapes[i] = {"w": (in_shape[0], layer.out_features),
                         "b": (layer.out_features,)}
    return shapes


def init_state(spec: ModelSpec, seed: int, dtype=np.float32) -> ModelState:
    """He-uniform conv weights, Glorot-uniform dense weights, zero biases."""
    spec.validate()
    params, m, v = {}, {}, {}
    for i, shapes in param_shapes(spec).items():
        rng = make_rng(seed, i)
        w_shape = shapes["w"]
        if isinstance(spec.layers[i], Conv2D):
            fan_in = w_shape[0] * w_shape[1] * w_shape[2]
            limit = math.sqrt(6.0 / fan_in)
        else:
            limit = math.sqrt(6.0 / (w_shape[0] + w_shape[1]))
        w = rng.uniform(-limit, limit, size=w_shape).astype(dtype)
        b = np.zeros(shapes["b"], dtype=dtype)
        params[i] = {"w": w, "b": b}
        m[i] = {"w": np.zeros_like(w), "b": np.zeros_like(b)}
        v[i] = {"w": np.zeros_like(w), "b": np.zeros_like(b)}
    return ModelState(params, m, v, 0)


def check_state_matches(spec: ModelSpec, state: ModelState):
    names = spec.layer_names()
    expected = param_shapes(spec)
    if set(state.params) != set(expected):
        raise LayerShapeError("state does not cover the spec's parameterized layers")
    for i, shapes in expected.items():
        for n, shape in shapes.items():
            got = state.params[i][n].shape
            if got != shape:
                raise LayerShapeError(f"layer {i} ({names[i]}.{n}): state shape {got} "
                                      f"does not match spec shape {shape}")


@dataclass
class ForwardCache:
    spec: ModelSpec
    state: ModelState
    saved: list
    pred_shape: tuple
    consumed: bool = False


def _forward_impl(spec, state, batch, upto_row=None, keep_cache=False):
    if batch.ndim != 4 or batch.shape[1:] != (spec.input_hw[0], spec.input_hw[1], 3):
        raise LayerShapeError(
            f"batch shape {batch.shape} does not match spec input "
            f"(BS, {spec.input_hw[0]}, {spec.input_hw[1]}, 3)")
    names = spec.layer_names()
    x = batch
    saved = []
    last = len(spec.layers) if upto_row is None else upto_row - 1
    for i, layer in enumerate(spec.layers[:last]):
        if isinstance(layer, Conv2D):
            w = state.params[i]["w"]
            if x.shape[3] != w.shape[2]:
                raise LayerShapeError(f"layer {i} ({names[i]}): input channels "
                                      f"{x.shape[3]} vs weight channels {w.shape[2]}")
            saved.append(x if keep_cache else None)
            x = kernels.conv2d_forward(x, w, state.params[i]["b"])
        elif isinstance(layer, ReLU):
            x = np.maximum(x, 0)
            saved.append(x if keep_cache else None)  # mask recoverable from output
        elif isinstance(layer, MaxPool2D):
            in_hw = (x.shape[1], x.shape[2])
            x, idx = kernels.maxpool2x2_forward(x)
            saved.append((idx, in_hw) if keep_cache else None)
        elif isinstance(layer, Flatten):
            saved.append(x.shape if keep_cache else None)
            x = x.reshape(x.shape[0], -1)
        else:  # Dense
            w = state.params[i]["w"]
            if x.ndim != 2 or x.shape[1] != w.shape[0]:
                raise LayerShapeError(f"layer {i} ({names[i]}): input shape {x.shape} "
                                      f"vs weight shape {w.shape}")
            saved.append(x if keep_cache else None)
            x = x @ w + state.params[i]["b"]
        if not np.isfinite(x).all():
            raise ValidationError(f"layer {i} ({names.get(i, type(layer).__name__)}) "
                                  f"produced non-finite values")
    return x, saved


def forward(spec: ModelSpec, state: ModelState, batch: np.ndarray):
    """Run the full network; returns (predictions (BS, 1), cache for backward)."""
    pred, saved = _forward_impl(spec, state, batch, keep_cache=True)
    return pred, ForwardCache(spec, state, saved, pred.shape)


def forward_activation(spec: ModelSpec, state: ModelState, batch: np.ndarray,
                       row: int) -> np.ndarray:
    """Activation at a 1-based architecture-table row (row 1 = the input)."""
    if not 1 <= row <= len(spec.layers) + 1:
        raise ValidationError(f"row {row} outside 1..{len(spec.layers) + 1}")
    out, _ = _forward_impl(spec, state, batch, upto_row=row)
    return out


def features(spec: ModelSpec, state: ModelState, batch: np.ndarray) -> np.ndarray:
    """Flattened conv-stack output (the dense head's input), shape (BS, F)."""
    flat_rows = [i for i, l in enumerate(spec.layers) if isinstance(l, Flatten)]
    if not flat_rows:
        raise ValidationError("spec has no Flatten layer")
    act = forward_activation(spec, state, batch, flat_rows[0] + 2)
    return act


def backward(cache: ForwardCache, grad_out: np.ndarray):
    """Reverse-mode gradients; returns ({layer: {'w','b'}}, input gradient).

    Gradients are produced for frozen layers too; masking is the optimizer's
    job. The cache is single-use.
    """
    if cache.consumed:
        raise ValidationError("forward cache already consumed by a previous backward")
    if any(s is None for s in cache.saved):
        raise ValidationError("cache is missing saved activations")
    if grad_out.shape != cache.pred_shape:
        raise LayerShapeError(f"grad_out shape {grad_out.shape} does not match "
                              f"prediction shape {cache.pred_shape}")
    cache.consumed = True
    spec, state = cache.spec, cache.state
    grads = {}
    g = grad_out
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        ctx = cache.saved[i]
        if isinstance(layer, Dense):
            x_in = ctx
            grads[i] = {"w": x_in.T @ g,
                        "b": g.sum(axis=0, dtype=np.float64).astype(g.dtype)}
            g = g @ state.params[i]["w"].T
        elif isinstance(layer, Flatten):
            g = g.reshape(ctx)
        elif isinstance(layer, MaxPool2D):
            idx, in_hw = ctx
            g = kernels.maxpool2x2_backward(g, idx, in_hw)
        elif isinstance(layer, ReLU):
            g = g * (ctx > 0)
        else:  # Conv2D
            dx, dw, db = kernels.conv2d_backward(ctx, state.params[i]["w"], g)
            grads[i] = {"w": dw, "b": db}
            g = dx
    return grads, g


def mse(pred: np.ndarray, label: np.ndarray) -> float:
    """Mean squared difference over all elements (64-bit accumulation)."""
    if pred.shape != label.shape:
        raise LayerShapeError(f"mse shapes differ: {pred.shape} vs {label.shape}")
    d = pred.astype(np.float64) - label.astype(np.float64)
    return float(np.mean(d * d))


def mse_grad(pred: np.ndarray, label: np.ndarray) -> np.ndarray:
    """d(mse)/d(pred) in the prediction's dtype."""
    if pred.shape != label.shape:
        raise LayerShapeError(f"mse shapes differ: {pred.shape} vs {label.shape}")
    return ((pred - label) * (2.0 / pred.size)).astype(pred.dtype)
