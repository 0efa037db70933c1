"""CNN core: layers, reverse-mode gradients, Adam, weights I/O, hot kernels."""

from . import kernels
from .model import (
    Conv2D,
    Dense,
    Flatten,
    ForwardCache,
    FreezeMask,
    LayerShapeError,
    MaxPool2D,
    ModelSpec,
    ModelState,
    ReLU,
    all_trainable_mask,
    backward,
    conv_only_mask,
    desk_spec,
    features,
    forward,
    forward_activation,
    head_only_mask,
    init_state,
    model_spec_for_preset,
    mse,
    mse_grad,
    paper_spec,
    param_shapes,
    vgg_spec,
    check_state_matches,
)
from .optim import adam_step
from .weights_io import (
    WeightsError,
    WeightsMagicError,
    WeightsTruncatedError,
    WeightsVersionError,
    load_weights,
    save_weights,
)
