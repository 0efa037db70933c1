"""Adam with bias correction, applied through a freeze mask."""

import numpy as np

from ..errors import ValidationError
from .model import FreezeMask, ModelSpec, ModelState

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def adam_step(spec: ModelSpec, state: ModelState, grads: dict, mask: FreezeMask,
              lr: float) -> ModelState:
    """One optimizer step in place; frozen parameters stay bit-identical.

    grads maps layer index to {'w': ..., 'b': ...}; entries for frozen layers
    may be omitted or None. Any non-finite gradient aborts before the state is
    touched. Moments only advance for trainable layers.
    """
    mask.validate(spec)
    if not lr > 0:
        raise ValidationError("learning rate must be strictly positive")
    names = spec.layer_names()
    order = spec.param_layers()

    updates = []
    for li, trainable in zip(order, mask.trainable):
        if not trainable:
            continue
        g = grads.get(li)
        if g is None:
            raise ValidationError(f"missing gradients for trainable layer {names[li]}")
        for n in ("w", "b"):
            if g[n].shape != state.params[li][n].shape:
                raise ValidationError(f"gradient shape {g[n].shape} does not match "
                                      f"{names[li]}.{n} {state.params[li][n].shape}")
            if not np.isfinite(g[n]).all():
                raise ValidationError(f"non-finite gradient at layer {names[li]}.{n}; "
                                      "aborting optimizer step")
        updates.append((li, g))

    state.t += 1
    bc1 = 1.0 - BETA1 ** state.t
    bc2 = 1.0 - BETA2 ** state.t
    for li, g in updates:
        for n in ("w", "b"):
            p = state.params[li][n]
            m = state.m[li][n]
            v = state.v[li][n]
            grad = g[n].astype(p.dtype, copy=False)
            m *= BETA1
            m += (1.0 - BETA1) * grad
            v *= BETA2
            v += (1.0 - BETA2) * grad * grad
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + EPS)
    return state
