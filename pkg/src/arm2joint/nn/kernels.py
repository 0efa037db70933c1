"""Backend dispatch for the hot tensor kernels.

Two interchangeable implementations of the 3x3 same-padding convolution and
2x2/stride-2 max pooling (floor semantics):

* ``numba`` - JIT-compiled parallel loops (:mod:`._numba_kernels`), the default
  whenever numba imports;
* ``numpy`` - pure-numpy fallback built on per-tap matmuls.

Selection: the ``ARM2JOINT_BACKEND`` environment variable (``numba``/``numpy``)
read at import, overridable at runtime via :func:`set_backend` (the CLI's
``--backend`` flag lands there). Both backends agree to float rounding; max
pooling, including its first-maximum tie rule, matches bit-for-bit. Results
are deterministic for a fixed backend regardless of thread count.
"""

import os

import numpy as np

from ..errors import ValidationError

ENV_BACKEND = "ARM2JOINT_BACKEND"

try:
    from . import _numba_kernels as _nb
except ImportError:  # pragma: no cover - exercised only without numba installed
    _nb = None

_DTYPES = (np.float32, np.float64)


def available_backends():
    return ("numba", "numpy") if _nb is not None else ("numpy",)


def _detect_backend() -> str:
    name = os.environ.get(ENV_BACKEND, "").strip().lower()
    if name in ("", "auto"):
        return "numba" if _nb is not None else "numpy"
    if name not in ("numba", "numpy"):
        raise ValidationError(f"{ENV_BACKEND} must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and _nb is None:
        raise ValidationError("numba backend requested but numba is not importable")
    return name


_BACKEND = _detect_backend()


def active_backend() -> str:
    return _BACKEND


def set_backend(name: str | None):
    """Select 'numba' or 'numpy'; None or 'auto' re-detects from the environment."""
    global _BACKEND
    if name is None or name == "auto":
        _BACKEND = _detect_backend()
        return
    if name not in ("numba", "numpy"):
        raise ValidationError(f"backend must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and _nb is None:
        raise ValidationError("numba backend requested but numba is not importable")
    _BACKEND = name


def set_threads(n: int):
    """Cap worker threads for the numba backend (0 leaves the default)."""
    if n < 0:
        raise ValidationError("thread count must be >= 0")
    if n and _nb is not None:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _check_dtype(*arrays):
    dt = arrays[0].dtype
    if dt.type not in _DTYPES:
        raise ValidationError(f"kernels support float32/float64, got {dt}")
    for a in arrays[1:]:
        if a.dtype != dt:
            raise ValidationError("mixed dtypes passed to kernel")
    return dt


def _pad(x):
    return np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))


def conv2d_forward(x, w, b):
    """y[b,y,x,oc] = bias + sum over 3x3 window of x * w; zero same-padding."""
    _check_dtype(x, w, b)
    if x.ndim != 4 or w.shape[:2] != (3, 3) or w.shape[2] != x.shape[3]:
        raise ValidationError(f"conv2d shapes incompatible: x {x.shape}, w {w.shape}")
    xp = _pad(x)
    if _BACKEND == "numba":
        return _nb.conv2d_forward(xp, w, b)
    B, H, W, _ = x.shape
    y = np.empty((B, H, W, w.shape[3]), dtype=x.dtype)
    y[:] = b
    for ky in range(3):
        for kx in range(3):
            y += xp[:, ky:ky + H, kx:kx + W, :] @ w[ky, kx]
    return y


def conv2d_backward(x, w, dy):
    """Gradients (dx, dw, db) of conv2d_forward for upstream gradient dy."""
    _check_dtype(x, w, dy)
    B, H, W, _ = x.shape
    xp = _pad(x)
    db = dy.sum(axis=(0, 1, 2), dtype=np.float64).astype(dy.dtype)
    if _BACKEND == "numba":
        wt = np.ascontiguousarray(w.transpose(0, 1, 3, 2))
        dxp = _nb.conv2d_backward_dx(wt, dy)
        dw = _nb.conv2d_backward_dw(xp, dy)
        return dxp[:, 1:-1, 1:-1, :], dw, db
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for ky in range(3):
        for kx in range(3):
            dw[ky, kx] = np.tensordot(xp[:, ky:ky + H, kx:kx + W, :], dy,
                                      axes=([0, 1, 2], [0, 1, 2]))
            dxp[:, ky:ky + H, kx:kx + W, :] += dy @ w[ky, kx].T
    return dxp[:, 1:-1, 1:-1, :], dw, db


def maxpool2x2_forward(x):
    """2x2/stride-2 max pool with floor semantics; also returns winner codes.

    Codes enumerate the window corners row-major (0=tl, 1=tr, 2=bl, 3=br);
    ties go to the first maximum in that order on both backends.
    """
    _check_dtype(x)
    B, H, W, C = x.shape
    if H < 2 or W < 2:
        raise ValidationError(f"maxpool input too small: {x.shape}")
    if _BACKEND == "numba":
        return _nb.maxpool2x2_forward(x)
    H2, W2 = H // 2, W // 2
    win = x[:, :H2 * 2, :W2 * 2, :].reshape(B, H2, 2, W2, 2, C)
    win = win.transpose(0, 1, 3, 5, 2, 4).reshape(B, H2, W2, C, 4)
    idx = win.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(win, idx[..., None].astype(np.int64), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2x2_backward(dy, idx, in_hw):
    """Scatter dy back to the winning positions; dropped rows/cols get zero."""
    _check_dtype(dy)
    H, W = in_hw
    if _BACKEND == "numba":
        return _nb.maxpool2x2_backward(dy, idx, H, W)
    B, H2, W2, C = dy.shape
    win = np.zeros((B, H2, W2, C, 4), dtype=dy.dtype)
    np.put_along_axis(win, idx[..., None].astype(np.int64), dy[..., None], axis=-1)
    dx = np.zeros((B, H, W, C), dtype=dy.dtype)
    dx[:, :H2 * 2, :W2 * 2, :] = (
        win.reshape(B, H2, W2, C, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(B, H2 * 2, W2 * 2, C)
    )
    return dx
