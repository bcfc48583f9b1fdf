"""Dense H x W x C image tensors.

Every image-valued quantity in this package is a C-contiguous float64
numpy array of shape (height, width, channels), i.e. row-major with
interleaved channels: flat index = (y * width + x) * channels + c.  That
layout is relied on by the raw tensor file format, so it is enforced
here rather than assumed.

Tensors are treated as immutable once built; all operations return new
arrays and never write through their inputs.
"""

from __future__ import annotations

import numpy as np

Tensor = np.ndarray

_BINARY_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}


def validate(t: Tensor, name: str = "tensor", finite: bool = False) -> Tensor:
    """Check that ``t`` is a well-formed image tensor and return it.

    Raises ValueError on wrong rank, zero-sized dimensions, non-float64
    data, or (when ``finite`` is set) NaN/Inf entries.
    """
    if not isinstance(t, np.ndarray) or t.ndim != 3:
        raise ValueError(f"{name}: expected a 3-d (h, w, c) array, got {t!r}")
    if min(t.shape) < 1:
        raise ValueError(f"{name}: all dimensions must be >= 1, got shape {t.shape}")
    if t.dtype != np.float64:
        raise ValueError(f"{name}: expected float64 data, got {t.dtype}")
    if finite and not np.isfinite(t).all():
        raise ValueError(f"{name}: contains non-finite values")
    return t


def filled(height: int, width: int, channels: int, value: float) -> Tensor:
    """A (height, width, channels) tensor with every element set to ``value``."""
    if height < 1 or width < 1 or channels < 1:
        raise ValueError(f"dimensions must be >= 1, got ({height}, {width}, {channels})")
    v = float(value)
    if not np.isfinite(v):
        raise ValueError(f"fill value must be finite, got {value}")
    return np.full((height, width, channels), v, dtype=np.float64)


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    """Elementwise add/sub/mul/div of two same-shaped tensors.

    Division by an exact zero raises ZeroDivisionError; callers are
    expected to regularize denominators first.  Any non-finite result
    (overflow) raises ValueError.
    """
    validate(a, "a")
    validate(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    try:
        fn = _BINARY_OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_BINARY_OPS)}") from None
    if op == "div" and np.any(b == 0.0):
        raise ZeroDivisionError("elementwise division by exact zero")
    with np.errstate(over="ignore", invalid="ignore"):
        out = fn(a, b)
    if not np.isfinite(out).all():
        raise ValueError(f"elementwise {op} produced non-finite values")
    return out


def dot(a: Tensor, b: Tensor) -> float:
    """Sum of elementwise products over two same-shaped tensors."""
    validate(a, "a")
    validate(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))
