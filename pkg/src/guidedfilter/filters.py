"""Window-mean and bilinear resampling operators with exact adjoints.

Two linear operators everything else is assembled from:

* a box/mean filter over square windows of radius ``r``.  Windows are
  clamped to the image bounds and normalized by the true pixel count,
  so there is no implicit padding.  That makes the mean filter
  non-self-adjoint near borders, hence the explicit adjoint below.
* bilinear resampling with half-pixel centers and edge clamping, used
  for both upsampling and downsampling so that forward and adjoint stay
  an exact transpose pair.

Box sums run over a summed-area table: cost is independent of the
radius and linear in the pixel count.  ``naive_box_sum`` is the slow
direct-summation reference used by the tests; keep it dumb.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .tensor import Tensor, validate


def _check_radius(r: int) -> int:
    if not isinstance(r, (int, np.integer)) or r < 0:
        raise ValueError(f"radius must be a non-negative integer, got {r!r}")
    return int(r)


def summed_area_table(t: Tensor) -> np.ndarray:
    """Prefix-sum grid of shape (h+1, w+1, c) with a zero first row/column.

    sat[y, x, c] is the sum of t over the rectangle [0, y) x [0, x), so
    any box sum is recoverable from four lookups.
    """
    validate(t)
    h, w, c = t.shape
    sat = np.zeros((h + 1, w + 1, c), dtype=np.float64)
    sat[1:, 1:] = t.cumsum(axis=0).cumsum(axis=1)
    return sat


def box_sum(t: Tensor, r: int) -> Tensor:
    """Sum of t over the radius-r window around each pixel, clamped at borders."""
    validate(t)
    r = _check_radius(r)
    if r == 0:
        return t.copy()
    if _kernels.enabled():
        return _kernels.box_sum(t, r)
    h, w, _ = t.shape
    sat = summed_area_table(t)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.maximum(ys - r, 0)
    y1 = np.minimum(ys + r, h - 1) + 1
    x0 = np.maximum(xs - r, 0)
    x1 = np.minimum(xs + r, w - 1) + 1
    out = sat[y1[:, None], x1[None, :]]
    out -= sat[y0[:, None], x1[None, :]]
    out -= sat[y1[:, None], x0[None, :]]
    out += sat[y0[:, None], x0[None, :]]
    return out


def naive_box_sum(t: Tensor, r: int) -> Tensor:
    """Direct per-pixel window summation; reference for box_sum."""
    validate(t)
    r = _check_radius(r)
    h, w, _ = t.shape
    out = np.empty_like(t)
    for y in range(h):
        ya, yb = max(0, y - r), min(h, y + r + 1)
        for x in range(w):
            xa, xb = max(0, x - r), min(w, x + r + 1)
            out[y, x] = t[ya:yb, xa:xb].sum(axis=(0, 1))
    return out


def window_counts(height: int, width: int, r: int) -> np.ndarray:
    """Pixel count of each clamped window, shape (height, width, 1).

    Equals box_sum(ones, r) exactly; computed separably since the
    window is a rectangle.
    """
    r = _check_radius(r)
    ys = np.arange(height)
    xs = np.arange(width)
    ny = np.minimum(ys + r, height - 1) - np.maximum(ys - r, 0) + 1
    nx = np.minimum(xs + r, width - 1) - np.maximum(xs - r, 0) + 1
    return (ny[:, None] * nx[None, :]).astype(np.float64)[:, :, None]


def mean_filter(t: Tensor, r: int) -> Tensor:
    """True mean over the clamped radius-r window around each pixel."""
    validate(t)
    r = _check_radius(r)
    if r > 0 and _kernels.enabled():
        return _kernels.box_sum(t, r, normalize=True)
    h, w, _ = t.shape
    return box_sum(t, r) / window_counts(h, w, r)


def mean_filter_adjoint(g: Tensor, r: int) -> Tensor:
    """Transpose of mean_filter as a linear map.

    Window membership is symmetric, so the box sum is self-adjoint and
    the transpose of (1/N) * box_sum is box_sum(g / N).  Satisfies
    dot(u, mean_filter(v, r)) == dot(mean_filter_adjoint(u, r), v).
    """
    validate(g)
    r = _check_radius(r)
    h, w, _ = g.shape
    return box_sum(g / window_counts(h, w, r), r)


def _axis_map(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-center source indices and blend weights for one axis.

    Source coordinate s = (d + 0.5) * n_in / n_out - 0.5, clamped to
    [0, n_in - 1]; returns (lo, hi, frac) with lo/hi non-decreasing.
    When n_in == n_out this degenerates to the identity (frac == 0).
    """
    s = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    np.clip(s, 0.0, n_in - 1.0, out=s)
    lo = np.minimum(np.floor(s).astype(np.intp), n_in - 1)
    frac = s - lo
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, frac


def bilinear_resize(t: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resample to (out_h, out_w) with half-pixel centers, axis by axis."""
    validate(t)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dims must be >= 1, got ({out_h}, {out_w})")
    h, w, _ = t.shape
    ylo, yhi, fy = _axis_map(h, out_h)
    xlo, xhi, fx = _axis_map(w, out_w)
    if _kernels.enabled():
        return _kernels.bilinear(t, ylo, yhi, fy, xlo, xhi, fx, out_h, out_w)
    # lerp as lo + f*(hi - lo), in place: constants survive exactly and
    # the identity mapping (f == 0) is bitwise.
    rows = t[ylo]
    tmp = t[yhi]
    tmp -= rows
    tmp *= fy[:, None, None]
    tmp += rows
    lo = tmp[:, xlo]
    out = tmp[:, xhi]
    out -= lo
    out *= fx[None, :, None]
    out += lo
    return out


def _scatter_rows(vals: np.ndarray, idx: np.ndarray, n_rows: int) -> np.ndarray:
    # Segment-sum rows of vals into their (sorted, possibly repeated)
    # target rows; sortedness comes from _axis_map monotonicity.
    out = np.zeros((n_rows, vals.shape[1]), dtype=np.float64)
    uniq, starts = np.unique(idx, return_index=True)
    out[uniq] = np.add.reduceat(vals, starts, axis=0)
    return out


def bilinear_resize_adjoint(g: Tensor, in_h: int, in_w: int) -> Tensor:
    """Exact transpose of bilinear_resize(., g_h, g_w) from (in_h, in_w).

    Each gradient element is scattered back to its (at most four)
    source pixels with the forward interpolation weights.
    """
    validate(g)
    if in_h < 1 or in_w < 1:
        raise ValueError(f"input dims must be >= 1, got ({in_h}, {in_w})")
    out_h, out_w, c = g.shape
    ylo, yhi, fy = _axis_map(in_h, out_h)
    xlo, xhi, fx = _axis_map(in_w, out_w)

    g2 = g.reshape(out_h, out_w * c)
    rows = _scatter_rows(g2 * (1.0 - fy)[:, None], ylo, in_h)
    rows += _scatter_rows(g2 * fy[:, None], yhi, in_h)

    cols_in = rows.reshape(in_h, out_w, c).transpose(1, 0, 2).reshape(out_w, in_h * c)
    cols = _scatter_rows(cols_in * (1.0 - fx)[:, None], xlo, in_w)
    cols += _scatter_rows(cols_in * fx[:, None], xhi, in_w)
    return np.ascontiguousarray(cols.reshape(in_w, in_h, c).transpose(1, 0, 2))
