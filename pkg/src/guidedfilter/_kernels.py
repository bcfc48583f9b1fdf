"""Optional fused kernels for the large-image hot paths.

numpy evaluates the box filter and bilinear resample as chains of
whole-array passes; past L3 size each pass pays full DRAM round trips
and wall time goes superlinear in pixels.  These numba kernels fuse the
chains into one or two passes.  They are drop-in replacements: every
kernel performs the same floating-point operations in the same order as
the numpy expressions in filters.py/guided.py (no fastmath, no FMA
contraction), so results are bitwise identical -- the test suite
asserts that.

Everything degrades gracefully: without numba (or with
GUIDEDFILTER_PURE_NUMPY set) callers take their numpy paths.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco(args[0]) if args and callable(args[0]) else deco


def enabled() -> bool:
    return HAVE_NUMBA and not os.environ.get("GUIDEDFILTER_PURE_NUMPY")


@njit(cache=True)
def _sat_fill(t, sat):  # pragma: no cover - compiled
    h, w, c = t.shape
    # column-wise prefix first, then row-wise: matches
    # t.cumsum(axis=0).cumsum(axis=1) addition order exactly.
    for y in range(h):
        for x in range(w):
            for k in range(c):
                prev = sat[y, x + 1, k] if y > 0 else 0.0
                sat[y + 1, x + 1, k] = prev + t[y, x, k]
    for y in range(1, h + 1):
        for x in range(2, w + 1):
            for k in range(c):
                sat[y, x, k] = sat[y, x - 1, k] + sat[y, x, k]


@njit(cache=True)
def _box_from_sat(sat, r, out, normalize):  # pragma: no cover - compiled
    h, w, c = out.shape
    for y in range(h):
        y0 = y - r if y - r > 0 else 0
        y1 = (y + r if y + r < h - 1 else h - 1) + 1
        for x in range(w):
            x0 = x - r if x - r > 0 else 0
            x1 = (x + r if x + r < w - 1 else w - 1) + 1
            count = float((y1 - y0) * (x1 - x0))
            for k in range(c):
                s = ((sat[y1, x1, k] - sat[y0, x1, k]) - sat[y1, x0, k]) + sat[y0, x0, k]
                out[y, x, k] = s / count if normalize else s


def box_sum(t: np.ndarray, r: int, normalize: bool = False) -> np.ndarray:
    """Fused SAT build + four-lookup window sums (means if normalize)."""
    h, w, c = t.shape
    sat = np.empty((h + 1, w + 1, c), dtype=np.float64)
    sat[0] = 0.0
    sat[:, 0] = 0.0
    _sat_fill(t, sat)
    out = np.empty_like(t)
    _box_from_sat(sat, r, out, normalize)
    return out


@njit(cache=True)
def _bilinear(t, ylo, yhi, fy, xlo, xhi, fx, out):  # pragma: no cover - compiled
    out_h, out_w, c = out.shape
    for y in range(out_h):
        y0, y1, wy = ylo[y], yhi[y], fy[y]
        for x in range(out_w):
            x0, x1, wx = xlo[x], xhi[x], fx[x]
            for k in range(c):
                a = t[y0, x0, k]
                a = a + wy * (t[y1, x0, k] - a)
                b = t[y0, x1, k]
                b = b + wy * (t[y1, x1, k] - b)
                out[y, x, k] = a + wx * (b - a)


def bilinear(t, ylo, yhi, fy, xlo, xhi, fx, out_h, out_w) -> np.ndarray:
    out = np.empty((out_h, out_w, t.shape[2]), dtype=np.float64)
    _bilinear(t, ylo, yhi, fy, xlo, xhi, fx, out)
    return out


@njit(cache=True)
def _affine_combine(slope, guide, intercept, out):  # pragma: no cover - compiled
    n = out.size
    s = slope.reshape(n)
    g = guide.reshape(n)
    b = intercept.reshape(n)
    o = out.reshape(n)
    for i in range(n):
        o[i] = b[i] + s[i] * g[i]


def affine_combine(slope, guide, intercept) -> np.ndarray:
    """out = intercept + slope * guide, one pass."""
    out = np.empty_like(guide)
    _affine_combine(
        np.ascontiguousarray(slope),
        np.ascontiguousarray(guide),
        np.ascontiguousarray(intercept),
        out,
    )
    return out
