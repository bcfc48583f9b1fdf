"""Differentiable guided filtering layer.

The forward pass fits a local linear model ``out = slope * guide +
intercept`` over radius-r windows (regularized least squares with
regularizer ``eps``) and applies it at high resolution.  Two variants:

* ``forward_joint``  - moments at low resolution, slope/intercept
  bilinearly upsampled to the guide resolution (joint upsampling).
* ``forward_highres`` - moments at full resolution, slope/intercept
  smoothed once more by the mean filter before the linear combine.

The backward pass is hand-derived reverse mode over the saved forward
intermediates: every linear operator in the forward (mean filter,
bilinear resize) is replayed as its exact adjoint, and the rational
slope/intercept algebra is differentiated term by term.  Gradients are
exact for the scalar ``dot(d_out, out)`` and are validated against
central finite differences by the test suite.

Channels are independent scalar filters throughout; ``eps`` is a
hyperparameter, not a differentiable input.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .filters import bilinear_resize, bilinear_resize_adjoint, mean_filter, mean_filter_adjoint
from .tensor import Tensor, validate

VARIANT_JOINT = "joint"
VARIANT_HIGHRES = "highres"


class DegenerateWindowError(ArithmeticError):
    """eps=0 requested but some window has no guidance variance."""


@dataclass(frozen=True)
class GuidedFilterParams:
    """Window radius (in moment-resolution pixels) and regularizer."""

    radius: int = 1
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if not isinstance(self.radius, (int, np.integer)) or self.radius < 0:
            raise ValueError(f"radius must be a non-negative integer, got {self.radius!r}")
        if not np.isfinite(self.eps) or self.eps < 0.0:
            raise ValueError(f"eps must be finite and >= 0, got {self.eps!r}")


@dataclass(frozen=True)
class GuidedFilterTape:
    """Forward intermediates the backward pass reads.

    ``guide``/``src`` and the moment fields live at the resolution the
    window statistics were computed at (low-res for the joint variant,
    full-res for the high-res variant).  ``slope``/``intercept`` are the
    raw per-window regression coefficients; ``slope_hi`` is the slope
    actually multiplied into the output (upsampled, or re-smoothed for
    the high-res variant).
    """

    variant: str
    params: GuidedFilterParams
    guide: Tensor
    src: Tensor
    mean_guide: Tensor
    mean_src: Tensor
    var_guide: Tensor
    cov_guide_src: Tensor
    slope: Tensor
    intercept: Tensor
    guide_hi: Tensor
    slope_hi: Tensor


@dataclass(frozen=True)
class GuidedFilterGrads:
    """Gradients of dot(d_out, out) w.r.t. the forward inputs.

    ``d_guide_lo`` is None for the high-res variant, where the single
    guidance input's gradient arrives in ``d_guide_hi``.
    """

    d_src: Tensor
    d_guide_lo: Tensor | None
    d_guide_hi: Tensor


# Named sign sites of the backward pass.  Mutation tests flip one at a
# time to prove the finite-difference checks are not vacuous; see
# flipped_term().
BACKWARD_TERMS = (
    "intercept_adjoint",
    "slope_adjoint",
    "slope_from_intercept",
    "cov",
    "var",
    "mean_src_direct",
    "mean_src_from_cov",
    "src_from_cov",
    "src_from_mean",
    "mean_guide_from_intercept",
    "mean_guide_from_cov",
    "mean_guide_from_var",
    "guide_from_cov",
    "guide_from_var",
    "guide_from_mean",
    "guide_direct",
)

_sign_flips: set[str] = set()


def _sgn(term: str) -> float:
    return -1.0 if term in _sign_flips else 1.0


@contextmanager
def flipped_term(term: str):
    """Negate one backward term for the duration of the block (test hook)."""
    if term not in BACKWARD_TERMS:
        raise ValueError(f"unknown backward term {term!r}; expected one of {BACKWARD_TERMS}")
    _sign_flips.add(term)
    try:
        yield
    finally:
        _sign_flips.discard(term)


def _window_moments(guide: Tensor, src: Tensor, p: GuidedFilterParams):
    r = p.radius
    mean_guide = mean_filter(guide, r)
    mean_src = mean_filter(src, r)
    var_guide = mean_filter(guide * guide, r) - mean_guide * mean_guide
    cov = mean_filter(guide * src, r) - mean_guide * mean_src
    if p.eps == 0.0 and np.any(var_guide <= 0.0):
        raise DegenerateWindowError(
            "eps=0 requires positive guidance variance in every window; "
            f"min window variance is {float(var_guide.min()):g}"
        )
    slope = cov / (var_guide + p.eps)
    intercept = mean_src - slope * mean_guide
    return mean_guide, mean_src, var_guide, cov, slope, intercept


def forward_joint(
    guide_lo: Tensor, guide_hi: Tensor, src_lo: Tensor, p: GuidedFilterParams
) -> tuple[Tensor, GuidedFilterTape]:
    """Joint upsampling: regress src on guide at low res, apply at high res."""
    validate(guide_lo, "guide_lo", finite=True)
    validate(guide_hi, "guide_hi", finite=True)
    validate(src_lo, "src_lo", finite=True)
    if guide_lo.shape != src_lo.shape:
        raise ValueError(f"guide_lo/src_lo shape mismatch: {guide_lo.shape} vs {src_lo.shape}")
    if guide_hi.shape[2] != guide_lo.shape[2]:
        raise ValueError(
            f"channel mismatch: guide_hi has {guide_hi.shape[2]}, guide_lo has {guide_lo.shape[2]}"
        )
    if guide_hi.shape[0] < guide_lo.shape[0] or guide_hi.shape[1] < guide_lo.shape[1]:
        raise ValueError(
            f"guide_hi dims {guide_hi.shape[:2]} smaller than guide_lo {guide_lo.shape[:2]}"
        )

    mean_guide, mean_src, var_guide, cov, slope, intercept = _window_moments(guide_lo, src_lo, p)
    hi_h, hi_w = guide_hi.shape[:2]
    slope_hi = bilinear_resize(slope, hi_h, hi_w)
    intercept_hi = bilinear_resize(intercept, hi_h, hi_w)
    if _kernels.enabled():
        out = _kernels.affine_combine(slope_hi, guide_hi, intercept_hi)
    else:
        out = intercept_hi
        out += slope_hi * guide_hi
    if not np.isfinite(out).all():
        raise ValueError("guided filter produced non-finite output; increase eps")
    tape = GuidedFilterTape(
        variant=VARIANT_JOINT,
        params=p,
        guide=guide_lo,
        src=src_lo,
        mean_guide=mean_guide,
        mean_src=mean_src,
        var_guide=var_guide,
        cov_guide_src=cov,
        slope=slope,
        intercept=intercept,
        guide_hi=guide_hi,
        slope_hi=slope_hi,
    )
    return out, tape


def forward_highres(
    guide_hi: Tensor, src_hi: Tensor, p: GuidedFilterParams
) -> tuple[Tensor, GuidedFilterTape]:
    """Full-resolution refinement: moments at full res, coefficients re-smoothed."""
    validate(guide_hi, "guide_hi", finite=True)
    validate(src_hi, "src_hi", finite=True)
    if guide_hi.shape != src_hi.shape:
        raise ValueError(f"guide/src shape mismatch: {guide_hi.shape} vs {src_hi.shape}")

    mean_guide, mean_src, var_guide, cov, slope_raw, intercept_raw = _window_moments(
        guide_hi, src_hi, p
    )
    slope_hi = mean_filter(slope_raw, p.radius)
    intercept_hi = mean_filter(intercept_raw, p.radius)
    if _kernels.enabled():
        out = _kernels.affine_combine(slope_hi, guide_hi, intercept_hi)
    else:
        out = intercept_hi
        out += slope_hi * guide_hi
    if not np.isfinite(out).all():
        raise ValueError("guided filter produced non-finite output; increase eps")
    tape = GuidedFilterTape(
        variant=VARIANT_HIGHRES,
        params=p,
        guide=guide_hi,
        src=src_hi,
        mean_guide=mean_guide,
        mean_src=mean_src,
        var_guide=var_guide,
        cov_guide_src=cov,
        slope=slope_raw,
        intercept=intercept_raw,
        guide_hi=guide_hi,
        slope_hi=slope_hi,
    )
    return out, tape


def _moment_backward(tape: GuidedFilterTape, d_slope: Tensor, d_intercept: Tensor):
    """Shared tail: propagate slope/intercept gradients through the window
    statistics down to the moment-resolution guide and src inputs."""
    p = tape.params
    r = p.radius
    denom = tape.var_guide + p.eps

    d_cov = _sgn("cov") * (d_slope / denom)
    d_var = _sgn("var") * (-d_slope * tape.cov_guide_src / (denom * denom))

    d_mean_src = _sgn("mean_src_direct") * d_intercept + _sgn("mean_src_from_cov") * (
        -d_cov * tape.mean_guide
    )
    d_mean_guide = (
        _sgn("mean_guide_from_intercept") * (-d_intercept * tape.slope)
        + _sgn("mean_guide_from_cov") * (-d_cov * tape.mean_src)
        + _sgn("mean_guide_from_var") * (-2.0 * d_var * tape.mean_guide)
    )

    back_cov = mean_filter_adjoint(d_cov, r)
    d_src = _sgn("src_from_cov") * (back_cov * tape.guide) + _sgn("src_from_mean") * (
        mean_filter_adjoint(d_mean_src, r)
    )
    d_guide = (
        _sgn("guide_from_cov") * (back_cov * tape.src)
        + _sgn("guide_from_var") * (2.0 * mean_filter_adjoint(d_var, r) * tape.guide)
        + _sgn("guide_from_mean") * (mean_filter_adjoint(d_mean_guide, r))
    )
    return d_src, d_guide


def backward(tape: GuidedFilterTape, d_out: Tensor) -> GuidedFilterGrads:
    """Gradients of dot(d_out, out) w.r.t. the forward inputs."""
    validate(d_out, "d_out")
    if d_out.shape != tape.guide_hi.shape:
        raise ValueError(
            f"d_out shape {d_out.shape} does not match output shape {tape.guide_hi.shape}"
        )

    if tape.variant == VARIANT_JOINT:
        lo_h, lo_w = tape.guide.shape[:2]
        d_intercept = _sgn("intercept_adjoint") * bilinear_resize_adjoint(d_out, lo_h, lo_w)
        d_slope = _sgn("slope_adjoint") * bilinear_resize_adjoint(
            d_out * tape.guide_hi, lo_h, lo_w
        ) + _sgn("slope_from_intercept") * (-d_intercept * tape.mean_guide)
        d_guide_hi = _sgn("guide_direct") * (d_out * tape.slope_hi)
        d_src, d_guide_lo = _moment_backward(tape, d_slope, d_intercept)
        return GuidedFilterGrads(d_src=d_src, d_guide_lo=d_guide_lo, d_guide_hi=d_guide_hi)

    if tape.variant == VARIANT_HIGHRES:
        r = tape.params.radius
        d_intercept = _sgn("intercept_adjoint") * mean_filter_adjoint(d_out, r)
        d_slope = _sgn("slope_adjoint") * mean_filter_adjoint(d_out * tape.guide_hi, r) + _sgn(
            "slope_from_intercept"
        ) * (-d_intercept * tape.mean_guide)
        d_guide_direct = _sgn("guide_direct") * (d_out * tape.slope_hi)
        d_src, d_guide_moments = _moment_backward(tape, d_slope, d_intercept)
        return GuidedFilterGrads(
            d_src=d_src, d_guide_lo=None, d_guide_hi=d_guide_direct + d_guide_moments
        )

    raise ValueError(f"unknown tape variant {tape.variant!r}")
