import numpy as np
import pytest

from guidedfilter import filters as flt
from guidedfilter import verify
from guidedfilter.guided import (
    BACKWARD_TERMS,
    DegenerateWindowError,
    GuidedFilterParams,
    backward,
    flipped_term,
    forward_highres,
    forward_joint,
)
from oracles import random_image, transcribe_highres, transcribe_joint


def _instance(seed=0, lo=(6, 8, 2), hi=(12, 16)):
    rng = np.random.default_rng(seed)
    guide_lo = random_image(rng, *lo)
    guide_hi = random_image(rng, *hi, lo[2])
    src_lo = random_image(rng, *lo)
    return guide_lo, guide_hi, src_lo


# --- params -----------------------------------------------------------------

def test_params_validation():
    with pytest.raises(ValueError):
        GuidedFilterParams(radius=-1)
    with pytest.raises(ValueError):
        GuidedFilterParams(radius=1, eps=-1e-3)
    with pytest.raises(ValueError):
        GuidedFilterParams(radius=1.5)
    p = GuidedFilterParams()
    assert p.radius == 1 and p.eps == 1e-8


# --- joint forward ----------------------------------------------------------

def test_joint_constant_src_passes_through():
    guide_lo, guide_hi, _ = _instance(1)
    src = np.full_like(guide_lo, 5.0)
    out, _ = forward_joint(guide_lo, guide_hi, src, GuidedFilterParams(1, 1e-8))
    assert np.abs(out - 5.0).max() <= 1e-10


def test_joint_recovers_exact_linear_model_eps_zero():
    guide_lo, guide_hi, _ = _instance(2)
    src = 2.0 * guide_lo + 3.0
    out, _ = forward_joint(guide_lo, guide_hi, src, GuidedFilterParams(1, 0.0))
    assert np.abs(out - (2.0 * guide_hi + 3.0)).max() <= 1e-8


def test_joint_matches_naive_transcription():
    rng = np.random.default_rng(3)
    guide_lo = random_image(rng, 8, 8, 2)
    guide_hi = random_image(rng, 16, 16, 2)
    src_lo = random_image(rng, 8, 8, 2)
    out, _ = forward_joint(guide_lo, guide_hi, src_lo, GuidedFilterParams(1, 1e-2))
    want = transcribe_joint(guide_lo, guide_hi, src_lo, 1, 1e-2)
    assert np.abs(out - want).max() <= 1e-10


def test_joint_shape_and_channel_validation():
    guide_lo, guide_hi, src_lo = _instance(4)
    p = GuidedFilterParams(1, 1e-2)
    with pytest.raises(ValueError):
        forward_joint(guide_lo, guide_hi, src_lo[:, :-1], p)
    with pytest.raises(ValueError):
        forward_joint(guide_lo, guide_hi[:, :, :1], src_lo, p)
    with pytest.raises(ValueError):  # guide_hi smaller than guide_lo
        forward_joint(guide_hi, guide_lo, guide_hi, p)


def test_joint_rejects_non_finite_input():
    guide_lo, guide_hi, src_lo = _instance(5)
    src_lo = src_lo.copy()
    src_lo[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        forward_joint(guide_lo, guide_hi, src_lo, GuidedFilterParams(1, 1e-2))


def test_degenerate_window_with_zero_eps():
    guide_lo, guide_hi, src_lo = _instance(6)
    flat_guide = np.full_like(guide_lo, 0.25)
    with pytest.raises(DegenerateWindowError):
        forward_joint(flat_guide, guide_hi, src_lo, GuidedFilterParams(1, 0.0))


def test_tape_moments_rederive_slope_intercept():
    guide_lo, guide_hi, src_lo = _instance(7)
    _, tape = forward_joint(guide_lo, guide_hi, src_lo, GuidedFilterParams(2, 1e-2))
    slope = tape.cov_guide_src / (tape.var_guide + tape.params.eps)
    intercept = tape.mean_src - slope * tape.mean_guide
    assert np.abs(slope - tape.slope).max() <= 1e-12
    assert np.abs(intercept - tape.intercept).max() <= 1e-12
    assert tape.variant == "joint"


# --- high-res forward -------------------------------------------------------

def test_highres_constant_src_passes_through():
    rng = np.random.default_rng(8)
    guide = random_image(rng, 12, 10, 2)
    out, _ = forward_highres(guide, np.full_like(guide, 0.3), GuidedFilterParams(2, 1e-2))
    assert np.abs(out - 0.3).max() <= 1e-10


def test_highres_recovers_exact_linear_model_eps_zero():
    rng = np.random.default_rng(9)
    guide = random_image(rng, 16, 14, 2)
    src = 0.7 * guide - 0.2
    out, _ = forward_highres(guide, src, GuidedFilterParams(1, 0.0))
    assert np.abs(out - src).max() <= 1e-8


def test_highres_matches_naive_transcription():
    rng = np.random.default_rng(10)
    guide = random_image(rng, 32, 32, 3)
    src = random_image(rng, 32, 32, 3)
    out, _ = forward_highres(guide, src, GuidedFilterParams(4, 1e-2))
    want = transcribe_highres(guide, src, 4, 1e-2)
    assert np.abs(out - want).max() <= 1e-10


def test_highres_shape_validation():
    rng = np.random.default_rng(11)
    guide = random_image(rng, 8, 8, 1)
    with pytest.raises(ValueError):
        forward_highres(guide, random_image(rng, 8, 7, 1), GuidedFilterParams(1, 1e-2))


# --- backward ---------------------------------------------------------------

def test_backward_zero_cotangent_gives_zero_grads():
    guide_lo, guide_hi, src_lo = _instance(12)
    out, tape = forward_joint(guide_lo, guide_hi, src_lo, GuidedFilterParams(1, 1e-2))
    g = backward(tape, np.zeros_like(out))
    assert not g.d_src.any() and not g.d_guide_lo.any() and not g.d_guide_hi.any()


def test_backward_constant_guide_reduces_to_mean_chain():
    # zero slope: only the intercept path survives
    guide_lo, guide_hi, src_lo = _instance(13)
    flat = np.full_like(guide_lo, 0.5)
    flat_hi = np.full_like(guide_hi, 0.5)
    p = GuidedFilterParams(1, 1e-2)
    out, tape = forward_joint(flat, flat_hi, src_lo, p)
    rng = np.random.default_rng(14)
    d_out = rng.standard_normal(out.shape)
    g = backward(tape, d_out)
    want = flt.mean_filter_adjoint(
        flt.bilinear_resize_adjoint(d_out, *src_lo.shape[:2]), p.radius
    )
    assert np.abs(g.d_src - want).max() <= 1e-12


def test_backward_linear_in_cotangent():
    guide_lo, guide_hi, src_lo = _instance(15)
    out, tape = forward_joint(guide_lo, guide_hi, src_lo, GuidedFilterParams(1, 1e-2))
    rng = np.random.default_rng(16)
    u = rng.standard_normal(out.shape)
    v = rng.standard_normal(out.shape)
    alpha, beta = 0.37, -1.21
    combo = backward(tape, alpha * u + beta * v)
    gu, gv = backward(tape, u), backward(tape, v)
    for name in ("d_src", "d_guide_lo", "d_guide_hi"):
        mixed = alpha * getattr(gu, name) + beta * getattr(gv, name)
        assert np.abs(getattr(combo, name) - mixed).max() <= 1e-10


def test_backward_rejects_wrong_cotangent_shape():
    guide_lo, guide_hi, src_lo = _instance(17)
    _, tape = forward_joint(guide_lo, guide_hi, src_lo, GuidedFilterParams(1, 1e-2))
    with pytest.raises(ValueError):
        backward(tape, np.zeros_like(src_lo))


@pytest.mark.parametrize("r,eps", [(0, 1e-2), (1, 1e-2), (1, 1e-4), (2, 1e-2), (2, 1e-4)])
def test_backward_matches_finite_differences_joint(r, eps):
    p = GuidedFilterParams(radius=r, eps=eps)
    report = verify.gradcheck_guided("joint", p, (6, 8, 2), (12, 16), seed=40 + r)
    assert report.passed, "\n".join(report.lines())


@pytest.mark.parametrize("r,eps", [(1, 1e-2), (2, 1e-2), (4, 1e-2)])
def test_backward_matches_finite_differences_highres(r, eps):
    p = GuidedFilterParams(radius=r, eps=eps)
    report = verify.gradcheck_guided("highres", p, (9, 8, 2), (9, 8), seed=50 + r)
    assert report.passed, "\n".join(report.lines())


def test_constant_guide_fd_check():
    # covariance is zero; gradients still must match finite differences
    p = GuidedFilterParams(1, 1e-2)
    rng = np.random.default_rng(18)
    inputs = {
        "src_lo": random_image(rng, 5, 6, 1),
        "guide_lo": np.full((5, 6, 1), 0.5),
        "guide_hi": np.full((10, 12, 1), 0.5),
    }

    def fwd(d):
        out, _ = forward_joint(d["guide_lo"], d["guide_hi"], d["src_lo"], p)
        return out

    def bwd(d, probe):
        _, tape = forward_joint(d["guide_lo"], d["guide_hi"], d["src_lo"], p)
        g = backward(tape, probe)
        return {"src_lo": g.d_src, "guide_hi": g.d_guide_hi}

    fd_inputs = {"src_lo": inputs["src_lo"], "guide_hi": inputs["guide_hi"]}

    def fwd_partial(d):
        return fwd({**inputs, **d})

    def bwd_partial(d, probe):
        return bwd({**inputs, **d}, probe)

    report = verify.gradcheck(fwd_partial, bwd_partial, fd_inputs, seed=19)
    assert report.passed, "\n".join(report.lines())

    # the slope branch vanishes identically at a constant dyadic guide
    _, tape = forward_joint(inputs["guide_lo"], inputs["guide_hi"], inputs["src_lo"], p)
    g = backward(tape, np.random.default_rng(19).standard_normal((10, 12, 1)))
    assert not g.d_guide_lo.any()


def test_scale_commutation_for_constant_guide():
    guide_lo, guide_hi, src_lo = _instance(20)
    flat = np.full_like(guide_lo, 0.5)
    flat_hi = np.full_like(guide_hi, 0.5)
    p = GuidedFilterParams(1, 1e-2)
    base, _ = forward_joint(flat, flat_hi, src_lo, p)
    doubled, _ = forward_joint(flat, flat_hi, 2.0 * src_lo, p)
    assert np.array_equal(doubled, 2.0 * base)  # power-of-two scale: bitwise
    tripled, _ = forward_joint(flat, flat_hi, 3.0 * src_lo, p)
    assert np.abs(tripled - 3.0 * base).max() <= 1e-12 * np.abs(base).max()


# --- mutation hook ----------------------------------------------------------

def test_flipped_term_rejects_unknown_name():
    with pytest.raises(ValueError):
        with flipped_term("not_a_term"):
            pass


def test_flipped_term_breaks_gradcheck_and_restores():
    p = GuidedFilterParams(1, 1e-2)
    with flipped_term("guide_from_var"):
        bad = verify.gradcheck_guided("joint", p, (5, 6, 1), (10, 12), seed=21)
    assert not bad.passed
    good = verify.gradcheck_guided("joint", p, (5, 6, 1), (10, 12), seed=21)
    assert good.passed
    assert "guide_from_var" in BACKWARD_TERMS
