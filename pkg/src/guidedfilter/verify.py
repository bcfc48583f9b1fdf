"""Independent numerical oracles: finite differences and dense adjoint checks.

Nothing here shares code with the analytic backward passes; these are
the referees.  Central differences use step 1e-6 by default, which for
float64 values in [0, 1] balances truncation against roundoff; if a
check fails near the tolerance, suspect the step before the gradient.

``gradcheck`` probes a layer through a fixed random linear functional
of its output, so one scalar finite-difference sweep per input element
covers every output element at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

REL_ERR_FLOOR = 1e-8


class OracleError(RuntimeError):
    """A finite-difference probe evaluated to a non-finite value."""


def finite_diff(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one element at a time."""
    if step <= 0.0:
        raise ValueError(f"step must be positive, got {step}")
    grad = np.empty_like(x, dtype=np.float64)
    flat = grad.ravel()
    base = x.astype(np.float64, copy=True)
    for i in range(base.size):
        orig = base.flat[i]
        base.flat[i] = orig + step
        f_plus = float(f(base))
        base.flat[i] = orig - step
        f_minus = float(f(base))
        base.flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise OracleError(f"non-finite probe values at flat index {i}: {f_plus}, {f_minus}")
        flat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def dense_operator(op: Callable[[np.ndarray], np.ndarray], in_shape: tuple[int, ...]) -> np.ndarray:
    """Explicit matrix of a linear operator, column j = op(basis_j).ravel()."""
    n = int(np.prod(in_shape))
    cols = []
    for j in range(n):
        basis = np.zeros(in_shape, dtype=np.float64)
        basis.flat[j] = 1.0
        cols.append(np.asarray(op(basis), dtype=np.float64).ravel())
    return np.stack(cols, axis=1)


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """Per-element relative error with the standard floored denominator."""
    return np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + REL_ERR_FLOOR)


@dataclass(frozen=True)
class InputReport:
    name: str
    max_rel_err: float
    worst_index: int
    passed: bool

    def line(self) -> str:
        status = "pass" if self.passed else "fail"
        return f"{self.name} {self.max_rel_err:.6e} {self.worst_index} {status}"


@dataclass(frozen=True)
class GradcheckReport:
    tolerance: float
    seed: int
    entries: tuple[InputReport, ...]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def lines(self) -> list[str]:
        return [e.line() for e in self.entries]


def gradcheck(
    forward: Callable[[Mapping[str, np.ndarray]], np.ndarray],
    backward: Callable[[Mapping[str, np.ndarray], np.ndarray], Mapping[str, np.ndarray]],
    inputs: Mapping[str, np.ndarray],
    seed: int = 0,
    tolerance: float = 1e-5,
    step: float = 1e-6,
    name: str = "layer",
    reference_forward: Callable[[Mapping[str, np.ndarray]], np.ndarray] | None = None,
) -> GradcheckReport:
    """Compare a layer's analytic input gradients against finite differences.

    ``forward`` maps the input dict to an output array; ``backward``
    maps (inputs, probe) to a dict of gradients of dot(probe, output).
    The probe is drawn once from ``seed`` and reused for every input.
    The probed scalar is centered on the unperturbed output, which
    leaves the gradient untouched but keeps the finite-difference
    quotient clear of large-magnitude cancellation noise.

    ``reference_forward``, when given, is what the finite differences
    probe (e.g. an extended-precision evaluation of the same math);
    the analytic side always comes from ``backward``.
    """
    rng = np.random.default_rng(seed)
    probe_forward = reference_forward if reference_forward is not None else forward
    base = probe_forward(inputs)
    probe = rng.standard_normal(base.shape).astype(base.dtype)
    analytic = backward(inputs, probe.astype(np.float64))

    entries = []
    for key, value in inputs.items():
        def scalar(x: np.ndarray, _key: str = key) -> float:
            probed = dict(inputs)
            probed[_key] = x
            return float(np.vdot(probe, probe_forward(probed) - base))

        numeric = finite_diff(scalar, value, step)
        errs = rel_err(np.asarray(analytic[key], dtype=np.float64), numeric)
        worst = int(np.argmax(errs))
        worst_err = float(errs.flat[worst])
        entries.append(
            InputReport(
                name=f"{name}.{key}",
                max_rel_err=worst_err,
                worst_index=worst,
                passed=worst_err <= tolerance,
            )
        )
    return GradcheckReport(tolerance=tolerance, seed=seed, entries=tuple(entries))


def _mean_ref(t: np.ndarray, r: int) -> np.ndarray:
    """Clamped-window mean in the dtype of ``t`` (used at extended precision)."""
    if r == 0:
        # Match the layer exactly: a unit window is the identity, with no
        # prefix-sum roundoff to masquerade as a guide dependence.
        return t.copy()
    h, w, _ = t.shape
    sat = np.zeros((h + 1, w + 1, t.shape[2]), dtype=t.dtype)
    sat[1:, 1:] = t.cumsum(axis=0).cumsum(axis=1)
    ys, xs = np.arange(h), np.arange(w)
    y0, y1 = np.maximum(ys - r, 0), np.minimum(ys + r, h - 1) + 1
    x0, x1 = np.maximum(xs - r, 0), np.minimum(xs + r, w - 1) + 1
    sums = (
        sat[y1[:, None], x1[None, :]]
        - sat[y0[:, None], x1[None, :]]
        - sat[y1[:, None], x0[None, :]]
        + sat[y0[:, None], x0[None, :]]
    )
    counts = ((y1 - y0)[:, None] * (x1 - x0)[None, :]).astype(t.dtype)
    return sums / counts[:, :, None]


def _resize_ref(t: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize in the dtype of ``t``."""
    h, w, _ = t.shape

    def axis(n_in: int, n_out: int):
        s = (np.arange(n_out, dtype=t.dtype) + t.dtype.type(0.5)) * (
            t.dtype.type(n_in) / t.dtype.type(n_out)
        ) - t.dtype.type(0.5)
        s = np.clip(s, 0, n_in - 1)
        lo = np.minimum(np.floor(s).astype(np.intp), n_in - 1)
        return lo, np.minimum(lo + 1, n_in - 1), s - lo

    ylo, yhi, fy = axis(h, out_h)
    xlo, xhi, fx = axis(w, out_w)
    rows = t[ylo] + fy[:, None, None] * (t[yhi] - t[ylo])
    return rows[:, xlo] + fx[None, :, None] * (rows[:, xhi] - rows[:, xlo])


def guided_reference(variant: str, params, dtype=np.longdouble):
    """Extended-precision evaluation of the guided-filter forward math.

    Finite differences of the float64 forward bottom out at roundoff
    around 1e-8 absolute; probing this transcription instead keeps the
    oracle noise well below the 1e-5 tolerance even for near-zero
    gradient components.  The analytic side under test stays float64.
    """
    from . import guided

    r, eps = params.radius, dtype(params.eps)

    def moments(guide, src):
        mean_guide = _mean_ref(guide, r)
        mean_src = _mean_ref(src, r)
        var = _mean_ref(guide * guide, r) - mean_guide * mean_guide
        cov = _mean_ref(guide * src, r) - mean_guide * mean_src
        slope = cov / (var + eps)
        return slope, mean_src - slope * mean_guide

    if variant == guided.VARIANT_JOINT:
        def run(d):
            guide_lo = d["guide_lo"].astype(dtype)
            guide_hi = d["guide_hi"].astype(dtype)
            slope, intercept = moments(guide_lo, d["src_lo"].astype(dtype))
            hi_h, hi_w = guide_hi.shape[:2]
            return _resize_ref(slope, hi_h, hi_w) * guide_hi + _resize_ref(
                intercept, hi_h, hi_w
            )
    else:
        def run(d):
            guide = d["guide"].astype(dtype)
            slope, intercept = moments(guide, d["src"].astype(dtype))
            return _mean_ref(slope, r) * guide + _mean_ref(intercept, r)

    return run


def _guided_harness(variant: str, params, shapes, seed: int):
    """Forward/backward closures plus seeded inputs for one guided-filter case."""
    from . import guided

    rng = np.random.default_rng(seed)
    (lo_h, lo_w, ch), (hi_h, hi_w) = shapes
    if variant == guided.VARIANT_JOINT:
        inputs = {
            "src_lo": rng.uniform(0.0, 1.0, (lo_h, lo_w, ch)),
            "guide_lo": rng.uniform(0.0, 1.0, (lo_h, lo_w, ch)),
            "guide_hi": rng.uniform(0.0, 1.0, (hi_h, hi_w, ch)),
        }

        def fwd(d):
            out, _ = guided.forward_joint(d["guide_lo"], d["guide_hi"], d["src_lo"], params)
            return out

        def bwd(d, probe):
            _, tape = guided.forward_joint(d["guide_lo"], d["guide_hi"], d["src_lo"], params)
            g = guided.backward(tape, probe)
            return {"src_lo": g.d_src, "guide_lo": g.d_guide_lo, "guide_hi": g.d_guide_hi}

    else:
        inputs = {
            "src": rng.uniform(0.0, 1.0, (hi_h, hi_w, ch)),
            "guide": rng.uniform(0.0, 1.0, (hi_h, hi_w, ch)),
        }

        def fwd(d):
            out, _ = guided.forward_highres(d["guide"], d["src"], params)
            return out

        def bwd(d, probe):
            _, tape = guided.forward_highres(d["guide"], d["src"], params)
            g = guided.backward(tape, probe)
            return {"src": g.d_src, "guide": g.d_guide_hi}

    return fwd, bwd, inputs


def gradcheck_guided(
    variant: str,
    params,
    lo_shape: tuple[int, int, int],
    hi_dims: tuple[int, int],
    seed: int = 0,
    tolerance: float = 1e-5,
    step: float = 1e-6,
) -> GradcheckReport:
    """Finite-difference check of one guided-filter instance."""
    fwd, bwd, inputs = _guided_harness(variant, params, (lo_shape, hi_dims), seed)
    label = f"guided[{variant},r={params.radius},eps={params.eps:g}]"
    return gradcheck(
        fwd, bwd, inputs, seed=seed, tolerance=tolerance, step=step, name=label,
        reference_forward=guided_reference(variant, params),
    )


def standard_suite(seed: int = 0, tolerance: float = 1e-5) -> list[GradcheckReport]:
    """The gradient checks the CLI runs: guided layer (both variants over a
    small radius/eps grid), conv layer, and the guidance network."""
    from . import guidance, guided

    reports = []
    case = 0
    for r in (0, 1, 2):
        for eps in (1e-2, 1e-4):
            params = guided.GuidedFilterParams(radius=r, eps=eps)
            reports.append(
                gradcheck_guided(
                    guided.VARIANT_JOINT, params, (5, 6, 2), (10, 12),
                    seed=seed * 1000 + case * 10, tolerance=tolerance,
                )
            )
            case += 1
    reports.append(
        gradcheck_guided(
            guided.VARIANT_HIGHRES,
            guided.GuidedFilterParams(radius=2, eps=1e-2),
            (7, 8, 2),
            (7, 8),
            seed=seed * 1000 + case * 10,
            tolerance=tolerance,
        )
    )

    rng = np.random.default_rng(seed * 1000 + 700)
    conv = guidance.ConvLayer(2, 3, kernel=3, dilation=2, bias=True, rng=rng)
    x = rng.uniform(0.0, 1.0, (6, 7, 2))
    reports.append(gradcheck_conv(conv, x, seed=seed * 1000 + 701, tolerance=tolerance))

    net = guidance.GuidanceNet(2, 2, hidden=4, kernel=1, rng=rng)
    xn = rng.uniform(0.1, 1.0, (5, 6, 2))
    reports.append(
        gradcheck_guidance_net(net, xn, seed=seed * 1000 + 702, tolerance=tolerance)
    )
    return reports


def gradcheck_conv(layer, x: np.ndarray, seed: int = 0, tolerance: float = 1e-5,
                   step: float = 1e-6) -> GradcheckReport:
    """Finite-difference check of a conv layer: input and every parameter."""
    base = dict(layer.parameters())
    inputs = {"x": x, **base}

    def fwd(d):
        layer.load_parameters({k: d[k] for k in base})
        y, _ = layer.forward(d["x"])
        return y

    def bwd(d, probe):
        layer.load_parameters({k: d[k] for k in base})
        _, tape = layer.forward(d["x"])
        dx, grads = layer.backward(tape, probe)
        return {"x": dx, **grads}

    try:
        return gradcheck(fwd, bwd, inputs, seed=seed, tolerance=tolerance, step=step, name="conv")
    finally:
        layer.load_parameters(base)


def gradcheck_guidance_net(net, x: np.ndarray, seed: int = 0, tolerance: float = 1e-5,
                           step: float = 1e-6) -> GradcheckReport:
    """Finite-difference check of the guidance network end to end."""
    base = dict(net.parameters())
    inputs = {"x": x, **base}

    def fwd(d):
        net.load_parameters({k: d[k] for k in base})
        y, _ = net.forward(d["x"])
        return y

    def bwd(d, probe):
        net.load_parameters({k: d[k] for k in base})
        _, tape = net.forward(d["x"])
        dx, grads = net.backward(tape, probe)
        return {"x": dx, **grads}

    try:
        return gradcheck(fwd, bwd, inputs, seed=seed, tolerance=tolerance, step=step,
                         name="guidance")
    finally:
        net.load_parameters(base)
