"""End-to-end coarse-to-fine training harness.

Pipeline: downsample the input, run a small conv net on the low-res
copy to predict the operator output, run the (shared-parameter)
guidance net on both resolutions, and let the guided filtering layer
produce the full-resolution result.  Trained with mean-squared error
and Adam at batch size 1 on synthetic image operators, which keeps the
targets exact and the runs desk-sized.

Everything is deterministic given the seed: parameter init, data order,
and the gradient accumulation order over the two guidance-net call
sites (low-res first).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .filters import bilinear_resize, bilinear_resize_adjoint, mean_filter
from .guidance import FixedChannelMeanGuidance, GuidanceNet
from .guided import GuidedFilterParams, backward as gf_backward, forward_joint
from .tensor import Tensor, validate

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    """Non-finite gradient or diverged loss."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 1
    steps: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0.0:
            raise ValueError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if self.batch_size != 1:
            raise ValueError("only batch_size=1 is supported")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    t = state.step + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.shape}")
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1 ** t)
        v_hat = v / (1.0 - ADAM_BETA2 ** t)
        new_params[name] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, step=t)


def mse_loss(out: Tensor, target: Tensor) -> tuple[float, Tensor]:
    """Mean squared error and its gradient w.r.t. ``out``."""
    validate(out, "out")
    validate(target, "target")
    if out.shape != target.shape:
        raise ValueError(f"shape mismatch: {out.shape} vs {target.shape}")
    diff = out - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


@dataclass(frozen=True)
class PipelineTape:
    input_dims: tuple[int, int]
    low_dims: tuple[int, int]
    core_tape: object
    guide_lo_tape: object
    guide_hi_tape: object
    gf_tape: object


class GuidedUpsampler:
    """Downsample -> low-res conv net -> guided filter with learned guidance."""

    def __init__(self, core, guide_net, gf_params: GuidedFilterParams, low_res_side: int = 64):
        if low_res_side < 1:
            raise ValueError(f"low_res_side must be >= 1, got {low_res_side}")
        self.core = core
        self.guide_net = guide_net
        self.gf_params = gf_params
        self.low_res_side = low_res_side

    def low_dims(self, h: int, w: int) -> tuple[int, int]:
        """Target dims with the short side at ``low_res_side``, aspect kept."""
        scale = self.low_res_side / min(h, w)
        return max(1, round(h * scale)), max(1, round(w * scale))

    def parameters(self) -> dict[str, np.ndarray]:
        out = {f"core.{k}": v for k, v in self.core.parameters().items()}
        out.update({f"guide.{k}": v for k, v in self.guide_net.parameters().items()})
        return out

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        self.core.load_parameters(
            {k[5:]: v for k, v in params.items() if k.startswith("core.")}
        )
        self.guide_net.load_parameters(
            {k[6:]: v for k, v in params.items() if k.startswith("guide.")}
        )

    def forward(self, image: Tensor) -> tuple[Tensor, PipelineTape]:
        validate(image, "image", finite=True)
        h, w, _ = image.shape
        lo_h, lo_w = self.low_dims(h, w)
        image_lo = bilinear_resize(image, lo_h, lo_w)
        out_lo, core_tape = self.core.forward(image_lo)
        guide_lo, glo_tape = self.guide_net.forward(image_lo)
        guide_hi, ghi_tape = self.guide_net.forward(image)
        out, gf_tape = forward_joint(guide_lo, guide_hi, out_lo, self.gf_params)
        tape = PipelineTape(
            input_dims=(h, w),
            low_dims=(lo_h, lo_w),
            core_tape=core_tape,
            guide_lo_tape=glo_tape,
            guide_hi_tape=ghi_tape,
            gf_tape=gf_tape,
        )
        return out, tape

    def backward(self, tape: PipelineTape, d_out: Tensor) -> tuple[Tensor, dict[str, np.ndarray]]:
        """Gradients for the input image and all parameters.

        The two guidance-net call sites share one parameter set; their
        contributions accumulate low-res first.
        """
        gf_grads = gf_backward(tape.gf_tape, d_out)
        d_lo_from_core, core_grads = self.core.backward(tape.core_tape, gf_grads.d_src)
        d_lo_from_guide, guide_grads = self.guide_net.backward(
            tape.guide_lo_tape, gf_grads.d_guide_lo
        )
        d_image_direct, guide_grads_hi = self.guide_net.backward(
            tape.guide_hi_tape, gf_grads.d_guide_hi
        )
        for k in guide_grads:
            guide_grads[k] = guide_grads[k] + guide_grads_hi[k]
        d_image_lo = d_lo_from_core + d_lo_from_guide
        h, w = tape.input_dims
        d_image = d_image_direct + bilinear_resize_adjoint(d_image_lo, h, w)
        grads = {f"core.{k}": v for k, v in core_grads.items()}
        grads.update({f"guide.{k}": v for k, v in guide_grads.items()})
        return d_image, grads


def build_model(
    seed: int = 0,
    in_ch: int = 3,
    out_ch: int = 3,
    core_hidden: int = 24,
    core_kernel: int = 3,
    guide_hidden: int = 64,
    guide_kernel: int = 1,
    radius: int = 1,
    eps: float = 1e-8,
    low_res_side: int = 64,
    learned_guidance: bool = True,
) -> GuidedUpsampler:
    """Default desk-scale model; knobs cover the radius/eps/guidance ablations."""
    rng = np.random.default_rng(seed)
    core = GuidanceNet(in_ch, out_ch, hidden=core_hidden, kernel=core_kernel, rng=rng)
    if learned_guidance:
        guide = GuidanceNet(in_ch, out_ch, hidden=guide_hidden, kernel=guide_kernel, rng=rng)
    else:
        guide = FixedChannelMeanGuidance(in_ch, out_ch)
    return GuidedUpsampler(core, guide, GuidedFilterParams(radius=radius, eps=eps),
                           low_res_side=low_res_side)


def train(
    model: GuidedUpsampler,
    dataset: list[tuple[Tensor, Tensor]],
    cfg: TrainConfig,
    through_filter: bool = True,
) -> tuple[GuidedUpsampler, list[float]]:
    """Run ``cfg.steps`` Adam updates, cycling the dataset in order.

    Returns the loss history: entry i is the loss before update i, plus
    one final post-training evaluation (length steps + 1).  With
    ``through_filter=False`` the filter is left untrained: the low-res
    net is supervised directly against downsampled targets and the
    recorded losses are those low-res losses.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    params = model.parameters()
    state = AdamState.init(params)
    history: list[float] = []

    def eval_and_grads(image: Tensor, target: Tensor):
        if through_filter:
            out, tape = model.forward(image)
            loss, d_out = mse_loss(out, target)
            _, grads = model.backward(tape, d_out)
            return loss, grads
        lo_h, lo_w = model.low_dims(*image.shape[:2])
        image_lo = bilinear_resize(image, lo_h, lo_w)
        target_lo = bilinear_resize(target, lo_h, lo_w)
        out_lo, core_tape = model.core.forward(image_lo)
        loss, d_out = mse_loss(out_lo, target_lo)
        _, core_grads = model.core.backward(core_tape, d_out)
        grads = {f"core.{k}": v for k, v in core_grads.items()}
        for name, p in model.parameters().items():
            if name not in grads:
                grads[name] = np.zeros_like(p)
        return loss, grads

    for step in range(cfg.steps):
        image, target = dataset[step % len(dataset)]
        loss, grads = eval_and_grads(image, target)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged to {loss} at step {step}")
        history.append(loss)
        params, state = adam_step(params, grads, state, cfg)
        model.load_parameters(params)

    image, target = dataset[cfg.steps % len(dataset)]
    final_loss, _ = eval_and_grads(image, target)
    if not np.isfinite(final_loss):
        raise TrainingError(f"loss diverged to {final_loss} after training")
    history.append(final_loss)
    return model, history


def affine_target(image: Tensor) -> Tensor:
    """Clipped affine tone curve."""
    return np.clip(1.5 * image - 0.25, 0.0, 1.0)


def smooth_target(image: Tensor) -> Tensor:
    """Window-mean smoothing, radius 2."""
    return mean_filter(image, 2)


def gamma_target(image: Tensor) -> Tensor:
    """Per-channel gamma curve (cycled if channels > 3)."""
    gammas = (0.5, 1.0, 2.0)
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        out[:, :, c] = image[:, :, c] ** gammas[c % len(gammas)]
    return out


TASKS = {"affine": affine_target, "smooth": smooth_target, "gamma": gamma_target}


def synthetic_images(count: int, height: int, width: int, channels: int,
                     seed: int) -> list[Tensor]:
    """Smooth random images: upsampled coarse noise plus faint detail."""
    rng = np.random.default_rng(seed)
    images = []
    for _ in range(count):
        coarse = rng.uniform(0.0, 1.0, (max(2, height // 12), max(2, width // 12), channels))
        detail = rng.uniform(-1.0, 1.0, (max(2, height // 3), max(2, width // 3), channels))
        img = bilinear_resize(coarse, height, width)
        img += 0.06 * bilinear_resize(detail, height, width)
        images.append(np.clip(img, 0.0, 1.0))
    return images


def make_dataset(task: str, count: int = 20, height: int = 96, width: int = 96,
                 channels: int = 3, seed: int = 0) -> list[tuple[Tensor, Tensor]]:
    """(input, target) pairs for one synthetic operator."""
    try:
        op = TASKS[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}; expected one of {sorted(TASKS)}") from None
    return [(img, op(img)) for img in synthetic_images(count, height, width, channels, seed)]


def _as_file_tensor(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 1:
        return arr.reshape(1, 1, -1)
    if arr.ndim == 3:
        return arr
    if arr.ndim == 4:  # conv weights (out, in, k, k) -> (out, in, k*k)
        return arr.reshape(arr.shape[0], arr.shape[1], -1)
    raise ValueError(f"cannot map rank-{arr.ndim} parameter into a file tensor")


def save_checkpoint(model: GuidedUpsampler, path) -> None:
    fileio.save_tensors(path, {k: _as_file_tensor(v) for k, v in model.parameters().items()})


def load_checkpoint(model: GuidedUpsampler, path) -> None:
    """Load named parameters saved by save_checkpoint into ``model``.

    The model supplies the true shapes; the file only has to match
    element counts name by name.
    """
    stored = fileio.load_tensors(path)
    params = model.parameters()
    if set(stored) != set(params):
        raise ValueError(
            f"checkpoint parameters {sorted(stored)} do not match model {sorted(params)}"
        )
    loaded = {}
    for name, current in params.items():
        flat = stored[name]
        if flat.size != current.size:
            raise ValueError(f"size mismatch for {name}: {flat.size} vs {current.size}")
        loaded[name] = flat.reshape(current.shape)
    model.load_parameters(loaded)
