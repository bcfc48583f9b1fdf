"""Learnable guidance transformation and its building blocks.

A small fully-convolutional net turns an input image into a guidance
map with the channel count the guided filter expects: conv (no bias),
adaptive normalization, leaky ReLU, then a 1x1 conv with bias.  The
adaptive norm blends the raw activation with a per-channel spatially
standardized copy, ``gain * x + norm_gain * standardize(x)``, with both
blend weights learned.

Forward passes return a tape; backward passes are hand-written and
produce exact gradients for the input and every parameter (the
normalization statistics are differentiated through, not detached).
Parameters live in plain float64 arrays exposed via ``parameters()`` /
``load_parameters()`` so the optimizer can treat every component alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, validate

LEAKY_SLOPE = 0.2
NORM_VAR_FLOOR = 1e-5


def xavier_uniform(rng: np.random.Generator, out_ch: int, in_ch: int, kernel: int) -> np.ndarray:
    fan_in = in_ch * kernel * kernel
    fan_out = out_ch * kernel * kernel
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (out_ch, in_ch, kernel, kernel))


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> tuple[np.ndarray, np.ndarray]:
    """Returns (activation, positive-branch mask); mask feeds the backward."""
    mask = x >= 0.0
    return np.where(mask, x, slope * x), mask


def leaky_relu_backward(mask: np.ndarray, dy: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(mask, dy, slope * dy)


@dataclass(frozen=True)
class ConvTape:
    padded: np.ndarray  # zero-padded input, the patches backward re-reads
    in_shape: tuple[int, int, int]


class ConvLayer:
    """2-d cross-correlation with dilation and same-size zero padding.

    Kernel must be odd so the padding (kernel-1)*dilation/2 keeps the
    spatial dims unchanged.  Weights are (out_ch, in_ch, k, k).
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 1, dilation: int = 1,
                 bias: bool = True, rng: np.random.Generator | None = None):
        if kernel < 1 or kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
        if dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {dilation}")
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.dilation = dilation
        self.pad = (kernel - 1) * dilation // 2
        if rng is None:
            self.weight = np.zeros((out_ch, in_ch, kernel, kernel))
        else:
            self.weight = xavier_uniform(rng, out_ch, in_ch, kernel)
        self.bias = np.zeros(out_ch) if bias else None

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"weight": self.weight}
        if self.bias is not None:
            params["bias"] = self.bias
        return params

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        self.weight = np.asarray(params["weight"], dtype=np.float64).reshape(self.weight.shape)
        if self.bias is not None:
            self.bias = np.asarray(params["bias"], dtype=np.float64).reshape(self.bias.shape)

    def forward(self, x: Tensor) -> tuple[Tensor, ConvTape]:
        validate(x, "x")
        h, w, c = x.shape
        if c != self.in_ch:
            raise ValueError(f"expected {self.in_ch} input channels, got {c}")
        p = self.pad
        padded = np.zeros((h + 2 * p, w + 2 * p, c)) if p else x.astype(np.float64, copy=False)
        if p:
            padded[p:p + h, p:p + w] = x
        y = np.zeros((h, w, self.out_ch))
        d = self.dilation
        for ky in range(self.kernel):
            for kx in range(self.kernel):
                patch = padded[ky * d:ky * d + h, kx * d:kx * d + w]
                y += patch @ self.weight[:, :, ky, kx].T
        if self.bias is not None:
            y += self.bias
        return y, ConvTape(padded=padded, in_shape=(h, w, c))

    def backward(self, tape: ConvTape, dy: Tensor) -> tuple[Tensor, dict[str, np.ndarray]]:
        validate(dy, "dy")
        h, w, c = tape.in_shape
        if dy.shape != (h, w, self.out_ch):
            raise ValueError(f"dy shape {dy.shape} does not match output ({h}, {w}, {self.out_ch})")
        p, d = self.pad, self.dilation
        d_padded = np.zeros_like(tape.padded)
        d_weight = np.zeros_like(self.weight)
        for ky in range(self.kernel):
            for kx in range(self.kernel):
                patch = tape.padded[ky * d:ky * d + h, kx * d:kx * d + w]
                # (in_ch, out_ch) correlation of input patches with dy
                d_weight[:, :, ky, kx] = np.tensordot(dy, patch, axes=((0, 1), (0, 1)))
                d_padded[ky * d:ky * d + h, kx * d:kx * d + w] += dy @ self.weight[:, :, ky, kx]
        dx = d_padded[p:p + h, p:p + w] if p else d_padded
        grads = {"weight": d_weight}
        if self.bias is not None:
            grads["bias"] = dy.sum(axis=(0, 1))
        return np.ascontiguousarray(dx), grads


@dataclass(frozen=True)
class NormTape:
    x: np.ndarray
    standardized: np.ndarray
    inv_std: np.ndarray  # (1, 1, c)


class AdaptiveNorm:
    """gain * x + norm_gain * standardize(x), statistics per channel over space.

    The variance floor keeps constant channels finite; statistics are
    functions of the input in the backward pass (no stop-gradient).
    """

    def __init__(self, gain: float = 1.0, norm_gain: float = 0.0):
        self.gain = np.array([float(gain)])
        self.norm_gain = np.array([float(norm_gain)])

    def parameters(self) -> dict[str, np.ndarray]:
        return {"gain": self.gain, "norm_gain": self.norm_gain}

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        self.gain = np.asarray(params["gain"], dtype=np.float64).reshape(1)
        self.norm_gain = np.asarray(params["norm_gain"], dtype=np.float64).reshape(1)

    def forward(self, x: Tensor) -> tuple[Tensor, NormTape]:
        validate(x, "x")
        mean = x.mean(axis=(0, 1), keepdims=True)
        var = x.var(axis=(0, 1), keepdims=True)
        inv_std = 1.0 / np.sqrt(var + NORM_VAR_FLOOR)
        standardized = (x - mean) * inv_std
        y = self.gain[0] * x + self.norm_gain[0] * standardized
        return y, NormTape(x=x, standardized=standardized, inv_std=inv_std)

    def backward(self, tape: NormTape, dy: Tensor) -> tuple[Tensor, dict[str, np.ndarray]]:
        validate(dy, "dy")
        if dy.shape != tape.x.shape:
            raise ValueError(f"dy shape {dy.shape} does not match input {tape.x.shape}")
        d_gain = float(np.vdot(dy, tape.x))
        d_norm_gain = float(np.vdot(dy, tape.standardized))
        # Gradient through the standardization, statistics included:
        # dx = (g - mean(g) - xhat * mean(g * xhat)) / std, per channel.
        g = self.norm_gain[0] * dy
        g_mean = g.mean(axis=(0, 1), keepdims=True)
        g_proj = (g * tape.standardized).mean(axis=(0, 1), keepdims=True)
        dx = self.gain[0] * dy + (g - g_mean - tape.standardized * g_proj) * tape.inv_std
        return dx, {"gain": np.array([d_gain]), "norm_gain": np.array([d_norm_gain])}


@dataclass(frozen=True)
class GuidanceTape:
    conv1: ConvTape
    norm: NormTape
    relu_mask: np.ndarray
    conv2: ConvTape


class GuidanceNet:
    """conv -> adaptive norm -> leaky ReLU -> 1x1 conv with bias."""

    def __init__(self, in_ch: int, out_ch: int, hidden: int = 64, kernel: int = 1,
                 dilation: int = 1, rng: np.random.Generator | None = None):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.conv1 = ConvLayer(in_ch, hidden, kernel=kernel, dilation=dilation,
                               bias=False, rng=rng)
        self.norm = AdaptiveNorm()
        self.conv2 = ConvLayer(hidden, out_ch, kernel=1, bias=True, rng=rng)

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for prefix, part in (("conv1", self.conv1), ("norm", self.norm), ("conv2", self.conv2)):
            for k, v in part.parameters().items():
                out[f"{prefix}.{k}"] = v
        return out

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        for prefix, part in (("conv1", self.conv1), ("norm", self.norm), ("conv2", self.conv2)):
            part.load_parameters(
                {k[len(prefix) + 1:]: v for k, v in params.items() if k.startswith(prefix + ".")}
            )

    def forward(self, x: Tensor) -> tuple[Tensor, GuidanceTape]:
        h1, tape1 = self.conv1.forward(x)
        h2, tape_norm = self.norm.forward(h1)
        h3, mask = leaky_relu(h2)
        y, tape2 = self.conv2.forward(h3)
        return y, GuidanceTape(conv1=tape1, norm=tape_norm, relu_mask=mask, conv2=tape2)

    def backward(self, tape: GuidanceTape, dy: Tensor) -> tuple[Tensor, dict[str, np.ndarray]]:
        d3, grads2 = self.conv2.backward(tape.conv2, dy)
        d2 = leaky_relu_backward(tape.relu_mask, d3)
        d1, grads_norm = self.norm.backward(tape.norm, d2)
        dx, grads1 = self.conv1.backward(tape.conv1, d1)
        grads = {f"conv1.{k}": v for k, v in grads1.items()}
        grads.update({f"norm.{k}": v for k, v in grads_norm.items()})
        grads.update({f"conv2.{k}": v for k, v in grads2.items()})
        return dx, grads


class FixedChannelMeanGuidance:
    """Parameter-free guidance: channel mean of the input, replicated.

    Stand-in for the learnable net when comparing against a fixed
    guidance baseline; implements the same forward/backward surface.
    """

    def __init__(self, in_ch: int, out_ch: int):
        self.in_ch = in_ch
        self.out_ch = out_ch

    def parameters(self) -> dict[str, np.ndarray]:
        return {}

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        if params:
            raise ValueError("fixed guidance has no parameters")

    def forward(self, x: Tensor) -> tuple[Tensor, tuple[int, int, int]]:
        validate(x, "x")
        if x.shape[2] != self.in_ch:
            raise ValueError(f"expected {self.in_ch} input channels, got {x.shape[2]}")
        mean = x.mean(axis=2, keepdims=True)
        return np.repeat(mean, self.out_ch, axis=2), x.shape

    def backward(self, tape: tuple[int, int, int], dy: Tensor) -> tuple[Tensor, dict[str, np.ndarray]]:
        validate(dy, "dy")
        summed = dy.sum(axis=2, keepdims=True) / self.in_ch
        return np.repeat(summed, self.in_ch, axis=2), {}
