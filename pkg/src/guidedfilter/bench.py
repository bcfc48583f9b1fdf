"""Wall-time measurement of the guided filtering layer.

Times the joint-upsampling forward (moments at half resolution, as in
the coarse-to-fine pipeline) and its backward on size x size x 3
inputs.  Medians over repeats; the interesting outputs are the ratios
across sizes (linear in pixels) and across radii (flat, thanks to the
summed-area table).
"""

from __future__ import annotations

import ctypes
import time
from dataclasses import dataclass

import numpy as np

from .guided import GuidedFilterParams, backward, forward_joint


@dataclass(frozen=True)
class BenchRow:
    size: int
    radius: int
    ms_forward: float
    ms_backward: float


def _raise_malloc_threshold() -> None:
    """Keep glibc from mmap/munmap-ing each large numpy temporary.

    Past the mmap threshold every temporary gets freshly zero-filled
    pages, which skews large-image timings by ~1.5x and has nothing to
    do with the work being measured; the trim threshold stops the heap
    from being shrunk (and refaulted) between iterations.  Best effort;
    a no-op off glibc.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(ctypes.c_int(-3), ctypes.c_int(1 << 30))  # M_MMAP_THRESHOLD
        libc.mallopt(ctypes.c_int(-1), ctypes.c_int(1 << 30))  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


def _median_ms(fn, repeat: int, n_variants: int) -> float:
    # Cycle distinct inputs across repeats so no size enjoys artificial
    # cache residency from re-running identical arrays.
    samples = []
    for i in range(repeat):
        variant = i % n_variants
        start = time.perf_counter()
        fn(variant)
        samples.append((time.perf_counter() - start) * 1e3)
    return float(np.median(samples))


def run_benchmark(sizes: list[int], radii: list[int], repeat: int,
                  seed: int = 0) -> list[BenchRow]:
    if repeat < 1:
        raise ValueError(f"repeat must be >= 1, got {repeat}")
    if any(s < 2 for s in sizes):
        raise ValueError(f"sizes must be >= 2, got {sizes}")
    _raise_malloc_threshold()
    rows = []
    rng = np.random.default_rng(seed)
    for size in sizes:
        lo = max(1, size // 2)
        n_variants = min(3, repeat)
        inputs = [
            (
                rng.uniform(0.0, 1.0, (lo, lo, 3)),
                rng.uniform(0.0, 1.0, (size, size, 3)),
                rng.uniform(0.0, 1.0, (lo, lo, 3)),
            )
            for _ in range(n_variants)
        ]
        d_out = rng.uniform(0.0, 1.0, (size, size, 3))
        for radius in radii:
            params = GuidedFilterParams(radius=radius, eps=1e-2)
            tapes = []
            for guide_lo, guide_hi, src_lo in inputs:  # warm up, keep tapes
                tapes.append(forward_joint(guide_lo, guide_hi, src_lo, params)[1])
            ms_fwd = _median_ms(
                lambda i: forward_joint(inputs[i][0], inputs[i][1], inputs[i][2], params),
                repeat, n_variants,
            )
            backward(tapes[0], d_out)  # warm up
            ms_bwd = _median_ms(lambda i: backward(tapes[i], d_out), repeat, n_variants)
            rows.append(BenchRow(size=size, radius=radius,
                                 ms_forward=ms_fwd, ms_backward=ms_bwd))
    return rows


def format_csv(rows: list[BenchRow]) -> str:
    lines = ["size,radius,ms_forward,ms_backward"]
    for r in rows:
        lines.append(f"{r.size},{r.radius},{r.ms_forward:.3f},{r.ms_backward:.3f}")
    return "\n".join(lines) + "\n"
