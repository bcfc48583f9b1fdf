"""Command-line interface: upsample, gradcheck, bench, train-toy.

Data (CSV, report lines) goes to stdout; diagnostics go to stderr, so
output can be piped.  Exit codes: 0 success, 1 check/training did not
pass, 2 I/O or argument errors, 3 shape or channel mismatches.

Heavy imports happen inside the command handlers so that ``--threads``
can pin the BLAS pool before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys


def _fail(code: int, message: str) -> int:
    print(message, file=sys.stderr)
    return code


def _parse_int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guidedfilter",
        description="Guided filtering layer: joint upsampling, gradient checks, "
                    "benchmarks, and toy training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    up = sub.add_parser("upsample", help="joint-upsample a low-res result with a guide image")
    up.add_argument("--guide", required=True, help="high-resolution guide image (PPM/PGM/PNG)")
    up.add_argument("--low-res-output", required=True,
                    help="low-resolution result image to upsample")
    up.add_argument("--radius", type=int, default=1, help="window radius (default 1)")
    up.add_argument("--eps", type=float, default=1e-8, help="regularizer (default 1e-8)")
    up.add_argument("--variant", choices=("joint", "highres"), default="joint")
    up.add_argument("--out", required=True, help="output image path")

    gc = sub.add_parser("gradcheck", help="run the finite-difference verification suite")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-5)
    gc.add_argument("--corrupt", default=None, metavar="TERM", help=argparse.SUPPRESS)

    be = sub.add_parser("bench", help="time the layer across sizes and radii (CSV to stdout)")
    be.add_argument("--sizes", type=_parse_int_list, default=[512, 1024, 2048])
    be.add_argument("--radii", type=_parse_int_list, default=[1, 8, 32])
    be.add_argument("--repeat", type=int, default=5)
    be.add_argument("--threads", type=int, default=None,
                    help="pin BLAS threads for stable timings")

    tt = sub.add_parser("train-toy", help="train the pipeline on a synthetic operator")
    tt.add_argument("--task", required=True, choices=("affine", "smooth", "gamma"))
    tt.add_argument("--steps", type=int, default=500)
    tt.add_argument("--lr", type=float, default=1e-4)
    tt.add_argument("--seed", type=int, default=0)
    tt.add_argument("--checkpoint", required=True, help="where to write trained parameters")

    return parser


def _cmd_upsample(args) -> int:
    from . import fileio
    from .filters import bilinear_resize
    from .guided import GuidedFilterParams, forward_highres, forward_joint

    try:
        guide = fileio.load_image(args.guide)
        low = fileio.load_image(args.low_res_output)
    except (OSError, fileio.ImageFormatError) as exc:
        return _fail(2, f"error: {exc}")
    try:
        params = GuidedFilterParams(radius=args.radius, eps=args.eps)
        if guide.shape[2] != low.shape[2]:
            raise ValueError(
                f"channel mismatch: guide has {guide.shape[2]}, low-res output has {low.shape[2]}"
            )
        hi_h, hi_w = guide.shape[:2]
        if args.variant == "joint":
            guide_lo = bilinear_resize(guide, low.shape[0], low.shape[1])
            out, _ = forward_joint(guide_lo, guide, low, params)
        else:
            src_hi = bilinear_resize(low, hi_h, hi_w)
            out, _ = forward_highres(guide, src_hi, params)
    except ValueError as exc:
        return _fail(3, f"error: {exc}")
    try:
        fileio.save_image(args.out, out)
    except (OSError, fileio.ImageFormatError) as exc:
        return _fail(2, f"error: {exc}")
    return 0


def _cmd_gradcheck(args) -> int:
    from . import guided, verify

    def run():
        reports = verify.standard_suite(seed=args.seed, tolerance=args.tol)
        for report in reports:
            for line in report.lines():
                print(line)
        return 0 if all(r.passed for r in reports) else 1

    if args.corrupt is not None:
        if args.corrupt not in guided.BACKWARD_TERMS:
            return _fail(
                2,
                f"error: unknown backward term {args.corrupt!r}; "
                f"expected one of {', '.join(guided.BACKWARD_TERMS)}",
            )
        with guided.flipped_term(args.corrupt):
            return run()
    return run()


def _cmd_bench(args) -> int:
    if args.repeat < 1:
        return _fail(2, f"error: --repeat must be >= 1, got {args.repeat}")
    from . import bench

    try:
        rows = bench.run_benchmark(args.sizes, args.radii, args.repeat)
    except ValueError as exc:
        return _fail(2, f"error: {exc}")
    sys.stdout.write(bench.format_csv(rows))
    return 0


def _cmd_train_toy(args) -> int:
    from . import training

    if args.steps < 0:
        return _fail(2, f"error: --steps must be >= 0, got {args.steps}")
    try:
        cfg = training.TrainConfig(learning_rate=args.lr, steps=args.steps, seed=args.seed)
    except ValueError as exc:
        return _fail(2, f"error: {exc}")
    dataset = training.make_dataset(args.task, seed=args.seed)
    model = training.build_model(seed=args.seed)
    try:
        model, history = training.train(model, dataset, cfg)
    except training.TrainingError as exc:
        return _fail(1, f"error: {exc}")
    try:
        training.save_checkpoint(model, args.checkpoint)
    except OSError as exc:
        return _fail(2, f"error: {exc}")
    print("step,loss")
    for step, loss in enumerate(history):
        print(f"{step},{loss:.17g}")
    improved = len(history) > 1 and history[-1] <= 0.1 * history[0]
    if not improved:
        print(f"no improvement: initial {history[0]:.6g}, final {history[-1]:.6g}",
              file=sys.stderr)
    return 0 if improved else 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bench" and args.threads is not None:
        if args.threads < 1:
            return _fail(2, f"error: --threads must be >= 1, got {args.threads}")
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    handlers = {
        "upsample": _cmd_upsample,
        "gradcheck": _cmd_gradcheck,
        "bench": _cmd_bench,
        "train-toy": _cmd_train_toy,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
