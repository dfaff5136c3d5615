"""Command-line front end: corrupt, train, denoise, eval, gradcheck.

Exit codes: 0 success, 1 operational failure, 2 usage error. All randomness
flows from the explicit --seed flag.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from . import model as md
from . import training as tr
from .autodiff import Tensor
from .harness import (FormatError, ImagePlane, NoiseSpec, add_awgn,
                      format_metrics, load_image, psnr, save_image,
                      ssim_channels)
from .params import load_checkpoint, save_checkpoint


class OperationalError(RuntimeError):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glrdenoise",
        description="Image denoising with a trainable graph Laplacian "
                    "regularization layer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corrupt", help="add seeded Gaussian noise to an image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train the cascade on a dataset manifest")
    p.add_argument("--data", required=True, help="manifest: one image path per line")
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--out-model", required=True)
    p.add_argument("--log", help="write the per-epoch training log here")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("denoise", help="denoise an image")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="checkpoint from 'train'")
    group.add_argument("--classic", action="store_true",
                       help="untrained pipeline with a fixed global mu")
    p.add_argument("--mu", type=float, default=8.0)
    p.add_argument("--epsilon2x", type=float, default=1.0,
                   help="value of 2*eps^2 in the edge-weight kernel")
    p.add_argument("--cascades", type=int, default=2)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="print PSNR/SSIM of a test image vs a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)

    for sp in sub.choices.values():
        sp.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                        default=True, help="pin all internal ordering (default on)")
    return parser


def _cmd_corrupt(args) -> int:
    img = load_image(args.input)
    noisy = add_awgn(img.data, NoiseSpec(sigma=args.sigma, seed=args.seed))
    save_image(ImagePlane(noisy, provenance=f"awgn sigma={args.sigma}"),
               args.output)
    return 0


def _cmd_train(args) -> int:
    config = tr.parse_config(args.config) if args.config else tr.TrainingConfig()
    if args.seed:
        config.seed = args.seed
    images = tr.load_manifest(args.data)
    params, adam, log = tr.train(images, config)
    save_checkpoint(args.out_model, params, adam)
    text = "\n".join(log.lines)
    if args.log:
        Path(args.log).write_text(text + "\n")
    print(text)
    return 0


def _cmd_denoise(args) -> int:
    img = load_image(args.input)
    if args.classic:
        config = md.CascadeConfig(mode="classic", cascades=args.cascades,
                                  classic_mu=args.mu, eps2x=args.epsilon2x)
        if img.channels == 1:
            out = md.classic_cascade(img.data, config)
        else:
            chans = md.classic_cascade_color(
                [img.data[..., c] for c in range(3)], config)
            out = np.stack(chans, axis=-1)
    else:
        if img.channels != 1:
            raise OperationalError("learned-model denoising expects grayscale input")
        h, w = img.data.shape
        if h % 4 or w % 4:
            raise OperationalError(
                f"image extents {h}x{w} must be multiples of 4; pad or crop first"
            )
        params, _ = load_checkpoint(args.model)
        config = md.CascadeConfig(cascades=args.cascades,
                                  patch=params.arch.patch,
                                  exemplars=params.arch.exemplars)
        out = md.cascade_forward(Tensor(img.data), params, config).data
    save_image(ImagePlane(out, provenance="denoised"), args.output)
    return 0


def _cmd_eval(args) -> int:
    ref = load_image(args.ref)
    test = load_image(args.test)
    if ref.data.shape != test.data.shape:
        raise OperationalError(
            f"extent mismatch: {ref.data.shape} vs {test.data.shape}"
        )
    print(format_metrics(psnr(ref.data, test.data),
                         ssim_channels(ref.data, test.data)))
    return 0


def _cmd_gradcheck(args) -> int:
    report = gc.gradcheck_suite(seed=args.seed)
    print(report.render())
    return 0 if report.passed else 1


_COMMANDS = {
    "corrupt": _cmd_corrupt,
    "train": _cmd_train,
    "denoise": _cmd_denoise,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return _COMMANDS[args.command](args)
    except (OperationalError, OSError, FormatError, tr.ConfigError,
            tr.TrainingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
