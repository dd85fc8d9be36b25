"""Command-line front end.

Exit codes: 0 success, 1 other failure (training, file format), 2 usage or
invalid input, 3 solver divergence, 4 attack precondition, 5 evaluation shape
mismatch.

Tensor files hold either one sample or a batch. Samples are vectors ``(d,)``
or images ``(C, H, W)``, so a file with an even number of axes is a batch.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attack import AttackConfig, topk_attack
from .errors import (
    DivergenceError,
    FormatError,
    InvalidInputError,
    MoreauGradError,
    PreconditionError,
    TrainingFailedError,
)
from .fileio import load_tensor, save_heatmap, save_tensor, write_manifest
from .interpreters import METHODS, make_interpreter
from .metrics import default_k, evaluate_pairs
from .model import ARCHITECTURES, DATASETS, load_weights, make_dataset, save_weights, train_toy
from .numerics import derive_rng, make_rng

log = logging.getLogger("moreaugrad")

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_DIVERGENCE = 3
EXIT_PRECONDITION = 4
EXIT_MISMATCH = 5


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _manifest(args, outputs):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    return {
        "command": args.command,
        "tool_version": __version__,
        "seed": getattr(args, "seed", None),
        "config": config,
        "outputs": outputs,
    }


def _as_batch(x, input_shape):
    if x.shape == tuple(input_shape):
        return x[None], False
    if x.shape[1:] == tuple(input_shape):
        return x, True
    raise CommandError(
        f"input tensor shape {x.shape} does not match model input {tuple(input_shape)}", EXIT_USAGE
    )


def _interpreter_from(args, input_shape):
    return make_interpreter(
        args.method,
        input_shape,
        rho=args.rho,
        eta=args.eta,
        gamma=args.gamma,
        iterations=args.iters,
        tolerance=args.tol,
        regularized=args.regularized,
        sigma=args.sigma,
        noise_samples=args.noise_samples,
        group_block=args.group_block,
        ig_steps=args.ig_steps,
        sg_sigma=args.sg_sigma,
        sg_samples=args.sg_samples,
    )


def _classes(model, xb, requested):
    if requested is not None:
        return np.full(xb.shape[0], requested)
    return np.asarray(model.predict(xb))


def cmd_train_toy(args):
    try:
        model = train_toy(args.dataset, args.arch, make_rng(args.seed), epochs=args.epochs, lr=args.lr)
    except TrainingFailedError as exc:
        raise CommandError(str(exc), EXIT_FAILURE) from None
    save_weights(model, args.out)
    write_manifest(f"{args.out}.json", _manifest(args, {"weights": args.out}))
    print(f"held-out accuracy {model.meta['held_out_accuracy']:.4f}; wrote {args.out}")


def cmd_make_inputs(args):
    x, y = make_dataset(args.dataset, make_rng(args.seed), args.count)
    if args.model:
        model = load_weights(args.model)
        keep = np.asarray(model.predict(x)) == y
        x, y = x[keep], y[keep]
    save_tensor(args.out, x)
    write_manifest(f"{args.out}.json", _manifest(args, {"inputs": args.out, "labels": y.tolist()}))
    print(f"wrote {len(x)} inputs to {args.out}")


def cmd_interpret(args):
    model = load_weights(args.model)
    xb, batched = _as_batch(load_tensor(args.input), model.input_shape)
    interp = _interpreter_from(args, model.input_shape)
    classes = _classes(model, xb, args.cls)
    maps = np.stack([
        interp(model, xi, int(ci), rng=derive_rng(args.seed, i))
        for i, (xi, ci) in enumerate(zip(xb, classes))
    ])
    for i, m in enumerate(maps):
        if not np.any(m):
            print(f"warning: saliency map {i} is identically zero", file=sys.stderr)
    out = maps if batched else maps[0]
    heatmap = args.heatmap or str(Path(args.out).with_suffix(".pgm"))
    save_tensor(args.out, out)
    save_heatmap(heatmap, out, batched)
    write_manifest(
        f"{args.out}.json",
        _manifest(args, {"saliency": args.out, "heatmap": heatmap, "classes": classes.tolist()}),
    )


def cmd_attack(args):
    model = load_weights(args.model)
    xb, batched = _as_batch(load_tensor(args.input), model.input_shape)
    interp = _interpreter_from(args, model.input_shape)
    classes = _classes(model, xb, args.cls)
    k = args.topk if args.topk is not None else default_k(model.input_shape)
    cfg = AttackConfig(args.epsilon, k, steps=args.steps, step_size=args.step_size,
                       directions=args.directions)
    adv, summary = [], []
    for i, (xi, ci) in enumerate(zip(xb, classes)):
        try:
            res = topk_attack(model, interp, xi, int(ci), cfg, derive_rng(args.seed, i))
        except PreconditionError as exc:
            raise CommandError(f"sample {i}: {exc}", EXIT_PRECONDITION) from None
        adv.append(res.x_adv)
        summary.append({"delta_norm": res.delta_norm, "prediction_preserved": res.prediction_preserved})
        print(f"sample {i}: delta_norm={res.delta_norm:.6f} "
              f"prediction_preserved={str(res.prediction_preserved).lower()}")
    adv = np.stack(adv)
    save_tensor(args.out, adv if batched else adv[0])
    write_manifest(f"{args.out}.json", _manifest(args, {"adversarial": args.out, "results": summary}))


def cmd_evaluate(args):
    clean = load_tensor(args.clean)
    attacked = load_tensor(args.attacked)
    if clean.shape != attacked.shape:
        raise CommandError(
            f"clean maps {clean.shape} and attacked maps {attacked.shape} differ", EXIT_MISMATCH
        )
    if clean.ndim % 2 == 1:
        clean, attacked = clean[None], attacked[None]
    report = evaluate_pairs(clean, attacked, args.method, args.epsilon, args.topk)
    report.write_csv(args.report)
    write_manifest(f"{args.report}.json", _manifest(args, {"report": args.report, "k": report.k}))
    sys.stdout.write(report.to_csv())


def _add_interpreter_flags(p):
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=None,
                   help="sparsity weight (default 0.005 sparse, 0.05 group-sparse)")
    p.add_argument("--gamma", type=float, default=None, help="step size (default rho/2)")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=None, help="update-norm tolerance (default 1e-6*sqrt(d))")
    p.add_argument("--regularized", action="store_true", help="Gaussian-smoothed inner gradients")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--noise-samples", type=int, default=1)
    p.add_argument("--group-block", type=int, default=None,
                   help="group tile size (default 16, or half the side of small images)")
    p.add_argument("--ig-steps", type=int, default=50)
    p.add_argument("--sg-sigma", type=float, default=0.05)
    p.add_argument("--sg-samples", type=int, default=50)
    p.add_argument("--class", dest="cls", type=int, default=None,
                   help="explained class (default: model prediction)")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="moreaugrad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="train a fixture classifier")
    p.add_argument("--dataset", required=True, choices=sorted(DATASETS))
    p.add_argument("--arch", required=True, choices=ARCHITECTURES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("make-inputs", help="sample inputs from a built-in dataset")
    p.add_argument("--dataset", required=True, choices=sorted(DATASETS))
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", help="keep only samples this model classifies correctly")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_inputs)

    p = sub.add_parser("interpret", help="compute saliency maps")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--heatmap", help="PGM path (default: --out with .pgm suffix)")
    _add_interpreter_flags(p)
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("attack", help="top-k interpretation attack")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--topk", type=int, default=None, help="salient set size (default 10%% of pixels)")
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--directions", type=int, default=20)
    _add_interpreter_flags(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="robustness metrics for clean/attacked map pairs")
    p.add_argument("--clean", required=True)
    p.add_argument("--attacked", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--method", default="")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--topk", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DivergenceError as exc:
        print(f"error: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, MoreauGradError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
