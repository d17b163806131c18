"""Command-line entry point: synth, train, eval, gradcheck, inspect.

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .data import FeatureFileError, ManifestError, SynthSpec, load_dataset, load_features, synth_generate
from .filterbank import absolute_params
from .model import MODEL_KINDS, LstmModel, ModelSpec, OneVsAll, PooledModel, load_checkpoint, save_checkpoint
from .train import TrainConfig, confusion_matrix, evaluate, fit, fit_one_vs_all, grad_check

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DEFAULT_LENGTH = 100
SVG_WIDTH, LANE_HEIGHT, ENVELOPE_POINTS = 800, 80, 256
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def warn(message: str) -> None:
    print(f"tafilter: warning: {message}", file=sys.stderr)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        spec = SynthSpec(
            classes=args.classes, dim=args.dim, motif_len=args.motif_len, positions=args.positions,
            jitter=args.jitter, T_range=(args.t_min, args.t_max), noise_std=args.noise_std,
            motif_scale=args.motif_scale, motif_shape=args.motif_shape,
            train_count=args.train_count, test_count=args.test_count, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    result = synth_generate(spec, args.out)
    print(result.manifest_path)
    return EXIT_OK


# -- train -------------------------------------------------------------------

def _history_writer(path):
    fh = open(path, "w")
    fh.write("iteration\tbatch_loss\teval_accuracy\n")

    def write(row):
        acc = "" if row.eval_accuracy is None else f"{row.eval_accuracy:.6f}"
        fh.write(f"{row.iteration}\t{row.batch_loss:.10g}\t{acc}\n")

    return fh, write


def cmd_train(args) -> int:
    try:
        spec = ModelSpec(kind=args.model, filters=args.filters, taps=args.taps,
                         pyramid_level=args.pyramid_level, hidden=args.hidden,
                         lstm_hidden=args.lstm_hidden, steps=args.steps)
        config = TrainConfig(iterations=args.iters, batch_size=args.batch, momentum=args.momentum,
                             learning_rate=args.lr, seed=args.seed, max_skip=args.max_skip,
                             one_vs_all=args.one_vs_all, eval_every=args.eval_every)
    except ValueError as exc:
        raise UsageError(str(exc))
    dataset = load_dataset(args.manifest)
    history_path = args.history or f"{args.out}.history.tsv"
    fh, write = _history_writer(history_path)
    with fh:
        if args.one_vs_all:
            model, _ = fit_one_vs_all(spec, dataset, config, log=write)
        else:
            eval_set = dataset.test or None
            model, _ = fit(spec, dataset, config, eval_set=eval_set, log=write)
    save_checkpoint(model, args.out, extra={"manifest": str(args.manifest), "seed": args.seed})
    print(f"train_accuracy\t{evaluate(model, dataset.train)[0]:.6f}")
    if dataset.test:
        print(f"test_accuracy\t{evaluate(model, dataset.test)[0]:.6f}")
    else:
        print("test_accuracy\tn/a")
    print(f"checkpoint\t{args.out}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------

def model_dim(model) -> int:
    if isinstance(model, OneVsAll):
        return model_dim(model.models[0])
    if isinstance(model, PooledModel):
        return model.head.in_dim
    return model.D


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.manifest)
    seqs = dataset.test if args.split == "test" else dataset.train
    if not seqs:
        raise ValueError(f"{args.split} split of {args.manifest} is empty")
    if model_dim(model) != dataset.dim:
        raise ValueError(f"checkpoint expects D={model_dim(model)}, manifest features have D={dataset.dim}")
    if dataset.classes > model.classes:
        raise ValueError(f"checkpoint has {model.classes} classes, manifest declares {dataset.classes}")
    acc, preds = evaluate(model, seqs)
    cm = confusion_matrix([s.label for s in seqs], preds, model.classes)
    print(f"accuracy\t{acc:.6f}")
    print("true\\pred\t" + "\t".join(str(c) for c in range(model.classes)))
    for c, row in enumerate(cm):
        print(f"{c}\t" + "\t".join(str(int(v)) for v in row))
    return EXIT_OK


# -- gradcheck ---------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    report = grad_check(args.model, seed=args.seed, h=args.h, tol=args.tol)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_DATA


# -- inspect -----------------------------------------------------------------

def placement_rows(model, T: int, features=None):
    """Rows ``(m, iteration, g, delta, sigma, g_rel, delta_rel)`` in frames.

    LSTM placements depend on the sequence; without ``features`` the
    initialization-time (first-iteration) placement is reported.
    """
    if isinstance(model, PooledModel):
        return []
    if isinstance(model, LstmModel):
        if features is not None:
            trace = model.forward(features)[1].trace
        else:
            trace = [np.asarray(model.bp).reshape(model.M, 3)]
    else:
        trace = [absolute_params(model.filters, T, model.relative_width)]
    N = model.N
    rows = []
    for it, params in enumerate(trace, start=1):
        for m, (g_tilde, log_delta_tilde, log_sigma_sq) in enumerate(params):
            g = 0.5 * T * (g_tilde + 1.0)
            delta = T / (N - 1) * math.exp(log_delta_tilde) if N > 1 else 0.0
            sigma = math.exp(0.5 * log_sigma_sq)
            rows.append((m, it, g, delta, sigma, g / T, (N - 1) * delta / T))
    return rows


def rows_tsv(rows) -> str:
    lines = ["m\titeration\tg\tdelta\tsigma\tg_rel\tdelta_rel"]
    for m, it, *vals in rows:
        lines.append(f"{m}\t{it}\t" + "\t".join(f"{v:.6f}" for v in vals))
    return "\n".join(lines) + "\n"


def rows_svg(rows, T: int, N: int) -> str:
    lanes = max(1, len({r[0] for r in rows}))
    height = LANE_HEIGHT * lanes
    t = np.linspace(0.0, T, ENVELOPE_POINTS)
    xs = t / T * SVG_WIDTH
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{height}" '
             f'viewBox="0 0 {SVG_WIDTH} {height}">',
             f'<rect width="{SVG_WIDTH}" height="{height}" fill="white"/>']
    for lane in range(lanes):
        base = (lane + 1) * LANE_HEIGHT - 5
        parts.append(f'<line x1="0" y1="{base}" x2="{SVG_WIDTH}" y2="{base}" stroke="#999"/>')
    for m, it, g, delta, sigma, _, _ in rows:
        base = (m + 1) * LANE_HEIGHT - 5
        color = COLORS[(it - 1) % len(COLORS)]
        for i in range(N):
            mu = g + (i - 0.5 * N + 0.5) * delta
            env = np.exp(-((t - mu) ** 2) / (2.0 * sigma * sigma))
            ys = base - env * (LANE_HEIGHT - 15)
            pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" '
                         f'data-filter="{m}" data-iteration="{it}" points="{pts}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_inspect(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if isinstance(model, OneVsAll):
        if not 0 <= args.member < model.classes:
            raise UsageError(f"--member must lie in [0, {model.classes})")
        model = model.models[args.member]
    features = None
    T = args.length
    if args.features:
        features = load_features(args.features)
        T = features.T
    elif isinstance(model, LstmModel):
        warn("LSTM placement depends on the sequence; without --features the "
             "initialization-time placement is shown")
    if T < 1:
        raise UsageError("--length must be >= 1")
    if isinstance(model, PooledModel):
        warn(f"{model.kind}-pooling models have no temporal filters")
    rows = placement_rows(model, T, features)
    text = rows_tsv(rows)
    if args.tsv:
        Path(args.tsv).write_text(text)
    if args.svg:
        Path(args.svg).write_text(rows_svg(rows, T, getattr(model, "N", 1)))
    if not args.tsv:
        sys.stdout.write(text)
    return EXIT_OK


# -- wiring ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tafilter", description="Temporal attention filters for sequence classification.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate the planted-motif benchmark")
    d = SynthSpec()
    p.add_argument("--classes", type=int, default=d.classes)
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--motif-len", type=int, default=d.motif_len)
    p.add_argument("--positions", type=_floats, default=None, help="comma-separated centres in (0,1)")
    p.add_argument("--jitter", type=float, default=d.jitter)
    p.add_argument("--t-min", type=int, default=d.T_range[0])
    p.add_argument("--t-max", type=int, default=d.T_range[1])
    p.add_argument("--noise-std", type=float, default=d.noise_std)
    p.add_argument("--motif-scale", type=float, default=d.motif_scale)
    p.add_argument("--motif-shape", choices=("smooth", "iid"), default=d.motif_shape)
    p.add_argument("--train-count", type=int, default=d.train_count)
    p.add_argument("--test-count", type=int, default=d.test_count)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a manifest")
    c = TrainConfig()
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--filters", type=int, default=None)
    p.add_argument("--taps", type=int, default=None)
    p.add_argument("--pyramid-level", type=int, default=4)
    p.add_argument("--iters", type=int, default=c.iterations)
    p.add_argument("--batch", type=int, default=c.batch_size)
    p.add_argument("--lr", type=float, default=c.learning_rate)
    p.add_argument("--momentum", type=float, default=c.momentum)
    p.add_argument("--seed", type=int, default=c.seed)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--lstm-hidden", type=int, default=128)
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--max-skip", type=int, default=c.max_skip)
    p.add_argument("--eval-every", type=int, default=c.eval_every)
    p.add_argument("--one-vs-all", action="store_true")
    p.add_argument("--history", default=None, help="TSV log path (default: <out>.history.tsv)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and confusion matrix of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare analytic and numeric gradients")
    p.add_argument("--model", choices=MODEL_KINDS, default="static")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="report learned filter placements")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--length", type=int, default=DEFAULT_LENGTH, help="nominal T without --features")
    p.add_argument("--member", type=int, default=0, help="member model of a one-vs-all checkpoint")
    p.add_argument("--tsv", default=None)
    p.add_argument("--svg", default=None)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tafilter {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FeatureFileError, ManifestError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"tafilter {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
