"""Command-line entry point: train, colorize, eval, gradcheck, synth, compare."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .colorspace import gray_of
from .data import (
    ImageDecodeError,
    center_crop_resize,
    load_directory,
    load_image,
    make_batch,
    synth_heldout,
    synth_isogray_dataset,
    write_synthetic,
)
from .models import SpecError, SpecMismatchError
from .tensor import GraphError, ShapeError
from .train import DESK_D_WIDTHS, DESK_G_WIDTHS, TrainingDivergedError, make_config, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
# test images are drawn from a stream disjoint from the training set


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _emit(lines, out=None):
    out = out or sys.stdout
    for line in lines:
        print(line, file=out)
    out.flush()


def _flatten(d: dict, prefix: str = "") -> dict:
    flat = {}
    for k, v in d.items():
        if isinstance(v, dict):
            flat.update(_flatten(v, f"{prefix}{k}."))
        else:
            flat[f"{prefix}{k}"] = v
    return flat


def _config_lines(cfg: dict) -> list[str]:
    return [f"config.{k}: {v}" for k, v in sorted(_flatten(cfg).items())]


def _noise_layers(k: int) -> list[int]:
    if not 1 <= k <= 6:
        raise UsageError(f"--noise-layers must be in 1..6, got {k}")
    return list(range(1, k + 1))


def _train_config(args, noise_k: int | None = None):
    mode = args.colorspace.upper()
    noise = _noise_layers(args.noise_layers if noise_k is None else noise_k)
    cond = [1] if args.cond_layers == "first" else list(range(1, 7))
    if not set(noise) <= set(cond):
        raise UsageError("--cond-layers first allows noise in layer 1 only (use --noise-layers 1)")
    try:
        return make_config(
            args.size, mode, noise_layers=noise, cond_layers=cond, g_widths=DESK_G_WIDTHS,
            d_widths=DESK_D_WIDTHS, z_dim=args.zdim, lam=args.lam, m=args.batch, k_d=args.kd, k_g=args.kg,
            iterations=args.iters, loss_variant=args.loss, data_seed=args.seed, noise_seed=args.seed + 1,
            init_seed=args.seed + 2)
    except (ValueError, SpecError) as exc:
        raise UsageError(str(exc)) from exc


def _dataset(args, size: int, seed: int, count: int):
    if getattr(args, "data", None):
        return load_directory(args.data, size, seed)
    return synth_isogray_dataset(count, size, seed)


def _heldout(args, size: int, seed: int, count: int):
    if getattr(args, "data", None):
        return load_directory(args.data, size, seed)
    return synth_heldout(count, size, seed)


def _test_gray(handle, n: int, mode: str):
    n = min(n, len(handle))
    batch = make_batch(handle, np.arange(n), mode)
    return batch


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .plotting import plot_losses
    from .studio import discriminator_accuracy, diversity_score, grayscale_consistency, multi_round_colorize

    cfg = _train_config(args)
    out = Path(args.out)
    _emit(_config_lines({**cfg.to_dict(), "data": args.data or f"synthetic:{args.synthetic}"}))
    dataset = _dataset(args, cfg.size, cfg.data_seed, args.synthetic)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")

    t0 = time.perf_counter()
    every = max(1, cfg.iterations // 10)

    def progress(rec):
        if rec["iter"] % every == 0 or rec["iter"] == cfg.iterations - 1:
            print(f"iter {rec['iter']}: loss_d={rec['loss_d']:.4f} loss_g={rec['loss_g']:.4f} "
                  f"d_real={rec['d_real_mean']:.3f} d_fake={rec['d_fake_mean']:.3f} l1={rec['l1_term']:.4f}",
                  file=sys.stderr, flush=True)

    result = train(cfg, dataset, out_dir=out, progress=progress)
    elapsed = time.perf_counter() - t0
    plot_losses(result.metrics, out / "losses.png")

    test = _heldout(args, cfg.size, cfg.data_seed, max(cfg.m, 16))
    batch = _test_gray(test, min(16, len(test)), cfg.mode)
    cset = multi_round_colorize(result.trainer.G, batch.gray, 4, cfg.noise_seed, cfg.mode, truth=batch.display)
    acc = discriminator_accuracy(result.trainer.G, result.trainer.D, test, cfg.mode, min(cfg.m, len(test)),
                                 cfg.noise_seed, batches=1 if args.data else 4)
    _emit([
        f"iterations: {len(result.metrics)}",
        f"seconds: {elapsed:.1f}",
        f"first_loss_d: {result.metrics[0]['loss_d']!r}",
        f"final_loss_d: {result.metrics[-1]['loss_d']!r}",
        f"final_loss_g: {result.metrics[-1]['loss_g']!r}",
        f"heldout_d_accuracy: {acc!r}",
        f"diversity_mean: {float(diversity_score(cset).mean())!r}",
        f"grayscale_consistency_max: {grayscale_consistency(cset)!r}",
        f"metrics: {out / 'metrics.csv'}",
        f"checkpoint: {result.checkpoints[-1]}",
        f"figure: {out / 'losses.png'}",
    ])
    return EXIT_OK


def _load_inputs(path: Path, size: int) -> tuple[np.ndarray, list[str]]:
    if path.is_dir():
        handle = load_directory(path, size)
        return handle.images, handle.ids
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file or directory")
    return center_crop_resize(load_image(path), size)[None], [path.stem]


def cmd_colorize(args) -> int:
    from .studio import emit_grid, multi_round_colorize

    state = load_checkpoint(args.ckpt)
    cfg = state.config
    _emit(_config_lines({**cfg.to_dict(), "checkpoint": args.ckpt, "rounds": args.rounds, "seed": args.seed,
                         "bn_mode": args.bn}))
    images, ids = _load_inputs(Path(args.input), cfg.size)
    gray = gray_of(images).astype(np.float32)
    cset = multi_round_colorize(state.generator, gray, args.rounds, args.seed, cfg.mode, bn_mode=args.bn,
                                source_ids=ids)
    emit_grid(cset, args.grid, include_truth=False)
    _emit([f"images: {cset.m}", f"rounds: {cset.k}", f"grid: {args.grid}"])
    return EXIT_OK


def cmd_eval(args) -> int:
    from .plotting import plot_consistency, plot_diversity, plot_losses
    from .studio import emit_grid, evaluate, multi_round_colorize
    from .train import read_metrics

    state = load_checkpoint(args.ckpt)
    cfg = state.config
    if args.data:
        handle = load_directory(args.data, cfg.size, cfg.data_seed)
    else:
        handle = synth_heldout(args.synthetic, cfg.size, cfg.data_seed)
    batch = _test_gray(handle, args.images, cfg.mode)
    cset = multi_round_colorize(state.generator, batch.gray, args.rounds, args.seed, cfg.mode, truth=batch.display,
                                source_ids=[handle.ids[i] for i in batch.indices])
    echo = {**cfg.to_dict(), "checkpoint": args.ckpt, "iteration": state.iteration, "rounds": args.rounds,
            "seed": args.seed, "data": args.data or f"synthetic:{args.synthetic}"}
    report = evaluate(state.generator, state.discriminator, cset, echo)
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out)
    stem = out.with_suffix("")
    figures = [
        plot_diversity(report.diversity, f"{stem}_diversity.png", labels=report.ids),
        plot_consistency(np.abs(gray_of(cset.colors) - cset.gray[:, None]), f"{stem}_consistency.png",
                         limit=2 / 255 if cfg.mode == "YUV" else None),
    ]
    emit_grid(cset, f"{stem}_grid.png")
    figures.append(Path(f"{stem}_grid.png"))
    metrics = Path(args.ckpt).parent / "metrics.csv"
    if metrics.exists():
        figures.append(plot_losses(read_metrics(metrics), f"{stem}_losses.png"))
    _emit(report.lines())
    _emit([f"report: {out}"] + [f"figure: {p}" for p in figures])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .verify import run_suite

    _emit([f"config.seeds: {args.seeds}", "config.eps: 1e-05", "config.tol_ops: 0.0001", "config.tol_end_to_end: 0.001"])
    t0 = time.perf_counter()
    reports = run_suite(seeds=tuple(range(args.seeds)), log=print)
    failed = [r for r in reports if not r.passed]
    _emit([f"checks: {len(reports)}", f"failed: {len(failed)}", f"seconds: {time.perf_counter() - t0:.1f}"])
    return EXIT_OK if not failed else EXIT_VERIFY


def cmd_synth(args) -> int:
    _emit(_config_lines({"n": args.n, "size": args.size, "seed": args.seed, "out": args.out}))
    handle = synth_isogray_dataset(args.n, args.size, args.seed)
    paths = write_synthetic(handle, args.out)
    _emit([f"images: {len(paths)}", f"manifest: {Path(args.out) / 'manifest.txt'}"])
    return EXIT_OK


def cmd_compare(args) -> int:
    from .plotting import plot_diversity
    from .studio import diversity_score, multi_round_colorize

    ka, kb = args.noise_layers
    if args.ckpt:
        states = [load_checkpoint(p) for p in args.ckpt]
        models = [(s.config, s.generator) for s in states]
        _emit([f"config.checkpoints: {list(args.ckpt)}"])
    else:
        cfgs = [_train_config(args, k) for k in (ka, kb)]
        _emit(_config_lines({"pair_a": cfgs[0].to_dict(), "pair_b": cfgs[1].to_dict(),
                             "synthetic": args.synthetic}))
        dataset = _dataset(args, args.size, cfgs[0].data_seed, args.synthetic)
        models = []
        for cfg in cfgs:
            result = train(cfg, dataset)
            models.append((cfg, result.trainer.G))
    cfg0 = models[0][0]
    test = synth_heldout(args.images, cfg0.size, cfg0.data_seed)
    scores = []
    for cfg, gen in models:
        batch = make_batch(test, np.arange(len(test)), cfg.mode)
        cset = multi_round_colorize(gen, batch.gray, args.rounds, args.seed, cfg.mode)
        scores.append(diversity_score(cset))
    labels = [f"noise_layers_{sorted(cfg.generator.noise_layers)[-1]}" for cfg, _ in models]
    lines = [f"diversity[{lab}]: {float(s.mean())!r}" for lab, s in zip(labels, scores)]
    lines.append(f"ratio: {float(scores[1].mean() / max(scores[0].mean(), 1e-12))!r}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        plot_diversity(dict(zip(labels, scores)), out, labels=test.ids, title="diversity by noise placement")
        lines.append(f"figure: {out}")
    _emit(lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_model_flags(p, size=32, iters=500, batch=64, synthetic=2000):
    p.add_argument("--data", help="folder of .png/.ppm training images (default: synthetic iso-gray set)")
    p.add_argument("--synthetic", type=int, default=synthetic, metavar="N", help="synthetic image count")
    p.add_argument("--size", type=int, default=size)
    p.add_argument("--iters", type=int, default=iters)
    p.add_argument("--batch", type=int, default=batch)
    p.add_argument("--zdim", type=int, default=100)
    p.add_argument("--kd", type=int, default=1)
    p.add_argument("--kg", type=int, default=1)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="L1 gray weight (default 10 for rgb, 0 for yuv)")
    p.add_argument("--colorspace", choices=("yuv", "rgb"), default="yuv")
    p.add_argument("--cond-layers", choices=("first", "all"), default="all")
    p.add_argument("--loss", choices=("saturating", "nonsaturating"), default="nonsaturating")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="colorgan", description="Conditional GAN colorization on a small numpy autograd engine.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a generator/discriminator pair")
    _add_model_flags(p)
    p.add_argument("--noise-layers", type=int, default=3, metavar="K", help="inject noise into layers 1..K")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("colorize", help="multi-round colorization of grayscale inputs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="image file or folder")
    p.add_argument("--rounds", type=int, default=4)
    p.add_argument("--grid", required=True, help="output PNG")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bn", choices=("batch", "eval"), default="batch",
                   help="normalization statistics at inference (batch needs >= 2 images)")
    p.set_defaults(func=cmd_colorize)

    p = sub.add_parser("eval", help="diversity, consistency and realism report with figures")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", help="folder of held-out images (default: synthetic held-out set)")
    p.add_argument("--synthetic", type=int, default=16, metavar="N")
    p.add_argument("--images", type=int, default=16, help="images per evaluation batch")
    p.add_argument("--rounds", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True, help="report path; figures are written beside it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference verification of every differentiable op")
    p.add_argument("--seeds", type=int, default=3, help="random instances per op")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic iso-gray dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compare", help="diversity of two noise placements under identical budgets")
    _add_model_flags(p, size=16, iters=300, batch=16, synthetic=512)
    p.add_argument("--noise-layers", type=int, nargs=2, default=(1, 3), metavar=("A", "B"))
    p.add_argument("--ckpt", nargs=2, metavar=("A", "B"), help="compare two trained checkpoints instead")
    p.add_argument("--images", type=int, default=16)
    p.add_argument("--rounds", type=int, default=4)
    p.add_argument("--out", help="bar chart PNG")
    p.set_defaults(func=cmd_compare)
    return parser


RUNTIME_ERRORS = (ValueError, OSError, ArithmeticError, CheckpointError, SpecMismatchError, ImageDecodeError,
                  ShapeError, GraphError, TrainingDivergedError, json.JSONDecodeError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"colorgan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as exc:
        print(f"colorgan: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
