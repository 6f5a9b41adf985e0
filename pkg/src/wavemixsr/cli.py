"""``wavemixsr`` command line.

Exit codes: 0 success, 1 usage, 2 I/O, 3 weight-file format, 4 numeric
failure (divergence, failed gradient check).
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .errors import ParameterError, WaveMixError
from .imaging import (
    crop_to_multiple,
    degrade_bicubic,
    image_to_tensor,
    load_png,
    mean_record,
    quantize,
    save_png,
    tensor_to_image,
    write_eval_csv,
    y_channel_metrics,
)
from .model import ModelConfig, init_params, layer_table, multiply_adds, param_count
from .tensor import Tensor
from .weights import dumps, load_weights

log = logging.getLogger("wavemixsr")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_NUMERIC = 0, 1, 2, 3, 4

PARAM_BUDGET = (0.4e6, 1.0e6)
REFERENCE_PARAMS = 0.7e6
REFERENCE_MULTI_ADDS = 25.6e9


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _threads():
    """Honour WMX2_THREADS (0 or unset = library default)."""
    try:
        n = int(os.environ.get("WMX2_THREADS", "0"))
    except ValueError:
        n = 0
    if n <= 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _parse_config(text: str | None) -> ModelConfig:
    """``scale=4,embed_dim=144,depth=4,mlp_mult=2,dropout=0.3,upsample_mode=bicubic``"""
    kwargs = {}
    casts = {"scale": int, "embed_dim": int, "depth": int, "mlp_mult": float, "dropout": float, "upsample_mode": str}
    for item in filter(None, (text or "").split(",")):
        key, _, val = item.partition("=")
        key = key.strip().replace("-", "_")
        if key not in casts:
            raise ParameterError(f"unknown config key {key!r}; expected one of {sorted(casts)}")
        kwargs[key] = casts[key](val)
    return ModelConfig.build(**kwargs)


def _write_atomic(path: Path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _plot(enabled: bool, fn, *args, **kwargs):
    if not enabled:
        return
    path = fn(*args, **kwargs)
    print(f"figure: {path}")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_upscale(args) -> int:
    from .pipeline import upscale_rgb

    model = load_weights(args.weights)
    rgb = image_to_tensor(load_png(args.input))
    out = tensor_to_image(upscale_rgb(model, rgb))
    save_png(out, args.output)
    print(f"{args.input} {rgb.shape[3]}x{rgb.shape[2]} -> {args.output} {out.shape[1]}x{out.shape[0]}")
    return EXIT_OK


def cmd_degrade(args) -> int:
    img = load_png(args.input)
    x = image_to_tensor(img, rgb=False)
    x = Tensor(crop_to_multiple(x.data, args.scale))
    lr = tensor_to_image(degrade_bicubic(x, args.scale))
    save_png(lr, args.output)
    print(f"{args.input} {img.shape[1]}x{img.shape[0]} -> {args.output} {lr.shape[1]}x{lr.shape[0]}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import evaluate_dir
    from .plotting import figure_path, plot_eval_report

    if args.weights:
        model = load_weights(args.weights)
        scale = model.config.scale
    elif args.baseline:
        model, scale = None, args.scale
    else:
        print("eval: give --weights or --baseline", file=sys.stderr)
        return EXIT_USAGE
    run = evaluate_dir(args.hr_dir, model, scale, args.lr_dir, args.crop_border, args.jobs)
    if not run.records:
        print(f"eval: no readable PNG images in {args.hr_dir}", file=sys.stderr)
        return EXIT_IO
    write_eval_csv(run.records, args.report)
    for r in run.records:
        print(f"{r.image_id:<24} {r.psnr_db:8.3f} dB  {r.ssim:.4f}")
    mean = mean_record(run.records)
    base = mean_record(run.baseline)
    print(f"{'mean':<24} {mean.psnr_db:8.3f} dB  {mean.ssim:.4f}")
    if model is not None:
        print(f"{'bicubic mean':<24} {base.psnr_db:8.3f} dB  {base.ssim:.4f}")
    print(f"images: {len(run.records)}  skipped: {len(run.skipped)}  report: {args.report}")
    _plot(
        not args.no_plot,
        plot_eval_report,
        run.records,
        figure_path(args.report),
        baseline=run.baseline if model is not None else None,
    )
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import bicubic_upscale, list_pngs, upscale_rgb
    from .plotting import figure_path, plot_loss_trace
    from .training import TrainPlan, train, write_loss_csv

    paths = list_pngs(args.data_dir)
    if not paths:
        print(f"train: no PNG images in {args.data_dir}", file=sys.stderr)
        return EXIT_IO
    dataset = [image_to_tensor(load_png(p)) for p in paths]
    cfg = ModelConfig.build(
        scale=args.scale,
        embed_dim=args.embed_dim,
        depth=args.depth,
        mlp_mult=args.mlp_mult,
        dropout=args.dropout,
        upsample_mode=args.upsample,
    )
    plan = TrainPlan(
        total_steps=args.steps,
        switch_step=args.switch_step,
        batch_size=args.batch,
        patch_size=args.patch,
        scale=args.scale,
        seed=args.seed,
        lr=args.lr,
    )
    model = init_params(cfg, args.seed)
    every = max(1, args.steps // 10)

    def progress(step, loss):
        if args.verbose and (step % every == 0 or step == args.steps - 1):
            print(f"step {step:6d}  loss {loss:.6f}", flush=True)

    result = train(model, dataset, plan, on_step=progress)
    _write_atomic(Path(args.out), dumps(model))
    if result.losses:
        print(f"final loss: {result.losses[-1]:.6f} (initial {result.losses[0]:.6f})")
    print(f"parameters: {param_count(model)}")
    if args.loss_csv:
        write_loss_csv(result.losses, args.loss_csv)
        _plot(not args.no_plot and result.losses, plot_loss_trace, result.losses, figure_path(args.loss_csv), plan.switch_step)
    for p, hr in list(zip(paths, dataset))[: args.report_images]:
        hr = Tensor(crop_to_multiple(hr.data, args.scale))
        lr = quantize(degrade_bicubic(hr, args.scale))
        sr = y_channel_metrics(quantize(upscale_rgb(model, lr)), hr)
        bic = y_channel_metrics(quantize(bicubic_upscale(lr, args.scale)), hr)
        print(f"{p.name}: model {sr[0]:.3f} dB / {sr[1]:.4f}   bicubic {bic[0]:.3f} dB / {bic[1]:.4f}")
    print(f"weights: {args.out}")
    return EXIT_OK


def _model_from_args(args):
    if getattr(args, "weights", None):
        return load_weights(args.weights)
    return init_params(_parse_config(args.config), seed=0)


def cmd_bench(args) -> int:
    from .bench import benchmark, write_bench_csv
    from .plotting import figure_path, plot_bench

    model = _model_from_args(args)
    rep = benchmark(model, size=args.size, iters=args.iters, warmup=args.warmup, batch=args.batch)
    print(rep.table())
    if args.report:
        write_bench_csv(rep, args.report)
        _plot(not args.no_plot, plot_bench, rep.samples_ms, figure_path(args.report))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .training import grad_check

    report = grad_check(seed=args.seed, samples=args.samples)
    for line in report.lines():
        print(line)
    print("gradcheck:", "PASS" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_inspect(args) -> int:
    model = _model_from_args(args)
    cfg = model.config
    blk = cfg.sr2x.block
    print(
        f"scale {cfg.scale}x  stages {cfg.stages}  depth {cfg.sr2x.depth}  embed_dim {blk.embed_dim}  "
        f"mlp_mult {blk.mlp_mult:g}  dropout {blk.dropout:g}  upsample {cfg.sr2x.upsample_mode}"
    )
    if args.layers:
        for name, shape in layer_table(model):
            print(f"  {name:<36} {'x'.join(map(str, shape))}")
    n = param_count(model)
    macs = multiply_adds(cfg, args.size, args.size)
    lo, hi = PARAM_BUDGET
    flag = "" if lo <= n <= hi else f"  [outside {lo / 1e6:.1f}M-{hi / 1e6:.1f}M budget]"
    print(f"stages: {cfg.stages}")
    print(f"parameters: {n} ({n / 1e6:.3f} M; reference {REFERENCE_PARAMS / 1e6:.1f} M){flag}")
    print(
        f"multiply-adds @ {args.size}x{args.size}: {macs} ({macs / 1e9:.2f} G; "
        f"ratio to {REFERENCE_MULTI_ADDS / 1e9:.1f} G reference {macs / REFERENCE_MULTI_ADDS:.2f})"
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wavemixsr", description="WaveMixSR-V2 super-resolution")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("upscale", help="super-resolve one PNG")
    s.add_argument("--input", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_upscale)

    s = sub.add_parser("degrade", help="bicubic down-sampling of one PNG")
    s.add_argument("--input", required=True)
    s.add_argument("--scale", type=int, choices=(2, 4), required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("eval", help="Y-channel PSNR/SSIM over a directory of HR PNGs")
    s.add_argument("--hr-dir", required=True)
    s.add_argument("--weights")
    s.add_argument("--baseline", action="store_true", help="evaluate bicubic upsampling instead of a model")
    s.add_argument("--scale", type=int, choices=(2, 4), default=2, help="scale for --baseline")
    s.add_argument("--lr-dir")
    s.add_argument("--crop-border", type=int, default=0)
    s.add_argument("--report", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("train", help="train on random patches from a directory of HR PNGs")
    s.add_argument("--data-dir", required=True)
    s.add_argument("--scale", type=int, choices=(2, 4), default=2)
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--switch-step", type=int, default=None, help="AdamW -> SGD step (default: no switch)")
    s.add_argument("--batch", type=int, default=1)
    s.add_argument("--patch", type=int, default=64, help="LR patch size in pixels")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--embed-dim", type=int, default=144)
    s.add_argument("--depth", type=int, default=4)
    s.add_argument("--mlp-mult", type=float, default=2.0)
    s.add_argument("--dropout", type=float, default=0.3)
    s.add_argument("--upsample", choices=("bicubic", "bilinear"), default="bicubic")
    s.add_argument("--loss-csv")
    s.add_argument("--report-images", type=int, default=1, help="training images to score after training")
    s.add_argument("--no-plot", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("bench", help="inference latency and throughput")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--weights")
    g.add_argument("--config", help="e.g. scale=4,embed_dim=144,depth=4 (defaults otherwise)")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("--warmup", type=int, default=2)
    s.add_argument("--batch", type=int, default=1)
    s.add_argument("--report")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--samples", type=int, default=20)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("inspect", help="config, layer shapes and parameter count")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--weights")
    g.add_argument("--config")
    s.add_argument("--size", type=int, default=64, help="input size for the multiply-add estimate")
    s.add_argument("--layers", action="store_true", help="print every stored tensor")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        with _threads():
            return args.func(args)
    except ParameterError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WaveMixError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
