"""Command-line entry point: ``cliplut <command> [options]``.

Exit codes: 0 success, 1 usage/configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import torch

from . import config as config_io
from .config import RunConfig
from .data import IMAGE_EXTS, load_pairs, preprocess, quantize8, read_image, scan_dataset, write_png
from .errors import CheckpointError, ConfigError, CubeParseError, DataError
from .lut import Lut3D, apply_lut, write_cube
from .metrics import MetricReport, evaluate_pair
from .predictor import export_lut
from .training import (build_encoder, load_enhancer, load_prompts, run_prompt_stage, save_enhancer,
                       save_prompts, train_enhancer)

log = logging.getLogger("cliplut")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> RunConfig:
    cfg = config_io.load(args.config) if args.config else RunConfig()
    epochs_key = "prompt_epochs" if args.command == "train-prompts" else "enhancer_epochs"
    overrides = {"seed": "seed", "data_root": "data_root", "layout": "layout", "manifest": "manifest",
                 "split": "split", "max_steps": "max_steps", "prompt_mode": "prompt_mode", "epochs": epochs_key}
    changes = {}
    for attr, key in overrides.items():
        val = getattr(args, attr, None)
        if val is not None:
            changes[key] = str(val) if isinstance(val, Path) else val
    return cfg.replace(**changes)


def _load_dataset(cfg: RunConfig):
    if not cfg.data_root:
        raise ConfigError("no dataset given (set data_root or pass --data-root)")
    ds = scan_dataset(cfg.data_root, cfg.layout, cfg.split, cfg.manifest or None)
    for w in ds.warnings:
        print(f"warning: {w}", file=sys.stderr)
    inputs, targets = load_pairs(ds, cfg.image_size, cfg.resize)
    return ds, inputs, targets


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def _write_tsv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def cmd_train_prompts(args) -> int:
    cfg = _load_config(args)
    _, inputs, targets = _load_dataset(cfg)
    enc = build_encoder(cfg)
    prompts, hist = run_prompt_stage(cfg, inputs, targets, enc)
    out = Path(args.out)
    save_prompts(out, prompts, cfg, epoch=cfg.prompt_epochs)
    metrics = Path(args.metrics) if args.metrics else out.with_suffix(".tsv")
    rows = [(-1, hist.initial_loss, hist.initial_accuracy)]
    rows += [(i, l, a) for i, (l, a) in enumerate(zip(hist.epoch_loss, hist.epoch_accuracy))]
    _write_tsv(metrics, ("epoch", "loss", "accuracy"), rows)
    final_acc = hist.epoch_accuracy[-1] if hist.epoch_accuracy else hist.initial_accuracy
    print(f"prompts written to {out} (train accuracy {final_acc:.4f})")
    return EXIT_OK


def cmd_train_enhancer(args) -> int:
    cfg = _load_config(args)
    prompts = None
    if cfg.prompt_mode == "learned":
        if not args.prompts:
            raise ConfigError("prompt_mode 'learned' needs --prompts CHECKPOINT")
        prompts, _ = load_prompts(args.prompts)
    _, inputs, targets = _load_dataset(cfg)
    enc = build_encoder(cfg) if cfg.prompt_mode != "none" else None
    model, hist = train_enhancer(inputs, targets, cfg, prompts=prompts, enc=enc)
    out = Path(args.out)
    save_enhancer(out, model, cfg, epoch=len(hist.epochs), prompts=prompts)
    metrics = Path(args.metrics) if args.metrics else out.with_suffix(".tsv")
    _write_tsv(metrics, ("epoch", "mse", "ssim_loss", "perceptual", "total"),
               [(r["epoch"], r["mse"], r["ssim_loss"], r["perceptual"], r["total"]) for r in hist.epochs])
    print(f"model written to {out} (train PSNR {hist.initial_psnr:.2f} -> {hist.final_psnr:.2f} dB)")
    return EXIT_OK


def _list_images(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTS)


def enhance_image(model, image: torch.Tensor, size: int) -> tuple[torch.Tensor, Lut3D]:
    """Weights from the ``size``-resized image; the blended lattice is applied at full resolution."""
    lut = export_lut(preprocess(image, size), model)
    return apply_lut(lut, image.to(lut.entries.dtype)), lut


def cmd_enhance(args) -> int:
    model, cfg, _ = load_enhancer(args.model)
    in_dir, out_dir = Path(args.input_dir), Path(args.output_dir)
    if not in_dir.is_dir():
        raise DataError(f"input directory {in_dir} does not exist")
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _list_images(in_dir)
    if not files:
        print(f"warning: no images in {in_dir}", file=sys.stderr)
        return EXIT_OK
    failed = []
    for path in files:
        try:
            img = torch.from_numpy(read_image(path))
            out, _ = enhance_image(model, img, cfg.image_size)
            write_png(out_dir / f"{path.stem}.png", out)
        except DataError as exc:
            print(f"error: {exc}", file=sys.stderr)
            failed.append(path.name)
    print(f"enhanced {len(files) - len(failed)}/{len(files)} images into {out_dir}")
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    ds = scan_dataset(cfg.data_root, cfg.layout, cfg.split, cfg.manifest or None) if cfg.data_root else None
    if ds is None:
        raise ConfigError("evaluate needs --data-root (pairs directory) or a manifest")
    for w in ds.warnings:
        print(f"warning: {w}", file=sys.stderr)
    model = None
    if args.model:
        model, model_cfg, _ = load_enhancer(args.model)
    float_metrics = args.float_metrics or cfg.float_metrics
    rows = []
    for (a, b), stem in zip(ds.pairs, ds.ids):
        out = preprocess(a, cfg.image_size, cfg.resize)
        tgt = preprocess(b, cfg.image_size, cfg.resize)
        if model is not None:
            out, _ = enhance_image(model, out, model_cfg.image_size)
            if not float_metrics:
                out = torch.from_numpy(quantize8(out)).double() / 255.0
        rep = evaluate_pair(out.double(), tgt.double())
        rows.append((stem, rep))
    n = len(rows)
    mean = MetricReport(
        psnr=sum(r.psnr for _, r in rows) / n,
        ssim=sum(r.ssim for _, r in rows) / n,
        delta_e=sum(r.delta_e for _, r in rows) / n,
    )
    report = Path(args.report)
    _write_tsv(report, ("id", "psnr", "ssim", "delta_e"), [(s, r.psnr, r.ssim, r.delta_e) for s, r in rows])
    summary = Path(args.summary) if args.summary else report.with_suffix(".summary")
    with open(summary, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"count = {n}\n")
        fh.write(f"psnr = {_fmt(mean.psnr)}\n")
        fh.write(f"ssim = {_fmt(mean.ssim)}\n")
        fh.write(f"delta_e = {_fmt(mean.delta_e)}\n")
        fh.write(f"manifest_checksum = {ds.checksum}\n")
    print(f"{n} pairs: PSNR {_fmt(mean.psnr)} dB, SSIM {mean.ssim:.4f}, dE {mean.delta_e:.4f}")
    return EXIT_OK


def cmd_export_lut(args) -> int:
    model, cfg, _ = load_enhancer(args.model)
    img = torch.from_numpy(read_image(args.image))
    lut = export_lut(preprocess(img, cfg.image_size), model)
    write_cube(lut, args.out, title=f"cliplut {Path(args.image).stem}")
    print(f"wrote {lut.dim}^3 LUT to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cliplut", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", type=Path, help="flat key = value config file")
        p.add_argument("--seed", type=int)
        return p

    def data_opts(p):
        p.add_argument("--data-root", type=Path)
        p.add_argument("--layout", choices=("dirs", "manifest"))
        p.add_argument("--manifest", type=Path)
        p.add_argument("--split")

    p = common(sub.add_parser("train-prompts", help="stage 1: learn original/enhanced prompts"))
    data_opts(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--metrics", type=Path)
    p.set_defaults(func=cmd_train_prompts)

    p = common(sub.add_parser("train-enhancer", help="stage 2: train the LUT weight predictor"))
    data_opts(p)
    p.add_argument("--prompts", type=Path, help="prompt checkpoint (required in learned mode)")
    p.add_argument("--prompt-mode", choices=("learned", "random", "none"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--metrics", type=Path)
    p.set_defaults(func=cmd_train_enhancer)

    p = common(sub.add_parser("enhance", help="enhance every image in a directory"))
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--input-dir", required=True, type=Path)
    p.add_argument("--output-dir", required=True, type=Path)
    p.set_defaults(func=cmd_enhance)

    p = common(sub.add_parser("evaluate", help="PSNR / SSIM / dE over paired images"))
    data_opts(p)
    p.add_argument("--model", type=Path, help="enhance inputs with this model before scoring")
    p.add_argument("--float-metrics", action="store_true", help="skip 8-bit quantization of outputs")
    p.add_argument("--report", required=True, type=Path)
    p.add_argument("--summary", type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("export-lut", help="write the per-image blended LUT as .cube"))
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_export_lut)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error; hand the code back to callers
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CubeParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
