"""Command-line entry point: simulate | pretrain | finetune | eval | denoise.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure (non-finite loss aborts the run).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import config as cfg_io
from .errors import ConfigError, DataError, MaectError, NumericalError
from .model import SwinDenoiser
from .simulate import PairedSample, build_dataset, read_pgm, sample_seed, write_pgm
from .training import (
    LOG_HEADER,
    TrainPlan,
    evaluate_pairs,
    train_finetune,
    train_pretrain,
)


def _write_log(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write(LOG_HEADER + "\n")
        for row in rows:
            fh.write(row.as_csv() + "\n")


def _require_dir(path_str: str, what: str) -> Path:
    if not path_str:
        raise ConfigError(f"{what} requires data_dir to be set in the config")
    path = Path(path_str)
    if not path.is_dir():
        raise DataError(f"{what}: directory not found: {path}")
    return path


def _load_ldct_images(data_dir: Path) -> list[tuple[str, np.ndarray]]:
    files = sorted(data_dir.glob("*_ldct.pgm"))
    if not files:
        raise DataError(f"no *_ldct.pgm images found in {data_dir}")
    return [(f.name[: -len("_ldct.pgm")], read_pgm(f)) for f in files]


def _load_pairs(data_dir: Path) -> list[PairedSample]:
    pairs = []
    for sample_id, ldct in _load_ldct_images(data_dir):
        ndct_path = data_dir / f"{sample_id}_ndct.pgm"
        if not ndct_path.is_file():
            raise DataError(f"unpaired sample '{sample_id}': missing {ndct_path}")
        pairs.append(PairedSample(sample_id, read_pgm(ndct_path), ldct))
    return pairs


def _split_val(pairs: list[PairedSample], fraction: float):
    n_val = int(round(len(pairs) * fraction))
    if n_val == 0:
        return pairs, []
    if n_val >= len(pairs):
        raise ConfigError(f"val_fraction {fraction} leaves no training pairs")
    return pairs[:-n_val], pairs[-n_val:]


def _out_path(args, cfg, default_name: str) -> Path:
    out = Path(args.out) if args.out else Path(cfg["out_dir"]) / default_name
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = cfg_io.parse_config(args.config)
    seed = args.seed if args.seed is not None else cfg["seed"]
    out_dir = Path(args.out) if args.out else Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    noise = cfg_io.noise_params(cfg, seed)
    samples = build_dataset(cfg["n_pairs"], cfg["image_size"], noise, seed)
    with open(out_dir / "manifest.csv", "w") as fh:
        fh.write("id,seed,sigma,gain\n")
        for i, s in enumerate(samples):
            write_pgm(out_dir / f"{s.id}_ndct.pgm", s.ndct)
            write_pgm(out_dir / f"{s.id}_ldct.pgm", s.ldct)
            fh.write(f"{s.id},{sample_seed(seed, i)},{noise.sigma:g},{noise.gain:g}\n")
    print(f"wrote {len(samples)} pairs to {out_dir}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = cfg_io.parse_config(args.config)
    seed = args.seed if args.seed is not None else cfg["seed"]
    data_dir = _require_dir(cfg["data_dir"], "pretrain")
    images = [img for _, img in _load_ldct_images(data_dir)]
    out = _out_path(args, cfg, "pretrain.ckpt")

    model = SwinDenoiser(cfg_io.model_config(cfg, shortcuts=(False, False)), seed=seed)
    plan = TrainPlan(
        stage="pretrain",
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        schedule=cfg_io.lr_schedule(cfg),
        loss=cfg_io.loss_config(cfg),
        mask=cfg_io.mask_spec(cfg),
        masked_loss_only=not cfg["pretrain_loss_full_image"],
        seed=seed,
    )
    log = train_pretrain(model, images, plan)
    ckpt_io.save(out, ckpt_io.Checkpoint.from_model(model))
    _write_log(f"{out}.log.csv", log)
    print(f"pretrained on {len(images)} images; checkpoint: {out}")
    return 0


def cmd_finetune(args) -> int:
    cfg = cfg_io.parse_config(args.config)
    seed = args.seed if args.seed is not None else cfg["seed"]
    data_dir = _require_dir(cfg["data_dir"], "finetune")
    pairs = _load_pairs(data_dir)
    train_pairs, val_pairs = _split_val(pairs, cfg["val_fraction"])
    if not train_pairs:
        raise DataError("finetune training set is empty")
    out = _out_path(args, cfg, "finetune.ckpt")

    model = SwinDenoiser(cfg_io.model_config(cfg, shortcuts=(True, True)), seed=seed)
    if args.init:
        ckpt = ckpt_io.load(args.init)
        ckpt_io.transfer_weights(ckpt, model)  # raises ConfigError before training
    plan = TrainPlan(
        stage="finetune",
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        schedule=cfg_io.lr_schedule(cfg),
        loss=cfg_io.loss_config(cfg),
        seed=seed,
    )
    log = train_finetune(model, train_pairs, plan, val=val_pairs or None)
    ckpt_io.save(out, ckpt_io.Checkpoint.from_model(model))
    _write_log(f"{out}.log.csv", log)
    init_note = f" (init: {args.init})" if args.init else " (random init)"
    print(f"finetuned on {len(train_pairs)} pairs{init_note}; checkpoint: {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = cfg_io.parse_config(args.config)
    if not args.init:
        raise ConfigError("eval requires --init CHECKPOINT")
    data_dir = _require_dir(cfg["data_dir"], "eval")
    pairs = _load_pairs(data_dir)
    model = ckpt_io.load(args.init).build_model()
    scale = cfg["rmse_scale"]
    rows = evaluate_pairs(model, pairs, rmse_scale=scale)
    out = _out_path(args, cfg, "eval.csv")

    ssims = np.array([r[1] for r in rows])
    rmses = np.array([r[2] for r in rows])
    rmse_col = "rmse" if scale == 1.0 else f"rmse(x{scale:g})"
    summary = (
        f"summary,{ssims.mean():.4f}±{ssims.std():.4f},"
        f"{rmses.mean():.4f}±{rmses.std():.4f}"
    )
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(f"id,ssim,{rmse_col}\n")
        for rid, s, r in rows:
            fh.write(f"{rid},{s:.6f},{r:.6f}\n")
        fh.write(summary + "\n")
    print(summary)
    return 0


def cmd_denoise(args) -> int:
    if not args.init:
        raise ConfigError("denoise requires --init CHECKPOINT")
    model = ckpt_io.load(args.init).build_model()
    image = read_pgm(args.image)
    ws = model.config.window_size
    h, w = image.shape
    if h % ws or w % ws:
        raise DataError(
            f"input image {h}x{w} must have dimensions divisible by the "
            f"model window size {ws}"
        )
    if not args.out:
        raise ConfigError("denoise requires --out OUTPUT.pgm")
    write_pgm(args.out, model.denoise(image))
    print(f"denoised {args.image} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maect",
        description="MAE self-pretraining and finetuning for low-dose CT denoising",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_config=True, image_arg=False):
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--init", default=None, help="input checkpoint path")
        p.add_argument("--out", default=None, help="output path")
        if image_arg:
            p.add_argument("image", help="input 16-bit PGM image")
        return p

    add("simulate", "generate paired synthetic LDCT/NDCT data")
    add("pretrain", "masked self-pretraining on LDCT images")
    add("finetune", "paired denoising training (optionally from --init)")
    add("eval", "per-image and summary SSIM/RMSE report for a checkpoint")
    add("denoise", "denoise one PGM image with a checkpoint", needs_config=False,
        image_arg=True)
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "denoise": cmd_denoise,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors; usage maps to 1
        return 0 if exc.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except MaectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
