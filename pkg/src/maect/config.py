"""Plain-text run configuration: one `key = value` per line, `#` comments.

Unknown keys are rejected so typos fail fast, before any training starts.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .losses import LossConfig
from .model import ModelConfig
from .optim import LrSchedule
from .simulate import NoiseParams
from .training import MaskSpec


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_tuple(s: str) -> tuple[int, ...]:
    return tuple(int(x.strip()) for x in s.split(","))


# key -> (parser, default)
SCHEMA: dict = {
    # model architecture
    "image_size": (int, 64),
    "window_size": (int, 8),
    "depths": (_parse_int_tuple, (4, 4, 4, 4)),
    "embed_dim": (int, 60),
    "num_heads": (int, 6),
    "mlp_ratio": (int, 2),
    "rel_pos_bias": (_parse_bool, True),
    # noise model
    "sigma": (float, 0.02),
    "gain": (float, 0.002),
    # masking
    "mask_patch_size": (int, 8),
    "mask_rate": (float, 0.75),
    "pretrain_loss_full_image": (_parse_bool, False),
    # loss weights
    "lambda_l1": (float, 1.0),
    "lambda_ssim": (float, 0.2),
    # training
    "epochs": (int, 50),
    "batch_size": (int, 1),
    "base_lr": (float, 1.5e-4),
    "lr_decay": (float, 0.5),
    "lr_decay_every": (int, 3000),
    "seed": (int, 0),
    "val_fraction": (float, 0.0),
    # data and reporting
    "data_dir": (str, ""),
    "out_dir": (str, "out"),
    "n_pairs": (int, 50),
    "rmse_scale": (float, 1.0),
}


def default_config() -> dict:
    return {k: d for k, (_, d) in SCHEMA.items()}


def parse_config(path) -> dict:
    """Read a key-value config file and merge it over the defaults."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = default_config()
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        parser = SCHEMA[key][0]
        try:
            cfg[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for '{key}': {exc}") from exc
    return cfg


def model_config(cfg: dict, shortcuts: tuple[bool, bool] = (True, True)) -> ModelConfig:
    mc = ModelConfig(
        image_size=(cfg["image_size"], cfg["image_size"]),
        window_size=cfg["window_size"],
        depths=tuple(cfg["depths"]),
        embed_dim=cfg["embed_dim"],
        num_heads=cfg["num_heads"],
        mlp_ratio=cfg["mlp_ratio"],
        shortcuts=shortcuts,
        rel_pos_bias=cfg["rel_pos_bias"],
    )
    mc.validate()
    return mc


def noise_params(cfg: dict, seed: int) -> NoiseParams:
    return NoiseParams(sigma=cfg["sigma"], gain=cfg["gain"], seed=seed)


def lr_schedule(cfg: dict) -> LrSchedule:
    return LrSchedule(cfg["base_lr"], cfg["lr_decay"], cfg["lr_decay_every"])


def loss_config(cfg: dict) -> LossConfig:
    return LossConfig(cfg["lambda_l1"], cfg["lambda_ssim"])


def mask_spec(cfg: dict) -> MaskSpec:
    return MaskSpec(cfg["mask_patch_size"], cfg["mask_rate"])
