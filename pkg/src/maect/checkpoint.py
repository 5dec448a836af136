"""Binary checkpoint format and pretrain -> finetune weight transfer.

Layout (all integers little-endian):
  magic "MAECT1" | format version u16 | config block u32 length + UTF-8
  key-value text | tensor count u32 | per tensor: name (u16 length + UTF-8),
  rank u8, dims u32 each, payload 32-bit little-endian floats.

save(load(path)) is byte-identical: the config text is canonicalized (sorted
keys, one "key = value" line each) and tensor order is preserved.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .model import ModelConfig, SwinDenoiser

MAGIC = b"MAECT1"
FORMAT_VERSION = 1


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_to_header(cfg: ModelConfig) -> dict[str, str]:
    return {
        "image_size": _fmt_value(cfg.image_size),
        "window_size": _fmt_value(cfg.window_size),
        "depths": _fmt_value(cfg.depths),
        "embed_dim": _fmt_value(cfg.embed_dim),
        "num_heads": _fmt_value(cfg.num_heads),
        "mlp_ratio": _fmt_value(cfg.mlp_ratio),
        "rel_pos_bias": _fmt_value(cfg.rel_pos_bias),
        "shortcuts": _fmt_value(cfg.shortcuts),
    }


def header_to_config(header: dict[str, str]) -> ModelConfig:
    def ints(key):
        return tuple(int(x) for x in header[key].split(","))

    def flag(s):
        return s.strip() == "true"

    try:
        return ModelConfig(
            image_size=ints("image_size"),
            window_size=int(header["window_size"]),
            depths=ints("depths"),
            embed_dim=int(header["embed_dim"]),
            num_heads=int(header["num_heads"]),
            mlp_ratio=int(header["mlp_ratio"]),
            shortcuts=tuple(flag(x) for x in header["shortcuts"].split(",")),
            rel_pos_bias=flag(header["rel_pos_bias"]),
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"checkpoint header is missing or malformed: {exc}") from exc


@dataclass
class Checkpoint:
    """Named-tensor store plus the model config needed to rebuild it."""

    header: dict[str, str]
    tensors: dict[str, np.ndarray]  # name -> float32 array, insertion-ordered

    @staticmethod
    def from_model(model: SwinDenoiser) -> "Checkpoint":
        tensors = {
            name: np.ascontiguousarray(p.data, dtype="<f4")
            for name, p in model.params.items()
        }
        return Checkpoint(config_to_header(model.config), tensors)

    def config(self) -> ModelConfig:
        return header_to_config(self.header)

    def build_model(self, dtype=np.float32) -> SwinDenoiser:
        """Instantiate a model with this checkpoint's config and weights."""
        model = SwinDenoiser(self.config(), seed=0, dtype=dtype)
        _copy_tensors(self, model)
        return model


def _header_bytes(header: dict[str, str]) -> bytes:
    lines = "".join(f"{k} = {header[k]}\n" for k in sorted(header))
    return lines.encode("utf-8")


def save(path, ckpt: Checkpoint) -> None:
    blob = _header_bytes(ckpt.header)
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<I", len(blob)), blob,
             struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:6] != MAGIC:
        raise DataError(f"{path}: bad checkpoint magic {raw[:6]!r}")
    (version,) = struct.unpack_from("<H", raw, 6)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, 8)
    pos = 12
    header: dict[str, str] = {}
    for line in raw[pos : pos + cfg_len].decode("utf-8").splitlines():
        key, _, value = line.partition(" = ")
        header[key] = value
    pos += cfg_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        rank = raw[pos]
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(dims)
        pos += 4 * size
        tensors[name] = arr.copy()
    if pos != len(raw):
        raise DataError(f"{path}: {len(raw) - pos} trailing bytes after tensor payload")
    return Checkpoint(header, tensors)


def _copy_tensors(ckpt: Checkpoint, model: SwinDenoiser) -> None:
    missing = [n for n in model.params if n not in ckpt.tensors]
    extra = [n for n in ckpt.tensors if n not in model.params]
    if missing or extra:
        raise DataError(
            f"checkpoint/model parameter sets differ; missing from checkpoint: "
            f"{missing}; unused in model: {extra}"
        )
    for name, p in model.params.items():
        stored = ckpt.tensors[name]
        if stored.shape != p.data.shape:
            raise DataError(
                f"parameter '{name}' shape mismatch: checkpoint {stored.shape} "
                f"vs model {p.data.shape}"
            )
        p.data = stored.astype(model.dtype)


def transfer_weights(ckpt: Checkpoint, model: SwinDenoiser) -> SwinDenoiser:
    """Load pretrained weights into a finetuning model and reconnect shortcuts.

    Architecture fields must agree exactly; shortcut flags and image size may
    differ between stages (shortcuts are parameter-free).
    """
    src = ckpt.config().arch_fields()
    dst = model.config.arch_fields()
    diffs = {k: (src[k], dst[k]) for k in src if src[k] != dst[k]}
    if diffs:
        raise ConfigError(
            "checkpoint architecture does not match model: "
            + ", ".join(f"{k}: checkpoint={a} model={b}" for k, (a, b) in diffs.items())
        )
    _copy_tensors(ckpt, model)
    model.set_shortcuts(True, True)
    return model
