"""Windowed-attention image denoiser with toggleable residual shortcuts.

Architecture: a 3x3 convolution lifts the grayscale image to an embedding,
residual groups of window-attention transformer blocks (window shift
alternating 0, ws/2) refine it, each group closing with a 3x3 convolution and
an always-on group residual, and a final 3x3 convolution reconstructs one
channel.  Two parameter-free long skips can be toggled: the global
input-image skip (shortcut 1) and the trunk feature skip around all groups
(shortcut 2).  Both are disconnected during masked pretraining and
reconnected for denoising.

Token batches are Tensors laid out (batch, windows, tokens, embed_dim) with
tokens = window_size ** 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, conv2d, gather_rows, gelu, layer_norm, matmul, softmax


@dataclass
class ModelConfig:
    image_size: tuple[int, int] = (64, 64)
    window_size: int = 8
    depths: tuple[int, ...] = (4, 4, 4, 4)
    embed_dim: int = 60
    num_heads: int = 6
    mlp_ratio: int = 2
    shortcuts: tuple[bool, bool] = (True, True)
    rel_pos_bias: bool = True

    # fields that determine parameter shapes and topology; must match for
    # weight transfer between stages
    ARCH_FIELDS = ("window_size", "depths", "embed_dim", "num_heads", "mlp_ratio", "rel_pos_bias")

    def validate(self) -> None:
        h, w = self.image_size
        if h % self.window_size or w % self.window_size:
            raise ConfigError(
                f"image size {self.image_size} not divisible by window size {self.window_size}"
            )
        if self.embed_dim % self.num_heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if not self.depths or any(d < 1 for d in self.depths):
            raise ConfigError(f"depths must be non-empty with all entries >= 1, got {self.depths}")
        if self.mlp_ratio < 1:
            raise ConfigError(f"mlp_ratio must be >= 1, got {self.mlp_ratio}")
        if self.window_size < 1:
            raise ConfigError(f"window_size must be >= 1, got {self.window_size}")

    def arch_fields(self) -> dict:
        return {k: getattr(self, k) for k in self.ARCH_FIELDS}


@dataclass
class AttentionConfig:
    """Per-block attention settings; scale is exactly 1/sqrt(d_k)."""

    num_heads: int
    window_size: int
    shift: int = 0
    mask: np.ndarray | None = None  # (windows, n, n) additive logits, or None


@dataclass
class AttentionWeights:
    qkv_w: Tensor
    qkv_b: Tensor
    proj_w: Tensor
    proj_b: Tensor
    rel_bias: Tensor | None = None


@dataclass
class BlockWeights:
    norm1_g: Tensor
    norm1_b: Tensor
    attn: AttentionWeights
    norm2_g: Tensor
    norm2_b: Tensor
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor


def window_partition(x: Tensor, window_size: int) -> Tensor:
    """Rearrange (b, h, w, d) into windowed tokens (b, windows, ws*ws, d)."""
    b, h, w, d = x.shape
    ws = window_size
    if h % ws or w % ws:
        raise ShapeError(f"image dims ({h},{w}) not divisible by window size {ws}")
    t = x.reshape(b, h // ws, ws, w // ws, ws, d)
    t = t.transpose(0, 1, 3, 2, 4, 5)
    return t.reshape(b, (h // ws) * (w // ws), ws * ws, d)


def window_reverse(t: Tensor, h: int, w: int) -> Tensor:
    """Exact inverse of window_partition back to (b, h, w, d)."""
    b, nwin, n, d = t.shape
    ws = int(round(np.sqrt(n)))
    if ws * ws != n:
        raise ShapeError(f"token count {n} is not a square window")
    if nwin != (h // ws) * (w // ws) or h % ws or w % ws:
        raise ShapeError(
            f"window count {nwin} inconsistent with image ({h},{w}) at window size {ws}"
        )
    x = t.reshape(b, h // ws, w // ws, ws, ws, d)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, h, w, d)


def cyclic_shift(x: Tensor, offset: int) -> Tensor:
    """Toroidal roll of the two spatial axes by (offset, offset)."""
    if offset == 0:
        return x
    return x.roll((offset, offset), (1, 2))


def relative_position_index(window_size: int) -> np.ndarray:
    """(n, n) indices into a ((2*ws-1)**2, heads) relative-position bias table."""
    ws = window_size
    coords = np.stack(np.meshgrid(np.arange(ws), np.arange(ws), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :] + (ws - 1)
    return rel[0] * (2 * ws - 1) + rel[1]


def _partition_np(x: np.ndarray, ws: int) -> np.ndarray:
    b, h, w, d = x.shape
    t = x.reshape(b, h // ws, ws, w // ws, ws, d).transpose(0, 1, 3, 2, 4, 5)
    return t.reshape(b, (h // ws) * (w // ws), ws * ws, d)


def shifted_window_mask(h: int, w: int, window_size: int, shift: int) -> np.ndarray:
    """Additive attention mask (windows, n, n): -100 between tokens whose
    pre-shift regions differ, 0 within a region."""
    ws = window_size
    region = np.zeros((1, h, w, 1))
    bounds = (slice(0, -ws), slice(-ws, -shift), slice(-shift, None))
    tag = 0
    for hs in bounds:
        for vs in bounds:
            region[:, hs, vs, :] = tag
            tag += 1
    windows = _partition_np(region, ws)[0, :, :, 0]  # (nwin, n)
    differs = windows[:, None, :] != windows[:, :, None]
    return np.where(differs, -100.0, 0.0)


def window_attention(
    t: Tensor,
    weights: AttentionWeights,
    cfg: AttentionConfig,
    return_attn: bool = False,
):
    """Multi-head scaled dot-product attention within each window.

    Per window and head: softmax(Q K^T / sqrt(d_k) + bias + mask) V, heads
    concatenated and output-projected.  Shape is preserved.
    """
    b, nwin, n, d = t.shape
    heads = cfg.num_heads
    if d % heads:
        raise ShapeError(f"embed dim {d} not divisible by {heads} heads")
    if n != cfg.window_size**2:
        raise ShapeError(
            f"token count {n} does not match window size {cfg.window_size}"
        )
    dk = d // heads
    scale = 1.0 / np.sqrt(dk)

    qkv = matmul(t, weights.qkv_w) + weights.qkv_b
    qkv = qkv.reshape(b, nwin, n, 3, heads, dk).transpose(3, 0, 1, 4, 2, 5)
    q, k, v = qkv[0], qkv[1], qkv[2]  # each (b, nwin, heads, n, dk)

    logits = matmul(q, k.swapaxes(-1, -2)) * scale
    if weights.rel_bias is not None:
        idx = relative_position_index(cfg.window_size).reshape(-1)
        bias = gather_rows(weights.rel_bias, idx)
        bias = bias.reshape(n, n, heads).transpose(2, 0, 1).reshape(1, 1, heads, n, n)
        logits = logits + bias
    if cfg.mask is not None:
        if cfg.mask.shape != (nwin, n, n):
            raise ShapeError(
                f"attention mask shape {cfg.mask.shape} does not match ({nwin},{n},{n})"
            )
        logits = logits + Tensor(cfg.mask.reshape(1, nwin, 1, n, n).astype(t.dtype))

    attn = softmax(logits, axis=-1)
    out = matmul(attn, v)
    out = out.transpose(0, 1, 3, 2, 4).reshape(b, nwin, n, d)
    out = matmul(out, weights.proj_w) + weights.proj_b
    if return_attn:
        return out, attn.data
    return out


def swin_block(t: Tensor, weights: BlockWeights, cfg: AttentionConfig) -> Tensor:
    """One transformer block on windowed tokens:
    t' = WMHA(LN(t)) + t, then out = MLP(LN(t')) + t'."""
    attended = window_attention(
        layer_norm(t, weights.norm1_g, weights.norm1_b), weights.attn, cfg
    )
    t_mid = attended + t
    hidden = matmul(layer_norm(t_mid, weights.norm2_g, weights.norm2_b), weights.fc1_w)
    hidden = gelu(hidden + weights.fc1_b)
    out = matmul(hidden, weights.fc2_w) + weights.fc2_b
    return out + t_mid


def _trunc_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std) resampled until all values lie within 2 std."""
    out = rng.standard_normal(shape) * std
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


class SwinDenoiser:
    """The denoiser model: parameter store plus forward pass.

    Parameters live in an insertion-ordered name -> Tensor dict; enabling or
    disabling shortcuts changes neither parameter names nor shapes.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._mask_cache: dict[tuple[int, int], np.ndarray] = {}
        self._init_params(seed)

    # -- parameters -------------------------------------------------------------

    def _add(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Tensor(data.astype(self.dtype), requires_grad=True)

    def _init_params(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        cfg = self.config
        d = cfg.embed_dim
        ws = cfg.window_size
        std = 0.02

        def weight(name, shape):
            self._add(name, _trunc_normal(rng, shape, std, self.dtype))

        def zeros(name, shape):
            self._add(name, np.zeros(shape))

        def ones(name, shape):
            self._add(name, np.ones(shape))

        weight("shallow.w", (3, 3, 1, d))
        zeros("shallow.b", (d,))
        for gi, depth in enumerate(cfg.depths):
            for bj in range(depth):
                p = f"groups.{gi}.blocks.{bj}"
                ones(f"{p}.norm1.g", (d,))
                zeros(f"{p}.norm1.b", (d,))
                weight(f"{p}.attn.qkv.w", (d, 3 * d))
                zeros(f"{p}.attn.qkv.b", (3 * d,))
                weight(f"{p}.attn.proj.w", (d, d))
                zeros(f"{p}.attn.proj.b", (d,))
                if cfg.rel_pos_bias:
                    weight(f"{p}.attn.rel_bias", ((2 * ws - 1) ** 2, cfg.num_heads))
                ones(f"{p}.norm2.g", (d,))
                zeros(f"{p}.norm2.b", (d,))
                weight(f"{p}.mlp.fc1.w", (d, cfg.mlp_ratio * d))
                zeros(f"{p}.mlp.fc1.b", (cfg.mlp_ratio * d,))
                weight(f"{p}.mlp.fc2.w", (cfg.mlp_ratio * d, d))
                zeros(f"{p}.mlp.fc2.b", (d,))
            weight(f"groups.{gi}.conv.w", (3, 3, d, d))
            zeros(f"groups.{gi}.conv.b", (d,))
        weight("recon.w", (3, 3, d, 1))
        zeros("recon.b", (1,))

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_all_params(self) -> None:
        for p in self.params.values():
            p.data[...] = 0.0

    @property
    def shortcuts(self) -> tuple[bool, bool]:
        return self.config.shortcuts

    def set_shortcuts(self, image_skip: bool, trunk_skip: bool) -> None:
        self.config.shortcuts = (bool(image_skip), bool(trunk_skip))

    # -- forward -----------------------------------------------------------------

    def _block_weights(self, gi: int, bj: int) -> BlockWeights:
        p = f"groups.{gi}.blocks.{bj}"
        g = self.params
        attn = AttentionWeights(
            qkv_w=g[f"{p}.attn.qkv.w"],
            qkv_b=g[f"{p}.attn.qkv.b"],
            proj_w=g[f"{p}.attn.proj.w"],
            proj_b=g[f"{p}.attn.proj.b"],
            rel_bias=g.get(f"{p}.attn.rel_bias"),
        )
        return BlockWeights(
            norm1_g=g[f"{p}.norm1.g"],
            norm1_b=g[f"{p}.norm1.b"],
            attn=attn,
            norm2_g=g[f"{p}.norm2.g"],
            norm2_b=g[f"{p}.norm2.b"],
            fc1_w=g[f"{p}.mlp.fc1.w"],
            fc1_b=g[f"{p}.mlp.fc1.b"],
            fc2_w=g[f"{p}.mlp.fc2.w"],
            fc2_b=g[f"{p}.mlp.fc2.b"],
        )

    def _shift_mask(self, h: int, w: int) -> np.ndarray:
        key = (h, w)
        if key not in self._mask_cache:
            ws = self.config.window_size
            self._mask_cache[key] = shifted_window_mask(h, w, ws, ws // 2)
        return self._mask_cache[key]

    def forward(self, image) -> Tensor:
        """Denoise a (b, h, w, 1) image batch; output has the same shape."""
        if not isinstance(image, Tensor):
            image = Tensor(np.asarray(image, dtype=self.dtype))
        if image.ndim != 4 or image.shape[-1] != 1:
            raise ShapeError(f"expected input shape (b, h, w, 1), got {image.shape}")
        b, h, w, _ = image.shape
        cfg = self.config
        ws = cfg.window_size
        if h % ws or w % ws:
            raise ShapeError(f"input dims ({h},{w}) not divisible by window size {ws}")

        skip_image, skip_trunk = cfg.shortcuts
        shallow = conv2d(image, self.params["shallow.w"], self.params["shallow.b"], padding=1)
        t = shallow
        for gi, depth in enumerate(cfg.depths):
            group_in = t
            for bj in range(depth):
                shift = 0 if bj % 2 == 0 else ws // 2
                if shift and (h > ws or w > ws):
                    acfg = AttentionConfig(cfg.num_heads, ws, shift, self._shift_mask(h, w))
                    x = cyclic_shift(t, -shift)
                else:
                    # a single window wraps onto itself; shifting is a no-op
                    acfg = AttentionConfig(cfg.num_heads, ws, 0, None)
                    x = t
                tokens = window_partition(x, ws)
                tokens = swin_block(tokens, self._block_weights(gi, bj), acfg)
                x = window_reverse(tokens, h, w)
                t = cyclic_shift(x, acfg.shift) if acfg.shift else x
            t = conv2d(t, self.params[f"groups.{gi}.conv.w"],
                       self.params[f"groups.{gi}.conv.b"], padding=1) + group_in
        if skip_trunk:
            t = t + shallow
        out = conv2d(t, self.params["recon.w"], self.params["recon.b"], padding=1)
        if skip_image:
            out = out + image
        return out

    def denoise(self, image: np.ndarray) -> np.ndarray:
        """Run a single (h, w) image through the model, clamped to [0, 1]."""
        pred = self.forward(image[None, :, :, None].astype(self.dtype))
        return np.clip(pred.data[0, :, :, 0], 0.0, 1.0)
