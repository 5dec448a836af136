"""Differentiable L1 and SSIM training losses and evaluation metrics.

The L1 term targets structure-independent (Gaussian-like) noise, the SSIM
term preserves local contrast against signal-dependent (Poisson-like) noise.
All loss functions return scalar Tensors attached to the gradient tape; the
*_value helpers return plain floats for evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, conv2d


@dataclass
class SsimParams:
    """Gaussian-window SSIM constants (Wang et al. defaults)."""

    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0
    restrict_mask: np.ndarray | None = None  # pixel mask; windows must lie inside

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2


@dataclass
class LossConfig:
    """combined = lambda_l1 * L1 + lambda_ssim * (1 - SSIM)."""

    lambda_l1: float = 1.0
    lambda_ssim: float = 0.2

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.lambda_ssim < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda_l1 == 0 and self.lambda_ssim == 0:
            raise ValueError("at least one loss weight must be positive")


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """2-D Gaussian window normalized to sum 1."""
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _as_batch(x) -> Tensor:
    """Coerce (h,w), (b,h,w) or (b,h,w,1) array/Tensor to a (b,h,w,1) Tensor."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float64))
    if x.ndim == 2:
        return x.reshape(1, *x.shape, 1)
    if x.ndim == 3:
        return x.reshape(*x.shape, 1)
    if x.ndim == 4 and x.shape[-1] == 1:
        return x
    raise ShapeError(f"expected image of shape (h,w), (b,h,w) or (b,h,w,1), got {x.shape}")


def _mask_batch(mask: np.ndarray, shape: tuple) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.ndim == 2:
        m = m[None]
    if m.shape != shape[:3]:
        raise ShapeError(f"mask shape {mask.shape} does not match images {shape}")
    return m


def l1_loss(a, b, mask: np.ndarray | None = None) -> Tensor:
    """Mean absolute difference, optionally over mask-selected pixels only.

    An empty selection is defined as loss 0 (the graph is kept so a backward
    pass still reaches the inputs with zero gradients).
    """
    a = _as_batch(a)
    b = _as_batch(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = (a - b).abs()
    if mask is None:
        return diff.mean()
    m = _mask_batch(mask, a.shape)
    count = int(m.sum())
    weights = m[..., None].astype(a.dtype)
    return (diff * Tensor(weights)).sum() / float(max(count, 1))


def ssim(a, b, params: SsimParams | None = None, mask: np.ndarray | None = None) -> Tensor:
    """Mean structural similarity over Gaussian windows; differentiable.

    Local means/variances/covariance come from a valid-mode Gaussian
    convolution, so the map has (h - ws + 1, w - ws + 1) entries.  With a
    restriction mask, only map positions whose window lies entirely inside
    the mask contribute; if none do, the result is defined as 1.
    """
    p = params or SsimParams()
    if mask is None:
        mask = p.restrict_mask
    a = _as_batch(a)
    b = _as_batch(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    _, h, w, _ = a.shape
    k = p.window_size
    if h < k or w < k:
        raise ShapeError(f"image ({h},{w}) smaller than SSIM window {k}")

    kernel = Tensor(gaussian_window(k, p.window_sigma).astype(a.dtype).reshape(k, k, 1, 1))
    mu_a = conv2d(a, kernel)
    mu_b = conv2d(b, kernel)
    s_aa = conv2d(a * a, kernel) - mu_a * mu_a
    s_bb = conv2d(b * b, kernel) - mu_b * mu_b
    s_ab = conv2d(a * b, kernel) - mu_a * mu_b
    c1, c2 = p.c1, p.c2
    num = (mu_a * mu_b * 2.0 + c1) * (s_ab * 2.0 + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    smap = num / den

    if mask is None:
        return smap.mean()
    m = _mask_batch(mask, a.shape).astype(np.float64)
    # windows fully inside the mask: box-sum over the window support equals k*k
    box = np.ones((k, k, 1, 1))
    cover = conv2d(Tensor(m[..., None]), Tensor(box)).data
    valid = cover > (k * k - 0.5)
    count = int(valid.sum())
    weights = Tensor(valid.astype(a.dtype))
    return (smap * weights).sum() / float(max(count, 1)) + (0.0 if count else 1.0)


def rmse(a: np.ndarray, b: np.ndarray, scale: float = 1.0) -> float:
    """Root mean square error, reported in the caller's intensity units."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)) * scale)


def l1_value(a: np.ndarray, b: np.ndarray) -> float:
    return l1_loss(Tensor.constant(np.asarray(a)), Tensor.constant(np.asarray(b))).item()


def ssim_value(a: np.ndarray, b: np.ndarray, params: SsimParams | None = None) -> float:
    return ssim(Tensor.constant(np.asarray(a)), Tensor.constant(np.asarray(b)), params).item()


def combined_loss(pred, target, cfg: LossConfig | None = None,
                  mask: np.ndarray | None = None,
                  ssim_params: SsimParams | None = None) -> Tensor:
    """Weighted L1 + (1 - SSIM); gradient flows to pred only."""
    cfg = cfg or LossConfig()
    pred = _as_batch(pred)
    tdata = target.data if isinstance(target, Tensor) else np.asarray(target)
    target = _as_batch(Tensor(tdata.astype(pred.dtype)))
    loss = None
    if cfg.lambda_l1:
        loss = l1_loss(pred, target, mask) * cfg.lambda_l1
    if cfg.lambda_ssim:
        term = (1.0 - ssim(pred, target, ssim_params, mask)) * cfg.lambda_ssim
        loss = term if loss is None else loss + term
    return loss
