"""Patch-wise random masking for masked-autoencoder pretraining."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class PatchMask:
    """Boolean grid over non-overlapping image patches; True = masked."""

    grid: np.ndarray  # (h/p, w/p) bool
    patch_size: int
    rate: float
    seed: int

    @property
    def n_masked(self) -> int:
        return int(self.grid.sum())

    def pixel_mask(self) -> np.ndarray:
        """Expand the patch grid to a per-pixel boolean mask."""
        p = self.patch_size
        return np.kron(self.grid, np.ones((p, p), dtype=bool))


def generate_mask(h: int, w: int, patch_size: int, rate: float, seed: int) -> PatchMask:
    """Mask a uniformly random subset of exactly round(rate * patches) patches.

    round() ties go to even (banker's rounding), making counts exact and
    testable.  Deterministic per seed.
    """
    if h % patch_size or w % patch_size:
        raise ShapeError(
            f"image dims ({h},{w}) not divisible by patch size {patch_size}"
        )
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"mask rate must lie in [0, 1], got {rate}")
    nh, nw = h // patch_size, w // patch_size
    total = nh * nw
    count = round(rate * total)
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(total)[:count]
    grid = np.zeros(total, dtype=bool)
    grid[chosen] = True
    return PatchMask(grid.reshape(nh, nw), patch_size, rate, seed)


def apply_mask(image: np.ndarray, mask: PatchMask, fill: float = 0.0) -> np.ndarray:
    """Zero out (or fill) masked patches; visible pixels pass through untouched."""
    pm = mask.pixel_mask()
    if image.ndim != 2 or image.shape != pm.shape:
        raise ShapeError(
            f"mask covers {pm.shape}, image has shape {image.shape}"
        )
    out = image.copy()
    out[pm] = fill
    return out
