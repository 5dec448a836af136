"""Synthetic paired low-dose/normal-dose data.

Noise model: y = g * Poisson(x / g) + Normal(0, sigma^2), the sum of a
structure-dependent photon-statistics term (mean x, variance g * x) and
structure-independent detector noise.  Phantoms are piecewise-constant
ellipse superpositions standing in for anatomy.  Images live in [0, 1].
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError


@dataclass(frozen=True)
class NoiseParams:
    sigma: float = 0.02  # Gaussian std, normalized intensity units
    gain: float = 0.002  # Poisson scale; variance of the photon term is gain * x
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.gain <= 0:
            raise ValueError(f"gain must be > 0, got {self.gain}")


@dataclass(frozen=True)
class PairedSample:
    id: str
    ndct: np.ndarray
    ldct: np.ndarray


def add_noise(x: np.ndarray, params: NoiseParams, clamp: bool = True) -> np.ndarray:
    """Apply the mixed Poisson+Gaussian dose model to an image in [0, 1].

    E[y] = x and Var[y] = sigma^2 + gain * x before clamping; clamping to
    [0, 1 + 6 sigma] bounds outliers without disturbing measurable moments
    at the default settings.
    """
    x = np.asarray(x, dtype=np.float64)
    if (x < 0).any():
        raise ValueError("noise model requires nonnegative pixel values")
    rng = np.random.default_rng(params.seed)
    y = params.gain * rng.poisson(x / params.gain).astype(np.float64)
    if params.sigma > 0:
        y += rng.normal(0.0, params.sigma, size=x.shape)
    if clamp:
        y = np.clip(y, 0.0, 1.0 + 6.0 * params.sigma)
    return y


def make_phantom(size: int, seed: int) -> np.ndarray:
    """Piecewise-constant anatomy stand-in: a body ellipse plus 5..12 inner
    ellipses with distinct intensities.  Deterministic per seed; values in [0, 1]."""
    if size < 16:
        raise ValueError(f"phantom size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    yy = (yy - (size - 1) / 2.0) / (size / 2.0)
    xx = (xx - (size - 1) / 2.0) / (size / 2.0)
    img = np.zeros((size, size))

    def paint(cx, cy, ax, ay, theta, value):
        ct, st = np.cos(theta), np.sin(theta)
        u = (xx - cx) * ct + (yy - cy) * st
        v = -(xx - cx) * st + (yy - cy) * ct
        img[(u / ax) ** 2 + (v / ay) ** 2 <= 1.0] = value

    body_val = rng.uniform(0.25, 0.45)
    paint(0.0, 0.0, rng.uniform(0.75, 0.92), rng.uniform(0.75, 0.92),
          rng.uniform(0, np.pi), body_val)
    for _ in range(int(rng.integers(5, 13))):
        paint(
            rng.uniform(-0.45, 0.45),
            rng.uniform(-0.45, 0.45),
            rng.uniform(0.06, 0.38),
            rng.uniform(0.06, 0.38),
            rng.uniform(0, np.pi),
            rng.uniform(0.12, 0.95),
        )
    return np.clip(img, 0.0, 1.0)


def resize_area(x: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Area (block-mean) downsampling by integer factors."""
    h, w = x.shape
    if th <= 0 or tw <= 0 or h % th or w % tw:
        raise ShapeError(
            f"resize {h}x{w} -> {th}x{tw} is not an integer-factor reduction"
        )
    fh, fw = h // th, w // tw
    return x.reshape(th, fh, tw, fw).mean(axis=(1, 3))


def sample_seed(dataset_seed: int, index: int) -> int:
    """Per-sample base seed recorded in the dataset manifest."""
    return dataset_seed * 1_000_000 + 2 * index


def build_dataset(n_pairs: int, size: int, noise: NoiseParams, seed: int) -> list[PairedSample]:
    """n_pairs phantom pairs with per-sample derived seeds; deterministic."""
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be >= 1, got {n_pairs}")
    samples = []
    for i in range(n_pairs):
        base = sample_seed(seed, i)
        ndct = make_phantom(size, base)
        ldct = add_noise(ndct, NoiseParams(noise.sigma, noise.gain, base + 1))
        samples.append(PairedSample(id=f"{i:04d}", ndct=ndct, ldct=ldct))
    return samples


# -- 16-bit PGM ingestion/export ------------------------------------------------

_PGM_MAXVAL = 65535


def write_pgm(path, image: np.ndarray) -> None:
    """Write a [0, 1] image as binary 16-bit PGM (P5, maxval 65535)."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if img.ndim != 2:
        raise ShapeError(f"PGM export needs a 2-D image, got shape {img.shape}")
    data = np.round(img * _PGM_MAXVAL).astype(">u2")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{_PGM_MAXVAL}\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary 16-bit PGM into a float image normalized to [0, 1]."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval; '#' comments allowed
    tokens = []
    pos = 2
    while len(tokens) < 3:
        m = re.match(rb"(?:\s+|#[^\n]*\n)*(\d+)", raw[pos:])
        if not m:
            raise DataError(f"{path}: malformed PGM header")
        tokens.append(int(m.group(1)))
        pos += m.end()
    width, height, maxval = tokens
    if maxval != _PGM_MAXVAL:
        raise DataError(f"{path}: expected 16-bit maxval {_PGM_MAXVAL}, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * 2
    payload = raw[pos : pos + expected]
    if len(payload) != expected:
        raise DataError(f"{path}: truncated pixel payload")
    img = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    return img.astype(np.float64) / _PGM_MAXVAL
