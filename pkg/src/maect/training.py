"""Masked-reconstruction pretraining and paired denoising finetuning.

Pretraining feeds patch-masked noisy images back to themselves with both
long shortcuts disconnected, so the trunk must hallucinate hidden content;
finetuning reconnects the shortcuts and maps noisy to clean images.  Both
stages share one combined L1+SSIM objective; pretraining restricts it to the
masked region by default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint, transfer_weights
from .errors import DataError, NumericalError, ProtocolError
from .losses import LossConfig, SsimParams, combined_loss, rmse, ssim_value
from .masking import PatchMask, apply_mask, generate_mask
from .model import ModelConfig, SwinDenoiser
from .optim import Adam, LrSchedule
from .simulate import PairedSample


@dataclass(frozen=True)
class MaskSpec:
    patch_size: int = 8
    rate: float = 0.75


@dataclass
class TrainPlan:
    stage: str  # "pretrain" | "finetune"
    epochs: int = 50
    batch_size: int = 1
    schedule: LrSchedule = field(default_factory=LrSchedule)
    loss: LossConfig = field(default_factory=LossConfig)
    mask: MaskSpec = field(default_factory=MaskSpec)
    masked_loss_only: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune"):
            raise ValueError(f"unknown stage '{self.stage}'")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class LogRow:
    stage: str
    epoch: int
    iteration: int
    lr: float
    loss: float
    ssim: float | None = None
    rmse: float | None = None

    def as_csv(self) -> str:
        s = "" if self.ssim is None else f"{self.ssim:.6f}"
        r = "" if self.rmse is None else f"{self.rmse:.6f}"
        return f"{self.stage},{self.epoch},{self.iteration},{self.lr:.8g},{self.loss:.8g},{s},{r}"


LOG_HEADER = "stage,epoch,iter,lr,loss,ssim,rmse"


def _as_image_batch(images) -> np.ndarray:
    if isinstance(images, np.ndarray) and images.ndim == 2:
        return images[None]
    if isinstance(images, np.ndarray) and images.ndim == 3:
        return images
    return np.stack(list(images))


def pretrain_step(
    model: SwinDenoiser,
    ldct,
    mask: PatchMask | list[PatchMask],
    optimizer: Adam,
    loss_cfg: LossConfig | None = None,
    lr: float | None = None,
    masked_loss_only: bool = True,
) -> float:
    """One masked-reconstruction step: forward(masked(x)) vs x, Adam update.

    Refuses to run with either shortcut connected; an identity path would let
    the model copy visible pixels instead of inferring structure.
    """
    if model.shortcuts != (False, False):
        raise ProtocolError(
            f"pretraining requires both shortcuts disconnected, got {model.shortcuts}"
        )
    batch = _as_image_batch(ldct)
    masks = mask if isinstance(mask, (list, tuple)) else [mask]
    if len(masks) != batch.shape[0]:
        raise DataError(f"{batch.shape[0]} images but {len(masks)} masks")
    masked = np.stack([apply_mask(img, m) for img, m in zip(batch, masks)])
    pred = model.forward(masked[..., None].astype(model.dtype))
    pixel_mask = np.stack([m.pixel_mask() for m in masks]) if masked_loss_only else None
    loss = combined_loss(pred, batch, loss_cfg, mask=pixel_mask)
    loss.backward()
    optimizer.step(lr)
    return loss.item()


def finetune_step(
    model: SwinDenoiser,
    ldct,
    ndct,
    optimizer: Adam,
    loss_cfg: LossConfig | None = None,
    lr: float | None = None,
) -> float:
    """One supervised denoising step on paired data, full-image loss."""
    if model.shortcuts != (True, True):
        raise ProtocolError(
            f"finetuning requires both shortcuts connected, got {model.shortcuts}"
        )
    x = _as_image_batch(ldct)
    y = _as_image_batch(ndct)
    if x.shape != y.shape:
        raise DataError(f"unpaired batch: ldct {x.shape} vs ndct {y.shape}")
    pred = model.forward(x[..., None].astype(model.dtype))
    loss = combined_loss(pred, y, loss_cfg)
    loss.backward()
    optimizer.step(lr)
    return loss.item()


def evaluate_pairs(model: SwinDenoiser, pairs: list[PairedSample],
                   rmse_scale: float = 1.0) -> list[tuple[str, float, float]]:
    """Per-image (id, ssim, rmse) of the denoised output against the clean target."""
    rows = []
    for s in pairs:
        pred = model.denoise(s.ldct)
        rows.append((s.id, ssim_value(pred, s.ndct), rmse(pred, s.ndct, rmse_scale)))
    return rows


def _check_finite(loss: float) -> float:
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite training loss: {loss}")
    return loss


def _batches(order: np.ndarray, size: int):
    for i in range(0, len(order), size):
        yield order[i : i + size]


def train_pretrain(model: SwinDenoiser, images: list[np.ndarray], plan: TrainPlan,
                   log: list[LogRow] | None = None) -> list[LogRow]:
    """Run the masked-reconstruction stage; returns the appended log rows."""
    if plan.stage != "pretrain":
        raise ValueError(f"expected a pretrain plan, got stage '{plan.stage}'")
    if not images:
        raise DataError("pretraining needs at least one image")
    log = log if log is not None else []
    rng = np.random.default_rng([plan.seed, 101])
    opt = Adam(model.params, lr=plan.schedule.base_lr)
    h, w = images[0].shape
    it = 0
    for epoch in range(plan.epochs):
        order = rng.permutation(len(images))
        for chunk in _batches(order, plan.batch_size):
            lr = plan.schedule.at(it)
            masks = [
                generate_mask(h, w, plan.mask.patch_size, plan.mask.rate,
                              int(rng.integers(2**31)))
                for _ in chunk
            ]
            loss = pretrain_step(model, [images[i] for i in chunk], masks, opt,
                                 plan.loss, lr, plan.masked_loss_only)
            log.append(LogRow("pretrain", epoch, it, lr, _check_finite(loss)))
            it += 1
    return log


def train_finetune(model: SwinDenoiser, pairs: list[PairedSample], plan: TrainPlan,
                   val: list[PairedSample] | None = None,
                   log: list[LogRow] | None = None) -> list[LogRow]:
    """Run the paired denoising stage; per-epoch validation metrics land on
    the last row of each epoch."""
    if plan.stage != "finetune":
        raise ValueError(f"expected a finetune plan, got stage '{plan.stage}'")
    if not pairs:
        raise DataError("finetuning needs at least one labeled pair")
    log = log if log is not None else []
    rng = np.random.default_rng([plan.seed, 211])
    opt = Adam(model.params, lr=plan.schedule.base_lr)
    it = 0
    for epoch in range(plan.epochs):
        order = rng.permutation(len(pairs))
        for chunk in _batches(order, plan.batch_size):
            lr = plan.schedule.at(it)
            loss = finetune_step(
                model,
                [pairs[i].ldct for i in chunk],
                [pairs[i].ndct for i in chunk],
                opt, plan.loss, lr,
            )
            log.append(LogRow("finetune", epoch, it, lr, _check_finite(loss)))
            it += 1
        if val:
            rows = evaluate_pairs(model, val)
            log[-1].ssim = float(np.mean([r[1] for r in rows]))
            log[-1].rmse = float(np.mean([r[2] for r in rows]))
    return log


@dataclass
class ProtocolPlan:
    """Two-stage training recipe; mode picks the pretraining image pool."""

    mode: str  # "supervised": labeled LDCT only; "semi": labeled + unlabeled LDCT
    model: ModelConfig
    pretrain: TrainPlan
    finetune: TrainPlan
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("supervised", "semi"):
            raise ValueError(f"unknown protocol mode '{self.mode}'")


@dataclass
class ProtocolData:
    labeled: list[PairedSample]
    unlabeled: list[np.ndarray] = field(default_factory=list)
    val: list[PairedSample] = field(default_factory=list)


def run_protocol(plan: ProtocolPlan, data: ProtocolData) -> tuple[Checkpoint, list[LogRow]]:
    """Pretrain (unless the pretrain budget is zero epochs), transfer, finetune.

    Fully deterministic per plan.seed; returns the finetuned checkpoint and
    the concatenated per-iteration log.
    """
    if not data.labeled:
        raise DataError("protocol needs a non-empty labeled set for finetuning")
    log: list[LogRow] = []

    pool = [s.ldct for s in data.labeled]
    if plan.mode == "semi":
        pool = pool + list(data.unlabeled)

    fin_model = SwinDenoiser(
        dataclasses.replace(plan.model, shortcuts=(True, True)), seed=plan.seed
    )
    if plan.pretrain.epochs > 0:
        pre_model = SwinDenoiser(
            dataclasses.replace(plan.model, shortcuts=(False, False)), seed=plan.seed
        )
        pre_plan = dataclasses.replace(plan.pretrain, seed=plan.seed + plan.pretrain.seed)
        train_pretrain(pre_model, pool, pre_plan, log)
        transfer_weights(Checkpoint.from_model(pre_model), fin_model)

    fin_plan = dataclasses.replace(plan.finetune, seed=plan.seed + plan.finetune.seed)
    train_finetune(fin_model, data.labeled, fin_plan, val=data.val or None, log=log)
    return Checkpoint.from_model(fin_model), log
