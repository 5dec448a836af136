"""maect: masked-autoencoder self-pretraining for low-dose CT denoising.

Subpackages: tensor (autodiff engine), optim (Adam + LR schedule), model
(windowed-attention denoiser), masking, losses, simulate (noise model and
phantoms), training (pretrain/finetune/protocols), checkpoint, config, cli.
"""

__version__ = "0.1.0"
