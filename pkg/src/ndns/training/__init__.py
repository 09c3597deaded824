"""Surrogate-gradient, quantization-aware training of the SDNN denoiser."""

from .graph import ShadowParams, StreamState, forward_masks, istft_torch, mask_loss, si_snr_torch
from .loss import loss
from .radam import RAdamState, radam_step
from .trainer import (
    Batch,
    ConfigError,
    TrainConfig,
    forward_backward,
    make_batch,
    segment_loss,
    smoothed,
    train,
    validate,
)
