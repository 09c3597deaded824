"""Training objective evaluated on plain clips and magnitude arrays."""

from __future__ import annotations

import numpy as np
import torch

from ..audio_io import AudioClip
from ..metrics import si_snr
from .graph import mask_loss


def loss(denoised: AudioClip, clean: AudioClip, mask_mags, clean_mags, lam: float = 1.0) -> float:
    """``-SI-SNR(denoised, clean) + lam * mean((mask_mags - clean_mags)**2)``.

    ``clean`` must already be delayed to line up with ``denoised``. The
    SI-SNR term is capped at 300 dB either way.
    """
    if len(denoised) != len(clean):
        raise ValueError(f"length mismatch: {len(denoised)} vs {len(clean)}")
    si_snr(denoised, clean)  # raises on a degenerate target
    to_t = lambda a: torch.tensor(np.asarray(a, dtype=np.float64))[None]  # noqa: E731
    value = mask_loss(to_t(denoised.samples), to_t(clean.samples), to_t(mask_mags), to_t(clean_mags), lam)
    return float(value)
