"""Neuromorphic deep noise suppression toolkit.

Covers the STFT codec, an event-driven sigma-delta ReLU denoiser with ops
accounting, dataset synthesis, quantization-aware training and the
evaluation metrics with their qualification gates.
"""

__version__ = "0.1.0"

from .audio_io import AudioClip, read_wav, write_wav
from .stft_codec import Spectrogram, StftConfig, istft, magnitude_phase, stft
