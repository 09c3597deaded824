"""STFT encoder / inverse-STFT decoder used around the denoiser."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .audio_io import DEFAULT_SAMPLE_RATE, AudioClip

_NOLA_TOL = 1e-10
# The squared-window sum falls toward zero at the first and last samples.
# Dividing by it there would amplify any spectral modification by up to
# 1/w, so the divisor is floored at this fraction of its peak. Interior
# samples are untouched.
NORM_FLOOR_REL = 0.1


@dataclass(frozen=True)
class StftConfig:
    window_length: int = 512
    hop_length: int = 128
    window: str = "hann"
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.window_length <= 0 or self.hop_length <= 0:
            raise ValueError("window and hop lengths must be positive")
        if self.window_length % self.hop_length:
            raise ValueError(
                f"hop_length {self.hop_length} must divide window_length {self.window_length}"
            )
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        if not signal.check_NOLA(analysis_window(self), self.window_length,
                                 self.window_length - self.hop_length, tol=_NOLA_TOL):
            raise ValueError(f"{self.window!r} window with hop {self.hop_length} cannot be inverted")

    @property
    def n_bins(self) -> int:
        return self.window_length // 2 + 1

    @property
    def timestep_s(self) -> float:
        return self.hop_length / self.sample_rate_hz

    def n_frames(self, n_samples: int) -> int:
        return math.ceil((n_samples - self.window_length) / self.hop_length) + 1

    def frame_ready_time(self, k: int) -> float:
        """Seconds after stream start at which frame ``k`` has its full window of audio."""
        return (k * self.hop_length + self.window_length) / self.sample_rate_hz


@lru_cache(maxsize=32)
def _window(name: str, n: int) -> np.ndarray:
    w = signal.get_window(name, n, fftbins=True).astype(np.float64)
    w.setflags(write=False)
    return w


def analysis_window(cfg: StftConfig) -> np.ndarray:
    return _window(cfg.window, cfg.window_length)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Complex half-spectrum frames, shape ``(n_frames, window_length // 2 + 1)``."""

    frames: np.ndarray
    config: StftConfig
    length: int | None = None

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.complex128)
        if f.ndim != 2 or f.shape[1] != self.config.n_bins:
            raise ValueError(f"frames must have shape (T, {self.config.n_bins}), got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("spectrogram entries must be finite")
        object.__setattr__(self, "frames", f)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def with_frames(self, frames) -> "Spectrogram":
        return Spectrogram(frames, self.config, self.length)


def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Zero-pad the tail and slice into overlapping frames (no window applied)."""
    n_frames = cfg.n_frames(len(x))
    padded_len = (n_frames - 1) * cfg.hop_length + cfg.window_length
    padded = np.zeros(padded_len)
    padded[: len(x)] = x
    return sliding_window_view(padded, cfg.window_length)[:: cfg.hop_length]


def stft(clip: AudioClip, cfg: StftConfig) -> Spectrogram:
    if clip.sample_rate_hz != cfg.sample_rate_hz:
        raise ValueError(f"clip rate {clip.sample_rate_hz} Hz != codec rate {cfg.sample_rate_hz} Hz")
    if len(clip) < cfg.window_length:
        raise ValueError(f"clip of {len(clip)} samples is shorter than one window ({cfg.window_length})")
    frames = frame_signal(clip.samples, cfg) * analysis_window(cfg)
    return Spectrogram(np.fft.rfft(frames, axis=-1), cfg, len(clip))


def overlap_add(chunks: np.ndarray, hop: int) -> np.ndarray:
    n_frames, win = chunks.shape
    out = np.zeros((n_frames - 1) * hop + win)
    for k in range(n_frames):
        out[k * hop : k * hop + win] += chunks[k]
    return out


@lru_cache(maxsize=64)
def _squared_window_sum(name: str, win: int, hop: int, n_frames: int) -> np.ndarray:
    w2 = _window(name, win) ** 2
    norm = overlap_add(np.broadcast_to(w2, (n_frames, win)), hop)
    norm.setflags(write=False)
    return norm


def synthesis_gain(norm: np.ndarray) -> np.ndarray:
    """Per-sample factor that undoes the squared-window overlap, with a floored divisor."""
    return 1.0 / np.maximum(norm, NORM_FLOOR_REL * float(np.max(norm)))


def istft(spec: Spectrogram) -> AudioClip:
    """Weighted overlap-add inverse with squared-window normalization."""
    cfg = spec.config
    if spec.n_frames == 0:
        raise ValueError("cannot invert an empty spectrogram")
    w = analysis_window(cfg)
    chunks = np.fft.irfft(spec.frames, n=cfg.window_length, axis=-1) * w
    y = overlap_add(chunks, cfg.hop_length)
    norm = _squared_window_sum(cfg.window, cfg.window_length, cfg.hop_length, spec.n_frames)
    y *= synthesis_gain(norm)
    if spec.length is not None:
        y = y[: spec.length]
    return AudioClip(y, cfg.sample_rate_hz)


def magnitude_phase(spec: Spectrogram) -> tuple[np.ndarray, np.ndarray]:
    """Split frames into magnitude and phase in (-pi, pi]; zero bins get phase 0."""
    mag = np.abs(spec.frames)
    phase = np.angle(spec.frames)
    phase[phase <= -np.pi] = np.pi
    phase[mag == 0] = 0.0
    return mag, phase


def combine(magnitude: np.ndarray, phase: np.ndarray) -> np.ndarray:
    return magnitude * np.exp(1j * phase)


def encode_decode(clip: AudioClip, cfg: StftConfig) -> AudioClip:
    """Codec-only path (no denoiser): the reference for the enc+dec improvement gate."""
    return istft(stft(clip, cfg))


def frame_roundtrip(window_samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Encode one window of audio to a frame and decode it back to one hop of output.

    This is the per-timestep unit of work timed for encoder-decoder latency.
    """
    w = analysis_window(cfg)
    spectrum = np.fft.rfft(window_samples * w)
    mag = np.abs(spectrum)
    phase = np.angle(spectrum)
    chunk = np.fft.irfft(mag * np.exp(1j * phase), n=cfg.window_length) * w
    norm = _squared_window_sum(cfg.window, cfg.window_length, cfg.hop_length,
                               cfg.window_length // cfg.hop_length * 2)
    gain = synthesis_gain(norm)[cfg.window_length - cfg.hop_length : cfg.window_length]
    return chunk[: cfg.hop_length] * gain
