"""Synthetic speech-like and noise sources for desk-scale runs without a real corpus.

The "speech" is a chain of voiced syllables (harmonic stacks under moving
formant envelopes with a pitch contour) mixed with short fricative bursts
and pauses. It is not speech, but it has the spectro-temporal structure a
mask estimator can learn to separate from stationary and hum-like noise.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import signal

from .audio_io import AudioClip, write_wav

NOISE_KINDS = ("white", "pink", "brown", "hum", "babble", "modulated")


def _formant_gain(freqs: np.ndarray, formants, bandwidths) -> np.ndarray:
    g = np.zeros_like(freqs)
    for f, bw in zip(formants, bandwidths):
        g += 1.0 / (1.0 + ((freqs - f) / bw) ** 2)
    return g


def speech_like(duration_s: float, rng: np.random.Generator, sample_rate_hz: int = 16000) -> np.ndarray:
    n = int(duration_s * sample_rate_hz)
    out = np.zeros(n)
    t0 = 0
    base_f0 = rng.uniform(90, 230)
    while t0 < n:
        kind = rng.choice(["voiced", "voiced", "voiced", "fricative", "pause"])
        if kind == "pause":
            t0 += int(rng.uniform(0.05, 0.25) * sample_rate_hz)
            continue
        seg = int(rng.uniform(0.08, 0.30) * sample_rate_hz)
        seg = min(seg, n - t0)
        if seg <= 16:
            break
        t = np.arange(seg) / sample_rate_hz
        env = np.sin(np.pi * np.arange(seg) / seg) ** 1.5
        if kind == "voiced":
            f0 = base_f0 * (1 + rng.uniform(-0.15, 0.15) + rng.uniform(-0.2, 0.2) * t / max(t[-1], 1e-3))
            phase = 2 * np.pi * np.cumsum(f0) / sample_rate_hz
            formants = rng.uniform([300, 900, 2200], [900, 2300, 3400])
            k = np.arange(1, int(sample_rate_hz / 2 / f0.max()))
            gains = _formant_gain(k * np.mean(f0), formants, (80, 120, 200)) / np.sqrt(k)
            x = (gains[:, None] * np.sin(k[:, None] * phase[None, :])).sum(axis=0)
        else:
            b, a = signal.butter(4, rng.uniform(2500, 5000) / (sample_rate_hz / 2), "high")
            x = signal.lfilter(b, a, rng.standard_normal(seg)) * 0.5
        x = x / (np.max(np.abs(x)) + 1e-12)
        out[t0 : t0 + seg] += x * env * rng.uniform(0.3, 1.0)
        t0 += seg
    # faint breath floor so no stretch is digitally silent
    out += 1e-3 * rng.standard_normal(n)
    return 0.5 * out / np.max(np.abs(out))


def noise_like(kind: str, duration_s: float, rng: np.random.Generator, sample_rate_hz: int = 16000) -> np.ndarray:
    n = int(duration_s * sample_rate_hz)
    white = rng.standard_normal(n)
    if kind == "white":
        x = white
    elif kind in ("pink", "brown"):
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, 1 / sample_rate_hz)
        f[0] = f[1]
        spec /= f ** (0.5 if kind == "pink" else 1.0)
        x = np.fft.irfft(spec, n)
    elif kind == "hum":
        t = np.arange(n) / sample_rate_hz
        base = rng.choice([50.0, 60.0])
        x = sum(np.sin(2 * np.pi * base * h * t + rng.uniform(0, 2 * np.pi)) / h for h in range(1, 12))
        x = x + 0.05 * white
    elif kind == "babble":
        x = sum(speech_like(duration_s, rng, sample_rate_hz) for _ in range(5))
    elif kind == "modulated":
        t = np.arange(n) / sample_rate_hz
        b, a = signal.butter(2, [300 / (sample_rate_hz / 2), 3000 / (sample_rate_hz / 2)], "band")
        x = signal.lfilter(b, a, white) * (1 + 0.8 * np.sin(2 * np.pi * rng.uniform(0.5, 4) * t))
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return 0.5 * x / np.max(np.abs(x))


def make_toy_corpus(out_dir, n_clean: int = 8, n_noise: int = 6, duration_s: float = 6.0,
                    seed: int = 0, sample_rate_hz: int = 16000) -> tuple[Path, Path]:
    """Write ``clean/`` and ``noise/`` WAV source folders; returns their paths."""
    out_dir = Path(out_dir)
    clean_dir, noise_dir = out_dir / "clean", out_dir / "noise"
    clean_dir.mkdir(parents=True, exist_ok=True)
    noise_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n_clean):
        x = speech_like(duration_s, rng, sample_rate_hz)
        write_wav(AudioClip(x, sample_rate_hz), clean_dir / f"speaker_{i:03d}.wav")
    for i in range(n_noise):
        kind = NOISE_KINDS[i % len(NOISE_KINDS)]
        x = noise_like(kind, duration_s, rng, sample_rate_hz)
        write_wav(AudioClip(x, sample_rate_hz), noise_dir / f"{kind}_{i:03d}.wav")
    return clean_dir, noise_dir
