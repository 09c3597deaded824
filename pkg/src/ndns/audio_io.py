"""PCM16 mono WAV reading/writing and the in-memory ``AudioClip``."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 16000
PCM_SCALE = 32768.0
MAX_AMPLITUDE = 1.0 - 1.0 / PCM_SCALE


class WavError(ValueError):
    """Base class for WAV decoding problems."""


class MalformedWavError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


class UnsupportedChannelCountError(WavError):
    pass


class UnsupportedBitDepthError(WavError):
    pass


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono waveform with amplitudes nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"AudioClip must be mono (1-D), got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("AudioClip samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample rate must be positive")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate_hz)


def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise MalformedWavError(f"chunk {cid!r} truncated")
        yield cid, body
        pos += 8 + size + (size & 1)


def read_wav(path) -> AudioClip:
    """Read a PCM16 little-endian mono WAV file.

    Integer code ``i`` maps to amplitude ``i / 32768``.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    pcm = None
    for cid, body in _chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body)
            if fmt[0] == 0xFFFE and len(body) >= 26:
                # WAVE_FORMAT_EXTENSIBLE: the sub-format GUID starts with the real tag
                fmt = (struct.unpack_from("<H", body, 24)[0],) + fmt[1:]
        elif cid == b"data":
            pcm = body
    if fmt is None:
        raise MalformedWavError(f"{path}: missing fmt chunk")
    if pcm is None:
        raise MalformedWavError(f"{path}: missing data chunk")

    tag, channels, rate, _, _, bits = fmt
    if tag != 1:
        raise UnsupportedEncodingError(f"{path}: audio format {tag} is not PCM")
    if channels != 1:
        raise UnsupportedChannelCountError(f"{path}: {channels} channels, only mono is supported")
    if bits != 16:
        raise UnsupportedBitDepthError(f"{path}: {bits}-bit samples, only 16-bit is supported")
    if rate <= 0:
        raise MalformedWavError(f"{path}: sample rate {rate}")
    if len(pcm) % 2:
        pcm = pcm[:-1]

    codes = np.frombuffer(pcm, dtype="<i2")
    return AudioClip(codes.astype(np.float64) / PCM_SCALE, rate)


def to_pcm16(samples) -> np.ndarray:
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, MAX_AMPLITUDE)
    return np.rint(x * PCM_SCALE).astype("<i2")


def write_wav(clip: AudioClip, path) -> None:
    path = Path(path)
    with open(path, "wb") as raw, wave.open(raw, "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(clip.sample_rate_hz)
        fh.writeframes(to_pcm16(clip.samples).tobytes())
