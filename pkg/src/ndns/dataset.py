"""Deterministic synthesis of (clean, noise, noisy) triples and a manifest loader."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, read_wav, write_wav

PEAK_LIMIT = 0.99
MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class SynthConfig:
    snr_db_range: tuple[float, float] = (-5.0, 20.0)
    segment_s: float = 30.0
    sample_rate_hz: int = 16000
    count: int = 60000
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.snr_db_range
        if not lo <= hi:
            raise ValueError(f"empty SNR range {self.snr_db_range}")
        if self.segment_s <= 0:
            raise ValueError("segment_s must be positive")
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_s * self.sample_rate_hz))


@dataclass(frozen=True)
class MixtureRecord:
    index: int
    clean_path: str
    noise_path: str
    noisy_path: str
    clean_source_id: str
    noise_source_id: str
    snr_db: float
    gain_applied: float
    normalization: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def mix_at_snr(clean: AudioClip, noise: AudioClip, target_snr_db: float):
    """Add ``noise`` to ``clean`` at the target SNR (plain RMS levels).

    Returns ``(noisy, scaled_clean, scaled_noise, gain, normalization)``. If
    the mixture would peak above 0.99 all three signals share one scale-down
    factor, which keeps both the SNR and ``noisy == clean + noise`` intact.
    """
    if clean.sample_rate_hz != noise.sample_rate_hz:
        raise ValueError("clean and noise sample rates differ")
    if len(clean) != len(noise):
        raise ValueError(f"length mismatch: clean {len(clean)} vs noise {len(noise)}")
    rc, rn = rms(clean.samples), rms(noise.samples)
    if rc == 0:
        raise ValueError("clean segment is silent")
    if rn == 0:
        raise ValueError("noise segment is silent")
    gain = (rc / rn) * 10.0 ** (-target_snr_db / 20.0)
    scaled_noise = gain * noise.samples
    peak = float(np.max(np.abs(clean.samples + scaled_noise)))
    norm = PEAK_LIMIT / peak if peak > PEAK_LIMIT else 1.0
    c = clean.samples * norm
    n = scaled_noise * norm
    y = c + n
    sr = clean.sample_rate_hz
    return AudioClip(y, sr), AudioClip(c, sr), AudioClip(n, sr), gain, norm


def list_wavs(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"source directory {directory} does not exist")
    files = sorted(p for p in directory.rglob("*") if p.suffix.lower() == ".wav" and p.is_file())
    if not files:
        raise ValueError(f"source directory {directory} contains no WAV files")
    return files


def cyclic_segment(x: np.ndarray, start: int, n: int) -> np.ndarray:
    """``n`` samples from ``x`` beginning at ``start``, wrapping around as needed."""
    return np.take(x, np.arange(start, start + n), mode="wrap")


def item_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, index])


def _source_id(path: Path, root: Path) -> str:
    return path.relative_to(root).with_suffix("").as_posix()


class _Sources:
    """Lazily loaded, cached source clips."""

    def __init__(self, root, sample_rate_hz: int):
        self.root = Path(root)
        self.files = list_wavs(self.root)
        self.sample_rate_hz = sample_rate_hz
        self._cache: dict[int, AudioClip] = {}

    def get(self, i: int) -> AudioClip:
        clip = self._cache.get(i)
        if clip is None:
            clip = read_wav(self.files[i])
            if clip.sample_rate_hz != self.sample_rate_hz:
                raise ValueError(f"{self.files[i]} is {clip.sample_rate_hz} Hz, expected {self.sample_rate_hz} Hz")
            if len(clip) == 0:
                raise ValueError(f"{self.files[i]} is empty")
            self._cache[i] = clip
        return clip

    def source_id(self, i: int) -> str:
        return _source_id(self.files[i], self.root)


def synthesize_item(cfg: SynthConfig, index: int, clean_src: _Sources, noise_src: _Sources):
    rng = item_rng(cfg.seed, index)
    ci = int(rng.integers(len(clean_src.files)))
    ni = int(rng.integers(len(noise_src.files)))
    clean_full, noise_full = clean_src.get(ci), noise_src.get(ni)
    c_off = int(rng.integers(len(clean_full)))
    n_off = int(rng.integers(len(noise_full)))
    snr = float(rng.uniform(*cfg.snr_db_range))

    n = cfg.segment_samples
    sr = cfg.sample_rate_hz
    clean = AudioClip(cyclic_segment(clean_full.samples, c_off, n), sr)
    noise = AudioClip(cyclic_segment(noise_full.samples, n_off, n), sr)
    noisy, clean, noise, gain, norm = mix_at_snr(clean, noise, snr)
    if not np.array_equal(noisy.samples, clean.samples + noise.samples):
        raise AssertionError(f"item {index}: mixture is not additive")
    info = dict(clean_source_id=clean_src.source_id(ci), noise_source_id=noise_src.source_id(ni),
                snr_db=snr, gain_applied=gain, normalization=norm)
    return clean, noise, noisy, info


def synthesize_dataset(cfg: SynthConfig, clean_dir, noise_dir, out_dir, jobs: int | None = None) -> Path:
    """Write ``cfg.count`` triples plus ``manifest.jsonl`` under ``out_dir``.

    Every random choice for item ``i`` comes from a generator seeded with
    ``(seed, i)``, so output does not depend on scheduling or ``jobs``.
    """
    clean_src = _Sources(clean_dir, cfg.sample_rate_hz)
    noise_src = _Sources(noise_dir, cfg.sample_rate_hz)
    out_dir = Path(out_dir)
    for sub in ("clean", "noise", "noisy"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(cfg.count - 1)))

    def work(i: int) -> MixtureRecord:
        clean, noise, noisy, info = synthesize_item(cfg, i, clean_src, noise_src)
        names = {k: f"{k}/{k}_fileid_{i:0{width}d}.wav" for k in ("clean", "noise", "noisy")}
        write_wav(clean, out_dir / names["clean"])
        write_wav(noise, out_dir / names["noise"])
        write_wav(noisy, out_dir / names["noisy"])
        return MixtureRecord(i, names["clean"], names["noise"], names["noisy"], **info)

    # warm the source caches serially; workers then only read them
    for i in range(len(clean_src.files)):
        clean_src.get(i)
    for i in range(len(noise_src.files)):
        noise_src.get(i)

    jobs = jobs or int(os.environ.get("NDNS_JOBS", "1"))
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            records = list(pool.map(work, range(cfg.count)))
    else:
        records = [work(i) for i in range(cfg.count)]

    manifest = out_dir / MANIFEST_NAME
    manifest.write_text("".join(r.to_json() + "\n" for r in records))
    return manifest


def read_manifest(path) -> list[MixtureRecord]:
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(MixtureRecord(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad manifest record ({exc})") from exc
    return records


class Manifest:
    """Records plus the directory their relative paths resolve against."""

    def __init__(self, path):
        self.path = Path(path)
        self.root = self.path.parent
        self.records = read_manifest(self.path)

    def __len__(self) -> int:
        return len(self.records)

    def resolve(self, rel: str) -> Path:
        return self.root / rel


def load_triple(manifest: Manifest | str | os.PathLike, index: int):
    """Return ``(clean, noise, noisy, record)`` for one manifest entry."""
    if not isinstance(manifest, Manifest):
        manifest = Manifest(manifest)
    if not 0 <= index < len(manifest):
        raise IndexError(f"index {index} out of range for manifest of {len(manifest)} records")
    rec = manifest.records[index]
    clips = []
    for rel in (rec.clean_path, rec.noise_path, rec.noisy_path):
        p = manifest.resolve(rel)
        if not p.exists():
            raise FileNotFoundError(f"manifest entry {index} refers to missing file {p}")
        clips.append(read_wav(p))
    lengths = {len(c) for c in clips}
    rates = {c.sample_rate_hz for c in clips}
    if len(lengths) != 1 or len(rates) != 1:
        raise ValueError(f"manifest entry {index}: clean/noise/noisy files disagree in length or rate")
    return clips[0], clips[1], clips[2], rec
