"""Quantization-aware truncated-BPTT training loop."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..audio_io import AudioClip
from ..dataset import Manifest, load_triple
from ..metrics import cap_db, si_snr
from ..sdnn.model_io import load_model, save_model
from ..sdnn.network import SdnnNetwork, delay_frames, denoise
from ..stft_codec import StftConfig, analysis_window, stft
from .graph import DTYPE, ShadowParams, StreamState, forward_masks, istft_torch, mask_loss
from .radam import RAdamState, radam_step

log = logging.getLogger(__name__)

CONFIG_NAME = "train_config.json"
HISTORY_NAME = "history.json"
_CKPT_RE = re.compile(r"epoch_(\d+)\.ndns$")
LR_SCHEDULES = ("constant", "cosine")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 4
    bptt_len: int = 100
    loss_lambda: float = 1.0
    grad_clip: float = 1.0
    seed: int = 0
    net_delay_steps: int = 2
    val_fraction: float = 0.2
    learn_delays: bool = True
    lr_schedule: str = "constant"
    lr_min_ratio: float = 0.1
    window_length: int = 512
    hop_length: int = 128
    sample_rate_hz: int = 16000

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        for name in ("batch_size", "bptt_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.net_delay_steps < 0:
            raise ConfigError("net_delay_steps must be nonnegative")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {', '.join(LR_SCHEDULES)}")
        if not 0 < self.lr_min_ratio <= 1:
            raise ConfigError("lr_min_ratio must be in (0, 1]")
        if self.loss_lambda < 0 or not self.grad_clip > 0:
            raise ConfigError("loss_lambda must be >= 0 and grad_clip > 0")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch; cosine decays to ``lr_min_ratio`` at the last epoch."""
        if self.lr_schedule == "constant" or self.epochs <= 1:
            return self.learning_rate
        frac = (epoch - 1) / (self.epochs - 1)
        lo = self.learning_rate * self.lr_min_ratio
        return lo + (self.learning_rate - lo) * 0.5 * (1.0 + math.cos(math.pi * frac))

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.window_length, self.hop_length, "hann", self.sample_rate_hz)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict, where: str = "config") -> "TrainConfig":
        known = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"{where}: {exc}") from exc

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".toml":
            try:
                data = tomllib.loads(text)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        else:
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a table/object")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data, str(path))


@dataclass
class Batch:
    """Precomputed codec arrays for a group of equal-length (zero-padded) utterances."""

    mags: np.ndarray  # (B, T, F) noisy magnitudes fed to the network
    noisy_delayed: np.ndarray  # (B, T, F) complex, noisy frames shifted by the network delay
    clean_delayed: np.ndarray  # (B, T, F) complex, clean frames shifted likewise

    @property
    def n_frames(self) -> int:
        return self.mags.shape[1]


def make_batch(noisy: list[AudioClip], clean: list[AudioClip], cfg: StftConfig, net_delay_steps: int) -> Batch:
    n = max(len(c) for c in noisy)
    specs_n, specs_c = [], []
    for y, x in zip(noisy, clean):
        pad = lambda c: AudioClip(np.pad(c.samples, (0, n - len(c))), c.sample_rate_hz)  # noqa: E731
        specs_n.append(stft(pad(y), cfg).frames)
        specs_c.append(stft(pad(x), cfg).frames)
    yn = np.stack(specs_n)
    xc = np.stack(specs_c)
    shift = lambda a: np.stack([delay_frames(f, net_delay_steps) for f in a])  # noqa: E731
    return Batch(np.abs(yn), shift(yn), shift(xc))


def segment_loss(shadow: ShadowParams, batch: Batch, frames: slice, cfg: TrainConfig,
                 state: StreamState | None = None, use_si_snr: bool = True):
    """Forward one truncated segment; returns ``(loss tensor, new_state)``."""
    sl = frames
    mags = torch.from_numpy(np.ascontiguousarray(batch.mags[:, sl])).to(DTYPE)
    if mags.shape[1] > cfg.bptt_len:
        raise ValueError(f"segment of {mags.shape[1]} frames exceeds bptt_len={cfg.bptt_len}")
    if mags.shape[2] != shadow.weights[0].shape[1]:
        raise ValueError(f"network expects {shadow.weights[0].shape[1]} bins, batch has {mags.shape[2]}")
    state = shadow.initial_state(mags.shape[0]) if state is None else state
    masks, new_state = forward_masks(shadow, mags, state, cfg.learn_delays)

    noisy = torch.from_numpy(np.ascontiguousarray(batch.noisy_delayed[:, sl]))
    clean = torch.from_numpy(np.ascontiguousarray(batch.clean_delayed[:, sl]))
    stft_cfg = cfg.stft
    window = analysis_window(stft_cfg)
    est_wave = istft_torch(masks * noisy, window, stft_cfg.hop_length)
    tgt_wave = istft_torch(clean, window, stft_cfg.hop_length)
    loss = mask_loss(est_wave, tgt_wave, masks * noisy.abs(), clean.abs(), cfg.loss_lambda, use_si_snr)
    return loss, new_state


def forward_backward(shadow: ShadowParams, batch: Batch, cfg: TrainConfig, frames: slice = slice(None),
                     state: StreamState | None = None, use_si_snr: bool = True):
    """Loss and gradients for every shadow parameter over one segment.

    Returns ``(loss, grads, new_state)``; ``grads`` lines up with
    ``shadow.parameters()``.
    """
    loss, new_state = segment_loss(shadow, batch, frames, cfg, state, use_si_snr)
    params = shadow.parameters()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    return float(loss.detach()), grads, new_state


def clip_grad_norm(grads, max_norm: float) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if math.isfinite(total) and total > max_norm:
        scale = max_norm / total
        for g in grads:
            g.mul_(scale)
    return total


def smoothed(values, window: int = 5) -> list[float]:
    """Trailing moving average."""
    out = []
    for i in range(len(values)):
        chunk = values[max(0, i - window + 1) : i + 1]
        out.append(float(np.mean(chunk)))
    return out


def aligned_si_snr(denoised: AudioClip, clean: AudioClip, lag_samples: int) -> float:
    n = len(clean) - lag_samples
    return si_snr(denoised.samples[lag_samples : lag_samples + n], clean.samples[:n])


def validate(net: SdnnNetwork, triples, cfg: TrainConfig) -> dict:
    """Deployed-network SI-SNR on held-out triples, aligned by the network delay."""
    stft_cfg = cfg.stft
    lag = cfg.net_delay_steps * stft_cfg.hop_length
    full, data = [], []
    for clean, noisy in triples:
        out, _ = denoise(net, noisy, stft_cfg, cfg.net_delay_steps)
        full.append(cap_db(aligned_si_snr(out, clean, lag)))
        data.append(cap_db(si_snr(noisy, clean)))
    return {
        "val_si_snr_db": float(np.mean(full)),
        "val_si_snr_data_db": float(np.mean(data)),
        "val_si_snri_data_db": float(np.mean(full) - np.mean(data)),
    }


def split_indices(n: int, val_fraction: float) -> tuple[list[int], list[int]]:
    n_val = int(round(n * val_fraction))
    if val_fraction > 0:
        n_val = max(1, n_val)
    if n_val >= n:
        n_val = n - 1
    return list(range(n - n_val)), list(range(n - n_val, n))


def _latest_checkpoint(ckpt_dir: Path) -> int:
    epochs = [int(m.group(1)) for p in ckpt_dir.glob("epoch_*.ndns") if (m := _CKPT_RE.search(p.name))]
    epochs = [e for e in epochs if (ckpt_dir / f"epoch_{e:03d}.npz").exists()]
    return max(epochs, default=0)


def _save_checkpoint(ckpt_dir: Path, epoch: int, shadow: ShadowParams, opt: RAdamState) -> None:
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    save_model(shadow.to_network(), ckpt_dir / f"epoch_{epoch:03d}.ndns")
    arrays = shadow.state_arrays()
    for i, (m, v) in enumerate(zip(opt.exp_avg, opt.exp_avg_sq)):
        arrays[f"m{i}"] = m.numpy()
        arrays[f"v{i}"] = v.numpy()
    arrays["step"] = np.array(opt.step)
    arrays["skipped"] = np.array(opt.skipped)
    with open(ckpt_dir / f"epoch_{epoch:03d}.npz", "wb") as fh:
        np.savez(fh, **arrays)


def _load_checkpoint(ckpt_dir: Path, epoch: int, timestep_s: float):
    net = load_model(ckpt_dir / f"epoch_{epoch:03d}.ndns", timestep_s)
    shadow = ShadowParams.from_network(net)
    with np.load(ckpt_dir / f"epoch_{epoch:03d}.npz") as z:
        shadow.load_arrays(z)
        n = len(shadow.parameters())
        opt = RAdamState(int(z["step"]), [torch.from_numpy(z[f"m{i}"].copy()) for i in range(n)],
                         [torch.from_numpy(z[f"v{i}"].copy()) for i in range(n)], int(z["skipped"]))
    return shadow, opt


def train(net: SdnnNetwork, manifest, cfg: TrainConfig, run_dir=None, resume: bool = False):
    """Train ``net`` on a synthesized manifest. Returns ``(trained_net, history)``.

    With ``run_dir`` set, the config, a per-epoch checkpoint (model file plus
    shadow/optimizer state) and ``history.json`` are written there, and
    ``resume`` picks up from the latest complete checkpoint.
    """
    if cfg.epochs == 0:
        return net, []
    if not isinstance(manifest, Manifest):
        manifest = Manifest(manifest)
    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    stft_cfg = cfg.stft

    triples = []
    for i in range(len(manifest)):
        clean, _, noisy, _ = load_triple(manifest, i)
        triples.append((clean, noisy))
    train_idx, val_idx = split_indices(len(triples), cfg.val_fraction)

    shadow = ShadowParams.from_network(net)
    shadow.timestep_s = stft_cfg.timestep_s
    opt = RAdamState()
    history: list[dict] = []
    start_epoch = 1

    run_dir = Path(run_dir) if run_dir is not None else None
    ckpt_dir = run_dir / "checkpoints" if run_dir else None
    if run_dir:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / CONFIG_NAME).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        if resume:
            last = _latest_checkpoint(ckpt_dir) if ckpt_dir.exists() else 0
            if last:
                shadow, opt = _load_checkpoint(ckpt_dir, last, stft_cfg.timestep_s)
                hist_path = run_dir / HISTORY_NAME
                if hist_path.exists():
                    history = [h for h in json.loads(hist_path.read_text()) if h["epoch"] <= last]
                start_epoch = last + 1
                log.info("resuming after epoch %d", last)

    val_triples = [triples[i] for i in val_idx]
    for epoch in range(start_epoch, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(train_idx)
        lr = cfg.lr_at(epoch)
        losses = []
        for b0 in range(0, len(order), cfg.batch_size):
            idx = tuple(int(i) for i in order[b0 : b0 + cfg.batch_size])
            batch = make_batch([triples[i][1] for i in idx], [triples[i][0] for i in idx],
                               stft_cfg, cfg.net_delay_steps)
            state = None
            for k0 in range(0, batch.n_frames, cfg.bptt_len):
                loss, grads, state = forward_backward(shadow, batch, cfg, slice(k0, k0 + cfg.bptt_len), state)
                clip_grad_norm(grads, cfg.grad_clip)
                if radam_step(shadow.parameters(), grads, opt, lr):
                    shadow.clamp_()
                losses.append(loss)

        deployed = shadow.to_network()
        entry = {"epoch": epoch, "loss": float(np.mean(losses)), "lr": lr, "steps": opt.step, "skipped_steps": opt.skipped}
        if val_triples:
            entry.update(validate(deployed, val_triples, cfg))
        history.append(entry)
        log.info("epoch %d: %s", epoch, entry)
        if run_dir:
            _save_checkpoint(ckpt_dir, epoch, shadow, opt)
            (run_dir / HISTORY_NAME).write_text(json.dumps(history, indent=2) + "\n")

    return shadow.to_network(), history
