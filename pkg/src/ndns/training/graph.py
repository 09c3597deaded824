"""Differentiable, time-vectorized SDNN forward pass for training.

The event-driven simulator steps one frame at a time. Here each layer is
evaluated over a whole segment at once, using the fact that a sigma unit
fed by delta events simply reproduces the sender's reference signal:

    pre-activation(t) = W @ reconstruction_of_previous_layer(t)

The delta rule is still scanned sequentially (outside autograd), and its
result is spliced in with a straight-through estimator, so forward values
match the deployed network while gradients see an identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..sdnn.events import delta_reconstruct
from ..sdnn.network import MAX_DELAY, SdnnLayer, SdnnNetwork, quantize_weights
from ..stft_codec import synthesis_gain

DTYPE = torch.float64


def straight_through(x: torch.Tensor, value: torch.Tensor) -> torch.Tensor:
    """Forward ``value``, backward identity onto ``x``."""
    return x + (value - x).detach()


def quantize_st(w: torch.Tensor, bits: int | None) -> torch.Tensor:
    if bits is None:
        return w
    codes, exp = quantize_weights(w.detach().cpu().numpy(), bits)
    q = torch.from_numpy(codes.astype(np.float64) * 2.0**exp).to(w)
    return straight_through(w, q)


def delta_st(a: torch.Tensor, threshold: float, reference: torch.Tensor | None):
    """Delta/sigma round trip on ``(B, T, C)`` with a straight-through gradient.

    Suppressed changes lie inside ``|d| < threshold``, which the surrogate
    window ``|d| <= 2 * threshold`` covers, and emitted ones pass ``d``
    exactly, so the surrogate derivative of the reconstruction with respect
    to its input is 1 everywhere.
    """
    if threshold == 0.0:
        last = a[:, -1].detach().clone() if a.shape[1] else reference
        return a, last
    x = a.detach().cpu().numpy().transpose(1, 0, 2)  # (T, B, C)
    ref = None if reference is None else reference.cpu().numpy()
    recon, _, last = delta_reconstruct(x, threshold, ref)
    recon = torch.from_numpy(np.ascontiguousarray(recon.transpose(1, 0, 2))).to(a)
    return straight_through(a, recon), torch.from_numpy(last).to(a)


def delay_st(r: torch.Tensor, delays: torch.Tensor, history: torch.Tensor, max_delay: int):
    """Shift each channel of ``r`` (B, T, C) back by its rounded delay.

    ``history`` holds the previous ``max_delay`` frames (B, max_delay, C).
    The gradient with respect to a delay is minus the temporal derivative of
    the delayed signal; rounding passes straight through.
    """
    B, T, C = r.shape
    H = max_delay
    full = torch.cat([history, r], dim=1)
    d_int = torch.clamp(torch.round(delays.detach()), 0, H).long()
    idx = H + torch.arange(T)[:, None] - d_int[None, :]
    out = torch.gather(full, 1, idx.expand(B, T, C))
    if delays.requires_grad:
        prev = torch.gather(full, 1, (idx - 1).clamp(min=0).expand(B, T, C))
        slope = (out - prev).detach()
        out = out - (delays - delays.detach())[None, None, :] * slope
    new_history = full[:, -H:].detach() if H else history
    return out, new_history


@dataclass
class StreamState:
    """Carried across truncated-BPTT segments (always detached)."""

    input_ref: torch.Tensor | None
    refs: list
    histories: list


class ShadowParams:
    """Full-precision mirrors of the deployed parameters."""

    def __init__(self, weights, delays, thresholds, input_threshold=0.0, weight_bits=8,
                 max_delay=MAX_DELAY, timestep_s=None):
        self.weights = [torch.as_tensor(np.asarray(w, dtype=np.float64)).clone().requires_grad_(True)
                        for w in weights]
        self.delays = [torch.as_tensor(np.asarray(d, dtype=np.float64)).clone().requires_grad_(True)
                       for d in delays]
        self.thresholds = [float(t) for t in thresholds]
        self.input_threshold = float(input_threshold)
        self.weight_bits = list(weight_bits) if isinstance(weight_bits, (list, tuple)) else \
            [weight_bits] * len(self.weights)
        self.max_delay = max_delay
        self.timestep_s = timestep_s

    @classmethod
    def from_network(cls, net: SdnnNetwork) -> "ShadowParams":
        return cls(
            [l.effective_weights for l in net.layers],
            [l.delays for l in net.layers],
            [l.threshold for l in net.layers],
            net.input_threshold,
            [l.weight_bits for l in net.layers],
            max(l.max_delay for l in net.layers),
            net.timestep_s,
        )

    def parameters(self) -> list[torch.Tensor]:
        return self.weights + self.delays

    def clamp_(self) -> None:
        with torch.no_grad():
            for d in self.delays:
                d.clamp_(0.0, float(self.max_delay))

    def to_network(self) -> SdnnNetwork:
        layers = []
        for w, d, thr, bits in zip(self.weights, self.delays, self.thresholds, self.weight_bits):
            delays = np.clip(np.rint(d.detach().numpy()), 0, self.max_delay).astype(np.int64)
            layers.append(SdnnLayer.from_float(w.detach().numpy().copy(), delays, thr, bits, self.max_delay))
        kwargs = {} if self.timestep_s is None else {"timestep_s": self.timestep_s}
        return SdnnNetwork(layers, self.input_threshold, **kwargs)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, d) in enumerate(zip(self.weights, self.delays)):
            out[f"w{i}"] = w.detach().numpy().copy()
            out[f"d{i}"] = d.detach().numpy().copy()
        return out

    def load_arrays(self, arrays: dict) -> None:
        with torch.no_grad():
            for i, (w, d) in enumerate(zip(self.weights, self.delays)):
                w.copy_(torch.from_numpy(np.asarray(arrays[f"w{i}"])))
                d.copy_(torch.from_numpy(np.asarray(arrays[f"d{i}"])))

    def initial_state(self, batch: int) -> StreamState:
        H = self.max_delay
        return StreamState(
            None,
            [None] * len(self.weights),
            [torch.zeros(batch, H, w.shape[0], dtype=DTYPE) for w in self.weights],
        )


def forward_masks(shadow: ShadowParams, mags: torch.Tensor, state: StreamState,
                  learn_delays: bool = True):
    """Masks ``(B, T, out)`` for magnitude frames ``(B, T, in)``; returns ``(masks, new_state)``."""
    x, in_ref = delta_st(mags, shadow.input_threshold, state.input_ref)
    refs, hists = [], []
    for i, (w, d) in enumerate(zip(shadow.weights, shadow.delays)):
        wq = quantize_st(w, shadow.weight_bits[i])
        a = torch.relu(x @ wq.T)
        r, ref = delta_st(a, shadow.thresholds[i], state.refs[i])
        dd = d if learn_delays else d.detach()
        x, hist = delay_st(r, dd, state.histories[i], shadow.max_delay)
        refs.append(ref)
        hists.append(hist)
    return x, StreamState(in_ref, refs, hists)


def _fold_overlap_add(chunks: torch.Tensor, hop: int) -> torch.Tensor:
    """Overlap-add ``(B, T, win)`` chunks at stride ``hop`` into ``(B, (T-1)*hop + win)``."""
    B, T, win = chunks.shape
    out_len = (T - 1) * hop + win
    y = torch.nn.functional.fold(chunks.transpose(1, 2), output_size=(1, out_len),
                                 kernel_size=(1, win), stride=(1, hop))
    return y.reshape(B, out_len)


def istft_torch(frames: torch.Tensor, window: np.ndarray, hop: int) -> torch.Tensor:
    """Batched inverse of complex frames ``(B, T, F)``; same rule as the numpy decoder."""
    win = window.shape[0]
    w = torch.from_numpy(np.array(window, dtype=np.float64))
    chunks = torch.fft.irfft(frames, n=win, dim=-1) * w
    y = _fold_overlap_add(chunks, hop)
    T = frames.shape[1]
    norm = np.zeros((T - 1) * hop + win)
    for k in range(T):
        norm[k * hop : k * hop + win] += window**2
    return y * torch.from_numpy(synthesis_gain(norm))


def si_snr_torch(estimate: torch.Tensor, target: torch.Tensor, cap_db: float = 300.0) -> torch.Tensor:
    """Per-row SI-SNR in dB for ``(B, N)`` batches, clamped to ``[-cap_db, cap_db]``.

    A zero residual gives ``+cap_db`` and an estimate with no energy along the
    target gives ``-cap_db``, mirroring the infinite values of the metric.
    """
    s = target - target.mean(dim=-1, keepdim=True)
    s_hat = estimate - estimate.mean(dim=-1, keepdim=True)
    ss = (s * s).sum(-1, keepdim=True)
    proj = (s_hat * s).sum(-1, keepdim=True) / ss * s
    e = s_hat - proj
    num = (proj * proj).sum(-1)
    den = (e * e).sum(-1)
    tiny = torch.finfo(num.dtype).tiny
    db = 10.0 * (torch.log10(num.clamp_min(tiny)) - torch.log10(den.clamp_min(tiny)))
    db = torch.clamp(db, -cap_db, cap_db)
    cap = torch.full_like(db, cap_db)
    db = torch.where(den == 0, cap, db)
    return torch.where(num == 0, -cap, db)


def mask_loss(denoised: torch.Tensor, clean: torch.Tensor, masked_mags: torch.Tensor,
              clean_mags: torch.Tensor, lam: float = 1.0, use_si_snr: bool = True) -> torch.Tensor:
    """Negative SI-SNR plus ``lam`` times the magnitude MSE.

    Rows whose target has no energy are left out of the SI-SNR term.
    """
    total = lam * torch.mean((masked_mags - clean_mags) ** 2)
    if use_si_snr:
        centered = clean - clean.mean(-1, keepdim=True)
        ok = (centered * centered).sum(-1) > 0
        if bool(ok.any()):
            total = total - si_snr_torch(denoised[ok], clean[ok]).mean()
    return total
