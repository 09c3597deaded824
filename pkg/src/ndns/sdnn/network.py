"""Event-driven sigma-delta ReLU network with quantized weights and axonal delays."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..audio_io import AudioClip
from ..stft_codec import StftConfig, combine, istft, magnitude_phase, stft
from .events import DeltaState, SigmaState, SparseEvents, delta_encode, sigma_accumulate

DEFAULT_TOPOLOGY = (257, 512, 512, 257)
MAX_DELAY = 64
DEFAULT_TIMESTEP_S = 128 / 16000


def quantize_weights(w: np.ndarray, bits: int) -> tuple[np.ndarray, int]:
    """Signed ``bits``-bit codes with a shared power-of-two scale.

    The exponent is the smallest one for which the largest magnitude fits;
    rounding is half-to-even and out-of-range codes saturate.
    """
    if not 1 <= bits <= 8:
        raise ValueError(f"weight_bits must be in [1, 8], got {bits}")
    w = np.asarray(w, dtype=np.float64)
    qmin, qmax = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    if peak == 0.0:
        return np.zeros(w.shape, dtype=np.int64), 0
    exp = math.ceil(math.log2(peak / max(qmax, 1)))
    codes = np.clip(np.rint(w / 2.0**exp), qmin, qmax).astype(np.int64)
    return codes, exp


@dataclass(eq=False)
class SdnnLayer:
    """One fully connected sigma-delta ReLU layer.

    ``weights`` holds integer codes when ``weight_bits`` is set (effective
    value ``code * 2**scale_exp``) and plain floats when it is ``None``.
    """

    weights: np.ndarray
    delays: np.ndarray | None = None
    threshold: float = 0.0
    weight_bits: int | None = 8
    scale_exp: int = 0
    max_delay: int = MAX_DELAY

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 2:
            raise ValueError(f"weights must be 2-D (out, in), got shape {w.shape}")
        if self.weight_bits is None:
            w = w.astype(np.float64)
        else:
            if not 1 <= self.weight_bits <= 8:
                raise ValueError(f"weight_bits must be in [1, 8], got {self.weight_bits}")
            if not np.all(np.equal(np.mod(w, 1), 0)):
                raise ValueError("quantized weights must be integer codes")
            w = w.astype(np.int64)
            lo, hi = -(2 ** (self.weight_bits - 1)), 2 ** (self.weight_bits - 1) - 1
            if w.size and (w.min() < lo or w.max() > hi):
                raise ValueError(f"weight codes exceed {self.weight_bits}-bit signed range")
        self.weights = w
        d = np.zeros(w.shape[0], dtype=np.int64) if self.delays is None else np.asarray(self.delays)
        if d.shape != (w.shape[0],):
            raise ValueError(f"need one delay per output neuron ({w.shape[0]}), got {d.shape}")
        if np.any(d < 0) or np.any(d > self.max_delay) or not np.all(np.equal(np.mod(d, 1), 0)):
            raise ValueError(f"delays must be integers in [0, {self.max_delay}]")
        self.delays = d.astype(np.int64)
        self.threshold = float(self.threshold)
        if not (self.threshold >= 0 and math.isfinite(self.threshold)):
            raise ValueError("threshold must be finite and nonnegative")
        self._w_eff = None

    @classmethod
    def from_float(cls, w, delays=None, threshold=0.0, weight_bits: int | None = 8, max_delay=MAX_DELAY):
        if weight_bits is None:
            return cls(np.asarray(w, dtype=np.float64), delays, threshold, None, 0, max_delay)
        codes, exp = quantize_weights(w, weight_bits)
        return cls(codes, delays, threshold, weight_bits, exp, max_delay)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def quantized(self) -> bool:
        return self.weight_bits is not None

    @property
    def effective_weights(self) -> np.ndarray:
        if self._w_eff is None:
            if self.quantized:
                self._w_eff = self.weights.astype(np.float64) * 2.0**self.scale_exp
            else:
                self._w_eff = self.weights
        return self._w_eff


@dataclass(eq=False)
class SdnnNetwork:
    layers: list[SdnnLayer]
    input_threshold: float = 0.0
    timestep_s: float = DEFAULT_TIMESTEP_S

    def __post_init__(self):
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer {i} outputs {a.out_dim} but layer {i + 1} expects {b.in_dim}")
        if self.input_threshold < 0:
            raise ValueError("input threshold must be nonnegative")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def topology(self) -> tuple[int, ...]:
        if not self.layers:
            return ()
        return (self.layers[0].in_dim,) + tuple(l.out_dim for l in self.layers)

    @classmethod
    def initialize(cls, topology=DEFAULT_TOPOLOGY, weight_bits: int | None = 8, threshold=0.01,
                   input_threshold=0.01, seed=0, timestep_s=DEFAULT_TIMESTEP_S):
        """He-uniform random weights, zero delays."""
        rng = np.random.default_rng(seed)
        layers = []
        for n_in, n_out in zip(topology, topology[1:]):
            bound = math.sqrt(6.0 / n_in)
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
            layers.append(SdnnLayer.from_float(w, threshold=threshold, weight_bits=weight_bits))
        return cls(layers, input_threshold, timestep_s)

    def new_state(self) -> "NetworkState":
        return NetworkState(
            DeltaState.at_rest(self.in_dim, self.input_threshold),
            [LayerState.at_rest(l) for l in self.layers],
            SigmaState.at_rest(self.out_dim),
        )


@dataclass
class OpsCounter:
    synops: int = 0
    neuronops: int = 0
    steps: int = 0
    timestep_s: float = DEFAULT_TIMESTEP_S

    @property
    def audio_seconds(self) -> float:
        return self.steps * self.timestep_s

    def __add__(self, other: "OpsCounter") -> "OpsCounter":
        if not math.isclose(self.timestep_s, other.timestep_s):
            raise ValueError("cannot merge counters with different timesteps")
        return OpsCounter(self.synops + other.synops, self.neuronops + other.neuronops,
                          self.steps + other.steps, self.timestep_s)

    def to_dict(self) -> dict:
        return {
            "synops": self.synops,
            "neuronops": self.neuronops,
            "steps": self.steps,
            "timestep_s": self.timestep_s,
            "audio_seconds": self.audio_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OpsCounter":
        return cls(int(d["synops"]), int(d["neuronops"]), int(d["steps"]), float(d["timestep_s"]))


@dataclass
class LayerState:
    sigma: SigmaState
    delta: DeltaState
    pending: np.ndarray  # ring buffer of delayed event payloads, (max_delay + 1, out)
    t: int = 0

    @classmethod
    def at_rest(cls, layer: SdnnLayer) -> "LayerState":
        return cls(SigmaState.at_rest(layer.out_dim), DeltaState.at_rest(layer.out_dim, layer.threshold),
                   np.zeros((layer.max_delay + 1, layer.out_dim)))


@dataclass
class NetworkState:
    input_delta: DeltaState
    layers: list[LayerState]
    decoder: SigmaState


def layer_step(layer: SdnnLayer, events: SparseEvents, state: LayerState, counter: OpsCounter) -> SparseEvents:
    if events.size != layer.in_dim:
        raise ValueError(f"layer expects {layer.in_dim} inputs, got event vector of size {events.size}")
    if events.nnz:
        z = state.sigma.accumulator
        z += layer.effective_weights[:, events.indices] @ events.values
        counter.synops += events.nnz * layer.out_dim
    counter.neuronops += layer.out_dim

    a = np.maximum(state.sigma.accumulator, 0.0)
    out = delta_encode(a, state.delta)

    ring = state.pending
    slots = (state.t + layer.delays[out.indices]) % ring.shape[0]
    ring[slots, out.indices] += out.values
    now = state.t % ring.shape[0]
    delivered = SparseEvents.from_dense(ring[now])
    ring[now] = 0.0
    state.t += 1
    return delivered


def network_step(net: SdnnNetwork, state: NetworkState, frame: np.ndarray, counter: OpsCounter) -> np.ndarray:
    """Advance one timestep on a magnitude frame and return the decoded mask frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (net.in_dim,):
        raise ValueError(f"frame has shape {frame.shape}, network expects ({net.in_dim},)")
    events = delta_encode(frame, state.input_delta)
    for layer, ls in zip(net.layers, state.layers):
        events = layer_step(layer, events, ls, counter)
    mask = sigma_accumulate(events, state.decoder)
    counter.steps += 1
    # accumulated deltas of nonnegative values can round a hair below zero
    return np.maximum(mask, 0.0)


def run_network(net: SdnnNetwork, frames: np.ndarray, counter: OpsCounter | None = None,
                state: NetworkState | None = None) -> tuple[np.ndarray, OpsCounter]:
    """Step the network over ``(T, in_dim)`` frames; returns ``(T, out_dim)`` masks."""
    counter = OpsCounter(timestep_s=net.timestep_s) if counter is None else counter
    state = net.new_state() if state is None else state
    frames = np.asarray(frames, dtype=np.float64)
    masks = np.empty((frames.shape[0], net.out_dim))
    for k in range(frames.shape[0]):
        masks[k] = network_step(net, state, frames[k], counter)
    return masks, counter


def delay_frames(x: np.ndarray, steps: int) -> np.ndarray:
    """Shift along axis 0 by ``steps`` frames, filling the head with zeros."""
    if steps < 0:
        raise ValueError("delay must be nonnegative")
    out = np.zeros_like(x)
    if steps < x.shape[0]:
        out[steps:] = x[: x.shape[0] - steps]
    return out


def apply_mask(masks: np.ndarray, mag: np.ndarray, phase: np.ndarray, net_delay_steps: int) -> np.ndarray:
    return combine(masks * delay_frames(mag, net_delay_steps), delay_frames(phase, net_delay_steps))


def denoise(net: SdnnNetwork | None, noisy: AudioClip, cfg: StftConfig, net_delay_steps: int = 2,
            mask_bypass: bool = False) -> tuple[AudioClip, OpsCounter]:
    """Encode, run the network, mask the delayed noisy spectrum and decode.

    With ``mask_bypass`` the network is skipped and a unit mask is applied;
    the counter then records the frames but no ops.
    """
    spec = stft(noisy, cfg)
    mag, phase = magnitude_phase(spec)
    if mask_bypass:
        counter = OpsCounter(steps=mag.shape[0], timestep_s=cfg.timestep_s)
        masks = np.ones_like(mag)
    else:
        if net.in_dim != cfg.n_bins or net.out_dim != cfg.n_bins:
            raise ValueError(f"network maps {net.in_dim}->{net.out_dim}, codec has {cfg.n_bins} bins")
        masks, counter = run_network(net, mag, OpsCounter(timestep_s=cfg.timestep_s))
    out = apply_mask(masks, mag, phase, net_delay_steps)
    return istft(spec.with_frames(out)), counter
