"""Parameter count and model size of a deployed network."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .network import SdnnNetwork

DELAY_BITS = 6
THRESHOLD_BITS = 16
FLOAT_WEIGHT_BITS = 32


@dataclass(frozen=True)
class ParamBreakdown:
    weights: int
    delays: int
    thresholds: int

    @property
    def total(self) -> int:
        return self.weights + self.delays + self.thresholds


def param_breakdown(net: SdnnNetwork) -> ParamBreakdown:
    return ParamBreakdown(
        weights=sum(l.weights.size for l in net.layers),
        delays=sum(l.delays.size for l in net.layers),
        thresholds=len(net.layers),
    )


def count_params(net: SdnnNetwork) -> int:
    """Unique parameters: weights, per-neuron delays and one threshold per layer."""
    return param_breakdown(net).total


def count_bits(net: SdnnNetwork) -> int:
    bits = 0
    for layer in net.layers:
        wb = layer.weight_bits if layer.quantized else FLOAT_WEIGHT_BITS
        bits += layer.weights.size * wb + layer.delays.size * DELAY_BITS + THRESHOLD_BITS
    return bits


def model_size_bytes(net: SdnnNetwork) -> int:
    return math.ceil(count_bits(net) / 8)
