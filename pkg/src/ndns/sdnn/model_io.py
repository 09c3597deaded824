"""Binary model file.

Layout, all little-endian::

    magic      4s   b"NDNS"
    version    u16
    n_layers   u16
    input_thr  f64
    per layer:
        in, out          u32, u32
        weight_bits      u8     (0 = unquantized float64 weights)
        scale_exp        i16
        max_delay        u16
        weights          out*in, row-major; i8 codes or f64 values
        delays           out x u8
        threshold        f64
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import SdnnLayer, SdnnNetwork

MAGIC = b"NDNS"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHHd")
_LAYER = struct.Struct("<IIBhH")


class ModelFormatError(ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


def dumps(net: SdnnNetwork) -> bytes:
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(net.layers), net.input_threshold)]
    for layer in net.layers:
        bits = layer.weight_bits or 0
        if layer.max_delay > 255:
            raise ModelFormatError("delays are stored as u8; max_delay must be <= 255")
        parts.append(_LAYER.pack(layer.in_dim, layer.out_dim, bits, layer.scale_exp, layer.max_delay))
        if layer.quantized:
            parts.append(layer.weights.astype("<i1").tobytes())
        else:
            parts.append(layer.weights.astype("<f8").tobytes())
        parts.append(layer.delays.astype("<u1").tobytes())
        parts.append(struct.pack("<d", layer.threshold))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("model file is truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))


def loads(data: bytes, timestep_s: float | None = None) -> SdnnNetwork:
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise ModelFormatError("bad magic: not an NDNS model file")
    _, version, n_layers, input_thr = r.unpack(_HEADER)
    if version > FORMAT_VERSION:
        raise ModelVersionError(f"model format version {version} is newer than supported ({FORMAT_VERSION})")
    layers = []
    for _ in range(n_layers):
        n_in, n_out, bits, scale_exp, max_delay = r.unpack(_LAYER)
        if bits:
            w = np.frombuffer(r.take(n_in * n_out), dtype="<i1").reshape(n_out, n_in)
        else:
            w = np.frombuffer(r.take(8 * n_in * n_out), dtype="<f8").reshape(n_out, n_in)
        delays = np.frombuffer(r.take(n_out), dtype="<u1")
        (thr,) = struct.unpack("<d", r.take(8))
        try:
            layers.append(SdnnLayer(w, delays, thr, bits or None, scale_exp, max_delay))
        except ValueError as exc:
            raise ModelFormatError(f"invalid layer: {exc}") from exc
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after last layer")
    kwargs = {} if timestep_s is None else {"timestep_s": timestep_s}
    try:
        return SdnnNetwork(layers, input_thr, **kwargs)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc


def save_model(net: SdnnNetwork, path) -> None:
    Path(path).write_bytes(dumps(net))


def load_model(path, timestep_s: float | None = None) -> SdnnNetwork:
    return loads(Path(path).read_bytes(), timestep_s)
