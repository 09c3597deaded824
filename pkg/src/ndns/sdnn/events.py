"""Delta encoding into sparse graded spikes, and sigma reconstruction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SparseEvents:
    """Graded spikes: only nonzero payloads are carried, with their channel indices."""

    indices: np.ndarray
    values: np.ndarray
    size: int

    @classmethod
    def empty(cls, size: int) -> "SparseEvents":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), size)

    @classmethod
    def from_dense(cls, x: np.ndarray) -> "SparseEvents":
        x = np.asarray(x, dtype=np.float64)
        idx = np.flatnonzero(x)
        return cls(idx, x[idx], x.shape[0])

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.size)
        out[self.indices] = self.values
        return out


@dataclass
class DeltaState:
    reference: np.ndarray
    threshold: float = 0.0

    def __post_init__(self):
        self.reference = np.array(self.reference, dtype=np.float64)
        if self.threshold < 0:
            raise ValueError("delta threshold must be nonnegative")

    @classmethod
    def at_rest(cls, size: int, threshold: float = 0.0) -> "DeltaState":
        return cls(np.zeros(size), threshold)


@dataclass
class SigmaState:
    accumulator: np.ndarray

    def __post_init__(self):
        self.accumulator = np.array(self.accumulator, dtype=np.float64)

    @classmethod
    def at_rest(cls, size: int) -> "SigmaState":
        return cls(np.zeros(size))


def delta_encode(x: np.ndarray, state: DeltaState) -> SparseEvents:
    """Emit ``x - reference`` on channels where it reaches the threshold.

    Emitting channels move their reference to ``x``; the rest keep it, so the
    receiver's reconstruction never drifts more than ``threshold`` from ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != state.reference.shape:
        raise ValueError(f"input shape {x.shape} != state shape {state.reference.shape}")
    d = x - state.reference
    fire = (np.abs(d) >= state.threshold) & (d != 0)
    idx = np.flatnonzero(fire)
    state.reference[idx] = x[idx]
    return SparseEvents(idx, d[idx], x.shape[0])


def sigma_accumulate(events: SparseEvents, state: SigmaState) -> np.ndarray:
    if events.size != state.accumulator.shape[0]:
        raise ValueError(f"event vector size {events.size} != accumulator size {state.accumulator.shape[0]}")
    np.add.at(state.accumulator, events.indices, events.values)
    return state.accumulator.copy()


def delta_reconstruct(x: np.ndarray, threshold: float, reference: np.ndarray | None = None):
    """Run the delta rule over a whole sequence and return what a sigma unit would see.

    ``x`` has time on axis 0; any trailing axes are independent channels.
    Returns ``(reconstruction, event_mask, final_reference)``. This is the
    same rule as :func:`delta_encode` stepped frame by frame, batched over
    channels.
    """
    x = np.asarray(x, dtype=np.float64)
    ref = np.zeros(x.shape[1:]) if reference is None else np.array(reference, dtype=np.float64)
    out = np.empty_like(x)
    fired = np.zeros(x.shape, dtype=bool)
    if threshold == 0:
        # every nonzero change fires, so the reconstruction is the input itself
        prev = np.concatenate([ref[None], x[:-1]], axis=0)
        fired[:] = x != prev
        out[:] = x
        return out, fired, (x[-1].copy() if len(x) else ref)
    for t in range(x.shape[0]):
        d = x[t] - ref
        f = (np.abs(d) >= threshold) & (d != 0)
        np.copyto(ref, x[t], where=f)
        out[t] = ref
        fired[t] = f
    return out, fired, ref
