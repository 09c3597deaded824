"""Shared oracles for the training and acceptance tests."""

import math

import numpy as np
import torch

from ndns.stft_codec import StftConfig
from ndns.training import Batch, ShadowParams, TrainConfig, forward_backward, segment_loss


def smooth_problem(seed, dims=(6, 4, 6), n_frames=10):
    """Random unquantized, zero-threshold, zero-delay network plus one batch.

    A 10-sample window gives 6 frequency bins, matching the outer layer widths.
    """
    rng = np.random.default_rng(seed)
    weights = [rng.standard_normal((b, a)) / np.sqrt(a) for a, b in zip(dims, dims[1:])]
    delays = [np.zeros(b) for b in dims[1:]]
    shadow = ShadowParams(weights, delays, [0.0] * len(weights), 0.0, None, max_delay=4)
    cfg = TrainConfig(window_length=10, hop_length=5, bptt_len=n_frames, net_delay_steps=0)
    n_bins = dims[0]
    noisy = rng.standard_normal((1, n_frames, n_bins)) + 1j * rng.standard_normal((1, n_frames, n_bins))
    clean = 0.7 * noisy + 0.3 * (rng.standard_normal(noisy.shape) + 1j * rng.standard_normal(noisy.shape))
    return shadow, Batch(np.abs(noisy), noisy, clean), cfg


def finite_difference_agreement(seed, h=1e-4, rel_tol=1e-4):
    """Fraction of weights whose analytic gradient matches central differences."""
    shadow, batch, cfg = smooth_problem(seed)
    _, grads, _ = forward_backward(shadow, batch, cfg)
    ok = total = 0
    for w, g in zip(shadow.weights, grads):
        flat = w.detach().view(-1)
        for i in range(flat.numel()):
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + h
                up = float(segment_loss(shadow, batch, slice(None), cfg)[0])
                flat[i] = orig - h
                down = float(segment_loss(shadow, batch, slice(None), cfg)[0])
                flat[i] = orig
            fd = (up - down) / (2 * h)
            an = float(g.view(-1)[i])
            scale = max(abs(fd), abs(an))
            ok += abs(fd - an) <= rel_tol * scale
            total += 1
    return ok / total


def brute_force_si_snr(est, tgt):
    """Direct evaluation of the definition with scalar loops and exact-sum accumulation."""
    n = len(tgt)
    ms, me = math.fsum(tgt) / n, math.fsum(est) / n
    s = [v - ms for v in tgt]
    e = [v - me for v in est]
    dot = math.fsum(a * b for a, b in zip(e, s))
    ss = math.fsum(a * a for a in s)
    target = [dot / ss * v for v in s]
    noise = [a - b for a, b in zip(e, target)]
    return 10 * math.log10(math.fsum(v * v for v in target) / math.fsum(v * v for v in noise))


def interior_snr_db(x, y, cfg=StftConfig()):
    """Round-trip SNR excluding half a window at each edge."""
    h = cfg.window_length // 2
    err = x[h:-h] - y[h:-h]
    return 10 * math.log10(np.sum(x[h:-h] ** 2) / np.sum(err**2))
