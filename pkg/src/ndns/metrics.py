"""Evaluation metrics: SI-SNR, improvement gates, latency, power and PDP proxies."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import signal

from .audio_io import AudioClip
from .sdnn.network import OpsCounter
from .stft_codec import StftConfig

SI_SNR_CAP_DB = 300.0
MIN_SI_SNRI_DB = 3.0
MAX_LATENCY_S = 0.040
MAX_NETWORK_LAG_S = 0.100
NEURON_OP_WEIGHT = 10
# a residual this small relative to the target (about 295 dB) is float rounding, not noise
_ROUNDING_FLOOR = (8 * np.finfo(np.float64).eps) ** 2


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, AudioClip) else np.asarray(x, dtype=np.float64)


def si_snr(estimate, target) -> float:
    """Scale-invariant SNR in dB.

    Both signals are mean-removed. Returns ``inf`` for a perfect (scaled)
    estimate, including one whose residual is at float rounding level, and
    ``-inf`` for an estimate with no energy along the target.
    """
    if isinstance(estimate, AudioClip) and isinstance(target, AudioClip):
        if estimate.sample_rate_hz != target.sample_rate_hz:
            raise ValueError("sample rates differ")
    s_hat, s = _samples(estimate), _samples(target)
    if s_hat.shape != s.shape or s.ndim != 1:
        raise ValueError(f"length mismatch: estimate {s_hat.shape} vs target {s.shape}")
    if s.size == 0:
        raise ValueError("empty signals")
    s = s - s.mean()
    s_hat = s_hat - s_hat.mean()
    ss = float(np.dot(s, s))
    if ss == 0.0:
        raise ValueError("target has no energy after mean removal; SI-SNR is undefined")
    s_target = (np.dot(s_hat, s) / ss) * s
    e_noise = s_hat - s_target
    num = float(np.dot(s_target, s_target))
    den = float(np.dot(e_noise, e_noise))
    if num == 0.0:
        return -math.inf
    if den <= _ROUNDING_FLOOR * num:
        return math.inf
    return 10.0 * math.log10(num / den)


def cap_db(value: float) -> float:
    return max(-SI_SNR_CAP_DB, min(SI_SNR_CAP_DB, value))


def mean_si_snr(estimates: Sequence, targets: Sequence) -> float:
    if len(estimates) != len(targets) or not estimates:
        raise ValueError("need equally many, and at least one, estimates and targets")
    return float(np.mean([cap_db(si_snr(e, t)) for e, t in zip(estimates, targets)]))


def _as_batch(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def si_snr_improvements(full_system_out, encdec_only_out, noisy_in, clean) -> tuple[float, float]:
    """``(SI-SNRi_data, SI-SNRi_enc+dec)`` from test-set mean SI-SNRs.

    Each argument is a clip or a list of clips aligned with ``clean``.
    """
    clean = _as_batch(clean)
    full = mean_si_snr(_as_batch(full_system_out), clean)
    encdec = mean_si_snr(_as_batch(encdec_only_out), clean)
    data = mean_si_snr(_as_batch(noisy_in), clean)
    return improvements_from_means(full, encdec, data)


def improvements_from_means(full_db: float, encdec_db: float, data_db: float) -> tuple[float, float]:
    return full_db - data_db, full_db - encdec_db


@dataclass(frozen=True)
class LatencyBreakdown:
    buffer_s: float
    encdec_s: float
    network_s: float

    def __post_init__(self):
        for name in ("buffer_s", "encdec_s", "network_s"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")

    @property
    def total_s(self) -> float:
        return self.buffer_s + self.encdec_s + self.network_s


def buffer_latency(cfg: StftConfig) -> float:
    return cfg.window_length / cfg.sample_rate_hz


def encdec_latency(fn: Callable, inputs: Sequence, runs: int = 100, warmup: int = 1) -> float:
    """Median wall-clock seconds of ``fn(x)`` over ``runs`` calls, cycling through ``inputs``."""
    if runs < 1 or warmup < 1:
        raise ValueError("need at least one warm-up and one timed run")
    inputs = list(inputs) or [None]
    for i in range(warmup):
        fn(inputs[i % len(inputs)])
    times = []
    for i in range(runs):
        x = inputs[i % len(inputs)]
        t0 = time.perf_counter()
        fn(x)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def network_latency(clean, denoised, sample_rate_hz: int | None = None,
                    max_lag_s: float = MAX_NETWORK_LAG_S) -> float:
    """Delay of ``denoised`` behind ``clean`` at the cross-correlation peak, in seconds.

    Only nonnegative lags up to ``max_lag_s`` are searched; ties go to the
    smallest lag.
    """
    if isinstance(clean, AudioClip):
        if isinstance(denoised, AudioClip) and denoised.sample_rate_hz != clean.sample_rate_hz:
            raise ValueError("sample rates differ")
        sample_rate_hz = clean.sample_rate_hz
    if sample_rate_hz is None:
        raise ValueError("sample rate required for raw arrays")
    x, y = _samples(clean), _samples(denoised)
    n = min(len(x), len(y))
    if n < sample_rate_hz:
        raise ValueError("need at least 1 s of overlapping audio")
    x, y = x[:n], y[:n]
    if not np.any(x) or not np.any(y):
        raise ValueError("degenerate input: all-zero signal")
    max_lag = min(int(round(max_lag_s * sample_rate_hz)), n - 1)
    # corr[n - 1 + k] = sum_t y[t + k] * x[t]
    corr = signal.correlate(y, x, mode="full", method="fft")
    window = corr[n - 1 : n + max_lag]
    lag = int(np.argmax(window))
    return lag / sample_rate_hz


def power_proxy(counter: OpsCounter) -> float:
    """Effective SynOPS per second of audio, in M-Ops/s."""
    if counter.audio_seconds <= 0:
        raise ValueError("counter covers zero audio duration")
    return (counter.synops + NEURON_OP_WEIGHT * counter.neuronops) / counter.audio_seconds / 1e6


def pdp_proxy(power_mops_s: float, latency: LatencyBreakdown | float) -> float:
    """Power-delay product in M-Ops."""
    total = latency.total_s if isinstance(latency, LatencyBreakdown) else float(latency)
    if not (math.isfinite(power_mops_s) and math.isfinite(total)):
        raise ValueError("power and latency must be finite")
    return power_mops_s * total


@dataclass(frozen=True)
class Dnsmos:
    ovrl: float | None = None
    sig: float | None = None
    bak: float | None = None


CSV_COLUMNS = [
    "network",
    "si_snr_db",
    "si_snri_data_db",
    "si_snri_encdec_db",
    "dnsmos_ovrl",
    "dnsmos_sig",
    "dnsmos_bak",
    "latency_encdec_ms",
    "latency_total_ms",
    "power_proxy_mops_s",
    "pdp_proxy_mops",
    "param_count_k",
    "model_size_kb",
]


@dataclass(frozen=True)
class EvalReport:
    si_snr_db: float
    si_snri_data_db: float
    si_snri_encdec_db: float
    latency: LatencyBreakdown
    power_proxy_mops_s: float
    param_count: int
    model_size_bytes: int
    pdp_proxy_mops: float | None = None
    dnsmos: Dnsmos = field(default_factory=Dnsmos)
    name: str = "SDNN"
    per_utterance: tuple = ()

    def __post_init__(self):
        expected = pdp_proxy(self.power_proxy_mops_s, self.latency)
        if self.pdp_proxy_mops is None:
            object.__setattr__(self, "pdp_proxy_mops", expected)
        elif not math.isclose(self.pdp_proxy_mops, expected, rel_tol=1e-9, abs_tol=1e-15):
            raise ValueError(f"PDP {self.pdp_proxy_mops} != power x latency = {expected}")

    def consistent(self) -> bool:
        return math.isclose(self.pdp_proxy_mops, pdp_proxy(self.power_proxy_mops_s, self.latency),
                            rel_tol=1e-9, abs_tol=1e-15)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["latency"]["total_s"] = self.latency.total_s
        d["per_utterance"] = list(self.per_utterance)
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        lat = dict(d.pop("latency"))
        lat.pop("total_s", None)
        return cls(latency=LatencyBreakdown(**lat), dnsmos=Dnsmos(**(d.pop("dnsmos") or {})),
                   per_utterance=tuple(d.pop("per_utterance", ())), **d)

    def csv_row(self) -> dict:
        return {
            "network": self.name,
            "si_snr_db": round(self.si_snr_db, 2),
            "si_snri_data_db": round(self.si_snri_data_db, 2),
            "si_snri_encdec_db": round(self.si_snri_encdec_db, 2),
            "dnsmos_ovrl": self.dnsmos.ovrl,
            "dnsmos_sig": self.dnsmos.sig,
            "dnsmos_bak": self.dnsmos.bak,
            "latency_encdec_ms": round(self.latency.encdec_s * 1e3, 3),
            "latency_total_ms": round(self.latency.total_s * 1e3, 3),
            "power_proxy_mops_s": round(self.power_proxy_mops_s, 2),
            "pdp_proxy_mops": round(self.pdp_proxy_mops, 2),
            "param_count_k": round(self.param_count / 1e3),
            "model_size_kb": round(self.model_size_bytes / 1e3),
        }

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        if header:
            w.writeheader()
        w.writerow(self.csv_row())
        return buf.getvalue()

    def table_row(self) -> str:
        r = self.csv_row()
        cells = ["-" if v is None else str(v) for v in r.values()]
        return " | ".join(cells)


@dataclass(frozen=True)
class Qualification:
    passed: bool
    reasons: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.passed


def qualification(report: EvalReport) -> Qualification:
    reasons = []
    if not report.si_snri_data_db > MIN_SI_SNRI_DB:
        reasons.append(f"SI-SNRi_data {report.si_snri_data_db:.2f} dB is not above {MIN_SI_SNRI_DB:g} dB")
    if not report.si_snri_encdec_db > MIN_SI_SNRI_DB:
        reasons.append(f"SI-SNRi_enc+dec {report.si_snri_encdec_db:.2f} dB is not above {MIN_SI_SNRI_DB:g} dB")
    total_ms = report.latency.total_s * 1e3
    # round off float noise so exactly 40 ms summed from parts still passes
    if round(total_ms, 6) > MAX_LATENCY_S * 1e3:
        reasons.append(f"total latency {total_ms:.3f} ms exceeds {MAX_LATENCY_S * 1e3:g} ms")
    return Qualification(not reasons, tuple(reasons))
