import json
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndns.audio_io import AudioClip
from ndns.metrics import (
    CSV_COLUMNS,
    Dnsmos,
    EvalReport,
    LatencyBreakdown,
    buffer_latency,
    cap_db,
    encdec_latency,
    improvements_from_means,
    mean_si_snr,
    network_latency,
    pdp_proxy,
    power_proxy,
    qualification,
    si_snr,
    si_snr_improvements,
)
from ndns.sdnn import OpsCounter
from ndns.stft_codec import StftConfig

from helpers import brute_force_si_snr


def report(si_data=4.88, si_enc=4.88, buffer=0.032, encdec=0.000036, network=0.0, power=14.54):
    return EvalReport(12.5, si_data, si_enc, LatencyBreakdown(buffer, encdec, network), power, 525312, 465000)


class TestSiSnr:
    def test_orthogonal_equal_energy_is_zero_db(self):
        s = np.array([1.0, -1.0, 1.0, -1.0])
        n = np.array([1.0, 1.0, -1.0, -1.0])
        assert si_snr(s + n, s) == pytest.approx(0.0, abs=1e-12)

    def test_scaled_copy_is_infinite(self):
        s = np.array([0.3, -0.2, 0.5, 0.1])
        assert si_snr(3.0 * s, s) == math.inf

    def test_zero_estimate_is_minus_infinity(self):
        assert si_snr(np.zeros(4), np.array([1.0, -1.0, 2.0, 0.0])) == -math.inf

    @pytest.mark.parametrize("alpha", [0.5, 2.0, 10.0])
    def test_scale_examples(self, rng, alpha):
        s, e = rng.standard_normal(500), rng.standard_normal(500)
        assert si_snr(alpha * e, s) == pytest.approx(si_snr(e, s), abs=1e-9)

    def test_matches_brute_force(self, rng):
        for _ in range(20):
            s = rng.standard_normal(1000)
            e = s + rng.uniform(0.1, 3) * rng.standard_normal(1000) + rng.normal()
            assert abs(si_snr(e, s) - brute_force_si_snr(e.tolist(), s.tolist())) < 1e-9

    def test_dc_offset_ignored(self, rng):
        s, e = rng.standard_normal(300), rng.standard_normal(300)
        assert si_snr(e + 5.0, s - 2.0) == pytest.approx(si_snr(e, s), abs=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            si_snr(np.ones(3), np.ones(4))

    def test_silent_target(self):
        with pytest.raises(ValueError):
            si_snr(np.ones(4), np.zeros(4))

    def test_constant_target_is_silent_after_mean_removal(self):
        with pytest.raises(ValueError):
            si_snr(np.arange(4.0), np.full(4, 2.0))

    def test_rate_mismatch(self):
        with pytest.raises(ValueError):
            si_snr(AudioClip(np.ones(4), 8000), AudioClip(np.arange(4.0), 16000))

    def test_cap(self):
        assert cap_db(math.inf) == 300.0 and cap_db(-math.inf) == -300.0 and cap_db(12.0) == 12.0

    def test_mean_over_batch_caps(self):
        s = np.array([1.0, -1.0, 1.0, -1.0])
        n = np.array([1.0, 1.0, -1.0, -1.0])
        assert mean_si_snr([s, s + n], [s, s]) == pytest.approx(150.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_scale_invariance_property(seed, alpha):
    r = np.random.default_rng(seed)
    s, e = r.standard_normal(256), r.standard_normal(256)
    assert abs(si_snr(alpha * e, s) - si_snr(e, s)) < 1e-9


class TestImprovements:
    def test_table_values(self):
        data, encdec = improvements_from_means(12.50, 12.50 - 4.88, 7.62)
        assert data == pytest.approx(4.88, abs=1e-12)
        assert encdec == pytest.approx(4.88, abs=1e-12)

    def test_identical_encdec_gives_zero(self, rng):
        s = rng.standard_normal(400)
        out = s + 0.1 * rng.standard_normal(400)
        noisy = s + rng.standard_normal(400)
        _, enc = si_snr_improvements(out, out, noisy, s)
        assert enc == 0.0

    def test_lossless_codec_gives_equal_improvements(self, rng):
        s = rng.standard_normal(400)
        noisy = s + rng.standard_normal(400)
        out = s + 0.2 * rng.standard_normal(400)
        data, enc = si_snr_improvements(out, noisy, noisy, s)
        assert data == enc

    def test_batches_are_averaged(self, rng):
        clean = [rng.standard_normal(300) for _ in range(3)]
        noisy = [c + rng.standard_normal(300) for c in clean]
        out = [c + 0.3 * rng.standard_normal(300) for c in clean]
        data, _ = si_snr_improvements(out, noisy, noisy, clean)
        expected = np.mean([si_snr(o, c) for o, c in zip(out, clean)]) - np.mean([si_snr(n, c) for n, c in zip(noisy, clean)])
        assert data == pytest.approx(expected, abs=1e-12)


class TestLatency:
    @pytest.mark.parametrize("win,rate,expected", [(512, 16000, 0.032), (256, 16000, 0.016), (480, 48000, 0.010)])
    def test_buffer(self, win, rate, expected):
        assert buffer_latency(StftConfig(win, win // 4, sample_rate_hz=rate)) == pytest.approx(expected, abs=1e-15)

    def test_sleep_stub(self):
        t = encdec_latency(lambda _: time.sleep(0.001), [None], runs=100, warmup=1)
        assert 0.001 <= t <= 0.002

    def test_zero_work_stub(self):
        assert encdec_latency(lambda _: None, [None]) < 1e-4

    def test_needs_warmup(self):
        with pytest.raises(ValueError):
            encdec_latency(lambda _: None, [None], warmup=0)

    def test_value_feeds_breakdown_verbatim(self):
        t = encdec_latency(lambda _: None, [None])
        assert LatencyBreakdown(0.032, t, 0.0).encdec_s == t

    def test_total_is_sum(self):
        lat = LatencyBreakdown(0.032, 0.000036, 0.0)
        assert lat.total_s * 1e3 == pytest.approx(32.036, abs=1e-9)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LatencyBreakdown(-0.001, 0.0, 0.0)

    def test_network_latency_known_shift(self, rng):
        x = rng.standard_normal(32000)
        y = np.concatenate([np.zeros(256), x[:-256]])
        assert network_latency(AudioClip(x), AudioClip(y)) == 0.016

    def test_network_latency_no_shift(self, rng):
        x = rng.standard_normal(16000)
        assert network_latency(AudioClip(x), AudioClip(x)) == 0.0

    def test_negative_lags_not_searched(self, rng):
        x = rng.standard_normal(20000)
        y = x[100:]
        lag = network_latency(AudioClip(x[:-100]), AudioClip(y))
        assert lag >= 0.0

    def test_degenerate_input(self):
        with pytest.raises(ValueError):
            network_latency(AudioClip(np.zeros(16000)), AudioClip(np.ones(16000)))

    def test_too_short(self, rng):
        with pytest.raises(ValueError):
            network_latency(AudioClip(rng.standard_normal(8000)), AudioClip(rng.standard_normal(8000)))

    def test_bounded_search(self, rng):
        x = rng.standard_normal(40000)
        y = np.concatenate([np.zeros(3200), x[:-3200]])  # 200 ms, beyond the search range
        assert network_latency(AudioClip(x), AudioClip(y)) <= 0.1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 600), st.integers(1, 400))
def test_network_latency_shift_equivariant(seed, base, k):
    r = np.random.default_rng(seed)
    x = r.standard_normal(20000)

    def delayed(n):
        return np.concatenate([np.zeros(n), x[: len(x) - n]])

    a = network_latency(x, delayed(base), 16000)
    b = network_latency(x, delayed(base + k), 16000)
    assert round((b - a) * 16000) == k


class TestPower:
    def test_eq6_arithmetic(self):
        c = OpsCounter(synops=100_000_000, neuronops=10_000_000, steps=125, timestep_s=0.008)
        assert power_proxy(c) == pytest.approx(200.0)

    def test_zero_ops(self):
        assert power_proxy(OpsCounter(0, 0, 10)) == 0.0

    def test_duration_invariance(self):
        a = OpsCounter(1000, 50, 10)
        b = OpsCounter(2000, 100, 20)
        assert power_proxy(a) == pytest.approx(power_proxy(b), rel=1e-15)

    def test_zero_duration(self):
        with pytest.raises(ValueError):
            power_proxy(OpsCounter(1, 1, 0))

    def test_pdp_table_row(self):
        assert abs(pdp_proxy(136.13, 0.020024) - 2.72) < 0.01
        assert pdp_proxy(136.13, 0.020024) == pytest.approx(2.7258, abs=1e-4)

    def test_pdp_zero_power(self):
        assert pdp_proxy(0.0, LatencyBreakdown(0.032, 0.0, 0.0)) == 0.0

    def test_pdp_halves_with_latency(self):
        assert pdp_proxy(10.0, 0.01) == 2 * pdp_proxy(10.0, 0.005)

    def test_pdp_non_finite(self):
        with pytest.raises(ValueError):
            pdp_proxy(math.inf, 0.01)


class TestQualification:
    def test_baseline_row_passes(self):
        assert qualification(report()).passed

    def test_low_data_improvement(self):
        q = qualification(report(si_data=2.9))
        assert not q.passed and len(q.reasons) == 1 and "SI-SNRi_data" in q.reasons[0]

    def test_latency_41ms(self):
        q = qualification(report(encdec=0.009))
        assert not q.passed and "latency" in q.reasons[0]

    def test_exactly_40ms_passes(self):
        assert qualification(report(buffer=0.032, encdec=0.004, network=0.004)).passed

    def test_all_gates_listed(self):
        q = qualification(report(si_data=0.0, si_enc=0.0, network=0.02))
        assert len(q.reasons) == 3

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 0.03), st.floats(0, 5), st.floats(0, 5), st.floats(0, 0.01))
    def test_monotone(self, d, e, net, dd, de, dl):
        before = qualification(report(si_data=d, si_enc=e, network=net))
        after = qualification(report(si_data=d + dd, si_enc=e + de, network=max(net - dl, 0.0)))
        assert not (before.passed and not after.passed)


class TestReport:
    def test_pdp_computed_and_consistent(self):
        r = report()
        assert r.pdp_proxy_mops == pytest.approx(14.54 * 0.032036)
        assert r.consistent()

    def test_inconsistent_pdp_rejected(self):
        with pytest.raises(ValueError):
            EvalReport(1, 1, 1, LatencyBreakdown(0.032, 0, 0), 14.54, 1, 1, pdp_proxy_mops=0.44)

    def test_json_round_trip(self):
        r = EvalReport(12.5, 4.88, 4.88, LatencyBreakdown(0.032, 3.6e-5, 0.0), 14.54, 525312, 465000,
                       dnsmos=Dnsmos(2.71, 3.21, 3.46), per_utterance=({"index": 0, "si_snr_db": 1.0},))
        back = EvalReport.from_dict(json.loads(r.to_json()))
        assert back == r

    def test_csv_header_order(self):
        header = report().to_csv().splitlines()[0].split(",")
        assert header == CSV_COLUMNS
        assert header[:4] == ["network", "si_snr_db", "si_snri_data_db", "si_snri_encdec_db"]
        assert header[-2:] == ["param_count_k", "model_size_kb"]

    def test_csv_row_values(self):
        row = report().csv_row()
        assert row["latency_total_ms"] == 32.036
        assert row["param_count_k"] == 525
        assert row["dnsmos_ovrl"] is None

    def test_dnsmos_blank_in_csv(self):
        line = report().to_csv().splitlines()[1].split(",")
        assert line[4:7] == ["", "", ""]
