"""Tests for detection-event simulation, binning, and extraction."""

import math

import numpy as np
import pytest

import oracles
from pathqrng import events
from pathqrng.qmath import CHANNELS


def make_stream(timestamps, channels, duration_s=1.0, bin_width_us=1.0):
    return events.EventStream(
        np.asarray(timestamps, dtype=np.int64),
        np.asarray(channels, dtype=np.uint8),
        phi=0.0, theta=0.0, duration_s=duration_s,
        bin_width_us=bin_width_us, seed=0,
    )


class TestSimulateEvents:
    def test_zero_rate_gives_empty_stream(self):
        s = events.simulate_events((0.25, 0.25, 0.25, 0.25), rate_hz=0.0, duration_s=1.0)
        assert len(s) == 0
        assert s.timestamps_ns.dtype == np.int64
        assert s.channels.dtype == np.uint8

    def test_degenerate_distribution_fires_one_channel(self):
        s = events.simulate_events((1.0, 0.0, 0.0, 0.0), rate_hz=5e4, duration_s=0.1, seed=3)
        assert len(s) > 0
        assert np.all(s.channels == 0)

    def test_timestamps_are_bin_starts_within_duration(self):
        s = events.simulate_events((0.5, 0.0, 0.0, 0.5), rate_hz=1e5, duration_s=0.01,
                                   bin_width_us=2.0, seed=7)
        assert np.all(s.timestamps_ns % 2000 == 0)
        assert np.all(np.diff(s.timestamps_ns) >= 0)
        assert s.timestamps_ns[-1] < 0.01 * 1e9

    def test_counts_match_binomial_at_120khz(self):
        s = events.simulate_events((0.5, 0.0, 0.0, 0.5), rate_hz=1.2e5, duration_s=1.0, seed=11)
        total = len(s)
        # Poisson(120000) total, then a fair UF/DN split
        assert 120000 - 4 * math.sqrt(120000) < total < 120000 + 4 * math.sqrt(120000)
        lo, hi = oracles.binomial_bounds(total, 0.5)
        n_uf = int(np.sum(s.channels == 0))
        assert lo <= n_uf <= hi
        assert not np.any((s.channels == 1) | (s.channels == 2))

    def test_same_seed_reproduces_stream(self):
        a = events.simulate_events((0.4, 0.1, 0.2, 0.3), 1e5, 0.05, seed=21)
        b = events.simulate_events((0.4, 0.1, 0.2, 0.3), 1e5, 0.05, seed=21)
        c = events.simulate_events((0.4, 0.1, 0.2, 0.3), 1e5, 0.05, seed=22)
        assert np.array_equal(a.timestamps_ns, b.timestamps_ns)
        assert np.array_equal(a.channels, b.channels)
        assert not (np.array_equal(a.timestamps_ns, c.timestamps_ns)
                    and np.array_equal(a.channels, c.channels))

    def test_metadata_is_carried(self):
        s = events.simulate_events((1.0, 0.0, 0.0, 0.0), 1e4, 0.01, seed=5,
                                   phi=-0.576, theta=-1.11)
        assert s.phi == -0.576 and s.theta == -1.11
        assert s.rate_hz == 1e4 and s.seed == 5

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            events.simulate_events((1.0, 0.0, 0.0, 0.0), rate_hz=-1.0, duration_s=1.0)

    def test_saturated_bins_rejected(self):
        with pytest.raises(ValueError, match="< 1"):
            events.simulate_events((1.0, 0.0, 0.0, 0.0), rate_hz=1e6, duration_s=1.0,
                                   bin_width_us=1.0)

    def test_duration_below_one_bin_rejected(self):
        with pytest.raises(ValueError, match="duration"):
            events.simulate_events((1.0, 0.0, 0.0, 0.0), rate_hz=1e3, duration_s=5e-7)

    def test_bad_distribution_rejected(self):
        with pytest.raises(ValueError):
            events.simulate_events((0.9, 0.0, 0.0, 0.3), rate_hz=1e3, duration_s=0.01)
        with pytest.raises(ValueError):
            events.simulate_events((-0.1, 0.5, 0.3, 0.3), rate_hz=1e3, duration_s=0.01)


class TestEventStream:
    def test_mismatched_arrays_rejected(self):
        with pytest.raises(ValueError, match="matching"):
            make_stream([0, 1000], [0])

    def test_decreasing_timestamps_rejected(self):
        with pytest.raises(ValueError, match="non-decreasing"):
            make_stream([2000, 1000], [0, 1])

    def test_timestamp_beyond_duration_rejected(self):
        with pytest.raises(ValueError, match="duration"):
            make_stream([0, 2_000_000_000], [0, 1], duration_s=1.0)

    def test_nonpositive_duration_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            make_stream([], [], duration_s=0.0)
        with pytest.raises(ValueError, match="positive"):
            make_stream([], [], bin_width_us=-1.0)

    def test_meta_fields_coerced(self):
        s = events.EventStream(np.array([0], dtype=np.int64), np.array([2], dtype=np.uint8),
                               phi=np.float64(0.1), theta=0, duration_s=1,
                               bin_width_us=np.int32(1), seed=np.int64(9))
        assert isinstance(s.phi, float) and isinstance(s.duration_s, float)
        assert isinstance(s.seed, int) and s.seed == 9
        assert s.bin_width_ns == 1000

    def test_records_iterator_labels_channels(self):
        s = make_stream([0, 1000, 5000], [0, 3, 1])
        recs = list(s.records())
        assert recs[0] == events.DetectionRecord(0, "UF")
        assert recs[1].channel == "DN" and recs[2].channel == "UN"


class TestBinAndResolve:
    def test_singleton_bins_pass_through(self):
        s = make_stream([0, 1000, 2000, 7000], [0, 3, 1, 2])
        out = events.bin_and_resolve(s)
        assert list(out) == ["UF", "DN", "UN", "DF"]

    def test_empty_stream_gives_empty_outcomes(self):
        s = make_stream([], [])
        assert events.bin_and_resolve(s).size == 0

    def test_fired_ties_split_evenly(self):
        # 20000 bins, each holding one UF and one DN record
        n = 20000
        ts = np.repeat(np.arange(n, dtype=np.int64) * 1000, 2)
        ch = np.tile([0, 3], n)
        out = events.bin_and_resolve(make_stream(ts, ch), tie_seed=40)
        assert out.size == n
        assert set(out) == {"UF", "DN"}
        lo, hi = oracles.binomial_bounds(n, 0.5)
        assert lo <= int(np.sum(out == "UF")) <= hi

    def test_fired_never_invents_channels(self):
        n = 500
        ts = np.repeat(np.arange(n, dtype=np.int64) * 1000, 3)
        ch = np.tile([0, 0, 1], n)
        out = events.bin_and_resolve(make_stream(ts, ch), tie_seed=1)
        assert set(out) <= {"UF", "UN"}

    def test_uniform4_ties_cover_all_channels(self):
        n = 40000
        ts = np.repeat(np.arange(n, dtype=np.int64) * 1000, 2)
        ch = np.tile([0, 3], n)
        out = events.bin_and_resolve(make_stream(ts, ch), tie_seed=2, mode="uniform4")
        lo, hi = oracles.binomial_bounds(n, 0.25)
        for name in CHANNELS:
            assert lo <= int(np.sum(out == name)) <= hi

    def test_tie_seed_determinism(self):
        s = events.simulate_events((0.25, 0.25, 0.25, 0.25), 3e5, 0.05, seed=8)
        a = events.bin_and_resolve(s, tie_seed=5)
        b = events.bin_and_resolve(s, tie_seed=5)
        c = events.bin_and_resolve(s, tie_seed=6)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            events.bin_and_resolve(make_stream([0], [0]), mode="first")


class TestEstimateProbabilities:
    def test_half_half(self):
        p = events.estimate_probabilities(["UF", "UF", "DN", "DN"])
        assert p == {"UF": 0.5, "UN": 0.0, "DF": 0.0, "DN": 0.5}

    def test_single_outcome(self):
        p = events.estimate_probabilities(np.array(["UF"]))
        assert p["UF"] == 1.0 and sum(p.values()) == 1.0

    def test_integer_codes_accepted(self):
        p = events.estimate_probabilities(np.array([0, 1, 1, 3], dtype=np.int64))
        assert p["UN"] == 0.5 and p["DN"] == 0.25

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no outcomes"):
            events.estimate_probabilities([])

    def test_unknown_label_rejected(self):
        with pytest.raises(ValueError, match="unknown channel"):
            events.estimate_probabilities(["UF", "XX"])

    def test_large_sample_recovers_distribution(self):
        d = (0.4, 0.1, 0.2, 0.3)
        s = events.simulate_events(d, 1e5, 1.0, seed=13)
        p = events.estimate_probabilities(s.channels)
        for name, target in zip(CHANNELS, d):
            lo, hi = oracles.binomial_bounds(len(s), target)
            assert lo <= p[name] * len(s) <= hi + 0.5


class TestResolvedDistribution:
    def test_small_mean_reduces_to_input(self):
        d = (0.4, 0.1, 0.2, 0.3)
        for mode in ("fired", "uniform4"):
            out = events.resolved_distribution(d, 1e-6, mode=mode)
            assert np.allclose([out[c] for c in CHANNELS], d, atol=1e-5)

    def test_fired_two_channel_closed_form(self):
        lam = 0.3
        d = (0.5, 0.0, 0.0, 0.5)
        f = -math.expm1(-lam / 2.0)
        occupied = -math.expm1(-lam)
        # UF alone, DN alone, or both fire and the tie splits evenly
        expect_uf = (f * (1.0 - f) + f * f / 2.0) / occupied
        out = events.resolved_distribution(d, lam)
        assert out["UF"] == pytest.approx(expect_uf, abs=1e-14)
        assert out["DN"] == pytest.approx(expect_uf, abs=1e-14)
        assert out["UN"] == 0.0 and out["DF"] == 0.0

    def test_uniform4_closed_form(self):
        lam = 0.5
        single = lam * math.exp(-lam)
        occupied = -math.expm1(-lam)
        multi = occupied - single
        out = events.resolved_distribution((1.0, 0.0, 0.0, 0.0), lam, mode="uniform4")
        assert out["UF"] == pytest.approx((single + multi / 4.0) / occupied, abs=1e-14)
        assert out["DN"] == pytest.approx(multi / 4.0 / occupied, abs=1e-14)

    def test_sums_to_one(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            d = rng.dirichlet(np.ones(4))
            lam = float(rng.uniform(0.01, 0.9))
            for mode in ("fired", "uniform4"):
                out = events.resolved_distribution(d, lam, mode=mode)
                assert sum(out.values()) == pytest.approx(1.0, abs=1e-12)

    def test_matches_monte_carlo(self):
        d = (0.5, 0.2, 0.2, 0.1)
        lam = 0.3
        for mode, seed in (("fired", 31), ("uniform4", 32)):
            target = events.resolved_distribution(d, lam, mode=mode)
            s = events.simulate_events(d, 3e5, 1.0, seed=seed)
            out = events.bin_and_resolve(s, tie_seed=seed, mode=mode)
            n = out.size
            for name in CHANNELS:
                lo, hi = oracles.binomial_bounds(n, target[name])
                assert lo <= int(np.sum(out == name)) <= hi

    def test_bad_inputs_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            events.resolved_distribution((1.0, 0.0, 0.0, 0.0), 0.0)
        with pytest.raises(ValueError, match="mode"):
            events.resolved_distribution((1.0, 0.0, 0.0, 0.0), 0.1, mode="last")
        with pytest.raises(ValueError, match="sum to 1"):
            events.resolved_distribution((0.7, 0.0, 0.0, 0.7), 0.1)


class TestWindowedTraces:
    @staticmethod
    def constant_streams(channel_by_stream, duration_s=1.0, per_window=3):
        streams = []
        window_ns = 50_000_000
        n_win = int(duration_s * 1e9) // window_ns
        for ch in channel_by_stream:
            ts = np.sort(np.concatenate(
                [np.arange(per_window, dtype=np.int64) * 1000 + k * window_ns
                 for k in range(n_win)]))
            streams.append(make_stream(ts, np.full(ts.size, ch), duration_s=duration_s))
        return streams

    def test_window_count_and_shapes(self):
        streams = self.constant_streams([0, 0, 0, 0])
        tr = events.windowed_traces(streams, window_s=0.05)
        assert tr.n_windows == 20
        assert tr.probabilities.shape == (4, 20, 4)
        assert tr.chi_values.shape == (20,)
        assert np.allclose(tr.probabilities.sum(axis=2), 1.0, atol=1e-9)

    def test_constant_streams_give_zero_width_interval(self):
        # all-UF streams pin every correlation at +1, so chi = 2 exactly
        tr = events.windowed_traces(self.constant_streams([0, 0, 0, 0]))
        assert np.allclose(tr.chi_values, 2.0)
        assert tr.chi_mean == pytest.approx(2.0)
        assert tr.ci_low == pytest.approx(2.0) and tr.ci_high == pytest.approx(2.0)

    def test_minus_sign_sits_on_second_setting(self):
        # UN records give E = -1; placing them on stream 1 flips its sign
        tr = events.windowed_traces(self.constant_streams([0, 1, 0, 0]))
        assert tr.chi_mean == pytest.approx(4.0)

    def test_interval_uses_normal_quantile(self):
        rng = np.random.default_rng(23)
        streams = []
        for i in range(4):
            s = events.simulate_events((0.4, 0.1, 0.2, 0.3), 1e5, 1.0, seed=int(rng.integers(1e6)))
            streams.append(s)
        tr = events.windowed_traces(streams, window_s=0.05, confidence=0.99)
        half = 2.5758293035489004 * float(np.std(tr.chi_values, ddof=1)) / math.sqrt(20)
        assert tr.ci_high - tr.chi_mean == pytest.approx(half, rel=1e-12)
        assert tr.chi_mean - tr.ci_low == pytest.approx(half, rel=1e-12)

    def test_too_few_windows_rejected(self):
        streams = self.constant_streams([0, 0, 0, 0], duration_s=0.05)
        with pytest.raises(ValueError, match="two windows"):
            events.windowed_traces(streams, window_s=0.05)

    def test_empty_window_rejected(self):
        good = self.constant_streams([0, 0, 0, 0])
        gap = make_stream([0, 1000, 2000], [0, 0, 0], duration_s=1.0)
        with pytest.raises(ValueError, match="empty"):
            events.windowed_traces([good[0], good[1], good[2], gap])

    def test_stream_count_and_confidence_validated(self):
        streams = self.constant_streams([0, 0, 0, 0])
        with pytest.raises(ValueError, match="four"):
            events.windowed_traces(streams[:3])
        with pytest.raises(ValueError, match="confidence"):
            events.windowed_traces(streams, confidence=1.0)


class TestRawBits:
    def test_channel_codes(self):
        assert events.raw_bits(["UF"]) == "00"
        assert events.raw_bits(["DN", "UN"]) == "1101"
        assert events.raw_bits(np.array([0, 1, 2, 3])) == "00011011"
        assert events.raw_bits([]) == ""

    def test_out_of_range_code_rejected(self):
        with pytest.raises(ValueError, match="0..3"):
            events.raw_bits(np.array([0, 4]))

    def test_length_is_twice_occupied_bins(self):
        s = events.simulate_events((0.25, 0.25, 0.25, 0.25), 3e5, 0.1, seed=41)
        out = events.bin_and_resolve(s, tie_seed=41)
        bits = events.raw_bits(out)
        occupied = np.unique(s.timestamps_ns // s.bin_width_ns).size
        assert len(bits) == 2 * occupied


class TestToeplitzExtract:
    @staticmethod
    def random_bits(n, seed):
        rng = np.random.default_rng(seed)
        return "".join("1" if b else "0" for b in rng.integers(0, 2, size=n))

    def test_output_length(self):
        bits = self.random_bits(512, 1)
        out = events.toeplitz_extract(bits, 0.33, seed=3)
        # floor(256 * 0.33) - 2 * 32
        assert len(out) == 20

    def test_matches_row_by_row_multiplication(self):
        bits = self.random_bits(512, 2)
        out = events.toeplitz_extract(bits, 0.33, seed=3)
        x = np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
        rows = oracles.toeplitz_rows_extract(x.astype(np.int64), len(out), seed=3)
        assert out == "".join(str(int(b)) for b in rows)

    def test_longer_block_matches_oracle(self):
        bits = self.random_bits(2000, 5)
        out = events.toeplitz_extract(bits, 0.5, seed=11)
        assert len(out) == 436
        x = np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
        rows = oracles.toeplitz_rows_extract(x.astype(np.int64), 436, seed=11)
        assert out == "".join(str(int(b)) for b in rows)

    def test_seed_determinism(self):
        bits = self.random_bits(1024, 7)
        assert events.toeplitz_extract(bits, 0.33, seed=4) == \
            events.toeplitz_extract(bits, 0.33, seed=4)
        assert events.toeplitz_extract(bits, 0.33, seed=4) != \
            events.toeplitz_extract(bits, 0.33, seed=5)

    def test_hash_is_linear_over_xor(self):
        rng = np.random.default_rng(9)
        x = rng.integers(0, 2, size=512)
        y = rng.integers(0, 2, size=512)
        as_str = lambda a: "".join(str(int(b)) for b in a)
        hx = events.toeplitz_extract(as_str(x), 0.5, seed=6)
        hy = events.toeplitz_extract(as_str(y), 0.5, seed=6)
        hxy = events.toeplitz_extract(as_str(x ^ y), 0.5, seed=6)
        assert hxy == as_str(np.array([int(a) ^ int(b) for a, b in zip(hx, hy)]))

    def test_insufficient_entropy_rejected(self):
        with pytest.raises(ValueError, match="insufficient"):
            events.toeplitz_extract(self.random_bits(128, 3), 0.33)

    def test_parameters_validated(self):
        bits = self.random_bits(512, 4)
        with pytest.raises(ValueError, match="entropy per event"):
            events.toeplitz_extract(bits, 0.0)
        with pytest.raises(ValueError, match="entropy per event"):
            events.toeplitz_extract(bits, 1.5)
        with pytest.raises(ValueError, match="security"):
            events.toeplitz_extract(bits, 0.5, security_eps=1.0)
        with pytest.raises(ValueError, match="0/1"):
            events.toeplitz_extract("0102", 0.5)


class TestPipeline:
    def test_simulate_resolve_estimate_consistency(self):
        d = (0.4, 0.1, 0.2, 0.3)
        s = events.simulate_events(d, 1.2e5, 1.0, seed=53)
        out = events.bin_and_resolve(s, tie_seed=53)
        target = events.resolved_distribution(d, 0.12)
        est = events.estimate_probabilities(out)
        n = out.size
        for name in CHANNELS:
            lo, hi = oracles.binomial_bounds(n, target[name])
            assert lo <= est[name] * n <= hi + 0.5
