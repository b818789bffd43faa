import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import resample_poly

from pitchforge.audio import AudioBuffer, FrameGrid
from pitchforge.pitch import (
    F0Contour,
    PitchError,
    Posteriorgram,
    analyze,
    bin_to_hz,
    brute_force_decode,
    candidate_posteriorgram,
    export_posteriorgram,
    hz_to_bin_float,
    ingest_posteriorgram,
    speaker_stats,
    viterbi_decode,
    vuv_from_confidence,
)
from synthutil import cents, sine, vowel, vowel_with_gap


def random_posteriorgram(rng, n_frames, n_bins, cents_per_bin=20.0) -> Posteriorgram:
    return Posteriorgram(values=rng.uniform(0.01, 1.0, size=(n_frames, n_bins)), cents_per_bin=cents_per_bin)


def hysteresis_oracle(conf, t_high, t_low):
    """Flood fill outward from every seed frame with conf >= t_high."""
    conf = np.asarray(conf, dtype=float)
    voiced = np.zeros(len(conf), dtype=bool)
    for seed in np.nonzero(conf >= t_high)[0]:
        i = seed
        while i >= 0 and conf[i] >= t_low:
            voiced[i] = True
            i -= 1
        i = seed + 1
        while i < len(conf) and conf[i] >= t_low:
            voiced[i] = True
            i += 1
    return voiced


class TestCandidatePosteriorgram:
    def test_pure_sine_peaks_at_expected_bin(self):
        post, conf = candidate_posteriorgram(sine(110, 1.0))
        expected = round(float(hz_to_bin_float(110.0)))
        assert expected == 105
        peaks = post.values[5:-10].argmax(axis=1)
        assert np.all(np.abs(peaks - expected) <= 1)
        assert np.all(conf[5:-10] >= 0.9)

    def test_white_noise_has_low_confidence(self):
        rng = np.random.default_rng(42)
        audio = AudioBuffer(samples=rng.uniform(-0.5, 0.5, 16000), sample_rate=16000)
        _, conf = candidate_posteriorgram(audio)
        assert conf.mean() <= 0.5

    def test_silence_has_zero_confidence(self):
        audio = AudioBuffer(samples=np.zeros(16000), sample_rate=16000)
        post, conf = candidate_posteriorgram(audio)
        assert np.all(conf == 0.0)
        assert np.allclose(post.values.sum(axis=1), 1.0)

    def test_short_audio_rejected(self):
        with pytest.raises(PitchError):
            candidate_posteriorgram(sine(200, 0.01))


class TestPosteriorgramFile:
    def test_round_trip(self):
        rng = np.random.default_rng(3)
        post = random_posteriorgram(rng, 5, 360)
        conf = rng.uniform(0, 1, 5)
        buf = io.BytesIO()
        export_posteriorgram(buf, post, conf)
        buf.seek(0)
        loaded, conf2 = ingest_posteriorgram(buf)
        assert loaded.n_frames == 5 and loaded.n_bins == 360
        assert np.max(np.abs(loaded.values - post.values)) < 1e-6
        assert np.max(np.abs(conf2 - conf)) < 1e-6

    def test_small_valid_file(self, tmp_path):
        rng = np.random.default_rng(4)
        path = tmp_path / "p.pgrm"
        export_posteriorgram(path, random_posteriorgram(rng, 3, 360), np.ones(3) * 0.5)
        loaded, _ = ingest_posteriorgram(path)
        assert loaded.n_frames == 3

    def test_zero_row_rejected(self):
        values = np.ones((3, 8), dtype="<f4")
        values[1] = 0.0
        import struct

        raw = b"PGRM" + struct.pack("<IIff", 3, 8, 32.7, 20.0) + values.tobytes() + np.zeros(3, "<f4").tobytes()
        with pytest.raises(PitchError, match="degenerate"):
            ingest_posteriorgram(io.BytesIO(raw))

    def test_truncated_rejected(self):
        rng = np.random.default_rng(5)
        buf = io.BytesIO()
        export_posteriorgram(buf, random_posteriorgram(rng, 4, 16), np.ones(4))
        raw = buf.getvalue()[:-10]
        with pytest.raises(PitchError, match="truncated"):
            ingest_posteriorgram(io.BytesIO(raw))

    def test_bad_magic_rejected(self):
        with pytest.raises(PitchError, match="magic"):
            ingest_posteriorgram(io.BytesIO(b"XXXX" + b"\0" * 64))


class TestViterbi:
    def test_single_frame_is_argmax(self):
        rng = np.random.default_rng(6)
        post = random_posteriorgram(rng, 1, 30)
        assert viterbi_decode(post)[0] == int(np.argmax(post.values[0]))

    def test_matches_brute_force_small(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            n_frames = int(rng.integers(1, 7))
            n_bins = int(rng.integers(2, 13))
            post = random_posteriorgram(rng, n_frames, n_bins)
            assert np.array_equal(viterbi_decode(post), brute_force_decode(post))

    def test_matches_brute_force_large_instance(self):
        rng = np.random.default_rng(8)
        post = random_posteriorgram(rng, 8, 15)
        assert np.array_equal(viterbi_decode(post), brute_force_decode(post))

    def test_split_oracle_agrees_with_direct_enumeration(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            post = random_posteriorgram(rng, int(rng.integers(2, 7)), int(rng.integers(2, 9)))
            direct = brute_force_decode(post)
            split = brute_force_decode(post, max_direct_paths=1)
            assert np.array_equal(direct, split)

    def test_forbidden_jump_never_taken(self):
        # unit masses 14 bins apart (280 cents): a direct jump has zero
        # transition probability, so the decoder must detour
        values = np.full((2, 15), 1e-9)
        values[0, 0] = 1.0
        values[1, 14] = 1.0
        post = Posteriorgram(values=values)
        path = viterbi_decode(post)
        assert abs(path[1] - path[0]) <= 12
        assert np.array_equal(path, brute_force_decode(post))

    def test_jump_cap_property(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            post = random_posteriorgram(rng, int(rng.integers(2, 30)), 360)
            path = viterbi_decode(post)
            assert np.max(np.abs(np.diff(path))) <= 12


class TestVuv:
    def test_all_high(self):
        assert np.all(vuv_from_confidence(np.full(5, 0.9), 0.6, 0.4))

    def test_all_low(self):
        assert not np.any(vuv_from_confidence(np.full(5, 0.1), 0.6, 0.4))

    def test_spec_pattern(self):
        conf = np.array([0.5, 0.7, 0.5, 0.3, 0.5])
        expected = np.array([True, True, True, False, False])
        assert np.array_equal(vuv_from_confidence(conf, 0.6, 0.4), expected)

    def test_ordering_violation_rejected(self):
        with pytest.raises(PitchError):
            vuv_from_confidence(np.ones(3), 0.4, 0.6)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0, 1), st.floats(0, 1))
    def test_matches_flood_fill_oracle(self, conf, a, b):
        t_low, t_high = sorted([a, b])
        got = vuv_from_confidence(np.array(conf), t_high, t_low)
        assert np.array_equal(got, hysteresis_oracle(conf, t_high, t_low))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0, 1))
    def test_equal_thresholds_reduce_to_simple_threshold(self, conf, t):
        got = vuv_from_confidence(np.array(conf), t, t)
        assert np.array_equal(got, np.asarray(conf) >= t)


class TestSpeakerStats:
    def test_constant_contour_hits_sigma_floor(self):
        contour = F0Contour(hz=np.full(50, 200.0), voiced=np.ones(50, dtype=bool))
        stats = speaker_stats([contour])
        assert stats.mu == pytest.approx(np.log2(200.0))
        assert stats.sigma == 0.05
        assert stats.frame_count == 50

    def test_two_point_distribution(self):
        hz = np.array([100.0] * 10 + [400.0] * 10)
        contour = F0Contour(hz=hz, voiced=np.ones(20, dtype=bool))
        stats = speaker_stats([contour])
        assert stats.mu == pytest.approx(np.log2(200.0))
        assert stats.sigma == pytest.approx(1.0)

    def test_no_voiced_frames_rejected(self):
        contour = F0Contour(hz=np.ones(5), voiced=np.zeros(5, dtype=bool))
        with pytest.raises(PitchError):
            speaker_stats([contour])
        with pytest.raises(PitchError):
            speaker_stats([])


class TestAnalyze:
    def test_steady_vowel(self):
        contour = analyze(vowel(200.0, 1.0))
        interior = slice(5, len(contour) - 10)
        voiced = contour.voiced[interior]
        assert voiced.mean() >= 0.9
        hz = contour.hz[interior][voiced]
        assert np.all(cents(hz, 200.0) <= 20.0)

    def test_silence_is_unvoiced(self):
        audio = AudioBuffer(samples=np.zeros(16000), sample_rate=16000)
        contour = analyze(audio)
        assert not np.any(contour.voiced)

    def test_gap_is_unvoiced(self):
        contour = analyze(vowel_with_gap(200.0, 1.2, gap_start=0.5, gap_len=0.2))
        grid = FrameGrid(frame_count=len(contour))
        # gap frames, excluding analysis-window bleed at the edges
        gap = slice(int(0.57 / grid.hop_seconds), int(0.62 / grid.hop_seconds))
        tone_a = slice(5, int(0.40 / grid.hop_seconds))
        tone_b = slice(int(0.78 / grid.hop_seconds), len(contour) - 10)
        assert not np.any(contour.voiced[gap])
        assert contour.voiced[tone_a].mean() >= 0.9
        assert contour.voiced[tone_b].mean() >= 0.9

    def test_resampled_copy_scales_hz(self):
        base = vowel(220.0, 1.0)
        shifted = AudioBuffer(samples=resample_poly(base.samples, 6, 5), sample_rate=16000)
        ratio = 5.0 / 6.0
        contour = analyze(shifted)
        interior = slice(5, len(contour) - 10)
        hz = contour.hz[interior][contour.voiced[interior]]
        assert np.median(cents(hz, 220.0 * ratio)) <= 20.0


class TestBinMath:
    def test_bin_to_hz_round_trip(self):
        bins = np.arange(0, 360, 17)
        assert np.allclose(hz_to_bin_float(bin_to_hz(bins)), bins)
