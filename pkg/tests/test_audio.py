import io

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.io import wavfile

from pitchforge.audio import (
    AudioBuffer,
    AudioError,
    FrameGrid,
    LOG_FLOOR,
    MEL_BANDS,
    load_audio,
    lowpass_render,
    mcep_extract,
    mulaw_decode,
    mulaw_encode,
    save_wav,
    wav_bytes,
)
from synthutil import rms, sine, snr_db


def wav_blob(samples: np.ndarray, sr: int) -> bytes:
    buf = io.BytesIO()
    wavfile.write(buf, sr, samples)
    return buf.getvalue()


def mulaw_inverse(companded: np.ndarray, levels: int = 1024) -> np.ndarray:
    """Closed-form inverse compander, used as the round-trip oracle."""
    mu = levels - 1
    return np.sign(companded) * (np.power(1.0 + mu, np.abs(companded)) - 1.0) / mu


class TestLoadAudio:
    def test_mono_16bit_no_resample(self):
        pcm = (np.sin(2 * np.pi * 440 * np.arange(16000) / 16000) * 20000).astype(np.int16)
        audio = load_audio(wav_blob(pcm, 16000), target_rate=16000)
        assert len(audio) == 16000
        assert audio.sample_rate == 16000

    def test_stereo_48k_resamples_with_high_snr(self):
        n = 24000  # 0.5 s at 48 kHz
        x = np.sin(2 * np.pi * 1000 * np.arange(n) / 48000)
        stereo = (np.stack([x, x], axis=1) * 20000).astype(np.int16)
        audio = load_audio(wav_blob(stereo, 48000), target_rate=16000)
        assert len(audio) == 8000
        reference = (20000 / 32768.0) * np.sin(2 * np.pi * 1000 * np.arange(8000) / 16000)
        # skip resampler edge transients
        assert snr_db(reference[200:-200], audio.samples[200:-200]) >= 40.0

    def test_empty_payload_rejected(self):
        with pytest.raises(AudioError):
            load_audio(wav_blob(np.zeros(0, dtype=np.int16), 16000))

    def test_malformed_header_rejected(self):
        with pytest.raises(AudioError):
            load_audio(b"definitely not RIFF data")

    def test_float32_inputs_accepted(self):
        x = (0.25 * np.sin(2 * np.pi * 220 * np.arange(8000) / 16000)).astype(np.float32)
        audio = load_audio(wav_blob(x, 16000))
        assert snr_db(x.astype(np.float64), audio.samples) > 80.0

    def test_own_writer_round_trip_is_bit_exact(self):
        audio = sine(330, 0.25)
        again = load_audio(wav_bytes(audio))
        final = load_audio(wav_bytes(again))
        assert np.array_equal(again.samples, final.samples)


class TestFrameGrid:
    def test_hop_is_exact_at_canonical_rate(self):
        grid = FrameGrid.for_audio(sine(100, 1.0))
        assert grid.hop == 160
        assert grid.frame_count == 100


class TestMulaw:
    def test_zero_maps_to_midpoint(self):
        assert mulaw_encode(0.0) == 512

    def test_range_endpoints(self):
        assert mulaw_encode(1.0) == 1023
        assert mulaw_encode(-1.0) == 0

    def test_round_trip_near_point_three(self):
        assert abs(mulaw_decode(mulaw_encode(0.3)) - 0.3) < 0.01

    def test_level_midpoint_decodes_near_zero(self):
        # half of the smallest companded step, from the closed-form inverse
        half_step = mulaw_inverse(np.array(2.0 / 1024)) / 2.0
        assert abs(mulaw_decode(512)) <= half_step

    def test_extreme_levels_decode_near_full_scale(self):
        assert 0.99 < mulaw_decode(1023) <= 1.0
        assert -1.0 <= mulaw_decode(0) < -0.99

    def test_non_finite_rejected(self):
        with pytest.raises(AudioError):
            mulaw_encode(float("nan"))

    def test_out_of_range_level_rejected(self):
        with pytest.raises(AudioError):
            mulaw_decode(1024)

    def test_round_trip_error_bounded_by_local_step(self):
        rng = np.random.default_rng(1234)
        x = rng.uniform(-1, 1, size=1000)
        levels = mulaw_encode(x)
        decoded = mulaw_decode(levels)
        lo = mulaw_inverse(2.0 * levels / 1024 - 1.0)
        hi = mulaw_inverse(2.0 * (levels + 1) / 1024 - 1.0)
        assert np.all(np.abs(decoded - x) <= (hi - lo) + 1e-12)

    @given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
    def test_encode_monotone(self, a, b):
        lo, hi = sorted([a, b])
        assert mulaw_encode(lo) <= mulaw_encode(hi)


class TestMcep:
    def test_silence_concentrates_in_coefficient_zero(self):
        audio = AudioBuffer(samples=np.zeros(16000), sample_rate=16000)
        coeffs = mcep_extract(audio, FrameGrid.for_audio(audio))
        # DCT-II (ortho) of a constant vector: c0 = value * sqrt(N), rest 0
        expected_c0 = np.log(LOG_FLOOR) * np.sqrt(MEL_BANDS)
        assert np.allclose(coeffs[:, 0], expected_c0)
        assert np.allclose(coeffs[:, 1:], 0.0)
        assert np.allclose(coeffs, coeffs[0])

    def test_output_shape(self):
        audio = sine(200, 0.5)
        coeffs = mcep_extract(audio, FrameGrid.for_audio(audio))
        assert coeffs.shape == (50, 21)

    def test_half_amplitude_shifts_only_coefficient_zero(self):
        rng = np.random.default_rng(7)
        noise = rng.uniform(-0.9, 0.9, 16000)
        grid = FrameGrid(frame_count=100)
        full = mcep_extract(AudioBuffer(samples=noise, sample_rate=16000), grid)
        half = mcep_extract(AudioBuffer(samples=noise / 2, sample_rate=16000), grid)
        shift = np.log(0.5) * np.sqrt(MEL_BANDS)
        c0_delta = half[:, 0] - full[:, 0]
        assert np.all(np.abs(c0_delta - shift) <= 0.1 * abs(shift))
        denom = np.maximum(np.abs(full[:, 1:]), 1e-3)
        assert np.all(np.abs(half[:, 1:] - full[:, 1:]) / denom <= 0.1)

    def test_too_short_audio_rejected(self):
        with pytest.raises(AudioError):
            mcep_extract(sine(200, 0.01), FrameGrid(frame_count=1))


class TestLowpass:
    def interior(self, x: np.ndarray) -> np.ndarray:
        return x[4000:-4000]

    def test_passband_preserves_rms(self):
        audio = sine(100, 2.0)
        out = lowpass_render(audio, 300.0)
        ratio_db = 20 * np.log10(rms(self.interior(out.samples)) / rms(self.interior(audio.samples)))
        assert abs(ratio_db) <= 0.5

    def test_stopband_attenuates_60db(self):
        audio = sine(2000, 2.0)
        out = lowpass_render(audio, 300.0)
        drop_db = 20 * np.log10(rms(self.interior(audio.samples)) / (rms(self.interior(out.samples)) + 1e-300))
        assert drop_db >= 60.0

    def test_near_nyquist_cutoff_is_near_identity(self):
        audio = sine(1000, 1.0)  # band-limited well below Nyquist
        out = lowpass_render(audio, 0.999 * 8000)
        assert snr_db(self.interior(audio.samples), self.interior(out.samples)) >= 40.0

    def test_cutoff_out_of_range_rejected(self):
        audio = sine(100, 0.5)
        with pytest.raises(AudioError):
            lowpass_render(audio, 0.0)
        with pytest.raises(AudioError):
            lowpass_render(audio, 8000.0)

    def test_idempotent_within_tolerance(self):
        audio = sine(150, 1.0)
        once = lowpass_render(audio, 400.0)
        twice = lowpass_render(once, 400.0)
        assert rms(once.samples - twice.samples) <= 1e-3

    def test_output_length_matches_input(self):
        audio = sine(100, 0.7)
        assert len(lowpass_render(audio, 500.0)) == len(audio)


class TestWavRoundTrip:
    def test_save_then_load_16bit_is_bit_exact(self, tmp_path):
        audio = load_audio(wav_bytes(sine(123, 0.3)))
        path = tmp_path / "x.wav"
        save_wav(audio, path)
        again = load_audio(path)
        assert np.array_equal(audio.samples, again.samples)
