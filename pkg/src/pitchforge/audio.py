"""Audio ingestion, framing, mu-law companding, mel-cepstra and low-pass filtering.

Everything downstream works at a canonical 16 kHz mono rate with a 10 ms hop,
which makes one frame exactly 160 samples.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.fft import dct, rfft
from scipy.io import wavfile

CANONICAL_RATE = 16000
HOP_SECONDS = 0.010

# 16-bit PCM scale. Load divides by this, save multiplies by it, so a
# save/load cycle is bit-exact for int16 payloads.
_PCM16_SCALE = 32768.0

MCEP_ORDER = 21
MCEP_WINDOW_SECONDS = 0.025
MEL_BANDS = 80
LOG_FLOOR = 1e-10


class AudioError(ValueError):
    """Malformed, unsupported, or out-of-contract audio input."""


@dataclass(frozen=True)
class AudioBuffer:
    """Mono waveform with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"expected mono samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise AudioError("non-finite sample values")
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameGrid:
    """10 ms analysis grid. Frame t covers samples [t*hop, t*hop + window)."""

    frame_count: int
    sample_rate: int = CANONICAL_RATE
    hop_seconds: float = HOP_SECONDS

    def __post_init__(self):
        if self.frame_count < 0:
            raise ValueError("frame_count must be >= 0")
        if abs(self.hop * (1.0 / self.hop_seconds) - self.sample_rate) > 1e-6:
            raise ValueError(
                f"hop of {self.hop_seconds}s is not integer at {self.sample_rate} Hz"
            )

    @property
    def hop(self) -> int:
        return int(round(self.hop_seconds * self.sample_rate))

    @classmethod
    def for_audio(cls, audio: AudioBuffer) -> "FrameGrid":
        hop = int(round(HOP_SECONDS * audio.sample_rate))
        return cls(frame_count=len(audio) // hop, sample_rate=audio.sample_rate)

    def frame_center(self, t: int) -> float:
        """Center time (seconds) of frame t, used for alignment sampling."""
        return (t + 0.5) * self.hop_seconds

    def frame_of_sample(self, s: int) -> int:
        return min(max(s // self.hop, 0), self.frame_count - 1)


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype == np.int16:
        return data.astype(np.float64) / _PCM16_SCALE
    if data.dtype == np.int32:
        # scipy widens 24-bit PCM into the upper bytes of int32
        return data.astype(np.float64) / 2147483648.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise AudioError(f"unsupported WAV sample format {data.dtype}")


def load_audio(source, target_rate: int = CANONICAL_RATE) -> AudioBuffer:
    """Read a RIFF/WAV file or byte stream into a mono AudioBuffer.

    Channels are averaged, amplitudes clamped to [-1, 1], and the waveform
    resampled to ``target_rate`` with a polyphase band-limited filter.
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    try:
        rate, data = wavfile.read(source)
    except Exception as exc:
        raise AudioError(f"cannot read WAV: {exc}") from exc
    if data.size == 0:
        raise AudioError("zero-length audio payload")
    if data.ndim == 2:
        if data.shape[1] > 2:
            raise AudioError(f"expected 1-2 channels, got {data.shape[1]}")
        samples = _to_float(data).mean(axis=1)
    elif data.ndim == 1:
        samples = _to_float(data)
    else:
        raise AudioError(f"unsupported WAV layout with shape {data.shape}")
    samples = np.clip(samples, -1.0, 1.0)
    if rate != target_rate:
        ratio = Fraction(target_rate, int(rate))
        samples = sps.resample_poly(samples, ratio.numerator, ratio.denominator)
        samples = np.clip(samples, -1.0, 1.0)
    return AudioBuffer(samples=samples, sample_rate=target_rate)


def save_wav(audio: AudioBuffer, target) -> None:
    """Write 16-bit PCM little-endian WAV."""
    pcm = np.clip(np.round(audio.samples * _PCM16_SCALE), -32768, 32767).astype("<i2")
    if isinstance(target, (str, Path)):
        with open(target, "wb") as fh:
            wavfile.write(fh, audio.sample_rate, pcm)
    else:
        wavfile.write(target, audio.sample_rate, pcm)


def wav_bytes(audio: AudioBuffer) -> bytes:
    buf = io.BytesIO()
    save_wav(audio, buf)
    return buf.getvalue()


def mulaw_encode(x, levels: int = 1024):
    """Compand amplitudes in [-1, 1] to level indices in [0, levels-1]."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise AudioError("non-finite amplitude")
    arr = np.clip(arr, -1.0, 1.0)
    mu = levels - 1
    companded = np.sign(arr) * np.log1p(mu * np.abs(arr)) / np.log1p(mu)
    level = np.floor((companded + 1.0) / 2.0 * levels).astype(np.int64)
    level = np.clip(level, 0, levels - 1)
    return level if level.ndim else int(level)


def mulaw_decode(level, levels: int = 1024):
    """Invert mu-law companding at the bin center of each level."""
    idx = np.asarray(level, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= levels):
        raise AudioError(f"level out of range [0, {levels})")
    mu = levels - 1
    centers = 2.0 * (idx + 0.5) / levels - 1.0
    x = np.sign(centers) * (np.power(1.0 + mu, np.abs(centers)) - 1.0) / mu
    return x if x.ndim else float(x)


def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_inv(m):
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _mel_filterbank(n_bands: int, n_fft: int, sample_rate: int) -> np.ndarray:
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    edges = _mel_inv(np.linspace(_mel(0.0), _mel(sample_rate / 2.0), n_bands + 2))
    bank = np.zeros((n_bands, len(freqs)))
    for b in range(n_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        up = (freqs - lo) / max(mid - lo, 1e-9)
        down = (hi - freqs) / max(hi - mid, 1e-9)
        bank[b] = np.maximum(0.0, np.minimum(up, down))
    return bank


def mcep_extract(audio: AudioBuffer, grid: FrameGrid, order: int = MCEP_ORDER) -> np.ndarray:
    """Per-frame mel-cepstral coefficients, shape (frame_count, order).

    Pipeline per frame: Hann-windowed magnitude spectrum -> 80 triangular mel
    bands -> natural log floored at LOG_FLOOR -> orthonormal DCT-II, keeping
    the first ``order`` coefficients.
    """
    win_len = int(round(MCEP_WINDOW_SECONDS * audio.sample_rate))
    if len(audio) < win_len:
        raise AudioError(f"audio shorter than one {MCEP_WINDOW_SECONDS * 1e3:.0f} ms window")
    hop = grid.hop
    n_fft = 1 << (win_len - 1).bit_length()
    window = np.hanning(win_len)
    pad = np.concatenate([audio.samples, np.zeros(win_len)])
    frames = np.stack([pad[t * hop : t * hop + win_len] for t in range(grid.frame_count)])
    spectra = np.abs(rfft(frames * window, n=n_fft, axis=1))
    bank = _mel_filterbank(MEL_BANDS, n_fft, audio.sample_rate)
    logmel = np.log(np.maximum(spectra @ bank.T, LOG_FLOOR))
    return dct(logmel, type=2, norm="ortho", axis=1)[:, :order]


def lowpass_render(audio: AudioBuffer, cutoff: float) -> AudioBuffer:
    """Zero-phase FIR low-pass with a 20 Hz transition band and >= 60 dB stop.

    The filter must not shift the contour in time, so the linear-phase kernel
    is applied centered (group delay removed).
    """
    nyquist = audio.sample_rate / 2.0
    if not 0.0 < cutoff < nyquist:
        raise AudioError(f"cutoff {cutoff} Hz outside (0, {nyquist})")
    transition = 20.0
    # -6 dB point halfway through the transition band; squeezed near Nyquist
    mid = min(cutoff + transition / 2.0, (cutoff + nyquist) / 2.0)
    numtaps, beta = sps.kaiserord(65.0, transition / nyquist)
    numtaps += 1 - numtaps % 2
    taps = sps.firwin(numtaps, mid / nyquist, window=("kaiser", beta))
    filtered = sps.fftconvolve(audio.samples, taps, mode="same")
    return AudioBuffer(samples=np.clip(filtered, -1.0, 1.0), sample_rate=audio.sample_rate)
