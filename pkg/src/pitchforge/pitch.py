"""Pitch posteriorgrams, Viterbi F0 decoding, V/UV decisions and speaker stats.

The front end is a cumulative-mean-normalized difference function evaluated on
a 360-bin grid of 20-cent steps above 32.70 Hz. Decoding runs a Viterbi pass
whose transition weights fall off linearly and hit zero at 240 cents, so the
decoded contour can never jump more than 12 bins between frames.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .audio import AudioBuffer, FrameGrid

REFERENCE_HZ = 32.70
CENTS_PER_BIN = 20.0
N_BINS = 360
MAX_JUMP_CENTS = 240.0
SALIENCE_SPREAD_CENTS = 25.0
# The difference function dips equally at the true period and its multiples;
# a mild penalty growing with lag keeps the salience peak off subharmonics.
LAG_TILT = 0.3

ANALYSIS_WINDOW_SECONDS = 0.064  # resolves one full period of 32.7 Hz at 16 kHz

T_HIGH_DEFAULT = 0.6
T_LOW_DEFAULT = 0.4

SIGMA_FLOOR = 0.05

_PGRM_MAGIC = b"PGRM"


class PitchError(ValueError):
    """Degenerate or out-of-contract pitch-analysis input."""


def bin_to_hz(bins, reference_hz: float = REFERENCE_HZ, cents_per_bin: float = CENTS_PER_BIN):
    return reference_hz * np.power(2.0, np.asarray(bins, dtype=np.float64) * cents_per_bin / 1200.0)


def hz_to_bin_float(hz, reference_hz: float = REFERENCE_HZ, cents_per_bin: float = CENTS_PER_BIN):
    return 1200.0 * np.log2(np.asarray(hz, dtype=np.float64) / reference_hz) / cents_per_bin


@dataclass(frozen=True)
class Posteriorgram:
    """Per-frame probabilities over pitch bins; rows normalized to sum 1."""

    values: np.ndarray
    reference_hz: float = REFERENCE_HZ
    cents_per_bin: float = CENTS_PER_BIN

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1:
            raise PitchError(f"posteriorgram must be T x B with T >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise PitchError("posteriorgram entries must be finite and >= 0")
        sums = values.sum(axis=1)
        bad = np.nonzero(sums <= 0)[0]
        if bad.size:
            raise PitchError(f"degenerate all-zero posteriorgram row at frame {bad[0]}")
        object.__setattr__(self, "values", values / sums[:, None])

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    @property
    def bin_cents(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.cents_per_bin


@dataclass(frozen=True)
class F0Contour:
    """Per-frame F0 in Hz with voiced flags; hz is ignored where unvoiced."""

    hz: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        hz = np.asarray(self.hz, dtype=np.float64)
        voiced = np.asarray(self.voiced, dtype=bool)
        if hz.shape != voiced.shape or hz.ndim != 1:
            raise PitchError(f"hz/voiced shape mismatch: {hz.shape} vs {voiced.shape}")
        if not np.all(np.isfinite(hz[voiced])) or np.any(hz[voiced] <= 0):
            raise PitchError("voiced frames must carry finite positive hz")
        object.__setattr__(self, "hz", hz)
        object.__setattr__(self, "voiced", voiced)

    def __len__(self) -> int:
        return len(self.hz)

    def to_dict(self, hop_seconds: float = 0.010) -> dict:
        return {
            "hop_seconds": hop_seconds,
            "hz": [float(v) for v in self.hz],
            "voiced": [bool(v) for v in self.voiced],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "F0Contour":
        return cls(hz=np.asarray(doc["hz"], dtype=np.float64), voiced=np.asarray(doc["voiced"], dtype=bool))


@dataclass(frozen=True)
class SpeakerStats:
    """Mean/stddev of voiced log2-Hz; sigma floored at SIGMA_FLOOR."""

    mu: float
    sigma: float
    frame_count: int

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise PitchError("mu must be finite")
        object.__setattr__(self, "sigma", max(float(self.sigma), SIGMA_FLOOR))


def _frame_matrix(audio: AudioBuffer, grid: FrameGrid, window: int) -> np.ndarray:
    """Analysis slices centered on each frame's center time.

    Centering keeps the estimate time-symmetric; a window anchored at the
    frame start would report the pitch of the upcoming 64 ms and skew every
    downstream consumer on pitch sweeps.
    """
    hop = grid.hop
    left = window // 2 - hop // 2
    pad = np.concatenate([np.zeros(max(left, 0)), audio.samples, np.zeros(window)])
    return np.stack([pad[t * hop : t * hop + window] for t in range(grid.frame_count)])


def candidate_posteriorgram(
    audio: AudioBuffer, grid: FrameGrid | None = None
) -> tuple[Posteriorgram, np.ndarray]:
    """Classical salience front end: per-frame CMNDF mapped onto the bin grid.

    Returns the posteriorgram plus a periodicity confidence in [0, 1] per
    frame (1 - min of the normalized difference function).
    """
    sr = audio.sample_rate
    if grid is None:
        grid = FrameGrid.for_audio(audio)
    window = int(round(ANALYSIS_WINDOW_SECONDS * sr))
    if len(audio) < window:
        raise PitchError(f"audio shorter than one {ANALYSIS_WINDOW_SECONDS * 1e3:.0f} ms window")
    integ = window // 2
    tau_max = window - integ

    frames = _frame_matrix(audio, grid, window)
    n_fft = 1 << (2 * window - 1).bit_length()
    spec_full = np.fft.rfft(frames, n=n_fft, axis=1)
    spec_head = np.fft.rfft(frames[:, :integ], n=n_fft, axis=1)
    corr = np.fft.irfft(np.conj(spec_head) * spec_full, axis=1)[:, :tau_max]

    sq = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames**2, axis=1)], axis=1)
    head_energy = sq[:, integ]
    lag_energy = sq[:, np.arange(tau_max) + integ] - sq[:, :tau_max]
    diff = np.maximum(head_energy[:, None] + lag_energy - 2.0 * corr, 0.0)

    # cumulative mean normalization; all-zero difference (silence) pins to 1
    cums = np.cumsum(diff[:, 1:], axis=1)
    taus = np.arange(1, tau_max)
    cmndf = np.ones_like(diff)
    np.divide(diff[:, 1:] * taus, cums, out=cmndf[:, 1:], where=cums > 0)

    lags = sr / bin_to_hz(np.arange(N_BINS))
    lo = np.floor(lags).astype(int)
    frac = lags - lo
    usable = lo + 1 < tau_max
    d_at_bin = np.ones((frames.shape[0], N_BINS))
    d_at_bin[:, usable] = (
        cmndf[:, lo[usable]] * (1 - frac[usable]) + cmndf[:, lo[usable] + 1] * frac[usable]
    )

    salience = np.maximum(0.0, 1.0 - d_at_bin - LAG_TILT * lags / tau_max)
    salience = gaussian_filter1d(salience, sigma=SALIENCE_SPREAD_CENTS / CENTS_PER_BIN, axis=1, mode="constant")
    sums = salience.sum(axis=1, keepdims=True)
    flat = sums[:, 0] <= 1e-12
    salience[flat] = 1.0 / N_BINS
    sums[flat] = 1.0
    salience /= sums

    min_lag = max(int(np.floor(lags.min())), 2)
    max_lag = min(int(np.ceil(lags.max())) + 1, tau_max)
    confidence = np.clip(1.0 - cmndf[:, min_lag:max_lag].min(axis=1), 0.0, 1.0)

    # aperiodic frames must not constrain the decoder: fade their rows toward
    # uniform so the transition cap cannot lock the path onto onset junk
    values = confidence[:, None] * salience + (1.0 - confidence[:, None]) / N_BINS
    return Posteriorgram(values=values), confidence


def export_posteriorgram(target, post: Posteriorgram, confidence: np.ndarray) -> None:
    """Binary layout: magic, u32 T, u32 B, f32 ref_hz, f32 cents_per_bin,
    T*B f32 row-major values, then T f32 confidences. Little-endian."""
    conf = np.asarray(confidence, dtype=np.float32)
    if conf.shape != (post.n_frames,):
        raise PitchError("confidence length must match posteriorgram frames")
    blob = (
        _PGRM_MAGIC
        + struct.pack("<IIff", post.n_frames, post.n_bins, post.reference_hz, post.cents_per_bin)
        + post.values.astype("<f4").tobytes()
        + conf.astype("<f4").tobytes()
    )
    if isinstance(target, (str, Path)):
        Path(target).write_bytes(blob)
    else:
        target.write(blob)


def ingest_posteriorgram(source) -> tuple[Posteriorgram, np.ndarray]:
    """Read and validate an externally produced posteriorgram file."""
    raw = Path(source).read_bytes() if isinstance(source, (str, Path)) else source.read()
    head = struct.calcsize("<IIff")
    if len(raw) < 4 + head or raw[:4] != _PGRM_MAGIC:
        raise PitchError("not a posteriorgram file (bad magic)")
    n_frames, n_bins, ref_hz, cents = struct.unpack("<IIff", raw[4 : 4 + head])
    need = 4 + head + 4 * n_frames * n_bins + 4 * n_frames
    if len(raw) < need:
        raise PitchError(f"truncated posteriorgram file: {len(raw)} < {need} bytes")
    body = np.frombuffer(raw, dtype="<f4", count=n_frames * n_bins, offset=4 + head)
    conf = np.frombuffer(raw, dtype="<f4", count=n_frames, offset=4 + head + 4 * n_frames * n_bins)
    values = body.reshape(n_frames, n_bins).astype(np.float64)
    if np.any(values < 0):
        raise PitchError("negative posteriorgram entries")
    post = Posteriorgram(values=values, reference_hz=float(ref_hz), cents_per_bin=float(cents))
    return post, np.clip(conf.astype(np.float64), 0.0, 1.0)


def transition_log_weights(n_bins: int, cents_per_bin: float = CENTS_PER_BIN):
    """Row-normalized transition matrix in log space.

    Weight falls linearly from 1 at zero movement to 0 at MAX_JUMP_CENTS, so
    any jump of 240 cents or more has probability zero (-inf in log space).
    """
    max_jump = int(np.ceil(MAX_JUMP_CENTS / cents_per_bin))
    deltas = np.arange(max_jump + 1)
    weights = np.maximum(0.0, 1.0 - deltas * cents_per_bin / MAX_JUMP_CENTS)
    gap = np.abs(np.arange(n_bins)[:, None] - np.arange(n_bins)[None, :])
    dense = np.where(gap <= max_jump, weights[np.minimum(gap, max_jump)], 0.0)
    dense /= dense.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        return np.log(dense)


def viterbi_decode(post: Posteriorgram) -> np.ndarray:
    """Max-probability bin path under the linear-falloff transition model.

    Ties break toward the lower bin index. Scores accumulate in log space as
    (previous + transition) + observation, the same order the brute-force
    oracle uses, so the two agree bitwise.
    """
    n_frames, n_bins = post.values.shape
    log_a = transition_log_weights(n_bins, post.cents_per_bin)
    with np.errstate(divide="ignore"):
        log_obs = np.log(post.values)

    nonzero = int(np.ceil(MAX_JUMP_CENTS / post.cents_per_bin)) - 1
    offsets = np.arange(-nonzero, nonzero + 1)

    delta = log_obs[0].copy()
    psi = np.zeros((n_frames, n_bins), dtype=np.int64)
    cols = np.arange(n_bins)
    for t in range(1, n_frames):
        cand = np.full((len(offsets), n_bins), -np.inf)
        for k, off in enumerate(offsets):
            src = cols + off
            ok = (src >= 0) & (src < n_bins)
            cand[k, ok] = delta[src[ok]] + log_a[src[ok], cols[ok]]
        best = np.argmax(cand, axis=0)  # first max = lowest predecessor index
        psi[t] = cols + offsets[best]
        delta = cand[best, cols] + log_obs[t]

    path = np.zeros(n_frames, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    for t in range(n_frames - 1, 0, -1):
        path[t - 1] = psi[t, path[t]]
    return path


def brute_force_decode(post: Posteriorgram, max_direct_paths: int = 2_097_152) -> np.ndarray:
    """Independent exhaustive-path oracle for viterbi_decode.

    Scores every one of B^T paths. Small instances materialize the full score
    tensor; larger ones split the sequence in half, score every half-path
    exhaustively, and join over the single connecting transition. Ties pick
    the path that is lexicographically smallest read back-to-front, matching
    the decoder's backtracking tie-break.
    """
    n_frames, n_bins = post.values.shape
    log_a = transition_log_weights(n_bins, post.cents_per_bin)
    with np.errstate(divide="ignore"):
        log_obs = np.log(post.values)

    def score_tensor(frames: range) -> np.ndarray:
        scores = log_obs[frames[0]].copy()
        for t in frames[1:]:
            scores = (scores[..., None] + log_a) + log_obs[t]
        return scores

    def best_path(scores: np.ndarray) -> np.ndarray:
        flat = scores.reshape(-1)
        ties = np.nonzero(flat == flat.max())[0]
        paths = np.stack(np.unravel_index(ties, scores.shape), axis=1)
        order = np.lexsort(paths.T)  # last key (final frame) most significant
        return paths[order[0]]

    if n_bins**n_frames <= max_direct_paths:
        return best_path(score_tensor(range(n_frames)))

    split = n_frames // 2
    pre = score_tensor(range(0, split))
    suf = score_tensor(range(split, n_frames))
    pre_best = pre.reshape(-1, n_bins).max(axis=0)
    suf_best = suf.reshape(n_bins, -1).max(axis=1)
    joined = pre_best[:, None] + log_a + suf_best[None, :]
    end_pre, start_suf = np.unravel_index(np.argmax(joined), joined.shape)
    pre_part = best_path(
        np.where(
            np.arange(n_bins)[(None,) * (split - 1) + (slice(None),)] == end_pre, pre, -np.inf
        )
    )
    suf_part = best_path(
        np.where(np.arange(n_bins)[(slice(None),) + (None,) * (n_frames - split - 1)] == start_suf, suf, -np.inf)
    )
    return np.concatenate([pre_part, suf_part])


def vuv_from_confidence(confidence: np.ndarray, t_high: float = T_HIGH_DEFAULT, t_low: float = T_LOW_DEFAULT) -> np.ndarray:
    """Hysteresis voicing: runs of conf >= t_low that contain a conf >= t_high."""
    if not 0.0 <= t_low <= t_high <= 1.0:
        raise PitchError(f"need 0 <= t_low <= t_high <= 1, got {t_low}, {t_high}")
    conf = np.asarray(confidence, dtype=np.float64)
    above_low = conf >= t_low
    voiced = np.zeros(len(conf), dtype=bool)
    start = None
    for i in range(len(conf) + 1):
        inside = i < len(conf) and above_low[i]
        if inside and start is None:
            start = i
        elif not inside and start is not None:
            if np.any(conf[start:i] >= t_high):
                voiced[start:i] = True
            start = None
    return voiced


def speaker_stats(contours) -> SpeakerStats:
    """Pool voiced frames across contours into log2-Hz mean and stddev."""
    values = [np.log2(c.hz[c.voiced]) for c in contours]
    pooled = np.concatenate(values) if values else np.empty(0)
    if pooled.size == 0:
        raise PitchError("no voiced frames in any contour")
    return SpeakerStats(mu=float(pooled.mean()), sigma=float(pooled.std()), frame_count=int(pooled.size))


def analyze(
    audio: AudioBuffer,
    t_high: float = T_HIGH_DEFAULT,
    t_low: float = T_LOW_DEFAULT,
) -> F0Contour:
    """Full pitch analysis: salience -> Viterbi -> hysteresis V/UV.

    Unvoiced frames still carry the decoded bin frequency, flagged unvoiced.
    """
    post, confidence = candidate_posteriorgram(audio)
    path = viterbi_decode(post)
    hz = bin_to_hz(path, post.reference_hz, post.cents_per_bin)
    voiced = vuv_from_confidence(confidence, t_high, t_low)
    return F0Contour(hz=hz, voiced=voiced)
