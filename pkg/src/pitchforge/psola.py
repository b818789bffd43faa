"""Time-domain pitch-synchronous overlap-add pitch shifting.

Analysis marks sit on waveform peaks one period apart inside voiced regions
and every 10 ms elsewhere. Synthesis lays target marks at the requested pitch
spacing, pulls a two-period Hann grain from the nearest analysis mark for
each, and overlap-adds with envelope normalization. Unvoiced stretches are
copied through verbatim; total duration is never modified.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .audio import AudioBuffer, FrameGrid
from .pitch import F0Contour

UNVOICED_MARK_SPACING_SECONDS = 0.010
PEAK_SEARCH_FRACTION = 0.25
ENVELOPE_FLOOR = 1e-3


@dataclass(frozen=True)
class PitchMarks:
    marks: np.ndarray  # sample indices, strictly increasing
    voiced: np.ndarray  # per-mark flag

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=np.int64)
        voiced = np.asarray(self.voiced, dtype=bool)
        if marks.shape != voiced.shape:
            raise ValueError("marks/voiced length mismatch")
        if marks.size and np.any(np.diff(marks) <= 0):
            raise ValueError("marks must be strictly increasing")
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "voiced", voiced)


@dataclass(frozen=True)
class SynthesisPlan:
    target_marks: np.ndarray  # sample indices, strictly increasing
    source_index: np.ndarray  # analysis-mark index per target mark
    target_voiced: np.ndarray  # per-target-mark flag
    frame_voiced: np.ndarray  # target contour's frame-level V/UV

    def __post_init__(self):
        if np.any(np.diff(self.source_index) < 0):
            raise ValueError("source mapping must be monotone nondecreasing")


def _voiced_runs(mask: np.ndarray):
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.nonzero(np.diff(padded))[0]
    return list(zip(edges[::2], edges[1::2]))  # [start, end) in frames


def _hz_per_sample(contour: F0Contour, grid: FrameGrid, n_samples: int) -> np.ndarray:
    frame_of = np.minimum(np.arange(n_samples) // grid.hop, len(contour) - 1)
    return contour.hz[frame_of]


def detect_pitch_marks(audio: AudioBuffer, contour: F0Contour) -> PitchMarks:
    """Peak-pick one mark per glottal cycle in voiced regions."""
    sr = audio.sample_rate
    grid = FrameGrid(frame_count=len(contour), sample_rate=sr)
    hz = _hz_per_sample(contour, grid, len(audio))
    marks: list[int] = []
    flags: list[bool] = []

    for start_f, end_f in _voiced_runs(contour.voiced):
        a = start_f * grid.hop
        b = min(end_f * grid.hop, len(audio))
        if b - a < 8:
            continue
        region = audio.samples[a:b]
        f0 = float(np.median(hz[a:b]))
        cut = min(1.5 * f0, 0.45 * sr)
        sos = sps.butter(4, cut / (sr / 2.0), output="sos")
        smooth = sps.sosfiltfilt(sos, region)

        # keep the anchor clear of filtfilt edge transients
        guard = int(sr / f0)
        if len(region) > 3 * guard:
            anchor = guard + int(np.argmax(smooth[guard : len(region) - guard]))
        else:
            anchor = int(np.argmax(smooth))
        run_marks = [anchor]
        pos = anchor
        while True:  # march right; stop when the search window would clip
            period = sr / hz[min(a + pos, len(audio) - 1)]
            lo = pos + int(period * (1 - PEAK_SEARCH_FRACTION))
            hi = pos + int(period * (1 + PEAK_SEARCH_FRACTION)) + 1
            if hi > len(region):
                break
            pos = lo + int(np.argmax(smooth[lo:hi]))
            run_marks.append(pos)
        pos = anchor
        while True:  # march left
            period = sr / hz[min(a + pos, len(audio) - 1)]
            hi = pos - int(period * (1 - PEAK_SEARCH_FRACTION)) + 1
            lo = pos - int(period * (1 + PEAK_SEARCH_FRACTION))
            if lo < 0:
                break
            pos = lo + int(np.argmax(smooth[lo:hi]))
            run_marks.insert(0, pos)
        for m in sorted(set(run_marks)):
            marks.append(a + m)
            flags.append(True)

    spacing = int(round(UNVOICED_MARK_SPACING_SECONDS * sr))
    voiced_arr = np.array(marks, dtype=np.int64)
    for start_f, end_f in _voiced_runs(~contour.voiced):
        a, b = start_f * grid.hop, min(end_f * grid.hop, len(audio))
        for m in range(a, b, spacing):
            marks.append(m)
            flags.append(False)

    order = np.argsort(np.array(marks, dtype=np.int64), kind="stable")
    sorted_marks = np.array(marks, dtype=np.int64)[order]
    sorted_flags = np.array(flags, dtype=bool)[order]
    keep = np.concatenate([[True], np.diff(sorted_marks) > 0])
    return PitchMarks(marks=sorted_marks[keep], voiced=sorted_flags[keep])


def plan_marks(marks: PitchMarks, target: F0Contour, sample_rate: int) -> SynthesisPlan:
    """Lay target marks left to right at the requested pitch spacing.

    Voiced spacing is sample_rate / target hz at the mark's frame; unvoiced
    stretches snap to the analysis marks so they pass through untouched.
    """
    if marks.marks.size == 0:
        return SynthesisPlan(
            target_marks=np.zeros(0, dtype=np.int64),
            source_index=np.zeros(0, dtype=np.int64),
            target_voiced=np.zeros(0, dtype=bool),
            frame_voiced=target.voiced.copy(),
        )
    grid = FrameGrid(frame_count=len(target), sample_rate=sample_rate)
    end = len(target) * grid.hop
    for m, flag in zip(marks.marks, marks.voiced):
        frame = min(m // grid.hop, len(target) - 1)
        if bool(target.voiced[frame]) != bool(flag):
            raise ValueError(f"target V/UV differs from analysis at frame {frame}")

    positions: list[float] = []
    cursor = float(marks.marks[0])
    while cursor < end:
        positions.append(cursor)
        frame = min(int(cursor) // grid.hop, len(target) - 1)
        if target.voiced[frame]:
            cursor += sample_rate / float(target.hz[frame])
        else:
            nxt = np.searchsorted(marks.marks, int(cursor), side="right")
            if nxt >= len(marks.marks):
                break
            cursor = float(marks.marks[nxt])

    target_marks = np.array(np.round(positions), dtype=np.int64)
    keep = np.concatenate([[True], np.diff(target_marks) > 0]) if target_marks.size else np.zeros(0, bool)
    target_marks = target_marks[keep]
    source_index = np.searchsorted(marks.marks, target_marks)
    source_index = np.clip(source_index, 0, len(marks.marks) - 1)
    left = np.maximum(source_index - 1, 0)
    pick_left = np.abs(marks.marks[left] - target_marks) <= np.abs(marks.marks[source_index] - target_marks)
    source_index = np.where(pick_left, left, source_index)
    frame_of = np.minimum(target_marks // grid.hop, len(target) - 1)
    return SynthesisPlan(
        target_marks=target_marks,
        source_index=source_index,
        target_voiced=target.voiced[frame_of],
        frame_voiced=target.voiced.copy(),
    )


def synthesize(audio: AudioBuffer, marks: PitchMarks, plan: SynthesisPlan) -> AudioBuffer:
    """Overlap-add two-period Hann grains at the planned target marks."""
    n = len(audio)
    out = np.zeros(n)
    env = np.zeros(n)
    src_marks = marks.marks
    tgt = plan.target_marks

    for k, (tpos, sidx, voiced) in enumerate(
        zip(plan.target_marks, plan.source_index, plan.target_voiced)
    ):
        if not voiced or not marks.voiced[sidx]:
            continue
        center = src_marks[sidx]
        left = center - src_marks[sidx - 1] if sidx > 0 else (src_marks[sidx + 1] - center if sidx + 1 < len(src_marks) else 64)
        right = src_marks[sidx + 1] - center if sidx + 1 < len(src_marks) else left
        # grains longer than the target period leak the neighboring source
        # pulses at the wrong spacing, so clip to the local target period too
        if k > 0:
            left = min(left, tpos - tgt[k - 1])
        if k + 1 < len(tgt):
            right = min(right, tgt[k + 1] - tpos)
        left, right = int(max(left, 2)), int(max(right, 2))
        a_src, b_src = center - left, center + right + 1
        a_dst, b_dst = tpos - left, tpos + right + 1
        window = np.concatenate([np.hanning(2 * left + 1)[:left], np.hanning(2 * right + 1)[right:]])
        lo_clip = max(-a_src, -a_dst, 0)
        hi_clip = max(b_src - n, b_dst - n, 0)
        if lo_clip or hi_clip:
            window = window[lo_clip : len(window) - hi_clip if hi_clip else None]
            a_src, b_src = a_src + lo_clip, b_src - hi_clip
            a_dst, b_dst = a_dst + lo_clip, b_dst - hi_clip
        if b_src <= a_src:
            continue
        out[a_dst:b_dst] += window * audio.samples[a_src:b_src]
        env[a_dst:b_dst] += window

    out /= np.maximum(env, ENVELOPE_FLOOR)
    # samples no grain claimed (voiced-region edges) fall back to the source
    out[env < ENVELOPE_FLOOR] = audio.samples[env < ENVELOPE_FLOOR]

    # unvoiced frames pass through verbatim, including the post-contour tail
    hop = int(round(UNVOICED_MARK_SPACING_SECONDS * audio.sample_rate))
    for start_f, end_f in _voiced_runs(~plan.frame_voiced):
        a, b = start_f * hop, min(end_f * hop, n)
        out[a:b] = audio.samples[a:b]
    tail = len(plan.frame_voiced) * hop
    if tail < n:
        out[tail:] = audio.samples[tail:]
    return AudioBuffer(samples=np.clip(out, -1.0, 1.0), sample_rate=audio.sample_rate)


def pitch_shift(audio: AudioBuffer, analysis: F0Contour, target: F0Contour) -> AudioBuffer:
    """Impose the target contour on the audio (analysis V/UV must match)."""
    marks = detect_pitch_marks(audio, analysis)
    plan = plan_marks(marks, target, audio.sample_rate)
    return synthesize(audio, marks, plan)
