"""Non-neural contour generators: monotone, word swap/replace, repunctuation.

All of them edit only voiced frames and leave the V/UV mask untouched. Word
contours of mismatched lengths are fitted by linear resampling in log2-Hz.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import FrameGrid
from .features import Alignment
from .nn import RngStream
from .pitch import F0Contour, SpeakerStats


@dataclass(frozen=True)
class BankEntry:
    speaker: str
    word: str
    log2_hz: np.ndarray

    def __post_init__(self):
        seg = np.asarray(self.log2_hz, dtype=np.float64)
        if seg.size == 0 or not np.all(np.isfinite(seg)):
            raise ValueError("bank segments must be nonempty and finite")
        object.__setattr__(self, "log2_hz", seg)


@dataclass(frozen=True)
class WordContourBank:
    entries: tuple[BankEntry, ...]

    def for_speaker(self, speaker: str) -> list[BankEntry]:
        return [e for e in self.entries if e.speaker == speaker]

    def to_dict(self) -> dict:
        return {
            "entries": [
                {"speaker": e.speaker, "word": e.word, "log2_hz": [float(v) for v in e.log2_hz]}
                for e in self.entries
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "WordContourBank":
        return cls(
            entries=tuple(
                BankEntry(speaker=e["speaker"], word=e["word"], log2_hz=np.asarray(e["log2_hz"]))
                for e in doc["entries"]
            )
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "WordContourBank":
        return cls.from_dict(json.loads(Path(path).read_text()))


def word_frame_indices(contour: F0Contour, align: Alignment) -> list[np.ndarray]:
    """Voiced frame indices per word, sampled at frame centers."""
    grid = FrameGrid(frame_count=len(contour))
    centers = np.array([grid.frame_center(t) for t in range(len(contour))])
    out = []
    for word in align.words:
        inside = (centers >= word.start) & (centers < word.end)
        out.append(np.nonzero(inside & contour.voiced)[0])
    return out


def bank_from_utterance(speaker: str, contour: F0Contour, align: Alignment) -> WordContourBank:
    entries = []
    for word, frames in zip(align.words, word_frame_indices(contour, align)):
        if frames.size:
            entries.append(BankEntry(speaker=speaker, word=word.text, log2_hz=np.log2(contour.hz[frames])))
    return WordContourBank(entries=tuple(entries))


def _resample_log2(segment: np.ndarray, n: int) -> np.ndarray:
    if n == len(segment):
        return segment.copy()
    if len(segment) == 1:
        return np.full(n, segment[0])
    src = np.linspace(0.0, 1.0, len(segment))
    dst = np.linspace(0.0, 1.0, n)
    return np.interp(dst, src, segment)


def monotone(contour: F0Contour, stats: SpeakerStats) -> F0Contour:
    hz = np.where(contour.voiced, 2.0**stats.mu, contour.hz)
    return F0Contour(hz=hz, voiced=contour.voiced.copy())


def swap_words(contour: F0Contour, align: Alignment, rng: RngStream) -> F0Contour:
    """Permute the voiced word contours within the sentence."""
    if not align.words:
        raise ValueError("alignment has no words")
    frames = word_frame_indices(contour, align)
    active = [w for w, f in enumerate(frames) if f.size]
    if len(active) <= 1:
        return F0Contour(hz=contour.hz.copy(), voiced=contour.voiced.copy())
    perm = rng.permutation(len(active))
    hz = contour.hz.copy()
    for dst_pos, src_pos in enumerate(perm):
        dst, src = active[dst_pos], active[src_pos]
        segment = np.log2(contour.hz[frames[src]])
        hz[frames[dst]] = 2.0 ** _resample_log2(segment, frames[dst].size)
    return F0Contour(hz=hz, voiced=contour.voiced.copy())


def replace_words(
    contour: F0Contour, align: Alignment, bank: WordContourBank, speaker: str, rng: RngStream
) -> F0Contour:
    """Replace each word's voiced contour with a random same-speaker segment."""
    pool = bank.for_speaker(speaker)
    if not pool:
        raise ValueError(f"bank has no entries for speaker {speaker!r}")
    hz = contour.hz.copy()
    for frames in word_frame_indices(contour, align):
        if not frames.size:
            continue
        entry = pool[int(rng.integers(0, len(pool)))]
        hz[frames] = 2.0 ** _resample_log2(entry.log2_hz, frames.size)
    return F0Contour(hz=hz, voiced=contour.voiced.copy())


def repunctuate_heuristic(
    contour: F0Contour, align: Alignment, target: str, stats: SpeakerStats
) -> F0Contour:
    """Overwrite the last two words with a linear question rise or statement
    fall spanning two standard deviations from the speaker mean."""
    if target not in ("question", "statement"):
        raise ValueError(f"target must be question|statement, got {target!r}")
    if len(align.words) < 2:
        raise ValueError("need at least two words to repunctuate")
    frames = word_frame_indices(contour, align)
    tail = np.concatenate(frames[-2:])
    hz = contour.hz.copy()
    if tail.size:
        sign = 1.0 if target == "question" else -1.0
        ramp = np.linspace(stats.mu, stats.mu + sign * 2.0 * stats.sigma, tail.size)
        hz[np.sort(tail)] = 2.0**ramp
    return F0Contour(hz=hz, voiced=contour.voiced.copy())
