"""Frame-level model inputs from alignments, word embeddings and punctuation.

Each 10 ms frame samples the word/phoneme active at its center time and packs
four feature groups: a 41-way phoneme one-hot, the word embedding, the V/UV
flag and four punctuation flags. Frames outside any word get the silence
phoneme, a zero embedding and zero punctuation.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import FrameGrid

# CMU ARPAbet without stress markers, plus explicit silence/unknown tokens.
ARPABET = (
    "AA AE AH AO AW AY B CH D DH EH ER EY F G HH IH IY JH K L M N NG "
    "OW OY P R S SH T TH UH UW V W Y Z ZH"
).split()
SILENCE = "sil"
UNKNOWN = "unk"
PHONEME_INVENTORY = tuple(ARPABET) + (SILENCE, UNKNOWN)
PHONEME_INDEX = {p: i for i, p in enumerate(PHONEME_INVENTORY)}

PUNCT_FLAGS = ("comma", "period", "question", "quote")

DEFAULT_EMBEDDING_DIM = 32

_EMBT_MAGIC = b"EMBT"


class AlignmentError(ValueError):
    """Invalid alignment or embedding input."""


@dataclass(frozen=True)
class Word:
    text: str
    start: float
    end: float
    precedes_comma: bool = False
    precedes_period: bool = False
    precedes_question: bool = False
    in_quotes: bool = False

    def punct_vector(self) -> np.ndarray:
        return np.array(
            [self.precedes_comma, self.precedes_period, self.precedes_question, self.in_quotes],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class Phone:
    symbol: str
    start: float
    end: float
    word: int | None


@dataclass(frozen=True)
class Alignment:
    words: tuple[Word, ...]
    phones: tuple[Phone, ...]

    def __post_init__(self):
        _check_intervals("word", [(w.text, w.start, w.end) for w in self.words])
        _check_intervals("phone", [(p.symbol, p.start, p.end) for p in self.phones])
        for i, phone in enumerate(self.phones):
            base = normalize_phoneme(phone.symbol)
            if base not in PHONEME_INDEX:
                raise AlignmentError(f"unknown phoneme symbol {phone.symbol!r} at index {i}")
            if phone.word is not None:
                if not 0 <= phone.word < len(self.words):
                    raise AlignmentError(f"phone {i} references missing word {phone.word}")
                w = self.words[phone.word]
                if phone.start < w.start - 1e-9 or phone.end > w.end + 1e-9:
                    raise AlignmentError(
                        f"phone {phone.symbol!r} [{phone.start}, {phone.end}] outside "
                        f"word {w.text!r} [{w.start}, {w.end}]"
                    )

    @property
    def duration(self) -> float:
        ends = [w.end for w in self.words] + [p.end for p in self.phones]
        return max(ends) if ends else 0.0


def normalize_phoneme(symbol: str) -> str:
    """Uppercase ARPAbet with trailing stress digits stripped; sil/unk pass through."""
    s = symbol.strip()
    if s.lower() in (SILENCE, UNKNOWN):
        return s.lower()
    return s.upper().rstrip("012")


def _check_intervals(kind: str, items) -> None:
    prev_end = -np.inf
    prev_label = None
    for label, start, end in items:
        if end <= start:
            raise AlignmentError(f"{kind} {label!r} has non-positive span [{start}, {end}]")
        if start < prev_end - 1e-9:
            raise AlignmentError(f"{kind}s {prev_label!r} and {label!r} overlap")
        prev_end, prev_label = end, label


def load_alignment(source, audio_duration: float | None = None) -> Alignment:
    """Parse and validate the JSON alignment schema."""
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text())
    else:
        doc = json.load(source) if hasattr(source, "read") else source
    try:
        words = tuple(
            Word(
                text=w["text"],
                start=float(w["start"]),
                end=float(w["end"]),
                precedes_comma=bool(w.get("punct", {}).get("comma", False)),
                precedes_period=bool(w.get("punct", {}).get("period", False)),
                precedes_question=bool(w.get("punct", {}).get("question", False)),
                in_quotes=bool(w.get("punct", {}).get("quote", False)),
            )
            for w in doc["words"]
        )
        phones = tuple(
            Phone(symbol=p["sym"], start=float(p["start"]), end=float(p["end"]), word=p.get("word"))
            for p in doc.get("phones", [])
        )
    except (KeyError, TypeError) as exc:
        raise AlignmentError(f"malformed alignment document: {exc}") from exc
    align = Alignment(words=words, phones=phones)
    if audio_duration is not None and align.duration > audio_duration + 1e-6:
        raise AlignmentError(
            f"alignment extends to {align.duration:.3f}s beyond audio of {audio_duration:.3f}s"
        )
    return align


def alignment_to_dict(align: Alignment) -> dict:
    return {
        "words": [
            {
                "text": w.text,
                "start": w.start,
                "end": w.end,
                "punct": {
                    "comma": w.precedes_comma,
                    "period": w.precedes_period,
                    "question": w.precedes_question,
                    "quote": w.in_quotes,
                },
            }
            for w in align.words
        ],
        "phones": [
            {"sym": p.symbol, "start": p.start, "end": p.end, "word": p.word} for p in align.phones
        ],
    }


@dataclass(frozen=True)
class WordEmbeddingTable:
    """One ingested embedding vector per word, in word order."""

    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise AlignmentError(f"embedding table must be 2-D, got {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise AlignmentError("non-finite embedding values")
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.vectors)


def save_embeddings(target, table: WordEmbeddingTable) -> None:
    """Binary layout: magic, u32 word_count, u32 dim, row-major f32, little-endian."""
    blob = (
        _EMBT_MAGIC
        + struct.pack("<II", len(table), table.dim)
        + table.vectors.astype("<f4").tobytes()
    )
    if isinstance(target, (str, Path)):
        Path(target).write_bytes(blob)
    else:
        target.write(blob)


def load_embeddings(source) -> WordEmbeddingTable:
    raw = Path(source).read_bytes() if isinstance(source, (str, Path)) else source.read()
    if len(raw) < 12 or raw[:4] != _EMBT_MAGIC:
        raise AlignmentError("not an embedding table file (bad magic)")
    count, dim = struct.unpack("<II", raw[4:12])
    need = 12 + 4 * count * dim
    if len(raw) < need:
        raise AlignmentError(f"truncated embedding table: {len(raw)} < {need} bytes")
    vectors = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=12).reshape(count, dim)
    return WordEmbeddingTable(vectors=vectors.astype(np.float64))


@dataclass(frozen=True)
class FrameFeatures:
    """T x F feature matrix plus a layout naming each column slice."""

    matrix: np.ndarray
    layout: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.matrix.shape[0]

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    @property
    def voiced(self) -> np.ndarray:
        return self.matrix[:, self.layout["vuv"]][:, 0] > 0.5


def feature_layout(embedding_dim: int) -> dict:
    n_ph = len(PHONEME_INVENTORY)
    return {
        "phoneme": slice(0, n_ph),
        "embedding": slice(n_ph, n_ph + embedding_dim),
        "vuv": slice(n_ph + embedding_dim, n_ph + embedding_dim + 1),
        "punct": slice(n_ph + embedding_dim + 1, n_ph + embedding_dim + 1 + len(PUNCT_FLAGS)),
    }


def feature_width(embedding_dim: int) -> int:
    return len(PHONEME_INVENTORY) + embedding_dim + 1 + len(PUNCT_FLAGS)


def assemble_features(
    align: Alignment,
    emb: WordEmbeddingTable,
    voiced: np.ndarray,
    grid: FrameGrid,
) -> FrameFeatures:
    """Sample the alignment at every frame center and pack the feature groups."""
    voiced = np.asarray(voiced, dtype=bool)
    if len(voiced) != grid.frame_count:
        raise AlignmentError(f"voiced mask length {len(voiced)} != frame count {grid.frame_count}")
    if len(emb) < len(align.words):
        raise AlignmentError(f"embedding table has {len(emb)} rows for {len(align.words)} words")

    layout = feature_layout(emb.dim)
    matrix = np.zeros((grid.frame_count, feature_width(emb.dim)))
    word_starts = np.array([w.start for w in align.words])
    word_ends = np.array([w.end for w in align.words])
    phone_starts = np.array([p.start for p in align.phones])
    phone_ends = np.array([p.end for p in align.phones])

    for t in range(grid.frame_count):
        center = grid.frame_center(t)
        phoneme = SILENCE
        if len(align.phones):
            hits = np.nonzero((phone_starts <= center) & (center < phone_ends))[0]
            if hits.size:
                phoneme = normalize_phoneme(align.phones[hits[0]].symbol)
        matrix[t, PHONEME_INDEX[phoneme]] = 1.0
        if len(align.words):
            hits = np.nonzero((word_starts <= center) & (center < word_ends))[0]
            if hits.size:
                word = align.words[hits[0]]
                matrix[t, layout["embedding"]] = emb.vectors[hits[0]]
                matrix[t, layout["punct"]] = word.punct_vector()
        matrix[t, layout["vuv"]] = 1.0 if voiced[t] else 0.0
    return FrameFeatures(matrix=matrix, layout=layout)


def context_features(feats: FrameFeatures, quantized_bins: np.ndarray, n_classes: int = 128) -> np.ndarray:
    """Concatenate features with a one-hot of the quantized F0 per frame."""
    bins = np.asarray(quantized_bins, dtype=np.int64)
    if len(bins) != feats.n_frames:
        raise AlignmentError(f"quantized length {len(bins)} != frame count {feats.n_frames}")
    onehot = np.zeros((feats.n_frames, n_classes))
    onehot[np.arange(feats.n_frames), bins] = 1.0
    return np.concatenate([feats.matrix, onehot], axis=1)
