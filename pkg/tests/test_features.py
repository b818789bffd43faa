import io

import numpy as np
import pytest

from pitchforge.audio import FrameGrid
from pitchforge.features import (
    AlignmentError,
    FrameFeatures,
    PHONEME_INDEX,
    PHONEME_INVENTORY,
    SILENCE,
    WordEmbeddingTable,
    assemble_features,
    context_features,
    feature_width,
    load_alignment,
    load_embeddings,
    save_embeddings,
)


def two_word_doc():
    return {
        "words": [
            {"text": "hello", "start": 0.1, "end": 0.5, "punct": {"comma": True}},
            {"text": "world", "start": 0.5, "end": 0.9, "punct": {"period": True}},
        ],
        "phones": [
            {"sym": "HH", "start": 0.1, "end": 0.3, "word": 0},
            {"sym": "OW1", "start": 0.3, "end": 0.5, "word": 0},
            {"sym": "W", "start": 0.5, "end": 0.7, "word": 1},
            {"sym": "D", "start": 0.7, "end": 0.9, "word": 1},
        ],
    }


def table(n_words, dim=8, seed=0):
    rng = np.random.default_rng(seed)
    return WordEmbeddingTable(vectors=rng.normal(size=(n_words, dim)))


class TestLoadAlignment:
    def test_two_word_file(self):
        align = load_alignment(two_word_doc())
        assert len(align.words) == 2
        assert len(align.phones) == 4
        assert align.words[0].precedes_comma

    def test_overlap_rejected_with_pair_named(self):
        doc = two_word_doc()
        doc["phones"][1]["start"] = 0.25
        doc["phones"][0]["end"] = 0.35
        with pytest.raises(AlignmentError, match="overlap"):
            load_alignment(doc)

    def test_beyond_audio_duration_rejected(self):
        with pytest.raises(AlignmentError, match="beyond audio"):
            load_alignment(two_word_doc(), audio_duration=0.8)

    def test_unknown_phoneme_rejected(self):
        doc = two_word_doc()
        doc["phones"][0]["sym"] = "QX"
        with pytest.raises(AlignmentError, match="unknown phoneme"):
            load_alignment(doc)

    def test_phone_outside_word_rejected(self):
        doc = two_word_doc()
        doc["phones"][3]["end"] = 0.95
        doc["words"][1]["end"] = 0.92
        with pytest.raises(AlignmentError):
            load_alignment(doc)

    def test_stress_digits_normalized(self):
        align = load_alignment(two_word_doc())
        feats = assemble_features(
            align, table(2), np.zeros(90, dtype=bool), FrameGrid(frame_count=90)
        )
        t = 35  # center 0.355 s, inside OW1
        assert feats.matrix[t, PHONEME_INDEX["OW"]] == 1.0


class TestEmbeddingTable:
    def test_round_trip(self):
        t = table(5, dim=16)
        buf = io.BytesIO()
        save_embeddings(buf, t)
        buf.seek(0)
        loaded = load_embeddings(buf)
        assert loaded.dim == 16
        assert np.max(np.abs(loaded.vectors - t.vectors)) < 1e-6

    def test_truncated_rejected(self):
        buf = io.BytesIO()
        save_embeddings(buf, table(3))
        with pytest.raises(AlignmentError, match="truncated"):
            load_embeddings(io.BytesIO(buf.getvalue()[:-8]))


class TestAssembleFeatures:
    def grid(self):
        return FrameGrid(frame_count=100)

    def feats(self, voiced=None):
        align = load_alignment(two_word_doc())
        voiced = np.zeros(100, dtype=bool) if voiced is None else voiced
        return assemble_features(align, table(2), voiced, self.grid())

    def test_punctuation_flag_copied(self):
        feats = self.feats()
        t = 30  # inside "hello", which precedes a comma
        punct = feats.matrix[t, feats.layout["punct"]]
        assert punct[0] == 1.0 and punct[1] == 0.0

    def test_phoneme_rows_sum_to_one(self):
        feats = self.feats()
        assert np.all(feats.matrix[:, feats.layout["phoneme"]].sum(axis=1) == 1.0)

    def test_frame_before_first_word_is_silence(self):
        feats = self.feats()
        row = feats.matrix[0]  # center 0.005 s, first word starts at 0.1 s
        assert row[PHONEME_INDEX[SILENCE]] == 1.0
        assert np.all(row[feats.layout["embedding"]] == 0.0)
        assert np.all(row[feats.layout["punct"]] == 0.0)

    def test_vuv_column_copies_mask(self):
        voiced = np.zeros(100, dtype=bool)
        voiced[10:20] = True
        feats = self.feats(voiced)
        assert np.array_equal(feats.voiced, voiced)

    def test_deterministic(self):
        a, b = self.feats(), self.feats()
        assert np.array_equal(a.matrix, b.matrix)

    def test_punct_change_touches_only_punct_slice(self):
        base = self.feats()
        doc = two_word_doc()
        doc["words"][0]["punct"] = {"question": True}
        changed = assemble_features(
            load_alignment(doc), table(2), np.zeros(100, dtype=bool), self.grid()
        )
        diff = base.matrix != changed.matrix
        cols = np.nonzero(diff.any(axis=0))[0]
        punct = base.layout["punct"]
        assert all(punct.start <= c < punct.stop for c in cols)
        rows = np.nonzero(diff.any(axis=1))[0]
        assert np.all((rows >= 10) & (rows < 50))  # word 0 spans 0.1-0.5 s

    def test_missing_embedding_rejected(self):
        with pytest.raises(AlignmentError, match="embedding table"):
            assemble_features(
                load_alignment(two_word_doc()), table(1), np.zeros(100, dtype=bool), self.grid()
            )

    def test_width_contract(self):
        feats = self.feats()
        assert feats.width == feature_width(8) == len(PHONEME_INVENTORY) + 8 + 1 + 4


class TestContextFeatures:
    def test_zero_bin_onehot_at_position_zero(self):
        feats = FrameFeatures(matrix=np.zeros((3, 5)), layout={"vuv": slice(0, 1)})
        ctx = context_features(feats, np.array([0, 5, 127]))
        assert ctx.shape == (3, 5 + 128)
        assert ctx[0, 5] == 1.0 and np.sum(ctx[0, 5:]) == 1.0

    def test_argmax_inverts_onehot(self):
        rng = np.random.default_rng(11)
        bins = rng.integers(0, 128, size=20)
        feats = FrameFeatures(matrix=rng.normal(size=(20, 7)), layout={})
        ctx = context_features(feats, bins)
        assert np.array_equal(np.argmax(ctx[:, 7:], axis=1), bins)

    def test_length_mismatch_rejected(self):
        feats = FrameFeatures(matrix=np.zeros((3, 5)), layout={})
        with pytest.raises(AlignmentError):
            context_features(feats, np.zeros(4, dtype=int))
