"""Objective metrics and the corpus evaluation harness.

Pitch RMSE is measured in base-2 log-Hz over frames voiced in both contours;
NLL is the mean negative log-probability of the reference bin over voiced
frames; V/UV quality is precision/recall with voiced as the positive class.
The low-pass stimulus keeps everything up to 10 Hz above the utterance's
maximum F0 so listeners hear intonation without vocoder artifacts.
"""
from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, lowpass_render
from .baselines import bank_from_utterance, monotone, replace_words, swap_words, WordContourBank
from .corpus import load_manifest, load_model, prepare_utterance, utterance_features
from .model import ConstraintTrack
from .nn import RngStream
from .nn.layers import softmax
from .pitch import F0Contour, speaker_stats
from .quantizer import build_grid, quantize

DEGENERATE_WARNING = "no mutually voiced frames; metric defaults to 0"


class EvalError(ValueError):
    pass


def rmse(reference: F0Contour, hypothesis: F0Contour) -> float:
    """Root mean square log2-Hz error over mutually voiced frames."""
    if len(reference) != len(hypothesis):
        raise EvalError(f"length mismatch: {len(reference)} vs {len(hypothesis)}")
    both = reference.voiced & hypothesis.voiced
    if not np.any(both):
        warnings.warn(DEGENERATE_WARNING)
        return 0.0
    err = np.log2(hypothesis.hz[both]) - np.log2(reference.hz[both])
    return float(np.sqrt(np.mean(err**2)))


def nll(post_logits: np.ndarray, reference_bins: np.ndarray, voiced: np.ndarray) -> float:
    """Mean negative log-likelihood of the reference bins over voiced frames."""
    logits = np.asarray(post_logits, dtype=np.float64)
    bins = np.asarray(reference_bins, dtype=np.int64)
    voiced = np.asarray(voiced, dtype=bool)
    if logits.shape[0] != len(bins) or len(bins) != len(voiced):
        raise EvalError("shape mismatch between logits, bins and mask")
    if not np.any(voiced):
        warnings.warn(DEGENERATE_WARNING)
        return 0.0
    probs = softmax(logits[voiced], axis=1)
    picked = probs[np.arange(int(voiced.sum())), bins[voiced]]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def vuv_prf(reference_mask: np.ndarray, hypothesis_mask: np.ndarray) -> tuple[float, float]:
    """Precision/recall of voiced frames; empty denominators count as 1.0."""
    ref = np.asarray(reference_mask, dtype=bool)
    hyp = np.asarray(hypothesis_mask, dtype=bool)
    if ref.shape != hyp.shape:
        raise EvalError(f"mask length mismatch: {ref.shape} vs {hyp.shape}")
    tp = int(np.sum(ref & hyp))
    precision = tp / int(hyp.sum()) if hyp.any() else 1.0
    recall = tp / int(ref.sum()) if ref.any() else 1.0
    return precision, recall


def stimulus_cutoff(contour: F0Contour) -> float:
    if not np.any(contour.voiced):
        raise EvalError("stimulus needs at least one voiced frame")
    return float(np.max(contour.hz[contour.voiced])) + 10.0


def make_lowpass_stimulus(audio: AudioBuffer, contour: F0Contour) -> AudioBuffer:
    """Low-pass at 10 Hz above the contour's maximum voiced F0."""
    return lowpass_render(audio, stimulus_cutoff(contour))


@dataclass
class UtteranceMetrics:
    utt_id: str
    system: str
    frames: int
    mutual_voiced_frames: int
    rmse_log2: float
    nll: float | None
    vuv_tp: int
    vuv_ref: int
    vuv_hyp: int

    @property
    def vuv_precision(self) -> float:
        return self.vuv_tp / self.vuv_hyp if self.vuv_hyp else 1.0

    @property
    def vuv_recall(self) -> float:
        return self.vuv_tp / self.vuv_ref if self.vuv_ref else 1.0


@dataclass
class EvalReport:
    provenance: dict
    per_utterance: list[UtteranceMetrics] = field(default_factory=list)
    excluded: list[dict] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.excluded)

    def aggregate(self) -> dict:
        systems: dict[str, dict] = {}
        for m in self.per_utterance:
            agg = systems.setdefault(
                m.system,
                {"utterances": 0, "frames": 0, "sse": 0.0, "mutual": 0, "nll_sum": 0.0, "nll_frames": 0,
                 "tp": 0, "ref": 0, "hyp": 0},
            )
            agg["utterances"] += 1
            agg["frames"] += m.frames
            agg["sse"] += m.rmse_log2**2 * m.mutual_voiced_frames
            agg["mutual"] += m.mutual_voiced_frames
            if m.nll is not None:
                agg["nll_sum"] += m.nll * m.mutual_voiced_frames
                agg["nll_frames"] += m.mutual_voiced_frames
            agg["tp"] += m.vuv_tp
            agg["ref"] += m.vuv_ref
            agg["hyp"] += m.vuv_hyp
        out = {}
        for system, agg in systems.items():
            out[system] = {
                "utterances": agg["utterances"],
                "frames": agg["frames"],
                "rmse_log2": float(np.sqrt(agg["sse"] / agg["mutual"])) if agg["mutual"] else 0.0,
                "nll": (agg["nll_sum"] / agg["nll_frames"]) if agg["nll_frames"] else None,
                "vuv_precision": agg["tp"] / agg["hyp"] if agg["hyp"] else 1.0,
                "vuv_recall": agg["tp"] / agg["ref"] if agg["ref"] else 1.0,
            }
        return out

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "aggregate": self.aggregate(),
            "excluded": self.excluded,
            "partial": self.partial,
        }


CSV_COLUMNS = [
    "utterance", "system", "frames", "mutual_voiced_frames",
    "rmse_log2", "nll", "vuv_precision", "vuv_recall",
]


def _hypothesis(system, prep, stats, bank, rng, grid):
    if system == "identity":
        return prep.contour, None
    if system == "monotone":
        return monotone(prep.contour, stats), None
    if system == "swap":
        if prep.alignment is None:
            raise EvalError("swap needs an alignment")
        return swap_words(prep.contour, prep.alignment, rng), None
    if system == "replace":
        if prep.alignment is None:
            raise EvalError("replace needs an alignment")
        return replace_words(prep.contour, prep.alignment, bank, "corpus", rng), None
    if system.startswith("model:"):
        model, model_grid = load_model(system.split(":", 1)[1])
        use_grid = model_grid or grid
        feats = utterance_features(prep)
        out, contour = model.generate(
            feats, None, ConstraintTrack.empty(len(prep.contour)), use_grid, rng
        )
        return contour, out.post_logits
    raise EvalError(f"unknown system {system!r}")


def eval_run(manifest_path, systems: list[str], out_dir, seed: int = 0) -> EvalReport:
    """Score every system against every reference contour in the manifest.

    Missing or unreadable utterances are listed as exclusions and the run
    continues; callers signal partial success from report.partial.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = load_manifest(manifest_path)

    prepared: list = []
    report = EvalReport(
        provenance={
            "manifest": str(manifest_path),
            "systems": list(systems),
            "seed": seed,
            "config_hash": hashlib.sha256(
                json.dumps({"systems": sorted(systems), "seed": seed}).encode()
            ).hexdigest()[:16],
        }
    )
    for record in records:
        try:
            if not record.audio_path.exists():
                raise FileNotFoundError(f"missing audio file {record.audio_path}")
            prepared.append(prepare_utterance(record))
        except Exception as exc:
            report.excluded.append({"utterance": record.utt_id, "reason": str(exc)})
    if not prepared:
        raise EvalError("no usable utterances in manifest")

    stats = speaker_stats([p.contour for p in prepared])
    grid = build_grid(stats)
    bank_entries = []
    for p in prepared:
        if p.alignment is not None:
            bank_entries.extend(bank_from_utterance("corpus", p.contour, p.alignment).entries)
    bank = WordContourBank(entries=tuple(bank_entries))

    for s_idx, system in enumerate(systems):
        for u_idx, prep in enumerate(prepared):
            rng = RngStream(seed, key=(s_idx, u_idx))
            try:
                hyp, post_logits = _hypothesis(system, prep, stats, bank, rng, grid)
            except Exception as exc:
                report.excluded.append(
                    {"utterance": prep.record.utt_id, "system": system, "reason": str(exc)}
                )
                continue
            ref = prep.contour
            both = ref.voiced & hyp.voiced
            value = rmse(ref, hyp) if np.any(both) else 0.0
            model_nll = None
            if post_logits is not None:
                model_nll = nll(post_logits, quantize(ref, grid), ref.voiced)
            report.per_utterance.append(
                UtteranceMetrics(
                    utt_id=prep.record.utt_id,
                    system=system,
                    frames=len(ref),
                    mutual_voiced_frames=int(both.sum()),
                    rmse_log2=value,
                    nll=model_nll,
                    vuv_tp=int(np.sum(ref.voiced & hyp.voiced)),
                    vuv_ref=int(ref.voiced.sum()),
                    vuv_hyp=int(hyp.voiced.sum()),
                )
            )

    with open(out_dir / "per_utterance.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for m in report.per_utterance:
            writer.writerow(
                [
                    m.utt_id, m.system, m.frames, m.mutual_voiced_frames,
                    f"{m.rmse_log2:.6f}", "" if m.nll is None else f"{m.nll:.6f}",
                    f"{m.vuv_precision:.4f}", f"{m.vuv_recall:.4f}",
                ]
            )
    (out_dir / "aggregate.json").write_text(json.dumps(report.to_dict(), indent=2))
    return report
