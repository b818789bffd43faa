"""Corpus manifests, utterance preparation, the training loop, and model
checkpoint files (JSON config header + binary parameter block)."""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .audio import AudioBuffer, FrameGrid, load_audio
from .features import Alignment, FrameFeatures, WordEmbeddingTable, assemble_features, load_alignment, load_embeddings
from .model import CdarModel, ModelConfig, TrainItem, sample_training_constraints, scheduled_sampling_prob
from .nn import RngStream, load_params, save_params
from .pitch import F0Contour, SpeakerStats, analyze, speaker_stats
from .quantizer import QuantGrid, build_grid, quantize

_CKPT_HEADER = struct.Struct("<I")


class ManifestError(ValueError):
    pass


@dataclass
class UtteranceRecord:
    utt_id: str
    audio_path: Path
    alignment_path: Optional[Path] = None
    embeddings_path: Optional[Path] = None
    contour_path: Optional[Path] = None


@dataclass
class PreparedUtterance:
    record: UtteranceRecord
    audio: AudioBuffer
    contour: F0Contour
    alignment: Optional[Alignment]
    embeddings: Optional[WordEmbeddingTable]
    grid: FrameGrid


def load_manifest(path) -> list[UtteranceRecord]:
    path = Path(path)
    doc = json.loads(path.read_text())
    if "utterances" not in doc or not isinstance(doc["utterances"], list):
        raise ManifestError("manifest must contain an 'utterances' list")
    base = path.parent
    records = []
    for i, entry in enumerate(doc["utterances"]):
        if "audio" not in entry:
            raise ManifestError(f"utterance {i} missing 'audio'")

        def rel(key):
            return (base / entry[key]).resolve() if entry.get(key) else None

        records.append(
            UtteranceRecord(
                utt_id=str(entry.get("id", f"utt{i:04d}")),
                audio_path=rel("audio"),
                alignment_path=rel("alignment"),
                embeddings_path=rel("embeddings"),
                contour_path=rel("contour"),
            )
        )
    return records


def load_contour_file(path) -> F0Contour:
    return F0Contour.from_dict(json.loads(Path(path).read_text()))


def prepare_utterance(record: UtteranceRecord, t_high: float = 0.6, t_low: float = 0.4) -> PreparedUtterance:
    audio = load_audio(record.audio_path)
    grid = FrameGrid.for_audio(audio)
    if record.contour_path is not None:
        contour = load_contour_file(record.contour_path)
        if len(contour) != grid.frame_count:
            raise ManifestError(
                f"{record.utt_id}: contour has {len(contour)} frames, audio has {grid.frame_count}"
            )
    else:
        contour = analyze(audio, t_high=t_high, t_low=t_low)
    alignment = embeddings = None
    if record.alignment_path is not None:
        alignment = load_alignment(record.alignment_path, audio_duration=audio.duration)
    if record.embeddings_path is not None:
        embeddings = load_embeddings(record.embeddings_path)
    return PreparedUtterance(
        record=record, audio=audio, contour=contour, alignment=alignment, embeddings=embeddings, grid=grid
    )


def utterance_features(prep: PreparedUtterance) -> FrameFeatures:
    if prep.alignment is None or prep.embeddings is None:
        raise ManifestError(f"{prep.record.utt_id}: features need alignment and embeddings")
    return assemble_features(prep.alignment, prep.embeddings, prep.contour.voiced, prep.grid)


def build_training_set(records: list[UtteranceRecord]) -> tuple[list[TrainItem], QuantGrid, SpeakerStats]:
    prepared = [prepare_utterance(r) for r in records]
    stats = speaker_stats([p.contour for p in prepared])
    grid = build_grid(stats)
    items = [
        TrainItem(feats=utterance_features(p), targets=quantize(p.contour, grid)) for p in prepared
    ]
    return items, grid, stats


def save_model(target, model: CdarModel, grid: QuantGrid | None = None) -> None:
    header = {"config": json.loads(model.cfg.to_json())}
    if grid is not None:
        header["grid"] = grid.to_dict()
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    save_params(buf, model.params)
    blob = _CKPT_HEADER.pack(len(header_bytes)) + header_bytes + buf.getvalue()
    if isinstance(target, (str, Path)):
        Path(target).write_bytes(blob)
    else:
        target.write(blob)


def load_model(source) -> tuple[CdarModel, QuantGrid | None]:
    raw = Path(source).read_bytes() if isinstance(source, (str, Path)) else source.read()
    if len(raw) < 4:
        raise ManifestError("truncated model checkpoint")
    (header_len,) = _CKPT_HEADER.unpack_from(raw, 0)
    header = json.loads(raw[4 : 4 + header_len].decode("utf-8"))
    cfg = ModelConfig.from_json(json.dumps(header["config"]))
    params = load_params(io.BytesIO(raw[4 + header_len :]))
    grid = QuantGrid.from_dict(header["grid"]) if header.get("grid") else None
    return CdarModel(cfg, params=params), grid


@dataclass
class TrainSettings:
    seed: int = 0
    epochs: int = 9
    max_steps: Optional[int] = None
    batch_size: int = 32
    lr: float = 1e-3
    mode: str = "train_ss"
    target_accuracy: Optional[float] = None


def train_model(
    items: list[TrainItem],
    cfg: ModelConfig,
    settings: TrainSettings,
    log: Optional[Callable[[dict], None]] = None,
) -> CdarModel:
    """Deterministic training loop; identical settings give identical bytes."""
    model = CdarModel(cfg, seed=settings.seed)
    rng = RngStream(settings.seed, key=(1,))
    step = 0
    for epoch in range(1, settings.epochs + 1):
        ss = scheduled_sampling_prob(epoch, cfg)
        order = rng.child(epoch, 0).permutation(len(items))
        epoch_losses = []
        for lo in range(0, len(items), settings.batch_size):
            batch = [items[i] for i in order[lo : lo + settings.batch_size]]
            step += 1
            srng = rng.child(epoch, step)
            for i, item in enumerate(batch):
                item.constraints = sample_training_constraints(
                    len(item.targets), srng.child(i), item.targets
                )
            loss = model.train_step(batch, srng.child(10_000), lr=settings.lr, mode=settings.mode, ss_prob=ss)
            epoch_losses.append(loss)
            if settings.max_steps and step >= settings.max_steps:
                break
        accuracy = model.teacher_forced_accuracy(items, rng.child(epoch, 999_999))
        if log:
            log(
                {
                    "epoch": epoch,
                    "step": step,
                    "loss": float(np.mean(epoch_losses)) if epoch_losses else None,
                    "ss_prob": ss,
                    "teacher_forced_accuracy": accuracy,
                }
            )
        if settings.target_accuracy and accuracy >= settings.target_accuracy:
            break
        if settings.max_steps and step >= settings.max_steps:
            break
    return model
