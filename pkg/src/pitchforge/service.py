"""Project-scoped HTTP API driving the contour editor.

A project bundles one uploaded utterance (audio + alignment + embeddings)
with its pitch analysis, speaker-adaptive quantization grid and an
append-only list of renditions (generated contours and synthesized audio).
Project state lives entirely on disk; every request reloads it, so a server
restart loses nothing. Mutations take a per-project lock; the manifest is
written atomically via rename.
"""
from __future__ import annotations

import json
import os
import tempfile
import threading
import uuid
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, File, Form, UploadFile
from fastapi.responses import JSONResponse, Response

from .audio import AudioBuffer, FrameGrid, load_audio, wav_bytes
from .corpus import load_model
from .evaluate import make_lowpass_stimulus
from .features import Alignment, WordEmbeddingTable, assemble_features, load_alignment, load_embeddings
from .model import CdarModel, ConstraintTrack
from .nn import RngStream
from .pitch import F0Contour, analyze, speaker_stats
from .psola import pitch_shift
from .quantizer import QuantGrid, build_grid, quantize

ORIGINAL_RENDITION = "original"


class ServiceError(Exception):
    def __init__(self, status: int, component: str, message: str):
        super().__init__(message)
        self.status = status
        self.component = component


@dataclass
class Project:
    project_id: str
    root: Path
    grid: QuantGrid
    analysis: F0Contour
    renditions: list[dict]
    model_id: Optional[str]
    t_high: float
    t_low: float

    @property
    def frame_count(self) -> int:
        return len(self.analysis)

    def audio(self) -> AudioBuffer:
        return load_audio(self.root / "audio.wav")

    def alignment(self) -> Alignment:
        return load_alignment(self.root / "alignment.json")

    def embeddings(self) -> WordEmbeddingTable:
        return load_embeddings(self.root / "embeddings.bin")

    def rendition(self, rendition_id: str) -> dict:
        for r in self.renditions:
            if r["id"] == rendition_id:
                return r
        raise ServiceError(404, "rendition", f"unknown rendition {rendition_id!r}")

    def rendition_wav(self, rendition_id: str) -> Path:
        return self.root / "renditions" / f"{rendition_id}.wav"

    def working_contour(self) -> F0Contour:
        for r in reversed(self.renditions):
            if r.get("contour"):
                return F0Contour.from_dict(r["contour"])
        return self.analysis


class ProjectStore:
    def __init__(self, root, models_dir=None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.models_dir = Path(models_dir) if models_dir else None
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def lock(self, project_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(project_id, threading.Lock())

    def _manifest_path(self, project_id: str) -> Path:
        return self.root / project_id / "manifest.json"

    def _write_manifest(self, project: Project) -> None:
        doc = {
            "id": project.project_id,
            "grid": project.grid.to_dict(),
            "analysis": project.analysis.to_dict(),
            "renditions": project.renditions,
            "model_id": project.model_id,
            "t_high": project.t_high,
            "t_low": project.t_low,
        }
        path = self._manifest_path(project.project_id)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                json.dump(doc, fh)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)

    def load(self, project_id: str) -> Project:
        path = self._manifest_path(project_id)
        if not path.exists():
            raise ServiceError(404, "project", f"unknown project {project_id!r}")
        doc = json.loads(path.read_text())
        return Project(
            project_id=project_id,
            root=path.parent,
            grid=QuantGrid.from_dict(doc["grid"]),
            analysis=F0Contour.from_dict(doc["analysis"]),
            renditions=doc["renditions"],
            model_id=doc.get("model_id"),
            t_high=doc.get("t_high", 0.6),
            t_low=doc.get("t_low", 0.4),
        )

    def create(
        self,
        wav_blob: bytes,
        alignment_blob: bytes,
        embeddings_blob: bytes,
        model_id: Optional[str],
        t_high: float = 0.6,
        t_low: float = 0.4,
    ) -> Project:
        try:
            audio = load_audio(wav_blob)
        except Exception as exc:
            raise ServiceError(422, "audio", str(exc)) from exc
        try:
            alignment = load_alignment(json.loads(alignment_blob), audio_duration=audio.duration)
        except Exception as exc:
            raise ServiceError(422, "alignment", str(exc)) from exc
        try:
            import io

            embeddings = load_embeddings(io.BytesIO(embeddings_blob))
            if len(embeddings) < len(alignment.words):
                raise ValueError(
                    f"embedding table has {len(embeddings)} rows for {len(alignment.words)} words"
                )
        except Exception as exc:
            raise ServiceError(422, "embeddings", str(exc)) from exc

        try:
            contour = analyze(audio, t_high=t_high, t_low=t_low)
            grid = build_grid(speaker_stats([contour]))
        except Exception as exc:
            raise ServiceError(422, "analysis", str(exc)) from exc

        project_id = uuid.uuid4().hex[:12]
        root = self.root / project_id
        (root / "renditions").mkdir(parents=True)
        (root / "audio.wav").write_bytes(wav_bytes(audio))
        (root / "alignment.json").write_bytes(alignment_blob)
        (root / "embeddings.bin").write_bytes(embeddings_blob)
        project = Project(
            project_id=project_id,
            root=root,
            grid=grid,
            analysis=contour,
            renditions=[],
            model_id=model_id,
            t_high=t_high,
            t_low=t_low,
        )
        self._write_manifest(project)
        return project

    def model_path(self, model_id: str) -> Path:
        base = self.models_dir if self.models_dir else self.root / "models"
        return base / f"{model_id}.ckpt"


def _validate_ranges(ranges, frame_count, component):
    merged = np.zeros(frame_count, dtype=bool)
    for r in ranges:
        start, end = int(r["start_frame"]), int(r["end_frame"])
        if not (0 <= start < end <= frame_count):
            raise ServiceError(
                422, component, f"range [{start}, {end}) outside frames [0, {frame_count})"
            )
        merged[start:end] = True
    return merged


def build_constraints(project: Project, body: dict) -> ConstraintTrack:
    """keep_regions freeze the working contour; explicit strokes win overlaps."""
    n = project.frame_count
    voiced = project.analysis.voiced
    mask = np.zeros(n, dtype=bool)
    bins = np.zeros(n, dtype=np.int64)

    keep = body.get("keep_regions") or []
    _validate_ranges(keep, n, "keep_regions")
    if keep:
        working_bins = quantize(project.working_contour(), project.grid)
        for r in keep:
            sl = slice(int(r["start_frame"]), int(r["end_frame"]))
            mask[sl] = True
            bins[sl] = working_bins[sl]

    explicit = body.get("constraints") or []
    _validate_ranges(explicit, n, "constraints")
    for r in explicit:
        start, end = int(r["start_frame"]), int(r["end_frame"])
        hz = np.asarray(r.get("hz", []), dtype=np.float64)
        if len(hz) != end - start:
            raise ServiceError(
                422, "constraints", f"range [{start}, {end}) expects {end - start} hz values, got {len(hz)}"
            )
        if np.any(~np.isfinite(hz)) or np.any(hz[voiced[start:end]] <= 0):
            raise ServiceError(422, "constraints", "hz values must be finite and positive")
        seg_voiced = voiced[start:end]
        seg_contour = F0Contour(hz=np.where(seg_voiced, hz, 1.0), voiced=seg_voiced)
        seg_bins = quantize(seg_contour, project.grid)
        mask[start:end] = True
        bins[start:end] = seg_bins
    return ConstraintTrack(mask=mask, bins=bins)


def create_app(data_dir, models_dir=None) -> FastAPI:
    app = FastAPI(title="pitchforge", version="0.1.0")
    store = ProjectStore(data_dir, models_dir)
    app.state.store = store

    @app.exception_handler(ServiceError)
    async def service_error_handler(_, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status,
            content={"detail": {"component": exc.component, "message": str(exc)}},
        )

    @app.post("/projects", status_code=201)
    async def create_project(
        audio: UploadFile = File(...),
        alignment: UploadFile = File(...),
        embeddings: UploadFile = File(...),
        model_id: Optional[str] = Form(None),
    ):
        project = store.create(
            await audio.read(), await alignment.read(), await embeddings.read(), model_id
        )
        return {"id": project.project_id}

    @app.get("/projects/{project_id}/analysis")
    async def get_analysis(project_id: str):
        project = store.load(project_id)
        grid = FrameGrid(frame_count=project.frame_count)
        align = project.alignment()

        def to_frames(start, end):
            return {
                "start_frame": min(int(start / grid.hop_seconds), project.frame_count),
                "end_frame": min(int(end / grid.hop_seconds), project.frame_count),
            }

        return {
            "id": project_id,
            "frame_count": project.frame_count,
            "hop_seconds": grid.hop_seconds,
            "frames": project.analysis.to_dict(),
            "grid": project.grid.to_dict(),
            "words": [{"text": w.text, **to_frames(w.start, w.end)} for w in align.words],
            "phones": [{"sym": p.symbol, **to_frames(p.start, p.end)} for p in align.phones],
        }

    @app.post("/projects/{project_id}/generate")
    async def post_generate(project_id: str, body: dict):
        with store.lock(project_id):
            project = store.load(project_id)
            if not project.model_id:
                raise ServiceError(409, "model", "project has no model checkpoint attached")
            ckpt = store.model_path(project.model_id)
            if not ckpt.exists():
                raise ServiceError(409, "model", f"checkpoint {project.model_id!r} not found")
            track = build_constraints(project, body)
            model, _ = load_model(ckpt)
            direction = body.get("direction")
            if direction:
                if direction not in ("forward", "reverse"):
                    raise ServiceError(422, "direction", f"invalid direction {direction!r}")
                model = CdarModel(replace(model.cfg, direction=direction), params=model.params)
            seed = int(body.get("seed", 0))
            temperature = float(body.get("temperature", 1.0))
            feats = assemble_features(
                project.alignment(),
                project.embeddings(),
                project.analysis.voiced,
                FrameGrid(frame_count=project.frame_count),
            )
            if feats.width != model.cfg.feature_dim:
                raise ServiceError(
                    409,
                    "model",
                    f"model expects feature width {model.cfg.feature_dim}, project has {feats.width}",
                )
            try:
                _, contour = model.generate(
                    feats, None, track, project.grid, RngStream(seed), temperature=temperature
                )
            except ValueError as exc:
                raise ServiceError(422, "generate", str(exc)) from exc
            rendition = {
                "id": uuid.uuid4().hex[:12],
                "kind": "generated",
                "contour": contour.to_dict(),
                "request": {"seed": seed, "temperature": temperature, "direction": direction},
                "has_audio": False,
            }
            project.renditions.append(rendition)
            (project.root / "renditions" / f"{rendition['id']}.json").write_text(
                json.dumps(rendition)
            )
            store._write_manifest(project)
            return {"rendition_id": rendition["id"], "contour": rendition["contour"]}

    @app.post("/projects/{project_id}/synthesize")
    async def post_synthesize(project_id: str, body: dict):
        with store.lock(project_id):
            project = store.load(project_id)
            if body.get("rendition_id"):
                rendition = project.rendition(body["rendition_id"])
                target = F0Contour.from_dict(rendition["contour"])
                new_rendition = None
            elif body.get("contour"):
                try:
                    target = F0Contour.from_dict(body["contour"])
                except Exception as exc:
                    raise ServiceError(422, "contour", str(exc)) from exc
                rendition = None
                new_rendition = {
                    "id": uuid.uuid4().hex[:12],
                    "kind": "synthesized",
                    "contour": target.to_dict(),
                    "has_audio": False,
                }
            else:
                raise ServiceError(422, "synthesize", "need rendition_id or contour")
            if len(target) != project.frame_count or not np.array_equal(
                target.voiced, project.analysis.voiced
            ):
                raise ServiceError(422, "contour", "target V/UV must match the project analysis")

            out = pitch_shift(project.audio(), project.analysis, target)
            record = rendition or new_rendition
            wav_path = project.rendition_wav(record["id"])
            wav_path.write_bytes(wav_bytes(out))
            record["has_audio"] = True
            if new_rendition is not None:
                project.renditions.append(new_rendition)
                (project.root / "renditions" / f"{record['id']}.json").write_text(json.dumps(record))
            store._write_manifest(project)
            return {"rendition_id": record["id"]}

    @app.get("/projects/{project_id}/audio/{rendition_id}")
    async def get_audio(project_id: str, rendition_id: str, lowpass: bool = False):
        project = store.load(project_id)
        if rendition_id == ORIGINAL_RENDITION:
            blob = (project.root / "audio.wav").read_bytes()
            contour = project.analysis
        else:
            rendition = project.rendition(rendition_id)
            wav_path = project.rendition_wav(rendition_id)
            if not wav_path.exists():
                raise ServiceError(404, "audio", f"rendition {rendition_id!r} has no audio yet")
            blob = wav_path.read_bytes()
            contour = F0Contour.from_dict(rendition["contour"])
        if lowpass:
            blob = wav_bytes(make_lowpass_stimulus(load_audio(blob), contour))
        return Response(content=blob, media_type="audio/wav")

    @app.get("/projects/{project_id}/renditions")
    async def get_renditions(project_id: str):
        project = store.load(project_id)
        return {
            "renditions": [
                {"id": r["id"], "kind": r["kind"], "has_audio": r.get("has_audio", False)}
                for r in project.renditions
            ]
        }

    return app
