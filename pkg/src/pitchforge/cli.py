"""Batch CLI for every pipeline stage: analysis, quantization, training,
generation, baselines, PSOLA shifting, evaluation stimuli and the server.

Exit codes: 0 success, 1 usage error, 2 data error, 3 partial eval success.
A JSON config file supplies defaults; explicit flags win. JSON documents
read "-" as stdin and write "-" as stdout so stages compose in a pipeline.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .audio import AudioError, load_audio, save_wav
from .baselines import WordContourBank, bank_from_utterance, monotone, replace_words, repunctuate_heuristic, swap_words
from .corpus import (
    ManifestError,
    TrainSettings,
    build_training_set,
    load_manifest,
    load_model,
    save_model,
    train_model,
)
from .evaluate import EvalError, eval_run, make_lowpass_stimulus
from .features import AlignmentError, load_alignment, load_embeddings, assemble_features
from .model import ConstraintTrack, ModelConfig
from .nn import RngStream
from .nn.checkpoint import CheckpointError
from .nn.optim import GradientError
from .pitch import F0Contour, PitchError, SpeakerStats, analyze, candidate_posteriorgram, export_posteriorgram, speaker_stats
from .quantizer import QuantGrid, build_grid, dequantize, quantize
from .audio import FrameGrid

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PARTIAL = 3

DATA_ERRORS = (
    AudioError,
    PitchError,
    AlignmentError,
    ManifestError,
    EvalError,
    CheckpointError,
    GradientError,
    FileNotFoundError,
    json.JSONDecodeError,
    ValueError,
    OSError,
)

CONFIG_KEYS = {
    "t_high", "t_low", "seed", "batch_size", "lr", "epochs", "max_steps", "mode",
    "uni_hidden", "bi_hidden", "postnet_channels", "context_hidden", "direction",
    "temperature", "target_accuracy", "host", "port",
}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _read_json(path):
    if path == "-":
        return json.load(sys.stdin)
    return json.loads(Path(path).read_text())


def _write_json(doc, path):
    text = json.dumps(doc, indent=2)
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n")


def _load_config(path) -> dict:
    if not path:
        return {}
    doc = _read_json(path)
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return doc


def _effective(args, config: dict, defaults: dict) -> dict:
    """Merge defaults <- config file <- explicit flags (flags win)."""
    out = dict(defaults)
    for key in defaults:
        if key in config:
            out[key] = config[key]
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
    return out


def _contour_from_file(path) -> F0Contour:
    return F0Contour.from_dict(_read_json(path))


def _stats_from_args(stats_path, contour: F0Contour | None) -> SpeakerStats:
    if stats_path:
        doc = _read_json(stats_path)
        return SpeakerStats(mu=doc["mu"], sigma=doc["sigma"], frame_count=doc.get("frame_count", 0))
    if contour is None:
        raise UsageError("need --stats or a contour to derive statistics from")
    return speaker_stats([contour])


def cmd_analyze(args, config):
    eff = _effective(args, config, {"t_high": 0.6, "t_low": 0.4})
    if args.dry_run:
        _write_json(eff, "-")
        return EXIT_OK
    audio = load_audio(args.audio)
    contour = analyze(audio, t_high=eff["t_high"], t_low=eff["t_low"])
    if args.posteriorgram:
        post, conf = candidate_posteriorgram(audio)
        export_posteriorgram(args.posteriorgram, post, conf)
    _write_json(contour.to_dict(), args.output)
    return EXIT_OK


def cmd_stats(args, config):
    contours = [_contour_from_file(p) for p in args.contours]
    stats = speaker_stats(contours)
    _write_json(
        {"mu": stats.mu, "sigma": stats.sigma, "frame_count": stats.frame_count}, args.output
    )
    return EXIT_OK


def cmd_quantize(args, config):
    contour = _contour_from_file(args.contour)
    grid = build_grid(_stats_from_args(args.stats, contour))
    bins = quantize(contour, grid)
    _write_json({"bins": [int(b) for b in bins], "grid": grid.to_dict()}, args.output)
    return EXIT_OK


def cmd_dequantize(args, config):
    doc = _read_json(args.quantized)
    grid = QuantGrid.from_dict(doc["grid"])
    contour = dequantize(np.asarray(doc["bins"], dtype=np.int64), grid)
    _write_json(contour.to_dict(), args.output)
    return EXIT_OK


def cmd_train(args, config):
    eff = _effective(
        args,
        config,
        {
            "seed": 0, "epochs": 9, "max_steps": None, "batch_size": 32, "lr": 1e-3,
            "mode": "train_ss", "uni_hidden": 256, "bi_hidden": 16,
            "postnet_channels": 128, "context_hidden": 128, "direction": "reverse",
            "target_accuracy": None,
        },
    )
    if args.dry_run:
        _write_json(eff, "-")
        return EXIT_OK
    items, grid, _ = build_training_set(load_manifest(args.manifest))
    cfg = ModelConfig(
        feature_dim=items[0].feats.width,
        uni_hidden=int(eff["uni_hidden"]),
        bi_hidden=int(eff["bi_hidden"]),
        postnet_channels=int(eff["postnet_channels"]),
        context_hidden=int(eff["context_hidden"]),
        direction=eff["direction"],
    )
    log_lines = []

    def log(entry):
        log_lines.append(entry)
        print(json.dumps(entry), file=sys.stderr)

    settings = TrainSettings(
        seed=int(eff["seed"]),
        epochs=int(eff["epochs"]),
        max_steps=None if eff["max_steps"] is None else int(eff["max_steps"]),
        batch_size=int(eff["batch_size"]),
        lr=float(eff["lr"]),
        mode=eff["mode"],
        target_accuracy=None if eff["target_accuracy"] is None else float(eff["target_accuracy"]),
    )
    model = train_model(items, cfg, settings, log=log)
    out = args.output or "model.ckpt"
    save_model(out, model, grid)
    if args.log:
        Path(args.log).write_text("\n".join(json.dumps(e) for e in log_lines) + "\n")
    print(out)
    return EXIT_OK


def _constraints_from_file(path, voiced: np.ndarray, grid: QuantGrid) -> ConstraintTrack:
    doc = _read_json(path)
    n = len(voiced)
    mask = np.zeros(n, dtype=bool)
    bins = np.zeros(n, dtype=np.int64)
    for seg in doc.get("segments", []):
        start = int(seg["start_frame"])
        hz = np.asarray(seg["hz"], dtype=np.float64)
        end = start + len(hz)
        if not 0 <= start < end <= n:
            raise ValueError(f"constraint segment [{start}, {end}) outside [0, {n})")
        seg_voiced = voiced[start:end]
        seg_bins = quantize(F0Contour(hz=np.where(seg_voiced, hz, 1.0), voiced=seg_voiced), grid)
        mask[start:end] = True
        bins[start:end] = seg_bins
    return ConstraintTrack(mask=mask, bins=bins)


def cmd_generate(args, config):
    eff = _effective(args, config, {"seed": 0, "temperature": 1.0, "t_high": 0.6, "t_low": 0.4})
    if args.dry_run:
        _write_json(eff, "-")
        return EXIT_OK
    model, ckpt_grid = load_model(args.checkpoint)
    audio = load_audio(args.audio)
    grid_frames = FrameGrid.for_audio(audio)
    contour = analyze(audio, t_high=eff["t_high"], t_low=eff["t_low"])
    alignment = load_alignment(args.alignment, audio_duration=audio.duration)
    embeddings = load_embeddings(args.embeddings)
    feats = assemble_features(alignment, embeddings, contour.voiced, grid_frames)
    if args.stats:
        grid = build_grid(_stats_from_args(args.stats, None))
    elif ckpt_grid is not None:
        grid = ckpt_grid
    else:
        grid = build_grid(speaker_stats([contour]))
    track = (
        _constraints_from_file(args.constraints, contour.voiced, grid)
        if args.constraints
        else ConstraintTrack.empty(len(contour))
    )
    _, generated = model.generate(
        feats, None, track, grid, RngStream(int(eff["seed"])), temperature=float(eff["temperature"])
    )
    _write_json(generated.to_dict(), args.output)
    return EXIT_OK


def cmd_baseline(args, config):
    eff = _effective(args, config, {"seed": 0})
    contour = _contour_from_file(args.contour)
    stats = _stats_from_args(args.stats, contour)
    rng = RngStream(int(eff["seed"]))
    if args.kind == "monotone":
        out = monotone(contour, stats)
    else:
        if not args.alignment:
            raise UsageError(f"baseline {args.kind!r} requires --alignment")
        alignment = load_alignment(args.alignment)
        if args.kind == "swap":
            out = swap_words(contour, alignment, rng)
        elif args.kind == "replace":
            if args.bank:
                bank = WordContourBank.load(args.bank)
                speaker = args.speaker or (bank.entries[0].speaker if bank.entries else "corpus")
            else:
                bank = bank_from_utterance("self", contour, alignment)
                speaker = "self"
            out = replace_words(contour, alignment, bank, speaker, rng)
        elif args.kind == "repunct":
            out = repunctuate_heuristic(contour, alignment, args.target, stats)
        else:
            raise UsageError(f"unknown baseline kind {args.kind!r}")
    _write_json(out.to_dict(), args.output)
    return EXIT_OK


def cmd_shift(args, config):
    eff = _effective(args, config, {"t_high": 0.6, "t_low": 0.4})
    audio = load_audio(args.audio)
    target = _contour_from_file(args.contour)
    if args.analysis:
        source = _contour_from_file(args.analysis)
    else:
        source = analyze(audio, t_high=eff["t_high"], t_low=eff["t_low"])
    n = min(len(source), len(target))
    if len(source) != len(target):
        raise ValueError(f"analysis has {len(source)} frames, target has {len(target)}")
    if not np.array_equal(source.voiced[:n], target.voiced[:n]):
        raise ValueError("target V/UV differs from the analysis V/UV")
    from .psola import pitch_shift

    save_wav(pitch_shift(audio, source, target), args.output)
    return EXIT_OK


def cmd_lowpass(args, config):
    audio = load_audio(args.audio)
    contour = _contour_from_file(args.contour)
    save_wav(make_lowpass_stimulus(audio, contour), args.output)
    return EXIT_OK


def cmd_eval(args, config):
    eff = _effective(args, config, {"seed": 0})
    systems = [s.strip() for s in args.systems.split(",") if s.strip()]
    if not systems:
        raise UsageError("need at least one system")
    report = eval_run(args.manifest, systems, args.out_dir, seed=int(eff["seed"]))
    print(json.dumps(report.to_dict()["aggregate"], indent=2))
    if report.partial:
        print(f"warning: {len(report.excluded)} exclusions; see report", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_serve(args, config):
    eff = _effective(args, config, {"host": "127.0.0.1", "port": 8000})
    if args.dry_run:
        _write_json(eff, "-")
        return EXIT_OK
    import uvicorn

    from .service import create_app

    app = create_app(args.data_dir, args.models_dir)
    uvicorn.run(app, host=eff["host"], port=int(eff["port"]))
    return EXIT_OK


def build_parser() -> Parser:
    parser = Parser(prog="pitchforge", description=__doc__)
    parser.add_argument("--config", help="JSON config file with defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--dry-run", action="store_true", help="print effective config and exit")
        return p

    p = add("analyze", cmd_analyze, help="WAV -> contour JSON")
    p.add_argument("audio")
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--posteriorgram", help="also export the posteriorgram binary")
    p.add_argument("--t-high", type=float, dest="t_high")
    p.add_argument("--t-low", type=float, dest="t_low")

    p = add("stats", cmd_stats, help="contours -> speaker statistics")
    p.add_argument("contours", nargs="+")
    p.add_argument("-o", "--output", default="-")

    p = add("quantize", cmd_quantize, help="contour -> 128-class bins")
    p.add_argument("contour")
    p.add_argument("--stats")
    p.add_argument("-o", "--output", default="-")

    p = add("dequantize", cmd_dequantize, help="bins -> contour")
    p.add_argument("quantized")
    p.add_argument("-o", "--output", default="-")

    p = add("train", cmd_train, help="manifest -> model checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("-o", "--output")
    p.add_argument("--log", help="write per-epoch JSONL log here")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--mode", choices=["train_dd", "train_ss"])
    p.add_argument("--uni-hidden", type=int, dest="uni_hidden")
    p.add_argument("--bi-hidden", type=int, dest="bi_hidden")
    p.add_argument("--postnet-channels", type=int, dest="postnet_channels")
    p.add_argument("--context-hidden", type=int, dest="context_hidden")
    p.add_argument("--direction", choices=["forward", "reverse"])
    p.add_argument("--target-accuracy", type=float, dest="target_accuracy")

    p = add("generate", cmd_generate, help="features + constraints -> contour")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--alignment", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--constraints")
    p.add_argument("--stats")
    p.add_argument("--seed", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--t-high", type=float, dest="t_high")
    p.add_argument("--t-low", type=float, dest="t_low")
    p.add_argument("-o", "--output", default="-")

    p = add("baseline", cmd_baseline, help="monotone|swap|replace|repunct")
    p.add_argument("kind", choices=["monotone", "swap", "replace", "repunct"])
    p.add_argument("--contour", required=True)
    p.add_argument("--alignment")
    p.add_argument("--bank")
    p.add_argument("--speaker")
    p.add_argument("--target", choices=["question", "statement"], default="question")
    p.add_argument("--stats")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", default="-")

    p = add("shift", cmd_shift, help="impose a target contour via PSOLA")
    p.add_argument("audio")
    p.add_argument("--contour", required=True)
    p.add_argument("--analysis", help="precomputed analysis contour (else analyzed)")
    p.add_argument("--t-high", type=float, dest="t_high")
    p.add_argument("--t-low", type=float, dest="t_low")
    p.add_argument("-o", "--output", required=True)

    p = add("lowpass", cmd_lowpass, help="render the listening stimulus")
    p.add_argument("audio")
    p.add_argument("--contour", required=True)
    p.add_argument("-o", "--output", required=True)

    p = add("eval", cmd_eval, help="score systems against a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--systems", required=True, help="comma-separated: identity,monotone,swap,replace,model:<ckpt>")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--seed", type=int)

    p = add("serve", cmd_serve, help="start the HTTP service")
    p.add_argument("--data-dir", required=True, dest="data_dir")
    p.add_argument("--models-dir", dest="models_dir")
    p.add_argument("--host")
    p.add_argument("--port", type=int)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(args.config)
        return args.fn(args, config)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
