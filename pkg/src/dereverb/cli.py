"""Command-line front end: dereverb, simulate, evaluate, bench.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 run dominated by
skipped numerical updates (more than half of any update kind).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import awpe, figures, metrics, simulator, wavio
from .pipeline import EngineConfig, StreamResult, process_stream

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3

SCHEME_FLAGS = {"mc": "multichannel", "pw": "pairwise"}


class UsageError(Exception):
    pass


class IoError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dereverb",
                     description="Online multichannel speech dereverberation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dereverb", help="dereverberate a multichannel WAV")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--method", choices=("smif", "awpe"), default="smif")
    p.add_argument("--scheme", choices=tuple(SCHEME_FLAGS), default=None)
    p.add_argument("--mode", choices=("online", "batch-ident"), default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--channels", type=int, default=None,
                   help="use only the first N input channels")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--figures", default=None, metavar="DIR")
    p.add_argument("--redact-timing", action="store_true",
                   help="zero timing fields in the report for diffability")

    p = sub.add_parser("simulate", help="generate a synthetic scene")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("evaluate", help="score an enhanced WAV against a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--enhanced", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--figures", default=None, metavar="DIR")

    p = sub.add_parser("bench", help="measure real-time factors on a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--method", choices=("smif", "awpe"), default="smif")
    p.add_argument("--scheme", choices=tuple(SCHEME_FLAGS), default=None)
    p.add_argument("--mode", choices=("online", "batch-ident"), default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--figures", default=None, metavar="DIR")
    p.add_argument("--redact-timing", action="store_true")
    return parser


def _parse_key_values(path: Path) -> dict:
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def _coerce_field(name: str, text: str, hint: str):
    if text.lower() in ("none", ""):
        return None
    try:
        if "int" in hint:
            return int(text)
        if "float" in hint:
            return float(text)
    except ValueError as exc:
        raise UsageError(f"bad value for config key {name!r}: {text!r}") from exc
    return text


def _config_from_file(cls, path: str | None) -> dict:
    if path is None:
        return {}
    file_path = Path(path)
    if not file_path.exists():
        raise IoError(f"config file not found: {file_path}")
    known = {f.name: str(f.type) for f in fields(cls)}
    out = {}
    for key, value in _parse_key_values(file_path).items():
        if key not in known:
            raise UsageError(f"unknown config key {key!r} for {cls.__name__}")
        out[key] = _coerce_field(key, value, known[key])
    return out


def _load_input(path: str, channels: int | None):
    file_path = Path(path)
    if not file_path.exists():
        raise IoError(f"input file not found: {file_path}")
    try:
        rate, samples = wavio.read_wav(file_path)
    except (ValueError, OSError) as exc:
        raise IoError(f"unreadable WAV {file_path}: {exc}") from exc
    if samples.ndim == 1:
        samples = samples[:, None]
    samples = samples.T                      # (channels, n)
    if rate != 16000:
        raise IoError(f"unsupported sample rate {rate} Hz (need 16000); "
                      "resample the file first")
    if channels is not None:
        if channels < 2 or channels > samples.shape[0]:
            raise UsageError(f"--channels {channels} out of range for "
                             f"{samples.shape[0]}-channel input")
        samples = samples[:channels]
    if samples.shape[0] < 2:
        raise IoError("input must have at least two channels")
    return rate, samples


def _run_method(args, samples) -> StreamResult:
    if args.method == "awpe":
        if args.scheme is not None or args.mode is not None:
            raise UsageError("--scheme/--mode apply to the smif method only")
        overrides = _config_from_file(awpe.AwpeConfig, args.config)
        if args.threads is not None:
            overrides["threads"] = args.threads
        cfg = awpe.AwpeConfig(**overrides)
        try:
            cfg.validate()
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        return awpe.process_stream(cfg, samples)

    overrides = _config_from_file(EngineConfig, args.config)
    if args.scheme is not None:
        overrides["scheme"] = SCHEME_FLAGS[args.scheme]
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.threads is not None:
        overrides["threads"] = args.threads
    try:
        cfg = EngineConfig(**overrides)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return process_stream(cfg, samples)


def _write_report(path: str | None, result: StreamResult, redact: bool) -> None:
    if path is None:
        return
    Path(path).write_text(result.report.to_json(redact_timing=redact))


def _dereverb_figures(args, result: StreamResult, samples, fs) -> None:
    if args.figures is None:
        return
    out = Path(args.figures)
    out.mkdir(parents=True, exist_ok=True)
    hop = result.report.config["hop"]
    times = np.arange(result.report.frames_processed) * hop / fs
    rows = zip(range(len(times)), times, result.filter_energy,
               result.floored_per_frame)
    figures.write_csv(out / "diagnostics.csv",
                      ["frame", "time_s", "filter_energy", "floored_fraction"],
                      rows)
    figures.timeline_figure(out / "filter_energy.png", times,
                            {"total ||h||^2": result.filter_energy},
                            "filter energy", "Inverse-filter energy")
    figures.timeline_figure(out / "floored_fraction.png", times,
                            {"floored": result.floored_per_frame},
                            "fraction of bins", "Magnitude-floor activity")
    cfg = simulator.StftConfig(sample_rate=fs)
    figures.spectrogram_figure(out / "spectrograms.png",
                               {"input (channel 1)": samples[0],
                                "output": result.output}, cfg)


def cmd_dereverb(args) -> int:
    fs, samples = _load_input(args.input, args.channels)
    result = _run_method(args, samples)
    wavio.write_wav(args.output, fs, result.output.astype(np.float32))
    _write_report(args.report, result, args.redact_timing)
    _dereverb_figures(args, result, samples, fs)
    if result.worst_skip_fraction > 0.5:
        print(f"warning: {100 * result.worst_skip_fraction:.0f}% of updates "
              "were skipped; output is unreliable", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise IoError(f"scenario file not found: {spec_path}")
    try:
        spec = simulator.ScenarioSpec.load(spec_path)
    except ValueError as exc:
        raise UsageError(f"invalid scenario: {exc}") from exc
    scene = simulator.build_scene(spec, seed=args.seed)
    simulator.save_scene(scene, args.out_dir)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    scene_dir = Path(args.scene)
    if not scene_dir.exists():
        raise IoError(f"scene directory not found: {scene_dir}")
    try:
        scene = simulator.load_scene(scene_dir)
    except FileNotFoundError as exc:
        raise IoError(str(exc)) from exc
    enhanced_path = Path(args.enhanced)
    if not enhanced_path.exists():
        raise IoError(f"enhanced file not found: {enhanced_path}")
    _, enhanced = wavio.read_wav(enhanced_path)
    if enhanced.ndim > 1:
        enhanced = enhanced[:, 0]

    report = metrics.improvement_report(scene.reference, scene.mics[0],
                                        enhanced, scene.stft)
    doc = {
        "scene": str(scene_dir),
        "enhanced": str(enhanced_path),
        "frames": int(len(report["lsd_enhanced_db"])),
        "mean_lsd_unprocessed_db": report["mean_lsd_unprocessed_db"],
        "mean_lsd_enhanced_db": report["mean_lsd_enhanced_db"],
        "median_improvement_db": report["median_improvement_db"],
        "mean_improvement_db": report["mean_improvement_db"],
    }
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=2) + "\n")
    else:
        print(json.dumps(doc, indent=2))

    if args.figures:
        out = Path(args.figures)
        out.mkdir(parents=True, exist_ok=True)
        hop, fs = scene.stft.hop, scene.sample_rate
        times = np.arange(len(report["lsd_enhanced_db"])) * hop / fs
        rows = zip(range(len(times)), times, report["lsd_unprocessed_db"],
                   report["lsd_enhanced_db"], report["improvement_per_frame_db"])
        figures.write_csv(out / "lsd_per_frame.csv",
                          ["frame", "time_s", "lsd_unprocessed_db",
                           "lsd_enhanced_db", "improvement_db"], rows)
        figures.timeline_figure(out / "lsd_timeline.png", times,
                                {"unprocessed": report["lsd_unprocessed_db"],
                                 "enhanced": report["lsd_enhanced_db"]},
                                "LSD [dB]", "Log-spectral distance to reference")
        figures.spectrogram_figure(out / "spectrograms.png",
                                   {"reference": scene.reference,
                                    "unprocessed (channel 1)": scene.mics[0],
                                    "enhanced": enhanced[: len(scene.reference)]},
                                   scene.stft)
    return EXIT_OK


def cmd_bench(args) -> int:
    scene_dir = Path(args.scene)
    if not scene_dir.exists():
        raise IoError(f"scene directory not found: {scene_dir}")
    scene = simulator.load_scene(scene_dir)
    samples = scene.mics
    if args.channels is not None:
        if args.channels < 2 or args.channels > samples.shape[0]:
            raise UsageError(f"--channels {args.channels} out of range")
        samples = samples[: args.channels]
    result = _run_method(args, samples)
    _write_report(args.report, result, args.redact_timing)
    if args.report is None:
        print(result.report.to_json(redact_timing=args.redact_timing), end="")
    if args.figures:
        out = Path(args.figures)
        out.mkdir(parents=True, exist_ok=True)
        stage = result.report.stage_seconds
        figures.write_csv(out / "stages.csv", ["stage", "seconds"],
                          stage.items())
        figures.stage_bar_figure(out / "stages.png", stage,
                                 f"{args.method} stage times")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    handlers = {"dereverb": cmd_dereverb, "simulate": cmd_simulate,
                "evaluate": cmd_evaluate, "bench": cmd_bench}
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
