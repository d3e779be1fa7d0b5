"""Command-line entry point: ``ordirs <command> ...``.

Exit status is 0 on success, 1 for user errors (bad flags, invalid input or
configuration) and 2 when a backend or language model fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ordirs import __version__
from ordirs.config import AppConfig, load_config
from ordirs.dt_core import DtFrame, RleMask, decode_rle, read_stream, write_stream
from ordirs.dt_core.stream import atomic_write_bytes, atomic_write_text
from ordirs.errors import BackendError, OrdirsError, PlanError
from ordirs.llm import LlmClient

log = logging.getLogger("ordirs")

OVERLAY_COLOR = np.array([255, 0, 0], dtype=np.float64)
OVERLAY_ALPHA = 0.5
CANVAS_GRAY = 128


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _json(obj: Any) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def _jsonl(rows: Sequence[Any]) -> str:
    return "".join(json.dumps(r, separators=(",", ":"), ensure_ascii=False) + "\n" for r in rows)


# -- shared helpers ---------------------------------------------------------


def make_llm(cfg: AppConfig) -> LlmClient:
    from ordirs.llm import CassetteLlm, LiveLlm, RecordingLlm
    from ordirs.synth_world import ScriptedLlm

    if cfg.llm_mode == "scripted":
        return ScriptedLlm.from_file(cfg.llm_rules) if cfg.llm_rules else ScriptedLlm.default()
    if cfg.llm_mode == "replay":
        if not cfg.llm_cassette:
            raise OrdirsError("replay mode needs an LLM cassette path")
        return CassetteLlm(cfg.llm_cassette)
    cfg.check_live()
    live = LiveLlm(cfg.llm_model, url=cfg.llm_url, max_concurrency=cfg.llm_concurrency)
    return RecordingLlm(live, cfg.llm_cassette) if cfg.llm_cassette else live


def load_frames(path: Path, video: str | None = None) -> dict[str, list[DtFrame]]:
    by_video: dict[str, list[DtFrame]] = {}
    for f in read_stream(path):
        by_video.setdefault(f.video_id, []).append(f)
    if video is not None:
        if video not in by_video:
            raise OrdirsError(f"video {video!r} not in {path}; available: {sorted(by_video)}")
        return {video: by_video[video]}
    return by_video


def _select(frames: list[DtFrame], span: str | None) -> list[DtFrame]:
    if not span:
        return frames
    try:
        a, b = (int(x) for x in span.split(":"))
    except ValueError:
        raise OrdirsError(f"--range expects START:END, got {span!r}") from None
    return [f for f in frames if a <= f.frame_index <= b]


def mask_png(mask: RleMask) -> bytes:
    from ordirs.perception.imaging import encode_png

    return encode_png(decode_rle(mask) * 255)


def overlay_png(mask: RleMask, base: np.ndarray | None) -> bytes:
    """Blend the mask onto ``base`` (or a grey canvas) in a fixed colour at 50% alpha."""
    from ordirs.perception.imaging import encode_png

    if base is None:
        base = np.full((mask.height, mask.width, 3), CANVAS_GRAY, dtype=np.uint8)
    img = np.asarray(base, dtype=np.float64)[..., :3].copy()
    on = decode_rle(mask).astype(bool)
    img[on] = (1 - OVERLAY_ALPHA) * img[on] + OVERLAY_ALPHA * OVERLAY_COLOR
    return encode_png(np.rint(img).astype(np.uint8))


def _frame_image(frames_dir: Path | None, video: str, index: int) -> np.ndarray | None:
    if frames_dir is None:
        return None
    from ordirs.perception.imaging import load_image

    for cand in (frames_dir / video / f"{index:04d}.png", frames_dir / f"{index:04d}.png"):
        if cand.exists():
            return load_image(cand)
    return None


# -- commands ---------------------------------------------------------------


def cmd_synth(args: argparse.Namespace, cfg: AppConfig) -> int:
    from ordirs.perception.imaging import encode_png
    from ordirs.synth_world import BUNDLED_SCENARIOS, bundled_path, generate_scenario, gt_frames, load_scenarios
    from ordirs.eval_metrics import save_annotations

    sources = args.scenario or list(BUNDLED_SCENARIOS)
    specs = []
    for src in sources:
        path = Path(src)
        if not path.exists() and src in BUNDLED_SCENARIOS:
            path = bundled_path(f"{src}.yaml")
        specs += load_scenarios(path)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise OrdirsError(f"scenario names must be unique: {names}")
    out = Path(args.out)
    multi = len(specs) > 1
    samples = []
    for spec in specs:
        gen = generate_scenario(spec)
        frame_dir = out / "frames" / spec.name if multi else out / "frames"
        for t, img in enumerate(gen.images):
            atomic_write_bytes(frame_dir / f"{t:04d}.png", encode_png(img))
        write_stream(gt_frames(gen.world, cfg.pipeline), out / "gt" / f"{spec.name}.dt.jsonl")
        samples += gen.annotations
    save_annotations(samples, out / "annotations.json")
    atomic_write_text(out / "scenario.json", _json({"scenarios": [s.source for s in specs]}))
    print(f"wrote {len(specs)} scenario(s), {len(samples)} annotation samples to {out}")
    return 0


def _video_dirs(frames_dir: Path) -> list[tuple[str | None, Path]]:
    subdirs = sorted(p for p in frames_dir.iterdir() if p.is_dir())
    if subdirs:
        return [(p.name, p) for p in subdirs]
    return [(None, frames_dir)]


def cmd_build_dt(args: argparse.Namespace, cfg: AppConfig) -> int:
    from ordirs.perception.imaging import iter_frame_files, load_image
    from ordirs.perception.pipeline import build_dt_stream

    frames_dir = Path(args.frames)
    if not frames_dir.is_dir():
        raise OrdirsError(f"frame directory {frames_dir} not found")
    videos = _video_dirs(frames_dir)
    worlds: dict[str, Any] = {}
    if cfg.backend == "synthetic":
        from ordirs.synth_world import build_world, load_scenarios

        scen = Path(args.scenario) if args.scenario else frames_dir.parent / "scenario.json"
        if not scen.exists():
            raise OrdirsError(f"synthetic backend needs --scenario (no {scen})")
        worlds = {s.name: s for s in load_scenarios(scen)}
    else:
        cfg.check_live()

    all_frames: list[DtFrame] = []
    for name, directory in videos:
        video_id = args.video_id or name or (next(iter(worlds)) if len(worlds) == 1 else "")
        if cfg.backend == "synthetic":
            from ordirs.synth_world import SyntheticBackend, build_world

            if video_id not in worlds:
                raise OrdirsError(f"no scenario named {video_id!r}; known: {sorted(worlds)}")
            backend: Any = SyntheticBackend(build_world(worlds[video_id]), cfg.noise)
            fps = worlds[video_id].fps
        else:
            from ordirs.perception.live import Cassette, HttpBackend

            cassette = Cassette(args.cassette, args.cassette_mode) if args.cassette else None
            backend = HttpBackend(cfg.endpoints, timeouts=cfg.timeouts, cassette=cassette)
            fps = cfg.fps
        images = [(idx, load_image(path)) for idx, path in iter_frame_files(directory)]
        if not images:
            raise OrdirsError(f"no NNNN.png frames in {directory}")
        all_frames += build_dt_stream(images, cfg.pipeline, backend, video_id=video_id, fps=fps, jobs=cfg.jobs)
    n = write_stream(all_frames, Path(args.out))
    print(f"wrote {n} frames to {args.out}")
    return 0


def cmd_segment(args: argparse.Namespace, cfg: AppConfig) -> int:
    import time

    from ordirs.rs_engine import segment_frames

    llm = make_llm(cfg)
    out = Path(args.out)
    rows, traces, timing, plans = [], [], [], []
    for video, frames in load_frames(Path(args.dt), args.video).items():
        frames = _select(frames, args.range)
        if not frames:
            continue
        results, plan = segment_frames(args.query, frames, llm, zones=cfg.zones, jobs=cfg.jobs)
        plans.append({"video_id": video, **plan.to_dict()})
        for r in results:
            atomic_write_bytes(out / "masks" / video / f"{r.frame_index:04d}.png", mask_png(r.mask))
            rows.append({"video_id": video, "frame_index": r.frame_index, "final": r.final, "empty": r.empty_flag,
                         "error": r.error, "mask": r.mask.to_dict()})
            traces.append(r.to_trace_dict())
            timing.append({"video_id": video, "frame_index": r.frame_index, "elapsed_s": r.elapsed_s})
    if not rows:
        raise OrdirsError("no frames selected")
    atomic_write_text(out / "masks.jsonl", _jsonl(rows))
    atomic_write_text(out / "plan.json", _json(plans[0] if len(plans) == 1 else plans))
    atomic_write_text(Path(args.trace) if args.trace else out / "trace.jsonl", _jsonl(traces))
    atomic_write_text(out / "timing.json", _json(timing))
    errors = sum(1 for r in rows if r["error"])
    print(f"segmented {len(rows)} frames ({sum(1 for r in rows if not r['empty'])} non-empty, {errors} errors) into {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace, cfg: AppConfig) -> int:
    from ordirs.eval_metrics import load_annotations, run_benchmark

    llm = make_llm(cfg)
    samples = load_annotations(args.annotations)
    frames = load_frames(Path(args.dt))
    report = run_benchmark(samples, frames, llm, jobs=cfg.jobs)
    path = Path(args.report)
    atomic_write_text(path, _json(report.to_dict(include_timing=False)))
    table = report.render_table(include_timing=True)
    atomic_write_text(path.with_suffix(".txt"), table)
    atomic_write_text(path.with_suffix(".timing.json"), _json(report.to_dict(include_timing=True)["time_s"]))
    sys.stdout.write(table)
    failed = [s.sample_id for s in report.samples if s.error]
    if failed:
        print(f"{len(failed)} sample(s) reported errors: {', '.join(failed)}", file=sys.stderr)
    return 0


def cmd_analyze(args: argparse.Namespace, cfg: AppConfig) -> int:
    from ordirs.or_agent import compose_report, plan_analysis, run_all

    llm = make_llm(cfg)
    by_video = load_frames(Path(args.dt), args.video)
    if len(by_video) > 1:
        raise OrdirsError(f"the stream holds several videos {sorted(by_video)}; choose one with --video")
    (video, frames), = by_video.items()
    frames = _select(frames, args.range)
    if not frames:
        raise OrdirsError("no frames selected")
    fps = args.fps if args.fps is not None else cfg.fps
    transcripts: list[dict[str, Any]] = []
    subs = plan_analysis(args.query, llm, transcripts=transcripts)
    results = run_all(subs, frames, llm, fps=fps, jobs=cfg.jobs)
    out = Path(args.out)
    frames_dir = Path(args.frames) if args.frames else None
    for res in results:
        for f, mask in sorted(res.masks.items()):
            ref = f"evidence/{res.subquery_id}_{f:04d}.png"
            atomic_write_bytes(out / ref, overlay_png(mask, _frame_image(frames_dir, video, f)))
            res.evidence[f] = ref
    report = compose_report(args.query, subs, results, llm)
    report.transcripts = transcripts + report.transcripts
    atomic_write_text(out / "report.md", report.to_markdown())
    atomic_write_text(out / "report.json", report.to_json())
    atomic_write_text(out / "transcripts.json", _json(report.transcripts))
    print(report.answer)
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ordirs", description="Digital-twin reasoning segmentation and workflow analysis.")
    p.add_argument("--version", action="version", version=f"ordirs {__version__}")
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--jobs", type=int, help="worker cap for parallel stages")
    p.add_argument("--llm", choices=("scripted", "live", "replay"), help="language model mode")
    p.add_argument("--rules", help="rule table for the scripted language model")
    p.add_argument("--llm-cassette", help="LLM transcript file (recorded in live mode, read in replay mode)")
    p.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="materialize synthetic scenarios into a corpus")
    s.add_argument("--scenario", nargs="*", help="scenario files or bundled names (default: all bundled)")
    s.add_argument("--out", required=True)

    s = sub.add_parser("build-dt", help="run perception over a frame directory")
    s.add_argument("--frames", required=True)
    s.add_argument("--backend", choices=("live", "synthetic"))
    s.add_argument("--out", required=True)
    s.add_argument("--scenario", help="scenario file for the synthetic backend (default: <frames>/../scenario.json)")
    s.add_argument("--video-id", help="video id for a single-video frame directory")
    s.add_argument("--fps", type=float)
    s.add_argument("--jitter", type=float, help="synthetic box jitter sigma in pixels")
    s.add_argument("--score-sigma", type=float, help="synthetic score noise sigma")
    s.add_argument("--noise-seed", type=int)
    s.add_argument("--cassette", help="perception cassette file")
    s.add_argument("--cassette-mode", choices=("record", "replay"), default="replay")

    s = sub.add_parser("segment", help="segment one query over a DT stream")
    s.add_argument("--dt", required=True)
    s.add_argument("--query", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--trace")
    s.add_argument("--video")
    s.add_argument("--range", help="inclusive frame range START:END")

    s = sub.add_parser("evaluate", help="score annotations against the engine")
    s.add_argument("--dt", required=True)
    s.add_argument("--annotations", required=True)
    s.add_argument("--report", required=True)

    s = sub.add_parser("analyze", help="run the workflow-analysis agent")
    s.add_argument("--dt", required=True)
    s.add_argument("--query", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--fps", type=float)
    s.add_argument("--video")
    s.add_argument("--range", help="inclusive frame range START:END")
    s.add_argument("--frames", help="frame images for evidence overlays")
    return p


COMMANDS = {
    "synth": cmd_synth,
    "build-dt": cmd_build_dt,
    "segment": cmd_segment,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
}


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    o: dict[str, Any] = {"jobs": args.jobs, "llm_mode": args.llm, "llm_rules": args.rules, "llm_cassette": args.llm_cassette}
    if getattr(args, "backend", None):
        o["backend"] = args.backend
    if args.command == "build-dt" and args.fps is not None:
        o["fps"] = args.fps
    noise = {k: v for k, v in (("jitter_sigma", getattr(args, "jitter", None)),
                                ("score_sigma", getattr(args, "score_sigma", None)),
                                ("seed", getattr(args, "noise_seed", None))) if v is not None}
    if noise:
        o["noise"] = noise
    return o


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, overrides=_overrides(args))
        return COMMANDS[args.command](args, cfg)
    except (BackendError, PlanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OrdirsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
