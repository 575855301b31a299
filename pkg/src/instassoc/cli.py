"""Command-line entry point: simulate, associate, evaluate, sweep, select-samples, grad-check.

Exit codes: 0 success, 1 usage error, 2 data error, 3 property-check failure.
Set ``IDOL_LOG`` (e.g. ``DEBUG``) to change the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

import numpy as np

from . import records, sim
from .assoc import AssociationConfig, OnlineAssociator, OutOfOrderFrameError
from .config import ConfigError, RunConfig, association_from_mapping, load_config
from .embed import grad_check
from .evaluation import (
    EvaluationError,
    OracleMode,
    clip_oracle,
    evaluate,
    frame_oracle,
)
from .records import RecordError
from .sampling import CostWeights, GroundTruthInstance, Prediction, count_conflicts, select_samples_multi

log = logging.getLogger("instassoc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

PRESETS = {
    "clean": sim.clean_scenario,
    "occlusion": sim.occlusion_scenario,
    "hard": sim.hard_scenario,
    "corruption": sim.corruption_scenario,
}

# CLI flag -> AssociationConfig field
ASSOC_FLAGS = {
    "tau": "tau",
    "window_t": "window_T",
    "match_thresh": "match_threshold",
    "nms": "nms_threshold",
    "new_track_score": "new_track_score",
    "max_age": "max_age",
    "similarity_scale": "similarity_scale",
    "sigma_mode": "sigma_mode",
    "nms_per_class": "nms_per_class",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _max_age(text: str) -> Optional[int]:
    return None if text.lower() in ("none", "inf", "unbounded") else int(text)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_assoc_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("association overrides")
    g.add_argument("--tau", type=float)
    g.add_argument("--window-t", type=int)
    g.add_argument("--match-thresh", type=float)
    g.add_argument("--nms", type=float)
    g.add_argument("--new-track-score", type=float)
    g.add_argument("--max-age", type=_max_age)
    g.add_argument("--similarity-scale", type=float)
    g.add_argument("--sigma-mode", choices=["existence", "matched"])
    g.add_argument("--nms-per-class", action="store_true", default=None)


def _run_config(args) -> RunConfig:
    run = load_config(getattr(args, "config", None))
    overrides = {}
    for flag, name in ASSOC_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None or (flag == "max_age" and _flag_given(args, "--max-age")):
            overrides[name] = value
    if overrides:
        run.association = association_from_mapping(overrides, run.association)
    return run


def _flag_given(args, flag: str) -> bool:
    return any(a == flag or a.startswith(flag + "=") for a in getattr(args, "_argv", ()))


def _open_out(path: Optional[str]):
    return open(path, "w") if path and path != "-" else _NoClose(sys.stdout)


class _NoClose:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        self.fh.flush()


def _write_json(path: Optional[str], obj) -> None:
    with _open_out(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


# --- simulate -------------------------------------------------------------

def cmd_simulate(args) -> int:
    run = _run_config(args)
    if args.preset:
        scenario = PRESETS[args.preset](seed=args.seed if args.seed is not None else 0)
        if run.scenario is not None:
            raise UsageError("--preset and a [scenario] config section are mutually exclusive")
    elif run.scenario is not None:
        scenario = run.scenario
    else:
        raise UsageError("simulate needs a config with a [scenario] section or --preset")
    if args.seed is not None:
        scenario.seed = args.seed
    if args.video_id:
        scenario.video_id = args.video_id
    frames, tracks = sim.generate(scenario)
    with open(args.detections_out, "w") as fh:
        records.write_jsonl(fh, (records.frame_to_dict(f) for f in frames))
    with open(args.gt_out, "w") as fh:
        records.write_jsonl(fh, (records.gt_to_dict(t) for t in tracks))
    log.info("wrote %d frames and %d ground-truth tracks", len(frames), len(tracks))
    return EXIT_OK


# --- associate ------------------------------------------------------------

def _associate_video(payload: tuple[list[dict], dict]) -> list[dict]:
    frame_dicts, cfg_dict = payload
    engine = OnlineAssociator(AssociationConfig(**cfg_dict))
    out = []
    for d in frame_dicts:
        frame = records.frame_from_dict(d)
        result = engine.step(frame.detections, frame.frame_index)
        out.append(records.tracked_frame_to_dict(records.tracked_frame_from_result(frame, result)))
    return out


def cmd_associate(args) -> int:
    cfg = _run_config(args).association
    with open(args.detections) as src, _open_out(args.out) as dst:
        if args.jobs <= 1:
            engine, video = None, None
            for lineno, frame in records.iter_ordered(src):
                if frame.video_id != video:
                    engine, video = OnlineAssociator(cfg), frame.video_id
                try:
                    result = engine.step(frame.detections, frame.frame_index)
                except OutOfOrderFrameError as exc:
                    raise RecordError(str(exc), lineno) from exc
                tracked = records.tracked_frame_from_result(frame, result)
                dst.write(records.dumps(records.tracked_frame_to_dict(tracked)) + "\n")
            return EXIT_OK

        videos: dict[str, list[dict]] = {}
        for _, frame in records.iter_ordered(src):
            videos.setdefault(frame.video_id, []).append(records.frame_to_dict(frame))
        payloads = [(frames, cfg.to_dict()) for frames in videos.values()]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for out in pool.map(_associate_video, payloads):
                records.write_jsonl(dst, out)
    return EXIT_OK


# --- evaluate -------------------------------------------------------------

def _as_frames(tracked: Sequence[records.TrackedFrame]) -> list[sim.Frame]:
    return [sim.Frame(f.video_id, f.frame_index, [td.detection for td in f.detections]) for f in tracked]


def _oracle_report(tracked, gt, mode: OracleMode, run: RunConfig) -> dict:
    if mode.kind == "frame":
        tracked = frame_oracle(tracked)
    elif mode.kind == "clip":
        tracked = clip_oracle(_as_frames(tracked), mode.clip_length, run.association)
    config = {"association": run.association.to_dict(), "oracle": str(mode)}
    return evaluate(tracked, gt, config).to_dict()


def cmd_evaluate(args) -> int:
    run = _run_config(args)
    tracked = records.read_tracked_frames(args.tracks)
    gt = records.read_gt(args.gt)
    if args.clip_sweep:
        with _open_out(args.out) as fh:
            for length in args.clip_sweep:
                report = _oracle_report(tracked, gt, OracleMode("clip", length), run)
                report["clip_length"] = length
                fh.write(records.dumps(report) + "\n")
        return EXIT_OK
    mode = OracleMode.parse(args.oracle) if args.oracle else run.oracle
    _write_json(args.out, _oracle_report(tracked, gt, mode, run))
    return EXIT_OK


# --- sweep ----------------------------------------------------------------

def cmd_sweep(args) -> int:
    run = _run_config(args)
    if run.scenario is None and not args.preset:
        raise UsageError("sweep needs a config with a [scenario] section or --preset")
    per_length: dict[int, list[float]] = {L: [] for L in args.clip_lengths}
    for seed in range(args.seed_start, args.seed_start + args.seeds):
        if args.preset:
            scenario = PRESETS[args.preset](seed=seed)
        else:
            scenario = sim.ScenarioConfig(**{**run.scenario.to_dict(), "seed": seed})
        frames, gt = sim.generate(scenario)
        for L in args.clip_lengths:
            report = evaluate(clip_oracle(frames, L, run.association), gt)
            per_length[L].append(report.assoc_accuracy)
    summary = {
        "clip_lengths": args.clip_lengths,
        "seeds": args.seeds,
        "mean_assoc_accuracy": {str(L): float(np.mean(v)) for L, v in per_length.items()},
        "per_seed": {str(L): v for L, v in per_length.items()},
        "config": {"association": run.association.to_dict(), "preset": args.preset},
    }
    _write_json(args.out, summary)
    return EXIT_OK


# --- select-samples -------------------------------------------------------

def cmd_select_samples(args) -> int:
    with open(args.input) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise RecordError(f"invalid JSON: {exc.msg}", exc.lineno) from exc
    try:
        preds = [Prediction(p["box"], p["class_probs"], p.get("embedding", [])) for p in doc["predictions"]]
        gts = [GroundTruthInstance(g["box"], int(g["class_id"]), bool(g.get("present", True)))
               for g in doc["ground_truths"]]
        weights = CostWeights(**doc.get("cost_weights", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordError(f"malformed selection input: {exc}") from exc
    if not preds:
        raise RecordError("selection input has no predictions")
    try:
        results = select_samples_multi(gts, preds, weights)
    except IndexError as exc:
        raise RecordError(str(exc)) from exc
    report = {
        "n_queries": len(preds),
        "cost_weights": vars(weights),
        "selections": [r.to_dict() for r in results],
        "conflicts": count_conflicts(results),
    }
    _write_json(args.out, report)
    return EXIT_OK


# --- grad-check -----------------------------------------------------------

def cmd_grad_check(args) -> int:
    if args.dim < 1 or args.trials < 1:
        raise UsageError("--dim and --trials must be >= 1")
    report = grad_check(args.dim, args.trials, args.tolerance, args.seed, perturb=args.perturb)
    _write_json(args.out, report)
    if not report["passed"]:
        log.error("gradient check failed: max relative error %.3g >= %.3g",
                  report["max_rel_error"], args.tolerance)
        return EXIT_CHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="instassoc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--video-id")
    p.add_argument("--detections-out", required=True)
    p.add_argument("--gt-out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("associate", help="run online association over a detections file")
    p.add_argument("--detections", required=True)
    p.add_argument("--config")
    p.add_argument("--out", default="-")
    p.add_argument("--jobs", type=int, default=1)
    _add_assoc_flags(p)
    p.set_defaults(func=cmd_associate)

    p = sub.add_parser("evaluate", help="score a tracks file against ground truth")
    p.add_argument("--tracks", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--oracle", help="none, frame or clip:<length>")
    p.add_argument("--clip-sweep", type=_int_list, help="comma-separated clip lengths")
    p.add_argument("--config")
    p.add_argument("--out", default="-")
    _add_assoc_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="clip-oracle sweep over simulated seeds")
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed-start", type=int, default=0)
    p.add_argument("--clip-lengths", type=_int_list, default=[1, 3, 5, 10, 20, 30])
    p.add_argument("--out", default="-")
    _add_assoc_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("select-samples", help="positive/negative selection report for one frame")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_select_samples)

    p = sub.add_parser("grad-check", help="finite-difference check of the contrastive loss gradient")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = getattr(logging, os.environ.get("IDOL_LOG", "WARNING").upper(), None)
    logging.basicConfig(
        level=level if isinstance(level, int) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"instassoc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RecordError, EvaluationError, OutOfOrderFrameError) as exc:
        print(f"instassoc: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"instassoc: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
