"""Association-quality metrics and oracle runs.

Only matched detections (those with a predicted track id) are scored.
A false positive (ground-truth id ``-1``) that ends up in a track always
counts as an association error.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .assoc import AssociationConfig, OnlineAssociator
from .records import TrackedDetection, TrackedFrame, tracked_frame_from_result
from .sim import FALSE_POSITIVE_ID, Frame, GroundTruthTrack


class EvaluationError(ValueError):
    pass


@dataclass
class MetricsReport:
    id_switches: int
    assoc_accuracy: float
    n_pred_tracks: int
    n_gt_tracks: int
    n_matched: int = 0
    n_false_positive_matches: int = 0
    # False when nothing was matched; assoc_accuracy is then reported as 0
    accuracy_defined: bool = True
    per_video: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "id_switches": self.id_switches,
            "assoc_accuracy": self.assoc_accuracy,
            "n_pred_tracks": self.n_pred_tracks,
            "n_gt_tracks": self.n_gt_tracks,
            "n_matched": self.n_matched,
            "n_false_positive_matches": self.n_false_positive_matches,
            "accuracy_defined": self.accuracy_defined,
            "per_video": self.per_video,
            "config": self.config,
        }


@dataclass(frozen=True)
class OracleMode:
    kind: str = "none"
    clip_length: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("none", "frame", "clip"):
            raise ValueError(f"unknown oracle mode {self.kind!r}")
        if self.kind == "clip" and (self.clip_length is None or self.clip_length < 1):
            raise ValueError("clip oracle needs clip_length >= 1")

    @classmethod
    def parse(cls, text: str) -> "OracleMode":
        text = text.strip().lower()
        if text.startswith("clip"):
            _, _, length = text.partition(":")
            if not length:
                raise ValueError("clip oracle is written as clip:<length>")
            return cls("clip", int(length))
        return cls(text)

    def __str__(self) -> str:
        return f"clip:{self.clip_length}" if self.kind == "clip" else self.kind


def _score_video(frames: Sequence[TrackedFrame]) -> dict:
    last: dict[int, int] = {}
    counts: dict[int, Counter] = defaultdict(Counter)
    switches = matched = fp_matched = 0
    pred_ids = set()
    for frame in frames:
        for td in frame.detections:
            if td.track_id is None:
                continue
            gt = td.detection.gt_instance_id
            if gt is None:
                raise EvaluationError(
                    f"matched detection in {frame.video_id!r} frame {frame.frame_index} "
                    "has no gt_instance_id"
                )
            matched += 1
            pred_ids.add(td.track_id)
            if gt == FALSE_POSITIVE_ID:
                fp_matched += 1
                continue
            if gt in last and last[gt] != td.track_id:
                switches += 1
            last[gt] = td.track_id
            counts[gt][td.track_id] += 1
    correct = sum(max(c.values()) for c in counts.values())
    return {
        "id_switches": switches,
        "correct": correct,
        "n_matched": matched,
        "n_false_positive_matches": fp_matched,
        "pred_ids": pred_ids,
        "gt_ids": set(counts),
    }


def _group(frames: Iterable) -> dict[str, list]:
    videos: dict[str, list] = {}
    for f in frames:
        videos.setdefault(f.video_id, []).append(f)
    return videos


def evaluate(pred: Iterable[TrackedFrame], gt: Sequence[GroundTruthTrack] = (),
             config: Optional[dict] = None) -> MetricsReport:
    """Score predicted track ids against ground-truth instance ids.

    ``id_switches`` counts matched detections whose predicted id differs from
    the previous matched id of the same ground-truth instance.
    ``assoc_accuracy`` is the fraction of matched detections carrying the
    majority predicted id of their instance (ties go to the smaller id).
    """
    gt_per_video = Counter(t.video_id for t in gt)
    per_video = {}
    totals = Counter()
    for video_id, frames in _group(pred).items():
        s = _score_video(frames)
        n_gt = gt_per_video.get(video_id) or len(s["gt_ids"])
        acc = s["correct"] / s["n_matched"] if s["n_matched"] else 0.0
        per_video[video_id] = {
            "id_switches": s["id_switches"],
            "assoc_accuracy": acc,
            "n_pred_tracks": len(s["pred_ids"]),
            "n_gt_tracks": n_gt,
            "n_matched": s["n_matched"],
        }
        totals.update({
            "id_switches": s["id_switches"], "correct": s["correct"], "n_matched": s["n_matched"],
            "fp": s["n_false_positive_matches"], "pred": len(s["pred_ids"]), "gt": n_gt,
        })
    for video_id, n in gt_per_video.items():
        if video_id not in per_video:
            totals["gt"] += n
    matched = totals["n_matched"]
    return MetricsReport(
        id_switches=totals["id_switches"],
        assoc_accuracy=totals["correct"] / matched if matched else 0.0,
        n_pred_tracks=totals["pred"],
        n_gt_tracks=totals["gt"],
        n_matched=matched,
        n_false_positive_matches=totals["fp"],
        accuracy_defined=matched > 0,
        per_video=per_video,
        config=dict(config or {}),
    )


def track_frames(frames: Iterable[Frame], cfg: AssociationConfig | None = None) -> list[TrackedFrame]:
    """Run the online engine over frames, one fresh bank per video."""
    cfg = cfg or AssociationConfig()
    out = []
    engines: dict[str, OnlineAssociator] = {}
    for frame in frames:
        engine = engines.setdefault(frame.video_id, OnlineAssociator(cfg))
        result = engine.step(frame.detections, frame.frame_index)
        out.append(tracked_frame_from_result(frame, result))
    return out


def _require_gt(frames: Iterable[TrackedFrame]) -> None:
    for f in frames:
        for td in f.detections:
            if td.detection.gt_instance_id is None:
                raise EvaluationError(
                    f"oracle run needs gt_instance_id on every detection "
                    f"({f.video_id!r} frame {f.frame_index})"
                )


def frame_oracle(tracked: Sequence[TrackedFrame]) -> list[TrackedFrame]:
    """Replace every predicted id with the ground-truth id (false positives drop out)."""
    _require_gt(tracked)
    out = []
    for f in tracked:
        dets = []
        for td in f.detections:
            gt = td.detection.gt_instance_id
            tid = None if gt == FALSE_POSITIVE_ID else gt + 1
            dets.append(TrackedDetection(td.detection, tid, None))
        out.append(TrackedFrame(f.video_id, f.frame_index, dets))
    return out


def stitch_clips(clips: Sequence[Sequence[TrackedFrame]]) -> list[TrackedFrame]:
    """Join independently tracked clips of one video using ground-truth ids.

    In each clip, local tracks and ground-truth instances are paired greedily
    by shared detection count; a paired local track inherits the global id of
    its instance, every other local track gets a fresh global id.
    """
    next_global = 1
    global_of_gt: dict[int, int] = {}
    out: list[TrackedFrame] = []
    for clip in clips:
        counts: Counter = Counter()
        for f in clip:
            for td in f.detections:
                gt = td.detection.gt_instance_id
                if td.track_id is not None and gt is not None and gt != FALSE_POSITIVE_ID:
                    counts[(td.track_id, gt)] += 1
        local_map: dict[int, int] = {}
        used_gt = set()
        for (local, gt), _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
            if local in local_map or gt in used_gt:
                continue
            if gt not in global_of_gt:
                global_of_gt[gt] = next_global
                next_global += 1
            local_map[local] = global_of_gt[gt]
            used_gt.add(gt)
        for f in clip:
            for td in f.detections:
                if td.track_id is not None and td.track_id not in local_map:
                    local_map[td.track_id] = next_global
                    next_global += 1
        for f in clip:
            out.append(TrackedFrame(f.video_id, f.frame_index, [
                TrackedDetection(td.detection, None if td.track_id is None else local_map[td.track_id],
                                 td.match_score)
                for td in f.detections
            ]))
    return out


def clip_oracle(frames: Sequence[Frame], clip_length: int,
                cfg: AssociationConfig | None = None) -> list[TrackedFrame]:
    if clip_length < 1:
        raise ValueError("clip_length must be >= 1")
    out = []
    for video_frames in _group(frames).values():
        clips = [
            track_frames(video_frames[i:i + clip_length], cfg)
            for i in range(0, len(video_frames), clip_length)
        ]
        for clip in clips:
            _require_gt(clip)
        out.extend(stitch_clips(clips))
    return out


def oracle_run(frames: Sequence[Frame], gt: Sequence[GroundTruthTrack], mode: OracleMode,
               cfg: AssociationConfig | None = None) -> tuple[MetricsReport, list[TrackedFrame]]:
    """Run the engine under an oracle mode and score the result."""
    cfg = cfg or AssociationConfig()
    if mode.kind == "clip":
        tracked = clip_oracle(frames, mode.clip_length, cfg)
    else:
        tracked = track_frames(frames, cfg)
        if mode.kind == "frame":
            tracked = frame_oracle(tracked)
    report = evaluate(tracked, gt, {"association": cfg.to_dict(), "oracle": str(mode)})
    return report, tracked


def clip_sweep(frames: Sequence[Frame], gt: Sequence[GroundTruthTrack], lengths: Iterable[int],
               cfg: AssociationConfig | None = None) -> dict[int, MetricsReport]:
    return {L: oracle_run(frames, gt, OracleMode("clip", L), cfg)[0] for L in lengths}
