"""JSONL record formats shared by the command-line tools.

Detections file: one line per frame::

    {"video_id": str, "frame_index": int,
     "detections": [{"box": [x1, y1, x2, y2], "class_id": int, "score": float,
                     "embedding": [float, ...], "gt_instance_id": int | null}]}

Tracks file: same layout; each detection additionally carries
``"track_id": int | null`` and ``"match_score": float | null``.

Ground-truth file: one line per instance::

    {"video_id": str, "instance_id": int, "class_id": int,
     "anchor_embedding": [float, ...],
     "frames": [{"frame_index": int, "box": [...], "embedding": [...]}]}

Floats go through ``repr``, which is the shortest round-trip decimal form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional

import numpy as np

from .assoc import Detection, FrameResult
from .geometry import Box
from .sim import Frame, GroundTruthTrack


class RecordError(ValueError):
    """Malformed or out-of-order input record."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class TrackedDetection:
    detection: Detection
    track_id: Optional[int]
    match_score: Optional[float] = None


@dataclass
class TrackedFrame:
    video_id: str
    frame_index: int
    detections: list[TrackedDetection] = field(default_factory=list)


def _floats(values) -> list[float]:
    return [float(v) for v in values]


def detection_to_dict(det: Detection) -> dict:
    return {
        "box": _floats(det.box),
        "class_id": int(det.class_id),
        "score": float(det.score),
        "embedding": _floats(det.embedding),
        "gt_instance_id": None if det.gt_instance_id is None else int(det.gt_instance_id),
    }


def detection_from_dict(d: dict) -> Detection:
    gt = d.get("gt_instance_id")
    return Detection(
        box=Box.validated(*d["box"]),
        class_id=int(d["class_id"]),
        score=float(d["score"]),
        embedding=np.asarray(d["embedding"], dtype=np.float64),
        gt_instance_id=None if gt is None else int(gt),
    )


def frame_to_dict(frame: Frame) -> dict:
    return {
        "video_id": frame.video_id,
        "frame_index": int(frame.frame_index),
        "detections": [detection_to_dict(d) for d in frame.detections],
    }


def frame_from_dict(d: dict) -> Frame:
    return Frame(str(d["video_id"]), int(d["frame_index"]),
                 [detection_from_dict(x) for x in d.get("detections", [])])


def tracked_frame_to_dict(frame: TrackedFrame) -> dict:
    dets = []
    for td in frame.detections:
        rec = detection_to_dict(td.detection)
        rec["track_id"] = None if td.track_id is None else int(td.track_id)
        rec["match_score"] = None if td.match_score is None else float(td.match_score)
        dets.append(rec)
    return {"video_id": frame.video_id, "frame_index": int(frame.frame_index), "detections": dets}


def tracked_frame_from_dict(d: dict) -> TrackedFrame:
    dets = []
    for x in d.get("detections", []):
        tid, ms = x.get("track_id"), x.get("match_score")
        dets.append(TrackedDetection(
            detection_from_dict(x),
            None if tid is None else int(tid),
            None if ms is None else float(ms),
        ))
    return TrackedFrame(str(d["video_id"]), int(d["frame_index"]), dets)


def tracked_frame_from_result(frame: Frame, result: FrameResult) -> TrackedFrame:
    return TrackedFrame(
        frame.video_id,
        frame.frame_index,
        [TrackedDetection(frame.detections[a.det_index], a.track_id, a.match_score)
         for a in result.assignments],
    )


def gt_to_dict(track: GroundTruthTrack) -> dict:
    return {
        "video_id": track.video_id,
        "instance_id": int(track.instance_id),
        "class_id": int(track.class_id),
        "anchor_embedding": _floats(track.anchor_embedding),
        "frames": [
            {"frame_index": int(t), "box": _floats(box), "embedding": _floats(emb)}
            for t, (box, emb) in sorted(track.observations.items())
        ],
    }


def gt_from_dict(d: dict) -> GroundTruthTrack:
    obs = {
        int(f["frame_index"]): (Box.validated(*f["box"]), np.asarray(f["embedding"], dtype=np.float64))
        for f in d.get("frames", [])
    }
    return GroundTruthTrack(
        instance_id=int(d["instance_id"]),
        class_id=int(d.get("class_id", 0)),
        anchor_embedding=np.asarray(d.get("anchor_embedding", []), dtype=np.float64),
        observations=obs,
        video_id=str(d.get("video_id", "video0")),
    )


def dumps(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def write_jsonl(fh: IO[str], records: Iterable[dict]) -> int:
    n = 0
    for rec in records:
        fh.write(dumps(rec))
        fh.write("\n")
        n += 1
    return n


def iter_jsonl(fh: IO[str]) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, record)`` pairs, skipping blank lines."""
    for lineno, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordError(f"invalid JSON: {exc.msg}", lineno) from exc
        if not isinstance(rec, dict):
            raise RecordError("expected a JSON object", lineno)
        yield lineno, rec


def iter_ordered(fh: IO[str], parse=frame_from_dict) -> Iterator[tuple[int, object]]:
    """Parse frame records, enforcing grouping by video and increasing frame index."""
    finished: set[str] = set()
    current: Optional[str] = None
    last_index = None
    for lineno, rec in iter_jsonl(fh):
        try:
            frame = parse(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordError(f"malformed frame record: {exc}", lineno) from exc
        if frame.video_id != current:
            if frame.video_id in finished:
                raise RecordError(f"video {frame.video_id!r} is not contiguous in the input", lineno)
            if current is not None:
                finished.add(current)
            current, last_index = frame.video_id, None
        if last_index is not None and frame.frame_index <= last_index:
            raise RecordError(
                f"frame {frame.frame_index} of video {frame.video_id!r} is out of order "
                f"(previous frame {last_index})",
                lineno,
            )
        last_index = frame.frame_index
        yield lineno, frame


def read_frames(path: str) -> list[Frame]:
    with open(path) as fh:
        return [f for _, f in iter_ordered(fh)]


def read_tracked_frames(path: str) -> list[TrackedFrame]:
    with open(path) as fh:
        return [f for _, f in iter_ordered(fh, tracked_frame_from_dict)]


def read_gt(path: str) -> list[GroundTruthTrack]:
    with open(path) as fh:
        out = []
        for lineno, rec in iter_jsonl(fh):
            try:
                out.append(gt_from_dict(rec))
            except (KeyError, TypeError, ValueError) as exc:
                raise RecordError(f"malformed ground-truth record: {exc}", lineno) from exc
        return out
