"""Online instance association over a per-video memory bank.

Each frame goes through class-agnostic NMS, bi-directional softmax
similarity against recency-weighted track embeddings, per-detection argmax
with a match threshold, greedy conflict resolution, and new-track creation
for confident leftovers.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .embed import EXP_CLAMP
from .geometry import Box, nms_indices

logger = logging.getLogger(__name__)

SIGMA_MODES = ("existence", "matched")


class OutOfOrderFrameError(ValueError):
    """Raised when a frame index does not strictly increase within a video."""


@dataclass
class Detection:
    box: Box
    class_id: int
    score: float
    embedding: np.ndarray
    gt_instance_id: Optional[int] = None

    def __post_init__(self):
        self.box = Box.validated(*self.box)
        self.embedding = np.asarray(self.embedding, dtype=np.float64).reshape(-1)
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


@dataclass
class AssociationConfig:
    tau: float = 0.5
    window_T: int = 3
    match_threshold: float = 0.5
    nms_threshold: float = 0.5
    new_track_score: float = 0.3
    max_age: Optional[int] = None
    # multiplier applied to dot products before exp; 1.0 is the literal formula
    similarity_scale: float = 1.0
    sigma_mode: str = "existence"
    nms_per_class: bool = False

    def __post_init__(self):
        for name in ("match_threshold", "nms_threshold", "new_track_score"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.window_T < 1:
            raise ValueError("window_T must be >= 1")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.max_age is not None and self.max_age < 0:
            raise ValueError("max_age must be nonnegative or None")
        if self.similarity_scale <= 0:
            raise ValueError("similarity_scale must be positive")
        if self.sigma_mode not in SIGMA_MODES:
            raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrackedInstance:
    track_id: int
    history: deque
    sigma: int
    last_seen_frame: int
    class_id: int
    _cached: Optional[np.ndarray] = field(default=None, repr=False)

    def push(self, embedding: np.ndarray) -> None:
        # index 0 is the most recent frame
        self.history.appendleft(embedding)
        self._cached = None

    def temporal_embedding(self, tau: float) -> np.ndarray:
        if self._cached is None:
            self._cached = temporal_embedding(self, tau)
        return self._cached


@lru_cache(maxsize=64)
def temporal_weights(length: int, tau: float) -> np.ndarray:
    """Normalized recency weights ``tau + L/t`` for ``t = 1..L`` (t=1 most recent)."""
    t = np.arange(1, length + 1, dtype=np.float64)
    w = tau + length / t
    w /= w.sum()
    w.flags.writeable = False
    return w


def temporal_embedding(inst: TrackedInstance, tau: float) -> np.ndarray:
    if not inst.history:
        raise ValueError(f"track {inst.track_id} has an empty history")
    weights = temporal_weights(len(inst.history), tau)
    hist = list(inst.history)
    # a short weighted sum beats stacking the history into a matrix
    out = weights[0] * np.asarray(hist[0], dtype=np.float64)
    for w, h in zip(weights[1:], hist[1:]):
        out += w * np.asarray(h, dtype=np.float64)
    return out


class MemoryBank:
    """Tracked instances of a single video in creation order."""

    def __init__(self, window_T: int = 3):
        self.window_T = window_T
        self.instances: list[TrackedInstance] = []
        self.next_id = 1
        self.frame_counter: Optional[int] = None

    def __len__(self) -> int:
        return len(self.instances)

    def create(self, det: Detection, frame_index: int) -> TrackedInstance:
        inst = TrackedInstance(
            track_id=self.next_id,
            history=deque([det.embedding], maxlen=self.window_T),
            sigma=1,
            last_seen_frame=frame_index,
            class_id=det.class_id,
        )
        self.next_id += 1
        self.instances.append(inst)
        return inst

    def track_ids(self) -> list[int]:
        return [inst.track_id for inst in self.instances]


class Assignment(NamedTuple):
    det_index: int
    track_id: Optional[int]
    match_score: Optional[float]


@dataclass
class FrameResult:
    frame_index: int
    assignments: list[Assignment]

    def track_of(self, det_index: int) -> Optional[int]:
        for a in self.assignments:
            if a.det_index == det_index:
                return a.track_id
        raise KeyError(det_index)


def _exp_dots(det_emb: np.ndarray, track_emb: np.ndarray, scale: float) -> np.ndarray:
    dots = det_emb @ track_emb.T
    if scale != 1.0:
        dots *= scale
    np.minimum(dots, EXP_CLAMP, out=dots)
    np.maximum(dots, -EXP_CLAMP, out=dots)
    return np.exp(dots, out=dots)


def similarity_terms(det_emb, track_emb, sigma, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """The two halves of the bi-directional similarity, both shape ``(N, M)``.

    The first is a softmax over memory instances for each detection with the
    existence time added to every exponential; the second a softmax over
    detections for each memory instance. No max-subtraction: the additive
    existence term would not survive the rescaling.
    """
    det_emb = np.atleast_2d(np.asarray(det_emb, dtype=np.float64))
    track_emb = np.atleast_2d(np.asarray(track_emb, dtype=np.float64))
    if det_emb.shape[0] == 0 or track_emb.shape[0] == 0:
        empty = np.zeros((det_emb.shape[0], track_emb.shape[0]))
        return empty, empty.copy()
    if det_emb.shape[1] != track_emb.shape[1]:
        raise ValueError(f"embedding dimension mismatch: {det_emb.shape[1]} vs {track_emb.shape[1]}")
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    e = _exp_dots(det_emb, track_emb, scale)
    first = (e + sigma[None, :]) / (e.sum(axis=1, keepdims=True) + sigma.sum())
    second = e / e.sum(axis=0, keepdims=True)
    return first, second


def similarity_from_embeddings(det_emb, track_emb, sigma, scale: float = 1.0) -> np.ndarray:
    first, second = similarity_terms(det_emb, track_emb, sigma, scale)
    return (first + second) / 2


def similarity_matrix(dets: Sequence[Detection], bank: MemoryBank,
                      cfg: AssociationConfig | None = None) -> np.ndarray:
    cfg = cfg or AssociationConfig()
    if not dets or not len(bank):
        return np.zeros((len(dets), len(bank)))
    det_emb = np.stack([d.embedding for d in dets])
    track_emb = np.stack([inst.temporal_embedding(cfg.tau) for inst in bank.instances])
    sigma = [inst.sigma for inst in bank.instances]
    return similarity_from_embeddings(det_emb, track_emb, sigma, cfg.similarity_scale)


def associate_frame(raw_dets: Sequence[Detection], bank: MemoryBank,
                    cfg: AssociationConfig | None = None,
                    frame_index: Optional[int] = None) -> FrameResult:
    """Associate one frame's detections with the bank and update it in place.

    Assignments are reported only for NMS survivors, in NMS selection order;
    ``det_index`` refers to the position in ``raw_dets``.
    """
    cfg = cfg or AssociationConfig()
    if frame_index is None:
        frame_index = 0 if bank.frame_counter is None else bank.frame_counter + 1
    if bank.frame_counter is not None and frame_index <= bank.frame_counter:
        raise OutOfOrderFrameError(
            f"frame {frame_index} does not follow frame {bank.frame_counter}"
        )

    if raw_dets:
        keep = nms_indices(
            [d.box for d in raw_dets],
            [d.score for d in raw_dets],
            cfg.nms_threshold,
            [d.class_id for d in raw_dets] if cfg.nms_per_class else None,
        )
    else:
        keep = np.zeros(0, dtype=np.int64)
    survivors = [raw_dets[i] for i in keep]
    pre_existing = list(bank.instances)

    track_of: dict[int, tuple[int, Optional[float]]] = {}
    matched: dict[int, int] = {}
    if survivors and pre_existing:
        f = similarity_matrix(survivors, bank, cfg)
        best = f.argmax(axis=1)
        best_f = f[np.arange(len(survivors)), best]
        candidates = [k for k in range(len(survivors)) if best_f[k] > cfg.match_threshold]
        candidates.sort(key=lambda k: (-best_f[k], k))
        claimed: set[int] = set()
        for k in candidates:
            j = int(best[k])
            if j in claimed:
                continue
            claimed.add(j)
            matched[k] = j
            track_of[k] = (pre_existing[j].track_id, float(best_f[k]))

    for k, j in matched.items():
        inst = pre_existing[j]
        inst.push(survivors[k].embedding)
        inst.last_seen_frame = frame_index
        if cfg.sigma_mode == "matched":
            inst.sigma += 1
    if cfg.sigma_mode == "existence":
        for inst in pre_existing:
            inst.sigma += 1

    for k, det in enumerate(survivors):
        if k in track_of or det.score < cfg.new_track_score:
            continue
        inst = bank.create(det, frame_index)
        track_of[k] = (inst.track_id, None)

    if cfg.max_age is not None:
        bank.instances = [
            inst for inst in bank.instances
            if frame_index - inst.last_seen_frame <= cfg.max_age
        ]
    bank.frame_counter = frame_index

    assignments = []
    for k, raw_idx in enumerate(keep):
        tid, score = track_of.get(k, (None, None))
        assignments.append(Assignment(int(raw_idx), tid, score))
    return FrameResult(frame_index, assignments)


class OnlineAssociator:
    """Convenience wrapper holding the bank and config for one video."""

    def __init__(self, cfg: AssociationConfig | None = None):
        self.cfg = cfg or AssociationConfig()
        self.bank = MemoryBank(self.cfg.window_T)

    def step(self, dets: Sequence[Detection], frame_index: Optional[int] = None) -> FrameResult:
        return associate_frame(dets, self.bank, self.cfg, frame_index)

    def reset(self) -> None:
        self.bank = MemoryBank(self.cfg.window_T)
