"""Deterministic synthetic scenarios: moving boxes carrying noisy identity embeddings.

Randomness comes from a single ``numpy.random.Generator`` (PCG64) seeded by
``ScenarioConfig.seed``, consumed in a fixed order: anchors, box sizes and
initial motion, then per-frame draws. The same config therefore always
produces identical output within this implementation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .assoc import Detection
from .embed import normalize
from .geometry import Box
from .sampling import GroundTruthInstance, Prediction

FALSE_POSITIVE_ID = -1


@dataclass
class ScenarioConfig:
    n_objects: int = 5
    n_frames: int = 50
    embed_dim: int = 256
    embed_noise: float = 0.0
    drift_rate: float = 0.0
    # (group size, angular spread in radians); members taken in object-id order
    similarity_groups: list[tuple[int, float]] = field(default_factory=list)
    # (object id, start frame, end frame), end exclusive
    occlusion_events: list[tuple[int, int, int]] = field(default_factory=list)
    # (object id, frame): that frame's embedding gets corruption_noise added
    corruption_events: list[tuple[int, int]] = field(default_factory=list)
    corruption_noise: float = 1.0
    false_positive_rate: float = 0.0
    speed_range: tuple[float, float] = (0.002, 0.01)
    direction_change_prob: float = 0.0
    arena: tuple[float, float] = (1.0, 1.0)
    box_size_range: tuple[float, float] = (0.04, 0.1)
    orthogonal_anchors: bool = False
    new_track_score: float = 0.3
    seed: int = 0
    video_id: str = "video0"

    def __post_init__(self):
        self.similarity_groups = [tuple(g) for g in self.similarity_groups]
        self.occlusion_events = [tuple(e) for e in self.occlusion_events]
        self.corruption_events = [tuple(e) for e in self.corruption_events]
        self.speed_range = tuple(self.speed_range)
        self.arena = tuple(self.arena)
        self.box_size_range = tuple(self.box_size_range)
        self.validate()

    def validate(self) -> None:
        if self.n_objects < 0:
            raise ValueError("n_objects must be >= 0")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.embed_noise < 0 or self.drift_rate < 0 or self.corruption_noise < 0:
            raise ValueError("noise, drift and corruption magnitudes must be >= 0")
        if self.false_positive_rate < 0:
            raise ValueError("false_positive_rate must be >= 0")
        if not 0.0 <= self.direction_change_prob <= 1.0:
            raise ValueError("direction_change_prob must lie in [0, 1]")
        if not 0.05 < self.new_track_score <= 1.0:
            raise ValueError("new_track_score must lie in (0.05, 1]")
        lo, hi = self.speed_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad speed_range {self.speed_range}")
        lo, hi = self.box_size_range
        if lo <= 0 or hi < lo:
            raise ValueError(f"bad box_size_range {self.box_size_range}")
        if min(self.arena) <= 0:
            raise ValueError("arena dimensions must be positive")
        if sum(size for size, _ in self.similarity_groups) > self.n_objects:
            raise ValueError("similarity groups cover more objects than exist")
        if any(size < 1 or spread < 0 for size, spread in self.similarity_groups):
            raise ValueError("similarity groups need size >= 1 and spread >= 0")
        if self.orthogonal_anchors and self.n_objects > self.embed_dim:
            raise ValueError("orthogonal anchors need n_objects <= embed_dim")
        for obj, start, end in self.occlusion_events:
            if not 0 <= obj < self.n_objects:
                raise ValueError(f"occlusion references unknown object {obj}")
            if not 0 <= start <= end <= self.n_frames:
                raise ValueError(f"occlusion interval [{start}, {end}) outside [0, {self.n_frames})")
        for obj, frame in self.corruption_events:
            if not 0 <= obj < self.n_objects or not 0 <= frame < self.n_frames:
                raise ValueError(f"corruption event ({obj}, {frame}) out of range")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("similarity_groups", "occlusion_events", "corruption_events"):
            d[key] = [list(v) for v in d[key]]
        for key in ("speed_range", "arena", "box_size_range"):
            d[key] = list(d[key])
        return d


@dataclass
class GroundTruthTrack:
    instance_id: int
    class_id: int
    anchor_embedding: np.ndarray
    # frame index -> (box, emitted embedding); missing keys are occluded frames
    observations: dict[int, tuple[Box, np.ndarray]] = field(default_factory=dict)
    video_id: str = "video0"

    def present(self, frame_index: int) -> bool:
        return frame_index in self.observations


@dataclass
class Frame:
    video_id: str
    frame_index: int
    detections: list[Detection]


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    return normalize(rng.standard_normal(dim))


def _orthogonal_to(rng: np.random.Generator, center: np.ndarray) -> np.ndarray:
    u = rng.standard_normal(center.shape[0])
    u -= (u @ center) * center
    return normalize(u)


def _anchors(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[np.ndarray, list[int]]:
    n, dim = cfg.n_objects, cfg.embed_dim
    if n == 0:
        return np.zeros((0, dim)), []
    if cfg.orthogonal_anchors:
        q, _ = np.linalg.qr(rng.standard_normal((dim, n)))
        anchors = q.T.copy()
    else:
        anchors = normalize(rng.standard_normal((n, dim)))

    classes = []
    obj = 0
    for cls, (size, spread) in enumerate(cfg.similarity_groups):
        center = anchors[obj].copy()
        for member in range(obj, obj + size):
            if dim > 1:
                u = _orthogonal_to(rng, center)
                anchors[member] = np.cos(spread) * center + np.sin(spread) * u
            else:
                anchors[member] = center
            classes.append(cls)
        obj += size
    next_cls = len(cfg.similarity_groups)
    for _ in range(obj, n):
        classes.append(next_cls)
        next_cls += 1
    return normalize(anchors), classes


def generate(cfg: ScenarioConfig) -> tuple[list[Frame], list[GroundTruthTrack]]:
    """Simulate ``cfg.n_frames`` frames of detections plus their ground truth."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    dim = cfg.embed_dim
    width, height = cfg.arena
    anchors, classes = _anchors(cfg, rng)
    n = cfg.n_objects

    sizes = rng.uniform(*cfg.box_size_range, size=(n, 2)) * np.array([width, height])
    pos = rng.uniform(0, 1, size=(n, 2)) * (np.array([width, height]) - sizes)
    speed = rng.uniform(*cfg.speed_range, size=n) * np.array(min(width, height))
    angle = rng.uniform(0, 2 * np.pi, size=n)
    vel = np.stack([np.cos(angle), np.sin(angle)], axis=1) * speed[:, None]
    drift = np.zeros((n, dim))

    occluded = np.zeros((n, cfg.n_frames), dtype=bool)
    for obj, start, end in cfg.occlusion_events:
        occluded[obj, start:end] = True
    corrupted = set(cfg.corruption_events)
    scale = 1.0 / np.sqrt(dim)

    tracks = [
        GroundTruthTrack(i, classes[i], anchors[i].copy(), video_id=cfg.video_id) for i in range(n)
    ]
    frames: list[Frame] = []
    for t in range(cfg.n_frames):
        if t > 0:
            turn = rng.uniform(0, 1, size=n) < cfg.direction_change_prob
            new_angle = rng.uniform(0, 2 * np.pi, size=n)
            turned = np.stack([np.cos(new_angle), np.sin(new_angle)], axis=1) * speed[:, None]
            vel = np.where(turn[:, None], turned, vel)
            pos = pos + vel
            limit = np.array([width, height]) - sizes
            low, high = pos < 0, pos > limit
            vel = np.where(low | high, -vel, vel)
            pos = np.clip(pos, 0, limit)
            drift = drift + rng.standard_normal((n, dim)) * (cfg.drift_rate * scale)

        noise = rng.standard_normal((n, dim)) * (cfg.embed_noise * scale)
        scores = rng.uniform(0.5, 1.0, size=n)
        dets: list[Detection] = []
        for i in range(n):
            if occluded[i, t]:
                continue
            emb = anchors[i] + drift[i] + noise[i]
            if (i, t) in corrupted:
                emb = emb + rng.standard_normal(dim) * (cfg.corruption_noise * scale)
            emb = normalize(emb)
            box = Box(pos[i, 0], pos[i, 1], pos[i, 0] + sizes[i, 0], pos[i, 1] + sizes[i, 1])
            tracks[i].observations[t] = (box, emb)
            dets.append(Detection(box, classes[i], float(scores[i]), emb, i))

        n_fp = int(rng.poisson(cfg.false_positive_rate)) if cfg.false_positive_rate > 0 else 0
        for _ in range(n_fp):
            wh = rng.uniform(*cfg.box_size_range, size=2) * np.array([width, height])
            xy = rng.uniform(0, 1, size=2) * (np.array([width, height]) - wh)
            cls = int(rng.integers(0, max(len(set(classes)), 1)))
            dets.append(Detection(
                Box(xy[0], xy[1], xy[0] + wh[0], xy[1] + wh[1]),
                cls,
                float(rng.uniform(0.05, cfg.new_track_score)),
                _unit(rng, dim),
                FALSE_POSITIVE_ID,
            ))

        order = rng.permutation(len(dets)) if dets else []
        frames.append(Frame(cfg.video_id, t, [dets[k] for k in order]))
    return frames, tracks


# Scenario presets used by the sweep command and the acceptance checks.

def clean_scenario(seed: int = 0, n_objects: int = 20, n_frames: int = 100, **overrides) -> ScenarioConfig:
    params = dict(n_objects=n_objects, n_frames=n_frames, orthogonal_anchors=True, seed=seed)
    params.update(overrides)
    return ScenarioConfig(**params)


def occlusion_scenario(seed: int = 0, gap: int = 10, n_objects: int = 5, n_frames: int = 40,
                       **overrides) -> ScenarioConfig:
    start = n_frames // 3
    params = dict(
        n_objects=n_objects, n_frames=n_frames, orthogonal_anchors=True,
        occlusion_events=[(0, start, start + gap)], seed=seed,
    )
    params.update(overrides)
    return ScenarioConfig(**params)


def random_occlusions(rng: np.random.Generator, n_objects: int, n_frames: int,
                      per_object: float, max_gap: int) -> list[tuple[int, int, int]]:
    events = []
    for obj in range(n_objects):
        for _ in range(int(rng.poisson(per_object))):
            gap = int(rng.integers(1, max_gap + 1))
            start = int(rng.integers(0, max(n_frames - gap, 1)))
            events.append((obj, start, min(start + gap, n_frames)))
    return events


def hard_scenario(seed: int = 0, n_objects: int = 8, n_frames: int = 60, **overrides) -> ScenarioConfig:
    """Heavy occlusion, embedding noise and drift, and confusable groups."""
    rng = np.random.default_rng([seed, 1])
    params = dict(
        n_objects=n_objects,
        n_frames=n_frames,
        embed_noise=0.8,
        drift_rate=0.05,
        similarity_groups=[(3, 0.35), (3, 0.35)],
        occlusion_events=random_occlusions(rng, n_objects, n_frames, per_object=2.0, max_gap=10),
        false_positive_rate=0.5,
        speed_range=(0.005, 0.02),
        direction_change_prob=0.05,
        seed=seed,
    )
    params.update(overrides)
    return ScenarioConfig(**params)


def corruption_scenario(seed: int = 0, n_objects: int = 6, n_frames: int = 40, n_events: int = 8,
                        **overrides) -> ScenarioConfig:
    """Transient single-frame embedding corruptions on otherwise clean tracks."""
    rng = np.random.default_rng([seed, 2])
    frames = rng.choice(np.arange(2, n_frames - 1), size=min(n_events, n_frames - 3), replace=False)
    events = [(int(rng.integers(0, n_objects)), int(f)) for f in frames]
    params = dict(
        n_objects=n_objects, n_frames=n_frames, embed_noise=0.4,
        similarity_groups=[(n_objects, 0.5)], corruption_events=events, corruption_noise=2.0,
        seed=seed,
    )
    params.update(overrides)
    return ScenarioConfig(**params)


def crowded_layout(seed: int, n_queries: int = 300, n_classes: int = 1,
                   jitter: float = 0.15) -> tuple[list[GroundTruthInstance], list[Prediction]]:
    """Two heavily overlapping same-class ground truths and jittered predictions.

    Predictions are scattered around one of the two boxes each, mimicking
    the query spread a detector produces in an occluded pair.
    """
    rng = np.random.default_rng(seed)
    w, h = rng.uniform(0.15, 0.3, size=2)
    x, y = rng.uniform(0.1, 0.5, size=2)
    dx, dy = rng.uniform(0.05, 0.35, size=2) * np.array([w, h])
    gt_boxes = [Box(x, y, x + w, y + h), Box(x + dx, y + dy, x + dx + w, y + dy + h)]
    gts = [GroundTruthInstance(b, 0) for b in gt_boxes]

    preds = []
    owners = rng.integers(0, 2, size=n_queries)
    for q in range(n_queries):
        base = np.asarray(gt_boxes[owners[q]])
        bw, bh = base[2] - base[0], base[3] - base[1]
        spread = jitter * rng.exponential(1.0)
        offs = rng.standard_normal(4) * spread * np.array([bw, bh, bw, bh])
        b = base + offs
        b = np.array([min(b[0], b[2]), min(b[1], b[3]), max(b[0], b[2]), max(b[1], b[3])])
        probs = np.clip(rng.uniform(0.3, 1.0, size=n_classes), 0, 1)
        preds.append(Prediction(Box(*b), probs, np.zeros(0)))
    return gts, preds
