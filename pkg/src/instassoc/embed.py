"""Contrastive embedding loss, its gradient, and similarity primitives."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DIM = 256
EXP_CLAMP = 60.0


def _as_matrix(vectors, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, dim or 0), dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def normalize(v, eps: float = 1e-12) -> np.ndarray:
    """Scale vectors (last axis) to unit L2 norm; zero vectors stay zero."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(norm, eps)


@dataclass
class LossWeights:
    lambda1: float = 2.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class ContrastiveBatch:
    """One anchor ``v`` with its positive and negative reference embeddings."""

    anchor: np.ndarray
    positives: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    negatives: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=np.float64).reshape(-1)
        dim = self.anchor.shape[0]
        self.positives = _as_matrix(self.positives, dim)
        self.negatives = _as_matrix(self.negatives, dim)
        for name, mat in (("positives", self.positives), ("negatives", self.negatives)):
            if len(mat) and mat.shape[1] != dim:
                raise ValueError(f"{name} have dimension {mat.shape[1]}, anchor has {dim}")
        for name, arr in (("anchor", self.anchor), ("positives", self.positives), ("negatives", self.negatives)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")

    @property
    def dim(self) -> int:
        return self.anchor.shape[0]


def _pair_exponents(batch: ContrastiveBatch, anchor=None) -> np.ndarray:
    v = batch.anchor if anchor is None else anchor
    pos = batch.positives @ v
    neg = batch.negatives @ v
    # rows: positives, columns: negatives
    return np.clip(neg[None, :] - pos[:, None], -EXP_CLAMP, EXP_CLAMP)


def contrastive_loss(batch: ContrastiveBatch) -> float:
    """Multi-positive contrastive loss ``log(1 + sum_{k+,k-} exp(v.k- - v.k+))``.

    Returns 0 when either the positive or the negative set is empty.
    """
    if len(batch.positives) == 0 or len(batch.negatives) == 0:
        return 0.0
    return float(np.log1p(np.exp(_pair_exponents(batch)).sum()))


def single_positive_loss(anchor, positive, negatives) -> float:
    """Softmax cross-entropy form for one positive pair.

    Kept in its ``-log(softmax)`` shape so it can be compared against the
    multi-positive loss independently.
    """
    v = np.asarray(anchor, dtype=np.float64)
    k_pos = np.asarray(positive, dtype=np.float64)
    k_neg = _as_matrix(negatives, v.shape[0])
    num = np.exp(v @ k_pos)
    den = num + np.exp(k_neg @ v).sum()
    return float(-np.log(num / den))


def contrastive_loss_grad(batch: ContrastiveBatch) -> np.ndarray:
    """Analytic gradient of :func:`contrastive_loss` with respect to the anchor."""
    if len(batch.positives) == 0 or len(batch.negatives) == 0:
        return np.zeros(batch.dim)
    w = np.exp(_pair_exponents(batch))
    # sum_{p,n} w[p,n] (k_n - k_p)
    numer = w.sum(axis=0) @ batch.negatives - w.sum(axis=1) @ batch.positives
    return numer / (1.0 + w.sum())


def weighted_embed_loss(batch: ContrastiveBatch, weights: LossWeights | None = None) -> float:
    weights = weights or LossWeights()
    return weights.lambda2 * contrastive_loss(batch)


def dot_similarity(a, b, unit_norm: bool = False) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if unit_norm:
        a, b = normalize(a), normalize(b)
    return float(a @ b)


def finite_difference_grad(batch: ContrastiveBatch, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the loss with respect to the anchor."""
    grad = np.zeros(batch.dim)
    for i in range(batch.dim):
        step = np.zeros(batch.dim)
        step[i] = h
        plus = ContrastiveBatch(batch.anchor + step, batch.positives, batch.negatives)
        minus = ContrastiveBatch(batch.anchor - step, batch.positives, batch.negatives)
        grad[i] = (contrastive_loss(plus) - contrastive_loss(minus)) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def random_batch(rng: np.random.Generator, dim: int = 16, max_pos: int = 4, max_neg: int = 8) -> ContrastiveBatch:
    """Batch with entries uniform in [-1, 1] and random set sizes (at least 1 each)."""
    n_pos = int(rng.integers(1, max_pos + 1))
    n_neg = int(rng.integers(1, max_neg + 1))
    return ContrastiveBatch(
        anchor=rng.uniform(-1, 1, dim),
        positives=rng.uniform(-1, 1, (n_pos, dim)),
        negatives=rng.uniform(-1, 1, (n_neg, dim)),
    )


def grad_check(dim: int = 16, trials: int = 100, tolerance: float = 1e-6, seed: int = 0,
               h: float = 1e-5, perturb: float = 0.0) -> dict:
    """Compare analytic and finite-difference gradients on random batches.

    ``perturb`` adds a constant offset to the analytic gradient; it exists so
    the failing path can be exercised.
    """
    if dim < 1 or trials < 1:
        raise ValueError("dim and trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        batch = random_batch(rng, dim)
        analytic = contrastive_loss_grad(batch) + perturb
        worst = max(worst, relative_error(analytic, finite_difference_grad(batch, h)))
    return {
        "dim": dim,
        "trials": trials,
        "tolerance": tolerance,
        "max_rel_error": worst,
        "passed": worst < tolerance,
    }
