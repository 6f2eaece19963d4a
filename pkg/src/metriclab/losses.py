"""Batch losses over embedding matrices: identity cross-entropy, center
loss, batch-hard triplet, circle, lifted structure, ranked list, and the
center prediction loss (CPL) with its frozen leave-one-out targets.

Every loss takes a d x N embedding matrix (Tensor or ndarray, column per
sample) plus integer labels and returns a scalar (1x1) Tensor. CPL targets
are always detached: a sample's role as part of another sample's target
contributes no gradient, by construction of the target matrix as a constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import (
    Tensor,
    as_tensor,
    gather_cols,
    gather_pairs,
    logsumexp,
    softplus,
)
from .errors import ConfigError, ShapeError, TrainingDivergenceError
from .seeding import substream

__all__ = [
    "MarginConfig",
    "LossBundle",
    "id_cross_entropy",
    "center_loss",
    "triplet_loss_batch_hard",
    "circle_loss",
    "lifted_structure_loss",
    "ranked_list_loss",
    "cpl_targets",
    "cpl_loss",
    "compose_losses",
    "TARGET_MODES",
    "pairwise_euclidean",
]

TARGET_MODES = ("leave-one-out-mean", "random-point", "farthest-point", "sample-mean")


@dataclass
class MarginConfig:
    """Margin/scale constants shared by the pairwise losses."""

    triplet_margin: float = 0.3
    circle_margin: float = 0.25
    circle_scale: float = 32.0
    lifted_margin: float = 1.0
    rll_alpha: float = 1.2
    rll_margin: float = 0.4

    def __post_init__(self):
        if self.triplet_margin < 0 or self.circle_margin < 0 or self.lifted_margin < 0:
            raise ConfigError("margins must be non-negative")
        if self.circle_scale <= 0:
            raise ConfigError("circle_scale must be positive")
        if self.rll_margin < 0:
            raise ConfigError("rll_margin must be non-negative")
        if not self.rll_alpha > self.rll_margin:
            raise ConfigError("rll_alpha must exceed rll_margin")


def _check_batch(features, labels, opname: str):
    features = as_tensor(features)
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != features.shape[1]:
        raise ShapeError(f"{opname}: need one label per column, got {labels.shape} labels for {features.shape[1]} columns")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ShapeError(f"{opname}: labels must be integers")
    if features.shape[1] == 0:
        raise ShapeError(f"{opname}: empty batch")
    return features, labels.astype(np.int64)


def pairwise_euclidean(x: Tensor) -> Tensor:
    """N x N matrix of Euclidean distances between columns of x.

    Effective zeros (the diagonal, coincident points) are detected with a
    1e-12 threshold on the squared distance, which swallows the rounding
    noise of the gram expansion sq_i + sq_j - 2<x_i, x_j>. Those entries
    get a masked epsilon before the sqrt so its derivative stays finite,
    then are forced back to exactly zero; the gradient through them is
    zero, a valid subgradient at the kink.
    """
    x = as_tensor(x)
    gram = x.t() @ x
    sq = (x * x).sum(axis=0)  # 1 x N
    d2 = (sq.t() + sq - 2.0 * gram).relu()  # relu clips negative rounding noise
    zero_mask = (d2.data < 1e-12).astype(np.float64)
    d = (d2 + as_tensor(zero_mask * 1e-16)).sqrt() * as_tensor(1.0 - zero_mask)
    return d


# -- classification and center losses ----------------------------------------


def id_cross_entropy(logits, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]; logits are C x N."""
    logits, labels = _check_batch(logits, labels, "id_cross_entropy")
    n_classes, n = logits.shape
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ShapeError(f"id_cross_entropy: labels outside [0, {n_classes})")
    lse = logsumexp(logits, axis=0)  # 1 x N
    true_logit = gather_pairs(logits, labels, np.arange(n))
    return (lse - true_logit).mean()


def center_loss(features, labels, centers) -> Tensor:
    """0.5 * mean over samples of squared distance to their class center.

    centers is a d x C matrix (one learnable column per class); gradients
    flow into both features and centers.
    """
    features, labels = _check_batch(features, labels, "center_loss")
    centers = as_tensor(centers)
    if centers.shape[0] != features.shape[0]:
        raise ShapeError("center_loss: feature dim and center dim differ")
    if labels.max() >= centers.shape[1]:
        raise ShapeError(f"center_loss: no center for label {labels.max()}")
    diff = features - gather_cols(centers, labels)
    return 0.5 * (diff * diff).sum(axis=0).mean()


# -- pairwise losses ----------------------------------------------------------


def _pair_masks(labels: np.ndarray):
    same = labels[:, None] == labels[None, :]
    eye = np.eye(labels.size, dtype=bool)
    pos = same & ~eye
    neg = ~same
    return pos, neg


def triplet_loss_batch_hard(features, labels, margin: float = 0.3) -> Tensor:
    """Batch-hard triplet: per anchor, hardest positive and hardest negative
    by Euclidean distance, hinge at the margin, mean over anchors."""
    features, labels = _check_batch(features, labels, "triplet_loss_batch_hard")
    pos, neg = _pair_masks(labels)
    if not pos.any(axis=1).all():
        raise ShapeError("triplet: every anchor needs at least one positive (identity with >= 2 samples)")
    if not neg.any(axis=1).all():
        raise ShapeError("triplet: every anchor needs at least one negative (>= 2 identities)")
    dist = pairwise_euclidean(features)
    n = labels.size
    # mining happens on values; ties resolve to the lowest index via argmax/argmin
    dvals = dist.data
    hardest_pos = np.where(pos, dvals, -np.inf).argmax(axis=1)
    hardest_neg = np.where(neg, dvals, np.inf).argmin(axis=1)
    anchors = np.arange(n)
    dp = gather_pairs(dist, anchors, hardest_pos)
    dn = gather_pairs(dist, anchors, hardest_neg)
    return (dp - dn + margin).relu().mean()


def circle_loss(features, labels, scale: float = 32.0, margin: float = 0.25) -> Tensor:
    """Mean over anchors of log(1 + sum_j exp(s*(sn_j + m)) * sum_i exp(-s*sp_i))
    on cosine similarities of L2-normalized embeddings."""
    features, labels = _check_batch(features, labels, "circle_loss")
    if scale <= 0:
        raise ConfigError("circle_loss: scale must be positive")
    pos, neg = _pair_masks(labels)
    if not pos.any(axis=1).all():
        raise ShapeError("circle_loss: an anchor has no positives")
    if not neg.any(axis=1).all():
        raise ShapeError("circle_loss: an anchor has no negatives")
    norms = (features * features).sum(axis=0).sqrt()  # zero column would fault in div
    xn = features / norms
    sim = xn.t() @ xn
    n = labels.size
    total = None
    for i in range(n):
        pos_idx = np.flatnonzero(pos[i])
        neg_idx = np.flatnonzero(neg[i])
        sp = gather_pairs(sim, np.full(pos_idx.size, i), pos_idx)
        sn = gather_pairs(sim, np.full(neg_idx.size, i), neg_idx)
        z = logsumexp(scale * (sn + margin)) + logsumexp(-scale * sp)
        term = softplus(z)
        total = term if total is None else total + term
    return total * (1.0 / n)


def lifted_structure_loss(features, labels, margin: float = 1.0) -> Tensor:
    """Mean over positive pairs (i < j) of
    relu(D_ij + log sum_k exp(m - D_ik) + log sum_l exp(m - D_jl))^ ,
    negatives taken per endpoint."""
    features, labels = _check_batch(features, labels, "lifted_structure_loss")
    pos, neg = _pair_masks(labels)
    pairs = [(i, j) for i in range(labels.size) for j in range(i + 1, labels.size) if pos[i, j]]
    if not pairs:
        raise ShapeError("lifted_structure_loss: batch has no positive pairs")
    if not neg.any():
        raise ShapeError("lifted_structure_loss: batch has no negative pairs")
    dist = pairwise_euclidean(features)
    neg_lse = {}  # anchor -> log sum_k exp(margin - D_ik) over its negatives
    for i in {i for ij in pairs for i in ij}:
        neg_idx = np.flatnonzero(neg[i])
        if neg_idx.size == 0:
            raise ShapeError(f"lifted_structure_loss: sample {i} has no negatives")
        di = gather_pairs(dist, np.full(neg_idx.size, i), neg_idx)
        neg_lse[i] = logsumexp(margin - di)
    total = None
    for i, j in pairs:
        dij = gather_pairs(dist, np.array([i]), np.array([j]))
        term = (dij + neg_lse[i] + neg_lse[j]).relu()
        total = term if total is None else total + term
    return total * (1.0 / len(pairs))


def ranked_list_loss(features, labels, alpha: float = 1.2, margin: float = 0.4) -> Tensor:
    """Mean over ordered pairs i != j of
    (1-y_ij) * relu(alpha - d_ij) + y_ij * relu(d_ij - (alpha - margin))."""
    features, labels = _check_batch(features, labels, "ranked_list_loss")
    if not alpha > margin:
        raise ConfigError("ranked_list_loss: alpha must exceed margin")
    if labels.size < 2:
        raise ShapeError("ranked_list_loss: need at least 2 samples")
    pos, neg = _pair_masks(labels)
    dist = pairwise_euclidean(features)
    pos_terms = (dist - (alpha - margin)).relu() * as_tensor(pos.astype(np.float64))
    neg_terms = (alpha - dist).relu() * as_tensor(neg.astype(np.float64))
    n = labels.size
    return (pos_terms + neg_terms).sum() * (1.0 / (n * (n - 1)))


# -- center prediction loss ---------------------------------------------------


def _canonical_order(cols: np.ndarray) -> np.ndarray:
    """Order of columns by lexicographic feature value (first row primary).

    Used so seeded random-point target choices commute with batch
    permutation: the draw attaches to the sample's rank within its class,
    not to its position in the batch.
    """
    return np.lexsort(tuple(cols[::-1]))


def cpl_targets(
    features,
    labels,
    target_mode: str = "leave-one-out-mean",
    target_bn=None,
    seed: int = 0,
) -> Tensor:
    """Per-sample prediction targets c_i as a detached d x N constant.

    Computed from values only; no gradient ever flows through a target. If a
    BatchNorm layer is given, targets are built from its output on the
    current batch (train-mode statistics; its running stats update as a side
    effect, its parameters receive no gradient from this path).

    Modes: leave-one-out-mean (mean of the other K-1 same-class samples),
    sample-mean (mean including self), random-point (seeded uniform draw
    among the other K-1), farthest-point (the same-class sample at greatest
    Euclidean distance, ties to the lowest batch index).
    """
    features, labels = _check_batch(features, labels, "cpl_targets")
    if target_mode not in TARGET_MODES:
        raise ConfigError(f"unknown target mode {target_mode!r}; expected one of {TARGET_MODES}")
    values = features.data
    if target_bn is not None:
        values = target_bn(as_tensor(values)).data
    targets = np.empty_like(values)
    for label in np.unique(labels):
        idx = np.flatnonzero(labels == label)
        k = idx.size
        if k < 2:
            raise ShapeError(f"cpl_targets: identity {label} has {k} sample(s); need >= 2")
        z = values[:, idx]
        if target_mode == "leave-one-out-mean":
            total = z.sum(axis=1, keepdims=True)
            targets[:, idx] = (total - z) / (k - 1)
        elif target_mode == "sample-mean":
            targets[:, idx] = z.mean(axis=1, keepdims=True)
        elif target_mode == "farthest-point":
            d2 = (z * z).sum(axis=0)[:, None] + (z * z).sum(axis=0)[None, :] - 2.0 * z.T @ z
            np.fill_diagonal(d2, -np.inf)
            farthest = d2.argmax(axis=1)  # ties: argmax takes the lowest index
            targets[:, idx] = z[:, farthest]
        else:  # random-point
            order = _canonical_order(z)
            rng = substream(seed, f"cpl-random-target/{int(label)}")
            draws = rng.integers(0, k - 1, size=k)
            for rank, pos in enumerate(order):
                u = draws[rank]
                other_rank = u if u < rank else u + 1
                targets[:, idx[pos]] = z[:, order[other_rank]]
    return Tensor(targets, detached=True)


def cpl_loss(
    features,
    labels,
    predictor=None,
    target_mode: str = "leave-one-out-mean",
    target_bn=None,
    seed: int = 0,
    targets: Tensor | None = None,
) -> Tensor:
    """Center prediction loss: sum over classes of the per-class mean of
    ||f(x_i) - c_i||^2 with frozen targets c_i.

    predictor=None means predictions are the embeddings themselves. A
    precomputed target matrix can be passed to reuse cached targets; it must
    be detached (constant).
    """
    features, labels = _check_batch(features, labels, "cpl_loss")
    if targets is None:
        targets = cpl_targets(features, labels, target_mode, target_bn=target_bn, seed=seed)
    else:
        targets = as_tensor(targets)
        if targets.requires_grad:
            raise ConfigError("cpl_loss: cached targets must be constant (detached)")
        if targets.shape != features.shape:
            raise ShapeError("cpl_loss: cached targets shape mismatch")
    preds = predictor(features) if predictor is not None else features
    diff = preds - targets
    sq = (diff * diff).sum(axis=0)  # 1 x N
    uniq, counts = np.unique(labels, return_counts=True)
    count_of = dict(zip(uniq, counts))
    weights = np.array([1.0 / count_of[y] for y in labels])[None, :]
    return (sq * as_tensor(weights)).sum()


# -- composition ---------------------------------------------------------------


@dataclass
class LossBundle:
    """Weighted sum of named loss parts; total keeps the graph alive."""

    total: Tensor
    parts: dict = field(default_factory=dict)  # name -> scalar Tensor
    weights: dict = field(default_factory=dict)

    def part_values(self) -> dict:
        return {name: t.item() for name, t in self.parts.items()}

    @property
    def total_value(self) -> float:
        return self.total.item()


def compose_losses(parts: dict, weights: dict | None = None) -> LossBundle:
    """Combine named scalar losses into total = sum w_k * part_k.

    Missing weights default to 1.0; a weight without a matching part is a
    config error; any non-finite part raises TrainingDivergenceError.
    """
    if not parts:
        raise ConfigError("compose_losses: no parts given")
    weights = dict(weights or {})
    unknown = set(weights) - set(parts)
    if unknown:
        raise ConfigError(f"compose_losses: weights for unknown parts {sorted(unknown)}")
    resolved = {name: float(weights.get(name, 1.0)) for name in parts}
    values = {}
    for name, part in parts.items():
        part = as_tensor(part)
        if part.shape != (1, 1):
            raise ShapeError(f"compose_losses: part {name!r} is not scalar")
        v = part.item()
        if not np.isfinite(v):
            raise TrainingDivergenceError(
                f"loss part {name!r} is non-finite ({v})", part_values=values
            )
        values[name] = v
    total = None
    for name, part in parts.items():
        term = as_tensor(part) * resolved[name]
        total = term if total is None else total + term
    return LossBundle(total=total, parts={n: as_tensor(p) for n, p in parts.items()}, weights=resolved)
