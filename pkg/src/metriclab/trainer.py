"""SGD training loop with a milestone lr schedule, plus predictor-only
refitting against frozen center-prediction targets.

One shared schedule drives every parameter group (extractor, classifier,
predictor, centers). Center-prediction targets are recomputed per batch and
always detached; caching them changes nothing, which the tests pin down.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, as_tensor, backward
from .errors import ConfigError, TrainingDivergenceError
from .losses import (
    LossBundle,
    MarginConfig,
    center_loss,
    circle_loss,
    compose_losses,
    cpl_loss,
    cpl_targets,
    id_cross_entropy,
    lifted_structure_loss,
    ranked_list_loss,
    triplet_loss_batch_hard,
)
from .nn import MLP, BatchNorm, CenterPredictor, Linear, ModelConfig, save_checkpoint
from .sampling import LabeledBatch, LabeledDataset, PKSamplerConfig, epoch_iter
from .seeding import subseed, substream

__all__ = [
    "SgdConfig",
    "LossConfig",
    "lr_at",
    "SGD",
    "TrainState",
    "build_state",
    "train_step",
    "train_run",
    "refit_predictor",
    "cpl_errors",
    "write_timeline_csv",
]

LOSS_NAMES = ("ce", "cpl", "center", "triplet", "circle", "lifted", "rll")


@dataclass
class SgdConfig:
    """Milestone step schedule: lr = base_lr * decay^(milestones passed)."""

    base_lr: float = 3.5e-4
    milestones: tuple = (10, 20)
    decay_factor: float = 0.1
    epochs: int = 30
    momentum: float = 0.9

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.base_lr <= 0:
            raise ConfigError("sgd.base_lr must be positive")
        if self.epochs < 1:
            raise ConfigError("sgd.epochs must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigError("sgd.momentum must be in [0, 1)")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("sgd.decay_factor must be in (0, 1]")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigError("sgd.milestones must be strictly increasing")
        if any(m < 1 or m >= self.epochs for m in self.milestones):
            raise ConfigError("sgd.milestones must lie in [1, epochs)")


@dataclass
class LossConfig:
    """Which losses train, their weights, margins, and target policy."""

    weights: dict = field(default_factory=lambda: {"ce": 1.0, "cpl": 1.0})
    margins: MarginConfig = field(default_factory=MarginConfig)
    cpl_target: str = "leave-one-out-mean"

    def __post_init__(self):
        unknown = set(self.weights) - set(LOSS_NAMES)
        if unknown:
            raise ConfigError(f"unknown loss names {sorted(unknown)}; expected {LOSS_NAMES}")
        for name, w in self.weights.items():
            if w < 0:
                raise ConfigError(f"loss.{name}.weight must be >= 0")

    def enabled(self):
        return [name for name in LOSS_NAMES if self.weights.get(name, 0.0) > 0.0]


def lr_at(cfg: SgdConfig, epoch: int) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {cfg.epochs})")
    # one multiply per crossed milestone, the exact f64 sequence a stepped
    # scheduler produces, so values are reproducible bitwise
    lr = cfg.base_lr
    for _ in range(bisect_right(cfg.milestones, epoch)):
        lr *= cfg.decay_factor
    return lr


class SGD:
    """Momentum SGD: v = mu*v + g; p -= lr*v."""

    def __init__(self, params: list, momentum: float = 0.9):
        self.params = list(params)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: dict, lr: float):
        for p, v in zip(self.params, self.velocity):
            g = grads.get(p)
            if g is None:
                continue
            v *= self.momentum
            v += g
            p.data -= lr * v


@dataclass
class TrainState:
    extractor: MLP
    classifier: Linear
    predictor: CenterPredictor | None
    target_bn: BatchNorm | None
    centers: Tensor | None
    optimizer: SGD
    seed: int
    epoch: int = 0
    step: int = 0
    history: list = field(default_factory=list)

    def named_params(self) -> dict:
        out = {}
        out.update({f"extractor.{n}": p for n, p in self.extractor.params()})
        out.update({f"classifier.{n}": p for n, p in self.classifier.params()})
        if self.predictor is not None:
            out.update({f"predictor.{n}": p for n, p in self.predictor.params()})
        if self.target_bn is not None:
            out.update({f"target_bn.{n}": p for n, p in self.target_bn.params()})
        if self.centers is not None:
            out["centers"] = self.centers
        return out

    def eval_mode(self):
        if self.predictor is not None:
            self.predictor.eval()
        if self.target_bn is not None:
            self.target_bn.eval()

    def train_mode(self):
        if self.predictor is not None:
            self.predictor.train()
        if self.target_bn is not None:
            self.target_bn.train()


def build_state(
    input_dim: int,
    n_classes: int,
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    seed: int,
    momentum: float = 0.9,
) -> TrainState:
    rng = substream(seed, "init")
    extractor = MLP(input_dim, tuple(model_cfg.extractor_hidden), model_cfg.embedding_dim, rng)
    classifier = Linear(model_cfg.embedding_dim, n_classes, rng)
    predictor = None
    if model_cfg.predictor == "mlp":
        predictor = CenterPredictor(
            dim=model_cfg.embedding_dim,
            hidden=model_cfg.predictor_hidden,
            rng=rng,
            depth=model_cfg.predictor_depth,
            bn_hidden=model_cfg.bn_predictor_hidden,
            bn_output=model_cfg.bn_predictor_output,
        )
    target_bn = BatchNorm(model_cfg.embedding_dim) if model_cfg.bn_target else None
    centers = None
    if loss_cfg.weights.get("center", 0.0) > 0.0:
        centers = Tensor(np.zeros((model_cfg.embedding_dim, n_classes)), requires_grad=True)
    state = TrainState(
        extractor=extractor,
        classifier=classifier,
        predictor=predictor,
        target_bn=target_bn,
        centers=centers,
        optimizer=None,
        seed=seed,
    )
    state.optimizer = SGD(list(state.named_params().values()), momentum=momentum)
    return state


def _loss_parts(state: TrainState, embeddings, labels, loss_cfg: LossConfig) -> dict:
    m = loss_cfg.margins
    parts = {}
    for name in loss_cfg.enabled():
        if name == "ce":
            parts["ce"] = id_cross_entropy(state.classifier(embeddings), labels)
        elif name == "cpl":
            parts["cpl"] = cpl_loss(
                embeddings,
                labels,
                predictor=state.predictor,
                target_mode=loss_cfg.cpl_target,
                target_bn=state.target_bn,
                seed=subseed(state.seed, f"cpl-draw/{state.step}"),
            )
        elif name == "center":
            if state.centers is None:
                raise ConfigError("center loss enabled but state has no centers")
            parts["center"] = center_loss(embeddings, labels, state.centers)
        elif name == "triplet":
            parts["triplet"] = triplet_loss_batch_hard(embeddings, labels, m.triplet_margin)
        elif name == "circle":
            parts["circle"] = circle_loss(embeddings, labels, m.circle_scale, m.circle_margin)
        elif name == "lifted":
            parts["lifted"] = lifted_structure_loss(embeddings, labels, m.lifted_margin)
        elif name == "rll":
            parts["rll"] = ranked_list_loss(embeddings, labels, m.rll_alpha, m.rll_margin)
    return parts


def train_step(state: TrainState, batch: LabeledBatch, loss_cfg: LossConfig, lr: float) -> LossBundle:
    """One SGD update on one batch; returns the composed losses.

    With every enabled weight zero this is a no-op on the parameters.
    """
    embeddings = state.extractor(as_tensor(batch.features))
    parts = _loss_parts(state, embeddings, batch.labels, loss_cfg)
    if not parts:  # all weights zero: nothing to optimize
        state.step += 1
        return LossBundle(total=as_tensor([[0.0]]), parts={}, weights={})
    try:
        bundle = compose_losses(parts, {n: loss_cfg.weights[n] for n in parts})
    except TrainingDivergenceError as err:
        err.lr = lr
        raise
    grads = backward(bundle.total)
    state.optimizer.step(grads, lr)
    state.step += 1
    return bundle


@dataclass
class TimelineRow:
    epoch: int
    step: int
    lr: float
    parts: dict
    total: float


def write_timeline_csv(rows: list, path, part_names: list):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "lr", *part_names, "total"])
        for row in rows:
            writer.writerow(
                [row.epoch, row.step, repr(row.lr)]
                + [repr(row.parts.get(n, 0.0)) for n in part_names]
                + [repr(row.total)]
            )


def train_accuracy(state: TrainState, ds: LabeledDataset) -> float:
    state.eval_mode()
    logits = state.classifier(state.extractor(as_tensor(ds.features))).data
    state.train_mode()
    return float((logits.argmax(axis=0) == ds.labels).mean())


def train_run(
    ds: LabeledDataset,
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    sgd_cfg: SgdConfig,
    sampler_cfg: PKSamplerConfig,
    seed: int,
    eval_every: int = 5,
    out_dir=None,
):
    """Full training loop. Returns (state, timeline rows, snapshots).

    Snapshots are (epoch, train accuracy) pairs taken every eval_every
    epochs and at the end; checkpoints go to out_dir when given.
    """
    n_classes = len(ds.identities)
    if ds.identities != list(range(n_classes)):
        raise ConfigError("training expects dense labels 0..C-1")
    state = build_state(ds.dim, n_classes, model_cfg, loss_cfg, seed, momentum=sgd_cfg.momentum)
    sampler_rng = substream(seed, "sampler")
    timeline = []
    snapshots = []
    part_names = loss_cfg.enabled()
    for epoch in range(sgd_cfg.epochs):
        state.epoch = epoch
        lr = lr_at(sgd_cfg, epoch)
        for batch in epoch_iter(ds, sampler_cfg, sampler_rng):
            bundle = train_step(state, batch, loss_cfg, lr)
            timeline.append(
                TimelineRow(
                    epoch=epoch,
                    step=state.step,
                    lr=lr,
                    parts=bundle.part_values(),
                    total=bundle.total_value,
                )
            )
        last = epoch == sgd_cfg.epochs - 1
        if eval_every and (epoch % eval_every == eval_every - 1 or last):
            snapshots.append((epoch, train_accuracy(state, ds)))
            if out_dir is not None:
                save_checkpoint(
                    f"{out_dir}/checkpoint_epoch{epoch:04d}.txt", state.named_params()
                )
    if out_dir is not None:
        write_timeline_csv(timeline, f"{out_dir}/timeline.csv", part_names)
    return state, timeline, snapshots


def embed_dataset(state: TrainState, ds: LabeledDataset) -> np.ndarray:
    state.eval_mode()
    out = state.extractor(as_tensor(ds.features)).data
    state.train_mode()
    return out


# -- predictor refitting -------------------------------------------------------


def refit_predictor(
    features: np.ndarray,
    labels: np.ndarray,
    predictor: CenterPredictor,
    steps: int = 500,
    lr: float = 0.05,
    momentum: float = 0.9,
    target_mode: str = "leave-one-out-mean",
    target_bn: BatchNorm | None = None,
    seed: int = 0,
):
    """Full-batch gradient descent on the predictor only, embeddings fixed.

    Targets are computed once (they depend only on the fixed embeddings).
    Tracks the best iterate, evaluating before the first update, so the
    returned loss never exceeds the starting point's. Returns
    (best_loss, history of per-step losses); the predictor is left holding
    the best parameters.
    """
    x = as_tensor(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels)
    targets = cpl_targets(x, labels, target_mode, target_bn=target_bn, seed=seed)
    params = [p for _, p in predictor.params()]
    opt = SGD(params, momentum=momentum)
    best_value = np.inf
    best_params = None
    history = []
    for _ in range(steps):
        loss = cpl_loss(x, labels, predictor=predictor, targets=targets)
        value = loss.item()
        history.append(value)
        if value < best_value:
            best_value = value
            best_params = [p.data.copy() for p in params]
        opt.step(backward(loss), lr)
    final = cpl_loss(x, labels, predictor=predictor, targets=targets).item()
    history.append(final)
    if final < best_value:
        best_value = final
        best_params = [p.data.copy() for p in params]
    for p, best in zip(params, best_params):
        p.data[:] = best
    return best_value, history


def cpl_errors(
    features: np.ndarray,
    labels: np.ndarray,
    predictor=None,
    target_mode: str = "leave-one-out-mean",
    target_bn: BatchNorm | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Per-sample squared prediction error ||f(x_i) - c_i||^2 (values only)."""
    x = as_tensor(np.asarray(features, dtype=np.float64))
    targets = cpl_targets(x, labels, target_mode, target_bn=target_bn, seed=seed).data
    preds = predictor(x).data if predictor is not None else x.data
    return ((preds - targets) ** 2).sum(axis=0)
