"""Flat dotted-key experiment configs.

One `key = value` pair per line, `#` comments, every key optional except
`kind`. parse -> resolve defaults -> render gives a canonical text form
that round-trips exactly, which is what makes resolved-config reruns and
config hashing meaningful.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .cifar_io import load_cifar_features
from .losses import MarginConfig
from .nn import ModelConfig
from .sampling import LabeledDataset, PKSamplerConfig, load_dataset_csv
from .seeding import subseed
from .synthetic import FIXTURES
from .trainer import LOSS_NAMES, LossConfig, SgdConfig

KINDS = ("train", "surface", "boundary", "ablation-target", "ablation-bn")
DATASET_SOURCES = ("synthetic", "csv", "cifar")
SURFACE_LOSSES = ("center", "cpl", "both")

# fixture picked when the config does not name one
KIND_FIXTURES = {
    "train": "four-class",
    "surface": "two-class",
    "boundary": "three-class",
    "ablation-target": "retrieval",
    "ablation-bn": "retrieval",
}


def _parse_bool(s: str) -> bool:
    if s == "true":
        return True
    if s == "false":
        return False
    raise ValueError("expected 'true' or 'false'")


def _parse_ints(s: str) -> tuple:
    if not s:
        return ()
    return tuple(int(part.strip()) for part in s.split(","))


def _render_bool(v) -> str:
    return "true" if v else "false"


def _render_ints(v) -> str:
    return ",".join(str(int(x)) for x in v)


def _render_float(v) -> str:
    return repr(float(v))


# key -> (parse, render, default). Schema order is render order.
SCHEMA = {
    "kind": (str, str, None),
    "seed": (int, str, 0),
    "out": (str, str, ""),
    "dataset.source": (str, str, "synthetic"),
    "dataset.fixture": (str, str, ""),
    "dataset.path": (str, str, ""),
    "dataset.classes": (_parse_ints, _render_ints, ()),
    "dataset.max_per_class": (int, str, 0),
    "dataset.downsample": (int, str, 4),
    "model.extractor_hidden": (_parse_ints, _render_ints, (32, 32)),
    "model.embedding_dim": (int, str, 8),
    "model.predictor": (str, str, "mlp"),
    "model.predictor_depth": (int, str, 2),
    "model.predictor_hidden": (int, str, 64),
    "model.bn_target": (_parse_bool, _render_bool, True),
    "model.bn_predictor_hidden": (_parse_bool, _render_bool, False),
    "model.bn_predictor_output": (_parse_bool, _render_bool, False),
    "loss.ce.weight": (float, _render_float, 1.0),
    "loss.cpl.weight": (float, _render_float, 1.0),
    "loss.center.weight": (float, _render_float, 0.0),
    "loss.triplet.weight": (float, _render_float, 0.0),
    "loss.circle.weight": (float, _render_float, 0.0),
    "loss.lifted.weight": (float, _render_float, 0.0),
    "loss.rll.weight": (float, _render_float, 0.0),
    "loss.cpl.target": (str, str, "leave-one-out-mean"),
    "loss.triplet.margin": (float, _render_float, 0.3),
    "loss.circle.margin": (float, _render_float, 0.25),
    "loss.circle.scale": (float, _render_float, 32.0),
    "loss.lifted.margin": (float, _render_float, 1.0),
    "loss.rll.alpha": (float, _render_float, 1.2),
    "loss.rll.margin": (float, _render_float, 0.4),
    "sgd.base_lr": (float, _render_float, 3.5e-4),
    "sgd.milestones": (_parse_ints, _render_ints, (10, 20)),
    "sgd.decay_factor": (float, _render_float, 0.1),
    "sgd.epochs": (int, str, 30),
    "sgd.momentum": (float, _render_float, 0.9),
    "sampler.p": (int, str, 4),
    "sampler.k": (int, str, 4),
    "sampler.allow_resample": (_parse_bool, _render_bool, True),
    "eval.every": (int, str, 10),
    "refit.steps": (int, str, 400),
    "refit.lr": (float, _render_float, 0.005),
    "surface.loss": (str, str, "both"),
}


@dataclass
class DatasetConfig:
    source: str = "synthetic"
    fixture: str = ""
    path: str = ""
    classes: tuple = ()
    max_per_class: int = 0
    downsample: int = 4

    def __post_init__(self):
        if self.source not in DATASET_SOURCES:
            raise ConfigError(f"dataset.source must be one of {DATASET_SOURCES}, got '{self.source}'")
        if self.source == "synthetic":
            if self.fixture and self.fixture not in FIXTURES:
                raise ConfigError(
                    f"dataset.fixture '{self.fixture}' unknown; choose from {sorted(FIXTURES)}"
                )
        elif not self.path:
            raise ConfigError(f"dataset.path is required for dataset.source = {self.source}")
        if self.max_per_class < 0:
            raise ConfigError("dataset.max_per_class must be >= 0 (0 keeps everything)")

    def load(self, seed: int) -> LabeledDataset:
        if self.source == "synthetic":
            return FIXTURES[self.fixture](seed=subseed(seed, "dataset"))
        if self.source == "csv":
            return load_dataset_csv(self.path)
        return load_cifar_features(
            self.path,
            class_filter=list(self.classes) if self.classes else None,
            max_per_class=self.max_per_class or None,
            factor=self.downsample,
        )


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    out: str = ""
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    sampler: PKSamplerConfig = field(default_factory=PKSamplerConfig)
    eval_every: int = 10
    refit_steps: int = 400
    refit_lr: float = 0.005
    surface_loss: str = "both"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got '{self.kind}'")
        if self.dataset.source == "synthetic" and not self.dataset.fixture:
            self.dataset = replace(self.dataset, fixture=KIND_FIXTURES[self.kind])
        if self.eval_every < 0:
            raise ConfigError("eval.every must be >= 0 (0 disables snapshots)")
        if self.refit_steps < 1:
            raise ConfigError("refit.steps must be >= 1")
        if self.refit_lr <= 0:
            raise ConfigError("refit.lr must be positive")
        if self.surface_loss not in SURFACE_LOSSES:
            raise ConfigError(f"surface.loss must be one of {SURFACE_LOSSES}")


def _parse_raw(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{stripped}'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate config key '{key}'")
        parse, _, _ = SCHEMA[key]
        try:
            raw[key] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for '{key}': {exc}") from exc
    return raw


def _section(raw: dict, prefix: str, rename: dict | None = None) -> dict:
    rename = rename or {}
    out = {}
    for key, value in raw.items():
        if key.startswith(prefix + "."):
            name = key[len(prefix) + 1 :]
            out[rename.get(name, name)] = value
    return out


def parse_config(text: str) -> ExperimentConfig:
    raw = _parse_raw(text)
    if "kind" not in raw:
        raise ConfigError("config must set 'kind'")
    defaults = {k: v for k, (_, _, v) in SCHEMA.items() if v is not None}
    merged = {**defaults, **raw}

    def build(label, ctor, kwargs):
        try:
            return ctor(**kwargs)
        except ConfigError as exc:
            raise ConfigError(f"{label}: {exc}") from exc

    dataset = build("dataset", DatasetConfig, _section(merged, "dataset"))
    model = build(
        "model",
        ModelConfig,
        _section(merged, "model"),
    )
    margins = build(
        "loss",
        MarginConfig,
        {
            "triplet_margin": merged["loss.triplet.margin"],
            "circle_margin": merged["loss.circle.margin"],
            "circle_scale": merged["loss.circle.scale"],
            "lifted_margin": merged["loss.lifted.margin"],
            "rll_alpha": merged["loss.rll.alpha"],
            "rll_margin": merged["loss.rll.margin"],
        },
    )
    weights = {name: merged[f"loss.{name}.weight"] for name in LOSS_NAMES}
    loss = build(
        "loss",
        LossConfig,
        {"weights": weights, "margins": margins, "cpl_target": merged["loss.cpl.target"]},
    )
    sgd = build(
        "sgd",
        SgdConfig,
        {
            "base_lr": merged["sgd.base_lr"],
            "milestones": merged["sgd.milestones"],
            "decay_factor": merged["sgd.decay_factor"],
            "epochs": merged["sgd.epochs"],
            "momentum": merged["sgd.momentum"],
        },
    )
    sampler = build("sampler", PKSamplerConfig, _section(merged, "sampler"))
    return ExperimentConfig(
        kind=merged["kind"],
        seed=merged["seed"],
        out=merged["out"],
        dataset=dataset,
        model=model,
        loss=loss,
        sgd=sgd,
        sampler=sampler,
        eval_every=merged["eval.every"],
        refit_steps=merged["refit.steps"],
        refit_lr=merged["refit.lr"],
        surface_loss=merged["surface.loss"],
    )


def _raw_from_config(cfg: ExperimentConfig) -> dict:
    raw = {
        "kind": cfg.kind,
        "seed": cfg.seed,
        "out": cfg.out,
        "dataset.source": cfg.dataset.source,
        "dataset.fixture": cfg.dataset.fixture,
        "dataset.path": cfg.dataset.path,
        "dataset.classes": cfg.dataset.classes,
        "dataset.max_per_class": cfg.dataset.max_per_class,
        "dataset.downsample": cfg.dataset.downsample,
        "model.extractor_hidden": cfg.model.extractor_hidden,
        "model.embedding_dim": cfg.model.embedding_dim,
        "model.predictor": cfg.model.predictor,
        "model.predictor_depth": cfg.model.predictor_depth,
        "model.predictor_hidden": cfg.model.predictor_hidden,
        "model.bn_target": cfg.model.bn_target,
        "model.bn_predictor_hidden": cfg.model.bn_predictor_hidden,
        "model.bn_predictor_output": cfg.model.bn_predictor_output,
        "loss.cpl.target": cfg.loss.cpl_target,
        "loss.triplet.margin": cfg.loss.margins.triplet_margin,
        "loss.circle.margin": cfg.loss.margins.circle_margin,
        "loss.circle.scale": cfg.loss.margins.circle_scale,
        "loss.lifted.margin": cfg.loss.margins.lifted_margin,
        "loss.rll.alpha": cfg.loss.margins.rll_alpha,
        "loss.rll.margin": cfg.loss.margins.rll_margin,
        "sgd.base_lr": cfg.sgd.base_lr,
        "sgd.milestones": cfg.sgd.milestones,
        "sgd.decay_factor": cfg.sgd.decay_factor,
        "sgd.epochs": cfg.sgd.epochs,
        "sgd.momentum": cfg.sgd.momentum,
        "sampler.p": cfg.sampler.p,
        "sampler.k": cfg.sampler.k,
        "sampler.allow_resample": cfg.sampler.allow_resample,
        "eval.every": cfg.eval_every,
        "refit.steps": cfg.refit_steps,
        "refit.lr": cfg.refit_lr,
        "surface.loss": cfg.surface_loss,
    }
    for name in LOSS_NAMES:
        raw[f"loss.{name}.weight"] = cfg.loss.weights.get(name, 0.0)
    return raw


def render_config(cfg: ExperimentConfig) -> str:
    raw = _raw_from_config(cfg)
    lines = []
    for key, (_, render, _) in SCHEMA.items():
        lines.append(f"{key} = {render(raw[key])}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """First 12 hex digits of sha256 over the rendered config text.

    The output directory is blanked first so reruns into different
    directories hash identically.
    """
    return hashlib.sha256(render_config(replace(cfg, out="")).encode("utf-8")).hexdigest()[:12]
