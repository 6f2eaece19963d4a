"""Layers: linear, batch normalization, MLP feature extractor, and the
center predictor, plus a text checkpoint format for parameter matrices.

All layers consume and produce d x N matrices (column per sample) and expose
params() as (name, Tensor) pairs for the optimizer and checkpointing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, as_tensor, matmul
from .errors import ConfigError, ShapeError

__all__ = [
    "Linear",
    "BatchNorm",
    "MLP",
    "CenterPredictor",
    "ModelConfig",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_HEADER = "metriclab-checkpoint v1"


class Linear:
    """Affine map W x + b, W: out_dim x in_dim, b: out_dim x 1.

    Weights init uniform in [-sqrt(1/in_dim), sqrt(1/in_dim)], bias zero.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        if in_dim < 1 or out_dim < 1:
            raise ConfigError("linear: dims must be positive")
        self.in_dim = in_dim
        self.out_dim = out_dim
        bound = np.sqrt(1.0 / in_dim)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(out_dim, in_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros((out_dim, 1)), requires_grad=True)

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[0] != self.in_dim:
            raise ShapeError(f"linear: expected {self.in_dim} rows, got {x.shape[0]}")
        return matmul(self.weight, x) + self.bias

    __call__ = forward

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


class BatchNorm:
    """Per-feature batch normalization over the sample axis.

    Train mode normalizes with the current batch's mean and (biased)
    variance and updates running statistics; eval mode normalizes with the
    stored running statistics. Train mode needs at least 2 samples.
    """

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        self.dim = dim
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = Tensor(np.ones((dim, 1)), requires_grad=True)
        self.beta = Tensor(np.zeros((dim, 1)), requires_grad=True)
        self.running_mean = np.zeros((dim, 1))
        self.running_var = np.ones((dim, 1))
        self.training = True

    def train(self):
        self.training = True

    def eval(self):
        self.training = False

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[0] != self.dim:
            raise ShapeError(f"batchnorm: expected {self.dim} rows, got {x.shape[0]}")
        if self.training:
            n = x.shape[1]
            if n < 2:
                raise ShapeError("batchnorm: train mode needs a batch of at least 2")
            mu = x.mean(axis=1)
            centered = x - mu
            var = (centered * centered).mean(axis=1)
            xhat = centered / (var + self.eps).sqrt()
            # running stats never carry gradient; unbiased variance for the
            # running estimate, biased for the normalization itself
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu.data
            self.running_var = (
                1 - self.momentum
            ) * self.running_var + self.momentum * var.data * (n / (n - 1))
        else:
            xhat = (x - as_tensor(self.running_mean)) / as_tensor(
                np.sqrt(self.running_var + self.eps)
            )
        return self.gamma * xhat + self.beta

    __call__ = forward

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


class MLP:
    """Feature extractor: linear layers with ReLU between, none after the last."""

    def __init__(self, in_dim: int, hidden: tuple, out_dim: int, rng: np.random.Generator):
        dims = [in_dim, *hidden, out_dim]
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]

    def forward(self, x) -> Tensor:
        h = as_tensor(x)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i != last:
                h = h.relu()
        return h

    __call__ = forward

    def params(self):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend((f"layers.{i}.{n}", p) for n, p in layer.params())
        return out


class CenterPredictor:
    """MLP head f(x; theta) mapping embeddings to predicted class centers.

    Input and output dims are both the embedding dim. depth counts linear
    layers (2 or 4). Optional batch norm after each hidden linear (bn_hidden)
    and after the final linear (bn_output).
    """

    def __init__(
        self,
        dim: int,
        hidden: int,
        rng: np.random.Generator,
        depth: int = 2,
        bn_hidden: bool = False,
        bn_output: bool = False,
    ):
        if depth not in (2, 4):
            raise ConfigError(f"predictor depth must be 2 or 4, got {depth}")
        self.dim = dim
        self.hidden = hidden
        self.depth = depth
        self.bn_hidden = bn_hidden
        self.bn_output = bn_output
        dims = [dim] + [hidden] * (depth - 1) + [dim]
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(depth)]
        self.hidden_bns = [BatchNorm(hidden) for _ in range(depth - 1)] if bn_hidden else []
        self.output_bn = BatchNorm(dim) if bn_output else None

    def forward(self, x) -> Tensor:
        h = as_tensor(x)
        if h.shape[0] != self.dim:
            raise ShapeError(f"predictor: expected {self.dim} rows, got {h.shape[0]}")
        for i, layer in enumerate(self.layers[:-1]):
            h = layer(h)
            if self.bn_hidden:
                h = self.hidden_bns[i](h)
            h = h.relu()
        h = self.layers[-1](h)
        if self.output_bn is not None:
            h = self.output_bn(h)
        return h

    __call__ = forward

    def train(self):
        for bn in self.hidden_bns:
            bn.train()
        if self.output_bn is not None:
            self.output_bn.train()

    def eval(self):
        for bn in self.hidden_bns:
            bn.eval()
        if self.output_bn is not None:
            self.output_bn.eval()

    def init_identity(self):
        """Set the linear stack to the exact identity map.

        Uses relu(x) - relu(-x) = x: the first layer stacks [I; -I], middle
        layers rebuild x and re-stack, the last collapses with [I, -I].
        Needs hidden >= 2*dim and no BN layers (BN would break identity).
        """
        d, h = self.dim, self.hidden
        if h < 2 * d:
            raise ConfigError(f"identity init needs hidden >= 2*dim ({h} < {2 * d})")
        if self.bn_hidden or self.bn_output:
            raise ConfigError("identity init is undefined with BN layers present")
        eye = np.eye(d)
        expand = np.zeros((h, d))
        expand[:d] = eye
        expand[d : 2 * d] = -eye
        collapse = np.zeros((d, h))
        collapse[:, :d] = eye
        collapse[:, d : 2 * d] = -eye
        self.layers[0].weight.data[:] = expand
        for mid in self.layers[1:-1]:
            mid.weight.data[:] = expand @ collapse
        self.layers[-1].weight.data[:] = collapse
        for layer in self.layers:
            layer.bias.data[:] = 0.0

    def params(self):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend((f"layers.{i}.{n}", p) for n, p in layer.params())
        for i, bn in enumerate(self.hidden_bns):
            out.extend((f"hidden_bns.{i}.{n}", p) for n, p in bn.params())
        if self.output_bn is not None:
            out.extend((f"output_bn.{n}", p) for n, p in self.output_bn.params())
        return out


@dataclass
class ModelConfig:
    """Architecture knobs for one training run."""

    extractor_hidden: tuple = (32, 32)
    embedding_dim: int = 8
    predictor: str = "mlp"  # "mlp" | "none"
    predictor_depth: int = 2
    predictor_hidden: int = 64
    bn_target: bool = True
    bn_predictor_hidden: bool = False
    bn_predictor_output: bool = False

    def __post_init__(self):
        if self.predictor not in ("mlp", "none"):
            raise ConfigError(f"model.predictor must be mlp or none, got {self.predictor!r}")
        if self.predictor_depth not in (2, 4):
            raise ConfigError(f"model.predictor_depth must be 2 or 4, got {self.predictor_depth}")
        if self.embedding_dim < 1:
            raise ConfigError("model.embedding_dim must be positive")
        if self.predictor == "none" and (self.bn_predictor_hidden or self.bn_predictor_output):
            raise ConfigError("predictor BN flags require model.predictor = mlp")


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path, named_params: dict):
    """Write named matrices as text: header, then per matrix a name/shape
    line followed by one line of row-major repr floats (repr round-trips
    float64 exactly)."""
    lines = [CHECKPOINT_HEADER]
    for name in named_params:
        arr = named_params[name]
        arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"checkpoint entry {name!r} is not a matrix")
        lines.append(f"{name} {arr.shape[0]} {arr.shape[1]}")
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ConfigError(f"not a checkpoint file (missing {CHECKPOINT_HEADER!r} header)")
    out = {}
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        fields = lines[i].rsplit(" ", 2)
        if len(fields) != 3:
            raise ConfigError(f"malformed checkpoint entry line: {lines[i]!r}")
        name, rows, cols = fields[0], int(fields[1]), int(fields[2])
        values = np.array([float(v) for v in lines[i + 1].split()])
        if values.size != rows * cols:
            raise ConfigError(f"checkpoint entry {name!r}: expected {rows * cols} values, got {values.size}")
        out[name] = values.reshape(rows, cols)
        i += 2
    return out
