"""Fully connected feature extractor with hand-written reverse mode and a
Nesterov SGD optimizer.

Layer ``l`` computes ``h @ W[l] + b[l]`` with ``W[l]`` of shape
``(fan_in, fan_out)``; hidden layers apply a ReLU, the output layer is
linear.  All functions return fresh arrays and never mutate their inputs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ParseError, TrainingError, UsageError
from .rng import make_rng


@dataclass(frozen=True)
class ExtractorArch:
    layer_widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ConfigurationError("arch needs an input width and at least one layer")
        if any(w < 1 for w in widths):
            raise ConfigurationError(f"layer widths must be positive, got {widths}")
        if widths[-1] < 2:
            raise ConfigurationError("embedding dim must be >= 2")

    @property
    def input_dim(self):
        return self.layer_widths[0]

    @property
    def embed_dim(self):
        return self.layer_widths[-1]

    @property
    def num_layers(self):
        return len(self.layer_widths) - 1


@dataclass
class ExtractorParams:
    weights: list
    biases: list

    @property
    def arch(self):
        return ExtractorArch((self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights))

    def copy(self):
        return ExtractorParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self):
        return list(self.weights) + list(self.biases)

    def map(self, fn, *others):
        """Apply ``fn`` leafwise over this and matching parameter sets."""
        ws = [fn(w, *(o.weights[i] for o in others)) for i, w in enumerate(self.weights)]
        bs = [fn(b, *(o.biases[i] for o in others)) for i, b in enumerate(self.biases)]
        return ExtractorParams(ws, bs)

    def zeros_like(self):
        return self.map(np.zeros_like)

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def equals(self, other):
        return len(self.weights) == len(other.weights) and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass
class ForwardCache:
    params: ExtractorParams
    inputs: list                      # input to each layer
    preacts: list                     # pre-activation of each layer
    batch_size: int = field(default=0)


def init_params(arch, seed):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch.layer_widths[:-1], arch.layer_widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ExtractorParams(weights, biases)


def forward(params, batch, return_cache=True):
    """Embed a ``(B, dim)`` batch; returns ``(embeddings, cache)``."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise ConfigurationError(
            f"batch shape {x.shape} incompatible with input dim {params.weights[0].shape[0]}"
        )
    inputs, preacts = [], []
    h = x
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ W + b
        preacts.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    if not return_cache:
        return h
    return h, ForwardCache(params, inputs, preacts, x.shape[0])


def embed(params, batch):
    return forward(params, batch, return_cache=False)


def backward(params, cache, grad_embeddings):
    """Gradient of a loss w.r.t. params given its gradient w.r.t. the embeddings."""
    if cache.params is not params:
        raise UsageError("cache was produced by a different parameter set")
    g = np.asarray(grad_embeddings, dtype=np.float64)
    if g.shape != cache.preacts[-1].shape:
        raise UsageError(
            f"upstream gradient shape {g.shape} != embedding shape {cache.preacts[-1].shape}"
        )
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        if i != n - 1:
            g = g * (cache.preacts[i] > 0)
        gw[i] = cache.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        if i:
            g = g @ params.weights[i].T
    return ExtractorParams(gw, gb)


@dataclass
class OptimizerState:
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: ExtractorParams | None = None

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")


def sgd_step(params, grads, state):
    """One Nesterov step with decoupled weight decay.

    ``p <- p * (1 - lr*wd)``, then ``v <- mu*v + g`` and
    ``p <- p - lr*(g + mu*v)``.  Returns ``(new_params, new_state)``.
    """
    if not grads.is_finite():
        raise TrainingError("non-finite gradient")
    lr, mu, wd = state.learning_rate, state.momentum, state.weight_decay
    velocity = state.velocity if state.velocity is not None else params.zeros_like()
    new_v = velocity.map(lambda v, g: mu * v + g, grads)
    decay = 1.0 - lr * wd
    new_p = params.map(lambda p, g, v: p * decay - lr * (g + mu * v), grads, new_v)
    return new_p, OptimizerState(lr, mu, wd, new_v)


# -- checkpoint text format --------------------------------------------------

def save_checkpoint(params, path, seed=0, metadata=None):
    """Write ``model.txt``: key=value header, ``---``, one value per line."""
    arch = params.arch
    lines = [f"arch={','.join(str(w) for w in arch.layer_widths)}", f"seed={seed}"]
    for k, v in (metadata or {}).items():
        lines.append(f"{k}={v}")
    lines.append("---")
    for W, b in zip(params.weights, params.biases):
        lines.extend(f"{x:.17g}" for x in W.ravel().tolist())
        lines.extend(f"{x:.17g}" for x in b.tolist())
    if os.path.isdir(path):
        path = os.path.join(path, "model.txt")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def load_checkpoint(path):
    """Returns ``(params, header_dict)``."""
    if os.path.isdir(path):
        path = os.path.join(path, "model.txt")
    with open(path) as fh:
        text = fh.read().split("\n")
    header = {}
    for lineno, line in enumerate(text, 1):
        if line == "---":
            body_start = lineno
            break
        if "=" not in line:
            raise ParseError("expected key=value header line", lineno)
        k, v = line.split("=", 1)
        header[k] = v
    else:
        raise ParseError("checkpoint has no '---' separator")
    if "arch" not in header:
        raise ParseError("checkpoint header lacks arch")
    arch = ExtractorArch(tuple(int(w) for w in header["arch"].split(",")))
    values = []
    for lineno, line in enumerate(text[body_start:], body_start + 1):
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ParseError("non-numeric weight", lineno) from None
    need = sum(a * b + b for a, b in zip(arch.layer_widths[:-1], arch.layer_widths[1:]))
    if len(values) != need:
        raise ParseError(f"expected {need} values for arch {arch.layer_widths}, got {len(values)}")
    flat = np.array(values)
    weights, biases, pos = [], [], 0
    for a, b in zip(arch.layer_widths[:-1], arch.layer_widths[1:]):
        weights.append(flat[pos:pos + a * b].reshape(a, b))
        pos += a * b
        biases.append(flat[pos:pos + b].copy())
        pos += b
    params = ExtractorParams(weights, biases)
    if not params.is_finite():
        raise ParseError("checkpoint contains non-finite weights")
    return params, header
