"""Episodic meta-training: prototypical loss, first-order MAML and the
support-adversarial variant where each training episode's support set is
the greedy worst case against the current extractor.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import EpisodeShape, sample_episode
from .errors import ConfigurationError, TrainingError
from .extractor import (
    ExtractorArch,
    ExtractorParams,
    OptimizerState,
    backward,
    forward,
    init_params,
    sgd_step,
)
from .heads import EpisodeScorer, HeadSpec, one_hot
from .rng import derive_seed, make_rng
from .search import SearchConfig, greedy_support_search, random_index_set

log = logging.getLogger(__name__)

OBJECTIVES = ("protonet", "fomaml")


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "protonet"
    epochs: int = 30
    episodes_per_epoch: int = 200
    meta_batch: int = 4
    inner_lr: float = 0.1
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    hidden: tuple = (64, 64, 32)
    train_shape: EpisodeShape = field(default_factory=lambda: EpisodeShape(K=5, J=1, M=20, Q=15))
    val_shape: EpisodeShape = field(default_factory=lambda: EpisodeShape(K=5, J=5, M=20, Q=15))
    val_tasks: int = 50
    adversarial: bool = False
    adversarial_search: SearchConfig = field(default_factory=SearchConfig)
    adversarial_lr_factor: float = 10.0
    keep_best: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"unknown objective {self.objective!r}")
        for name in ("epochs", "episodes_per_epoch", "meta_batch", "val_tasks"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.objective == "fomaml" and not self.inner_lr >= 0:
            raise ConfigurationError("inner_lr must be >= 0")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.adversarial_lr_factor <= 0:
            raise ConfigurationError("adversarial_lr_factor must be > 0")
        if self.adversarial_search.mode != "worst":
            raise ConfigurationError("adversarial training searches in worst mode")


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = 0
    checkpoint_path: str | None = None

    def to_csv(self):
        lines = ["epoch,loss,val_accuracy,seconds"]
        for e, l, a, s in zip(self.epochs, self.loss, self.val_accuracy, self.seconds):
            lines.append(f"{e},{l:.8f},{a:.6f},{s:.3f}")
        return "\n".join(lines) + "\n"


# -- losses ------------------------------------------------------------------

def _log_softmax(logits):
    shift = logits - logits.max(axis=1, keepdims=True)
    return shift - np.log(np.exp(shift).sum(axis=1, keepdims=True))


def _check_finite(value, what):
    if not np.all(np.isfinite(value)):
        raise TrainingError(f"non-finite {what}")


def prototype_loss_from_embeddings(support_emb, support_labels, query_emb, query_labels, K):
    """Cross-entropy of ``-|q - c_k|^2`` logits; returns loss and gradients
    w.r.t. support and query embeddings."""
    onehot_s = one_hot(support_labels, K)
    counts = onehot_s.sum(axis=0)
    centroids = (onehot_s.T @ support_emb) / counts[:, None]
    diff = query_emb[:, None, :] - centroids[None, :, :]
    dist = np.einsum("nke,nke->nk", diff, diff)
    logp = _log_softmax(-dist)
    N = len(query_labels)
    loss = -logp[np.arange(N), query_labels].mean()
    _check_finite(loss, "prototypical loss")
    # dL/d(dist) = -(p - y)/N
    G = -(np.exp(logp) - one_hot(query_labels, K)) / N
    g_query = 2.0 * (query_emb * G.sum(axis=1, keepdims=True) - G @ centroids)
    g_cent = -2.0 * (G.T @ query_emb - centroids * G.sum(axis=0)[:, None])
    g_support = (g_cent / counts[:, None])[support_labels]
    return loss, g_support, g_query


def episode_loss_protonet(params, episode, Z):
    """Prototypical loss of one episode for support indices ``Z``."""
    xs, ys = episode.support_inputs(Z)
    n_s = len(ys)
    emb, cache = forward(params, np.vstack([xs, episode.query_inputs]))
    loss, g_s, g_q = prototype_loss_from_embeddings(
        emb[:n_s], ys, emb[n_s:], episode.query_labels, episode.shape.K)
    return loss, backward(params, cache, np.vstack([g_s, g_q]))


def _linear_ce(params, head, x, labels):
    """Cross-entropy of ``head(f(x))`` and gradients for both parts."""
    emb, cache = forward(params, x)
    logits, hcache = forward(head, emb)
    logp = _log_softmax(logits)
    N = len(labels)
    loss = -logp[np.arange(N), labels].mean()
    _check_finite(loss, "cross-entropy")
    g_logits = (np.exp(logp) - one_hot(labels, logits.shape[1])) / N
    g_head = backward(head, hcache, g_logits)
    g_emb = g_logits @ head.weights[0].T
    return loss, backward(params, cache, g_emb), g_head


def episode_loss_fomaml(params, head, episode, Z, alpha):
    """First-order MAML loss of one episode.

    One inner step on the support cross-entropy gives adapted weights
    ``theta'``; the query loss at ``theta'`` and its gradient w.r.t.
    ``theta'`` are returned (the second-order term is dropped).  ``head`` is
    the persistent linear output layer, a one-layer ``ExtractorParams``.
    """
    if alpha < 0:
        raise ConfigurationError("alpha must be >= 0")
    xs, ys = episode.support_inputs(Z)
    if alpha > 0:
        _, g_p, g_h = _linear_ce(params, head, xs, ys)
        if not (g_p.is_finite() and g_h.is_finite()):
            raise TrainingError("non-finite inner gradient")
        params = params.map(lambda p, g: p - alpha * g, g_p)
        head = head.map(lambda p, g: p - alpha * g, g_h)
    return _linear_ce(params, head, episode.query_inputs, episode.query_labels)


def init_output_layer(embed_dim, K, seed):
    return init_params(ExtractorArch((embed_dim, K)), seed)


# -- training loops ------------------------------------------------------------

PROTOTYPE_HEAD = HeadSpec("prototype")


def validation_accuracy(params, dataset, classes, shape, tasks, seed, head=PROTOTYPE_HEAD):
    """Mean query accuracy over ``tasks`` episodes with random support."""
    accs = []
    for t in range(tasks):
        ep = sample_episode(dataset, classes, shape, derive_seed(seed, t))
        Z = random_index_set(shape, make_rng(seed, t, 1))
        accs.append(EpisodeScorer(params, head, ep)(Z))
    return float(np.mean(accs))


def _episode_gradient(params, head_layer, dataset, classes, config, ep_seed, search_cfg):
    shape = config.train_shape
    episode = sample_episode(dataset, classes, shape, ep_seed)
    if search_cfg is not None:
        scorer = EpisodeScorer(params, PROTOTYPE_HEAD, episode)
        cfg = replace(search_cfg, seed=derive_seed(ep_seed, 2))
        Z = greedy_support_search(scorer, shape, cfg, record_candidates=False).final_indices
    else:
        Z = random_index_set(shape, make_rng(ep_seed, 1))
    if config.objective == "protonet":
        loss, g = episode_loss_protonet(params, episode, Z)
        return loss, g, None
    return episode_loss_fomaml(params, head_layer, episode, Z, config.inner_lr)


def _mean_grads(grads):
    total = grads[0]
    for g in grads[1:]:
        total = total.map(lambda a, b: a + b, g)
    return total.map(lambda a: a / len(grads))


def train(dataset, split, config, init=None, threads=1, progress=None):
    """Episodic meta-training; returns the best-validation params and a log.

    ``init`` warm-starts from existing params (required for adversarial
    runs).  With ``config.adversarial`` each episode's support is the
    greedy worst case under the current params and the learning rate is
    divided by ``config.adversarial_lr_factor``.
    """
    train_classes = split.train_classes
    if len(train_classes) < config.train_shape.K or len(split.val_classes) < config.val_shape.K:
        raise ConfigurationError("split parts too small for the configured way count")
    arch = ExtractorArch((dataset.dim,) + tuple(config.hidden))
    params = init.copy() if init is not None else init_params(arch, derive_seed(config.seed, 0))
    if params.arch != arch:
        raise ConfigurationError(f"init arch {params.arch.layer_widths} != {arch.layer_widths}")
    head_layer = None
    if config.objective == "fomaml":
        head_layer = init_output_layer(arch.embed_dim, config.train_shape.K, derive_seed(config.seed, 1))
    lr = config.learning_rate
    search_cfg = None
    if config.adversarial:
        lr = lr / config.adversarial_lr_factor
        search_cfg = config.adversarial_search
    state = OptimizerState(lr, config.momentum, config.weight_decay)
    head_state = OptimizerState(lr, config.momentum, config.weight_decay)

    val_seed = derive_seed(config.seed, 3)
    best, best_acc = params.copy(), -1.0
    log_ = TrainLog()
    steps = max(1, config.episodes_per_epoch // config.meta_batch)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            losses = []
            for step in range(steps):
                seeds = [derive_seed(config.seed, 4, epoch, step, b) for b in range(config.meta_batch)]

                def job(s, p=params, h=head_layer):
                    return _episode_gradient(p, h, dataset, train_classes, config, s, search_cfg)

                results = list(pool.map(job, seeds)) if pool else [job(s) for s in seeds]
                losses.extend(r[0] for r in results)
                g = _mean_grads([r[1] for r in results])
                params, state = sgd_step(params, g, state)
                if head_layer is not None:
                    gh = _mean_grads([r[2] for r in results])
                    head_layer, head_state = sgd_step(head_layer, gh, head_state)
            acc = validation_accuracy(params, dataset, split.val_classes, config.val_shape,
                                      config.val_tasks, val_seed)
            if acc > best_acc or not config.keep_best:
                best_acc, best = acc, params.copy()
                log_.best_epoch = epoch
            log_.epochs.append(epoch)
            log_.loss.append(float(np.mean(losses)))
            log_.val_accuracy.append(acc)
            log_.seconds.append(time.perf_counter() - t0)
            log.debug("epoch %d loss %.4f val %.4f", epoch, log_.loss[-1], acc)
            if progress is not None:
                progress(epoch, log_.loss[-1], acc)
    finally:
        if pool:
            pool.shutdown()
    return best, log_


def adversarial_train(dataset, split, config, init, threads=1, progress=None):
    """Support-adversarial fine-tuning from a standard checkpoint ``init``."""
    if init is None:
        raise ConfigurationError("adversarial training starts from a standard-trained checkpoint")
    if not config.adversarial:
        config = replace(config, adversarial=True)
    return train(dataset, split, config, init=init, threads=threads, progress=progress)
