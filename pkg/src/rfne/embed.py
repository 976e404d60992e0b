"""Skip-gram with negative sampling (SGNS) over node-id walk corpora."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

UNIGRAM_POWER = 0.75


@dataclass(frozen=True)
class EmbedConfig:
    dim: int = 10
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr_start: float = 0.025
    lr_end: float = 0.0001

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.negatives < 1 or self.epochs < 1:
            raise ValueError("dim, window, negatives and epochs must all be >= 1")
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("need lr_start >= lr_end > 0")


class EmbeddingModel:
    """Trained node vectors of one tree, indexed by node id."""

    def __init__(self, vectors, config: EmbedConfig, losses=None):
        self.vectors = np.array(vectors, dtype=np.float64)
        self.vectors.setflags(write=False)
        self.config = config
        self.losses = None if losses is None else np.asarray(losses)

    @property
    def n_nodes(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, node_id: int) -> np.ndarray:
        if not 0 <= node_id < self.n_nodes:
            raise KeyError(f"node id {node_id} is not part of this embedding "
                           f"(valid ids 0..{self.n_nodes - 1})")
        return self.vectors[node_id]

    def __getitem__(self, node_id):
        return self.lookup(node_id)


def lookup(model: EmbeddingModel, node_id: int) -> np.ndarray:
    return model.lookup(node_id)


def context_pairs(walks, window: int) -> tuple[np.ndarray, np.ndarray]:
    """All (center, context) pairs within ``window`` positions, in corpus order."""
    padded = _pad(walks)
    length = padded.shape[1]
    a, b = np.meshgrid(np.arange(length), np.arange(length), indexing="ij")
    keep = (a != b) & (np.abs(a - b) <= window)
    a, b = a[keep], b[keep]
    centers = padded[:, a]
    contexts = padded[:, b]
    valid = (centers >= 0) & (contexts >= 0)
    return centers[valid], contexts[valid]


def _pad(walks) -> np.ndarray:
    length = max(len(w) for w in walks)
    out = np.full((len(walks), length), -1, dtype=np.int64)
    for i, w in enumerate(walks):
        out[i, : len(w)] = w
    return out


def noise_distribution(walks, n_nodes: int) -> np.ndarray:
    padded = _pad(walks)
    counts = np.bincount(padded[padded >= 0], minlength=n_nodes).astype(np.float64)
    weights = counts ** UNIGRAM_POWER
    return weights / weights.sum()


@njit(cache=True)
def _log_sigmoid(x):
    if x >= 0:
        return -np.log1p(np.exp(-x))
    return x - np.log1p(np.exp(x))


@njit(cache=True)
def _pair_loss(w_in, w_out, c, ctx, negs):
    dim = w_in.shape[1]
    loss = 0.0
    for t in range(negs.shape[0] + 1):
        target = ctx if t == 0 else negs[t - 1]
        if t > 0 and target == ctx:
            continue
        dot = 0.0
        for k in range(dim):
            dot += w_in[c, k] * w_out[target, k]
        loss -= _log_sigmoid(dot) if t == 0 else _log_sigmoid(-dot)
    return loss


@njit(cache=True)
def _sgd(w_in, w_out, centers, contexts, negatives, lr_start, lr_end):
    """Sequential SGNS updates; returns the objective over each epoch's pairs
    and negatives, measured with the parameters at the end of that epoch."""
    epochs = negatives.shape[0]
    n_pairs = centers.shape[0]
    n_neg = negatives.shape[2]
    dim = w_in.shape[1]
    total = epochs * n_pairs
    losses = np.zeros(epochs)
    grad = np.empty(dim)
    step = 0
    for e in range(epochs):
        for i in range(n_pairs):
            frac = step / (total - 1) if total > 1 else 0.0
            lr = lr_start - (lr_start - lr_end) * frac
            step += 1
            c = centers[i]
            grad[:] = 0.0
            for t in range(n_neg + 1):
                if t == 0:
                    target = contexts[i]
                    label = 1.0
                else:
                    target = negatives[e, i, t - 1]
                    if target == contexts[i]:
                        continue
                    label = 0.0
                dot = 0.0
                for k in range(dim):
                    dot += w_in[c, k] * w_out[target, k]
                s = 1.0 / (1.0 + np.exp(-dot))
                g = label - s
                for k in range(dim):
                    grad[k] += g * w_out[target, k]
                    w_out[target, k] += lr * g * w_in[c, k]
            for k in range(dim):
                w_in[c, k] += lr * grad[k]
        for i in range(n_pairs):
            losses[e] += _pair_loss(w_in, w_out, centers[i], contexts[i], negatives[e, i])
    return losses


def init_vectors(n_nodes: int, dim: int, rng) -> tuple[np.ndarray, np.ndarray]:
    w_in = (rng.random((n_nodes, dim)) - 0.5) / dim
    w_out = np.zeros((n_nodes, dim))
    return w_in, w_out


def train_skipgram(walks, config: EmbedConfig, seed, n_nodes: int | None = None) -> EmbeddingModel:
    """Fit SGNS node vectors on a walk corpus.

    Input vectors start uniform in [-0.5/d, 0.5/d] and output vectors at zero.
    Every epoch visits the pairs in corpus order with ``config.negatives``
    fresh noise samples per pair drawn from the unigram distribution raised
    to 0.75; a noise sample equal to the true context is skipped.  The
    learning rate decays linearly from ``lr_start`` to ``lr_end`` over all
    updates.  The returned vectors are the input (center) matrix; ``losses``
    holds the objective over each epoch's pairs at the end of that epoch.
    """
    walks = [list(w) for w in walks]
    if not walks:
        raise ValueError("cannot train on an empty corpus")
    seen = max(max(w) for w in walks) + 1
    n_nodes = seen if n_nodes is None else int(n_nodes)
    if n_nodes < seen:
        raise ValueError("corpus mentions node ids beyond n_nodes")
    rng = np.random.default_rng(seed)
    w_in, w_out = init_vectors(n_nodes, config.dim, rng)
    centers, contexts = context_pairs(walks, config.window)
    if centers.size == 0:
        return EmbeddingModel(w_in, config, np.zeros(config.epochs))
    noise = noise_distribution(walks, n_nodes)
    negatives = rng.choice(n_nodes, size=(config.epochs, centers.size, config.negatives),
                           p=noise)
    losses = _sgd(w_in, w_out, centers, contexts, negatives, config.lr_start, config.lr_end)
    return EmbeddingModel(w_in, config, losses)


def pair_objective(u, v_context, v_negatives) -> float:
    """log s(u.v_ctx) + sum log s(-u.v_neg) for a single pair."""
    u = np.asarray(u, dtype=np.float64)
    value = -np.logaddexp(0.0, -u @ np.asarray(v_context))
    for v in np.atleast_2d(v_negatives):
        value += -np.logaddexp(0.0, u @ v)
    return float(value)


def pair_gradient(u, v_context, v_negatives):
    """Gradient of :func:`pair_objective` w.r.t. (u, v_ctx, each v_neg)."""
    u = np.asarray(u, dtype=np.float64)
    v_context = np.asarray(v_context, dtype=np.float64)
    v_negatives = np.atleast_2d(np.asarray(v_negatives, dtype=np.float64))

    def sig(x):
        return 1.0 / (1.0 + np.exp(-x))

    g_pos = 1.0 - sig(u @ v_context)
    g_neg = -sig(v_negatives @ u)
    grad_u = g_pos * v_context + g_neg @ v_negatives
    grad_ctx = g_pos * u
    grad_negs = g_neg[:, None] * u[None, :]
    return grad_u, grad_ctx, grad_negs


def sgd_step(u, v_context, v_negatives, lr):
    """One update exactly as the trainer applies it, for checking against the gradient."""
    w_in = np.asarray(u, dtype=np.float64)[None, :].copy()
    negs = np.atleast_2d(np.asarray(v_negatives, dtype=np.float64))
    w_out = np.vstack([np.asarray(v_context, dtype=np.float64)[None, :], negs])
    centers = np.zeros(1, dtype=np.int64)
    contexts = np.zeros(1, dtype=np.int64)
    negatives = np.arange(1, negs.shape[0] + 1, dtype=np.int64)[None, None, :]
    _sgd(w_in, w_out, centers, contexts, negatives, lr, lr)
    return w_in[0], w_out[0], w_out[1:]
