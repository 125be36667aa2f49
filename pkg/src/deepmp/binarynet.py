"""BinaryNet baseline: SGD on continuous shadow weights with a straight-through estimator.

Forward: layer ``l`` computes ``z = sign(w) x / sqrt(N_l)``, hidden units
apply ``sign`` (ties to +1) and the last layer returns ``z`` as logits.  No
biases, no normalization.

Backward: the sign of the activations is differentiated as a hard tanh
(gradient 1 for ``|z| <= 1``), the sign of the weights as the identity
(zeroed where ``|w| > 1``, which clipping never leaves behind).  The loss is
binary cross-entropy on ``sigmoid(logit)``: one logit for two classes, one
per class against one-hot targets otherwise.
"""

import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import evalkit
from .trainer import ConfigError, EpochRecord, RunMetrics, layer_shapes, minibatches


@dataclass
class BinaryNetConfig:
    arch: tuple = (101, 101)
    lr: float = 10.0
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    loss: str = "bce"

    def __post_init__(self):
        self.arch = tuple(int(a) for a in self.arch)
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss not in ("bce", "softmax"):
            raise ConfigError(f"loss must be 'bce' or 'softmax', got {self.loss!r}")

    label = "binarynet"

    def to_dict(self):
        d = asdict(self)
        d["arch"] = list(self.arch)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _sign(x):
    return np.where(x >= 0, 1.0, -1.0)


def xavier_uniform(shape, rng):
    fan_out, fan_in = shape
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class BinaryNetState:
    def __init__(self, config, n_features, n_classes, w=None):
        self.config = config
        self.n_features = n_features
        self.n_classes = n_classes
        shapes = layer_shapes(n_features, config.arch, n_classes)
        if w is None:
            rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,)))
            w = [xavier_uniform(s, rng) for s in shapes]
        elif [a.shape for a in w] != shapes:
            raise ConfigError("weight shapes do not match the architecture")
        self.w = [np.clip(np.array(a, dtype=float), -1.0, 1.0) for a in w]
        self.rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(1,)))

    def weights(self):
        return [_sign(a) for a in self.w]

    def means(self):
        return [a.copy() for a in self.w]


def _forward(w, X, surrogate):
    """Return logits and the per-layer (input, preactivation) cache."""
    a = np.asarray(X, dtype=float)
    if a.ndim != 2 or a.shape[1] != w[0].shape[1]:
        raise ValueError(f"input of shape {a.shape} does not fit a first layer of shape {w[0].shape}")
    cache = []
    for l, wl in enumerate(w):
        wb = wl if surrogate else _sign(wl)
        z = a @ wb.T / np.sqrt(wl.shape[1])
        cache.append((a, z))
        if l < len(w) - 1:
            a = np.clip(z, -1.0, 1.0) if surrogate else _sign(z)
    return z, cache


def bn_forward(X, state):
    """Logits (n, n_out) of the binarized network."""
    return _forward(state.w, X, surrogate=False)[0]


def _targets(y, n_out):
    if n_out == 1:
        return ((np.asarray(y) + 1) // 2).astype(float)[:, None]
    t = np.zeros((len(y), n_out))
    t[np.arange(len(y)), y] = 1.0
    return t


def _loss_and_delta(z, y, loss):
    t = _targets(y, z.shape[1])
    n = z.shape[0]
    if loss == "softmax" and z.shape[1] > 1:
        zs = z - z.max(axis=1, keepdims=True)
        logp = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
        return -np.sum(t * logp) / n, (np.exp(logp) - t) / n
    # log(1 + e^z) - t z, summed over outputs, averaged over samples
    L = np.sum(np.logaddexp(0.0, z) - t * z) / n
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    return L, (p - t) / n


def loss_and_grads(w, X, y, loss="bce", surrogate=False):
    """Loss and weight gradients.

    With ``surrogate=False`` this is the straight-through gradient used for
    training.  With ``surrogate=True`` the network itself uses ``w`` and
    hard-tanh activations, so the gradients are exact derivatives of the
    returned loss (used for finite-difference checks).
    """
    z, cache = _forward(w, X, surrogate)
    L, delta = _loss_and_delta(z, y, loss)
    grads = [None] * len(w)
    for l in range(len(w) - 1, -1, -1):
        a, _ = cache[l]
        scale = 1.0 / np.sqrt(w[l].shape[1])
        g = delta.T @ a * scale
        g[np.abs(w[l]) > 1.0] = 0.0
        grads[l] = g
        if l > 0:
            wb = w[l] if surrogate else _sign(w[l])
            _, z_below = cache[l - 1]
            delta = (delta @ wb) * scale * (np.abs(z_below) <= 1.0)
    return L, grads


def bn_backward_step(X, y, state, lr=None):
    """One SGD step with straight-through gradients, followed by clipping to [-1, 1]."""
    lr = state.config.lr if lr is None else lr
    L, grads = loss_and_grads(state.w, X, y, state.config.loss)
    for wl, g in zip(state.w, grads):
        wl -= lr * g
        np.clip(wl, -1.0, 1.0, out=wl)
    return L


def train_binarynet(dataset, config, test=None, state=None, on_epoch=None):
    """SGD training with the same epoch schedule and metrics as the PasP trainer."""
    if state is None:
        state = BinaryNetState(config, dataset.n_features, dataset.n_classes)
    if dataset.n_features != state.n_features or dataset.n_classes != state.n_classes:
        raise ValueError("dataset does not match the network shape")
    cfg = state.config
    metrics = RunMetrics()
    nan = float("nan")
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        for idx in minibatches(len(dataset), cfg.batch_size, state.rng):
            bn_backward_step(dataset.inputs[idx], dataset.labels[idx], state)
        seconds = time.perf_counter() - t0
        W = state.weights()
        rep = evalkit.overlaps(state.w)
        rec = EpochRecord(
            epoch=epoch,
            algo=cfg.label,
            train_err=evalkit.pointwise_error(W, dataset),
            test_err=evalkit.pointwise_error(W, test) if test is not None else nan,
            bayes_train_err=nan,
            bayes_test_err=nan,
            q0=rep.q0,
            qab=rep.qab,
            seconds=seconds,
        )
        metrics.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec, state)
    metrics.weights = state.weights()
    metrics.means = state.means()
    metrics.state = state
    return metrics
