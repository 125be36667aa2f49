"""Evaluation of trained binary networks.

* :func:`pointwise_error` -- error of a single binary configuration.
* :func:`bayesian_error` -- majority vote implied by the weight marginals,
  computed with one Gaussian forward sweep (means and variances, no sampling).
* :func:`local_energy` -- mean training-error increase when a random fraction
  ``p`` of the weights is flipped.
* :func:`overlaps` -- per-layer polarization and mean inter-unit overlap.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .special import V_MIN, log_H

_CHUNK = 8192


def _binary_sign(z):
    # ties resolve to +1
    return np.where(z >= 0, 1.0, -1.0)


def _xy(data):
    if isinstance(data, tuple):
        return data
    return data.inputs, data.labels


def _predict(z_out):
    if z_out.shape[1] == 1:
        return _binary_sign(z_out[:, 0]).astype(int)
    return np.argmax(z_out, axis=1)


def forward_binary(weights, X):
    """Deterministic forward pass; returns the last-layer preactivations (n, n_out)."""
    a = X
    for l, W in enumerate(weights):
        z = a @ W.T
        a = _binary_sign(z) if l < len(weights) - 1 else z
    return a


def predict(weights, X):
    out = []
    for s in range(0, X.shape[0], _CHUNK):
        out.append(_predict(forward_binary(weights, X[s : s + _CHUNK])))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def pointwise_error(weights, data):
    """Misclassification fraction of the binary configuration ``weights``.

    ``data`` is a Dataset or an ``(inputs, labels)`` pair with samples in rows.
    """
    X, y = _xy(data)
    return float(np.mean(predict(weights, X) != y))


def forward_gaussian(means, X):
    """Mean and variance of the last-layer preactivations under the marginals."""
    if not means:
        raise ValueError("need at least one layer of means")
    x, d = X, np.zeros_like(X)
    for l, m in enumerate(means):
        s = 1.0 - m * m
        omega = x @ m.T
        V = d @ (m * m).T + (x * x) @ s.T + d @ s.T
        if l == len(means) - 1:
            return omega, V
        u = omega / np.sqrt(np.maximum(V, V_MIN))
        x = np.tanh(0.5 * (log_H(-u) - log_H(u)))
        # zero variance: the unit is deterministic and ties resolve to +1
        x = np.where(V > 0, x, _binary_sign(omega))
        d = 1.0 - x * x


def bayesian_error(means, data):
    """Error of the prediction read off the output means of one Gaussian sweep."""
    X, y = _xy(data)
    preds = []
    for s in range(0, X.shape[0], _CHUNK):
        omega, _ = forward_gaussian(means, X[s : s + _CHUNK])
        preds.append(_predict(omega))
    return float(np.mean(np.concatenate(preds) != y))


@dataclass
class LocalEnergyProfile:
    p_grid: np.ndarray
    delta_e: np.ndarray
    stderr: np.ndarray
    n_samples: int
    base_error: float = 0.0

    def rows(self):
        for p, e, s in zip(self.p_grid, self.delta_e, self.stderr):
            yield {"p": float(p), "delta_e": float(e), "stderr": float(s), "n_masks": self.n_samples}

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["p", "delta_e", "stderr", "n_masks"])
            w.writeheader()
            for row in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def local_energy(weights, data, p_grid=None, n_masks=20, seed=0):
    """Local energy profile delta E(w, p) = E[E(w * z)] - E(w) over flip masks z."""
    if p_grid is None:
        p_grid = np.linspace(0.0, 0.5, 11)
    p_grid = np.asarray(p_grid, dtype=float)
    if np.any(p_grid < 0) or np.any(p_grid > 1):
        raise ValueError("flip fractions must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    base = pointwise_error(weights, data)
    mean, err = [], []
    for p in p_grid:
        errs = np.empty(n_masks)
        for j in range(n_masks):
            flipped = [np.where(rng.random(W.shape) < p, -W, W) for W in weights]
            errs[j] = pointwise_error(flipped, data)
        diff = errs - base
        mean.append(diff.mean())
        err.append(diff.std(ddof=1) / np.sqrt(n_masks) if n_masks > 1 else 0.0)
    return LocalEnergyProfile(p_grid, np.array(mean), np.array(err), n_masks, base)


@dataclass
class OverlapReport:
    q0: list = field(default_factory=list)
    qab: list = field(default_factory=list)

    def rows(self):
        for l, (a, b) in enumerate(zip(self.q0, self.qab)):
            yield {"layer": l, "q0": a, "qab": b}

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["layer", "q0", "qab"])
            w.writeheader()
            for row in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def unit_overlaps(w):
    """``(<q0>, <q_ab>)`` for one layer with units along the rows of ``w``."""
    w = np.asarray(w, dtype=float)
    n_out, n = w.shape
    q = (w @ w.T) / n
    q0 = float(np.mean(np.diag(q)))
    if n_out < 2:
        return q0, float("nan")
    iu = np.triu_indices(n_out, k=1)
    return q0, float(np.mean(q[iu]))


def overlaps(weights):
    """Polarization and pairwise overlaps for every layer (means or binary weights)."""
    report = OverlapReport()
    for w in weights:
        a, b = unit_overlaps(w)
        report.q0.append(a)
        report.qab.append(b)
    return report
