"""Posterior-as-Prior training loop.

Every mini-batch starts from the current prior fields ``theta``; the
messages are reset, ``tau_max`` forward/backward sweeps are run and the
prior is replaced by the tempered posterior::

    theta <- rho * (theta + H)

where ``H`` is the evidence field of the last backward sweep.
"""

import csv
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence, Union

import numpy as np

from . import evalkit
from .layers import ALGORITHMS, ArgmaxOutput, SignOutput, sweep
from .messages import Layer, reset_messages

CSV_FIELDS = [
    "epoch",
    "algo",
    "train_err",
    "test_err",
    "bayes_train_err",
    "bayes_test_err",
    "layer",
    "q0",
    "qab",
    "seconds",
]


class ConfigError(ValueError):
    """Invalid training configuration."""


Scalars = Union[float, Sequence[float]]


@dataclass
class PaspConfig:
    arch: tuple = (101, 101)
    algorithm: Union[str, Sequence[str]] = "bp"
    rho: Optional[Scalars] = None
    alpha: Scalars = 0.8
    epsilon: float = 1.0
    tau_max: int = 1
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    r: float = 0.0
    argmax_approach: int = 1
    damp_persist: bool = True
    bayes: bool = True

    def __post_init__(self):
        self.arch = tuple(int(a) for a in self.arch)
        if any(a <= 0 for a in self.arch):
            raise ConfigError(f"hidden widths must be positive, got {self.arch}")
        if self.r != 0:
            raise ConfigError("internal reinforcement r != 0 is unimplemented")
        if self.tau_max < 1:
            raise ConfigError(f"tau_max must be >= 1, got {self.tau_max}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.argmax_approach not in (1, 2):
            raise ConfigError("argmax_approach must be 1 or 2")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; choose from {ALGORITHMS}")
        for a in self.alphas:
            if not 0.0 <= a < 1.0:
                raise ConfigError(f"damping alpha must lie in [0, 1), got {a}")
        for r in self.rhos:
            if r < 0:
                raise ConfigError(f"rho must be >= 0, got {r}")

    @property
    def n_layers(self):
        return len(self.arch) + 1

    def _per_layer(self, name, value):
        if isinstance(value, (str, int, float)):
            return [value] * self.n_layers
        value = list(value)
        if len(value) != self.n_layers:
            raise ConfigError(
                f"{name} has {len(value)} entries, expected {self.n_layers} (one per weight layer)"
            )
        return value

    @property
    def algorithms(self):
        return [str(a).lower() for a in self._per_layer("algorithm", self.algorithm)]

    @property
    def rhos(self):
        if self.rho is None:
            return [1.0001] * (self.n_layers - 1) + [0.9]
        return [float(r) for r in self._per_layer("rho", self.rho)]

    @property
    def alphas(self):
        return [float(a) for a in self._per_layer("alpha", self.alpha)]

    @property
    def label(self):
        algos = self.algorithms
        return algos[0] if len(set(algos)) == 1 else "/".join(algos)

    def to_dict(self):
        d = asdict(self)
        d["arch"] = list(self.arch)
        for k in ("algorithm", "rho", "alpha"):
            if isinstance(d[k], tuple):
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def layer_shapes(n_features, arch, n_classes):
    sizes = [n_features, *arch, 1 if n_classes == 2 else n_classes]
    return [(sizes[l + 1], sizes[l]) for l in range(len(sizes) - 1)]


def init_priors(shapes, epsilon, seed):
    """Prior fields theta ~ epsilon * N(0, 1), one array per layer."""
    if epsilon < 0:
        raise ConfigError("epsilon must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    out = []
    for shape in shapes:
        z = rng.standard_normal(shape)
        out.append(np.zeros(shape) if epsilon == 0 else epsilon * z)
    return out


def sign_weights(m):
    # ties resolve to +1
    return np.where(m >= 0, 1.0, -1.0)


class PaspState:
    """Prior fields, message buffers and RNG of one training run."""

    def __init__(self, config, n_features, n_classes, thetas=None):
        self.config = config
        self.n_features = n_features
        self.n_classes = n_classes
        shapes = layer_shapes(n_features, config.arch, n_classes)
        if thetas is None:
            thetas = init_priors(shapes, config.epsilon, config.seed)
        elif [t.shape for t in thetas] != shapes:
            raise ConfigError("prior shapes do not match the architecture")
        self.layers = [
            Layer(algo, np.array(th, dtype=float), alpha)
            for algo, th, alpha in zip(config.algorithms, thetas, config.alphas)
        ]
        if n_classes == 2:
            self.output = SignOutput()
        else:
            self.output = ArgmaxOutput(n_classes, config.argmax_approach)
        self.rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(1,)))
        self.t = 0

    @property
    def thetas(self):
        return [layer.theta for layer in self.layers]

    def means(self):
        return [np.tanh(th) for th in self.thetas]

    def weights(self):
        return [sign_weights(th) for th in self.thetas]


def pasp_step(state, X, y, t=None):
    """One PasP update on the mini-batch ``X`` (batch, n_features) with labels ``y``."""
    cfg = state.config
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("mini-batch must be a non-empty (batch, n_features) array")
    if X.shape[1] != state.n_features:
        raise ValueError(f"batch has {X.shape[1]} features, network expects {state.n_features}")
    y = state.output.check_labels(y)
    batch = X.shape[0]
    reset_messages(state.layers, batch, keep_damping=cfg.damp_persist)
    state.output.begin_step(batch, state.rng)
    Xt = np.ascontiguousarray(X.T)
    for tau in range(cfg.tau_max):
        sweep(state.layers, Xt, y, state.output, tau, need_cavity=tau < cfg.tau_max - 1)
    for layer, rho in zip(state.layers, cfg.rhos):
        apply_pasp(layer, layer.w.H, rho)
    state.t = state.t + 1 if t is None else t + 1
    return {"t": state.t, "batch": batch, "mean_abs_H": [float(np.mean(np.abs(l.w.H))) for l in state.layers]}


def apply_pasp(layer, H, rho):
    """theta <- rho * (theta + H), in place."""
    layer.theta += H
    layer.theta *= rho


@dataclass
class EpochRecord:
    epoch: int
    algo: str
    train_err: float
    test_err: float
    bayes_train_err: float
    bayes_test_err: float
    q0: list
    qab: list
    seconds: float

    def rows(self):
        for l, (a, b) in enumerate(zip(self.q0, self.qab)):
            yield {
                "epoch": self.epoch,
                "algo": self.algo,
                "train_err": self.train_err,
                "test_err": self.test_err,
                "bayes_train_err": self.bayes_train_err,
                "bayes_test_err": self.bayes_test_err,
                "layer": l,
                "q0": a,
                "qab": b,
                "seconds": self.seconds,
            }


@dataclass
class RunMetrics:
    records: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    means: list = field(default_factory=list)

    def rows(self):
        for rec in self.records:
            yield from rec.rows()

    @property
    def final(self):
        return self.records[-1]

    def to_csv(self, path_or_file):
        own = isinstance(path_or_file, str) or hasattr(path_or_file, "__fspath__")
        f = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.DictWriter(f, fieldnames=CSV_FIELDS)
            w.writeheader()
            for row in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        finally:
            if own:
                f.close()


def minibatches(n, batch_size, rng):
    """Seeded shuffle split into consecutive batches; the short tail is kept."""
    perm = rng.permutation(n)
    return [perm[s : s + batch_size] for s in range(0, n, batch_size)]


def evaluate(algo, epoch, weights, means, train, test, bayes, seconds):
    nan = float("nan")
    rep = evalkit.overlaps(means)
    return EpochRecord(
        epoch=epoch,
        algo=algo,
        train_err=evalkit.pointwise_error(weights, train),
        test_err=evalkit.pointwise_error(weights, test) if test is not None else nan,
        bayes_train_err=evalkit.bayesian_error(means, train) if bayes else nan,
        bayes_test_err=evalkit.bayesian_error(means, test) if bayes and test is not None else nan,
        q0=rep.q0,
        qab=rep.qab,
        seconds=seconds,
    )


def _check_dataset(d, n_features=None):
    if not np.all(np.isfinite(d.inputs)):
        raise ValueError(f"dataset {d.name!r} has non-finite inputs")
    if n_features is not None and d.n_features != n_features:
        raise ValueError(f"dataset {d.name!r} has {d.n_features} features, expected {n_features}")


def train(dataset, config, test=None, state=None, on_epoch=None, on_step=None):
    """Run ``config.epochs`` PasP epochs; returns per-epoch metrics.

    Passing ``state`` continues from an existing run (its priors carry over).
    ``on_epoch(record, state)`` is called after each evaluated epoch.
    """
    if state is None:
        state = PaspState(config, dataset.n_features, dataset.n_classes)
    _check_dataset(dataset, state.n_features)
    if test is not None:
        _check_dataset(test, state.n_features)
    if dataset.n_classes != state.n_classes:
        raise ValueError("dataset class count does not match the network output")
    cfg = state.config
    metrics = RunMetrics()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        for idx in minibatches(len(dataset), cfg.batch_size, state.rng):
            info = pasp_step(state, dataset.inputs[idx], dataset.labels[idx])
            if on_step is not None:
                on_step(info)
        seconds = time.perf_counter() - t0
        rec = evaluate(cfg.label, epoch, state.weights(), state.means(), dataset, test, cfg.bayes, seconds)
        metrics.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec, state)
    metrics.weights = state.weights()
    metrics.means = state.means()
    metrics.state = state
    return metrics


@dataclass
class ContinualResult:
    runs: list
    # accuracy[a][b]: test accuracy on task b after training on task a
    accuracy: np.ndarray
    # (task, epoch, accuracy on the first task)
    first_task_curve: list

    def rows(self):
        n = self.accuracy.shape[0]
        for a in range(n):
            for b in range(n):
                yield {"after_task": a + 1, "task": b + 1, "test_acc": float(self.accuracy[a, b])}

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["after_task", "task", "test_acc"])
            w.writeheader()
            for row in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def train_continual(tasks, config, tests, state=None, trainer=None):
    """Train on ``tasks`` in sequence without resetting the priors.

    ``tests[j]`` is the test split of task ``j``.  ``trainer`` defaults to
    :func:`train` and may be any function with the same signature whose
    returned metrics carry ``.state`` and ``.weights``.
    """
    if len(tasks) != len(tests):
        raise ValueError("need one test split per task")
    if len({d.n_features for d in tasks}) != 1:
        raise ValueError("tasks must share the input dimension")
    trainer = trainer or train
    n = len(tasks)
    acc = np.full((n, n), np.nan)
    curve = []
    runs = []
    for a, (d, dt) in enumerate(zip(tasks, tests)):

        def track(rec, st, a=a):
            w = st.weights()
            curve.append((a + 1, rec.epoch, 1.0 - evalkit.pointwise_error(w, tests[0])))

        run = trainer(d, config, test=dt, state=state, on_epoch=track)
        state = run.state
        runs.append(run)
        for b in range(n):
            acc[a, b] = 1.0 - evalkit.pointwise_error(run.weights, tests[b])
    return ContinualResult(runs, acc, curve)
