"""Training: loss, SGD with momentum, frame-skip augmentation, gradient checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import Dataset
from .filterbank import FeatureSequence
from .model import LstmModel, MlpHead, ModelSpec, OneVsAll, StaticModel, build_model

PROB_FLOOR = 1e-12
LSTM_CLIP_NORM = 5.0


@dataclass
class TrainConfig:
    iterations: int = 10000
    batch_size: int = 100
    momentum: float = 0.9
    learning_rate: float = 0.01
    seed: int = 0
    max_skip: int = 5
    one_vs_all: bool = False
    eval_every: int = 500

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0 or self.max_skip < 0:
            raise ValueError("iterations and max_skip must be non-negative")


@dataclass
class HistoryRow:
    iteration: int
    batch_loss: float
    eval_accuracy: Optional[float] = None


def cross_entropy(probs, label: int):
    """Return ``(loss, dlogits)`` for softmax probabilities and a class index."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[0]:
        raise ValueError(f"label {label} out of range for {probs.shape[0]} classes")
    loss = -math.log(max(probs[label], PROB_FLOOR))
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    return loss, dlogits


def sgd_momentum_step(params, velocity, grads, lr: float, momentum: float):
    """In place: ``v <- momentum * v - lr * g``; ``p <- p + v``."""
    for name, p in params.items():
        g = grads[name]
        v = velocity[name]
        if g.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"shape mismatch for {name!r}: param {p.shape}, grad {g.shape}, "
                             f"velocity {v.shape}")
        v *= momentum
        v -= lr * g
        p += v
    return params, velocity


def augment_skip(x: FeatureSequence, rng, max_skip: int = 5) -> FeatureSequence:
    """Drop ``k ~ U{0..min(max_skip, T-1)}`` leading frames."""
    if max_skip <= 0 or x.T < 2:
        return x
    k = int(rng.integers(0, min(max_skip, x.T - 1) + 1))
    if k == 0:
        return x
    return FeatureSequence(x.data[k:], label=x.label, id=x.id)


def sample_loss(model, seq, label=None):
    probs, cache = model.forward(seq)
    return cross_entropy(probs, seq.label if label is None else label), cache


def batch_gradient(model, batch, labels=None):
    """Mean loss and mean gradient over ``batch``, reduced in index order."""
    params = model.params()
    total = {name: np.zeros_like(p) for name, p in params.items()}
    loss_sum = 0.0
    for n, seq in enumerate(batch):
        label = seq.label if labels is None else labels[n]
        probs, cache = model.forward(seq)
        loss, dlogits = cross_entropy(probs, label)
        grads = model.backward(cache, dlogits)
        loss_sum += loss
        for name in total:
            total[name] += grads[name]
    scale = 1.0 / len(batch)
    for g in total.values():
        g *= scale
    return loss_sum * scale, total


def clip_global_norm(grads, max_norm: float):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm
    return norm


def evaluate(model, seqs, labels=None):
    """Accuracy and predictions of ``model`` on ``seqs``."""
    if not seqs:
        raise ValueError("cannot evaluate on an empty split")
    preds = np.array([model.predict(s) for s in seqs])
    truth = np.array([s.label for s in seqs] if labels is None else labels)
    return float(np.mean(preds == truth)), preds


def confusion_matrix(truth, preds, classes: int) -> np.ndarray:
    cm = np.zeros((classes, classes), dtype=np.int64)
    for t, p in zip(truth, preds):
        cm[t, p] += 1
    return cm


def _check_dataset(dataset: Dataset):
    if not dataset.train:
        raise ValueError("training split is empty")
    dims = {s.D for s in dataset.train + list(dataset.test)}
    if len(dims) != 1:
        raise ValueError(f"inconsistent feature dims {sorted(dims)}")


def train_model(model, train, config: TrainConfig, rng, labels=None, eval_set=None,
                eval_labels=None, log: Optional[Callable] = None):
    """Run SGD on an existing model; returns the history list."""
    params = model.params()
    velocity = {name: np.zeros_like(p) for name, p in params.items()}
    clip = isinstance(model, LstmModel)
    history = []
    n = len(train)
    size = min(config.batch_size, n)
    for it in range(1, config.iterations + 1):
        idx = np.sort(rng.choice(n, size=size, replace=False))
        batch = [augment_skip(train[i], rng, config.max_skip) for i in idx]
        batch_labels = None if labels is None else [labels[i] for i in idx]
        loss, grads = batch_gradient(model, batch, batch_labels)
        if clip:
            clip_global_norm(grads, LSTM_CLIP_NORM)
        sgd_momentum_step(params, velocity, grads, config.learning_rate, config.momentum)
        row = HistoryRow(it, loss)
        if config.eval_every and (it % config.eval_every == 0 or it == config.iterations):
            seqs, lab = (eval_set, eval_labels) if eval_set else (train, labels)
            row.eval_accuracy = evaluate(model, seqs, lab)[0]
        history.append(row)
        if log is not None:
            log(row)
    return history


def fit(spec, dataset: Dataset, config: TrainConfig, eval_set=None, log=None):
    """Build a fresh model of ``spec`` and train it. Deterministic in ``config.seed``.

    Returns ``(model, history)``. Periodic accuracy is measured on
    ``eval_set`` when given, else on the training split.
    """
    if isinstance(spec, str):
        spec = ModelSpec(kind=spec)
    _check_dataset(dataset)
    rng = np.random.default_rng(config.seed)
    model = build_model(spec, dataset.dim, dataset.classes, rng)
    history = train_model(model, dataset.train, config, rng, eval_set=eval_set, log=log)
    return model, history


def fit_one_vs_all(spec, dataset: Dataset, config: TrainConfig, log=None):
    """Train one binary model per class (positives = that class).

    Every binary model is built and trained from ``config.seed``. Returns
    ``(ensemble, histories)``.
    """
    if isinstance(spec, str):
        spec = ModelSpec(kind=spec)
    _check_dataset(dataset)
    if dataset.classes < 2:
        raise ValueError("one-vs-all needs at least 2 classes")
    present = {s.label for s in dataset.train}
    missing = [c for c in range(dataset.classes) if c not in present]
    if missing:
        raise ValueError(f"classes without positive training examples: {missing}")
    models, histories = [], []
    for c in range(dataset.classes):
        labels = [int(s.label == c) for s in dataset.train]
        rng = np.random.default_rng(config.seed)
        model = build_model(spec, dataset.dim, 2, rng)
        hist = train_model(model, dataset.train, config, rng, labels=labels,
                           eval_set=None, log=log)
        models.append(model)
        histories.append(hist)
    return OneVsAll(models), histories


# -- gradient checking -------------------------------------------------------

GROUPS = {
    "filters": "filters",
    "W1": "head", "b1": "head", "W2": "head", "b2": "head",
    "Wx": "lstm", "Wh": "lstm", "bl": "lstm",
    "Wp": "head_map", "bp": "head_map",
    "x": "input",
}


@dataclass
class GradCheckReport:
    kind: str
    tol: float
    errors: dict = field(default_factory=dict)  # group -> max relative error

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    def failing_groups(self):
        return [g for g, e in self.errors.items() if e > self.tol]

    def lines(self):
        out = [f"{g}\t{e:.3e}\t{'ok' if e <= self.tol else 'FAIL'}" for g, e in self.errors.items()]
        out.append(f"{self.kind}: {'PASS' if self.passed else 'FAIL'} (tol {self.tol:g})")
        return out


def gradcheck_model(kind: str, dims: Optional[dict] = None, seed: int = 0):
    """Seeded tiny model and input for a gradient check.

    Filter placements are drawn so every tap has a width comparable to T;
    this keeps weights away from underflow where central differences lose
    all precision.
    """
    d = {"T": 9, "D": 3, "M": 2, "N": 2, "H": 5, "C": 3, "lstm_hidden": 4, "S": 2,
         "level": 2}
    if kind == "lstm":
        d.update(T=8, D=2, M=1, N=3, C=2)
    d.update(dims or {})
    rng = np.random.default_rng(seed)
    T, D, M, N, H, C = d["T"], d["D"], d["M"], d["N"], d["H"], d["C"]
    if kind == "static":
        filters = np.column_stack([
            rng.uniform(-0.5, 0.5, M),
            rng.uniform(-1.0, 0.0, M),
            2.0 * math.log(T / 2.0) + rng.uniform(-0.5, 0.5, M),
        ])
        model = StaticModel(filters, N, MlpHead.init(M * N * D, H, C, rng))
    elif kind == "lstm":
        model = LstmModel.init(M, N, D, d["lstm_hidden"], H, C, d["S"], rng)
        model.bp[:] = np.tile([0.0, -0.5, 2.0 * math.log(T / 2.0)], M) + rng.uniform(-0.3, 0.3, 3 * M)
        model.Wp[:] = rng.normal(0.0, 0.3, model.Wp.shape)
        model.bl[:] += rng.normal(0.0, 0.1, model.bl.shape)
    else:
        model = build_model(ModelSpec(kind=kind, taps=N, hidden=H, pyramid_level=d["level"]),
                            D, C, rng)
    # non-zero hidden biases keep relu pre-activations away from the kink
    model.head.b1[:] = rng.uniform(0.1, 0.5, H)
    x = FeatureSequence(rng.normal(size=(T, D)), label=int(rng.integers(C)))
    return model, x


def grad_check(kind: str, dims: Optional[dict] = None, seed: int = 0, h: float = 1e-5,
               tol: float = 1e-4, tamper: Optional[Callable] = None) -> GradCheckReport:
    """Compare analytic gradients with central differences on every scalar.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``; the report holds the
    max per parameter group. ``tamper`` may rewrite the analytic bundle
    (used to confirm that corrupted gradients are caught).
    """
    model, x = gradcheck_model(kind, dims, seed)

    def loss_of(seq):
        probs, _ = model.forward(seq)
        return cross_entropy(probs, x.label)[0]

    probs, cache = model.forward(x)
    _, dlogits = cross_entropy(probs, x.label)
    analytic = model.backward(cache, dlogits)
    if tamper is not None:
        analytic = tamper(analytic) or analytic

    report = GradCheckReport(kind, tol)
    targets = dict(model.params())
    data = np.array(x.data)
    for name, arr in targets.items():
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            fp = loss_of(x)
            arr[idx] = old - h
            fm = loss_of(x)
            arr[idx] = old
            numeric[idx] = (fp - fm) / (2.0 * h)
        _record(report, GROUPS[name], analytic[name], numeric)
    numeric = np.zeros_like(data)
    for idx in np.ndindex(data.shape):
        old = data[idx]
        data[idx] = old + h
        fp = loss_of(data)
        data[idx] = old - h
        fm = loss_of(data)
        data[idx] = old
        numeric[idx] = (fp - fm) / (2.0 * h)
    _record(report, "input", analytic["x"], numeric)
    return report


def relative_error(a, n) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def _record(report, group, analytic, numeric):
    err = float(relative_error(analytic, numeric).max()) if np.size(numeric) else 0.0
    report.errors[group] = max(report.errors.get(group, 0.0), err)
