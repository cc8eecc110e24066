"""Nearest-neighbor and linear SVM classification over C2 vectors."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_MAGIC = b"HMXM"
_VERSION = 1
_KIND_NN = 0
_KIND_SVM = 1


@dataclass
class LabeledFeatures:
    """Feature matrix (N, P) with integer class labels (N,)."""

    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.vectors.shape[0]} vectors but {self.labels.shape[0]} labels")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class NNModel:
    """Exemplar memory for 1-nearest-neighbor prediction."""

    vectors: np.ndarray
    labels: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.array([predict_nn(self, row) for row in x], dtype=np.int64)


def train_nn(data: LabeledFeatures) -> NNModel:
    """Store the exemplars verbatim (duplicates preserved)."""
    if len(data) == 0:
        raise ValueError("empty training data")
    return NNModel(data.vectors.copy(), data.labels.copy())


def predict_nn(model: NNModel, v: np.ndarray) -> int:
    """Label of the Euclidean-nearest exemplar; ties go to the lowest index."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != model.vectors.shape[1]:
        raise ValueError(
            f"query length {v.shape} does not match exemplars "
            f"(P={model.vectors.shape[1]})")
    d2 = ((model.vectors - v) ** 2).sum(axis=1)
    return int(model.labels[int(np.argmin(d2))])


@dataclass
class SVMModel:
    """One-vs-rest linear classifiers over standardized features."""

    classes: np.ndarray          # (C,) sorted label ids
    weights: np.ndarray          # (C, P)
    biases: np.ndarray           # (C,)
    mean: np.ndarray             # (P,) feature standardization
    scale: np.ndarray            # (P,)
    reg_c: float = 1.0
    epochs: int = 50
    seed: int = 0
    objective_history: dict = field(default_factory=dict, repr=False)

    def scores(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        xs = (x - self.mean) / self.scale
        return xs @ self.weights.T + self.biases

    def predict(self, x: np.ndarray) -> np.ndarray:
        scores = self.scores(x)
        return self.classes[np.argmax(scores, axis=1)]


def _hinge_objective(w_aug, xs_aug, y, lam):
    margins = y * (xs_aug @ w_aug)
    hinge = np.maximum(0.0, 1.0 - margins).mean()
    return 0.5 * lam * float(w_aug @ w_aug) + float(hinge)


def train_linear_svm(data: LabeledFeatures, reg_c: float = 1.0,
                     epochs: int = 50, seed: int = 0) -> SVMModel:
    """Seeded stochastic subgradient descent on the L2-regularized hinge loss.

    Features are standardized with the training mean and deviation
    (stored in the model); the bias is an augmented constant feature,
    regularized with the rest.  The returned weights are the averaged
    iterates, and the objective of the running average is recorded per
    class at every epoch in `objective_history`.
    """
    if reg_c <= 0:
        raise ValueError(f"reg_c must be > 0, got {reg_c}")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    classes = np.unique(data.labels)
    if classes.size < 2:
        raise ValueError("need at least 2 classes to train")
    x = data.vectors
    n, p = x.shape
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    xs = np.hstack([(x - mean) / scale, np.ones((n, 1))])

    lam = 1.0 / (reg_c * n)
    y = np.where(data.labels[None, :] == classes[:, None], 1.0, -1.0)  # (C, N)
    w = np.zeros((classes.size, p + 1))
    w_sum = np.zeros_like(w)
    history = {int(c): [] for c in classes}

    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            margins = y[:, i] * (w @ xs[i])
            w *= 1.0 - eta * lam
            violated = margins < 1.0
            if violated.any():
                w[violated] += (eta * y[violated, i])[:, None] * xs[i]
            w_sum += w
        w_avg = w_sum / t
        for ci, c in enumerate(classes):
            history[int(c)].append(_hinge_objective(w_avg[ci], xs, y[ci], lam))

    w_avg = w_sum / t
    return SVMModel(
        classes=classes,
        weights=w_avg[:, :p].copy(),
        biases=w_avg[:, p].copy(),
        mean=mean,
        scale=scale,
        reg_c=reg_c,
        epochs=epochs,
        seed=seed,
        objective_history=history,
    )


def predict_svm(model: SVMModel, v: np.ndarray) -> int:
    """Argmax class score on the standardized vector; ties to lowest class id."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != model.weights.shape[1]:
        raise ValueError(
            f"query length {v.shape} does not match model (P={model.weights.shape[1]})")
    scores = model.scores(v)[0]
    return int(model.classes[int(np.argmax(scores))])


@dataclass
class EvalReport:
    accuracy: float
    per_class: dict
    confusion: np.ndarray    # rows true, cols predicted
    labels: list


def evaluate(model, test: LabeledFeatures) -> EvalReport:
    """Overall and per-class accuracy plus a confusion matrix."""
    if len(test) == 0:
        raise ValueError("empty test data")
    predictions = model.predict(test.vectors)
    labels = sorted(set(test.labels.tolist()) | set(predictions.tolist()))
    index = {c: i for i, c in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for truth, pred in zip(test.labels, predictions):
        confusion[index[int(truth)], index[int(pred)]] += 1
    correct = int(np.sum(predictions == test.labels))
    per_class = {}
    for c in sorted(set(test.labels.tolist())):
        mask = test.labels == c
        per_class[int(c)] = float(np.mean(predictions[mask] == c))
    return EvalReport(
        accuracy=correct / len(test),
        per_class=per_class,
        confusion=confusion,
        labels=labels,
    )


def save_model(model, path) -> None:
    """Binary model format: magic "HMXM", version u32, kind u8, payload.

    NN payload: count u32, dim u32, labels i64, vectors f64 (row-major).
    SVM payload: classes u32, dim u32, reg_c f64, epochs u32, seed i64,
    class ids i64, weights f64, biases f64, mean f64, scale f64.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        if isinstance(model, NNModel):
            fh.write(struct.pack("<B", _KIND_NN))
            count, dim = model.vectors.shape
            fh.write(struct.pack("<II", count, dim))
            fh.write(model.labels.astype("<i8").tobytes())
            fh.write(model.vectors.astype("<f8").tobytes())
        elif isinstance(model, SVMModel):
            fh.write(struct.pack("<B", _KIND_SVM))
            nc, dim = model.weights.shape
            fh.write(struct.pack("<IIdIq", nc, dim, model.reg_c,
                                 model.epochs, model.seed))
            fh.write(model.classes.astype("<i8").tobytes())
            fh.write(model.weights.astype("<f8").tobytes())
            fh.write(model.biases.astype("<f8").tobytes())
            fh.write(model.mean.astype("<f8").tobytes())
            fh.write(model.scale.astype("<f8").tobytes())
        else:
            raise TypeError(f"cannot serialize model of type {type(model).__name__}")


def load_model(path):
    """Read a model written by save_model."""
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    (kind,) = struct.unpack_from("<B", data, 8)
    offset = 9
    if kind == _KIND_NN:
        count, dim = struct.unpack_from("<II", data, offset)
        offset += 8
        labels = np.frombuffer(data, dtype="<i8", count=count, offset=offset).copy()
        offset += 8 * count
        vectors = np.frombuffer(data, dtype="<f8", count=count * dim,
                                offset=offset).reshape(count, dim).copy()
        return NNModel(vectors, labels)
    if kind == _KIND_SVM:
        nc, dim, reg_c, epochs, seed = struct.unpack_from("<IIdIq", data, offset)
        offset += struct.calcsize("<IIdIq")

        def take(count):
            nonlocal offset
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).copy()
            offset += 8 * count
            return arr

        classes = np.frombuffer(data, dtype="<i8", count=nc, offset=offset).copy()
        offset += 8 * nc
        weights = take(nc * dim).reshape(nc, dim)
        biases = take(nc)
        mean = take(dim)
        scale = take(dim)
        return SVMModel(classes, weights, biases, mean, scale,
                        reg_c=reg_c, epochs=epochs, seed=seed)
    raise ValueError(f"{path}: unknown model kind {kind}")
