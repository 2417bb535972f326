"""
Engagement Detector - Classification
Linear one-vs-rest SVM and sigmoid/softmax MLP trained from scratch, stratified
k-fold planning, pooled cross-validation and per-class precision/recall.
"""

from __future__ import annotations

import math
import logging
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit, softmax
from sklearn.cluster import KMeans
from sklearn.metrics import confusion_matrix
from sklearn.model_selection import StratifiedKFold

from . import config

logger = logging.getLogger(__name__)

FOLD_SCHEMES = ("truncate", "balanced")


# --- Configuration ---

@dataclass(frozen=True)
class SvmConfig:
    lam: float = config.SVM_LAMBDA
    epochs: int = config.SVM_EPOCHS
    batch_size: int = config.SVM_BATCH_SIZE
    class_weight: bool = False


@dataclass(frozen=True)
class MlpConfig:
    hidden: Optional[int] = None
    learning_rate: float = config.MLP_LEARNING_RATE
    momentum: float = config.MLP_MOMENTUM
    epochs: int = config.MLP_EPOCHS
    batch_size: int = config.MLP_BATCH_SIZE


# --- Standardization ---

@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        if X.shape[0] == 0:
            raise ValueError("cannot fit a standardizer on an empty training set")
        mean = X.mean(axis=0)
        std = np.maximum(X.std(axis=0), config.STANDARDIZER_SIGMA_FLOOR)
        # constant columns map to exactly 0
        constant = np.ptp(X, axis=0) == 0
        mean = np.where(constant, X[0], mean)
        std = np.where(constant, 1.0, std)
        return cls(mean=mean, std=std)

    def apply(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(mean=np.asarray(data["mean"], dtype=float), std=np.asarray(data["std"], dtype=float))


def fit_standardizer(X):
    return Standardizer.fit(X)


def _check_classes(y):
    classes = np.unique(np.asarray(y))
    if classes.size < 2:
        raise ValueError(f"training needs at least 2 classes, got {classes.tolist()}")
    return classes


def _batches(rng, n, batch_size):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# --- SVM ---

@dataclass(eq=False)
class SvmModel:
    """One-vs-rest linear SVM; row c of `weights` scores class `classes[c]`."""

    weights: np.ndarray
    bias: np.ndarray
    classes: np.ndarray
    cfg: SvmConfig = field(default_factory=SvmConfig)
    seed: int = config.DEFAULT_SEED

    kind = "svm"

    def decision_function(self, X):
        return np.asarray(X, dtype=float) @ self.weights.T + self.bias

    def predict(self, X):
        return self.classes[np.argmax(self.decision_function(X), axis=1)]

    def parameters(self):
        return {"weights": self.weights.tolist(), "bias": self.bias.tolist()}


def train_svm(X, y, cfg=None, seed=config.DEFAULT_SEED):
    """Mini-batch Pegasos on lam/2 |w|^2 + mean hinge loss, one model per class.

    The bias is learned as the weight of a constant augmented feature.
    """
    cfg = cfg or SvmConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    classes = _check_classes(y)
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    rng = np.random.default_rng(seed)
    radius = 1.0 / math.sqrt(cfg.lam)

    W = np.zeros((classes.size, d + 1))
    for ci, c in enumerate(classes):
        target = np.where(y == c, 1.0, -1.0)
        if cfg.class_weight:
            n_pos = float(np.sum(target > 0))
            sample_w = np.where(target > 0, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))
        else:
            sample_w = np.ones(n)
        w = np.zeros(d + 1)
        step = 0
        for _ in range(cfg.epochs):
            for batch in _batches(rng, n, cfg.batch_size):
                step += 1
                eta = 1.0 / (cfg.lam * step)
                margins = target[batch] * (Xa[batch] @ w)
                active = batch[margins < 1.0]
                grad = cfg.lam * w
                if active.size:
                    grad = grad - (sample_w[active, None] * target[active, None] * Xa[active]).sum(axis=0) / batch.size
                w = w - eta * grad
                norm = float(np.linalg.norm(w))
                if norm > radius:
                    w *= radius / norm
        W[ci] = w
        logger.debug(f"SVM class {c}: {step} steps, |w|={np.linalg.norm(w):.4f}")
    return SvmModel(weights=W[:, :d], bias=W[:, d], classes=classes, cfg=cfg, seed=seed)


# --- MLP ---

@dataclass(eq=False)
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    classes: np.ndarray
    cfg: MlpConfig = field(default_factory=MlpConfig)
    seed: int = config.DEFAULT_SEED

    kind = "mlp"

    @property
    def hidden(self):
        return self.W1.shape[1]

    def predict_proba(self, X):
        h = expit(np.asarray(X, dtype=float) @ self.W1 + self.b1)
        return softmax(h @ self.W2 + self.b2, axis=1)

    def decision_function(self, X):
        return self.predict_proba(X)

    def predict(self, X):
        return self.classes[np.argmax(self.predict_proba(X), axis=1)]

    def parameters(self):
        return {"W1": self.W1.tolist(), "b1": self.b1.tolist(),
                "W2": self.W2.tolist(), "b2": self.b2.tolist()}


def loss_and_gradients(params, X, Y):
    """Mean cross-entropy and its gradients.

    Args:
        params: dict with W1, b1, W2, b2
        X: (n, d) inputs
        Y: (n, C) one-hot targets
    """
    W1, b1, W2, b2 = params["W1"], params["b1"], params["W2"], params["b2"]
    n = X.shape[0]
    h = expit(X @ W1 + b1)
    p = softmax(h @ W2 + b2, axis=1)
    loss = -float(np.sum(Y * np.log(np.clip(p, 1e-300, None)))) / n
    dz2 = (p - Y) / n
    dh = dz2 @ W2.T
    dz1 = dh * h * (1.0 - h)
    grads = {"W1": X.T @ dz1, "b1": dz1.sum(axis=0), "W2": h.T @ dz2, "b2": dz2.sum(axis=0)}
    return loss, grads


def default_hidden(n_features, n_classes):
    return int(math.ceil((n_features + n_classes) / 2.0))


def train_mlp(X, y, cfg=None, seed=config.DEFAULT_SEED):
    """Backpropagation with momentum on cross-entropy."""
    cfg = cfg or MlpConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    classes = _check_classes(y)
    n, d = X.shape
    C = classes.size
    H = cfg.hidden or default_hidden(d, C)
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    params = {"W1": glorot(d, H), "b1": np.zeros(H), "W2": glorot(H, C), "b2": np.zeros(C)}
    velocity = {name: np.zeros_like(value) for name, value in params.items()}
    Y = (y[:, None] == classes[None, :]).astype(float)

    loss = float("nan")
    for _ in range(cfg.epochs):
        for batch in _batches(rng, n, cfg.batch_size):
            loss, grads = loss_and_gradients(params, X[batch], Y[batch])
            for name in params:
                velocity[name] = cfg.momentum * velocity[name] - cfg.learning_rate * grads[name]
                params[name] += velocity[name]
    logger.debug(f"MLP trained: H={H}, {cfg.epochs} epochs, last batch loss {loss:.4f}")
    return MlpModel(classes=classes, cfg=cfg, seed=seed, **params)


# --- Trained classifier (standardizer + model) ---

@dataclass(eq=False)
class TrainedClassifier:
    standardizer: Standardizer
    model: object
    feature_ids: tuple = ()

    @property
    def kind(self):
        return self.model.kind

    def predict(self, X):
        return self.model.predict(self.standardizer.apply(X))


TRAINERS = {"svm": train_svm, "mlp": train_mlp}


def fit_classifier(X, y, kind="svm", cfg=None, seed=config.DEFAULT_SEED, feature_ids=()):
    if kind not in TRAINERS:
        raise ValueError(f"unknown classifier: {kind}")
    standardizer = Standardizer.fit(X)
    model = TRAINERS[kind](standardizer.apply(X), y, cfg, seed)
    return TrainedClassifier(standardizer=standardizer, model=model, feature_ids=tuple(feature_ids))


# --- Fold planning ---

@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    folds: tuple
    aside: np.ndarray
    leftovers: dict
    scheme: str = "truncate"

    def split_sizes(self, test_fold=-1):
        """(train, test, aside) frame counts with `test_fold` held out."""
        test_fold = test_fold % self.k
        test = len(self.folds[test_fold])
        train = sum(len(f) for i, f in enumerate(self.folds) if i != test_fold)
        return train, test, len(self.aside)

    def train_test(self, test_fold):
        test = self.folds[test_fold]
        train = np.sort(np.concatenate([f for i, f in enumerate(self.folds) if i != test_fold]))
        return train, test


def stratified_kfold(labels, k, seed=config.DEFAULT_SEED, scheme="truncate"):
    """Per-class shuffled, stratified k-fold plan.

    `truncate` keeps only the largest multiple of k per class so every fold
    holds the same number of frames of each class; `balanced` uses every
    frame through `StratifiedKFold`, so fold sizes differ by at most one.
    Negative labels are excluded and set aside in both schemes.
    """
    if scheme not in FOLD_SCHEMES:
        raise ValueError(f"unknown fold scheme: {scheme}")
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    labels = np.asarray(labels)
    aside = [np.flatnonzero(labels < 0)]
    classes, counts = np.unique(labels[labels >= 0], return_counts=True)
    for c, count in zip(classes, counts):
        if count < k:
            raise ValueError(f"class {c} has {count} samples, fewer than k={k}")

    if scheme == "balanced":
        kept = np.flatnonzero(labels >= 0)
        splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
        folds = [kept[test] for _, test in splitter.split(np.zeros((kept.size, 1)), labels[kept])]
        fold_arrays = tuple(np.sort(f) for f in folds)
        leftovers = {int(c): 0 for c in classes}
    else:
        rng = np.random.default_rng(seed)
        parts = [[] for _ in range(k)]
        leftovers = {}
        for c in classes:
            idx = rng.permutation(np.flatnonzero(labels == c))
            m = (idx.size // k) * k
            for f in range(k):
                parts[f].append(idx[f:m:k])
            aside.append(idx[m:])
            leftovers[int(c)] = int(idx.size - m)
        fold_arrays = tuple(np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=int) for p in parts)

    plan = FoldPlan(k=k, folds=fold_arrays, aside=np.sort(np.concatenate(aside)),
                    leftovers=leftovers, scheme=scheme)
    train, test, n_aside = plan.split_sizes()
    logger.debug(f"Fold plan ({scheme}, k={k}): train {train} / test {test} / aside {n_aside}")
    return plan


# --- Metrics ---

@dataclass(frozen=True, eq=False)
class Metrics:
    class_names: tuple
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    fp_rate: np.ndarray
    accuracy: float

    def for_class(self, name):
        i = self.class_names.index(name)
        return {"precision": float(self.precision[i]), "recall": float(self.recall[i]),
                "f1": float(self.f1[i]), "support": int(self.support[i]),
                "fp_rate": float(self.fp_rate[i])}

    def macro_precision(self):
        return float(np.mean(self.precision))

    def to_frame(self):
        return pd.DataFrame({
            "class": list(self.class_names),
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "fp_rate": self.fp_rate,
            "support": self.support.astype(int),
        })


def _safe_div(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def metrics_from_confusion(confusion, class_names):
    """Per-class metrics from a confusion matrix (rows: truth, columns: prediction)."""
    cm = np.asarray(confusion, dtype=np.int64)
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    total = cm.sum()
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    fp = predicted - tp
    fp_rate = _safe_div(fp, total - support)
    accuracy = float(tp.sum() / total) if total else 0.0
    return Metrics(class_names=tuple(class_names), confusion=cm, precision=precision, recall=recall,
                   f1=f1, support=support, fp_rate=fp_rate, accuracy=accuracy)


def evaluate(model, X, y, class_names):
    """Metrics of `model` on a test set; labels are class indices into `class_names`."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("cannot evaluate on an empty test set")
    predictions = model.predict(X)
    cm = confusion_matrix(y, predictions, labels=np.arange(len(class_names)))
    return metrics_from_confusion(cm, class_names)


@dataclass(frozen=True, eq=False)
class CrossValidationResult:
    metrics: Metrics
    predictions: np.ndarray
    truth: np.ndarray
    plan: FoldPlan


def cross_validate(X, y, plan, class_names, fit: Callable, seed=config.DEFAULT_SEED,
                   order: Optional[Sequence[int]] = None):
    """Pooled k-fold evaluation: every test fold's predictions feed one confusion matrix.

    `fit(X_train, y_train, seed)` returns an object with `predict`. Fold f is
    always trained with `seed + f`, whatever the evaluation `order`.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    order = range(plan.k) if order is None else list(order)
    if sorted(order) != list(range(plan.k)):
        raise ValueError(f"order must be a permutation of the {plan.k} folds")
    truth, predictions = [], []
    for f in order:
        train, test = plan.train_test(f)
        model = fit(X[train], y[train], seed + f)
        predictions.append(model.predict(X[test]))
        truth.append(y[test])
        logger.debug(f"Fold {f + 1}/{plan.k}: trained on {train.size}, tested on {test.size}")
    truth = np.concatenate(truth)
    predictions = np.concatenate(predictions)
    cm = confusion_matrix(truth, predictions, labels=np.arange(len(class_names)))
    return CrossValidationResult(metrics=metrics_from_confusion(cm, class_names),
                                 predictions=predictions, truth=truth, plan=plan)


def classifier_fitter(kind, cfg=None):
    def fit(X, y, seed):
        return fit_classifier(X, y, kind, cfg, seed)
    return fit


# --- Reporting ---

def format_metrics(metrics, title=""):
    lines = [title] if title else []
    width = max(len("Class"), *(len(n) for n in metrics.class_names))
    lines.append(f"{'Class':<{width}}  Precision  Recall")
    for i, name in enumerate(metrics.class_names):
        lines.append(f"{name:<{width}}  {metrics.precision[i]:9.2f}  {metrics.recall[i]:6.2f}")
    lines.append(f"{'accuracy':<{width}}  {metrics.accuracy:9.2f}")
    return "\n".join(lines)


def format_side_by_side(left, right, left_title, right_title):
    """Two Class/Precision/Recall tables next to each other (same class order)."""
    width = max(len("Class"), *(len(n) for n in left.class_names))
    lines = [f"{'':<{width}}  {left_title:^17}  {right_title:^17}",
             f"{'Class':<{width}}  Precision  Recall  Precision  Recall"]
    for i, name in enumerate(left.class_names):
        lines.append(f"{name:<{width}}  {left.precision[i]:9.2f}  {left.recall[i]:6.2f}"
                     f"  {right.precision[i]:9.2f}  {right.recall[i]:6.2f}")
    lines.append(f"{'accuracy':<{width}}  {left.accuracy:9.2f}  {'':6}  {right.accuracy:9.2f}")
    return "\n".join(lines)


# --- Cluster diagnostics ---

@dataclass(frozen=True, eq=False)
class ClusterMixing:
    classes: tuple
    shares: np.ndarray
    sizes: np.ndarray
    mixing: float


def cluster_mixing(X, labels, classes: Sequence[int], n_clusters=None, seed=config.DEFAULT_SEED):
    """How well k-means separates frames of the given classes.

    mixing is 0 when every cluster is pure and 1 when every cluster holds
    the classes in equal shares.
    """
    labels = np.asarray(labels)
    classes = tuple(int(c) for c in classes)
    mask = np.isin(labels, classes)
    if mask.sum() < 2:
        raise ValueError("cluster diagnostics need at least 2 frames of the requested classes")
    n_clusters = n_clusters or len(classes)
    Xs = Standardizer.fit(X[mask]).apply(X[mask])
    assignment = KMeans(n_clusters=n_clusters, n_init=10, random_state=seed).fit_predict(Xs)
    y = labels[mask]
    counts = np.array([[np.sum((assignment == k) & (y == c)) for c in classes]
                       for k in range(n_clusters)], dtype=float)
    sizes = counts.sum(axis=1)
    shares = _safe_div(counts, sizes[:, None])
    purity = counts.max(axis=1).sum() / counts.sum()
    m = len(classes)
    mixing = float((1.0 - purity) / (1.0 - 1.0 / m)) if m > 1 else 0.0
    return ClusterMixing(classes=classes, shares=shares, sizes=sizes.astype(int), mixing=mixing)


def config_dict(cfg):
    return asdict(cfg) if cfg is not None else {}
