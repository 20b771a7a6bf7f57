"""Shallow feed-forward classifier on feature vectors: two rectified hidden
layers trained with Adam, validation-loss early stopping, and evaluation
metrics (accuracy, F1, confusion matrix, timing)."""

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np


class TrainingError(Exception):
    """Raised on degenerate splits, shape mismatches, or non-finite losses."""


@dataclass(frozen=True)
class NetConfig:
    hidden_sizes: tuple = (100, 50)
    max_epochs: int = 200
    patience: int = 3
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if any(h < 1 for h in self.hidden_sizes):
            raise TrainingError("hidden sizes must be >= 1")
        if self.patience < 1:
            raise TrainingError("patience must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise TrainingError("val_fraction must lie in (0, 1)")


class EarlyStopping:
    """Stop after `patience` consecutive epochs without strict improvement."""

    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch, loss):
        """Record one epoch's validation loss; returns True when training should stop."""
        if loss < self.best:
            self.best = loss
            self.best_epoch = epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class ShallowNet:
    weights: list  # per layer, (fan_in, fan_out) float64
    biases: list
    feature_mean: np.ndarray
    feature_scale: np.ndarray  # 1.0 for zero-variance columns
    n_classes: int
    config: NetConfig
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    stopped_epoch: int = 0
    best_epoch: int = 0


@dataclass
class EvalReport:
    accuracy: float
    f1: float
    confusion: np.ndarray  # (C, C), rows = true class
    train_seconds: float
    mean_inference_seconds: float


def _relu(x):
    return np.maximum(x, 0.0)


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward(weights, biases, x):
    """Returns (activations per layer incl. input, probabilities)."""
    acts = [x]
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = _relu(h @ w + b)
        acts.append(h)
    probs = _softmax(h @ weights[-1] + biases[-1])
    return acts, probs


def _loss_and_grads(weights, biases, x, y_onehot):
    """Mean cross-entropy and its gradients w.r.t. every weight and bias."""
    acts, probs = _forward(weights, biases, x)
    n = len(x)
    eps = 1e-12
    loss = -np.mean(np.sum(y_onehot * np.log(probs + eps), axis=1))

    gw = [None] * len(weights)
    gb = [None] * len(biases)
    delta = (probs - y_onehot) / n
    for li in range(len(weights) - 1, -1, -1):
        gw[li] = acts[li].T @ delta
        gb[li] = delta.sum(axis=0)
        if li > 0:
            # rectifier subgradient at 0 is 0
            delta = (delta @ weights[li].T) * (acts[li] > 0)
    return loss, gw, gb


def _stratified_split(labels, val_fraction, rng):
    train_idx, val_idx = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(val_fraction * len(idx)))
        n_val = min(max(n_val, 1), len(idx) - 1)
        val_idx.extend(idx[:n_val])
        train_idx.extend(idx[n_val:])
    return np.sort(np.array(train_idx)), np.sort(np.array(val_idx))


def train(features, labels, cfg=NetConfig()):
    """Train the classifier with Adam and early stopping; the parameters from
    the best validation epoch are restored.

    Identical features/labels/config give bit-identical parameters.
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(labels):
        raise TrainingError(f"features {x.shape} and labels {labels.shape} mismatch")
    n_classes = int(labels.max()) + 1
    if labels.min() < 0:
        raise TrainingError("labels must be non-negative")

    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = _stratified_split(labels, cfg.val_fraction, rng)
    if len(train_idx) < 2 or len(val_idx) < 2:
        raise TrainingError(
            f"degenerate split: {len(train_idx)} train / {len(val_idx)} val examples"
        )

    mean = x[train_idx].mean(axis=0)
    std = x[train_idx].std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    xs = (x - mean) / scale
    xt, yt = xs[train_idx], labels[train_idx]
    xv, yv = xs[val_idx], labels[val_idx]
    yt_onehot = np.eye(n_classes)[yt]
    yv_onehot = np.eye(n_classes)[yv]

    dims = [x.shape[1], *cfg.hidden_sizes, n_classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        # small nonzero bias init keeps rectifier pre-activations off the kink
        biases.append(rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in))

    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    t = 0

    stopper = EarlyStopping(cfg.patience)
    best_params = None
    history = []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(xt))
        epoch_loss = 0.0
        for start in range(0, len(xt), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, gw, gb = _loss_and_grads(weights, biases, xt[batch], yt_onehot[batch])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            epoch_loss += loss * len(batch)
            t += 1
            lr_t = cfg.learning_rate * np.sqrt(1 - cfg.beta2**t) / (1 - cfg.beta1**t)
            for li in range(len(weights)):
                m_w[li] = cfg.beta1 * m_w[li] + (1 - cfg.beta1) * gw[li]
                v_w[li] = cfg.beta2 * v_w[li] + (1 - cfg.beta2) * gw[li] ** 2
                weights[li] -= lr_t * m_w[li] / (np.sqrt(v_w[li]) + cfg.epsilon)
                m_b[li] = cfg.beta1 * m_b[li] + (1 - cfg.beta1) * gb[li]
                v_b[li] = cfg.beta2 * v_b[li] + (1 - cfg.beta2) * gb[li] ** 2
                biases[li] -= lr_t * m_b[li] / (np.sqrt(v_b[li]) + cfg.epsilon)

        val_loss, _, _ = _loss_and_grads(weights, biases, xv, yv_onehot)
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.append((epoch, epoch_loss / len(xt), float(val_loss)))
        improved = val_loss < stopper.best
        stop = stopper.update(epoch, float(val_loss))
        if improved:
            best_params = ([w.copy() for w in weights], [b.copy() for b in biases])
        if stop:
            break

    if best_params is not None:
        weights, biases = best_params
    return ShallowNet(
        weights,
        biases,
        mean,
        scale,
        n_classes,
        cfg,
        history,
        stopped_epoch=epoch,
        best_epoch=stopper.best_epoch,
    )


def predict(net, features):
    """Labels (argmax, earliest class on ties) and class probabilities."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.weights[0].shape[0]:
        raise TrainingError(
            f"feature width {x.shape[1] if x.ndim == 2 else '?'} does not match "
            f"model input {net.weights[0].shape[0]}"
        )
    xs = (x - net.feature_mean) / net.feature_scale
    _, probs = _forward(net.weights, net.biases, xs)
    return np.argmax(probs, axis=1), probs


def confusion_matrix(y_true, y_pred, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[t, p] += 1
    return cm


def f1_from_confusion(cm):
    """Positive-class F1 for binary problems, macro-averaged otherwise."""
    c = cm.shape[0]

    def class_f1(k):
        tp = cm[k, k]
        fp = cm[:, k].sum() - tp
        fn = cm[k, :].sum() - tp
        denom = 2 * tp + fp + fn
        return 2 * tp / denom if denom > 0 else 0.0

    if c == 2:
        return float(class_f1(1))
    return float(np.mean([class_f1(k) for k in range(c)]))


def evaluate(net, features, labels, train_seconds=0.0):
    """Accuracy, F1, confusion matrix, and mean per-example inference time."""
    labels = np.asarray(labels, dtype=np.int64)
    t0 = time.perf_counter()
    preds, _ = predict(net, features)
    infer = (time.perf_counter() - t0) / len(labels)
    cm = confusion_matrix(labels, preds, net.n_classes)
    acc = float(np.trace(cm) / cm.sum())
    return EvalReport(acc, f1_from_confusion(cm), cm, train_seconds, infer)


def gradient_check(net, features, labels, h=1e-5):
    """Max relative error between analytic gradients and central differences."""
    x = np.asarray(features, dtype=np.float64)
    xs = (x - net.feature_mean) / net.feature_scale
    y_onehot = np.eye(net.n_classes)[np.asarray(labels, dtype=np.int64)]
    _, gw, gb = _loss_and_grads(net.weights, net.biases, xs, y_onehot)

    def loss_only():
        loss, _, _ = _loss_and_grads(net.weights, net.biases, xs, y_onehot)
        return loss

    worst = 0.0
    for params, grads in ((net.weights, gw), (net.biases, gb)):
        for arr, grad in zip(params, grads):
            flat = arr.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_only()
                flat[i] = orig - h
                down = loss_only()
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                analytic = grad.ravel()[i]
                denom = max(abs(numeric) + abs(analytic), 1e-8)
                worst = max(worst, abs(numeric - analytic) / denom)
    return worst


# --- model serialization ------------------------------------------------------


def save_model(path, net):
    """JSON model file; floats are written with full precision so a reload
    reproduces predictions bit-exactly."""
    doc = {
        "format": "zfrac-shallownet-v1",
        "config": asdict(net.config),
        "n_classes": net.n_classes,
        "dims": [net.weights[0].shape[0]]
        + [w.shape[1] for w in net.weights],
        "feature_mean": net.feature_mean.tolist(),
        "feature_scale": net.feature_scale.tolist(),
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "stopped_epoch": net.stopped_epoch,
        "best_epoch": net.best_epoch,
        "history": net.history,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "zfrac-shallownet-v1":
        raise TrainingError(f"{path}: not a shallownet model file")
    cfgdict = dict(doc["config"])
    cfgdict["hidden_sizes"] = tuple(cfgdict["hidden_sizes"])
    cfg = NetConfig(**cfgdict)
    dims = doc["dims"]
    weights = [
        np.array(w, dtype=np.float64).reshape(fan_in, fan_out)
        for w, fan_in, fan_out in zip(doc["weights"], dims, dims[1:])
    ]
    biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
    return ShallowNet(
        weights,
        biases,
        np.array(doc["feature_mean"], dtype=np.float64),
        np.array(doc["feature_scale"], dtype=np.float64),
        int(doc["n_classes"]),
        cfg,
        [tuple(h) for h in doc.get("history", [])],
        stopped_epoch=int(doc.get("stopped_epoch", 0)),
        best_epoch=int(doc.get("best_epoch", 0)),
    )
