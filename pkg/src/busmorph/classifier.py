"""Small dense classification head trained with numpy.

Topology: BatchNorm -> Dense(128, ReLU) -> Dense(3, softmax), optimised on
categorical cross-entropy with SGD or Adam. Forward and backward passes are
written out by hand; :func:`gradient_check` validates them against central
finite differences.

Rows flagged degenerate (no usable lesion region) never reach the network:
training skips them and :func:`predict` labels them class 0 (normal).
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import CLASS_NAMES, Split
from .errors import BatchTooSmall, ClassTooSmall, CorruptModelFile, EmptyInput, NonFiniteLoss, SchemaMismatch
from .morphometry import CSV_HEADER

log = logging.getLogger(__name__)

# tca_ratio duplicates solidity exactly, so the network sees 17 inputs.
MODEL_INPUTS = tuple(n for n in CSV_HEADER[2:-1] if n != "tca_ratio")

MAGIC = "busmorph-classifier"
FORMAT_VERSION = 1
HIDDEN = 128
N_CLASSES = 3
BN_MOMENTUM = 0.99
BN_EPS = 1e-5
VAR_FLOOR = 1e-12
LOSS_EPS = 1e-12

PARAM_NAMES = ("bn_gamma", "bn_beta", "w1", "b1", "w2", "b2")
STATE_NAMES = PARAM_NAMES + ("bn_running_mean", "bn_running_var")


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.001
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float

    def log_line(self) -> str:
        return f"epoch,{self.epoch},{self.train_loss:.6f},{self.train_acc:.6f},{self.val_loss:.6f},{self.val_acc:.6f}"


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    n_train: int = 0
    n_validation: int = 0
    excluded_degenerate: int = 0

    @property
    def final(self) -> EpochStats:
        return self.epochs[-1]


@dataclass
class ClassifierModel:
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    seed: int = 0
    epochs_trained: int = 0
    hidden_activation: str = "relu"
    feature_names: tuple = MODEL_INPUTS
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    def parameter_count(self) -> dict:
        trainable = sum(getattr(self, n).size for n in PARAM_NAMES)
        frozen = self.bn_running_mean.size + self.bn_running_var.size
        return {"trainable": int(trainable), "non_trainable": int(frozen), "total": int(trainable + frozen)}

    def copy(self) -> "ClassifierModel":
        kw = {n: getattr(self, n).copy() for n in STATE_NAMES}
        return ClassifierModel(
            **kw,
            seed=self.seed,
            epochs_trained=self.epochs_trained,
            hidden_activation=self.hidden_activation,
            feature_names=tuple(self.feature_names),
            meta=json.loads(json.dumps(self.meta)),
        )


def init_model(input_dim: int, seed: int, hidden: int = HIDDEN, n_classes: int = N_CLASSES) -> ClassifierModel:
    """Fan-in scaled uniform weights (He for the ReLU layer, LeCun for the output), zero biases."""
    rng = np.random.Generator(np.random.PCG64(seed))
    lim1 = math.sqrt(6.0 / input_dim)
    lim2 = math.sqrt(3.0 / hidden)
    return ClassifierModel(
        bn_gamma=np.ones(input_dim),
        bn_beta=np.zeros(input_dim),
        bn_running_mean=np.zeros(input_dim),
        bn_running_var=np.ones(input_dim),
        w1=rng.uniform(-lim1, lim1, size=(input_dim, hidden)),
        b1=np.zeros(hidden),
        w2=rng.uniform(-lim2, lim2, size=(hidden, n_classes)),
        b2=np.zeros(n_classes),
        seed=seed,
    )


def permute_inputs(model: ClassifierModel, perm: Sequence[int]) -> ClassifierModel:
    """Model that reads feature ``perm[j]`` in input slot ``j``."""
    perm = np.asarray(perm)
    out = model.copy()
    for n in ("bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var"):
        setattr(out, n, getattr(model, n)[perm].copy())
    out.w1 = model.w1[perm].copy()
    out.feature_names = tuple(model.feature_names[i] for i in perm)
    return out


# ---------------------------------------------------------------------------
# forward / backward


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(model: ClassifierModel, x: np.ndarray, train: bool):
    """Pure forward pass; returns probabilities, a backward cache and batch stats."""
    x = np.asarray(x, dtype=float)
    if train:
        if len(x) < 2:
            raise BatchTooSmall("batch statistics need at least 2 rows")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
    else:
        mu, var = model.bn_running_mean, model.bn_running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv
    bn = model.bn_gamma * xhat + model.bn_beta
    pre = bn @ model.w1 + model.b1
    hid = np.maximum(pre, 0.0)
    logits = hid @ model.w2 + model.b2
    probs = softmax(logits)
    cache = (x, mu, inv, xhat, bn, pre, hid, train)
    return probs, cache, mu, var


def forward(model: ClassifierModel, x: np.ndarray, mode: str = "infer") -> np.ndarray:
    """Class probabilities for a batch.

    ``mode="train"`` normalises with batch statistics and folds them into the
    running statistics; ``mode="infer"`` uses the running statistics.
    """
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    probs, _, mu, var = _forward(model, x, mode == "train")
    if mode == "train":
        _update_running(model, mu, var)
    return probs


def _update_running(model, mu, var):
    m = BN_MOMENTUM
    model.bn_running_mean = m * model.bn_running_mean + (1 - m) * mu
    model.bn_running_var = np.maximum(m * model.bn_running_var + (1 - m) * var, VAR_FLOOR)


def loss(probs: np.ndarray, labels: Sequence[int]) -> float:
    """Mean categorical cross-entropy, probabilities clamped at 1e-12."""
    labels = np.asarray(labels, dtype=int)
    p = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(p, LOSS_EPS)).mean())


def _backward(model: ClassifierModel, probs: np.ndarray, labels: np.ndarray, cache) -> dict:
    x, mu, inv, xhat, bn, pre, hid, train = cache
    n = len(labels)
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    g = {"w2": hid.T @ dlogits, "b2": dlogits.sum(axis=0)}
    dhid = dlogits @ model.w2.T
    dpre = dhid * (pre > 0)
    g["w1"] = bn.T @ dpre
    g["b1"] = dpre.sum(axis=0)
    dbn = dpre @ model.w1.T
    g["bn_gamma"] = (dbn * xhat).sum(axis=0)
    g["bn_beta"] = dbn.sum(axis=0)
    return g


def loss_and_grads(model: ClassifierModel, x: np.ndarray, labels: Sequence[int]):
    """Train-mode loss and analytic gradients, without touching running stats."""
    labels = np.asarray(labels, dtype=int)
    probs, cache, _, _ = _forward(model, x, True)
    return loss(probs, labels), _backward(model, probs, labels, cache)


def gradient_check(
    model: ClassifierModel, x: np.ndarray, labels: Sequence[int], per_tensor: int = 12, seed: int = 0, h: float = 1e-5
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Checks up to ``per_tensor`` randomly chosen entries of every trainable
    tensor. Relative error is ``|a - n| / max(|a| + |n|, 1e-8)``.
    """
    labels = np.asarray(labels, dtype=int)
    if len(labels) < 2:
        raise BatchTooSmall("gradient check needs a batch of at least 2")
    _, grads = loss_and_grads(model, x, labels)
    rng = np.random.Generator(np.random.PCG64(seed))
    probe = model.copy()
    worst = 0.0
    for name in PARAM_NAMES:
        arr = getattr(probe, name)
        flat = arr.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        for i in picks:
            old = flat[i]
            flat[i] = old + h
            lp = loss(_forward(probe, x, True)[0], labels)
            flat[i] = old - h
            lm = loss(_forward(probe, x, True)[0], labels)
            flat[i] = old
            num = (lp - lm) / (2 * h)
            ana = grads[name].reshape(-1)[i]
            worst = max(worst, abs(ana - num) / max(abs(ana) + abs(num), 1e-8))
    return worst


# ---------------------------------------------------------------------------
# data


@dataclass
class FeatureTable:
    ids: list
    labels: np.ndarray  # class indices
    x: np.ndarray  # (n, len(MODEL_INPUTS))
    degenerate: np.ndarray  # bool

    def __len__(self):
        return len(self.ids)

    def rows(self, ids) -> np.ndarray:
        pos = {i: j for j, i in enumerate(self.ids)}
        return np.array([pos[i] for i in ids], dtype=int)


def read_feature_csv(path) -> FeatureTable:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"{path} is empty") from None
        if tuple(header) != CSV_HEADER:
            raise SchemaMismatch(f"{path}: header does not match the feature schema")
        rows = list(reader)
    if not rows:
        raise EmptyInput(f"{path} has no data rows")
    col = {n: i for i, n in enumerate(CSV_HEADER)}
    ids, labels, xs, degen = [], [], [], []
    for r in rows:
        if len(r) != len(CSV_HEADER):
            raise SchemaMismatch(f"{path}: row {r[:1]} has {len(r)} fields")
        ids.append(r[0])
        try:
            labels.append(CLASS_NAMES.index(r[1].lower()))
            xs.append([float(r[col[n]]) for n in MODEL_INPUTS])
        except ValueError as exc:
            raise SchemaMismatch(f"{path}: row {r[0]!r}: {exc}") from exc
        degen.append(r[-1].strip().lower() == "true")
    return FeatureTable(ids, np.array(labels, dtype=int), np.array(xs, dtype=float), np.array(degen, dtype=bool))


# ---------------------------------------------------------------------------
# training


def _batches(order: np.ndarray, size: int) -> list:
    out = [order[i: i + size] for i in range(0, len(order), size)]
    if len(out) > 1 and len(out[-1]) == 1:
        # a single-row batch has no variance; fold it into the previous one
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, model, grads):
        self.t += 1
        for n in PARAM_NAMES:
            g = grads[n]
            m = self.m.get(n, np.zeros_like(g))
            v = self.v.get(n, np.zeros_like(g))
            m = self.b1 * m + (1 - self.b1) * g
            v = self.b2 * v + (1 - self.b2) * g * g
            self.m[n], self.v[n] = m, v
            mh = m / (1 - self.b1**self.t)
            vh = v / (1 - self.b2**self.t)
            setattr(model, n, getattr(model, n) - self.lr * mh / (np.sqrt(vh) + self.eps))


class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, model, grads):
        for n in PARAM_NAMES:
            setattr(model, n, getattr(model, n) - self.lr * grads[n])


def _evaluate(model, x, y, train_mode: bool):
    if len(y) == 0:
        return float("nan"), float("nan")
    if train_mode and len(y) < 2:
        train_mode = False
    probs = _forward(model, x, train_mode)[0]
    return loss(probs, y), float((probs.argmax(axis=1) == y).mean())


def train(
    table: FeatureTable,
    split: Split,
    cfg: TrainConfig,
    initial: Optional[ClassifierModel] = None,
) -> tuple:
    """Fit the head on the split's training rows; returns ``(model, report)``.

    Per-epoch training metrics use batch-normalisation statistics of the whole
    training set (the quantity the mini-batches estimate); validation metrics
    use the running statistics, as at inference.
    """
    tr = table.rows(split.train_ids)
    va = table.rows(split.validation_ids)
    excluded = int(table.degenerate[tr].sum() + table.degenerate[va].sum())
    tr = tr[~table.degenerate[tr]]
    va = va[~table.degenerate[va]]
    xt, yt = table.x[tr], table.labels[tr]
    xv, yv = table.x[va], table.labels[va]
    present, counts = np.unique(yt, return_counts=True)
    if len(present) < 2:
        raise ClassTooSmall("training rows cover fewer than two classes")
    small = [CLASS_NAMES[c] for c, n in zip(present, counts) if n < 2]
    if small:
        raise ClassTooSmall(f"fewer than 2 training rows for: {', '.join(small)}")
    if not np.isfinite(xt).all():
        raise NonFiniteLoss("non-finite feature values in training rows")

    model = init_model(table.x.shape[1], cfg.seed) if initial is None else initial.copy()
    model.seed = cfg.seed
    # running statistics start at the training-set statistics
    model.bn_running_mean = xt.mean(axis=0)
    model.bn_running_var = np.maximum(xt.var(axis=0), VAR_FLOOR)

    opt = _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(cfg.learning_rate)
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 1))
    rep = TrainReport(n_train=len(tr), n_validation=len(va), excluded_degenerate=excluded)
    for epoch in range(1, cfg.epochs + 1):
        for b in _batches(rng.permutation(len(tr)), cfg.batch_size):
            value, grads = loss_and_grads(model, xt[b], yt[b])
            if not math.isfinite(value):
                raise NonFiniteLoss(f"loss is {value} at epoch {epoch}; lr={cfg.learning_rate}")
            opt.step(model, grads)
            _update_running(model, xt[b].mean(axis=0), xt[b].var(axis=0))
        tl, ta = _evaluate(model, xt, yt, True)
        vl, va_acc = _evaluate(model, xv, yv, False)
        if not math.isfinite(tl):
            raise NonFiniteLoss(f"training loss is {tl} after epoch {epoch}")
        stats = EpochStats(epoch, tl, ta, vl, va_acc)
        rep.epochs.append(stats)
        log.info(stats.log_line())
    model.epochs_trained += cfg.epochs
    return model, rep


def predict_proba(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    return forward(model, x, "infer")


def predict(model: ClassifierModel, x: np.ndarray, degenerate: Optional[np.ndarray] = None) -> np.ndarray:
    """Argmax class index; ties go to the lowest index, degenerate rows to 0."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(len(x), dtype=int)
    live = np.ones(len(x), dtype=bool) if degenerate is None else ~np.asarray(degenerate, dtype=bool)
    if live.any():
        out[live] = predict_proba(model, x[live]).argmax(axis=1)
    return out


# ---------------------------------------------------------------------------
# persistence


def _payload(model: ClassifierModel) -> dict:
    return {
        "magic": MAGIC,
        "version": FORMAT_VERSION,
        "dims": {"input": model.input_dim, "hidden": model.hidden_dim, "classes": model.w2.shape[1]},
        "hidden_activation": model.hidden_activation,
        "feature_names": list(model.feature_names),
        "classes": list(CLASS_NAMES),
        "seed": model.seed,
        "epochs_trained": model.epochs_trained,
        "parameters": {n: getattr(model, n).tolist() for n in STATE_NAMES},
        "parameter_count": model.parameter_count(),
        "meta": model.meta,
    }


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def dumps_model(model: ClassifierModel) -> str:
    payload = _payload(model)
    return json.dumps({**payload, "sha256": _digest(payload)}, sort_keys=True, indent=1, allow_nan=False) + "\n"


def save_model(model: ClassifierModel, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> ClassifierModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModelFile(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("magic") != MAGIC:
        raise CorruptModelFile(f"{path}: not a model file")
    if doc.get("version") != FORMAT_VERSION:
        raise CorruptModelFile(f"{path}: unsupported version {doc.get('version')}")
    checksum = doc.pop("sha256", None)
    if checksum != _digest(doc):
        raise CorruptModelFile(f"{path}: checksum mismatch")
    p = {n: np.array(doc["parameters"][n], dtype=float) for n in STATE_NAMES}
    dims = doc["dims"]
    if p["w1"].shape != (dims["input"], dims["hidden"]) or p["w2"].shape != (dims["hidden"], dims["classes"]):
        raise CorruptModelFile(f"{path}: parameter shapes disagree with dims")
    return ClassifierModel(
        **p,
        seed=doc["seed"],
        epochs_trained=doc["epochs_trained"],
        hidden_activation=doc["hidden_activation"],
        feature_names=tuple(doc["feature_names"]),
        meta=doc["meta"],
    )
