"""RMSProp optimization, the epoch loop with dev-set model selection, metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import corpus, model as model_mod
from .numerics import Graph, substream


@dataclass
class TrainConfig:
    model: str = "miarn"
    n: int = 100  # embedding size
    d: int = 100  # LSTM hidden size
    k: int | None = None  # pair-projection width, miarn only
    lam: float = 1e-8  # L2 weight
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 128
    max_len: int = 40
    seed: int = 0

    def validate(self):
        if self.model not in model_mod.MODEL_KINDS:
            raise ValueError(
                f"unknown model {self.model!r}, expected one of {model_mod.MODEL_KINDS}"
            )
        if self.model == "miarn":
            if not self.k or self.k < 1:
                raise ValueError("miarn requires --k (pair-projection width)")
        elif self.k:
            warnings.warn(f"k={self.k} is ignored by model {self.model!r}", stacklevel=2)
        for name in ("n", "d", "epochs", "batch_size", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


# ----------------------------------------------------------------------
# Metrics
# ----------------------------------------------------------------------

def macro_scores(confusion):
    """(macro-P, macro-R, macro-F1) from a 2x2 counts[true, pred] matrix.

    Per-class scores use the 0-when-undefined convention, so empty classes
    contribute 0 rather than NaN to the unweighted two-class average.
    """
    confusion = np.asarray(confusion)
    precision = np.zeros(2)
    recall = np.zeros(2)
    f1 = np.zeros(2)
    for c in (0, 1):
        tp = confusion[c, c]
        fp = confusion[1 - c, c]
        fn = confusion[c, 1 - c]
        precision[c] = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall[c] = tp / (tp + fn) if tp + fn > 0 else 0.0
        if precision[c] + recall[c] > 0:
            f1[c] = 2 * precision[c] * recall[c] / (precision[c] + recall[c])
    return precision.mean(), recall.mean(), f1.mean(), precision, recall, f1


@dataclass
class Metrics:
    confusion: np.ndarray  # (2, 2) counts[true, pred]
    accuracy: float
    precision: np.ndarray  # per class
    recall: np.ndarray
    f1: np.ndarray
    macro_p: float
    macro_r: float
    macro_f1: float

    @classmethod
    def from_predictions(cls, predictions, labels):
        predictions = np.asarray(predictions, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        confusion = np.zeros((2, 2), dtype=np.int64)
        np.add.at(confusion, (labels, predictions), 1)
        total = confusion.sum()
        accuracy = float(np.trace(confusion) / total) if total else 0.0
        macro_p, macro_r, macro_f1, precision, recall, f1 = macro_scores(confusion)
        return cls(
            confusion=confusion,
            accuracy=accuracy,
            precision=precision,
            recall=recall,
            f1=f1,
            macro_p=macro_p,
            macro_r=macro_r,
            macro_f1=macro_f1,
        )


def predict(model, docs, batch_size=256):
    """Argmax class per document (ties resolve to class 0), without recording."""
    preds, labels = [], []
    for batch in corpus.make_batches(docs, batch_size, shuffle_seed=None):
        yhat, _ = model.forward(batch, with_records=False)
        preds.append(yhat.data.argmax(axis=1))
        labels.append(batch.labels)
    return np.concatenate(preds), np.concatenate(labels)


def evaluate(model, docs, batch_size=256) -> Metrics:
    preds, labels = predict(model, docs, batch_size=batch_size)
    return Metrics.from_predictions(preds, labels)


# ----------------------------------------------------------------------
# Optimizer
# ----------------------------------------------------------------------

class RmsProp:
    """Mean-square-scaled gradient descent.

    acc <- rho * acc + (1 - rho) * g^2;  w <- w - lr * g / sqrt(acc + eps).
    Parameters with no gradient this step keep their weights (acc still
    decays).  Rows listed in ``pinned_rows`` are forced back to zero after
    every step (the PAD embedding row).
    """

    def __init__(self, params, lr, rho=0.9, eps=1e-8, pinned_rows=()):
        self.params = list(params)
        self.lr = float(lr)
        self.rho = float(rho)
        self.eps = float(eps)
        self.pinned_rows = list(pinned_rows)
        self.acc = {name: np.zeros_like(t.data) for name, t in self.params}

    def step(self):
        for name, t in self.params:
            acc = self.acc[name]
            g = t.grad
            if g is None:
                acc *= self.rho
                continue
            if np.isnan(g).any():
                raise RuntimeError(f"NaN gradient in parameter {name!r}; aborting")
            acc *= self.rho
            acc += (1.0 - self.rho) * g * g
            t.data -= self.lr * g / np.sqrt(acc + self.eps)
        for tensor, row in self.pinned_rows:
            tensor.data[row] = 0


def rmsprop_step(state: RmsProp):
    """Apply one update to the optimizer's parameters from their .grad buffers."""
    state.step()


# ----------------------------------------------------------------------
# Training loop
# ----------------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_accuracy: float
    dev_macro_f1: float


@dataclass
class TrainResult:
    model: object
    history: list
    best_epoch: int
    best_dev_f1: float
    best_state: dict = field(repr=False, default=None)


def train_epoch(model, optimizer, batches, lam) -> float:
    """One pass over the given batches; returns mean per-document loss."""
    total, count = 0.0, 0
    weights = model.l2_weights()
    for batch in batches:
        model.zero_grads()
        with Graph() as graph:
            yhat, _ = model.forward(batch, with_records=False)
            batch_loss = model_mod.loss(yhat, batch.labels, lam, weights)
        graph.backward(batch_loss)
        optimizer.step()
        total += batch_loss.item()
        count += len(batch.labels)
    return total / count if count else 0.0


def best_epoch(dev_f1_values) -> int:
    """1-based index of the maximal dev score; ties go to the earlier epoch."""
    values = list(dev_f1_values)
    if not values:
        raise ValueError("no epochs recorded")
    best = max(values)
    return values.index(best) + 1


def train(config: TrainConfig, train_docs, dev_docs, vocab_size, embedding=None) -> TrainResult:
    """Run the full protocol: epochs of RMSProp with per-epoch dev evaluation.

    The parameters returned are those of the epoch with the best dev macro-F1
    (earlier epoch on ties); the full per-epoch history rides along.
    """
    config.validate()
    if not train_docs or not dev_docs:
        raise ValueError("train and dev splits must be non-empty")

    init_rng = substream(config.seed, "init")
    net = model_mod.build_model(
        config.model,
        vocab_size,
        config.n,
        config.d,
        init_rng,
        k=config.k,
        embedding=embedding,
    )
    optimizer = RmsProp(
        net.parameters(), lr=config.lr, pinned_rows=net.pinned_rows()
    )

    history = []
    best_f1 = -1.0
    best_state = None
    best_at = 0
    for epoch in range(1, config.epochs + 1):
        batches = corpus.make_batches(
            train_docs, config.batch_size, substream(config.seed, f"shuffle:{epoch}")
        )
        train_loss = train_epoch(net, optimizer, batches, config.lam)
        dev = evaluate(net, dev_docs)
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=train_loss,
                dev_accuracy=dev.accuracy,
                dev_macro_f1=dev.macro_f1,
            )
        )
        if dev.macro_f1 > best_f1:
            best_f1 = dev.macro_f1
            best_at = epoch
            best_state = {name: t.data.copy() for name, t in net.parameters()}

    assert best_at == best_epoch([h.dev_macro_f1 for h in history])
    net.load_state(best_state)
    return TrainResult(
        model=net,
        history=history,
        best_epoch=best_at,
        best_dev_f1=best_f1,
        best_state=best_state,
    )
