"""Deep belief network with automatic layer generation and a softmax head.

Layers are trained greedily. After each layer the stack-wide sums of final
walking distance and final energy magnitude are compared with two thresholds;
a new RBM is appended only when both are exceeded. A softmax head on the top
activations gives class probabilities, and ``fine_tune`` adds an explicit
pattern -> label override table built from the training set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import softmax

from .dataset import LabeledDataset, category_name
from .errors import NumericError, ShapeError, StructureError
from .rbm import RbmParameters, hidden_conditional
from .structure import (EpochRecord, StructuralEvent, StructureConfig, data_visible_bias, init_layer,
                        train_rbm)


@dataclass
class DbnModel:
    layers: list[RbmParameters]
    head_weights: np.ndarray  # (M, J_top)
    head_bias: np.ndarray  # (M,)
    label_names: list[str]
    overrides: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.head_weights = np.asarray(self.head_weights, dtype=np.float64)
        self.head_bias = np.asarray(self.head_bias, dtype=np.float64)
        if not self.layers:
            raise ShapeError("layers: a DBN needs at least one RBM")
        for lower, upper in zip(self.layers, self.layers[1:]):
            if lower.n_hidden != upper.n_visible:
                raise ShapeError(f"layer chain: {lower.n_hidden} hidden units feed {upper.n_visible} visible units")
        m = len(self.label_names)
        if m < 2:
            raise ShapeError("label axis: at least two classes are required")
        if self.head_weights.shape != (m, self.layers[-1].n_hidden) or self.head_bias.shape != (m,):
            raise ShapeError(f"head: expected weights {(m, self.layers[-1].n_hidden)} and bias {(m,)}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_visible

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    @property
    def hidden_sizes(self) -> list[int]:
        return [p.n_hidden for p in self.layers]

    @classmethod
    def with_fresh_head(cls, layers, label_names) -> "DbnModel":
        m = len(label_names)
        return cls(list(layers), np.zeros((m, layers[-1].n_hidden)), np.zeros(m), list(label_names))


@dataclass
class LayerStats:
    wd: list[float] = field(default_factory=list)  # final-epoch wd_total per layer
    energy: list[float] = field(default_factory=list)  # |final-epoch mean energy| per layer

    def add(self, wd_total: float, mean_energy: float) -> None:
        self.wd.append(float(wd_total))
        self.energy.append(abs(float(mean_energy)))

    @property
    def k(self) -> int:
        return len(self.wd)


def propagate(model: DbnModel, v) -> list[np.ndarray]:
    """Mean-field activations h^1..h^L for input ``v`` (vector or batch)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.input_dim:
        raise ShapeError(f"visible axis: expected length {model.input_dim}, got shape {v.shape}")
    out = []
    h = v
    for params in model.layers:
        h = hidden_conditional(h, params)
        out.append(h)
    return out


def head_logits(model: DbnModel, top) -> np.ndarray:
    return np.asarray(top) @ model.head_weights.T + model.head_bias


def classify(model: DbnModel, v) -> np.ndarray:
    """Softmax class probabilities (max-subtracted, so large logits are safe)."""
    return softmax(head_logits(model, propagate(model, v)[-1]), axis=-1)


def top_pattern(top: np.ndarray) -> str:
    """Binary signature of a top-layer activation vector, thresholded at 0.5."""
    return "".join("1" if x >= 0.5 else "0" for x in top)


@dataclass
class Prediction:
    labels: np.ndarray
    probabilities: np.ndarray
    override_fired: np.ndarray


def predict(model: DbnModel, X, use_fine_tune: bool = True) -> Prediction:
    """Argmax labels for a batch, consulting the override table when asked."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    top = propagate(model, X)[-1]
    probs = softmax(head_logits(model, top), axis=-1)
    labels = probs.argmax(axis=1)
    fired = np.zeros(len(labels), dtype=bool)
    if use_fine_tune and model.overrides:
        for i, row in enumerate(top):
            label = model.overrides.get(top_pattern(row))
            if label is not None:
                labels[i] = label
                fired[i] = True
    return Prediction(labels, probs, fired)


def train_head(model: DbnModel, train: LabeledDataset, epochs: int = 200, learning_rate: float = 0.5,
               rng: Optional[np.random.Generator] = None, batch_size: int = 64) -> DbnModel:
    """Mini-batch gradient descent on softmax cross-entropy over frozen top features.

    Top-layer activations can sit in a narrow band around 0.5, so each step is
    taken with respect to standardized features and mapped back onto the raw
    head weights. Logits are always computed from the raw activations, and
    ``learning_rate=0`` leaves the head untouched.
    """
    if len(train) == 0:
        raise ValueError("training set is empty")
    if train.labels.max() >= model.n_classes or train.labels.min() < 0:
        raise ValueError("label out of range for the head")
    rng = rng or np.random.default_rng()
    features = propagate(model, train.X)[-1]
    mean = features.mean(axis=0)
    scale = features.std(axis=0) + 1e-8
    z = (features - mean) / scale
    targets = np.eye(model.n_classes)[train.labels]
    W = model.head_weights.copy()
    b = model.head_bias.copy()
    n = len(train)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            err = softmax(features[idx] @ W.T + b, axis=1) - targets[idx]
            dW = learning_rate * (err.T @ z[idx]) / idx.size / scale
            W -= dW
            b -= learning_rate * err.mean(axis=0) - dW @ mean
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
        raise NumericError("head training produced non-finite weights")
    return replace(model, head_weights=W, head_bias=b, overrides=dict(model.overrides))


def check_layer_generation(stats: LayerStats, config: StructureConfig) -> bool:
    """Both stack-wide sums (WD and energy magnitude) must exceed their thresholds."""
    k = stats.k
    if k == 0 or k >= config.max_layers:
        return False
    scale = k if config.scale_layer_thresholds else 1
    return sum(stats.wd) > config.theta_L1 * scale and sum(stats.energy) > config.theta_L2 * scale


def append_layer(model: DbnModel, initial_hidden: int, rng: np.random.Generator,
                 max_layers: Optional[int] = None, init_std: float = 0.01) -> DbnModel:
    if initial_hidden < 1:
        raise StructureError("initial_hidden must be >= 1")
    if max_layers is not None and len(model.layers) >= max_layers:
        raise StructureError(f"layer cap reached (max_layers={max_layers})")
    new = RbmParameters.initialize(model.layers[-1].n_hidden, initial_hidden, rng, init_std)
    return DbnModel.with_fresh_head(model.layers + [new], model.label_names)


@dataclass
class TrainingRun:
    model: DbnModel
    history: list[EpochRecord]
    events: list[StructuralEvent]
    layer_stats: LayerStats


def train_adaptive(train: LabeledDataset, config: StructureConfig, rng: np.random.Generator,
                   on_epoch: Optional[Callable[[EpochRecord], None]] = None,
                   train_classifier: bool = True,
                   on_layer: Optional[Callable[[DbnModel], None]] = None) -> TrainingRun:
    """Greedy layer-wise training with neuron and layer generation, then the head.

    ``on_epoch`` receives every metrics row as it is produced; ``on_layer``
    receives the (untrained-head) model after each finished layer.
    """
    if len(train) == 0:
        raise ValueError("training set is empty")
    history: list[EpochRecord] = []
    events: list[StructuralEvent] = []
    stats = LayerStats()
    inputs = train.X
    model = None
    while True:
        layer = 0 if model is None else len(model.layers)
        if model is None:
            params = init_layer(inputs, config.initial_hidden, config, rng)
        else:
            model = append_layer(model, config.initial_hidden, rng, config.max_layers, config.init_std)
            params = model.layers[-1]
            if config.visible_bias_init == "data":
                params.visible_bias = data_visible_bias(inputs)
        result = train_rbm(inputs, config, rng, layer=layer, params=params, on_epoch=on_epoch)
        history += result.history
        events += result.events
        layers = ([] if model is None else model.layers[:-1]) + [result.params]
        model = DbnModel.with_fresh_head(layers, train.label_names)
        if on_layer is not None:
            on_layer(model)
        final = result.history[-1]
        stats.add(final.wd_total, final.mean_energy)
        if not check_layer_generation(stats, config):
            break
        inputs = hidden_conditional(inputs, result.params)
        events.append(StructuralEvent(layer + 1, final.epoch, "layer", [], config.initial_hidden))

    if train_classifier:
        model = train_head(model, train, config.head_epochs, config.head_learning_rate, rng,
                           config.head_batch_size)
    return TrainingRun(model, history, events, stats)


@dataclass
class FineTuneReport:
    overrides_added: int
    misclassified_before: int
    misclassified_after: int
    ties: int  # pattern groups left to the model because no label strictly won


def fine_tune(model: DbnModel, train: LabeledDataset) -> tuple[DbnModel, FineTuneReport]:
    """Patch the classifier with a pattern -> label table from training frequencies.

    Samples are grouped by their binarized top-layer pattern. A group gets an
    override to its most frequent label only when that label strictly beats
    both every other label and the number of samples the unpatched model
    already gets right in the group; otherwise the model's output is kept.
    The training error therefore never increases.
    """
    top = propagate(model, train.X)[-1]
    base = predict(model, train.X, use_fine_tune=True).labels
    groups: dict[str, list[int]] = {}
    for i, row in enumerate(top):
        groups.setdefault(top_pattern(row), []).append(i)
    overrides = dict(model.overrides)
    added = ties = 0
    for pattern, idx in groups.items():
        labels = train.labels[idx]
        correct = int(np.sum(base[idx] == labels))
        if correct == len(idx):
            continue
        counts = np.bincount(labels, minlength=model.n_classes)
        best = int(counts.argmax())
        if np.sum(counts == counts[best]) > 1 or counts[best] <= correct:
            ties += 1
            continue
        overrides[pattern] = best
        added += 1
    tuned = replace(model, overrides=overrides)
    after = int(np.sum(predict(tuned, train.X).labels != train.labels))
    return tuned, FineTuneReport(added, int(np.sum(base != train.labels)), after, ties)


@dataclass
class CategoryResult:
    name: str
    incorrect: int
    total: int

    @property
    def accuracy(self) -> float:
        return 1.0 - self.incorrect / self.total if self.total else float("nan")

    def cell(self) -> str:
        return f"{100 * self.accuracy:.1f}% ({self.incorrect}/{self.total})"


@dataclass
class EvalReport:
    categories: list[CategoryResult]
    confusion: np.ndarray  # rows: true label, columns: predicted label
    label_names: list[str]
    fine_tuned: bool = False

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def incorrect(self) -> int:
        return self.total - int(np.trace(self.confusion))

    @property
    def accuracy(self) -> float:
        return 1.0 - self.incorrect / self.total

    def to_dict(self) -> dict:
        return {
            "fine_tuned": self.fine_tuned,
            "label_names": self.label_names,
            "categories": [{"category": c.name, "accuracy": c.accuracy, "incorrect": c.incorrect,
                            "total": c.total} for c in self.categories],
            "overall": {"accuracy": self.accuracy, "incorrect": self.incorrect, "total": self.total},
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        cats = [CategoryResult(c["category"], c["incorrect"], c["total"]) for c in data["categories"]]
        return cls(cats, np.array(data["confusion"], dtype=np.int64), data["label_names"],
                   data.get("fine_tuned", False))


def evaluate(model: DbnModel, data: LabeledDataset, use_fine_tune: bool = False) -> EvalReport:
    """Per-category accuracy with (incorrect/total) counts and a confusion matrix."""
    if len(data) == 0:
        raise ValueError("evaluation set is empty")
    pred = predict(model, data.X, use_fine_tune).labels
    return report_from_predictions(pred, data, model.n_classes, use_fine_tune)


def report_from_predictions(pred, data: LabeledDataset, n_classes: int, fine_tuned: bool = False) -> EvalReport:
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (data.labels, pred), 1)
    cats = []
    seen = []
    for key in data.categories():
        if key not in seen:
            seen.append(key)
    order = {"deck": 0, "wall": 1, "pavement": 2}
    for structure, cracked in sorted(seen, key=lambda k: (order.get(k[0], 9), k[1])):
        mask = np.array([(s, c) == (structure, cracked) for s, c in data.categories()])
        wrong = int(np.sum(pred[mask] != data.labels[mask]))
        cats.append(CategoryResult(category_name(structure, cracked), wrong, int(mask.sum())))
    return EvalReport(cats, confusion, list(data.label_names), fine_tuned)


def format_table(test: EvalReport, train: Optional[EvalReport] = None) -> str:
    """Text table in the shape ``Category | Train | Test (incorrect/total)``."""
    train_acc = {c.name: c for c in train.categories} if train else {}
    rows = [("Category", "Train", "Test (incorrect/total)")]
    for c in test.categories:
        t = train_acc.get(c.name)
        rows.append((c.name, f"{100 * t.accuracy:.1f}%" if t else "-", c.cell()))
    overall = CategoryResult("Overall", test.incorrect, test.total)
    rows.append(("Overall", f"{100 * train.accuracy:.1f}%" if train else "-", overall.cell()))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = [" | ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
