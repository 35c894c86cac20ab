"""Voting ensemble classifier for firm-role data points.

Ten constituent models, each a softmax regression or a one-hidden-layer
ReLU network, are trained on their own bootstrap resample with a
bounded random architecture draw scored on out-of-bag points. At
inference every model votes its argmax class; the plurality label wins
(ties broken by label rank) and the vote fraction is the confidence.

Training is deterministic: inputs are canonicalized by point id, all
randomness flows from explicit seeds, and an epoch that would raise the
full-set cross-entropy beyond tolerance is retried at half the learning
rate, which keeps the per-epoch loss monotonically non-increasing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ClassifierConfig

# Final label vocabulary in rank order: index 0 outranks everything below.
FINAL_LABELS = ("Manufacturer", "Service", "Retail", "Information")
N_CLASSES = len(FINAL_LABELS)

INITIAL_LABELS = (
    "Manufacturer",
    "Service",
    "3DPOwnProducts",
    "ConsultingEducation",
    "Retail",
    "Information",
    "Others",
)

_INITIAL_TO_FINAL = {
    "Manufacturer": "Manufacturer",
    "Service": "Service",
    "3DPOwnProducts": "Service",
    "ConsultingEducation": "Service",
    "Retail": "Retail",
    "Information": "Information",
    "Others": None,  # dropped from training entirely
}

LOSS_TOLERANCE = 1e-6
_MAX_HALVINGS = 30


class TrainingError(RuntimeError):
    pass


def map_initial_to_final(label: str) -> Optional[str]:
    """Collapse the seven annotator labels onto the four model labels;
    None means the point is dropped."""
    if label not in _INITIAL_TO_FINAL:
        raise ValueError(f"unknown initial label {label!r}; expected one of {INITIAL_LABELS}")
    return _INITIAL_TO_FINAL[label]


def label_rank(label: str) -> int:
    return FINAL_LABELS.index(label)


@dataclass(frozen=True)
class LabeledPoint:
    point_id: str
    vector: np.ndarray
    initial_label: str
    final_label: str
    annotator_id: str = ""
    round: int = 0

    @classmethod
    def from_initial(
        cls, point_id: str, vector: np.ndarray, initial_label: str,
        annotator_id: str = "", round: int = 0,
    ) -> Optional["LabeledPoint"]:
        final = map_initial_to_final(initial_label)
        if final is None:
            return None
        return cls(point_id, vector, initial_label, final, annotator_id, round)


@dataclass(frozen=True)
class Architecture:
    hidden: int           # 0 = plain softmax regression
    learning_rate: float


@dataclass
class ConstituentModel:
    arch: Architecture
    seed: int
    fingerprint: str
    training_point_ids: tuple[str, ...]
    layers: list[tuple[np.ndarray, np.ndarray]]  # [(W, b)], 1 or 2 entries
    oob_accuracy: Optional[float] = None
    loss_history: list = field(default_factory=list)  # full-set loss per epoch, not serialized

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    def logits(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] != self.input_dim:
            raise ValueError(f"expected input dimension {self.input_dim}, got {X.shape[1]}")
        return _forward(self.layers, X)[0]

    def predict_class(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)


@dataclass
class Ensemble:
    models: list[ConstituentModel]
    labels: tuple[str, ...] = FINAL_LABELS
    tie_break: str = "rank"
    metadata: dict = field(default_factory=dict)

    @property
    def n_models(self) -> int:
        return len(self.models)

    @property
    def input_dim(self) -> int:
        return self.models[0].input_dim

    def training_point_ids(self) -> set[str]:
        ids: set[str] = set()
        for m in self.models:
            ids.update(m.training_point_ids)
        return ids


@dataclass(frozen=True)
class Prediction:
    point_id: str
    votes: dict
    label: str
    confidence: float

    def to_json(self) -> dict:
        return {
            "point_id": self.point_id,
            "label": self.label,
            "confidence": self.confidence,
            "votes": dict(self.votes),
        }


# --- numerics ---------------------------------------------------------


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(layers, X: np.ndarray):
    if len(layers) == 1:
        (w, b), = layers
        return X @ w + b, None
    (w1, b1), (w2, b2) = layers
    hidden = np.maximum(X @ w1 + b1, 0.0)
    return hidden @ w2 + b2, hidden


def cross_entropy_loss(layers, X: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy of true class indices y under the model."""
    logits, _ = _forward(layers, X)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(len(y)), y].mean())


def loss_and_grad(layers, X: np.ndarray, y: np.ndarray):
    """Cross-entropy loss and its gradient w.r.t. every weight/bias.

    Returns (loss, grads) with grads mirroring the layers structure.
    """
    n = X.shape[0]
    logits, hidden = _forward(layers, X)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), y].mean())

    dz = probs.copy()
    dz[np.arange(n), y] -= 1.0
    dz /= n
    if len(layers) == 1:
        return loss, [(X.T @ dz, dz.sum(axis=0))]
    (w1, b1), (w2, b2) = layers
    dw2 = hidden.T @ dz
    db2 = dz.sum(axis=0)
    dh = dz @ w2.T
    dh[hidden <= 0.0] = 0.0
    return loss, [(X.T @ dh, dh.sum(axis=0)), (dw2, db2)]


def _init_layers(d: int, arch: Architecture, rng: np.random.Generator):
    if arch.hidden == 0:
        return [(np.zeros((d, N_CLASSES)), np.zeros(N_CLASSES))]
    h = arch.hidden
    w1 = rng.normal(0.0, np.sqrt(2.0 / d), size=(d, h))
    w2 = rng.normal(0.0, np.sqrt(1.0 / h), size=(h, N_CLASSES))
    return [(w1, np.zeros(h)), (w2, np.zeros(N_CLASSES))]


def _derive_seed(master_seed: int, *parts) -> int:
    blob = ":".join([str(master_seed), *map(str, parts)]).encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


def _canonical(data: Sequence[LabeledPoint]) -> list[LabeledPoint]:
    return sorted(data, key=lambda p: p.point_id)


def _to_arrays(data: Sequence[LabeledPoint]) -> tuple[np.ndarray, np.ndarray]:
    dims = {p.vector.shape[0] for p in data}
    if len(dims) != 1:
        raise TrainingError(f"inconsistent vector dimensions in training data: {sorted(dims)}")
    X = np.stack([np.asarray(p.vector, dtype=np.float64) for p in data])
    y = np.array([label_rank(p.final_label) for p in data], dtype=np.int64)
    return X, y


def train_single(
    data: Sequence[LabeledPoint],
    arch: Architecture,
    seed: int,
    epochs: int = 200,
    batch_size: int = 32,
) -> ConstituentModel:
    """Train one constituent model with seeded mini-batch SGD.

    Input order is canonicalized by point id, so any permutation of the
    same multiset of points yields bitwise-identical weights. An epoch
    whose full-set loss rises by more than the tolerance is rolled back
    and retried at half the learning rate.
    """
    if not data:
        raise TrainingError("empty training set")
    if len({p.final_label for p in data}) < 2:
        raise TrainingError("training data must contain at least 2 distinct final labels")
    ordered = _canonical(data)
    X, y = _to_arrays(ordered)
    n, d = X.shape

    rng = np.random.Generator(np.random.PCG64(seed))
    layers = _init_layers(d, arch, rng)
    lr = arch.learning_rate
    prev_loss = cross_entropy_loss(layers, X, y)
    if not np.isfinite(prev_loss):
        raise TrainingError(f"non-finite initial loss {prev_loss} (arch={arch})")
    history = [prev_loss]

    for epoch in range(epochs):
        perm = rng.permutation(n)
        snapshot = [(w.copy(), b.copy()) for w, b in layers]
        for _attempt in range(_MAX_HALVINGS + 1):
            for start in range(0, n, batch_size):
                idx = perm[start : start + batch_size]
                _, grads = loss_and_grad(layers, X[idx], y[idx])
                for (w, b), (dw, db) in zip(layers, grads):
                    w -= lr * dw
                    b -= lr * db
            loss = cross_entropy_loss(layers, X, y)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} (lr={lr}, arch={arch})"
                )
            if loss <= prev_loss + LOSS_TOLERANCE:
                prev_loss = loss
                history.append(loss)
                break
            # roll back the epoch and retry more conservatively
            layers = [(w.copy(), b.copy()) for w, b in snapshot]
            lr *= 0.5
        else:
            # no learning rate made progress: keep the rolled-back weights
            layers = [(w.copy(), b.copy()) for w, b in snapshot]
            history.append(prev_loss)

    ids = tuple(p.point_id for p in ordered)
    return ConstituentModel(
        arch=arch,
        seed=seed,
        fingerprint=_fingerprint(ids),
        training_point_ids=ids,
        layers=layers,
        loss_history=history,
    )


def _fingerprint(point_ids: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(point_ids).encode("utf-8")).hexdigest()


def _accuracy(model: ConstituentModel, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float((model.predict_class(X) == y).mean())


def train_ensemble(data: Sequence[LabeledPoint], cfg: ClassifierConfig) -> Ensemble:
    """Bagged ensemble: per model, one bootstrap resample of the data and
    a small architecture draw from the configured grid, scored on the
    model's out-of-bag points; the best candidate is retrained at full
    epoch count. Fully reproducible from cfg.master_seed.
    """
    ordered = _canonical(data)
    if len({p.final_label for p in ordered}) < 2:
        raise TrainingError("training data must contain at least 2 distinct final labels")
    X, y = _to_arrays(ordered)
    n = len(ordered)
    grid = [
        Architecture(h, lr) for h in cfg.hidden_grid for lr in cfg.lr_grid
    ]
    search_epochs = min(cfg.search_epochs, cfg.epochs)

    models: list[ConstituentModel] = []
    for i in range(cfg.n_models):
        model_seed = _derive_seed(cfg.master_seed, "model", i)
        rng = np.random.Generator(np.random.PCG64(_derive_seed(cfg.master_seed, "boot", i)))
        sample_idx = np.sort(rng.integers(0, n, size=n))
        oob_idx = np.setdiff1d(np.arange(n), sample_idx)
        resample = [ordered[j] for j in sample_idx]

        k = min(cfg.candidates_per_model, len(grid))
        candidate_ids = rng.choice(len(grid), size=k, replace=False)
        candidates = [grid[int(c)] for c in candidate_ids]

        best: Optional[ConstituentModel] = None
        best_score = -np.inf
        for arch in candidates:
            trial = train_single(resample, arch, model_seed, search_epochs, cfg.batch_size)
            if len(oob_idx):
                score = _accuracy(trial, X[oob_idx], y[oob_idx])
            else:
                score = _accuracy(trial, X, y)
            if score > best_score:
                best, best_score = trial, score

        assert best is not None
        if search_epochs < cfg.epochs:
            best_arch = best.arch
            best = train_single(resample, best_arch, model_seed, cfg.epochs, cfg.batch_size)
        best.oob_accuracy = float(best_score)
        models.append(best)

    # no wall-clock in the metadata: the file must be bit-reproducible
    # from (data, config); the run manifest records training timestamps
    return Ensemble(
        models=models,
        metadata={
            "master_seed": cfg.master_seed,
            "n_training_points": n,
            "data_fingerprint": _fingerprint([p.point_id for p in ordered]),
        },
    )


def predict(ensemble: Ensemble, vector: np.ndarray, point_id: str = "") -> Prediction:
    """One vote per constituent model; plurality wins, rank breaks ties."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1 or vector.shape[0] != ensemble.input_dim:
        raise ValueError(
            f"expected vector of dimension {ensemble.input_dim}, got shape {vector.shape}"
        )
    X = vector[None, :]
    votes = {label: 0 for label in ensemble.labels}
    for model in ensemble.models:
        votes[ensemble.labels[int(model.predict_class(X)[0])]] += 1
    top = max(votes.values())
    label = min(
        (lab for lab, v in votes.items() if v == top), key=label_rank
    )
    return Prediction(
        point_id=point_id,
        votes=votes,
        label=label,
        confidence=top / ensemble.n_models,
    )


def predict_batch(
    ensemble: Ensemble, vectors: np.ndarray, point_ids: Sequence[str]
) -> list[Prediction]:
    """Vectorized voting over many points at once."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[1] != ensemble.input_dim:
        raise ValueError(
            f"expected vectors of dimension {ensemble.input_dim}, got {vectors.shape[1]}"
        )
    all_votes = np.zeros((vectors.shape[0], N_CLASSES), dtype=np.int64)
    for model in ensemble.models:
        classes = model.predict_class(vectors)
        all_votes[np.arange(vectors.shape[0]), classes] += 1
    out: list[Prediction] = []
    for i, pid in enumerate(point_ids):
        votes = {label: int(all_votes[i, j]) for j, label in enumerate(ensemble.labels)}
        top = int(all_votes[i].max())
        label = ensemble.labels[int(np.argmax(all_votes[i]))]  # argmax → lowest index → highest rank
        out.append(Prediction(pid, votes, label, top / ensemble.n_models))
    return out


@dataclass
class Metrics:
    accuracy: float
    precision: dict
    recall: dict
    confusion: list  # confusion[true][pred], label order = FINAL_LABELS
    confidence_histogram: dict

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "confusion": self.confusion,
            "confusion_labels": list(FINAL_LABELS),
            "confidence_histogram": self.confidence_histogram,
        }


def evaluate(ensemble: Ensemble, test: Sequence[LabeledPoint]) -> Metrics:
    """Accuracy, per-class precision/recall, confusion matrix, and the
    confidence histogram on held-out points.

    Refuses test points that were part of any constituent's training
    resample; the evaluation protocol requires disjoint sets.
    """
    overlap = ensemble.training_point_ids() & {p.point_id for p in test}
    if overlap:
        sample = ", ".join(sorted(overlap)[:5])
        raise ValueError(
            f"{len(overlap)} test points overlap the training data (e.g. {sample})"
        )
    X, y = _to_arrays(test)
    preds = predict_batch(ensemble, X, [p.point_id for p in test])
    pred_idx = np.array([label_rank(p.label) for p in preds])

    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for t, p in zip(y, pred_idx):
        confusion[t, p] += 1
    precision = {}
    recall = {}
    for j, label in enumerate(FINAL_LABELS):
        col = confusion[:, j].sum()
        row = confusion[j, :].sum()
        precision[label] = float(confusion[j, j] / col) if col else float("nan")
        recall[label] = float(confusion[j, j] / row) if row else float("nan")
    hist: dict[str, int] = {}
    for p in preds:
        key = f"{p.confidence:.1f}"
        hist[key] = hist.get(key, 0) + 1
    return Metrics(
        accuracy=float((pred_idx == y).mean()),
        precision=precision,
        recall=recall,
        confusion=confusion.tolist(),
        confidence_histogram=dict(sorted(hist.items())),
    )


# --- serialization ----------------------------------------------------

FORMAT_TAG = "techradar-ensemble/1"


def save_ensemble(ensemble: Ensemble, path: str | Path) -> None:
    doc = {
        "format": FORMAT_TAG,
        "labels": list(ensemble.labels),
        "tie_break": ensemble.tie_break,
        "metadata": ensemble.metadata,
        "models": [
            {
                "arch": {"hidden": m.arch.hidden, "learning_rate": m.arch.learning_rate},
                "seed": m.seed,
                "fingerprint": m.fingerprint,
                "training_point_ids": list(m.training_point_ids),
                "oob_accuracy": m.oob_accuracy,
                "layers": [
                    {"w_shape": list(w.shape), "w": w.ravel().tolist(), "b": b.tolist()}
                    for w, b in m.layers
                ],
            }
            for m in ensemble.models
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_ensemble(path: str | Path) -> Ensemble:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT_TAG:
        raise ValueError(f"unsupported model file format: {doc.get('format')!r}")
    models = []
    for m in doc["models"]:
        layers = []
        for layer in m["layers"]:
            w = np.array(layer["w"], dtype=np.float64).reshape(layer["w_shape"])
            b = np.array(layer["b"], dtype=np.float64)
            layers.append((w, b))
        models.append(
            ConstituentModel(
                arch=Architecture(m["arch"]["hidden"], m["arch"]["learning_rate"]),
                seed=m["seed"],
                fingerprint=m["fingerprint"],
                training_point_ids=tuple(m["training_point_ids"]),
                layers=layers,
                oob_accuracy=m.get("oob_accuracy"),
            )
        )
    return Ensemble(
        models=models,
        labels=tuple(doc["labels"]),
        tie_break=doc.get("tie_break", "rank"),
        metadata=doc.get("metadata", {}),
    )
