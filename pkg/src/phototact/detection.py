"""Stiff-inclusion detection from depth-map statistics.

Each press is summarized by the mean and population standard deviation of
the in-disc depths.  Features are standardized with training-set statistics
and separated by a linear max-margin classifier trained with deterministic
full-batch subgradient descent on the hinge objective.  A press is labeled
"tumor" when the decision value is strictly positive; exact ties fall on the
"no-tumor" side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import DeformationMap

TUMOR = "tumor"
NO_TUMOR = "no-tumor"

_DETECTOR_FORMAT = "phototact-detector"
_DETECTOR_VERSION = 1


@dataclass(frozen=True)
class FeatureVector:
    """Mean and population standard deviation of in-disc depth, in mm."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.sigma)):
            raise ValueError("features must be finite")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    def as_array(self):
        return np.array([self.mu, self.sigma], dtype=np.float64)


def extract_features(dmap: DeformationMap) -> FeatureVector:
    if not dmap.mask.any():
        raise ValueError("empty mask")
    depths = dmap.depths[dmap.mask].astype(np.float64)
    return FeatureVector(mu=float(depths.mean()), sigma=float(depths.std()))


@dataclass(frozen=True)
class Standardizer:
    """Per-feature affine transform to zero mean, unit variance."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be matching 1-D vectors")
        if np.any(std <= 0):
            raise ValueError("zero variance feature")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def apply(self, features):
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std


def fit_standardizer(features) -> Standardizer:
    """Fit on an (N, F) matrix using population (divide-by-N) variance."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two samples to standardize")
    std = x.std(axis=0)
    if np.any(std == 0):
        raise ValueError("zero variance feature")
    return Standardizer(mean=x.mean(axis=0), std=std)


@dataclass(frozen=True)
class DetectorModel:
    """Linear decision function over standardized (mu, sigma) features."""

    standardizer: Standardizer
    weights: np.ndarray            # (w_mu, w_sigma), standardized space
    bias: float
    training_meta: dict | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (2,):
            raise ValueError("weights must be (w_mu, w_sigma)")
        if not np.any(w != 0):
            raise ValueError("weights must not both be zero")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def _label_array(labels):
    y = np.asarray(labels, dtype=np.float64)
    if not np.all(np.abs(y) == 1):
        raise ValueError("labels must be +1 (tumor) or -1 (no tumor)")
    return y


def train_svm(
    standardized,
    labels,
    c: float = 1.0,
    seed: int = 0,
    standardizer: Standardizer | None = None,
    max_iter: int = 20000,
) -> DetectorModel:
    """Hinge-loss linear classifier by deterministic full-batch subgradient descent.

    Minimizes ||w||^2/2 + c * sum(hinge) with a fixed 1/(1 + t/100) step
    schedule, stopping early at zero hinge loss.  The best iterate by
    objective value is kept.  ``seed`` is accepted for interface uniformity;
    the procedure has no stochastic component.
    """
    del seed
    z = np.asarray(standardized, dtype=np.float64)
    y = _label_array(labels)
    if z.ndim != 2 or z.shape[0] != y.shape[0]:
        raise ValueError("features and labels must align")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("both classes must be present")
    if c <= 0:
        raise ValueError("regularization parameter must be positive")
    if standardizer is None:
        standardizer = Standardizer(mean=np.zeros(z.shape[1]), std=np.ones(z.shape[1]))

    n = z.shape[0]
    scale = c * n  # objective rescaled to ||w||^2/(2cn) + mean(hinge)
    w = np.zeros(z.shape[1])
    b = 0.0
    best = (np.inf, w.copy(), b)
    converged = False
    iterations = 0
    for t in range(max_iter):
        margins = y * (z @ w + b)
        hinge = np.maximum(0.0, 1.0 - margins)
        objective = float(w @ w) / (2.0 * scale) + float(hinge.mean())
        if objective < best[0]:
            best = (objective, w.copy(), b)
        iterations = t + 1
        if not hinge.any():
            converged = True
            break
        violating = hinge > 0.0
        grad_w = w / scale - (y[violating, None] * z[violating]).sum(axis=0) / n
        grad_b = -float(y[violating].sum()) / n
        lr = 0.5 / (1.0 + t / 100.0)
        w = w - lr * grad_w
        b = b - lr * grad_b

    if not converged:
        _, w, b = best
    meta = {"c": c, "iterations": iterations, "converged": converged}
    return DetectorModel(standardizer=standardizer, weights=w, bias=float(b), training_meta=meta)


def fit_detector(features, labels, c: float = 1.0, seed: int = 0) -> DetectorModel:
    """Standardize raw (mu, sigma) features, then train the classifier."""
    x = np.asarray(features, dtype=np.float64)
    standardizer = fit_standardizer(x)
    return train_svm(standardizer.apply(x), labels, c=c, seed=seed, standardizer=standardizer)


def decision_value(model: DetectorModel, features) -> float:
    """Signed distance-like score; positive means tumor."""
    fv = features.as_array() if isinstance(features, FeatureVector) else np.asarray(features, dtype=np.float64)
    z = model.standardizer.apply(fv)
    return float(model.weights @ z + model.bias)


def classify(model: DetectorModel, features) -> str:
    return TUMOR if decision_value(model, features) > 0.0 else NO_TUMOR


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    true_positive: int
    true_negative: int
    false_positive: int
    false_negative: int
    decision_values: tuple

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "true_positive": self.true_positive,
            "true_negative": self.true_negative,
            "false_positive": self.false_positive,
            "false_negative": self.false_negative,
            "decision_values": list(self.decision_values),
        }


def evaluate(model: DetectorModel, features, labels) -> EvalReport:
    """Accuracy, confusion counts, and per-sample decision values."""
    x = np.asarray(features, dtype=np.float64)
    y = _label_array(labels)
    if x.shape[0] == 0:
        raise ValueError("evaluation set must be non-empty")
    values = np.array([decision_value(model, row) for row in x])
    predicted = np.where(values > 0.0, 1.0, -1.0)
    tp = int(np.sum((predicted > 0) & (y > 0)))
    tn = int(np.sum((predicted < 0) & (y < 0)))
    fp = int(np.sum((predicted > 0) & (y < 0)))
    fn = int(np.sum((predicted < 0) & (y > 0)))
    return EvalReport(
        accuracy=float((tp + tn) / y.shape[0]),
        true_positive=tp,
        true_negative=tn,
        false_positive=fp,
        false_negative=fn,
        decision_values=tuple(float(v) for v in values),
    )


def stratified_split(labels, train_fraction: float = 0.8, seed: int = 0):
    """Seed-deterministic per-class split; returns (train_idx, test_idx)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train fraction must lie in (0, 1)")
    y = np.asarray(labels)
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 91], dtype=np.uint64)))
    train_idx, test_idx = [], []
    for value in np.unique(y):
        idx = np.flatnonzero(y == value)
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(train_fraction * len(idx)))
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


# ---------------------------------------------------------------------------
# Detector files


def save_detector(path, model: DetectorModel):
    doc = {
        "format": _DETECTOR_FORMAT,
        "version": _DETECTOR_VERSION,
        "weights": {"mu": model.weights[0], "sigma": model.weights[1]},
        "bias": model.bias,
        "standardizer": {"mean": model.standardizer.mean.tolist(), "std": model.standardizer.std.tolist()},
        "label_convention": "decision_value > 0 => tumor",
        "training": model.training_meta or {},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_detector(path) -> DetectorModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != _DETECTOR_FORMAT:
        raise ValueError("not a detector file")
    if doc.get("version") != _DETECTOR_VERSION:
        raise ValueError(f"unsupported detector version {doc.get('version')}")
    standardizer = Standardizer(
        mean=np.array(doc["standardizer"]["mean"], dtype=np.float64),
        std=np.array(doc["standardizer"]["std"], dtype=np.float64),
    )
    return DetectorModel(
        standardizer=standardizer,
        weights=np.array([doc["weights"]["mu"], doc["weights"]["sigma"]], dtype=np.float64),
        bias=float(doc["bias"]),
        training_meta=doc.get("training") or None,
    )
