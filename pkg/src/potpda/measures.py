"""Discrete measures, labeled samples, cost matrices, and linear hypotheses."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "LabeledSample",
    "PdaDataset",
    "DiscreteMeasure",
    "CostMatrix",
    "LinearFeatureMap",
    "LipschitzClassifier",
    "SoftmaxClassifier",
    "Hypothesis",
    "LossSpec",
    "clipped_abs_loss",
    "zero_one_loss",
    "cross_entropy_loss",
    "empirical_feature_measure",
    "feature_cost_matrix",
    "joint_cost_matrix",
    "load_dataset",
    "save_dataset",
]


@dataclass(frozen=True)
class LabeledSample:
    """One labeled instance: input vector and a class id or real label."""

    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or x.size < 1:
            raise ValueError("sample input must be a vector of dimension >= 1")
        if not np.all(np.isfinite(x)) or not np.isfinite(self.y):
            raise ValueError("sample values must be finite")
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class PdaDataset:
    """Labeled source set plus unlabeled target inputs.

    ``target_y_hidden`` is evaluation-only ground truth; training code must
    never read it.  For integer class labels the hidden target label set has
    to be a subset of the source label set.
    """

    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    target_y_hidden: np.ndarray | None = None

    def __post_init__(self):
        sx = np.atleast_2d(np.asarray(self.source_x, dtype=float))
        tx = np.atleast_2d(np.asarray(self.target_x, dtype=float))
        sy = np.asarray(self.source_y)
        if sx.shape[0] < 1 or tx.shape[0] < 1:
            raise ValueError("need at least one source and one target sample")
        if sx.shape[1] != tx.shape[1]:
            raise ValueError("source and target input dimensions differ")
        if sy.shape != (sx.shape[0],):
            raise ValueError("source labels misaligned with source inputs")
        object.__setattr__(self, "source_x", sx)
        object.__setattr__(self, "source_y", sy)
        object.__setattr__(self, "target_x", tx)
        if self.target_y_hidden is not None:
            ty = np.asarray(self.target_y_hidden)
            if ty.shape != (tx.shape[0],):
                raise ValueError("hidden target labels misaligned with target inputs")
            if np.issubdtype(sy.dtype, np.integer) and np.issubdtype(ty.dtype, np.integer):
                if not set(np.unique(ty)) <= set(np.unique(sy)):
                    raise ValueError("hidden target labels outside the source label set")
            object.__setattr__(self, "target_y_hidden", ty)

    @classmethod
    def from_samples(cls, source: Sequence[LabeledSample], target_inputs, target_labels_hidden=None):
        sx = np.stack([s.x for s in source])
        sy = np.asarray([s.y for s in source])
        return cls(sx, sy, np.atleast_2d(np.asarray(target_inputs, dtype=float)), target_labels_hidden)

    @property
    def n_s(self) -> int:
        return self.source_x.shape[0]

    @property
    def n_t(self) -> int:
        return self.target_x.shape[0]

    @property
    def dim(self) -> int:
        return self.source_x.shape[1]


@dataclass(frozen=True)
class DiscreteMeasure:
    """Nonnegative masses over support points referenced by index.

    The total mass need not be 1 (the source side is inflated to 1/beta).
    """

    masses: np.ndarray
    support_ids: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.masses, dtype=float)
        ids = np.asarray(self.support_ids, dtype=int)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("empty measure")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("masses must be finite and nonnegative")
        if ids.shape != w.shape:
            raise ValueError("support ids misaligned with masses")
        object.__setattr__(self, "masses", w)
        object.__setattr__(self, "support_ids", ids)

    @property
    def total(self) -> float:
        return float(self.masses.sum())


@dataclass(frozen=True)
class CostMatrix:
    """Nonnegative finite n_s x n_t ground-cost matrix."""

    entries: np.ndarray
    kind: Literal["feature", "joint"] = "feature"

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if not np.all(np.isfinite(c)):
            raise ValueError("cost entries must be finite")
        if np.any(c < 0):
            raise ValueError("cost entries must be nonnegative")
        object.__setattr__(self, "entries", c)

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class LinearFeatureMap:
    """Linear feature extractor x -> W x with exactly computable Lipschitz norm."""

    matrix: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if not np.all(np.isfinite(w)):
            raise ValueError("feature map must be finite")
        object.__setattr__(self, "matrix", w)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.matrix.T

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]

    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


@dataclass(frozen=True)
class LipschitzClassifier:
    """Scalar head t -> clamp(<v, t> + b, 0, 1) with certificate ||v|| <= gamma."""

    v: np.ndarray
    b: float
    gamma: float

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        object.__setattr__(self, "v", v)
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    def is_certified(self, tol: float = 1e-9) -> bool:
        return float(np.linalg.norm(self.v)) <= self.gamma + tol

    def __call__(self, feats: np.ndarray) -> np.ndarray:
        feats = np.atleast_2d(np.asarray(feats, dtype=float))
        return np.clip(feats @ self.v + self.b, 0.0, 1.0)


@dataclass(frozen=True)
class SoftmaxClassifier:
    """Linear-softmax K-class head for the cross-entropy regime."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weight, dtype=float))
        b = np.atleast_1d(np.asarray(self.bias, dtype=float))
        if b.shape[0] != w.shape[0]:
            raise ValueError("bias length must match class count")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    def logits(self, feats: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(feats, dtype=float)) @ self.weight.T + self.bias

    def probabilities(self, feats: np.ndarray) -> np.ndarray:
        z = self.logits(feats)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def __call__(self, feats: np.ndarray) -> np.ndarray:
        return self.logits(feats).argmax(axis=1)


@dataclass(frozen=True)
class Hypothesis:
    """Composite predictor w = g o f."""

    feature_map: LinearFeatureMap
    classifier: LipschitzClassifier | SoftmaxClassifier

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.classifier(self.feature_map(x))


@dataclass(frozen=True)
class LossSpec:
    """Per-pair label loss.  Metric kinds are bounded metrics mapping into [0,1]."""

    kind: Literal["clipped-abs", "zero-one", "cross-entropy"]
    lipschitz: float = 0.0

    METRIC_KINDS = ("clipped-abs", "zero-one")

    def __post_init__(self):
        if self.kind == "clipped-abs" and self.lipschitz != 1.0:
            raise ValueError("clipped-abs loss has Lipschitz constant 1")
        if self.lipschitz < 0:
            raise ValueError("Lipschitz constant must be nonnegative")

    @property
    def is_metric(self) -> bool:
        return self.kind in self.METRIC_KINDS

    def pairwise(self, y: np.ndarray, y_other: np.ndarray) -> np.ndarray:
        """Matrix of losses between every y (rows) and every y_other (columns)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        y_other = np.atleast_1d(np.asarray(y_other, dtype=float))
        if self.kind == "clipped-abs":
            return np.minimum(np.abs(y[:, None] - y_other[None, :]), 1.0)
        if self.kind == "zero-one":
            return (y[:, None] != y_other[None, :]).astype(float)
        raise ValueError("cross-entropy loss has no scalar pairwise form")

    def elementwise(self, y_pred: np.ndarray, y_true: np.ndarray) -> np.ndarray:
        y_pred = np.atleast_1d(np.asarray(y_pred, dtype=float))
        y_true = np.atleast_1d(np.asarray(y_true, dtype=float))
        if self.kind == "clipped-abs":
            return np.minimum(np.abs(y_pred - y_true), 1.0)
        if self.kind == "zero-one":
            return (y_pred != y_true).astype(float)
        raise ValueError("cross-entropy loss has no scalar elementwise form")


def clipped_abs_loss() -> LossSpec:
    return LossSpec("clipped-abs", lipschitz=1.0)


def zero_one_loss() -> LossSpec:
    return LossSpec("zero-one")


def cross_entropy_loss() -> LossSpec:
    return LossSpec("cross-entropy")


def empirical_feature_measure(samples, feature_map: LinearFeatureMap, scale: float):
    """Uniform measure with mass scale/n per atom over the mapped samples.

    Use ``scale = 1/beta`` for the inflated source side and 1 for the target.
    Returns the measure together with the feature array its atoms live on.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    n = x.shape[0]
    if n == 0 or x.size == 0:
        raise ValueError("empty measure")
    feats = feature_map(x)
    measure = DiscreteMeasure(np.full(n, scale / n), np.arange(n))
    return measure, feats


def feature_cost_matrix(source_feats, target_feats, gamma: float) -> CostMatrix:
    """Cost (i, j) = gamma * ||f_i - f~_j|| between precomputed features."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    fs = np.atleast_2d(np.asarray(source_feats, dtype=float))
    ft = np.atleast_2d(np.asarray(target_feats, dtype=float))
    if fs.shape[1] != ft.shape[1]:
        raise ValueError("feature dimensions differ")
    return CostMatrix(gamma * cdist(fs, ft), kind="feature")


def joint_cost_matrix(source_feats, source_labels, target_feats, predicted_labels,
                      zeta_gamma: float, loss: LossSpec) -> CostMatrix:
    """Joint ground cost: zeta*gamma * feature distance + label-loss distance.

    zeta_gamma = 0 degenerates to the pure label-distance matrix.
    """
    if zeta_gamma < 0:
        raise ValueError("zeta_gamma must be nonnegative")
    if not loss.is_metric:
        raise ValueError("joint cost requires metric loss")
    fs = np.atleast_2d(np.asarray(source_feats, dtype=float))
    ft = np.atleast_2d(np.asarray(target_feats, dtype=float))
    if fs.shape[1] != ft.shape[1]:
        raise ValueError("feature dimensions differ")
    y = np.asarray(source_labels, dtype=float)
    y_pred = np.asarray(predicted_labels, dtype=float)
    if y_pred.shape[0] != ft.shape[0]:
        raise ValueError("predicted labels misaligned with target features")
    return CostMatrix(zeta_gamma * cdist(fs, ft) + loss.pairwise(y, y_pred), kind="joint")


def load_dataset(path) -> PdaDataset:
    """Read the CSV task format: split, x0..x{d-1}, y and optional y_hidden."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: missing header")
        x_cols = sorted((c for c in reader.fieldnames if c.startswith("x")),
                        key=lambda c: int(c[1:]))
        if not x_cols:
            raise ValueError(f"{path}: no input columns x0..")
        has_hidden = "y_hidden" in reader.fieldnames
        src_x, src_y, tgt_x, tgt_y = [], [], [], []
        for row in reader:
            vec = [float(row[c]) for c in x_cols]
            if row["split"] == "source":
                src_x.append(vec)
                src_y.append(row["y"])
            elif row["split"] == "target":
                tgt_x.append(vec)
                if has_hidden and row["y_hidden"] != "":
                    tgt_y.append(row["y_hidden"])
            else:
                raise ValueError(f"{path}: unknown split {row['split']!r}")
    if not src_x or not tgt_x:
        raise ValueError(f"{path}: need both source and target rows")
    hidden = None
    if tgt_y:
        if len(tgt_y) != len(tgt_x):
            raise ValueError(f"{path}: y_hidden must cover every target row or none")
        hidden = _parse_labels(tgt_y)
    return PdaDataset(np.asarray(src_x), _parse_labels(src_y), np.asarray(tgt_x), hidden)


def _parse_labels(raw: list) -> np.ndarray:
    vals = [float(v) for v in raw]
    if all(v == int(v) for v in vals):
        return np.asarray(vals, dtype=int)
    return np.asarray(vals, dtype=float)


def save_dataset(ds: PdaDataset, path) -> None:
    """Write the CSV task format, including y_hidden when ground truth exists."""
    d = ds.dim
    cols = ["split"] + [f"x{i}" for i in range(d)] + ["y"]
    if ds.target_y_hidden is not None:
        cols.append("y_hidden")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for i in range(ds.n_s):
            row = ["source"] + [repr(float(v)) for v in ds.source_x[i]] + [ds.source_y[i]]
            if ds.target_y_hidden is not None:
                row.append("")
            writer.writerow(row)
        for j in range(ds.n_t):
            row = ["target"] + [repr(float(v)) for v in ds.target_x[j]] + [""]
            if ds.target_y_hidden is not None:
                row.append(ds.target_y_hidden[j])
            writer.writerow(row)
