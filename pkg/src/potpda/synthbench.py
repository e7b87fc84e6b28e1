"""Synthetic partial-adaptation tasks and the desk-scale ablation harness."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .measures import PdaDataset
from .pot import entropic_partial_ot
from .warmpot import ModelParams, TrainConfig, train
from .weights import WeightVector, weight_histogram

__all__ = [
    "TaskSpec",
    "BenchResult",
    "generate_pda_task",
    "outlier_weight_share",
    "target_accuracy",
    "final_source_weights",
    "compare_schemes",
    "sensitivity_sweep",
]


@dataclass(frozen=True)
class TaskSpec:
    """Gaussian-blob task: K source classes, the first `shared` live in the target."""

    K: int = 5
    shared: int = 3
    d: int = 4
    n_s: int = 200
    n_t: int = 120
    separation: float = 4.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.shared <= self.K:
            raise ValueError("need 1 <= shared <= K")
        if self.n_s < self.shared or self.n_t < self.shared:
            raise ValueError("sample counts must be at least the shared class count")
        if self.separation <= 0:
            raise ValueError("separation must be positive")
        if self.noise <= 0:
            raise ValueError("noise must be positive")


@dataclass(frozen=True)
class BenchResult:
    """One ablation row: accuracy statistics and weight diagnostics per scheme."""

    scheme: str
    accuracies: tuple
    acc_mean: float
    acc_std: float
    outlier_share: float
    outlier_shares: tuple
    histogram: np.ndarray
    failures: tuple = ()


def _draw_centers(spec: TaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample K centers with pairwise distance >= separation."""
    box = spec.separation * spec.K
    centers = []
    for _ in range(100_000):
        c = rng.uniform(0.0, box, size=spec.d)
        if all(np.linalg.norm(c - o) >= spec.separation for o in centers):
            centers.append(c)
            if len(centers) == spec.K:
                return np.asarray(centers)
    raise RuntimeError("could not place class centers; lower K or separation")


def generate_pda_task(spec: TaskSpec) -> PdaDataset:
    """Source covers all K classes; the target only the first `shared`.

    Labels are round-robin (balanced up to one sample), features are the class
    center plus isotropic noise.  Deterministic for a fixed spec.
    """
    rng = np.random.default_rng(spec.seed)
    centers = _draw_centers(spec, rng)
    source_y = rng.permutation(np.arange(spec.n_s) % spec.K)
    target_y = rng.permutation(np.arange(spec.n_t) % spec.shared)
    source_x = centers[source_y] + rng.normal(scale=spec.noise, size=(spec.n_s, spec.d))
    target_x = centers[target_y] + rng.normal(scale=spec.noise, size=(spec.n_t, spec.d))
    return PdaDataset(source_x, source_y, target_x, target_y)


def outlier_weight_share(weights: WeightVector | np.ndarray, source_labels, shared: int) -> float:
    """Fraction of total source weight on classes the target never contains."""
    w = weights.values if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
    labels = np.asarray(source_labels)
    total = float(w.sum())
    if total <= 0:
        raise ValueError("total weight is zero")
    return float(w[labels >= shared].sum() / total)


def target_accuracy(params: ModelParams, ds: PdaDataset) -> float:
    if ds.target_y_hidden is None:
        raise ValueError("accuracy needs hidden target labels")
    return float(np.mean(params.predict(ds.target_x) == np.asarray(ds.target_y_hidden)))


def final_source_weights(params: ModelParams, ds: PdaDataset, cfg: TrainConfig):
    """End-of-training full-dataset plan weights, raw and cap-normalized."""
    a = np.full(ds.n_s, 1.0 / (cfg.beta * ds.n_s))
    b = np.full(ds.n_t, 1.0 / ds.n_t)
    feats_s = params.features(ds.source_x)
    feats_t = params.features(ds.target_x)
    probs_t = params.probabilities(ds.target_x)
    source_y = np.asarray(ds.source_y, dtype=int)
    ce = -np.log(np.maximum(probs_t[:, source_y], 1e-300)).T
    dist = np.linalg.norm(feats_s[:, None, :] - feats_t[None, :, :], axis=2)
    cost = cfg.eta1 * dist + cfg.eta2 * ce
    plan = entropic_partial_ot(a, b, cost, min(cfg.alpha_max, 1.0), cfg.solver())
    p_hat = plan.matrix.sum(axis=1)
    normalized = np.clip(p_hat * cfg.beta * ds.n_s, 0.0, 1.0)
    return WeightVector(p_hat, cfg.alpha_max, "warmpot"), normalized


def _seed_list(seeds) -> list[int]:
    if isinstance(seeds, int):
        return list(range(seeds))
    return list(seeds)


def compare_schemes(spec: TaskSpec, cfg: TrainConfig, schemes: Sequence[str],
                    seeds) -> list[BenchResult]:
    """Train one model per (scheme, seed) pair; data and batches are paired
    across schemes through the shared seed.  Failures leave markers instead of
    aborting the table."""
    seed_values = _seed_list(seeds)
    results = []
    for scheme in schemes:
        accs, shares, failures = [], [], []
        histogram = None
        for seed in seed_values:
            ds = generate_pda_task(replace(spec, seed=seed))
            run_cfg = replace(cfg, seed=seed, weight_scheme=scheme)
            try:
                params, _ = train(ds, run_cfg)
                accs.append(target_accuracy(params, ds))
                weights, normalized = final_source_weights(params, ds, run_cfg)
                shares.append(outlier_weight_share(weights, ds.source_y, spec.shared))
                if histogram is None:
                    histogram = weight_histogram(normalized)
            except Exception as exc:  # noqa: BLE001 - failure markers, not crashes
                failures.append(f"seed {seed}: {exc}")
        acc_arr = np.asarray(accs, dtype=float)
        results.append(BenchResult(
            scheme=scheme,
            accuracies=tuple(accs),
            acc_mean=float(acc_arr.mean()) if accs else float("nan"),
            acc_std=float(acc_arr.std()) if accs else float("nan"),
            outlier_share=float(np.mean(shares)) if shares else float("nan"),
            outlier_shares=tuple(shares),
            histogram=histogram if histogram is not None else np.zeros(20, dtype=int),
            failures=tuple(failures),
        ))
    return results


def sensitivity_sweep(spec: TaskSpec, cfg: TrainConfig, param: str, grid,
                      seeds=None) -> list[dict]:
    """Accuracy as one alignment knob moves across its grid, all else fixed."""
    if param not in ("alpha_max", "beta"):
        raise ValueError("sweep parameter must be alpha_max or beta")
    seed_values = _seed_list(seeds) if seeds is not None else [cfg.seed]
    rows = []
    for value in grid:
        if not 0 < value <= 1:
            raise ValueError("sweep values must lie in (0, 1]")
        accs = []
        for seed in seed_values:
            ds = generate_pda_task(replace(spec, seed=seed))
            run_cfg = replace(cfg, seed=seed, **{param: float(value)})
            params, _ = train(ds, run_cfg)
            accs.append(target_accuracy(params, ds))
        arr = np.asarray(accs, dtype=float)
        rows.append({"param": param, "value": float(value),
                     "acc_mean": float(arr.mean()), "acc_std": float(arr.std())})
    return rows
