"""Constructive source/target weights from transport plans and competing schemes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.spatial.distance import cdist

from .pot import TransportPlan, _transport_lp, exact_partial_ot

__all__ = [
    "WeightVector",
    "ArpmConfig",
    "marginal_weights",
    "tv_term",
    "normalized_source_weights",
    "scheme_uniform",
    "scheme_ba3us",
    "scheme_arpm",
    "gamma_constrained_weights",
    "weight_histogram",
]

CAP_TOL = 1e-9


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative per-sample weights plus the normalizer that scales them."""

    values: np.ndarray
    normalizer: float
    scheme: Literal["warmpot", "uniform", "ba3us", "arpm"]

    def __post_init__(self):
        w = np.asarray(self.values, dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if self.normalizer <= 0:
            raise ValueError("normalizer must be positive")
        object.__setattr__(self, "values", w)

    @property
    def total(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class ArpmConfig:
    """Chi-square-ball weighting: radius rho and projected-subgradient knobs."""

    rho: float = 5.0
    subgradient_steps: int = 30
    step_size: float = 0.1

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.subgradient_steps < 1:
            raise ValueError("need at least one subgradient step")
        if self.step_size <= 0:
            raise ValueError("step size must be positive")


def marginal_weights(plan: TransportPlan):
    """Row and column sums of a coupling; both sum to the plan mass."""
    p = plan.matrix.sum(axis=1)
    q = plan.matrix.sum(axis=0)
    return (WeightVector(p, plan.mass, "warmpot"),
            WeightVector(q, plan.mass, "warmpot"))


def tv_term(q: WeightVector | np.ndarray, alpha: float, n_t: int) -> float:
    """Total-variation correction (1/2) sum_j |1/n_t - q_j/alpha|."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    q = q.values if isinstance(q, WeightVector) else np.asarray(q, dtype=float)
    if q.shape[0] != n_t:
        raise ValueError("q must have one entry per target sample")
    return 0.5 * float(np.abs(1.0 / n_t - q / alpha).sum())


def normalized_source_weights(p: WeightVector, beta: float, n_s: int) -> WeightVector:
    """Rescale marginal source weights by their cap 1/(beta*n_s) into [0, 1]."""
    cap = 1.0 / (beta * n_s)
    values = p.values
    if values.shape[0] != n_s:
        raise ValueError("weight count does not match n_s")
    if np.any(values > cap + max(CAP_TOL, 1e-9 * cap)):
        raise ValueError("weights exceed the cap 1/(beta*n_s); upstream plan is infeasible")
    return WeightVector(np.clip(values / cap, 0.0, 1.0), beta * n_s, p.scheme)


def scheme_uniform(n_s: int) -> WeightVector:
    if n_s < 1:
        raise ValueError("n_s must be at least 1")
    return WeightVector(np.full(n_s, 1.0 / n_s), 1.0, "uniform")


def scheme_ba3us(target_predictions, source_labels, n_t: int) -> WeightVector:
    """Weight of source sample i: fraction of target predictions equal to y_i."""
    preds = np.asarray(target_predictions)
    labels = np.asarray(source_labels)
    classes, counts = np.unique(preds, return_counts=True)
    freq = dict(zip(classes.tolist(), counts.tolist()))
    values = np.array([freq.get(y, 0) for y in labels.tolist()], dtype=float) / n_t
    return WeightVector(values, 1.0, "ba3us")


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, n + 1) > (css - 1.0))[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.clip(v - theta, 0.0, None)


def _project_ball(v: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    d = v - center
    norm = float(np.linalg.norm(d))
    if norm <= radius:
        return v
    return center + d * (radius / norm)


def _project_delta(v: np.ndarray, radius: float, rounds: int = 100, tol: float = 1e-10) -> np.ndarray:
    """Dykstra projection onto simplex intersect L2 ball around uniform.

    The loop ends after the ball step, which can leave entries a hair below
    zero; the result is clipped back onto the simplex before returning.
    """
    n = v.shape[0]
    center = np.full(n, 1.0 / n)
    x = v.copy()
    inc_s = np.zeros(n)
    inc_b = np.zeros(n)
    for _ in range(rounds):
        x_old = x
        y = _project_simplex(x + inc_s)
        inc_s = x + inc_s - y
        x = _project_ball(y + inc_b, center, radius)
        inc_b = y + inc_b - x
        if np.abs(x - x_old).max() < tol:
            break
    x = np.clip(x, 0.0, None)
    return x / x.sum()


def _w1_to_uniform_target(p_hat: np.ndarray, dist: np.ndarray):
    """Balanced OT value of p_hat against the uniform target, plus row duals."""
    n_t = dist.shape[1]
    b = np.full(n_t, 1.0 / n_t)
    plan, row_duals, _ = _transport_lp(p_hat, b, dist)
    return float((plan * dist).sum()), row_duals


def scheme_arpm(source_feats, target_feats, cfg: ArpmConfig) -> WeightVector:
    """Approximate minimizer of W1 to the uniform target over the chi-square ball.

    Projected subgradient: the optimal dual potentials at the source atoms are
    a subgradient of the transport value in the source marginal.  The returned
    iterate is the best one seen, so it never does worse than uniform.
    """
    fs = np.atleast_2d(np.asarray(source_feats, dtype=float))
    ft = np.atleast_2d(np.asarray(target_feats, dtype=float))
    if fs.shape[1] != ft.shape[1]:
        raise ValueError("feature dimensions differ")
    n_s = fs.shape[0]
    uniform = np.full(n_s, 1.0 / n_s)
    if cfg.rho == 0.0:
        return WeightVector(uniform, 1.0, "arpm")

    dist = cdist(fs, ft)
    radius = float(np.sqrt(cfg.rho / n_s))
    best = uniform
    best_val, duals = _w1_to_uniform_target(uniform, dist)
    p = uniform
    val = best_val
    for step in range(cfg.subgradient_steps):
        p = _project_delta(p - cfg.step_size / np.sqrt(step + 1.0) * duals, radius)
        val, duals = _w1_to_uniform_target(p, dist)
        if val < best_val:
            best_val, best = val, p
    return WeightVector(best, 1.0, "arpm")


def gamma_constrained_weights(source_feats, target_feats, beta: float) -> WeightVector:
    """Minimize W1 to the uniform target over the capped simplex p_i <= 1/(beta*n_s).

    Equivalent to the mass-1 partial transport of the 1/beta-inflated uniform
    source onto the uniform target; the optimal row sums are the weights.
    """
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    fs = np.atleast_2d(np.asarray(source_feats, dtype=float))
    ft = np.atleast_2d(np.asarray(target_feats, dtype=float))
    if fs.shape[1] != ft.shape[1]:
        raise ValueError("feature dimensions differ")
    n_s, n_t = fs.shape[0], ft.shape[0]
    if beta * n_s < 1:
        raise ValueError("beta * n_s < 1 makes the capped simplex infeasible")
    a = np.full(n_s, 1.0 / (beta * n_s))
    b = np.full(n_t, 1.0 / n_t)
    plan, _ = exact_partial_ot(a, b, cdist(fs, ft), 1.0)
    return WeightVector(plan.matrix.sum(axis=1), 1.0, "warmpot")


def weight_histogram(normalized_values, bins: int = 20) -> np.ndarray:
    """Counts over equal-width bins of [0, 1]; values are clipped into range."""
    v = np.clip(np.asarray(normalized_values, dtype=float), 0.0, 1.0)
    counts, _ = np.histogram(v, bins=bins, range=(0.0, 1.0))
    return counts
