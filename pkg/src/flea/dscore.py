"""Pairwise dataset dissimilarities: discrepancy, disparity and disbalance.

Discrepancy and disparity are suprema over linear classifiers. They are
estimated by training a surrogate classifier whose hard decisions are then
evaluated exactly, so every estimate is attained by some classifier and
never exceeds the true supremum. For one-dimensional data the suprema are
computed exactly by sweeping all thresholds (used as test oracles).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    LinearModel,
    OptimizerBudget,
    _design,
    logistic_objective,
    minimize_objective,
    parity_gap,
    soft_parity_objective,
    train_logistic,
)
from .tabular import Dataset, EmptyGroupError, concat

MEASURES = ("disc", "disp", "disb")


@dataclass(frozen=True)
class DScoreConfig:
    eta_disparity: float = 1.0
    epsilon: float = 1e-8
    init_l2: float = 1.0
    budget: OptimizerBudget = field(default_factory=OptimizerBudget)

    def __post_init__(self):
        if self.eta_disparity <= 0:
            raise ValueError("eta_disparity must be > 0")


@dataclass(frozen=True)
class PairScore:
    disc: float
    disp: float
    disb: float

    @property
    def d_score(self) -> float:
        return max(self.disc, self.disp, self.disb)

    def measure(self, name: str) -> float:
        if name == "combined":
            return self.d_score
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {"disc": self.disc, "disp": self.disp, "disb": self.disb, "d_score": self.d_score}


ZERO_SCORE = PairScore(0.0, 0.0, 0.0)


def disbalance(s1: Dataset, s2: Dataset) -> float:
    """Absolute difference of the ``a=1`` fractions of two datasets."""
    return float(abs(s1.protected.mean() - s2.protected.mean()))


def estimate_discrepancy(s1: Dataset, s2: Dataset, cfg: DScoreConfig | None = None) -> float:
    """Train on ``s1`` plus label-flipped ``s2`` (each half the weight); return ``1 - 2E``."""
    cfg = cfg or DScoreConfig()
    merged = concat([s1, s2])
    target = np.concatenate([s1.labels, 1 - s2.labels])
    weights = np.concatenate([np.full(s1.n, 0.5 / s1.n), np.full(s2.n, 0.5 / s2.n)])
    model = train_logistic(merged, 0.0, weights, cfg.budget, labels=target)
    err = float(weights @ (model.predict(merged.features) != target))
    return float(np.clip(1.0 - 2.0 * err, 0.0, 1.0))


def _group_balanced_weights(protected: np.ndarray) -> np.ndarray:
    n1 = protected.sum()
    n0 = len(protected) - n1
    return np.where(protected == 1, 0.5 / n1, 0.5 / n0)


def disparity_direction(s1: Dataset, s2: Dataset, cfg: DScoreConfig) -> tuple[float, LinearModel]:
    """One direction of the disparity estimate.

    Fits a classifier predicting ``a`` on ``s1`` (group-balanced weights)
    while penalizing its confidence parity gap on ``s2``, then evaluates
    ``|Gamma_s1 - Gamma_s2|`` with hard decisions.
    """
    if not (s1.has_both_groups() and s2.has_both_groups()):
        raise EmptyGroupError("disparity needs both protected groups in both datasets")
    X1, X2 = _design(s1.features), _design(s2.features)
    target = s1.protected.astype(float)
    weights = _group_balanced_weights(s1.protected)
    init = train_logistic(s1, cfg.init_l2, weights, cfg.budget, labels=target).params
    eta, eps = cfg.eta_disparity, cfg.epsilon

    def objective(p):
        loss, grad = logistic_objective(p, X1, target, weights)
        gap, ggap = soft_parity_objective(p, X2, s2.protected, eps)
        return loss + eta * gap, grad + eta * ggap

    res = minimize_objective(objective, init, cfg.budget, method="BFGS")
    model = LinearModel.from_params(res.x)
    value = abs(parity_gap(model.predict(s1.features), s1.protected)
                - parity_gap(model.predict(s2.features), s2.protected))
    return float(value), model


def estimate_disparity(s1: Dataset, s2: Dataset, cfg: DScoreConfig | None = None) -> float:
    cfg = cfg or DScoreConfig()
    forward, _ = disparity_direction(s1, s2, cfg)
    backward, _ = disparity_direction(s2, s1, cfg)
    return max(forward, backward)


def pair_score(s1: Dataset, s2: Dataset, cfg: DScoreConfig | None = None,
               measures=MEASURES) -> PairScore:
    """All three dissimilarities of a pair; skipped measures are reported as 0.

    A dataset missing a protected group gets ``disp = disb = 1``.
    """
    cfg = cfg or DScoreConfig()
    degenerate = not (s1.has_both_groups() and s2.has_both_groups())
    disc = estimate_discrepancy(s1, s2, cfg) if "disc" in measures else 0.0
    if degenerate:
        disp = 1.0 if "disp" in measures else 0.0
        disb = 1.0 if "disb" in measures else 0.0
    else:
        disp = estimate_disparity(s1, s2, cfg) if "disp" in measures else 0.0
        disb = disbalance(s1, s2) if "disb" in measures else 0.0
    return PairScore(disc, disp, disb)


# --------------------------------------------------------------------------
# exact one-dimensional suprema

def _threshold_decisions(x: np.ndarray, all_x: np.ndarray) -> np.ndarray:
    """Rows: every distinct hypothesis ``1[x > t]`` over the sweep, plus complements."""
    cuts = np.concatenate([[-np.inf], np.unique(all_x)])
    up = (x[None, :] > cuts[:, None]).astype(float)
    return np.vstack([up, 1.0 - up])


def _as_1d(d: Dataset) -> np.ndarray:
    if d.dim != 1:
        raise ValueError(f"exact oracles need one-dimensional data, got d={d.dim}")
    return d.features[:, 0]


def exact_discrepancy_1d(s1: Dataset, s2: Dataset) -> float:
    x1, x2 = _as_1d(s1), _as_1d(s2)
    pooled = np.concatenate([x1, x2])
    h1, h2 = _threshold_decisions(x1, pooled), _threshold_decisions(x2, pooled)
    r1 = (h1 != s1.labels[None, :]).mean(axis=1)
    r2 = (h2 != s2.labels[None, :]).mean(axis=1)
    return float(np.max(np.abs(r1 - r2)))


def _gaps(h: np.ndarray, protected: np.ndarray) -> np.ndarray:
    g1 = protected == 1
    if g1.all() or not g1.any():
        raise EmptyGroupError("disparity needs both protected groups")
    return np.abs(h[:, g1].mean(axis=1) - h[:, ~g1].mean(axis=1))


def exact_disparity_1d(s1: Dataset, s2: Dataset) -> float:
    x1, x2 = _as_1d(s1), _as_1d(s2)
    pooled = np.concatenate([x1, x2])
    h1, h2 = _threshold_decisions(x1, pooled), _threshold_decisions(x2, pooled)
    return float(np.max(np.abs(_gaps(h1, s1.protected) - _gaps(h2, s2.protected))))
