"""Linear classifiers, logistic training and the two evaluation functionals."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .tabular import Dataset, EmptyGroupError

SCORE_CLIP = 20.0


@dataclass(frozen=True)
class OptimizerBudget:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    history_size: int = 10
    max_linesearch: int = 20

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class LinearModel:
    """Score ``g(x) = w.x + b``; decisions are ``g(x) > 0``."""

    weights: np.ndarray
    bias: float
    schema_hash: str | None = field(default=None, compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if not (np.isfinite(w).all() and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dim(self) -> int:
        return len(self.weights)

    @classmethod
    def from_params(cls, params, schema_hash=None) -> "LinearModel":
        params = np.asarray(params, dtype=float)
        return cls(params[:-1], params[-1], schema_hash)

    @property
    def params(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def raw_score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} features, got {X.shape[-1]}")
        return X @ self.weights + self.bias

    def score(self, X) -> np.ndarray:
        return np.clip(self.raw_score(X), -SCORE_CLIP, SCORE_CLIP)

    def predict(self, X) -> np.ndarray:
        return (self.score(X) > 0).astype(np.int8)

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.score(X))

    def __call__(self, X) -> np.ndarray:
        return self.predict(X)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias, "schema_hash": self.schema_hash}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "LinearModel":
        return cls(np.asarray(obj["weights"], dtype=float), obj["bias"], obj.get("schema_hash"))

    @classmethod
    def from_json(cls, text: str) -> "LinearModel":
        return cls.from_dict(json.loads(text))


def predict_score(m: LinearModel, x) -> float:
    return float(m.score(np.asarray(x, dtype=float).reshape(1, -1))[0])


def predict_label(m: LinearModel, x) -> int:
    return int(predict_score(m, x) > 0)


def predict_prob(m: LinearModel, x) -> float:
    return float(expit(predict_score(m, x)))


def empirical_risk(m, d: Dataset) -> float:
    """Fraction of rows of ``d`` misclassified by ``m`` (anything with ``predict``)."""
    return float(np.mean(m.predict(d.features) != d.labels))


def accuracy(m, d: Dataset) -> float:
    return 1.0 - empirical_risk(m, d)


def parity_gap(decisions, protected) -> float:
    """Absolute difference of mean ``decisions`` between the two groups."""
    decisions = np.asarray(decisions, dtype=float)
    protected = np.asarray(protected)
    g1 = protected == 1
    if g1.all() or not g1.any():
        raise EmptyGroupError("demographic parity needs both protected groups")
    return float(abs(decisions[g1].mean() - decisions[~g1].mean()))


def dp_violation(labeler, d: Dataset) -> float:
    """Demographic parity violation of hard decisions on ``d``.

    ``labeler`` is a model with ``predict`` or a callable mapping the
    feature matrix to 0/1 decisions.
    """
    predict = labeler.predict if hasattr(labeler, "predict") else labeler
    return parity_gap(predict(d.features), d.protected)


# --------------------------------------------------------------------------
# objectives; every function takes params = (w, b) stacked and returns (value, grad)

def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.hstack([X, np.ones((len(X), 1))])


def logistic_objective(params, Xb, y, weights, l2=0.0):
    """Weighted logistic loss plus ``l2 * |w|^2`` (bias unpenalized)."""
    g = Xb @ params
    loss = float(weights @ (np.logaddexp(0.0, g) - y * g))
    grad = Xb.T @ (weights * (expit(g) - y))
    if l2:
        w = params[:-1]
        loss += l2 * float(w @ w)
        grad[:-1] += 2.0 * l2 * w
    return loss, grad


def smooth_abs(t, eps):
    # sqrt(t^2 + eps) keeps a useful gradient away from t = 0; the ratio form
    # sqrt(t^2 / (t^2 + eps)) is flat there and leaves the penalty inert
    return np.sqrt(t * t + eps)


def soft_parity_objective(params, Xb, protected, eps=1e-8):
    """Smoothed absolute gap of mean sigmoid confidences between groups."""
    g1 = protected == 1
    n1, n0 = g1.sum(), (~g1).sum()
    if n1 == 0 or n0 == 0:
        raise EmptyGroupError("soft parity needs both protected groups")
    s = expit(Xb @ params)
    coef = np.where(g1, 1.0 / max(n1, 1), -1.0 / max(n0, 1))
    t = float(coef @ s)
    value = float(smooth_abs(t, eps))
    grad = (t / value) * (Xb.T @ (coef * s * (1.0 - s)))
    return value, grad


def soft_parity_gap(m: LinearModel, d: Dataset) -> float:
    """Unsmoothed parity gap of sigmoid confidences (no clipping of the score)."""
    s = expit(m.raw_score(d.features))
    return parity_gap(s, d.protected)


def minimize_objective(fun: Callable, x0, budget: OptimizerBudget, method="L-BFGS-B",
                       trace: list | None = None):
    """Quasi-Newton minimization of ``fun(params) -> (value, grad)``.

    ``trace`` collects the objective value at every accepted iterate.
    """
    opts = {"maxiter": budget.max_iterations, "gtol": budget.gradient_tolerance}
    if method == "L-BFGS-B":
        opts.update(maxcor=budget.history_size, maxls=budget.max_linesearch, ftol=0.0)
    callback = None
    if trace is not None:
        trace.append(fun(x0)[0])
        callback = lambda xk, *_: trace.append(fun(xk)[0])  # noqa: E731
    res = minimize(fun, np.asarray(x0, dtype=float), jac=True, method=method,
                   options=opts, callback=callback)
    if not np.isfinite(res.fun):
        raise FloatingPointError("objective became non-finite during training")
    return res


def default_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def train_logistic(d: Dataset, l2_strength: float = 0.0, sample_weights=None,
                   budget: OptimizerBudget | None = None, *, labels=None, init=None,
                   trace: list | None = None) -> LinearModel:
    """Fit ``w, b`` minimizing weighted logistic loss plus ``l2 * |w|^2``.

    Without ``sample_weights`` every row weighs ``1/n``; given weights are
    used as-is. ``labels`` overrides ``d.labels`` as the regression target.
    Starts from zeros unless ``init`` is given.
    """
    if l2_strength < 0:
        raise ValueError("l2_strength must be >= 0")
    budget = budget or OptimizerBudget()
    Xb = _design(d.features)
    y = np.asarray(d.labels if labels is None else labels, dtype=float)
    weights = default_weights(d.n) if sample_weights is None else np.asarray(sample_weights, float)
    if weights.shape != (d.n,):
        raise ValueError("sample_weights must have one entry per row")
    x0 = np.zeros(Xb.shape[1]) if init is None else np.asarray(init, dtype=float)
    res = minimize_objective(lambda p: logistic_objective(p, Xb, y, weights, l2_strength),
                             x0, budget, trace=trace)
    return LinearModel.from_params(res.x, _schema_hash(d))


def _schema_hash(d: Dataset):
    return None if d.schema is None else d.schema.digest()
