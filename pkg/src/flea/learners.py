"""Fairness-unaware and fairness-aware learners, plus the robust ensemble.

All learners return objects with ``predict``/``score`` over feature
matrices. ``fit_learner`` is the dispatcher used by FLEA and the harness; it
falls back to plain logistic regression when the training data lacks one of
the protected groups and reports that it did so.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .model import (
    LinearModel,
    OptimizerBudget,
    _design,
    default_weights,
    logistic_objective,
    minimize_objective,
    soft_parity_objective,
    train_logistic,
)
from .tabular import Dataset, EmptyGroupError, SourceBundle

LEARNER_KINDS = ("unaware", "fair_reg", "fair_pp", "fair_adv")


@dataclass(frozen=True)
class FairLearnerConfig:
    kind: str = "unaware"
    eta: float = 0.5
    epsilon: float = 1e-8
    budget: OptimizerBudget = field(default_factory=OptimizerBudget)
    init_l2: float = 1.0
    adversary_steps: int = 1000
    learning_rate_main: float = 1e-3
    learning_rate_adv: float = 1e-3

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class ThresholdPolicy:
    threshold_group0: float
    threshold_group1: float
    rate: float


def _require_groups(d: Dataset):
    if not d.has_both_groups():
        raise EmptyGroupError("training data contains only one protected group")


def train_unaware(d: Dataset, cfg: FairLearnerConfig | None = None) -> LinearModel:
    cfg = cfg or FairLearnerConfig()
    return train_logistic(d, 0.0, None, cfg.budget)


def _fair_init(d: Dataset, cfg: FairLearnerConfig) -> np.ndarray:
    return train_logistic(d, cfg.init_l2, None, cfg.budget).params


def fair_reg_objective(params, Xb, y, protected, eta, eps):
    """Mean logistic loss plus ``eta`` times the smoothed confidence parity gap."""
    loss, grad = logistic_objective(params, Xb, y, default_weights(len(y)))
    if eta:
        gap, ggap = soft_parity_objective(params, Xb, protected, eps)
        loss += eta * gap
        grad = grad + eta * ggap
    return loss, grad


def train_fair_reg(d: Dataset, cfg: FairLearnerConfig | None = None, *, init=None) -> LinearModel:
    """Logistic regression with a demographic-parity penalty on confidences.

    Starts from an L2-regularized plain fit (``cfg.init_l2``) and runs BFGS.
    """
    cfg = cfg or FairLearnerConfig("fair_reg")
    _require_groups(d)
    Xb = _design(d.features)
    y = d.labels.astype(float)
    x0 = _fair_init(d, cfg) if init is None else np.asarray(init, dtype=float)
    res = minimize_objective(
        lambda p: fair_reg_objective(p, Xb, y, d.protected, cfg.eta, cfg.epsilon),
        x0, cfg.budget, method="BFGS")
    return LinearModel.from_params(res.x, d.schema and d.schema.digest())


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def adversarial_gradients(theta, phi, Xb, y, a, eta):
    """Gradients of ``L(theta) - eta * L_adv(theta, phi)``.

    Returns ``(objective, grad_theta, adv_loss, grad_phi_of_adv_loss)``; the
    adversary ``phi = (w', b')`` predicts ``a`` from the main score.
    """
    n = len(y)
    g = Xb @ theta
    p = expit(g)
    main_loss = float(np.mean(np.logaddexp(0.0, g) - y * g))
    s = phi[0] * g + phi[1]
    q = expit(s)
    adv_loss = float(np.mean(np.logaddexp(0.0, s) - a * s))
    r = (q - a) / n
    grad_phi = np.array([r @ g, r.sum()])
    grad_theta = Xb.T @ ((p - y) / n) - eta * phi[0] * (Xb.T @ r)
    return main_loss - eta * adv_loss, grad_theta, adv_loss, grad_phi


def train_fair_adv(d: Dataset, cfg: FairLearnerConfig | None = None, *, init=None,
                   return_adversary: bool = False):
    """Adversarial fairness: min over the classifier, max over a 1-D adversary.

    Both players take simultaneous Adam steps on full-batch gradients.
    """
    cfg = cfg or FairLearnerConfig("fair_adv")
    _require_groups(d)
    Xb = _design(d.features)
    y = d.labels.astype(float)
    a = d.protected.astype(float)
    theta = _fair_init(d, cfg) if init is None else np.asarray(init, dtype=float).copy()
    phi = np.zeros(2)
    opt_main, opt_adv = _Adam(cfg.learning_rate_main), _Adam(cfg.learning_rate_adv)
    for _ in range(cfg.adversary_steps):
        obj, g_theta, _, g_phi = adversarial_gradients(theta, phi, Xb, y, a, cfg.eta)
        if not np.isfinite(obj):
            raise FloatingPointError("adversarial objective became non-finite")
        theta, phi = opt_main.step(theta, g_theta), opt_adv.step(phi, g_phi)
    model = LinearModel.from_params(theta, d.schema and d.schema.digest())
    if return_adversary:
        return model, phi
    return model


def _group_threshold(sorted_desc: np.ndarray, rate: float) -> float:
    n = len(sorted_desc)
    k = int(np.floor(rate * n + 0.5))
    if k == 0:
        return float(sorted_desc[0]) + 1.0
    if k == n:
        return float(sorted_desc[-1]) - 1.0
    return 0.5 * float(sorted_desc[k - 1] + sorted_desc[k])


RATE_GRID = np.round(np.linspace(0.0, 1.0, 101), 2)


def postprocess_thresholds(m: LinearModel, d: Dataset, rates=RATE_GRID):
    """Group-specific thresholds equalizing positive rates, chosen for accuracy.

    For each rate ``r`` on the grid, each group gets the threshold that makes
    a fraction ``r`` of its rows positive; the most accurate ``r`` on ``d``
    wins (smallest ``r`` on ties). The thresholds are folded into the bias
    and the weight of the protected feature.
    """
    idx = d.protected_index
    if idx is None:
        raise ValueError("postprocessing needs the protected attribute among the features")
    _require_groups(d)
    g = m.raw_score(d.features)
    g1 = d.protected == 1
    desc = [np.sort(g[~g1])[::-1], np.sort(g[g1])[::-1]]
    best = None
    for r in rates:
        t0, t1 = _group_threshold(desc[0], r), _group_threshold(desc[1], r)
        decisions = np.where(g1, g > t1, g > t0)
        acc = float(np.mean(decisions == d.labels))
        if best is None or acc > best[0]:
            best = (acc, float(r), t0, t1)
    _, r, t0, t1 = best
    w = m.weights.copy()
    w[idx] -= t1 - t0
    adjusted = LinearModel(w, m.bias - t0, m.schema_hash)
    return adjusted, ThresholdPolicy(t0, t1, r)


def train_fair_pp(d: Dataset, cfg: FairLearnerConfig | None = None) -> LinearModel:
    return postprocess_thresholds(train_unaware(d, cfg), d)[0]


_TRAINERS = {
    "unaware": train_unaware,
    "fair_reg": train_fair_reg,
    "fair_pp": train_fair_pp,
    "fair_adv": train_fair_adv,
}


def fit_learner(d: Dataset, cfg: FairLearnerConfig) -> tuple[LinearModel, bool]:
    """Train ``cfg.kind`` on ``d``; returns ``(model, fell_back_to_unaware)``."""
    if cfg.kind != "unaware" and not d.has_both_groups():
        return train_unaware(d, cfg), True
    return _TRAINERS[cfg.kind](d, cfg), False


class RobustEnsemble:
    """Median-of-scores vote over per-source models (lower median for even N)."""

    def __init__(self, members):
        self.members = list(members)
        if not self.members:
            raise ValueError("ensemble needs at least one member")

    def score(self, X) -> np.ndarray:
        scores = np.sort(np.stack([m.score(X) for m in self.members]), axis=0)
        return scores[(len(self.members) - 1) // 2]

    def predict(self, X) -> np.ndarray:
        return (self.score(X) > 0).astype(np.int8)

    def __call__(self, X):
        return self.predict(X)


class SourceTrainingError(RuntimeError):
    def __init__(self, index, cause):
        super().__init__(f"training on source {index} failed: {cause}")
        self.index = index


def robust_ensemble(bundle, base_cfg: FairLearnerConfig) -> RobustEnsemble:
    sources = bundle.sources if isinstance(bundle, SourceBundle) else list(bundle)
    members = []
    for i, s in enumerate(sources):
        try:
            members.append(fit_learner(s, base_cfg)[0])
        except Exception as exc:  # re-raised with the source index attached
            raise SourceTrainingError(i, exc) from exc
    return RobustEnsemble(members)
