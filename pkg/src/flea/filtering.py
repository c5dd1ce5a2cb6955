"""Quantile-based source filtering and the FLEA training driver."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dscore import MEASURES, ZERO_SCORE, DScoreConfig, PairScore, pair_score
from .learners import FairLearnerConfig, fit_learner
from .tabular import SourceBundle

VARIANTS = {"combined": MEASURES, "disc_only": ("disc",), "disp_only": ("disp",),
            "disb_only": ("disb",)}


@dataclass(frozen=True)
class FilterConfig:
    alpha: float = 0.5
    dscore: DScoreConfig = field(default_factory=DScoreConfig)

    def __post_init__(self):
        if not 0.5 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0.5, 1], got {self.alpha}")


@dataclass
class FilterDiagnostics:
    d_matrix: np.ndarray
    q_values: np.ndarray
    threshold: float
    selected: list[int]
    pair_scores: list[list[PairScore]] | None = None
    measure: str = "combined"

    def to_dict(self) -> dict:
        out = {
            "measure": self.measure,
            "d_matrix": self.d_matrix.tolist(),
            "q_values": self.q_values.tolist(),
            "threshold": self.threshold,
            "selected": list(self.selected),
        }
        if self.pair_scores is not None:
            out["pair_scores"] = [[p.to_dict() for p in row] for row in self.pair_scores]
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "FilterDiagnostics":
        pairs = obj.get("pair_scores")
        if pairs is not None:
            pairs = [[PairScore(p["disc"], p["disp"], p["disb"]) for p in row] for row in pairs]
        return cls(np.asarray(obj["d_matrix"], dtype=float), np.asarray(obj["q_values"], float),
                   float(obj["threshold"]), list(obj["selected"]), pairs,
                   obj.get("measure", "combined"))


def alpha_quantile(values, alpha: float) -> float:
    """The ``ceil(alpha * N)``-th smallest value (an order statistic)."""
    values = np.sort(np.asarray(values, dtype=float))
    if values.size == 0:
        raise ValueError("alpha_quantile of an empty sequence")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    # guard against alpha * N landing a hair above an integer (0.6 * 5)
    k = max(1, math.ceil(alpha * values.size - 1e-9))
    return float(values[k - 1])


def select_sources(d_matrix, alpha: float) -> tuple[np.ndarray, float, list[int]]:
    """Row quantiles, their quantile, and the indices at or below it."""
    d_matrix = np.asarray(d_matrix, dtype=float)
    q = np.array([alpha_quantile(row, alpha) for row in d_matrix])
    threshold = alpha_quantile(q, alpha)
    return q, threshold, [i for i in range(len(q)) if q[i] <= threshold]


def score_matrix(bundle: SourceBundle, cfg: DScoreConfig | None = None,
                 measures=MEASURES) -> list[list[PairScore]]:
    """Pair scores for all ordered pairs; the diagonal is exactly zero.

    Each unordered pair is estimated once and mirrored, since every measure
    is symmetric by construction.
    """
    cfg = cfg or DScoreConfig()
    n = len(bundle)
    scores = [[ZERO_SCORE] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            scores[i][j] = scores[j][i] = pair_score(bundle[i], bundle[j], cfg, measures)
    return scores


def filter_from_scores(scores, alpha: float, measure: str = "combined") -> FilterDiagnostics:
    """Run the selection step on precomputed pair scores."""
    key = {"combined": "combined", "disc_only": "disc", "disp_only": "disp",
           "disb_only": "disb"}[measure]
    D = np.array([[p.measure(key) for p in row] for row in scores])
    np.fill_diagonal(D, 0.0)
    q, threshold, selected = select_sources(D, alpha)
    return FilterDiagnostics(D, q, threshold, selected, scores, measure)


def filter_variant(bundle: SourceBundle, cfg: FilterConfig, measure: str = "combined"
                   ) -> FilterDiagnostics:
    if measure not in VARIANTS:
        raise ValueError(f"unknown measure {measure!r}; expected one of {sorted(VARIANTS)}")
    scores = score_matrix(bundle, cfg.dscore, VARIANTS[measure])
    return filter_from_scores(scores, cfg.alpha, measure)


def filter_sources(bundle: SourceBundle, cfg: FilterConfig | None = None) -> FilterDiagnostics:
    return filter_variant(bundle, cfg or FilterConfig(), "combined")


def flea_train(bundle: SourceBundle, cfg: FilterConfig, learner: FairLearnerConfig):
    """Filter the sources, merge the survivors and train ``learner`` on them."""
    diagnostics = filter_sources(bundle, cfg)
    model, _ = fit_learner(bundle.merged(diagnostics.selected), learner)
    return model, diagnostics
