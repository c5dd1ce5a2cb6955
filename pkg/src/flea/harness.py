"""Experiment runner: seeded multisource simulations, detection and ablation tables.

Every random choice draws from a seed derived by hashing the master seed
together with descriptive labels (dataset, repeat index, purpose), so cells
of a grid are reproducible on their own and independent of run order or the
number of worker processes.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .adversaries import AdversaryKind, apply_adversary
from .dscore import DScoreConfig, PairScore
from .filtering import FilterDiagnostics, filter_from_scores, score_matrix
from .learners import LEARNER_KINDS, FairLearnerConfig, fit_learner, robust_ensemble
from .model import accuracy, dp_violation
from .tabular import (
    Dataset,
    SourceBundle,
    load_dataset,
    resolve_path,
    split_sources,
    standardize,
    train_test_split,
)

MODES = ("baseline_all_data", "flea", "oracle_clean_only", "robust_ensemble",
         "ablation_disc", "ablation_disp", "ablation_disb")
ABLATION_MEASURES = {"ablation_disc": "disc_only", "ablation_disp": "disp_only",
                     "ablation_disb": "disb_only"}


class ConfigError(ValueError):
    pass


def derive_seed(master_seed: int, *labels) -> int:
    """Stable 63-bit seed from ``master_seed`` and arbitrary JSON-able labels."""
    text = json.dumps([int(master_seed), *[str(x) for x in labels]])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


def _normalize_mode(mode: str) -> str:
    mode = mode.strip()
    if mode.startswith("ablation(") and mode.endswith(")"):
        mode = "ablation_" + mode[len("ablation("):-1]
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    return mode


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    data_path: str | None = None
    n_sources: int = 5
    num_manipulated: int | None = None
    adversary: str | None = None
    learner: FairLearnerConfig = field(default_factory=FairLearnerConfig)
    mode: str = "flea"
    alpha: float | None = None
    repeats: int = 10
    master_seed: int = 0
    train_fraction: float = 0.8
    standardize: bool = True
    include_protected: bool = True
    dscore: DScoreConfig = field(default_factory=DScoreConfig)
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", _normalize_mode(self.mode))
        if self.adversary in ("", "none", "None"):
            object.__setattr__(self, "adversary", None)
        if self.adversary is not None:
            object.__setattr__(self, "adversary", AdversaryKind(self.adversary).value)
        if self.num_manipulated is None:
            object.__setattr__(self, "num_manipulated", (self.n_sources - 1) // 2)
        if self.n_sources < 2:
            raise ConfigError("n_sources must be >= 2")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if not 0 <= self.num_manipulated <= (self.n_sources - 1) // 2:
            raise ConfigError(
                f"num_manipulated={self.num_manipulated} must be at most "
                f"floor((N-1)/2)={(self.n_sources - 1) // 2}")

    @property
    def clean_count(self) -> int:
        return self.n_sources - self.num_manipulated

    @property
    def effective_alpha(self) -> float:
        return self.clean_count / self.n_sources if self.alpha is None else self.alpha

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        learner = obj.pop("learner", None) or {}
        dscore = obj.pop("dscore", None) or {}
        return cls(learner=_learner_from_dict(learner), dscore=_dscore_from_dict(dscore), **obj)


def _budget(obj):
    from .model import OptimizerBudget

    return OptimizerBudget(**obj) if isinstance(obj, dict) else obj


def _learner_from_dict(obj: dict) -> FairLearnerConfig:
    obj = dict(obj)
    if "budget" in obj:
        obj["budget"] = _budget(obj["budget"])
    return FairLearnerConfig(**obj)


def _dscore_from_dict(obj: dict) -> DScoreConfig:
    obj = dict(obj)
    if "budget" in obj:
        obj["budget"] = _budget(obj["budget"])
    return DScoreConfig(**obj)


# --------------------------------------------------------------------------
# data preparation

@lru_cache(maxsize=8)
def _load_cached(path: str, dataset_id: str, include_protected: bool) -> Dataset:
    return load_dataset(path, dataset_id, include_protected=include_protected)


@dataclass
class PreparedRepeat:
    repeat: int
    bundle: SourceBundle
    test: Dataset
    affected: list[int]


def prepare_repeat(cfg: ExperimentConfig, repeat: int, data: Dataset | None = None
                   ) -> PreparedRepeat:
    """Split, partition into sources and apply the adversary for one repeat."""
    if data is None:
        path = str(resolve_path(cfg.dataset, cfg.data_path))
        data = _load_cached(path, cfg.dataset, cfg.include_protected)
    seed = lambda *labels: derive_seed(cfg.master_seed, cfg.dataset, repeat, *labels)  # noqa: E731
    train, test = train_test_split(data, cfg.train_fraction, seed("train_test"))
    if cfg.standardize:
        train, test = standardize(train, test)
    bundle = split_sources(train, cfg.n_sources, seed("sources", cfg.n_sources))
    order = np.random.default_rng(seed("affected", cfg.n_sources)).permutation(cfg.n_sources)
    affected = sorted(int(i) for i in order[:cfg.num_manipulated])
    if cfg.adversary is not None and affected:
        bundle = apply_adversary(cfg.adversary, bundle, affected,
                                 seed("adversary", cfg.n_sources, cfg.adversary))
    return PreparedRepeat(repeat, bundle, test, affected)


def _score_key(cfg: ExperimentConfig, repeat: int):
    return (cfg.dataset, cfg.data_path, cfg.n_sources, cfg.num_manipulated, cfg.adversary,
            cfg.master_seed, cfg.train_fraction, cfg.standardize, cfg.include_protected,
            repr(cfg.dscore), repeat)


class ScoreCache(dict):
    """Pair-score matrices keyed by everything that determines them."""


def _scores_for(cfg, prep: PreparedRepeat, cache: ScoreCache | None):
    key = _score_key(cfg, prep.repeat)
    if cache is not None and key in cache:
        return cache[key]
    scores = score_matrix(prep.bundle, cfg.dscore)
    if cache is not None:
        cache[key] = scores
    return scores


def manipulated_fraction(bundle: SourceBundle, indices) -> float:
    """Fraction of rows of the selected sources that come from manipulated ones."""
    flags = bundle.clean_flags or (True,) * len(bundle)
    total = sum(bundle[i].n for i in indices)
    bad = sum(bundle[i].n for i in indices if not flags[i])
    return bad / total


# --------------------------------------------------------------------------
# single experiment

@dataclass
class RepeatRecord:
    repeat: int
    accuracy: float
    dp_violation: float
    manipulated_fraction: float
    train_rows: int
    source_sizes: list[int]
    selected: list[int]
    affected: list[int]
    fell_back: bool
    test_hash: str
    diagnostics: dict | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _training_indices(cfg, prep, cache) -> tuple[list[int], FilterDiagnostics | None]:
    n = len(prep.bundle)
    if cfg.mode in ("baseline_all_data", "robust_ensemble"):
        return list(range(n)), None
    if cfg.mode == "oracle_clean_only":
        # drop the harness-chosen sources whether or not an adversary touched them
        return [i for i in range(n) if i not in prep.affected], None
    measure = ABLATION_MEASURES.get(cfg.mode, "combined")
    diag = filter_from_scores(_scores_for(cfg, prep, cache), cfg.effective_alpha, measure)
    return diag.selected, diag


def run_repeat(cfg: ExperimentConfig, prep: PreparedRepeat, cache: ScoreCache | None = None
               ) -> RepeatRecord:
    test_hash = prep.test.fingerprint()
    indices, diag = _training_indices(cfg, prep, cache)
    fell_back = False
    if cfg.mode == "robust_ensemble":
        model = robust_ensemble(prep.bundle, cfg.learner)
    else:
        model, fell_back = fit_learner(prep.bundle.merged(indices), cfg.learner)
    record = RepeatRecord(
        repeat=prep.repeat,
        accuracy=accuracy(model, prep.test),
        dp_violation=dp_violation(model, prep.test),
        manipulated_fraction=manipulated_fraction(prep.bundle, indices),
        train_rows=sum(prep.bundle[i].n for i in indices),
        source_sizes=[s.n for s in prep.bundle],
        selected=list(indices),
        affected=list(prep.affected),
        fell_back=fell_back,
        test_hash=test_hash,
        diagnostics=None if diag is None else diag.to_dict(),
    )
    if prep.test.fingerprint() != test_hash:
        raise RuntimeError("test set was modified during the run")
    return record


def _aggregate(records: list[dict]) -> dict:
    out = {}
    for key in ("accuracy", "dp_violation", "manipulated_fraction"):
        vals = np.array([r[key] for r in records], dtype=float)
        out[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


@dataclass
class ExperimentReport:
    config: dict
    records: list[dict]
    aggregate: dict
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentReport":
        return cls(obj["config"], obj["records"], obj["aggregate"],
                   obj.get("wall_clock_seconds", 0.0))

    def label(self) -> dict:
        c = self.config
        return {"dataset": c["dataset"], "n_sources": c["n_sources"],
                "adversary": c["adversary"] or "none", "learner": c["learner"]["kind"],
                "mode": c["mode"]}


def _run_one(args):
    cfg, repeat = args
    return run_repeat(cfg, prepare_repeat(cfg, repeat)).to_dict()


def run_experiment(cfg: ExperimentConfig, cache: ScoreCache | None = None) -> ExperimentReport:
    start = time.perf_counter()
    if cfg.workers > 1 and cache is None:
        with ProcessPoolExecutor(cfg.workers) as pool:
            records = list(pool.map(_run_one, [(cfg, r) for r in range(cfg.repeats)]))
    else:
        records = [run_repeat(cfg, prepare_repeat(cfg, r), cache).to_dict()
                   for r in range(cfg.repeats)]
    return ExperimentReport(cfg.to_dict(), records, _aggregate(records),
                            time.perf_counter() - start)


# --------------------------------------------------------------------------
# tables

@dataclass
class Table:
    """Mean manipulated-row fraction per (row, column) cell."""

    title: str
    rows: list[str]
    columns: list[str]
    cells: dict
    chance: dict = field(default_factory=dict)
    per_repeat: dict = field(default_factory=dict)

    def value(self, row, col) -> float:
        return self.cells[f"{row}|{col}"]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def format(self) -> str:
        width = max(12, *(len(c) + 2 for c in self.columns))
        lines = [self.title, "adversary".ljust(10) + "".join(c.rjust(width) for c in self.columns)]
        for r in self.rows:
            lines.append(r.ljust(10) + "".join(f"{self.value(r, c):.2f}".rjust(width)
                                               for c in self.columns))
        if self.chance:
            lines.append("chance".ljust(10) + "".join(
                (f"{self.chance[c]:.2f}" if c in self.chance else "").rjust(width)
                for c in self.columns))
        return "\n".join(lines)


def _filter_fractions(cfg: ExperimentConfig, measures, cache: ScoreCache | None) -> dict:
    out = {m: [] for m in measures}
    for r in range(cfg.repeats):
        prep = prepare_repeat(cfg, r)
        scores = _scores_for(cfg, prep, cache)
        for m in measures:
            diag = filter_from_scores(scores, cfg.effective_alpha, m)
            out[m].append(manipulated_fraction(prep.bundle, diag.selected))
    return out


def run_detection_table(dataset_ids, n_values, adversaries, base: ExperimentConfig,
                        cache: ScoreCache | None = None) -> Table:
    """Manipulated fraction after filtering over a (dataset, N, adversary) grid."""
    columns = [f"{d}/N={n}" for d in dataset_ids for n in n_values]
    rows = [AdversaryKind(a).value for a in adversaries]
    cells, per_repeat, chance = {}, {}, {}
    for d in dataset_ids:
        for n in n_values:
            col = f"{d}/N={n}"
            for adv in rows:
                cfg = dataclasses.replace(base, dataset=d, n_sources=n, adversary=adv,
                                          num_manipulated=None, mode="flea")
                fracs = _filter_fractions(cfg, ["combined"], cache)["combined"]
                cells[f"{adv}|{col}"] = float(np.mean(fracs))
                per_repeat[f"{adv}|{col}"] = fracs
                chance[col] = cfg.num_manipulated / n
    return Table("fraction of manipulated data after filtering", rows, columns, cells,
                 chance, per_repeat)


ABLATION_COLUMNS = {"FLEA": "combined", "disc-only": "disc_only", "disp-only": "disp_only",
                    "disb-only": "disb_only"}


def run_ablation(dataset_id: str, n_sources: int, adversaries, base: ExperimentConfig,
                 cache: ScoreCache | None = None) -> Table:
    """Manipulated fraction when filtering on the combined score or one measure alone."""
    rows = [AdversaryKind(a).value for a in adversaries]
    cells, per_repeat = {}, {}
    for adv in rows:
        cfg = dataclasses.replace(base, dataset=dataset_id, n_sources=n_sources, adversary=adv,
                                  num_manipulated=None, mode="flea")
        fracs = _filter_fractions(cfg, list(ABLATION_COLUMNS.values()), cache)
        for col, measure in ABLATION_COLUMNS.items():
            cells[f"{adv}|{col}"] = float(np.mean(fracs[measure]))
            per_repeat[f"{adv}|{col}"] = fracs[measure]
    return Table(f"ablation on {dataset_id} (N={n_sources})", rows, list(ABLATION_COLUMNS),
                 cells, {}, per_repeat)


def run_panel(base: ExperimentConfig, adversaries, cache: ScoreCache | None = None
              ) -> list[ExperimentReport]:
    """Reports for one figure panel: clean and per-adversary baselines, oracle and FLEA."""
    reports = [run_experiment(dataclasses.replace(base, adversary=None,
                                                  mode="baseline_all_data"), cache)]
    reports += [run_experiment(dataclasses.replace(base, adversary=a, mode="baseline_all_data"),
                               cache) for a in adversaries]
    reports.append(run_experiment(dataclasses.replace(base, adversary=None,
                                                      mode="oracle_clean_only"), cache))
    reports += [run_experiment(dataclasses.replace(base, adversary=a, mode="flea"), cache)
                for a in adversaries]
    return reports


# --------------------------------------------------------------------------
# report emission

CSV_FIELDS = ("dataset", "n_sources", "adversary", "learner", "mode", "repeats",
              "accuracy_mean", "accuracy_std", "dp_violation_mean", "dp_violation_std",
              "manipulated_fraction_mean", "manipulated_fraction_std")


def _as_reports(report) -> list[ExperimentReport]:
    if isinstance(report, ExperimentReport):
        return [report]
    return [r if isinstance(r, ExperimentReport) else ExperimentReport.from_dict(r)
            for r in report]


def _plot_rows(reports: list[ExperimentReport]) -> list[dict]:
    rows = []
    for rep in reports:
        lab = rep.label()
        if lab["mode"] == "baseline_all_data":
            group, bar = "baseline", "clean" if lab["adversary"] == "none" else lab["adversary"]
        elif lab["mode"] == "oracle_clean_only":
            group, bar = "flea", "oracle"
        elif lab["mode"] == "flea":
            group, bar = "flea", lab["adversary"]
        else:
            continue
        for metric in ("accuracy", "dp_violation"):
            agg = rep.aggregate[metric]
            rows.append({"learner": lab["learner"], "mode": group, "adversary": bar,
                         "metric": metric, "mean": agg["mean"], "std": agg["std"]})
    return rows


def emit_report(report, fmt: str = "json", path=None) -> str:
    """Serialize one report or a list of them as ``json``, ``csv`` or ``plotdata``.

    Returns the text and writes it to ``path`` when given.
    """
    reports = _as_reports(report)
    if fmt == "json":
        payload = reports[0].to_dict() if isinstance(report, ExperimentReport) else \
            [r.to_dict() for r in reports]
        text = json.dumps(payload, indent=1)
    elif fmt in ("csv", "plotdata"):
        buf = io.StringIO()
        if fmt == "csv":
            writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
            writer.writeheader()
            for rep in reports:
                row = dict(rep.label(), repeats=len(rep.records))
                for metric in ("accuracy", "dp_violation", "manipulated_fraction"):
                    row[f"{metric}_mean"] = repr(rep.aggregate[metric]["mean"])
                    row[f"{metric}_std"] = repr(rep.aggregate[metric]["std"])
                writer.writerow(row)
        else:
            writer = csv.DictWriter(buf, fieldnames=("learner", "mode", "adversary", "metric",
                                                     "mean", "std"), lineterminator="\n")
            writer.writeheader()
            writer.writerows(_plot_rows(reports))
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def load_report(path):
    obj = json.loads(Path(path).read_text())
    if isinstance(obj, list):
        return [ExperimentReport.from_dict(o) for o in obj]
    return ExperimentReport.from_dict(obj)


def dump_score_matrix(scores: list[list[PairScore]], path, measure="combined") -> None:
    """Write an N x N matrix of one measure as CSV (row/column = source index)."""
    n = len(scores)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([""] + list(range(n)))
        for i, row in enumerate(scores):
            w.writerow([i] + [repr(p.measure(measure))
                              for p in row])


__all__ = [
    "ExperimentConfig", "ExperimentReport", "RepeatRecord", "Table", "ScoreCache",
    "derive_seed", "prepare_repeat", "run_repeat", "run_experiment", "run_detection_table",
    "run_ablation", "run_panel", "emit_report", "load_report", "dump_score_matrix",
    "manipulated_fraction", "LEARNER_KINDS", "MODES",
]
