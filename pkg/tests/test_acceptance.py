"""Acceptance criteria, one test each, against the benchmark CSVs.

Every test appends a single PASS/FAIL line to the summary printed at the end
of the session. The pair-score cache is shared so each (dataset, adversary,
repeat) score matrix is computed once across detection, ablation and the
end-to-end comparison.
"""
import dataclasses
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from flea.adversaries import apply_adversary
from flea.dscore import (
    estimate_discrepancy,
    estimate_disparity,
    exact_discrepancy_1d,
    exact_disparity_1d,
)
from flea.filtering import filter_sources, FilterConfig
from flea.harness import (
    ExperimentConfig,
    ScoreCache,
    run_ablation,
    run_detection_table,
    run_experiment,
)
from flea.learners import LEARNER_KINDS, FairLearnerConfig
from flea.tabular import Dataset, SourceBundle, split_sources

from conftest import ACCEPTANCE_LINES, data_available, make_1d

ALL = ["FP", "FL", "FB", "SP", "OP", "OL", "RP"]
REPEATS = 10
BASE = ExperimentConfig(dataset="compas", n_sources=5, repeats=REPEATS)


@pytest.fixture(scope="module")
def cache():
    return ScoreCache()


def verdict(number: int, failures: list[str], detail: str):
    status = "PASS" if not failures else "FAIL"
    line = f"criterion {number}: {status}  {detail}"
    if failures:
        line += "  | failing: " + "; ".join(failures)
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert not failures, line


def _missing(datasets):
    return [f"{d}: CSV not available" for d in datasets if not data_available(d)]


def test_criterion_1_detection_compas_adult(cache):
    failures = _missing(["compas", "adult"])
    limits = {("compas", "SP"): 0.15}
    cells, times = [], {}
    for ds in ("compas", "adult"):
        if not data_available(ds):
            continue
        start = time.perf_counter()
        table = run_detection_table([ds], [5], ALL, BASE, cache)
        times[ds] = time.perf_counter() - start
        for adv in ALL:
            v = table.value(adv, f"{ds}/N=5")
            cells.append(f"{ds}/{adv}={v:.2f}")
            if v > limits.get((ds, adv), 0.05) + 1e-12:
                failures.append(f"{ds}/{adv}={v:.2f}")
    for ds, budget in (("compas", 30 * 60), ("adult", 2 * 3600)):
        if ds in times and times[ds] > budget:
            failures.append(f"{ds} grid took {times[ds]:.0f}s > {budget}s")
    timing = ", ".join(f"{d} {t:.0f}s" for d, t in times.items())
    verdict(1, failures, " ".join(cells) + f" ({timing})")


def test_criterion_2_small_data_detection(cache):
    failures = _missing(["germancredit", "drugs"])
    cells = []
    for ds in ("germancredit", "drugs"):
        if not data_available(ds):
            continue
        table = run_detection_table([ds], [5], ALL, BASE, cache)
        col = f"{ds}/N=5"
        for adv in ("OP", "OL", "RP"):
            v = table.value(adv, col)
            cells.append(f"{ds}/{adv}={v:.2f}")
            if v > 0.05 + 1e-12:
                failures.append(f"{ds}/{adv}={v:.2f} (want 0.00±0.05)")
        if ds == "germancredit":
            for adv in ("FP", "FL"):
                v = table.value(adv, col)
                cells.append(f"{ds}/{adv}={v:.2f}")
                if abs(v - 0.27) > 0.15 + 1e-12:
                    failures.append(f"{ds}/{adv}={v:.2f} (want 0.27±0.15)")
    verdict(2, failures, " ".join(cells))


def test_criterion_3_ablation_compas(cache):
    failures = _missing(["compas"])
    detail = ""
    if not failures:
        t = run_ablation("compas", 5, ALL, BASE, cache)
        checks = [("disc-only FP", t.value("FP", "disc-only"), lambda v: v >= 0.25),
                  ("disp-only FL", t.value("FL", "disp-only"), lambda v: v >= 0.30),
                  ("FLEA FP", t.value("FP", "FLEA"), lambda v: v <= 0.05),
                  ("FLEA FL", t.value("FL", "FLEA"), lambda v: v <= 0.05)]
        detail = " ".join(f"{name}={v:.2f}" for name, v, _ in checks)
        failures = [f"{name}={v:.2f}" for name, v, ok in checks if not ok(v)]
    verdict(3, failures, detail)


def test_criterion_4_clean_baseline_unfairness(cache):
    bands = {"compas": (0.30, 0.08), "adult": (0.20, 0.08), "germancredit": (0.10, 0.06),
             "drugs": (0.30, 0.10)}
    failures = _missing(bands)
    cells = []
    for ds, (target, tol) in bands.items():
        if not data_available(ds):
            continue
        cfg = dataclasses.replace(BASE, dataset=ds, adversary=None, mode="baseline_all_data")
        dp = run_experiment(cfg, cache).aggregate["dp_violation"]["mean"]
        cells.append(f"{ds}={dp:.3f}")
        if abs(dp - target) > tol + 1e-12:
            failures.append(f"{ds}={dp:.3f} (want {target:.2f}±{tol:.2f})")
    verdict(4, failures, " ".join(cells))


def test_criterion_5_flea_matches_oracle(cache):
    failures = _missing(["germancredit", "compas"])
    worst = {"accuracy": 0.0, "dp_violation": 0.0}
    for ds in ("germancredit", "compas"):
        if not data_available(ds):
            continue
        for adv in ALL:
            for kind in LEARNER_KINDS:
                cfg = dataclasses.replace(BASE, dataset=ds, adversary=adv,
                                          learner=FairLearnerConfig(kind))
                flea = run_experiment(cfg, cache).aggregate
                oracle = run_experiment(dataclasses.replace(cfg, mode="oracle_clean_only"),
                                        cache).aggregate
                for metric in worst:
                    gap = abs(flea[metric]["mean"] - oracle[metric]["mean"])
                    worst[metric] = max(worst[metric], gap)
                    if gap > 0.05 + 1e-12:
                        failures.append(f"{ds}/{adv}/{kind}/{metric} gap={gap:.3f}")
    verdict(5, failures, f"max |FLEA-oracle| accuracy={worst['accuracy']:.3f} "
                         f"dp={worst['dp_violation']:.3f}")


def _random_pair(rng, n=200):
    """Two independent 1-D sets; a and y follow logistic links with random slopes."""
    sets = []
    for _ in range(2):
        x = rng.normal(size=n)
        a = (rng.random(n) < 1 / (1 + np.exp(-(rng.normal(0, 2) * x + rng.normal(0, 0.5))))).astype(int)
        y = (rng.random(n) < 1 / (1 + np.exp(-(rng.normal(0, 2) * x + rng.normal(0, 0.5))))).astype(int)
        a[:2] = (0, 1)
        sets.append(make_1d(x, y, a))
    return sets


def test_criterion_6_oracle_equivalence():
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    failures, gaps = [], {"disc": [], "disp": []}
    for k in range(50):
        s1, s2 = _random_pair(rng)
        for name, est, exact in (("disc", estimate_discrepancy, exact_discrepancy_1d),
                                 ("disp", estimate_disparity, exact_disparity_1d)):
            gap = est(s1, s2) - exact(s1, s2)
            gaps[name].append(gap)
            if not -0.05 - 1e-12 <= gap <= 0.02 + 1e-12:
                failures.append(f"{name}#{k} est-exact={gap:+.3f}")
    elapsed = time.perf_counter() - start
    if elapsed > 300:
        failures.append(f"runtime {elapsed:.0f}s > 300s")
    detail = " ".join(f"{n}: est-exact in [{min(g):+.3f}, {max(g):+.3f}]" for n, g in gaps.items())
    verdict(6, failures[:10] + ([f"... {len(failures)} out of tolerance"] if failures else []),
            detail + f" ({elapsed:.0f}s)")


def _population(rng, n):
    a = (rng.random(n) < 0.4).astype(int)
    x = rng.normal(a * 1.0, 1.0)
    y = (rng.random(n) < 1 / (1 + np.exp(-2 * x))).astype(int)
    return make_1d(x, y, a)


def _gammas(d: Dataset, thresholds):
    dec = d.features[:, 0][None, :] > thresholds[:, None]
    g1 = d.protected == 1
    return np.abs(dec[:, g1].mean(1) - dec[:, ~g1].mean(1))


def test_criterion_7_deviation_shrinks_with_source_size():
    rng = np.random.default_rng(7)
    thresholds = rng.normal(0.5, 1.0, 20)
    gamma_p = _gammas(_population(rng, 100_000), thresholds)
    medians = []
    for n in (100, 400, 1600):
        devs = []
        for seed in range(10):
            r = np.random.default_rng([n, seed])
            bundle = split_sources(_population(r, 5 * n), 5, seed)
            bundle = apply_adversary("OP", bundle, [0, 1], seed)
            diag = filter_sources(bundle, FilterConfig(alpha=0.6))
            devs.append(max(np.max(np.abs(_gammas(bundle[i], thresholds) - gamma_p))
                            for i in diag.selected))
        medians.append(float(np.median(devs)))
    failures = [] if medians[0] > medians[1] > medians[2] else ["medians not decreasing"]
    verdict(7, failures, "median max deviation n=100/400/1600: "
                         + "/".join(f"{m:.3f}" for m in medians))


def test_criterion_8_invariant_suite():
    here = Path(__file__).resolve().parent
    files = sorted(str(p) for p in here.glob("test_*.py") if p.name != Path(__file__).name)
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *files], capture_output=True, text=True, cwd=here.parent)
    elapsed = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    failures = []
    if proc.returncode != 0:
        failures.append(summary)
    if elapsed > 15 * 60:
        failures.append(f"runtime {elapsed:.0f}s > 900s")
    verdict(8, failures, f"{summary} ({elapsed:.0f}s)")
