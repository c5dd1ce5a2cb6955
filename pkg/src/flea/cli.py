"""Command line entry point.

Config files are flat ``key = value`` text; ``#`` starts a comment. Keys
mirror ``ExperimentConfig`` (plus ``learner``/``eta`` for the learner and
``datasets``/``n_values``/``adversaries`` for the table commands). Any key can
be overridden with ``--set key=value``.

Errors go to stderr as one JSON object and the exit status is nonzero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .adversaries import AdversaryKind
from .dscore import DScoreConfig
from .harness import (
    ConfigError,
    ExperimentConfig,
    emit_report,
    load_report,
    run_ablation,
    run_detection_table,
    run_experiment,
)
from .learners import FairLearnerConfig
from .tabular import load_dataset, resolve_path, write_canonical_csv

ALL_ADVERSARIES = [k.value for k in AdversaryKind]

_INT_KEYS = {"n_sources", "num_manipulated", "repeats", "master_seed", "workers"}
_FLOAT_KEYS = {"alpha", "train_fraction"}
_BOOL_KEYS = {"standardize", "include_protected"}
_LEARNER_KEYS = {"eta": float, "epsilon": float, "init_l2": float, "adversary_steps": int,
                 "learning_rate_main": float, "learning_rate_adv": float}
_DSCORE_KEYS = {"eta_disparity": float, "dscore_epsilon": float, "dscore_init_l2": float}
_TABLE_KEYS = {"datasets", "n_values", "adversaries", "out", "format"}
_ALIASES = {"N": "n_sources", "dataset_id": "dataset", "seed": "master_seed"}


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[_ALIASES.get(key, key)] = value
    return out


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_config(raw: dict) -> tuple[ExperimentConfig, dict]:
    """Turn string key/values into an ``ExperimentConfig`` plus the table-only extras."""
    raw = dict(raw)
    extras = {k: raw.pop(k) for k in list(raw) if k in _TABLE_KEYS}
    learner = {"kind": raw.pop("learner", "unaware")}
    for key, conv in _LEARNER_KEYS.items():
        if key in raw:
            learner[key] = conv(raw.pop(key))
    dscore = {}
    for key, conv in _DSCORE_KEYS.items():
        if key in raw:
            dscore[key.removeprefix("dscore_")] = conv(raw.pop(key))
    kwargs = {}
    for key, value in raw.items():
        if key in _INT_KEYS:
            kwargs[key] = None if value.lower() == "none" else int(value)
        elif key in _FLOAT_KEYS:
            kwargs[key] = None if value.lower() == "none" else float(value)
        elif key in _BOOL_KEYS:
            kwargs[key] = _bool(value)
        elif key in ("dataset", "data_path", "adversary", "mode"):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if "dataset" not in kwargs:
        kwargs["dataset"] = _list(extras.get("datasets", ""))[0] if extras.get("datasets") \
            else None
    if kwargs["dataset"] is None:
        raise ConfigError("config needs a dataset")
    try:
        cfg = ExperimentConfig(learner=FairLearnerConfig(**learner),
                               dscore=DScoreConfig(**dscore), **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, extras


def _load(args) -> tuple[ExperimentConfig, dict]:
    raw = parse_config_text(Path(args.config).read_text())
    for item in args.set or []:
        raw.update(parse_config_text(item))
    return build_config(raw)


def _write(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_prepare_data(args):
    d = load_dataset(resolve_path(args.dataset, args.csv_path), args.dataset,
                     include_protected=not args.no_protected)
    out = args.out or f"{args.dataset}.canonical.csv"
    write_canonical_csv(d, out)
    print(json.dumps({"dataset": args.dataset, "rows": d.n, "features": d.dim,
                      "feature_names": list(d.schema.feature_names), "out": str(out)}))


def cmd_run(args):
    cfg, extras = _load(args)
    report = run_experiment(cfg)
    _write(emit_report(report, extras.get("format", "json")), args.out or extras.get("out"))


def cmd_detect(args):
    cfg, extras = _load(args)
    datasets = _list(extras.get("datasets", cfg.dataset))
    n_values = [int(n) for n in _list(extras.get("n_values", str(cfg.n_sources)))]
    adversaries = _list(extras.get("adversaries", ",".join(ALL_ADVERSARIES)))
    table = run_detection_table(datasets, n_values, adversaries, cfg)
    _emit_table(table, args, extras)


def cmd_ablate(args):
    cfg, extras = _load(args)
    adversaries = _list(extras.get("adversaries", ",".join(ALL_ADVERSARIES)))
    table = run_ablation(cfg.dataset, cfg.n_sources, adversaries, cfg)
    _emit_table(table, args, extras)


def _emit_table(table, args, extras):
    out = args.out or extras.get("out")
    if out:
        Path(out).write_text(json.dumps(table.to_dict(), indent=1))
    print(table.format())


def cmd_report(args):
    _write(emit_report(load_report(args.json), args.format), args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flea", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("prepare-data", help="preprocess a raw CSV and dump the canonical form")
    q.add_argument("dataset", choices=["compas", "adult", "germancredit", "drugs"])
    q.add_argument("csv_path", nargs="?", default=None,
                   help="raw CSV (default: file under $FLEA_DATA_DIR)")
    q.add_argument("--out")
    q.add_argument("--no-protected", action="store_true",
                   help="leave the protected attribute out of the features")
    q.set_defaults(func=cmd_prepare_data)

    for name, func, text in (("run", cmd_run, "run one experiment over all repeats"),
                             ("detect", cmd_detect, "manipulated-fraction table"),
                             ("ablate", cmd_ablate, "single-measure ablation table")):
        q = sub.add_parser(name, help=text)
        q.add_argument("config")
        q.add_argument("--set", action="append", metavar="KEY=VALUE")
        q.add_argument("--out")
        q.set_defaults(func=func)

    q = sub.add_parser("report", help="re-emit a saved JSON report")
    q.add_argument("json")
    q.add_argument("--format", choices=["json", "csv", "plotdata"], default="json")
    q.add_argument("--out")
    q.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc),
                   "command": args.command}, sys.stderr)
        sys.stderr.write("\n")
        return 2 if isinstance(exc, (ConfigError, FileNotFoundError)) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
