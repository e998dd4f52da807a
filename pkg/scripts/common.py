"""Shared plumbing for the experiment scripts."""

import argparse
from dataclasses import replace
from pathlib import Path

from csvae.bench import (
    ExperimentSpec,
    make_splits,
    save_report_csv,
    save_report_json,
    seed_mean_mse,
)

# full scale reproduces the reference curves; desk scale shrinks the corpus
# so a sweep finishes in a couple of minutes while keeping every trend
FULL = ExperimentSpec()
DESK = replace(FULL, train_frames=5000, test_frames=1000, lasso_eval_frames=256)


def build_parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--full", action="store_true", help="full corpus instead of desk scale")
    p.add_argument("--out-dir", default="results", help="directory for JSON/CSV reports")
    p.add_argument("--seeds", type=int, nargs="+", default=None, help="override seed list")
    return p


def spec_from_args(args) -> ExperimentSpec:
    spec = FULL if args.full else DESK
    if args.seeds is not None:
        spec = replace(spec, seeds=tuple(args.seeds))
    return spec


def prepared(args):
    spec = spec_from_args(args)
    return spec, make_splits(spec)


def emit(report, args, name: str):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_report_json(report, out / f"{name}.json")
    save_report_csv(report, out / f"{name}.csv")
    print(f"wrote {out / name}.json and .csv")


def print_means(report):
    means = seed_mean_mse(report)
    for key in sorted(means):
        method, m, sigma = key
        print(f"  {method:10s} m={m:3d} sigma={sigma:.4f}  mse={means[key]:.6f}")
