"""Command-line front end.

Exit codes: 0 success, 1 usage problems (bad flags, unknown config keys),
2 data or format problems (unreadable files, mismatched dimensions),
3 numerical failures (non-convergence, non-finite values, timing floor).
"""

import argparse
import sys
from dataclasses import replace

import numpy as np

from .bench import (
    ExperimentSpec,
    build_method_matrix,
    make_splits,
    run_latency,
    run_mse_vs_m,
    run_mse_vs_noise,
    save_report_csv,
    save_report_json,
    seed_mean_mse,
    train_method_model,
)
from .channel import ChannelConfig, awgn
from .errors import NumericalError
from .frames import (
    FrameFormatError,
    FrameSet,
    gen_synthetic,
    load_csv,
    load_frames,
    save_frames,
    source_stats,
)
from .sensing import (
    MatrixFormatError,
    build_proposition_matrix,
    build_selection_matrix_for_m,
    build_unconstrained_matrix,
    load_matrix,
    measure,
    power_check,
    save_matrix,
)
from .vae import (
    Checkpoint,
    CheckpointFormatError,
    TrainConfig,
    interpolate,
    load_checkpoint,
    recovery_diagnostics,
    save_checkpoint,
    train,
)


class UsageError(Exception):
    """Bad invocation that argparse cannot catch (config file contents)."""


_SPEC_INT_KEYS = {
    "n_features", "sparsity", "train_frames", "test_frames",
    "lasso_eval_frames", "m_fixed", "latency_repetitions", "data_seed",
}
_SPEC_FLOAT_KEYS = {"P_T", "d", "sigma_fixed", "lasso_lambda"}
_SPEC_INT_LIST_KEYS = {"m_list", "seeds", "sample_counts"}
_SPEC_FLOAT_LIST_KEYS = {"sigma_list"}
_SPEC_STR_LIST_KEYS = {"methods"}
_TRAIN_INT_KEYS = {"epochs", "batch_size"}
_TRAIN_FLOAT_KEYS = {"lr", "lambda_l1", "kl_weight"}
_ALL_CONFIG_KEYS = (
    _SPEC_INT_KEYS | _SPEC_FLOAT_KEYS | _SPEC_INT_LIST_KEYS
    | _SPEC_FLOAT_LIST_KEYS | _SPEC_STR_LIST_KEYS
    | _TRAIN_INT_KEYS | _TRAIN_FLOAT_KEYS
)


def _parse_config_file(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _ALL_CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def _typed(key: str, value: str):
    try:
        if key in _SPEC_INT_KEYS or key in _TRAIN_INT_KEYS:
            return int(value)
        if key in _SPEC_FLOAT_KEYS or key in _TRAIN_FLOAT_KEYS:
            return float(value)
        if key in _SPEC_INT_LIST_KEYS:
            return tuple(int(v) for v in value.split(","))
        if key in _SPEC_FLOAT_LIST_KEYS:
            return tuple(float(v) for v in value.split(","))
        if key in _SPEC_STR_LIST_KEYS:
            return tuple(v.strip() for v in value.split(","))
    except ValueError as exc:
        raise UsageError(f"config key {key!r}: {exc}") from exc
    raise UsageError(f"unknown config key {key!r}")


def _build_spec(args) -> ExperimentSpec:
    """Config file first, then command-line flags on top."""
    values = {}
    if getattr(args, "config", None):
        for key, raw in _parse_config_file(args.config).items():
            values[key] = _typed(key, raw)
    flag_map = {
        "train_frames": args.train_frames,
        "test_frames": args.test_frames,
        "lasso_eval_frames": args.lasso_eval_frames,
        "m_fixed": args.m_fixed,
        "sigma_fixed": args.sigma_fixed,
        "lasso_lambda": args.lasso_lambda,
        "latency_repetitions": args.latency_repetitions,
        "data_seed": args.data_seed,
        "m_list": args.m_list,
        "sigma_list": args.sigma_list,
        "seeds": args.seeds,
        "sample_counts": args.sample_counts,
        "methods": args.methods,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
    }
    for key, flag in flag_map.items():
        if flag is not None:
            values[key] = _typed(key, flag) if isinstance(flag, str) else flag
    train_kwargs = {
        k: values.pop(k)
        for k in tuple(values)
        if k in _TRAIN_INT_KEYS | _TRAIN_FLOAT_KEYS
    }
    try:
        cfg = TrainConfig(**train_kwargs)
        return ExperimentSpec(train_config=cfg, **values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad experiment configuration: {exc}") from exc


def _load_any_frames(path) -> FrameSet:
    if str(path).endswith(".csv"):
        return load_csv(path)
    return load_frames(path)


def _cmd_gen(args) -> int:
    if min(args.frames, args.features, args.sparsity) < 1:
        raise UsageError("frames, features, and sparsity must be positive")
    frames = gen_synthetic(
        n_frames=args.frames, n_features=args.features, k=args.sparsity,
        seed=args.seed, normalize=not args.raw,
    )
    save_frames(frames, args.out)
    print(f"wrote {frames.n_frames} frames x {frames.n_features} features "
          f"(normalized={frames.normalized}) to {args.out}")
    return 0


def _cmd_stats(args) -> int:
    frames = _load_any_frames(args.frames)
    print(f"n_frames={frames.n_frames}")
    print(f"n_features={frames.n_features}")
    print(f"normalized={frames.normalized}")
    print(f"min={frames.frames.min():.6g}")
    print(f"max={frames.frames.max():.6g}")
    if frames.normalized:
        stats = source_stats(frames)
        print(f"mu_x={stats.mu_x:.6g}")
        print(f"sigma_x={stats.sigma_x:.6g}")
    return 0


def _cmd_matrix(args) -> int:
    if args.kind == "proposition":
        if not args.stats_from:
            raise UsageError("proposition matrices need --stats-from FRAMES")
        stats = source_stats(_load_any_frames(args.stats_from))
        A = build_proposition_matrix(
            args.m, args.n, args.P_T, args.d, stats, args.seed
        )
    elif args.kind == "unconstrained":
        A = build_unconstrained_matrix(args.m, args.n, args.seed)
    else:
        A = build_selection_matrix_for_m(args.m, args.n)
    save_matrix(A, args.out)
    extra = f" sigma_a={A.meta.sigma_a:.6g}" if args.kind == "proposition" else ""
    print(f"wrote {A.kind} matrix {A.m}x{A.n}{extra} digest={A.digest()[:12]} "
          f"to {args.out}")
    return 0


def _cmd_check_matrix(args) -> int:
    A = load_matrix(args.matrix)
    frames = _load_any_frames(args.frames)
    P_T = args.P_T if args.P_T is not None else A.meta.P_T
    if P_T <= 0:
        raise UsageError("power budget unknown; pass --P-T")
    fraction = power_check(A, frames, P_T)
    floor = 1.0 - 1.0 / (A.meta.d**2) if A.meta.d > 0 else None
    print(f"within_budget_fraction={fraction:.6f}")
    if floor is not None:
        print(f"guarantee_floor={floor:.6f}")
        print(f"bound_holds={fraction >= floor}")
    return 0


def _cmd_train(args) -> int:
    try:
        cfg = TrainConfig(
            epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
            lambda_l1=args.lambda_l1, kl_weight=args.kl_weight, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    frames = _load_any_frames(args.frames)
    A = load_matrix(args.matrix)
    channel = ChannelConfig(sigma_n=args.sigma_n, seed=args.seed)
    model, hist = train(
        frames, A, channel, cfg,
        power_normalize=args.power_normalize,
        P_T=args.P_T,
    )
    save_checkpoint(
        Checkpoint(model=model, norm=frames.norm, train_config=cfg,
                   sigma_n=args.sigma_n, seed=args.seed),
        args.out,
    )
    first = hist.total[0] if hist.total.size else float("nan")
    last = hist.total[-1] if hist.total.size else float("nan")
    print(f"trained {cfg.epochs} epochs in {hist.wall_time_seconds:.1f}s "
          f"loss {first:.6g} -> {last:.6g}; saved {args.out}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.model)
    A = load_matrix(args.matrix)
    frames = _load_any_frames(args.frames)
    sigma = args.sigma_n if args.sigma_n is not None else ckpt.sigma_n
    if sigma is None:
        raise UsageError("checkpoint records no sigma_n; pass --sigma-n")
    channel = ChannelConfig(sigma_n=sigma, seed=args.seed)
    diag = recovery_diagnostics(ckpt.model, A, frames, channel, key=(args.key,))
    print(f"frames={frames.n_frames}")
    print(f"mse_mean={diag['mse'].mean():.6g}")
    print(f"mse_std={diag['mse'].std():.6g}")
    print(f"recovery_l2_mean={diag['recovery_l2'].mean():.6g}")
    print(f"noise_l2_mean={diag['noise_l2'].mean():.6g}")
    return 0


def _print_report_summary(report):
    means = seed_mean_mse(report)
    for (method, m, sigma), value in sorted(means.items()):
        print(f"{method} m={m} sigma_n={sigma:g} mse={value:.6g}")


def _cmd_bench_m(args) -> int:
    spec = _build_spec(args)
    splits = make_splits(spec)
    report = run_mse_vs_m(spec, splits)
    save_report_json(report, args.out_json)
    if args.out_csv:
        save_report_csv(report, args.out_csv)
    print(f"wrote {len(report.rows)} rows to {args.out_json}")
    _print_report_summary(report)
    return 0


def _cmd_bench_noise(args) -> int:
    spec = _build_spec(args)
    splits = make_splits(spec)
    report = run_mse_vs_noise(spec, splits)
    save_report_json(report, args.out_json)
    if args.out_csv:
        save_report_csv(report, args.out_csv)
    print(f"wrote {len(report.rows)} rows to {args.out_json}")
    _print_report_summary(report)
    return 0


def _cmd_bench_latency(args) -> int:
    spec = _build_spec(args)
    splits = make_splits(spec)
    models = {}
    for method in spec.methods:
        if method in ("CsVae", "Dip"):
            model, A, _ = train_method_model(
                spec, splits, method, spec.m_fixed, spec.sigma_fixed, spec.seeds[0]
            )
            models[method] = (model, A)
    report = run_latency(spec, splits, models)
    save_report_json(report, args.out_json)
    if args.out_csv:
        save_report_csv(report, args.out_csv)
    print(f"wrote {len(report.rows)} rows to {args.out_json}")
    for row in report.rows:
        print(f"{row.method} samples={row.samples} "
              f"decode_seconds={row.decode_seconds:.6g}")
    return 0


def _cmd_interp(args) -> int:
    if args.steps < 2:
        raise UsageError("steps must be at least 2")
    ckpt = load_checkpoint(args.model)
    A = load_matrix(args.matrix)
    frames = _load_any_frames(args.frames)
    if not (0 <= args.i < frames.n_frames and 0 <= args.j < frames.n_frames):
        raise UsageError(
            f"frame indices {args.i},{args.j} out of range [0, {frames.n_frames})"
        )
    if A.digest() != ckpt.model.matrix_digest:
        raise ValueError("matrix digest does not match the model's training matrix")
    sigma = args.sigma_n if args.sigma_n is not None else (ckpt.sigma_n or 0.0)
    channel = ChannelConfig(sigma_n=sigma, seed=args.seed)
    y1 = awgn(measure(A, frames.frames[args.i]), channel, key=(0, args.i))
    y2 = awgn(measure(A, frames.frames[args.j]), channel, key=(0, args.j))
    path_frames = interpolate(ckpt.model, y1, y2, steps=args.steps)
    if ckpt.norm is not None:
        walked = FrameSet(path_frames, normalized=True, norm=ckpt.norm)
    else:
        walked = FrameSet(path_frames)
    save_frames(walked, args.out)
    gaps = np.linalg.norm(np.diff(path_frames, axis=0), axis=1)
    endpoint = np.linalg.norm(path_frames[-1] - path_frames[0])
    print(f"wrote {args.steps} interpolation frames to {args.out}")
    print(f"endpoint_l2={endpoint:.6g}")
    print(f"max_adjacent_l2={gaps.max():.6g}")
    return 0


def _add_bench_flags(sub):
    sub.add_argument("--config", help="flat key=value experiment config file")
    sub.add_argument("--out-json", required=True)
    sub.add_argument("--out-csv")
    sub.add_argument("--train-frames", dest="train_frames", type=int)
    sub.add_argument("--test-frames", dest="test_frames", type=int)
    sub.add_argument("--lasso-eval-frames", dest="lasso_eval_frames", type=int)
    sub.add_argument("--m-fixed", dest="m_fixed", type=int)
    sub.add_argument("--sigma-fixed", dest="sigma_fixed", type=float)
    sub.add_argument("--lasso-lambda", dest="lasso_lambda", type=float)
    sub.add_argument("--latency-repetitions", dest="latency_repetitions", type=int)
    sub.add_argument("--data-seed", dest="data_seed", type=int)
    sub.add_argument("--m-list", dest="m_list", help="comma-separated")
    sub.add_argument("--sigma-list", dest="sigma_list", help="comma-separated")
    sub.add_argument("--seeds", help="comma-separated")
    sub.add_argument("--sample-counts", dest="sample_counts", help="comma-separated")
    sub.add_argument("--methods", help="comma-separated subset of "
                     "CsVae,Lasso,LassoNoPt,Dip")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--batch-size", dest="batch_size", type=int)
    sub.add_argument("--lr", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csvae",
        description="Power-constrained compressive sensing with generative recovery.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="generate synthetic frames")
    gen.add_argument("--frames", type=int, required=True)
    gen.add_argument("--features", type=int, default=204)
    gen.add_argument("--sparsity", type=int, default=10)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--raw", action="store_true",
                     help="skip per-feature normalization")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen)

    stats = commands.add_parser("stats", help="describe a frame file")
    stats.add_argument("--frames", required=True, help=".csf or .csv")
    stats.set_defaults(func=_cmd_stats)

    matrix = commands.add_parser("matrix", help="build a measurement matrix")
    matrix.add_argument("--kind", required=True,
                        choices=["proposition", "unconstrained", "selection"])
    matrix.add_argument("--m", type=int, required=True)
    matrix.add_argument("--n", type=int, default=204)
    matrix.add_argument("--P-T", dest="P_T", type=float, default=0.1)
    matrix.add_argument("--d", type=float, default=2.0)
    matrix.add_argument("--seed", type=int, default=0)
    matrix.add_argument("--stats-from", dest="stats_from",
                        help="frames file for source statistics (proposition)")
    matrix.add_argument("--out", required=True)
    matrix.set_defaults(func=_cmd_matrix)

    check = commands.add_parser("check-matrix",
                                help="empirical power-budget check")
    check.add_argument("--matrix", required=True)
    check.add_argument("--frames", required=True)
    check.add_argument("--P-T", dest="P_T", type=float)
    check.set_defaults(func=_cmd_check_matrix)

    tr = commands.add_parser("train", help="train a recovery model")
    tr.add_argument("--frames", required=True)
    tr.add_argument("--matrix", required=True)
    tr.add_argument("--sigma-n", dest="sigma_n", type=float, required=True)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--epochs", type=int, default=50)
    tr.add_argument("--batch-size", dest="batch_size", type=int, default=60)
    tr.add_argument("--lr", type=float, default=1e-4)
    tr.add_argument("--lambda-l1", dest="lambda_l1", type=float, default=1e-5)
    tr.add_argument("--kl-weight", dest="kl_weight", type=float, default=1e-5)
    tr.add_argument("--power-normalize", dest="power_normalize",
                    action="store_true",
                    help="rescale transmissions to the power budget")
    tr.add_argument("--P-T", dest="P_T", type=float)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=_cmd_train)

    ev = commands.add_parser("eval", help="recovery diagnostics on frames")
    ev.add_argument("--model", required=True)
    ev.add_argument("--matrix", required=True)
    ev.add_argument("--frames", required=True)
    ev.add_argument("--sigma-n", dest="sigma_n", type=float)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--key", type=int, default=0,
                    help="noise realization key for the evaluation")
    ev.set_defaults(func=_cmd_eval)

    bm = commands.add_parser("bench-m", help="MSE sweep over measurement count")
    _add_bench_flags(bm)
    bm.set_defaults(func=_cmd_bench_m)

    bn = commands.add_parser("bench-noise", help="MSE sweep over channel noise")
    _add_bench_flags(bn)
    bn.set_defaults(func=_cmd_bench_noise)

    bl = commands.add_parser("bench-latency", help="decode latency measurement")
    _add_bench_flags(bl)
    bl.set_defaults(func=_cmd_bench_latency)

    it = commands.add_parser("interp", help="latent interpolation between frames")
    it.add_argument("--model", required=True)
    it.add_argument("--matrix", required=True)
    it.add_argument("--frames", required=True)
    it.add_argument("--i", type=int, required=True)
    it.add_argument("--j", type=int, required=True)
    it.add_argument("--steps", type=int, default=8)
    it.add_argument("--sigma-n", dest="sigma_n", type=float)
    it.add_argument("--seed", type=int, default=0)
    it.add_argument("--out", required=True)
    it.set_defaults(func=_cmd_interp)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems and 0 for --help.
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (
        FrameFormatError,
        MatrixFormatError,
        CheckpointFormatError,
        FileNotFoundError,
        IsADirectoryError,
        PermissionError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
