#!/usr/bin/env python3
"""Decoding wall time against input-sample count for all four methods.

Trains the two generative-model methods once at the operating point, then
times recovery only (model build, matrix construction, and Lipschitz
estimation stay outside the timed region).
"""

from csvae.bench import run_latency, train_method_model

from common import build_parser, emit, prepared


def main():
    args = build_parser(__doc__).parse_args()
    spec, splits = prepared(args)
    models = {}
    for method in spec.methods:
        if method in ("CsVae", "Dip"):
            model, A, secs = train_method_model(
                spec, splits, method, spec.m_fixed, spec.sigma_fixed, spec.seeds[0]
            )
            models[method] = (model, A)
            print(f"trained {method} in {secs:.1f}s")
    report = run_latency(spec, splits, models)
    emit(report, args, "latency")
    for row in report.rows:
        print(
            f"  {row.method:10s} samples={row.samples:6d} "
            f"decode={row.decode_seconds * 1e3:9.3f}ms  mse={row.mse_mean:.6f}"
        )


if __name__ == "__main__":
    main()
