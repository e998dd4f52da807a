#!/usr/bin/env python3
"""Reconstruction MSE against measurement count at the fixed noise level."""

from csvae.bench import run_mse_vs_m

from common import build_parser, emit, prepared, print_means


def main():
    args = build_parser(__doc__).parse_args()
    spec, splits = prepared(args)
    report = run_mse_vs_m(spec, splits)
    emit(report, args, "mse_vs_m")
    print_means(report)


if __name__ == "__main__":
    main()
