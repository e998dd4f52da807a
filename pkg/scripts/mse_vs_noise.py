#!/usr/bin/env python3
"""Reconstruction MSE against channel noise power at the fixed m."""

from csvae.bench import run_mse_vs_noise

from common import build_parser, emit, prepared, print_means


def main():
    args = build_parser(__doc__).parse_args()
    spec, splits = prepared(args)
    report = run_mse_vs_noise(spec, splits)
    emit(report, args, "mse_vs_noise")
    print_means(report)


if __name__ == "__main__":
    main()
