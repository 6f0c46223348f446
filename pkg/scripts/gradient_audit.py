#!/usr/bin/env python3
"""Finite-difference audit of every parameter gradient on a tiny network.

Prints one line per parameter tensor with the worst relative disagreement
between the analytic gradient and central differences.
"""

import argparse

import numpy as np

from lfhn import graph, train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epsilon", type=float, default=1e-5)
    parser.add_argument("--samples", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--tol", type=float, default=1e-5)
    args = parser.parse_args()

    cfg = graph.tiny_config()
    net = graph.build_lfhn(cfg, seed=args.seed)
    train.randomize_biases(net, seed=args.seed)
    rng = np.random.default_rng(args.seed + 1)
    images = rng.uniform(size=(2, cfg.input_height, cfg.input_width,
                               cfg.input_channels))
    labels = rng.integers(0, cfg.num_classes, size=2)
    report = train.grad_check(net, images, labels, epsilon=args.epsilon,
                              max_per_tensor=args.samples, seed=args.seed)
    for line in report.format_lines():
        print(line)
    verdict = "PASS" if report.passed(args.tol) else "FAIL"
    print(f"{verdict}: max relative error {report.max_rel_err:.3e} "
          f"(tolerance {args.tol:g})")
    raise SystemExit(0 if report.passed(args.tol) else 1)


if __name__ == "__main__":
    main()
