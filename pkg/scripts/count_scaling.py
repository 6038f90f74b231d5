"""Mean critical-point count on the flat 2-torus against the limiting constant.

Prints, for each epsilon, the count per unit area, its standard error and the
prediction C_2(w) eps^-2, then the fitted exponent.

Usage: python3 scripts/count_scaling.py [--trials N] [--eps 0.2 0.15 0.1]
"""
import argparse

import numpy as np

from morse_spectra.fields import expected_count_mc, volume
from morse_spectra.limit_law import c_constant
from morse_spectra.weights import Weight, shape_params

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.15, 0.1])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    w = Weight("gaussian")
    C = c_constant(2, shape_params(w, 2)).value
    means = []
    print(f"{'eps':>6} {'count/area':>12} {'stderr':>9} {'C eps^-2':>10}")
    for eps in args.eps:
        est = expected_count_mc("torus", w, eps, args.trials, seed=args.seed, m=2)
        means.append(est.mean)
        print(f"{eps:6.3f} {est.mean:12.4f} {est.stderr:9.4f} {C * eps**-2:10.4f}")
    if len(args.eps) > 1:
        slope = -np.polyfit(np.log(args.eps), np.log(means), 1)[0]
        print(f"fitted exponent {slope:.3f} (area {volume('torus', 2):.4f})")
