#!/usr/bin/env python3
"""Decay-rate study: fitted slopes of ln ||E_i||_k against -ln(lam*ell).

Runs the stock scalar toy across a lam*ell grid at fixed frequency, fits the
per-step decay for k = 0, 1, 2, and writes one CSV per grid value plus an SVG
chart of the k = 0 run at the largest scale separation.
"""

import argparse
import math
from pathlib import Path

from tamelab import iteration, verify
from tamelab.cli import emit_plot
from tamelab.problem import IterationParams, make_scalar_toy


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--lam", type=int, default=64)
    parser.add_argument("--lambda-ell", type=float, nargs="+",
                        default=[64.0, 128.0, 256.0])
    parser.add_argument("--n-steps", type=int, default=5)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", type=Path, default=Path("out"))
    args = parser.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    print(f"{'lam*ell':>8} {'k':>2} {'slope':>9} {'-ln(ll)':>9} "
          f"{'ratio':>7} {'r^2':>7}")
    last_trace = None
    for ll in args.lambda_ell:
        params = IterationParams(lam=args.lam, ell=ll / args.lam, k0=7, k1=2,
                                 n_points=2048, n_steps=args.n_steps,
                                 seed=args.seed)
        trace = iteration.run(make_scalar_toy(params, 0.2))
        fits = [verify.fit_decay(trace, k) for k in (0, 1, 2)]
        for fit in fits:
            target = -math.log(ll)
            print(f"{ll:>8g} {fit.k:>2} {fit.slope:>9.4f} {target:>9.4f} "
                  f"{fit.slope / target:>7.3f} {fit.r_squared:>7.4f}")
        verify.decay_fits_to_csv(fits, args.out / f"decay_ll{ll:g}.csv")
        last_trace = trace
    emit_plot(last_trace, args.out / "decay.svg")
    print(f"wrote CSVs and {args.out / 'decay.svg'}")


if __name__ == "__main__":
    main()
