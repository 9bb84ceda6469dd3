#!/usr/bin/env python3
"""Self-interaction stall demo.

Runs the scalar toy with and without the strength-1 self-interaction term at
two frequencies sharing the same lam*ell.  The clean runs decay at the full
1/(lam*ell) rate and agree with each other; the self-interaction runs stall
toward the 1/ell-limited rate and get worse as the frequency doubles.
"""

import argparse

from tamelab import verify
from tamelab.problem import IterationParams


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--strength", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    print(f"{'lam':>4} {'ell':>5} {'clean slope':>12} {'r5 slope':>10} "
          f"{'ratio':>6}  stalled")
    for lam, ell in ((32, 4.0), (64, 2.0)):
        params = IterationParams(lam=lam, ell=ell, k0=7, k1=2, n_points=2048,
                                 n_steps=5, seed=args.seed)
        report = verify.demonstrate_r5_failure(params, args.strength)
        print(f"{lam:>4} {ell:>5g} {report.fit_clean.slope:>12.4f} "
              f"{report.fit_r5.slope:>10.4f} {report.slope_ratio:>6.3f}  "
              f"{report.stalled()}")


if __name__ == "__main__":
    main()
