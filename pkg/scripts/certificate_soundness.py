"""Sample random certified networks and check each is linearly stable and converges from a black start."""
import argparse
import time

import numpy as np

from gridvoc.certify import condition2
from gridvoc.linstab import converges_from_black_start, linearize, origin_instability
from gridvoc.randomcases import random_certified_case


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cases", type=int, default=200)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--duration", type=float, default=10.0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    t0 = time.time()
    bad, worst, margins = [], 0.0, []
    for k in range(args.cases):
        case, prof, g = random_certified_case(rng)
        cert = condition2(case, prof, g)
        lin = linearize(case, prof, g)
        ok, dist = converges_from_black_start(case, prof, g, args.duration)
        worst = max(worst, dist)
        margins.append(lin.zeta_min)
        if not (lin.stable and ok and origin_instability(case, prof, g).passed):
            bad.append(k)
            print(f"counterexample {k}: N={case.n_inverters} zeta_min={lin.zeta_min:.3g} dist={dist:.3g} "
                  f"c_max={cert.c_max:.3g}")
    print(f"{args.cases} cases in {time.time() - t0:.0f} s; counterexamples {len(bad)}; worst final distance "
          f"{worst:.2e}; zeta_min range {min(margins):.3g} .. {max(margins):.3g}")


if __name__ == "__main__":
    main()
