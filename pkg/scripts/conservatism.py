"""Compare the certified gain bound on the three-bus system with its critical gain."""
import argparse

import numpy as np

from gridvoc.cases import default_gains, threebus_case, threebus_profile
from gridvoc.certify import condition2, prop2_powerform
from gridvoc.linstab import simulated_critical_eta


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=5.0)
    args = ap.parse_args()

    case = threebus_case()
    prof = threebus_profile(case)
    g = default_gains(case, alpha=args.alpha)
    crit = simulated_critical_eta(case, prof, g, 1e-4, 5e-2)
    print(f"critical eta {crit.eta_linear:.4e} (below converges {crit.below_converges}, "
          f"above converges {crit.above_converges})")
    cmax = condition2(case, prof, g).c_max
    for frac in (0.25, 0.5, 0.75, 1.0):
        b = condition2(case, prof, g, frac * cmax).eta_bound
        print(f"c = {frac:4.2f} c_max: eta_bound {b:.4e}, critical/bound {crit.eta_linear / b:6.1f}")
    p2 = prop2_powerform(case, prof, g)
    print(f"power-form bound {p2.eta_bound:.4e}, critical/bound {crit.eta_linear / p2.eta_bound:.1f}")


if __name__ == "__main__":
    main()
