"""IEEE 9-bus event scenario (black start, load step, inverter loss) at two synchronization gains."""
import argparse
import csv
from pathlib import Path

import numpy as np

from gridvoc.cases import default_gains, ieee9_case, ieee9_profile, ieee9_events
from gridvoc.simcore import derived_channels, run_scenario, settling_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--etas", type=float, nargs="+", default=[1e-3, 1e-2])
    ap.add_argument("--out", default="results/ieee9_events")
    args = ap.parse_args()

    case = ieee9_case()
    prof = ieee9_profile(case)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for eta in args.etas:
        ts = run_scenario(case, prof, default_gains(case, eta=eta), ieee9_events())
        ch = derived_channels(case, ts)
        settle = settling_check(case, ts, channels=ch)
        path = out / f"eta_{eta:g}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            n = ch.vmag.shape[1]
            w.writerow(["t"] + [f"{name}{k + 1}" for name in ("vmag", "freq_hz", "p", "q") for k in range(n)])
            for j in range(len(ch.times)):
                w.writerow([ch.times[j], *ch.vmag[j], *ch.freq_hz[j], *ch.p[j], *ch.q[j]])
        status = "diverged" if ts.diverged else ("settled" if settle.settled else "unstable")
        pre = (ch.times > 4.5) & (ch.times < 5.0)
        print(f"eta {eta:g}: {status}; pre-event p {np.round(ch.p[pre].mean(axis=0), 4)} "
              f"(set-points {np.round(prof.p_star, 4)}); {settle.reason or ''} -> {path}")


if __name__ == "__main__":
    main()
