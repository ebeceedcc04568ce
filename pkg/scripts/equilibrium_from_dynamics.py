"""Running time average of a random observable against its equilibrium value.

    python scripts/equilibrium_from_dynamics.py --N 6 --seed 2
"""
import argparse

import numpy as np

from puretherm.dynamics import TrajectoryConfig, observable_timeseries, running_time_average, time_statistics
from puretherm.spectra import check_nonresonance, generic_spectrum
from puretherm.states import Observable, PureState, equilibrium_average, equilibrium_fluctuation


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=6)
    ap.add_argument("--periods", type=float, default=1e4, help="horizon in units of 1 / smallest gap")
    ap.add_argument("--seed", type=int, default=2)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    sp = generic_spectrum(np.sort(rng.uniform(0.0, 1.0, args.N)))
    rep = check_nonresonance(sp)
    print(f"energies {np.array2string(sp.energies, precision=4)}  non-resonant: {rep.nonresonant}")
    s = PureState.random(args.N, rng)
    A = Observable.random(args.N, rng)
    cfg = TrajectoryConfig.for_spectrum(sp, periods=args.periods)
    t, a = observable_timeseries(A, s, sp, cfg)
    avg = running_time_average(a, t)
    eq = equilibrium_average(A, s)
    for frac in (1e-3, 1e-2, 1e-1, 1.0):
        k = max(1, int(frac * (len(t) - 1)))
        print(f"  t={t[k]:10.1f}  running average {avg[k]: .6f}  error {abs(avg[k] - eq):.2e}")
    _, var = time_statistics(A, s, sp, cfg)
    print(f"equilibrium value {eq: .6f} (width {A.spectral_width:.3f})")
    print(f"time variance {var:.6f}  vs equilibrium fluctuation {equilibrium_fluctuation(A, s):.6f}")


if __name__ == "__main__":
    main()
