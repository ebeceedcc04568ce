"""Typicality of the entropy under RPSE and FEEE: sigma/range against the number of levels.

    python scripts/typicality_scaling.py --N 8 32 128 --samples 100000
"""
import argparse

import numpy as np

from puretherm.ensembles import EnsembleSpec
from puretherm.spectra import generic_spectrum
from puretherm.thermo import ENTROPY, typicality_scaling


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, nargs="+", default=[8, 32, 128])
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--feee-samples", type=int, default=2000)
    ap.add_argument("--energy-fraction", type=float, default=0.25)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)

    def levels(N):
        return generic_spectrum(np.linspace(0.0, 1.0, N))

    def rpse(N):
        return EnsembleSpec.rpse(levels(N))

    def feee(N):
        return EnsembleSpec.feee(levels(N), args.energy_fraction)

    runs = (("RPSE", rpse, args.samples, "auto"), ("FEEE", feee, args.feee_samples, "mcmc"))
    for name, fam, n, sampler in runs:
        tab = typicality_scaling(ENTROPY, fam, args.N, n, args.seed, sampler)
        print(f"{name}  ({n} samples per size)")
        for N, r in zip(tab.N, tab.reports):
            print(f"  N={N:<5d} <S>={r.mean:.5f}  sigma={r.std:.5f}  sigma/range={r.ratio:.5f}")
        print(f"  log-log slope {tab.slope:.3f} +- {tab.slope_halfwidth:.3f}, "
              f"strictly decreasing: {tab.strictly_decreasing}")


if __name__ == "__main__":
    main()
