"""Numerical tolerances shared across the package.

Units are hbar = k_B = 1 everywhere: energies and temperatures share one
unit, times are in inverse energy, entropies are in nats.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12
    trace: float = 1e-10
    psd: float = 1e-10
    norm: float = 1e-12
    population_sum: float = 1e-12
    imaginary: float = 1e-10
    degeneracy: float = 1e-9
    constraint: float = 1e-10
    # decision thresholds (the theory says "much smaller", these put a number on it)
    typicality_ratio: float = 0.05
    psd_fourier: float = 0.05
    extensivity: float = 0.10
    temperature_match: float = 0.10

    def override(self, **kw) -> "Tolerances":
        known = {f.name for f in fields(self)}
        bad = set(kw) - known
        if bad:
            raise KeyError(f"unknown tolerance(s): {sorted(bad)}")
        return replace(self, **{k: float(v) for k, v in kw.items()})


DEFAULT = Tolerances()
