"""Unitary evolution as uniform translation of the phases on the N-torus.

Evolution is evaluated analytically in the energy basis: with stored phases
``alpha_n`` at t = 0, the phases at time t are ``alpha_n + E_n t`` (hbar = 1)
and the coefficients are ``sqrt(P_n) exp(-i alpha_n(t))``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT
from .spectra import BipartiteModel, Spectrum
from .states import DensityMatrix, PureState, TWO_PI, _matrix

_CHUNK = 4096


@dataclass(frozen=True)
class TrajectoryConfig:
    t_end: float
    t_start: float = 0.0
    n_samples: int = 10_000
    sampling: str = "uniform"  # or "random"
    seed: int = 0

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")
        if self.n_samples < 2:
            raise ValueError("need at least 2 time samples")
        if self.sampling not in ("uniform", "random"):
            raise ValueError("sampling must be 'uniform' or 'random'")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def times(self) -> np.ndarray:
        if self.sampling == "uniform":
            return np.linspace(self.t_start, self.t_end, self.n_samples)
        rng = np.random.default_rng(self.seed)
        return np.sort(rng.uniform(self.t_start, self.t_end, self.n_samples))

    @classmethod
    def for_spectrum(
        cls,
        spectrum: Spectrum,
        periods: float = 1e4,
        n_samples: int | None = None,
        sampling: str = "uniform",
        seed: int = 0,
        points_per_period: int = 8,
        max_samples: int = 2_000_000,
    ) -> "TrajectoryConfig":
        """T = periods / (smallest nonzero gap).

        Without an explicit ``n_samples`` the uniform grid resolves the fastest
        beat (the spectral width) with ``points_per_period`` points, but never
        uses fewer than 10^4 points.
        """
        T = periods / spectrum.min_gap()
        if n_samples is None:
            need = math.ceil(points_per_period * T * spectrum.width / TWO_PI) + 1
            n_samples = max(10_000, need)
            if n_samples > max_samples:
                warnings.warn(
                    f"time grid capped at {max_samples} points; the fastest beat is under-resolved",
                    stacklevel=2,
                )
                n_samples = max_samples
        return cls(t_end=T, n_samples=int(n_samples), sampling=sampling, seed=seed)


@dataclass(frozen=True)
class FourierProbe:
    index_vector: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "index_vector", tuple(int(x) for x in self.index_vector))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.index_vector, dtype=float)

    @property
    def is_zero(self) -> bool:
        return not any(self.index_vector)


def _times(cfg) -> tuple[np.ndarray, str]:
    if isinstance(cfg, TrajectoryConfig):
        return cfg.times(), cfg.sampling
    t = np.asarray(cfg, dtype=float)
    return t, "uniform"


def _avg_weights(times: np.ndarray, sampling: str) -> np.ndarray:
    """Weights w with sum(w * f) = time average of f over the grid."""
    n = times.size
    if sampling == "random":
        return np.full(n, 1.0 / n)
    dt = np.diff(times)
    w = np.zeros(n)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w / (times[-1] - times[0])


def propagate_phases(alpha0, spectrum: Spectrum, t):
    """Phases at time(s) t, reduced modulo 2 pi; array t gives shape (len(t), N)."""
    alpha0 = np.asarray(alpha0, dtype=float)
    E = spectrum.energies
    if alpha0.shape[-1] != E.size:
        raise ValueError("phase vector length does not match the spectrum")
    t = np.asarray(t, dtype=float)
    # one multiplication E*t per entry: no accumulation error over long times
    wt = np.mod(np.multiply.outer(t, E), TWO_PI)
    return np.mod(alpha0 + wt, TWO_PI)


def coefficients_at(state: PureState, spectrum: Spectrum, t) -> np.ndarray:
    alpha = propagate_phases(state.phases, spectrum, t)
    return np.sqrt(state.P) * np.exp(-1j * alpha)


def observable_timeseries(A, state0: PureState, spectrum: Spectrum, cfg) -> tuple[np.ndarray, np.ndarray]:
    """a(t) = <psi(t)|A|psi(t)> on the grid; returns (times, values)."""
    A = _matrix(A)
    N = spectrum.N
    if A.shape != (N, N) or state0.P.size != N:
        raise ValueError("observable, state and spectrum dimensions differ")
    times, _ = _times(cfg)
    out = np.empty(times.size)
    AT = A.T
    for s in range(0, times.size, _CHUNK):
        C = coefficients_at(state0, spectrum, times[s:s + _CHUNK])
        out[s:s + _CHUNK] = np.real(np.sum(C.conj() * (C @ AT), axis=1))
    return times, out


def running_time_average(series, times=None, sampling: str = "uniform") -> np.ndarray:
    """Prefix time averages (1/T) int_0^T a dt along the series.

    Uniform grids use the cumulative trapezoid rule; random grids use the
    cumulative sample mean.
    """
    a = np.asarray(series, dtype=float)
    if sampling == "random":
        return np.cumsum(a) / np.arange(1, a.size + 1)
    if times is None:
        times = np.arange(a.size, dtype=float)
    times = np.asarray(times, dtype=float)
    dt = np.diff(times)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (a[1:] + a[:-1]) * dt)])
    elapsed = times - times[0]
    out = np.empty_like(a)
    out[0] = a[0]
    out[1:] = integral[1:] / elapsed[1:]
    return out


def time_statistics(A, state0: PureState, spectrum: Spectrum, cfg) -> tuple[float, float]:
    """Time mean and time variance of a(t) over the trajectory."""
    times, a = observable_timeseries(A, state0, spectrum, cfg)
    sampling = cfg.sampling if isinstance(cfg, TrajectoryConfig) else "uniform"
    w = _avg_weights(times, sampling)
    mean = float(w @ a)
    var = float(w @ (a - mean) ** 2)
    return mean, var


def empirical_phase_fourier(state0: PureState, spectrum: Spectrum, cfg, probe) -> complex:
    """Time average of exp(-i sum_j n_j alpha_j(t)) along the trajectory (no (2 pi)^-N factor)."""
    n = probe.array if isinstance(probe, FourierProbe) else np.asarray(probe, dtype=float)
    if n.size != spectrum.N:
        raise ValueError("probe length does not match the spectrum")
    times, sampling = _times(cfg)
    w = _avg_weights(times, cfg.sampling if isinstance(cfg, TrajectoryConfig) else sampling)
    out = 0j
    for s in range(0, times.size, _CHUNK):
        alpha = propagate_phases(state0.phases, spectrum, times[s:s + _CHUNK])
        out += np.sum(w[s:s + _CHUNK] * np.exp(-1j * (alpha @ n)))
    return complex(out)


@dataclass
class PsdReport:
    verdict: str
    threshold: float
    max_magnitude: float
    mean_magnitude: float
    n_probes: int
    witnesses: list = field(default_factory=list)
    constant_modes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "threshold": self.threshold,
            "max_magnitude": self.max_magnitude,
            "mean_magnitude": self.mean_magnitude,
            "n_probes": self.n_probes,
            "witnesses": self.witnesses,
            "constant_modes": self.constant_modes,
        }


def random_probes(N: int, budget: int, seed, max_entry: int = 3) -> list[FourierProbe]:
    rng = np.random.default_rng(seed)
    probes = []
    while len(probes) < budget:
        v = rng.integers(-max_entry, max_entry + 1, size=N)
        if v.any():
            probes.append(FourierProbe(v))
    return probes


def psd_uniformity_report(
    state0: PureState,
    spectrum: Spectrum,
    cfg,
    probe_budget: int = 50,
    seed=0,
    threshold: float = DEFAULT.psd_fourier,
    extra_probes=(),
) -> PsdReport:
    """Check that nonzero Fourier coefficients of the phase distribution vanish.

    Probes supported only on zero-energy levels pick up a constant phase; they
    are listed under ``constant_modes`` and do not enter the verdict.
    """
    zero = np.abs(spectrum.energies) <= spectrum.degeneracy_tolerance
    probes = [FourierProbe(p) if not isinstance(p, FourierProbe) else p for p in extra_probes]
    probes += random_probes(spectrum.N, probe_budget, seed)
    mags = []
    witnesses, constant = [], []
    for p in probes:
        mag = abs(empirical_phase_fourier(state0, spectrum, cfg, p))
        support = np.flatnonzero(p.array)
        entry = {"probe": list(p.index_vector), "magnitude": mag}
        if support.size and np.all(zero[support]):
            constant.append(entry)
            continue
        mags.append(mag)
        if mag > threshold:
            witnesses.append(entry)
    mags = np.array(mags) if mags else np.zeros(1)
    verdict = "FAIL" if witnesses else "PASS"
    return PsdReport(verdict, threshold, float(mags.max()), float(mags.mean()), len(probes), witnesses, constant)


def reduced_density_timeseries(state0: PureState, model: BipartiteModel, cfg) -> tuple[np.ndarray, np.ndarray]:
    """mu(t) = Tr_E |psi(t)><psi(t)| on the grid, shape (n_times, dim_S, dim_S)."""
    times, _ = _times(cfg)
    out = np.empty((times.size, model.dim_S, model.dim_S), dtype=complex)
    for s, mu in _reduced_chunks(state0, model, times):
        out[s:s + mu.shape[0]] = mu
    return times, out


def _reduced_chunks(state0, model, times):
    VT = model.eigen.vectors.T
    if state0.P.size != model.N:
        raise ValueError("state dimension does not match the model")
    for s in range(0, times.size, _CHUNK):
        C = coefficients_at(state0, model.spectrum, times[s:s + _CHUNK])
        M = (C @ VT).reshape(-1, model.dim_S, model.dim_E)
        yield s, np.einsum("kse,kte->kst", M, M.conj())


def time_averaged_reduced_density(state0: PureState, model: BipartiteModel, cfg) -> DensityMatrix:
    """Finite-time average of mu(t), accumulated chunkwise."""
    times, sampling = _times(cfg)
    w = _avg_weights(times, cfg.sampling if isinstance(cfg, TrajectoryConfig) else sampling)
    acc = np.zeros((model.dim_S, model.dim_S), dtype=complex)
    for s, mu in _reduced_chunks(state0, model, times):
        acc += np.einsum("k,kst->st", w[s:s + mu.shape[0]], mu)
    return DensityMatrix(acc)
