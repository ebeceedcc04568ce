"""Population/phase algebra of pure states.

A pure state is stored as populations ``P_n`` and phases ``alpha_n`` with
coefficients ``c_n = sqrt(P_n) * exp(-1j * alpha_n)`` in the energy basis.
The stored phase is the instantaneous phase at t = 0, so evolution adds
``E_n * t`` (see :mod:`puretherm.dynamics`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .config import DEFAULT
from .spectra import BipartiteModel, Spectrum

TWO_PI = 2.0 * np.pi


class DegenerateBlocksError(ValueError):
    pass


@dataclass(frozen=True)
class PopulationSet:
    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float).ravel()
        if P.size < 1:
            raise ValueError("empty population set")
        if np.any(P < 0):
            raise ValueError(f"negative population {P.min():.3g}")
        s = P.sum()
        if abs(s - 1.0) > DEFAULT.population_sum * max(1, P.size):
            raise ValueError(f"populations sum to {s!r}, not 1")
        P = P.copy()
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @classmethod
    def normalized(cls, w) -> "PopulationSet":
        w = np.clip(np.asarray(w, dtype=float), 0.0, None)
        return cls(w / w.sum())

    def __len__(self):
        return self.P.size


@dataclass(frozen=True)
class PureState:
    populations: PopulationSet
    phases: np.ndarray

    def __post_init__(self):
        if not isinstance(self.populations, PopulationSet):
            object.__setattr__(self, "populations", PopulationSet(self.populations))
        a = np.mod(np.asarray(self.phases, dtype=float).ravel(), TWO_PI)
        if a.size != self.populations.P.size:
            raise ValueError("phases and populations differ in length")
        a.setflags(write=False)
        object.__setattr__(self, "phases", a)

    @property
    def P(self) -> np.ndarray:
        return self.populations.P

    @property
    def coefficients(self) -> np.ndarray:
        return np.sqrt(self.P) * np.exp(-1j * self.phases)

    @classmethod
    def from_coefficients(cls, c) -> "PureState":
        c = np.asarray(c, dtype=complex)
        c = c / np.linalg.norm(c)
        return cls(PopulationSet.normalized(np.abs(c) ** 2), -np.angle(c))

    @classmethod
    def random(cls, N: int, seed=None, populations=None) -> "PureState":
        """Phases uniform on the torus; populations flat on the simplex unless given."""
        rng = np.random.default_rng(seed)
        if populations is None:
            g = rng.exponential(size=N)
            populations = g / g.sum()
        return cls(PopulationSet.normalized(populations), rng.uniform(0, TWO_PI, size=N))


@dataclass(frozen=True)
class DensityMatrix:
    matrix: np.ndarray
    dims: tuple[int, int] | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"density matrix must be square, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def validate(self, tol=DEFAULT) -> "DensityMatrix":
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > tol.hermitian:
            raise ValueError("density matrix not Hermitian")
        if abs(np.trace(m).real - 1) > tol.trace:
            raise ValueError(f"density matrix trace {np.trace(m).real!r} != 1")
        if np.linalg.eigvalsh(m).min() < -tol.psd:
            raise ValueError("density matrix has negative eigenvalues")
        return self


@dataclass(frozen=True)
class Observable:
    """Hermitian operator given by its matrix elements A_nm in the energy basis."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"observable must be square, got {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > DEFAULT.hermitian * max(1.0, np.abs(m).max()):
            raise ValueError("observable is not Hermitian")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def spectral_width(self) -> float:
        w = np.linalg.eigvalsh(self.matrix)
        return float(w[-1] - w[0])

    @classmethod
    def random(cls, N: int, seed=None) -> "Observable":
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(N, N)) + 1j * rng.normal(size=(N, N))
        return cls((X + X.conj().T) / 2)


PopulationsLike = Union[PopulationSet, PureState, np.ndarray, list]


def as_populations(x: PopulationsLike) -> np.ndarray:
    if isinstance(x, PureState):
        return x.P
    if isinstance(x, PopulationSet):
        return x.P
    return np.asarray(x, dtype=float)


def _matrix(A) -> np.ndarray:
    return A.matrix if isinstance(A, (Observable, DensityMatrix)) else np.asarray(A)


def density_from_state(state: PureState) -> DensityMatrix:
    c = state.coefficients
    return DensityMatrix(np.outer(c, c.conj()))


def time_averaged_density(state: PopulationsLike, spectrum: Spectrum, return_mode: bool = False):
    """Infinite-time average of |psi(t)><psi(t)| in the energy basis.

    For a non-degenerate spectrum this is diag(P). Coherences inside a
    degenerate group do not dephase and are kept, which needs the phases.
    """
    P = as_populations(state)
    if P.size != spectrum.N:
        raise ValueError(f"{P.size} populations for a {spectrum.N}-level spectrum")
    groups = spectrum.degeneracy_groups()
    multi = [np.flatnonzero(groups == g) for g in np.unique(groups)]
    multi = [idx for idx in multi if idx.size > 1]
    # a degenerate group with a single populated level has no coherence to keep
    coherent = [idx for idx in multi if np.count_nonzero(P[idx]) > 1]
    if not coherent:
        rho = DensityMatrix(np.diag(P).astype(complex))
        mode = "diagonal"
    else:
        if not isinstance(state, PureState):
            raise DegenerateBlocksError("phases required for degenerate blocks")
        full = density_from_state(state).matrix
        rho_m = np.diag(P).astype(complex)
        for idx in coherent:
            rho_m[np.ix_(idx, idx)] = full[np.ix_(idx, idx)]
        rho = DensityMatrix(rho_m)
        mode = "block"
    return (rho, mode) if return_mode else rho


def expectation(A, state: PureState) -> float:
    A = _matrix(A)
    c = state.coefficients
    if A.shape != (c.size, c.size):
        raise ValueError(f"observable shape {A.shape} does not match state dimension {c.size}")
    val = np.vdot(c, A @ c)
    scale = max(1.0, float(np.abs(A).max()))
    assert abs(val.imag) <= DEFAULT.imaginary * scale, f"expectation has imaginary part {val.imag}"
    return float(val.real)


def equilibrium_average(A, P: PopulationsLike) -> float:
    """Time-averaged expectation value: sum_n A_nn P_n."""
    A = _matrix(A)
    P = as_populations(P)
    return float(np.real(np.diagonal(A)) @ P)


def equilibrium_fluctuation(A, P: PopulationsLike) -> float:
    """Mean squared deviation of a(t) around its time average (non-degenerate gaps).

    sum over n != m of |A_nm|^2 P_n P_m.
    """
    A = _matrix(A)
    P = as_populations(P)
    W = np.abs(A) ** 2
    val = P @ W @ P - np.sum(np.diagonal(W) * P**2)
    return float(max(val, 0.0))


def entropy(P: PopulationsLike) -> float | np.ndarray:
    """Shannon entropy of the populations in nats, with 0 log 0 = 0.

    Accepts a single population vector or a (n_samples, N) batch.
    """
    P = as_populations(P)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, -P * np.log(np.where(P > 0, P, 1.0)), 0.0)
    S = terms.sum(axis=-1)
    return float(S) if np.ndim(S) == 0 else S


def expectation_energy(P: PopulationsLike, spectrum: Spectrum) -> float | np.ndarray:
    P = as_populations(P)
    if P.shape[-1] != spectrum.N:
        raise ValueError(f"{P.shape[-1]} populations for a {spectrum.N}-level spectrum")
    U = P @ spectrum.energies
    return float(U) if np.ndim(U) == 0 else U


def partial_trace(rho, dim_S: int, dim_E: int, keep: str = "S") -> DensityMatrix:
    """Reduced density matrix on S (trace over E) or on E (trace over S).

    Basis index is ``s * dim_E + e``.
    """
    m = _matrix(rho)
    if m.shape != (dim_S * dim_E, dim_S * dim_E):
        raise ValueError(f"dimension {m.shape[0]} does not factorize as {dim_S} x {dim_E}")
    t = m.reshape(dim_S, dim_E, dim_S, dim_E)
    if keep == "S":
        return DensityMatrix(np.einsum("iaja->ij", t), None)
    if keep == "E":
        return DensityMatrix(np.einsum("aiaj->ij", t), None)
    raise ValueError("keep must be 'S' or 'E'")


def reduced_projectors(model: BipartiteModel) -> np.ndarray:
    """Tr_E |v_n><v_n| for every eigenvector, shape (N, dim_S, dim_S)."""
    V = model.eigen.vectors.T.reshape(model.N, model.dim_S, model.dim_E)
    return np.einsum("nse,nte->nst", V, V.conj())


def equilibrium_reduced_density(state: PopulationsLike, model: BipartiteModel) -> DensityMatrix:
    """Tr_E of the time-averaged density matrix rotated to the product basis."""
    rho_bar = time_averaged_density(state, model.spectrum)
    m = rho_bar.matrix
    if np.count_nonzero(m - np.diag(np.diagonal(m))) == 0:
        # diagonal case: avoid the N^3 rotation
        mu = np.einsum("n,nst->st", np.real(np.diagonal(m)), reduced_projectors(model))
        return DensityMatrix(mu)
    return partial_trace(model.eigen.to_product(m), model.dim_S, model.dim_E)
