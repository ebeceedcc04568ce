"""Model Hamiltonians, dense diagonalization and resonance diagnostics.

Product-basis convention: spin 0 is the most significant qubit of the
computational index, so for a bipartition after ``k`` spins the index is
``s * dim_E + e`` (subsystem index major).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from .config import DEFAULT

MAX_SPINS = 14

_SX = np.array([[0.0, 0.5], [0.5, 0.0]], dtype=complex)
_SY = np.array([[0.0, -0.5j], [0.5j, 0.0]], dtype=complex)
_SZ = np.array([[0.5, 0.0], [0.0, -0.5]], dtype=complex)

COUPLING_FORMS = ("ZZ", "XX", "Heisenberg")


class ModelTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Spectrum:
    """Sorted eigenvalues of an isolated-system Hamiltonian."""

    energies: np.ndarray
    degeneracy_tolerance: float = DEFAULT.degeneracy

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float).ravel()
        if e.size < 2:
            raise ValueError("a spectrum needs at least 2 levels")
        if not np.all(np.isfinite(e)):
            raise ValueError("energies must be finite")
        e = np.sort(e)
        e.setflags(write=False)
        object.__setattr__(self, "energies", e)

    def __len__(self) -> int:
        return self.energies.size

    @property
    def N(self) -> int:
        return self.energies.size

    @property
    def width(self) -> float:
        return float(self.energies[-1] - self.energies[0])

    def degeneracy_groups(self) -> np.ndarray:
        """Group label per level; consecutive levels closer than the tolerance share a label."""
        gaps = np.diff(self.energies)
        return np.concatenate([[0], np.cumsum(gaps > self.degeneracy_tolerance)])

    @property
    def is_degenerate(self) -> bool:
        return bool(np.any(np.diff(self.energies) <= self.degeneracy_tolerance))

    def min_gap(self) -> float:
        """Smallest nonzero level spacing (spacings inside degenerate groups are skipped)."""
        gaps = np.diff(self.energies)
        gaps = gaps[gaps > self.degeneracy_tolerance]
        if gaps.size == 0:
            raise ValueError("spectrum has no nonzero gap")
        return float(gaps.min())

    def shifted(self, origin: float | None = None) -> "Spectrum":
        origin = self.energies[0] if origin is None else origin
        return Spectrum(self.energies - origin, self.degeneracy_tolerance)


@dataclass(frozen=True)
class EigenBasis:
    """Columns of ``vectors`` are eigenvectors in the product basis."""

    vectors: np.ndarray
    spectrum: Spectrum

    @property
    def energies(self) -> np.ndarray:
        return self.spectrum.energies

    def to_product(self, m: np.ndarray) -> np.ndarray:
        """Rotate an energy-basis operator into the product basis."""
        V = self.vectors
        return V @ m @ V.conj().T

    def to_energy(self, m: np.ndarray) -> np.ndarray:
        V = self.vectors
        return V.conj().T @ m @ V


@dataclass(frozen=True)
class BipartiteModel:
    dim_S: int
    dim_E: int
    H: np.ndarray
    H_S: np.ndarray
    H_E: np.ndarray
    eigen: EigenBasis
    description: dict = field(default_factory=dict, compare=False)

    @property
    def N(self) -> int:
        return self.dim_S * self.dim_E

    @property
    def spectrum(self) -> Spectrum:
        return self.eigen.spectrum


@dataclass
class ResonanceReport:
    resonant_combinations: list[tuple[int, ...]]
    gap_degeneracies: list[tuple[int, int, int, int]]
    level_degeneracies: list[tuple[int, int]]
    coefficient_bound: int
    tolerance: float
    search_mode: str
    truncated: bool = False

    @property
    def nonresonant(self) -> bool:
        return not (self.resonant_combinations or self.gap_degeneracies or self.level_degeneracies)

    def to_dict(self) -> dict:
        return {
            "nonresonant": self.nonresonant,
            "search_mode": self.search_mode,
            "coefficient_bound": self.coefficient_bound,
            "tolerance": self.tolerance,
            "truncated": self.truncated,
            "resonant_combinations": [list(v) for v in self.resonant_combinations],
            "gap_degeneracies": [list(q) for q in self.gap_degeneracies],
            "level_degeneracies": [list(p) for p in self.level_degeneracies],
        }


def _check_hermitian(H: np.ndarray, tol: float) -> None:
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    dev = np.max(np.abs(H - H.conj().T)) if H.size else 0.0
    if dev > tol:
        raise ValueError(f"matrix is not Hermitian (max |H - H^dag| = {dev:.3g})")


def diagonalize(H, tol: float = 1e-10, degeneracy_tolerance: float = DEFAULT.degeneracy) -> EigenBasis:
    H = np.asarray(H)
    _check_hermitian(H, tol)
    H = 0.5 * (H + H.conj().T)
    w, V = np.linalg.eigh(H)
    return EigenBasis(V, Spectrum(w, degeneracy_tolerance))


def _site_op(op: np.ndarray, site: int, n: int) -> np.ndarray:
    mats = [np.eye(2, dtype=complex)] * n
    mats = list(mats)
    mats[site] = op
    return reduce(np.kron, mats)


def _pair_term(form: str, i: int, j: int, n: int) -> np.ndarray:
    if form == "ZZ":
        ops = [_SZ]
    elif form == "XX":
        ops = [_SX]
    elif form == "Heisenberg":
        ops = [_SX, _SY, _SZ]
    else:
        raise ValueError(f"unknown coupling form {form!r}; choose from {COUPLING_FORMS}")
    return sum(_site_op(o, i, n) @ _site_op(o, j, n) for o in ops)


def spin_hamiltonian(n_spins: int, fields: Sequence[float], couplings, coupling_form: str) -> np.ndarray:
    """H = sum_i h_i S^z_i + sum_(i,j,J) J * coupling(S_i, S_j) with S = sigma / 2."""
    fields = list(fields)
    if len(fields) != n_spins:
        raise ValueError(f"need {n_spins} fields, got {len(fields)}")
    dim = 2**n_spins
    H = np.zeros((dim, dim), dtype=complex)
    for i, h in enumerate(fields):
        if h:
            H += h * _site_op(_SZ, i, n_spins)
    for i, j, J in couplings:
        i, j = int(i), int(j)
        if not (0 <= i < n_spins and 0 <= j < n_spins) or i == j:
            raise ValueError(f"bad coupling pair ({i}, {j}) for {n_spins} spins")
        if J:
            H += J * _pair_term(coupling_form, i, j, n_spins)
    return H


def build_spin_model(
    n_spins: int,
    fields: Sequence[float],
    couplings: Sequence[tuple[int, int, float]] = (),
    coupling_form: str = "ZZ",
    partition: int = 1,
    degeneracy_tolerance: float = DEFAULT.degeneracy,
) -> BipartiteModel:
    """Spin-1/2 model split into the first ``partition`` spins (S) and the rest (E)."""
    if n_spins > MAX_SPINS:
        raise ModelTooLarge(f"model too large: {n_spins} spins > {MAX_SPINS} (dense diagonalization bound)")
    if n_spins < 1:
        raise ValueError("need at least one spin")
    if coupling_form not in COUPLING_FORMS:
        raise ValueError(f"unknown coupling form {coupling_form!r}; choose from {COUPLING_FORMS}")
    couplings = [(int(i), int(j), float(J)) for i, j, J in couplings]
    k = partition
    if n_spins == 1:
        # no bipartition exists; the whole spin is the subsystem
        k = 1
    elif not 1 <= k < n_spins:
        raise ValueError(f"partition must satisfy 1 <= k < n_spins, got k={k}")

    H = spin_hamiltonian(n_spins, fields, couplings, coupling_form)
    intra_S = [c for c in couplings if c[0] < k and c[1] < k]
    intra_E = [(i - k, j - k, J) for i, j, J in couplings if i >= k and j >= k]
    H_S = spin_hamiltonian(k, fields[:k], intra_S, coupling_form)
    n_E = n_spins - k
    if n_E:
        H_E = spin_hamiltonian(n_E, fields[k:], intra_E, coupling_form)
    else:
        H_E = np.zeros((1, 1), dtype=complex)
    for name, M in (("H", H), ("H_S", H_S), ("H_E", H_E)):
        assert np.max(np.abs(M - M.conj().T)) <= DEFAULT.hermitian, f"{name} assembled non-Hermitian"

    eigen = diagonalize(H, degeneracy_tolerance=degeneracy_tolerance)
    desc = {
        "n_spins": n_spins,
        "fields": [float(h) for h in fields],
        "couplings": [list(c) for c in couplings],
        "coupling_form": coupling_form,
        "partition": k,
    }
    return BipartiteModel(2**k, 2**n_E, H, H_S, H_E, eigen, desc)


def random_field_chain(
    n_spins: int,
    coupling: float = 0.05,
    field_range: tuple[float, float] = (0.5, 1.5),
    coupling_form: str = "Heisenberg",
    partition: int = 1,
    seed: int = 0,
    periodic: bool = False,
) -> BipartiteModel:
    """Weakly coupled chain with random fields; the default test bed for thermal checks."""
    rng = np.random.default_rng(seed)
    fields = rng.uniform(*field_range, size=n_spins)
    bonds = [(i, i + 1, coupling) for i in range(n_spins - 1)]
    if periodic and n_spins > 2:
        bonds.append((n_spins - 1, 0, coupling))
    return build_spin_model(n_spins, fields, bonds, coupling_form, partition)


def generic_spectrum(energies, degeneracy_tolerance: float = DEFAULT.degeneracy) -> Spectrum:
    return Spectrum(np.asarray(energies, dtype=float), degeneracy_tolerance)


def perturb_spectrum(spectrum: Spectrum, epsilon: float, seed) -> Spectrum:
    """Shift every level by an independent uniform draw in [-epsilon, epsilon]."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if epsilon == 0:
        return spectrum
    rng = np.random.default_rng(seed)
    shift = rng.uniform(-epsilon, epsilon, size=spectrum.N)
    return Spectrum(spectrum.energies + shift, spectrum.degeneracy_tolerance)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(v)
    return -v if v[nz[0]] < 0 else v


def _integer_relations(E: np.ndarray, bound: int, tol: float, max_hits: int):
    """All nonzero n with |n_j| <= bound and |n.E| <= tol, by meet in the middle."""
    N = E.size
    h = N // 2
    coeffs = np.arange(-bound, bound + 1)

    def half(idx):
        if len(idx) == 0:
            return np.zeros((1, 0), dtype=np.int64), np.zeros(1)
        grid = np.array(list(itertools.product(coeffs, repeat=len(idx))), dtype=np.int64)
        return grid, grid @ E[idx]

    left, lsum = half(np.arange(h))
    right, rsum = half(np.arange(h, N))
    order = np.argsort(rsum)
    right, rsum = right[order], rsum[order]
    lo = np.searchsorted(rsum, -lsum - tol, side="left")
    hi = np.searchsorted(rsum, -lsum + tol, side="right")
    counts = hi - lo
    truncated = False
    hits = []
    total = 0
    for li in np.flatnonzero(counts):
        rows = right[lo[li]:hi[li]]
        block = np.hstack([np.broadcast_to(left[li], (rows.shape[0], h)), rows])
        hits.append(block)
        total += block.shape[0]
        if total >= max_hits:
            truncated = True
            break
    if not hits:
        return np.zeros((0, N), dtype=np.int64), truncated
    return np.vstack(hits), truncated


def check_nonresonance(
    spectrum: Spectrum,
    coefficient_bound: int = 10,
    tolerance: float = DEFAULT.degeneracy,
    max_witnesses: int = 50,
    exhaustive_max_n: int = 6,
) -> ResonanceReport:
    """Search for integer relations sum_j n_j E_j = 0 and degenerate transition frequencies.

    Exhaustive integer scan only for N <= ``exhaustive_max_n``; otherwise only
    level and gap degeneracies are scanned.
    """
    E = spectrum.energies
    N = E.size
    truncated = False
    witnesses: list[tuple[int, ...]] = []
    mode = "pairwise"
    if N <= exhaustive_max_n:
        mode = "exhaustive"
        # a zero level resonates with any coefficient; report it once as a unit
        # vector and search the remaining levels with that coefficient held at 0
        zero = np.abs(E) <= tolerance
        seen = set()
        for j in np.flatnonzero(zero):
            seen.add(tuple(int(k == j) for k in range(N)))
        rest = np.flatnonzero(~zero)
        if rest.size:
            hits, truncated = _integer_relations(E[rest], int(coefficient_bound), tolerance, max_hits=2_000_000)
            for h in hits:
                if not h.any():
                    continue
                if reduce(math.gcd, (abs(int(x)) for x in h)) != 1:
                    continue
                v = np.zeros(N, dtype=np.int64)
                v[rest] = h
                seen.add(tuple(int(x) for x in _canonical_sign(v)))
        witnesses = sorted(seen, key=lambda w: (sum(map(abs, w)), w))
        if len(witnesses) > max_witnesses:
            witnesses = witnesses[:max_witnesses]
            truncated = True

    # level degeneracies
    levels = []
    order_gap = np.diff(E)
    for n in np.flatnonzero(order_gap <= tolerance):
        levels.append((int(n), int(n + 1)))

    # gap degeneracies: E_n - E_m == E_n' - E_m' for distinct pairs n > m
    iu, ju = np.triu_indices(N, k=1)
    gaps = E[ju] - E[iu]
    keep = gaps > tolerance
    iu, ju, gaps = iu[keep], ju[keep], gaps[keep]
    order = np.argsort(gaps, kind="stable")
    gs = gaps[order]
    close = np.flatnonzero(np.diff(gs) <= tolerance)
    quads = []
    for c in close:
        a, b = order[c], order[c + 1]
        quads.append((int(ju[a]), int(iu[a]), int(ju[b]), int(iu[b])))
        if len(quads) >= max_witnesses:
            truncated = truncated or c != close[-1]
            break
    return ResonanceReport(witnesses, quads, levels, int(coefficient_bound), float(tolerance), mode, truncated)
