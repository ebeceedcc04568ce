import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from puretherm.dynamics import TrajectoryConfig, time_averaged_reduced_density
from puretherm.ensembles import microcanonical_populations
from puretherm.spectra import build_spin_model, generic_spectrum, random_field_chain
from puretherm.states import (
    DegenerateBlocksError,
    DensityMatrix,
    Observable,
    PopulationSet,
    PureState,
    density_from_state,
    entropy,
    equilibrium_average,
    equilibrium_fluctuation,
    equilibrium_reduced_density,
    expectation,
    expectation_energy,
    partial_trace,
    time_averaged_density,
)
from puretherm.thermo import trace_distance

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])

weights = arrays(float, st.integers(2, 12), elements=st.floats(0.01, 10.0))


def random_state(N, seed):
    return PureState.random(N, seed)


def test_population_set_validation():
    PopulationSet([0.25, 0.75])
    with pytest.raises(ValueError):
        PopulationSet([0.5, 0.6])
    with pytest.raises(ValueError):
        PopulationSet([1.2, -0.2])
    p = PopulationSet([0.5, 0.5])
    with pytest.raises(ValueError):
        p.P[0] = 1.0


@given(weights, st.integers(0, 2**32 - 1))
def test_coefficients_have_unit_norm(w, seed):
    P = w / w.sum()
    phases = np.random.default_rng(seed).uniform(-10, 10, w.size)
    s = PureState(P, phases)
    assert abs(np.linalg.norm(s.coefficients) - 1) <= 1e-12
    assert np.all((s.phases >= 0) & (s.phases < 2 * np.pi))


def test_from_coefficients_round_trip(rng):
    c = rng.normal(size=5) + 1j * rng.normal(size=5)
    c /= np.linalg.norm(c)
    assert np.allclose(PureState.from_coefficients(c).coefficients, c)


def test_density_examples():
    rho = density_from_state(PureState([1.0, 0.0], [0.3, 1.2])).matrix
    assert np.allclose(rho, np.diag([1, 0]))
    rho = density_from_state(PureState([0.5, 0.5], [0.0, 0.0])).matrix
    assert np.allclose(rho, 0.5)


@given(st.integers(0, 2**32 - 1))
def test_density_is_idempotent(seed):
    rho = density_from_state(random_state(5, seed))
    m = rho.matrix
    assert np.max(np.abs(m @ m - m)) <= 1e-10
    rho.validate()


def test_density_matrix_validation():
    with pytest.raises(ValueError):
        DensityMatrix(np.ones((2, 3)))
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([0.7, 0.7])).validate()
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([1.5, -0.5])).validate()


def test_time_averaged_density_nondegenerate():
    sp = generic_spectrum([0.0, 1.0, 2.5])
    rho = time_averaged_density(PopulationSet([0.2, 0.3, 0.5]), sp)
    assert np.allclose(rho.matrix, np.diag([0.2, 0.3, 0.5]))
    rho, mode = time_averaged_density([1.0, 0.0, 0.0], sp, return_mode=True)
    assert mode == "diagonal"
    assert np.allclose(rho.matrix, np.diag([1, 0, 0]))


def test_time_averaged_density_degenerate_block():
    sp = generic_spectrum([0.7, 0.7])
    s = PureState([0.3, 0.7], [0.2, 1.9])
    rho, mode = time_averaged_density(s, sp, return_mode=True)
    assert mode == "block"
    assert np.allclose(rho.matrix, density_from_state(s).matrix)
    # brute-force long-time average of rho(t)
    t = np.linspace(0, 1e4, 20001)
    c = s.coefficients[None, :] * np.exp(-1j * np.outer(t, sp.energies))
    avg = np.einsum("ti,tj->ij", c, c.conj()) / t.size
    assert np.max(np.abs(avg - rho.matrix)) <= 1e-3
    with pytest.raises(DegenerateBlocksError, match="phases required"):
        time_averaged_density(s.populations, sp)


def test_expectation_examples():
    s = random_state(4, 1)
    assert expectation(np.eye(4), s) == pytest.approx(1.0)
    sp = generic_spectrum([0.0, 0.3, 1.1, 2.0])
    assert expectation(np.diag(sp.energies), s) == pytest.approx(expectation_energy(s, sp))
    assert expectation(PAULI_X, PureState([0.5, 0.5], [0.0, 0.0])) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        expectation(np.eye(3), s)


def test_equilibrium_average_examples():
    P = PopulationSet([0.1, 0.2, 0.7])
    assert equilibrium_average(np.eye(3), P) == pytest.approx(1.0)
    assert equilibrium_average(PAULI_X, [0.3, 0.7]) == 0.0


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_equilibrium_average_is_linear(a, b, seed):
    A = Observable.random(4, seed)
    B = Observable.random(4, seed + 1)
    P = random_state(4, seed).P
    lhs = equilibrium_average(a * A.matrix + b * B.matrix, P)
    rhs = a * equilibrium_average(A, P) + b * equilibrium_average(B, P)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_equilibrium_fluctuation_examples():
    assert equilibrium_fluctuation(np.diag([1.0, 2.0, 3.0]), [0.2, 0.3, 0.5]) == 0.0
    assert equilibrium_fluctuation(PAULI_X, [0.5, 0.5]) == pytest.approx(0.5)


@given(st.integers(0, 2**32 - 1))
def test_equilibrium_fluctuation_non_negative(seed):
    A = Observable.random(5, seed)
    assert equilibrium_fluctuation(A, random_state(5, seed).P) >= 0.0


def test_entropy_examples():
    assert entropy(np.full(4, 0.25)) == pytest.approx(math.log(4))
    assert entropy([1.0, 0.0, 0.0]) == 0.0
    assert entropy([0.5, 0.25, 0.25]) == pytest.approx(1.039721, abs=1e-6)
    batch = entropy(np.array([[1.0, 0.0], [0.5, 0.5]]))
    assert np.allclose(batch, [0.0, math.log(2)])


@given(weights)
def test_entropy_range(w):
    P = w / w.sum()
    S = entropy(P)
    assert -1e-12 <= S <= math.log(P.size) + 1e-12


def test_expectation_energy_examples():
    assert expectation_energy(np.full(4, 0.25), generic_spectrum([0, 1, 2, 3])) == pytest.approx(1.5)
    assert expectation_energy([1.0, 0.0, 0.0], generic_spectrum([-2.0, 0.0, 1.0])) == -2.0
    assert expectation_energy([0.2, 0.8], generic_spectrum([0.0, 1.0])) == pytest.approx(0.8)


def test_partial_trace_product_state(rng):
    mu = density_from_state(random_state(3, 4)).matrix
    nu = density_from_state(random_state(2, 5)).matrix
    rho = np.kron(mu, nu)
    assert np.allclose(partial_trace(rho, 3, 2).matrix, mu, atol=1e-12)
    assert np.allclose(partial_trace(rho, 3, 2, keep="E").matrix, nu, atol=1e-12)


def test_partial_trace_bell_state():
    psi = np.array([1, 0, 0, 1]) / math.sqrt(2)
    assert np.allclose(partial_trace(np.outer(psi, psi), 2, 2).matrix, np.eye(2) / 2)


def test_partial_trace_schmidt_spectra_agree():
    rho = density_from_state(random_state(12, 9))
    a = partial_trace(rho, 4, 3)
    b = partial_trace(rho, 4, 3, keep="E")
    assert np.trace(a.matrix).real == pytest.approx(1.0)
    ea = np.sort(np.linalg.eigvalsh(a.matrix))[-3:]
    eb = np.sort(np.linalg.eigvalsh(b.matrix))
    assert np.allclose(ea, eb, atol=1e-12)
    a.validate()
    with pytest.raises(ValueError):
        partial_trace(rho, 5, 3)


@given(st.integers(0, 2**32 - 1))
def test_partial_trace_keeps_trace_and_hermiticity(seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(6, 6)) + 1j * r.normal(size=(6, 6))
    rho = X @ X.conj().T
    rho /= np.trace(rho)
    mu = partial_trace(rho, 2, 3).matrix
    assert abs(np.trace(mu) - 1) <= 1e-12
    assert np.max(np.abs(mu - mu.conj().T)) <= 1e-12


def test_equilibrium_reduced_density_eigenstate_of_free_model():
    m = build_spin_model(3, [1.0, 1.3, 0.6], partition=1)
    n = 2
    P = np.zeros(m.N)
    P[n] = 1.0
    mu = equilibrium_reduced_density(P, m).matrix
    assert np.allclose(mu @ mu, mu, atol=1e-10)
    assert np.trace(mu).real == pytest.approx(1.0)


def test_equilibrium_reduced_density_uniform():
    m = random_field_chain(4, seed=2, partition=2)
    mu = equilibrium_reduced_density(np.full(m.N, 1 / m.N), m).matrix
    assert np.allclose(mu, np.eye(4) / 4, atol=1e-12)


def test_equilibrium_reduced_density_matches_full_rotation():
    m = random_field_chain(4, seed=3)
    s = random_state(m.N, 3)
    mu = equilibrium_reduced_density(s, m).matrix
    rho_bar = time_averaged_density(s, m.spectrum).matrix
    ref = partial_trace(m.eigen.to_product(rho_bar), m.dim_S, m.dim_E).matrix
    assert np.allclose(mu, ref, atol=1e-12)


@pytest.mark.slow
def test_microcanonical_reduced_density_matches_trajectory():
    m = random_field_chain(8, coupling=0.05, seed=4)
    e = m.spectrum.energies
    P = microcanonical_populations(m.spectrum, e[0] + 0.3 * m.spectrum.width, e[0] + 0.5 * m.spectrum.width)
    s = PureState(P, np.random.default_rng(0).uniform(0, 2 * np.pi, m.N))
    mu_bar = equilibrium_reduced_density(s, m)
    cfg = TrajectoryConfig(t_end=1e4 / m.spectrum.min_gap() / 100, n_samples=20_000, sampling="random", seed=1)
    mu_t = time_averaged_reduced_density(s, m, cfg)
    assert trace_distance(mu_bar, mu_t) <= 1e-2


def test_observable_validation():
    with pytest.raises(ValueError):
        Observable(np.array([[0, 1], [0, 0]]))
    A = Observable.random(3, 0)
    assert A.spectral_width > 0
