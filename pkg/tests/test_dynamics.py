import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from puretherm.dynamics import (
    FourierProbe,
    TrajectoryConfig,
    coefficients_at,
    empirical_phase_fourier,
    observable_timeseries,
    propagate_phases,
    psd_uniformity_report,
    random_probes,
    reduced_density_timeseries,
    running_time_average,
    time_averaged_reduced_density,
    time_statistics,
)
from puretherm.ensembles import microcanonical_populations
from puretherm.spectra import build_spin_model, generic_spectrum, random_field_chain
from puretherm.states import (
    Observable,
    PureState,
    equilibrium_average,
    equilibrium_fluctuation,
    equilibrium_reduced_density,
)
from puretherm.thermo import trace_distance

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])
IRR3 = generic_spectrum([1.0, math.sqrt(2), math.sqrt(3)])


def test_trajectory_config_validation():
    with pytest.raises(ValueError):
        TrajectoryConfig(t_end=0.0)
    with pytest.raises(ValueError):
        TrajectoryConfig(t_end=1.0, n_samples=1)
    with pytest.raises(ValueError):
        TrajectoryConfig(t_end=1.0, sampling="log")
    cfg = TrajectoryConfig(t_end=2.0, n_samples=5, sampling="random", seed=3)
    assert np.array_equal(cfg.times(), cfg.times())
    assert np.all(np.diff(cfg.times()) >= 0)


def test_for_spectrum_default_horizon():
    cfg = TrajectoryConfig.for_spectrum(IRR3)
    assert cfg.t_end == pytest.approx(1e4 / IRR3.min_gap())
    assert cfg.n_samples >= 10_000


def test_propagate_examples():
    a0 = np.array([0.1, 2.0, 5.0])
    assert np.allclose(propagate_phases(a0, IRR3, 0.0), a0)
    one = generic_spectrum([2 * np.pi, 7.0])
    assert propagate_phases([0.3, 0.0], one, 1.0)[0] == pytest.approx(0.3, abs=1e-12)
    s = PureState([0.2, 0.3, 0.5], a0)
    direct = s.coefficients * np.exp(-1j * IRR3.energies * 10.0)
    assert np.allclose(coefficients_at(s, IRR3, 10.0), direct, atol=1e-12)


@given(st.floats(0, 1e3), st.floats(0, 1e3))
def test_phase_evolution_composes(t1, t2):
    a0 = np.array([0.4, 1.3, 2.2])
    once = propagate_phases(a0, IRR3, t1 + t2)
    twice = propagate_phases(propagate_phases(a0, IRR3, t1), IRR3, t2)
    d = np.angle(np.exp(1j * (once - twice)))
    assert np.max(np.abs(d)) <= 1e-10 * max(1.0, t1 + t2)


def test_norm_is_conserved():
    s = PureState.random(5, 2)
    sp = generic_spectrum([0.3, 1.1, 1.7, 2.9, 3.3])
    C = coefficients_at(s, sp, np.linspace(0, 1e4, 101))
    assert np.max(np.abs(np.linalg.norm(C, axis=1) - 1)) <= 1e-12


def test_timeseries_examples():
    sp = generic_spectrum([0.0, 0.9])
    cfg = TrajectoryConfig(t_end=20.0, n_samples=401)
    _, a = observable_timeseries(np.eye(2), PureState.random(2, 0), sp, cfg)
    assert np.allclose(a, 1.0)
    A = Observable.random(2, 4)
    _, a = observable_timeseries(A, PureState([0.0, 1.0], [0.0, 1.0]), sp, cfg)
    assert np.allclose(a, A.matrix[1, 1].real)
    t, a = observable_timeseries(PAULI_X, PureState([0.5, 0.5], [0.0, 0.0]), sp, cfg)
    assert np.allclose(a, np.cos(0.9 * t), atol=1e-12)
    with pytest.raises(ValueError):
        observable_timeseries(np.eye(3), PureState.random(2, 0), sp, cfg)


def test_running_average_examples():
    t = np.linspace(0, 10, 1001)
    assert np.allclose(running_time_average(np.full(t.size, 2.5), t), 2.5)
    t = np.linspace(0, 20 * np.pi, 200_001)
    r = running_time_average(np.sin(t), t)
    assert abs(r[-1]) <= 1e-6
    rnd = running_time_average([1.0, 2.0, 3.0], sampling="random")
    assert np.allclose(rnd, [1.0, 1.5, 2.0])


def test_equilibrium_from_five_level_dynamics():
    sp = generic_spectrum([1.175621569971776, 1.400498854733676, 2.375286399814001,
                           2.82705707073558, 3.191641402908727])
    s = PureState.random(5, 7)
    A = Observable.random(5, 8)
    cfg = TrajectoryConfig.for_spectrum(sp)
    t, a = observable_timeseries(A, s, sp, cfg)
    final = running_time_average(a, t)[-1]
    assert abs(final - equilibrium_average(A, s)) <= 1e-2 * A.spectral_width
    mean, var = time_statistics(A, s, sp, cfg)
    assert var == pytest.approx(equilibrium_fluctuation(A, s), rel=0.05)


def test_time_average_error_decays_like_inverse_time():
    sp = generic_spectrum([0.3, 1.0, math.sqrt(2) + 0.5, math.pi])
    s = PureState.random(4, 3)
    A = Observable.random(4, 4)
    eq = equilibrium_average(A, s)
    # averaged over many horizons the error envelope falls as 1/T
    errs = {}
    for T in (1e3, 1e4):
        vals = []
        for f in np.linspace(1.0, 1.9, 10):
            cfg = TrajectoryConfig(t_end=T * f, n_samples=int(40 * T * f))
            vals.append(abs(time_statistics(A, s, sp, cfg)[0] - eq))
        errs[T] = np.mean(vals)
    slope = math.log10(errs[1e4] / errs[1e3])
    assert -1.3 <= slope <= -0.7


def test_fourier_examples():
    s = PureState.random(3, 1)
    cfg = TrajectoryConfig(t_end=1e4, n_samples=200_000)
    assert empirical_phase_fourier(s, IRR3, cfg, [0, 0, 0]) == pytest.approx(1.0)
    assert abs(empirical_phase_fourier(s, IRR3, cfg, FourierProbe((1, 1, -1)))) <= 0.02
    res = generic_spectrum([1.0, 2.0, 3.0])
    z = empirical_phase_fourier(s, res, cfg, (1, 1, -1))
    assert abs(z) == pytest.approx(1.0, abs=1e-9)
    expected = np.exp(-1j * (s.phases @ np.array([1, 1, -1])))
    assert z == pytest.approx(expected, abs=1e-9)


def test_psd_report_pass_and_fail():
    sp = generic_spectrum([1.175621569971776, 1.400498854733676, 2.375286399814001,
                           2.82705707073558, 3.191641402908727])
    s = PureState.random(5, 2)
    cfg = TrajectoryConfig.for_spectrum(sp)
    rep = psd_uniformity_report(s, sp, cfg, 50, seed=4)
    assert rep.verdict == "PASS" and rep.n_probes == 50
    res = generic_spectrum([1.0, 2.0, 3.0])
    cfg = TrajectoryConfig(t_end=1e4, n_samples=100_000)
    rep = psd_uniformity_report(PureState.random(3, 2), res, cfg, 5, seed=0, extra_probes=[(1, 1, -1)])
    assert rep.verdict == "FAIL"
    assert [1, 1, -1] in [w["probe"] for w in rep.witnesses]
    assert rep.max_magnitude >= 0.99


def test_psd_zero_level_modes_are_constant():
    sp = generic_spectrum([0.0, 1.0, math.sqrt(2)])
    cfg = TrajectoryConfig(t_end=1e4, n_samples=100_000)
    rep = psd_uniformity_report(PureState.random(3, 1), sp, cfg, 40, seed=1, extra_probes=[(2, 0, 0)])
    assert rep.constant_modes
    for m in rep.constant_modes:
        assert m["magnitude"] == pytest.approx(1.0)
    assert rep.verdict == "PASS"


def test_random_probes_are_nonzero_and_bounded():
    for p in random_probes(6, 100, 0):
        assert not p.is_zero
        assert max(map(abs, p.index_vector)) <= 3


def test_reduced_density_series():
    m = build_spin_model(3, [1.0, 1.3, 0.7], partition=1)
    P = np.zeros(m.N)
    P[3] = 1.0
    s = PureState(P, np.zeros(m.N))
    _, mus = reduced_density_timeseries(s, m, TrajectoryConfig(t_end=10.0, n_samples=50))
    assert np.allclose(mus, mus[0], atol=1e-12)
    assert np.allclose(mus[0] @ mus[0], mus[0], atol=1e-10)
    m = random_field_chain(4, seed=1)
    _, mus = reduced_density_timeseries(PureState.random(m.N, 3), m, TrajectoryConfig(t_end=10.0, n_samples=50))
    assert np.allclose(np.trace(mus, axis1=1, axis2=2), 1.0)
    assert np.allclose(mus, np.conj(np.transpose(mus, (0, 2, 1))))


@pytest.mark.slow
def test_time_averaged_reduced_density_six_spins():
    m = random_field_chain(6, coupling=0.05, seed=6)
    e = m.spectrum.energies
    P = microcanonical_populations(m.spectrum, e[0] + 0.3 * m.spectrum.width, e[0] + 0.6 * m.spectrum.width)
    s = PureState(P, np.random.default_rng(2).uniform(0, 2 * np.pi, m.N))
    cfg = TrajectoryConfig(t_end=1e4, n_samples=100_000, sampling="random", seed=5)
    mu_t = time_averaged_reduced_density(s, m, cfg)
    assert trace_distance(mu_t, equilibrium_reduced_density(s, m)) <= 1e-2
