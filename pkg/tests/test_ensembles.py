import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from puretherm.ensembles import (
    ChainConfig,
    EnsembleSpec,
    FactorizedApproximationError,
    FeeeDensity,
    OutsideDomainError,
    canonical_populations,
    effective_sample_size,
    feee_density_unnormalized,
    feee_factorized_sample,
    feee_sample_mcmc,
    microcanonical_populations,
    rpse_factorized_sample,
    rpse_sample,
)
from puretherm.spectra import generic_spectrum
from puretherm.states import PopulationSet, entropy


def harmonic(n):
    return sum(1.0 / k for k in range(1, n + 1))


def spaced(N, seed=0):
    return generic_spectrum(np.sort(np.random.default_rng(seed).uniform(0, 1, N)))


# ------------------------------------------------------------------ specs

def test_spec_invariants():
    sp = generic_spectrum([0.0, 1.0, 2.0, 3.0])
    assert EnsembleSpec.rpse(sp).active.tolist() == [0, 1, 2, 3]
    assert EnsembleSpec.rpse(sp, 1.5).active.tolist() == [0, 1]
    with pytest.raises(ValueError, match="fewer than 2"):
        EnsembleSpec.rpse(sp, 0.5)
    with pytest.raises(ValueError):
        EnsembleSpec.feee(sp, 3.0)
    with pytest.raises(ValueError):
        EnsembleSpec("GIBBS", sp)


# ------------------------------------------------------------------- RPSE

def test_rpse_means_and_constraints():
    spec = EnsembleSpec.rpse(spaced(8))
    P = rpse_sample(spec, 100_000, 1)
    assert np.all(P >= 0)
    assert np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-12
    sem = P.std(axis=0, ddof=1) / math.sqrt(len(P))
    assert np.all(np.abs(P.mean(axis=0) - 1 / 8) <= 3 * sem)


def test_rpse_cutoff_zeroes_upper_levels():
    spec = EnsembleSpec.rpse(generic_spectrum([0.0, 1.0, 2.0, 3.0]), 2.0)
    P = rpse_sample(spec, 1000, 0)
    assert np.all(P[:, 3] == 0)
    assert np.allclose(P.sum(axis=1), 1)


def test_rpse_entropy_mean_n4():
    spec = EnsembleSpec.rpse(spaced(4))
    S = entropy(rpse_sample(spec, 100_000, 2))
    target = harmonic(4) - 1
    assert target == pytest.approx(1.083333, abs=1e-6)
    assert abs(S.mean() - target) <= 3 * S.std(ddof=1) / math.sqrt(S.size)


def test_rpse_entropy_mean_by_quadrature_n3():
    # flat density 2 on the triangle P1 + P2 <= 1
    def s(p2, p1):
        p3 = 1 - p1 - p2
        return 2 * sum(-x * math.log(x) for x in (p1, p2, p3) if x > 0)

    val, _ = integrate.dblquad(s, 0, 1, 0, lambda p1: 1 - p1)
    assert val == pytest.approx(harmonic(3) - 1, abs=1e-7)


def test_rpse_is_seed_deterministic():
    spec = EnsembleSpec.rpse(spaced(6))
    assert np.array_equal(rpse_sample(spec, 50, 9), rpse_sample(spec, 50, 9))


def test_rpse_factorized():
    N = 64
    spec = EnsembleSpec.rpse(spaced(N))
    P, resid = rpse_factorized_sample(spec, 100_000, 3)
    assert np.allclose(P.mean(axis=0), 1 / N, rtol=0.05)
    tot = P.sum(axis=1)
    assert tot.mean() == pytest.approx(1.0, abs=3 / math.sqrt(N * 100_000) * 3)
    assert tot.std() == pytest.approx(1 / math.sqrt(N), rel=0.02)
    assert np.allclose(resid, tot - 1)
    exact = rpse_sample(spec, 100_000, 4)
    assert stats.ks_2samp(P[:, 0], exact[:, 0]).statistic <= 0.02


# ------------------------------------------------------------ FEEE density

def test_feee_density_n3_quadrature():
    d = FeeeDensity(generic_spectrum([0.0, 1.0, 2.0]), 1.0)
    lo, hi = d.feasible_interval()
    assert (lo, hi) == pytest.approx((0.0, 0.5))
    ps = np.linspace(lo, hi, 11)[1:-1]
    assert np.all(feee_density_unnormalized(ps[:, None], d) > 0)
    C = d.normalization()
    assert 0 < C < np.inf


def test_feee_density_outside_domain():
    d = FeeeDensity(generic_spectrum([0.0, 1.0, 2.0]), 1.0)
    with pytest.raises(OutsideDomainError):
        d(np.array([0.8]))


def test_feee_density_reflection_symmetry():
    sp = generic_spectrum([-1.0, 0.0, 1.0])
    d = FeeeDensity(sp, 0.0)
    lo, hi = d.feasible_interval()
    # reflection E -> -E swaps P_1 and P_3; at E = 0, P_3 = P_1 so the density is a function of P_1 only
    for p in np.linspace(lo, hi, 7)[1:-1]:
        full = d.reconstruct(np.array([p]))
        mirrored = full[::-1]
        assert d(np.array([p])) == pytest.approx(d(mirrored[:1]), rel=1e-12)


def test_feee_density_is_sqrt_energy_variance_over_gap():
    sp = generic_spectrum([0.0, 0.4, 1.1, 1.7])
    d = FeeeDensity(sp, 0.8)
    free = np.array([0.2, 0.3])
    P = d.reconstruct(free)
    var = P @ sp.energies**2 - (P @ sp.energies) ** 2
    assert d(free) == pytest.approx(math.sqrt(var) / d.gap, rel=1e-10)


def test_feee_density_rejects_tied_top_levels():
    with pytest.raises(ValueError):
        FeeeDensity(generic_spectrum([0.0, 1.0, 1.0]), 0.5)


# -------------------------------------------------------------- FEEE MCMC

def test_feee_mcmc_constraints_and_determinism():
    sp = spaced(12, 5)
    spec = EnsembleSpec.feee(sp, float(sp.energies[0] + 0.3 * sp.width))
    ch = feee_sample_mcmc(spec, 500, 11)
    P = ch.samples
    assert np.all(P >= 0)
    assert np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-10
    assert np.max(np.abs(P @ sp.energies - spec.E)) <= 1e-10 * sp.width
    again = feee_sample_mcmc(spec, 500, 11)
    assert np.array_equal(P, again.samples)
    assert isinstance(next(iter(ch)), PopulationSet)


@pytest.mark.parametrize("direction", ["triple", "full"])
def test_feee_mcmc_n3_matches_density(direction):
    sp = generic_spectrum([0.0, 1.0, 2.0])
    spec = EnsembleSpec.feee(sp, 0.8)
    d = FeeeDensity(sp, 0.8)
    ch = feee_sample_mcmc(spec, 100_000, 3, ChainConfig(direction=direction))
    lo, hi = d.feasible_interval()
    C = d.normalization()
    hist, edges = np.histogram(ch.samples[:, 0], bins=40, range=(lo, hi), density=True)
    exact = np.array([integrate.quad(lambda p: d(np.array([p]), tol=1e-9), a, b)[0] / C / (b - a)
                      for a, b in zip(edges[:-1], edges[1:])])
    l1 = np.sum(np.abs(hist - exact) * np.diff(edges))
    assert l1 <= 0.05


def test_feee_two_levels_is_a_point():
    spec = EnsembleSpec.feee(generic_spectrum([0.0, 1.0]), 0.5)
    ch = feee_sample_mcmc(spec, 10, 0)
    assert np.allclose(ch.samples, 0.5)


def test_feee_metropolis_ratio_on_logged_transitions():
    sp = spaced(6, 2)
    spec = EnsembleSpec.feee(sp, float(sp.energies[0] + 0.4 * sp.width))
    ch = feee_sample_mcmc(spec, 10, 5, ChainConfig(log_transitions=500, burn_in=2000, min_ess=0))
    log = ch.log
    e = sp.energies

    def target(P):
        return math.sqrt(max(P @ e**2 - (P @ e) ** 2, 0.0))

    for a, b, prob in zip(log["from"], log["to"], log["acceptance_probability"]):
        assert np.all(b >= -1e-12)
        assert abs(b.sum() - 1) <= 1e-9 and abs(b @ e - spec.E) <= 1e-9
        assert prob == pytest.approx(min(1.0, target(b) / target(a)), rel=1e-9, abs=1e-12)
    acc = log["accepted"]
    assert 0 < acc.mean() <= 1


def test_feee_mcmc_agrees_with_factorized_in_bulk():
    N = 32
    sp = generic_spectrum(np.concatenate([[0.0], np.linspace(0.5, 1.0, N - 1)]))
    spec = EnsembleSpec.feee(sp, 0.5 * 0.75)
    fac = feee_factorized_sample(spec, 200_000, 1)
    ch = feee_sample_mcmc(spec, 4000, 2, ChainConfig(thinning_factor=2))
    bulk = slice(N // 4, 3 * N // 4)
    rel = np.abs(ch.samples.mean(axis=0)[bulk] / fac.P.mean(axis=0)[bulk] - 1)
    assert np.all(rel <= 0.10)


def test_ess_diagnostic():
    x = np.random.default_rng(0).normal(size=4000)
    assert effective_sample_size(x) > 2000
    walk = np.cumsum(x)
    assert effective_sample_size(walk) < 100


# -------------------------------------------------------- FEEE factorized

def test_feee_factorized_means():
    sp = generic_spectrum([0.0, 1.0, 1.5, 2.3, 3.1])
    E = 0.6
    spec = EnsembleSpec.feee(sp, E)
    fs = feee_factorized_sample(spec, 200_000, 4)
    N = sp.N
    e = sp.energies
    means = E / ((N - 1) * e[1:])
    sem = fs.P[:, 1:].std(axis=0, ddof=1) / math.sqrt(len(fs.P))
    assert np.all(np.abs(fs.P[:, 1:].mean(axis=0) - means) <= 3 * sem)
    assert np.sum(means * e[1:]) == pytest.approx(E, abs=1e-14)
    assert np.all(fs.P[:, 0] == fs.P1)
    assert fs.P1 == pytest.approx(1 - means.sum())


def test_feee_factorized_shifts_ground_to_zero():
    sp = generic_spectrum([2.0, 3.0, 3.5, 4.3])
    fs = feee_factorized_sample(EnsembleSpec.feee(sp, 2.5), 1000, 0)
    assert fs.shift == 2.0
    assert fs.P[:, 1:].mean(axis=0) == pytest.approx(0.5 / (3 * np.array([1.0, 1.5, 2.3])), rel=0.1)


def test_feee_factorized_infeasible():
    sp = generic_spectrum([0.0, 0.01, 0.02, 1.0])
    with pytest.raises(FactorizedApproximationError, match="<P_1>"):
        feee_factorized_sample(EnsembleSpec.feee(sp, 0.5), 10, 0)


# ------------------------------------------------- special population sets

def test_microcanonical():
    sp = generic_spectrum([0.0, 1.0, 2.0, 3.0])
    assert np.allclose(microcanonical_populations(sp, -1, 4).P, 0.25)
    P = microcanonical_populations(sp, 0.5, 2.5)
    assert np.allclose(P.P, [0, 0.5, 0.5, 0])
    assert entropy(P) == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        microcanonical_populations(sp, 3.2, 3.5)


def test_canonical_examples():
    P, beta = canonical_populations(generic_spectrum([0.0, 0.7]), 0.35)
    assert beta == pytest.approx(0.0, abs=1e-8)
    assert np.allclose(P.P, 0.5)
    sp = generic_spectrum([0.0, 1.0, 2.0])
    P, beta = canonical_populations(sp, 1e-6 * sp.width)
    assert P.P[0] > 0.999 and beta > 10
    P, beta = canonical_populations(sp, 1.6)
    assert beta < 0
    with pytest.raises(ValueError):
        canonical_populations(sp, 2.0)


def test_canonical_beta_matches_grid_scan():
    e = np.array([0.0, 1.0, 2.0])
    _, beta = canonical_populations(generic_spectrum(e), 0.5)
    grid = np.linspace(0.5, 2.0, 1_500_001)
    w = np.exp(-np.outer(grid, e))
    E = (w @ e) / w.sum(axis=1)
    b_grid = grid[np.argmin(np.abs(E - 0.5))]
    assert beta == pytest.approx(b_grid, abs=1e-6)
    # the grid spacing is 1e-6; refine with the exact energy map
    Eb = (np.exp(-beta * e) @ e) / np.exp(-beta * e).sum()
    assert abs(Eb - 0.5) <= 1e-10 * 2


@settings(max_examples=20)
@given(st.floats(0.05, 1.95), st.integers(0, 2**32 - 1))
def test_canonical_has_maximum_entropy(E, seed):
    e = np.array([0.0, 0.8, 2.0])
    sp = generic_spectrum(e)
    if not e[0] < E < e[-1]:
        return
    Pc, _ = canonical_populations(sp, E)
    S_max = entropy(Pc)
    d = FeeeDensity(sp, E)
    lo, hi = d.feasible_interval()
    p1 = np.random.default_rng(seed).uniform(lo, hi, 10_000)
    full = d.reconstruct(p1[:, None])
    full = np.clip(full, 0, None)
    assert np.all(entropy(full) <= S_max + 1e-9)


def test_canonical_extreme_beta_is_stable():
    sp = generic_spectrum(np.linspace(0, 1000, 50))
    P, beta = canonical_populations(sp, 0.01)
    assert np.all(np.isfinite(P.P))
    assert P.P @ sp.energies == pytest.approx(0.01, abs=1e-10 * 1000)
