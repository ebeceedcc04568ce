"""Probability laws over population sets.

RPSE: populations flat on the simplex of the levels below a cutoff.
FEEE: populations on the slice {sum P = 1, sum P E = E, P >= 0} with the
density induced by the Euclidean metric of the coefficient space, which is
proportional to the square root of the energy variance of the populations.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .spectra import Spectrum
from .states import PopulationSet

RPSE = "RPSE"
FEEE = "FEEE"


class OutsideDomainError(ValueError):
    """A point lies outside the feasibility polytope of the ensemble."""


class FactorizedApproximationError(ValueError):
    pass


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str
    spectrum: Spectrum
    E_max: float | None = None
    E: float | None = None

    def __post_init__(self):
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        e = self.spectrum.energies
        if kind == RPSE:
            if self.E_max is None:
                object.__setattr__(self, "E_max", float(e[-1]))
            if np.count_nonzero(e <= self.E_max) < 2:
                raise ValueError(f"fewer than 2 states below E_max={self.E_max}")
        elif kind == FEEE:
            if self.E is None:
                raise ValueError("FEEE needs the expectation energy E")
            if not (e[0] < self.E < e[-1]):
                raise ValueError(f"E={self.E} is not strictly inside the spectrum range [{e[0]}, {e[-1]}]")
        else:
            raise ValueError(f"unknown ensemble kind {self.kind!r}")

    @property
    def N(self) -> int:
        return self.spectrum.N

    @property
    def active(self) -> np.ndarray:
        """Indices of the levels that can be populated."""
        if self.kind == RPSE:
            return np.flatnonzero(self.spectrum.energies <= self.E_max)
        return np.arange(self.spectrum.N)

    @property
    def parameter(self) -> float:
        return self.E_max if self.kind == RPSE else self.E

    @classmethod
    def rpse(cls, spectrum, E_max=None):
        return cls(RPSE, spectrum, E_max=E_max)

    @classmethod
    def feee(cls, spectrum, E):
        return cls(FEEE, spectrum, E=E)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# --------------------------------------------------------------------- RPSE

def rpse_sample(spec: EnsembleSpec, n_samples: int, seed) -> np.ndarray:
    """Exact flat-simplex draws, shape (n_samples, N); levels above the cutoff stay at zero.

    Normalized i.i.d. unit exponentials are exactly uniform on the simplex.
    """
    if spec.kind != RPSE:
        raise ValueError("rpse_sample needs an RPSE spec")
    act = spec.active
    rng = _rng(seed)
    g = rng.exponential(size=(n_samples, act.size))
    out = np.zeros((n_samples, spec.N))
    out[:, act] = g / g.sum(axis=1, keepdims=True)
    return out


def rpse_factorized_sample(spec: EnsembleSpec, n_samples: int, seed):
    """Independent exponential populations with mean 1/N; not renormalized.

    Returns ``(P, residual)`` with residual = sum P - 1 per sample.
    """
    if spec.kind != RPSE:
        raise ValueError("rpse_factorized_sample needs an RPSE spec")
    act = spec.active
    rng = _rng(seed)
    out = np.zeros((n_samples, spec.N))
    out[:, act] = rng.exponential(scale=1.0 / act.size, size=(n_samples, act.size))
    return out, out.sum(axis=1) - 1.0


# ---------------------------------------------------------------- FEEE law

@dataclass
class FeeeDensity:
    """Unnormalized FEEE density on the first N-2 populations.

    The last two populations are fixed by normalization and energy.
    """

    spectrum: Spectrum
    E: float
    clamp_count: int = field(default=0, compare=False)

    def __post_init__(self):
        e = self.spectrum.energies
        if self.spectrum.N < 3:
            raise ValueError("the FEEE density needs N >= 3 (N - 2 free populations)")
        if e[-1] - e[-2] <= 0:
            raise ValueError("top two levels coincide: a_j undefined")

    @property
    def gap(self) -> float:
        e = self.spectrum.energies
        return float(e[-1] - e[-2])

    @property
    def a(self) -> np.ndarray:
        e = self.spectrum.energies
        return (e[-2] - e[:-2]) / self.gap

    @property
    def x(self) -> float:
        e = self.spectrum.energies
        return (self.E - e[-2]) / self.gap

    def reconstruct(self, P_free) -> np.ndarray:
        """Full population vector(s) from the N-2 free ones."""
        P_free = np.asarray(P_free, dtype=float)
        e = self.spectrum.energies
        r = 1.0 - P_free.sum(axis=-1)
        en = self.E - P_free @ e[:-2]
        P_N = (en - r * e[-2]) / self.gap
        P_Nm1 = r - P_N
        return np.concatenate([P_free, P_Nm1[..., None], P_N[..., None]], axis=-1)

    def bracket(self, P_free) -> np.ndarray:
        P_free = np.asarray(P_free, dtype=float)
        a = self.a
        return P_free @ ((1 + a) * a) - self.x**2 + self.x

    def __call__(self, P_free, tol: float = 1e-12):
        P_free = np.asarray(P_free, dtype=float)
        full = self.reconstruct(P_free)
        if np.any(full < -tol):
            raise OutsideDomainError("outside domain: a reconstructed population is negative")
        b = self.bracket(P_free)
        neg = b < 0
        if np.any(neg):
            self.clamp_count += int(np.count_nonzero(neg))
            b = np.where(neg, 0.0, b)
        out = np.sqrt(b)
        return float(out) if np.ndim(out) == 0 else out

    def feasible_interval(self) -> tuple[float, float]:
        """Range of the single free population when N = 3."""
        if self.spectrum.N != 3:
            raise ValueError("feasible_interval is defined for N = 3 only")
        # every reconstructed population is affine in P_1
        p0 = self.reconstruct(np.array([0.0]))
        p1 = self.reconstruct(np.array([1.0]))
        slope = p1 - p0
        lo, hi = 0.0, 1.0
        for c, s in zip(p0, slope):
            if s > 0:
                lo = max(lo, -c / s)
            elif s < 0:
                hi = min(hi, -c / s)
            elif c < 0:
                return (math.nan, math.nan)
        return lo, hi

    def normalization(self) -> float | None:
        """C by quadrature for N = 3; None (unknown) otherwise."""
        if self.spectrum.N != 3:
            return None
        lo, hi = self.feasible_interval()
        val, _ = integrate.quad(lambda p: self(np.array([p]), tol=1e-9), lo, hi, limit=200)
        return val


def feee_density_unnormalized(P_independent, density: FeeeDensity):
    return density(P_independent)


# ------------------------------------------------------------ FEEE sampler

@dataclass(frozen=True)
class ChainConfig:
    burn_in: int | None = None  # default 1000 * N steps
    thinning: int | None = None  # default thinning_factor * N steps
    thinning_factor: int = 1
    direction: str = "triple"  # "triple": random 3-level null direction; "full": isotropic
    anchored: bool = True
    min_ess: float = 50.0
    log_transitions: int = 0

    def resolved(self, N: int) -> tuple[int, int]:
        burn = 1000 * N if self.burn_in is None else int(self.burn_in)
        thin = self.thinning_factor * N if self.thinning is None else int(self.thinning)
        if thin < 1 or burn < 0:
            raise ValueError("thinning must be >= 1 and burn_in >= 0")
        return burn, thin


@dataclass
class FeeeChain:
    samples: np.ndarray
    acceptance_rate: float
    ess: float
    ess_ok: bool
    n_steps: int
    burn_in: int
    thinning: int
    start: np.ndarray
    log: dict | None = None

    def __iter__(self):
        for row in self.samples:
            yield PopulationSet(row)


@numba.njit(cache=True)
def _chord(P, d, idx):
    lo = -1e300
    hi = 1e300
    for k in range(idx.size):
        i = idx[k]
        p = P[i] if P[i] > 0.0 else 0.0
        if d[k] > 0.0:
            t = -p / d[k]
            if t > lo:
                lo = t
        elif d[k] < 0.0:
            t = -p / d[k]
            if t < hi:
                hi = t
    return lo, hi


@numba.njit(cache=True)
def _hit_and_run(P, E, Q, v, n_steps, thin, triple, anchor, seed, out, log_from, log_to, log_meta):
    """Metropolis hit-and-run on the slice; target density sqrt(v).

    Q holds an orthonormal basis (2 x N) of the constraint row space. In
    triple mode half of the triples contain the fixed ``anchor`` level; the
    choice never looks at the chain state, so proposals stay symmetric.
    Returns (variance, accepted moves, samples written).
    """
    np.random.seed(seed)
    N = P.size
    E2 = E * E
    accepted = 0
    written = 0
    n_log = log_meta.shape[0]
    logged = 0
    idx3 = np.empty(3, dtype=np.int64)
    d3 = np.empty(3)
    dfull = np.empty(N)
    idx_all = np.arange(N)
    for s in range(n_steps):
        if triple:
            i = np.random.randint(N)
            if anchor >= 0 and np.random.random() < 0.5:
                i = anchor
            j = np.random.randint(N - 1)
            if j >= i:
                j += 1
            l = np.random.randint(N - 2)
            a = min(i, j)
            b = max(i, j)
            if l >= a:
                l += 1
            if l >= b:
                l += 1
            idx3[0] = i
            idx3[1] = j
            idx3[2] = l
            d3[0] = E[j] - E[l]
            d3[1] = E[l] - E[i]
            d3[2] = E[i] - E[j]
            nrm = math.sqrt(d3[0] ** 2 + d3[1] ** 2 + d3[2] ** 2)
            u1 = np.random.random()
            u2 = np.random.random()
            if nrm > 0.0:
                for k in range(3):
                    d3[k] /= nrm
                lo, hi = _chord(P, d3, idx3)
                if hi > lo:
                    t = lo + u1 * (hi - lo)
                    w = 0.0
                    for k in range(3):
                        w += d3[k] * E2[idx3[k]]
                    vn = v + t * w
                    prob = 1.0
                    if vn < v:
                        prob = math.sqrt(vn / v) if (vn > 0.0 and v > 0.0) else 0.0
                    acc = u2 < prob
                    if logged < n_log:
                        log_from[logged, :] = P
                        log_to[logged, :] = P
                        for k in range(3):
                            log_to[logged, idx3[k]] += t * d3[k]
                        log_meta[logged, 0] = prob
                        log_meta[logged, 1] = 1.0 if acc else 0.0
                        logged += 1
                    if acc:
                        for k in range(3):
                            P[idx3[k]] += t * d3[k]
                        v = vn
                        accepted += 1
        else:
            for k in range(N):
                dfull[k] = np.random.standard_normal()
            c0 = 0.0
            c1 = 0.0
            for k in range(N):
                c0 += Q[0, k] * dfull[k]
                c1 += Q[1, k] * dfull[k]
            nrm = 0.0
            for k in range(N):
                dfull[k] -= c0 * Q[0, k] + c1 * Q[1, k]
                nrm += dfull[k] ** 2
            nrm = math.sqrt(nrm)
            u1 = np.random.random()
            u2 = np.random.random()
            if nrm > 0.0:
                for k in range(N):
                    dfull[k] /= nrm
                lo, hi = _chord(P, dfull, idx_all)
                if hi > lo:
                    t = lo + u1 * (hi - lo)
                    w = 0.0
                    for k in range(N):
                        w += dfull[k] * E2[k]
                    vn = v + t * w
                    prob = 1.0
                    if vn < v:
                        prob = math.sqrt(vn / v) if (vn > 0.0 and v > 0.0) else 0.0
                    acc = u2 < prob
                    if logged < n_log:
                        log_from[logged, :] = P
                        for k in range(N):
                            log_to[logged, k] = P[k] + t * dfull[k]
                        log_meta[logged, 0] = prob
                        log_meta[logged, 1] = 1.0 if acc else 0.0
                        logged += 1
                    if acc:
                        for k in range(N):
                            P[k] += t * dfull[k]
                        v = vn
                        accepted += 1
        if thin > 0 and (s + 1) % thin == 0 and written < out.shape[0]:
            out[written, :] = P
            written += 1
    return v, accepted, written


def _constraint_projector(E: np.ndarray):
    C = np.vstack([np.ones_like(E), E])
    # orthonormal rows spanning the constraint row space
    Q, _ = np.linalg.qr(C.T)
    return C, np.ascontiguousarray(Q.T)


def _project(P, C, target):
    """Nearest point (Euclidean) on the affine constraint set."""
    resid = C @ P - target
    return P - C.T @ np.linalg.solve(C @ C.T, resid)


def _variance(P, E):
    m = P @ E
    return float(P @ (E * E) - m * m)


def effective_sample_size(x: np.ndarray) -> float:
    """ESS from the initial positive sequence of autocorrelations."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = x @ x / n
    if var == 0:
        return float(n)
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    return float(n / max(tau, 1.0))


def feee_start(spec: EnsembleSpec) -> np.ndarray:
    """Interior starting point: the canonical populations at the target energy."""
    P, _ = canonical_populations(spec.spectrum, spec.E)
    return P.P.copy()


def feee_sample_mcmc(spec: EnsembleSpec, n_samples: int, seed, config: ChainConfig = ChainConfig()) -> FeeeChain:
    """FEEE draws by Metropolis-corrected hit-and-run over the constraint slice.

    Every emitted sample satisfies both constraints to ~1e-13 (drift is removed
    by re-projection between chunks).
    """
    if spec.kind != FEEE:
        raise ValueError("feee_sample_mcmc needs a FEEE spec")
    E = np.ascontiguousarray(spec.spectrum.energies, dtype=float)
    N = E.size
    rng = _rng(seed)
    burn, thin = config.resolved(N)
    if N == 2:
        # no free coordinates: the slice is a single point
        P = feee_start(spec)
        return FeeeChain(np.tile(P, (n_samples, 1)), 1.0, float(n_samples), True, 0, 0, 1, P)
    if config.direction not in ("triple", "full"):
        raise ValueError("direction must be 'triple' or 'full'")
    triple = config.direction == "triple"
    C, Q = _constraint_projector(E)
    target = np.array([1.0, spec.E])
    start = feee_start(spec)
    P = start.copy()
    # the most populated level of the start point moves slowest under uniform triples
    anchor = int(np.argmax(start)) if config.anchored else -1
    v = _variance(P, E)
    empty = np.zeros((0, N))
    nlog = int(config.log_transitions)
    log_from = np.zeros((nlog, N))
    log_to = np.zeros((nlog, N))
    log_meta = np.zeros((nlog, 2))

    def seed_int():
        return int(rng.integers(0, 2**31 - 1))

    total_acc = 0
    total_steps = 0
    # burn-in (logging happens here first, so it sees the chain from its start)
    remaining = burn
    first = True
    while remaining > 0:
        steps = min(remaining, 1_000_000)
        lf, lt, lm = (log_from, log_to, log_meta) if first else (empty, empty, np.zeros((0, 2)))
        v, acc, _ = _hit_and_run(P, E, Q, v, steps, 0, triple, anchor, seed_int(), empty, lf, lt, lm)
        first = False
        total_acc += acc
        total_steps += steps
        remaining -= steps
        P = np.clip(_project(P, C, target), 0.0, None)
        P = _project(P, C, target)
        v = _variance(P, E)

    out = np.zeros((n_samples, N))
    per_chunk = max(1, 1_000_000 // thin)
    done = 0
    while done < n_samples:
        k = min(per_chunk, n_samples - done)
        buf = np.zeros((k, N))
        if first:
            lf, lt, lm = log_from, log_to, log_meta
            first = False
        else:
            lf, lt, lm = empty, empty, np.zeros((0, 2))
        v, acc, written = _hit_and_run(P, E, Q, v, k * thin, thin, triple, anchor, seed_int(), buf, lf, lt, lm)
        assert written == k
        total_acc += acc
        total_steps += k * thin
        out[done:done + k] = buf
        done += k
        P = np.clip(_project(P, C, target), 0.0, None)
        P = _project(P, C, target)
        v = _variance(P, E)

    # emitted rows: clear roundoff negatives, then restore the constraints
    out = np.clip(out, 0.0, None)
    corr = out @ C.T - target
    out = out - corr @ np.linalg.solve(C @ C.T, C)
    out = np.clip(out, 0.0, None)

    ess_series = [out[:, 0]]
    with np.errstate(divide="ignore", invalid="ignore"):
        ess_series.append(np.where(out > 0, -out * np.log(np.where(out > 0, out, 1.0)), 0.0).sum(axis=1))
    ess = min(effective_sample_size(s) for s in ess_series)
    # short runs cannot reach an absolute target; ask for half the draws instead
    need = min(config.min_ess, 0.5 * n_samples)
    ok = ess >= need
    if not ok:
        warnings.warn(f"FEEE chain mixes poorly: effective sample size {ess:.1f} < {need:g}")
    log = None
    if nlog:
        log = {"from": log_from, "to": log_to, "acceptance_probability": log_meta[:, 0], "accepted": log_meta[:, 1] > 0}
    rate = total_acc / total_steps if total_steps else 1.0
    return FeeeChain(out, rate, ess, ok, total_steps, burn, thin, start, log)


@dataclass
class FactorizedSample:
    P: np.ndarray
    norm_residual: np.ndarray
    energy_residual: np.ndarray
    P1: float
    shift: float


def feee_factorized_sample(spec: EnsembleSpec, n_samples: int, seed) -> FactorizedSample:
    """Independent exponential populations above the ground level, ground population fixed.

    The spectrum is shifted so the ground level sits at zero; energy residuals
    are reported in that shifted frame. Samples are not renormalized.
    """
    if spec.kind != FEEE:
        raise ValueError("feee_factorized_sample needs a FEEE spec")
    e = spec.spectrum.energies
    shift = float(e[0])
    eps = e - shift
    E = spec.E - shift
    N = e.size
    if np.any(eps[1:] <= 0):
        raise FactorizedApproximationError("factorized approximation invalid: ground level is degenerate")
    means = E / ((N - 1) * eps[1:])
    P1 = 1.0 - means.sum()
    if P1 < 0:
        raise FactorizedApproximationError(
            f"factorized approximation invalid for this (spectrum, E): <P_1> = {P1:.6g} < 0"
        )
    rng = _rng(seed)
    P = np.empty((n_samples, N))
    P[:, 0] = P1
    P[:, 1:] = rng.exponential(scale=means, size=(n_samples, N - 1))
    return FactorizedSample(P, P.sum(axis=1) - 1.0, P @ eps - E, float(P1), shift)


# ------------------------------------------------------- special population sets

def microcanonical_populations(spectrum: Spectrum, E_min: float, E_max: float) -> PopulationSet:
    e = spectrum.energies
    tol = spectrum.degeneracy_tolerance
    inside = (e >= E_min - tol) & (e <= E_max + tol)
    n = np.count_nonzero(inside)
    if n == 0:
        raise ValueError(f"empty energy window [{E_min}, {E_max}]")
    return PopulationSet(np.where(inside, 1.0 / n, 0.0))


def _canonical_energy(beta: float, e: np.ndarray) -> float:
    logw = -beta * e
    w = np.exp(logw - logsumexp(logw))
    return float(w @ e)


def canonical_populations(spectrum: Spectrum, E: float, rtol: float = 1e-10):
    """Maximum-entropy populations at fixed expectation energy; returns (PopulationSet, beta)."""
    e = spectrum.energies
    width = spectrum.width
    if not (e[0] < E < e[-1]):
        raise ValueError(f"E={E} outside the open spectrum range ({e[0]}, {e[-1]})")
    tol = rtol * width
    f = lambda b: _canonical_energy(b, e) - E  # noqa: E731  (decreasing in beta)
    lo, hi = -1.0 / width, 1.0 / width
    while f(hi) > 0:
        hi *= 2.0
        if hi > 1e12 / width:
            raise ValueError("could not bracket beta")
    while f(lo) < 0:
        lo *= 2.0
        if lo < -1e12 / width:
            raise ValueError("could not bracket beta")
    beta = 0.5 * (lo + hi)
    for _ in range(400):
        beta = 0.5 * (lo + hi)
        val = f(beta)
        if abs(val) <= tol:
            break
        if val > 0:
            lo = beta
        else:
            hi = beta
        if hi - lo <= 1e-15 * max(1.0, abs(beta)):
            break
    logw = -beta * e
    P = np.exp(logw - logsumexp(logw))
    return PopulationSet(P / P.sum()), float(beta)
