"""Batch front-end: ``puretherm {spectrum,evolve,ensemble,thermo,scorecard} CONFIG``.

Each run reads one YAML experiment file, writes CSV/JSON (and optionally SVG)
results into the output directory, and records a ``run_manifest.json`` with
the config hash, tool version, per-file checksums and wall-clock timings.
Every output except the manifest is byte-identical for identical
(config, seed).

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 refused precondition.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import DEFAULT, Tolerances
from .dynamics import (
    TrajectoryConfig,
    observable_timeseries,
    psd_uniformity_report,
    running_time_average,
    time_averaged_reduced_density,
    time_statistics,
)
from .ensembles import (
    FEEE,
    RPSE,
    ChainConfig,
    EnsembleSpec,
    FactorizedApproximationError,
    OutsideDomainError,
    feee_factorized_sample,
    feee_sample_mcmc,
)
from .io import ResultWriter, array_hash, config_hash, density_rows, population_rows, sha256_file
from .spectra import (
    _SX,
    BipartiteModel,
    ModelTooLarge,
    Spectrum,
    build_spin_model,
    check_nonresonance,
    diagonalize,
    generic_spectrum,
    random_field_chain,
)
from .states import (
    DensityMatrix,
    Observable,
    PureState,
    equilibrium_average,
    equilibrium_fluctuation,
    equilibrium_reduced_density,
    reduced_projectors,
)
from .thermo import (
    ENERGY,
    ENTROPY,
    NORM,
    ScorecardBudget,
    canonical_reference,
    convexity_extensivity_check,
    draw_populations,
    local_temperature_fit,
    requirement_scorecard,
    rpse_cutoffs_for_energies,
    state_function_feee,
    state_function_rpse,
    temperature,
    trace_distance,
    typicality_from_values,
    typicality_scaling,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_REFUSED = 0, 2, 3, 4


class ConfigError(Exception):
    def __init__(self, msg: str, line: int | None = None, path: str | None = None):
        where = ""
        if path:
            where = f"{path}:{line}: " if line else f"{path}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + msg)


class Refused(Exception):
    pass


# ------------------------------------------------------------------- config


class _Map(dict):
    """dict that remembers the source line of each key."""

    line: int | None = None
    lines: dict


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    d = _Map()
    d.line = node.start_mark.line + 1
    d.lines = {}
    for k_node, v_node in node.value:
        k = loader.construct_object(k_node, deep=True)
        if k in d:
            raise ConfigError(f"duplicate key {k!r}", k_node.start_mark.line + 1)
        d[k] = loader.construct_object(v_node, deep=True)
        d.lines[k] = k_node.start_mark.line + 1
    return d


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)


def load_yaml(path) -> _Map:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            doc = yaml.load(fh, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", line, str(path)) from None
    except ConfigError as exc:
        raise ConfigError(str(exc), None, str(path)) from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping", 1, str(path))
    return doc


class Section:
    """Typed accessors over a config mapping that report the offending line."""

    def __init__(self, data, name: str, src: str, parent_line: int | None = None):
        if data is None:
            data = _Map()
        if not isinstance(data, dict):
            raise ConfigError(f"section {name!r} must be a mapping", parent_line, src)
        self.data, self.name, self.src = data, name, src
        self.used: set = set()

    def line(self, key=None):
        lines = getattr(self.data, "lines", {})
        return lines.get(key, getattr(self.data, "line", None))

    def error(self, msg, key=None):
        return ConfigError(f"{self.name}.{key}: {msg}" if key else f"{self.name}: {msg}", self.line(key), self.src)

    def has(self, key) -> bool:
        return key in self.data

    def get(self, key, kind=None, default=None, required=False, choices=None):
        self.used.add(key)
        if key not in self.data or self.data[key] is None:
            if required:
                raise self.error("required field missing", None if key not in self.data else key)
            return default
        v = self.data[key]
        if kind is not None:
            try:
                if kind is int:
                    if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                        raise ValueError
                    v = int(v)
                elif kind is float:
                    if isinstance(v, bool):
                        raise ValueError
                    v = float(v)
                elif kind is bool:
                    if not isinstance(v, bool):
                        raise ValueError
                elif kind is str:
                    if not isinstance(v, str):
                        raise ValueError
                elif kind is list:
                    if not isinstance(v, list):
                        raise ValueError
            except (TypeError, ValueError):
                raise self.error(f"expected {kind.__name__}, got {v!r}", key) from None
        if choices is not None and v not in choices:
            raise self.error(f"must be one of {list(choices)}, got {v!r}", key)
        return v

    def floats(self, key, default=None, required=False):
        v = self.get(key, list, default, required)
        if v is None:
            return None
        try:
            return [float(x) for x in v]
        except (TypeError, ValueError):
            raise self.error("expected a list of numbers", key) from None

    def sub(self, key) -> "Section":
        self.used.add(key)
        return Section(self.data.get(key), f"{self.name}.{key}", self.src, self.line(key))

    def check_unknown(self):
        extra = [k for k in self.data if k not in self.used]
        if extra:
            raise self.error(f"unknown field {extra[0]!r}", extra[0])


def apply_overrides(doc: dict, assignments) -> dict:
    """``key.path=value`` overrides for scalar fields only."""
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                node[p] = node.get(p) if isinstance(node.get(p), dict) else _Map()
            node = node[p]
        old = node.get(parts[-1])
        if isinstance(old, (dict, list)):
            raise ConfigError(f"--set may only override scalar fields; {key} is structured")
        val = yaml.safe_load(raw)
        if isinstance(val, (dict, list)):
            raise ConfigError(f"--set value for {key} must be a scalar")
        node[parts[-1]] = val
    return doc


@dataclass
class ExperimentConfig:
    doc: dict
    src: str
    base_dir: Path
    seed: int
    output: Path
    tolerances: Tolerances
    workers: int = 0
    plots: bool = False
    require_nonresonant: bool = False
    hash: str = ""

    def section(self, key) -> Section:
        return Section(self.doc.get(key), key, self.src, getattr(self.doc, "lines", {}).get(key))


def build_config(args) -> ExperimentConfig:
    doc = load_yaml(args.config)
    doc = apply_overrides(doc, args.set)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.output is not None:
        doc["output"] = args.output
    top = Section(doc, "config", str(args.config))
    seed = top.get("seed", int, required=True)
    if seed < 0:
        raise top.error("seed must be a non-negative integer", "seed")
    out = top.get("output", str, required=True)
    base = Path(args.config).resolve().parent
    out_path = Path(out) if Path(out).is_absolute() else Path.cwd() / out
    tol_sec = top.sub("tolerances")
    try:
        tol = DEFAULT.override(**dict(tol_sec.data))
    except KeyError as exc:
        raise tol_sec.error(str(exc).strip('"')) from None
    except (TypeError, ValueError):
        raise tol_sec.error("tolerances must be numbers") from None
    workers = args.workers if args.workers is not None else top.get("workers", int, 0)
    plots = bool(args.plots or top.get("plots", bool, False))
    req = bool(args.require_nonresonant or top.get("require_nonresonant", bool, False))
    for k in ("model", "evolve", "ensemble", "thermo", "scorecard", "resonance", "description"):
        top.used.add(k)
    top.check_unknown()
    # hash covers everything that can change results, not where they are written
    hashed = {k: v for k, v in doc.items() if k not in ("output", "workers", "plots")}
    return ExperimentConfig(doc, str(args.config), base, seed, out_path, tol, workers, plots, req, config_hash(hashed))


# -------------------------------------------------------------------- model


@dataclass
class LoadedModel:
    spectrum: Spectrum
    model: BipartiteModel | None
    description: dict = field(default_factory=dict)
    family: dict | None = None  # recipe for other system sizes


def _read_energies_csv(path: Path, sec: Section) -> np.ndarray:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise sec.error(f"no data in {path}", "file")
    head = lines[0].split(",")
    col = 0
    start = 0
    try:
        [float(x) for x in head]
    except ValueError:
        start = 1
        col = head.index("energy") if "energy" in head else 0
    try:
        return np.array([float(ln.split(",")[col]) for ln in lines[start:]])
    except (ValueError, IndexError):
        raise sec.error(f"could not read energies from {path}", "file") from None


def load_model(cfg: ExperimentConfig, sec: Section | None = None, depth: int = 0) -> LoadedModel:
    sec = sec or cfg.section("model")
    kinds = [k for k in ("spins", "random_chain", "energies", "hamiltonian", "file") if sec.has(k)]
    if len(kinds) != 1:
        raise sec.error("give exactly one of spins, random_chain, energies, hamiltonian, file")
    kind = kinds[0]
    tol_deg = cfg.tolerances.degeneracy
    if kind == "energies":
        e = sec.floats("energies")
        try:
            spec = generic_spectrum(e, tol_deg)
        except ValueError as exc:
            raise sec.error(str(exc), "energies") from None
        sec.check_unknown()
        return LoadedModel(spec, None, {"kind": "energies", "N": spec.N})
    if kind == "hamiltonian":
        H = np.asarray(sec.get("hamiltonian", list), dtype=float)
        if sec.has("hamiltonian_imag"):
            H = H + 1j * np.asarray(sec.get("hamiltonian_imag", list), dtype=float)
        sec.check_unknown()
        try:
            eig = diagonalize(H, degeneracy_tolerance=tol_deg)
        except ValueError as exc:
            raise sec.error(str(exc), "hamiltonian") from None
        return LoadedModel(eig.spectrum, None, {"kind": "hamiltonian", "N": eig.spectrum.N})
    if kind == "file":
        p = Path(sec.get("file", str))
        p = p if p.is_absolute() else cfg.base_dir / p
        if not p.is_file():
            raise sec.error(f"referenced file does not exist: {p}", "file")
        sec.check_unknown()
        if p.suffix in (".yaml", ".yml"):
            if depth > 2:
                raise sec.error("model files nest too deeply", "file")
            inner = load_yaml(p)
            return load_model(cfg, Section(inner.get("model", inner), "model", str(p)), depth + 1)
        if p.suffix == ".npy":
            H = np.load(p)
            eig = diagonalize(H, degeneracy_tolerance=tol_deg)
            return LoadedModel(eig.spectrum, None, {"kind": "hamiltonian_file", "N": eig.spectrum.N})
        e = _read_energies_csv(p, sec)
        return LoadedModel(generic_spectrum(e, tol_deg), None, {"kind": "energies_file", "N": e.size})
    s = sec.sub(kind)
    try:
        if kind == "spins":
            n = s.get("n_spins", int, required=True)
            fields = s.floats("fields", required=True)
            if len(fields) != n:
                raise s.error(f"need {n} fields, got {len(fields)}", "fields")
            couplings = s.get("couplings", list, [])
            try:
                couplings = [(int(i), int(j), float(J)) for i, j, J in couplings]
            except (TypeError, ValueError):
                raise s.error("couplings are [i, j, J] triples", "couplings") from None
            form = s.get("coupling_form", str, "ZZ")
            part = s.get("partition", int, 1)
            s.check_unknown()
            m = build_spin_model(n, fields, couplings, form, part, tol_deg)
            return LoadedModel(m.spectrum, m, dict(m.description, kind="spins"))
        n = s.get("n_spins", int, required=True)
        recipe = {
            "coupling": s.get("coupling", float, 0.05),
            "field_range": tuple(s.floats("field_range", [0.5, 1.5])),
            "coupling_form": s.get("coupling_form", str, "Heisenberg"),
            "partition": s.get("partition", int, 1),
            "seed": s.get("seed", int, 0),
            "periodic": s.get("periodic", bool, False),
        }
        s.check_unknown()
        m = random_field_chain(n, **recipe)
        return LoadedModel(m.spectrum, m, dict(m.description, kind="random_chain"), recipe)
    except ModelTooLarge as exc:
        raise s.error(str(exc)) from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise s.error(str(exc)) from None


def _spectrum_rows(spectrum: Spectrum):
    g = spectrum.degeneracy_groups()
    return [(i, e, int(gi)) for i, (e, gi) in enumerate(zip(spectrum.energies, g))]


def _resonance(cfg: ExperimentConfig, spectrum: Spectrum):
    sec = cfg.section("resonance")
    rep = check_nonresonance(
        spectrum,
        coefficient_bound=sec.get("coefficient_bound", int, 10),
        tolerance=sec.get("tolerance", float, 1e-9),
        max_witnesses=sec.get("max_witnesses", int, 50),
    )
    sec.check_unknown()
    return rep


def _refuse_if_resonant(rep, w: ResultWriter):
    if rep.nonresonant:
        return
    witness = (rep.resonant_combinations or rep.gap_degeneracies or rep.level_degeneracies)[0]
    raise Refused(f"spectrum is resonant (witness {list(witness)}); refusing because nonresonance is required")


# ----------------------------------------------------------------- commands


def cmd_spectrum(cfg: ExperimentConfig, w: ResultWriter, timings: dict) -> int:
    t0 = time.perf_counter()
    lm = load_model(cfg)
    timings["model"] = time.perf_counter() - t0
    w.csv("spectrum.csv", ["index", "energy", "degeneracy_group"], _spectrum_rows(lm.spectrum))
    t0 = time.perf_counter()
    rep = _resonance(cfg, lm.spectrum)
    timings["resonance"] = time.perf_counter() - t0
    w.json("resonance_report.json", {"model": lm.description, "resonance": rep.to_dict()})
    if cfg.plots:
        e = lm.spectrum.energies
        w.svg_lines("spectrum.svg", [("levels", np.arange(e.size), e)], "index", "energy", "spectrum")
    if cfg.require_nonresonant:
        _refuse_if_resonant(rep, w)
    return EXIT_OK


def _make_state(sec: Section, spectrum: Spectrum, rng) -> PureState:
    kind = sec.get("kind", str, "random", choices=("random", "eigenstate", "explicit"))
    N = spectrum.N
    if kind == "eigenstate":
        k = sec.get("index", int, 0)
        if not 0 <= k < N:
            raise sec.error(f"index must lie in [0, {N})", "index")
        P = np.zeros(N)
        P[k] = 1.0
        state = PureState(P, rng.uniform(0, 2 * np.pi, N))
    elif kind == "explicit":
        P = sec.floats("populations", required=True)
        ph = sec.floats("phases", [0.0] * len(P))
        if len(P) != N or len(ph) != N:
            raise sec.error(f"populations and phases need {N} entries", "populations")
        try:
            state = PureState(np.asarray(P) / np.sum(P), ph)
        except ValueError as exc:
            raise sec.error(str(exc), "populations") from None
    else:
        state = PureState.random(N, rng)
    sec.check_unknown()
    return state


def _make_observables(sec_list, spectrum: Spectrum, lm: LoadedModel, rng, parent: Section):
    out = []
    for i, item in enumerate(sec_list):
        s = Section(item, f"{parent.name}.observables[{i}]", parent.src, parent.line("observables"))
        kind = s.get("kind", str, "random", choices=("random", "pauli_x", "subsystem_x", "matrix"))
        name = s.get("name", str, f"{kind}{i}")
        N = spectrum.N
        if kind == "random":
            A = Observable.random(N, rng)
        elif kind == "pauli_x":
            a, b = s.get("levels", list, [0, 1])
            M = np.zeros((N, N), dtype=complex)
            M[a, b] = M[b, a] = 1.0
            A = Observable(M)
        elif kind == "subsystem_x":
            if lm.model is None:
                raise s.error("subsystem_x needs a spin model", "kind")
            m = lm.model
            site = s.get("site", int, 0)
            k = int(round(math.log2(m.dim_S)))
            if not 0 <= site < k:
                raise s.error(f"site must lie in [0, {k})", "site")
            op = np.kron(np.kron(np.eye(2**site), 2 * _SX), np.eye(2 ** (k - site - 1)))
            A = Observable(m.eigen.to_energy(np.kron(op, np.eye(m.dim_E))))
        else:
            re = np.asarray(s.get("real", list, required=True), dtype=float)
            im = np.asarray(s.get("imag", list, np.zeros_like(re).tolist()), dtype=float)
            if re.shape != (N, N):
                raise s.error(f"matrix must be {N}x{N}", "real")
            try:
                A = Observable(re + 1j * im)
            except ValueError as exc:
                raise s.error(str(exc), "real") from None
        s.check_unknown()
        out.append((name, A))
    return out


def cmd_evolve(cfg: ExperimentConfig, w: ResultWriter, timings: dict) -> int:
    t0 = time.perf_counter()
    lm = load_model(cfg)
    spectrum = lm.spectrum
    sec = cfg.section("evolve")
    rep = _resonance(cfg, spectrum)
    w.json("resonance_report.json", {"model": lm.description, "resonance": rep.to_dict()})
    if cfg.require_nonresonant or sec.get("require_nonresonant", bool, False):
        _refuse_if_resonant(rep, w)
    ss = np.random.SeedSequence(cfg.seed)
    s_state, s_obs, s_probe, s_time = ss.spawn(4)
    state = _make_state(sec.sub("state"), spectrum, np.random.default_rng(s_state))
    obs_items = sec.get("observables", list, [{"kind": "random"}])
    observables = _make_observables(obs_items, spectrum, lm, np.random.default_rng(s_obs), sec)
    traj = TrajectoryConfig.for_spectrum(
        spectrum,
        periods=sec.get("periods", float, 1e4),
        n_samples=sec.get("n_samples", int, None),
        sampling=sec.get("sampling", str, "uniform", choices=("uniform", "random")),
        seed=int(s_time.generate_state(1)[0]),
    )
    max_rows = sec.get("max_rows", int, 20_000)
    probes = sec.get("probes", int, 50)
    extra = sec.get("extra_probes", list, [])
    sec.used.add("reduced_density")
    sec.check_unknown()
    timings["setup"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    w.csv("initial_state.csv", ["index", "energy", "P", "phase"],
          [(i, e, p, a) for i, (e, p, a) in enumerate(zip(spectrum.energies, state.P, state.phases))])
    w.csv("initial_populations.csv", ["index", "P"], population_rows(state.populations))
    meta = {"spectrum_hash": array_hash(spectrum.energies), "t_end": repr(traj.t_end), "n_samples": traj.n_samples,
            "sampling": traj.sampling}
    rows = []
    stride = max(1, math.ceil(traj.n_samples / max_rows))
    for name, A in observables:
        times, a = observable_timeseries(A, state, spectrum, traj)
        run = running_time_average(a, times, traj.sampling)
        w.csv(f"timeseries_{name}.csv", ["t", "a"], zip(times[::stride], a[::stride]), meta)
        w.csv(f"running_average_{name}.csv", ["t", "running_average"], zip(times[::stride], run[::stride]), meta)
        mean, var = time_statistics(A, state, spectrum, traj)
        eq = equilibrium_average(A, state)
        fl = equilibrium_fluctuation(A, state)
        width = A.spectral_width
        tol = 1e-2 * width
        rows.append((name, mean, eq, abs(mean - eq), tol, int(abs(mean - eq) <= tol), var, fl,
                     abs(var - fl) / fl if fl > 0 else (0.0 if var < 1e-12 else math.inf)))
        if cfg.plots:
            w.svg_lines(f"timeseries_{name}.svg",
                        [("a(t)", times[::stride], a[::stride]), ("running average", times[::stride], run[::stride])],
                        "t", "a", f"observable {name}")
    w.csv("comparison.csv",
          ["observable", "time_average", "equilibrium_average", "abs_difference", "tolerance", "within_tolerance",
           "time_variance", "equilibrium_fluctuation", "variance_relative_difference"], rows)
    if lm.model is not None and sec.get("reduced_density", bool, lm.model.N <= 256):
        mu_eq = equilibrium_reduced_density(state, lm.model)
        mu_t = time_averaged_reduced_density(state, lm.model, traj)
        w.csv("reduced_density_equilibrium.csv", ["row", "col", "re", "im"], density_rows(mu_eq))
        w.csv("reduced_density_time_average.csv", ["row", "col", "re", "im"], density_rows(mu_t))
        w.json("reduced_density_report.json", {"trace_distance": trace_distance(mu_eq, mu_t)})
    timings["trajectories"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    psd = psd_uniformity_report(state, spectrum, traj, probes, s_probe, cfg.tolerances.psd_fourier, extra)
    w.json("psd_report.json", {"trajectory": {"t_end": traj.t_end, "n_samples": traj.n_samples,
                                              "sampling": traj.sampling}, "psd": psd.to_dict()})
    timings["psd"] = time.perf_counter() - t0
    return EXIT_OK


def _chain_config(sec: Section) -> ChainConfig:
    cc = ChainConfig(
        burn_in=sec.get("burn_in", int, None),
        thinning=sec.get("thinning", int, None),
        thinning_factor=sec.get("thinning_factor", int, 1),
        direction=sec.get("direction", str, "triple", choices=("triple", "full")),
        anchored=sec.get("anchored", bool, True),
    )
    sec.check_unknown()
    return cc


def _ensemble_spec(sec: Section, spectrum: Spectrum) -> EnsembleSpec:
    kind = sec.get("kind", str, required=True, choices=(RPSE, FEEE)).upper()
    e = spectrum.energies
    frac = sec.get("energy_fraction", float, None)
    try:
        if kind == RPSE:
            E_max = sec.get("E_max", float, None)
            if E_max is None and frac is not None:
                E_max = float(e[0] + frac * spectrum.width)
            return EnsembleSpec.rpse(spectrum, E_max)
        E = sec.get("E", float, None)
        if E is None:
            if frac is None:
                raise sec.error("FEEE needs E or energy_fraction")
            E = float(e[0] + frac * spectrum.width)
        return EnsembleSpec.feee(spectrum, E)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise sec.error(str(exc)) from None


def cmd_ensemble(cfg: ExperimentConfig, w: ResultWriter, timings: dict) -> int:
    t0 = time.perf_counter()
    lm = load_model(cfg)
    spectrum = lm.spectrum
    sec = cfg.section("ensemble")
    spec = _ensemble_spec(sec, spectrum)
    n = sec.get("n_samples", int, 10_000)
    sampler = sec.get("sampler", str, "auto", choices=("auto", "exact", "mcmc", "factorized"))
    bins = sec.get("bins", int, 50)
    write_samples = sec.get("write_samples", bool, True)
    hist_idx = sec.get("histogram_indices", list, None)
    chain_cfg = _chain_config(sec.sub("chain"))
    sec.check_unknown()
    N = spectrum.N
    if hist_idx is None:
        hist_idx = list(range(N)) if N <= 16 else [0, N // 2, N - 1]
    timings["setup"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    diag = {"kind": spec.kind, "parameter": spec.parameter, "sampler": sampler, "n_samples": n, "N": N}
    e = spectrum.energies
    if spec.kind == FEEE and sampler == "factorized":
        fs = feee_factorized_sample(spec, n, cfg.seed)
        P = fs.P
        norm_res, en_res = fs.norm_residual, fs.energy_residual
        diag.update({"P1": fs.P1, "energy_shift": fs.shift})
    elif spec.kind == FEEE:
        ch = feee_sample_mcmc(spec, n, cfg.seed, chain_cfg)
        P = ch.samples
        norm_res, en_res = P.sum(axis=1) - 1, P @ e - spec.E
        diag.update({"acceptance_rate": ch.acceptance_rate, "effective_sample_size": ch.ess,
                     "ess_ok": ch.ess_ok, "burn_in": ch.burn_in, "thinning": ch.thinning})
    else:
        P = draw_populations(spec, n, cfg.seed, sampler)
        norm_res = P.sum(axis=1) - 1
        en_res = np.zeros(n)
        diag["effective_sample_size"] = float(n)
    timings["sampling"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    diag["max_abs_norm_residual"] = float(np.max(np.abs(norm_res)))
    if spec.kind == FEEE:
        diag["max_abs_energy_residual"] = float(np.max(np.abs(en_res)))
    S = ENTROPY(P, spec)
    diag["entropy"] = typicality_from_values(S, "entropy", ENTROPY.analytic_range(spec)).to_dict()
    if write_samples:
        cols = [f"P_{k + 1}" for k in range(N)] + ["norm_residual", "energy_residual"]
        w.csv_array("samples.csv", cols, np.column_stack([P, norm_res, en_res]))
    sem = P.std(axis=0, ddof=1) / math.sqrt(n)
    w.csv("population_means.csv", ["index", "energy", "mean", "sem"],
          [(k, e[k], float(P[:, k].mean()), float(sem[k])) for k in range(N)])
    series = []
    for k in hist_idx:
        k = int(k)
        if not 0 <= k < N:
            raise sec.error(f"histogram index {k} out of range", "histogram_indices")
        hi = max(float(P[:, k].max()), 1e-12)
        dens, edges = np.histogram(P[:, k], bins=bins, range=(0.0, hi), density=True)
        centers = 0.5 * (edges[1:] + edges[:-1])
        w.csv(f"histogram_P{k + 1}.csv", ["bin_center", "density"], zip(centers, dens))
        series.append((f"P_{k + 1}", centers, dens))
    if cfg.plots and series:
        w.svg_lines("histograms.svg", series, "P", "density", f"{spec.kind} marginals")
    w.json("sampler_diagnostics.json", {"model": lm.description, "diagnostics": diag})
    timings["reports"] = time.perf_counter() - t0
    return EXIT_OK


def _family_spectrum(kind: str, N: int, seed) -> Spectrum:
    if kind == "linear":
        return generic_spectrum(np.linspace(0.0, 1.0, N))
    rng = np.random.default_rng(seed)
    return generic_spectrum(np.sort(rng.uniform(0.0, 1.0, N)))


def _thermo_typicality(cfg, lm, sec: Section, w: ResultWriter, seeds, out: dict):
    s_stat, s_scale = seeds
    spec = _ensemble_spec(sec, lm.spectrum)
    n = sec.get("n_samples", int, 10_000)
    names = sec.get("functions", list, ["entropy", "energy"])
    funcs = {"entropy": ENTROPY, "energy": ENERGY, "norm": NORM}
    for f in names:
        if f not in funcs:
            raise sec.error(f"unknown function {f!r}; choose from {sorted(funcs)}", "functions")
    P = draw_populations(spec, n, s_stat, "auto", _chain_config(sec.sub("chain")))
    reps = {}
    for f in names:
        F = funcs[f]
        reps[f] = typicality_from_values(F(P, spec), f,
                                         F.analytic_range(spec) if F.analytic_range else None).to_dict()
        reps[f]["typical"] = reps[f]["ratio"] <= cfg.tolerances.typicality_ratio
    out["typicality"] = {"ensemble": spec.kind, "parameter": spec.parameter, "reports": reps}
    N_list = sec.get("N_list", list, None)
    if N_list:
        family = sec.get("family", str, "linear", choices=("linear", "random"))
        frac = sec.get("energy_fraction", float, 0.25)
        fam_seed = sec.get("family_seed", int, 0)

        def member(N):
            sp = _family_spectrum(family, N, [fam_seed, N])
            if spec.kind == RPSE:
                return EnsembleSpec.rpse(sp)
            return EnsembleSpec.feee(sp, float(sp.energies[0] + frac * sp.width))

        tables = {}
        series = []
        for f, s in zip(names, s_scale.spawn(len(names))):
            tab = typicality_scaling(funcs[f], member, N_list, sec.get("scaling_samples", int, n), s)
            w.csv(f"scaling_{f}.csv", ["N", "ratio", "mean", "std", "sem"],
                  [(r_n, r.ratio, r.mean, r.std, r.sem) for r_n, r in zip(tab.N, tab.reports)])
            tables[f] = {"N": tab.N, "ratio": tab.ratio, "slope": tab.slope, "slope_halfwidth": tab.slope_halfwidth,
                         "strictly_decreasing": tab.strictly_decreasing, "degenerate": tab.degenerate}
            if not tab.degenerate:
                series.append((f, tab.N, tab.ratio))
        out["scaling"] = tables
        if cfg.plots and series:
            w.svg_lines("scaling.svg", series, "N", "sigma / range", "typicality scaling", True, True)
    else:
        for k in ("family", "energy_fraction", "family_seed", "scaling_samples"):
            sec.used.add(k)
    sec.check_unknown()


def _thermo_state_functions(cfg, lm, sec: Section, w: ResultWriter, seed, out: dict):
    spectrum = lm.spectrum
    kinds = [k.upper() for k in sec.get("ensembles", list, [FEEE, RPSE])]
    n = sec.get("n_samples", int, 400)
    pts = sec.get("grid_points", int, 9)
    lo, hi = sec.floats("grid_fractions", [0.08, 0.45])
    method = sec.get("method", str, "mcmc", choices=("mcmc", "factorized"))
    chain = _chain_config(sec.sub("chain"))
    ref = sec.get("reference_fraction", float, 0.25)
    sec.check_unknown()
    e = spectrum.energies
    targets = e[0] + np.linspace(lo, hi, pts) * spectrum.width
    sfs, curves = {}, {}
    series = []
    for kind, s in zip(kinds, seed.spawn(len(kinds))):
        if kind == FEEE:
            if spectrum.N == 2:
                warnings.warn("two-level FEEE: every energy fixes a single population set (zero spread)")
            sf = state_function_feee(spectrum, targets, n, s, method, chain, cfg.workers)
        elif kind == RPSE:
            sf = state_function_rpse(spectrum, rpse_cutoffs_for_energies(spectrum, targets), n, s, cfg.workers)
        else:
            raise sec.error(f"unknown ensemble {kind!r}", "ensembles")
        sfs[kind] = sf
        w.csv(f"state_function_{kind}.csv", ["parameter", "U", "S_mean", "S_std"], sf.rows())
        series.append((kind, sf.U, sf.S_mean))
        rows = []
        if len(sf) >= 3:
            for U in 0.5 * (sf.U[1:] + sf.U[:-1]):
                est = temperature(sf, float(U))
                rows.append((U, est.T, est.T_error, est.convexity_violation))
        w.csv(f"temperature_{kind}.csv", ["U", "T", "T_error", "convexity_violation"], rows)
        curves[kind] = convexity_extensivity_check({spectrum.N: sf})["curvature"][spectrum.N]
    out["state_functions"] = {k: {"label": sf.label, "points": len(sf), "curvature": curves[k]} for k, sf in sfs.items()}
    if cfg.plots and series:
        w.svg_lines("state_functions.svg", series, "U", "<S>", "entropy state functions")
    if lm.model is not None:
        out["canonical_comparison"] = _canonical_comparison(lm.model, sfs, ref, n, seed, chain)


def _canonical_comparison(model: BipartiteModel, sfs, frac, n, seed, chain):
    spectrum = model.spectrum
    R = reduced_projectors(model)
    res = {}
    for (kind, sf), s in zip(sfs.items(), seed.spawn(len(sfs) + 1)[1:]):
        E_ref = float(spectrum.energies[0] + frac * spectrum.width)
        if kind == FEEE:
            spec = EnsembleSpec.feee(spectrum, E_ref)
        else:
            spec = EnsembleSpec.rpse(spectrum, float(rpse_cutoffs_for_energies(spectrum, [E_ref])[0]))
        P = draw_populations(spec, n, np.random.default_rng(s), "auto", chain)
        U = float((P @ spectrum.energies).mean())
        mu = DensityMatrix(np.einsum("kn,nst->st", P, R) / len(P))
        fit = local_temperature_fit(mu, model.H_S)
        entry = {"U": U, "T_local": fit.T, "fit_residual": fit.residual, "fit_flags": fit.flags}
        if sf.U[0] < U < sf.U[-1] and len(sf) >= 3:
            Tg = temperature(sf, U)
            entry.update({"T_global": Tg.T, "T_global_error": Tg.T_error})
            if math.isfinite(Tg.T) and Tg.T > 0:
                entry["trace_distance_to_global_gibbs"] = trace_distance(mu, canonical_reference(model.H_S, Tg.T))
        res[kind] = entry
    return res


def cmd_thermo(cfg: ExperimentConfig, w: ResultWriter, timings: dict) -> int:
    lm = load_model(cfg)
    sec = cfg.section("thermo")
    ss = np.random.SeedSequence(cfg.seed)
    s_typ, s_scale, s_sf = ss.spawn(3)
    out: dict = {"model": lm.description}
    status = "complete"
    code = EXIT_OK
    tasks = []
    sec.used.update(("typicality", "state_function"))
    if sec.has("typicality"):
        tasks.append(("typicality", lambda: _thermo_typicality(cfg, lm, sec.sub("typicality"), w, (s_typ, s_scale), out)))
    if sec.has("state_function"):
        tasks.append(("state_function", lambda: _thermo_state_functions(cfg, lm, sec.sub("state_function"), w, s_sf, out)))
    sec.check_unknown()
    if not tasks:
        raise sec.error("nothing to do: add a typicality and/or state_function section")
    errors = {}
    for name, fn in tasks:
        t0 = time.perf_counter()
        try:
            fn()
        except ConfigError:
            raise
        except Exception as exc:  # keep partial results, mark the run incomplete
            errors[name] = f"{type(exc).__name__}: {exc}"
            status, code = "incomplete", EXIT_NUMERIC
        timings[name] = time.perf_counter() - t0
    out["status"] = status
    if errors:
        out["errors"] = errors
    w.json("thermo_report.json", out)
    if status == "incomplete":
        p = w._path("INCOMPLETE")
        p.write_text("incomplete: " + "; ".join(f"{k}: {v}" for k, v in sorted(errors.items())) + "\n")
        print(f"thermo run incomplete: {errors}", file=sys.stderr)
    return code


def cmd_scorecard(cfg: ExperimentConfig, w: ResultWriter, timings: dict) -> int:
    t0 = time.perf_counter()
    lm = load_model(cfg)
    if lm.model is None:
        raise ConfigError("scorecard needs a bipartite spin model (spins or random_chain)", None, cfg.src)
    sec = cfg.section("scorecard")
    kinds = [k.upper() for k in sec.get("ensembles", list, [RPSE, FEEE])]
    b = sec.sub("budget")
    budget = ScorecardBudget(
        n_samples=b.get("n_samples", int, 400),
        grid_points=b.get("grid_points", int, 7),
        energy_fraction=b.get("energy_fraction", float, 0.25),
        grid_fractions=tuple(b.floats("grid_fractions", [0.08, 0.45])),
        chain=_chain_config(b.sub("chain")) if b.has("chain") else ChainConfig(thinning_factor=4),
        canonical_residual=b.get("canonical_residual", float, 0.02),
        workers=cfg.workers,
    )
    b.check_unknown()
    sizes = sec.get("family_sizes", list, [])
    sec.check_unknown()
    family = {}
    if sizes:
        if lm.family is None:
            raise sec.error("family_sizes needs a random_chain model", "family_sizes")
        for n in sizes:
            if int(n) != lm.model.description["n_spins"]:
                family[int(n)] = random_field_chain(int(n), **lm.family)
    timings["setup"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    sc = requirement_scorecard(lm.model, kinds, budget, cfg.seed, family, cfg.tolerances)
    timings["scorecard"] = time.perf_counter() - t0
    w.json("scorecard.json", sc.to_dict())
    rows = [(kind, e["requirement"], e["status"], e["test"]) for kind, es in sc.entries.items() for e in es]
    w.csv("scorecard_summary.csv", ["ensemble", "requirement", "status", "test"], rows)
    return EXIT_OK


COMMANDS = {
    "spectrum": (cmd_spectrum, "diagonalize the model; write the spectrum and a resonance report"),
    "evolve": (cmd_evolve, "run trajectories and compare time averages with equilibrium predictions"),
    "ensemble": (cmd_ensemble, "draw population samples from an RPSE or FEEE ensemble"),
    "thermo": (cmd_thermo, "typicality, state functions, temperatures and canonical comparisons"),
    "scorecard": (cmd_scorecard, "the five-requirement thermodynamic scorecard"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="puretherm", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"puretherm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="YAML experiment file")
        sp.add_argument("-o", "--output", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--workers", type=int, help="worker processes for independent grid points")
        sp.add_argument("--plots", action="store_true", help="also write SVG line plots")
        sp.add_argument("--require-nonresonant", action="store_true",
                        help="refuse to run on a spectrum with detected resonances")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a scalar config field, e.g. ensemble.n_samples=1000")
    return p


def write_manifest(cfg: ExperimentConfig, w: ResultWriter, command: str, timings: dict, status: str, code: int):
    files = {str(p.relative_to(w.out_dir)): sha256_file(p) for p in sorted(w.files) if p.exists()}
    manifest = {
        "tool": "puretherm",
        "tool_version": __version__,
        "command": command,
        "config_file": cfg.src,
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "status": status,
        "exit_code": code,
        "files": files,
        "timings_seconds": {k: round(v, 6) for k, v in timings.items()},
    }
    with open(w.out_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        w = ResultWriter(cfg.output, cfg.hash, cfg.seed)
    except OSError as exc:
        print(f"config error: output directory not writable: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    fn = COMMANDS[args.command][0]
    timings: dict = {}
    t_start = time.perf_counter()
    code, status = EXIT_OK, "ok"
    try:
        code = fn(cfg, w, timings)
        status = "ok" if code == EXIT_OK else "incomplete"
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code, status = EXIT_CONFIG, "config error"
    except Refused as exc:
        print(f"refused: {exc}", file=sys.stderr)
        code, status = EXIT_REFUSED, "refused"
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, FactorizedApproximationError,
            OutsideDomainError) as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        code, status = EXIT_NUMERIC, "numeric failure"
    timings["total"] = time.perf_counter() - t_start
    write_manifest(cfg, w, args.command, timings, status, code)
    if code == EXIT_OK:
        print(f"{args.command}: wrote {len(w.files)} files to {w.out_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
