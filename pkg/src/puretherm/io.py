"""Deterministic result files: CSV with a provenance header, JSON reports, SVG plots."""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import __version__

UNITS_NOTE = "units: hbar = k_B = 1; energies and temperatures share one unit, entropy in nats"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


class ResultWriter:
    """Writes every output under one directory and remembers what it wrote."""

    def __init__(self, out_dir, cfg_hash: str, seed: int):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.cfg_hash = cfg_hash
        self.seed = int(seed)
        self.files: list[Path] = []

    @property
    def header(self) -> str:
        return f"# puretherm {__version__} config_hash={self.cfg_hash} seed={self.seed} ({UNITS_NOTE})"

    def _path(self, name) -> Path:
        p = self.out_dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        if p not in self.files:
            self.files.append(p)
        return p

    def csv(self, name: str, columns, rows, meta: dict | None = None) -> Path:
        p = self._path(name)
        with open(p, "w", newline="\n") as fh:
            fh.write(self.header + "\n")
            if meta:
                fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        return p

    def csv_array(self, name: str, columns, arr) -> Path:
        arr = np.asarray(arr)
        return self.csv(name, columns, arr.tolist() if arr.dtype != object else arr)

    def json(self, name: str, obj) -> Path:
        p = self._path(name)
        doc = {"config_hash": self.cfg_hash, "seed": self.seed, "tool_version": __version__, "units": UNITS_NOTE}
        doc.update(obj)
        with open(p, "w", newline="\n") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=True, allow_nan=True)
            fh.write("\n")
        return p

    def svg_lines(self, name: str, series, xlabel: str, ylabel: str, title: str = "", logx=False, logy=False) -> Path:
        """Minimal static line plot; ``series`` is a list of (label, x, y)."""
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        p = self._path(name)
        with matplotlib.rc_context({"svg.hashsalt": self.cfg_hash, "svg.fonttype": "none"}):
            fig, ax = plt.subplots(figsize=(5, 3.5))
            for label, x, y in series:
                ax.plot(x, y, marker="o", ms=3, lw=1, label=label)
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            if logx:
                ax.set_xscale("log")
            if logy:
                ax.set_yscale("log")
            if title:
                ax.set_title(f"{title}  [{self.cfg_hash}]", fontsize=8)
            if len(series) > 1:
                ax.legend(fontsize=7)
            fig.tight_layout()
            fig.savefig(p, format="svg", metadata={"Date": None})
            plt.close(fig)
        return p


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def read_csv_columns(path) -> tuple[list[str], np.ndarray]:
    """Columns and float data of a CSV written by ResultWriter (comment lines skipped)."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    cols = lines[0].strip().split(",")
    data = np.array([[float(v) for v in ln.strip().split(",")] for ln in lines[1:] if ln.strip()])
    return cols, data.reshape(-1, len(cols))


def array_hash(a) -> str:
    a = np.ascontiguousarray(a, dtype=float)
    return hashlib.sha256(a.tobytes()).hexdigest()[:16]


def density_rows(rho):
    m = rho.matrix if hasattr(rho, "matrix") else np.asarray(rho)
    return [(i, j, float(m[i, j].real), float(m[i, j].imag)) for i in range(m.shape[0]) for j in range(m.shape[1])]


def read_density_csv(path) -> np.ndarray:
    _, d = read_csv_columns(path)
    n = int(d[:, 0].max()) + 1
    m = np.zeros((n, n), dtype=complex)
    m[d[:, 0].astype(int), d[:, 1].astype(int)] = d[:, 2] + 1j * d[:, 3]
    return m


def population_rows(P):
    P = P.P if hasattr(P, "P") else np.asarray(P)
    return [(k, float(p)) for k, p in enumerate(P)]


def read_populations_csv(path) -> np.ndarray:
    cols, d = read_csv_columns(path)
    return d[np.argsort(d[:, cols.index("index")]), cols.index("P")]
