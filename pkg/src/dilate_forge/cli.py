"""Command-line front end: ``dilate-forge run | presets | validate``."""
import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .dilation import (
    CutoffPolicy,
    GramSchmidtBreakdown,
    NotFactorableError,
    TrackingError,
    apply_cutoff,
    diagnose,
    dilate,
)
from .generators import CPTPViolation, TimeGrid
from .presets import PRESETS, build_system, catalog, encode_matrix, preset_schema
from .simulate import (
    DivergentStartError,
    compare_paths,
    cutoff_error_bound,
    evolve_dilated,
    fig2_experiment,
    fig3_dataset,
    oracle_path,
)
from .transforms import PerturbationSpec, RankChangeError, perturbative_pipeline, rescale_time

logger = logging.getLogger("dilate_forge")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
THREADS_ENV = "DILATE_FORGE_THREADS"
STAGES = ("diagnose", "dilate", "simulate", "compare", "rescale", "figures")
REQUIRES = {"simulate": ("dilate",), "compare": ("simulate",), "rescale": ("dilate",)}
NAMED_STATES = ("plus", "ground", "excited", "maximally_mixed")
FLOAT_FMT = "%.17g"
SINGULAR_SKIP = 0.01

_NUM = {"type": "number"}
_MATRIX = {"type": "array", "items": {"type": "array", "items": {
    "type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}}}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "system": {
            "type": "object",
            "properties": {"preset": {"enum": sorted(PRESETS)}, "params": {"type": "object"}},
            "required": ["preset"],
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "properties": {"t_start": {"type": "number", "minimum": 0}, "t_end": _NUM,
                           "n_steps": {"type": "integer", "minimum": 6}},
            "required": ["t_end", "n_steps"],
            "additionalProperties": False,
        },
        "pipeline": {
            "type": "object",
            "properties": {
                "stages": {"type": "array", "items": {"enum": list(STAGES)},
                           "minItems": 1, "uniqueItems": True},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
                "initial_state": {"oneOf": [{"enum": list(NAMED_STATES)}, _MATRIX]},
                "sim_start": {"type": "number", "minimum": 0},
                "fd_order": {"enum": [2, 4, 6, 8]},
                "rank": {"type": "integer", "minimum": 1},
                "h0": {"type": "number", "exclusiveMinimum": 0},
                "figures": {
                    "type": "object",
                    "properties": {
                        "fig2": {"type": "object", "properties": {
                            "gamma": {"type": "number", "exclusiveMinimum": 0},
                            "cutoffs": {"type": "array", "minItems": 1,
                                        "items": {"type": "number", "exclusiveMinimum": 0}},
                            "t_end": {"type": "number", "exclusiveMinimum": 0},
                            "n_steps": {"type": "integer", "minimum": 1}},
                            "additionalProperties": False},
                        "fig3": {"type": "object", "properties": {
                            "gamma": {"type": "number", "exclusiveMinimum": 0},
                            "omega0": _NUM,
                            "t_end": {"type": "number", "exclusiveMinimum": 0},
                            "n_steps": {"type": "integer", "minimum": 1}},
                            "additionalProperties": False},
                    },
                    "additionalProperties": False,
                },
            },
            "required": ["stages"],
            "additionalProperties": False,
        },
        "cutoff": {
            "type": "object",
            "properties": {"c": {"type": "number", "exclusiveMinimum": 0},
                           "mode": {"enum": ["prefactor_clamp", "norm_clamp"]}},
            "required": ["c"],
            "additionalProperties": False,
        },
        "perturbation": {
            "type": "object",
            "properties": {"delta": {"type": "number", "minimum": 0},
                           "generator": {"type": "object"}},
            "required": ["delta", "generator"],
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"directory": {"type": "string"},
                           "formats": {"type": "array", "items": {"enum": ["csv", "json"]}}},
            "additionalProperties": False,
        },
    },
    "required": ["system", "grid", "pipeline"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


class ToleranceFailure(RuntimeError):
    pass


NUMERICAL_ERRORS = (CPTPViolation, GramSchmidtBreakdown, TrackingError, NotFactorableError,
                    RankChangeError, DivergentStartError, ToleranceFailure)


# --- config handling ------------------------------------------------------------

def apply_overrides(config: dict, overrides: List[str]) -> dict:
    """Set dotted keys, ``grid.n_steps=1000``; values are parsed as JSON when possible."""
    config = copy.deepcopy(config)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return config


def validate_config(config: dict) -> None:
    """Schema and semantic checks; raises :class:`ConfigError`."""
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.path))
    if errors:
        msgs = [f"{'/'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("; ".join(msgs))
    system = config["system"]
    params = system.get("params", {})
    errors = list(jsonschema.Draft7Validator(preset_schema(system["preset"])).iter_errors(params))
    if errors:
        raise ConfigError("system.params: " + "; ".join(e.message for e in errors))
    grid = config["grid"]
    if not grid["t_end"] > grid.get("t_start", 0.0):
        raise ConfigError("grid: t_end must exceed t_start")
    if "perturbation" in config:
        gen = config["perturbation"]["generator"]
        errors = list(jsonschema.Draft7Validator(preset_schema("custom")).iter_errors(gen))
        if errors:
            raise ConfigError("perturbation.generator: " + "; ".join(e.message for e in errors))
    try:
        spec = build_system(system["preset"], params)
        if "perturbation" in config:
            pert = build_system("custom", config["perturbation"]["generator"])
            if pert.dim != spec.dim:
                raise ValueError("perturbation dimension differs from the system")
        state = config["pipeline"].get("initial_state", "plus")
        initial_state(state, spec.dim)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"system: {exc}") from exc


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical config; the output directory does not count."""
    config = copy.deepcopy(config)
    config.get("output", {}).pop("directory", None)
    if config.get("output") == {}:
        del config["output"]
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def initial_state(spec, dim: int) -> np.ndarray:
    if isinstance(spec, str):
        if spec == "plus":
            psi = np.ones(dim) / np.sqrt(dim)
            return np.outer(psi, psi).astype(complex)
        if spec in ("ground", "excited"):
            rho = np.zeros((dim, dim), dtype=complex)
            j = 0 if spec == "ground" else dim - 1
            rho[j, j] = 1.0
            return rho
        if spec == "maximally_mixed":
            return np.eye(dim, dtype=complex) / dim
        raise ValueError(f"unknown initial state {spec!r}")
    from .estimator import check_density_matrices
    from .presets import decode_matrix

    return check_density_matrices(decode_matrix(spec), dim)[0]


# --- output helpers -------------------------------------------------------------

def matrix_columns(prefix: str, rows: int, cols: int) -> List[str]:
    return [f"{prefix}_{i}_{j}_{part}" for i in range(rows) for j in range(cols)
            for part in ("re", "im")]


def write_matrix_csv(path: Path, times: np.ndarray, mats: np.ndarray, prefix: str) -> None:
    """``t`` then row-major ``re, im`` pairs of each matrix, 17 significant digits."""
    mats = np.asarray(mats, dtype=complex)
    n, r, c = mats.shape
    flat = np.stack([mats.real, mats.imag], axis=-1).reshape(n, r * c * 2)
    data = np.column_stack([times, flat])
    header = ",".join(["t"] + matrix_columns(prefix, r, c))
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header=header, comments="")


def read_matrix_csv(path) -> tuple:
    """Inverse of :func:`write_matrix_csv`: ``(times, matrices)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    last = header[-1].split("_")
    rows, cols = int(last[-3]) + 1, int(last[-2]) + 1
    pairs = data[:, 1:].reshape(len(data), rows, cols, 2)
    return data[:, 0], pairs[..., 0] + 1j * pairs[..., 1]


def write_table_csv(path: Path, columns: dict) -> None:
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header=",".join(names), comments="")


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# --- run ------------------------------------------------------------------------

def resolve_stages(requested: List[str], warnings: List[str]) -> List[str]:
    wanted = set(requested)
    for stage in reversed(STAGES):
        if stage in wanted:
            for dep in REQUIRES.get(stage, ()):
                if dep not in wanted:
                    wanted.add(dep)
                    warnings.append(f"stage {dep} added as a prerequisite of {stage}")
    return [s for s in STAGES if s in wanted]


class Runner:
    """Executes the configured stages and records outputs and warnings."""

    def __init__(self, config: dict, out_dir: Path):
        self.config = config
        self.out = out_dir
        self.warnings: List[str] = []
        self.timings: dict = {}
        self.outputs: List[str] = []
        pipe = config["pipeline"]
        g = config["grid"]
        self.grid = TimeGrid(float(g.get("t_start", 0.0)), float(g["t_end"]), int(g["n_steps"]))
        self.base = build_system(config["system"]["preset"], config["system"].get("params", {}))
        self.perturbation = None
        if "perturbation" in config:
            p = config["perturbation"]
            self.perturbation = PerturbationSpec(self.base, build_system("custom", p["generator"]),
                                                 float(p["delta"]))
        self.spec = self.perturbation.full if self.perturbation else self.base
        self.tol = float(pipe.get("tolerance", 1e-6))
        self.fd_order = int(pipe.get("fd_order", 6))
        self.rho0 = initial_state(pipe.get("initial_state", "plus"), self.spec.dim)
        self.path = None
        self.target_path = None
        self.sim = None
        self.window = None

    def _emit(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def run(self, stages: List[str]) -> None:
        for stage in stages:
            t0 = time.perf_counter()
            try:
                getattr(self, f"stage_{stage}")()
            except NUMERICAL_ERRORS as exc:
                raise StageError(stage, exc) from exc
            finally:
                self.timings[stage] = time.perf_counter() - t0

    def stage_diagnose(self):
        report = diagnose(self.spec, self.grid)
        if report.needs_review:
            self.warnings.append("diagnose: eigenvalue and generator tests disagree")
        write_json(self._emit("diagnosis.json"), report.to_dict())

    def stage_dilate(self):
        rank = self.config["pipeline"].get("rank")
        if self.perturbation is not None:
            path = perturbative_pipeline(self.perturbation, self.grid, self.fd_order)
        else:
            res = dilate(self.spec, self.grid, rank=rank, fd_order=self.fd_order, full=True)
            path = res.path
            for i, a, b in res.track.crossings:
                self.warnings.append(f"dilate: flagged crossing of tracks {a},{b} at grid index {i}")
        if path.nonsmooth_indices:
            idx = path.nonsmooth_indices
            self.warnings.append(f"dilate: {len(idx)} non-smooth Hamiltonian points, first at "
                                 f"grid index {idx[0]}")
        self.target_path = path
        if "cutoff" in self.config:
            c = self.config["cutoff"]
            res = apply_cutoff(path, CutoffPolicy(float(c["c"]), c.get("mode", "prefactor_clamp")))
            lo, hi = res.window
            self.warnings.append(f"cutoff: Hamiltonian clamped on [{lo:.17g}, {hi:.17g}]")
            path = res.path
        self.path = path
        hams = path.hamiltonians.copy()
        hams[: path.h_valid_from] = np.nan
        write_matrix_csv(self._emit("hamiltonian.csv"), self.grid.times, hams, "H")
        write_json(self._emit("hamiltonian.json"), {
            "file": "hamiltonian.csv",
            "columns": "t, then row-major entries of H(t) as re/im pairs",
            "system_dim": path.system_dim,
            "ancilla_dim": path.ancilla_dim,
            "kraus_rank": path.ancilla_dim,
            "ordering": "system index a, ancilla index k -> a * ancilla_dim + k",
            "ancilla_initial_state": "|0><0|",
            "h_valid_from": path.h_valid_from,
            "nonsmooth_indices": list(path.nonsmooth_indices),
            "convention": self.spec.convention,
            "precision_digits": 17,
        })

    def stage_simulate(self):
        pipe = self.config["pipeline"]
        if "sim_start" in pipe:
            start = self.grid.index_of(pipe["sim_start"])
        elif self.target_path.h_valid_from > 0 and self.path.h_valid_from == 0:
            start = 0  # a cutoff removed the singular start
        else:
            # skip the finite-difference transient after a singular start
            start = max(self.path.h_valid_from,
                        self.grid.index_of(self.grid.t_start + SINGULAR_SKIP)
                        if self.path.h_valid_from > 0 else 0)
        self.window = self.grid.window(start)
        self.sim = evolve_dilated(self.path, self.rho0, self.window)
        events = self.sim.reunitarizations
        if events:
            worst = max(d for _, d in events)
            self.warnings.append(f"simulate: re-unitarized {len(events)} times, first at step "
                                 f"{events[0][0]}, largest drift {worst:.3e}")
        write_matrix_csv(self._emit("reduced_states.csv"), self.window.times, self.sim.reduced,
                         "rho")
        write_json(self._emit("reduced_states.json"), {
            "file": "reduced_states.csv",
            "columns": "t, then row-major entries of rho(t) as re/im pairs",
            "system_dim": self.spec.dim,
            "initial_state": encode_matrix(self.rho0),
            "window_start_index": start,
            "precision_digits": 17,
        })

    def stage_compare(self):
        ref = oracle_path(self.spec, self.rho0, self.window)
        bound = None
        if "cutoff" in self.config:
            eb = cutoff_error_bound(self.target_path, self.path)
            i0 = self.grid.index_of(self.window.t_start)
            bound = eb.bound[i0:]
        report = compare_paths(self.sim.reduced, ref, self.window, self.tol, bound)
        cols = {"t": self.window.times, "trace_distance": report.distances}
        if bound is not None:
            cols["unitary_error_bound"] = bound
        write_table_csv(self._emit("comparison.csv"), cols)
        write_json(self._emit("comparison.json"), report.to_dict())
        if not report.passed:
            worst = int(np.argmax(report.distances))
            raise ToleranceFailure(
                f"max trace distance {report.max_distance:.3e} exceeds {self.tol:.1e} at grid "
                f"point t={self.window.times[worst]:.6g}")

    def stage_rescale(self):
        h0 = float(self.config["pipeline"].get("h0", 1.0))
        rm = rescale_time(self.target_path, h0)
        write_table_csv(self._emit("rescale.csv"), {"t": rm.times, "h": rm.h, "tau": rm.tau})
        write_json(self._emit("rescale.json"), {
            "h0": rm.h0, "X": encode_matrix(rm.x), "tau_end": float(rm.tau[-1]),
            "columns": "t, h(t), tau(t)",
        })

    def stage_figures(self):
        figs = self.config["pipeline"].get("figures", {})
        f2 = {"gamma": 1.0, "cutoffs": [2.0, 5.0, 10.0, 20.0], "t_end": 3.0, "n_steps": 3000}
        f2.update(figs.get("fig2", {}))
        data = fig2_experiment(f2["gamma"], f2["cutoffs"], TimeGrid(0.0, f2["t_end"], f2["n_steps"]))
        cols = {"t": data.times, "exact": data.exact}
        cols.update({f"C={c:g}": data.survival[c] for c in f2["cutoffs"]})
        write_table_csv(self._emit("fig2.csv"), cols)
        cols = {"t": data.inset_times, "exact": data.inset_exact}
        cols.update({f"C={c:g}": data.inset_survival[c] for c in f2["cutoffs"]})
        write_table_csv(self._emit("fig2_inset.csv"), cols)
        f3 = {"gamma": 1.0, "omega0": 2.0, "n_steps": 500}
        f3.update(figs.get("fig3", {}))
        table = fig3_dataset(f3["gamma"], f3["omega0"], f3.get("t_end"), f3["n_steps"])
        write_table_csv(self._emit("fig3.csv"), table)


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"stage {stage}: {exc}")
        self.stage = stage


def run(config_path: str, overrides: Optional[List[str]] = None,
        out: Optional[str] = None) -> int:
    try:
        config = apply_overrides(load_config(config_path), overrides or [])
        if out is not None:
            config.setdefault("output", {})["directory"] = out
        validate_config(config)
    except ConfigError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out_dir = Path(config.get("output", {}).get("directory", "dilate_forge_out"))
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"validation failed: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    warnings: List[str] = []
    stages = resolve_stages(config["pipeline"]["stages"], warnings)
    runner = Runner(config, out_dir)
    runner.warnings.extend(warnings)
    code = EXIT_OK
    error = None
    try:
        with threadpool_limits(limits=_thread_cap()):
            runner.run(stages)
    except StageError as exc:
        code, error = EXIT_NUMERICAL, str(exc)
        print(f"numerical failure: {exc}", file=sys.stderr)
    write_json(out_dir / "manifest.json", {
        "config_hash": config_hash(config),
        "tool_version": __version__,
        "stages": stages,
        "timings_seconds": runner.timings,
        "warnings": runner.warnings,
        "outputs": runner.outputs,
        "exit_code": code,
        "error": error,
    })
    return code


def _thread_cap() -> Optional[int]:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
        return None
    return n if n > 0 else None


def example_config(preset: str) -> dict:
    return {
        "system": {"preset": preset, "params": PRESETS[preset]["example"]},
        "grid": {"t_start": 0.0, "t_end": 1.0, "n_steps": 1000},
        "pipeline": {"stages": ["diagnose"]},
    }


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="dilate-forge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the configured pipeline stages")
    p_run.add_argument("config")
    p_run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p_run.add_argument("--out", metavar="DIR")
    sub.add_parser("presets", help="print the preset catalog as JSON")
    p_val = sub.add_parser("validate", help="validate a config without running it")
    p_val.add_argument("config")
    p_val.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        print(json.dumps(catalog(), sort_keys=True, indent=2))
        return EXIT_OK
    if args.command == "validate":
        try:
            validate_config(apply_overrides(load_config(args.config), args.override))
        except ConfigError as exc:
            print(f"validation failed: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        print("valid")
        return EXIT_OK
    return run(args.config, args.override, args.out)


if __name__ == "__main__":
    sys.exit(main())
