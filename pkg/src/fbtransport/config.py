"""Declarative run configuration.

A run is described in a YAML file with a fixed, flat-sectioned schema.
Validation is strict: unknown sections or keys are rejected, every value is
checked against the module preconditions before any compute starts, and
error messages carry the dotted key path. A config has a stable identity,
run_id, derived from its canonical JSON form; two files that mean the same
run get the same run_id.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .ensemble import METHODS, CPGF
from .lattice import RANDOM, SAWTOOTH, STUB, SUPERLATTICE, LatticeSpec
from .spectral import CPGFParams


class ConfigError(ValueError):
    """Invalid, unknown, or inconsistent run-configuration content."""


_SECTIONS = {
    "lattice": ("kind", "n_cells", "t", "alpha"),
    "disorder": ("x", "y", "mode"),
    "ensemble": ("n_configs", "master_seed", "method"),
    "cpgf": ("eta", "moments", "random_vectors"),
    "sweep": ("variable", "values"),
    "output": ("path", "format"),
}

SWEEPABLES = ("x", "y", "alpha", "E")
FORMATS = ("csv", "json")

RUN_ID_LENGTH = 12


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


@dataclass(frozen=True)
class RunConfig:
    """A fully validated run description."""

    kind: str
    n_cells: int
    t: float
    alpha: float | None
    x: float | None  # base removed fraction; None when x or y is swept
    mode: str
    n_configs: int
    master_seed: int
    method: str
    eta: float
    moments: int | str
    random_vectors: int
    sweep_variable: str
    sweep_values: tuple[float, ...]
    out_path: str
    out_format: str

    def canonical(self) -> dict:
        """Normalized nested form: defaults filled in, y folded into x."""
        return {
            "lattice": {
                "kind": self.kind,
                "n_cells": self.n_cells,
                "t": self.t,
                "alpha": self.alpha,
            },
            "disorder": {"x": self.x, "mode": self.mode},
            "ensemble": {
                "n_configs": self.n_configs,
                "master_seed": self.master_seed,
                "method": self.method,
            },
            "cpgf": {
                "eta": self.eta,
                "moments": self.moments,
                "random_vectors": self.random_vectors,
            },
            "sweep": {
                "variable": self.sweep_variable,
                "values": list(self.sweep_values),
            },
            "output": {"path": self.out_path, "format": self.out_format},
        }

    @property
    def run_id(self) -> str:
        # identity of the run, not of the artifact: where the result is
        # written does not change what was computed
        physical = {k: v for k, v in self.canonical().items() if k != "output"}
        blob = json.dumps(physical, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:RUN_ID_LENGTH]

    def lattice_spec(self, alpha: float | None = None) -> LatticeSpec:
        chosen = alpha if alpha is not None else self.alpha
        return LatticeSpec(kind=self.kind, n_cells=self.n_cells, t=self.t, alpha=chosen)

    def cpgf_params(self) -> CPGFParams:
        return CPGFParams(
            eta=self.eta, moments=self.moments, random_vectors=self.random_vectors
        )


def validate_config(data) -> RunConfig:
    """Check a parsed mapping against the schema; raise ConfigError listing
    every problem with its dotted key path."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping of sections")
    errors: list[str] = []
    for section in data:
        if section not in _SECTIONS:
            errors.append(f"{section}: unknown section")
    blocks = {}
    for section, keys in _SECTIONS.items():
        block = data.get(section)
        if block is None:
            blocks[section] = {}
            continue
        if not isinstance(block, dict):
            errors.append(f"{section}: must be a mapping")
            blocks[section] = {}
            continue
        for key in block:
            if key not in keys:
                errors.append(f"{section}.{key}: unknown key")
        blocks[section] = block

    lat, dis, ens, cp, sweep, out = (
        blocks["lattice"],
        blocks["disorder"],
        blocks["ensemble"],
        blocks["cpgf"],
        blocks["sweep"],
        blocks["output"],
    )

    kind = lat.get("kind")
    if kind not in (SAWTOOTH, STUB):
        errors.append(f"lattice.kind: must be one of {SAWTOOTH!r}, {STUB!r}")
    n_cells = lat.get("n_cells")
    if not _is_int(n_cells) or n_cells < 3:
        errors.append("lattice.n_cells: must be an integer of at least 3")
        n_cells = 3
    t = lat.get("t", 1.0)
    if not _is_number(t) or t <= 0:
        errors.append("lattice.t: must be a positive number")
        t = 1.0
    alpha = lat.get("alpha")
    if alpha is not None and not _is_number(alpha):
        errors.append("lattice.alpha: must be a number")
        alpha = None

    variable = sweep.get("variable")
    if variable not in SWEEPABLES:
        errors.append(f"sweep.variable: must be one of {', '.join(SWEEPABLES)}")
    raw_values = sweep.get("values")
    values: tuple[float, ...] = ()
    if not isinstance(raw_values, (list, tuple)) or not raw_values:
        errors.append("sweep.values: must be a non-empty list of numbers")
    elif not all(_is_number(v) for v in raw_values):
        errors.append("sweep.values: must be a non-empty list of numbers")
    else:
        values = tuple(float(v) for v in raw_values)
        if variable in ("x", "y") and not all(0.0 <= v <= 1.0 for v in values):
            errors.append("sweep.values: x and y values must lie in [0, 1]")
        if variable == "alpha" and any(v == 0.0 for v in values):
            errors.append("sweep.values: alpha values must be nonzero")
        if variable == "E" and any(b <= a for a, b in zip(values, values[1:])):
            errors.append("sweep.values: energies must be strictly increasing")

    x_given, y_given = dis.get("x"), dis.get("y")
    x: float | None = None
    if x_given is not None and y_given is not None:
        errors.append("disorder.y: give x or y, not both")
    elif variable in ("x", "y"):
        if x_given is not None or y_given is not None:
            errors.append(f"disorder: a fixed dilution conflicts with the sweep over {variable}")
    else:
        chosen, label = (x_given, "x") if x_given is not None else (y_given, "y")
        if chosen is None:
            errors.append("disorder.x: required (or disorder.y) unless x or y is swept")
        elif not _is_number(chosen) or not 0.0 <= chosen <= 1.0:
            errors.append(f"disorder.{label}: must be a number in [0, 1]")
        else:
            x = float(chosen) if label == "x" else 1.0 - float(chosen)
    mode = dis.get("mode", RANDOM)
    if mode not in (RANDOM, SUPERLATTICE):
        errors.append(f"disorder.mode: must be {RANDOM!r} or {SUPERLATTICE!r}")

    if variable == "alpha":
        if kind == SAWTOOTH:
            errors.append("sweep.variable: alpha sweeps apply to the stub lattice only")
        if alpha is not None:
            errors.append("lattice.alpha: a fixed alpha conflicts with the sweep over alpha")
        elif values:
            alpha = values[0]  # base spec placeholder; the grid replaces it
    elif kind == STUB and alpha is None:
        errors.append("lattice.alpha: required for the stub lattice")

    n_configs = ens.get("n_configs", 1)
    if not _is_int(n_configs) or n_configs < 1:
        errors.append("ensemble.n_configs: must be an integer of at least 1")
        n_configs = 1
    master_seed = ens.get("master_seed", 0)
    if not _is_int(master_seed) or master_seed < 0:
        errors.append("ensemble.master_seed: must be a nonnegative integer")
        master_seed = 0
    method = ens.get("method", CPGF)
    if method not in METHODS:
        errors.append(f"ensemble.method: must be one of {', '.join(METHODS)}")
        method = CPGF

    eta = cp.get("eta", 0.01)
    moments = cp.get("moments", "auto")
    random_vectors = cp.get("random_vectors", 8)
    try:
        CPGFParams(eta=eta, moments=moments, random_vectors=random_vectors)
    except (TypeError, ValueError) as err:
        errors.append(f"cpgf: {err}")
        eta, moments, random_vectors = 0.01, "auto", 8

    path = out.get("path")
    if not isinstance(path, str) or not path:
        errors.append("output.path: required non-empty string")
        path = ""
    out_format = out.get("format", "csv")
    if out_format not in FORMATS:
        errors.append(f"output.format: must be one of {', '.join(FORMATS)}")
        out_format = "csv"

    if not errors and kind is not None:
        try:
            LatticeSpec(kind=kind, n_cells=n_cells, t=float(t), alpha=alpha)
        except ValueError as err:
            errors.append(f"lattice: {err}")

    if errors:
        raise ConfigError("; ".join(errors))
    return RunConfig(
        kind=kind,
        n_cells=n_cells,
        t=float(t),
        alpha=None if alpha is None else float(alpha),
        x=x,
        mode=mode,
        n_configs=n_configs,
        master_seed=master_seed,
        method=method,
        eta=float(eta),
        moments=moments if moments == "auto" else int(moments),
        random_vectors=int(random_vectors),
        sweep_variable=variable,
        sweep_values=values,
        out_path=path,
        out_format=out_format,
    )


def load_config(path, seed_override: int | None = None) -> RunConfig:
    """Read, parse, and validate a YAML run configuration."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"{path}: {err}") from err
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid syntax: {err}") from err
    if seed_override is not None:
        if not isinstance(data, dict):
            raise ConfigError("top level must be a mapping of sections")
        data.setdefault("ensemble", {})["master_seed"] = int(seed_override)
    return validate_config(data)
