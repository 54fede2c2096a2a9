"""Command-line front end.

Subcommands take a YAML run configuration and write one machine-readable
result file (CSV or JSON per output.format):

  dos       energy-resolved density of states (sweep.variable must be E)
  sigma     flat-band conductivity over an x, y, or alpha sweep, with
            analytic overlay rows for direct plotting
  metric    per-realization quantum-metric and spread diagnostics through
            the localized-state routes, plus ensemble statistics
  analytic  closed-form prediction tables over the sweep grid, no simulation

Exit codes: 0 success, 1 compute failure, 2 invalid configuration. The CSV
carries `# key: value` metadata comments above a fixed header row; the JSON
format mirrors the same rows as an array of objects under "rows". Analytic
overlays appear as extra rows distinguished by the observable column, one
set per grid point. FBTRANSPORT_THREADS sets the ensemble worker count
(default 1); results are bit-identical for any worker count.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import (
    ORDERED_MODE,
    RANDOM_MODE,
    sigma_sc,
    sigma_sc_clean,
    sigma_sl,
    sigma_sl_clean,
    sigma_sl_superlattice,
)
from .config import ConfigError, RunConfig, load_config
from .ensemble import (
    CPGF,
    FB_STATES,
    SIGMA_FB,
    EnsembleSpec,
    ensemble_dos,
    realization_seeds,
    run_ensemble,
)
from .flatband import sigma_fb_from_states
from .lattice import SAWTOOTH, SUPERLATTICE, make_disorder
from .spectral import SpectrumSample, fb_weight

CSV_COLUMNS = (
    "run_id",
    "lattice",
    "n_cells",
    "x",
    "alpha",
    "eta",
    "moments",
    "rvecs",
    "seed",
    "E",
    "observable",
    "value",
    "stderr",
)


def _worker_count() -> int:
    raw = os.environ.get("FBTRANSPORT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _row(cfg: RunConfig, **fields) -> dict:
    row = {
        "run_id": cfg.run_id,
        "lattice": cfg.kind,
        "n_cells": cfg.n_cells,
        "x": None,
        "alpha": None,
        "eta": None,
        "moments": None,
        "rvecs": None,
        "seed": None,
        "E": None,
        "observable": "",
        "value": None,
        "stderr": None,
    }
    row.update(fields)
    return row


def _spectral_columns(cfg: RunConfig) -> dict:
    # the fbstates method involves no broadening or expansion
    if cfg.method == FB_STATES:
        return {}
    cols = {"eta": cfg.eta}
    if cfg.method == CPGF:
        cols["moments"] = cfg.moments
        cols["rvecs"] = cfg.random_vectors
    return cols


def _ensemble_spec(cfg: RunConfig, x_values, alpha_values=None) -> EnsembleSpec:
    return EnsembleSpec(
        base=cfg.lattice_spec(),
        x_values=tuple(x_values),
        mode=cfg.mode,
        alpha_values=alpha_values,
        n_configs=cfg.n_configs,
        master_seed=cfg.master_seed,
        method=cfg.method,
        cpgf=None if cfg.method == FB_STATES else cfg.cpgf_params(),
    )


def _dilution_grid(cfg: RunConfig) -> tuple[float, ...]:
    if cfg.sweep_variable == "x":
        return cfg.sweep_values
    if cfg.sweep_variable == "y":
        return tuple(1.0 - y for y in cfg.sweep_values)
    return (cfg.x,)


def _overlay_rows(cfg: RunConfig, x: float, alpha: float | None, e_fb: float):
    """Analytic companion rows for one grid point; domain failures are
    reported, not fatal."""
    y = 1.0 - x
    labels: list[tuple[str, callable]] = []
    if cfg.kind == SAWTOOTH:
        labels = [
            ("analytic_dilute_random", lambda: sigma_sc(y, RANDOM_MODE)),
            ("analytic_dilute_superlattice", lambda: sigma_sc(y, ORDERED_MODE)),
            ("analytic_clean", lambda: sigma_sc_clean()),
        ]
    else:
        labels = [
            ("analytic_full", lambda: sigma_sl(alpha, y).value),
            # the two limiting forms either side of the alpha = sqrt(y) crossover
            ("analytic_weak_limit", lambda: (1.0 + y) / y),
            ("analytic_strong_limit", lambda: 1.0 / (3.0 * y)),
            ("analytic_clean", lambda: sigma_sl_clean(alpha)),
        ]
        if cfg.mode == SUPERLATTICE:
            labels.append(
                ("analytic_dilute_superlattice", lambda: sigma_sl_superlattice(y))
            )
    rows, notes = [], []
    for name, compute in labels:
        try:
            value = float(compute())
        except (ValueError, ArithmeticError, ZeroDivisionError) as err:
            notes.append(f"{name} at x={x:g}: {err}")
            continue
        rows.append(
            _row(
                cfg,
                x=x,
                alpha=alpha,
                seed=cfg.master_seed,
                E=e_fb,
                observable=name,
                value=value,
                stderr=0.0,
            )
        )
    return rows, notes


def cmd_sigma(cfg: RunConfig):
    """Flat-band conductivity sweep with analytic overlays."""
    if cfg.sweep_variable == "E":
        raise ConfigError("sweep.variable: sigma sweeps x, y, or alpha, not E")
    alpha_values = cfg.sweep_values if cfg.sweep_variable == "alpha" else None
    spec = _ensemble_spec(cfg, _dilution_grid(cfg), alpha_values)
    result = run_ensemble(spec, SIGMA_FB, n_workers=_worker_count())
    rows, notes = [], []
    spectral = _spectral_columns(cfg)
    for point in result.rows:
        e_fb = spec.base.e_fb
        if point.stat is not None:
            rows.append(
                _row(
                    cfg,
                    x=point.x,
                    alpha=point.alpha if point.alpha is not None else cfg.alpha,
                    seed=cfg.master_seed,
                    E=e_fb,
                    observable="sigma_fb",
                    value=point.stat.mean,
                    stderr=point.stat.stderr,
                    **spectral,
                )
            )
        if point.n_failed:
            notes.append(f"x={point.x:g}: {point.n_failed} realization(s) failed")
        overlay, overlay_notes = _overlay_rows(
            cfg, point.x, point.alpha if point.alpha is not None else cfg.alpha, e_fb
        )
        rows.extend(overlay)
        notes.extend(overlay_notes)
    if all(point.stat is None for point in result.rows):
        reason = result.failures[0][2] if result.failures else "no realizations"
        raise RuntimeError(f"all realizations failed: {reason}")
    return rows, notes, len(result.failures)


def cmd_dos(cfg: RunConfig):
    """Energy-resolved DOS, plus one integrated FB-window weight row."""
    if cfg.sweep_variable != "E":
        raise ConfigError("sweep.variable: dos sweeps energy; set it to E")
    if cfg.method == FB_STATES:
        raise ConfigError("ensemble.method: dos needs a spectral method (cpgf or exactdiag)")
    energies = np.asarray(cfg.sweep_values)
    spec = _ensemble_spec(cfg, (cfg.x,))
    (table,) = ensemble_dos(spec, energies)
    if table.n == 0:
        raise RuntimeError("all realizations failed")
    rows, notes = [], []
    spectral = _spectral_columns(cfg)
    for e, value, err in zip(table.energies, table.mean, table.stderr):
        rows.append(
            _row(
                cfg,
                x=cfg.x,
                alpha=cfg.alpha,
                seed=cfg.master_seed,
                E=float(e),
                observable="dos",
                value=float(value),
                stderr=float(err),
                **spectral,
            )
        )
    if table.n_failed:
        notes.append(f"{table.n_failed} realization(s) failed")
    e_fb = spec.base.e_fb
    try:
        sample = SpectrumSample(energies=table.energies, values=table.mean, stderr=table.stderr)
        weight, weight_err = fb_weight(sample, e_fb, cfg.eta)
        rows.append(
            _row(
                cfg,
                x=cfg.x,
                alpha=cfg.alpha,
                seed=cfg.master_seed,
                E=e_fb,
                observable="fb_weight",
                value=float(weight),
                stderr=float(weight_err),
                **spectral,
            )
        )
    except ValueError as err:
        notes.append(f"fb_weight skipped: {err}")
    return rows, notes, table.n_failed


def cmd_metric(cfg: RunConfig):
    """Per-realization metric and spread diagnostics via the localized
    states, with ensemble summary rows. Ignores ensemble.method: the two
    conductivity routes are defined through the states."""
    if cfg.sweep_variable == "E":
        raise ConfigError("sweep.variable: metric sweeps x, y, or alpha, not E")
    alpha_values = cfg.sweep_values if cfg.sweep_variable == "alpha" else (None,)
    rows, notes = [], []
    n_failed = 0
    grid = [(x, al) for x in _dilution_grid(cfg) for al in alpha_values]
    for gi, (x, alpha) in enumerate(grid):
        lat = cfg.lattice_spec(alpha)
        per_real = {
            "fb_metric": [],
            "fb_spread_sq": [],
            "sigma_fb_metric_route": [],
            "sigma_fb_spread_route": [],
        }
        for ci in range(cfg.n_configs):
            dis_seed, _ = realization_seeds(cfg.master_seed, gi, ci)
            try:
                dis = make_disorder(lat, x, cfg.mode, dis_seed)
                routes = sigma_fb_from_states(lat, dis)
            except (ValueError, ArithmeticError) as err:
                n_failed += 1
                notes.append(f"x={x:g} config {ci}: {type(err).__name__}: {err}")
                continue
            y = routes.y
            values = {
                "fb_metric": routes.mean_metric,
                "fb_spread_sq": routes.spread_route / (2.0 * y),
                "sigma_fb_metric_route": routes.metric_route,
                "sigma_fb_spread_route": routes.spread_route,
            }
            for name, value in values.items():
                per_real[name].append(value)
                rows.append(
                    _row(
                        cfg,
                        x=x,
                        alpha=lat.alpha if cfg.kind != SAWTOOTH else None,
                        seed=dis_seed,
                        observable=name,
                        value=float(value),
                    )
                )
        for name, samples in per_real.items():
            if not samples:
                continue
            arr = np.asarray(samples)
            err = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
            rows.append(
                _row(
                    cfg,
                    x=x,
                    alpha=lat.alpha if cfg.kind != SAWTOOTH else None,
                    seed=cfg.master_seed,
                    observable=name + "_mean",
                    value=float(arr.mean()),
                    stderr=err,
                )
            )
    if not rows:
        raise RuntimeError(f"all realizations failed: {notes[0] if notes else 'no realizations'}")
    return rows, notes, n_failed


def cmd_analytic(cfg: RunConfig):
    """Closed-form prediction tables over the sweep grid; no simulation."""
    if cfg.sweep_variable == "E":
        raise ConfigError("sweep.variable: analytic sweeps x, y, or alpha, not E")
    rows, notes = [], []
    if cfg.sweep_variable == "alpha":
        grid = [(cfg.x, alpha) for alpha in cfg.sweep_values]
    else:
        grid = [(x, cfg.alpha) for x in _dilution_grid(cfg)]
    for x, alpha in grid:
        e_fb = cfg.lattice_spec(alpha).e_fb
        overlay, overlay_notes = _overlay_rows(cfg, x, alpha, e_fb)
        for row in overlay:
            row["seed"] = None  # predictions involve no randomness
        rows.extend(overlay)
        for note in overlay_notes:
            rows.append(
                _row(cfg, x=x, alpha=alpha, E=e_fb, observable=note.split(" at ")[0])
            )
        notes.extend(overlay_notes)
    return rows, notes, 0


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _metadata(cfg: RunConfig, command: str, n_failed: int) -> dict:
    return {
        "version": __version__,
        "command": command,
        "run_id": cfg.run_id,
        "failures": n_failed,
        "config": cfg.canonical(),
    }


def write_output(cfg: RunConfig, command: str, rows, n_failed: int) -> Path:
    path = Path(cfg.out_path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    meta = _metadata(cfg, command, n_failed)
    if cfg.out_format == "json":
        # insertion order is the schema order; sorting would scramble rows
        with path.open("w", newline="") as fh:
            json.dump({"metadata": meta, "rows": rows}, fh, indent=1)
            fh.write("\n")
        return path
    with path.open("w", newline="") as fh:
        for key in ("version", "command", "run_id", "failures"):
            fh.write(f"# {key}: {meta[key]}\n")
        fh.write(f"# config: {json.dumps(meta['config'], sort_keys=True, separators=(',', ':'))}\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row[col]) for col in CSV_COLUMNS])
    return path


COMMANDS = {
    "dos": cmd_dos,
    "sigma": cmd_sigma,
    "metric": cmd_metric,
    "analytic": cmd_analytic,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbtransport",
        description="Transport in disordered flat-band chains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "dos": "energy-resolved density of states",
        "sigma": "flat-band conductivity sweep with analytic overlays",
        "metric": "quantum-metric and spread diagnostics per realization",
        "analytic": "closed-form prediction tables, no simulation",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="path to the YAML run configuration")
        p.add_argument(
            "--seed", type=int, default=None, help="override ensemble.master_seed"
        )
        p.add_argument(
            "-q", "--quiet", action="store_true", help="suppress progress messages"
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        rows, notes, n_failed = COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # compute-stage failure
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    try:
        path = write_output(cfg, args.command, rows, n_failed)
    except OSError as err:
        print(f"error: cannot write output: {err}", file=sys.stderr)
        return 1
    for note in notes:
        print(f"note: {note}", file=sys.stderr)
    if not args.quiet:
        print(f"wrote {path} ({len(rows)} rows, run {cfg.run_id})", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
