"""Disorder-averaged experiments.

Runs many independent realizations per parameter-grid point, aggregates
them with standard errors, and post-processes sweeps (power-law fits,
crossover detection). Scheduling is free to reorder realizations because
every realization gets its own counter-derived seed and the reduction is
indexed by (grid point, realization); results are bit-identical for any
worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .exactdiag import eigh_dense, fb_degeneracy, kubo_exact, lorentzian
from .flatband import sigma_fb_from_states
from .lattice import (
    RANDOM,
    STUB,
    SUPERLATTICE,
    LatticeSpec,
    build_hamiltonian,
    build_velocity,
    make_disorder,
)
from .spectral import CPGFParams, dos_cpgf, fb_weight, kubo_cpgf

CPGF = "cpgf"
EXACT_DIAG = "exactdiag"
FB_STATES = "fbstates"
METHODS = (CPGF, EXACT_DIAG, FB_STATES)

SIGMA_FB = "sigma_fb"
DOS = "dos"
FB_METRIC = "fb_metric"
FB_WEIGHT = "fb_weight"
OBSERVABLES = (SIGMA_FB, DOS, FB_METRIC, FB_WEIGHT)

# steepest |d log sigma / d log alpha| below this means the curve has no knee
FLAT_SLOPE = 0.25

# flat-band window half-width for the weight observable, in units of eta
WEIGHT_HALF_WIDTH = 10.0


@dataclass(frozen=True)
class EnsembleSpec:
    """One sweep: lattice family, parameter grid, and realization count.

    The grid is the outer product of x_values with alpha_values (the latter
    only for the stub lattice; None keeps the base alpha). cpgf parameters
    are required for the cpgf and exactdiag methods, which both need a
    broadening; the fbstates method works from the localized states alone.
    """

    base: LatticeSpec
    x_values: tuple[float, ...]
    mode: str = RANDOM
    alpha_values: tuple[float, ...] | None = None
    n_configs: int = 1
    master_seed: int = 0
    method: str = CPGF
    cpgf: CPGFParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "x_values", tuple(float(v) for v in self.x_values))
        if not self.x_values:
            raise ValueError("x grid must be non-empty")
        if self.mode not in (RANDOM, SUPERLATTICE):
            raise ValueError(f"unknown disorder mode {self.mode!r}")
        if self.alpha_values is not None:
            if self.base.kind != STUB:
                raise ValueError("alpha grid applies to the stub lattice only")
            vals = tuple(float(v) for v in self.alpha_values)
            if not vals:
                raise ValueError("alpha grid must be non-empty")
            object.__setattr__(self, "alpha_values", vals)
        if self.n_configs < 1:
            raise ValueError("n_configs must be at least 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method in (CPGF, EXACT_DIAG) and self.cpgf is None:
            raise ValueError(f"method {self.method!r} needs cpgf parameters")

    def grid(self) -> list[tuple[float, float | None]]:
        """Flattened (x, alpha) grid in fixed order, x outermost."""
        alphas = self.alpha_values if self.alpha_values is not None else (None,)
        return [(x, al) for x in self.x_values for al in alphas]


@dataclass(frozen=True)
class Statistic:
    mean: float
    stderr: float
    n: int
    minimum: float
    maximum: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("statistic needs at least one sample")
        if not self.stderr >= 0.0:
            raise ValueError("stderr must be nonnegative")

    @classmethod
    def from_samples(cls, values) -> "Statistic":
        v = np.asarray(values, dtype=float)
        if v.ndim != 1:
            raise ValueError("samples must be scalars")
        n = int(v.size)
        err = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(v.mean()), err, n, float(v.min()), float(v.max()))


@dataclass(frozen=True)
class EnsembleRow:
    """Aggregate at one grid point; stat is None if every realization failed."""

    x: float
    alpha: float | None
    stat: Statistic | None
    n_failed: int
    seeds: tuple[int, ...]


@dataclass(frozen=True)
class EnsembleResult:
    spec: EnsembleSpec
    observable: str
    rows: tuple[EnsembleRow, ...]
    failures: tuple[tuple[int, int, str], ...]  # (grid index, config index, reason)


def realization_seeds(master_seed: int, grid_idx: int, config_idx: int) -> tuple[int, int]:
    """Disorder seed and random-vector seed for one realization.

    Counter-based: a fresh generator keyed on (master, grid point,
    realization) makes the streams injective over the sweep and independent
    of scheduling order. Two 64-bit seeds are cut from four output words.
    """
    words = np.random.SeedSequence(
        master_seed, spawn_key=(grid_idx, config_idx)
    ).generate_state(4)
    return (
        int(words[0]) << 32 | int(words[1]),
        int(words[2]) << 32 | int(words[3]),
    )


def _point_spec(spec: EnsembleSpec, alpha: float | None) -> LatticeSpec:
    return spec.base if alpha is None else replace(spec.base, alpha=alpha)


def _evaluate(observable, method, lat, dis, params, vec_seed) -> float:
    """One realization of one scalar observable."""
    if callable(observable):
        return float(observable(lat, dis, vec_seed))
    if observable == SIGMA_FB:
        if method == FB_STATES:
            return sigma_fb_from_states(lat, dis).metric_route
        ham, sites = build_hamiltonian(lat, dis)
        vel = build_velocity(lat, ham, sites)
        if method == CPGF:
            val, _ = kubo_cpgf(
                ham, vel, lat.e_fb, replace(params, seed=vec_seed), lat.n_cells
            )
            return val
        return kubo_exact(eigh_dense(ham), vel, lat.e_fb, params.eta, lat.n_cells)
    if observable == DOS:
        # scalar reduction: density of states per cell at the FB energy
        if method == FB_STATES:
            raise ValueError("dos needs a spectral method (cpgf or exactdiag)")
        ham, sites = build_hamiltonian(lat, dis)
        if method == CPGF:
            sample = dos_cpgf(
                ham, sites, np.array([lat.e_fb]), replace(params, seed=vec_seed)
            )
            return float(sample.values[0])
        spectrum = eigh_dense(ham)
        dev = spectrum.energies - lat.e_fb
        return float(lorentzian(dev, params.eta).sum() / (math.pi * lat.n_cells))
    if observable == FB_METRIC:
        if method != FB_STATES:
            raise ValueError("fb_metric is defined through the localized states")
        return sigma_fb_from_states(lat, dis).mean_metric
    if observable == FB_WEIGHT:
        if method == FB_STATES:
            return dis.n_surviving / lat.n_cells
        ham, sites = build_hamiltonian(lat, dis)
        if method == EXACT_DIAG:
            return fb_degeneracy(eigh_dense(ham), lat.e_fb) / lat.n_cells
        eta = params.eta
        half = WEIGHT_HALF_WIDTH * eta
        grid = lat.e_fb + np.linspace(-half, half, 41)
        sample = dos_cpgf(ham, sites, grid, replace(params, seed=vec_seed))
        weight, _ = fb_weight(sample, lat.e_fb, eta)
        return float(weight)
    raise ValueError(f"unknown observable {observable!r}")


def _guarded(fn):
    def wrapped(task):
        try:
            return True, fn(task)
        except Exception as err:  # recorded and excluded: sweeps must finish
            return False, f"{type(err).__name__}: {err}"

    return wrapped


def run_ensemble(spec: EnsembleSpec, observable, n_workers: int = 1) -> EnsembleResult:
    """Evaluate an observable over the grid, n_configs realizations each.

    observable is one of the OBSERVABLES names, or a callable
    (lattice, disorder, seed) -> float for custom reductions and tests.
    Failed realizations are excluded from the aggregate but never silently:
    they are counted per row and listed in result.failures with a reason.
    A row whose realizations all failed carries stat=None.
    """
    if not callable(observable):
        if observable not in OBSERVABLES:
            raise ValueError(f"unknown observable {observable!r}")
        # spec-level incompatibilities fail eagerly, not per realization
        if observable == DOS and spec.method == FB_STATES:
            raise ValueError("dos needs a spectral method (cpgf or exactdiag)")
        if observable == FB_METRIC and spec.method != FB_STATES:
            raise ValueError("fb_metric is defined through the localized states")
    grid = spec.grid()
    tasks = []
    for gi, (x, alpha) in enumerate(grid):
        lat = _point_spec(spec, alpha)
        for ci in range(spec.n_configs):
            dis_seed, vec_seed = realization_seeds(spec.master_seed, gi, ci)
            tasks.append((gi, ci, lat, x, dis_seed, vec_seed))

    def work(task):
        _, _, lat, x, dis_seed, vec_seed = task
        dis = make_disorder(lat, x, spec.mode, dis_seed)
        return _evaluate(observable, spec.method, lat, dis, spec.cpgf, vec_seed)

    guarded = _guarded(work)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            outcomes = list(pool.map(guarded, tasks))
    else:
        outcomes = [guarded(t) for t in tasks]

    values: dict[tuple[int, int], float] = {}
    failures: list[tuple[int, int, str]] = []
    for task, (ok, payload) in zip(tasks, outcomes):
        if ok:
            values[task[0], task[1]] = payload
        else:
            failures.append((task[0], task[1], payload))

    rows = []
    for gi, (x, alpha) in enumerate(grid):
        good = [values[gi, ci] for ci in range(spec.n_configs) if (gi, ci) in values]
        seeds = tuple(
            realization_seeds(spec.master_seed, gi, ci)[0]
            for ci in range(spec.n_configs)
        )
        rows.append(
            EnsembleRow(
                x=x,
                alpha=alpha,
                stat=Statistic.from_samples(good) if good else None,
                n_failed=spec.n_configs - len(good),
                seeds=seeds,
            )
        )
    name = observable if isinstance(observable, str) else getattr(
        observable, "__name__", "custom"
    )
    return EnsembleResult(
        spec=spec, observable=name, rows=tuple(rows), failures=tuple(failures)
    )


@dataclass(frozen=True)
class DOSTable:
    """Config-averaged density of states curve at one grid point."""

    x: float
    alpha: float | None
    energies: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n: int
    n_failed: int


def ensemble_dos(spec: EnsembleSpec, energies) -> list[DOSTable]:
    """Config-averaged DOS curve at every grid point.

    With a single realization the quoted error is the internal
    stochastic-trace error; with several it is the spread across
    realizations, which already contains the stochastic part.
    """
    energies = np.asarray(energies, dtype=float)
    if spec.method == FB_STATES:
        raise ValueError("dos needs a spectral method (cpgf or exactdiag)")
    tables = []
    for gi, (x, alpha) in enumerate(spec.grid()):
        lat = _point_spec(spec, alpha)
        curves, internal = [], []
        n_failed = 0
        for ci in range(spec.n_configs):
            dis_seed, vec_seed = realization_seeds(spec.master_seed, gi, ci)
            try:
                dis = make_disorder(lat, x, spec.mode, dis_seed)
                ham, sites = build_hamiltonian(lat, dis)
                if spec.method == CPGF:
                    sample = dos_cpgf(
                        ham, sites, energies, replace(spec.cpgf, seed=vec_seed)
                    )
                    curves.append(sample.values)
                    internal.append(sample.stderr)
                else:
                    dev = energies[:, None] - eigh_dense(ham).energies[None, :]
                    rho = lorentzian(dev, spec.cpgf.eta).sum(axis=1)
                    curves.append(rho / (math.pi * lat.n_cells))
                    internal.append(np.zeros_like(energies))
            except Exception:
                n_failed += 1
        if curves:
            arr = np.stack(curves)
            mean = arr.mean(axis=0)
            if len(curves) > 1:
                err = arr.std(axis=0, ddof=1) / math.sqrt(len(curves))
            else:
                err = np.asarray(internal[0], dtype=float)
        else:
            mean = np.full(energies.size, np.nan)
            err = np.full(energies.size, np.nan)
        tables.append(
            DOSTable(
                x=x,
                alpha=alpha,
                energies=energies,
                mean=mean,
                stderr=err,
                n=len(curves),
                n_failed=n_failed,
            )
        )
    return tables


def fit_power_law(points) -> tuple[float, float, float]:
    """Least-squares power law through (y, sigma) pairs.

    Fits log sigma = log A - beta log y and returns (A, beta, rms residual
    in log space). Needs at least three strictly positive points.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (y, sigma) pairs")
    if pts.shape[0] < 3:
        raise ValueError("power-law fit needs at least three points")
    if not np.all(pts > 0.0):
        raise ValueError("power-law fit needs positive data")
    log_y = np.log(pts[:, 0])
    log_s = np.log(pts[:, 1])
    design = np.column_stack([np.ones_like(log_y), -log_y])
    coef, *_ = np.linalg.lstsq(design, log_s, rcond=None)
    residual = float(np.sqrt(np.mean((design @ coef - log_s) ** 2)))
    return float(np.exp(coef[0])), float(coef[1]), residual


@dataclass(frozen=True)
class CrossoverScan:
    alphas: np.ndarray
    sigmas: np.ndarray
    slopes: np.ndarray  # d log sigma / d log alpha, central differences
    alpha_star: float | None
    found: bool


def crossover_scan(alpha_grid, y: float, sigma_fb) -> CrossoverScan:
    """Locate the knee of sigma_fb(alpha) expected near alpha = sqrt(y).

    The grid must cover at least a decade on each side of sqrt(y), or the
    knee could sit outside the window. alpha_star is the grid point of
    steepest log-log descent; a curve whose steepest slope magnitude stays
    below FLAT_SLOPE is reported as having no crossover.
    """
    alphas = np.asarray(alpha_grid, dtype=float)
    sigmas = np.asarray(sigma_fb, dtype=float)
    if alphas.ndim != 1 or alphas.shape != sigmas.shape:
        raise ValueError("alpha grid and sigma values must be 1d and congruent")
    if alphas.size < 5:
        raise ValueError("crossover scan needs at least five grid points")
    if alphas[0] <= 0 or np.any(np.diff(alphas) <= 0):
        raise ValueError("alpha grid must be positive and increasing")
    if not 0.0 < y < 1.0:
        raise ValueError("y must lie in (0, 1)")
    if np.any(sigmas <= 0):
        raise ValueError("sigma values must be positive")
    root = math.sqrt(y)
    grace = 1.0 + 1e-9
    if alphas[0] > root / 10.0 * grace or alphas[-1] < 10.0 * root / grace:
        raise ValueError("alpha grid must span a decade either side of sqrt(y)")
    log_a = np.log(alphas)
    log_s = np.log(sigmas)
    slopes = np.full(alphas.size, np.nan)
    slopes[1:-1] = (log_s[2:] - log_s[:-2]) / (log_a[2:] - log_a[:-2])
    inner = np.abs(slopes[1:-1])
    k = int(np.argmax(inner)) + 1
    found = bool(inner.max() >= FLAT_SLOPE)
    return CrossoverScan(
        alphas=alphas,
        sigmas=sigmas,
        slopes=slopes,
        alpha_star=float(alphas[k]) if found else None,
        found=found,
    )
