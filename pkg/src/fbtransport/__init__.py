"""Transport in disordered flat-band lattices: lattices, spectral engine,
flat-band state machinery, analytic references, ensembles, and a CLI."""

from . import analytic
from .config import ConfigError, RunConfig, load_config
from .ensemble import (
    EnsembleSpec,
    crossover_scan,
    ensemble_dos,
    fit_power_law,
    run_ensemble,
)
from .exactdiag import eigh_dense, fb_degeneracy, kubo_exact
from .flatband import (
    cls_disordered,
    fb_basis,
    quantum_metric,
    sigma_fb_from_states,
)
from .lattice import (
    LatticeSpec,
    build_hamiltonian,
    build_velocity,
    make_disorder,
)
from .spectral import CPGFParams, dos_cpgf, fb_weight, kubo_cpgf

__version__ = "0.1.0"

__all__ = [
    "analytic",
    "ConfigError",
    "RunConfig",
    "load_config",
    "EnsembleSpec",
    "crossover_scan",
    "ensemble_dos",
    "fit_power_law",
    "run_ensemble",
    "eigh_dense",
    "fb_degeneracy",
    "kubo_exact",
    "cls_disordered",
    "fb_basis",
    "quantum_metric",
    "sigma_fb_from_states",
    "LatticeSpec",
    "build_hamiltonian",
    "build_velocity",
    "make_disorder",
    "CPGFParams",
    "dos_cpgf",
    "fb_weight",
    "kubo_cpgf",
    "__version__",
]
