"""Dense diagonalization oracle for small systems.

Everything here is O(dim^2) or worse and guarded by a size cap; the point is
exactness, not speed. Used to validate the Chebyshev engine and the
constructed flat-band states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

DIM_CAP = 6000


@dataclass
class Spectrum:
    energies: np.ndarray   # ascending
    states: np.ndarray     # orthonormal columns

    @property
    def dim(self) -> int:
        return int(self.energies.size)

    @property
    def norm(self) -> float:
        """Spectral norm of H (max |eigenvalue|)."""
        return float(np.abs(self.energies).max())

    def offsets(self, e_fb: float) -> np.ndarray:
        """Energies measured from the flat band."""
        return self.energies - e_fb


def eigh_dense(ham, cap: int = DIM_CAP) -> Spectrum:
    """Full Hermitian eigendecomposition (dense)."""
    n = ham.shape[0]
    if n > cap:
        raise ValueError(f"dimension {n} exceeds the dense cap {cap}")
    dense = ham.toarray() if sp.issparse(ham) else np.asarray(ham)
    energies, states = scipy.linalg.eigh(dense)
    return Spectrum(energies=energies, states=states)


def lorentzian(x: np.ndarray, eta: float) -> np.ndarray:
    return eta / (x * x + eta * eta)


def kubo_exact(spectrum: Spectrum, v, E: float, eta: float, n_cells: int) -> float:
    """Exact Kubo-Greenwood conductivity at energy E, in units of sigma0.

    sigma/sigma0 = (1/N_c) sum_{nm} L_eta(E - E_n) L_eta(E - E_m) |<n|v|m>|^2
    with L the Lorentzian of width eta. The pair sum is exact for the given
    eta; there is no broadening-kernel approximation.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    vd = v.toarray() if sp.issparse(v) else np.asarray(v)
    vmat = spectrum.states.conj().T @ vd @ spectrum.states
    w = lorentzian(E - spectrum.energies, eta)
    return float(np.einsum("n,nm,m->", w, np.abs(vmat) ** 2, w).real / n_cells)


def resolvent_exact(spectrum: Spectrum, E: float, eta: float) -> np.ndarray:
    """Dense Im G(E + i eta) = -sum_l L_eta(E - E_l) |l><l|."""
    w = -lorentzian(E - spectrum.energies, eta)
    return (spectrum.states * w) @ spectrum.states.conj().T


def fb_degeneracy(spectrum: Spectrum, e_fb: float, tol_scale: float = 1e-8) -> int:
    """Number of eigenvalues clustered at the flat-band energy.

    Vacancy disorder preserves the degeneracy exactly, so the clustering
    tolerance only has to absorb round-off.
    """
    tol = tol_scale * max(spectrum.norm, 1.0)
    return int(np.count_nonzero(np.abs(spectrum.energies - e_fb) <= tol))
