"""Tight-binding lattices on a flux-threaded ring.

Two one-dimensional lattices with a flat band:

* sawtooth chain: backbone A sites with hopping t, apex B sites coupled to
  the two adjacent A sites by t' = sqrt(2) t; flat band at E = 2t.
* stub lattice: alternating A-C backbone (hopping t) with a dangling B site
  on every A (hopping t' = alpha t); flat band at E = 0.

Vacancy disorder removes B sites. The ring carries a flux phase phi that
enters every bond as a Peierls factor exp(i phi d / a) with d the bond
displacement, so the velocity operator is the flux derivative of H.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

SAWTOOTH = "sawtooth"
STUB = "stub"

RANDOM = "random"
SUPERLATTICE = "superlattice"

# flat-band energies in units of t
FB_ENERGY = {SAWTOOTH: 2.0, STUB: 0.0}


@dataclass(frozen=True)
class LatticeSpec:
    """Geometry and couplings; the single source of geometric truth.

    alpha is t'/t. For the sawtooth chain the flat band only exists at
    alpha = sqrt(2), so it is forced there; for the stub lattice it is free.
    """

    kind: str
    n_cells: int
    t: float = 1.0
    alpha: float | None = None
    a: float = 1.0
    phi: float = 0.0

    def __post_init__(self):
        if self.kind not in (SAWTOOTH, STUB):
            raise ValueError(f"unknown lattice kind {self.kind!r}")
        if self.n_cells < 3:
            raise ValueError("n_cells must be at least 3")
        if self.t <= 0 or self.a <= 0:
            raise ValueError("t and a must be positive")
        if self.kind == SAWTOOTH:
            if self.alpha is not None and not math.isclose(
                self.alpha, math.sqrt(2.0), rel_tol=1e-12
            ):
                raise ValueError("sawtooth flat band requires alpha = sqrt(2)")
            object.__setattr__(self, "alpha", math.sqrt(2.0))
        elif self.alpha is None:
            raise ValueError("stub lattice needs alpha")

    @property
    def e_fb(self) -> float:
        return FB_ENERGY[self.kind] * self.t

    @property
    def length(self) -> float:
        return self.n_cells * self.a


@dataclass(frozen=True)
class DisorderRealization:
    """Which B sites survive, and how the choice was made."""

    x: float
    mode: str
    seed: int
    surviving_b: np.ndarray  # sorted cell indices

    def __post_init__(self):
        s = np.asarray(self.surviving_b, dtype=np.int64)
        if s.size and (np.any(np.diff(s) <= 0) or s[0] < 0):
            raise ValueError("surviving_b must be strictly increasing and nonnegative")
        object.__setattr__(self, "surviving_b", s)

    @property
    def n_surviving(self) -> int:
        return int(self.surviving_b.size)


@dataclass
class SiteTable:
    """Per-site records plus dense-index lookups.

    Positions are in units of a. A sites sit at cell anchors i, bridging C
    sites at bond midpoints i + 1/2. B sites sit at their anchor's position:
    for the stub that makes the dangling bond current-silent, and for the
    sawtooth it is the embedding under which the flat-band states carry the
    textbook quantum metric (the bond-midpoint alternative does not).
    """

    n_cells: int
    a: float
    cell: np.ndarray        # cell index per site
    sublattice: np.ndarray  # 'A', 'B' or 'C' per site
    position: np.ndarray    # x in units of a

    @property
    def n_sites(self) -> int:
        return int(self.cell.size)

    def index_of(self, sub: str, cell: int) -> int:
        """Dense index of a site, -1 if absent (removed B)."""
        hits = np.flatnonzero((self.sublattice == sub) & (self.cell == cell))
        return int(hits[0]) if hits.size else -1

    def indices_of(self, sub: str) -> np.ndarray:
        return np.flatnonzero(self.sublattice == sub)


def make_disorder(spec: LatticeSpec, x: float, mode: str, seed: int) -> DisorderRealization:
    """Choose which B cells survive at vacancy density x.

    Random mode samples round(x * N_c) removed cells uniformly without
    replacement. Superlattice mode spaces the survivors as evenly as integer
    arithmetic permits (consecutive gaps differ by at most one cell) with a
    seed-dependent rotation.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if mode not in (RANDOM, SUPERLATTICE):
        raise ValueError(f"unknown disorder mode {mode!r}")
    n_c = spec.n_cells
    n_removed = int(math.floor(x * n_c + 0.5))
    n_surv = n_c - n_removed
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if mode == RANDOM:
        removed = rng.choice(n_c, size=n_removed, replace=False)
        keep = np.ones(n_c, dtype=bool)
        keep[removed] = False
        surviving = np.flatnonzero(keep)
    else:
        if n_surv == 0:
            surviving = np.empty(0, dtype=np.int64)
        else:
            offset = int(rng.integers(n_c))
            # floor(i * N_c / n_surv) + rotation: gaps are floor or ceil of 1/y
            surviving = np.sort(
                (np.arange(n_surv, dtype=np.int64) * n_c // n_surv + offset) % n_c
            )
    return DisorderRealization(x=x, mode=mode, seed=seed, surviving_b=surviving)


def _site_table(spec: LatticeSpec, dis: DisorderRealization) -> SiteTable:
    n_c = spec.n_cells
    cells = [np.arange(n_c)]
    subs = [np.full(n_c, "A")]
    pos = [np.arange(n_c, dtype=float)]
    if spec.kind == STUB:
        cells.append(np.arange(n_c))
        subs.append(np.full(n_c, "C"))
        pos.append(np.arange(n_c) + 0.5)
    cells.append(dis.surviving_b)
    subs.append(np.full(dis.n_surviving, "B"))
    pos.append(dis.surviving_b.astype(float))
    return SiteTable(
        n_cells=n_c,
        a=spec.a,
        cell=np.concatenate(cells),
        sublattice=np.concatenate(subs),
        position=np.concatenate(pos),
    )


def _min_image(d: np.ndarray, n_cells: int) -> np.ndarray:
    return d - n_cells * np.round(d / n_cells)


def _bond_list(spec: LatticeSpec, dis: DisorderRealization, sites: SiteTable):
    """Directed bonds (upper half): row, col, hopping magnitude, displacement."""
    n_c = spec.n_cells
    rows, cols, hops = [], [], []

    if spec.kind == SAWTOOTH:
        for c in range(n_c):
            rows.append(c)
            cols.append((c + 1) % n_c)
            hops.append(spec.t)
        tp = spec.alpha * spec.t
        b_off = n_c
        for k, c in enumerate(dis.surviving_b):
            rows.append(b_off + k)
            cols.append(c)
            hops.append(tp)
            rows.append(b_off + k)
            cols.append((c + 1) % n_c)
            hops.append(tp)
    else:
        c_off = n_c
        for c in range(n_c):
            rows.append(c_off + c)
            cols.append(c)
            hops.append(spec.t)
            rows.append(c_off + c)
            cols.append((c + 1) % n_c)
            hops.append(spec.t)
        tp = spec.alpha * spec.t
        b_off = 2 * n_c
        for k, c in enumerate(dis.surviving_b):
            rows.append(b_off + k)
            cols.append(c)
            hops.append(tp)

    rows = np.asarray(rows)
    cols = np.asarray(cols)
    hops = np.asarray(hops, dtype=float)
    d = _min_image(sites.position[rows] - sites.position[cols], n_c)
    return rows, cols, hops, d


def build_hamiltonian(
    spec: LatticeSpec, dis: DisorderRealization
) -> tuple[sp.csr_matrix, SiteTable]:
    """Assemble H = -sum t_ij exp(i phi d_ij / a) |i><j| + h.c. on the ring."""
    if dis.n_surviving and dis.surviving_b[-1] >= spec.n_cells:
        raise ValueError("disorder realization does not match spec.n_cells")
    sites = _site_table(spec, dis)
    rows, cols, hops, d = _bond_list(spec, dis, sites)
    vals = -hops * np.exp(1j * spec.phi * d)
    n = sites.n_sites
    upper = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
    h = (upper + upper.conj().T).tocsr()
    h.sum_duplicates()
    return h, sites


def build_velocity(
    spec: LatticeSpec,
    ham: sp.csr_matrix,
    sites: SiteTable,
    method: str = "commutator",
) -> sp.csr_matrix:
    """Velocity operator v = -(i/hbar)[x, H], in units of a t / hbar.

    commutator multiplies each stored H entry by -(i) times its bond
    displacement (positions from the site table, minimum image on the ring).
    fluxderivative reassembles v = -(a/hbar) dH/dphi from the bond list,
    differentiating each Peierls factor analytically. The two are one
    operator identity and agree to round-off; keeping both paths makes the
    identity testable.
    """
    if method == "commutator":
        coo = ham.tocoo()
        d = _min_image(
            sites.position[coo.row] - sites.position[coo.col], sites.n_cells
        )
        v = sp.coo_matrix((-1j * d * coo.data, (coo.row, coo.col)), shape=ham.shape)
        v = v.tocsr()
        v.eliminate_zeros()
        return v
    if method == "fluxderivative":
        dis = _realization_of(sites)
        rows, cols, hops, d = _bond_list(spec, dis, sites)
        # d/dphi of -t exp(i phi d) is -i d t exp(i phi d); v flips the sign
        dvals = 1j * d * hops * np.exp(1j * spec.phi * d)
        n = sites.n_sites
        upper = sp.coo_matrix((dvals, (rows, cols)), shape=(n, n))
        v = (upper + upper.conj().T).tocsr()
        v.eliminate_zeros()
        return v
    raise ValueError(f"unknown velocity method {method!r}")


def _realization_of(sites: SiteTable) -> DisorderRealization:
    """Reconstruct the survivor list encoded in a site table."""
    b_cells = np.sort(sites.cell[sites.sublattice == "B"])
    x = 1.0 - b_cells.size / sites.n_cells
    return DisorderRealization(x=x, mode=RANDOM, seed=0, surviving_b=b_cells)
