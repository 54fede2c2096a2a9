"""Constructed flat-band states: residuals, overlaps, metric, spread, sigma."""

import dataclasses
import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from fbtransport.flatband import (
    ANALYTIC_SC,
    ANALYTIC_SL,
    FINITE_DIFFERENCE,
    FBState,
    cls_disordered,
    eigenstate_residual,
    fb_basis,
    metric_sawtooth_segment,
    metric_stub_segment,
    quantum_metric,
    sigma_fb_from_states,
    spread,
)
from fbtransport.lattice import (
    RANDOM,
    SAWTOOTH,
    STUB,
    SUPERLATTICE,
    DisorderRealization,
    LatticeSpec,
    build_hamiltonian,
    make_disorder,
    _site_table,
)


def test_sawtooth_segment_normalization():
    # d = 4 at phi = 0: norm sqrt(2(d+1)) = sqrt(10), interior +-sqrt(2)/sqrt(10)
    spec = LatticeSpec(SAWTOOTH, 12)
    dis = DisorderRealization(x=0.75, mode=RANDOM, seed=0,
                              surviving_b=np.array([0, 4, 8]))
    st = cls_disordered(spec, dis, 0, phi=0.0)
    assert st.length == 4
    assert np.linalg.norm(st.amplitudes) == pytest.approx(1.0, abs=1e-12)
    interior = st.amplitudes[1:-1]
    assert np.allclose(np.abs(interior), np.sqrt(2.0) / np.sqrt(10.0))
    assert np.allclose(np.sign(interior.real), [-1, 1, -1, 1])
    # boundary B amplitudes 1/sqrt(10) and -(-1)^4/sqrt(10)
    assert st.amplitudes[0] == pytest.approx(1.0 / np.sqrt(10.0))
    assert st.amplitudes[-1] == pytest.approx(-1.0 / np.sqrt(10.0))


def test_stub_shortest_segment_is_clean_cls():
    # m = 1: (1, 1, -alpha)/sqrt(alpha^2+2) on (B_i, B_{i+1}, C_i)
    alpha = 1.6
    spec = LatticeSpec(STUB, 6, alpha=alpha)
    dis = make_disorder(spec, 0.0, RANDOM, 0)
    st = cls_disordered(spec, dis, 2, phi=0.0)
    sites = _site_table(spec, dis)
    norm = np.sqrt(alpha**2 + 2.0)
    expect = {
        sites.index_of("B", 2): 1.0 / norm,
        sites.index_of("B", 3): 1.0 / norm,
        sites.index_of("C", 2): -alpha / norm,
    }
    assert st.length == 1
    for i, amp in zip(st.site_indices, st.amplitudes):
        assert amp == pytest.approx(expect[int(i)], abs=1e-14)


def test_too_few_survivors_raises():
    spec = LatticeSpec(SAWTOOTH, 20)
    dis = DisorderRealization(x=0.95, mode=RANDOM, seed=0,
                              surviving_b=np.array([7]))
    with pytest.raises(ValueError):
        cls_disordered(spec, dis, 0)


@pytest.mark.parametrize("kind,alpha", [(SAWTOOTH, None), (STUB, 0.9)])
def test_states_are_exact_eigenstates(kind, alpha):
    n_cells = 48
    for seed in range(10):
        for phi in (0.0, 2.0 * np.pi / n_cells):
            spec = LatticeSpec(kind, n_cells, alpha=alpha, phi=phi)
            dis = make_disorder(spec, 0.7, RANDOM, seed)
            ham, _ = build_hamiltonian(spec, dis)
            hnorm = np.abs(ham).max() * ham.shape[0]  # cheap upper bound
            for j in range(dis.n_surviving):
                st = cls_disordered(spec, dis, j, phi=phi)
                assert eigenstate_residual(st, ham, spec.e_fb) <= 1e-12 * hnorm
                assert np.linalg.norm(st.amplitudes) == pytest.approx(1.0, abs=1e-12)


def test_basis_gram_structure():
    spec = LatticeSpec(SAWTOOTH, 60)
    dis = make_disorder(spec, 0.8, RANDOM, 5)
    basis = fb_basis(spec, dis)
    n_b = dis.n_surviving
    assert len(basis.states) == n_b
    gram = basis.gram.toarray()
    assert np.allclose(np.diag(gram), 1.0, atol=1e-12)
    for j in range(n_b):
        for k in range(n_b):
            ring_dist = min((k - j) % n_b, (j - k) % n_b)
            if ring_dist > 1:
                assert gram[j, k] == 0.0
    # linear independence of the full set
    assert np.linalg.matrix_rank(gram, tol=1e-10) == n_b


def test_adjacent_overlap_values():
    # d1 = d2 = 4 gives 1/(2 sqrt(5*5)) = 0.1
    spec = LatticeSpec(SAWTOOTH, 12)
    dis = DisorderRealization(x=0.75, mode=RANDOM, seed=0,
                              surviving_b=np.array([0, 4, 8]))
    basis = fb_basis(spec, dis)
    assert abs(basis.gram[0, 1]) == pytest.approx(0.1, abs=1e-12)
    # superlattice y = 0.5 (d = 2 everywhere): overlap 1/6
    spec2 = LatticeSpec(SAWTOOTH, 20)
    dis2 = make_disorder(spec2, 0.5, SUPERLATTICE, 2)
    b2 = fb_basis(spec2, dis2)
    off = (b2.gram - sp.identity(10, format="csr")).tocoo()
    assert np.allclose(np.abs(off.data), 1.0 / 6.0, atol=1e-12)


def test_mean_adjacent_overlap_small_when_dilute():
    # mean adjacent overlap is of order y/2 in the dilute limit: measured
    # 0.73 y at y = 0.1 and 0.89 y at y = 0.05 over large random rings
    spec = LatticeSpec(SAWTOOTH, 2000)
    for y in (0.05, 0.1):
        for seed in (1, 2, 3):
            dis = make_disorder(spec, 1.0 - y, RANDOM, seed)
            basis = fb_basis(spec, dis)
            off = (basis.gram - sp.identity(dis.n_surviving, format="csr")).tocoo()
            mean = np.abs(off.data).mean()
            assert y / 2.0 <= mean <= 2.0 * y


@pytest.mark.parametrize("d", [1, 2, 3, 7, 30])
def test_fd_metric_matches_closed_form_sawtooth(d):
    spec = LatticeSpec(SAWTOOTH, d + 8)
    dis = DisorderRealization(x=0.0, mode=RANDOM, seed=0,
                              surviving_b=np.array([0, d]))
    fam = lambda p: cls_disordered(spec, dis, 0, p)
    fd = quantum_metric(fam, 0.0, FINITE_DIFFERENCE)
    assert fd == pytest.approx(metric_sawtooth_segment(d), rel=1e-6)


@pytest.mark.parametrize("m,alpha", [(1, 1.0), (2, 1.0), (3, 0.5), (5, 2.0), (40, 0.3)])
def test_fd_metric_matches_closed_form_stub(m, alpha):
    spec = LatticeSpec(STUB, m + 8, alpha=alpha)
    dis = DisorderRealization(x=0.0, mode=RANDOM, seed=0,
                              surviving_b=np.array([0, m]))
    fam = lambda p: cls_disordered(spec, dis, 0, p)
    fd = quantum_metric(fam, 0.2, FINITE_DIFFERENCE)
    assert fd == pytest.approx(metric_stub_segment(m, alpha), rel=1e-6)


def test_metric_closed_form_values():
    assert metric_sawtooth_segment(1) == pytest.approx(3.0 / 16.0)
    assert metric_sawtooth_segment(2) == pytest.approx(5.0 / 9.0)
    assert metric_stub_segment(1, 1.0) == pytest.approx(1.0 / 6.0)
    assert metric_stub_segment(2, 1.0) == pytest.approx(0.625)
    # long-segment asymptote m^2/12; the O(1/m) correction is still 2-4%
    # at m = 100 (1.97% sawtooth, 3.9% stub at alpha = 1)
    assert metric_sawtooth_segment(100) == pytest.approx(100**2 / 12.0, rel=0.025)
    assert metric_stub_segment(100, 1.0) == pytest.approx(100**2 / 12.0, rel=0.045)


def test_fd_metric_gauge_invariant():
    spec = LatticeSpec(SAWTOOTH, 30)
    dis = make_disorder(spec, 0.7, RANDOM, 9)
    fam = lambda p: cls_disordered(spec, dis, 0, p)
    g0 = quantum_metric(fam, 0.0)
    shifted = lambda p: dataclasses.replace(
        fam(p), amplitudes=fam(p).amplitudes * np.exp(1.234j))
    assert abs(quantum_metric(shifted, 0.0) - g0) <= 1e-8


def test_fd_metric_rejects_rough_family():
    spec = LatticeSpec(SAWTOOTH, 30)
    dis = make_disorder(spec, 0.7, RANDOM, 9)
    # |phi|^(1/2) dependence has no quadratic overlap expansion at 0
    rough = lambda p: cls_disordered(spec, dis, 0,
                                     np.sign(p) * np.sqrt(abs(p)))
    with pytest.raises(ArithmeticError):
        quantum_metric(rough, 0.0)


def test_metric_method_validation():
    spec = LatticeSpec(SAWTOOTH, 30)
    dis = make_disorder(spec, 0.5, RANDOM, 1)
    fam = lambda p: cls_disordered(spec, dis, 0, p)
    with pytest.raises(ValueError):
        quantum_metric(fam, 0.0, ANALYTIC_SL)   # wrong lattice
    with pytest.raises(ValueError):
        quantum_metric(fam, 0.0, "simpson")


def test_spread_hand_examples():
    spec = LatticeSpec(SAWTOOTH, 8)
    dis = make_disorder(spec, 0.0, RANDOM, 0)
    sites = _site_table(spec, dis)
    two_site = FBState(
        kind=SAWTOOTH, phi=0.0, n_sites=sites.n_sites,
        site_indices=np.array([sites.index_of("A", 0), sites.index_of("A", 1)]),
        amplitudes=np.array([1.0, 1.0]) / np.sqrt(2.0),
        left_cell=0, right_cell=1, length=1)
    assert spread(two_site, sites) == pytest.approx(0.5)
    point = dataclasses.replace(
        two_site, site_indices=np.array([sites.index_of("A", 3)]),
        amplitudes=np.array([1.0 + 0.0j]), left_cell=3, right_cell=3)
    assert spread(point, sites) == 0.0


def test_spread_equals_metric_for_segment_states():
    spec = LatticeSpec(SAWTOOTH, 210)
    dis = DisorderRealization(x=0.0, mode=RANDOM, seed=0,
                              surviving_b=np.array([0, 100]))
    sites = _site_table(spec, dis)
    st = cls_disordered(spec, dis, 0)
    l = spread(st, sites)
    assert l * l == pytest.approx(metric_sawtooth_segment(100), rel=0.01)


def test_spread_rejects_wrapped_state():
    spec = LatticeSpec(SAWTOOTH, 40)
    dis = DisorderRealization(x=0.95, mode=RANDOM, seed=0,
                              surviving_b=np.array([0, 5]))
    sites = _site_table(spec, dis)
    long_segment = cls_disordered(spec, dis, 1)   # wraps 35 of 40 cells
    with pytest.raises(ValueError):
        spread(long_segment, sites)


def test_sigma_routes_agree_per_realization():
    for kind, alpha, x in [(SAWTOOTH, None, 0.9), (STUB, 1.2, 0.85)]:
        spec = LatticeSpec(kind, 400, alpha=alpha)
        dis = make_disorder(spec, x, RANDOM, 21)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            r = sigma_fb_from_states(spec, dis)
        assert r.metric_route == pytest.approx(r.spread_route, rel=0.01)
        assert r.y == pytest.approx(dis.n_surviving / 400)


def test_sigma_warns_in_overlap_breakdown_regime():
    spec = LatticeSpec(STUB, 200, alpha=0.1)   # alpha far below sqrt(y)
    dis = make_disorder(spec, 0.9, RANDOM, 2)
    with pytest.warns(UserWarning):
        sigma_fb_from_states(spec, dis)


def test_stub_sublattice_weight_ratio():
    # B weight over C weight is exactly 2/(m alpha^2)
    alpha = 1.7
    spec = LatticeSpec(STUB, 60, alpha=alpha)
    dis = make_disorder(spec, 0.8, RANDOM, 5)
    sites = _site_table(spec, dis)
    for j in range(dis.n_surviving):
        st = cls_disordered(spec, dis, j)
        w = np.abs(st.amplitudes) ** 2
        on_b = np.array([sites.sublattice[i] == "B" for i in st.site_indices])
        ratio = w[on_b].sum() / w[~on_b].sum()
        assert ratio == pytest.approx(2.0 / (st.length * alpha**2), rel=1e-12)
