import json

import numpy as np
import pytest

from qei.errors import ConfigError
from qei.modes import StaticGeometry, build_cylinder_catalog, build_sl_catalog
from qei.quadrature import BumpWindow
from qei.qwei import (Q_of, SpectralMeasure, atom_tail_bound, bochner_checks, check_monotone_left_continuous,
                      fft_Q, gamma_sigma_estimate, integrated_Q, integrated_Q_by_grid, integrated_spectrum,
                      merge_atoms, pullback_energy_spectrum, q_bound, run_qwei_campaign, verify_static_qwei)
from qei.states import KMS, Coherent, Mixture, SingleParticle, Squeezed, SuperposedPair

L = 2 * np.pi


def q_oracle(spec, g, umax, panel=1.0, order=24):
    """int |ghat|^2 Q du on Gauss-Legendre panels split at the atoms, ghat by direct quadrature."""
    edges = np.unique(np.concatenate([spec.zeta[spec.zeta < umax], np.arange(-umax, umax + panel, panel)]))
    x, w = np.polynomial.legendre.leggauss(order)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    u = (0.5 * (hi + lo))[:, None] + half[:, None] * x
    uf = u.ravel()
    gh = np.concatenate([g.ft_quadrature(c)[0] for c in np.array_split(uf, max(1, uf.size // 500))])
    vals = (np.abs(gh) ** 2).reshape(u.shape) * Q_of(spec, u)
    return float(np.sum((vals @ w) * half))


@pytest.fixture(scope="module")
def cat16():
    return build_cylinder_catalog(L, 1.0, 16)


def test_cylinder_Q_direct_sum(cat16):
    spec = pullback_energy_spectrum(cat16, 0.7)
    for u in (0.5, 1.0, 1.0 + 1e-12, 2.3, 8.0):
        ref = sum(np.pi * w / L for w in cat16.omegas if w < u) / (2 * np.pi**2)
        assert Q_of(spec, u) == pytest.approx(ref, rel=1e-14, abs=0)
    # degenerate +-n atoms are merged
    assert spec.size == 9
    assert spec.weights[1] == pytest.approx(2 * np.pi * np.sqrt(2) / L)


def test_integrated_Q_two_routes_on_curved_metric():
    geom = StaticGeometry.from_functions(L, 1.0, 256, lambda x: 1 + 0.3 * np.cos(x), lambda x: 1 + 0.2 * np.sin(2 * x))
    cat = build_sl_catalog(geom, 6)
    u = np.array([0.9, 1.2, 1.5, 2.5, 4.0])
    assert np.allclose(integrated_Q(cat, u), integrated_Q_by_grid(cat, u), rtol=1e-12, atol=1e-15)


def test_integrated_Q_cylinder_closed_form(cat16):
    u = 3.5
    ref = sum(w for w in cat16.omegas if w < u) / (2 * np.pi)
    assert integrated_Q(cat16, u) == pytest.approx(ref, rel=1e-14)


@pytest.mark.parametrize("g", [BumpWindow(0.5, 2.5, 1.3), BumpWindow(0.0, 0.5, 1.0, 6.0)], ids=["wide", "sharp"])
def test_q_bound_against_direct_integral(cat16, g):
    spec = pullback_energy_spectrum(cat16, 0.3)
    qb = q_bound(spec, g)
    assert qb.value == pytest.approx(q_oracle(spec, g, 300 / g.width), rel=1e-12)
    assert qb.quadrature_error < 1e-12


def test_fft_oracle_agrees_between_atoms(cat256):
    cat = cat256.truncated(11)
    spec = pullback_energy_spectrum(cat, 1.0)
    mids = 0.5 * (spec.zeta[1:] + spec.zeta[:-1])
    assert np.max(np.abs(fft_Q(cat, 1.0, mids) - Q_of(spec, mids))) < 1e-8


def test_kms_reference_has_negative_frequency_atoms(cat16):
    spec = pullback_energy_spectrum(cat16, 0.0, KMS(1.0))
    assert spec.zeta[0] < 0
    assert Q_of(spec, 0.0) > 0
    with pytest.raises(ConfigError):
        pullback_energy_spectrum(cat16, 0.0, SingleParticle(0))


def test_monotone_left_continuous(cat16):
    spec = pullback_energy_spectrum(cat16, 0.0)
    assert check_monotone_left_continuous(spec)
    bad = SpectralMeasure(np.array([1.0, 2.0]), np.array([1.0, -0.5]))
    assert not check_monotone_left_continuous(bad)


def test_bochner_and_growth(cat256):
    rep = bochner_checks(integrated_spectrum(cat256))
    assert rep.passed
    assert 1.9 < rep.growth_exponent < 2.1
    bad = bochner_checks(SpectralMeasure(np.array([1.0, 3.0]), np.array([1.0, -2.0])))
    assert not bad.atoms_nonnegative


def test_merge_atoms():
    m = merge_atoms([2.0, 1.0, 1.0 + 1e-12, 3.0], [1.0, 0.5, 0.25, 2.0])
    assert m.zeta.tolist() == pytest.approx([1.0, 2.0, 3.0])
    assert m.weights.tolist() == [0.75, 1.0, 2.0]
    with pytest.raises(ValueError):
        SpectralMeasure(np.array([2.0, 1.0]), np.array([1.0, 1.0]))


def test_atom_tail_bound_decreases_with_cutoff():
    g = BumpWindow(0.0, 1.0)
    tails = [atom_tail_bound(build_cylinder_catalog(L, 1.0, J), g, 0.0) for J in (16, 64, 256)]
    assert tails[0] > tails[1] > tails[2] > 0
    # equals q of the full spectrum minus q of the truncated one
    big = build_cylinder_catalog(L, 1.0, 1201)
    small = build_cylinder_catalog(L, 1.0, 65)
    diff = q_bound(pullback_energy_spectrum(big, 0.0), g).value - q_bound(pullback_energy_spectrum(small, 0.0), g).value
    assert atom_tail_bound(small, g, 0.0) == pytest.approx(diff, rel=1e-6)


STATES = [SuperposedPair(1, 0.15), SuperposedPair(3, 0.2 + 0.05j), Squeezed({1: (0.3, 0.0)}),
          Coherent({2: 0.5}), Mixture((0.5, 0.5), (SuperposedPair(1, 0.15), SingleParticle(2)))]


@pytest.mark.parametrize("state", STATES, ids=lambda s: s.kind)
def test_margins_nonnegative(state, cat256):
    for g in (BumpWindow(0.0, 0.5), BumpWindow(0.3, 2.0, 1.0, 6.0)):
        m = verify_static_qwei(state, cat256, g, 0.4)
        assert m.passed
        assert m.margin >= 0


def test_coherent_smeared_energy_is_positive(cat256):
    m = verify_static_qwei(Coherent({1: 0.7 - 0.2j}), cat256, BumpWindow(0.1, 1.0), 2.0)
    assert m.lhs > 0


def test_pair_state_probes_negative_energy(cat256):
    m = verify_static_qwei(SuperposedPair(1, 0.15), cat256, BumpWindow(0.0, 0.5), 0.0)
    assert m.lhs < 0 < m.margin


def test_gamma_estimate_routes_and_limits(cat256):
    g = BumpWindow(0.0, 1.0)
    ground = gamma_sigma_estimate(cat256.truncated(64), g)
    assert ground.route_discrepancy < 1e-10
    assert ground.bound == 0.0 and ground.value < 1e-12
    assert all(b <= a + 1e-15 for a, b in zip(ground.trace, ground.trace[1:]))
    kms = gamma_sigma_estimate(cat256.truncated(64), g, reference=KMS(1.0))
    assert kms.route_discrepancy < 1e-10
    assert kms.value == pytest.approx(kms.bound, rel=1e-10)
    with pytest.raises(ConfigError):
        gamma_sigma_estimate(cat256, g, lambdas=[0.5, 1.0])


def test_campaign_report(cat16, tmp_path):
    rep = run_qwei_campaign(cat16, [SuperposedPair(1, 0.15)], [BumpWindow(0.0, 1.0)], [0.0, 1.0],
                            gamma_window=BumpWindow(0.0, 1.0), threads=2)
    d = json.loads(rep.to_json())
    assert d["summary"]["triples"] == 2
    assert rep.passed
    rep.write_Q_csv(tmp_path / "Q.csv")
    rep.write_margins_csv(tmp_path / "m.csv")
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 3
