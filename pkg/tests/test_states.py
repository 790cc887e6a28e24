import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qei.errors import ConfigError
from qei.fock import build_truncation, state_density
from qei.states import (KMS, Coherent, Ground, Mixture, SingleParticle, Squeezed, SuperposedPair,
                        export_two_point_csv, ground_two_point, kms_occupation, normal_ordered_two_point,
                        state_components, state_from_dict, state_label, state_to_json, two_point,
                        two_point_data)

L = 2 * np.pi


def field_matrix(trunc, t, x):
    """Phi(t,x) on the truncation, assembled from explicit cylinder mode formulas."""
    out = np.zeros((trunc.D, trunc.D), complex)
    wave = [0, 1, -1, 2, -2, 3, -3, 4]
    for j, w, a in zip(trunc.modes, trunc.omegas, trunc.a):
        n = wave[j]
        p = np.exp(-1j * w * t + 1j * n * x) / np.sqrt(2 * w * L)
        out += p * a + np.conj(p) * a.T
    return out


def fock_normal_ordered(trunc, rho, p, q):
    F1, F2 = field_matrix(trunc, *p), field_matrix(trunc, *q)
    prod = F1 @ F2
    vac = trunc.vacuum
    return np.trace(rho @ prod) - np.vdot(vac, prod @ vac)


STATES = [
    Coherent({0: 0.4 - 0.2j, 2: 0.3j}),
    Squeezed({1: (0.3, 0.7)}),
    SingleParticle(2),
    SuperposedPair(1, 0.3 + 0.1j),
    Mixture((0.25, 0.75), (SingleParticle(0), Coherent({1: 0.5}))),
    KMS(2.0),
]


@pytest.mark.parametrize("state", STATES, ids=lambda s: s.kind)
def test_moment_engine_matches_fock_matrices(state, cat8):
    # only excited modes enter the normal-ordered part, so truncate to those
    if isinstance(state, KMS):
        trunc, sub = build_truncation(cat8, 3, 9), cat8.truncated(3)
    else:
        trunc, sub = build_truncation(cat8, 0, 24, modes=state.modes_used()), cat8
    rho = state_density(trunc, state)
    pts = [((0.0, 0.3), (0.4, 1.1)), ((1.2, 2.0), (-0.5, 0.0)), ((0.7, 5.0), (0.7, 5.0))]
    for p, q in pts:
        ref = fock_normal_ordered(trunc, rho, p, q)
        got = normal_ordered_two_point(state, sub, p, q)
        tol = 1e-6 if isinstance(state, KMS) else 1e-10
        assert abs(got - ref) < tol


def test_ground_two_point_direct_sum(cat8):
    p, q = (0.2, 0.5), (1.0, 2.5)
    ref = 0.0
    for n in [0, 1, -1, 2, -2, 3, -3, 4]:
        w = np.sqrt(1 + n * n)
        ref += np.exp(-1j * w * (p[0] - q[0]) + 1j * n * (p[1] - q[1])) / (2 * w * L)
    assert abs(ground_two_point(cat8, p, q) - ref) < 1e-14
    assert abs(two_point(Ground(), cat8, p, q) - ref) < 1e-14


def test_moments_of_known_states(cat8):
    d = two_point_data(Squeezed({1: (0.5, 0.0)}), cat8)
    assert d.n[1] == pytest.approx(np.sinh(0.5) ** 2)
    assert d.s[1] == pytest.approx(-np.sinh(0.5) * np.cosh(0.5))
    assert d.covariance_min_eigenvalue() >= -1e-14
    k = two_point_data(KMS(1.0), cat8)
    assert np.allclose(k.n, 1 / np.expm1(cat8.omegas))
    assert kms_occupation([1e4], 1.0)[0] == 0.0
    assert two_point_data(Ground(), cat8).is_reference


point = st.tuples(st.floats(-3, 3), st.floats(0, 2 * np.pi))


@given(p=point, q=point)
@settings(max_examples=30, deadline=None)
def test_hermiticity_and_state_independent_commutator(p, q, cat8):
    comm0 = two_point(Ground(), cat8, p, q) - two_point(Ground(), cat8, q, p)
    for state in STATES:
        w_pq = two_point(state, cat8, p, q)
        w_qp = two_point(state, cat8, q, p)
        assert abs(w_pq - np.conj(w_qp)) < 1e-12
        assert abs((w_pq - w_qp) - comm0) < 1e-12


def test_positivity_of_smeared_two_point(cat8):
    rng = np.random.default_rng(3)
    pts = np.column_stack([rng.uniform(-1, 1, 12), rng.uniform(0, L, 12)])
    for state in STATES:
        G = np.array([[two_point(state, cat8, tuple(a), tuple(b)) for b in pts] for a in pts])
        assert np.linalg.eigvalsh(0.5 * (G + G.conj().T)).min() > -1e-12


def test_vectorized_evaluation(cat8):
    t = np.linspace(0, 1, 5)
    vals = two_point(Coherent({1: 0.5}), cat8, (t, 0.3), (0.0, 1.0))
    assert vals.shape == (5,)
    assert vals[2] == pytest.approx(two_point(Coherent({1: 0.5}), cat8, (t[2], 0.3), (0.0, 1.0)))


@pytest.mark.parametrize("state", STATES + [Ground()], ids=lambda s: s.kind)
def test_serialization_roundtrip(state):
    back = state_from_dict(json.loads(state_to_json(state)))
    assert back == state
    assert state_label(back) == state_label(state)


def test_mixture_components_flatten(cat8):
    inner = Mixture((0.5, 0.5), (Ground(), SingleParticle(1)))
    outer = Mixture((0.4, 0.6), (inner, SingleParticle(2)))
    comps = state_components(outer, cat8)
    assert [w for w, _ in comps] == pytest.approx([0.2, 0.2, 0.6])


def test_state_validation(cat8):
    with pytest.raises(ConfigError):
        KMS(0.0)
    with pytest.raises(ConfigError):
        Squeezed({0: (-1.0, 0.0)})
    with pytest.raises(ConfigError):
        Mixture((0.5, 0.6), (Ground(), Ground()))
    with pytest.raises(ConfigError):
        two_point_data(SingleParticle(8), cat8)
    with pytest.raises(ConfigError):
        state_from_dict({"kind": "weird"})
    with pytest.raises(ConfigError):
        state_from_dict({"kind": "coherent", "alpha": {"0": [1, 2, 3]}})
    with pytest.raises(ConfigError):
        state_from_dict({"kind": "kms"})


def test_two_point_csv(tmp_path):
    out = tmp_path / "w.csv"
    export_two_point_csv([(0.0, 0.0, 1.0, 1.0, 0.5 - 0.25j)], out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,x,tp,xp,re,im"
    assert lines[1].split(",")[-2:] == ["0.5", "-0.25"]
