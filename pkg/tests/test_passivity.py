import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from qei.errors import CertificationError, ConfigError
from qei.fock import build_truncation, smeared_field, state_vector
from qei.passivity import (CyclicProcess, UnitaryWord, default_family, delta_fd_check, delta_of,
                           evolve_cyclic, iter_random_words, kms_state, kron_exp, passive_search,
                           passivity_functional, passivity_values_diagonal, random_generator,
                           random_process, random_words, transition_generator, work_done)
from qei.states import Coherent, SingleParticle


@pytest.fixture(scope="module")
def small(cat8):
    return build_truncation(cat8, 2, 5)


@pytest.fixture(scope="module")
def qubitish(cat8):
    return build_truncation(cat8, 1, 3)


def direct_functional(rho, H, U):
    return float(np.real(np.trace(rho @ U.conj().T @ H @ U) - np.trace(rho @ H)))


def test_delta_is_commutator(small):
    rng = np.random.default_rng(0)
    A = rng.normal(size=(small.D, small.D)) + 1j * rng.normal(size=(small.D, small.D))
    assert np.allclose(delta_of(small, A), 1j * (small.H @ A - A @ small.H))
    assert delta_fd_check(small, A) < 1e-10


def test_functional_matches_energy_difference(small):
    rng = np.random.default_rng(1)
    psi = state_vector(small, Coherent({0: 0.3, 1: -0.2j}))
    rho = np.outer(psi, psi.conj())
    for word in random_words(small, 10, seed=4):
        assert passivity_functional(psi, small, word) == pytest.approx(
            direct_functional(rho, small.H, word.matrix), abs=1e-12)


def test_ground_and_kms_are_passive(small):
    rho_kms, proxy = kms_state(small, 3.0)
    vac = small.vacuum
    for word in iter_random_words(small, 150, seed=7):
        assert passivity_functional(vac, small, word) >= -1e-12
        assert passivity_functional(rho_kms, small, word) >= -1e-12


def test_diagonal_fast_path(small):
    rho, _ = kms_state(small, 2.0)
    probs = np.stack([np.real(np.diag(rho)), np.real(np.diag(np.outer(small.vacuum, small.vacuum)))])
    for word in random_words(small, 5, seed=2):
        fast = passivity_values_diagonal(probs, small, word)
        assert fast[0] == pytest.approx(passivity_functional(rho, small, word), abs=1e-12)
        assert fast[1] == pytest.approx(passivity_functional(small.vacuum, small, word), abs=1e-12)


@given(s=st.floats(-3, 3))
@settings(max_examples=15, deadline=None)
def test_stationary_state_invariant_under_time_translation(s, small):
    rho, _ = kms_state(small, 2.0)
    word = random_words(small, 1, seed=11)[0]
    assert passivity_functional(rho, small, word.conjugated(small, s)) == pytest.approx(
        passivity_functional(rho, small, word), abs=1e-10)


def test_displacement_energy(small, cat8):
    # exp(i Phi(z)) displaces the vacuum by -z; the energy gain is sum omega |z|^2
    z = np.array([0.5, 0.0])
    U = scipy.linalg.expm(1j * smeared_field(build_truncation(cat8, 2, 20), z))
    big = build_truncation(cat8, 2, 20)
    assert passivity_functional(big.vacuum, big, U) == pytest.approx(0.25, abs=1e-10)


def test_swap_extracts_one_quantum(qubitish):
    psi = state_vector(qubitish, SingleParticle(0))
    U = UnitaryWord([np.pi / 2 * transition_generator(qubitish, 0, 1)])
    assert passivity_functional(psi, qubitish, U) == pytest.approx(-1.0, abs=1e-14)


def test_kron_exp_matches_dense_exponential(small):
    rng = np.random.default_rng(5)
    for _ in range(20):
        A, kind, F = random_generator(small, rng)
        assert np.max(np.abs(F - scipy.linalg.expm(1j * A))) < 1e-11, kind
    assert np.allclose(kron_exp(small, [None, None]), np.eye(small.D))


def test_word_validation(small):
    with pytest.raises(ConfigError):
        UnitaryWord([np.ones((2, 3))])
    with pytest.raises(ConfigError):
        UnitaryWord([np.array([[0, 1], [0, 0]], complex)])
    bad = UnitaryWord([np.eye(2)], exponentials=[2 * np.eye(2)])
    with pytest.raises(CertificationError):
        bad.matrix


def test_kms_proxy_guard(qubitish):
    with pytest.raises(CertificationError):
        kms_state(qubitish, 0.2)


def pulse(trunc, area=np.pi / 2):
    C = np.zeros((trunc.D, trunc.D), complex)
    C[trunc.index([0]), trunc.index([1])] = 2.0
    return CyclicProcess.bump(6.0, C, area, carrier=float(trunc.omegas[0]))


def test_resonant_pulse_extracts_one_quantum(qubitish):
    psi = state_vector(qubitish, SingleParticle(0))
    res = work_done(psi, qubitish, pulse(qubitish))
    assert res.algebraic == pytest.approx(-1.0, abs=1e-6)
    assert res.discrepancy < 1e-8


def test_evolution_against_solve_ivp(qubitish):
    rng = np.random.default_rng(3)
    proc = random_process(qubitish, rng, T=3.0)
    D, E = qubitish.D, qubitish.energies

    def rhs(t, y):
        ph = np.exp(1j * E * t)
        G = ph[:, None] * proc.H(t) * np.conj(ph)[None, :]
        return (-1j * G @ y.reshape(D, D)).ravel()

    sol = solve_ivp(rhs, (0, proc.T), np.eye(D, dtype=complex).ravel(), rtol=1e-11, atol=1e-12, method="DOP853")
    ref = sol.y[:, -1].reshape(D, D)
    ev = evolve_cyclic(qubitish, proc)
    assert np.max(np.abs(ev.U - ref)) < 1e-7
    assert ev.projection_distance < 1e-6


def test_zero_coupling_is_identity(small):
    proc = CyclicProcess.bump(2.0, np.zeros((small.D, small.D)))
    ev = evolve_cyclic(small, proc, small.vacuum)
    assert np.array_equal(ev.U, np.eye(small.D))
    assert ev.work_integral == 0.0


def test_work_identity_random_processes(small):
    rng = np.random.default_rng(9)
    rho, _ = kms_state(small, 2.0)
    for _ in range(2):
        res = work_done(rho, small, random_process(small, rng, T=2.0))
        assert res.discrepancy < 1e-8
        assert res.algebraic >= -1e-10
    d = res.to_dict()
    json.dumps(d)


def test_process_validation(small):
    from qei.quadrature import BumpWindow

    with pytest.raises(ConfigError):
        CyclicProcess(1.0, BumpWindow(0.5, 1.0), np.zeros((small.D, small.D)))
    with pytest.raises(ConfigError):
        CyclicProcess.bump(0.0, np.zeros((2, 2)))


def test_envelope_area(small):
    proc = CyclicProcess.bump(4.0, np.eye(small.D), area=0.7, sharpness=6.0)
    assert proc.envelope.integral() == pytest.approx(0.7)


def test_passive_search(qubitish, small):
    excited = passive_search(state_vector(qubitish, SingleParticle(0)), qubitish)
    assert excited.c_omega == pytest.approx(-1.0, abs=1e-9)
    assert not excited.passive
    assert np.real(excited.state[0, 0]) == pytest.approx(1.0, abs=1e-9)
    ground = passive_search(small.vacuum, small, iterations=5)
    assert ground.passive and ground.c_omega == 0.0
    gens, labels = default_family(small, levels=2)
    assert len(gens) == len(labels) == 2 * (2 * 2 + 2)
