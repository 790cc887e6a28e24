"""The ten desk-scale acceptance checks, shared by `qei verify-all` and the test suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import microlocal as ml
from .energy import generator_identity_residual, integrated_energy_operator
from .fock import MatrixFunctional, build_truncation, smeared_field, weyl_operator, weyl_relation_defect
from .modes import StaticGeometry, build_cylinder_catalog, build_sl_catalog, symplectic_check
from .passivity import (kms_state, passive_search, passivity_functional, passivity_values_diagonal,
                        iter_random_words, random_process, work_done, CyclicProcess)
from .quadrature import BumpWindow
from .qwei import (Q_of, bochner_checks, check_monotone_left_continuous, fft_Q, gamma_sigma_estimate,
                   integrated_Q, integrated_spectrum, pullback_energy_spectrum, q_bound, run_qwei_campaign)
from .states import Coherent, Ground, Mixture, Squeezed, SuperposedPair

TWO_PI = 2 * np.pi


@dataclass
class ReferenceConfig:
    L: float = TWO_PI
    m: float = 1.0
    J: int = 256
    N: int = 2
    n_max: int = 8
    seed: int = 0
    passivity_n_max: int = 17
    threads: int = 1


@dataclass
class CheckResult:
    index: int
    name: str
    passed: bool
    runtime: float
    limit: float
    details: dict = field(default_factory=dict)

    @property
    def within_time(self) -> bool:
        return self.runtime <= self.limit

    def line(self) -> str:
        tag = "PASS" if self.passed and self.within_time else "FAIL"
        return f"[{tag}] {self.index:2d}. {self.name} ({self.runtime:.1f}s / {self.limit:.0f}s)"

    def to_dict(self):
        return {"index": self.index, "name": self.name, "passed": self.passed, "limit_s": self.limit,
                "details": self.details}


def _closed_Q(levels, L=TWO_PI):
    """(1/2pi^2) * (pi/L) * sum over the listed omegas (with multiplicity)."""
    return float(np.sum(levels) / (2 * np.pi**2) * np.pi / L)


def check_modes(cfg: ReferenceConfig) -> dict:
    cat = build_cylinder_catalog(cfg.L, cfg.m, cfg.J)
    ortho = cat.orthonormality_residual()
    sym = symplectic_check(cat)
    geom = StaticGeometry.cylinder(cfg.L, cfg.m, 512)
    sl = build_sl_catalog(geom, 5)
    sym_num = symplectic_check(sl)
    freq_err = float(np.max(np.abs(sl.omegas / cat.omegas[:5] - 1)))
    trunc = build_truncation(cat, cfg.N, 16)
    rng = np.random.default_rng(cfg.seed)
    weyl = 0.0
    for _ in range(5):
        z = 0.3 * (rng.normal(size=cfg.N) + 1j * rng.normal(size=cfg.N))
        y = 0.3 * (rng.normal(size=cfg.N) + 1j * rng.normal(size=cfg.N))
        weyl = max(weyl, weyl_relation_defect(trunc, z, y))
    ok = ortho <= 1e-12 and sym <= 1e-12 and sym_num <= 1e-6 and weyl <= 1e-6 and freq_err <= 1e-4
    return {"passed": ok, "orthonormality": ortho, "symplectic_analytic": sym, "symplectic_numeric": sym_num,
            "weyl_defect": weyl, "sl_frequency_error": freq_err}


def check_Q(cfg: ReferenceConfig) -> dict:
    cat = build_cylinder_catalog(cfg.L, cfg.m, cfg.J)
    spec = pullback_energy_spectrum(cat, 0.0)
    w1, w2 = np.sqrt(2.0), np.sqrt(5.0)
    targets = {0.5: 0.0, 1.5: _closed_Q([1, w1, w1]), 2.5: _closed_Q([1, w1, w1, w2, w2])}
    got = {u: Q_of(spec, u) for u in targets}
    QQ = float(integrated_Q(cat, 1.5))
    QQ_target = (1 + 2 * w1) / (2 * np.pi)
    exact = max(max(abs(got[u] - targets[u]) for u in targets), abs(QQ - QQ_target))
    # the oracle only needs the modes below the probed u; a short catalog keeps its grid small
    fft = fft_Q(cat.truncated(11), 0.0, list(targets))
    oracle = float(np.max(np.abs(fft - np.array(list(targets.values())))))
    return {"passed": exact <= 1e-12 and oracle <= 1e-3, "Q": {str(k): v for k, v in got.items()},
            "QQ_1.5": QQ, "exact_error": exact, "fft_oracle_error": oracle}


def qwei_states():
    states = []
    for j in (1, 2, 3):
        for eps in (0.1, 0.2):
            states.append(SuperposedPair(j, eps))
    states.append(Squeezed({1: (0.3, 0.0)}))
    states.append(Squeezed({0: (0.5, 0.7), 2: (0.2, 0.0)}))
    states.append(Coherent({1: 0.5 + 0.2j}))
    states.append(Mixture((0.7, 0.3), (SuperposedPair(1, 0.3), Ground())))
    return states


def qwei_windows():
    return [BumpWindow(0.0, 0.5, 1.0, 1.0), BumpWindow(0.0, 1.0, 1.0, 1.0),
            BumpWindow(0.0, 2.0, 1.0, 1.0), BumpWindow(0.3, 1.0, 1.0, 1.0)]


QWEI_XS = [0.0, 0.25, 0.5, np.pi / 2, np.pi]


def check_qwei(cfg: ReferenceConfig) -> dict:
    cat = build_cylinder_catalog(cfg.L, cfg.m, cfg.J)
    rep = run_qwei_campaign(cat, qwei_states(), qwei_windows(), QWEI_XS, u_grid=np.linspace(0, 5, 11),
                            threads=cfg.threads)
    worst = min(m.margin + m.tol_num for m in rep.margins)
    ok = len(rep.margins) >= 200 and rep.passed and rep.max_tol_num <= 1e-6 and rep.negative_count >= 20
    return {"passed": ok, "triples": len(rep.margins), "negative_lhs": rep.negative_count,
            "max_tol_num": rep.max_tol_num, "worst_margin_plus_tol": worst,
            "min_margin": min(m.margin for m in rep.margins), "report": rep}


def check_quiescence(cfg: ReferenceConfig) -> dict:
    cat = build_cylinder_catalog(cfg.L, cfg.m, cfg.J)
    est = gamma_sigma_estimate(cat, BumpWindow(0.0, 1.0, 1.0, 1.0))
    inf = ml.spectrum_support_probe(cat, 0.0)
    return {"passed": abs(est.value) <= 1e-8 and inf == cfg.m, "final_trace": est.value,
            "trace": est.trace, "support_infimum": inf, "route_discrepancy": est.route_discrepancy}


def check_bochner(cfg: ReferenceConfig) -> dict:
    cat = build_cylinder_catalog(cfg.L, cfg.m, cfg.J)
    spec = pullback_energy_spectrum(cat, 0.0)
    rep = bochner_checks(spec, np.random.default_rng(cfg.seed), 50, (10.0, 100.0))
    mono = check_monotone_left_continuous(spec)
    ispec = integrated_spectrum(cat)
    mono_int = check_monotone_left_continuous(ispec)
    expo = rep.growth_exponent
    ok = rep.passed and mono and mono_int and expo is not None and abs(expo - 2.0) <= 0.2
    return {"passed": ok, "min_weight": rep.min_weight, "positive_type_min": min(rep.positive_type_samples),
            "monotone_left_continuous": mono and mono_int, "growth_exponent": expo}


def check_generator(cfg: ReferenceConfig, trials: int = 100) -> dict:
    cat = build_cylinder_catalog(cfg.L, cfg.m, cfg.J)
    trunc = build_truncation(cat, cfg.N, cfg.n_max)
    Hint = integrated_energy_operator(trunc, cat)
    rng = np.random.default_rng(cfg.seed)
    low = trunc.low_subspace(3)
    worst = 0.0
    for i in range(trials):
        kind = i % 3
        if kind == 0:
            A = rng.normal(size=(trunc.D, trunc.D)) + 1j * rng.normal(size=(trunc.D, trunc.D))
        elif kind == 1:
            A = weyl_operator(trunc, cat, 0.4 * (rng.normal(size=cfg.N) + 1j * rng.normal(size=cfg.N)))
        else:
            A = smeared_field(trunc, rng.normal(size=cfg.N) + 1j * rng.normal(size=cfg.N))
        psi = np.zeros(trunc.D, complex)
        phi = np.zeros(trunc.D, complex)
        psi[low] = rng.normal(size=low.size) + 1j * rng.normal(size=low.size)
        phi[low] = rng.normal(size=low.size) + 1j * rng.normal(size=low.size)
        ell = MatrixFunctional(trunc, psi / np.linalg.norm(psi), phi / np.linalg.norm(phi))
        worst = max(worst, generator_identity_residual(trunc, cat, A, ell, hamiltonian=Hint))
    return {"passed": worst <= 1e-6, "trials": trials, "max_residual": worst,
            "H_int_vs_H": float(np.abs(Hint - trunc.H).max())}


def passive_family(trunc, rng, n_mixtures: int = 20):
    """Vacuum, KMS at the four temperatures and random convex mixtures, as diagonal probabilities."""
    labels, probs, proxies = ["vacuum"], [np.abs(trunc.vacuum) ** 2], [0.0]
    kms = []
    for beta in (0.5, 1.0, 2.0, 5.0):
        rho, proxy = kms_state(trunc, beta)
        kms.append(np.real(np.diag(rho)))
        labels.append(f"kms beta={beta}")
        probs.append(kms[-1])
        proxies.append(proxy)
    base = np.array(probs)
    for i in range(n_mixtures):
        w = rng.dirichlet(np.ones(len(base)))
        labels.append(f"mixture {i}")
        probs.append(w @ base)
        proxies.append(float(w[1:] @ np.array(proxies[1:5])))
    return labels, np.array(probs), proxies


def check_passivity(cfg: ReferenceConfig, n_words: int = 1000) -> dict:
    cat = build_cylinder_catalog(cfg.L, cfg.m, cfg.J)
    trunc = build_truncation(cat, cfg.N, cfg.passivity_n_max)
    rng = np.random.default_rng(cfg.seed)
    labels, probs, proxies = passive_family(trunc, rng)
    words = iter_random_words(trunc, n_words, cfg.seed)
    mins = np.full(len(labels), np.inf)
    excited = [trunc.index(o) for o in ([1, 0], [2, 0], [0, 1], [1, 1])]
    E = np.eye(trunc.D)[excited]
    witness = np.full(len(excited), np.inf)
    for w in words:
        mins = np.minimum(mins, passivity_values_diagonal(probs, trunc, w))
        witness = np.minimum(witness, passivity_values_diagonal(E, trunc, w))
    small = build_truncation(cat, 1, 12)
    disp = passivity_functional(small.vacuum, small, weyl_operator(small, cat, np.array([0.5])))
    w1 = float(cat.omegas[0])
    search = passive_search(small.basis([1]), small, iterations=40)
    ok = bool(mins.min() >= -1e-9 and np.all(witness <= -w1 / 2) and abs(disp - 0.25) <= 1e-8
              and search.c_omega <= -w1 + 1e-6)
    return {"passed": ok, "words": n_words, "D": trunc.D, "min_functional": float(mins.min()),
            "per_state_min": dict(zip(labels, map(float, mins))), "truncation_proxy_max": max(proxies),
            "excited_witness": witness.tolist(), "displacement": disp, "search_c_omega": search.c_omega}


def check_work(cfg: ReferenceConfig, n_proc: int = 50) -> dict:
    cat = build_cylinder_catalog(cfg.L, cfg.m, cfg.J)
    trunc = build_truncation(cat, cfg.N, cfg.n_max)
    rng = np.random.default_rng(cfg.seed)
    worst, ground_min = 0.0, np.inf
    vac = trunc.vacuum
    for _ in range(n_proc):
        proc = random_process(trunc, rng)
        r = work_done(vac, trunc, proc)
        worst = max(worst, r.discrepancy)
        ground_min = min(ground_min, r.algebraic, r.integral)
    zero = CyclicProcess.bump(4.0, np.zeros((trunc.D, trunc.D)))
    z = work_done(vac, trunc, zero)
    ok = worst <= 1e-6 and ground_min >= -1e-9 and z.integral == 0.0 and z.algebraic == 0.0
    return {"passed": ok, "processes": n_proc, "max_discrepancy": worst, "ground_min_work": ground_min,
            "zero_process": [z.integral, z.algebraic]}


PROOF_WINDOWS = [BumpWindow(0.0, 0.5, 1.0, 1.0), BumpWindow(0.0, 1.0, 1.0, 1.0), BumpWindow(0.0, 2.0, 1.0, 1.0),
                 BumpWindow(0.5, 1.5, 1.0, 1.0), BumpWindow(0.0, 4.0, 1.0, 1.0)]


def check_proof_chain(cfg: ReferenceConfig, n_words: int = 200) -> dict:
    cat = build_cylinder_catalog(cfg.L, cfg.m, cfg.J)
    trunc = build_truncation(cat, cfg.N, cfg.n_max)
    ispec = integrated_spectrum(cat)
    bounds = [q_bound(ispec, g).value / g.square_l1() for g in PROOF_WINDOWS]
    words = iter_random_words(trunc, n_words, cfg.seed + 1)
    vac = np.abs(trunc.vacuum) ** 2
    lhs = np.array([passivity_values_diagonal(vac, trunc, w)[0] for w in words])
    slack = float(lhs.min() + min(bounds))
    return {"passed": bool(np.all(lhs[:, None] >= -np.array(bounds)[None, :])), "min_lhs": float(lhs.min()),
            "bounds": bounds, "min_slack": slack}


def check_microlocal(cfg: ReferenceConfig) -> dict:
    cat = build_cylinder_catalog(cfg.L, cfg.m, cfg.J)
    cone = ml.ConeSpec.at(cat, 0.0)
    fan = ml.run_fan(ml.ModeSumTwoPoint(cat), cone, cat.L)
    per_base = [sum(p.classification == p.predicted for p in fan.probes[i * 24:(i + 1) * 24]) for i in range(3)]
    blob = ml.run_fan(ml.GaussianBlob(), cone, None, bases=[ml.BASE_PAIRS[0]])
    blob_min = min(p.nu for p in blob.probes)
    ok = min(per_base) >= 22 and fan.contradictions == 0 and blob_min >= 6
    return {"passed": ok, "matches_per_base": per_base, "contradictions": fan.contradictions,
            "blob_min_nu": blob_min, "fan": fan}


CHECKS = [
    (1, "mode/CCR foundation", check_modes, 30),
    (2, "Q step function exact", check_Q, 10),
    (3, "static QWEI campaign", check_qwei, 300),
    (4, "quiescence of the gapped ground state", check_quiescence, 30),
    (5, "Bochner / integrability", check_bochner, 60),
    (6, "generator identity", check_generator, 120),
    (7, "passivity", check_passivity, 180),
    (8, "work identity", check_work, 120),
    (9, "passivity bound chain", check_proof_chain, 60),
    (10, "microlocal probe", check_microlocal, 240),
]


def run_check(index: int, cfg: ReferenceConfig | None = None) -> CheckResult:
    cfg = ReferenceConfig() if cfg is None else cfg
    idx, name, fn, limit = CHECKS[index - 1]
    t0 = time.perf_counter()
    details = fn(cfg)
    dt = time.perf_counter() - t0
    return CheckResult(idx, name, bool(details.pop("passed")), dt, limit, details)


def run_all(cfg: ReferenceConfig | None = None, select=None):
    return [run_check(i, cfg) for i, *_ in CHECKS if select is None or i in select]
