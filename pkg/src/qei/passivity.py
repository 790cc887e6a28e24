"""Passivity on a truncated Fock space: derivation, unitary words, cyclic processes and work."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CertificationError, ConfigError
from .energy import richardson_derivative
from .fock import FockTruncation, expm_hermitian, kms_density, smear_operator, smeared_field
from .quadrature import BumpWindow


def delta_of(trunc: FockTruncation, A) -> np.ndarray:
    """delta(A) = i[H, A], the generator of A -> e^{iHt} A e^{-iHt}."""
    E = trunc.energies
    return 1j * (E[:, None] - E[None, :]) * np.asarray(A)


def delta_fd_check(trunc: FockTruncation, A) -> float:
    """Max deviation between delta_of(A) and a Richardson finite difference of alpha_t(A)."""
    emax = max(1.0, float(np.ptp(trunc.energies)))
    fd, _ = richardson_derivative(lambda s: trunc.evolve(A, s), 0.5 / emax, levels=6)
    exact = delta_of(trunc, A)
    return float(np.abs(fd - exact).max() / max(1.0, np.abs(exact).max()))


@dataclass
class UnitaryWord:
    """U = e^{iA_1} ... e^{iA_N} for hermitian generators A_k."""

    generators: list
    labels: list = field(default_factory=list)
    exponentials: list | None = None  # optional precomputed e^{iA_k}

    def __post_init__(self):
        D = None
        for A in self.generators:
            A = np.asarray(A)
            if A.ndim != 2 or A.shape[0] != A.shape[1] or (D is not None and A.shape[0] != D):
                raise ConfigError("generators must be square matrices of one size")
            D = A.shape[0]
            if np.abs(A - A.conj().T).max() > 1e-10 * max(1.0, np.abs(A).max()):
                raise ConfigError("word generators must be hermitian")
        self._U = None

    @property
    def dim(self):
        return np.asarray(self.generators[0]).shape[0]

    @property
    def matrix(self) -> np.ndarray:
        if self._U is None:
            U = np.eye(self.dim, dtype=complex)
            facs = self.exponentials or [expm_hermitian(A) for A in self.generators]
            for F in facs:
                U = U @ F
            drift = float(np.abs(U.conj().T @ U - np.eye(self.dim)).max())
            if drift > 1e-10:
                raise CertificationError(f"word not unitary (drift {drift:.2e})")
            self._U = U
        return self._U

    def conjugated(self, trunc: FockTruncation, s: float) -> "UnitaryWord":
        """Every generator replaced by e^{iHs} A e^{-iHs}."""
        return UnitaryWord([trunc.evolve(A, s) for A in self.generators], list(self.labels))


def _as_density(state):
    state = np.asarray(state)
    if state.ndim == 1:
        return np.outer(state, state.conj())
    return state


def passivity_functional(state, trunc: FockTruncation, U) -> float:
    """(1/i) Tr[rho U^* delta(U)] = Tr[rho U^* H U] - Tr[rho H]."""
    Um = U.matrix if isinstance(U, UnitaryWord) else np.asarray(U)
    rho = _as_density(state)
    val = np.trace(rho @ Um.conj().T @ delta_of(trunc, Um)) / 1j
    if abs(val.imag) > 1e-9:
        raise CertificationError(f"passivity functional has imaginary residue {val.imag:.2e}")
    return float(val.real)


def passivity_values_diagonal(probs, trunc: FockTruncation, U) -> np.ndarray:
    """Functional for many states diagonal in the energy basis at once (rows of probs)."""
    Um = U.matrix if isinstance(U, UnitaryWord) else np.asarray(U)
    E = trunc.energies
    moved = (np.abs(Um) ** 2).T @ E  # (U^* H U)_aa
    probs = np.atleast_2d(probs)
    return probs @ moved - probs @ E


def kms_state(trunc: FockTruncation, beta: float, max_proxy: float = 1e-4):
    """e^{-beta H} / Z on the truncation, rejecting temperatures the truncation cannot hold."""
    rho, proxy = kms_density(trunc, beta)
    if proxy > max_proxy:
        raise CertificationError(f"KMS truncation proxy {proxy:.2e} exceeds {max_proxy:.0e} at beta = {beta}")
    return rho, proxy


# -- random word family ---------------------------------------------------

def _single_mode_ladder(n_max):
    return np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1)


def kron_exp(trunc: FockTruncation, singles) -> np.ndarray:
    """exp(i sum_p A_p) for single-mode hermitian A_p (None for 0), as a Kronecker product."""
    out = np.ones((1, 1), complex)
    d = trunc.n_max + 1
    for p in range(trunc.N):
        A = singles[p] if p < len(singles) else None
        out = np.kron(out, np.eye(d) if A is None else expm_hermitian(A))
    return out


def _single_field(n_max, z):
    a = _single_mode_ladder(n_max)
    return 1j * (z * a.T - np.conj(z) * a)


def transition_generator(trunc: FockTruncation, pos: int, level: int, phase: float = 0.0):
    """e^{i phase}|level-1><level| + h.c. on one mode, identity elsewhere."""
    occ = trunc.occupations
    out = np.zeros((trunc.D, trunc.D), complex)
    lo = np.flatnonzero(occ[:, pos] == level - 1)
    for a in lo:
        tgt = occ[a].copy()
        tgt[pos] = level
        b = trunc.index(tgt)
        out[a, b] = np.exp(1j * phase)
        out[b, a] = np.exp(-1j * phase)
    return out


def random_generator(trunc: FockTruncation, rng, kinds=("field", "number", "smeared", "transition")):
    """Draw one hermitian generator; returns (A, kind, e^{iA})."""
    kind = kinds[int(rng.integers(len(kinds)))]
    N, nm = trunc.N, trunc.n_max
    if kind in ("field", "smeared"):
        z = rng.normal(size=N) + 1j * rng.normal(size=N)
        z *= rng.uniform(0, 0.7) / np.linalg.norm(z)
        A = smeared_field(trunc, z)
        if kind == "smeared":
            win = BumpWindow(rng.uniform(-1, 1), rng.uniform(0.3, 1.5), 1.0, 1.0)
            win = BumpWindow(win.center, win.width, 1.0 / win.integral(), 1.0)
            A = smear_operator(trunc, A, win, check_bound=False)
            # alpha_f acts on a_j^* by the factor fhat(omega_j)
            z = z * win.ft(trunc.omegas)
        return A, kind, kron_exp(trunc, [_single_field(nm, zj) for zj in z])
    if kind == "number":
        pos = int(rng.integers(N))
        A = rng.uniform(-np.pi, np.pi) * trunc.number(pos).astype(complex)
        return A, kind, np.diag(np.exp(1j * np.diag(A).real))
    if kind == "transition":
        pos = int(rng.integers(N))
        level = int(rng.integers(1, nm + 1))
        theta, phase = rng.uniform(-np.pi / 2, np.pi / 2), rng.uniform(0, 2 * np.pi)
        A = theta * transition_generator(trunc, pos, level, phase)
        single = np.zeros((nm + 1, nm + 1), complex)
        single[level - 1, level] = theta * np.exp(1j * phase)
        single[level, level - 1] = theta * np.exp(-1j * phase)
        singles = [None] * N
        singles[pos] = single
        return A, kind, kron_exp(trunc, singles)
    raise ConfigError(f"unknown generator kind {kind!r}")


def random_word(trunc: FockTruncation, rng, n_factors: int | None = None, kinds=None) -> UnitaryWord:
    n = int(rng.integers(1, 4)) if n_factors is None else int(n_factors)
    gens, labels, exps = [], [], []
    for _ in range(n):
        A, lab, F = random_generator(trunc, rng) if kinds is None else random_generator(trunc, rng, kinds)
        gens.append(A)
        labels.append(lab)
        exps.append(F)
    return UnitaryWord(gens, labels, exps)


def iter_random_words(trunc: FockTruncation, count: int, seed: int = 0, kinds=None):
    """Lazily drawn words; large suites at big truncations do not fit in memory at once."""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield random_word(trunc, rng, kinds=kinds)


def random_words(trunc: FockTruncation, count: int, seed: int = 0, kinds=None):
    return list(iter_random_words(trunc, count, seed, kinds))


# -- cyclic processes --------------------------------------------------------

@dataclass
class CyclicProcess:
    """H_t = env(t) (e^{i nu t} C + e^{-i nu t} C^*) / 2 with a bump envelope inside [0, T]."""

    T: float
    envelope: BumpWindow
    coupling: np.ndarray
    carrier: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError("process duration must be positive")
        lo, hi = self.envelope.support
        if lo < -1e-12 or hi > self.T + 1e-12:
            raise ConfigError("envelope support must lie inside [0, T]")
        self.coupling = np.asarray(self.coupling, complex)

    @classmethod
    def bump(cls, T, coupling, area: float = 1.0, carrier: float = 0.0, sharpness: float = 1.0):
        """Envelope centered in [0, T] filling it, scaled so int env = area."""
        if not T > 0:
            raise ConfigError("process duration must be positive")
        base = BumpWindow(T / 2, T / 2, 1.0, sharpness)
        env = BumpWindow(T / 2, T / 2, area / base.integral(), sharpness)
        return cls(T, env, coupling, carrier)

    def H(self, t):
        C = self.coupling
        ph = np.exp(1j * self.carrier * t)
        return 0.5 * float(self.envelope(t)) * (ph * C + np.conj(ph) * C.conj().T)

    def dH(self, t):
        C = self.coupling
        ph = np.exp(1j * self.carrier * t)
        e, de = float(self.envelope(t)), float(self.envelope.derivative(t))
        osc = ph * C + np.conj(ph) * C.conj().T
        dosc = 1j * self.carrier * (ph * C - np.conj(ph) * C.conj().T)
        return 0.5 * (de * osc + e * dosc)

    def norm_bound(self) -> float:
        return float(self.envelope.amplitude * np.linalg.norm(self.coupling, 2))

    def to_dict(self):
        return {"T": self.T, "envelope": self.envelope.to_dict(), "carrier": self.carrier}


@dataclass
class Evolution:
    U: np.ndarray
    times: np.ndarray
    trajectory: list
    step: float
    step_halving_diff: float
    unitarity_drift: float
    projection_distance: float
    work_integral: float | None = None


def _rk4(trunc, proc, h, vecs=None, keep=False):
    """Classical RK4 for U; ``vecs`` (columns sqrt(p_k) v_k of rho) switches on the work integral."""
    D = trunc.D
    U = np.eye(D, dtype=complex)
    L = 0.0
    n = int(round(proc.T / h))
    E = trunc.energies

    def gen(t):
        ph = np.exp(1j * E * t)
        return ph[:, None] * proc.H(t) * np.conj(ph)[None, :]

    def rate(t, Um):
        # Tr[rho U^* alpha_t(dH) U] = sum_k |.|^2-weighted expectations, O(D^2 r)
        phi = np.exp(-1j * E * t)[:, None] * (Um @ vecs)
        return float(np.real(np.sum(np.conj(phi) * (proc.dH(t) @ phi))))

    traj = [U.copy()] if keep else []
    for i in range(n):
        t = i * h
        G0, Gm, G1 = gen(t), gen(t + h / 2), gen(t + h)
        k1 = -1j * G0 @ U
        U2 = U + 0.5 * h * k1
        k2 = -1j * Gm @ U2
        U3 = U + 0.5 * h * k2
        k3 = -1j * Gm @ U3
        U4 = U + h * k3
        k4 = -1j * G1 @ U4
        if vecs is not None:
            L += h / 6 * (rate(t, U) + 2 * rate(t + h / 2, U2) + 2 * rate(t + h / 2, U3) + rate(t + h, U4))
        U = U + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if keep:
            traj.append(U.copy())
    return U, L, traj


def _state_columns(state):
    state = np.asarray(state)
    if state.ndim == 1:
        return state.astype(complex)[:, None]
    p, V = np.linalg.eigh(0.5 * (state + state.conj().T))
    keep = p > 1e-15
    return V[:, keep] * np.sqrt(p[keep])


def evolve_cyclic(trunc: FockTruncation, proc: CyclicProcess, state=None, tol: float = 1e-8,
                  max_halvings: int = 10, keep_trajectory: bool = False) -> Evolution:
    """Integrate dU/dt = -i alpha_t(H_t) U, U_0 = 1, by RK4 with step-halving acceptance.

    The first step obeys ||H_t|| h <= 0.05 and resolves the Bohr frequencies of
    the truncation once; halving continues until successive U_T agree to tol.
    If a state is given the work integral int Tr[rho U^* alpha_t(dH/dt) U] dt is
    integrated alongside.
    """
    vecs = None if state is None else _state_columns(state)
    if not np.any(proc.coupling):
        U = np.eye(trunc.D, dtype=complex)
        return Evolution(U, np.array([0.0, proc.T]), [U] if keep_trajectory else [], proc.T, 0.0, 0.0, 0.0,
                         0.0 if state is not None else None)
    h = min(0.05 / max(proc.norm_bound(), 1e-12), 1.0 / max(float(np.ptp(trunc.energies)), abs(proc.carrier), 1e-12))
    h = proc.T / int(np.ceil(proc.T / h))
    U1, L1, _ = _rk4(trunc, proc, h, vecs)
    for _ in range(max_halvings):
        h2 = h / 2
        U2, L2, traj = _rk4(trunc, proc, h2, vecs, keep_trajectory)
        diff = float(np.linalg.norm(U2 - U1, 2))
        if diff <= tol and (vecs is None or abs(L2 - L1) <= tol):
            drift = float(np.abs(U2.conj().T @ U2 - np.eye(trunc.D)).max())
            Up, _ = scipy.linalg.polar(U2)
            dist = float(np.linalg.norm(Up - U2, 2))
            if dist > 1e-6:
                raise CertificationError(f"polar projection distance {dist:.2e} exceeds 1e-6")
            times = np.linspace(0, proc.T, len(traj)) if traj else np.array([0.0, proc.T])
            return Evolution(Up, times, traj, h2, diff, drift, dist, L2 if vecs is not None else None)
        U1, L1, h = U2, L2, h2
    raise CertificationError("RK4 step halving did not reach the requested tolerance")


@dataclass
class WorkResult:
    integral: float
    algebraic: float
    discrepancy: float
    evolution: Evolution

    def to_dict(self):
        ev = self.evolution
        return {"integral": self.integral, "algebraic": self.algebraic, "discrepancy": self.discrepancy,
                "step": ev.step, "step_halving_diff": ev.step_halving_diff,
                "unitarity_drift": ev.unitarity_drift, "projection_distance": ev.projection_distance}


def work_done(state, trunc: FockTruncation, proc: CyclicProcess, tol: float = 1e-6) -> WorkResult:
    """Work as the time integral of l(alpha^H_t(dH/dt)) and as (1/i) l(U_T^* delta(U_T))."""
    ev = evolve_cyclic(trunc, proc, state)
    alg = passivity_functional(state, trunc, ev.U)
    disc = abs(ev.work_integral - alg)
    res = WorkResult(float(ev.work_integral), alg, float(disc), ev)
    if disc > tol:
        raise CertificationError(f"work identity discrepancy {disc:.2e}; diagnostics {json.dumps(res.to_dict())}")
    return res


def random_process(trunc: FockTruncation, rng, T: float | None = None) -> CyclicProcess:
    """Random bump-enveloped coupling built from ladder operators, number operators and transitions."""
    T = float(rng.uniform(2.0, 5.0)) if T is None else float(T)
    N = trunc.N
    C = np.zeros((trunc.D, trunc.D), complex)
    for pos in range(N):
        C += complex(rng.normal(), rng.normal()) * 0.3 * trunc.a[pos]
        C += rng.normal() * 0.1 * trunc.number(pos)
    carrier = float(rng.uniform(0, 2.0))
    area = float(rng.uniform(0.3, 1.5))
    return CyclicProcess.bump(T, C, area, carrier)


# -- passive search -----------------------------------------------------------

def default_family(trunc: FockTruncation, levels: int | None = None):
    """Hermitian generators: level transitions (two phases) and field quadratures per mode."""
    gens, labels = [], []
    top = trunc.n_max if levels is None else min(levels, trunc.n_max)
    for pos in range(trunc.N):
        for k in range(1, top + 1):
            for phase in (0.0, np.pi / 2):
                gens.append(transition_generator(trunc, pos, k, phase))
                labels.append(f"transition mode{pos} {k - 1}<->{k} phase {phase:.3f}")
        a = trunc.a[pos]
        gens.append((a + a.T).astype(complex))
        labels.append(f"position mode{pos}")
        gens.append(1j * (a.T - a))
        labels.append(f"momentum mode{pos}")
    return gens, labels


@dataclass
class SearchResult:
    c_omega: float
    theta: np.ndarray
    U: np.ndarray
    state: np.ndarray
    trace: list
    passive: bool


def passive_search(state, trunc: FockTruncation, family=None, iterations: int = 50,
                   step: float = np.pi / 4, tol: float = 1e-9, min_step: float = 1e-7) -> SearchResult:
    """Coordinate search over U(theta) = prod_k e^{i theta_k G_k} minimizing the passivity functional."""
    gens = default_family(trunc)[0] if family is None else list(family)
    rho = _as_density(state)
    theta = np.zeros(len(gens))
    D = trunc.D
    if iterations <= 0 or not gens:
        return SearchResult(0.0, theta, np.eye(D, dtype=complex), rho, [], True)
    eig = [np.linalg.eigh(0.5 * (G + G.conj().T)) for G in gens]

    def unitary(th):
        U = np.eye(D, dtype=complex)
        for (lam, V), t in zip(eig, th):
            if t != 0.0:
                U = U @ ((V * np.exp(1j * t * lam)) @ V.conj().T)
        return U

    def f(th):
        return passivity_functional(rho, trunc, unitary(th))

    best = f(theta)
    trace = [best]
    for _ in range(int(iterations)):
        improved = False
        for k in range(len(gens)):
            for sgn in (1.0, -1.0):
                trial = theta.copy()
                trial[k] += sgn * step
                val = f(trial)
                if val < best - 1e-15:
                    best, theta, improved = val, trial, True
                    break
        trace.append(best)
        if not improved:
            step /= 2
            if step < min_step:
                break
    U = unitary(theta)
    new_state = U @ rho @ U.conj().T
    return SearchResult(best, theta, U, new_state, trace, best >= -tol)
