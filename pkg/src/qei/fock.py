"""Truncated Fock space: ladder matrices, field and Weyl operators, time smearing."""
from __future__ import annotations

from math import factorial

import numpy as np

from .errors import CertificationError, ConfigError
from .modes import ModeCatalog
from .states import (KMS, Coherent, Ground, Mixture, SingleParticle, Squeezed, StateSpec,
                     SuperposedPair, mode_features)


class FockTruncation:
    """N selected modes, each with occupations 0..n_max; kron order = mode order.

    ``modes`` are catalog indices.  Ladder matrices are dense and real.
    """

    def __init__(self, omegas, modes, n_max: int, cap: int = 4096):
        self.modes = np.asarray(modes, int)
        self.omegas = np.asarray(omegas, float)
        self.N = self.modes.size
        self.n_max = int(n_max)
        if self.N < 1 or self.n_max < 1:
            raise ConfigError("truncation needs at least one mode and n_max >= 1")
        self.D = (self.n_max + 1) ** self.N
        if self.D > cap:
            raise ConfigError(f"truncation dimension {self.D} exceeds cap {cap}")
        dims = (self.n_max + 1,) * self.N
        self.occupations = np.indices(dims).reshape(self.N, -1).T
        single = np.diag(np.sqrt(np.arange(1, self.n_max + 1, dtype=float)), k=1)
        eye = np.eye(self.n_max + 1)
        self.a = []
        for j in range(self.N):
            op = np.ones((1, 1))
            for k in range(self.N):
                op = np.kron(op, single if k == j else eye)
            op.setflags(write=False)
            self.a.append(op)
        self.energies = self.occupations @ self.omegas
        self.H = np.diag(self.energies)
        self.H.setflags(write=False)
        self.top = np.any(self.occupations == self.n_max, axis=1)

    @property
    def adag(self):
        return [op.T for op in self.a]

    def position(self, mode: int) -> int:
        hit = np.flatnonzero(self.modes == int(mode))
        if hit.size == 0:
            raise ConfigError(f"mode {mode} not in truncation (modes {self.modes.tolist()})")
        return int(hit[0])

    def index(self, occ) -> int:
        occ = np.asarray(occ, int)
        return int(np.ravel_multi_index(tuple(occ), (self.n_max + 1,) * self.N))

    def basis(self, occ) -> np.ndarray:
        v = np.zeros(self.D, complex)
        v[self.index(occ)] = 1.0
        return v

    @property
    def vacuum(self) -> np.ndarray:
        return self.basis([0] * self.N)

    def number(self, pos: int) -> np.ndarray:
        return np.diag(self.occupations[:, pos].astype(float))

    def low_subspace(self, k: int) -> np.ndarray:
        """Indices of basis states with every occupation <= k."""
        return np.flatnonzero(np.all(self.occupations <= k, axis=1))

    def top_level_weight(self, state) -> float:
        """Norm of the component with some occupation at n_max (vector) or its probability (density)."""
        state = np.asarray(state)
        if state.ndim == 1:
            return float(np.linalg.norm(state[self.top]))
        return float(np.real(np.trace(state[np.ix_(self.top, self.top)])))

    def evolve(self, A, t: float):
        """e^{iHt} A e^{-iHt} (H is diagonal)."""
        ph = np.exp(1j * self.energies * t)
        return ph[:, None] * A * np.conj(ph)[None, :]


def build_truncation(cat: ModeCatalog, N: int, n_max: int, modes=None, cap: int = 4096) -> FockTruncation:
    if modes is None:
        if int(N) > cat.J:
            raise ConfigError(f"N = {N} exceeds catalog size J = {cat.J}")
        modes = np.arange(int(N))
    modes = np.asarray([cat.check_mode(j) for j in modes], int)
    return FockTruncation(cat.omegas[modes], modes, n_max, cap)


def expm_hermitian(A, factor=1j):
    """exp(factor * A) for hermitian A via its eigendecomposition."""
    A = 0.5 * (A + A.conj().T)
    if not np.any(A - np.diag(np.diag(A))):
        return np.diag(np.exp(factor * np.real(np.diag(A))))
    lam, V = np.linalg.eigh(A)
    return (V * np.exp(factor * lam)) @ V.conj().T


def field_operator(trunc: FockTruncation, cat: ModeCatalog, t: float, x: float) -> np.ndarray:
    """Phi(t,x) = sum_j (2 w_j)^{-1/2} (a_j e^{-i w_j t} u_j(x) + h.c.) over included modes."""
    P = mode_features(cat, np.array([t]), np.array([x]), trunc.modes)[:, 0]
    out = np.zeros((trunc.D, trunc.D), complex)
    for p, a in zip(P, trunc.a):
        out += p * a + np.conj(p) * a.T
    return out


def field_velocity_operator(trunc: FockTruncation, cat: ModeCatalog, t: float, x: float) -> np.ndarray:
    """d/dt Phi(t,x)."""
    P = mode_features(cat, np.array([t]), np.array([x]), trunc.modes)[:, 0]
    out = np.zeros((trunc.D, trunc.D), complex)
    for p, w, a in zip(P, trunc.omegas, trunc.a):
        out += -1j * w * p * a + 1j * w * np.conj(p) * a.T
    return out


def smeared_field(trunc: FockTruncation, z) -> np.ndarray:
    """Phi(u) = sigma(u, Phi) = i sum_j (z_j a_j^* - conj(z_j) a_j) for u = sum_j (z_j phi_j + c.c.)."""
    z = np.asarray(z, complex)
    if z.shape != (trunc.N,):
        raise ConfigError(f"expected {trunc.N} coefficients, got shape {z.shape}")
    out = np.zeros((trunc.D, trunc.D), complex)
    for zj, a in zip(z, trunc.a):
        out += 1j * (zj * a.T - np.conj(zj) * a)
    return out


def symplectic_coefficients(z, y) -> float:
    """sigma(u, v) for solutions with mode coefficients z, y."""
    return float(2 * np.imag(np.vdot(z, y)))


def weyl_operator(trunc: FockTruncation, cat: ModeCatalog | None, z) -> np.ndarray:
    """W(u) = exp(i Phi(u)); the catalog is accepted for symmetry with the other builders."""
    return expm_hermitian(smeared_field(trunc, z))


def weyl_relation_defect(trunc: FockTruncation, z, y, k_low: int = 2) -> float:
    """max |W(u)W(v)W(u+v)^* - e^{-i sigma/2}| on the block with occupations <= k_low."""
    z, y = np.asarray(z, complex), np.asarray(y, complex)
    Wu = weyl_operator(trunc, None, z)
    Wv = weyl_operator(trunc, None, y)
    Wuv = weyl_operator(trunc, None, z + y)
    prod = Wu @ Wv @ Wuv.conj().T
    idx = trunc.low_subspace(k_low)
    block = prod[np.ix_(idx, idx)]
    target = np.exp(-0.5j * symplectic_coefficients(z, y)) * np.eye(idx.size)
    return float(np.abs(block - target).max())


def smear_operator(trunc: FockTruncation, A, f, rtol: float = 1e-10, check_bound: bool = True):
    """alpha_f A = int f(t) e^{iHt} A e^{-iHt} dt.

    In the energy basis (alpha_f A)_ab = A_ab fhat(E_a - E_b); fhat comes from
    Gauss-Legendre quadrature over the support of f with node doubling.
    """
    A = np.asarray(A)
    diffs = trunc.energies[:, None] - trunc.energies[None, :]
    nz = A != 0
    keys = np.round(diffs[nz], 11)
    out = np.zeros(A.shape, complex)
    if keys.size:
        uniq, inv = np.unique(keys, return_inverse=True)
        vals, err = f.ft_quadrature(uniq)
        scale = max(1.0, float(np.max(np.abs(vals))))
        if err > rtol * scale:
            raise CertificationError(f"smearing quadrature not converged (node-doubling diff {err:.2e})")
        out[nz] = A[nz] * vals[inv.ravel()]
    if check_bound:
        nA = np.linalg.norm(A, 2)
        if np.linalg.norm(out, 2) > f.l1_norm() * nA * (1 + 1e-9) + 1e-12:
            raise CertificationError("smeared operator violates the L1 norm bound")
    return out


def coherent_amplitudes(alpha: complex, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    fact = np.array([factorial(int(k)) for k in n], float)
    return np.exp(-abs(alpha) ** 2 / 2) * alpha**n / np.sqrt(fact)


def squeezed_amplitudes(r: float, phi: float, n_max: int) -> np.ndarray:
    """S(r e^{i phi})|0> with S = exp((conj(xi) a^2 - xi a^*2)/2)."""
    c = np.zeros(n_max + 1, complex)
    z = -np.exp(1j * phi) * np.tanh(r)
    c[0] = 1.0
    # ratio recursion avoids factorial overflow at large n_max
    for k in range(1, n_max // 2 + 1):
        c[2 * k] = c[2 * k - 2] * z * np.sqrt((2 * k - 1) / (2 * k))
    return c / np.sqrt(np.cosh(r))


def product_vector(trunc: FockTruncation, factors) -> np.ndarray:
    """Tensor product of per-mode amplitude vectors (one per included mode)."""
    v = np.ones(1, complex)
    for f in factors:
        v = np.kron(v, f)
    return v


def coherent_vector(trunc: FockTruncation, alphas) -> np.ndarray:
    alphas = np.asarray(alphas, complex)
    return product_vector(trunc, [coherent_amplitudes(a, trunc.n_max) for a in alphas])


def state_vector(trunc: FockTruncation, state: StateSpec) -> np.ndarray:
    """Truncated state vector for pure states whose excited modes are all included."""
    N, nm = trunc.N, trunc.n_max
    factors = [np.eye(nm + 1, dtype=complex)[0] for _ in range(N)]
    if isinstance(state, Ground):
        pass
    elif isinstance(state, Coherent):
        for j, a in state.alpha:
            factors[trunc.position(j)] = coherent_amplitudes(a, nm).astype(complex)
    elif isinstance(state, Squeezed):
        for j, (r, phi) in state.params:
            factors[trunc.position(j)] = squeezed_amplitudes(r, phi, nm)
    elif isinstance(state, SingleParticle):
        factors[trunc.position(state.mode)] = np.eye(nm + 1, dtype=complex)[1]
    elif isinstance(state, SuperposedPair):
        if nm < 2:
            raise ConfigError("pair state needs n_max >= 2")
        f = np.zeros(nm + 1, complex)
        f[0], f[2] = 1.0, state.eps
        factors[trunc.position(state.mode)] = f / np.sqrt(1 + abs(state.eps) ** 2)
    else:
        raise ConfigError(f"no vector representation for {state!r}")
    return product_vector(trunc, factors)


def state_density(trunc: FockTruncation, state: StateSpec) -> np.ndarray:
    if isinstance(state, KMS):
        return kms_density(trunc, state.beta)[0]
    if isinstance(state, Mixture):
        return sum(p * state_density(trunc, c) for p, c in zip(state.weights, state.components))
    v = state_vector(trunc, state)
    return np.outer(v, v.conj())


def kms_density(trunc: FockTruncation, beta: float):
    """e^{-beta H} / Z and its top-occupancy probability."""
    if not beta > 0:
        raise ConfigError("beta must be positive")
    p = np.exp(-beta * (trunc.energies - trunc.energies.min()))
    p /= p.sum()
    rho = np.diag(p).astype(complex)
    return rho, float(p[trunc.top].sum())


class TruncatedFunctional:
    """Linear functional on truncation matrices; subclasses define expect()."""

    def __init__(self, trunc: FockTruncation):
        self.trunc = trunc
        self._moments = None

    @property
    def modes(self):
        return self.trunc.modes

    def expect(self, B) -> complex:
        raise NotImplementedError

    def unit(self) -> complex:
        return self.expect(np.eye(self.trunc.D))

    def check_catalog(self, cat: ModeCatalog):
        if np.any(self.trunc.modes >= cat.J) or not np.allclose(cat.omegas[self.trunc.modes], self.trunc.omegas, rtol=1e-14, atol=0):
            raise ConfigError("functional was built on a different catalog")

    def moments(self):
        """(M, P, R) with M_jk = l(a_j^* a_k), P_jk = l(a_j a_k), R_jk = l(a_j^* a_k^*)."""
        if self._moments is None:
            a = self.trunc.a
            N = len(a)
            M = np.empty((N, N), complex)
            P = np.empty((N, N), complex)
            R = np.empty((N, N), complex)
            for j in range(N):
                for k in range(N):
                    M[j, k] = self.expect(a[j].T @ a[k])
                    P[j, k] = self.expect(a[j] @ a[k])
                    R[j, k] = self.expect(a[j].T @ a[k].T)
            self._moments = (M, P, R)
        return self._moments

    def normal_ordered_form(self, P1, P2):
        M, P, R = self.moments()
        Q1, Q2 = np.conj(P1), np.conj(P2)
        return (np.einsum("jk,j...,k...->...", P, P1, P2)
                + np.einsum("kj,j...,k...->...", M, P1, Q2)
                + np.einsum("jk,j...,k...->...", M, Q1, P2)
                + np.einsum("jk,j...,k...->...", R, Q1, Q2))

    def __add__(self, other):
        return SumFunctional(self.trunc, [(1.0, self), (1.0, other)])

    def __rmul__(self, c):
        return SumFunctional(self.trunc, [(complex(c), self)])


class MatrixFunctional(TruncatedFunctional):
    """l(B) = <psi, B phi>."""

    def __init__(self, trunc: FockTruncation, psi, phi=None):
        super().__init__(trunc)
        self.psi = np.asarray(psi, complex)
        self.phi = self.psi if phi is None else np.asarray(phi, complex)
        if self.psi.shape != (trunc.D,) or self.phi.shape != (trunc.D,):
            raise ConfigError("functional vectors must live in the truncation")

    def expect(self, B):
        return complex(np.vdot(self.psi, B @ self.phi))

    def unit(self):
        return complex(np.vdot(self.psi, self.phi))

    def moments(self):
        if self._moments is None:
            a = self.trunc.a
            a_psi = np.array([op @ self.psi for op in a])
            ad_psi = np.array([op.T @ self.psi for op in a])
            a_phi = np.array([op @ self.phi for op in a])
            ad_phi = np.array([op.T @ self.phi for op in a])
            M = a_psi.conj() @ a_phi.T
            P = ad_psi.conj() @ a_phi.T
            R = a_psi.conj() @ ad_phi.T
            self._moments = (M, P, R)
        return self._moments

    def top_level_weight(self) -> float:
        return max(self.trunc.top_level_weight(self.psi), self.trunc.top_level_weight(self.phi))


class DensityFunctional(TruncatedFunctional):
    """l(B) = Tr(rho B)."""

    def __init__(self, trunc: FockTruncation, rho):
        super().__init__(trunc)
        self.rho = np.asarray(rho, complex)
        if self.rho.shape != (trunc.D, trunc.D):
            raise ConfigError("density matrix must live in the truncation")

    def expect(self, B):
        return complex(np.sum(self.rho.T * B))

    def top_level_weight(self) -> float:
        return self.trunc.top_level_weight(self.rho)


class SumFunctional(TruncatedFunctional):
    def __init__(self, trunc, terms):
        super().__init__(trunc)
        self.terms = list(terms)

    def expect(self, B):
        return sum(c * f.expect(B) for c, f in self.terms)

    def unit(self):
        return sum(c * f.unit() for c, f in self.terms)

    def moments(self):
        parts = [f.moments() for _, f in self.terms]
        return tuple(sum(c * p[i] for (c, _), p in zip(self.terms, parts)) for i in range(3))

    def __add__(self, other):
        return SumFunctional(self.trunc, self.terms + [(1.0, other)])

    def __rmul__(self, c):
        return SumFunctional(self.trunc, [(complex(c) * w, f) for w, f in self.terms])
