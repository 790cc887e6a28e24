"""Point-split normal-ordered energy density and its smeared / integrated forms."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import CertificationError
from .fock import FockTruncation, TruncatedFunctional
from .modes import ModeCatalog
from .quadrature import BumpWindow, integrate_certified
from .states import KMS, Mixture, StateSpec, TwoPointData, bilinear, kms_occupation


def energy_features(cat: ModeCatalog, t, x, modes):
    """Frame-derivative features of the normalized modes, shape (3, len(modes), *shape).

    Components: m * phi, e0 phi = g00^{-1/2} d_t phi, e1 phi = h^{-1/2} d_x phi.
    """
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    shape = t.shape
    modes = np.asarray(modes, int)
    om = cat.omegas[modes]
    xf = x.ravel()
    u = cat.mode_values(xf, modes)
    du = cat.mode_derivs(xf, modes)
    g00, h = cat.metric_at(xf)
    pre = np.exp(-1j * np.outer(om, t.ravel())) / np.sqrt(2 * om)[:, None]
    out = np.empty((3, modes.size, xf.size), complex)
    out[0] = cat.m * pre * u
    out[1] = (-1j * om[:, None]) * pre * u / np.sqrt(g00)
    out[2] = pre * du / np.sqrt(h)
    return out.reshape((3, modes.size) + shape)


def point_split_T(ell, cat: ModeCatalog, p, q):
    """:T:[ell](p, q) = 1/2 (m^2 + e0 x e0 + e1 x e1) applied to the normal-ordered two-point function."""
    t1, x1 = p
    t2, x2 = q

    def feats(modes):
        V1 = energy_features(cat, t1, x1, modes)
        V2 = energy_features(cat, t2, x2, modes)
        return [(V1[c], V2[c]) for c in range(3)]

    val = 0.5 * np.asarray(bilinear(ell, cat, feats), complex)
    shape = np.broadcast_shapes(np.shape(t1), np.shape(x1), np.shape(t2), np.shape(x2))
    return np.broadcast_to(val, shape).copy() if shape else complex(val)


def _is_state(ell):
    return isinstance(ell, (StateSpec, TwoPointData))


def energy_density(ell, cat: ModeCatalog, t, x):
    """rho[ell](t, x) = g00(x)^{1/2} :T:[ell]((t,x),(t,x)); real for states."""
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    g00, _ = cat.metric_at(x.ravel())
    val = point_split_T(ell, cat, (t, x), (t, x)) * np.sqrt(g00).reshape(t.shape)
    if _is_state(ell):
        val = np.real(val)
    return val if np.ndim(val) else (float(val) if _is_state(ell) else complex(val))


def kms_tail_bound(cat: ModeCatalog, beta: float) -> float:
    """Estimate of the energy density carried by modes beyond the cutoff.

    Uses the cylinder spectrum sqrt(m_eff^2 + k^2) with m_eff the smallest
    frequency, two modes per wavenumber, continued past the last included one.
    """
    if cat.J == 0:
        return 0.0
    wmax = cat.omegas[-1]
    meff = cat.omegas[0]
    n0 = max(0.0, np.sqrt(max(wmax**2 - meff**2, 0.0)) * cat.L / (2 * np.pi))
    n = np.floor(n0) + 1 + np.arange(4000)
    om = np.sqrt(meff**2 + (2 * np.pi * n / cat.L) ** 2)
    terms = 2 * om * kms_occupation(om, beta) / cat.L
    return float(np.sum(terms[np.isfinite(terms)]))


def tail_bound(ell, cat: ModeCatalog) -> float:
    """Cutoff tail of the energy density for a state (only thermal components have one)."""
    if isinstance(ell, Mixture):
        return sum(p * tail_bound(c, cat) for p, c in zip(ell.weights, ell.components))
    if isinstance(ell, KMS):
        return kms_tail_bound(cat, ell.beta) * float(np.sqrt(np.max(cat.g00)))
    return 0.0


@dataclass
class EnergyDensityField:
    t: np.ndarray
    x: np.ndarray
    values: np.ndarray
    J: int
    tail_bound: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "x", "rho"])
            for i, ti in enumerate(self.t):
                for k, xk in enumerate(self.x):
                    wr.writerow([repr(float(ti)), repr(float(xk)), repr(float(np.real(self.values[i, k])))])


def energy_density_field(ell, cat: ModeCatalog, ts, xs) -> EnergyDensityField:
    ts = np.atleast_1d(np.asarray(ts, float))
    xs = np.atleast_1d(np.asarray(xs, float))
    T, X = np.meshgrid(ts, xs, indexing="ij")
    vals = energy_density(ell, cat, T, X)
    return EnergyDensityField(ts, xs, np.asarray(vals), cat.J, tail_bound(ell, cat))


def _max_frequency(ell, cat):
    if isinstance(ell, Mixture):
        return max(_max_frequency(c, cat) for c in ell.components)
    if isinstance(ell, KMS):
        return 0.0  # stationary
    if isinstance(ell, StateSpec):
        used = ell.modes_used()
        return float(max((cat.omegas[j] for j in used), default=0.0))
    if isinstance(ell, TwoPointData):
        act = ell.active
        return float(cat.omegas[act].max()) if act.size else 0.0
    return float(cat.omegas[ell.modes].max())


@dataclass
class SmearedEnergy:
    value: float
    quadrature_error: float
    tail_bound: float

    def __float__(self):
        return float(np.real(self.value))

    def to_dict(self):
        return {"value": float(np.real(self.value)), "quadrature_error": self.quadrature_error,
                "tail_bound": self.tail_bound}


def smeared_energy(ell, cat: ModeCatalog, g: BumpWindow, x: float, rtol: float = 1e-10) -> SmearedEnergy:
    """int g(t)^2 rho[ell](t, x) dt with step-halving certification."""
    lo, hi = g.support
    # resolve both the window and the oscillation 2 omega of the excited modes
    wmax = _max_frequency(ell, cat)
    n0 = 16 * max(2, int(np.ceil((hi - lo) * (2 * wmax + 1.0 / g.width) / np.pi)))

    def integrand(t):
        return g(t) ** 2 * energy_density(ell, cat, t, np.full_like(t, x))

    val, err = integrate_certified(integrand, lo, hi, n0=n0, rtol=rtol, atol=1e-15)
    scale = g.square_l1()
    tb = tail_bound(ell, cat) * scale
    return SmearedEnergy(val if not _is_state(ell) else float(np.real(val)), float(err), tb)


def integrated_energy(ell, cat: ModeCatalog, t: float = 0.0):
    """int rho[ell](t, x) sqrt(h) dx by the grid (trapezoid = spectral for periodic data)."""
    x = cat.x
    rho = energy_density(ell, cat, np.full(cat.G, float(t)), x)
    return np.sum(rho * cat.sqrt_h) * cat.dx


# -- operator level ----------------------------------------------------------

def _operator_coefficients(cat: ModeCatalog, modes, t, x, measure=None):
    """Coefficients (A, B) with rho_op = sum_jk A_jk a_j a_k + conj(A_jk) a_j^* a_k^* + B_jk a_j^* a_k.

    With ``measure`` the coefficients are summed over the points x with those weights.
    """
    x = np.atleast_1d(np.asarray(x, float))
    V = energy_features(cat, np.full(x.shape, float(t)), x, modes)  # (3, N, npts)
    g00, _ = cat.metric_at(x)
    wts = np.sqrt(g00) * (np.ones_like(x) if measure is None else measure)
    A = 0.5 * np.einsum("cjp,ckp,p->jk", V, V, wts)
    B = np.einsum("cjp,ckp,p->jk", np.conj(V), V, wts)
    return A, B


def _assemble(trunc: FockTruncation, A, B):
    a = trunc.a
    N = len(a)
    out = np.zeros((trunc.D, trunc.D), complex)
    for j in range(N):
        for k in range(N):
            out += A[j, k] * (a[j] @ a[k]) + np.conj(A[j, k]) * (a[j].T @ a[k].T) + B[j, k] * (a[j].T @ a[k])
    return out


def energy_density_operator(trunc: FockTruncation, cat: ModeCatalog, t: float, x: float):
    """Normal-ordered energy density operator rho(t, x) on the truncation."""
    A, B = _operator_coefficients(cat, trunc.modes, t, [x])
    return _assemble(trunc, A, B)


def integrated_energy_operator(trunc: FockTruncation, cat: ModeCatalog, t: float = 0.0):
    """sum_i sqrt(h_i) dx rho(t, x_i): the spatial integral of the operator density."""
    A, B = _operator_coefficients(cat, trunc.modes, t, cat.x, cat.sqrt_h * cat.dx)
    return _assemble(trunc, A, B)


def richardson_derivative(f, h0: float, levels: int = 5):
    """Central difference of f at 0 with Richardson extrapolation; returns (value, error)."""
    if h0 < 1e-10:
        raise CertificationError("finite-difference step underflow")
    table = []
    h = h0
    for i in range(levels):
        d = (np.asarray(f(h)) - np.asarray(f(-h))) / (2 * h)
        row = [d]
        for k in range(1, i + 1):
            fac = 4.0**k
            row.append((fac * row[k - 1] - table[i - 1][k - 1]) / (fac - 1))
        table.append(row)
        h /= 2
    best = table[-1][-1]
    err = np.max(np.abs(best - table[-2][-2])) if levels > 1 else np.inf
    return best, float(err)


def generator_identity_residual(trunc: FockTruncation, cat: ModeCatalog, A, ell: TruncatedFunctional,
                                t: float = 0.0, hamiltonian=None):
    """|LHS - RHS| / (|LHS| + |RHS| + 1) for int l([rho(t,x), A]) dmu = (1/i) d/ds l(alpha_s A).

    The LHS uses the spatially integrated operator density (or ``hamiltonian``
    if given); the RHS differentiates s -> l(e^{iHs} A e^{-iHs}).
    """
    Hint = integrated_energy_operator(trunc, cat, t) if hamiltonian is None else hamiltonian
    lhs = ell.expect(Hint @ A - A @ Hint)
    emax = max(1.0, float(np.max(np.abs(trunc.energies))))
    rhs, _ = richardson_derivative(lambda s: ell.expect(trunc.evolve(A, s)), 0.5 / emax, levels=6)
    rhs = rhs / 1j
    return float(abs(lhs - rhs) / (abs(lhs) + abs(rhs) + 1.0))


def smeared_report(state, window: BumpWindow, x: float, result: SmearedEnergy) -> str:
    d = {"state": state.to_dict(), "window": window.to_dict(), "x": x}
    d.update(result.to_dict())
    return json.dumps(d, sort_keys=True)
