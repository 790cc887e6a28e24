"""Spatial mode decomposition of the Klein-Gordon operator on R x S^1.

Metric g00 dt^2 - h dx^2, measure sqrt(h) dx.  The spatial operator

    K u = -g00 (g00 h)^{-1/2} d/dx((g00/h)^{1/2} u') + m^2 g00 u

is symmetric for the weight w = sqrt(h/g00).  Mode indices are 0-based.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CertificationError, ConfigError


@dataclass(frozen=True)
class StaticGeometry:
    """Static metric on R x S^1 sampled on a uniform periodic grid."""

    L: float
    m: float
    g00: np.ndarray
    h: np.ndarray
    ultrastatic: bool = False

    def __post_init__(self):
        if not self.L > 0:
            raise ConfigError("circumference L must be positive")
        if not self.m > 0:
            raise ConfigError("mass m must be positive (massless zero mode unsupported)")
        g00 = np.asarray(self.g00, dtype=float)
        h = np.asarray(self.h, dtype=float)
        if g00.ndim != 1 or g00.shape != h.shape or g00.size < 4:
            raise ConfigError("g00 and h must be 1-d samples of equal length >= 4")
        if np.any(g00 <= 0) or np.any(h <= 0):
            raise ConfigError("g00 and h must be positive")
        g00.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "g00", g00)
        object.__setattr__(self, "h", h)

    @property
    def G(self) -> int:
        return self.g00.size

    @property
    def dx(self) -> float:
        return self.L / self.G

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.G) * self.dx

    @classmethod
    def cylinder(cls, L: float, m: float, G: int) -> "StaticGeometry":
        ones = np.ones(int(G))
        return cls(L, m, ones, ones.copy(), ultrastatic=True)

    @classmethod
    def from_functions(cls, L, m, G, g00=None, h=None) -> "StaticGeometry":
        x = np.arange(int(G)) * L / G
        gv = np.ones(G) if g00 is None else np.asarray(g00(x), float) * np.ones(G)
        hv = np.ones(G) if h is None else np.asarray(h(x), float) * np.ones(G)
        return cls(L, m, gv, hv, ultrastatic=g00 is None and h is None)

    @classmethod
    def from_dict(cls, d) -> "StaticGeometry":
        try:
            L, m, G = float(d["L"]), float(d["m"]), int(d["grid"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"geometry: missing or invalid field ({exc})") from None
        if G < 4:
            raise ConfigError("geometry.grid must be >= 4")

        def field_of(name):
            v = d.get(name, "ultrastatic")
            if v == "ultrastatic":
                return np.ones(G), True
            arr = np.asarray(v, dtype=float)
            if arr.shape != (G,):
                raise ConfigError(f"geometry.{name} must have {G} samples")
            return arr, False

        g00, u1 = field_of("g00")
        h, u2 = field_of("h")
        return cls(L, m, g00, h, ultrastatic=u1 and u2)

    def to_dict(self):
        d = {"L": self.L, "m": self.m, "grid": self.G}
        if self.ultrastatic:
            d["g00"] = "ultrastatic"
            d["h"] = "ultrastatic"
        else:
            d["g00"] = self.g00.tolist()
            d["h"] = self.h.tolist()
        return d


def load_geometry(path) -> StaticGeometry:
    try:
        with open(path) as fh:
            return StaticGeometry.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read geometry {path}: {exc}") from None


def _fourier_interp(samples, L, x, deriv=False):
    """Trigonometric interpolation of periodic samples (last axis) at points x."""
    samples = np.asarray(samples)
    G = samples.shape[-1]
    coef = np.fft.fft(samples, axis=-1) / G
    freqs = np.fft.fftfreq(G, d=1.0 / G)
    if G % 2 == 0:
        # split the Nyquist term symmetrically so real data stays real
        nyq = G // 2
        coef = np.concatenate([coef[..., :nyq], 0.5 * coef[..., nyq:nyq + 1],
                               coef[..., nyq + 1:], 0.5 * coef[..., nyq:nyq + 1]], axis=-1)
        freqs = np.concatenate([freqs[:nyq], [nyq], freqs[nyq + 1:], [-nyq]])
    k = 2 * np.pi * freqs / L
    phase = np.exp(1j * np.outer(k, np.atleast_1d(x)))
    if deriv:
        coef = coef * (1j * k)
    return coef @ phase


@dataclass(frozen=True)
class ModeCatalog:
    """Frequencies and mode samples of K on a periodic grid.

    Attributes
    ----------
    omegas : (J,) ascending frequencies
    u : (J, G) complex samples, orthonormal for sum conj(u_j) u_k w dx
    du : (J, G) spatial derivatives (exact for the cylinder, 4th-order FD otherwise)
    provenance : 'analytic-cylinder' or 'numeric-SL'
    wavenumbers : (J,) integers n_j (cylinder only, else None)
    """

    L: float
    m: float
    omegas: np.ndarray
    u: np.ndarray
    du: np.ndarray
    g00: np.ndarray
    h: np.ndarray
    provenance: str
    wavenumbers: np.ndarray | None = None
    residuals: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("omegas", "u", "du", "g00", "h"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def J(self) -> int:
        return self.omegas.size

    @property
    def G(self) -> int:
        return self.g00.size

    @property
    def dx(self) -> float:
        return self.L / self.G

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.G) * self.dx

    @property
    def weight(self) -> np.ndarray:
        return np.sqrt(self.h / self.g00)

    @property
    def sqrt_h(self) -> np.ndarray:
        return np.sqrt(self.h)

    @property
    def ultrastatic(self) -> bool:
        return bool(np.all(self.g00 == 1.0) and np.all(self.h == 1.0))

    @property
    def is_cylinder(self) -> bool:
        return self.provenance == "analytic-cylinder"

    def check_mode(self, j):
        j = int(j)
        if not 0 <= j < self.J:
            raise ConfigError(f"mode index {j} outside catalog (J = {self.J})")
        return j

    def _grid_index(self, x):
        x = np.atleast_1d(np.asarray(x, float))
        pos = np.mod(x, self.L) / self.dx
        idx = np.rint(pos).astype(int) % self.G
        on_grid = np.abs(pos - np.rint(pos)) < 1e-9
        return idx, on_grid

    def mode_values(self, x, modes=None):
        """u_j(x) for the selected modes at arbitrary points: (len(modes), len(x))."""
        sel = slice(None) if modes is None else np.asarray(modes, int)
        x = np.atleast_1d(np.asarray(x, float))
        if self.is_cylinder:
            k = 2 * np.pi * self.wavenumbers[sel] / self.L
            return np.exp(1j * np.outer(k, x)) / np.sqrt(self.L)
        idx, on_grid = self._grid_index(x)
        if np.all(on_grid):
            return self.u[sel][:, idx]
        return _fourier_interp(self.u[sel], self.L, x)

    def mode_derivs(self, x, modes=None):
        sel = slice(None) if modes is None else np.asarray(modes, int)
        x = np.atleast_1d(np.asarray(x, float))
        if self.is_cylinder:
            k = 2 * np.pi * self.wavenumbers[sel] / self.L
            return 1j * k[:, None] * np.exp(1j * np.outer(k, x)) / np.sqrt(self.L)
        idx, on_grid = self._grid_index(x)
        if np.all(on_grid):
            return self.du[sel][:, idx]
        return _fourier_interp(self.du[sel], self.L, x)

    def metric_at(self, x):
        """(g00(x), h(x)) at arbitrary points."""
        x = np.atleast_1d(np.asarray(x, float))
        if self.ultrastatic:
            return np.ones_like(x), np.ones_like(x)
        idx, on_grid = self._grid_index(x)
        if np.all(on_grid):
            return self.g00[idx], self.h[idx]
        return (_fourier_interp(self.g00, self.L, x).real,
                _fourier_interp(self.h, self.L, x).real)

    def gram(self) -> np.ndarray:
        """Matrix of weighted inner products <u_j, u_k>_w on the grid."""
        wu = self.u * (self.weight * self.dx)
        return self.u.conj() @ wu.T

    def orthonormality_residual(self) -> float:
        return float(np.abs(self.gram() - np.eye(self.J)).max()) if self.J else 0.0

    def truncated(self, J: int) -> "ModeCatalog":
        J = int(J)
        return ModeCatalog(self.L, self.m, self.omegas[:J], self.u[:J], self.du[:J], self.g00,
                           self.h, self.provenance,
                           None if self.wavenumbers is None else self.wavenumbers[:J],
                           None if self.residuals is None else self.residuals[:J])


def cylinder_wavenumbers(J: int) -> np.ndarray:
    """n = 0, +1, -1, +2, -2, ... which is the (omega, |n|, sign) order."""
    j = np.arange(int(J))
    mag = (j + 1) // 2
    return np.where(j % 2 == 1, mag, -mag)


def build_cylinder_catalog(L: float, m: float, J: int, G: int | None = None) -> ModeCatalog:
    """Closed-form modes e^{2 pi i n x / L} / sqrt(L) of the ultrastatic cylinder."""
    if not L > 0:
        raise ConfigError("L must be positive")
    if not m > 0:
        raise ConfigError("m must be positive (massless zero mode unsupported)")
    if int(J) < 1:
        raise ConfigError("J must be >= 1")
    J = int(J)
    n = cylinder_wavenumbers(J)
    k = 2 * np.pi * n / L
    omegas = np.sqrt(m * m + k * k)
    if G is None:
        G = max(8 * J, 64)
    x = np.arange(int(G)) * L / G
    u = np.exp(1j * np.outer(k, x)) / np.sqrt(L)
    du = 1j * k[:, None] * u
    ones = np.ones(int(G))
    return ModeCatalog(float(L), float(m), omegas, u, du, ones, ones.copy(),
                       "analytic-cylinder", n, np.zeros(J))


def _fd4_derivative(u, dx):
    return (-np.roll(u, -2, axis=-1) + 8 * np.roll(u, -1, axis=-1)
            - 8 * np.roll(u, 1, axis=-1) + np.roll(u, 2, axis=-1)) / (12 * dx)


def sl_operator(geom: StaticGeometry):
    """Stiffness matrix A and weight diagonal W with K = W^{-1} A (2nd-order FD)."""
    G, dx = geom.G, geom.dx
    p = np.sqrt(geom.g00 / geom.h)
    p_half = 0.5 * (p + np.roll(p, -1))  # p at x_{i+1/2}
    main = (p_half + np.roll(p_half, 1)) / dx**2 + geom.m**2 * np.sqrt(geom.g00 * geom.h)
    A = np.diag(main)
    i = np.arange(G)
    A[i, (i + 1) % G] -= p_half / dx**2
    A[(i + 1) % G, i] -= p_half / dx**2
    W = np.sqrt(geom.h / geom.g00)
    return A, W


def build_sl_catalog(geom: StaticGeometry, J: int, residual_tol: float = 1e-8) -> ModeCatalog:
    """Lowest J eigenpairs of K by a periodic finite-difference generalized eigenproblem."""
    J = int(J)
    if J < 1:
        raise ConfigError("J must be >= 1")
    if geom.G < 8 * J:
        raise ConfigError(f"grid too coarse: G = {geom.G} < 8 J = {8 * J}")
    A, W = sl_operator(geom)
    try:
        evals, vecs = scipy.linalg.eigh(A, np.diag(W), subset_by_index=[0, J - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise CertificationError(f"eigensolver failed: {exc}") from None
    if np.any(evals <= 0):
        raise CertificationError("non-positive eigenvalue in Sturm-Liouville problem")
    dx = geom.dx
    norms = np.sqrt(np.sum(vecs**2 * W[:, None], axis=0) * dx)
    vecs = vecs / norms
    peak = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[peak, np.arange(J)])
    u = vecs.T.astype(complex)
    # relative residual of K u = omega^2 u in the weighted norm
    Ku = (A @ vecs) / W[:, None]
    diff = Ku - vecs * evals
    res = np.sqrt(np.sum(diff**2 * W[:, None], axis=0) * dx) / evals
    if res.max() > residual_tol:
        raise CertificationError(f"eigen-residual {res.max():.3e} exceeds {residual_tol:.1e}")
    du = _fd4_derivative(u, dx)
    return ModeCatalog(geom.L, geom.m, np.sqrt(evals), u, du, geom.g00, geom.h,
                       "numeric-SL", None, res)


def build_catalog(geom: StaticGeometry, J: int) -> ModeCatalog:
    """Analytic backend for ultrastatic geometry, finite differences otherwise."""
    if geom.ultrastatic:
        return build_cylinder_catalog(geom.L, geom.m, J, geom.G)
    return build_sl_catalog(geom, J)


def symplectic_check(cat: ModeCatalog) -> float:
    """max_j |2 sigma(Re phi_j, Im phi_j) + 1| for the normalized mode solutions at t = 0.

    sigma(u, v) = sum sqrt(h) (u e0 v - v e0 u) dx with e0 = g00^{-1/2} d/dt.
    """
    if cat.J == 0:
        return 0.0
    c = 1.0 / np.sqrt(2 * cat.omegas)[:, None]
    phi = c * cat.u
    dphi = -1j * cat.omegas[:, None] * phi
    e0 = 1.0 / np.sqrt(cat.g00)
    re, im = phi.real, phi.imag
    dre, dim = dphi.real, dphi.imag
    sigma = np.sum(cat.sqrt_h * (re * e0 * dim - im * e0 * dre), axis=1) * cat.dx
    return float(np.abs(2 * sigma + 1).max())


def eigen_residual(cat: ModeCatalog, geom: StaticGeometry | None = None) -> float:
    """Worst relative residual ||K u - omega^2 u||_w / omega^2 of the discrete operator."""
    if geom is None:
        geom = StaticGeometry(cat.L, cat.m, cat.g00, cat.h)
    A, W = sl_operator(geom)
    Ku = (cat.u @ A.T) / W
    diff = Ku - cat.omegas[:, None] ** 2 * cat.u
    res = np.sqrt(np.sum(np.abs(diff) ** 2 * W, axis=1) * cat.dx) / cat.omegas**2
    return float(res.max())


def export_catalog_csv(cat: ModeCatalog, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        G = cat.G
        wr.writerow(["j", "n", "omega"] + [f"re_u{i}" for i in range(G)] + [f"im_u{i}" for i in range(G)])
        for j in range(cat.J):
            n = "" if cat.wavenumbers is None else int(cat.wavenumbers[j])
            wr.writerow([j, n, repr(float(cat.omegas[j]))]
                        + [repr(float(v)) for v in cat.u[j].real]
                        + [repr(float(v)) for v in cat.u[j].imag])


def catalog_summary(cat: ModeCatalog) -> dict:
    return {
        "provenance": cat.provenance,
        "L": cat.L,
        "m": cat.m,
        "J": cat.J,
        "G": cat.G,
        "orthonormality_residual": cat.orthonormality_residual(),
        "symplectic_residual": symplectic_check(cat),
        "max_eigen_residual": float(np.max(cat.residuals)) if cat.residuals is not None and cat.J else 0.0,
    }
