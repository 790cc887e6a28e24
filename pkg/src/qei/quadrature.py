"""Gauss-Legendre helpers and the smooth bump window family.

The window is g(t) = A * b_a((t - c) / s) with b_a(y) = exp(-a / (1 - y^2))
on |y| < 1.  Its Fourier transform (convention ghat(u) = int g(t) e^{iut} dt)
factors as A s e^{iuc} bhat_a(us), so every window quantity reduces to a
handful of reference integrals of b_a that are computed once and cached.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy.linalg import eigvalsh_tridiagonal

from .errors import CertificationError


@lru_cache(maxsize=64)
def gauss_legendre(n: int):
    """Nodes and weights on [-1, 1], cached and read-only.

    Golub-Welsch on the tridiagonal Jacobi matrix plus one Newton polish;
    same recipe as numpy's leggauss but O(n^2), which matters for n ~ 2000.
    """
    n = int(n)
    if n <= 100:
        x, w = np.polynomial.legendre.leggauss(n)
    else:
        k = np.arange(1, n)
        x = eigvalsh_tridiagonal(np.zeros(n), k / np.sqrt(4.0 * k * k - 1.0))
        c = np.zeros(n + 1)
        c[-1] = 1.0
        dc = legendre.legder(c)
        x = x - legendre.legval(x, c) / legendre.legval(x, dc)
        df = legendre.legval(x, dc)
        fm = legendre.legval(x, c[1:])
        fm /= np.abs(fm).max()
        df /= np.abs(df).max()
        w = 1.0 / (fm * df)
        w = 0.5 * (w + w[::-1])
        x = 0.5 * (x - x[::-1])
        w *= 2.0 / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gl_interval(a: float, b: float, n: int):
    x, w = gauss_legendre(n)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


def bump_profile_values(y, a: float = 1.0):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1.0
    yi = y[inside]
    out[inside] = np.exp(-a / (1.0 - yi * yi))
    return out


def bump_profile_derivative(y, a: float = 1.0):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1.0
    yi = y[inside]
    d = 1.0 - yi * yi
    out[inside] = np.exp(-a / d) * (-2.0 * a * yi / (d * d))
    return out


_BASE_NODES = 160
_PANEL = 0.5
_PANEL_NODES = 16
_TAIL_FLOOR = 1e-28


class BumpProfile:
    """Reference integrals of b_a for one sharpness a.

    Holds int b, int b^2, the transform bhat(v) = int b(y) cos(vy) dy (b is
    even so the transform is real) and the tail B(y) = int_y^inf bhat(v)^2 dv
    tabulated on panels.
    """

    def __init__(self, a: float = 1.0):
        if not a > 0:
            raise ValueError("bump sharpness must be positive")
        self.a = float(a)
        x, w = gauss_legendre(800)
        b = bump_profile_values(x, self.a)
        self.integral = float(w @ b)
        self.l2sq = float(w @ (b * b))
        x2, w2 = gauss_legendre(400)
        b2 = bump_profile_values(x2, self.a)
        err = abs(float(w2 @ b2) - self.integral) + abs(float(w2 @ (b2 * b2)) - self.l2sq)
        if err > 1e-13:
            raise CertificationError(f"bump integrals not converged (diff {err:.2e})")
        self._build_tail()

    @staticmethod
    def _nodes_for(vmax: float) -> int:
        # quantized to a short ladder so the node cache is reused
        need = _BASE_NODES + 1.1 * vmax
        n = 256
        while n < need:
            n = n * 3 // 2 if (n & (n - 1)) == 0 else n * 4 // 3
        return n

    def transform(self, v):
        """bhat_a(v) for real v, vectorized; node count grows with max |v|."""
        v = np.abs(np.asarray(v, dtype=float))
        flat = v.ravel()
        out = np.empty_like(flat)
        if flat.size == 0:
            return out.reshape(v.shape)
        # bucket by required node count so large |v| do not slow small ones
        order = np.argsort(flat)
        edges = [0.0, 50.0, 200.0, 500.0, 1000.0, 2000.0, np.inf]
        for lo, hi in zip(edges[:-1], edges[1:]):
            sel = order[(flat[order] >= lo) & (flat[order] < hi)]
            if sel.size == 0:
                continue
            vm = float(flat[sel].max())
            x, w = gauss_legendre(self._nodes_for(vm))
            wb = w * bump_profile_values(x, self.a)
            for chunk in np.array_split(sel, max(1, sel.size // 2048)):
                out[chunk] = np.cos(np.outer(flat[chunk], x)) @ wb
        return out.reshape(v.shape)

    def _build_tail(self):
        # panel integrals of bhat^2 from 0 until the integrand is negligible
        xs, ws = gauss_legendre(_PANEL_NODES)
        panels = []
        v0 = 0.0
        quiet = 0
        while True:
            block = v0 + _PANEL * (np.arange(64)[:, None] + 0.5 * (xs[None, :] + 1.0))
            vals = self.transform(block) ** 2
            contrib = (vals @ ws) * 0.5 * _PANEL
            panels.extend(contrib.tolist())
            v0 += 64 * _PANEL
            if vals[-8:].max() < _TAIL_FLOOR * max(self.l2sq, 1.0):
                quiet += 1
                if quiet >= 2:
                    break
            if v0 > 3000:
                break
        panels = np.asarray(panels)
        self.vmax = v0
        # B at panel left edges: B(k*P) = sum_{i>=k} panels[i]
        self._edges_tail = np.concatenate([np.cumsum(panels[::-1])[::-1], [0.0]])
        self.tail_zero = float(self._edges_tail[0])
        # Parseval: int_0^inf bhat^2 = pi * int b^2
        self.tail_error = abs(self.tail_zero - np.pi * self.l2sq)
        if self.tail_error > 1e-12 * max(1.0, np.pi * self.l2sq):
            raise CertificationError(f"bump tail table fails Parseval check ({self.tail_error:.2e})")

    def cutoff(self, rel: float = 1e-22) -> float:
        """Smallest panel edge v with B(v) <= rel * B(0)."""
        k = int(np.argmax(self._edges_tail <= rel * self.tail_zero))
        return k * _PANEL

    def tail(self, y):
        """B(y) = int_y^inf bhat(v)^2 dv for y >= 0 (vectorized)."""
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise ValueError("tail defined for y >= 0; use window-level reflection")
        flat = y.ravel()
        out = np.zeros_like(flat)
        inside = flat < self.vmax
        yi = flat[inside]
        k = np.floor(yi / _PANEL).astype(int)
        right = (k + 1) * _PANEL
        xs, ws = gauss_legendre(_PANEL_NODES)
        half = 0.5 * (right - yi)
        nodes = 0.5 * (right + yi)[:, None] + half[:, None] * xs[None, :]
        partial = (self.transform(nodes) ** 2 @ ws) * half
        out[inside] = partial + self._edges_tail[k + 1]
        return out.reshape(y.shape)


@lru_cache(maxsize=16)
def bump_profile(a: float = 1.0) -> BumpProfile:
    return BumpProfile(float(a))


@dataclass(frozen=True)
class BumpWindow:
    """Smooth compactly supported window A * b_a((t - center) / width).

    ``width`` is the half-width of the support [center - width, center + width].
    """

    center: float = 0.0
    width: float = 1.0
    amplitude: float = 1.0
    sharpness: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("window width must be positive")
        if not self.sharpness > 0:
            raise ValueError("window sharpness must be positive")

    @property
    def profile(self) -> BumpProfile:
        return bump_profile(self.sharpness)

    @property
    def support(self):
        return self.center - self.width, self.center + self.width

    def __call__(self, t):
        return self.amplitude * bump_profile_values((np.asarray(t, float) - self.center) / self.width, self.sharpness)

    def derivative(self, t):
        y = (np.asarray(t, float) - self.center) / self.width
        return self.amplitude / self.width * bump_profile_derivative(y, self.sharpness)

    def integral(self) -> float:
        return self.amplitude * self.width * self.profile.integral

    def l1_norm(self) -> float:
        return abs(self.integral())

    def square_l1(self) -> float:
        """||g^2||_{L^1} = int g^2 dt."""
        return self.amplitude**2 * self.width * self.profile.l2sq

    def ft(self, u):
        """ghat(u) = int g(t) e^{iut} dt."""
        u = np.asarray(u, dtype=float)
        return self.amplitude * self.width * np.exp(1j * u * self.center) * self.profile.transform(u * self.width)

    def ft_quadrature(self, u, n: int | None = None):
        """ghat by direct Gauss-Legendre quadrature over the support, with node doubling.

        Returns (values, error) where error is the node-doubling difference.
        """
        u = np.atleast_1d(np.asarray(u, dtype=float))
        lo, hi = self.support
        if n is None:
            n = int(_BASE_NODES + 1.1 * self.width * (np.abs(u).max() if u.size else 0.0))

        def run(nn):
            t, w = gl_interval(lo, hi, nn)
            return np.exp(1j * np.outer(u, t)) @ (w * self(t))

        v1, v2 = run(n), run(2 * n)
        return v2, float(np.max(np.abs(v2 - v1))) if u.size else 0.0

    def tail_sq(self, zeta):
        """I(zeta) = int_{u > zeta} |ghat(u)|^2 du for any real zeta."""
        zeta = np.asarray(zeta, dtype=float)
        p = self.profile
        scale = self.amplitude**2 * self.width
        pos = scale * p.tail(np.abs(zeta) * self.width)
        total = 2.0 * np.pi * self.square_l1()
        return np.where(zeta >= 0, pos, total - pos)

    def tail_error(self) -> float:
        """Absolute error bound carried by tail_sq values."""
        return self.amplitude**2 * self.width * (self.profile.tail_error + 1e-15)

    def scaled(self, lam: float) -> "BumpWindow":
        """The window t -> g(lam * t)."""
        if not lam > 0:
            raise ValueError("scale factor must be positive")
        return BumpWindow(self.center / lam, self.width / lam, self.amplitude, self.sharpness)

    def to_dict(self):
        return {"kind": "bump", "center": self.center, "width": self.width,
                "amplitude": self.amplitude, "sharpness": self.sharpness}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "bump")
        if kind != "bump":
            raise ValueError(f"unknown window kind {kind!r}")
        return cls(float(d.get("center", 0.0)), float(d.get("width", 1.0)),
                   float(d.get("amplitude", 1.0)), float(d.get("sharpness", 1.0)))


def integrate_certified(f, lo: float, hi: float, n0: int = 32, rtol: float = 1e-10,
                        atol: float = 1e-14, nmax: int = 1 << 15):
    """Gauss-Legendre integral of a vectorized f with step-halving acceptance.

    The interval is split into panels; the panel count doubles until two
    successive estimates agree.  Returns (value, error).
    """
    x, w = gauss_legendre(16)
    panels = max(1, n0 // 16)
    prev = None
    while True:
        edges = np.linspace(lo, hi, panels + 1)
        half = 0.5 * np.diff(edges)
        mids = 0.5 * (edges[1:] + edges[:-1])
        t = (mids[:, None] + half[:, None] * x[None, :]).ravel()
        wt = (half[:, None] * w[None, :]).ravel()
        val = np.asarray(f(t)) @ wt
        if prev is not None:
            err = np.max(np.abs(val - prev))
            if err <= max(atol, rtol * np.max(np.abs(val))):
                return val, float(err)
        if panels * 16 > nmax:
            raise CertificationError(f"quadrature did not converge on [{lo}, {hi}]")
        prev = val
        panels *= 2
