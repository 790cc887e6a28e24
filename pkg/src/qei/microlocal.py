"""Windowed Fourier decay probes of two-point functions and Hadamard-cone geometry."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import CertificationError, ConfigError
from .modes import ModeCatalog
from .qwei import pullback_energy_spectrum
from .quadrature import BumpWindow, gl_interval
from .states import Ground, StateSpec, two_point_data

NU_REGULAR = 3.0
NU_SINGULAR = 1.5
DEFAULT_LAMBDAS = np.geomspace(2.0, 64.0, 12)
PROBE_SHARPNESS = 6.0


# -- geometry -------------------------------------------------------------

@dataclass
class ConeSpec:
    """Null-cone data at a point of a static 1+1 metric plus a singular set in T*(M x M).

    The singular set is a union of open convex cones, each the positive span of
    the columns of a 4 x m generator matrix.
    """

    g00: float = 1.0
    h: float = 1.0
    components: list = field(default_factory=list)
    name: str = "custom"

    @property
    def slope(self) -> float:
        return float(np.sqrt(self.h / self.g00))

    def null_generators(self):
        """Future-pointing null covectors (1, +c) and (1, -c)."""
        c = self.slope
        return [np.array([1.0, c]), np.array([1.0, -c])]

    def norm2(self, k) -> float:
        """g^{ab} k_a k_b."""
        z, xi = k
        return float(z * z / self.g00 - xi * xi / self.h)

    def is_null(self, k, tol: float = 1e-12) -> bool:
        k = np.asarray(k, float)
        scale = max(1.0, float(k @ k))
        return abs(self.norm2(k)) <= tol * scale

    def is_future_null(self, k, tol: float = 1e-12) -> bool:
        return self.is_null(k, tol) and k[0] > 0

    @classmethod
    def hadamard(cls, g00=1.0, h=1.0):
        """{(k; -k') : k, k' future null}: contains the two-point wavefront set."""
        cone = cls(g00, h, name="hadamard")
        for ka in cone.null_generators():
            for kb in cone.null_generators():
                cone.components.append(np.column_stack([np.r_[ka, 0, 0], np.r_[0, 0, -kb]]))
        return cone

    @classmethod
    def commutator(cls, g00=1.0, h=1.0):
        """(N+ x 0) u (0 x N-): the set controlling the equal-time pull-back."""
        cone = cls(g00, h, name="commutator")
        for k in cone.null_generators():
            cone.components.append(np.r_[k, 0, 0][:, None])
            cone.components.append(np.r_[0, 0, -k][:, None])
        return cone

    @classmethod
    def custom(cls, generators, g00=1.0, h=1.0):
        comps = [np.atleast_2d(np.asarray(gm, float)).T for gm in generators]
        return cls(g00, h, comps, "custom")

    @classmethod
    def at(cls, cat: ModeCatalog, x: float, kind: str = "hadamard"):
        g00, h = cat.metric_at(np.array([float(x)]))
        return {"hadamard": cls.hadamard, "commutator": cls.commutator}[kind](float(g00[0]), float(h[0]))


def cone_classify(cone: ConeSpec, ell, base=(0.0, 0.0, 0.0, 0.0), L: float | None = None,
                  tol: float = 1e-9) -> str:
    """Expected class of (base, ell) for the two-point wavefront set.

    Singular iff ell = (k; -k') with k future null, k' = k, and the second point
    on the null geodesic through the first with cotangent k (mod L in space).
    """
    ell = np.asarray(ell, float)
    if ell.shape != (4,) or not np.any(ell):
        raise ConfigError("direction must be a nonzero 4-vector")
    ell = ell / np.linalg.norm(ell)
    k, kp = ell[:2], -ell[2:]
    if np.linalg.norm(k - kp) > tol or not cone.is_future_null(k, 1e-9):
        return "regular"
    t, x, tp, xp = map(float, base)
    # tangent of the null geodesic is g^{-1} k = (zeta / g00, -xi / h)
    v = np.array([k[0] / cone.g00, -k[1] / cone.h])
    s = (tp - t) / v[0]
    dx = xp - x - s * v[1]
    if L is not None:
        dx = (dx + L / 2) % L - L / 2
    return "singular" if abs(dx) <= tol else "regular"


def _conormal_basis(descriptor: str) -> np.ndarray:
    """Columns spanning the conormal fibre in coordinates (zeta, xi; zeta', xi')."""
    e = np.eye(4)
    if descriptor == "Gamma_x":
        return e[:, [1, 2, 3]]
    if descriptor == "gamma_x2":
        return e[:, [1, 3]]
    if descriptor == "gamma_t0":
        return np.column_stack([e[:, 0], e[:, 2], e[:, 1] - e[:, 3]])
    raise ConfigError(f"unknown map descriptor {descriptor!r}")


DEFAULT_CONES = {"Gamma_x": "hadamard", "gamma_x2": "hadamard", "gamma_t0": "commutator"}


@dataclass
class TransversalityResult:
    descriptor: str
    cone: str
    disjoint: bool
    witness: np.ndarray | None


def conormal_transversality(descriptor: str, cone: ConeSpec | None = None) -> TransversalityResult:
    """Does the conormal bundle of the map meet the cone away from zero?

    For each convex component {G c : c > 0} this is the LP feasibility question
    P G c = 0, c >= 1, with P the projector onto the conormal complement.
    """
    B = _conormal_basis(descriptor)
    if cone is None:
        cone = ConeSpec.hadamard() if DEFAULT_CONES[descriptor] == "hadamard" else ConeSpec.commutator()
    Q, _ = np.linalg.qr(B)
    P = np.eye(4) - Q @ Q.T
    for G in cone.components:
        m = G.shape[1]
        res = linprog(np.zeros(m), A_eq=P @ G, b_eq=np.zeros(4), bounds=[(1.0, None)] * m, method="highs")
        if res.status == 0:
            w = G @ res.x
            w = w / np.linalg.norm(w)
            return TransversalityResult(descriptor, cone.name, False, w)
    return TransversalityResult(descriptor, cone.name, True, None)


def sample_cone(cone: ConeSpec, rng, n: int = 1000) -> np.ndarray:
    """Random elements of the cone, one per row."""
    out = np.empty((n, 4))
    for i in range(n):
        G = cone.components[int(rng.integers(len(cone.components)))]
        out[i] = G @ rng.uniform(0.01, 10.0, G.shape[1])
    return out


def in_conormal(descriptor: str, v, tol: float = 1e-12) -> bool:
    B = _conormal_basis(descriptor)
    coef, *_ = np.linalg.lstsq(B, v, rcond=None)
    return bool(np.linalg.norm(B @ coef - v) <= tol * max(1.0, np.linalg.norm(v)))


# -- probed distributions ------------------------------------------------------

class ModeSumTwoPoint:
    """w(p, p') = omega(Phi(p) Phi(p')) of a quasifree state from its mode moments."""

    def __init__(self, cat: ModeCatalog, state: StateSpec | None = None, rtol: float = 1e-10):
        state = Ground() if state is None else state
        data = two_point_data(state, cat)
        self.cat, self.state, self.rtol = cat, state, rtol
        self.n, self.s = data.n, data.s
        self.om = cat.omegas
        if cat.is_cylinder:
            self.kmax = float(np.max(np.abs(2 * np.pi * cat.wavenumbers / cat.L)))
        else:
            self.kmax = float(np.pi * cat.G / cat.L)

    @property
    def J(self):
        return self.cat.J

    def _space(self, win: BumpWindow, mu: float, conj: bool):
        """int chi(y) u_j(y) e^{i mu y} dy (or conj u_j), node-doubled."""
        lo, hi = win.support
        n = int(160 + 1.1 * win.width * (abs(mu) + self.kmax))

        def run(nn):
            y, w = gl_interval(lo, hi, nn)
            u = self.cat.mode_values(y)
            if conj:
                u = np.conj(u)
            return u @ (w * win(y) * np.exp(1j * mu * y))

        v1, v2 = run(n), run(2 * n)
        err = float(np.max(np.abs(v2 - v1)))
        if err > self.rtol * max(1.0, float(np.max(np.abs(v2)))):
            raise CertificationError(f"spatial window quadrature not converged ({err:.2e})")
        return v2

    def _time(self, win: BumpWindow, nu):
        vals, err = win.ft_quadrature(nu)
        if err > self.rtol * max(1.0, float(np.max(np.abs(vals)))):
            raise CertificationError(f"temporal window quadrature not converged ({err:.2e})")
        return vals

    def pairing(self, base, ell, half_width: float, lam: float, sharpness: float = PROBE_SHARPNESS) -> complex:
        """w(chi e^{i lam <ell, .>}) with chi a product bump centered at base."""
        t, x, tp, xp = base
        z, xi, zp, xip = ell
        wt, wx = BumpWindow(t, half_width, 1.0, sharpness), BumpWindow(x, half_width, 1.0, sharpness)
        wtp, wxp = BumpWindow(tp, half_width, 1.0, sharpness), BumpWindow(xp, half_width, 1.0, sharpness)
        om = self.om
        norm = 1.0 / (2 * om)
        TP1, TQ1 = self._time(wt, lam * z - om), self._time(wt, lam * z + om)
        TP2, TQ2 = self._time(wtp, lam * zp - om), self._time(wtp, lam * zp + om)
        XP1, XQ1 = self._space(wx, lam * xi, False), self._space(wx, lam * xi, True)
        XP2, XQ2 = self._space(wxp, lam * xip, False), self._space(wxp, lam * xip, True)
        P1, Q1, P2, Q2 = TP1 * XP1, TQ1 * XQ1, TP2 * XP2, TQ2 * XQ2
        val = np.sum(norm * ((1 + self.n) * P1 * Q2 + self.n * Q1 * P2 + self.s * P1 * P2 + np.conj(self.s) * Q1 * Q2))
        return complex(val)

    def lambda_cap(self, half_width: float) -> float:
        return self.J / (4 * half_width)


class GaussianBlob:
    """Smooth control: prod_coords exp(-(y - c - offset)^2) around the base point."""

    def __init__(self, offset: float = 0.1):
        self.offset = offset

    def pairing(self, base, ell, half_width: float, lam: float, sharpness: float = PROBE_SHARPNESS) -> complex:
        out = 1.0 + 0j
        for c, l in zip(base, ell):
            win = BumpWindow(c, half_width, 1.0, sharpness)
            lo, hi = win.support
            n = int(160 + 1.1 * half_width * lam * abs(l))
            vals = []
            for nn in (n, 2 * n):
                y, w = gl_interval(lo, hi, nn)
                vals.append(np.sum(w * win(y) * np.exp(-(y - c - self.offset) ** 2 + 1j * lam * l * y)))
            out *= vals[1]
        return complex(out)

    def lambda_cap(self, half_width: float) -> float:
        return np.inf


# -- decay fit --------------------------------------------------------------

@dataclass
class DirectionProbe:
    base: tuple
    ell: np.ndarray
    half_width: float = 0.5
    sharpness: float = PROBE_SHARPNESS
    lambdas: np.ndarray = field(default_factory=lambda: DEFAULT_LAMBDAS.copy())
    magnitudes: np.ndarray | None = None
    nu: float | None = None
    residual: float | None = None
    classification: str | None = None
    predicted: str | None = None
    diagnostic: str = ""

    def __post_init__(self):
        ell = np.asarray(self.ell, float)
        if ell.shape != (4,) or not np.any(ell):
            raise ConfigError("probe direction must be a nonzero 4-vector")
        self.ell = ell / np.linalg.norm(ell)
        self.base = tuple(float(b) for b in self.base)
        self.lambdas = np.asarray(self.lambdas, float)
        if not self.half_width > 0:
            raise ConfigError("window half-width must be positive")

    def to_dict(self):
        return {"base": list(self.base), "ell": self.ell.tolist(), "half_width": self.half_width,
                "sharpness": self.sharpness, "nu": self.nu, "residual": self.residual,
                "class": self.classification, "predicted": self.predicted, "diagnostic": self.diagnostic}


def fit_decay(lambdas, mags, floor_rel: float = 1e-14):
    """Decay order nu from a least-squares fit of log|.| on log lambda over the upper half."""
    lambdas, mags = np.asarray(lambdas, float), np.asarray(mags, float)
    floor = floor_rel * mags[0] if mags[0] > 0 else floor_rel * mags.max()
    ok = mags > floor
    sel = ok & (lambdas >= lambdas[len(lambdas) // 2])
    if sel.sum() < 3:
        sel = ok
    if sel.sum() < 3:
        return np.inf, 0.0, "decayed below the noise floor"
    X, Y = np.log(lambdas[sel]), np.log(mags[sel])
    coef, res, *_ = np.polyfit(X, Y, 1, full=True)
    rms = float(np.sqrt(res[0] / sel.sum())) if res.size else 0.0
    return float(-coef[0]), rms, ""


def classify_nu(nu: float, nu_regular: float = NU_REGULAR, nu_singular: float = NU_SINGULAR) -> str:
    if nu >= nu_regular:
        return "regular"
    if nu <= nu_singular:
        return "singular"
    return "inconclusive"


def windowed_decay(u, probe: DirectionProbe, nu_regular: float = NU_REGULAR,
                   nu_singular: float = NU_SINGULAR) -> DirectionProbe:
    """Measure |u(chi e^{i lam <ell, .>})| on the lambda grid and classify by fitted decay."""
    lams = probe.lambdas
    cap = u.lambda_cap(probe.half_width)
    trimmed = bool(lams.max() > cap)
    if trimmed:
        keep = lams <= cap
        probe.diagnostic = f"lambda grid cut at {cap:.3g} by the mode cutoff"
        lams = lams[keep]
        probe.lambdas = lams
        if lams.size < 4:
            probe.magnitudes = np.array([])
            probe.nu, probe.residual, probe.classification = np.nan, np.nan, "inconclusive"
            return probe
    mags = np.array([abs(u.pairing(probe.base, probe.ell, probe.half_width, lam, probe.sharpness)) for lam in lams])
    probe.magnitudes = mags
    nu, rms, note = fit_decay(lams, mags)
    probe.nu, probe.residual = nu, rms
    if note:
        probe.diagnostic = (probe.diagnostic + "; " + note).strip("; ")
    # the thresholds only mean something on the full grid; a trimmed grid is pre-asymptotic
    probe.classification = "inconclusive" if trimmed else classify_nu(nu, nu_regular, nu_singular)
    return probe


FAN_COVECTORS = [(1, 1), (1, -1), (-1, 1), (-1, -1), (1, 0), (0, 1)]
BASE_PAIRS = [(0.0, 0.0, 0.0, 0.0), (0.0, 0.0, 1.0, 1.0), (0.0, 0.0, 0.0, np.pi)]


def direction_fan(size: int = 24):
    """First-slot covectors crossed with second-slot patterns (-k, k, reflected, 0)."""
    fan = []
    for z, x in FAN_COVECTORS:
        for pat in ((-z, -x), (z, x), (-z, x), (0, 0)):
            v = np.array((z, x) + pat, float)
            fan.append(v / np.linalg.norm(v))
    if size > len(fan):
        raise ConfigError(f"fan size at most {len(fan)}")
    return fan[:size]


@dataclass
class FanResult:
    probes: list
    matches: int
    contradictions: int
    inconclusive: int

    @property
    def total(self):
        return len(self.probes)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["base", "zeta", "xi", "zetap", "xip", "lambda", "magnitude"])
            for p in self.probes:
                b = " ".join(repr(v) for v in p.base)
                for lam, mag in zip(p.lambdas, p.magnitudes):
                    wr.writerow([b, *map(repr, p.ell.tolist()), repr(float(lam)), repr(float(mag))])

    def write_summary_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["base", "direction", "nu_fit", "class", "predicted"])
            for p in self.probes:
                wr.writerow([" ".join(repr(v) for v in p.base), " ".join(f"{v:.6f}" for v in p.ell),
                             repr(float(p.nu)), p.classification, p.predicted])


def run_fan(u, cone: ConeSpec, L: float | None, bases=BASE_PAIRS, fan_size: int = 24,
            half_width: float = 0.5, lambdas=None, nu_regular=NU_REGULAR, nu_singular=NU_SINGULAR) -> FanResult:
    """Probe every fan direction at every base pair and compare against cone_classify."""
    probes = []
    lams = DEFAULT_LAMBDAS if lambdas is None else np.asarray(lambdas, float)
    for base in bases:
        for ell in direction_fan(fan_size):
            p = windowed_decay(u, DirectionProbe(base, ell, half_width, lambdas=lams.copy()), nu_regular, nu_singular)
            p.predicted = cone_classify(cone, p.ell, base, L)
            probes.append(p)
    matches = sum(p.classification == p.predicted for p in probes)
    contra = sum(p.classification != "inconclusive" and p.classification != p.predicted for p in probes)
    inconc = sum(p.classification == "inconclusive" for p in probes)
    return FanResult(probes, matches, contra, inconc)


def spectrum_support_probe(cat: ModeCatalog, x: float = 0.0, reference=None) -> float:
    """Infimum of the support of the reference energy spectrum pulled back to the worldline at x."""
    spec = pullback_energy_spectrum(cat, x, reference)
    return float(spec.zeta[spec.weights > 0].min())
