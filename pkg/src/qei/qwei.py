"""Spectral measure of the pulled-back point-split energy density and the QWEI bound.

Along the static worldline through x the point-split density of a stationary
Gaussian reference is a finite sum of exponentials, so its Fourier transform
is atomic: atoms at zeta = omega_j (and at -omega_j for thermal references).
Then

    Q(u, x) = (1/2 pi^2) sum_{zeta_p < u} w_p
    q(g; x) = (1/2 pi^2) sum_p w_p int_{v > zeta_p} |ghat(v)|^2 dv

are exact up to the window transform quadrature.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .energy import energy_features, smeared_energy, tail_bound
from .errors import ConfigError
from .modes import ModeCatalog
from .quadrature import BumpWindow, gauss_legendre
from .states import KMS, Ground, StateSpec, kms_occupation, state_label

TWO_PI_SQ = 2 * np.pi**2
MERGE_RTOL = 1e-9


@dataclass(frozen=True)
class SpectralMeasure:
    zeta: np.ndarray
    weights: np.ndarray
    provenance: str = "analytic"

    def __post_init__(self):
        z = np.asarray(self.zeta, float)
        w = np.asarray(self.weights, float)
        if z.shape != w.shape:
            raise ValueError("atom locations and weights differ in shape")
        if z.size > 1 and np.any(np.diff(z) < 0):
            raise ValueError("atoms must be sorted ascending")
        object.__setattr__(self, "zeta", z)
        object.__setattr__(self, "weights", w)

    @property
    def size(self):
        return self.zeta.size

    def mass_below(self, u):
        """Total weight of atoms with zeta < u (strict), vectorized in u."""
        cum = np.concatenate([[0.0], np.cumsum(self.weights)])
        return cum[np.searchsorted(self.zeta, np.asarray(u, float), side="left")]

    def scaled(self, c: float) -> "SpectralMeasure":
        return SpectralMeasure(self.zeta, c * self.weights, self.provenance)


def merge_atoms(zeta, weights, rtol: float = MERGE_RTOL) -> SpectralMeasure:
    """Sort atoms and merge those closer than rtol * max(1, |zeta|)."""
    zeta = np.asarray(zeta, float)
    weights = np.asarray(weights, float)
    order = np.argsort(zeta, kind="stable")
    zeta, weights = zeta[order], weights[order]
    if zeta.size == 0:
        return SpectralMeasure(zeta, weights)
    gap = np.diff(zeta) > rtol * np.maximum(1.0, np.abs(zeta[1:]))
    group = np.concatenate([[0], np.cumsum(gap)])
    ng = group[-1] + 1
    w = np.bincount(group, weights=weights, minlength=ng)
    z = np.bincount(group, weights=zeta, minlength=ng) / np.bincount(group, minlength=ng)
    return SpectralMeasure(z, w)


def mode_atom_weights(cat: ModeCatalog, x: float) -> np.ndarray:
    """2 pi * (1/2) sum_c |V_cj(0, x)|^2 per mode: the positive-frequency atom weights."""
    if cat.is_cylinder:
        return np.pi * cat.omegas / cat.L
    V = energy_features(cat, np.zeros(1), np.array([float(x)]), np.arange(cat.J))[:, :, 0]
    return np.pi * np.sum(np.abs(V) ** 2, axis=0)


def _reference_atoms(cat, base, reference):
    if reference is None or isinstance(reference, Ground):
        return cat.omegas, base
    if isinstance(reference, KMS):
        nbar = kms_occupation(cat.omegas, reference.beta)
        return (np.concatenate([cat.omegas, -cat.omegas]),
                np.concatenate([base * (1 + nbar), base * nbar]))
    raise ConfigError("reference must be the ground state or a KMS state")


def pullback_energy_spectrum(cat: ModeCatalog, x: float, reference: StateSpec | None = None) -> SpectralMeasure:
    """Atomic Fourier transform of t -> T0((t,x),(0,x)) for a stationary reference."""
    base = mode_atom_weights(cat, x)
    z, w = _reference_atoms(cat, base, reference)
    return merge_atoms(z, w)


def integrated_spectrum(cat: ModeCatalog, reference: StateSpec | None = None, lapse: bool = False) -> SpectralMeasure:
    """Atoms of int dmu(x) [pulled-back T0]^ (optionally weighted by sqrt(g00))."""
    if cat.is_cylinder:
        base = np.pi * cat.omegas
    else:
        V = energy_features(cat, np.zeros(cat.G), cat.x, np.arange(cat.J))
        dens = np.pi * np.sum(np.abs(V) ** 2, axis=0)
        wts = cat.sqrt_h * cat.dx * (np.sqrt(cat.g00) if lapse else 1.0)
        base = dens @ wts
    z, w = _reference_atoms(cat, base, reference)
    return merge_atoms(z, w)


def Q_of(spec: SpectralMeasure, u):
    """Q(u) = (1/2 pi^2) * mass of (-inf, u)."""
    val = spec.mass_below(u) / TWO_PI_SQ
    return float(val) if np.ndim(val) == 0 else val


def integrated_Q(cat: ModeCatalog, u, reference: StateSpec | None = None, lapse: bool = False):
    """QQ(u) = int dmu Q(u, x); on the cylinder (1/2 pi) sum_{omega_n < u} omega_n."""
    return Q_of(integrated_spectrum(cat, reference, lapse), u)


def integrated_Q_by_grid(cat: ModeCatalog, u, reference: StateSpec | None = None):
    """Oracle route: spatial quadrature of per-point Q(u, x_i)."""
    u = np.asarray(u, float)
    total = np.zeros_like(u)
    for xi, wi in zip(cat.x, cat.sqrt_h * cat.dx):
        total = total + wi * Q_of(pullback_energy_spectrum(cat, xi, reference), u)
    return total


@dataclass
class QBound:
    value: float
    quadrature_error: float
    tail_bound: float
    warnings: list = field(default_factory=list)

    def __float__(self):
        return self.value


def q_bound(spec: SpectralMeasure, g: BumpWindow, tail: float = 0.0) -> QBound:
    """q(g) = int |ghat(u)|^2 Q(u) du = (1/2 pi^2) sum_p w_p int_{v > zeta_p} |ghat(v)|^2 dv."""
    if spec.size == 0:
        return QBound(0.0, 0.0, tail)
    I = g.tail_sq(spec.zeta)
    val = float(spec.weights @ I) / TWO_PI_SQ
    err = float(np.sum(np.abs(spec.weights)) * g.tail_error()) / TWO_PI_SQ
    warns = []
    if tail > max(1e-12, 1e-6 * abs(val)):
        warns.append(f"atom tail bound {tail:.2e} not negligible: window does not resolve the cutoff")
    return QBound(val, err, tail, warns)


def _missing_cylinder_omegas(cat: ModeCatalog, extra: int):
    nmax = int(np.max(np.abs(cat.wavenumbers))) if cat.J else 0
    cand = np.arange(-(nmax + extra), nmax + extra + 1)
    missing = cand[~np.isin(cand, cat.wavenumbers)]
    return np.sqrt(cat.m**2 + (2 * np.pi * missing / cat.L) ** 2)


def atom_tail_bound(cat: ModeCatalog, g: BumpWindow, x: float | None = None, integrated: bool = False,
                    extra: int = 2000) -> float:
    """Contribution to q (or int q dmu) of the atoms above the cutoff.

    Closed form on the cylinder; for other backends the spectrum is continued
    as a cylinder with gap omega_1, which is an estimate rather than a bound.
    """
    if cat.J == 0:
        return 0.0
    if cat.is_cylinder:
        om = _missing_cylinder_omegas(cat, extra)
    else:
        meff = cat.omegas[0]
        n0 = np.sqrt(max(cat.omegas[-1] ** 2 - meff**2, 0.0)) * cat.L / (2 * np.pi)
        n = np.floor(n0) + 1 + np.arange(extra)
        om = np.repeat(np.sqrt(meff**2 + (2 * np.pi * n / cat.L) ** 2), 2)
    w = np.pi * om * (1.0 if integrated else 1.0 / cat.L)
    if not cat.ultrastatic:
        w = w * float(np.max(1.0 / np.sqrt(cat.g00)) ** 2)
    return float(w @ g.tail_sq(om)) / TWO_PI_SQ


@dataclass
class Margin:
    state: str
    window: dict
    x: float
    lhs: float
    lhs_error: float
    q: float
    q_error: float
    tail_bound: float
    margin: float
    tol_num: float

    @property
    def passed(self) -> bool:
        return self.margin >= -self.tol_num

    def to_dict(self):
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def verify_static_qwei(state: StateSpec, cat: ModeCatalog, g: BumpWindow, x: float,
                       spectrum: SpectralMeasure | None = None, qb: QBound | None = None) -> Margin:
    """margin = int g^2 rho[state](t, x) dt + sqrt(g00(x)) q(g; x) relative to the ground state.

    q is built from the atoms below the cutoff only, which underestimates the
    bound; the reported margin is therefore conservative.

    The lapse factor converts the bound on the frame component :T: into a
    bound on rho = sqrt(g00) :T: along the coordinate-time worldline.
    """
    if qb is None:
        if spectrum is None:
            spectrum = pullback_energy_spectrum(cat, x)
        qb = q_bound(spectrum, g, atom_tail_bound(cat, g, x))
    lapse = float(np.sqrt(cat.metric_at([x])[0][0]))
    se = smeared_energy(state, cat, g, x)
    q = lapse * qb.value
    # both cutoff tails are sign-definite and only raise the true margin, so
    # they are reported but only the two quadrature certificates enter tol_num
    tol = se.quadrature_error + lapse * qb.quadrature_error
    return Margin(state_label(state), g.to_dict(), float(x), float(se.value), se.quadrature_error,
                  q, lapse * qb.quadrature_error, se.tail_bound + lapse * qb.tail_bound,
                  float(se.value) + q, tol)


# -- limiting constant -----------------------------------------------------

@dataclass
class GammaEstimate:
    value: float
    lambdas: list
    trace: list
    trace_via_QQ: list
    bound: float
    route_discrepancy: float

    def to_dict(self):
        return dict(self.__dict__)


def _trace_via_QQ(ispec: SpectralMeasure, g: BumpWindow, lam: float) -> float:
    """(1/||g^2||) int |ghat(u)|^2 QQ(lam u) du with the unscaled window.

    The step function QQ(lam u) is integrated panel by panel against |ghat|^2
    evaluated directly, so this route shares no code with q_bound of the
    scaled window beyond the transform itself.
    """
    umax = g.profile.cutoff(1e-22) / g.width
    panel = 0.5 / g.width
    grid = np.linspace(-umax, umax, int(np.ceil(2 * umax / panel)) + 1)
    cuts = ispec.zeta / lam
    edges = np.union1d(grid, cuts[np.abs(cuts) < umax])
    mids = 0.5 * (edges[1:] + edges[:-1])
    levels = np.asarray(Q_of(ispec, lam * mids), float)
    keep = levels != 0
    if not np.any(keep):
        return 0.0
    lo, hi, lev = edges[:-1][keep], edges[1:][keep], levels[keep]
    x, w = gauss_legendre(16)
    half = 0.5 * (hi - lo)
    nodes = 0.5 * (hi + lo)[:, None] + half[:, None] * x[None, :]
    vals = np.abs(g.ft(nodes)) ** 2
    total = float(np.sum(lev * (vals @ w) * half))
    return total / g.square_l1()


def gamma_sigma_estimate(cat: ModeCatalog, g: BumpWindow, lambdas=None,
                         reference: StateSpec | None = None) -> GammaEstimate:
    """Trace of int q(g_lam; x) dmu / ||g_lam^2|| along lam -> 0 with g_lam(t) = g(lam t)."""
    if lambdas is None:
        lambdas = [2.0**-k for k in range(11)]
    lambdas = [float(v) for v in lambdas]
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ConfigError("lambda sequence must decrease")
    ispec = integrated_spectrum(cat, reference)
    trace, trace2 = [], []
    for lam in lambdas:
        gl = g.scaled(lam)
        trace.append(q_bound(ispec, gl).value / gl.square_l1())
        trace2.append(_trace_via_QQ(ispec, g, lam))
    disc = float(np.max(np.abs(np.array(trace) - np.array(trace2))))
    bound = 2 * np.pi * Q_of(ispec, 1e-300)  # 2 pi QQ(0+)
    return GammaEstimate(trace[-1], lambdas, trace, trace2, float(bound), disc)


# -- measure checks ----------------------------------------------------------

@dataclass
class BochnerReport:
    atoms_nonnegative: bool
    min_weight: float
    positive_type_samples: list
    positive_type_ok: bool
    growth_exponent: float | None
    fit_range: tuple | None

    @property
    def passed(self):
        return self.atoms_nonnegative and self.positive_type_ok

    def to_dict(self):
        return dict(self.__dict__, passed=self.passed)


def growth_exponent(spec: SpectralMeasure, lo: float = 10.0, hi: float = 100.0, npts: int = 40):
    """Log-log slope of the cumulative mass over [lo, hi] (None if the atoms do not reach)."""
    if spec.size == 0 or spec.zeta[-1] < hi:
        return None
    u = np.geomspace(lo, hi, npts)
    mass = spec.mass_below(u)
    if np.any(mass <= 0):
        return None
    return float(np.polyfit(np.log(u), np.log(mass), 1)[0])


def bochner_checks(spec: SpectralMeasure, rng=None, samples: int = 50, fit_range=(10.0, 100.0)) -> BochnerReport:
    """Nonnegative atoms, positive-type samples sum_p w_p |fhat(zeta_p)|^2 and polynomial growth."""
    rng = np.random.default_rng(0) if rng is None else rng
    min_w = float(spec.weights.min()) if spec.size else 0.0
    nonneg = bool(min_w >= 0)
    vals = []
    for _ in range(samples):
        # random complex combination of bump windows as the test function f
        k = int(rng.integers(1, 4))
        fh = np.zeros(spec.size, complex)
        for _ in range(k):
            win = BumpWindow(rng.uniform(-2, 2), rng.uniform(0.2, 2.0), 1.0, 1.0)
            fh += complex(rng.normal(), rng.normal()) * win.ft(spec.zeta)
        vals.append(float(spec.weights @ np.abs(fh) ** 2))
    ok = all(v >= 0 for v in vals)
    expo = growth_exponent(spec, *fit_range)
    return BochnerReport(nonneg, min_w, vals, ok, expo, tuple(fit_range) if expo is not None else None)


def check_monotone_left_continuous(spec: SpectralMeasure, Qfun=None, eps: float = 1e-9) -> bool:
    """Q nondecreasing and, at every atom, Q(zeta) = Q(zeta - eps) < Q(zeta + eps) when w > 0."""
    if spec.size == 0:
        return True
    Qf = (lambda u: Q_of(spec, u)) if Qfun is None else Qfun
    z = spec.zeta
    at = np.asarray(Qf(z))
    below = np.asarray(Qf(z - eps * np.maximum(1, np.abs(z))))
    above = np.asarray(Qf(z + eps * np.maximum(1, np.abs(z))))
    grid = np.sort(np.concatenate([z - 1e-3, z, z + 1e-3]))
    mono = bool(np.all(np.diff(np.asarray(Qf(grid))) >= 0))
    left = bool(np.all(at == below))
    jump = bool(np.all((above > at) | (spec.weights == 0)))
    return mono and left and jump


# -- tapered FFT oracle ----------------------------------------------------

def fft_spectrum_oracle(cat: ModeCatalog, x: float, sigma: float = 60.0):
    """Gaussian-tapered FFT estimate of [pulled-back T0]^ from sampled ground correlations.

    The sampled function is T0(tau) = 1/2 sum_c sum_j V_cj(tau, x) conj(V_cj(0, x)).
    Each atom w_p becomes a Gaussian of total mass w_p and width 1/sigma.
    Returns (zeta grid, density).
    """
    wmax = float(cat.omegas.max())
    dt = np.pi / (4 * wmax)
    n = 1 << int(np.ceil(np.log2(14 * sigma / dt)))
    tau = (np.arange(n) - n // 2) * dt
    xs = np.full(n, float(x))
    Vt = energy_features(cat, tau, xs, np.arange(cat.J))
    V0 = energy_features(cat, np.zeros(1), np.array([float(x)]), np.arange(cat.J))
    T = 0.5 * np.einsum("cjt,cj->t", Vt, np.conj(V0[:, :, 0]))
    T = T * np.exp(-0.5 * (tau / sigma) ** 2)
    # S(zeta_k) = sum_m T(tau_m) e^{i zeta_k tau_m} dt with zeta_k = 2 pi k / (n dt)
    zeta = 2 * np.pi * np.fft.fftfreq(n, d=dt)
    S = n * np.fft.ifft(np.fft.ifftshift(T)) * dt
    order = np.argsort(zeta)
    return zeta[order], np.real(S[order])


def fft_Q(cat: ModeCatalog, x: float, u, sigma: float = 60.0):
    """Q(u, x) from the cumulative integral of the tapered FFT density."""
    zeta, S = fft_spectrum_oracle(cat, x, sigma)
    dz = zeta[1] - zeta[0]
    cum = np.concatenate([[0.0], np.cumsum(S) * dz])
    edges = np.concatenate([zeta - 0.5 * dz, [zeta[-1] + 0.5 * dz]])
    u = np.atleast_1d(np.asarray(u, float))
    return np.interp(u, edges, cum) / TWO_PI_SQ


# -- campaign -----------------------------------------------------------------

@dataclass
class QweiReport:
    reference: str
    catalog: dict
    windows: list
    states: list
    xs: list
    q_values: list
    margins: list
    Q_table: list
    QQ_table: list
    gamma_sigma: dict | None
    tolerances: dict

    @property
    def worst_margin(self):
        return min((m.margin + m.tol_num for m in self.margins), default=0.0)

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.margins)

    @property
    def negative_count(self) -> int:
        return sum(1 for m in self.margins if m.lhs < 0)

    @property
    def max_tol_num(self) -> float:
        return max((m.tol_num for m in self.margins), default=0.0)

    def to_dict(self):
        return {
            "reference": self.reference,
            "catalog": self.catalog,
            "windows": self.windows,
            "states": self.states,
            "xs": self.xs,
            "q": self.q_values,
            "margins": [m.to_dict() for m in self.margins],
            "Q_table": self.Q_table,
            "QQ_table": self.QQ_table,
            "gamma_sigma": self.gamma_sigma,
            "summary": {"triples": len(self.margins), "negative_lhs": self.negative_count,
                        "max_tol_num": self.max_tol_num, "passed": self.passed},
            "tolerances": self.tolerances,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def write_Q_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["u", "Q", "QQ"])
            for (u, q), (_, qq) in zip(self.Q_table, self.QQ_table):
                wr.writerow([repr(u), repr(q), repr(qq)])

    def write_margins_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["state", "window", "x", "lhs", "q", "margin"])
            for m in self.margins:
                wr.writerow([m.state, json.dumps(m.window, sort_keys=True), repr(m.x), repr(m.lhs),
                             repr(m.q), repr(m.margin)])


def run_qwei_campaign(cat: ModeCatalog, states, windows, xs, u_grid=None, gamma_window=None,
                      threads: int = 1) -> QweiReport:
    """Evaluate every (state, window, x) margin against the ground reference."""
    xs = [float(x) for x in xs]
    spectra = {x: pullback_energy_spectrum(cat, x) for x in xs}
    qcache = {}
    qrows = []
    for wi, g in enumerate(windows):
        for x in xs:
            qb = q_bound(spectra[x], g, atom_tail_bound(cat, g, x))
            qcache[(wi, x)] = qb
            qrows.append({"window": wi, "x": x, "q": qb.value, "quadrature_error": qb.quadrature_error,
                          "tail_bound": qb.tail_bound, "warnings": qb.warnings})
    jobs = [(s, wi, g, x) for s in states for wi, g in enumerate(windows) for x in xs]

    def run(job):
        s, wi, g, x = job
        return verify_static_qwei(s, cat, g, x, qb=qcache[(wi, x)])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            margins = list(ex.map(run, jobs))
    else:
        margins = [run(j) for j in jobs]
    if u_grid is None:
        u_grid = np.linspace(0.0, min(10.0, float(cat.omegas[-1])), 101)
    spec0 = spectra[xs[0]] if xs else pullback_energy_spectrum(cat, 0.0)
    Qt = [[float(u), float(Q_of(spec0, u))] for u in u_grid]
    QQt = [[float(u), float(integrated_Q(cat, u))] for u in u_grid]
    gamma = None
    if gamma_window is not None:
        gamma = gamma_sigma_estimate(cat, gamma_window).to_dict()
    return QweiReport("ground", {"provenance": cat.provenance, "L": cat.L, "m": cat.m, "J": cat.J, "G": cat.G},
                      [g.to_dict() for g in windows], [state_label(s) for s in states], xs, qrows,
                      margins, Qt, QQt, gamma, {"tol_num_rule": "lhs quadrature + q quadrature; cutoff tails reported separately (one-sided)"})
