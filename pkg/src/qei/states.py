"""State specifications and their mode-space two-point structure.

Every state is reduced to per-mode moments relative to the ground state:
connected occupation n_j = <a_j^* a_j> - |d_j|^2, connected pair amplitude
s_j = <a_j a_j> - d_j^2 and displacement d_j = <a_j>.  Different modes are
uncorrelated for every variant here, so these three vectors fix the
normal-ordered two-point function exactly (also for the non-Gaussian
one-particle and pair states, whose two-point data is all we need).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .modes import ModeCatalog


class StateSpec:
    kind = "abstract"

    def modes_used(self):
        return ()

    def validate(self, cat: ModeCatalog):
        for j in self.modes_used():
            cat.check_mode(j)


@dataclass(frozen=True)
class Ground(StateSpec):
    kind = "ground"

    def to_dict(self):
        return {"kind": "ground"}


@dataclass(frozen=True)
class KMS(StateSpec):
    beta: float
    kind = "kms"

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError("KMS state needs beta > 0")

    def to_dict(self):
        return {"kind": "kms", "beta": self.beta}


def _pairs(mapping):
    if isinstance(mapping, dict):
        items = mapping.items()
    else:
        items = mapping
    return tuple(sorted((int(k), v) for k, v in items))


@dataclass(frozen=True)
class Coherent(StateSpec):
    """Displaced vacuum; ``alpha`` maps mode index -> complex amplitude."""

    alpha: tuple
    kind = "coherent"

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple((j, complex(a)) for j, a in _pairs(self.alpha)))

    def modes_used(self):
        return tuple(j for j, _ in self.alpha)

    def to_dict(self):
        return {"kind": "coherent", "alpha": {str(j): [a.real, a.imag] for j, a in self.alpha}}


@dataclass(frozen=True)
class Squeezed(StateSpec):
    """Squeezed vacuum; ``params`` maps mode index -> (r, phi)."""

    params: tuple
    kind = "squeezed"

    def __post_init__(self):
        norm = []
        for j, (r, phi) in _pairs(self.params):
            if r < 0:
                raise ConfigError("squeezing r must be >= 0")
            norm.append((j, (float(r), float(phi) % (2 * np.pi))))
        object.__setattr__(self, "params", tuple(norm))

    def modes_used(self):
        return tuple(j for j, _ in self.params)

    def to_dict(self):
        return {"kind": "squeezed", "modes": {str(j): {"r": r, "phi": p} for j, (r, p) in self.params}}


@dataclass(frozen=True)
class SingleParticle(StateSpec):
    mode: int
    kind = "particle"

    def modes_used(self):
        return (int(self.mode),)

    def to_dict(self):
        return {"kind": "particle", "mode": int(self.mode)}


@dataclass(frozen=True)
class SuperposedPair(StateSpec):
    """(|0> + eps |2_j>) / sqrt(1 + |eps|^2)."""

    mode: int
    eps: complex
    kind = "pair"

    def __post_init__(self):
        object.__setattr__(self, "eps", complex(self.eps))

    def modes_used(self):
        return (int(self.mode),)

    def to_dict(self):
        return {"kind": "pair", "mode": int(self.mode), "eps": [self.eps.real, self.eps.imag]}


@dataclass(frozen=True)
class Mixture(StateSpec):
    weights: tuple
    components: tuple
    kind = "mixture"

    def __post_init__(self):
        w = tuple(float(p) for p in self.weights)
        comps = tuple(self.components)
        if len(w) != len(comps) or not w:
            raise ConfigError("mixture needs matching, non-empty weights and components")
        if any(p <= 0 for p in w) or abs(sum(w) - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be positive and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    def modes_used(self):
        return tuple(sorted({j for c in self.components for j in c.modes_used()}))

    def to_dict(self):
        return {"kind": "mixture", "weights": list(self.weights),
                "components": [c.to_dict() for c in self.components]}


def _complex(v):
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ConfigError(f"complex value must be [re, im], got {v!r}")
        return complex(float(v[0]), float(v[1]))
    return complex(v)


def state_from_dict(d) -> StateSpec:
    try:
        kind = d["kind"]
        if kind == "ground":
            return Ground()
        if kind == "kms":
            return KMS(float(d["beta"]))
        if kind == "coherent":
            return Coherent({int(k): _complex(v) for k, v in d["alpha"].items()})
        if kind == "squeezed":
            return Squeezed({int(k): (float(v["r"]), float(v.get("phi", 0.0))) for k, v in d["modes"].items()})
        if kind == "particle":
            return SingleParticle(int(d["mode"]))
        if kind == "pair":
            return SuperposedPair(int(d["mode"]), _complex(d["eps"]))
        if kind == "mixture":
            return Mixture(tuple(d["weights"]), tuple(state_from_dict(c) for c in d["components"]))
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid state spec {d!r}: {exc}") from None
    raise ConfigError(f"unknown state kind {kind!r}")


def state_to_json(state: StateSpec) -> str:
    return json.dumps(state.to_dict(), sort_keys=True)


def state_label(state: StateSpec) -> str:
    return json.dumps(state.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class TwoPointData:
    """Per-mode connected moments (n_j, s_j) and displacements d_j."""

    n: np.ndarray
    s: np.ndarray
    d: np.ndarray
    is_reference: bool = False

    @property
    def J(self):
        return self.n.size

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero((self.n != 0) | (self.s != 0) | (self.d != 0))

    def covariance_min_eigenvalue(self) -> float:
        """Smallest eigenvalue over modes of [[n+1, s], [conj s, n]] (must be >= 0)."""
        if self.J == 0:
            return 0.0
        tr = 2 * self.n + 1
        det = self.n * (self.n + 1) - np.abs(self.s) ** 2
        disc = np.sqrt(np.maximum(tr * tr - 4 * det, 0.0))
        return float(np.min(0.5 * (tr - disc)))


def kms_occupation(omegas, beta):
    with np.errstate(over="ignore"):
        return 1.0 / np.expm1(beta * np.asarray(omegas, float))


def _zeros(J):
    return np.zeros(J), np.zeros(J, complex), np.zeros(J, complex)


def two_point_data(state: StateSpec, cat: ModeCatalog) -> TwoPointData:
    """Moment data for a non-mixture state."""
    state.validate(cat)
    n, s, d = _zeros(cat.J)
    if isinstance(state, Ground):
        return TwoPointData(n, s, d, is_reference=True)
    if isinstance(state, KMS):
        return TwoPointData(kms_occupation(cat.omegas, state.beta), s, d)
    if isinstance(state, Coherent):
        for j, a in state.alpha:
            d[j] = a
    elif isinstance(state, Squeezed):
        for j, (r, phi) in state.params:
            n[j] = np.sinh(r) ** 2
            s[j] = -np.exp(1j * phi) * np.sinh(r) * np.cosh(r)
    elif isinstance(state, SingleParticle):
        n[state.mode] = 1.0
    elif isinstance(state, SuperposedPair):
        e = state.eps
        norm = 1.0 + abs(e) ** 2
        n[state.mode] = 2 * abs(e) ** 2 / norm
        s[state.mode] = np.sqrt(2.0) * e / norm
    elif isinstance(state, Mixture):
        raise TypeError("mixtures have no single moment set; use state_components")
    else:
        raise ConfigError(f"unsupported state {state!r}")
    return TwoPointData(n, s, d)


def state_components(state: StateSpec, cat: ModeCatalog):
    """Flatten a (possibly nested) mixture into [(weight, TwoPointData), ...]."""
    if isinstance(state, Mixture):
        out = []
        for p, comp in zip(state.weights, state.components):
            out.extend((p * q, data) for q, data in state_components(comp, cat))
        return out
    return [(1.0, two_point_data(state, cat))]


# -- features and the bilinear engine -------------------------------------

def _points(p, q):
    """Broadcast the coordinates of two points to one common shape."""
    t1, x1, t2, x2 = np.broadcast_arrays(*(np.asarray(v, float) for v in (*p, *q)))
    return (t1, x1), (t2, x2)


def mode_features(cat: ModeCatalog, t, x, modes=None):
    """P_j(t,x) = (2 omega_j)^{-1/2} e^{-i omega_j t} u_j(x), shape (modes, *shape)."""
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    shape = t.shape
    sel = np.arange(cat.J) if modes is None else np.asarray(modes, int)
    om = cat.omegas[sel]
    u = cat.mode_values(x.ravel(), sel)
    ph = np.exp(-1j * np.outer(om, t.ravel()))
    return ((ph * u) / np.sqrt(2 * om)[:, None]).reshape((sel.size,) + shape)


def quadratic_form(data: TwoPointData, modes, P1, P2, Q1=None, Q2=None):
    """Normal-ordered bilinear for product-state moment data restricted to ``modes``."""
    Q1 = np.conj(P1) if Q1 is None else Q1
    Q2 = np.conj(P2) if Q2 is None else Q2
    n = data.n[modes]
    s = data.s[modes]
    d = data.d[modes]
    ex = (slice(None),) + (None,) * (P1.ndim - 1)
    out = np.sum(n[ex] * (P1 * Q2 + Q1 * P2) + s[ex] * P1 * P2 + np.conj(s)[ex] * Q1 * Q2, axis=0)
    if np.any(d != 0):
        D1 = np.sum(d[ex] * P1 + np.conj(d)[ex] * Q1, axis=0)
        D2 = np.sum(d[ex] * P2 + np.conj(d)[ex] * Q2, axis=0)
        out = out + D1 * D2
    return out


def _check_catalog(cat, data):
    if data.J != cat.J:
        raise ConfigError(f"moment data built for J = {data.J}, catalog has J = {cat.J}")


def _functional_terms(ell, cat):
    """Normalize the functional argument to [(weight, kind, payload)]."""
    from .fock import TruncatedFunctional

    if isinstance(ell, TwoPointData):
        _check_catalog(cat, ell)
        return [(1.0, "moments", ell)]
    if isinstance(ell, StateSpec):
        return [(p, "moments", data) for p, data in state_components(ell, cat)]
    if isinstance(ell, TruncatedFunctional):
        ell.check_catalog(cat)
        return [(1.0, "matrix", ell)]
    raise TypeError(f"cannot evaluate functional of type {type(ell).__name__}")


def bilinear(ell, cat: ModeCatalog, feature_fn):
    """Apply the normal-ordered two-point structure of ell to a pair of feature maps.

    ``feature_fn(modes)`` returns a list of (P1, P2) pairs of arrays with leading
    mode axis; the result is summed over the list.  Q features are conjugates.
    """
    total = 0.0
    for weight, kind, obj in _functional_terms(ell, cat):
        if kind == "moments":
            modes = obj.active
            if modes.size == 0:
                continue
            val = sum(quadratic_form(obj, modes, P1, P2) for P1, P2 in feature_fn(modes))
        else:
            val = sum(obj.normal_ordered_form(P1, P2) for P1, P2 in feature_fn(obj.modes))
        total = total + weight * val
    return total


def functional_unit(ell, cat) -> complex:
    return sum(w * (obj.unit() if kind == "matrix" else 1.0) for w, kind, obj in _functional_terms(ell, cat))


def normal_ordered_two_point(ell, cat: ModeCatalog, p, q):
    """:Phi(p) Phi(q): [ell], normal ordered relative to the ground state."""
    (t1, x1), (t2, x2) = _points(p, q)

    def feats(modes):
        return [(mode_features(cat, t1, x1, modes), mode_features(cat, t2, x2, modes))]

    out = np.asarray(bilinear(ell, cat, feats), complex)
    shape = t1.shape
    return np.broadcast_to(out, shape).copy() if shape else complex(out)


def ground_two_point(cat: ModeCatalog, p, q):
    (t1, x1), (t2, x2) = _points(p, q)
    P1 = mode_features(cat, t1, x1)
    P2 = mode_features(cat, t2, x2)
    return np.sum(P1 * np.conj(P2), axis=0)


def two_point(ell, cat: ModeCatalog, p, q):
    """Full two-point function ell(Phi(p) Phi(q)) = normal-ordered part + ell(1) * ground."""
    val = normal_ordered_two_point(ell, cat, p, q) + functional_unit(ell, cat) * ground_two_point(cat, p, q)
    return val if np.ndim(val) else complex(val)


def export_two_point_csv(rows, path):
    """rows: iterable of (t, x, t', x', value)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "tp", "xp", "re", "im"])
        for t, x, tp, xp, v in rows:
            wr.writerow([repr(float(t)), repr(float(x)), repr(float(tp)), repr(float(xp)),
                         repr(float(np.real(v))), repr(float(np.imag(v)))])
