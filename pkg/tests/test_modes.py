import json

import numpy as np
import pytest
import scipy.linalg

from qei.errors import CertificationError, ConfigError
from qei.modes import (StaticGeometry, build_catalog, build_cylinder_catalog, build_sl_catalog,
                       catalog_summary, cylinder_wavenumbers, eigen_residual, export_catalog_csv,
                       symplectic_check)

TWO_PI = 2 * np.pi


def g00_fn(x):
    return 1 + 0.3 * np.cos(x)


def h_fn(x):
    return 1 + 0.2 * np.sin(2 * x)


def galerkin_frequencies(L, m, g00, h, count, M=40, Q=4096):
    """Fourier-Galerkin discretization of the weak form, an oracle independent of the FD solver."""
    x = np.arange(Q) * L / Q
    g, hh = g00(x), h(x)
    p, q, w = np.sqrt(g / hh), m * m * np.sqrt(g * hh), np.sqrt(hh / g)
    k = 2 * np.pi * np.arange(-M, M + 1) / L
    E = np.exp(1j * np.outer(k, x)) / np.sqrt(L)
    dx = L / Q

    def gram(f):
        return (E.conj() * (f * dx)) @ E.T

    A = gram(p) * np.outer(k, k) + gram(q)
    ev = scipy.linalg.eigh(A, gram(w), eigvals_only=True)
    return np.sqrt(ev[:count])


def test_wavenumber_order():
    assert cylinder_wavenumbers(7).tolist() == [0, 1, -1, 2, -2, 3, -3]


def test_cylinder_frequencies_and_modes(cat8):
    n = np.array([0, 1, -1, 2, -2, 3, -3, 4])
    assert np.allclose(cat8.omegas, np.sqrt(1 + n**2), rtol=0, atol=1e-15)
    x = np.array([0.3, 1.7, 5.0])
    direct = np.exp(1j * np.outer(n, x)) / np.sqrt(TWO_PI)
    assert np.allclose(cat8.mode_values(x), direct, atol=1e-14)
    assert np.allclose(cat8.mode_derivs(x), 1j * n[:, None] * direct, atol=1e-14)
    assert cat8.orthonormality_residual() < 1e-13
    assert symplectic_check(cat8) < 1e-13
    assert cat8.is_cylinder and cat8.ultrastatic


def test_cylinder_nonstandard_length():
    cat = build_cylinder_catalog(3.0, 0.5, 5)
    k = 2 * np.pi * np.array([0, 1, -1, 2, -2]) / 3.0
    assert np.allclose(cat.omegas, np.sqrt(0.25 + k * k))


def test_ultrastatic_geometry_dispatches_to_closed_form():
    cat = build_catalog(StaticGeometry.cylinder(TWO_PI, 1.0, 64), 4)
    assert cat.provenance == "analytic-cylinder"


def test_sl_on_flat_metric_matches_closed_form_relatively():
    geom = StaticGeometry(TWO_PI, 1.0, np.ones(512), np.ones(512))
    cat = build_sl_catalog(geom, 5)
    exact = np.sqrt(1 + np.array([0, 1, 1, 4, 4]))
    assert np.max(np.abs(cat.omegas / exact - 1)) < 3e-5


def test_sl_matches_galerkin_oracle():
    geom = StaticGeometry.from_functions(TWO_PI, 1.0, 512, g00_fn, h_fn)
    cat = build_sl_catalog(geom, 6)
    ref = galerkin_frequencies(TWO_PI, 1.0, g00_fn, h_fn, 6)
    assert np.max(np.abs(cat.omegas / ref - 1)) < 1e-4
    assert cat.provenance == "numeric-SL"
    assert eigen_residual(cat, geom) < 1e-8
    assert cat.orthonormality_residual() < 1e-12
    assert symplectic_check(cat) < 1e-12


def test_sl_second_order_convergence():
    ref = galerkin_frequencies(TWO_PI, 1.0, g00_fn, h_fn, 4)
    errs = []
    for G in (128, 256):
        cat = build_sl_catalog(StaticGeometry.from_functions(TWO_PI, 1.0, G, g00_fn, h_fn), 4)
        errs.append(np.max(np.abs(cat.omegas - ref)))
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_sl_off_grid_interpolation():
    geom = StaticGeometry.from_functions(TWO_PI, 1.0, 256, g00_fn, h_fn)
    cat = build_sl_catalog(geom, 3)
    x_on = cat.x[[10, 11]]
    mid = 0.5 * (x_on[0] + x_on[1])
    v = cat.mode_values([mid])[:, 0]
    approx = 0.5 * (cat.u[:, 10] + cat.u[:, 11])
    assert np.max(np.abs(v - approx)) < 1e-3
    g, h = cat.metric_at([mid])
    assert g[0] == pytest.approx(g00_fn(mid), rel=1e-10)
    assert h[0] == pytest.approx(h_fn(mid), rel=1e-10)


def test_geometry_validation():
    with pytest.raises(ConfigError):
        StaticGeometry(TWO_PI, 0.0, np.ones(8), np.ones(8))
    with pytest.raises(ConfigError):
        StaticGeometry(TWO_PI, 1.0, -np.ones(8), np.ones(8))
    with pytest.raises(ConfigError):
        StaticGeometry.from_dict({"L": 1.0, "m": 1.0})
    with pytest.raises(ConfigError):
        StaticGeometry.from_dict({"L": 1.0, "m": 1.0, "grid": 16, "g00": [1.0] * 3})
    with pytest.raises(ConfigError):
        build_sl_catalog(StaticGeometry.from_functions(TWO_PI, 1.0, 32, g00_fn, h_fn), 8)
    with pytest.raises(ConfigError):
        build_cylinder_catalog(TWO_PI, 1.0, 0)


def test_geometry_roundtrip():
    geom = StaticGeometry.from_functions(TWO_PI, 1.0, 16, g00_fn, h_fn)
    back = StaticGeometry.from_dict(json.loads(json.dumps(geom.to_dict())))
    assert np.array_equal(back.g00, geom.g00) and not back.ultrastatic
    flat = StaticGeometry.from_dict({"L": 2.0, "m": 1.0, "grid": 16})
    assert flat.ultrastatic


def test_mode_index_checked(cat8):
    with pytest.raises(ConfigError):
        cat8.check_mode(8)
    assert cat8.check_mode(7) == 7


def test_truncated_catalog(cat256):
    small = cat256.truncated(11)
    assert small.J == 11
    assert np.array_equal(small.omegas, cat256.omegas[:11])


def test_catalog_is_immutable(cat8):
    with pytest.raises(ValueError):
        cat8.omegas[0] = 2.0


def test_export_and_summary(cat8, tmp_path):
    out = tmp_path / "modes.csv"
    export_catalog_csv(cat8, out)
    rows = out.read_text().splitlines()
    assert len(rows) == 9
    assert rows[2].split(",")[:2] == ["1", "1"]
    json.dumps(catalog_summary(cat8))


def test_eigensolver_failure_is_certification_error(monkeypatch):
    import qei.modes as modes

    def broken(*a, **k):
        raise np.linalg.LinAlgError("no convergence")

    monkeypatch.setattr(modes.scipy.linalg, "eigh", broken)
    geom = StaticGeometry.from_functions(TWO_PI, 1.0, 64, g00_fn, h_fn)
    with pytest.raises(CertificationError):
        build_sl_catalog(geom, 2)
