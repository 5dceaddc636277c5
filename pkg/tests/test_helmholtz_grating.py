import math
import warnings
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cornerscat import geometry as geo
from cornerscat.helmholtz_grating import (
    AliasingError,
    QuasiMomentum,
    QuasiPeriodicGreen,
    WoodAnomalyWarning,
    flat_reflection,
    incident_direction,
    mode_betas,
    propagating_modes,
    qp_green,
    qp_green_direct,
    qp_green_spectral,
    quasiperiodicity_residual,
    rayleigh_expand,
    read_rayleigh_csv,
    solve_grating,
    write_field_slice_csv,
    write_rayleigh_csv,
)
from cornerscat.helmholtz_obstacle import SolverError

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def flat_solution():
    return solve_grating(geo.flat_grating(0.0, 1.0), 1.2)


def _synthetic(k, alpha, modes, amps):
    alpha = np.asarray(alpha, dtype=float)

    def scattered(x):
        x = np.atleast_2d(x)
        out = np.zeros(len(x), dtype=complex)
        for n, a in zip(modes, amps):
            an = np.asarray(n) + alpha
            b = mode_betas(k, alpha, [n])[0]
            out += a * np.exp(1j * (x[:, :2] @ an) + 1j * b * x[:, 2])
        return out

    return SimpleNamespace(k=k, alpha=QuasiMomentum(tuple(alpha)), scattered=scattered)


def test_propagating_mode_examples():
    prop, wood = propagating_modes(1.0, QuasiMomentum((0, 0)), 3, wood_tol=1e-8)
    assert set(prop) == {(0, 0)}
    assert len(wood) == 4  # |(±1, 0)| = k exactly: grazing
    prop, wood = propagating_modes(1.5, QuasiMomentum((0, 0)), 3)
    expected = {(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)}
    assert set(prop) == expected and not wood
    b = mode_betas(1.0, (0.3, 0.0), [(0, 0), (1, 0)])
    assert abs(b[0] - math.sqrt(0.91)) < 1e-12
    assert abs(b[1] - 1j * math.sqrt(0.69)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_beta_consistency(k, a1, a2):
    modes = [(i, j) for i in range(-6, 7) for j in range(-6, 7)]
    an = np.array(modes) + [a1, a2]
    b = mode_betas(k, (a1, a2), modes)
    assert np.all(b.imag >= 0)
    assert np.max(np.abs(b * b - (k * k - np.sum(an * an, axis=1)))) < 1e-12 * k * k


def test_quasimomentum_from_incidence():
    q = QuasiMomentum.from_incidence(2.0, 0.3, 0.4)
    assert np.allclose(q.vector, 2.0 * math.sin(0.4) * np.array([math.cos(0.3), math.sin(0.3)]))
    assert q.is_physical(2.0)
    assert not QuasiMomentum((3.0, 0.0)).is_physical(2.0)
    assert abs(np.linalg.norm(incident_direction(0.3, 0.4)) - 1) < 1e-15


@pytest.mark.parametrize("k,alpha", [(1.2, (0.3, -0.2)), (3.0, (1.1, 0.4))])
def test_green_matches_spectral_sum(k, alpha):
    rng = np.random.default_rng(0)
    x = np.column_stack([rng.uniform(0, TWO_PI, 6), rng.uniform(0, TWO_PI, 6), rng.uniform(0.3, 2.0, 6)])
    y = np.column_stack([rng.uniform(0, TWO_PI, 5), rng.uniform(0, TWO_PI, 5), rng.uniform(-1.5, -0.2, 5)])
    G, dG = qp_green(x, y, k, alpha, gradient=True)
    Gs, dGs = qp_green_spectral(x, y, k, alpha, M=60, gradient=True)
    assert np.max(np.abs(G - Gs)) < 1e-9 * np.max(np.abs(Gs))
    assert np.max(np.abs(dG - dGs)) < 1e-9 * np.max(np.abs(dGs))


def test_green_near_source_and_ewald_independence():
    rng = np.random.default_rng(1)
    k, alpha = 1.75, (0.2, 0.5)
    y = rng.uniform(0, TWO_PI, (5, 3))
    x = y + rng.normal(size=y.shape) * 0.2
    G, dG = qp_green(x, y, k, alpha, gradient=True)
    Gd, dGd = qp_green_direct(x, y, k, alpha, gradient=True)
    assert np.max(np.abs(G - Gd)) < 1e-9 * np.max(np.abs(Gd))
    assert np.max(np.abs(dG - dGd)) < 1e-9 * np.max(np.abs(dGd))
    G2 = qp_green_direct(x, y, k, alpha, E=0.9)
    assert np.max(np.abs(Gd - G2)) < 1e-11 * np.max(np.abs(Gd))
    # singular part is the free-space kernel
    r = np.linalg.norm(x - y, axis=1)
    near = np.diag(G) - np.exp(1j * k * r) / (4 * np.pi * r)
    x2 = y + (x - y) * 0.5
    r2 = r * 0.5
    near2 = np.diag(qp_green(x2, y, k, alpha)) - np.exp(1j * k * r2) / (4 * np.pi * r2)
    assert np.max(np.abs(near - near2)) < 0.2


def test_green_quasi_periodic_shift():
    rng = np.random.default_rng(2)
    k, alpha = 2.1, np.array([0.4, -0.7])
    g = QuasiPeriodicGreen(k, alpha, 3.0)
    x = rng.uniform(0, TWO_PI, (7, 3))
    y = rng.uniform(0, TWO_PI, (4, 3))
    for e in np.eye(2):
        shift = np.append(TWO_PI * e, 0.0)
        assert np.allclose(g(x + shift, y), np.exp(1j * TWO_PI * alpha @ e) * g(x, y), atol=1e-12)


def test_green_gradient_finite_differences():
    rng = np.random.default_rng(3)
    g = QuasiPeriodicGreen(1.3, (0.1, 0.3), 4.0)
    x = rng.uniform(0, TWO_PI, (6, 3))
    y = rng.uniform(0, TWO_PI, (3, 3))
    _, dG = g(x, y, gradient=True)
    step = 1e-6
    fd = np.stack([(g(x + step * e, y) - g(x - step * e, y)) / (2 * step) for e in np.eye(3)], axis=-1)
    assert np.max(np.abs(dG - fd)) < 1e-7 * np.max(np.abs(dG))


def test_flat_profile_oracle(flat_solution):
    spec = rayleigh_expand(flat_solution, 1.5)
    R = flat_reflection(1.2, 1.0)
    assert abs(R - (1.2j - 1) / (1.2j + 1)) < 1e-15
    assert abs(spec.coefficient((0, 0)) - R) < 1e-6
    assert max(abs(v) for n, v in spec.coefficients.items() if n != (0, 0)) < 1e-8
    assert quasiperiodicity_residual(flat_solution) < 1e-8


def test_height_independence(flat_solution):
    a = rayleigh_expand(flat_solution, 1.0)
    b = rayleigh_expand(flat_solution, 2.5)
    for n in a.propagating():
        assert abs(a.coefficients[n] - b.coefficients[n]) < 1e-6


def test_oblique_flat_and_raised_profile():
    sol = solve_grating(geo.flat_grating(0.5, 2.0 + 1.0j), 1.2, theta=0.4, phi=0.3, h=0.6)
    spec = rayleigh_expand(sol, 2.0)
    assert abs(spec.coefficient((0, 0)) - flat_reflection(1.2, 2.0 + 1.0j, 0.3, 0.5)) < 1e-6


def test_sound_soft_flux():
    sol = solve_grating(geo.flat_grating(0.0, 1e6), 0.7, h=0.6)
    spec = rayleigh_expand(sol, 1.5)
    assert abs(spec.coefficient((0, 0)) + 1) < 1e-5
    assert abs(spec.flux(sol.beta0) - 1) < 2e-3


def test_truncated_lattice_converges(flat_solution):
    res = [quasiperiodicity_residual(flat_solution.with_lattice(m)) for m in range(4)]
    assert all(b < a for a, b in zip(res, res[1:]))
    assert res[-1] < 1e-8


def test_plane_wave_is_quasi_periodic(flat_solution):
    zero = flat_solution.with_lattice(3)
    zero.source_weights = np.zeros_like(zero.source_weights)
    assert quasiperiodicity_residual(zero) == 0.0


def test_wood_anomaly_perturbs_k():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sol = solve_grating(geo.flat_grating(0.0, 1.0), 1.0, h=0.6, raise_on_failure=False)
    assert any(issubclass(w.category, WoodAnomalyWarning) for w in caught)
    assert sol.k == pytest.approx(1.00001, rel=1e-12)
    assert sol.diagnostics["wood_perturbed"]


def test_incidence_from_below_rejected():
    with pytest.raises(ValueError):
        solve_grating(geo.flat_grating(), 1.0, phi=2.0)


def test_pyramid_residual_gate():
    with pytest.raises(SolverError):
        solve_grating(geo.pyramid_grating(1.0, math.pi, 1.0), 1.2, spacing=1.0, h=0.8, grading_levels=0)


@settings(max_examples=20, deadline=None)
@given(
    st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3)), min_size=1, max_size=5, unique=True),
    st.lists(st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False), min_size=5, max_size=5),
)
def test_rayleigh_separates_modes(modes, amps):
    amps = amps[: len(modes)]
    syn = _synthetic(1.3, (0.2, -0.1), modes, amps)
    spec = rayleigh_expand(syn, 0.1, M=4, check_alias=False)
    for n, a in zip(modes, amps):
        assert abs(spec.coefficient(n) - a) < 1e-12 * max(1.0, abs(a))
    rest = [abs(v) for n, v in spec.coefficients.items() if n not in modes]
    assert max(rest) < 1e-12


def test_evanescent_decay_rate():
    syn = _synthetic(1.0, (0.3, 0.0), [(0, 0), (2, 0)], [1.0, 1.0])
    b1, b2 = 0.5, 1.5
    v1 = rayleigh_expand(syn, b1, M=3, check_alias=False)
    v2 = rayleigh_expand(syn, b2, M=3, check_alias=False)
    beta = v1.betas[(2, 0)]
    a1 = abs(v1.coefficients[(2, 0)] * np.exp(1j * beta * b1))
    a2 = abs(v2.coefficients[(2, 0)] * np.exp(1j * beta * b2))
    assert a2 / a1 == pytest.approx(math.exp(-beta.imag * (b2 - b1)), rel=1e-10)


def test_aliasing_detected():
    syn = _synthetic(1.0, (0.0, 0.1), [(0, 0), (3, 0)], [1.0, 1.0])
    with pytest.raises(AliasingError):
        rayleigh_expand(syn, 0.0, M=3)


def test_sampling_plane_must_be_above_profile(flat_solution):
    with pytest.raises(ValueError):
        rayleigh_expand(flat_solution, -0.1)


def test_rayleigh_csv_roundtrip(tmp_path, flat_solution):
    spec = rayleigh_expand(flat_solution, 1.5)
    path = tmp_path / "r.csv"
    write_rayleigh_csv(spec, path)
    back = read_rayleigh_csv(path)
    assert back.coefficients == spec.coefficients and back.betas == spec.betas
    assert back.alpha == spec.alpha and back.k == spec.k
    header = [ln for ln in open(path).read().splitlines() if not ln.startswith("#")][0]
    assert header == "n1,n2,re_u,im_u,re_beta,im_beta"
    write_field_slice_csv(flat_solution, 1.0, 4, tmp_path / "slice.csv")
    rows = open(tmp_path / "slice.csv").read().splitlines()
    assert rows[1] == "x1,x2,re,im" and len(rows) == 18
