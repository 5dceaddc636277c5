import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from cornerscat import geometry as geo
from cornerscat import specfun
from cornerscat.helmholtz_obstacle import (
    FieldSolution,
    IncidentWave,
    SolverError,
    boundary_samples,
    evaluate_gradient,
    evaluate_total_field,
    far_field,
    read_far_field_csv,
    solve_scattering,
    sphere_far_field,
    sphere_grid,
    write_far_field_csv,
)


@pytest.fixture(scope="module")
def ico3():
    return geo.icosphere(3)


@pytest.fixture(scope="module")
def sphere_solution(ico3):
    return solve_scattering(ico3, IncidentWave(1.0, (0, 0, 1)), raise_on_failure=False)


def _fake_solution(points, weights, k=1.0):
    return FieldSolution(geo.cube(0.1), IncidentWave(k, (0, 0, 1)), np.atleast_2d(points), np.asarray(weights, complex), 0.0)


def test_incident_wave_validation():
    with pytest.raises(ValueError):
        IncidentWave(1.0, (1, 1, 0))
    with pytest.raises(ValueError):
        IncidentWave(0.0, (0, 0, 1))
    inc = IncidentWave(2.0, (0, 1, 0))
    x = np.array([[0.0, 0.25, 0.0]])
    assert np.allclose(inc.field(x), np.exp(0.5j))


@pytest.mark.parametrize("order", [4, 10])
def test_sphere_grid_integrates_harmonics(order):
    dirs, w, th, ph = sphere_grid(order)
    assert abs(w.sum() - 4 * np.pi) < 1e-12
    # orthonormality of Y_n^m up to total degree 2 order + 1
    nmax = order
    Y = {(n, m): specfun.spherical_harmonic(n, m, th, ph) for n in range(nmax + 1) for m in range(-n, n + 1)}
    keys = list(Y)
    G = np.array([[np.sum(w * Y[a] * np.conj(Y[b])) for b in keys] for a in keys])
    assert np.max(np.abs(G - np.eye(len(keys)))) < 1e-12


def test_far_field_trivial_cases():
    zero = _fake_solution([[0.0, 0.0, 0.0]], [0.0])
    assert np.all(far_field(zero, 6).values == 0)
    unit = _fake_solution([[0.0, 0.0, 0.0]], [1.0])
    assert np.allclose(far_field(unit, 6).values, 1 / (4 * np.pi), atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.floats(0.3, 4.0))
def test_far_field_translation_phase(t, k):
    rng = np.random.default_rng(1)
    y = rng.normal(size=(5, 3)) * 0.2
    w = rng.normal(size=5) + 1j * rng.normal(size=5)
    t = np.array(t)
    a = far_field(_fake_solution(y, w, k), 5)
    b = far_field(_fake_solution(y + t, w, k), 5)
    assert np.allclose(b.values, a.values * np.exp(-1j * k * a.directions @ t), atol=1e-13)


def test_sphere_series_sound_soft_limit_and_optical_theorem():
    dirs, w, _, _ = sphere_grid(30)
    x = dirs[:, 2]
    ff = sphere_far_field(1.3, 0.8, 1e9, x)
    n = np.arange(40)
    ka = 1.3 * 0.8
    h = special.spherical_jn(n, ka) + 1j * special.spherical_yn(n, ka)
    soft = (-1j / 1.3) * sum((2 * m + 1) * (-special.spherical_jn(m, ka) / h[m]) * special.eval_legendre(m, x) for m in n)
    assert np.max(np.abs(ff - soft)) < 1e-7
    for eta in (1.0, 3.5, -0.4):
        f = sphere_far_field(1.3, 0.8, eta, x)
        f0 = sphere_far_field(1.3, 0.8, eta, 1.0)
        lhs = np.sum(w * np.abs(f) ** 2)
        assert abs(lhs - 4 * np.pi / 1.3 * f0.imag) < 1e-12 * lhs


def test_boundary_samples_cover_the_surface():
    c = geo.cube(1.0)
    for levels in (0, 3):
        b = boundary_samples(c, 0.2, grading_levels=levels)
        assert abs(b.areas.sum() - 6.0) < 1e-12
        assert np.max(c.distance_to_boundary(b.points)) < 1e-12
    graded = boundary_samples(c, 0.2, grading_levels=3)
    # finest strip width is 0.15^3 of the sub-triangle height
    assert graded.areas.min() < 1e-3 * boundary_samples(c, 0.2, grading_levels=0).areas.min()


def test_sphere_oracle_and_refinement(ico3):
    errs = []
    for poly in (geo.icosphere(2), ico3):
        sol = solve_scattering(poly, IncidentWave(1.0, (0, 0, 1)), grading_levels=0, raise_on_failure=False)
        ff = far_field(sol, 12)
        errs.append(ff.relative_distance(sphere_far_field(1.0, 1.0, 1.0, ff.directions[:, 2])))
    assert errs[1] < 2e-2
    assert errs[1] < errs[0] / 2


def test_optical_theorem_and_reciprocity(sphere_solution, ico3):
    sol = sphere_solution
    d = np.array(sol.incident.d)
    ff = far_field(sol, 14)
    lhs = np.sum(ff.weights * np.abs(ff.values) ** 2)
    fwd = far_field(sol, directions=[d]).values[0]
    assert abs(lhs - 4 * np.pi / sol.k * fwd.imag) < 1e-2 * lhs
    d2 = np.array([1.0, 2.0, 2.0]) / 3
    other = solve_scattering(ico3, IncidentWave(1.0, tuple(-d2)), raise_on_failure=False)
    a = far_field(sol, directions=[d2]).values[0]
    b = far_field(other, directions=[-d]).values[0]
    assert abs(a - b) < 2e-3 * abs(a)


def test_gradient_matches_finite_differences(sphere_solution):
    rng = np.random.default_rng(7)
    v = rng.normal(size=(100, 3))
    x = v / np.linalg.norm(v, axis=1)[:, None] * rng.uniform(1.2, 3.0, size=(100, 1))
    g = evaluate_gradient(sphere_solution, x)
    step = 1e-5
    fd = np.stack(
        [
            (evaluate_total_field(sphere_solution, x + step * e) - evaluate_total_field(sphere_solution, x - step * e)) / (2 * step)
            for e in np.eye(3)
        ],
        axis=1,
    )
    assert np.max(np.abs(g - fd)) < 1e-6 * max(1.0, np.max(np.abs(g)))


def test_inside_points_rejected(sphere_solution):
    with pytest.raises(ValueError):
        evaluate_total_field(sphere_solution, [[0.0, 0.0, 0.1]])
    with pytest.raises(ValueError):
        evaluate_gradient(sphere_solution, [[0.2, 0.0, 0.0]])


def test_field_tends_to_unit_modulus(sphere_solution):
    x = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, -0.6, 0.8]]) * 1e5
    assert np.allclose(np.abs(evaluate_total_field(sphere_solution, x)), 1.0, atol=1e-4)


def test_sound_soft_limit(ico3):
    sol = solve_scattering(ico3.with_impedance(1e6), IncidentWave(1.0, (0, 0, 1)), raise_on_failure=False)
    chk = boundary_samples(ico3, sol.diagnostics["h"], bary=(0.2, 0.5, 0.3))
    u = evaluate_total_field(sol, chk.points, allow_boundary=True)
    rms = np.sqrt(np.sum(chk.areas * np.abs(u) ** 2) / chk.areas.sum())
    assert rms < 0.05


def test_two_resolutions_agree_within_residuals(ico3):
    inc = IncidentWave(1.0, (0, 0, 1))
    a = solve_scattering(ico3, inc, spacing=0.5, raise_on_failure=False)
    b = solve_scattering(ico3, inc, spacing=0.4, raise_on_failure=False)
    fa, fb = far_field(a, 12), far_field(b, 12)
    assert fa.relative_distance(fb) <= a.residual + b.residual


def test_residual_gate_raises():
    with pytest.raises(SolverError) as err:
        solve_scattering(geo.cube(1.0), IncidentWave(1.0, (0, 0, 1)), max_sources=300)
    assert err.value.diagnostics["check_residual"] > 1e-3


def test_far_field_csv_roundtrip(tmp_path, sphere_solution):
    ff = far_field(sphere_solution, 4)
    path = tmp_path / "ff.csv"
    write_far_field_csv(ff, path)
    th, ph, vals, meta = read_far_field_csv(path)
    assert np.array_equal(vals, ff.values)
    assert np.array_equal(th, ff.theta)
    assert float(meta["k"]) == 1.0
    assert open(path).read().splitlines()[3] == "theta,phi,re,im"
