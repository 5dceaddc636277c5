import json
import math

import numpy as np
import pytest

from cornerscat import geometry as geo
from cornerscat.helmholtz_grating import solve_grating
from cornerscat.specfun import spherical_bessel_j, spherical_harmonic, to_spherical
from cornerscat.uniqueness import (
    DISTINGUISH_FACTOR,
    GapReport,
    RecoveryRefused,
    corner_vanishing_probe,
    distinguishability_threshold,
    flat_gap_prediction,
    grating_gap,
    hypothesis_audit,
    recover_impedance,
)
from cornerscat.uniqueness import _l_hypothesis

K = 1.2


@pytest.fixture(scope="module")
def flat_eta1():
    return solve_grating(geo.flat_grating(0.0, 1.0), K)


@pytest.fixture(scope="module")
def flat_eta2i():
    return solve_grating(geo.flat_grating(0.0, 2.0 + 1.0j), K)


def test_gap_verdict_rule():
    assert GapReport({}, 1.0, 0.09).distinguished
    assert not GapReport({}, 1.0, 0.1).distinguished
    assert GapReport({}, 0.0, 0.0).verdict == "Indistinguishable-at-resolution"
    assert DISTINGUISH_FACTOR == 10
    d = json.loads(GapReport({"k": 1.0}, 0.5, 0.01, {"z": 1 + 2j}).to_json())
    assert d["verdict"] == "Distinguished" and d["details"]["z"] == [1.0, 2.0]


def test_flat_prediction_closed_form():
    # total field exp(-ikz) + R exp(ikz) sampled at z = b
    k, b = 1.2, 1.0
    r1 = (1j * k - 1) / (1j * k + 1)
    r2 = (1j * k - 3) / (1j * k + 3)
    u1 = np.exp(-1j * k * b) + r1 * np.exp(1j * k * b)
    u2 = np.exp(-1j * k * b) + r2 * np.exp(1j * k * b)
    assert flat_gap_prediction(k, 1, 3, b) == pytest.approx(abs(u1 - u2) / abs(u1), rel=1e-13)
    assert flat_gap_prediction(k, 2, 2, b) == 0.0


def test_flat_grating_gap_matches_prediction():
    rep = grating_gap(geo.flat_grating(0.0, 1.0), geo.flat_grating(0.0, 2.0), K, b=1.0, N=16)
    pred = flat_gap_prediction(K, 1.0, 2.0, 1.0)
    assert abs(rep.gap - pred) < 1e-4
    assert rep.distinguished
    assert max(rep.details["residuals"]) < 1e-3


def test_self_gap_is_zero():
    g = geo.flat_grating(0.0, 1.0)
    rep = grating_gap(g, g, K, N=8)
    assert rep.gap == 0.0 and not rep.distinguished
    assert rep.gap <= 2 * max(rep.details["residuals"])


def test_recover_impedance_flat(flat_eta1, flat_eta2i):
    e1 = recover_impedance(flat_eta1, 0)
    assert abs(e1.eta_hat - 1) < 1e-3 and e1.pointwise_spread < 1e-3
    assert e1.mask_fraction == 1.0
    e2 = recover_impedance(flat_eta2i, 0)
    assert abs(e2.eta_hat - (2 + 1j)) < 2e-3


def test_recover_impedance_sound_soft():
    sol = solve_grating(geo.flat_grating(0.0, 1e6), 0.7, h=0.6)
    try:
        est = recover_impedance(sol, 0)
    except RecoveryRefused:
        return
    # near-nodal face: the quotient does not see the surrogate value
    assert abs(est.eta_hat - 1e6) > 0.5e6


def test_recovery_refused_on_nodal_face(flat_eta1, monkeypatch):
    field, grad = flat_eta1.total_field, flat_eta1.gradient
    cut = lambda q: (q[:, 0] % (2 * math.pi) > 5.5).astype(float)  # noqa: E731
    monkeypatch.setattr(flat_eta1, "total_field", lambda q: field(q) * cut(q))
    monkeypatch.setattr(flat_eta1, "gradient", lambda q: grad(q) * cut(q)[:, None])
    with pytest.raises(RecoveryRefused) as info:
        recover_impedance(flat_eta1, 0)
    assert info.value.mask_fraction < 0.2


def test_threshold_bisection():
    calls = []

    def gap_at(t):
        calls.append(t)
        return GapReport({"t": t}, t, 0.01)

    out = distinguishability_threshold(gap_at, 0.0, 1.0, tol=1e-3)
    assert abs(out["t_min"] - 0.1) < 1e-3 and out["monotone"]
    none = distinguishability_threshold(lambda t: GapReport({}, 0.0, 1.0))
    assert none["t_min"] is None


def test_audit_cube_degree_two():
    rep = hypothesis_audit(geo.cube(1.0))
    assert rep.degree == 2 and rep.verdict == "rational"
    rat = rep.hypotheses["rational_obstacle"]
    assert rat["status"] == "fail" and "degree 2" in rat["failing"]
    assert rep.hypotheses["irrational_obstacle"]["status"] == "fail"
    assert len(rep.vertices) == 8
    json.loads(rep.to_json())


def test_audit_irrational_prism():
    p = geo.prism(geo.triangle_with_angles(1.0, 0.9), 1.0)
    rep = hypothesis_audit(p)
    assert rep.hypotheses["irrational_obstacle"]["status"] == "pass"
    assert rep.hypotheses["rational_obstacle"]["status"] == "n/a"


def test_audit_grating_and_bad_input():
    rep = hypothesis_audit(geo.pyramid_grating(1.0, math.pi, 1.0))
    assert rep.kind == "grating" and set(rep.hypotheses) == {"irrational_grating", "rational_grating"}
    with pytest.raises(TypeError):
        hypothesis_audit("cube")


def test_l_hypothesis_rows():
    assert _l_hypothesis([{"nonzero": True, "apex": [0, 0, 0]}]) == (True, None)
    ok, msg = _l_hypothesis([{"nonzero": True, "apex": [0]}, {"nonzero": False, "apex": [1]}])
    assert ok is False and "[1]" in msg
    ok, msg = _l_hypothesis([{"nonzero": None, "apex": [2]}])
    assert ok is None and "not converged" in msg


def _regular_wave(n, m, k):
    def u(q):
        r, t, p = to_spherical(q)
        return 4 * math.pi * 1j**n * spherical_bessel_j(n, k * r) * spherical_harmonic(n, m, t, p)

    return u


def test_probe_plane_wave_order_zero():
    k = 1.3
    d = np.array([0.0, 0.6, 0.8])
    out = corner_vanishing_probe(lambda q: np.exp(1j * k * q @ d), [0.2, -0.1, 0.3], lam=k * k, radius=0.4,
                                 n_points=2**12)
    assert out["leading_order"] == 0
    assert not out["vanishes_to_high_order"] and not out["degenerate"]


@pytest.mark.parametrize("n,m", [(2, 1), (3, -2)])
def test_probe_regular_wave(n, m):
    out = corner_vanishing_probe(_regular_wave(n, m, 1.0), [0, 0, 0], lam=1.0, radius=0.3, n_points=2**12)
    assert out["leading_order"] >= n
    assert out["vanishes_to_high_order"]
    assert abs(out["estimate"]["order"] - n) < 0.15


def test_probe_zero_field_degenerate():
    out = corner_vanishing_probe(lambda q: np.zeros(len(q), complex), [0, 0, 0], lam=1.0, radius=0.3,
                                 n_points=2**10)
    assert out["degenerate"] and not out["vanishes_to_high_order"]


def test_probe_requires_lam_and_exterior(flat_eta1):
    with pytest.raises(ValueError):
        corner_vanishing_probe(lambda q: q[:, 0], [0, 0, 0])
    with pytest.raises(ValueError):
        corner_vanishing_probe(flat_eta1, [1.0, 1.0, -0.5])
