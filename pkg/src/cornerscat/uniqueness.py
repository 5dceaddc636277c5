"""Distinguishability experiments, impedance recovery and hypothesis audits.

Uniqueness is measured as a gap between measurements of two scatterers,
compared with the repeatability of the solver on one of them. The verdict
threshold is a fixed factor of 10.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import eigencorner as ec
from .specfun import spherical_bessel_j
from .geometry import GratingProfile, Polyhedron, admissibility_report, grating_corners
from .helmholtz_grating import GratingSolution, _profile_samples, flat_reflection, solve_grating
from .helmholtz_obstacle import (
    FieldSolution,
    IncidentWave,
    boundary_samples,
    evaluate_gradient,
    evaluate_total_field,
    far_field,
    solve_scattering,
)

__all__ = [
    "DISTINGUISH_FACTOR",
    "GapReport",
    "ImpedanceEstimate",
    "RecoveryRefused",
    "AuditReport",
    "obstacle_gap",
    "grating_gap",
    "flat_gap_prediction",
    "distinguishability_threshold",
    "recover_impedance",
    "hypothesis_audit",
    "corner_vanishing_probe",
]

DISTINGUISH_FACTOR = 10.0
DISTINGUISHED = "Distinguished"
INDISTINGUISHABLE = "Indistinguishable-at-resolution"


def _jsonable(v):
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


@dataclass
class GapReport:
    scenario: dict
    gap: float
    baseline: float
    details: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return DISTINGUISHED if self.gap > DISTINGUISH_FACTOR * self.baseline else INDISTINGUISHABLE

    @property
    def distinguished(self) -> bool:
        return self.verdict == DISTINGUISHED

    def to_dict(self) -> dict:
        return _jsonable({"scenario": self.scenario, "gap": self.gap, "baseline": self.baseline,
                          "verdict": self.verdict, "details": self.details})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# ---------------------------------------------------------------------------
# gaps


def _shifted(kw: dict, key="spacing", default=0.5, factor=0.8) -> dict:
    out = dict(kw)
    out[key] = out.get(key, default) * factor
    return out


def obstacle_gap(o1: Polyhedron, o2: Polyhedron, inc: IncidentWave, order: int = 16, max_residual: float = 1e-3,
                 solver_kw: dict = None) -> GapReport:
    """Relative L2(S^2) distance of the far fields of ``o1`` and ``o2``.

    The baseline is the larger of the far-field changes when each obstacle is
    re-solved with the source depth reduced by 20 percent (the spacing
    alone does not move capped source sets). Solves whose
    residual exceeds ``max_residual`` abort with SolverError.
    """
    kw = dict(solver_kw or {})
    kw.setdefault("max_residual", max_residual)
    kw.setdefault("raise_on_failure", max_residual is not None and math.isfinite(max_residual))
    if kw["max_residual"] is None:
        kw["max_residual"] = math.inf
    s1 = solve_scattering(o1, inc, **kw)
    s2 = solve_scattering(o2, inc, **kw) if o2 is not o1 else s1
    f1, f2 = far_field(s1, order), far_field(s2, order)
    r1 = solve_scattering(o1, inc, **_shifted(kw, "offset", 0.15))
    base = f1.relative_distance(far_field(r1, order))
    residuals = [s1.residual, s2.residual, r1.residual]
    if o2 is not o1:
        r2 = solve_scattering(o2, inc, **_shifted(kw, "offset", 0.15))
        base = max(base, f2.relative_distance(far_field(r2, order)))
        residuals.append(r2.residual)
    gap = f1.relative_distance(f2)
    return GapReport(
        {"kind": "obstacle", "k": inc.k, "d": list(inc.d), "order": order},
        gap,
        base,
        {"residuals": residuals, "far_field_norm": f1.l2_norm()},
    )


def _plane_grid(b, N):
    g = np.arange(N) * 2 * math.pi / N
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([X1.ravel(), X2.ravel(), np.full(N * N, float(b))])


def grating_gap(g1: GratingProfile, g2: GratingProfile, k: float, theta: float = 0.0, phi: float = 0.0,
                b: float = None, N: int = 32, max_residual: float = 1e-3, solver_kw: dict = None) -> GapReport:
    """Relative L2 distance over one period of the total fields on the plane x3 = b."""
    top = max(g1.max_height, g2.max_height)
    b = top + 1.0 if b is None else b
    if b <= top:
        raise ValueError("measurement plane must lie above both profiles")
    kw = dict(solver_kw or {})
    kw.setdefault("max_residual", math.inf if max_residual is None else max_residual)
    kw.setdefault("raise_on_failure", max_residual is not None and math.isfinite(max_residual))
    pts = _plane_grid(b, N)
    s1 = solve_grating(g1, k, theta, phi, **kw)
    s2 = solve_grating(g2, k, theta, phi, **kw) if g2 is not g1 else s1
    u1, u2 = s1.total_field(pts), s2.total_field(pts)
    norm = np.linalg.norm(u1)
    r1 = solve_grating(g1, k, theta, phi, **_shifted(kw))
    base = float(np.linalg.norm(r1.total_field(pts) - u1) / norm)
    residuals = [s1.residual, s2.residual, r1.residual]
    if g2 is not g1:
        r2 = solve_grating(g2, k, theta, phi, **_shifted(kw))
        base = max(base, float(np.linalg.norm(r2.total_field(pts) - u2) / np.linalg.norm(u2)))
        residuals.append(r2.residual)
    gap = float(np.linalg.norm(u1 - u2) / norm)
    return GapReport(
        {"kind": "grating", "k": k, "theta": theta, "phi": phi, "b": b, "N": N},
        gap,
        base,
        {"residuals": residuals},
    )


def flat_gap_prediction(k: float, eta1: complex, eta2: complex, b: float, phi: float = 0.0) -> float:
    """Gap between two flat gratings at height 0 from the reflection formula.

    On x3 = b the total field is exp(-i beta0 b) + R exp(i beta0 b) times a
    common phase, so the relative gap is |R1 - R2| / |exp(-2 i beta0 b) + R1|.
    """
    b0 = k * math.cos(phi)
    r1, r2 = flat_reflection(k, eta1, phi), flat_reflection(k, eta2, phi)
    return float(abs(r1 - r2) / abs(np.exp(-2j * b0 * b) + r1))


def distinguishability_threshold(gap_at, t_lo: float = 0.0, t_hi: float = 1.0, tol: float = 1e-2,
                                 samples: int = 4) -> dict:
    """Bisection for the smallest t with a Distinguished verdict, then a check above it.

    ``gap_at(t)`` returns the GapReport of o1 against the family member o(t).
    The check confirms that every sampled t in [t_min, t_hi] is Distinguished.
    """
    hi = gap_at(t_hi)
    if not hi.distinguished:
        return {"t_min": None, "monotone": False, "reports": {t_hi: hi.to_dict()}}
    lo_t, hi_t = t_lo, t_hi
    while hi_t - lo_t > tol:
        mid = 0.5 * (lo_t + hi_t)
        if gap_at(mid).distinguished:
            hi_t = mid
        else:
            lo_t = mid
    checks = {}
    for t in np.linspace(hi_t, t_hi, samples + 1)[1:-1]:
        checks[float(t)] = gap_at(float(t))
    return {
        "t_min": hi_t,
        "monotone": all(r.distinguished for r in checks.values()),
        "reports": {t: r.to_dict() for t, r in checks.items()},
    }


# ---------------------------------------------------------------------------
# impedance recovery


class RecoveryRefused(ValueError):
    def __init__(self, message, mask_fraction):
        super().__init__(message)
        self.mask_fraction = mask_fraction


@dataclass
class ImpedanceEstimate:
    face: int
    eta_hat: complex
    pointwise_spread: float
    mask_fraction: float
    n_points: int

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _face_points(sol, face, h):
    if isinstance(sol, GratingSolution):
        g = sol.profile
        pts, nrm, _, _ = _profile_samples(g, h, 0, 0.15, 10.0)
        fac = g.facet_index(pts[:, :2])
        sel = fac == face
        x, n = pts[sel], nrm[sel]
        lo, hi = x.min(axis=0), x.max(axis=0)
        diam = float(np.linalg.norm(hi - lo)) if len(x) > 1 else 2 * math.pi
        return x, n, diam, sol.total_field, sol.gradient
    p = sol.obstacle
    bs = boundary_samples(p, h, grading_levels=0)
    sel = bs.face == face
    fv = p.vertices[list(p.faces[face].vertex_indices)]
    diam = float(np.max(np.linalg.norm(fv[:, None] - fv[None], axis=-1)))
    return (bs.points[sel], bs.normals[sel], diam,
            lambda q: evaluate_total_field(sol, q), lambda q: evaluate_gradient(sol, q))


def recover_impedance(sol, face: int, h: float = None, offset: float = 1e-3, mask: float = 1e-3,
                      min_fraction: float = 0.2, max_points: int = 256) -> ImpedanceEstimate:
    """Estimate eta on one face from the solution as -du/dnu / u.

    The ratio is evaluated at distances d, 2d and 3d (d = offset*diam) along
    the exterior normal and extrapolated quadratically to the face. Points with
    |u| below ``mask`` times the face maximum are discarded; the estimate is
    the componentwise median and the spread is the median absolute deviation.
    At most ``max_points`` evenly strided samples of the face are used.
    """
    if h is None:
        h = 0.5 * sol.diagnostics["h"] if "h" in sol.diagnostics else 0.3
    x, n, diam, ufun, gfun = _face_points(sol, face, h)
    if len(x) == 0:
        raise ValueError(f"no boundary samples on face {face}")
    if len(x) > max_points:
        idx = np.linspace(0, len(x) - 1, max_points).round().astype(int)
        x, n = x[idx], n[idx]
    d = offset * diam

    def ratio(s):
        q = x + s * n
        u = ufun(q)
        du = np.einsum("ij,ij->i", gfun(q), n)
        with np.errstate(divide="ignore", invalid="ignore"):
            return -du / u, np.abs(u)

    e1, amp = ratio(d)
    e2, _ = ratio(2 * d)
    e3, _ = ratio(3 * d)
    est = 3 * e1 - 3 * e2 + e3
    keep = amp > mask * np.max(amp)
    frac = float(np.mean(keep))
    if frac < min_fraction or not np.any(keep):
        raise RecoveryRefused(f"only {frac:.0%} of face {face} is above the field mask; estimate refused", frac)
    vals = est[keep]
    med = complex(np.median(vals.real), np.median(vals.imag))
    spread = float(np.median(np.abs(vals - med)))
    return ImpedanceEstimate(int(face), med, spread, frac, int(len(x)))


# ---------------------------------------------------------------------------
# hypothesis audit


@dataclass
class AuditReport:
    kind: str
    verdict: str
    degree: object
    hypotheses: dict
    vertices: list

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _status(ok, failing=None):
    if ok is None:
        return {"status": "unverifiable", "failing": failing}
    return {"status": "pass" if ok else "fail", "failing": None if ok else failing}


def _l_estimates(apexes, sampler, grad, inside, scale):
    rows = []
    r_values = np.geomspace(0.3, 0.03, 8) * scale
    for apex in apexes:
        try:
            ca = ec.corner_average(sampler, apex, domain_indicator=lambda q: ~inside(q), r_values=r_values,
                                   gradient_sampler=grad, n_points=2**13)
        except ValueError as exc:
            rows.append({"apex": np.asarray(apex).tolist(), "L": None, "error": math.inf, "converged": False,
                         "nonzero": None, "note": str(exc)})
            continue
        mag = float(np.linalg.norm(ca.value))
        nonzero = bool(mag > 10 * ca.error) if ca.converged else None
        rows.append({"apex": np.asarray(apex).tolist(), "L": ca.value.tolist(), "error": ca.error,
                     "converged": bool(ca.converged), "nonzero": nonzero})
    return rows


def _l_hypothesis(rows):
    if not rows:
        return True, None
    bad = [r for r in rows if r["nonzero"] is False]
    if bad:
        return False, f"L(grad u) vanishes at vertex {bad[0]['apex']}"
    unk = [r for r in rows if r["nonzero"] is None]
    if unk:
        return None, f"L(grad u) not converged at vertex {unk[0]['apex']}"
    return True, None


def hypothesis_audit(scatterer, sol=None, estimate_l: bool = True) -> AuditReport:
    """Check the hypotheses of the irrational and rational uniqueness results.

    For a Polyhedron the checks are ``irrational_obstacle`` (admissible and
    every vertex corner irrational) and ``rational_obstacle`` (admissible,
    rational degree at least 3, L(grad u) nonzero at every vertex). Gratings
    get the analogous ``irrational_grating`` and ``rational_grating``.
    L(grad u) needs a solution ``sol``; without one the L item is unverifiable.
    """
    if isinstance(scatterer, Polyhedron):
        rep = admissibility_report(scatterer)
        admissible = rep.admissible
        corners = rep.vertex_corners
        verdict, degree = rep.verdict, rep.degree
        kind = "obstacle"
        apexes = [v.apex for v in corners]
        edge_len = min(float(np.linalg.norm(e.segment[1] - e.segment[0])) for e in rep.edge_corners)
        if sol is not None:
            sampler = lambda q: evaluate_total_field(sol, q, allow_boundary=True)  # noqa: E731
            grad = lambda q: evaluate_gradient(sol, q, allow_boundary=True)  # noqa: E731
            inside = scatterer.contains
    elif isinstance(scatterer, GratingProfile):
        gc = grating_corners(scatterer)
        admissible = bool(np.all(scatterer.impedances != 0))
        corners = gc.corners
        verdict, degree = gc.verdict, gc.degree
        kind = "grating"
        apexes = [v.apex for v in corners]
        segs = [np.linalg.norm(np.asarray(e.segment[1]) - np.asarray(e.segment[0])) for e in gc.edge_corners]
        edge_len = float(min(segs)) if segs else 1.0
        if sol is not None:
            sampler, grad = sol.total_field, sol.gradient
            inside = lambda q: q[:, 2] <= scatterer.height(q[:, :2])  # noqa: E731
    else:
        raise TypeError("scatterer must be a Polyhedron or a GratingProfile")

    if sol is not None and estimate_l:
        rows = _l_estimates(apexes, sampler, grad, inside, 0.5 * edge_len)
        l_ok, l_fail = _l_hypothesis(rows)
    else:
        rows = [{"apex": np.asarray(a).tolist(), "L": None} for a in apexes]
        l_ok, l_fail = None, "no solution supplied for L(grad u)"

    rational = [c for c in corners if c.rational]
    first_rational = None if not rational else f"rational vertex corner at {np.asarray(rational[0].apex).tolist()}"
    for row, c in zip(rows, corners):
        row["classification"] = c.classification

    irr_ok = admissible and verdict == "irrational"
    irr_fail = "face impedance not admissible" if not admissible else first_rational
    if not admissible:
        rat = _status(False, "face impedance not admissible")
    elif verdict != "rational":
        rat = {"status": "n/a", "failing": "scatterer is irrational"}
    elif degree < 3:
        rat = _status(False, f"rational degree {degree} < 3")
    else:
        rat = _status(l_ok, l_fail)
    hyp = {f"irrational_{kind}": _status(irr_ok, irr_fail), f"rational_{kind}": rat}
    return AuditReport(kind, verdict, degree, hyp, rows)


# ---------------------------------------------------------------------------
# corner vanishing probe


def _sampler(field_like):
    if isinstance(field_like, FieldSolution):
        return lambda q: evaluate_total_field(field_like, q), field_like.k**2, field_like.obstacle.distance_to_boundary, \
            lambda q: ~field_like.obstacle.contains(q)
    if isinstance(field_like, GratingSolution):
        prof = field_like.profile
        return field_like.total_field, field_like.k**2, lambda q: q[:, 2] - prof.height(q[:, :2]), \
            lambda q: q[:, 2] > prof.height(q[:, :2])
    return field_like, None, None, None


def corner_vanishing_probe(field_like, x_c, lam: float = None, nmax: int = 6, radius: float = None,
                           rho_values=None, n_points: int = 2**15) -> dict:
    """Fit a spherical-wave expansion at ``x_c`` and estimate the vanishing order there.

    ``field_like`` is a FieldSolution, a GratingSolution or a callable
    sampler (then ``lam`` is required). The point must lie strictly in the
    exterior of the solution's own scatterer.
    """
    sampler, lam0, dist, outside = _sampler(field_like)
    lam = lam if lam is not None else lam0
    if lam is None:
        raise ValueError("lam is required for a plain sampler")
    x_c = np.asarray(x_c, dtype=float)
    gap = math.inf
    if dist is not None:
        if not bool(outside(x_c[None])[0]):
            raise ValueError("corner is not in the exterior of the scatterer")
        gap = float(np.abs(dist(x_c[None]))[0])
    radius = radius if radius is not None else min(0.5, 0.5 * gap)
    rho = np.asarray(rho_values if rho_values is not None else np.geomspace(0.8, 0.1, 7) * radius)
    out = {"corner": x_c.tolist(), "radius": radius, "lam": lam}
    try:
        exp = ec.fit_expansion(sampler, x_c, radius, lam, nmax)
        k = math.sqrt(lam)
        sizes = []
        for n in range(nmax + 1):
            a = np.array([exp.coefficient(n, m) for m in range(-n, n + 1)])
            sizes.append(float(np.linalg.norm(a) * abs(4 * math.pi * spherical_bessel_j(n, k * radius))))
        top = max(sizes)
        lead = next((n for n, s in enumerate(sizes) if top > 0 and s > 1e-6 * top), None)
        out.update({"fit_residual": exp.residual, "fit_condition": exp.condition, "leading_order": lead,
                    "term_sizes": sizes, "fit_failed": False})
    except ec.FitError as exc:
        out.update({"fit_failed": True, "fit_error": str(exc)})
    est = ec.estimate_vanishing_order(sampler, x_c, rho_values=rho, n_points=n_points)
    out["estimate"] = est.to_dict()
    out["degenerate"] = bool(est.degenerate)
    out["vanishes_to_high_order"] = bool(not est.degenerate and est.order_int is not None and est.order_int >= 1)
    return out
