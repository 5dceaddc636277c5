"""Plane-wave scattering by impedance polyhedra, method of fundamental solutions.

The scattered field is a sum of outgoing point sources placed inside the
obstacle,

    u^s(x) = sum_j w_j exp(i k |x - y_j|) / (4 pi |x - y_j|),

with weights fitted so that du/dnu + eta u = 0 holds in the least-squares
sense at boundary collocation points. Collocation is refined toward sharp
edges, and the dense system is solved by truncated SVD.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.spatial import cKDTree

from .geometry import Polyhedron, extract_edge_corners

__all__ = [
    "IncidentWave",
    "SolverError",
    "BoundarySamples",
    "FieldSolution",
    "FarFieldPattern",
    "boundary_samples",
    "solve_scattering",
    "far_field",
    "sphere_grid",
    "evaluate_total_field",
    "evaluate_gradient",
    "evaluate_scattered",
    "sphere_far_field",
    "write_far_field_csv",
    "read_far_field_csv",
]


class SolverError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class IncidentWave:
    k: float
    d: tuple

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        if not self.k > 0:
            raise ValueError("wavenumber must be positive")
        if d.shape != (3,) or abs(np.linalg.norm(d) - 1) > 1e-12:
            raise ValueError("direction must be a unit 3-vector")
        object.__setattr__(self, "d", tuple(float(v) for v in d))

    @property
    def direction(self) -> np.ndarray:
        return np.array(self.d)

    def field(self, x) -> np.ndarray:
        return np.exp(1j * self.k * (np.asarray(x, dtype=float) @ self.direction))

    def gradient(self, x) -> np.ndarray:
        return 1j * self.k * self.field(x)[:, None] * self.direction[None]


# ---------------------------------------------------------------------------
# boundary sampling


@dataclass
class BoundarySamples:
    points: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    face: np.ndarray
    size: np.ndarray  # local cell scale
    eta: np.ndarray


def _split4(tri: np.ndarray) -> np.ndarray:
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    return np.concatenate([np.stack(t, axis=1) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))])


def _diam(tri):
    e = [np.linalg.norm(tri[:, i] - tri[:, (i + 1) % 3], axis=1) for i in range(3)]
    return np.max(e, axis=0)


def _area(tri):
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


def _segment_distance(p, seg_a, seg_b):
    """Distance from each point to the nearest of the segments [seg_a, seg_b]."""
    if len(seg_a) == 0:
        return np.full(len(p), np.inf)
    d = seg_b - seg_a
    out = np.full(len(p), np.inf)
    for s in range(0, len(p), 4096):
        q = p[s : s + 4096, None, :] - seg_a[None]
        t = np.clip(np.einsum("psj,sj->ps", q, d) / np.einsum("ij,ij->i", d, d), 0, 1)
        out[s : s + 4096] = np.min(np.linalg.norm(q - t[..., None] * d[None], axis=-1), axis=1)
    return out


def sharp_edges(p: Polyhedron, angle_deg: float = 10.0):
    """Edge segments whose face normals turn by more than ``angle_deg``."""
    segs = [e.segment for e in extract_edge_corners(p) if (math.pi - e.dihedral) > math.radians(angle_deg)]
    if not segs:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.array([s[0] for s in segs]), np.array([s[1] for s in segs])


def _graded_breaks(ratio, levels):
    return np.array([0.0] + [ratio**j for j in range(levels, 0, -1)] + [1.0])


def _cells(t_breaks, s_breaks, pos):
    """Cell sample coordinates (s, t) and the cell extents."""
    ta, tb = t_breaks[:-1], t_breaks[1:]
    sa, sb = s_breaks[:-1], s_breaks[1:]
    TA, SA = np.meshgrid(ta, sa, indexing="ij")
    TB, SB = np.meshgrid(tb, sb, indexing="ij")
    t = TA + pos[1] * (TB - TA)
    s = SA + pos[0] * (SB - SA)
    return s.ravel(), t.ravel(), TA.ravel(), TB.ravel(), (SB - SA).ravel()


def sample_triangles(tris, h, seg_a, seg_b, ratio=0.15, levels=3, bary=(1 / 3, 1 / 3, 1 / 3),
                     cell_pos=(0.5, 0.5), along=2):
    """Sample points and weights on flat triangles, graded toward given edge segments.

    Triangles are split uniformly until their diameter is below ``h``. A
    sub-triangle with one side on an edge segment is cut into strips parallel
    to that side with widths in geometric ratio ``ratio`` (``levels`` graded
    strips); one touching an edge only at a vertex, or lying in a corner
    between two edges, is cut into a fan graded toward that vertex.

    Returns (points, areas, parent index, local scale).
    """
    tris = np.asarray(tris, dtype=float)
    parent = np.arange(len(tris))
    sub, par = [], []
    for i, t in enumerate(tris):
        cur = t[None]
        while _diam(cur).max() > h:
            cur = _split4(cur)
        sub.append(cur)
        par.append(np.full(len(cur), parent[i]))
    sub = np.concatenate(sub)
    par = np.concatenate(par)
    scale = float(np.max(_diam(tris))) if len(tris) else 1.0
    tol = 1e-9 * scale
    if len(seg_a):
        on_v = np.stack([_segment_distance(sub[:, j], seg_a, seg_b) < tol for j in range(3)], axis=1)
        mids = [0.5 * (sub[:, j] + sub[:, (j + 1) % 3]) for j in range(3)]
        on_side = np.stack(
            [on_v[:, j] & on_v[:, (j + 1) % 3] & (_segment_distance(mids[j], seg_a, seg_b) < tol) for j in range(3)],
            axis=1,
        )
    else:
        on_v = np.zeros((len(sub), 3), dtype=bool)
        on_side = on_v.copy()
    w = np.asarray(bary, dtype=float)
    area = _area(sub)
    plain = ~on_v.any(axis=1)
    pts = [np.einsum("k,tkj->tj", w, sub[plain])]
    areas = [area[plain]]
    parents = [par[plain]]
    sizes = [_diam(sub[plain])]
    tb = _graded_breaks(ratio, levels)
    s_uniform = np.linspace(0, 1, along + 1)
    s_two = np.concatenate([_graded_breaks(ratio, levels - 1) * 0.5, 1 - _graded_breaks(ratio, levels - 1)[::-1][1:] * 0.5])
    for i in np.nonzero(~plain)[0]:
        T, A = sub[i], area[i]
        sides = np.nonzero(on_side[i])[0]
        if len(sides) == 1:
            j = sides[0]
            a, b, c = T[j], T[(j + 1) % 3], T[(j + 2) % 3]
            s, t, ta, tb_, ds = _cells(tb, s_uniform, cell_pos)
            p = (1 - t)[:, None] * (a + s[:, None] * (b - a)) + t[:, None] * c
            cell_area = A * ((1 - ta) ** 2 - (1 - tb_) ** 2) * ds
        else:
            if len(sides) >= 2:
                # shared vertex of the first two sides on an edge
                j = ({sides[0], (sides[0] + 1) % 3} & {sides[1], (sides[1] + 1) % 3}).pop()
                sb = s_two
            else:
                j = int(np.nonzero(on_v[i])[0][0])
                sb = s_uniform
            a, b, c = T[j], T[(j + 1) % 3], T[(j + 2) % 3]
            s, t, ta, tb_, ds = _cells(tb, sb, cell_pos)
            p = a + t[:, None] * ((b - a) + s[:, None] * (c - b))
            cell_area = A * (tb_**2 - ta**2) * ds
        pts.append(p)
        areas.append(cell_area)
        parents.append(np.full(len(p), par[i]))
        sizes.append(np.sqrt(2 * cell_area))
    return np.concatenate(pts), np.concatenate(areas), np.concatenate(parents), np.concatenate(sizes)


def boundary_samples(p: Polyhedron, h: float, grading_levels: int = 3, grading_ratio: float = 0.15,
                     grading_angle_deg: float = 10.0, bary=(1 / 3, 1 / 3, 1 / 3),
                     cell_pos=(0.5, 0.5)) -> BoundarySamples:
    """Boundary points with area weights, graded toward edges that turn by more than ``grading_angle_deg``."""
    sa, sb = sharp_edges(p, grading_angle_deg) if grading_levels > 0 else (np.zeros((0, 3)),) * 2
    pts, areas, tri, size = sample_triangles(p.triangles, h, sa, sb, grading_ratio, grading_levels, bary, cell_pos)
    face = p.triangle_face[tri]
    return BoundarySamples(pts, p.normals[face], areas, face, size, p.impedances[face])


# ---------------------------------------------------------------------------
# kernels


def _thin(points, radius):
    """Greedy Poisson-disk subset, finest radius first."""
    tree = cKDTree(points)
    alive = np.ones(len(points), dtype=bool)
    chosen = []
    for i in np.argsort(radius, kind="stable"):
        if alive[i]:
            chosen.append(i)
            alive[tree.query_ball_point(points[i], 0.999 * radius[i])] = False
    return np.sort(np.array(chosen, dtype=int))


def _kernel(x, y, k):
    """Phi(x, y) and grad_x Phi(x, y) for x (P, 3), y (S, 3)."""
    diff = x[:, None, :] - y[None, :, :]
    R = np.linalg.norm(diff, axis=-1)
    phi = np.exp(1j * k * R) / (4 * np.pi * R)
    g = (phi * (1j * k - 1.0 / R) / R)[..., None] * diff
    return phi, g


def _bc_matrix(samples: BoundarySamples, sources, k):
    out = np.empty((len(samples.points), len(sources)), dtype=complex)
    for s in range(0, len(out), 1024):
        sl = slice(s, s + 1024)
        phi, g = _kernel(samples.points[sl], sources, k)
        out[sl] = np.einsum("psj,pj->ps", g, samples.normals[sl]) + samples.eta[sl, None] * phi
    return out


def _bc_incident(samples: BoundarySamples, inc: IncidentWave):
    ui = inc.field(samples.points)
    return ui * (1j * inc.k * (samples.normals @ inc.direction) + samples.eta)


# ---------------------------------------------------------------------------
# solver


@dataclass
class FieldSolution:
    obstacle: Polyhedron
    incident: IncidentWave
    source_points: np.ndarray
    source_weights: np.ndarray
    residual: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def k(self) -> float:
        return self.incident.k


def source_points(obstacle: Polyhedron, depth: float, spacing: float) -> np.ndarray:
    """Interior source points on the inward offset surface at ``depth``.

    Boundary points are pushed inward along their face normal and thinned to
    ``spacing``. Points that end up closer than ``depth / 2`` to any face
    (near edges and vertices) are dropped, which rounds the offset surface
    there.
    """
    b = boundary_samples(obstacle, spacing / 2, grading_levels=0)
    y = b.points - depth * b.normals
    y = y[_thin(y, np.full(len(y), spacing))]
    keep = obstacle.contains(y)
    keep[keep] &= obstacle.distance_to_boundary(y[keep]) >= 0.5 * depth
    return y[keep]


def solve_scattering(obstacle: Polyhedron, inc: IncidentWave, h: float = None, offset: float = 0.15,
                     spacing: float = 0.5, grading_levels: int = 3, grading_ratio: float = 0.15,
                     grading_angle_deg: float = 10.0, rcond: float = 1e-12, max_residual: float = 1e-3,
                     max_sources: int = 1500, raise_on_failure: bool = True) -> FieldSolution:
    """Method-of-fundamental-solutions solve of the impedance problem.

    Sources sit at depth ``offset * inradius`` with spacing ``spacing * depth``,
    widened if needed to stay near ``max_sources`` and capped at a quarter
    wavelength. Collocation points have spacing ``h``
    (default 3/4 of the source spacing) and are graded toward edges.
    The reported residual is the relative L2 impedance-condition residual at
    held-out points; above ``max_residual`` a SolverError is raised unless
    ``raise_on_failure`` is False.
    """
    k = inc.k
    depth = offset * obstacle.inradius()
    budget = np.sqrt(obstacle.areas.sum() / (0.6 * max_sources))
    src_spacing = min(max(spacing * depth, budget), 0.5 * np.pi / k)
    h = h or 0.75 * src_spacing
    y = source_points(obstacle, depth, src_spacing)
    if len(y) == 0:
        raise SolverError("no admissible source points")
    grading = dict(grading_levels=grading_levels, grading_ratio=grading_ratio, grading_angle_deg=grading_angle_deg)
    col = boundary_samples(obstacle, h, **grading)
    sw = np.sqrt(col.areas)
    A = _bc_matrix(col, y, k) * sw[:, None]
    b = -_bc_incident(col, inc) * sw
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(s > rcond * s[0]))
    w = Vh[:r].conj().T @ ((U[:, :r].conj().T @ b) / s[:r])
    del U, Vh
    # held-out check points at a different position inside each cell
    chk = boundary_samples(obstacle, h, bary=(0.6, 0.25, 0.15), cell_pos=(0.3, 0.7), **grading)
    res = _relative_bc_residual(chk, y, w, inc)
    fit = float(np.linalg.norm(A @ w - b) / np.linalg.norm(b))
    amplification = float(np.linalg.norm(w) * s[0] / np.linalg.norm(b))
    diag = {
        "n_collocation": int(len(col.points)),
        "n_check": int(len(chk.points)),
        "n_sources": int(len(y)),
        "rank": r,
        "truncated": int(len(s) - r),
        "condition": float(s[0] / s[r - 1]),
        "amplification": amplification,
        "resonance_suspect": bool(amplification > 1e8),
        "fit_residual": fit,
        "check_residual": res,
        "h": h,
        "source_depth": depth,
        "source_spacing": src_spacing,
    }
    sol = FieldSolution(obstacle, inc, y, w, res, diag)
    if res > max_residual and raise_on_failure:
        raise SolverError(f"boundary residual {res:.2e} exceeds {max_residual:.0e}", diag)
    return sol


def _relative_bc_residual(samples: BoundarySamples, y, w, inc):
    sw = np.sqrt(samples.areas)
    bc = (_bc_matrix(samples, y, inc.k) @ w + _bc_incident(samples, inc)) * sw
    ref = _bc_incident(samples, inc) * sw
    return float(np.linalg.norm(bc) / np.linalg.norm(ref))


def boundary_residual(sol: FieldSolution, bary=(0.2, 0.2, 0.6), cell_pos=(0.7, 0.3), h=None) -> float:
    """Relative impedance-condition residual at boundary points."""
    samples = boundary_samples(sol.obstacle, h or sol.diagnostics["h"], bary=bary, cell_pos=cell_pos)
    return _relative_bc_residual(samples, sol.source_points, sol.source_weights, sol.incident)


def evaluate_scattered(sol: FieldSolution, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(pts), dtype=complex)
    for s in range(0, len(pts), 2048):
        phi, _ = _kernel(pts[s : s + 2048], sol.source_points, sol.k)
        out[s : s + 2048] = phi @ sol.source_weights
    return out


def _check_exterior(sol, pts, allow_boundary):
    if allow_boundary:
        return
    inside = sol.obstacle.winding_number(pts) > 0.5
    if np.any(inside):
        raise ValueError(f"{int(inside.sum())} evaluation point(s) lie inside the obstacle")


def evaluate_total_field(sol: FieldSolution, points, allow_boundary: bool = False) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    _check_exterior(sol, pts, allow_boundary)
    return sol.incident.field(pts) + evaluate_scattered(sol, pts)


def evaluate_gradient(sol: FieldSolution, points, allow_boundary: bool = False) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    _check_exterior(sol, pts, allow_boundary)
    out = sol.incident.gradient(pts).astype(complex)
    for s in range(0, len(pts), 2048):
        _, g = _kernel(pts[s : s + 2048], sol.source_points, sol.k)
        out[s : s + 2048] += np.einsum("psj,s->pj", g, sol.source_weights)
    return out


# ---------------------------------------------------------------------------
# far field


@dataclass
class FarFieldPattern:
    directions: np.ndarray  # (P, 3) unit vectors
    weights: np.ndarray  # quadrature weights summing to 4 pi
    values: np.ndarray
    theta: np.ndarray = None
    phi: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.weights * np.abs(self.values) ** 2)))

    def relative_distance(self, other) -> float:
        diff = self.values - np.asarray(other.values if isinstance(other, FarFieldPattern) else other)
        return float(np.sqrt(np.sum(self.weights * np.abs(diff) ** 2))) / self.l2_norm()


def sphere_grid(order: int):
    """Gauss-Legendre x trapezoid grid exact for spherical polynomials of degree <= 2 order + 1."""
    nt, nphi = order + 1, 2 * order + 2
    x, wx = np.polynomial.legendre.leggauss(nt)
    th = np.arccos(x)
    ph = 2 * np.pi * np.arange(nphi) / nphi
    T, P = np.meshgrid(th, ph, indexing="ij")
    W = np.outer(wx, np.full(nphi, 2 * np.pi / nphi))
    dirs = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    return dirs, W.ravel(), T.ravel(), P.ravel()


def far_field(sol: FieldSolution, order: int = 16, directions=None) -> FarFieldPattern:
    """u_inf(x) = (1/4pi) sum_j w_j exp(-i k x . y_j) on a product grid (or given directions)."""
    if directions is None:
        dirs, wts, th, ph = sphere_grid(order)
    else:
        dirs = np.atleast_2d(np.asarray(directions, dtype=float))
        wts, th, ph = np.full(len(dirs), np.nan), None, None
    vals = np.exp(-1j * sol.k * dirs @ sol.source_points.T) @ sol.source_weights / (4 * np.pi)
    meta = {"k": sol.k, "d": list(sol.incident.d), "residual": sol.residual}
    return FarFieldPattern(dirs, wts, vals, th, ph, meta)


def sphere_far_field(k: float, a: float, eta: complex, cos_gamma, nmax: int = None) -> np.ndarray:
    """Far field of a plane wave on an impedance sphere of radius ``a``."""
    nmax = nmax or int(k * a + 4 * (k * a) ** (1 / 3) + 20)
    n = np.arange(nmax + 1)
    ka = k * a
    jn, jd = special.spherical_jn(n, ka), special.spherical_jn(n, ka, derivative=True)
    yn, yd = special.spherical_yn(n, ka), special.spherical_yn(n, ka, derivative=True)
    hn, hd = jn + 1j * yn, jd + 1j * yd
    c = -(k * jd + eta * jn) / (k * hd + eta * hn)
    x = np.asarray(cos_gamma, dtype=float)
    P = np.array([special.eval_legendre(m, x) for m in n])
    return (-1j / k) * np.tensordot((2 * n + 1) * c, P, axes=1)


# ---------------------------------------------------------------------------
# CSV


def write_far_field_csv(ff: FarFieldPattern, path) -> None:
    r, th, ph = (None, ff.theta, ff.phi)
    if th is None:
        th = np.arccos(np.clip(ff.directions[:, 2], -1, 1))
        ph = np.mod(np.arctan2(ff.directions[:, 1], ff.directions[:, 0]), 2 * np.pi)
    m = ff.meta
    lines = [
        f"# k={m.get('k')!r}",
        "# d=" + " ".join(repr(float(v)) for v in m.get("d", [])),
        f"# residual={m.get('residual')!r}",
        "theta,phi,re,im",
    ]
    lines += [f"{t!r},{p!r},{v.real!r},{v.imag!r}" for t, p, v in zip(th.tolist(), ph.tolist(), ff.values.tolist())]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_far_field_csv(path):
    """Returns (theta, phi, values, header dict)."""
    meta, rows = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key] = val
            elif line and not line.startswith("theta"):
                rows.append([float(t) for t in line.split(",")])
    a = np.array(rows).reshape(-1, 4)
    return a[:, 0], a[:, 1], a[:, 2] + 1j * a[:, 3], meta
