"""Polyhedral obstacles, bi-periodic polyhedral gratings and their corners.

Dihedral angles are reported in (0, pi) as ``pi - angle(n_a, n_b)`` where
``n_a, n_b`` are the outward normals of the two faces meeting along an edge.
For a convex edge this is the interior wedge angle; for a reflex edge it is
the exterior wedge angle. Both wedges of an edge share the same denominator
when written as a multiple of pi, so the rational degree does not depend on
which wedge is reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "GeometryError",
    "FormatError",
    "ImpedanceSpec",
    "Face",
    "Polyhedron",
    "AngleClass",
    "EdgeCorner",
    "VertexCorner",
    "AdmissibilityReport",
    "GratingProfile",
    "GratingCorners",
    "classify_angle",
    "extract_edge_corners",
    "vertex_corners",
    "admissibility_report",
    "grating_corners",
    "triangulate_polygon",
    "cube",
    "box",
    "regular_tetrahedron",
    "prism",
    "triangle_with_angles",
    "icosphere",
    "flat_grating",
    "pyramid_grating",
    "trapezoid_grating",
    "read_offi",
    "write_offi",
    "read_grati",
    "write_grati",
]

TWO_PI = 2.0 * math.pi
DEFAULT_MAX_DENOMINATOR = 1000
DEFAULT_TOL = 1e-9


class GeometryError(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class ImpedanceSpec:
    """Face impedance: constant part plus optional higher-order terms.

    Higher-order terms are kept for bookkeeping only; solvers use ``alpha0``.
    """

    alpha0: complex
    higher_terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "alpha0", complex(self.alpha0))
        if not (math.isfinite(self.alpha0.real) and math.isfinite(self.alpha0.imag)):
            raise GeometryError("impedance must be finite")

    @property
    def admissible(self) -> bool:
        return self.alpha0 != 0


def _as_impedance(eta) -> ImpedanceSpec:
    return eta if isinstance(eta, ImpedanceSpec) else ImpedanceSpec(complex(eta))


@dataclass(frozen=True)
class Face:
    vertex_indices: tuple
    impedance: ImpedanceSpec = ImpedanceSpec(1.0)

    def __post_init__(self):
        object.__setattr__(self, "vertex_indices", tuple(int(i) for i in self.vertex_indices))
        object.__setattr__(self, "impedance", _as_impedance(self.impedance))
        if len(self.vertex_indices) < 3:
            raise GeometryError("a face needs at least 3 vertices")


# ---------------------------------------------------------------------------
# planar polygon helpers


def _polygon_normal(pts: np.ndarray) -> np.ndarray:
    # Newell's method, robust for non-convex planar polygons
    nxt = np.roll(pts, -1, axis=0)
    n = np.array(
        [
            np.sum((pts[:, 1] - nxt[:, 1]) * (pts[:, 2] + nxt[:, 2])),
            np.sum((pts[:, 2] - nxt[:, 2]) * (pts[:, 0] + nxt[:, 0])),
            np.sum((pts[:, 0] - nxt[:, 0]) * (pts[:, 1] + nxt[:, 1])),
        ]
    )
    return n


def _plane_basis(normal: np.ndarray):
    n = normal / np.linalg.norm(normal)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def triangulate_polygon(pts2d: np.ndarray) -> list:
    """Ear-clipping triangulation of a simple CCW polygon; returns index triples."""
    idx = list(range(len(pts2d)))
    area = 0.5 * np.sum(pts2d[:, 0] * np.roll(pts2d[:, 1], -1) - np.roll(pts2d[:, 0], -1) * pts2d[:, 1])
    if area < 0:
        idx.reverse()
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(pts2d) ** 2:
            raise GeometryError("polygon triangulation failed (self-intersecting face?)")
        clipped = False
        for j in range(len(idx)):
            i0, i1, i2 = idx[j - 1], idx[j], idx[(j + 1) % len(idx)]
            a, b, c = pts2d[i0], pts2d[i1], pts2d[i2]
            if cross(a, b, c) <= 1e-14 * max(1.0, np.ptp(pts2d)):
                continue
            inside = False
            for k in idx:
                if k in (i0, i1, i2):
                    continue
                p = pts2d[k]
                if cross(a, b, p) >= 0 and cross(b, c, p) >= 0 and cross(c, a, p) >= 0:
                    inside = True
                    break
            if inside:
                continue
            tris.append((i0, i1, i2))
            idx.pop(j)
            clipped = True
            break
        if not clipped:
            raise GeometryError("polygon triangulation failed (degenerate face?)")
    tris.append(tuple(idx))
    return tris


# ---------------------------------------------------------------------------
# polyhedra


class Polyhedron:
    """Closed, outward-oriented polyhedral surface with per-face impedance."""

    def __init__(self, vertices, faces: Sequence[Face], validate: bool = True):
        self.vertices = np.array(vertices, dtype=float)
        self.vertices.setflags(write=False)
        self.faces = tuple(faces)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise GeometryError("vertices must be an (V, 3) array")
        for f in self.faces:
            if max(f.vertex_indices) >= len(self.vertices) or min(f.vertex_indices) < 0:
                raise GeometryError("face refers to a missing vertex")
        self._build()
        if validate:
            self._validate()

    # -- construction -----------------------------------------------------
    def _build(self):
        normals, areas, centroids, tris, tri_face = [], [], [], [], []
        for fi, face in enumerate(self.faces):
            pts = self.vertices[list(face.vertex_indices)]
            nv = _polygon_normal(pts)
            a2 = np.linalg.norm(nv)
            if a2 == 0:
                raise GeometryError(f"face {fi} has zero area")
            n = nv / a2
            normals.append(n)
            areas.append(0.5 * a2)
            e1, e2 = _plane_basis(n)
            p2 = np.stack([(pts - pts[0]) @ e1, (pts - pts[0]) @ e2], axis=1)
            for t in triangulate_polygon(p2):
                tris.append(pts[list(t)])
                tri_face.append(fi)
            centroids.append(pts.mean(axis=0))
        self.normals = np.array(normals)
        self.areas = np.array(areas)
        self.face_centroids = np.array(centroids)
        self.triangles = np.array(tris)
        self.triangle_face = np.array(tri_face)
        v = self.vertices
        self.diameter = max(
            float(np.max(np.linalg.norm(v[s : s + 512, None] - v[None], axis=-1))) for s in range(0, len(v), 512)
        )
        self._inradius = None

    def _validate(self):
        scale = self.diameter
        for fi, face in enumerate(self.faces):
            pts = self.vertices[list(face.vertex_indices)]
            dev = np.abs((pts - pts.mean(axis=0)) @ self.normals[fi])
            if np.max(dev) > 1e-10 * scale:
                raise GeometryError(f"face {fi} is not planar (deviation {np.max(dev):.3e})")
        directed = {}
        for fi, face in enumerate(self.faces):
            vi = face.vertex_indices
            for a, b in zip(vi, vi[1:] + vi[:1]):
                if a == b:
                    raise GeometryError(f"face {fi} has a repeated vertex")
                if (a, b) in directed:
                    raise GeometryError(f"edge ({a},{b}) used twice in the same direction: inconsistent orientation")
                directed[(a, b)] = fi
        for (a, b), fi in directed.items():
            if (b, a) not in directed:
                raise GeometryError(f"edge ({a},{b}) of face {fi} has no neighbour: surface not closed")
        # single shell: faces connected through shared edges
        adj = {i: set() for i in range(len(self.faces))}
        for (a, b), fi in directed.items():
            adj[fi].add(directed[(b, a)])
        seen, stack = {0}, [0]
        while stack:
            for j in adj[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        if len(seen) != len(self.faces):
            raise GeometryError("surface has more than one connected shell")
        if self.volume <= 0:
            raise GeometryError("faces are oriented inward (non-positive volume)")

    # -- derived quantities ----------------------------------------------
    @property
    def volume(self) -> float:
        t = self.triangles
        return float(np.sum(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2]))) / 6.0)

    @property
    def centroid(self) -> np.ndarray:
        t = self.triangles
        vol = np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])) / 6.0
        return (vol[:, None] * t.sum(axis=1) / 4.0).sum(axis=0) / vol.sum()

    @property
    def impedances(self) -> np.ndarray:
        return np.array([f.impedance.alpha0 for f in self.faces])

    def edges(self) -> dict:
        """Undirected edges -> (face to the left, face to the right)."""
        directed = {}
        for fi, face in enumerate(self.faces):
            vi = face.vertex_indices
            for a, b in zip(vi, vi[1:] + vi[:1]):
                directed[(a, b)] = fi
        out = {}
        for (a, b), fi in directed.items():
            if a < b:
                out[(a, b)] = (fi, directed[(b, a)])
        return out

    def contains(self, points) -> np.ndarray:
        """Winding-number inside test."""
        return self.winding_number(points) > 0.5

    def winding_number(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        total = np.zeros(len(p))
        step = max(1, 2_000_000 // len(self.triangles))
        for chunk in range(0, len(p), step):
            q = p[chunk : chunk + step, None, :]
            a = self.triangles[None, :, 0] - q
            b = self.triangles[None, :, 1] - q
            c = self.triangles[None, :, 2] - q
            la, lb, lc = (np.linalg.norm(v, axis=-1) for v in (a, b, c))
            num = np.einsum("...i,...i", a, np.cross(b, c))
            den = (
                la * lb * lc
                + np.einsum("...i,...i", a, b) * lc
                + np.einsum("...i,...i", b, c) * la
                + np.einsum("...i,...i", c, a) * lb
            )
            total[chunk : chunk + step] = np.sum(2.0 * np.arctan2(num, den), axis=1) / (4 * np.pi)
        return total

    def distance_to_boundary(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        cen = self.triangles.mean(axis=1)
        reach = float(np.max(np.linalg.norm(self.triangles - cen[:, None], axis=-1)))
        tree = cKDTree(cen)
        upper, _ = tree.query(p)
        out = np.full(len(p), np.inf)
        for s in range(0, len(p), 256):
            cand = tree.query_ball_point(p[s : s + 256], upper[s : s + 256] + reach + 1e-12)
            pi = np.repeat(np.arange(s, s + len(cand)), [len(c) for c in cand])
            ti = np.concatenate([np.asarray(c, dtype=int) for c in cand])
            for q in range(0, len(pi), 200_000):
                sl = slice(q, q + 200_000)
                np.minimum.at(out, pi[sl], _point_triangle_distance(p[pi[sl]], self.triangles[ti[sl]]))
        return out

    def inradius(self) -> float:
        """Largest ball radius inside the body, estimated on a lattice of candidate centres."""
        if self._inradius is None:
            lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
            g = [np.linspace(lo[i], hi[i], 17)[1:-1] for i in range(3)]
            cand = np.stack(np.meshgrid(*g, indexing="ij"), axis=-1).reshape(-1, 3)
            cand = np.vstack([cand, self.centroid[None]])
            inside = cand[self.contains(cand)]
            if len(inside) == 0:
                raise GeometryError("could not locate interior points")
            self._inradius = float(np.max(self.distance_to_boundary(inside)))
        return self._inradius

    # -- transformations -------------------------------------------------
    def _with_vertices(self, verts):
        return Polyhedron(verts, self.faces)

    def translated(self, t) -> "Polyhedron":
        return self._with_vertices(self.vertices + np.asarray(t, dtype=float))

    def scaled(self, s: float, about=None) -> "Polyhedron":
        c = self.centroid if about is None else np.asarray(about, dtype=float)
        return self._with_vertices(c + s * (self.vertices - c))

    def rotated(self, R) -> "Polyhedron":
        return self._with_vertices(self.vertices @ np.asarray(R, dtype=float).T)

    def with_impedance(self, eta) -> "Polyhedron":
        """Same geometry with a scalar or per-face impedance."""
        etas = np.broadcast_to(np.asarray(eta, dtype=complex), (len(self.faces),))
        faces = [Face(f.vertex_indices, ImpedanceSpec(complex(e))) for f, e in zip(self.faces, etas)]
        return Polyhedron(self.vertices, faces)

    def __repr__(self):
        return f"Polyhedron(V={len(self.vertices)}, F={len(self.faces)}, diameter={self.diameter:.4g})"


def _point_triangle_distance(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Elementwise distance from p[i] (M, 3) to triangle tri[i] (M, 3, 3)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac = b - a, c - a
    n = np.cross(ab, ac)
    nn = np.einsum("ij,ij->i", n, n)
    ap = p - a
    s = np.einsum("ij,ij->i", ap, n)
    proj = ap - (s / nn)[:, None] * n
    d00 = np.einsum("ij,ij->i", ab, ab)
    d01 = np.einsum("ij,ij->i", ab, ac)
    d11 = np.einsum("ij,ij->i", ac, ac)
    d20 = np.einsum("ij,ij->i", proj, ab)
    d21 = np.einsum("ij,ij->i", proj, ac)
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    inside = (v >= 0) & (w >= 0) & (v + w <= 1)
    best = np.where(inside, np.abs(s) / np.sqrt(nn), np.inf)

    def seg(p0, p1):
        d = p1 - p0
        t = np.clip(np.einsum("ij,ij->i", p - p0, d) / np.einsum("ij,ij->i", d, d), 0, 1)
        return np.linalg.norm(p - p0 - t[:, None] * d, axis=1)

    return np.minimum(best, np.minimum(seg(a, b), np.minimum(seg(b, c), seg(c, a))))


# ---------------------------------------------------------------------------
# angle classification


@dataclass(frozen=True)
class AngleClass:
    """Rational (alpha = q/p, degree p) or irrational angle ratio."""

    rational: bool
    p: int
    q: int
    error: float = 0.0

    @property
    def degree(self):
        return self.p if self.rational else None

    @property
    def kind(self) -> str:
        return "rational" if self.rational else "irrational"

    def __str__(self):
        if self.rational:
            return f"Rational(p={self.p}, q={self.q})"
        return f"Irrational(best={self.q}/{self.p}, error={self.error:.2e})"


def classify_angle(alpha, max_denominator: int = DEFAULT_MAX_DENOMINATOR, tol: float = DEFAULT_TOL) -> AngleClass:
    """Best rational approximant q/p (p <= max_denominator) of alpha in (0, 1).

    Exact ``Fraction`` inputs are classified as rational without tolerance.
    """
    if isinstance(alpha, Fraction):
        if not (0 < alpha < 1):
            raise ValueError("alpha must lie in (0, 1)")
        return AngleClass(True, alpha.denominator, alpha.numerator, 0.0)
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    best = Fraction(alpha).limit_denominator(max_denominator)
    err = abs(alpha - best.numerator / best.denominator)
    return AngleClass(err <= tol, best.denominator, best.numerator, err)


# ---------------------------------------------------------------------------
# corners


@dataclass(frozen=True)
class EdgeCorner:
    plane_a: int
    plane_b: int
    segment: tuple  # (point, point)
    dihedral: float
    convex: bool
    angle_class: AngleClass
    vertex_ids: tuple = ()

    @property
    def alpha(self) -> float:
        return self.dihedral / math.pi


@dataclass(frozen=True)
class VertexCorner:
    apex: np.ndarray
    vertex_id: object
    edge_corners: tuple
    n_planes: int

    @property
    def rational(self) -> bool:
        return all(e.angle_class.rational for e in self.edge_corners)

    @property
    def degree(self):
        if not self.rational:
            return None
        return max(e.angle_class.p for e in self.edge_corners)

    @property
    def classification(self) -> str:
        return f"Rational(degree={self.degree})" if self.rational else "Irrational"


def _dihedral(na, nb, pa, pb):
    """Dihedral for an edge traversed pa -> pb by face a (and pb -> pa by face b)."""
    cosg = float(np.clip(np.dot(na, nb), -1.0, 1.0))
    gamma = math.acos(cosg)
    # direction pointing into face b, perpendicular to the edge
    into_b = np.cross(nb, pa - pb)
    convex = float(np.dot(into_b, na)) < 0.0
    return math.pi - gamma, convex


def extract_edge_corners(p: Polyhedron, max_denominator: int = DEFAULT_MAX_DENOMINATOR, tol: float = DEFAULT_TOL,
                         exact_alpha=None) -> list:
    """One edge corner per boundary edge between non-coplanar faces.

    ``exact_alpha`` optionally maps an edge ``(i, j)`` (sorted vertex ids) to an
    exact ``Fraction`` angle ratio that bypasses floating-point classification.
    """
    out = []
    for (a, b), (fa, fb) in sorted(p.edges().items()):
        na, nb = p.normals[fa], p.normals[fb]
        dih, convex = _dihedral(na, nb, p.vertices[a], p.vertices[b])
        if dih > math.pi - 1e-12:
            continue  # coplanar faces: no corner
        if dih < 1e-12:
            raise GeometryError(f"degenerate (folded) edge between faces {fa} and {fb}")
        alpha = exact_alpha.get((a, b)) if exact_alpha else None
        cls = classify_angle(alpha if alpha is not None else dih / math.pi, max_denominator, tol)
        out.append(EdgeCorner(fa, fb, (p.vertices[a].copy(), p.vertices[b].copy()), dih, convex, cls, (a, b)))
    return out


def vertex_corners(p: Polyhedron, edges=None, **kw) -> list:
    edges = extract_edge_corners(p, **kw) if edges is None else edges
    by_vertex = {}
    for e in edges:
        for v in e.vertex_ids:
            by_vertex.setdefault(v, []).append(e)
    faces_at = {}
    for fi, f in enumerate(p.faces):
        for v in f.vertex_indices:
            faces_at.setdefault(v, []).append(fi)
    out = []
    for v in sorted(by_vertex):
        nplanes = _count_planes(p.normals[faces_at[v]])
        if nplanes >= 3:
            out.append(VertexCorner(p.vertices[v].copy(), v, tuple(by_vertex[v]), nplanes))
    return out


def _count_planes(normals) -> int:
    distinct = []
    for n in normals:
        if not any(np.dot(n, m) > 1 - 1e-12 for m in distinct):
            distinct.append(n)
    return len(distinct)


@dataclass
class AdmissibilityReport:
    admissible: bool
    face_issues: list
    edge_corners: list
    vertex_corners: list
    verdict: str  # "irrational" or "rational"
    degree: object  # int or None
    degree_at_least_3: bool

    def summary(self) -> dict:
        return {
            "admissible": self.admissible,
            "face_issues": self.face_issues,
            "verdict": self.verdict,
            "degree": self.degree,
            "degree_at_least_3": self.degree_at_least_3,
            "vertices": [
                {"apex": v.apex.tolist(), "classification": v.classification, "n_planes": v.n_planes}
                for v in self.vertex_corners
            ],
        }


def _obstacle_verdict(corners):
    rational = [c for c in corners if c.rational]
    if not rational:
        return "irrational", None
    return "rational", min(c.degree for c in rational)


def admissibility_report(p: Polyhedron, **kw) -> AdmissibilityReport:
    issues = [
        {"face": i, "reason": "constant impedance part is zero"}
        for i, f in enumerate(p.faces)
        if not f.impedance.admissible
    ]
    edges = extract_edge_corners(p, **kw)
    verts = vertex_corners(p, edges)
    verdict, deg = _obstacle_verdict(verts)
    return AdmissibilityReport(not issues, issues, edges, verts, verdict, deg, deg is None or deg >= 3)


# ---------------------------------------------------------------------------
# shapes


def box(lengths=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), eta=1.0) -> Polyhedron:
    lx, ly, lz = (0.5 * float(v) for v in lengths)
    c = np.asarray(center, dtype=float)
    v = np.array([[sx * lx, sy * ly, sz * lz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) + c
    # vertex index = 4*ix + 2*iy + iz
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    return Polyhedron(v, [Face(q, ImpedanceSpec(eta)) for q in quads])


def cube(side: float = 1.0, center=(0.0, 0.0, 0.0), eta=1.0) -> Polyhedron:
    return box((side, side, side), center, eta)


def regular_tetrahedron(edge: float = 1.0, center=(0.0, 0.0, 0.0), eta=1.0) -> Polyhedron:
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    v *= edge / (2 * math.sqrt(2))
    v += np.asarray(center, dtype=float)
    faces = [(0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2)]
    return Polyhedron(v, [Face(f, ImpedanceSpec(eta)) for f in faces])


def triangle_with_angles(a1: float, a2: float, base: float = 1.0) -> np.ndarray:
    """Planar triangle (3, 2) with interior angles a1 at (0,0), a2 at (base,0)."""
    a3 = math.pi - a1 - a2
    if min(a1, a2, a3) <= 0:
        raise GeometryError("triangle angles must be positive and sum to pi")
    side = base * math.sin(a2) / math.sin(a3)
    return np.array([[0.0, 0.0], [base, 0.0], [side * math.cos(a1), side * math.sin(a1)]])


def prism(polygon2d, height: float = 1.0, eta=1.0, center=None) -> Polyhedron:
    """Right prism over a simple planar polygon given in the xy-plane."""
    poly = np.asarray(polygon2d, dtype=float)
    area = 0.5 * np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
    if area < 0:
        poly = poly[::-1]
    n = len(poly)
    z0, z1 = -0.5 * height, 0.5 * height
    verts = np.vstack([np.column_stack([poly, np.full(n, z0)]), np.column_stack([poly, np.full(n, z1)])])
    faces = [tuple(range(n - 1, -1, -1)), tuple(range(n, 2 * n))]
    for i in range(n):
        j = (i + 1) % n
        faces.append((i, j, n + j, n + i))
    etas = np.broadcast_to(np.asarray(eta, dtype=complex), (len(faces),))
    ph = Polyhedron(verts, [Face(f, ImpedanceSpec(e)) for f, e in zip(faces, etas)])
    if center is not None:
        ph = ph.translated(np.asarray(center, dtype=float) - ph.centroid)
    return ph


def icosphere(level: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0), eta=1.0) -> Polyhedron:
    """Geodesic polyhedron inscribed in a sphere (vertices on the sphere)."""
    t = (1 + math.sqrt(5)) / 2
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4), (11, 10, 2),
         (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9), (4, 9, 5), (2, 4, 11),
         (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    for _ in range(level):
        cache, nf = {}, []

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    V = radius * np.array(verts) + np.asarray(center, dtype=float)
    return Polyhedron(V, [Face(tri, ImpedanceSpec(eta)) for tri in f])


# ---------------------------------------------------------------------------
# gratings


class GratingProfile:
    """Bi-periodic polyhedral graph surface x3 = f(x1, x2), period 2 pi.

    ``facets`` are planar polygons (k, 3) whose projections tile [0, 2 pi)^2.
    Facet normals point upward, into the region above the profile.
    """

    def __init__(self, facets, impedances=1.0):
        self.facets = [np.array(f, dtype=float) for f in facets]
        etas = np.broadcast_to(np.asarray(impedances, dtype=complex), (len(self.facets),))
        self.impedances_spec = [ImpedanceSpec(complex(e)) for e in etas]
        self._build()
        self._validate()

    @property
    def impedances(self) -> np.ndarray:
        return np.array([s.alpha0 for s in self.impedances_spec])

    def _build(self):
        normals, planes, tris, tri_facet = [], [], [], []
        for i, f in enumerate(self.facets):
            if f.ndim != 2 or f.shape[1] != 3 or len(f) < 3:
                raise GeometryError(f"facet {i} must be a (k>=3, 3) array")
            n = _polygon_normal(f)
            if n[2] < 0:
                f = f[::-1]
                self.facets[i] = f
                n = -n
            if abs(n[2]) < 1e-12 * np.linalg.norm(n):
                raise GeometryError(f"facet {i} is vertical: profile must be a graph")
            n = n / np.linalg.norm(n)
            normals.append(n)
            c = f.mean(axis=0)
            # x3 = c3 - (n1 (x1-c1) + n2 (x2-c2)) / n3
            planes.append((c, n))
            for t in triangulate_polygon(f[:, :2]):
                tris.append(f[list(t)])
                tri_facet.append(i)
        self.normals = np.array(normals)
        self._planes = planes
        self.triangles = np.array(tris)
        self.triangle_facet = np.array(tri_facet)

    def _validate(self):
        for i, f in enumerate(self.facets):
            c, n = self._planes[i]
            if np.max(np.abs((f - c) @ n)) > 1e-10 * TWO_PI:
                raise GeometryError(f"facet {i} is not planar")
        t = self.triangles[:, :, :2]
        area = 0.5 * np.abs(
            (t[:, 1, 0] - t[:, 0, 0]) * (t[:, 2, 1] - t[:, 0, 1]) - (t[:, 2, 0] - t[:, 0, 0]) * (t[:, 1, 1] - t[:, 0, 1])
        )
        if abs(area.sum() - TWO_PI**2) > 1e-9 * TWO_PI**2:
            raise GeometryError("facet projections do not tile one period cell")
        # single-valued and periodic: heights on opposite cell sides agree
        s = np.linspace(0.0, TWO_PI, 37)[:-1] + 0.0137
        for pts_a, pts_b in (
            (np.column_stack([np.zeros_like(s), s]), np.column_stack([np.full_like(s, TWO_PI), s])),
            (np.column_stack([s, np.zeros_like(s)]), np.column_stack([s, np.full_like(s, TWO_PI)])),
        ):
            ha = self._height_in_cell(pts_a, closed=True)
            hb = self._height_in_cell(pts_b, closed=True)
            if np.max(np.abs(ha - hb)) > 1e-9:
                raise GeometryError("profile is not 2 pi-periodic (heights differ across the cell)")

    def _locate(self, xy: np.ndarray) -> np.ndarray:
        t = self.triangles[:, :, :2]
        a, b, c = t[:, 0], t[:, 1], t[:, 2]
        v0, v1 = b - a, c - a
        d00 = np.einsum("ij,ij->i", v0, v0)
        d01 = np.einsum("ij,ij->i", v0, v1)
        d11 = np.einsum("ij,ij->i", v1, v1)
        den = d00 * d11 - d01 * d01
        out = np.full(len(xy), -1)
        for s in range(0, len(xy), 4096):
            p = xy[s : s + 4096, None, :] - a[None]
            d20 = np.einsum("ptj,tj->pt", p, v0)
            d21 = np.einsum("ptj,tj->pt", p, v1)
            v = (d11 * d20 - d01 * d21) / den
            w = (d00 * d21 - d01 * d20) / den
            score = np.minimum(np.minimum(v, w), 1 - v - w)
            best = np.argmax(score, axis=1)
            ok = score[np.arange(len(best)), best] > -1e-9
            out[s : s + 4096] = np.where(ok, self.triangle_facet[best], -1)
        return out

    def _height_in_cell(self, xy, closed=False):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        fid = self._locate(xy)
        if np.any(fid < 0):
            raise GeometryError("point outside the facet tiling")
        h = np.empty(len(xy))
        for i in np.unique(fid):
            c, n = self._planes[i]
            m = fid == i
            h[m] = c[2] - (n[0] * (xy[m, 0] - c[0]) + n[1] * (xy[m, 1] - c[1])) / n[2]
        return h

    def facet_index(self, xy) -> np.ndarray:
        return self._locate(np.mod(np.atleast_2d(np.asarray(xy, dtype=float)), TWO_PI))

    def height(self, xy) -> np.ndarray:
        """Profile height f(x') for any x' (wrapped into the period cell)."""
        return self._height_in_cell(np.mod(np.atleast_2d(np.asarray(xy, dtype=float)), TWO_PI))

    @property
    def max_height(self) -> float:
        return float(max(f[:, 2].max() for f in self.facets))

    @property
    def min_height(self) -> float:
        return float(min(f[:, 2].min() for f in self.facets))

    def with_impedance(self, eta) -> "GratingProfile":
        return GratingProfile(self.facets, eta)

    def __repr__(self):
        return f"GratingProfile(facets={len(self.facets)}, height range=[{self.min_height:.3g}, {self.max_height:.3g}])"


def _periodic_key(p, ndig=9):
    x = round(float(np.mod(p[0], TWO_PI)), ndig) % round(TWO_PI, ndig)
    y = round(float(np.mod(p[1], TWO_PI)), ndig) % round(TWO_PI, ndig)
    return (x, y, round(float(p[2]), ndig))


@dataclass
class GratingCorners:
    edge_corners: list
    vertex_corners: list
    isolated_edges: list = field(default_factory=list)

    @property
    def corners(self):
        # edges with no vertex corner on them act as corners of their own
        return self.vertex_corners + [
            VertexCorner(np.asarray(e.segment[0]), None, (e,), 2) for e in self.isolated_edges
        ]

    @property
    def verdict(self) -> str:
        return _obstacle_verdict(self.corners)[0]

    @property
    def degree(self):
        return _obstacle_verdict(self.corners)[1]


def grating_corners(g: GratingProfile, max_denominator: int = DEFAULT_MAX_DENOMINATOR, tol: float = DEFAULT_TOL) -> GratingCorners:
    """Edge and vertex corners of one period, with periodic identification."""
    keys, vid = {}, []
    for f in g.facets:
        ids = []
        for p in f:
            k = _periodic_key(p)
            ids.append(keys.setdefault(k, len(keys)))
        vid.append(ids)
    edge_faces = {}
    edge_pts = {}
    for fi, (f, ids) in enumerate(zip(g.facets, vid)):
        for j in range(len(ids)):
            a, b = ids[j], ids[(j + 1) % len(ids)]
            # midpoint key: an edge spanning a full period joins a vertex to its own image
            key = (min(a, b), max(a, b), _periodic_key(0.5 * (f[j] + f[(j + 1) % len(ids)])))
            edge_faces.setdefault(key, []).append(fi)
            edge_pts.setdefault(key, (f[j].copy(), f[(j + 1) % len(ids)].copy()))
    edges = []
    for key, fs in sorted(edge_faces.items()):
        if len(fs) != 2:
            raise GeometryError(f"edge {key} is shared by {len(fs)} facets: profile not a closed periodic surface")
        fa, fb = fs
        na, nb = g.normals[fa], g.normals[fb]
        if np.dot(na, nb) > 1 - 1e-12:
            continue
        pa, pb = edge_pts[key]
        dih, convex = _dihedral(na, nb, pa, pb)
        cls = classify_angle(dih / math.pi, max_denominator, tol)
        edges.append(EdgeCorner(fa, fb, (pa, pb), dih, convex, cls, key[:2]))
    facets_at = {}
    for fi, ids in enumerate(vid):
        for v in ids:
            facets_at.setdefault(v, set()).add(fi)
    by_vertex = {}
    for e in edges:
        for v in e.vertex_ids:
            by_vertex.setdefault(v, []).append(e)
    inv = {v: k for k, v in keys.items()}
    verts = []
    for v in sorted(by_vertex):
        nplanes = _count_planes(g.normals[sorted(facets_at[v])])
        if nplanes >= 3:
            verts.append(VertexCorner(np.array(inv[v]), v, tuple(by_vertex[v]), nplanes))
    corner_ids = {v.vertex_id for v in verts}
    isolated = [e for e in edges if not (set(e.vertex_ids) & corner_ids)]
    return GratingCorners(edges, verts, isolated)


def flat_grating(height: float = 0.0, eta=1.0) -> GratingProfile:
    sq = np.array([[0, 0, height], [TWO_PI, 0, height], [TWO_PI, TWO_PI, height], [0, TWO_PI, height]], dtype=float)
    return GratingProfile([sq], eta)


def pyramid_grating(height: float = 1.0, base: float = math.pi, eta=1.0) -> GratingProfile:
    """Square pyramid of the given height on a flat floor, centred in the cell."""
    c = math.pi
    h = 0.5 * base
    if not (0 < h < math.pi):
        raise GeometryError("pyramid base must fit strictly inside the cell")
    b = [np.array([c - h, c - h, 0.0]), np.array([c + h, c - h, 0.0]), np.array([c + h, c + h, 0.0]), np.array([c - h, c + h, 0.0])]
    apex = np.array([c, c, height])
    corners = [np.array([0.0, 0.0, 0.0]), np.array([TWO_PI, 0.0, 0.0]), np.array([TWO_PI, TWO_PI, 0.0]), np.array([0.0, TWO_PI, 0.0])]
    facets = []
    for i in range(4):
        j = (i + 1) % 4
        facets.append(np.array([b[i], b[j], apex]))
        facets.append(np.array([corners[i], corners[j], b[j], b[i]]))
    return GratingProfile(facets, eta)


def trapezoid_grating(height: float = 1.0, floor: float = 1.0, eta=1.0) -> GratingProfile:
    """Ridges invariant in x2: floor, slope +1, top, slope -1 (slopes of 45 degrees)."""
    top = TWO_PI - 2 * floor - 2 * height
    if top <= 0:
        raise GeometryError("ridge does not fit in the period")
    xs = [0.0, floor, floor + height, floor + height + top, floor + 2 * height + top, TWO_PI]
    zs = [0.0, 0.0, height, height, 0.0, 0.0]
    facets = []
    for i in range(5):
        x0, x1, z0, z1 = xs[i], xs[i + 1], zs[i], zs[i + 1]
        if x1 - x0 <= 0:
            continue
        facets.append(np.array([[x0, 0, z0], [x1, 0, z1], [x1, TWO_PI, z1], [x0, TWO_PI, z0]]))
    return GratingProfile(facets, eta)


# ---------------------------------------------------------------------------
# file formats


def _fmt(x: float) -> str:
    return repr(float(x))


def write_offi(p: Polyhedron, path) -> None:
    lines = ["OFFI", f"{len(p.vertices)} {len(p.faces)}"]
    lines += [" ".join(_fmt(c) for c in v) for v in p.vertices]
    for f in p.faces:
        eta = f.impedance.alpha0
        lines.append(f"{len(f.vertex_indices)} " + " ".join(str(i) for i in f.vertex_indices) + f"  {_fmt(eta.real)} {_fmt(eta.imag)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _content_lines(path):
    with open(path, encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            s = raw.split("#", 1)[0].strip()
            if s:
                yield i, s


def read_offi(path) -> Polyhedron:
    it = _content_lines(path)
    try:
        ln, head = next(it)
    except StopIteration:
        raise FormatError(1, "empty file") from None
    if head != "OFFI":
        raise FormatError(ln, f"expected header 'OFFI', got {head!r}")
    try:
        ln, counts = next(it)
    except StopIteration:
        raise FormatError(ln + 1, "missing 'V F' counts") from None
    try:
        nv, nf = (int(t) for t in counts.split())
    except ValueError:
        raise FormatError(ln, f"bad counts line {counts!r}") from None
    verts, faces = [], []
    for _ in range(nv):
        try:
            ln, s = next(it)
        except StopIteration:
            raise FormatError(ln + 1, "unexpected end of file in vertex list") from None
        toks = s.split()
        if len(toks) != 3:
            raise FormatError(ln, "vertex line needs 3 coordinates")
        try:
            verts.append([float(t) for t in toks])
        except ValueError:
            raise FormatError(ln, f"bad vertex coordinates {s!r}") from None
    for _ in range(nf):
        try:
            ln, s = next(it)
        except StopIteration:
            raise FormatError(ln + 1, "unexpected end of file in face list") from None
        toks = s.split()
        try:
            k = int(toks[0])
            if len(toks) != k + 3:
                raise FormatError(ln, f"face line needs {k} indices and 2 impedance values")
            idx = [int(t) for t in toks[1 : k + 1]]
            eta = complex(float(toks[k + 1]), float(toks[k + 2]))
        except (ValueError, IndexError):
            raise FormatError(ln, f"bad face line {s!r}") from None
        if any(i < 0 or i >= nv for i in idx):
            raise FormatError(ln, "face index out of range")
        faces.append(Face(tuple(idx), ImpedanceSpec(eta)))
    extra = next(it, None)
    if extra is not None:
        raise FormatError(extra[0], "trailing content after face list")
    try:
        return Polyhedron(verts, faces)
    except GeometryError as exc:
        raise FormatError(ln, f"invalid polyhedron: {exc}") from None


def write_grati(g: GratingProfile, path) -> None:
    lines = ["GRATI", str(len(g.facets))]
    for f, spec in zip(g.facets, g.impedances_spec):
        eta = spec.alpha0
        coords = " ".join(_fmt(c) for c in f.ravel())
        lines.append(f"{len(f)} {coords}  {_fmt(eta.real)} {_fmt(eta.imag)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_grati(path) -> GratingProfile:
    it = _content_lines(path)
    try:
        ln, head = next(it)
    except StopIteration:
        raise FormatError(1, "empty file") from None
    if head != "GRATI":
        raise FormatError(ln, f"expected header 'GRATI', got {head!r}")
    try:
        ln, s = next(it)
        nfac = int(s)
    except StopIteration:
        raise FormatError(ln + 1, "missing facet count") from None
    except ValueError:
        raise FormatError(ln, f"bad facet count {s!r}") from None
    facets, etas = [], []
    for _ in range(nfac):
        try:
            ln, s = next(it)
        except StopIteration:
            raise FormatError(ln + 1, "unexpected end of file in facet list") from None
        toks = s.split()
        try:
            k = int(toks[0])
            if len(toks) != 3 * k + 3:
                raise FormatError(ln, f"facet line needs {3 * k} coordinates and 2 impedance values")
            pts = np.array([float(t) for t in toks[1 : 3 * k + 1]]).reshape(k, 3)
            etas.append(complex(float(toks[-2]), float(toks[-1])))
        except (ValueError, IndexError):
            raise FormatError(ln, f"bad facet line {s!r}") from None
        facets.append(pts)
    try:
        return GratingProfile(facets, etas)
    except GeometryError as exc:
        raise FormatError(ln, f"invalid grating: {exc}") from None
