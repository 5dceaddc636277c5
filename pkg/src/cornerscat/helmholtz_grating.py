"""Plane-wave scattering by bi-periodic impedance gratings.

The scattered field above the profile is a sum of quasi-periodic point
sources placed below it. The quasi-periodic Green's function is evaluated by
Ewald splitting into a spectral (Rayleigh mode) sum and a screened lattice
sum, both of which converge like Gaussians. Period is 2 pi in x1 and x2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, special

from .geometry import GratingProfile, _point_triangle_distance, grating_corners
from .helmholtz_obstacle import SolverError, _thin, sample_triangles

__all__ = [
    "QuasiMomentum",
    "RayleighSpectrum",
    "GratingSolution",
    "AliasingError",
    "WoodAnomalyWarning",
    "incident_direction",
    "mode_betas",
    "propagating_modes",
    "qp_green",
    "qp_green_direct",
    "qp_green_spectral",
    "QuasiPeriodicGreen",
    "solve_grating",
    "rayleigh_expand",
    "quasiperiodicity_residual",
    "flat_reflection",
    "write_rayleigh_csv",
    "read_rayleigh_csv",
    "write_field_slice_csv",
]

TWO_PI = 2 * math.pi
CELL_AREA = TWO_PI**2


class AliasingError(RuntimeError):
    pass


class WoodAnomalyWarning(UserWarning):
    pass


def incident_direction(theta: float, phi: float) -> np.ndarray:
    """d = (sin phi cos theta, sin phi sin theta, -cos phi), travelling downward."""
    return np.array([math.sin(phi) * math.cos(theta), math.sin(phi) * math.sin(theta), -math.cos(phi)])


@dataclass(frozen=True)
class QuasiMomentum:
    alpha: tuple

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))

    @classmethod
    def from_incidence(cls, k: float, theta: float, phi: float) -> "QuasiMomentum":
        return cls(tuple(k * incident_direction(theta, phi)[:2]))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.alpha)

    def is_physical(self, k: float) -> bool:
        return float(np.linalg.norm(self.alpha)) <= k * (1 + 1e-12)


def _mode_grid(M: int) -> np.ndarray:
    r = np.arange(-M, M + 1)
    n1, n2 = np.meshgrid(r, r, indexing="ij")
    return np.column_stack([n1.ravel(), n2.ravel()])


def mode_betas(k: float, alpha, modes) -> np.ndarray:
    """beta_n = sqrt(k^2 - |n + alpha|^2), branch with Im beta >= 0."""
    an = np.asarray(modes, dtype=float) + np.asarray(alpha, dtype=float)
    return np.sqrt(k * k - np.sum(an * an, axis=-1) + 0j)


def propagating_modes(k: float, alpha, M: int, wood_tol: float = 1e-8):
    """Modes with |n|_inf <= M and |alpha_n| < k, and the grazing (Wood) modes separately."""
    alpha = alpha.vector if isinstance(alpha, QuasiMomentum) else np.asarray(alpha, dtype=float)
    modes = _mode_grid(M)
    an2 = np.sum((modes + alpha) ** 2, axis=1)
    beta = np.sqrt(np.abs(k * k - an2))
    wood = beta < wood_tol * k
    prop = (an2 < k * k) & ~wood
    return [tuple(int(v) for v in n) for n in modes[prop]], [tuple(int(v) for v in n) for n in modes[wood]]


# ---------------------------------------------------------------------------
# quasi-periodic Green's function


def ewald_parameter(k: float) -> float:
    return max(0.35, k / 3)


def _spectral_order(alpha, E):
    return int(math.ceil(float(np.max(np.abs(alpha))) + 2 * E * math.sqrt(38.0))) + 1


_STENCIL = 8
_LAGRANGE_DEN = np.array(
    [math.prod(a - b for b in range(_STENCIL) if b != a) for a in range(_STENCIL)], dtype=float
)
_SCREEN = 6.2  # R E beyond which the screened lattice terms are below 1e-16


def _lagrange(t):
    """Weights (P, 8) of the equispaced Lagrange stencil at nodes 0..7 for local coordinate t."""
    diff = t[:, None] - np.arange(_STENCIL)[None, :]
    left = np.ones_like(diff)
    right = np.ones_like(diff)
    for a in range(1, _STENCIL):
        left[:, a] = left[:, a - 1] * diff[:, a - 1]
        right[:, -a - 1] = right[:, -a] * diff[:, -a]
    return left * right / _LAGRANGE_DEN


class _Table:
    """Piecewise 8-point interpolation of smooth functions sampled on a uniform grid."""

    def __init__(self, lo, hi, step, func):
        n = int(math.ceil((hi - lo) / step)) + _STENCIL + 1
        self.lo = lo - (_STENCIL // 2) * step
        self.step = step
        self.nodes = self.lo + step * np.arange(n)
        self.values = func(self.nodes)  # (n, ...) complex

    def __call__(self, s):
        u = (np.asarray(s, dtype=float) - self.lo) / self.step
        i = np.clip(np.floor(u).astype(int) - (_STENCIL // 2 - 1), 0, len(self.nodes) - _STENCIL)
        w = _lagrange(u - i)
        P = len(u)
        cols = (i[:, None] + np.arange(_STENCIL)[None]).ravel()
        W = sparse.csr_matrix((w.ravel(), cols, np.arange(0, P * _STENCIL + 1, _STENCIL)), shape=(P, len(self.nodes)))
        flat = self.values.reshape(len(self.nodes), -1)
        return np.asarray(W @ flat).reshape((P,) + self.values.shape[1:])


def _spectral_kernels(k, alpha, E, M):
    modes = _mode_grid(M)
    gam = -1j * mode_betas(k, alpha, modes)
    if np.min(np.abs(gam)) < 1e-12 * k:
        raise ZeroDivisionError("grazing Rayleigh mode: Green's function is singular at this (k, alpha)")

    def func(z):
        zE = z[:, None] * E
        env = np.exp(-(gam * gam)[None] / (4 * E * E) - zE * zE) / (4 * CELL_AREA)
        ep = special.erfcx(gam[None] / (2 * E) + zE)
        em = special.erfcx(gam[None] / (2 * E) - zE)
        return np.stack([env * (ep + em) / gam[None], env * (ep - em)], axis=1)

    return modes, gam, func


def _screened_kernel(k, E):
    ik2E = 1j * k / (2 * E)
    tail = math.exp(k * k / (4 * E * E)) * 4 * E / math.sqrt(math.pi)

    def func(R):
        eikr = np.exp(1j * k * R)
        cp = special.erfc(R * E + ik2E)
        cm = special.erfc(R * E - ik2E)
        g = eikr * cp + cm / eikr
        gp = 1j * k * (eikr * cp - cm / eikr) - tail * np.exp(-(R * E) ** 2)
        return np.stack([g, gp], axis=1)

    return func


class QuasiPeriodicGreen:
    """Ewald-split quasi-periodic Green's function for period 2 pi in x1 and x2.

    G(x + 2 pi e, y) = exp(2 pi i alpha . e) G(x, y) and G - Phi is smooth
    near x = y, with Phi = exp(i k R) / (4 pi R). Both Ewald parts depend
    on a single scalar (x3 - y3 per spectral mode, and the distance R for the
    screened lattice sum), so they are tabulated once and interpolated.
    The z table covers |x3 - y3| <= ``z_extent`` and grows on demand.
    """

    def __init__(self, k, alpha, z_extent, E=None, spectral_M=None, lattice_M=None):
        self.k = float(k)
        self.alpha = np.asarray(alpha, dtype=float)
        self.E = E or ewald_parameter(k)
        self.z_extent = float(z_extent)
        self.spectral_M = spectral_M if spectral_M is not None else _spectral_order(self.alpha, self.E)
        self.r_cut = _SCREEN / self.E
        reach = self.r_cut + TWO_PI * math.sqrt(2)
        self.lattice_M = lattice_M if lattice_M is not None else int(math.ceil(reach / TWO_PI))
        self.modes, gam, self._sfunc = _spectral_kernels(self.k, self.alpha, self.E, self.spectral_M)
        self._zstep = 0.08 / max(float(np.max(np.abs(gam))), self.E, 1.0)
        self._spec = _Table(-self.z_extent, self.z_extent, self._zstep, self._sfunc)
        self._screen = _Table(0.0, self.r_cut, 0.08 / max(self.k, self.E, 1.0), _screened_kernel(self.k, self.E))
        L = np.arange(-self.spectral_M, self.spectral_M + 1)
        self._n = L

    def _spectral(self, d, gradient):
        L = self._n
        nL = len(L)
        z = d[:, 2]
        zmax = float(np.max(np.abs(z)))
        if zmax > self.z_extent:
            self.z_extent = 1.25 * zmax
            self._spec = _Table(-self.z_extent, self.z_extent, self._zstep, self._sfunc)
        F = self._spec(z)  # (P, 2, modes)
        Fv = F[:, 0].reshape(-1, nL, nL)
        base = np.exp(1j * (d[:, :2] @ self.alpha))
        e1 = np.exp(1j * d[:, 0:1] * L[None])
        e2 = np.exp(1j * d[:, 1:2] * L[None])
        A = np.einsum("pa,pab->pb", e1, Fv)
        G = base * np.einsum("pb,pb->p", e2, A)
        if not gradient:
            return G, None
        dG = np.empty((len(d), 3), dtype=complex)
        dG[:, 0] = base * np.einsum("pb,pb->p", e2, np.einsum("pa,pab->pb", e1 * (1j * (L + self.alpha[0]))[None], Fv))
        dG[:, 1] = base * np.einsum("pb,pb->p", e2 * (1j * (L + self.alpha[1]))[None], A)
        Fd = F[:, 1].reshape(-1, nL, nL)
        dG[:, 2] = base * np.einsum("pa,pab,pb->p", e1, Fd, e2)
        return G, dG

    def _lattice(self, d, gradient):
        G = np.zeros(len(d), dtype=complex)
        dG = np.zeros((len(d), 3), dtype=complex) if gradient else None
        M = self.lattice_M
        for m1 in range(-M, M + 1):
            for m2 in range(-M, M + 1):
                dm = d - np.array([TWO_PI * m1, TWO_PI * m2, 0.0])
                R = np.sqrt(np.einsum("pj,pj->p", dm, dm))
                sel = np.nonzero(R < self.r_cut)[0]
                if len(sel) == 0:
                    continue
                Rs = R[sel]
                tab = self._screen(Rs)
                g, gp = tab[:, 0], tab[:, 1]
                ph = np.exp(1j * TWO_PI * (self.alpha[0] * m1 + self.alpha[1] * m2))
                G[sel] += ph * g / (8 * np.pi * Rs)
                if gradient:
                    dT = (gp / Rs - g / Rs**2) / (8 * np.pi)
                    dG[sel] += (ph * dT / Rs)[:, None] * dm[sel]
        return G, dG

    def __call__(self, x, y, gradient=False, chunk=8192):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        d = (x[:, None, :] - y[None, :, :]).reshape(-1, 3)
        G = np.empty(len(d), dtype=complex)
        dG = np.empty((len(d), 3), dtype=complex) if gradient else None
        for s in range(0, len(d), chunk):
            sl = slice(s, s + chunk)
            gs, dgs = self._spectral(d[sl], gradient)
            gl, dgl = self._lattice(d[sl], gradient)
            G[sl] = gs + gl
            if gradient:
                dG[sl] = dgs + dgl
        shape = (len(x), len(y))
        return (G.reshape(shape), dG.reshape(shape + (3,))) if gradient else G.reshape(shape)


def qp_green(x, y, k, alpha, E=None, gradient=False):
    """G(x, y) for x (P, 3), y (S, 3); with ``gradient`` also the x gradient (P, S, 3)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    ext = max(float(np.max(x[:, 2]) - np.min(y[:, 2])), float(np.max(y[:, 2]) - np.min(x[:, 2])), 0.0)
    return QuasiPeriodicGreen(k, alpha, ext, E)(x, y, gradient)


def qp_green_direct(x, y, k, alpha, E=None, gradient=False):
    """Same as qp_green with every erfc evaluated directly (slow reference)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    alpha = np.asarray(alpha, dtype=float)
    E = E or ewald_parameter(k)
    d = (x[:, None, :] - y[None, :, :]).reshape(-1, 3)
    M = _spectral_order(alpha, E)
    modes, _, sfunc = _spectral_kernels(k, alpha, E, M)
    F = sfunc(d[:, 2])
    ph = np.exp(1j * d[:, :2] @ (modes + alpha).T)
    G = np.sum(ph * F[:, 0], axis=1)
    dG = np.stack([np.sum(1j * (modes[:, i] + alpha[i]) * ph * F[:, 0], axis=1) for i in range(2)]
                  + [np.sum(ph * F[:, 1], axis=1)], axis=1)
    sk = _screened_kernel(k, E)
    Lm = int(math.ceil((_SCREEN / E + TWO_PI * math.sqrt(2) + float(np.max(np.abs(d[:, 2])))) / TWO_PI))
    for m1 in range(-Lm, Lm + 1):
        for m2 in range(-Lm, Lm + 1):
            dm = d - np.array([TWO_PI * m1, TWO_PI * m2, 0.0])
            R = np.linalg.norm(dm, axis=1)
            t = sk(R)
            p = np.exp(1j * TWO_PI * (alpha[0] * m1 + alpha[1] * m2))
            G += p * t[:, 0] / (8 * np.pi * R)
            dG += (p * (t[:, 1] / R - t[:, 0] / R**2) / (8 * np.pi * R))[:, None] * dm
    shape = (len(x), len(y))
    return (G.reshape(shape), dG.reshape(shape + (3,))) if gradient else G.reshape(shape)


def qp_green_spectral(x, y, k, alpha, M=40, gradient=False):
    """Direct Rayleigh-mode sum, valid for x3 != y3 (reference for checks)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d = x[:, None, :] - y[None, :, :]
    modes = _mode_grid(M)
    an = modes + np.asarray(alpha, dtype=float)
    beta = mode_betas(k, alpha, modes)
    az = np.abs(d[..., 2])
    G = np.zeros(az.shape, dtype=complex)
    dG = np.zeros(az.shape + (3,), dtype=complex)
    for a_n, b in zip(an, beta):
        term = 1j / (2 * CELL_AREA * b) * np.exp(1j * (d[..., 0] * a_n[0] + d[..., 1] * a_n[1]) + 1j * b * az)
        G += term
        dG[..., 0] += 1j * a_n[0] * term
        dG[..., 1] += 1j * a_n[1] * term
        dG[..., 2] += 1j * b * np.sign(d[..., 2]) * term
    return (G, dG) if gradient else G

# ---------------------------------------------------------------------------
# solver


@dataclass
class GratingSolution:
    profile: GratingProfile
    k: float
    theta: float
    phi: float
    source_points: np.ndarray
    source_weights: np.ndarray
    residual: float
    diagnostics: dict = field(default_factory=dict)
    green: QuasiPeriodicGreen = None

    def __post_init__(self):
        if self.green is None:
            self.green = QuasiPeriodicGreen(self.k, self.alpha.vector, 4.0)

    @property
    def direction(self) -> np.ndarray:
        return incident_direction(self.theta, self.phi)

    @property
    def alpha(self) -> QuasiMomentum:
        return QuasiMomentum(tuple(self.k * self.direction[:2]))

    @property
    def beta0(self) -> float:
        return float(-self.k * self.direction[2])

    def incident(self, x) -> np.ndarray:
        return np.exp(1j * self.k * (np.atleast_2d(x) @ self.direction))

    def scattered(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.green(x, self.source_points) @ self.source_weights

    def total_field(self, x) -> np.ndarray:
        return self.incident(x) + self.scattered(x)

    def gradient(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        _, dG = self.green(x, self.source_points, gradient=True)
        return 1j * self.k * self.incident(x)[:, None] * self.direction[None] + np.einsum("psj,s->pj", dG, self.source_weights)

    def with_lattice(self, lattice_M: int) -> "GratingSolution":
        """Same source weights evaluated with a truncated screened lattice sum."""
        g = QuasiPeriodicGreen(self.k, self.alpha.vector, self.green.z_extent, lattice_M=lattice_M)
        return GratingSolution(self.profile, self.k, self.theta, self.phi, self.source_points, self.source_weights,
                               self.residual, dict(self.diagnostics), g)


def _sharp_segments(profile: GratingProfile, angle_deg: float):
    segs = [e.segment for e in grating_corners(profile).edge_corners if (math.pi - e.dihedral) > math.radians(angle_deg)]
    if not segs:
        return np.zeros((0, 3)), np.zeros((0, 3))
    a = np.array([s[0] for s in segs])
    b = np.array([s[1] for s in segs])
    shifts = [np.array([TWO_PI * i, TWO_PI * j, 0.0]) for i in (-1, 0, 1) for j in (-1, 0, 1)]
    return np.concatenate([a + t for t in shifts]), np.concatenate([b + t for t in shifts])


def _profile_samples(profile, h, levels, ratio, angle_deg, bary=(1 / 3, 1 / 3, 1 / 3), cell_pos=(0.5, 0.5)):
    sa, sb = _sharp_segments(profile, angle_deg) if levels > 0 else (np.zeros((0, 3)),) * 2
    pts, areas, tri, _ = sample_triangles(profile.triangles, h, sa, sb, ratio, levels, bary, cell_pos)
    facet = profile.triangle_facet[tri]
    return pts, profile.normals[facet], areas, profile.impedances[facet]


def _periodic_triangles(profile):
    shifts = [np.array([TWO_PI * i, TWO_PI * j, 0.0]) for i in (-1, 0, 1) for j in (-1, 0, 1)]
    return np.concatenate([profile.triangles + t for t in shifts])


def _grating_sources(profile, depth, spacing):
    """Regular N x N grid in x' at height f(x') - depth, kept if at least depth/2 from the profile."""
    N = int(math.ceil(TWO_PI / spacing))
    g = (np.arange(N) + 0.5) * TWO_PI / N
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    xy = np.column_stack([X1.ravel(), X2.ravel()])
    y = np.column_stack([xy, profile.height(xy) - depth])
    tris = _periodic_triangles(profile)
    P, T = len(y), len(tris)
    dist = _point_triangle_distance(np.repeat(y, T, axis=0), np.tile(tris, (P, 1, 1))).reshape(P, T).min(axis=1)
    return y[dist >= 0.5 * depth]


def _bc_rows(pts, nrm, eta, sources, green):
    G, dG = green(pts, sources, gradient=True)
    return np.einsum("psj,pj->ps", dG, nrm) + eta[:, None] * G


def _bc_incident(pts, nrm, eta, k, d):
    ui = np.exp(1j * k * (pts @ d))
    return ui * (1j * k * (nrm @ d) + eta)


def solve_grating(profile: GratingProfile, k: float, theta: float = 0.0, phi: float = 0.0, h: float = None,
                  depth: float = None, spacing: float = 0.5, grading_levels: int = 3, grading_ratio: float = 0.15,
                  grading_angle_deg: float = 10.0, rcond: float = 1e-12, max_residual: float = 1e-3,
                  wood_tol: float = 1e-6, M: int = None,
                  raise_on_failure: bool = True) -> GratingSolution:
    """Quasi-periodic MFS solve of du/dnu + eta u = 0 on the profile (nu pointing up).

    Incidence d = (sin phi cos theta, sin phi sin theta, -cos phi). If a
    Rayleigh mode with |n|_inf <= M is within ``wood_tol`` of grazing, k is
    increased by 1e-5 relative and a WoodAnomalyWarning is issued.
    """
    if not (-math.pi / 2 < phi < math.pi / 2):
        raise ValueError("incidence must come from above: phi in (-pi/2, pi/2)")
    M = M if M is not None else int(math.ceil(2 * k)) + 4
    k_in = k
    alpha = k * incident_direction(theta, phi)[:2]
    _, wood = propagating_modes(k, alpha, M, wood_tol)
    perturbed = False
    if wood:
        k = k * (1 + 1e-5)
        alpha = k * incident_direction(theta, phi)[:2]
        perturbed = True
        warnings.warn(f"Wood anomaly at modes {wood}; k perturbed to {k!r}", WoodAnomalyWarning, stacklevel=2)
    depth = depth or 0.15 * TWO_PI
    src_spacing = min(spacing * depth, 0.5 * np.pi / k)
    h = h or 0.75 * src_spacing
    y = _grating_sources(profile, depth, src_spacing)
    if len(y) == 0:
        raise SolverError("no admissible source points below the profile")
    green = QuasiPeriodicGreen(k, alpha, profile.max_height - profile.min_height + depth + 3.0)
    grading = (grading_levels, grading_ratio, grading_angle_deg)
    pts, nrm, areas, eta = _profile_samples(profile, h, *grading)
    sw = np.sqrt(areas)
    d = incident_direction(theta, phi)
    A = _bc_rows(pts, nrm, eta, y, green) * sw[:, None]
    b = -_bc_incident(pts, nrm, eta, k, d) * sw
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(s > rcond * s[0]))
    w = Vh[:r].conj().T @ ((U[:, :r].conj().T @ b) / s[:r])
    cp, cn, ca, ce = _profile_samples(profile, h, *grading, bary=(0.6, 0.25, 0.15), cell_pos=(0.3, 0.7))
    cw = np.sqrt(ca)
    bc = (_bc_rows(cp, cn, ce, y, green) @ w + _bc_incident(cp, cn, ce, k, d)) * cw
    res = float(np.linalg.norm(bc) / np.linalg.norm(_bc_incident(cp, cn, ce, k, d) * cw))
    diag = {
        "n_collocation": int(len(pts)),
        "n_sources": int(len(y)),
        "rank": r,
        "condition": float(s[0] / s[r - 1]),
        "fit_residual": float(np.linalg.norm(A @ w - b) / np.linalg.norm(b)),
        "check_residual": res,
        "k_requested": k_in,
        "wood_perturbed": perturbed,
        "wood_modes": wood,
        "ewald": green.E,
        "lattice_M": green.lattice_M,
        "spectral_M": green.spectral_M,
        "source_depth": depth,
    }
    sol = GratingSolution(profile, k, theta, phi, y, w, res, diag, green)
    if res > max_residual and raise_on_failure:
        raise SolverError(f"boundary residual {res:.2e} exceeds {max_residual:.0e}", diag)
    return sol


# ---------------------------------------------------------------------------
# Rayleigh expansion


@dataclass
class RayleighSpectrum:
    k: float
    alpha: QuasiMomentum
    height: float
    coefficients: dict  # n -> u_n
    betas: dict  # n -> beta_n

    def coefficient(self, n) -> complex:
        return self.coefficients[tuple(n)]

    def propagating(self):
        return [n for n, b in self.betas.items() if abs(b.imag) == 0 and b.real > 0]

    def efficiency(self, beta0: float) -> dict:
        return {n: (self.betas[n].real / beta0) * abs(self.coefficients[n]) ** 2 for n in self.propagating()}

    def flux(self, beta0: float) -> float:
        return float(sum(self.efficiency(beta0).values()))


def _rayleigh_from_samples(vals, k, alpha, b, M, N, check_alias=True):
    g = np.arange(N) * TWO_PI / N
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    demod = vals.reshape(N, N) * np.exp(-1j * (alpha[0] * X1 + alpha[1] * X2))
    c = np.fft.fft2(demod) / (N * N)
    modes = _mode_grid(M)
    cn = c[modes[:, 0] % N, modes[:, 1] % N]
    if check_alias:
        top = np.max(np.abs(modes), axis=1) == M
        if M > 0 and np.max(np.abs(cn[top])) > 1e-4 * np.max(np.abs(cn)):
            raise AliasingError(
                f"top retained modes reach {np.max(np.abs(cn[top])) / np.max(np.abs(cn)):.1e} of the largest; raise M or b"
            )
    beta = mode_betas(k, alpha, modes)
    un = cn * np.exp(-1j * beta * b)
    keys = [tuple(int(v) for v in n) for n in modes]
    return dict(zip(keys, un)), dict(zip(keys, beta))


def rayleigh_expand(sol, b: float, M: int = None, N: int = None, check_alias: bool = True) -> RayleighSpectrum:
    """Rayleigh coefficients u_n of the scattered field from samples on the plane x3 = b.

    ``sol`` is a GratingSolution or a callable returning the scattered field
    at (P, 3) points, in which case it must carry ``k`` and ``alpha`` attributes.
    """
    profile = getattr(sol, "profile", None)
    if profile is not None and b <= profile.max_height:
        raise ValueError("sampling plane must lie above the profile")
    k = sol.k
    alpha = sol.alpha.vector if isinstance(sol.alpha, QuasiMomentum) else np.asarray(sol.alpha, dtype=float)
    M = M if M is not None else int(math.ceil(2 * k)) + 4
    N = N or max(4 * (M + 1), 16)
    g = np.arange(N) * TWO_PI / N
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([X1.ravel(), X2.ravel(), np.full(N * N, float(b))])
    vals = sol.scattered(pts)
    coeffs, betas = _rayleigh_from_samples(vals, k, alpha, b, M, N, check_alias)
    return RayleighSpectrum(k, QuasiMomentum(tuple(alpha)), float(b), coeffs, betas)


def quasiperiodicity_residual(sol, n_check: int = 40, seed: int = 0) -> float:
    """max |u(x' + 2 pi e_i) - exp(2 pi i alpha_i) u(x')| / max |u| over random points above the profile."""
    rng = np.random.default_rng(seed)
    top = sol.profile.max_height
    x = np.column_stack([rng.uniform(0, TWO_PI, n_check), rng.uniform(0, TWO_PI, n_check),
                         rng.uniform(top + 0.1, top + 2.0, n_check)])
    alpha = sol.alpha.vector
    u0 = sol.total_field(x)
    worst = 0.0
    for i in range(2):
        e = np.zeros(3)
        e[i] = TWO_PI
        u1 = sol.total_field(x + e)
        worst = max(worst, float(np.max(np.abs(u1 - np.exp(1j * TWO_PI * alpha[i]) * u0))))
    return worst / float(np.max(np.abs(u0)))


def flat_reflection(k: float, eta: complex, phi: float = 0.0, height: float = 0.0) -> complex:
    """Reflection coefficient u_(0,0) for the flat profile x3 = height."""
    b0 = k * math.cos(phi)
    return (1j * b0 - eta) / (1j * b0 + eta) * np.exp(-2j * b0 * height)


# ---------------------------------------------------------------------------
# CSV


def write_rayleigh_csv(spec: RayleighSpectrum, path) -> None:
    lines = [
        f"# k={spec.k!r}",
        f"# alpha={spec.alpha.alpha[0]!r} {spec.alpha.alpha[1]!r}",
        f"# height={spec.height!r}",
        "n1,n2,re_u,im_u,re_beta,im_beta",
    ]
    for n in sorted(spec.coefficients):
        u, b = complex(spec.coefficients[n]), complex(spec.betas[n])
        lines.append(f"{n[0]},{n[1]},{u.real!r},{u.imag!r},{b.real!r},{b.imag!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_rayleigh_csv(path) -> RayleighSpectrum:
    meta, coeffs, betas = {}, {}, {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key] = val
            elif line and not line.startswith("n1"):
                f = line.split(",")
                n = (int(f[0]), int(f[1]))
                coeffs[n] = complex(float(f[2]), float(f[3]))
                betas[n] = complex(float(f[4]), float(f[5]))
    alpha = tuple(float(v) for v in meta["alpha"].split())
    return RayleighSpectrum(float(meta["k"]), QuasiMomentum(alpha), float(meta["height"]), coeffs, betas)


def write_field_slice_csv(sol: GratingSolution, x3: float, N: int, path) -> None:
    """Total field on an N x N grid over one period at height x3."""
    g = np.arange(N) * TWO_PI / N
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([X1.ravel(), X2.ravel(), np.full(N * N, float(x3))])
    u = sol.total_field(pts)
    lines = [f"# k={sol.k!r} x3={float(x3)!r}", "x1,x2,re,im"]
    lines += [f"{a!r},{b!r},{v.real!r},{v.imag!r}" for a, b, v in zip(pts[:, 0].tolist(), pts[:, 1].tolist(), u.tolist())]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
