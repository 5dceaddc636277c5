"""Vanishing orders of Laplacian eigenfunctions at impedance edge corners.

The corner sits at the origin with the edge along the x3 axis. The plane
``Pi_1`` is ``phi = 0`` and ``Pi_2`` is ``phi = phi0``; an eigenfunction

    u = 4 pi sum_n sum_m i^n a_n^m j_n(sqrt(lam) r) Y_n^m(theta, phi)

satisfies ``du/dnu + eta_j u = 0`` on ``Pi_j``. Matching powers of r on the
edge and on both planes gives, order by order, a square linear system for
``a_N^m (m != 0)`` and ``a_{N-1}^0``. The systems are block triangular, so the
certification below walks the blocks in elimination order and checks each
determinant.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .specfun import legendre_table, spherical_bessel_j, to_spherical

__all__ = [
    "CornerData",
    "CoefficientSystem",
    "BlockingCondition",
    "VanishingReport",
    "SphericalExpansion",
    "FitError",
    "VanishingEstimate",
    "CornerAverage",
    "impedance_condition",
    "base_system",
    "order_system",
    "c_factor",
    "base_determinant_closed_form",
    "order_block_determinant_closed_form",
    "certify_vanishing",
    "fit_expansion",
    "plane_wave_coefficients",
    "estimate_vanishing_order",
    "corner_average",
    "ball_points",
]

DEGENERACY_TOL = 1e-12


# ---------------------------------------------------------------------------
# corner data


def _exact_complex(z):
    """(re, im) as Fractions when z is exactly representable, else None."""
    if isinstance(z, Rational):
        return Fraction(z), Fraction(0)
    if isinstance(z, tuple) and len(z) == 2 and all(isinstance(t, Rational) for t in z):
        return Fraction(z[0]), Fraction(z[1])
    return None


def _to_complex(z) -> complex:
    if isinstance(z, tuple):
        return complex(float(z[0]), float(z[1]))
    return complex(z)


@dataclass(frozen=True)
class CornerData:
    """Edge corner with dihedral ``phi0 = alpha pi`` and face impedances.

    ``alpha`` may be a ``Fraction``; ``eta1``/``eta2`` may be rationals or
    ``(re, im)`` tuples of rationals. Such inputs enable exact certification.
    """

    alpha: object
    eta1: object = 1
    eta2: object = 1
    lam: float = 1.0

    def __post_init__(self):
        a = float(self.alpha)
        if not (0.0 < a < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if _to_complex(self.eta1) == 0 or _to_complex(self.eta2) == 0:
            raise ValueError("impedances must be nonzero")
        if not (float(self.lam) > 0):
            raise ValueError("lam must be positive")

    @classmethod
    def from_phi0(cls, phi0: float, eta1=1.0, eta2=1.0, lam=1.0) -> "CornerData":
        return cls(phi0 / math.pi, eta1, eta2, lam)

    @property
    def phi0(self) -> float:
        return float(self.alpha) * math.pi

    @property
    def h1(self) -> complex:
        return _to_complex(self.eta1)

    @property
    def h2(self) -> complex:
        return _to_complex(self.eta2)

    @property
    def exact(self) -> bool:
        return (
            isinstance(self.alpha, Fraction)
            and _exact_complex(self.eta1) is not None
            and _exact_complex(self.eta2) is not None
        )


def impedance_condition(c: CornerData) -> complex:
    """``2 eta1 cos(phi0) + eta2 (1 + cos(2 phi0))``."""
    p = c.phi0
    return 2 * c.h1 * math.cos(p) + c.h2 * (1 + math.cos(2 * p))


def c_factor(N: int, lam: float) -> float:
    return math.sqrt(lam / (2 * N + 1)) * 0.5 * N * (N + 1) * math.sqrt(math.factorial(N - 1) / math.factorial(N + 1))


def base_determinant_closed_form(c: CornerData) -> complex:
    """Closed form ``(i lam / 18) sin(phi0) (2 eta1 cos(phi0) + eta2 (cos(2 phi0) + 1))``."""
    return 1j * c.lam / 18 * math.sin(c.phi0) * impedance_condition(c)


def order_block_determinant_closed_form(c: CornerData, N: int) -> complex:
    """Closed form of the ``(a_N^1, a_N^-1, a_{N-1}^0)`` block determinant."""
    return (
        -2j
        * math.sin(c.phi0)
        * math.sqrt(2 * N - 1)
        * c.lam
        / (2 * N + 1)
        * N**2
        / 4
        * (N + 1) ** 2
        * math.factorial(N - 1)
        / math.factorial(N + 1)
        * impedance_condition(c)
    )


# ---------------------------------------------------------------------------
# coefficient systems


@dataclass
class CoefficientSystem:
    """Rows are ``(coefficients by unknown label, source, tag)``.

    Labels are ``(n, m)`` for ``a_n^m``. ``source`` is one of ``"EdgeLine"``,
    ``"Plane1"``, ``"Plane2"``; ``tag`` is the Legendre index of the row.
    """

    order: int
    unknowns: list
    rows: list

    def matrix(self) -> np.ndarray:
        col = {u: j for j, u in enumerate(self.unknowns)}
        A = np.zeros((len(self.rows), len(self.unknowns)), dtype=complex)
        for i, (coef, _, _) in enumerate(self.rows):
            for lab, v in coef.items():
                A[i, col[lab]] += v
        return A

    def row_index(self, source: str, tag) -> int:
        for i, (_, s, t) in enumerate(self.rows):
            if s == source and t == tag:
                return i
        raise KeyError((source, tag))

    def blocks(self) -> list:
        """Diagonal blocks ``(name, m, rows, cols)`` in elimination order."""
        col = {u: j for j, u in enumerate(self.unknowns)}
        N = self.order
        if N == 1:
            rows = [self.row_index(s, 0) for s in ("EdgeLine", "Plane1", "Plane2")]
            return [("m=1", 1, rows, [col[(1, 1)], col[(1, -1)], col[(0, 0)]])]
        out = [
            ("m=2", 2, [self.row_index("Plane1", 1), self.row_index("Plane2", 1)], [col[(N, 2)], col[(N, -2)]]),
            (
                "m=1",
                1,
                [self.row_index("EdgeLine", 0), self.row_index("Plane1", 0), self.row_index("Plane2", 0)],
                [col[(N, 1)], col[(N, -1)], col[(N - 1, 0)]],
            ),
        ]
        for m in range(3, N + 1):
            out.append(
                (f"m={m}", m, [self.row_index("Plane1", m - 1), self.row_index("Plane2", m - 1)], [col[(N, m)], col[(N, -m)]])
            )
        return out

    def block_determinants(self) -> list:
        A = self.matrix()
        res = []
        for name, m, r, cidx in self.blocks():
            sub = A[np.ix_(r, cidx)]
            scale = float(np.prod(np.linalg.norm(sub, axis=1)))
            res.append((name, m, complex(np.linalg.det(sub)), scale))
        return res


def base_system(c: CornerData) -> CoefficientSystem:
    """Order-zero system in ``(a_1^1, a_1^-1, a_0^0)``."""
    p = c.phi0
    s = math.sqrt(c.lam / 6)
    e = cmath.exp
    rows = [
        (
            {(1, 1): -1j * s * math.sin(p) * e(2j * p), (1, -1): -1j * s * math.sin(p) * e(-2j * p), (0, 0): c.h1 * math.cos(p) + c.h2},
            "EdgeLine",
            0,
        ),
        ({(1, 1): s, (1, -1): -s, (0, 0): -c.h1}, "Plane1", 0),
        ({(1, 1): s * e(1j * p), (1, -1): -s * e(-1j * p), (0, 0): c.h2}, "Plane2", 0),
    ]
    return CoefficientSystem(1, [(1, 1), (1, -1), (0, 0)], rows)


def _plane_rows(N: int, lam: float, eta: complex, phase: Callable[[int], complex], sign: float, source: str):
    """Rows from one plane: tag k is the coefficient of P_{N-1}^k."""
    cN = c_factor(N, lam)
    rows = [({(N, 1): sign * cN * phase(1), (N, -1): -sign * cN * phase(-1), (N - 1, 0): eta * math.sqrt(2 * N - 1)}, source, 0)]
    f = math.factorial
    for k in range(1, N):
        coef = {}
        if k == 1:
            # the a^0 - a^0 pair cancels; normalized to a^2 phase - a^-2 phase
            coef[(N, 2)] = phase(2)
            coef[(N, -2)] = -phase(-2)
        else:
            lo = 0.5 * math.sqrt(f(N - k + 1) / f(N + k - 1))
            coef[(N, k - 1)] = lo * phase(k - 1)
            coef[(N, -(k - 1))] = -lo * phase(-(k - 1))
            hi = 0.5 * math.sqrt(f(N - k - 1) / f(N + k + 1)) * (N + k) * (N + k + 1)
            coef[(N, k + 1)] = hi * phase(k + 1)
            coef[(N, -(k + 1))] = -hi * phase(-(k + 1))
        rows.append((coef, source, k))
    return rows


def order_system(c: CornerData, N: int) -> CoefficientSystem:
    """Order-N system under the hypothesis that all lower coefficients vanish."""
    if N < 2:
        raise ValueError("order_system needs N >= 2; use base_system for the base case")
    p = c.phi0
    cN = c_factor(N, c.lam)
    edge = (
        {
            (N, 1): -1j * cN * math.sin(p) * cmath.exp(2j * p),
            (N, -1): -1j * cN * math.sin(p) * cmath.exp(-2j * p),
            (N - 1, 0): (c.h1 * math.cos(p) + c.h2) * math.sqrt(2 * N - 1),
        },
        "EdgeLine",
        0,
    )
    rows = [edge]
    rows += _plane_rows(N, c.lam, c.h1, lambda m: 1.0, -1.0, "Plane1")
    rows += _plane_rows(N, c.lam, c.h2, lambda m: cmath.exp(1j * m * p), 1.0, "Plane2")
    unknowns = [(N, m) for m in range(-N, N + 1) if m != 0] + [(N - 1, 0)]
    return CoefficientSystem(N, unknowns, rows)


# ---------------------------------------------------------------------------
# certification


@dataclass(frozen=True)
class BlockingCondition:
    order: int
    kind: str  # "AngleResonance" or "ImpedanceDegeneracy"
    m: object = None

    def __str__(self):
        return f"AngleResonance(m={self.m})" if self.kind == "AngleResonance" else "ImpedanceDegeneracy"


@dataclass
class VanishingReport:
    certified_order: int
    target_order: int
    blocking: object  # BlockingCondition or None
    determinant_log: list = field(default_factory=list)
    exact: bool = False

    def to_dict(self) -> dict:
        return {
            "certified_order": self.certified_order,
            "target_order": self.target_order,
            "exact": self.exact,
            "blocking": None
            if self.blocking is None
            else {"order": self.blocking.order, "condition": str(self.blocking), "kind": self.blocking.kind, "m": self.blocking.m},
            "determinant_log": [
                {"order": N, "block": name, "abs_det": abs(d), "re": d.real, "im": d.imag, "zero": z}
                for N, name, d, z in self.determinant_log
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _exact_cos(alpha: Fraction):
    """cos(alpha pi) as a Fraction when rational (Niven), else None."""
    q, p = alpha.numerator, alpha.denominator
    if p == 1:
        return Fraction((-1) ** q)
    if p == 2:
        return Fraction(0)
    if p == 3:
        return Fraction(1, 2) if q % 6 in (1, 5) else Fraction(-1, 2)
    return None


def _exact_block_zero(c: CornerData, m: int, N: int):
    """Exact zero test for a block; returns (zero, kind)."""
    alpha = c.alpha
    p = alpha.denominator
    if m != 1:
        return (m % p == 0), "AngleResonance"
    # sin(phi0) != 0 on (0, pi); only 2 cos(phi0) (eta1 + eta2 cos(phi0)) can vanish
    cs = _exact_cos(alpha)
    if cs is None:
        return False, None
    if cs == 0:
        return True, "AngleResonance"
    r1, i1 = _exact_complex(c.eta1)
    r2, i2 = _exact_complex(c.eta2)
    return (r1 + r2 * cs == 0 and i1 + i2 * cs == 0), "ImpedanceDegeneracy"


def _numeric_kind(c: CornerData, m: int) -> str:
    if m != 1:
        return "AngleResonance"
    return "AngleResonance" if abs(math.cos(c.phi0)) < 1e-12 else "ImpedanceDegeneracy"


def certify_vanishing(c: CornerData, N_target: int, tol: float = DEGENERACY_TOL, exact=None) -> VanishingReport:
    """Run the induction up to ``N_target`` and report the last certified order.

    ``exact`` defaults to True when the corner data is exactly rational; the
    determinant values are logged in floating point either way.
    """
    use_exact = c.exact if exact is None else exact
    if use_exact and not c.exact:
        raise ValueError("exact certification needs Fraction alpha and rational impedances")
    log = []
    for N in range(1, N_target + 1):
        sys_ = base_system(c) if N == 1 else order_system(c, N)
        for name, m, det, scale in sys_.block_determinants():
            if use_exact:
                zero, kind = _exact_block_zero(c, m, N)
            else:
                zero = abs(det) <= tol * scale
                kind = _numeric_kind(c, m)
            # the order-one resonance at alpha = 1/2 comes from cos(phi0) = 0
            mm = 2 if (m == 1 and kind == "AngleResonance") else m
            log.append((N, name, det, bool(zero)))
            if zero:
                blk = BlockingCondition(N, kind, mm if kind == "AngleResonance" else None)
                return VanishingReport(N - 1, N_target, blk, log, use_exact)
    return VanishingReport(N_target, N_target, None, log, use_exact)


# ---------------------------------------------------------------------------
# spherical expansions


def _ylm_matrix(nmax: int, theta, phi) -> np.ndarray:
    """Y_n^m at points, columns ordered (n, m) with m = -n..n."""
    x = np.cos(theta)
    P = legendre_table(nmax, x)
    cols = []
    for n in range(nmax + 1):
        for m in range(-n, n + 1):
            mm = abs(m)
            norm = math.sqrt((2 * n + 1) / (4 * math.pi) * math.exp(math.lgamma(n - mm + 1) - math.lgamma(n + mm + 1)))
            cols.append(norm * P[n, mm] * np.exp(1j * m * phi))
    return np.stack(cols, axis=-1)


def _labels(nmax: int) -> list:
    return [(n, m) for n in range(nmax + 1) for m in range(-n, n + 1)]


def _design(nmax: int, lam: float, rel_points) -> np.ndarray:
    r, th, ph = to_spherical(rel_points)
    Y = _ylm_matrix(nmax, th, ph)
    k = math.sqrt(lam)
    radial = []
    for n in range(nmax + 1):
        jn = np.asarray(spherical_bessel_j(n, k * r))
        radial += [4 * math.pi * (1j**n) * jn] * (2 * n + 1)
    return Y * np.stack(radial, axis=-1)


class FitError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class SphericalExpansion:
    lam: float
    nmax: int
    coefficients: np.ndarray  # flat, ordered as _labels(nmax)
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    residual: float = 0.0
    condition: float = 1.0

    def coefficient(self, n: int, m: int) -> complex:
        if not (0 <= n <= self.nmax and abs(m) <= n):
            raise KeyError((n, m))
        return complex(self.coefficients[n * n + n + m])

    def as_dict(self) -> dict:
        return {lab: complex(v) for lab, v in zip(_labels(self.nmax), self.coefficients)}

    def evaluate(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        return _design(self.nmax, self.lam, pts) @ self.coefficients

    @classmethod
    def from_dict(cls, lam: float, nmax: int, coeffs: dict, center=(0.0, 0.0, 0.0)) -> "SphericalExpansion":
        a = np.zeros((nmax + 1) ** 2, dtype=complex)
        for (n, m), v in coeffs.items():
            a[n * n + n + m] = v
        return cls(lam, nmax, a, np.asarray(center, dtype=float))


def plane_wave_coefficients(d, nmax: int) -> SphericalExpansion:
    """Jacobi-Anger coefficients ``a_n^m = conj(Y_n^m(d))`` of exp(i sqrt(lam) x.d)."""
    _, th, ph = to_spherical(np.asarray(d, dtype=float)[None])
    Y = _ylm_matrix(nmax, th, ph)[0]
    return SphericalExpansion(1.0, nmax, np.conj(Y))


def _shell_points(n_shells: int, nmax: int, radius: float, seed: int, oversample: int = 8):
    """Gauss-Legendre x uniform-azimuth grids on concentric shells.

    The grids integrate products of harmonics up to degree nmax + oversample
    exactly, so unresolved higher modes do not alias into the fitted ones.
    """
    rng = np.random.default_rng(seed)
    nt = nmax + oversample
    nphi = 2 * (nmax + oversample) + 2
    x, _ = np.polynomial.legendre.leggauss(nt)
    th = np.arccos(x)
    radii = radius * np.linspace(0.35, 1.0, n_shells)
    pts = []
    for r in radii:
        ph = rng.uniform(0, 2 * math.pi) + 2 * math.pi * np.arange(nphi) / nphi
        T, P = np.meshgrid(th, ph, indexing="ij")
        u = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
        pts.append(r * u)
    return np.vstack(pts)


def fit_expansion(field_sampler, center, radius: float, lam: float, nmax: int, n_shells: int = 6,
                  seed: int = 0, max_condition: float = 1e12) -> SphericalExpansion:
    """Least-squares fit of the spherical-wave coefficients about ``center``.

    ``field_sampler`` maps absolute points (P, 3) to complex values (P,).
    The reported residual is the relative misfit on held-out samples.
    """
    center = np.asarray(center, dtype=float)
    rel = _shell_points(n_shells, nmax, radius, seed)
    A = _design(nmax, lam, rel)
    b = np.asarray(field_sampler(rel + center), dtype=complex)
    colnorm = np.linalg.norm(A, axis=0)
    # columns this small carry no information at double precision
    dead = colnorm < 1e-14 * colnorm.max()
    colnorm[colnorm == 0] = 1.0
    As = A / colnorm
    sv = np.linalg.svd(As, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 and not dead.any() else math.inf
    if cond > max_condition:
        raise FitError(f"fit is ill-conditioned (condition number {cond:.2e})", {"condition": cond, "nmax": nmax, "radius": radius})
    x, *_ = np.linalg.lstsq(As, b, rcond=None)
    a = x / colnorm
    held = _shell_points(max(n_shells - 1, 1), nmax + 1, 0.93 * radius, seed + 1)
    bh = np.asarray(field_sampler(held + center), dtype=complex)
    fit = _design(nmax, lam, held) @ a
    scale = max(np.linalg.norm(bh), 1e-300)
    res = float(np.linalg.norm(fit - bh) / scale) if np.linalg.norm(bh) > 0 else float(np.linalg.norm(fit))
    return SphericalExpansion(lam, nmax, a, center, res, cond)


# ---------------------------------------------------------------------------
# vanishing order and corner averages


def ball_points(n_points: int = 2**18, seed: int = 0) -> np.ndarray:
    """Scrambled Sobol points of the cube [-1, 1]^3 that fall in the unit ball.

    Returned with the total cube count so volumes follow from counting.
    """
    m = int(math.ceil(math.log2(max(n_points, 2))))
    s = qmc.Sobol(3, scramble=True, seed=seed).random_base2(m)
    cube = 2 * s - 1
    return cube[np.einsum("ij,ij->i", cube, cube) <= 1.0], len(cube)


@dataclass
class VanishingEstimate:
    slope: float
    order: float
    order_int: object
    r_squared: float
    noisy: bool
    degenerate: bool
    rho: np.ndarray
    integrals: np.ndarray

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "order": self.order,
            "order_int": self.order_int,
            "r_squared": self.r_squared,
            "noisy": self.noisy,
            "degenerate": self.degenerate,
            "rho": self.rho.tolist(),
            "integrals": self.integrals.tolist(),
        }


def estimate_vanishing_order(field_sampler, x0, domain_indicator=None, rho_values=None, n_points: int = 2**18,
                             seed: int = 0) -> VanishingEstimate:
    """Slope of log I(rho) against log rho, minus 3, with I(rho) = int |u| over the region.

    The same quasi-random points, scaled by rho, are used for every radius, so
    cone-shaped regions are sampled consistently across scales.
    """
    x0 = np.asarray(x0, dtype=float)
    rho = np.asarray(rho_values if rho_values is not None else np.logspace(-1, -3, 7), dtype=float)
    unit, total = ball_points(n_points, seed)
    vals = []
    for r in rho:
        pts = x0 + r * unit
        mask = np.ones(len(pts), bool) if domain_indicator is None else np.asarray(domain_indicator(pts), bool)
        u = np.zeros(len(pts))
        if np.any(mask):
            u[mask] = np.abs(np.asarray(field_sampler(pts[mask])))
        vals.append(8.0 * r**3 * u.sum() / total)
    vals = np.array(vals)
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        return VanishingEstimate(math.nan, math.inf, None, 0.0, True, True, rho, vals)
    lx, ly = np.log(rho), np.log(vals)
    slope, icpt = np.polyfit(lx, ly, 1)
    fit = slope * lx + icpt
    ss_res = float(np.sum((ly - fit) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    order = float(slope - 3.0)
    return VanishingEstimate(float(slope), order, int(round(order)), r2, r2 < 0.99, False, rho, vals)


@dataclass
class CornerAverage:
    value: np.ndarray  # complex 3-vector
    error: float
    converged: bool
    r_values: np.ndarray
    averages: np.ndarray

    def to_dict(self) -> dict:
        return {
            "value": [[v.real, v.imag] for v in self.value],
            "error": self.error,
            "converged": self.converged,
        }


def _fd_gradient(field_sampler, pts, h):
    g = np.zeros((len(pts), 3), dtype=complex)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        g[:, i] = (np.asarray(field_sampler(pts + e)) - np.asarray(field_sampler(pts - e))) / (2 * h)
    return g


def corner_average(field_sampler, x_c, domain_indicator=None, r_values=None, gradient_sampler=None,
                   n_points: int = 2**15, seed: int = 0, fd_step: float = 1e-6) -> CornerAverage:
    """Shrinking-neighbourhood average of grad u at ``x_c``, extrapolated to r = 0.

    Averages over ``B_r(x_c)`` intersected with the indicated region are fitted
    by a cubic in r; the error bar is the change against a quadratic fit.
    """
    x_c = np.asarray(x_c, dtype=float)
    r = np.asarray(r_values if r_values is not None else np.geomspace(0.2, 0.02, 8), dtype=float)
    unit, _ = ball_points(n_points, seed)
    avgs = []
    for rr in r:
        pts = x_c + rr * unit
        mask = np.ones(len(pts), bool) if domain_indicator is None else np.asarray(domain_indicator(pts), bool)
        if not np.any(mask):
            raise ValueError("region around the corner is empty")
        q = pts[mask]
        g = np.asarray(gradient_sampler(q)) if gradient_sampler is not None else _fd_gradient(field_sampler, q, fd_step)
        avgs.append(g.mean(axis=0))
    avgs = np.array(avgs)
    V2 = np.vander(r, 4, increasing=True)
    V1 = np.vander(r, 3, increasing=True)
    c2, *_ = np.linalg.lstsq(V2, avgs, rcond=None)
    c1, *_ = np.linalg.lstsq(V1, avgs, rcond=None)
    val = c2[0]
    err = float(np.linalg.norm(c2[0] - c1[0]))
    scale = max(float(np.max(np.linalg.norm(avgs, axis=1))), 1e-300)
    return CornerAverage(val, err, err <= 1e-2 * scale or err < 1e-12, r, avgs)
