"""Special functions used by the corner expansions.

Associated Legendre functions carry the Condon-Shortley phase for positive
orders and use ``P_n^{-m} = (-1)^m (n-m)!/(n+m)! P_n^m`` for negative orders.
Spherical harmonics follow the ``|m|`` normalization

    Y_n^m = sqrt((2n+1)/(4 pi) (n-|m|)!/(n+|m|)!) P_n^{|m|}(cos theta) e^{i m phi}

which is orthonormal on the sphere but differs from the usual
``Y_n^{-m} = (-1)^m conj(Y_n^m)`` convention by the sign ``(-1)^m`` for
negative orders.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln

__all__ = [
    "SphericalPoint",
    "QuadratureError",
    "to_spherical",
    "to_cartesian",
    "double_factorial",
    "log_double_factorial",
    "assoc_legendre",
    "legendre_table",
    "legendre_theta_derivative",
    "legendre_over_sin",
    "spherical_bessel_j",
    "spherical_harmonic",
    "legendre_orthogonality_integral",
]


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message, value, error_estimate):
        super().__init__(f"{message} (value={value!r}, error estimate={error_estimate:.3e})")
        self.value = value
        self.error_estimate = error_estimate


@dataclass(frozen=True)
class SphericalPoint:
    r: float
    theta: float
    phi: float

    def __post_init__(self):
        if not (self.r >= 0 and math.isfinite(self.r)):
            raise ValueError(f"radial distance must be finite and >= 0, got {self.r}")
        if not (0.0 <= self.theta <= math.pi):
            raise ValueError(f"polar angle must lie in [0, pi], got {self.theta}")
        object.__setattr__(self, "phi", float(self.phi) % (2 * math.pi))

    def cartesian(self) -> np.ndarray:
        return to_cartesian(self.r, self.theta, self.phi)


def to_spherical(xyz):
    """Cartesian points (..., 3) -> (r, theta, phi) with phi in [0, 2 pi)."""
    xyz = np.asarray(xyz, dtype=float)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    r = np.sqrt(x * x + y * y + z * z)
    theta = np.arctan2(np.sqrt(x * x + y * y), z)
    phi = np.mod(np.arctan2(y, x), 2 * np.pi)
    return r, theta, phi


def to_cartesian(r, theta, phi):
    r, theta, phi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (r, theta, phi)))
    st = np.sin(theta)
    return np.stack([r * st * np.cos(phi), r * st * np.sin(phi), r * np.cos(theta)], axis=-1)


def log_double_factorial(n: int) -> float:
    """log(n!!) for odd or even n >= -1."""
    if n < -1:
        raise ValueError("double factorial defined for n >= -1")
    if n <= 0:
        return 0.0
    if n % 2:
        k = (n + 1) // 2
        return k * math.log(2.0) + gammaln(k + 0.5) - 0.5 * math.log(math.pi)
    k = n // 2
    return k * math.log(2.0) + gammaln(k + 1.0)


def double_factorial(n: int) -> float:
    # exact integer product is cheap up to ~300 and overflows float past that
    if n <= 300:
        return float(math.prod(range(n, 0, -2))) if n > 0 else 1.0
    return math.exp(log_double_factorial(n))


def _check_order(n, m):
    if n < 0 or int(n) != n:
        raise ValueError(f"degree must be a nonnegative integer, got {n}")
    if abs(m) > n:
        raise ValueError(f"order |m| = {abs(m)} exceeds degree n = {n}")


def _legendre_column(nmax: int, m: int, x: np.ndarray) -> np.ndarray:
    """P_l^m(x) for l = 0..nmax at fixed m >= 0 (zeros for l < m)."""
    out = np.zeros((nmax + 1,) + x.shape)
    if m > nmax:
        return out
    somx2 = np.sqrt(np.clip((1.0 - x) * (1.0 + x), 0.0, None))
    pmm = np.ones_like(x)
    fact = 1.0
    for _ in range(m):
        pmm = -pmm * fact * somx2
        fact += 2.0
    out[m] = pmm
    if m + 1 <= nmax:
        out[m + 1] = x * (2 * m + 1) * pmm
    for ll in range(m + 2, nmax + 1):
        out[ll] = ((2 * ll - 1) * x * out[ll - 1] - (ll + m - 1) * out[ll - 2]) / (ll - m)
    return out


def legendre_table(nmax: int, x) -> np.ndarray:
    """Table ``T[n, m]`` of P_n^m(x) for 0 <= m <= n <= nmax (zeros above)."""
    x = np.asarray(x, dtype=float)
    table = np.zeros((nmax + 1, nmax + 1) + x.shape)
    for m in range(nmax + 1):
        table[:, m] = _legendre_column(nmax, m, x)
    return table


def assoc_legendre(n: int, m: int, x):
    """Associated Legendre function P_n^m(x), |m| <= n, |x| <= 1."""
    _check_order(n, m)
    xa = np.asarray(x, dtype=float)
    if np.any(np.abs(xa) > 1.0):
        raise ValueError("argument must satisfy |x| <= 1")
    mm = abs(m)
    val = _legendre_column(n, mm, xa)[n]
    if m < 0:
        val = (-1) ** mm * math.exp(gammaln(n - mm + 1) - gammaln(n + mm + 1)) * val
    return val if val.ndim else float(val)


def _p(n, m, x):
    # P_n^m with the conventions above, zero whenever |m| > n
    if n < 0 or abs(m) > n:
        return np.zeros_like(np.asarray(x, dtype=float))
    return np.asarray(assoc_legendre(n, m, x))


def legendre_theta_derivative(n: int, m: int, theta):
    """d/dtheta P_n^m(cos theta) for 0 <= m <= n.

    Uses the three-term derivative relation. With the Condon-Shortley phase the
    relation carries an overall minus sign,
    ``dP_n^m/dtheta = -1/2 ((n+m)(n-m+1) P_n^{m-1} - P_n^{m+1})``.
    """
    if m < 0:
        raise ValueError("order must be nonnegative")
    _check_order(n, m)
    c = np.cos(np.asarray(theta, dtype=float))
    val = -0.5 * ((n + m) * (n - m + 1) * _p(n, m - 1, c) - _p(n, m + 1, c))
    return val if np.ndim(val) else float(val)


def legendre_over_sin(n: int, m: int, theta, variant: str = "raise"):
    """P_n^m(cos theta) / sin theta for m >= 1, regular on [0, pi].

    ``variant="raise"`` uses degree n+1 Legendre functions, ``"lower"`` uses
    degree n-1. Both are exact identities; at theta = 0 or pi they give the limit.
    """
    if m < 1:
        raise ValueError("P_n^m / sin(theta) is only regular for m >= 1")
    _check_order(n, m)
    c = np.cos(np.asarray(theta, dtype=float))
    if variant == "raise":
        val = -(_p(n + 1, m + 1, c) + (n - m + 1) * (n - m + 2) * _p(n + 1, m - 1, c)) / (2 * m)
    elif variant == "lower":
        val = -(_p(n - 1, m + 1, c) + (n + m - 1) * (n + m) * _p(n - 1, m - 1, c)) / (2 * m)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return val if np.ndim(val) else float(val)


def _sph_j_series(n, x):
    # j_n(x) = x^n/(2n+1)!! * sum_k (-x^2/2)^k / (k! (2n+3)(2n+5)...(2n+2k+1))
    lead = np.exp(n * np.log(np.where(x > 0, x, 1.0)) - log_double_factorial(2 * n + 1))
    lead = np.where(x > 0, lead, 1.0 if n == 0 else 0.0)
    term = np.ones_like(x)
    total = np.ones_like(x)
    h = -0.5 * x * x
    for k in range(1, 40):
        term = term * h / (k * (2 * n + 2 * k + 1))
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return lead * total


def _sph_j_upward(n, x):
    j0 = np.sin(x) / x
    if n == 0:
        return j0
    j1 = np.sin(x) / (x * x) - np.cos(x) / x
    for ll in range(1, n):
        j0, j1 = j1, (2 * ll + 1) / x * j1 - j0
    return j1


def _sph_j_miller(n, x):
    start = n + int(np.ceil(np.sqrt(40.0 * (n + 1)))) + 20
    start = max(start, int(np.max(x)) + 20)
    jp1 = np.zeros_like(x)
    jc = np.full_like(x, 1e-300)
    keep = np.zeros_like(x)
    for ll in range(start, 0, -1):
        jm1 = (2 * ll + 1) / x * jc - jp1
        jp1, jc = jc, jm1
        if ll - 1 == n:
            keep = jc.copy()
        big = np.abs(jc) > 1e250
        if np.any(big):
            scale = np.where(big, 1e-250, 1.0)
            jc, jp1, keep = jc * scale, jp1 * scale, keep * scale
    # jc = scaled j_0, jp1 = scaled j_1; normalize with the larger of the two
    j0 = np.sin(x) / x
    j1 = np.sin(x) / (x * x) - np.cos(x) / x
    use0 = np.abs(j0) >= np.abs(j1)
    scale = np.where(use0, j0 / np.where(jc != 0, jc, 1.0), j1 / np.where(jp1 != 0, jp1, 1.0))
    return keep * scale


def spherical_bessel_j(n: int, x):
    """Spherical Bessel function j_n(x) for real x >= 0."""
    if n < 0:
        raise ValueError("order must be nonnegative")
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("argument must be >= 0")
    flat = np.atleast_1d(xa).ravel()
    out = np.empty_like(flat)
    small = flat < 1.0
    up = ~small & (flat >= n)
    down = ~small & ~up
    if np.any(small):
        out[small] = _sph_j_series(n, flat[small])
    if np.any(up):
        out[up] = _sph_j_upward(n, flat[up])
    if np.any(down):
        out[down] = _sph_j_miller(n, flat[down])
    out = out.reshape(np.shape(xa))
    return out if out.ndim else float(out)


def spherical_harmonic(n: int, m: int, theta, phi):
    """Y_n^m(theta, phi) in the |m| normalization (complex)."""
    _check_order(n, m)
    mm = abs(m)
    norm = math.sqrt((2 * n + 1) / (4 * math.pi) * math.exp(gammaln(n - mm + 1) - gammaln(n + mm + 1)))
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    val = norm * np.asarray(assoc_legendre(n, mm, np.cos(theta))) * np.exp(1j * m * phi)
    return val if np.ndim(val) else complex(val)


def legendre_orthogonality_integral(n: int, m: int, l: int, tol: float = 1e-10) -> float:
    """Integral of P_n^m P_n^l / sin(theta) over theta in (0, pi).

    The integrand is scaled so that each factor has unit self-integral; ``tol``
    is the absolute tolerance on that scaled integral.
    """
    if not (1 <= m <= n and 1 <= l <= n):
        raise ValueError("requires 1 <= m, l <= n")

    def log_norm(k):
        return 0.5 * (gammaln(n + k + 1) - gammaln(n - k + 1) - math.log(k))

    scale = math.exp(log_norm(m) + log_norm(l))

    def integrand(t):
        return legendre_over_sin(n, m, t) * assoc_legendre(n, l, math.cos(t)) / scale

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        val, err = integrate.quad(integrand, 0.0, math.pi, epsabs=tol, epsrel=1e-12, limit=400)
    issues = [w for w in caught if issubclass(w.category, integrate.IntegrationWarning)]
    if (issues and err > tol) or err > 10 * max(tol, 1e-12 * abs(val)):
        msg = f"quadrature did not converge: {issues[0].message}" if issues else "error estimate above tolerance"
        raise QuadratureError(msg, val * scale, err * scale)
    return float(val * scale)
