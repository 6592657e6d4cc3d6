"""Wright functions, subordination kernels and Mittag-Leffler functions.

The Wright function used throughout is

    W_a(z) = sum_k (-z)^k / (k! Gamma(a - alpha k)),

so that Phi_alpha = W_{1-alpha}.  Small arguments use the power series, large
ones a saddle-point scaled Talbot contour for the Hankel integral

    W_a(z) = 1/(2 pi i) int_Ha exp(s - z s^alpha) s^{-a} ds.

Mittag-Leffler functions of scalars and strongly dissipative matrices are
evaluated by the resolvent integral over gamma(r, beta) with node doubling.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import gammaln, rgamma

from .errors import (
    ConfigurationError,
    EvaluationError,
    PreconditionError,
    UnsupportedRegionError,
)

FAMILIES = ("1", "alpha", "0")

# Talbot contour for the Wright integral.  In the scaled variable the contour
# crosses the real axis at w0*max(1, _TALBOT_SPREAD/lambda): at the saddle w0
# for large lambda, further out when lambda is small and the exp(s) factor
# dominates.  Validated against high precision sums for lambda >= 1.
_TALBOT_SPREAD = 4.0
_TALBOT_NODES = 1024
_SERIES_CAP = 4000


@dataclass(frozen=True)
class FractionalOrder:
    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not np.isfinite(a) or not 0.0 < a < 1.0:
            raise ConfigurationError(f"fractional order must lie in (0, 1), got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)

    def __float__(self):
        return self.alpha


def as_alpha(alpha) -> float:
    """Validate and unwrap a fractional order given as float or FractionalOrder."""
    if isinstance(alpha, FractionalOrder):
        return alpha.alpha
    return FractionalOrder(alpha).alpha


def _family_beta(alpha: float, family) -> float:
    key = str(family)
    if key in ("1", "1.0"):
        return 1.0
    if key == "alpha" or (not isinstance(family, str) and np.isclose(float(family), alpha)):
        return alpha
    if key in ("0", "0.0"):
        return 0.0
    raise ConfigurationError(f"unknown Mittag-Leffler family {family!r}; use 1, 'alpha' or 0")


def _log_rgamma(x):
    """log|1/Gamma(x)| and its sign, finite for negative non-integer x."""
    x = np.asarray(x, dtype=float)
    sign = np.ones_like(x)
    out = np.empty_like(x)
    pos = x > 0
    out[pos] = -gammaln(x[pos])
    xn = x[~pos]
    # reflection: 1/Gamma(x) = sin(pi x) Gamma(1-x) / pi
    red = xn - 2.0 * np.round(xn / 2.0)
    s = np.sin(np.pi * red)
    with np.errstate(divide="ignore"):
        out[~pos] = gammaln(1.0 - xn) + np.log(np.abs(s)) - np.log(np.pi)
    sign[~pos] = np.sign(s)
    return out, sign


# ---------------------------------------------------------------- Wright


def _wright_series(a: float, alpha: float, z: np.ndarray) -> np.ndarray:
    """Power series, intended for z^{1/(1-alpha)} < 1 where terms stay O(1)."""
    zmax = float(z.max()) if z.size else 0.0
    if zmax == 0.0:
        lr, sg = _log_rgamma(np.array([a]))
        return np.full(z.shape, sg[0] * np.exp(lr[0]))
    k = np.arange(_SERIES_CAP, dtype=float)
    lr, sg = _log_rgamma(a - alpha * k)
    base = lr - gammaln(k + 1.0)
    # pick the number of terms from the largest argument
    logmag = base + k * np.log(zmax)
    peak = np.max(logmag)
    tail = np.nonzero(logmag > peak - 40.0 * np.log(10.0))[0]
    kmax = int(tail[-1]) + 2
    if kmax >= _SERIES_CAP - 1:
        raise EvaluationError("Wright series did not converge within the term cap")
    k = k[:kmax]
    with np.errstate(divide="ignore", invalid="ignore"):
        lz = np.log(z)[:, None]
        terms = sg[:kmax] * (-1.0) ** k * np.exp(base[:kmax] + k * lz)
    terms[:, 0] = sg[0] * np.exp(base[0])
    return terms.sum(axis=1)


@lru_cache(maxsize=8)
def _talbot_shape(m: int):
    th = -np.pi + (np.arange(m) + 0.5) * 2.0 * np.pi / m
    shape = th / np.tan(th) + 1j * th
    dshape = 1.0 / np.tan(th) - th / np.sin(th) ** 2 + 1j
    return shape, dshape * (2.0 * np.pi / m) / (2j * np.pi)


def _wright_contour(a: float, alpha: float, z: np.ndarray, m: int = _TALBOT_NODES) -> np.ndarray:
    """Talbot contour after the substitution s = lambda w, lambda = z^{1/(1-alpha)}."""
    shape, dshape = _talbot_shape(m)
    w0 = alpha ** (1.0 / (1.0 - alpha))
    out = np.empty(z.shape)
    for i0 in range(0, z.size, 256):
        lam = z[i0:i0 + 256] ** (1.0 / (1.0 - alpha))
        r = w0 * np.maximum(1.0, _TALBOT_SPREAD / lam)[:, None]
        w = r * shape
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            f = np.exp(lam[:, None] * (w - w**alpha)) * w ** (-a) * r * dshape
        f = np.where(np.isfinite(f), f, 0.0)
        out[i0:i0 + 256] = (lam ** (1.0 - a) * f.sum(axis=1)).real
    return out


def wright(a: float, alpha, z) -> np.ndarray:
    """Wright function W_a(z) = sum (-z)^k / (k! Gamma(a - alpha k)) for z >= 0."""
    alpha = as_alpha(alpha)
    z = np.asarray(z, dtype=float)
    if np.any(~np.isfinite(z)) or np.any(z < 0):
        raise PreconditionError("Wright function requires finite z >= 0")
    flat = z.ravel()
    out = np.empty_like(flat)
    lam = flat ** (1.0 / (1.0 - alpha))
    small = lam < 1.0
    if small.any():
        out[small] = _wright_series(float(a), alpha, flat[small])
    if (~small).any():
        out[~small] = _wright_contour(float(a), alpha, flat[~small])
    return out.reshape(z.shape)


def wright_phi(alpha, z):
    """Phi_alpha(z), the density of the inverse alpha-stable subordinator."""
    alpha = as_alpha(alpha)
    return wright(1.0 - alpha, alpha, z)


def subordination_kernel(kind: str, alpha, t, s):
    """phi_{t,alpha}(s), psi_{t,alpha}(s) or nu_{t,alpha}(s).

    phi = t^-a Phi_a(s t^-a), psi = t^-1 W_0(s t^-a) and
    nu = t^{-a-1} W_{-a}(s t^-a) = d/dt phi.
    """
    alpha = as_alpha(alpha)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t <= 0):
        raise PreconditionError("subordination kernels need t > 0")
    if np.any(s < 0):
        raise PreconditionError("subordination kernels need s >= 0")
    t, s = np.broadcast_arrays(t, s)
    y = s * t ** (-alpha)
    if kind == "phi":
        return t ** (-alpha) * wright(1.0 - alpha, alpha, y)
    if kind == "psi":
        return wright(0.0, alpha, y) / t
    if kind == "nu":
        return t ** (-alpha - 1.0) * wright(-alpha, alpha, y)
    raise ConfigurationError(f"unknown subordination kernel {kind!r}")


# ---------------------------------------------------------- Mittag-Leffler


@dataclass(frozen=True)
class HankelContour:
    """gamma(radius, angle): two rays at +-angle joined by an arc of given radius."""

    radius: float
    angle: float
    nodes_per_ray: int = 64
    nodes_on_arc: int = 32

    def validate(self, alpha) -> None:
        alpha = as_alpha(alpha)
        lo, hi = np.pi * alpha / 2.0, min(np.pi / 2.0, np.pi * alpha)
        if not self.radius > 0:
            raise ConfigurationError("contour radius must be positive")
        if not lo < self.angle < hi:
            raise ConfigurationError(
                f"contour angle {self.angle:.6g} outside ({lo:.6g}, {hi:.6g}) for alpha={alpha}"
            )
        if self.nodes_per_ray < 8 or self.nodes_on_arc < 8:
            raise ConfigurationError("contour node counts must be >= 8")

    def refined(self) -> "HankelContour":
        return HankelContour(self.radius, self.angle, 2 * self.nodes_per_ray, 2 * self.nodes_on_arc)

    @classmethod
    def default(cls, alpha) -> "HankelContour":
        alpha = as_alpha(alpha)
        lo, hi = np.pi * alpha / 2.0, min(np.pi / 2.0, np.pi * alpha)
        return cls(1.0, 0.5 * (lo + hi))


def _gl_panels(a: float, b: float, n: int):
    per = min(16, n)
    npan = max(1, n // per)
    x, w = leggauss(per)
    edges = np.linspace(a, b, npan + 1)
    h = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + h[:, None] * x).ravel(), (h[:, None] * w).ravel()


@lru_cache(maxsize=64)
def contour_nodes(alpha: float, family_beta: float, contour: HankelContour):
    """Nodes eta_j and weights c_j with E(B) = sum_j c_j (eta_j I - B)^{-1}.

    The integrand exp(eta^{1/alpha}) eta^{(1-beta)/alpha} decays on the rays
    like exp(cos(angle/alpha) u) in u = |eta|^{1/alpha}; rays are integrated in
    u with Gauss-Legendre panels and cut where the factor drops below 1e-20.
    """
    r, ang = contour.radius, contour.angle
    c = np.cos(ang / alpha)
    u0 = r ** (1.0 / alpha)
    u1 = u0 + 46.0 / -c
    u, wu = _gl_panels(u0, u1, contour.nodes_per_ray)
    rho = u**alpha
    drho = alpha * u ** (alpha - 1.0) * wu
    xa, wa = leggauss(contour.nodes_on_arc)
    th = ang * xa
    e_lo, e_hi = np.exp(-1j * ang), np.exp(1j * ang)
    # orientation: lower ray inward, arc counterclockwise, upper ray outward
    eta = np.concatenate([rho * e_lo, r * np.exp(1j * th), rho * e_hi])
    deta = np.concatenate([-e_lo * drho, 1j * r * np.exp(1j * th) * ang * wa, e_hi * drho])
    p = (1.0 - family_beta) / alpha
    g = np.exp(eta ** (1.0 / alpha)) * eta**p
    # E = -1/(2 pi i alpha) int g (B - eta)^{-1} d eta = sum c_j (eta_j - B)^{-1}
    coef = g * deta / (2j * np.pi * alpha)
    return eta, coef


def _ml_contour_batch(alpha, beta, B, contour):
    """Contour quadrature for a stack of matrices, shape (..., N, N)."""
    eta, coef = contour_nodes(alpha, beta, contour)
    nb = B.shape[-1]
    if nb == 1:
        z = B[..., 0, 0][..., None]
        return ((coef / (eta - z)).sum(axis=-1))[..., None, None]
    eye = np.eye(nb)
    stack = B.reshape(-1, nb, nb)
    res = np.zeros(stack.shape, dtype=complex)
    chunk = max(1, 200000 // (eta.size * nb * nb))
    rhs = np.broadcast_to(eye, (eta.size, nb, nb))
    for i0 in range(0, stack.shape[0], chunk):
        blk = stack[i0:i0 + chunk]
        mats = eta[None, :, None, None] * eye - blk[:, None, :, :]
        sol = np.linalg.solve(mats, np.broadcast_to(rhs, mats.shape))
        res[i0:i0 + chunk] = np.einsum("j,bjkl->bkl", coef, sol)
    return res.reshape(B.shape)


def ml_contour(alpha, family, B, contour: HankelContour | None = None, tol: float = 1e-10,
               max_doublings: int = 7):
    """Resolvent-quadrature Mittag-Leffler of a matrix stack with node doubling.

    No dissipativity check is made; every eigenvalue must lie to the left of
    the contour.  Returns (values, contour actually used).
    """
    alpha = as_alpha(alpha)
    beta = _family_beta(alpha, family)
    contour = HankelContour.default(alpha) if contour is None else contour
    contour.validate(alpha)
    B = np.asarray(B, dtype=complex)
    prev = _ml_contour_batch(alpha, beta, B, contour)
    for _ in range(max_doublings):
        contour = contour.refined()
        cur = _ml_contour_batch(alpha, beta, B, contour)
        scale = np.maximum(1.0, np.abs(cur))
        if np.all(np.abs(cur - prev) <= tol * scale):
            return cur, contour
        prev = cur
    raise EvaluationError(
        f"Mittag-Leffler contour quadrature not converged after {max_doublings} doublings"
    )


def _ml_series(alpha, beta, z):
    z = np.asarray(z, dtype=complex)
    az = np.abs(z)
    kmax = int(min(170.0 / alpha, 20 + 4.0 * (np.max(az, initial=0.0) ** (1.0 / alpha) + 40) / alpha))
    k = np.arange(kmax)
    coef = rgamma(alpha * k + beta)
    out = np.zeros(z.shape, dtype=complex)
    pw = np.ones(z.shape, dtype=complex)
    last = np.zeros(z.shape)
    for kk in range(kmax):
        term = coef[kk] * pw
        out += term
        last = np.abs(term)
        pw = pw * z
    if np.any(last > 1e-16 * np.maximum(1.0, np.abs(out))):
        raise EvaluationError("Mittag-Leffler series did not converge")
    return out


def mittag_leffler_scalar(alpha, family, z):
    """E_alpha, E_{alpha,alpha} or E_{alpha,0} (family 1, 'alpha', 0) at complex z."""
    alpha = as_alpha(alpha)
    beta = _family_beta(alpha, family)
    z = np.asarray(z, dtype=complex)
    if np.any(~np.isfinite(z)):
        raise PreconditionError("Mittag-Leffler argument must be finite")
    flat = z.ravel()
    out = np.empty(flat.shape, dtype=complex)
    az = np.abs(flat)
    contour = HankelContour.default(alpha)
    series = az <= 5.0**alpha
    outside = ~series
    # the rays sit at +-angle; points with |arg z| > angle lie to their left
    left = outside & (np.abs(np.angle(flat)) > contour.angle)
    inside = outside & ~left
    if np.any(inside & (az ** (1.0 / alpha) > 30.0)):
        raise UnsupportedRegionError(
            "Mittag-Leffler evaluation far out in the right half-plane is not supported"
        )
    series = series | inside
    if series.any():
        out[series] = _ml_series(alpha, beta, flat[series])
    if left.any():
        vals, _ = ml_contour(alpha, family, flat[left][:, None, None], contour)
        out[left] = vals[:, 0, 0]
    return out.reshape(z.shape)


def mittag_leffler_matrix_series(alpha, family, B, tol: float = 1e-17, max_terms: int = 2000):
    """Truncated Taylor series sum_k B^k / Gamma(alpha k + beta), for small ||B||."""
    alpha = as_alpha(alpha)
    beta = _family_beta(alpha, family)
    B = np.asarray(B, dtype=complex)
    out = np.zeros_like(B)
    pw = np.broadcast_to(np.eye(B.shape[-1], dtype=complex), B.shape).copy()
    for k in range(max_terms):
        term = rgamma(alpha * k + beta) * pw
        out = out + term
        if k > 5 and np.max(np.abs(term)) < tol * max(1.0, np.max(np.abs(out))):
            return out
        pw = pw @ B
    raise EvaluationError("matrix Mittag-Leffler series did not converge")


def dissipativity_constant(B) -> float:
    """Largest delta with Re <Bz, z> <= -delta |z|^2; negative if B is not dissipative."""
    B = np.asarray(B, dtype=complex)
    herm = 0.5 * (B + np.conj(np.swapaxes(B, -1, -2)))
    ev = np.linalg.eigvalsh(herm)
    return -ev[..., -1] if B.ndim > 2 else float(-ev[-1])


def mittag_leffler_matrix(alpha, family, B, contour: HankelContour | None = None,
                          tol: float = 1e-10):
    """Matrix Mittag-Leffler function of a strongly dissipative matrix B.

    Evaluates -1/(2 pi i alpha) int_gamma exp(eta^{1/alpha}) w(eta) (B - eta I)^{-1} d eta
    with w = 1, eta^{1/alpha - 1}, eta^{1/alpha} for families 1, alpha, 0.
    """
    alpha = as_alpha(alpha)
    B = np.asarray(B, dtype=complex)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise PreconditionError("B must be a square matrix")
    if not np.all(np.isfinite(B)):
        raise PreconditionError("B must have finite entries")
    contour = HankelContour.default(alpha) if contour is None else contour
    contour.validate(alpha)
    if dissipativity_constant(B) <= 0:
        raise PreconditionError("B is not strongly dissipative")
    vals, _ = ml_contour(alpha, family, B, contour, tol=tol)
    return vals


def ml_asymptotic_remainder(alpha, family, B, contour: HankelContour | None = None) -> np.ndarray:
    """H = E(B) + B^{-1} / Gamma(beta - alpha), the part beyond the leading large-B term.

    For a strongly dissipative B with constant delta, |H| <= C delta^{-2}.
    """
    alpha = as_alpha(alpha)
    beta = _family_beta(alpha, family)
    B = np.asarray(B, dtype=complex)
    E = mittag_leffler_matrix(alpha, family, B, contour)
    return E + rgamma(beta - alpha) * np.linalg.inv(B)
