"""Fundamental solutions Z, Z_alpha, Y_alpha, dZ_alpha/dt and the elliptic Green matrix.

All fractional kernels of a homogeneous operator are self-similar,

    K(t, x) = t^{p - alpha (n + |beta|) / 2b} F(x t^{-alpha/2b}),

with p = 0 for Z_alpha, alpha - 1 for Y_alpha and -1 for dZ_alpha/dt, so the
work goes into the profile F.  Two independent routes compute it:

* subordination: F(y) = int W(s) s^{-(n+|beta|)/2b} Z1(y s^{-1/2b}) ds with the
  Wright weight W and the classical profile Z1 = Z(1, .);
* Fourier: F(y) = (2 pi)^{-n} int e^{i y.eta} eta^beta E(A0(eta)) d eta with a
  Mittag-Leffler family E, by Gauss-Legendre quadrature plus an analytic tail
  from the large-argument expansion of E (n = 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.polynomial.laguerre import laggauss
from numpy.polynomial.legendre import leggauss
from scipy.special import rgamma, sici

from .errors import (
    ConfigurationError,
    EvaluationError,
    PreconditionError,
    SingularPointError,
)
from .grids import GridSpec
from .operators import ConstantOperator, MultiIndex, monomial, require_parabolic, symbol_eval
from .specfun import (
    HankelContour,
    as_alpha,
    mittag_leffler_scalar,
    ml_contour,
    wright,
)

KINDS = ("Z", "Z_alpha", "Y_alpha", "dtZ_alpha")

# exponent offset p and Wright index a(alpha) / Mittag-Leffler family per kind
_KIND_TABLE = {
    "Z_alpha": (lambda al: 0.0, lambda al: 1.0 - al, "1"),
    "Y_alpha": (lambda al: al - 1.0, lambda al: 0.0, "alpha"),
    "dtZ_alpha": (lambda al: -1.0, lambda al: -al, "0"),
}

# e^{-41} ~ 1.6e-18: frequency cutoff for e^{A0(xi)}
_EXP_CUT = 41.0
_PROFILE_FLOOR = 1e-15
_LAGUERRE = laggauss(60)
# eigenbasis condition number up to which matrix Mittag-Leffler values are diagonalized
_EIG_COND_MAX = 1e4


@dataclass(frozen=True)
class ScalingQuantities:
    R: float
    rho: float


def scaling(alpha, b: int, t, x, n: int = 1) -> ScalingQuantities:
    """R = t^-alpha |x|^2b and rho = R^{1/(2b - alpha)}; arrays broadcast.

    For n = 1 the entries of x are coordinates; for n > 1 the last axis of x
    holds the components.
    """
    alpha = as_alpha(alpha)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise PreconditionError("scaling needs t > 0")
    x = np.asarray(x, dtype=float)
    r = np.abs(x) if n == 1 else np.linalg.norm(x, axis=-1)
    R = t ** (-alpha) * r ** (2 * b)
    rho = R ** (1.0 / (2 * b - alpha))
    if np.ndim(R) == 0:
        return ScalingQuantities(float(R), float(rho))
    return ScalingQuantities(R, rho)


def _as_beta(beta, n: int) -> MultiIndex:
    if beta is None:
        return MultiIndex((0,) * n)
    if isinstance(beta, MultiIndex):
        return beta
    if isinstance(beta, int):
        if n != 1:
            raise ConfigurationError("integer derivative order is only meaningful for n = 1")
        return MultiIndex((beta,))
    return MultiIndex(tuple(beta))


def _as_points(grid_or_points, n: int):
    if isinstance(grid_or_points, GridSpec):
        if grid_or_points.n != n:
            raise ConfigurationError("grid dimension does not match operator")
        return grid_or_points.points(), grid_or_points
    pts = np.asarray(grid_or_points, dtype=float)
    if pts.ndim <= 1:
        pts = pts.reshape(-1, 1) if n == 1 else pts.reshape(1, n)
    if pts.shape[-1] != n:
        raise ConfigurationError("points have the wrong dimension")
    return pts, None


@dataclass(frozen=True)
class KernelField:
    """Matrix kernel samples values[time, point] of the given kind."""

    kind: str
    times: np.ndarray
    points: np.ndarray
    values: np.ndarray
    grid: GridSpec | None = None
    derivative: tuple = (0,)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("times", "points", "values"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all(np.isfinite(self.values[np.isfinite(self.values)])):
            raise EvaluationError("non-finite kernel values")

    @property
    def N(self) -> int:
        return self.values.shape[-1]

    def norms(self) -> np.ndarray:
        """Operator 2-norms |K(t, x)|, shape (T, P)."""
        if self.N == 1:
            return np.abs(self.values[..., 0, 0])
        return np.linalg.norm(self.values, 2, axis=(-2, -1))

    def slice(self, i: int) -> np.ndarray:
        return self.values[i]

    def grid_integral(self) -> np.ndarray:
        """Riemann sum over a uniform grid (second order away from the x = 0 cusp)."""
        if self.grid is None:
            raise ConfigurationError("grid_integral needs a GridSpec-sampled field")
        return self.values.sum(axis=1) * self.grid.spacing**self.grid.n


# ------------------------------------------------------------ classical profile


def _gl_panels(a: float, b: float, width: float, per: int = 16):
    npan = max(1, int(np.ceil((b - a) / width)))
    x, w = leggauss(per)
    edges = np.linspace(a, b, npan + 1)
    h = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + h[:, None] * x).ravel(), (h[:, None] * w).ravel()


def _expm_batch(B: np.ndarray) -> np.ndarray:
    if B.shape[-1] == 1:
        return np.exp(B)
    return scipy.linalg.expm(B)


class ClassicalProfile:
    """Z1^(beta)(y) = (2 pi)^-n int e^{i y.xi} xi^beta exp(A0(xi)) d xi, the FSCP at s = 1.

    Values beyond the radius y_cut, where the profile has dropped below the
    quadrature noise floor, are returned as exact zeros.
    """

    def __init__(self, op: ConstantOperator, beta=None):
        self.op = op
        self.n, self.N, self.b = op.n, op.N, op.b
        self.beta = _as_beta(beta, op.n)
        self.delta = require_parabolic(op)
        self.xi_max = (_EXP_CUT / self.delta) ** (1.0 / (2 * self.b))
        self.y_cut = self._find_cut()
        self._setup(self.y_cut)

    def _setup(self, ymax: float):
        width = min(0.5, 2.0 * np.pi / max(ymax, 1.0))
        if self.n == 1:
            xi, w = _gl_panels(0.0, self.xi_max, width)
            f = monomial(self.beta, xi[:, None])[:, None, None] * _expm_batch(
                symbol_eval(self.op, xi[:, None]))
            self._xi, self._fw = xi, f * w[:, None, None] / np.pi
        else:
            xi, w = _gl_panels(-self.xi_max, self.xi_max, width)
            grids = np.meshgrid(*([xi] * self.n), indexing="ij")
            pts = np.stack([g.ravel() for g in grids], axis=-1)
            wt = np.ones(pts.shape[0])
            for g in np.meshgrid(*([w] * self.n), indexing="ij"):
                wt = wt * g.ravel()
            f = monomial(self.beta, pts)[:, None, None] * _expm_batch(symbol_eval(self.op, pts))
            self._xi, self._fw = pts, f * (wt / (2.0 * np.pi) ** self.n)[:, None, None]

    def _raw(self, y: np.ndarray) -> np.ndarray:
        out = np.zeros((y.shape[0], self.N, self.N), dtype=complex)
        fw = self._fw.reshape(self._fw.shape[0], -1)
        for i0 in range(0, y.shape[0], 512):
            yy = y[i0:i0 + 512]
            if self.n == 1:
                phase = yy[:, :1] * self._xi[None, :]
                if self.beta.order % 2 == 0:
                    vals = np.cos(phase) @ fw
                else:
                    vals = 1j * (np.sin(phase) @ fw)
            else:
                vals = np.exp(1j * (yy @ self._xi.T)) @ fw
            out[i0:i0 + 512] = vals.reshape(-1, self.N, self.N)
        return out

    def _find_cut(self) -> float:
        scale = self.op.norm() ** (1.0 / (2 * self.b))
        ymax = (60.0 if self.n == 1 else 24.0) * scale
        for _ in range(4):
            self._setup(ymax)
            dirs = np.eye(self.n) if self.n > 1 else np.ones((1, 1))
            if self.n > 1:
                dirs = np.concatenate([dirs, np.ones((1, self.n)) / np.sqrt(self.n)])
            r = np.linspace(0.0, ymax, 1200 if self.n == 1 else 60)
            mags = np.zeros(r.size)
            for d in dirs:
                vals = self._raw(r[:, None] * d[None, :])
                mags = np.maximum(mags, np.max(np.abs(vals), axis=(1, 2)))
            tail = np.maximum.accumulate(mags[::-1])[::-1]
            above = np.nonzero(tail > _PROFILE_FLOOR * np.max(mags))[0]
            cut = r[above[-1]] if above.size else r[1]
            if cut < 0.8 * ymax:
                return 1.05 * cut + r[1]
            ymax *= 2.0
        raise EvaluationError("classical profile does not decay on the search window")

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1, self.n)
        out = np.zeros((y.shape[0], self.N, self.N), dtype=complex)
        keep = np.linalg.norm(y, axis=1) <= self.y_cut
        if keep.any():
            out[keep] = self._raw(y[keep])
        return out


_CACHE: dict = {}


def _cached(key, factory):
    if key not in _CACHE:
        if len(_CACHE) > 256:
            _CACHE.clear()
        _CACHE[key] = factory()
    return _CACHE[key]


def classical_profile(op: ConstantOperator, beta=None) -> ClassicalProfile:
    b = _as_beta(beta, op.n)
    return _cached(("classical", op.key, b.components), lambda: ClassicalProfile(op, b))


# ------------------------------------------------------------- classical FSCP


def classical_fscp(op: ConstantOperator, s: float, grid: GridSpec, tol: float = 1e-12) -> KernelField:
    """Z(s, .) on the grid by discrete Fourier synthesis over the dual lattice."""
    if not s > 0:
        raise PreconditionError("classical FSCP needs s > 0")
    if grid.n != op.n:
        raise ConfigurationError("grid dimension does not match operator")
    delta = require_parabolic(op)
    xi_nyq = np.pi / grid.spacing
    if np.exp(-delta * s * xi_nyq ** (2 * op.b)) > tol:
        need = (np.log(1.0 / tol) / (delta * s)) ** (1.0 / (2 * op.b))
        raise PreconditionError(
            f"frequency cutoff {xi_nyq:.4g} too small for s={s}; need at least {need:.4g} "
            f"(spacing <= {np.pi / need:.4g})"
        )
    M, n, N = grid.points_per_axis, grid.n, op.N
    k1 = grid.frequencies()
    ks = np.meshgrid(*([k1] * n), indexing="ij")
    xi = np.stack([k.ravel() for k in ks], axis=-1)
    E = _expm_batch(s * symbol_eval(op, xi))
    # shift so that the first sample sits at x = -L
    phase = np.exp(-1j * xi.sum(axis=-1) * (-grid.half_width))
    spec = (E * phase[:, None, None]).reshape((M,) * n + (N, N))
    vals = np.fft.ifftn(spec, axes=tuple(range(n))) * (M / (2.0 * grid.half_width)) ** n
    vals = vals.reshape(M**n, N, N)
    return KernelField("Z", np.array([s]), grid.points(), vals[None], grid, (0,) * n,
                       {"route": "fft"})


# ------------------------------------------------------- subordination profile


def _wright_index(kind: str, alpha: float) -> float:
    return _KIND_TABLE[kind][1](alpha)


class SubordinationProfile:
    """F(y) = int_0^inf W_a(s) s^{-(n+|beta|)/2b} Z1^(beta)(y s^{-1/2b}) ds in u = log s."""

    def __init__(self, op: ConstantOperator, alpha: float, kind: str, beta=None,
                 tol: float = 1e-11):
        if kind not in _KIND_TABLE:
            raise ConfigurationError(f"unknown kernel kind {kind!r}")
        self.op, self.alpha, self.kind = op, as_alpha(alpha), kind
        self.beta = _as_beta(beta, op.n)
        self.z1 = classical_profile(op, self.beta)
        self.a = _wright_index(kind, self.alpha)
        self.tol = tol
        self.q = (op.n + self.beta.order) / (2.0 * op.b)
        self.u_hi = self._upper()

    def _upper(self) -> float:
        u = np.arange(0.0, 12.0, 0.05)
        w = np.abs(wright(self.a, self.alpha, np.exp(u))) * np.exp(u * (1.0 - self.q))
        big = np.nonzero(w > 1e-19 * max(w.max(), 1e-300))[0]
        return float(u[big[-1]] + 0.5) if big.size else 1.0

    def _lower(self, r: np.ndarray) -> np.ndarray:
        rate = 1.0 - self.q
        lo = np.full(r.shape, -np.inf)
        nz = r > 0
        lo[nz] = 2 * self.op.b * np.log(r[nz] / self.z1.y_cut)
        if rate > 0:
            lo = np.maximum(lo, -40.0 / rate)
        elif np.any(~nz):
            raise SingularPointError("kernel is singular at x = 0 for n + |beta| >= 2b")
        return lo

    def _integrand(self, u: np.ndarray, y: np.ndarray, lo: np.ndarray):
        """Sum over nodes u of W(e^u) e^{u(1-q)} Z1(y e^{-u/2b}), shape (P, N, N),
        together with sum |W e^{u(1-q)}| used as an absolute error scale."""
        N = self.op.N
        out = np.zeros((y.shape[0], N, N), dtype=complex)
        sig = np.exp(u)
        wts = wright(self.a, self.alpha, sig) * sig ** (1.0 - self.q)
        shrink = sig ** (-1.0 / (2 * self.op.b))
        for j in range(u.size):
            if wts[j] == 0.0:
                continue
            act = lo <= u[j]
            if act.any():
                out[act] += wts[j] * self.z1(y[act] * shrink[j])
        return out, np.abs(wts).sum()

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1, self.op.n)
        r = np.linalg.norm(y, axis=1)
        lo = self._lower(r)
        u_lo = float(lo.min())
        h = 0.2
        u = np.arange(u_lo, self.u_hi + h, h)
        acc, wsum = self._integrand(u, y, lo)
        prev = acc * h
        z1max = np.max(np.abs(self.z1(np.zeros((1, self.op.n)))))
        for _ in range(8):
            mids = u[:-1] + 0.5 * h
            more, wmore = self._integrand(mids, y, lo)
            acc, wsum = acc + more, wsum + wmore
            u = np.sort(np.concatenate([u, mids]))
            h *= 0.5
            cur = acc * h
            # relative tolerance, with an absolute floor at the profile noise level
            floor = 1e-3 * wsum * h * z1max
            if np.max(np.abs(cur - prev)) <= self.tol * max(np.max(np.abs(cur)), floor):
                return cur
            prev = cur
        raise EvaluationError("subordination quadrature did not converge under refinement")


def subordination_profile(op, alpha, kind, beta=None) -> SubordinationProfile:
    b = _as_beta(beta, op.n)
    return _cached(("sub", op.key, float(as_alpha(alpha)), kind, b.components),
                   lambda: SubordinationProfile(op, alpha, kind, b))


# ------------------------------------------------------------ Fourier profile


def _tail_integrals(y: np.ndarray, X: float, pmax: int):
    """C_p = int_X^inf cos(y e) e^-p de and S_p (sin), p = 0..pmax, Abel sense at p = 0.

    Upward recursion from the sine/cosine integrals is used while yX is small
    compared with p; otherwise the path is rotated to X + i v / y and the
    resulting Laplace integral is done by Gauss-Laguerre.
    """
    P = y.size
    C = np.zeros((pmax + 1, P))
    S = np.zeros((pmax + 1, P))
    ay = np.abs(y)
    sgn = np.sign(y)
    nz = ay > 0
    z = ay[nz]
    if z.size:
        c, s = np.cos(z * X), np.sin(z * X)
        C[0, nz] = -s / z
        S[0, nz] = c / z
        si, ci = sici(z * X)
        if pmax >= 1:
            C[1, nz] = -ci
            S[1, nz] = np.pi / 2.0 - si
        for p in range(1, pmax):
            C[p + 1, nz] = (X ** (-p) * c - z * S[p, nz]) / p
            S[p + 1, nz] = (X ** (-p) * s + z * C[p, nz]) / p
        v, w = _LAGUERRE
        zX = z * X
        for p in range(2, pmax + 1):
            far = zX >= max(6.0, 0.45 * p)
            if far.any():
                zf = z[far]
                g = (X + 1j * v[None, :] / zf[:, None]) ** (-p)
                T = 1j / zf * np.exp(1j * zf * X) * (g @ w)
                idx = np.nonzero(nz)[0][far]
                C[p, idx] = T.real
                S[p, idx] = T.imag
        S[:, nz] *= sgn[nz]
    if (~nz).any():
        for p in range(2, pmax + 1):
            C[p, ~nz] = X ** (1.0 - p) / (p - 1.0)
        C[0, ~nz] = np.nan
        C[1, ~nz] = np.nan
    return C, S


def _ml_of_multiples(alpha: float, family: str, a: np.ndarray, scale: np.ndarray, contour) -> np.ndarray:
    """E(scale_j a) for a stack of scalar multiples of one matrix.

    With a well-conditioned eigenbasis a = V diag(lam) V^-1 this is V diag(E(scale lam)) V^-1
    from scalar evaluations; otherwise the resolvent contour is used node by node.
    """
    lam, V = np.linalg.eig(a)
    if contour is None and np.linalg.cond(V) <= _EIG_COND_MAX:
        Vi = np.linalg.inv(V)
        e = mittag_leffler_scalar(alpha, family, scale[:, None] * lam[None, :])
        return np.einsum("ik,jk,kl->jil", V, e, Vi)
    E, _ = ml_contour(alpha, family, scale[:, None, None] * a, contour)
    return E


def _fourier_setup(op: ConstantOperator, alpha: float, kind: str, contour, x_tail: float,
                   terms: int, width: float):
    """Gauss-Legendre frequency nodes with E(A0(eta)) and the large-eta expansion of E."""
    if op.n != 1:
        raise ConfigurationError("the Fourier route is implemented for n = 1")
    if kind not in _KIND_TABLE:
        raise ConfigurationError(f"unknown kernel kind {kind!r}")
    family = _KIND_TABLE[kind][2]
    fam_beta = {"1": 1.0, "alpha": alpha, "0": 0.0}[family]
    delta = require_parabolic(op)
    b, N = op.b, op.N
    X = (x_tail / delta) ** (1.0 / (2 * b))
    eta, w = _gl_panels(0.0, X, width)
    B = symbol_eval(op, eta[:, None])
    a = op.coeffs[MultiIndex((2 * b,))]
    if N == 1:
        E = mittag_leffler_scalar(alpha, family, B[:, 0, 0])[:, None, None]
    else:
        E = _ml_of_multiples(alpha, family, a, eta ** (2 * b), contour)
    # E(A) ~ -sum_k A^-k / Gamma(fam_beta - alpha k), A = a eta^2b
    ainv = np.linalg.inv(a)
    series = []
    pw = np.eye(N, dtype=complex)
    for k in range(1, terms + 1):
        pw = pw @ ainv
        c = -rgamma(fam_beta - alpha * k)
        if c != 0.0:
            series.append((2 * b * k, c * pw))
    return X, eta, w, E, series


class FourierProfile:
    """F(y) = (1/2 pi) int e^{i y eta} eta^beta E(a eta^2b) d eta for n = 1."""

    def __init__(self, op: ConstantOperator, alpha: float, kind: str, beta=None,
                 contour: HankelContour | None = None, x_tail: float = 2000.0, terms: int = 4,
                 width: float = 0.2):
        self.op, self.alpha, self.kind = op, as_alpha(alpha), kind
        self.beta = _as_beta(beta, 1)
        bb = self.beta.order
        self.X, eta, w, E, series = _fourier_setup(op, self.alpha, kind, contour, x_tail, terms, width)
        self.width = width
        self._eta = eta
        self._fw = (eta**bb)[:, None, None] * E * (w / np.pi)[:, None, None]
        self._tail = [(q - bb, m / np.pi) for q, m in series]
        self.pmax = max([p for p, _ in self._tail] + [1])

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1)
        odd = self.beta.order % 2 == 1
        N = self.op.N
        if np.max(np.abs(y), initial=0.0) * self.width > 3.0:
            raise EvaluationError("Fourier quadrature does not resolve such large |y|")
        fw = self._fw.reshape(self._fw.shape[0], -1)
        phase = y[:, None] * self._eta[None, :]
        head = (np.sin(phase) @ fw) if odd else (np.cos(phase) @ fw)
        C, S = _tail_integrals(y, self.X, self.pmax)
        tail = np.zeros((y.size, N * N), dtype=complex)
        for p, m in self._tail:
            I = S[p] if odd else C[p]
            tail += I[:, None] * m.reshape(1, -1)
        if np.any(np.isnan(tail)):
            raise SingularPointError("Fourier profile is singular at y = 0 for this order")
        out = (head + tail).reshape(-1, N, N)
        return 1j * out if odd else out


class PrimitiveProfile:
    """Antiderivatives of the beta = 0 profile F for n = 1.

    order 1: I1(y) = int_0^y F = (1/pi) int_0^inf sin(y eta)/eta E d eta,
    order 2: I2(y) = int_0^y I1 = (1/pi) int_0^inf (1 - cos(y eta))/eta^2 E d eta.
    The second differences of I2 give exact double cell averages of the kernel.
    """

    def __init__(self, op: ConstantOperator, alpha: float, kind: str, order: int = 2,
                 contour: HankelContour | None = None, x_tail: float = 2000.0, terms: int = 4,
                 width: float = 0.2):
        if order not in (1, 2):
            raise ConfigurationError("primitive order must be 1 or 2")
        self.op, self.alpha, self.kind, self.order = op, as_alpha(alpha), kind, order
        self.X, eta, w, E, series = _fourier_setup(op, self.alpha, kind, contour, x_tail, terms, width)
        self.width = width
        self._eta = eta
        self._fw = (eta ** (-order))[:, None, None] * E * (w / np.pi)[:, None, None]
        self._tail = [(q + order, m / np.pi) for q, m in series]
        self.pmax = max(p for p, _ in self._tail) if self._tail else 2

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1)
        N = self.op.N
        if np.max(np.abs(y), initial=0.0) * self.width > 3.0:
            raise EvaluationError("Fourier quadrature does not resolve such large |y|")
        fw = self._fw.reshape(self._fw.shape[0], -1)
        phase = y[:, None] * self._eta[None, :]
        C, S = _tail_integrals(y, self.X, self.pmax)
        tail = np.zeros((y.size, N * N), dtype=complex)
        if self.order == 1:
            head = np.sin(phase) @ fw
            for p, m in self._tail:
                tail += S[p][:, None] * m.reshape(1, -1)
        else:
            head = (1.0 - np.cos(phase)) @ fw
            for p, m in self._tail:
                I = self.X ** (1.0 - p) / (p - 1.0) - C[p]
                tail += I[:, None] * m.reshape(1, -1)
        return (head + tail).reshape(-1, N, N)


def primitive_profile(op, alpha, kind, order: int = 2, width: float = 0.2) -> PrimitiveProfile:
    return _cached(("primitive", op.key, float(as_alpha(alpha)), kind, order, width),
                   lambda: PrimitiveProfile(op, alpha, kind, order, width=width))


def fourier_profile(op, alpha, kind, beta=None, contour=None, width: float = 0.2) -> FourierProfile:
    b = _as_beta(beta, op.n)
    return _cached(("fourier", op.key, float(as_alpha(alpha)), kind, b.components, contour, width),
                   lambda: FourierProfile(op, alpha, kind, b, contour, width=width))


# --------------------------------------------------------------- kernel fields


def kernel_exponent(kind: str, alpha: float, n: int, b: int, order: int) -> float:
    """Power of t multiplying the profile: p - alpha (n + |beta|) / 2b."""
    return _KIND_TABLE[kind][0](alpha) - alpha * (n + order) / (2.0 * b)


def kernel_field(op: ConstantOperator, alpha, kind: str, times, grid_or_points,
                 route: str = "subordination", beta=None, contour=None,
                 width: float | None = None) -> KernelField:
    """Sample a fractional kernel (or its x-derivative D^beta) at the given times and points.

    For the Fourier route the panel width defaults to the largest value that
    resolves the largest similarity variable |x| t^{-alpha/2b} in the sample.
    """
    alpha = as_alpha(alpha)
    if kind not in _KIND_TABLE:
        raise ConfigurationError(f"unknown kernel kind {kind!r}")
    pts, grid = _as_points(grid_or_points, op.n)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times <= 0):
        raise PreconditionError("kernels need t > 0")
    bidx = _as_beta(beta, op.n)
    if route == "subordination":
        prof = subordination_profile(op, alpha, kind, bidx)
    elif route == "fourier":
        if width is None:
            ymax = np.max(np.abs(pts), initial=0.0) * times.min() ** (-alpha / (2.0 * op.b))
            # dyadic widths keep the profile cache small
            width = 0.2
            while ymax * width > 2.9:
                width *= 0.5
        prof = fourier_profile(op, alpha, kind, bidx, contour, width)
    else:
        raise ConfigurationError(f"unknown route {route!r}")
    expo = kernel_exponent(kind, alpha, op.n, op.b, bidx.order)
    vals = np.empty((times.size, pts.shape[0], op.N, op.N), dtype=complex)
    for i, t in enumerate(times):
        y = pts * t ** (-alpha / (2.0 * op.b))
        vals[i] = t**expo * prof(y)
    return KernelField(kind, times, pts, vals, grid, bidx.components,
                       {"route": route, "alpha": alpha})


def fractional_fscp_subordination(op, alpha, t, grid, beta=None) -> KernelField:
    return kernel_field(op, alpha, "Z_alpha", t, grid, "subordination", beta)


def fractional_fscp_fourier(op, alpha, t, grid, contour: HankelContour | None = None,
                            beta=None) -> KernelField:
    return kernel_field(op, alpha, "Z_alpha", t, grid, "fourier", beta, contour)


def y_kernel(op, alpha, t, grid, route: str = "subordination", beta=None,
             contour: HankelContour | None = None) -> KernelField:
    return kernel_field(op, alpha, "Y_alpha", t, grid, route, beta, contour)


def dt_z_kernel(op, alpha, t, grid, route: str = "subordination", beta=None,
                contour: HankelContour | None = None) -> KernelField:
    return kernel_field(op, alpha, "dtZ_alpha", t, grid, route, beta, contour)


def profile_extent(prof, start: float, floor: float = 1e-14) -> float:
    """Radius beyond which |F(y)| stays below floor * |F| max (doubling search)."""
    y = start
    for _ in range(12):
        probe = np.linspace(0.05 * y, y, 64)
        vals = np.max(np.abs(prof(probe)), axis=(1, 2))
        if vals[-8:].max() <= floor * vals.max():
            return y
        y *= 1.5
    raise EvaluationError("kernel profile does not decay on the search window")


def spatial_integral(op: ConstantOperator, alpha, kind: str, t: float,
                     route: str = "subordination", panels: int = 48) -> np.ndarray:
    """int K(t, x) dx for n = 1 by Gauss-Legendre panels split at the x = 0 cusp."""
    if op.n != 1:
        raise ConfigurationError("spatial_integral is implemented for n = 1")
    alpha = as_alpha(alpha)
    sub = subordination_profile(op, alpha, kind)
    ymax = profile_extent(sub, classical_profile(op).y_cut)
    if route == "subordination":
        prof = sub
    elif route == "fourier":
        prof = fourier_profile(op, alpha, kind, width=min(0.2, 2.5 / ymax))
    else:
        raise ConfigurationError(f"unknown route {route!r}")
    # int t^e F(x t^{-alpha/2b}) dx = t^{e + alpha/2b} int F(y) dy
    edges = np.concatenate([[0.0], np.geomspace(1e-3, ymax, panels)])
    x, w = leggauss(24)
    tot = np.zeros((op.N, op.N), dtype=complex)
    for lo, hi in zip(edges[:-1], edges[1:]):
        yy = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        ww = 0.5 * (hi - lo) * w
        vals = prof(np.concatenate([yy, -yy]))
        tot += np.einsum("p,pij->ij", np.concatenate([ww, ww]), vals)
    expo = kernel_exponent(kind, alpha, 1, op.b, 0) + alpha / (2.0 * op.b)
    return t**expo * tot


# --------------------------------------------------------------- elliptic Green


def elliptic_green(op_frozen: ConstantOperator, x, y_label=None, tol: float = 1e-11) -> np.ndarray:
    """G(x) = int_0^inf e^-t Z(t, x) dt for the frozen operator, x != 0."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != op_frozen.n:
        raise ConfigurationError("x has the wrong dimension")
    r = float(np.linalg.norm(x))
    if r == 0.0:
        raise SingularPointError("elliptic Green matrix is singular at x = 0")
    z1 = classical_profile(op_frozen)
    n, b = op_frozen.n, op_frozen.b
    q = n / (2.0 * b)
    u_lo = 2 * b * np.log(r / z1.y_cut)
    u_hi = np.log(60.0)

    def nodes(u):
        tt = np.exp(u)
        vals = z1(x[None, :] * tt[:, None] ** (-1.0 / (2 * b)))
        return np.einsum("j,jkl->kl", np.exp(-tt) * tt ** (1.0 - q), vals)

    h = 0.2
    u = np.arange(u_lo, u_hi + h, h)
    acc = nodes(u)
    prev = acc * h
    for _ in range(8):
        mids = u[:-1] + 0.5 * h
        acc = acc + nodes(mids)
        u = np.sort(np.concatenate([u, mids]))
        h *= 0.5
        cur = acc * h
        if np.max(np.abs(cur - prev)) <= tol * max(np.max(np.abs(cur)), 1e-300):
            return cur
        prev = cur
    raise EvaluationError("elliptic Green quadrature did not converge")
