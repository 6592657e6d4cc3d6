"""Levi (parametrix) construction of the Green matrix for variable coefficients, n = 1.

The parametrix Z0(t, x - xi; xi), Y0(t, x - xi; xi) is the constant-coefficient
kernel with the principal coefficients frozen at xi.  The corrections solve

    Q   = M + int_0^t int K(t - l, x; y) Q(l, y; xi) dy dl,
    Phi = K + int_0^t int K(t - l, x; y) Phi(l, y; xi) dy dl,

with M = [A(x, D) - A0(xi, D)] Z0 and K = [A(x, D) - A0(xi, D)] Y0, and the Green
matrix is Z1 = Z0 + int int Y0 Q, Y1 = Y0 + int int Y0 Phi.

Discretization:
* space: cells of width h.  Densities are double cell averages (over an x cell
  and a xi cell) on offsets |x - xi| <= P h around each xi cell.  The double
  average of D^m K is an exact second difference of the primitive of order
  2 - m of the kernel (profile primitives for m < 2, derivative profiles for
  m >= 2), with the frozen parameter read at the cell centre;
* time: uniform nodes t_k = k dt.  Densities are piecewise linear in time and
  constant on (0, dt].  They are integrated against the kernels by product
  integration, with Gauss-Jacobi nodes on the weakly singular lag interval
  next to the diagonal;
* iteration: successive substitution marched in time.  At each node the
  history is fixed and only the diagonal lag term is iterated.

Systems that declare a coefficient period reuse one period of frozen
parameters.  Scalar multiples c(y) A_ref of a reference principal part share
one tabulated profile through K_c(t, x) = c^{-1/2b} K_ref(t, x c^{-1/2b}).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline
from scipy.special import roots_jacobi

from .errors import (
    ConfigurationError,
    DivergenceError,
    EvaluationError,
    SingularPointError,
)
from .kernels import FourierProfile, KernelField, PrimitiveProfile, kernel_exponent, kernel_field
from .operators import ConstantOperator, MultiIndex, VariableSystem, freeze
from .specfun import as_alpha

_TABLE_WIDTH = 0.1
_TABLE_STEP = 0.01
_TABLE_FLOOR = 1e-14


# -------------------------------------------------------------- profile tables


class _ProfileTable:
    """Spline of a profile (or primitive) of order q on [0, y_ext] with its far-field form."""

    def __init__(self, ys: np.ndarray, vals: np.ndarray, q: int):
        self.q = q
        self.y_ext = float(ys[-1])
        self.parity = 0 if q == -2 else (1 if q == -1 else q % 2)
        shape = vals.shape[1:]
        self.shape = shape
        flat = vals.reshape(len(ys), -1)
        self._spline = CubicSpline(ys, np.concatenate([flat.real, flat.imag], axis=1), axis=0)
        self._ys = ys
        self._mag = np.max(np.abs(flat), axis=1)
        self._end = flat[-1]
        self._slope = self._spline(self.y_ext, 1)  # only used for q = -2

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        ay = np.abs(y).ravel()
        k = self._end.size
        out = np.zeros((ay.size, k), dtype=complex)
        inside = ay <= self.y_ext
        if inside.any():
            v = self._spline(ay[inside])
            out[inside] = v[:, :k] + 1j * v[:, k:]
        far = ~inside
        if far.any():
            if self.q == -2:
                slope = self._slope[:k] + 1j * self._slope[k:]
                out[far] = self._end[None, :] + (ay[far] - self.y_ext)[:, None] * slope[None, :]
            elif self.q == -1:
                out[far] = self._end[None, :]
        if self.parity:
            out *= np.sign(y).ravel()[:, None]
        return out.reshape(y.shape + self.shape)

    def extent(self, floor: float) -> float:
        """Smallest y beyond which the tabulated magnitude stays below floor * max."""
        above = np.nonzero(self._mag > floor * self._mag.max())[0]
        return float(self._ys[min(above[-1] + 1, len(self._ys) - 1)])


def _sample_profile(op: ConstantOperator, alpha: float, kind: str, q: int, ys: np.ndarray):
    if q >= 0:
        prof = FourierProfile(op, alpha, kind, MultiIndex((q,)), width=_TABLE_WIDTH)
    else:
        prof = PrimitiveProfile(op, alpha, kind, -q, width=_TABLE_WIDTH)
    return prof(ys)


class ParametrixProvider:
    """Frozen-coefficient kernels Z0(t, z; y), Y0(t, z; y) of a 1-D variable system."""

    def __init__(self, system: VariableSystem, alpha):
        if isinstance(system, ConstantOperator):
            system = VariableSystem.from_constant(system)
        if system.n != 1:
            raise ConfigurationError("the Levi construction is implemented for n = 1")
        self.system = system
        self.alpha = as_alpha(alpha)
        self.b = system.b
        self.N = system.N
        self._ops: dict = {}
        self._fields: dict = {}
        self._tables: dict = {}
        self._ref = None  # (y_ref, A_ref)

    # -- frozen operators and exact fields

    def frozen(self, y: float) -> ConstantOperator:
        key = float(y)
        if key not in self._ops:
            self._ops[key] = freeze(self.system, np.array([key]))
        return self._ops[key]

    def field(self, kind: str, y: float, t, points, beta: int = 0) -> KernelField:
        """kernels.kernel_field of the operator frozen at y (Fourier route), cached."""
        pts = np.asarray(points, dtype=float).reshape(-1, 1)
        key = (kind, float(y), tuple(np.atleast_1d(np.asarray(t, dtype=float))), pts.tobytes(), beta)
        if key not in self._fields:
            self._fields[key] = kernel_field(self.frozen(y), self.alpha, kind, t, pts, "fourier",
                                             MultiIndex((beta,)))
        return self._fields[key]

    def kernel(self, kind: str, t: float, z, y: float, beta: int = 0) -> np.ndarray:
        return self.field(kind, y, [t], z, beta).values[0]

    # -- tabulated profiles with scalar rescaling

    def principal_at(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        mu = MultiIndex((2 * self.b,))
        return self.system.coefficient_samples(y[:, None], "principal")[mu]

    def _scale_of(self, y: float):
        """(reference key, s) with A0(y) = s^{2b} A0(ref), or (y, 1) if no such scalar s."""
        A = self.principal_at(y)[0]
        if self._ref is None:
            self._ref = (float(y), A)
            return float(y), 1.0
        y0, A0 = self._ref
        c = np.vdot(A0, A) / np.vdot(A0, A0)
        if abs(c.imag) <= 1e-14 * abs(c) and c.real > 0 and \
                np.linalg.norm(A - c.real * A0) <= 1e-13 * np.linalg.norm(A):
            return y0, float(c.real) ** (1.0 / (2 * self.b))
        return float(y), 1.0

    def table(self, kind: str, q: int, y: float):
        """(table, s): profile of order q at parameter y is s^{-(1+q)} table(Y / s)."""
        ref, s = self._scale_of(y)
        key = (kind, q, ref)
        if key not in self._tables:
            op = self.frozen(ref)
            base = (kind, 0, ref)
            if base not in self._tables:
                ys = np.arange(0.0, 2.9 / _TABLE_WIDTH + 0.5 * _TABLE_STEP, _TABLE_STEP)
                v0 = _sample_profile(op, self.alpha, kind, 0, ys)
                mag = np.max(np.abs(v0.reshape(len(ys), -1)), axis=1)
                above = np.nonzero(mag > _TABLE_FLOOR * mag.max())[0]
                last = above[-1] + 1
                if last >= len(ys) - 10:
                    raise EvaluationError("kernel profile does not decay within the table range")
                self._tables[base] = _ProfileTable(ys[:last + 1], v0[:last + 1], 0)
            if q != 0:
                ys = np.arange(0.0, self._tables[base].y_ext + 0.5 * _TABLE_STEP, _TABLE_STEP)
                self._tables[key] = _ProfileTable(ys, _sample_profile(op, self.alpha, kind, q, ys), q)
        return self._tables[key], s

    def extent(self, kind: str, y: float, floor: float = _TABLE_FLOOR) -> float:
        """Similarity radius beyond which the kernel profile at parameter y is below floor * max."""
        tab, s = self.table(kind, 0, y)
        return tab.extent(floor) * s

    def point_kernel(self, kind: str, t: float, z, y: float) -> np.ndarray:
        """K(t, z; y) from the tabulated profile, shape (len(z), N, N)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        a = self.alpha / (2.0 * self.b)
        tab, s = self.table(kind, 0, y)
        return t ** kernel_exponent(kind, self.alpha, 1, self.b, 0) / s * tab(z * t ** (-a) / s)

    def cell_kernel(self, kind: str, m: int, tau, offsets, y: float, h: float) -> np.ndarray:
        """Double cell average of D^m K(tau, .; y) at cell offsets c = offsets * h.

        Returns shape (len(tau), len(offsets), N, N).
        """
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        offsets = np.asarray(offsets)
        a = self.alpha / (2.0 * self.b)
        e = kernel_exponent(kind, self.alpha, 1, self.b, 0)
        q = m - 2
        tab, s = self.table(kind, q, y)
        lo, hi = offsets.min() - 1, offsets.max() + 1
        z = np.arange(lo, hi + 1) * h
        Y = z[None, :] * tau[:, None] ** (-a)
        vals = s ** (-(1.0 + q)) * tab(Y / s)
        if q == -2:
            pw = e + 2 * a
        elif q == -1:
            pw = e + a
        else:
            pw = e - q * a
            vals = vals / (-1j) ** q
        vals = vals * (tau ** pw)[:, None, None, None]
        dd = vals[:, 2:] - 2.0 * vals[:, 1:-1] + vals[:, :-2]
        idx = offsets - lo - 1
        return ((-1j) ** m / h**2) * dd[:, idx]


# ----------------------------------------------------------------- grids


@dataclass(frozen=True)
class LeviGrid:
    """Cells of width h at centres x = i h, densities on offsets |i - j| <= window, nodes t_k = k T / steps."""

    spacing: float
    xi_cells: tuple
    T: float
    steps: int
    window: int | None = None
    period_cells: int | None = None

    def __post_init__(self):
        if not self.spacing > 0 or not self.T > 0 or self.steps < 1:
            raise ConfigurationError("Levi grid needs positive spacing, horizon and step count")
        object.__setattr__(self, "xi_cells", tuple(int(c) for c in self.xi_cells))

    @classmethod
    def periodic(cls, period: float, cells: int, T: float, steps: int, window: int | None = None):
        return cls(period / cells, tuple(range(cells)), T, steps, window, cells)

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.steps + 1)

    @property
    def xi(self) -> np.ndarray:
        return self.spacing * np.asarray(self.xi_cells, dtype=float)

    def with_window(self, window: int) -> "LeviGrid":
        return LeviGrid(self.spacing, self.xi_cells, self.T, self.steps, window, self.period_cells)

    def refined_time(self) -> "LeviGrid":
        return LeviGrid(self.spacing, self.xi_cells, self.T, 2 * self.steps, self.window, self.period_cells)

    def to_dict(self) -> dict:
        return {"spacing": self.spacing, "cells": len(self.xi_cells), "T": self.T, "steps": self.steps,
                "window": self.window, "period_cells": self.period_cells}


def _lag_rule(dt: float, pieces: int, exponent: float, first: float = 1.0, n_gl: int = 8, n_jac: int = 12):
    """Quadrature on tau pieces [0, first dt], [first dt, (first+1) dt], ...

    Returns nodes, weights, piece index and local coordinate s in [0, 1].  The
    first piece carries Gauss-Jacobi nodes for a tau^exponent endpoint law.
    """
    xj, wj = roots_jacobi(n_jac, 0.0, exponent)
    L = first * dt
    tj = 0.5 * L * (1.0 + xj)
    wj = wj * (0.5 * L) ** (1.0 + exponent) * tj ** (-exponent)
    xg, wg = leggauss(n_gl)
    nodes, weights, piece, local = [tj], [wj], [np.zeros(n_jac, int)], [tj / L]
    for i in range(1, pieces):
        a0 = L + (i - 1) * dt
        t = a0 + 0.5 * dt * (1.0 + xg)
        nodes.append(t)
        weights.append(0.5 * dt * wg)
        piece.append(np.full(n_gl, i))
        local.append((t - a0) / dt)
    return (np.concatenate(nodes), np.concatenate(weights), np.concatenate(piece), np.concatenate(local))


# ------------------------------------------------------------ the discrete problem


@dataclass
class VolterraDensity:
    kind: str
    samples: np.ndarray  # (steps, offsets, cells, N, N) double cell averages at t_1..t_K
    grid: LeviGrid
    iteration_count: int
    residual: float
    update_history: list = field(default_factory=list)
    truncation: float = 0.0  # max |density| on the outermost offsets relative to max |density|

    @property
    def offsets(self) -> np.ndarray:
        P = self.grid.window
        return np.arange(-P, P + 1)


class LeviDiscretization:
    """Kernel weight tables for one provider and grid."""

    def __init__(self, provider: ParametrixProvider, grid: LeviGrid, truncation: float = 1e-10):
        self.provider = provider
        sys = provider.system
        self.b, self.N = sys.b, sys.N
        h = grid.spacing
        if grid.period_cells is None and sys.period is not None:
            pass
        if grid.period_cells is not None and sys.period is not None:
            if abs(grid.period_cells * h - sys.period) > 1e-9 * sys.period:
                raise ConfigurationError("grid period does not match the system period")
        if grid.period_cells is not None and sys.period is None and not sys.is_constant(
                np.linspace(-10, 10, 41)[:, None]):
            raise ConfigurationError("a periodic Levi grid needs a system with a declared period")
        if grid.window is None:
            ys = grid.xi
            W = max(provider.extent(k, y, truncation) for k in ("Z_alpha", "Y_alpha") for y in ys)
            W *= grid.T ** (provider.alpha / (2.0 * self.b))
            grid = grid.with_window(int(np.ceil(W / h)) + 1)
        self.grid = grid
        self.h = h
        P = grid.window
        self.P = P
        self.off = np.arange(-P, P + 1)
        self.off2 = np.arange(-2 * P, 2 * P + 1)
        cells = np.asarray(grid.xi_cells)
        if grid.period_cells is not None:
            self.params = np.arange(grid.period_cells)
            self.pindex = lambda c: np.mod(c, grid.period_cells)
        else:
            lo, hi = cells.min() - 2 * P, cells.max() + 2 * P
            self.params = np.arange(lo, hi + 1)
            self.pindex = lambda c: np.asarray(c) - lo
        self.py = self.params * h
        # coefficient tables at parameter cells: principal and lower orders
        mu = MultiIndex((2 * self.b,))
        self.orders = [2 * self.b] + sorted(m.components[0] for m in sys.lower)
        pts = self.py[:, None]
        self.coef = {2 * self.b: sys.coefficient_samples(pts, "principal")[mu]}
        low = sys.coefficient_samples(pts, "lower")
        for m_idx, v in low.items():
            self.coef[m_idx.components[0]] = v
        self.constant = sys.is_constant(np.concatenate([pts, pts + 0.37 * h]))
        self._lag = {}

    # -- kernels on lag nodes

    def _exponent(self, kind: str, m: int) -> float:
        al, b = self.provider.alpha, self.b
        a = al / (2.0 * b)
        e = kernel_exponent(kind, al, 1, b, 0)
        return e + a - max(m - 1, 0) * a

    def _kernel_nodes(self, kind: str, orders, tau, offsets):
        """{m: (len(tau), len(offsets), params, N, N)} double averages of D^m K."""
        out = {}
        for m in orders:
            arr = np.empty((len(tau), len(offsets), len(self.params), self.N, self.N), dtype=complex)
            for p, y in enumerate(self.py):
                arr[:, :, p] = self.provider.cell_kernel(kind, m, tau, offsets, y, self.h)
            out[m] = arr
        return out

    def lag_weights(self, kind: str, orders, first: float = 1.0):
        """Product-integration weights for hats in lambda, {m: (Wnear, Wfar)}.

        Wnear[i] multiplies the density at the node of piece i nearer to the
        evaluation time, Wfar[i] the one farther away.  Both include h.
        """
        key = (kind, tuple(orders), first)
        if key in self._lag:
            return self._lag[key]
        K, dt = self.grid.steps, self.grid.dt
        expo = min(self._exponent(kind, m) for m in orders)
        tau, w, piece, s = _lag_rule(dt, K, expo, first)
        vals = self._kernel_nodes(kind, orders, tau, self.off2)
        out = {}
        # s is the position inside the piece measured from the near end; the near
        # hat falls from 1 to 0 across a full piece, the first (possibly partial)
        # piece starts at the offset 1 - first of a full hat
        near_hat = np.where(piece == 0, 1.0 - (1.0 - first) - first * s, 1.0 - s)
        far_hat = 1.0 - near_hat
        for m, v in vals.items():
            Wn = np.zeros((K,) + v.shape[1:], dtype=complex)
            Wf = np.zeros_like(Wn)
            np.add.at(Wn, piece, (w * near_hat)[:, None, None, None, None] * v)
            np.add.at(Wf, piece, (w * far_hat)[:, None, None, None, None] * v)
            out[m] = (self.h * Wn, self.h * Wf)
        self._lag[key] = out
        return out

    def node_kernel(self, kind: str, m: int, times, offsets=None, cells=None) -> np.ndarray:
        """Double averages of D^m K(t, offset h; xi_j) with parameter at each xi cell, (T, O, J, N, N)."""
        offsets = self.off if offsets is None else offsets
        cells = np.asarray(self.grid.xi_cells) if cells is None else cells
        out = np.empty((len(times), len(offsets), len(cells), self.N, self.N), dtype=complex)
        for j, c in enumerate(cells):
            out[:, :, j] = self.provider.cell_kernel(kind, m, times, offsets, c * self.h, self.h)
        return out

    # -- operator pieces

    def coefficient(self, m: int, cells) -> np.ndarray:
        return self.coef[m][self.pindex(cells)]

    def inhomogeneity(self, kind: str, times=None) -> np.ndarray:
        """M (kind Z_alpha) or K (kind Y_alpha) as double averages, (T, O, J, N, N)."""
        times = self.grid.times if times is None else times
        cells = np.asarray(self.grid.xi_cells)
        out = np.zeros((len(times), len(self.off), len(cells), self.N, self.N), dtype=complex)
        if self.constant and len(self.orders) == 1:
            return out
        xcells = cells[None, :] + self.off[:, None]
        for m in self.orders:
            kern = self.node_kernel(kind, m, times)
            ax = self.coefficient(m, xcells)  # (O, J, N, N)
            if m == 2 * self.b:
                ax = ax - self.coefficient(m, cells)[None]
            out += np.einsum("ojab,tojbc->tojac", ax, kern)
        return out

    def kernel_blocks(self, j: int, weights) -> list:
        """Dense (O N x O N) lag blocks of [A(x) - A0(y)] weights for xi cell j, near and far parts."""
        c = self.grid.xi_cells[j]
        O, N = len(self.off), self.N
        ci = self.off[:, None] - self.off[None, :] + 2 * self.P
        ycell = c + self.off
        pi = np.broadcast_to(self.pindex(ycell)[None, :], ci.shape)
        ax = {m: self.coefficient(m, c + self.off) for m in self.orders}
        ay = self.coefficient(2 * self.b, ycell)
        blocks = []
        for part in (0, 1):
            tot = None
            for m in self.orders:
                W = weights[m][part]  # (K, 4P+1, params, N, N)
                G = W[:, ci, pi]  # (K, O, O, N, N)
                G = np.einsum("xab,kxybc->kxyac", ax[m], G)
                if m == 2 * self.b:
                    G = G - np.einsum("kxyab,ybc->kxyac", W[:, ci, pi], ay)
                tot = G if tot is None else tot + G
            blocks.append(_deconvolve_columns(tot.transpose(0, 1, 3, 2, 4).reshape(len(tot), O * N, O * N), N))
        return blocks

    @staticmethod
    def _lag_sum(near, far, D: np.ndarray, out: np.ndarray, K: int, first: int) -> None:
        # piece i serves the outputs m = i+1..K with near node m-i and far node m-i-1
        ON, N = D.shape[1], D.shape[2]
        for i in range(first, K):
            cnt = K - i
            Dn = D[1:cnt + 1].transpose(1, 0, 2).reshape(ON, cnt * N)
            Df = D[0:cnt].transpose(1, 0, 2).reshape(ON, cnt * N)
            acc = near[i] @ Dn + far[i] @ Df
            out[i:] += acc.reshape(ON, cnt, N).transpose(1, 0, 2)

    def convolve(self, blocks, density: np.ndarray) -> np.ndarray:
        """int_0^t int kernel(t - l) density(l) for one xi column, density (K, O N, N) at t_1..t_K."""
        near, far = blocks
        K = density.shape[0]
        D = np.concatenate([density[:1], density], axis=0)  # D_0 := D_1
        out = np.zeros_like(density)
        self._lag_sum(near, far, D, out, K, 0)
        return out

    def convolve_shifted(self, blocks, density: np.ndarray) -> np.ndarray:
        """The same integral at t_{m - 1/2}, m = 1..K, with blocks from first = 1/2 weights.

        Piece 0 is then [t_{m-1}, t_{m-1/2}], the later pieces are full intervals.
        """
        return self.convolve(blocks, density)


def _deconvolve_columns(B: np.ndarray, N: int) -> np.ndarray:
    """B @ (I - Delta^2 / 24) over the y offsets (column blocks of width N).

    Both factors of int K(x, y) Q(y, xi) dy are averaged over the y cell; the
    deconvolution removes the resulting O(h^2) smoothing.
    """
    out = B * (1.0 + 2.0 / 24.0)
    out[..., :-N] -= B[..., N:] / 24.0
    out[..., N:] -= B[..., :-N] / 24.0
    return out


def _as_columns(arr: np.ndarray, j: int) -> np.ndarray:
    """(K, O, J, N, N) -> (K, O N, N) for xi cell j."""
    K, O, _, N, _ = arr.shape
    return arr[:, :, j].reshape(K, O * N, N)


def _from_columns(col: np.ndarray, O: int, N: int) -> np.ndarray:
    return col.reshape(col.shape[0], O, N, N)


# -------------------------------------------------------------------- operations


def levi_inhomogeneity(provider: ParametrixProvider, kind: str, t: float, x: float, xi: float) -> np.ndarray:
    """Pointwise M (kind 'M') or K (kind 'K') at (t, x; xi), x != xi."""
    if kind not in ("M", "K"):
        raise ConfigurationError("inhomogeneity kind must be 'M' or 'K'")
    if x == xi:
        raise SingularPointError("the Levi inhomogeneity is singular at x = xi")
    base = "Z_alpha" if kind == "M" else "Y_alpha"
    sys = provider.system
    b = sys.b
    z = np.array([x - xi])
    mu = MultiIndex((2 * b,))
    ax = sys.coefficient_samples(np.array([[x]]), "principal")[mu][0]
    axi = sys.coefficient_samples(np.array([[xi]]), "principal")[mu][0]
    out = (ax - axi) @ provider.kernel(base, t, z, xi, 2 * b)[0]
    for m_idx, v in sys.coefficient_samples(np.array([[x]]), "lower").items():
        out = out + v[0] @ provider.kernel(base, t, z, xi, m_idx.components[0])[0]
    return out


def solve_volterra(kind: str, provider: ParametrixProvider, grid: LeviGrid, tol: float = 1e-8,
                   max_iter: int = 200, disc: LeviDiscretization | None = None) -> VolterraDensity:
    """Successive substitution for Q (kind 'Q') or Phi (kind 'Phi') on the Levi grid.

    The scheme is causal, so the substitution runs node by node: at t_m the
    history is fixed and only the diagonal lag term is iterated.  Each node
    stops when the sup-norm update is below tol * max(1, sup |inhomogeneity|);
    three consecutive growing updates raise DivergenceError.
    """
    if kind not in ("Q", "Phi"):
        raise ConfigurationError("density kind must be 'Q' or 'Phi'")
    disc = LeviDiscretization(provider, grid) if disc is None else disc
    g = disc.grid
    rhs = disc.inhomogeneity("Z_alpha" if kind == "Q" else "Y_alpha")
    scale = max(1.0, float(np.max(np.abs(rhs))))
    J = len(g.xi_cells)
    O, N = len(disc.off), disc.N
    K = g.steps
    if not np.any(rhs):
        return VolterraDensity(kind, rhs, g, 1, 0.0, [0.0], 0.0)
    weights = disc.lag_weights("Y_alpha", disc.orders)
    dens = np.zeros_like(rhs)
    res = 0.0
    history = np.zeros(max_iter)
    iters = 0
    for j in range(J):
        near, far = disc.kernel_blocks(j, weights)
        R = _as_columns(rhs, j)
        D = np.zeros((K + 1,) + R.shape[1:], dtype=complex)  # D[0] := D[1]
        for m in range(1, K + 1):
            base = R[m - 1].copy()
            for i in range(1, m):
                base += near[i] @ D[m - i] + far[i] @ D[m - i - 1]
            diag = near[0] + far[0] if m == 1 else near[0]
            if m > 1:
                base += far[0] @ D[m - 1]
            x = D[m - 1] if m > 1 else R[0]
            growth, last = 0, np.inf
            for it in range(1, max_iter + 1):
                new = base + diag @ x
                upd = float(np.max(np.abs(new - x)))
                x = new
                history[it - 1] = max(history[it - 1], upd)
                if upd < tol * scale:
                    break
                growth = growth + 1 if upd > last else 0
                last = upd
                if growth >= 3:
                    raise DivergenceError(f"Volterra iteration for {kind} is not contracting: "
                                          f"update {upd:.3e} at t = {g.times[m - 1]:.4g}")
            else:
                raise DivergenceError(f"Volterra iteration for {kind} did not reach tol in {max_iter} sweeps")
            iters = max(iters, it)
            D[m] = x
            if m == 1:
                D[0] = x
        dens[:, :, j] = _from_columns(D[1:], O, N)
        # residual of the returned density
        conv = disc.convolve((near, far), D[1:])
        res = max(res, float(np.max(np.abs(D[1:] - R - conv))))
    edge = np.max(np.abs(dens[:, [0, -1]]))
    trunc = float(edge / max(np.max(np.abs(dens)), 1e-300))
    return VolterraDensity(kind, dens, g, iters, res / scale, history[:iters].tolist(), trunc)


def shifted_residual(density: VolterraDensity, provider: ParametrixProvider,
                     disc: LeviDiscretization | None = None) -> np.ndarray:
    """Relative residual of the integral equation at the midpoints t_{m-1/2}, m = 1..K.

    The density is interpolated linearly in time; the inhomogeneity is
    evaluated afresh at the midpoints.
    """
    disc = LeviDiscretization(provider, density.grid) if disc is None else disc
    g = disc.grid
    mids = g.times - 0.5 * g.dt
    rhs = disc.inhomogeneity("Z_alpha" if density.kind == "Q" else "Y_alpha", mids)
    scale = max(1.0, float(np.max(np.abs(disc.inhomogeneity(
        "Z_alpha" if density.kind == "Q" else "Y_alpha")))))
    if not np.any(rhs) and not np.any(density.samples):
        return np.zeros(g.steps)
    D = density.samples
    Dm = np.concatenate([D[:1], 0.5 * (D[1:] + D[:-1])], axis=0)
    weights = disc.lag_weights("Y_alpha", disc.orders, first=0.5)
    O, N = len(disc.off), disc.N
    res = np.zeros(g.steps)
    for j in range(len(g.xi_cells)):
        blocks = disc.kernel_blocks(j, weights)
        conv = _from_columns(disc.convolve_shifted(blocks, _as_columns(D, j)), O, N)
        res = np.maximum(res, np.max(np.abs(Dm[:, :, j] - rhs[:, :, j] - conv), axis=(1, 2, 3)))
    return res / scale


@dataclass
class GreenPair:
    """Double cell averages of Z1, Y1 and the parametrix parts at t_1..t_K."""

    Z1: np.ndarray
    Y1: np.ndarray
    Z0: np.ndarray
    Y0: np.ndarray
    grid: LeviGrid
    offsets: np.ndarray
    alpha: float
    b: int

    @property
    def V_Z(self) -> np.ndarray:
        return self.Z1 - self.Z0

    @property
    def V_Y(self) -> np.ndarray:
        return self.Y1 - self.Y0

    def xi_integral(self, which: str = "Z1") -> np.ndarray:
        """int Z1(t, x; xi) d xi for every x cell of the xi grid (periodic grids), (K, J, N, N)."""
        arr = getattr(self, which)
        g = self.grid
        if g.period_cells is None:
            raise ConfigurationError("xi integrals are assembled on periodic grids")
        M = g.period_cells
        K, O, J = arr.shape[:3]
        out = np.zeros((K, M) + arr.shape[3:], dtype=arr.dtype)
        cells = np.asarray(g.xi_cells)
        for oi, o in enumerate(self.offsets):
            np.add.at(out, (slice(None), np.mod(cells + o, M)), arr[:, oi])
        return g.spacing * out


def _assemble_correction(disc: LeviDiscretization, dens: np.ndarray) -> np.ndarray:
    """int_0^t int Y0(t - l, x - y; y) dens(l, y; xi) dy dl as double averages."""
    weights = disc.lag_weights("Y_alpha", [0])
    Wn, Wf = weights[0]
    O, N = len(disc.off), disc.N
    ci = disc.off[:, None] - disc.off[None, :] + 2 * disc.P
    out = np.zeros_like(dens)
    for j, c in enumerate(disc.grid.xi_cells):
        pi = np.broadcast_to(disc.pindex(c + disc.off)[None, :], ci.shape)
        blocks = [_deconvolve_columns(W[:, ci, pi].transpose(0, 1, 3, 2, 4).reshape(-1, O * N, O * N), N)
                  for W in (Wn, Wf)]
        out[:, :, j] = _from_columns(disc.convolve(blocks, _as_columns(dens, j)), O, N)
    return out


def green_assemble(provider: ParametrixProvider, density_Q: VolterraDensity, density_Phi: VolterraDensity,
                   disc: LeviDiscretization | None = None) -> GreenPair:
    """Z1 = Z0 + int int Y0 Q and Y1 = Y0 + int int Y0 Phi on the Levi grid."""
    disc = LeviDiscretization(provider, density_Q.grid) if disc is None else disc
    t = disc.grid.times
    Z0 = disc.node_kernel("Z_alpha", 0, t)
    Y0 = disc.node_kernel("Y_alpha", 0, t)
    Z1 = Z0 + _assemble_correction(disc, density_Q.samples)
    Y1 = Y0 + _assemble_correction(disc, density_Phi.samples)
    return GreenPair(Z1, Y1, Z0, Y0, disc.grid, disc.off, provider.alpha, provider.b)


def _second_difference(v: np.ndarray, periodic: bool, axis: int) -> np.ndarray:
    if periodic:
        return np.roll(v, -1, axis) - 2 * v + np.roll(v, 1, axis)
    w = np.moveaxis(v, axis, 0)
    out = np.zeros_like(w)
    out[1:-1] = w[2:] - 2 * w[1:-1] + w[:-2]
    return np.moveaxis(out, 0, axis)


def _to_cell_average(v: np.ndarray, periodic: bool, axis: int = 0) -> np.ndarray:
    """Fourth-order point-value to cell-average conversion (edges untouched on open grids)."""
    return v + _second_difference(v, periodic, axis) / 24.0


def _to_point_value(v: np.ndarray, periodic: bool, axis: int = 0) -> np.ndarray:
    return v - _second_difference(v, periodic, axis) / 24.0


@dataclass
class LeviRun:
    """Densities, Green matrix and discretization of one Levi computation."""

    provider: ParametrixProvider
    disc: LeviDiscretization
    Q: VolterraDensity
    Phi: VolterraDensity
    green: GreenPair


def levi_run(system, alpha, grid: LeviGrid, tol: float = 1e-8) -> LeviRun:
    provider = system if isinstance(system, ParametrixProvider) else ParametrixProvider(system, alpha)
    disc = LeviDiscretization(provider, grid)
    Q = solve_volterra("Q", provider, disc.grid, tol, disc=disc)
    Phi = solve_volterra("Phi", provider, disc.grid, tol, disc=disc)
    green = green_assemble(provider, Q, Phi, disc)
    return LeviRun(provider, disc, Q, Phi, green)


def cauchy_solve(run: LeviRun, u0, f=None, t_eval=None) -> np.ndarray:
    """u(t, x) = int Z1 u0 d xi + int_0^t int Y1(t - l, x; y) f(l, y) dy dl at the grid cells.

    u0 is an array (J, N) of point values at the xi cells or a callable of x;
    f is None or a callable f(t, x) -> (J, N).  Returns point values (len(t_eval), J, N)
    on periodic grids.
    """
    disc, green = run.disc, run.green
    g = disc.grid
    if g.period_cells is None:
        raise ConfigurationError("cauchy_solve is implemented on periodic Levi grids")
    M, N, h = g.period_cells, disc.N, g.spacing
    x = g.xi
    u0v = np.asarray(u0(x) if callable(u0) else u0, dtype=complex).reshape(len(x), -1)
    if u0v.shape[1] == 1 and N > 1:
        raise ConfigurationError("u0 must have N components")
    t_eval = g.times if t_eval is None else np.atleast_1d(np.asarray(t_eval, dtype=float))
    idx = np.rint(t_eval / g.dt).astype(int)
    if np.any(np.abs(idx * g.dt - t_eval) > 1e-9 * g.T) or np.any(idx < 1) or np.any(idx > g.steps):
        raise ConfigurationError("t_eval must be Levi time nodes in (0, T]")
    # the double average already smooths over the xi cell, so the data enter as
    # the deconvolved point values; this keeps the scheme fourth order in h
    ubar0 = _to_point_value(u0v, True)
    cells = np.asarray(g.xi_cells)
    out = np.zeros((len(idx), M, N), dtype=complex)
    for ti, k in enumerate(idx):
        for oi, o in enumerate(disc.off):
            np.add.at(out[ti], np.mod(cells + o, M), h * np.einsum("jab,jb->ja", green.Z1[k - 1, oi], ubar0))
    if f is not None:
        out += _source_term(run, f, idx)
    return _to_point_value(out, True, axis=1)


def _source_term(run: LeviRun, f, idx) -> np.ndarray:
    """int_0^t int Y1(t - l, x; y) f(l, y) dy dl with f piecewise linear in l (f(0) kept)."""
    disc, green = run.disc, run.green
    g = disc.grid
    M, N, h = g.period_cells, disc.N, g.spacing
    cells = np.asarray(g.xi_cells)
    nodes = np.concatenate([[0.0], g.times])
    fv = np.stack([_to_cell_average(np.asarray(f(t, g.xi), dtype=complex).reshape(len(cells), N), True)
                   for t in nodes])  # (K+1, J, N)
    al = disc.provider.alpha
    # Y0 part: exact product weights with the parameter at the source cell
    tau, w, piece, s = _lag_rule(g.dt, g.steps, al - 1.0)
    kern = disc.node_kernel("Y_alpha", 0, tau)  # (nodes, O, J, N, N)
    # V_Y part: tau^{1-alpha} V_Y interpolated linearly between nodes
    VY = green.V_Y
    gvals = VY * (g.times ** (1.0 - al))[:, None, None, None, None]
    gvals = np.concatenate([gvals[:1], gvals], axis=0)  # value at tau = 0 taken from tau = dt
    gi = (1.0 - s)[:, None, None, None, None] * gvals[piece] + s[:, None, None, None, None] * gvals[piece + 1]
    kern = kern + gi * (tau ** (al - 1.0))[:, None, None, None, None]
    out = np.zeros((len(idx), M, N), dtype=complex)
    for ti, m in enumerate(idx):
        tm = m * g.dt
        use = tau <= tm * (1 + 1e-12)
        lam = tm - tau[use]
        # f at lambda by linear interpolation in the node table
        pos = np.clip(lam / g.dt, 0.0, m)
        k0 = np.minimum(np.floor(pos).astype(int), m - 1)
        r = pos - k0
        fl = (1.0 - r)[:, None, None] * fv[k0] + r[:, None, None] * fv[k0 + 1]  # (nodes, J, N)
        contrib = np.einsum("n,nojab,njb->oja", w[use], kern[use], fl)
        for oi, o in enumerate(disc.off):
            np.add.at(out[ti], np.mod(cells + o, M), h * contrib[oi])
    return out
