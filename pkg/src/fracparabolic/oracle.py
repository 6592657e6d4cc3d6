"""Brute-force time stepping for D^alpha u = A u + f with the L1 discretization.

The Caputo derivative at t_k is approximated by

    dt^-alpha sum_{j<k} w_j (u_{k-j} - u_{k-j-1}),
    w_j = ((j+1)^{1-alpha} - j^{1-alpha}) / Gamma(2-alpha),

and each step solves (dt^-alpha w_0 I - A_h) u_k = history + f_k implicitly.
The first step carries the standard correction 1/2 (A u_0 + f(0)), which
removes the O(dt) error caused by the t^alpha behaviour of the solution at
t = 0 and restores the O(dt^{2-alpha}) rate of the scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.special import gamma

from .errors import ConfigurationError, EvaluationError, PreconditionError
from .grids import GridSpec
from .operators import ConstantOperator, VariableSystem, operator_matrix, require_parabolic, freeze
from .specfun import as_alpha


@dataclass(frozen=True)
class SteppingScheme:
    alpha: float
    dt: float
    step_count: int
    corrected: bool = True
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_alpha(self.alpha))
        if not self.dt > 0:
            raise ConfigurationError("time step must be positive")
        if self.step_count < 1:
            raise ConfigurationError("step_count must be >= 1")
        j = np.arange(self.step_count + 1, dtype=float)
        w = ((j + 1.0) ** (1.0 - self.alpha) - j ** (1.0 - self.alpha)) / gamma(2.0 - self.alpha)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, alpha, T: float, steps: int, corrected: bool = True) -> "SteppingScheme":
        return cls(alpha, T / steps, steps, corrected)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.step_count + 1)


def caputo_l1(history, scheme: SteppingScheme):
    """L1 value of D^alpha u at the last entry of history u(t_0), ..., u(t_k)."""
    u = np.asarray(history)
    if u.shape[0] < 2:
        raise PreconditionError("L1 derivative needs at least two history values")
    k = u.shape[0] - 1
    if k > scheme.step_count:
        raise PreconditionError("history longer than the scheme's weight table")
    d = np.diff(u, axis=0)
    w = scheme.weights[k - 1::-1] if k > 0 else scheme.weights[:0]
    return scheme.dt ** (-scheme.alpha) * np.tensordot(w, d, axes=(0, 0))


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    values: np.ndarray  # (steps + 1, points, N)
    grid: GridSpec | None
    meta: dict = field(default_factory=dict, compare=False)

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ConfigurationError(f"time {t} is not a step of the trajectory")
        return self.values[i]


def _space_operator(system, grid, periodic):
    if isinstance(system, ConstantOperator):
        require_parabolic(system)
        system = VariableSystem.from_constant(system)
    if isinstance(system, VariableSystem):
        if grid is None:
            raise ConfigurationError("a spatial system needs a grid")
        for y in grid.points()[:: max(1, grid.size // 16)]:
            require_parabolic(freeze(system, y, check=False))
        return operator_matrix(system, grid, "full", periodic), system.N, grid.size
    A = np.atleast_2d(np.asarray(system, dtype=complex))
    if A.shape[0] != A.shape[1]:
        raise ConfigurationError("ODE system matrix must be square")
    return sp.csr_matrix(A), A.shape[0], 1


def solve_ivp(system, u0, f, T: float | None = None, scheme: SteppingScheme | None = None,
              grid: GridSpec | None = None, periodic: bool = True, alpha=None,
              steps: int | None = None) -> Trajectory:
    """Integrate D^alpha u = A u + f, u(0) = u0 on a periodic grid (or as an ODE).

    system is a ConstantOperator, VariableSystem or, without grid, an N x N
    matrix.  u0 has shape (P, N) (or broadcastable); f is None or a callable
    f(t, points) returning (P, N).
    """
    if scheme is None:
        if alpha is None or T is None or steps is None:
            raise ConfigurationError("give a SteppingScheme or alpha, T and steps")
        scheme = SteppingScheme.uniform(alpha, T, steps)
    A, N, P = _space_operator(system, grid, periodic)
    pts = grid.points() if grid is not None else np.zeros((1, 1))
    u_init = np.broadcast_to(np.asarray(u0, dtype=complex).reshape(-1, N) if np.ndim(u0) else
                             np.full((P, N), complex(u0)), (P, N))
    # component-major layout, matching operator_matrix
    vec0 = u_init.T.ravel().copy()
    K = scheme.step_count
    c = scheme.dt ** (-scheme.alpha)
    w = scheme.weights
    lhs = (c * w[0] * sp.identity(N * P, format="csc", dtype=complex) - A.tocsc()).tocsc()
    try:
        lu = splu(lhs)
    except RuntimeError as exc:
        raise EvaluationError(f"implicit step matrix is singular: {exc}") from None

    def source(t):
        if f is None:
            return np.zeros(N * P, dtype=complex)
        v = np.asarray(f(t, pts), dtype=complex)
        return np.broadcast_to(v.reshape(-1, N) if v.ndim else np.full((P, N), complex(v)), (P, N)).T.ravel()

    U = np.zeros((K + 1, N * P), dtype=complex)
    D = np.zeros((K, N * P), dtype=complex)
    U[0] = vec0
    times = scheme.times
    for k in range(1, K + 1):
        rhs = c * w[0] * U[k - 1] + source(times[k])
        if k > 1:
            rhs -= c * (w[k - 1:0:-1] @ D[:k - 1])
        if k == 1 and scheme.corrected:
            rhs += 0.5 * (A @ U[0] + source(0.0))
        U[k] = lu.solve(rhs)
        if not np.all(np.isfinite(U[k])):
            raise EvaluationError(f"non-finite solution at step {k}; residual diagnostics: "
                                  f"max |rhs| = {np.max(np.abs(rhs)):.3e}")
        D[k - 1] = U[k] - U[k - 1]
    vals = U.reshape(K + 1, N, P).transpose(0, 2, 1)
    return Trajectory(times, vals, grid, {"alpha": scheme.alpha, "dt": scheme.dt, "steps": K,
                                          "corrected": scheme.corrected, "periodic": periodic})


def observed_order(errors, ratio: float = 2.0) -> np.ndarray:
    """log_ratio(e_i / e_{i+1}) for a sequence of errors at dt, dt/ratio, ..."""
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)
