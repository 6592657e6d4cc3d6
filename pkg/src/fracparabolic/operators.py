"""Differential operators A0 (homogeneous of order 2b) and A1, constant and variable.

Conventions: D = (1/i) d/dx, so e^{i x.xi} is an eigenfunction of a constant
operator with eigenvalue matrix A0(xi) = sum_mu a_mu xi^mu.  Finite-difference
realizations are centered and second order, composed per multi-index.
"""

from __future__ import annotations

import ast
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DomainBoundaryError, PreconditionError
from .grids import GridSpec
from .specfun import dissipativity_constant


@dataclass(frozen=True, order=True)
class MultiIndex:
    components: tuple

    def __post_init__(self):
        comps = tuple(int(c) for c in self.components)
        if any(c < 0 for c in comps):
            raise ConfigurationError("multi-index components must be nonnegative")
        object.__setattr__(self, "components", comps)

    @property
    def order(self) -> int:
        return sum(self.components)

    @property
    def n(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)


def multi_indices(n: int, order: int):
    """All multi-indices in n variables of exactly the given order."""
    out = []
    for comb in itertools.product(range(order + 1), repeat=n):
        if sum(comb) == order:
            out.append(MultiIndex(comb))
    return out


def _as_index(key) -> MultiIndex:
    if isinstance(key, MultiIndex):
        return key
    if isinstance(key, int):
        return MultiIndex((key,))
    return MultiIndex(tuple(key))


def monomial(mu: MultiIndex, xi) -> np.ndarray:
    """xi^mu for xi of shape (..., n)."""
    xi = np.asarray(xi, dtype=float)
    out = np.ones(xi.shape[:-1])
    for i, p in enumerate(mu.components):
        if p:
            out = out * xi[..., i] ** p
    return out


# ---------------------------------------------------------------- constant


@dataclass(frozen=True)
class ConstantOperator:
    """A0(D) = sum_{|mu|=2b} a_mu D^mu acting on C^N valued functions of R^n."""

    n: int
    N: int
    b: int
    coeffs: Mapping = field(hash=False, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.N < 1 or self.b < 1:
            raise ConfigurationError("n, N and b must be positive integers")
        table = {}
        for key, mat in dict(self.coeffs).items():
            mu = _as_index(key)
            if mu.n != self.n:
                raise ConfigurationError(f"multi-index {mu.components} has wrong dimension")
            if mu.order != 2 * self.b:
                raise ConfigurationError(
                    f"principal coefficient {mu.components} must have order {2 * self.b}"
                )
            m = np.array(mat, dtype=complex)
            if m.size != self.N * self.N:
                raise ConfigurationError(f"coefficient {mu.components} must be {self.N}x{self.N}")
            m = m.reshape(self.N, self.N)
            if not np.all(np.isfinite(m)):
                raise ConfigurationError("coefficients must be finite")
            table[mu] = table.get(mu, 0) + m
        if not table:
            raise ConfigurationError("operator has no coefficients")
        object.__setattr__(self, "coeffs", dict(sorted(table.items())))

    def symbol(self, xi) -> np.ndarray:
        return symbol_eval(self, xi)

    @property
    def key(self) -> tuple:
        """Hashable identity of the coefficient table (used for caching)."""
        return (self.n, self.N, self.b) + tuple(
            (mu.components, tuple(np.round(v.ravel(), 15).tolist())) for mu, v in self.coeffs.items()
        )

    def norm(self) -> float:
        """Operator 2-norm bound of the symbol on the unit sphere (sampled)."""
        eta = sphere_samples(self.n, 256)
        return float(np.max(np.linalg.norm(symbol_eval(self, eta), 2, axis=(-2, -1))))

    def scaled(self, factor: float) -> "ConstantOperator":
        return ConstantOperator(self.n, self.N, self.b, {k: factor * v for k, v in self.coeffs.items()})

    def is_even_real(self) -> bool:
        return all(np.all(v.imag == 0) for v in self.coeffs.values())

    def to_dict(self) -> dict:
        return {
            "n": self.n, "N": self.N, "b": self.b,
            "coefficients": [
                {"index": list(k.components),
                 "real": v.real.tolist(), "imag": v.imag.tolist()}
                for k, v in self.coeffs.items()
            ],
        }


def symbol_eval(op: ConstantOperator, xi) -> np.ndarray:
    """A0(xi) = sum a_mu xi^mu; xi of shape (n,) or (..., n) gives (..., N, N)."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 0:
        xi = xi[None]
    if xi.shape[-1] != op.n:
        raise ConfigurationError(f"frequency must have {op.n} components")
    out = np.zeros(xi.shape[:-1] + (op.N, op.N), dtype=complex)
    for mu, a in op.coeffs.items():
        out += monomial(mu, xi)[..., None, None] * a
    return out


def sphere_samples(n: int, count: int) -> np.ndarray:
    """Deterministic quasi-uniform unit vectors in R^n."""
    if count < 2 * n:
        raise ConfigurationError("need at least 2n sphere samples")
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        th = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    if n == 3:
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        phi = np.pi * (1.0 + 5.0**0.5) * k
        r = np.sqrt(1.0 - z * z)
        pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    else:
        g = np.random.default_rng(12345).standard_normal((count, n))
        pts = g / np.linalg.norm(g, axis=1, keepdims=True)
    return np.concatenate([np.eye(n), -np.eye(n), pts])


def parabolicity_delta(op: ConstantOperator, sphere_samples_count: int = 256) -> float:
    """min over sampled unit eta of the dissipativity constant of A0(eta)."""
    eta = sphere_samples(op.n, sphere_samples_count)
    return float(np.min(dissipativity_constant(symbol_eval(op, eta))))


def require_parabolic(op: ConstantOperator, samples: int = 256) -> float:
    delta = parabolicity_delta(op, samples)
    if not delta > 0:
        raise PreconditionError(
            f"operator is not strongly parabolic: sampled delta = {delta:.6g} <= 0"
        )
    return delta


# ---------------------------------------------------------------- variable


Coefficient = Callable[[np.ndarray], np.ndarray]


def _constant_coefficient(mat):
    m = np.array(mat, dtype=complex)

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(m, x.shape[:-1] + m.shape).copy()

    return f


@dataclass(frozen=True)
class VariableSystem:
    """A(x, D) = sum_{|beta|=2b} a_beta(x) D^beta + sum_{|beta|<2b} a_beta(x) D^beta.

    Coefficients are callbacks taking points of shape (..., n) and returning
    (..., N, N) arrays.
    """

    n: int
    N: int
    b: int
    principal: Mapping = field(hash=False, compare=False)
    lower: Mapping = field(default_factory=dict, hash=False, compare=False)
    holder_exponent: float = 1.0
    holder_constant: float = 0.0
    bound: float = np.inf
    name: str = "system"
    period: float | None = None  # common period of all coefficients in every coordinate, if any

    def __post_init__(self):
        if self.period is not None and not self.period > 0:
            raise ConfigurationError("period must be positive")
        if not 0 < self.holder_exponent <= 1:
            raise ConfigurationError("Hoelder exponent must lie in (0, 1]")
        pr, lo = {}, {}
        for key, f in dict(self.principal).items():
            mu = _as_index(key)
            if mu.order != 2 * self.b or mu.n != self.n:
                raise ConfigurationError(f"principal index {mu.components} must have order {2 * self.b}")
            pr[mu] = f if callable(f) else _constant_coefficient(f)
        for key, f in dict(self.lower).items():
            mu = _as_index(key)
            if mu.order >= 2 * self.b or mu.n != self.n:
                raise ConfigurationError(f"lower index {mu.components} must have order < {2 * self.b}")
            lo[mu] = f if callable(f) else _constant_coefficient(f)
        object.__setattr__(self, "principal", dict(sorted(pr.items())))
        object.__setattr__(self, "lower", dict(sorted(lo.items())))

    @classmethod
    def from_constant(cls, op: ConstantOperator, lower=None, **kw) -> "VariableSystem":
        return cls(op.n, op.N, op.b, {k: _constant_coefficient(v) for k, v in op.coeffs.items()},
                   lower or {}, **kw)

    def coefficient_samples(self, x, part: str = "principal") -> dict:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        table = self.principal if part == "principal" else self.lower
        return {mu: np.asarray(f(x), dtype=complex).reshape(x.shape[0], self.N, self.N)
                for mu, f in table.items()}

    def is_constant(self, x) -> bool:
        for part in ("principal", "lower"):
            for v in self.coefficient_samples(x, part).values():
                if np.max(np.abs(v - v[:1])) > 0:
                    return False
        return True

    def verify(self, points, samples: int = 256) -> dict:
        """Spot-check bound, Hoelder quotients and common parabolicity on points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        report = {"max_coefficient": 0.0, "max_holder_quotient": 0.0, "min_delta": np.inf,
                  "sphere_samples": samples}
        for part in ("principal", "lower"):
            for v in self.coefficient_samples(pts, part).values():
                report["max_coefficient"] = max(report["max_coefficient"],
                                                float(np.max(np.linalg.norm(v, 2, axis=(1, 2)))))
                if pts.shape[0] > 1:
                    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
                    dv = np.linalg.norm(v[:, None] - v[None, :], 2, axis=(2, 3))
                    mask = d > 0
                    q = dv[mask] / d[mask] ** self.holder_exponent
                    report["max_holder_quotient"] = max(report["max_holder_quotient"], float(q.max()))
        for y in pts:
            report["min_delta"] = min(report["min_delta"], parabolicity_delta(freeze(self, y, check=False), samples))
        report["bound_ok"] = report["max_coefficient"] <= self.bound * (1 + 1e-12)
        report["holder_ok"] = report["max_holder_quotient"] <= self.holder_constant * (1 + 1e-9) + 1e-14
        report["parabolic_ok"] = report["min_delta"] > 0
        return report


def freeze(sys: VariableSystem, y, check: bool = True) -> ConstantOperator:
    """Homogeneous constant operator with principal coefficients read at y."""
    y = np.asarray(y, dtype=float).reshape(1, sys.n)
    coeffs = {mu: v[0] for mu, v in sys.coefficient_samples(y, "principal").items()}
    op = ConstantOperator(sys.n, sys.N, sys.b, coeffs)
    if check:
        require_parabolic(op)
    return op


# ---------------------------------------------------------- finite differences


def _d1(m: int, h: float, order: int, periodic: bool) -> sp.csr_matrix:
    """Centered second-order derivative of the given order along one axis."""
    def base(stencil, offsets):
        diags, offs = [], []
        for c, o in zip(stencil, offsets):
            diags.append(np.full(m - abs(o), c))
            offs.append(o)
            if periodic and o != 0:
                wrap = o - m if o > 0 else o + m
                diags.append(np.full(m - abs(wrap), c))
                offs.append(wrap)
        return sp.diags(diags, offs, shape=(m, m), format="csr")

    second = base([1.0 / h**2, -2.0 / h**2, 1.0 / h**2], [-1, 0, 1])
    first = base([-0.5 / h, 0.5 / h], [-1, 1])
    out = sp.identity(m, format="csr")
    for _ in range(order // 2):
        out = second @ out
    if order % 2:
        out = first @ out
    return out.tocsr()


def stencil_radius(order: int) -> int:
    return order // 2 + order % 2


def derivative_matrix(grid: GridSpec, mu: MultiIndex, periodic: bool = True) -> sp.csr_matrix:
    """Finite-difference realization of D^mu = (-i)^{|mu|} d^mu on the flattened grid."""
    m = grid.points_per_axis
    mat = sp.identity(1, format="csr")
    for axis_order in mu.components:
        mat = sp.kron(mat, _d1(m, grid.spacing, axis_order, periodic), format="csr")
    return ((-1j) ** mu.order) * mat


def operator_matrix(sys: VariableSystem, grid: GridSpec, part: str = "full",
                    periodic: bool = True, y=None) -> sp.csr_matrix:
    """Sparse matrix of the requested part acting on vectors ordered (component, point).

    part is one of full, principal, lower, frozen (with y the freezing point).
    """
    pts = grid.points()
    P = grid.size
    terms = []
    if part in ("full", "principal"):
        terms.append(sys.coefficient_samples(pts, "principal"))
    if part in ("full", "lower"):
        terms.append(sys.coefficient_samples(pts, "lower"))
    if part == "frozen":
        if y is None:
            raise ConfigurationError("frozen part needs a freezing point y")
        op = freeze(sys, y, check=False)
        terms.append({mu: np.broadcast_to(a, (P,) + a.shape) for mu, a in op.coeffs.items()})
    if not terms:
        raise ConfigurationError(f"unknown operator part {part!r}")
    blocks = [[sp.csr_matrix((P, P), dtype=complex) for _ in range(sys.N)] for _ in range(sys.N)]
    for table in terms:
        for mu, vals in table.items():
            D = derivative_matrix(grid, mu, periodic)
            for i in range(sys.N):
                for j in range(sys.N):
                    c = vals[:, i, j]
                    if np.any(c != 0):
                        blocks[i][j] = blocks[i][j] + sp.diags(c) @ D
    return sp.bmat(blocks, format="csr")


def constant_operator_matrix(op: ConstantOperator, grid: GridSpec, periodic: bool = True):
    return operator_matrix(VariableSystem.from_constant(op), grid, "principal", periodic)


def apply(sys: VariableSystem, part: str, u, grid: GridSpec, x_index=None, periodic: bool = False):
    """Apply a part of the operator to u sampled on grid, shape (P, N) or (P,).

    part is 'full', 'principal', 'lower' or ('frozen', y).  Returns the values
    at grid index x_index, or at all points when x_index is None.  On a
    non-periodic grid the stencil must fit inside the grid.
    """
    u = np.asarray(u, dtype=complex)
    if u.ndim == 1:
        u = u[:, None]
    y = None
    if isinstance(part, tuple):
        part, y = part
    mat = operator_matrix(sys, grid, part, periodic, y=y)
    out = (mat @ u.T.ravel()).reshape(sys.N, grid.size).T
    rad = max([stencil_radius(max(mu.components)) for mu in list(sys.principal) + list(sys.lower)] + [0])
    if not periodic:
        m = grid.points_per_axis
        idx = np.stack(np.unravel_index(np.arange(grid.size), (m,) * grid.n), axis=-1)
        bad = np.any((idx < rad) | (idx >= m - rad), axis=-1)
        if x_index is None:
            out[bad] = np.nan
        elif bad[x_index]:
            raise DomainBoundaryError(f"stencil of radius {rad} leaves the grid at index {x_index}")
    return out if x_index is None else out[x_index]


# ---------------------------------------------------------------- JSON input

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "cosh": np.cosh, "sinh": np.sinh,
    "arctan": np.arctan,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
           ast.Div: np.divide, ast.Pow: np.power}


def compile_expression(text: str, n: int):
    """Compile an arithmetic expression in x (or x1..xn) into a vectorized callable."""
    try:
        tree = ast.parse(str(text), mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"bad coefficient expression {text!r}: {exc}") from None
    names = {"x": 0} if n == 1 else {}
    names.update({f"x{i + 1}": i for i in range(n)})

    def ev(node, x):
        if isinstance(node, ast.Expression):
            return ev(node.body, x)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, complex)):
            return node.value
        if isinstance(node, ast.Name):
            if node.id in names:
                return x[..., names[node.id]]
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            raise ConfigurationError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left, x), ev(node.right, x))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand, x)
            return -v if isinstance(node.op, ast.USub) else v
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0], x))
        raise ConfigurationError(f"unsupported construct in coefficient expression {text!r}")

    # validate once on a dummy point so errors surface at load time
    ev(tree, np.zeros((1, n)))
    return lambda x: ev(tree, np.asarray(x, dtype=float))


def _entry_callable(entry, n):
    if isinstance(entry, str):
        return compile_expression(entry, n)
    if isinstance(entry, (list, tuple)) and len(entry) == 2 and all(
            isinstance(v, (int, float)) for v in entry):
        c = complex(entry[0], entry[1])
        return lambda x: c
    if isinstance(entry, (int, float)):
        c = float(entry)
        return lambda x: c
    raise ConfigurationError(f"bad coefficient entry {entry!r}")


def _matrix_callable(rows, n, N):
    if len(rows) != N or any(len(r) != N for r in rows):
        raise ConfigurationError(f"coefficient matrix must be {N}x{N}")
    fns = [[_entry_callable(e, n) for e in row] for row in rows]

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (N, N), dtype=complex)
        for i in range(N):
            for j in range(N):
                out[..., i, j] = fns[i][j](x)
        return out

    return f


def _is_constant_rows(rows):
    return all(not isinstance(e, str) for row in rows for e in row)


def _constant_rows(rows):
    return [[complex(e[0], e[1]) if isinstance(e, (list, tuple)) else complex(e) for e in row]
            for row in rows]


def load_system(source) -> ConstantOperator | VariableSystem:
    """Load a system from a JSON file path, JSON text or an already parsed dict.

    Layout::

        {"n": 1, "N": 1, "b": 1,
         "principal": [{"index": [2], "matrix": [["-(1 + 0.5*sin(x))"]]}],
         "lower": [{"index": [1], "matrix": [[0.1]]}],
         "holder": {"exponent": 1.0, "constant": 0.5}, "bound": 1.5,
         "period": 6.283185307179586}

    Entries are numbers, [re, im] pairs or expression strings.  A system with
    only numeric principal entries and no lower terms loads as ConstantOperator.
    """
    if isinstance(source, dict):
        doc = source
    else:
        text = str(source)
        if text.lstrip().startswith("{"):
            doc = json.loads(text)
        else:
            path = Path(text)
            if not path.exists():
                raise ConfigurationError(f"system file {path} does not exist")
            doc = json.loads(path.read_text())
    try:
        n, N, b = int(doc["n"]), int(doc["N"]), int(doc["b"])
        principal = doc.get("principal", doc.get("coefficients"))
        if principal is None:
            raise KeyError("principal")
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"system document missing field: {exc}") from None
    lower = doc.get("lower", [])
    if all(_is_constant_rows(e["matrix"]) for e in principal) and not lower and not doc.get("variable"):
        return ConstantOperator(n, N, b, {tuple(e["index"]): _constant_rows(e["matrix"]) for e in principal})
    holder = doc.get("holder", {})
    return VariableSystem(
        n, N, b,
        {tuple(e["index"]): _matrix_callable(e["matrix"], n, N) for e in principal},
        {tuple(e["index"]): _matrix_callable(e["matrix"], n, N) for e in lower},
        holder_exponent=float(holder.get("exponent", 1.0)),
        holder_constant=float(holder.get("constant", 0.0)),
        bound=float(doc.get("bound", np.inf)),
        name=str(doc.get("name", "system")),
        period=None if doc.get("period") is None else float(doc["period"]),
    )


# ---------------------------------------------------------------- test operators


def heat_1d(diffusivity: float = 1.0) -> ConstantOperator:
    """d^2/dx^2 scaled: symbol -diffusivity xi^2."""
    return ConstantOperator(1, 1, 1, {(2,): [[-diffusivity]]})


def coupled_1d() -> ConstantOperator:
    """Non-normal 2x2 second-order system with real symbol."""
    return ConstantOperator(1, 2, 1, {(2,): [[-1.0, 0.3], [0.0, -2.0]]})


def biharmonic_1d() -> ConstantOperator:
    """-d^4/dx^4: symbol -xi^4 (b = 2)."""
    return ConstantOperator(1, 1, 2, {(4,): [[-1.0]]})


def sine_system(amplitude: float = 0.5) -> VariableSystem:
    """Scalar a(x) D^2 with a(x) = -(1 + amplitude sin x), Lipschitz in x."""
    def a2(x):
        x = np.asarray(x, dtype=float)
        return (-(1.0 + amplitude * np.sin(x[..., 0])))[..., None, None].astype(complex)

    return VariableSystem(1, 1, 1, {(2,): a2}, {}, holder_exponent=1.0,
                          holder_constant=amplitude, bound=1.0 + amplitude, name="sine",
                          period=2.0 * np.pi)
