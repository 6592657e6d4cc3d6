"""Empirical certification of pointwise kernel bounds.

A bound shape is C t^p |x|^q [|log R| + 1]^l e^{-sigma rho}, with R = t^-alpha |x|^2b
and rho = R^{1/(2b - alpha)}.  The paper proves existence of C and sigma; here
they are fitted on a calibration window of times and the resulting bound is
checked on every sample, including times outside the window.

Fitting rule:
* sigma: half of the largest value in [0, 4] (bisection to 1e-3) such that
  log|K| - log(shape) + sigma rho over the far half of the R >= 1 calibration
  samples (in rho) does not exceed its maximum over the near half.  On a
  finite rho range that largest value can exceed the true decay rate, since
  it also absorbs the algebraic prefactor; the factor 1/2 keeps a reserve
  so the bound extrapolates to larger rho;
* C: headroom times the sup of |K| / (shape e^{-sigma rho}) over calibration.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigurationError, InsufficientDataError
from .grids import GridSpec
from .kernels import KernelField, kernel_field, scaling
from .operators import ConstantOperator, MultiIndex, VariableSystem, freeze
from .specfun import as_alpha

REGIMES = ("R_ge_1", "R_le_1", "unified")
MIN_SAMPLES = 100
NOISE_FLOOR = 1e-10
HEADROOM = 1.05
SIGMA_SAFETY = 0.5
FIT_WINDOW = (1e-2, 1.0)


@dataclass(frozen=True)
class BoundCase:
    """One bound shape C t^t_power |x|^x_power [|log R|+1]^log e^{-sigma rho} on a regime."""

    kernel_kind: str
    derivative: MultiIndex
    regime: str
    label: str
    t_power: float
    x_power: float = 0.0
    log_factor: bool = False
    exponential: bool = False
    holder: float = 0.0  # exponent of an extra |y' - y''| factor
    n: int = 1
    b: int = 1
    alpha: float = 0.5

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigurationError(f"unknown regime {self.regime!r}")

    def admits(self, R: np.ndarray) -> np.ndarray:
        if self.regime == "R_ge_1":
            return R >= 1.0
        if self.regime == "R_le_1":
            return R <= 1.0
        return np.ones(np.shape(R), dtype=bool)

    def log_shape(self, t, x, R) -> np.ndarray:
        """log of the algebraic prefactor (no C, no exponential)."""
        out = self.t_power * np.log(t)
        if self.x_power:
            out = out + self.x_power * np.log(np.abs(x))
        if self.log_factor:
            out = out + np.log(np.abs(np.log(R)) + 1.0)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["derivative"] = list(self.derivative.components)
        return d


@dataclass(frozen=True)
class EstimateReport:
    case: BoundCase
    fitted_C: float
    fitted_sigma: float
    sup_ratio: float
    sample_count: int
    passed: bool
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def pass_(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        return {"case": self.case.to_dict(), "fitted_C": self.fitted_C,
                "fitted_sigma": self.fitted_sigma, "sup_ratio": self.sup_ratio,
                "sample_count": self.sample_count, "pass": self.passed, **self.extra}


# ------------------------------------------------------------- case taxonomy


def select_case(kind: str, beta, regime: str, n: int = 1, b: int = 1, alpha: float = 0.5) -> BoundCase:
    """The Theorem-1 clause (regimes R_ge_1, R_le_1) or unified form for a kernel."""
    alpha = as_alpha(alpha)
    beta = beta if isinstance(beta, MultiIndex) else MultiIndex(tuple(np.atleast_1d(beta)) if n > 1
                                                                else (int(beta),))
    m = beta.order
    s = n + m
    base = -alpha * s / (2.0 * b)
    kw = dict(kernel_kind=kind, derivative=beta, regime=regime, n=n, b=b, alpha=alpha)
    if kind == "dtZ_alpha":
        if m:
            raise ConfigurationError("time-derivative bounds are stated for beta = 0 only")
        if regime == "R_ge_1":
            return BoundCase(label="2.19", t_power=-alpha * n / (2.0 * b) - 1.0, exponential=True, **kw)
        if regime == "R_le_1":
            if n < 2 * b:
                return BoundCase(label="2.20", t_power=-alpha * n / (2.0 * b) - 1.0, **kw)
            if n > 2 * b:
                return BoundCase(label="2.21", t_power=-alpha - 1.0, x_power=-n + 2.0 * b, **kw)
            return BoundCase(label="2.22", t_power=-alpha - 1.0, log_factor=True, **kw)
        raise ConfigurationError("no unified form is stated for the time derivative")
    if kind not in ("Z_alpha", "Y_alpha"):
        raise ConfigurationError(f"unknown kernel kind {kind!r}")
    z = kind == "Z_alpha"
    if regime == "R_ge_1":
        return BoundCase(label="2.10" if z else "2.11", t_power=base if z else base + alpha - 1.0,
                         exponential=True, **kw)
    if regime == "R_le_1":
        if s < 2 * b:
            return BoundCase(label="2.12" if z else "2.13", t_power=base if z else base + alpha - 1.0, **kw)
        if s > 2 * b:
            return BoundCase(label="2.14" if z else "2.15", t_power=-alpha if z else -1.0,
                             x_power=-n + 2.0 * b - m, **kw)
        if not z:
            return BoundCase(label="2.18", t_power=-1.0, **kw)
        if n == 1:
            return BoundCase(label="2.16", t_power=-alpha, **kw)
        return BoundCase(label="2.17", t_power=-alpha, log_factor=True, **kw)
    # unified forms valid for all R
    if s < 2 * b:
        return BoundCase(label="4.17" if z else "4.18", t_power=base if z else base + alpha - 1.0,
                         exponential=True, **kw)
    if not z:
        return BoundCase(label="4.21", t_power=-1.0, x_power=-n + 2.0 * b - m, exponential=True, **kw)
    if s > 2 * b:
        return BoundCase(label="4.19", t_power=-alpha, x_power=-n + 2.0 * b - m, exponential=True, **kw)
    return BoundCase(label="4.20", t_power=-alpha, log_factor=True, exponential=True, **kw)


def remainder_case(kind: str, beta: int, regime: str = "unified", n: int = 1, b: int = 1,
                   alpha: float = 0.5, gamma: float = 1.0, gamma0: float | None = None,
                   mu1: float | None = None, mu2: float | None = None) -> BoundCase:
    """Shapes for the Levi corrections V_Z, V_Y (all carry e^{-sigma rho})."""
    alpha = as_alpha(alpha)
    g0 = gamma / 2.0 if gamma0 is None else gamma0
    if not 0.0 < g0 < gamma:
        raise ConfigurationError("gamma0 must lie in (0, gamma)")
    kw = dict(kernel_kind=kind, derivative=MultiIndex((beta,)), regime=regime, n=n, b=b,
              alpha=alpha, exponential=True)
    s = n + beta
    if beta == 2 * b:
        m1 = alpha * g0 / (2.0 * b) if mu1 is None else mu1
        m2 = gamma - g0 if mu2 is None else mu2
        if kind == "V_Z":
            return BoundCase(label="2.30", t_power=-alpha + m1, x_power=-n + m2, **kw)
        return BoundCase(label="2.31", t_power=-1.0 + m1, x_power=-n + m2, **kw)
    if s < 2 * b:
        if kind == "V_Z":
            return BoundCase(label="2.26", t_power=-alpha * (beta + g0) / (2.0 * b),
                             x_power=-n + gamma - g0, **kw)
        return BoundCase(label="2.27", t_power=-1.0 + alpha - alpha * beta / (2.0 * b),
                         x_power=-n + gamma, **kw)
    if kind == "V_Z":
        return BoundCase(label="2.28", t_power=-alpha + alpha * g0 / (2.0 * b),
                         x_power=-n + 2.0 * b - beta + gamma - g0, **kw)
    return BoundCase(label="2.29", t_power=-1.0 + alpha * g0 / b,
                     x_power=-n + 2.0 * b - beta + gamma - 2.0 * g0, **kw)


def theorem1_cases(kind: str, n: int = 1, b: int = 1, alpha: float = 0.5, max_order: int | None = None):
    """Every applicable (beta, regime) clause for a kernel kind, |beta| <= 2b."""
    top = 2 * b if max_order is None else max_order
    orders = [0] if kind == "dtZ_alpha" else range(top + 1)
    return [select_case(kind, m, r, n, b, alpha) for m in orders for r in ("R_ge_1", "R_le_1")]


def prop4_cases(kind: str, n: int = 1, b: int = 1, alpha: float = 0.5, max_order: int | None = None):
    top = 2 * b if max_order is None else max_order
    return [select_case(kind, m, "unified", n, b, alpha) for m in range(top + 1)]


# ------------------------------------------------------------------ fitting


@dataclass(frozen=True)
class Samples:
    """Flattened (t, x, |K|) samples with the similarity variables."""

    t: np.ndarray
    x: np.ndarray
    mag: np.ndarray
    scale: np.ndarray  # per-sample noise reference (max |K| on the time slice)
    R: np.ndarray
    rho: np.ndarray


def field_samples(field_: KernelField, alpha: float, b: int, weights=None, reference=None) -> Samples:
    """Samples of a 1-D field; reference (T, P) sets the noise scale (defaults to |field|)."""
    mag = field_.norms() if weights is None else weights
    ref = mag if reference is None else reference
    T, P = mag.shape
    t = np.repeat(field_.times, P)
    x = np.tile(np.linalg.norm(field_.points, axis=-1), T)
    scale = np.repeat(np.max(ref, axis=1), P)
    sq = scaling(alpha, b, t, x)
    return Samples(t, x, mag.ravel(), scale, np.asarray(sq.R), np.asarray(sq.rho))


def _fit_sigma(v: np.ndarray, rho: np.ndarray, lo: float = 0.0, hi: float = 4.0, tol: float = 1e-3) -> float:
    """Largest sigma in [lo, hi] with max(v + sigma rho) over far rho <= max over near rho."""
    if v.size < 2 or np.ptp(rho) == 0.0:
        return 0.0
    split = np.median(rho)
    far = rho > split
    near = ~far
    if not far.any():
        return 0.0

    def bounded(s):
        w = v + s * rho
        return w[far].max() <= w[near].max()

    if not bounded(lo):
        return lo
    if bounded(hi):
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if bounded(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _admissible(case: BoundCase, s: Samples, mask=None) -> np.ndarray:
    ok = case.admits(s.R) & (s.mag > NOISE_FLOOR * s.scale)
    if case.x_power < 0 or case.log_factor or case.n + case.derivative.order >= 2 * case.b:
        ok &= s.x > 0
    if case.log_factor:
        ok &= s.R != 1.0
    if mask is not None:
        ok &= mask
    return ok


def certify_samples(s: Samples, case: BoundCase, holder_factor=None,
                    fit_window=FIT_WINDOW, headroom: float = HEADROOM,
                    sigma: float | None = None) -> EstimateReport:
    """Fit (C, sigma) on the calibration window and check the bound on all samples."""
    hf = np.ones_like(s.t) if holder_factor is None else np.asarray(holder_factor, dtype=float)
    if np.all(s.mag == 0.0):
        return EstimateReport(case, 0.0, 0.0, 0.0, int(s.mag.size), True, {"identically_zero": True})
    ok = _admissible(case, s)
    cal = ok & (s.t >= fit_window[0] * (1 - 1e-12)) & (s.t <= fit_window[1] * (1 + 1e-12))
    if cal.sum() < MIN_SAMPLES:
        raise InsufficientDataError(
            f"case {case.label}: {int(cal.sum())} admissible calibration samples, need {MIN_SAMPLES}")
    with np.errstate(divide="ignore"):
        v = np.log(s.mag) - case.log_shape(s.t, s.x, s.R) - np.log(hf)
    if sigma is None:
        sigma = 0.0
        if case.exponential:
            expo = cal & (s.R >= 1.0)
            if expo.sum() >= 2:
                sigma = SIGMA_SAFETY * _fit_sigma(v[expo], s.rho[expo])
    w = v + (sigma * s.rho if case.exponential else 0.0)
    logC = np.log(headroom) + w[cal].max()
    ratio = np.exp(w[ok] - logC)
    sup = float(ratio.max())
    return EstimateReport(case, float(np.exp(logC)), float(sigma), sup, int(ok.sum()), sup <= 1.0,
                          {"calibration_count": int(cal.sum()), "headroom": headroom})


def certify_bound(field_: KernelField, case: BoundCase, fit_window=FIT_WINDOW,
                  headroom: float = HEADROOM, sigma: float | None = None) -> EstimateReport:
    """Certify a sampled kernel (or derivative) field against a bound shape."""
    if field_.points.shape[-1] != 1:
        raise ConfigurationError("certification is implemented for n = 1 fields")
    s = field_samples(field_, case.alpha, case.b)
    return certify_samples(s, case, None, fit_window, headroom, sigma)


def bound_ratio(report: EstimateReport, s: Samples, mask=None, holder_factor=None) -> float:
    """sup of |K| / bound over a sample subset with the report's fitted constants."""
    case = report.case
    ok = _admissible(case, s, mask)
    if not ok.any():
        return 0.0
    if report.fitted_C == 0.0:
        return 0.0 if np.all(s.mag[ok] == 0.0) else np.inf
    hf = 1.0 if holder_factor is None else np.asarray(holder_factor)[ok]
    logb = (np.log(report.fitted_C) + case.log_shape(s.t[ok], s.x[ok], s.R[ok]) + np.log(hf)
            - (report.fitted_sigma * s.rho[ok] if case.exponential else 0.0))
    return float(np.exp(np.log(s.mag[ok]) - logb).max())


# ---------------------------------------------------------- sampling helpers


DEFAULT_GRID = GridSpec(1, 4.0, 400)


def default_times(count: int = 25) -> np.ndarray:
    """Log-uniform times over [1e-3, 10]; the inner [1e-2, 1] is the fit window."""
    return np.geomspace(1e-3, 10.0, count)


def sample_points(grid: GridSpec, exclude_origin: bool) -> np.ndarray:
    x = grid.points()
    if exclude_origin:
        x = x[np.abs(x[:, 0]) > 0.5 * grid.spacing]
    return x


def certification_field(op: ConstantOperator, alpha, kind: str, beta: int = 0, times=None,
                        grid: GridSpec = DEFAULT_GRID) -> KernelField:
    """Fourier-route field for certification (spectral derivatives, x = 0 dropped when singular)."""
    times = default_times() if times is None else np.asarray(times, dtype=float)
    singular = op.n + beta >= 2 * op.b or op.n >= 2 * op.b
    pts = sample_points(grid, singular)
    return kernel_field(op, alpha, kind, times, pts, "fourier", MultiIndex((beta,)))


def certify_operator(op: ConstantOperator, alpha, kinds=("Z_alpha", "Y_alpha", "dtZ_alpha"),
                     unified: bool = True, times=None, grid: GridSpec = DEFAULT_GRID):
    """All applicable Theorem-1 clauses (and unified forms) for a 1-D operator."""
    alpha = as_alpha(alpha)
    reports = []
    for kind in kinds:
        cases = theorem1_cases(kind, op.n, op.b, alpha)
        if unified and kind != "dtZ_alpha":
            cases += prop4_cases(kind, op.n, op.b, alpha)
        fields = {}
        for case in cases:
            m = case.derivative.order
            if m not in fields:
                fields[m] = certification_field(op, alpha, kind, m, times, grid)
            reports.append(certify_bound(fields[m], case))
    return reports


def unified_implied(report_ge: EstimateReport, report_le: EstimateReport, unified: EstimateReport,
                    s: Samples) -> bool:
    """Check that the unified bound holds with sigma split as in the c' + c'' argument.

    With c'' = sigma_ge / 2 the unified shape, rescaled by its sup over the
    regime samples, must dominate both regime bounds on their samples.
    """
    if not (report_ge.passed and report_le.passed):
        return True
    half = 0.5 * report_ge.fitted_sigma
    rep = certify_samples(s, unified.case, sigma=half)
    return rep.passed


# ----------------------------------------------------------- difference bounds


def _frozen_field(system: VariableSystem, y: float, alpha, kind: str, times, pts, beta: int = 0):
    op = freeze(system, np.array([y]))
    return kernel_field(op, alpha, kind, times, pts, "fourier", MultiIndex((beta,)))


def certify_difference_bound(system: VariableSystem, pairs, case: BoundCase, gamma: float | None = None,
                             times=None, grid: GridSpec = DEFAULT_GRID) -> EstimateReport:
    """|K(t,x;y') - K(t,x;y'')| against the case shape times |y' - y''|^gamma."""
    if system.n != 1:
        raise ConfigurationError("difference certification is implemented for n = 1")
    gamma = system.holder_exponent if gamma is None else gamma
    times = default_times() if times is None else np.asarray(times, dtype=float)
    beta = case.derivative.order
    singular = system.n + beta >= 2 * system.b
    pts = sample_points(grid, singular)
    parts = []
    for y1, y2 in pairs:
        f1 = _frozen_field(system, y1, case.alpha, case.kernel_kind, times, pts, beta)
        f2 = _frozen_field(system, y2, case.alpha, case.kernel_kind, times, pts, beta)
        diff = f1.values - f2.values
        mag = np.linalg.norm(diff, 2, axis=(-2, -1)) if system.N > 1 else np.abs(diff[..., 0, 0])
        ref = np.maximum(f1.norms(), f2.norms())
        s = field_samples(f1, case.alpha, case.b, weights=mag, reference=ref)
        parts.append((s, np.full(s.t.shape, abs(y1 - y2) ** gamma)))
    s = Samples(*(np.concatenate([getattr(p[0], k) for p in parts])
                  for k in ("t", "x", "mag", "scale", "R", "rho")))
    hf = np.concatenate([p[1] for p in parts])
    hcase = BoundCase(**{**case.__dict__, "holder": gamma})
    rep = certify_samples(s, hcase, hf)
    return EstimateReport(hcase, rep.fitted_C, rep.fitted_sigma, rep.sup_ratio, rep.sample_count,
                          rep.passed, {**rep.extra, "pairs": [list(p) for p in pairs]})


def dt_parametrix_integral(system: VariableSystem, alpha, t, x, panels: int = 64,
                           provider=None) -> np.ndarray:
    """int dZ^(0)/dt (t, x - xi; xi) d xi for n = 1.

    The zero-mass term dZ^(0)/dt (t, x - xi; x) is subtracted from the
    integrand, which leaves the same integral with a small, Hoelder-damped
    integrand.  Gauss-Legendre panels over the kernel support, split at xi = x.
    """
    from .levi import ParametrixProvider

    alpha = as_alpha(alpha)
    prov = ParametrixProvider(system, alpha) if provider is None else provider
    gx, gw = leggauss(16)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros((x.size, system.N, system.N), dtype=complex)
    for i, xx in enumerate(x):
        W = prov.extent("dtZ_alpha", xx, 1e-12) * t ** (alpha / (2.0 * system.b))
        edges = xx + W * np.concatenate([-np.linspace(1, 0, panels // 2 + 1)[:-1], np.linspace(0, 1, panels // 2 + 1)])
        xi = (0.5 * np.diff(edges)[:, None] * gx[None, :] + 0.5 * (edges[1:] + edges[:-1])[:, None]).ravel()
        wi = (0.5 * np.diff(edges)[:, None] * gw[None, :]).ravel()
        ref = prov.point_kernel("dtZ_alpha", t, xx - xi, xx)
        for xj, wj, r in zip(xi, wi, ref):
            out[i] += wj * (prov.point_kernel("dtZ_alpha", t, xx - xj, xj)[0] - r)
    return out


def certify_dt_integral(system: VariableSystem, alpha, times=None, x=None,
                        gamma: float | None = None) -> EstimateReport:
    """The integrated time-derivative check |int dZ^(0)/dt d xi| <= C t^{-1 + alpha gamma / 2b}."""
    alpha = as_alpha(alpha)
    gamma = system.holder_exponent if gamma is None else gamma
    times = np.geomspace(1e-2, 1.0, 9) if times is None else np.asarray(times, dtype=float)
    x = np.linspace(-np.pi, np.pi, 8, endpoint=False) if x is None else np.asarray(x, dtype=float)
    from .levi import ParametrixProvider

    prov = ParametrixProvider(system, alpha)
    vals = np.array([[np.linalg.norm(v, 2) for v in dt_parametrix_integral(system, alpha, t, x, provider=prov)]
                     for t in times])
    case = BoundCase("dtZ_integral", MultiIndex((0,)), "unified", "5.2",
                     t_power=-1.0 + alpha * gamma / (2.0 * system.b), n=1, b=system.b, alpha=alpha)
    T, P = vals.shape
    t = np.repeat(times, P)
    if np.all(vals == 0.0):
        return EstimateReport(case, 0.0, 0.0, 0.0, int(vals.size), True, {"identically_zero": True})
    ratio = vals.ravel() * t ** (-case.t_power)
    C = HEADROOM * ratio[t <= times[len(times) // 2]].max()
    sup = float(ratio.max() / C)
    return EstimateReport(case, float(C), 0.0, sup, int(vals.size), sup <= 1.0,
                          {"max_abs": float(vals.max())})


# ------------------------------------------------------------ Levi corrections


def remainder_samples(green, which: str = "V_Z", drop_origin: bool = True) -> Samples:
    """Samples of |V_Z| or |V_Y| (double cell averages) from a Levi GreenPair.

    x is the offset x - xi of the cell centres; every xi cell contributes.
    """
    arr = getattr(green, which)  # (K, O, J, N, N)
    g = green.grid
    K, O, J = arr.shape[:3]
    mag = np.linalg.norm(arr, 2, axis=(-2, -1)) if arr.shape[-1] > 1 else np.abs(arr[..., 0, 0])
    t = np.broadcast_to(g.times[:, None, None], mag.shape)
    x = np.broadcast_to(np.abs(green.offsets * g.spacing)[None, :, None], mag.shape)
    scale = np.broadcast_to(mag.max(axis=(1, 2), keepdims=True), mag.shape)
    keep = x > 0 if drop_origin else np.ones(mag.shape, dtype=bool)
    alpha = green.alpha
    sq = scaling(alpha, green.b, t[keep], x[keep])
    return Samples(t[keep], x[keep], mag[keep], scale[keep], np.asarray(sq.R), np.asarray(sq.rho))


def certify_remainder(green, which: str = "V_Z", beta: int = 0, gamma: float = 1.0,
                      gamma0: float | None = None, fit_window=None) -> EstimateReport:
    """Certify a Levi correction against its bound shape on (0, T].

    The constants of these bounds depend on the horizon T and the corrections
    grow from zero in t, so the fit window defaults to all Levi times.
    """
    case = remainder_case(which, beta, "unified", 1, green.b, green.alpha, gamma, gamma0)
    s = remainder_samples(green, which)
    if fit_window is None:
        times = green.grid.times
        fit_window = (float(times[0]), float(times[-1]))
    return certify_samples(s, case, fit_window=fit_window)
