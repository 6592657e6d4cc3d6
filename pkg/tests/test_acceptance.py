"""Acceptance criteria 1-9; each test records one PASS/FAIL line shown in the terminal summary."""

import json
import time

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import gamma

from fracparabolic import cli, estimates, io, kernels, levi, oracle
from fracparabolic import specfun as sf
from fracparabolic.grids import GridSpec
from fracparabolic.operators import VariableSystem, biharmonic_1d, coupled_1d, heat_1d, sine_system

from .conftest import ACCEPTANCE, dissipative

OPERATORS = {"heat": heat_1d, "coupled": coupled_1d, "biharmonic": biharmonic_1d}


def record(n, ok, elapsed, limit, detail):
    ok = bool(ok) and (limit is None or elapsed < limit)
    lim = "" if limit is None else f" (limit {limit:g} s)"
    ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}; {elapsed:.1f} s{lim}")
    return ok


def half_line_integral(f, zeta, upper, panels=100):
    edges = np.concatenate([[0.0], np.geomspace(1e-8, upper, panels)])
    x, w = leggauss(20)
    mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
    s = (mid[:, None] + half[:, None] * x).ravel()
    return float(np.sum((half[:, None] * w).ravel() * f(s) * np.exp(-zeta * s)))


def test_criterion_1_laplace_identities():
    t0 = time.perf_counter()
    err = 0.0
    for alpha in (0.3, 0.5, 0.7):
        for zeta in (0.5, 1.0, 2.0, 5.0):
            up = 60.0 / zeta
            pairs = [(lambda s: sf.wright_phi(alpha, s), "1"), (lambda s: sf.wright(0.0, alpha, s), "alpha"),
                     (lambda s: sf.wright(-alpha, alpha, s), "0")]
            for f, fam in pairs:
                ref = sf.mittag_leffler_scalar(alpha, fam, -zeta).real
                err = max(err, abs(half_line_integral(f, zeta, up) - ref))
        mass = half_line_integral(lambda s: sf.wright_phi(alpha, s), 0.0, 400.0)
        err = max(err, abs(mass - 1.0))
    ok = record(1, err <= 1e-6, time.perf_counter() - t0, 10, f"max Laplace/mass error {err:.2e} (tol 1e-6)")
    assert ok


def test_criterion_2_matrix_mittag_leffler():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240517)
    err = 0.0
    for N in (2, 4):
        for _ in range(4):
            B = dissipative(rng, N, rng.uniform(0.2, 1.0))
            for alpha in (0.3, 0.5, 0.7):
                for fam in ("1", "alpha", "0"):
                    a = sf.mittag_leffler_matrix(alpha, fam, B)
                    b = sf.mittag_leffler_matrix_series(alpha, fam, B)
                    err = max(err, float(np.max(np.abs(a - b))))
    # |H| delta^2 along B = s B0, s in [1, 1e3].  Growth is measured against s = 1;
    # the max/min spread is checked where the next term 1/Gamma(beta - 2 alpha) is nonzero
    growth, spread = 0.0, 0.0
    for N in (2, 4):
        B0 = dissipative(rng, N, 1.0)
        d0 = sf.dissipativity_constant(B0)
        for alpha in (0.3, 0.5, 0.7):
            for fam in ("1", "alpha", "0"):
                p = np.array([np.linalg.norm(sf.ml_asymptotic_remainder(alpha, fam, s * B0), 2) * (s * d0) ** 2
                              for s in np.geomspace(1.0, 1e3, 13)])
                growth = max(growth, p.max() / p[0])
                beta = {"1": 1.0, "alpha": alpha, "0": 0.0}[fam]
                if abs(1.0 / gamma(beta - 2 * alpha)) > 1e-12:
                    spread = max(spread, p.max() / p.min())
    ok = record(2, err <= 1e-7 and growth < 10 and spread < 10, time.perf_counter() - t0, 30,
                f"contour vs series {err:.2e} (tol 1e-7); |H|delta^2 growth {growth:.2f}, spread {spread:.2f} (< 10)")
    assert ok


def test_criterion_3_kernel_closed_forms():
    t0 = time.perf_counter()
    op = heat_1d()
    x = np.linspace(-4.0, 4.0, 50)
    rel = 0.0
    for alpha in (0.3, 0.5, 0.7):
        t = 0.5
        ref = 0.5 * t ** (-alpha / 2) * sf.wright_phi(alpha / 2, np.abs(x) * t ** (-alpha / 2))
        for route in ("subordination", "fourier"):
            v = kernels.kernel_field(op, alpha, "Z_alpha", [t], x[:, None], route).values[0, :, 0, 0].real
            rel = max(rel, float(np.max(np.abs(v - ref) / np.abs(ref))))
    xs = [0.1, 0.5, 1.0, 2.0, 5.0]
    g_err = max(abs(kernels.elliptic_green(op, [r])[0, 0].real - 0.5 * np.exp(-r)) / (0.5 * np.exp(-r)) for r in xs)
    ok = record(3, rel <= 1e-6 and g_err <= 1e-8, time.perf_counter() - t0, 30,
                f"Z_alpha closed form rel {rel:.2e} (tol 1e-6); elliptic Green rel {g_err:.2e} (tol 1e-8)")
    assert ok


def test_criterion_4_route_equivalence():
    t0 = time.perf_counter()
    grid = GridSpec(1, 4.0, 200)
    worst = {}
    for name, mk in OPERATORS.items():
        for kind in ("Z_alpha", "Y_alpha"):
            r = cli.route_disagreement(mk(), 0.5, kind, [0.1, 0.5, 1.0], grid, (0.1, 10.0))
            assert r["samples"] > 0
            worst[f"{name}/{kind}"] = r["sup_relative"]
    sup = max(worst.values())
    ok = record(4, sup <= 1e-5, time.perf_counter() - t0, 120,
                f"sup relative route disagreement {sup:.2e} (tol 1e-5) over {len(worst)} operator/kernel pairs")
    assert ok


def test_criterion_5_normalizations():
    t0 = time.perf_counter()
    err = 0.0
    alpha = 0.5
    for mk in OPERATORS.values():
        op = mk()
        I = np.eye(op.N)
        for route in ("fourier", "subordination"):
            for t in (0.1, 0.5, 1.0):
                z = kernels.spatial_integral(op, alpha, "Z_alpha", t, route)
                y = kernels.spatial_integral(op, alpha, "Y_alpha", t, route)
                err = max(err, np.abs(z - I).max(), np.abs(y - t ** (alpha - 1) / gamma(alpha) * I).max())
    ok = record(5, err <= 1e-6, time.perf_counter() - t0, None, f"max normalization error {err:.2e} (tol 1e-6)")
    assert ok


def test_criterion_6_estimate_certification():
    t0 = time.perf_counter()
    count, failed = 0, []
    for name, mk in OPERATORS.items():
        for r in estimates.certify_operator(mk(), 0.5):
            count += 1
            if not r.passed or (r.case.exponential and not r.fitted_sigma > 0):
                failed.append(f"{name}:{r.case.label}")
    sys_ = sine_system()
    pairs = [(0.0, 0.5), (1.0, 3.0), (2.0, 2.1)]
    for kind in ("Z_alpha", "Y_alpha"):
        case = estimates.select_case(kind, 0, "unified", 1, 1, 0.5)
        r = estimates.certify_difference_bound(sys_, pairs, case)
        count += 1
        if not (r.passed and r.case.holder == sys_.holder_exponent):
            failed.append(f"difference:{kind}")
    r = estimates.certify_dt_integral(sys_, 0.5)
    count += 1
    if not r.passed:
        failed.append("dt integral")
    ok = record(6, not failed, time.perf_counter() - t0, 180,
                f"{count - len(failed)}/{count} bound clauses certified" + (f", failed {failed}" if failed else ""))
    assert ok


def test_criterion_7_levi(tmp_path):
    t0 = time.perf_counter()
    const = levi.levi_run(VariableSystem.from_constant(heat_1d()), 0.5, levi.LeviGrid.periodic(2 * np.pi, 32, 1.0, 16))
    zeros = all(not np.any(a) for a in (const.Q.samples, const.Phi.samples, const.green.V_Z, const.green.V_Y))
    code = cli.run("levi", None, True, tmp_path, overrides={"system": "sine"})
    rep = json.loads((tmp_path / "levi_report.json").read_text())
    errs = rep["oracle_sup_error"]
    cert = rep["V_Z_certification"]
    ok = zeros and code == 0 and max(errs.values()) <= 1e-2 and cert["pass"] and cert["case"]["label"] == "2.26"
    ok = record(7, ok, time.perf_counter() - t0, 300,
                f"constant case zero {zeros}; oracle sup error "
                + ", ".join(f"t={k}: {v:.2e}" for k, v in errs.items()) + f" (tol 1e-2); V_Z 2.26 pass {cert['pass']}")
    assert ok


def test_criterion_8_oracle():
    # the L1 order 2 - alpha is approached from below, so >= 1.3 is attainable for alpha < 0.7;
    # alpha = 0.7 is reported but not asserted
    t0 = time.perf_counter()
    lam = -1.0
    rates = {}
    for alpha in (0.3, 0.5, 0.7):
        ex = sf.mittag_leffler_scalar(alpha, 1, lam).real
        errs = [abs(oracle.solve_ivp(np.array([[lam]]), 1.0, None, alpha=alpha, T=1.0, steps=K).values[-1, 0, 0] - ex)
                for K in (160, 320, 640, 1280)]
        rates[alpha] = float(oracle.observed_order(errs)[-1])
    g = GridSpec(1, np.pi, 32)
    zero = all(not np.any(oracle.solve_ivp(s, np.zeros((32, s.N)), None, alpha=0.5, T=1.0, steps=20, grid=g).values)
               for s in (heat_1d(), coupled_1d(), sine_system()))
    ok = record(8, rates[0.3] >= 1.3 and rates[0.5] >= 1.3 and zero, time.perf_counter() - t0, None,
                "ODE order " + ", ".join(f"alpha {a}: {r:.3f}" for a, r in rates.items())
                + f" (>= 1.3 asserted for alpha < 0.7); zero data exactly zero {zero}")
    assert ok


def test_criterion_9_determinism(tmp_path):
    t0 = time.perf_counter()
    files = {"specfun-eval": ["specfun_wright.csv", "specfun_subordination.csv"],
             "kernel": ["kernel_Z_alpha.csv", "kernel_Y_alpha.csv", "kernel_dtZ_alpha.csv"],
             "solve": ["trajectory.csv"]}
    same = True
    for cmd, names in files.items():
        for d in ("a", "b"):
            assert cli.run(cmd, None, True, tmp_path / cmd / d, seed=3) == 0
        for n in names:
            same &= io.csv_body(tmp_path / cmd / "a" / n) == io.csv_body(tmp_path / cmd / "b" / n)
    ok = record(9, same, time.perf_counter() - t0, None, f"byte-identical CSV bodies across reruns {same}")
    assert ok
