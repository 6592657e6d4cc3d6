"""Command-line front end: fracparabolic <command> [--config PATH] [--quick] [--output DIR] [--seed N].

Commands: specfun-eval, kernel, xcheck, certify, levi, solve.  Exit status 0 on
success, 1 on configuration errors, 2 on failed certifications or cross-checks,
3 on numerical divergence.  FRACPARABOLIC_THREADS caps the BLAS/OpenMP threads.
"""

from __future__ import annotations

import os

_threads = os.environ.get("FRACPARABOLIC_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import copy
import sys
import time
from pathlib import Path

import numpy as np

from . import estimates, io, kernels, levi, operators, oracle, specfun
from .errors import (
    ConfigurationError,
    DivergenceError,
    EvaluationError,
    FracParabolicError,
    InsufficientDataError,
)
from .grids import GridSpec

COMMANDS = ("specfun-eval", "kernel", "xcheck", "certify", "levi", "solve")

DEFAULTS = {
    "system": "heat",
    "alpha": 0.5,
    "grid": {"half_width": 4.0, "points": 400},
    "times": [0.1, 0.5, 1.0],
    "route": "fourier",
    "kinds": ["Z_alpha", "Y_alpha", "dtZ_alpha"],
    "beta": 0,
    "cases": "all",
    "tolerances": {"xcheck": 1e-5, "levi": 1e-8, "levi_oracle": 1e-2, "oracle": 1e-3},
    "seed": 0,
    "specfun": {"z": {"start": 0.0, "stop": 5.0, "count": 51}, "families": ["1", "alpha", "0"]},
    "xcheck": {"r_range": [0.1, 10.0], "oracle": True},
    "levi": {"cells": 64, "T": 1.0, "steps": 32, "u0": "exp(cos(x))", "f": None,
             "t_eval": [0.25, 0.5, 1.0], "export": ["V_Z"],
             "oracle": {"points": 256, "steps": 2000}, "certify": True},
    "solve": {"T": 1.0, "steps": 200, "u0": "exp(cos(x))", "f": None, "half_width": float(np.pi),
              "points": 128, "every": 10},
}

# the quick profile pins every grid to a suite that finishes in minutes
QUICK = {
    "grid": {"half_width": 4.0, "points": 200},
    "times": [0.1, 1.0],
    "levi": {"cells": 32, "steps": 16, "oracle": {"points": 256, "steps": 1000}},
    "solve": {"steps": 100, "points": 64},
    "specfun": {"z": {"start": 0.0, "stop": 5.0, "count": 21}},
}

EXIT_OK, EXIT_CONFIG, EXIT_CERT, EXIT_DIVERGED = 0, 1, 2, 3

BUILTIN_SYSTEMS = {
    "heat": operators.heat_1d,
    "coupled": operators.coupled_1d,
    "biharmonic": operators.biharmonic_1d,
    "sine": operators.sine_system,
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def build_config(command: str, config_path=None, quick: bool = False, seed=None, overrides=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if quick:
        cfg = _merge(cfg, QUICK)
    if config_path is not None:
        cfg = _merge(cfg, io.read_json(config_path))
    if overrides:
        cfg = _merge(cfg, overrides)
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg["command"] = command
    cfg["quick"] = bool(quick)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    specfun.as_alpha(cfg["alpha"])
    for k, v in cfg["tolerances"].items():
        if not float(v) > 0:
            raise ConfigurationError(f"tolerance {k} must be positive")
    if any(float(t) <= 0 for t in cfg["times"]):
        raise ConfigurationError("times must be positive")
    sysref = cfg["system"]
    if isinstance(sysref, str) and sysref not in BUILTIN_SYSTEMS and not sysref.lstrip().startswith("{"):
        if not Path(sysref).exists():
            raise ConfigurationError(f"system file {sysref} does not exist")


def load_system(ref):
    if isinstance(ref, str) and ref in BUILTIN_SYSTEMS:
        return BUILTIN_SYSTEMS[ref]()
    return operators.load_system(ref)


def _grid(cfg) -> GridSpec:
    g = cfg["grid"]
    return GridSpec(1, float(g["half_width"]), int(g["points"]))


def _linspace(spec) -> np.ndarray:
    if isinstance(spec, dict):
        return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["count"]))
    return np.asarray(spec, dtype=float)


def _expression(text):
    if text is None:
        return None
    f = operators.compile_expression(str(text), 1)
    return lambda x: np.broadcast_to(np.asarray(f(np.asarray(x, dtype=float).reshape(-1, 1)), dtype=float),
                                     (np.size(x),))


def _constant_operator(sys_, what: str):
    if not isinstance(sys_, operators.ConstantOperator):
        raise ConfigurationError(f"{what} needs a constant-coefficient system")
    operators.require_parabolic(sys_)
    return sys_


# ------------------------------------------------------------------ commands


def cmd_specfun(cfg, out: Path, digest: str) -> int:
    al = specfun.as_alpha(cfg["alpha"])
    z = _linspace(cfg["specfun"]["z"])
    io.write_table(out / "specfun_wright.csv", "wright_phi",
                   {"alpha": np.full(z.shape, al), "z": z, "Phi": specfun.wright_phi(al, z),
                    "Phi_half": specfun.wright_phi(al / 2.0, z)}, digest)
    t = np.asarray(cfg["times"], dtype=float)
    T, S = np.meshgrid(t, z, indexing="ij")
    io.write_table(out / "specfun_subordination.csv", "subordination",
                   {"t": T.ravel(), "s": S.ravel(),
                    "phi": specfun.subordination_kernel("phi", al, T, S).ravel(),
                    "psi": specfun.subordination_kernel("psi", al, T, S).ravel(),
                    "nu": specfun.subordination_kernel("nu", al, T, S).ravel()}, digest)
    rows = {"beta": [], "z": [], "re": [], "im": []}
    for fam in cfg["specfun"]["families"]:
        beta = specfun._family_beta(al, fam)
        for zz in z:
            v = complex(specfun.mittag_leffler_scalar(al, fam, -zz))
            rows["beta"].append(beta)
            rows["z"].append(-zz)
            rows["re"].append(v.real)
            rows["im"].append(v.imag)
    io.write_table(out / "specfun_mittag_leffler.csv", "mittag_leffler", rows, digest, {"alpha": al})
    print(f"specfun tables written to {out}")
    return EXIT_OK


def cmd_kernel(cfg, out: Path, digest: str) -> int:
    op = _constant_operator(load_system(cfg["system"]), "kernel")
    grid = _grid(cfg)
    for kind in cfg["kinds"]:
        if kind == "Z":
            for s in cfg["times"]:
                f = kernels.classical_fscp(op, float(s), grid)
                io.write_field(out / f"kernel_Z_s{s:g}.csv", f, digest)
            continue
        f = kernels.kernel_field(op, cfg["alpha"], kind, cfg["times"], grid, cfg["route"], int(cfg["beta"]))
        io.write_field(out / f"kernel_{kind}.csv", f, digest)
        print(f"{kind}: {f.values.shape[0]} times x {f.values.shape[1]} points, max |K| = {f.norms().max():.6g}")
    return EXIT_OK


def route_disagreement(op, alpha, kind, times, grid, r_range=(0.1, 10.0), beta: int = 0) -> dict:
    """sup over R in r_range of |sub - fourier| / |fourier| (operator norms)."""
    pts = grid.points()
    pts = pts[np.abs(pts[:, 0]) > 0]
    a = kernels.kernel_field(op, alpha, kind, times, pts, "subordination", beta)
    b = kernels.kernel_field(op, alpha, kind, times, pts, "fourier", beta)
    t = np.repeat(np.asarray(times, dtype=float), len(pts))
    sq = kernels.scaling(alpha, op.b, t, np.tile(np.abs(pts[:, 0]), len(times)))
    sel = (np.asarray(sq.R) >= r_range[0]) & (np.asarray(sq.R) <= r_range[1])
    diff = np.linalg.norm((a.values - b.values).reshape(len(t), op.N, op.N), 2, axis=(1, 2))
    ref = b.norms().ravel()
    rel = diff[sel] / ref[sel]
    return {"kind": kind, "beta": beta, "samples": int(sel.sum()),
            "sup_relative": float(rel.max()) if rel.size else 0.0}


def oracle_heat_check(op, alpha, T: float = 0.5, width: float = 0.25, steps: int = 400,
                      half_width: float = 8.0, points: int = 256) -> dict:
    """Oracle trajectory vs the Z_alpha convolution for a narrow Gaussian."""
    grid = GridSpec(1, half_width, points)
    x = grid.points()[:, 0]
    u0 = np.exp(-x**2 / (2 * width**2))
    tr = oracle.solve_ivp(op, u0[:, None].repeat(op.N, 1) if op.N > 1 else u0, None, T=T, alpha=alpha,
                          steps=steps, grid=grid)
    h = grid.spacing
    d = h * np.arange(-(points - 1), points)
    K = kernels.kernel_field(op, alpha, "Z_alpha", [T], d[:, None], "fourier").values[0]
    idx = np.arange(points)[:, None] - np.arange(points)[None, :] + points - 1
    u0v = np.broadcast_to(u0[:, None], (points, op.N))
    conv = h * np.einsum("pqab,qb->pa", K[idx], u0v)
    err = float(np.max(np.abs(tr.at(T) - conv)))
    return {"T": T, "sup_error": err, "steps": steps, "points": points}


def cmd_xcheck(cfg, out: Path, digest: str) -> int:
    op = _constant_operator(load_system(cfg["system"]), "xcheck")
    tol = float(cfg["tolerances"]["xcheck"])
    rows = [route_disagreement(op, cfg["alpha"], k, cfg["times"], _grid(cfg), cfg["xcheck"]["r_range"])
            for k in cfg["kinds"] if k != "Z"]
    ok = all(r["sup_relative"] <= tol for r in rows)
    report = {"routes": rows, "tolerance": tol}
    if cfg["xcheck"].get("oracle"):
        o = oracle_heat_check(op, cfg["alpha"])
        o["tolerance"] = float(cfg["tolerances"]["oracle"])
        ok = ok and o["sup_error"] <= o["tolerance"]
        report["oracle"] = o
    report["pass"] = ok
    io.write_json(out / "xcheck.json", report, digest)
    for r in rows:
        print(f"{r['kind']:10s} sup rel route disagreement {r['sup_relative']:.3e} ({r['samples']} samples)")
    if "oracle" in report:
        print(f"oracle vs Z_alpha convolution: sup error {report['oracle']['sup_error']:.3e}")
    return EXIT_OK if ok else EXIT_CERT


def _summary(reports) -> str:
    lines = [f"{'label':6s} {'kind':10s} {'beta':>4s} {'regime':8s} {'C':>11s} {'sigma':>7s} {'ratio':>7s} pass"]
    for r in reports:
        c = r.case
        lines.append(f"{c.label:6s} {c.kernel_kind:10s} {c.derivative.order:4d} {c.regime:8s} "
                     f"{r.fitted_C:11.4e} {r.fitted_sigma:7.3f} {r.sup_ratio:7.4f} {'yes' if r.passed else 'NO'}")
    return "\n".join(lines)


def cmd_certify(cfg, out: Path, digest: str) -> int:
    sys_ = load_system(cfg["system"])
    al = specfun.as_alpha(cfg["alpha"])
    reports = []
    # parabolicity is certified on sampled unit frequencies only; the rows record how
    prov = {"sphere_samples": 256}
    if isinstance(sys_, operators.ConstantOperator):
        prov["delta"] = operators.require_parabolic(sys_)
        kinds = [k for k in cfg["kinds"] if k != "Z"]
        unified = cfg["cases"] in ("all", "prop4")
        reps = estimates.certify_operator(sys_, al, kinds, unified)
        if cfg["cases"] == "prop4":
            reps = [r for r in reps if r.case.regime == "unified"]
        reports += reps
    else:
        ys = np.linspace(-np.pi, np.pi, 9)
        prov["delta"] = min(operators.require_parabolic(operators.freeze(sys_, np.array([y]), check=False))
                            for y in ys)
        prov["frozen_points"] = ys.tolist()
        rng = np.random.default_rng(int(cfg["seed"]))
        period = sys_.period or 2.0 * np.pi
        pairs = [tuple(sorted(p)) for p in rng.uniform(0.0, period, size=(4, 2)).round(12).tolist()]
        for kind in [k for k in cfg["kinds"] if k in ("Z_alpha", "Y_alpha")]:
            case = estimates.select_case(kind, 0, "unified", 1, sys_.b, al)
            reports.append(estimates.certify_difference_bound(sys_, pairs, case))
        reports.append(estimates.certify_dt_integral(sys_, al))
    io.write_jsonl(out / "certify.jsonl", [{**r.to_dict(), "parabolicity": prov} for r in reports], digest)
    print(_summary(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CERT


def _levi_grid(sys_, lc) -> levi.LeviGrid:
    period = sys_.period if isinstance(sys_, operators.VariableSystem) else None
    if period is None:
        period = float(lc.get("period", 2.0 * np.pi))
    return levi.LeviGrid.periodic(period, int(lc["cells"]), float(lc["T"]), int(lc["steps"]))


def levi_oracle_error(run: levi.LeviRun, sys_, alpha, u0, t_eval, points: int, steps: int) -> list:
    """sup |u_levi - u_oracle| at each t in t_eval (oracle on a grid containing the Levi cells)."""
    g = run.disc.grid
    M = g.period_cells
    if points % M:
        raise ConfigurationError("oracle points must be a multiple of the Levi cells")
    period = M * g.spacing
    grid = GridSpec(1, period / 2.0, points)
    x = grid.points()[:, 0]
    u_levi = levi.cauchy_solve(run, lambda xx: u0(xx)[:, None], None, t_eval)
    tr = oracle.solve_ivp(sys_, u0(x)[:, None], None, T=max(t_eval), alpha=alpha, steps=steps, grid=grid)
    k = (np.arange(M) * (points // M) + points // 2) % points
    errs = []
    for i, t in enumerate(t_eval):
        errs.append(float(np.max(np.abs(u_levi[i, :, 0] - tr.at(t)[k, 0]))))
    return errs


def cmd_levi(cfg, out: Path, digest: str) -> int:
    sys_ = load_system(cfg["system"])
    al = specfun.as_alpha(cfg["alpha"])
    lc = cfg["levi"]
    grid = _levi_grid(sys_, lc)
    t0 = time.perf_counter()
    run = levi.levi_run(sys_, al, grid, float(cfg["tolerances"]["levi"]))
    g = run.disc.grid
    t_eval = [float(t) for t in lc["t_eval"]]
    u0 = _expression(lc["u0"])
    f = _expression(lc.get("f"))
    src = None if f is None else (lambda t, x: f(x)[:, None])
    u = levi.cauchy_solve(run, lambda x: u0(x)[:, None], src, t_eval)
    report = {
        "grid": g.to_dict(),
        "Q": {"iterations": run.Q.iteration_count, "residual": run.Q.residual,
              "truncation": run.Q.truncation},
        "Phi": {"iterations": run.Phi.iteration_count, "residual": run.Phi.residual,
                "truncation": run.Phi.truncation},
        "max_abs_V_Z": float(np.abs(run.green.V_Z).max()),
        "max_abs_V_Y": float(np.abs(run.green.V_Y).max()),
    }
    ok = True
    if lc.get("certify") and report["max_abs_V_Z"] > 0:
        rep = estimates.certify_remainder(run.green, "V_Z", 0, sys_.holder_exponent)
        report["V_Z_certification"] = rep.to_dict()
        ok = ok and rep.passed
    oc = lc.get("oracle")
    if oc and f is None:
        errs = levi_oracle_error(run, sys_, al, u0, t_eval, int(oc["points"]), int(oc["steps"]))
        report["oracle_sup_error"] = dict(zip([f"{t:g}" for t in t_eval], errs))
        report["oracle_tolerance"] = float(cfg["tolerances"]["levi_oracle"])
        ok = ok and max(errs) <= report["oracle_tolerance"]
    report["pass"] = ok
    xs = g.xi
    io.atomic_write(out / "levi_solution.csv", io.field_csv("cauchy_solution", t_eval, xs[:, None],
                                                            u[..., None], digest, {"grid": g.to_dict()}))
    offs = run.disc.off * g.spacing
    for name in lc.get("export", []):
        if name in ("Q", "Phi"):
            arr = getattr(run, name).samples
        elif name in ("V_Z", "V_Y", "Z1", "Y1", "Z0", "Y0"):
            arr = getattr(run.green, name)
        else:
            raise ConfigurationError(f"unknown Levi export {name!r}")
        # rows: t, x - xi offset, xi, i, j (double cell averages)
        io.atomic_write(out / f"levi_{name}.csv",
                        io.field_csv(f"levi_{name}", g.times, offs[:, None], arr, digest,
                                     {"grid": g.to_dict(), "x_is_offset": True}, xi=xs))
    io.write_json(out / "levi_report.json", report, digest)
    print(f"Levi run: {len(g.xi_cells)} cells, {g.steps} steps, window {g.window}, "
          f"Q iterations {run.Q.iteration_count}, Phi iterations {run.Phi.iteration_count}, "
          f"{time.perf_counter() - t0:.1f} s")
    if "oracle_sup_error" in report:
        print("oracle sup error: " + ", ".join(f"t={k}: {v:.3e}" for k, v in report["oracle_sup_error"].items()))
    return EXIT_OK if ok else EXIT_CERT


def cmd_solve(cfg, out: Path, digest: str) -> int:
    sys_ = load_system(cfg["system"])
    sc = cfg["solve"]
    grid = GridSpec(1, float(sc["half_width"]), int(sc["points"]))
    x = grid.points()[:, 0]
    u0 = _expression(sc["u0"])
    f = _expression(sc.get("f"))
    N = sys_.N
    u0v = np.repeat(u0(x)[:, None], N, axis=1)
    src = None if f is None else (lambda t, p: np.repeat(f(p[:, 0])[:, None], N, axis=1))
    tr = oracle.solve_ivp(sys_, u0v, src, T=float(sc["T"]), alpha=cfg["alpha"], steps=int(sc["steps"]),
                          grid=grid)
    every = max(1, int(sc.get("every", 1)))
    sel = np.arange(0, len(tr.times), every)
    if sel[-1] != len(tr.times) - 1:
        sel = np.append(sel, len(tr.times) - 1)
    vals = tr.values[sel][..., None]  # (T, P, N, 1)
    meta = {"grid": grid.to_dict(), "dt": tr.meta["dt"], "steps": tr.meta["steps"],
            "scheme_order": 2.0 - tr.meta["alpha"], "corrected_first_step": tr.meta["corrected"]}
    io.atomic_write(out / "trajectory.csv", io.field_csv("trajectory", tr.times[sel], x[:, None], vals,
                                                         digest, meta))
    print(f"trajectory: {len(sel)} saved steps, max |u(T)| = {np.abs(tr.values[-1]).max():.6g}")
    return EXIT_OK


HANDLERS = {"specfun-eval": cmd_specfun, "kernel": cmd_kernel, "xcheck": cmd_xcheck,
            "certify": cmd_certify, "levi": cmd_levi, "solve": cmd_solve}


def run(command: str, config_path=None, quick: bool = False, output="fracparabolic_out", seed=None,
        overrides=None) -> int:
    """Run one command and return its exit status; errors are reported on stderr."""
    try:
        cfg = build_config(command, config_path, quick, seed, overrides)
        out = Path(output)
        digest = io.config_digest(cfg)
        io.write_json(out / "config.json", {"config": cfg}, digest)
        return HANDLERS[command](cfg, out, digest)
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except InsufficientDataError as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_CERT
    except EvaluationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FracParabolicError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="fracparabolic", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=str, default=None, help="JSON run configuration")
    p.add_argument("--quick", action="store_true", help="small grids for a fast suite")
    p.add_argument("--output", type=str, default="fracparabolic_out", help="artifact directory")
    p.add_argument("--seed", type=int, default=None, help="seed for sampled certifications")
    args = p.parse_args(argv)
    return run(args.command, args.config, args.quick, args.output, args.seed)


if __name__ == "__main__":
    sys.exit(main())
