"""Command-line runner: JSON configs in, CSV/JSON artifacts and a manifest out.

Exit codes: 0 every check passed; 1 a check failed with converged solvers;
2 a control target was missed after CG ran out of iterations; 3 configuration
error; 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from .control import Approx, ControlProblem, Exact, Null, assemble_gramian, minimal_norm_check, \
    solve_dual, target_tolerance
from .dynamics import gaussian_average, propagate_free, transport_average_demo, TimeGrid
from .errors import ConfigurationError, DomainError
from .export import config_hash, versions, write_csv, write_json
from .finite_dim import finite_dim_averaged_demo
from .geometry import GeometrySpec
from .kernels import MultiplierKernel, admissible_kernels
from .montecarlo import McConfig, mc_controlled_average, mc_multiplier_grid, mc_second_moment
from .observability import (build_telescope, factorization_identity_check, fractional_study,
                            ratio_bound, spectral_inequality_fit)
from .spectral import Boundary, Interior, SpectralState, eigenvalues

EXIT_OK, EXIT_CHECK, EXIT_RESOURCES, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2, 3, 4


# ---------------------------------------------------------------- config helpers


def section(cfg, name: str, allowed: dict, required=()) -> dict:
    """Merge cfg over defaults, rejecting unknown and missing keys."""
    if cfg is None:
        cfg = {}
    if not isinstance(cfg, dict):
        raise ConfigurationError(f"{name}: expected an object")
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ConfigurationError(f"{name}: unknown keys {unknown}")
    missing = [k for k in required if k not in cfg and allowed.get(k) is None]
    if missing:
        raise ConfigurationError(f"{name}: missing keys {missing}")
    out = dict(allowed)
    out.update(cfg)
    return out


def parse_kernel(raw) -> MultiplierKernel:
    raw = section(raw, "kernel", {"law": None, "kind": None}, ("law", "kind"))
    return MultiplierKernel.parse(str(raw["law"]), str(raw["kind"]))


def parse_state(raw, n: int) -> SpectralState:
    """List of reals, {"re": [...], "im": [...]}, {"unit": j} or {"harmonic": M} (sum_{j<=M} e_j / j)."""
    c = np.zeros(n, dtype=complex)
    if raw is None:
        return SpectralState(c)
    if isinstance(raw, list):
        v = np.asarray(raw, dtype=float)
        if v.size > n:
            raise ConfigurationError("state has more coefficients than modes")
        c[:v.size] = v
        return SpectralState(c)
    if not isinstance(raw, dict) or len(raw) == 0:
        raise ConfigurationError("bad state description")
    raw = section(raw, "state", {"re": [], "im": [], "unit": 0, "harmonic": 0})
    if raw["unit"]:
        return SpectralState.unit(int(raw["unit"]), n)
    if raw["harmonic"]:
        m = int(raw["harmonic"])
        if not 1 <= m <= n:
            raise ConfigurationError("harmonic count outside 1..N")
        c[:m] = 1.0 / np.arange(1, m + 1)
        return SpectralState(c)
    re, im = np.asarray(raw["re"], dtype=float), np.asarray(raw["im"], dtype=float)
    if re.size > n or im.size > n:
        raise ConfigurationError("state has more coefficients than modes")
    c[:re.size] += re
    c[:im.size] += 1j * im
    return SpectralState(c)


def parse_geometry(raw) -> GeometrySpec:
    raw = section(raw, "geometry", {"observation": None, "time_set": None, "T": None},
                   ("observation", "time_set", "T"))
    obs = section(raw["observation"], "observation", {"interior": None, "boundary": None})
    if (obs["interior"] is None) == (obs["boundary"] is None):
        raise ConfigurationError("observation needs exactly one of interior / boundary")
    op = Interior(obs["interior"]) if obs["interior"] is not None else Boundary(int(obs["boundary"]))
    return GeometrySpec(op, raw["time_set"], float(raw["T"]))


def parse_mc(raw, seed, threads) -> McConfig:
    raw = section(raw, "mc", {"samples": 10**4, "seed": 20240611, "block_size": 8192})
    return McConfig(int(raw["samples"]), int(seed if seed is not None else raw["seed"]),
                    int(threads or 1), int(raw["block_size"]))


def parse_objective(raw, n: int):
    raw = section(raw, "objective", {"type": None, "y1": None, "epsilon": None, "projection_dim": 0},
                   ("type",))
    kind = str(raw["type"]).lower()
    if kind == "null":
        return Null()
    if kind == "exact":
        return Exact(parse_state(raw["y1"], n))
    if kind == "approx":
        if raw["epsilon"] is None:
            raise ConfigurationError("approx objective needs epsilon")
        target = parse_state(raw["y1"], n) if raw["y1"] is not None else None
        return Approx(float(raw["epsilon"]), int(raw["projection_dim"]), target)
    raise ConfigurationError(f"unknown objective type {raw['type']!r}")


class Run:
    """Collects checks and artifacts for one command."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.checks: dict[str, bool] = {}
        self.files: list[str] = []
        self.exit_code = EXIT_OK
        self.findings_only = False

    def check(self, name, ok):
        self.checks[name] = bool(ok)

    def csv(self, name, header, rows):
        write_csv(self.out / name, header, rows)
        self.files.append(name)

    def json(self, name, obj):
        write_json(self.out / name, obj)
        self.files.append(name)

    def status(self) -> int:
        if self.exit_code != EXIT_OK or self.findings_only:
            return self.exit_code
        return EXIT_OK if all(self.checks.values()) else EXIT_CHECK


# ---------------------------------------------------------------- commands


def cmd_multiplier(cfg, run: Run, seed=None, threads=None):
    cfg = section(cfg, "multiplier", {
        "kernels": [{"law": "exponential", "kind": "heat"}, {"law": "uniform(1,2)", "kind": "schrodinger"},
                    {"law": "normal", "kind": "schrodinger"}],
        "mode_count": 5, "times": [0.0, 0.05, 0.1, 0.3, 1.0], "mc": {"samples": 10**5}})
    kernels = [parse_kernel(k) for k in cfg["kernels"]]
    n = int(cfg["mode_count"])
    times = np.asarray(cfg["times"], dtype=float)
    lam = eigenvalues(n)
    rows, reports = [], []
    t0_ok = True
    mc = parse_mc(cfg["mc"], seed, threads)
    for k in kernels:
        desc = k.describe()
        tab = k(lam[:, None], times[None, :])
        t0_ok &= bool(np.all(tab[:, times == 0] == 1.0))
        for j in range(n):
            for i, t in enumerate(times):
                rows.append((desc["law"], desc["kind"], j + 1, t, tab[j, i].real, tab[j, i].imag))
        jj, tt = np.meshgrid(np.arange(n), np.arange(times.size), indexing="ij")
        ests = mc_multiplier_grid(k, lam[jj.ravel()], times[tt.ravel()], mc)
        for e, j, i in zip(ests, jj.ravel(), tt.ravel()):
            reports.append({"law": desc["law"], "kind": desc["kind"], "quantity": "multiplier", "j": int(j + 1),
                            "lambda": float(lam[j]), "t": float(times[i]), **e.report(tab[j, i])})
    run.csv("multiplier.csv", ("law", "kind", "j", "t", "re", "im"), rows)
    run.json("mc_report.json", reports)
    run.csv("mc_report.csv", ("law", "kind", "quantity", "lambda", "t", "closed_re", "closed_im", "mc_re", "mc_im",
                              "mc_sd", "z_score", "pass"),
            ((r["law"], r["kind"], r["quantity"], r["lambda"], r["t"], *r["closed_form"], *r["mc_mean"],
              r["mc_sd"], r["z_score"], r["pass"]) for r in reports))
    run.check("t0_column_ones", t0_ok)
    run.check("mc_all_pass", all(r["pass"] for r in reports))


def cmd_propagate(cfg, run: Run, seed=None, threads=None):
    cfg = section(cfg, "propagate", {"kernel": {"law": "cauchy", "kind": "schrodinger"}, "mode_count": 8,
                                     "y0": {"harmonic": 8}, "T": 1.0, "nodes": 11})
    k = parse_kernel(cfg["kernel"])
    n = int(cfg["mode_count"])
    y0 = parse_state(cfg["y0"], n)
    grid = TimeGrid.uniform(float(cfg["T"]), int(cfg["nodes"]))
    traj = propagate_free(y0, k, grid)
    run.csv("trajectory.csv", ("t", "j", "re", "im"), traj.rows())
    run.json("trajectory_meta.json", {"kernel": k.describe(), "grid": grid.nodes, "mode_count": n})
    run.check("initial_state", np.max(np.abs(traj.coeffs[0] - y0.coeffs)) <= 1e-14)


def cmd_control(cfg, run: Run, seed=None, threads=None):
    cfg = section(cfg, "control", {
        "kernel": {"law": "exponential", "kind": "heat"},
        "geometry": {"observation": {"interior": [[0.3, 0.8]]}, "time_set": [[0.0, 0.4], [0.6, 1.0]], "T": 1.0},
        "mode_count": 24, "y0": {"harmonic": 8}, "objective": {"type": "null"},
        "space_index": None, "control_index": None, "cg_tol": 1e-10, "cg_maxit": None,
        "tolerance": None, "mc": None, "perturbations": 32})
    k = parse_kernel(cfg["kernel"])
    geo = parse_geometry(cfg["geometry"])
    n = int(cfg["mode_count"])
    problem = ControlProblem(k, geo, n, parse_state(cfg["y0"], n), parse_objective(cfg["objective"], n),
                             None if cfg["space_index"] is None else float(cfg["space_index"]),
                             None if cfg["control_index"] is None else float(cfg["control_index"]))
    g = assemble_gramian(problem)
    sol = solve_dual(problem, g, float(cfg["cg_tol"]), None if cfg["cg_maxit"] is None else int(cfg["cg_maxit"]))
    d = sol.diagnostics
    tol = target_tolerance(problem) if cfg["tolerance"] is None else float(cfg["tolerance"])
    run.csv("control.csv", ("t", "j", "re", "im"), sol.control.rows())
    run.csv("final_state.csv", ("j", "re", "im"),
            ((j + 1, v.real, v.imag) for j, v in enumerate(sol.final_state.coeffs)))
    report = {"diagnostics": d.as_dict(), "target_tolerance": tol, "space_index": problem.space_index,
              "control_index": problem.control_index, "quadrature_nodes": len(g.quadrature),
              "gramian_norm": g.norm, "gramian_quadrature_error": g.estimated_error}
    hit = d.achieved_error <= tol
    run.check("target_reached", hit)
    if cfg["perturbations"]:
        mn = minimal_norm_check(sol, problem, int(cfg["perturbations"]), seed or 0, g)
        report["minimal_norm"] = {"min_margin": float(mn.margins.min()),
                                  "min_scaled_margin": float(mn.scaled_margins.min()),
                                  "max_reach": mn.max_reach}
        run.check("minimal_norm", mn.passed)
    if cfg["mc"] is not None:
        est = mc_controlled_average(problem, sol.control, parse_mc(cfg["mc"], seed, threads))
        z = est.z_scores(problem.target)
        report["mc_closed_loop"] = {"max_z_score": float(z.max()), "samples": est.count}
        run.check("mc_closed_loop", bool(z.max() <= 5.0))
    run.json("diagnostics.json", report)
    if not hit:
        run.exit_code = EXIT_CHECK if d.converged else EXIT_RESOURCES


def cmd_observability(cfg, run: Run, seed=None, threads=None):
    cfg = section(cfg, "observability", {
        "observation": [[0.3, 0.8]], "fit_modes": list(range(2, 49, 2)),
        "time_set": [[0.2, 0.5], [0.7, 0.9]], "T": 1.0, "a": 2.0, "bound_factor": 2.0, "K": 20,
        "factorization": {"a": 1.0, "b": 2.0, "mode_count": 16, "trials": 10}})
    op = Interior(cfg["observation"])
    r = [(j * np.pi) ** 2 for j in cfg["fit_modes"]]
    fit = spectral_inequality_fit(op, r)
    run.csv("spectral_fit.csv", ("r", "modes", "sigma"), zip(fit.thresholds, fit.mode_counts, fit.sigma))
    run.check("sigma_nonincreasing", bool(np.all(np.diff(fit.sigma) <= 0) and np.all(fit.sigma > 0)))
    report = {"c1": fit.c1, "offset": fit.offset, "fit_residual": fit.residual}
    a, T, K = float(cfg["a"]), float(cfg["T"]), int(cfg["K"])
    try:
        probe = build_telescope(cfg["time_set"], T, a, 2.0, fit.c1, K)
        bound = ratio_bound(fit.c1, a, probe.l1 - probe.density_point)
        tele = {}
        for label, factor in (("satisfied", float(cfg["bound_factor"])), ("violated", 0.1)):
            br = max(bound * factor, 1.0 + 1e-9)
            ts = build_telescope(cfg["time_set"], T, a, br, fit.c1, K)
            tele[label] = {"b_ratio": br, "signs": ts.weight_signs, "log_abs_f": ts.log_abs_weights,
                           "all_nonnegative": ts.all_nonnegative}
            run.csv(f"telescope_{label}.csv", ("k", "l_k", "r_k", "sign", "log_abs_f"),
                    ((i + 1, ts.nodes[i], ts.thresholds[i], ts.weight_signs[i], ts.log_abs_weights[i])
                     for i in range(K)))
        report["telescope"] = {"density_point": probe.density_point, "l1": probe.l1, "ratio_bound": bound,
                               "measure_ok": probe.measure_ok, "containment_ok": probe.containment_ok,
                               "critical_c1": probe.critical_c1, "sharp_constant": probe.sharp_constant, **tele}
        run.check("telescope_nonnegative", tele["satisfied"]["all_nonnegative"])
        run.check("telescope_violation_detected", not tele["violated"]["all_nonnegative"])
    except DomainError as exc:
        report["telescope"] = {"infeasible": str(exc)}
        run.check("telescope_nonnegative", False)
    fz = section(cfg["factorization"], "factorization", {"a": 1.0, "b": 2.0, "mode_count": 16, "trials": 10})
    rng = np.random.default_rng(seed or 0)
    res = []
    for _ in range(int(fz["trials"])):
        z0 = SpectralState(rng.standard_normal(int(fz["mode_count"])) + 1j * rng.standard_normal(int(fz["mode_count"])))
        res.append(factorization_identity_check(float(fz["a"]), float(fz["b"]), z0, np.linspace(0, T, 21)).residual)
    report["factorization_max_residual"] = max(res) if res else 0.0
    run.check("factorization", max(res, default=0.0) <= 1e-11)
    run.json("observability.json", report)
    # findings are recorded; only internal errors give a nonzero exit here
    run.findings_only = True


def cmd_fractional(cfg, run: Run, seed=None, threads=None):
    cfg = section(cfg, "fractional", {"gamma": 0.4, "N_list": [8, 16, 24, 32], "T": 1.0,
                                      "G0": [[0.3, 0.8]], "time_set": None})
    rep = fractional_study(float(cfg["gamma"]), [int(n) for n in cfg["N_list"]], float(cfg["T"]), cfg["G0"],
                           cfg["time_set"])
    run.csv("fractional.csv", ("N", "deterministic_min_eig", "averaged_null_constant", "averaged_min_eig"),
            zip(rep.mode_counts, rep.deterministic_min_eig, rep.averaged_null_constant, rep.averaged_min_eig))
    run.json("fractional.json", {"deterministic_drop": rep.deterministic_drop, "averaged_band": rep.averaged_band,
                                 "gaps": rep.gaps})
    run.check("gaps_decreasing", bool(np.all(np.diff(rep.gaps) < 0)))
    run.check("deterministic_monotone", bool(np.all(np.diff(rep.deterministic_min_eig) < 0)))
    run.check("deterministic_drop_10x", rep.deterministic_drop >= 10.0)
    run.check("averaged_band_2x", rep.averaged_band <= 2.0)


def cmd_transport(cfg, run: Run, seed=None, threads=None):
    cfg = section(cfg, "transport", {"t": 0.5, "h_list": [1 / 64, 1 / 128, 1 / 256], "sigma": 0.3})
    t = float(cfg["t"])
    hs = [float(h) for h in cfg["h_list"]]
    res = [transport_average_demo(t, h) for h in hs]
    norms = np.array([r.residual_norm for r in res])
    orders = np.log(norms[:-1] / norms[1:]) / np.log(np.array(hs[:-1]) / np.array(hs[1:]))
    run.csv("transport.csv", ("h", "residual_norm"), zip(hs, norms))
    mass_in = 256.0 / 315.0  # int (1 - z^2)^4 dz over [-1, 1]
    mass = float(res[-1].h * np.sum(res[-1].averaged))
    sig = float(cfg["sigma"])
    gauss = lambda z: np.exp(-z**2 / (2 * sig**2)) / (np.sqrt(2 * np.pi) * sig)  # noqa: E731
    x = np.linspace(-3, 3, 61)
    got = gaussian_average(gauss, x, t, support=(-12 * sig, 12 * sig), nodes=512, panels=16)
    v = sig**2 + t**2
    want = np.exp(-x**2 / (2 * v)) / np.sqrt(2 * np.pi * v)
    run.json("transport.json", {"orders": orders, "mass": mass, "mass_exact": mass_in,
                                "gaussian_max_error": float(np.max(np.abs(got - want)))})
    run.check("order_1.8", bool(np.all(orders >= 1.8)))
    run.check("mass", abs(mass - mass_in) <= 1e-10)
    run.check("gaussian_variance", float(np.max(np.abs(got - want))) <= 1e-12)


def cmd_mc_validate(cfg, run: Run, seed=None, threads=None):
    cfg = section(cfg, "mc-validate", {"lambdas": [1.0, 4.0, 25.0], "times": [0.05, 0.3, 1.0],
                                       "mc": {"samples": 10**6}, "second_moment": True})
    mc = parse_mc(cfg["mc"], seed, threads)
    lam = np.pi**2 * np.asarray(cfg["lambdas"], dtype=float)
    ts = np.asarray(cfg["times"], dtype=float)
    L, Tg = [a.ravel() for a in np.meshgrid(lam, ts, indexing="ij")]
    reports = []
    for k in admissible_kernels():
        for e, l, t in zip(mc_multiplier_grid(k, L, Tg, mc), L, Tg):
            reports.append({**k.describe(), "quantity": "multiplier", "lambda": l, "t": t, **e.report(k(l, t))})
        if cfg["second_moment"]:
            try:
                k.second_moment(1.0, 0.0)
            except ConfigurationError:
                continue
            for l, t in zip(L, Tg):
                e = mc_second_moment(k, l, t, mc)
                reports.append({**k.describe(), "quantity": "second_moment", "lambda": l, "t": t,
                                **e.report(k.second_moment(l, t))})
    run.json("mc_report.json", reports)
    run.csv("mc_report.csv", ("law", "kind", "quantity", "lambda", "t", "closed_re", "closed_im", "mc_re", "mc_im",
                              "mc_sd", "z_score", "pass"),
            ((r["law"], r["kind"], r["quantity"], r["lambda"], r["t"], *r["closed_form"], *r["mc_mean"],
              r["mc_sd"], r["z_score"], r["pass"]) for r in reports))
    run.check("mc_all_pass", all(r["pass"] for r in reports))


def cmd_finite_dim(cfg, run: Run, seed=None, threads=None):
    cfg = section(cfg, "finite-dim", {"y0": [1.0, 0.0], "T": 1.0})
    rep = finite_dim_averaged_demo(cfg["y0"], float(cfg["T"]))
    run.json("finite_dim.json", {"gramian": rep.gramian, "averaged_final": rep.averaged_final,
                                 "realisation_finals": rep.realisation_finals,
                                 "stacked_residual": rep.stacked_residual,
                                 "stacked_residual_discrete": rep.stacked_residual_discrete,
                                 "control_norm": rep.control_norm})
    run.check("averaged_null", rep.averaged_ok)
    if np.any(np.asarray(cfg["y0"], dtype=float)):
        run.check("simultaneous_infeasible", rep.simultaneous_infeasible)


COMMANDS = {
    "multiplier": cmd_multiplier,
    "propagate": cmd_propagate,
    "control": cmd_control,
    "observability": cmd_observability,
    "fractional": cmd_fractional,
    "transport-demo": cmd_transport,
    "mc-validate": cmd_mc_validate,
    "finite-dim-demo": cmd_finite_dim,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avgcontrol", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="JSON config; defaults are used when omitted")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=int, help="override Monte Carlo / perturbation seeds (u64)")
    p.add_argument("--threads", type=int, help="Monte Carlo worker threads")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which would read as a solver outcome
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    start = time.perf_counter()
    out = args.out
    run = Run(out)
    config = {}
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if args.threads is not None and args.threads < 1:
            raise ConfigurationError("threads must be positive")
        if args.config is not None:
            try:
                config = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigurationError(f"cannot read config: {exc}") from exc
        COMMANDS[args.command](config, run, args.seed, args.threads)
        code = run.status()
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        code = EXIT_INTERNAL
    manifest = {"command": args.command, "config": config, "config_hash": config_hash(config),
                "seed": args.seed, "threads": args.threads, "versions": versions(),
                "wall_time_s": time.perf_counter() - start, "checks": run.checks, "files": run.files,
                "exit_code": code}
    write_json(out / "manifest.json", manifest)
    for name, ok in run.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return code


if __name__ == "__main__":
    sys.exit(main())
