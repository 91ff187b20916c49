"""``graphnls`` command line: run one experiment, write a JSON record, CSV
series and two-column plot data.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure,
4 instability run ended by the blow-up guard (artifacts are still written).
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_file, resolve
from .dynamics import (BlowUpError, EntryConditionError, EvolutionConfig,
                       FixedPointError, evolve, instability_experiment, virial_check)
from .functionals import (ModelParams, NehariError, charge, energy,
                          explicit_soliton_symmetric, gamma_star, scale)
from .grid import GraphFunction, make_grid
from .groundstate import (FrequencyError, criterion_ratio, criterion_threshold,
                          find_omega_star, instability_criterion, rescaled_diagnostics,
                          solve_ground_state)
from .potentials import Potential
from .spectral import ConvergenceError, ground_eigenpair

log = logging.getLogger("graphnls")

OUTPUT_ROOT_ENV = "GRAPHNLS_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_BLOWUP = 0, 2, 3, 4
SOLVER_ERRORS = (ConvergenceError, FrequencyError, FixedPointError, NehariError,
                 EntryConditionError)


class SchemaError(ValueError):
    pass


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def build_model(cfg: ExperimentConfig) -> ModelParams:
    v = cfg.values
    grid = make_grid(v["n_edges"], v["edge_length"], v["cells_per_edge"],
                     symmetric=v["symmetric"])
    kind = v["potential.kind"]
    if kind == "inverse_power":
        pot = Potential.inverse_power(v["potential.beta"], v["potential.alpha"])
    elif kind == "tabulated":
        pot = Potential.load_tables([s.strip() for s in v["potential.files"].split(",")])
    else:
        pot = Potential.zero()
    return ModelParams(gamma=v["gamma"], omega=v["omega"], p=v["p"], grid=grid, potential=pot)


def profile_samples(u: GraphFunction, n: int = 41) -> dict:
    """|u| on edge 0 at fixed abscissae, for comparing runs on different grids."""
    g = u.grid
    xs = np.linspace(0.0, g.edge_length / 2, n)
    return {"x": xs.tolist(), "abs": np.interp(xs, g.x, np.abs(u.nodal()[0])).tolist()}


@dataclass
class Artifacts:
    out_dir: Path
    files: list = field(default_factory=list)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out_dir / name

    def profile(self, name: str, u: GraphFunction) -> None:
        nod = u.nodal()
        x = u.grid.x
        with open(self.path(f"{name}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["edge", "x", "re", "im"])
            for e in range(nod.shape[0]):
                for xi, val in zip(x, nod[e]):
                    w.writerow([e, repr(float(xi)), repr(float(np.real(val))),
                                repr(float(np.imag(val)))])
        self.plot(f"{name}.dat", x, np.abs(nod[0]))

    def plot(self, name: str, x, y) -> None:
        np.savetxt(self.path(name), np.column_stack([np.asarray(x, float), np.asarray(y, float)]),
                   fmt="%.17g")

    def table(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(c)) if isinstance(c, (float, np.floating)) else c
                            for c in r])

    def trajectory(self, traj) -> None:
        traj.write_csv(self.path("trajectory.csv"))
        t = traj.as_array("t")
        for key in ("E", "Q", "P", "dist", "f"):
            self.plot(f"{key}_vs_t.dat", t, traj.as_array(key))


def _ground_state(cfg, P):
    return solve_ground_state(P, tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"],
                              with_criterion=False)


def _gs_results(gs, P) -> dict:
    u = gs.profile
    return {"omega": gs.omega, "omega0": gs.omega0, "residual": gs.residual,
            "action": gs.action_value, "nehari": gs.nehari_value,
            "pohozaev": gs.pohozaev_value, "energy": energy(u, P), "charge": charge(u),
            "vertex_value": float(u.vertex_value), "iterations": gs.iterations,
            "newton_steps": gs.newton_steps, "profile_samples": profile_samples(u)}


def cmd_spectrum(cfg, P, art):
    res = ground_eigenpair(P.hamiltonian, tol=cfg["eigen.tol"])
    art.profile("psi0", res.psi0)
    P.hamiltonian.dump_coo(art.path("stiffness.coo"))
    out = {"omega0": res.omega0, "lambda0": -res.omega0, "lambda1": res.second,
           "gap": res.gap, "iterations": res.iterations,
           "psi0_min": float(np.min(res.psi0.values)),
           "psi0_positive": bool(np.min(res.psi0.values) > 0)}
    if P.potential.kind == "zero" and P.gamma > 0:
        out["omega0_analytic"] = (P.gamma / P.grid.n_edges) ** 2
    return out


def cmd_ground_state(cfg, P, art):
    gs = _ground_state(cfg, P)
    art.profile("profile", gs.profile)
    out = _gs_results(gs, P)
    if P.potential.kind == "zero" and abs(P.gamma) < P.grid.n_edges * math.sqrt(P.omega):
        exact = explicit_soliton_symmetric(P)
        out["closed_form_linf"] = float(np.max(np.abs(gs.profile.values - exact.values)))
    return out


def cmd_gamma_star(cfg, P, art):
    return {"gamma_star": gamma_star(P.p, P.grid.n_edges, P.omega)}


def cmd_criterion(cfg, P, art):
    gs = _ground_state(cfg, P)
    rep = instability_criterion(gs.profile, P, dlam=cfg["criterion.dlam"])
    out = _gs_results(gs, P)
    out.update({"criterion_direct": rep.direct, "criterion_reduced": rep.reduced,
                "criterion_fd": rep.finite_difference,
                "criterion_max_discrepancy": rep.max_discrepancy,
                "ratio": criterion_ratio(gs.profile, P),
                "threshold": criterion_threshold(P.p)})
    diag = rescaled_diagnostics(gs, P)
    out.update({"rescaled_I0": diag.I0, "rescaled_Iomega": diag.Iomega,
                "rescaled_h1_minus_nl": diag.h1_minus_nl,
                "rescaled_h1_norm2": diag.h1_norm2, "rescaled_nl_power": diag.nl_power})
    art.profile("profile", gs.profile)
    return out


def cmd_omega_star_scan(cfg, P, art):
    scan = find_omega_star(P, (cfg["scan.omega_min"], cfg["scan.omega_max"]),
                           n_scan=cfg["scan.n"], tol=cfg["scan.tol"],
                           solver_tol=cfg["solver.tol"], workers=cfg["scan.workers"])
    art.table("scan.csv", ["omega", "ratio", "criterion"], scan.table())
    art.plot("ratio_vs_omega.dat", scan.omegas, scan.ratios)
    art.plot("criterion_vs_omega.dat", scan.omegas, scan.criteria)
    return {"omegas": scan.omegas, "ratios": scan.ratios, "criteria": scan.criteria,
            "threshold": criterion_threshold(P.p), "crossings": scan.crossings,
            "omega_star": scan.omega_star}


def _evolution_config(cfg, dt=None) -> EvolutionConfig:
    return EvolutionConfig(dt=dt or cfg["evolve.dt"], t_final=cfg["evolve.t_final"],
                           scheme=cfg["evolve.scheme"],
                           fixedpoint_tol=cfg["evolve.fixedpoint_tol"],
                           monitor_stride=cfg["evolve.monitor_stride"],
                           allow_large_dt=cfg["evolve.allow_large_dt"])


def _initial_state(cfg, P):
    """(u0, reference) for evolve/virial-check."""
    kind = cfg["evolve.initial"]
    if kind == "zero":
        return GraphFunction.zeros(P.grid, complex), None
    if kind == "eigenvector":
        base = ground_eigenpair(P.hamiltonian, tol=cfg["eigen.tol"]).psi0
    elif kind == "soliton" and P.potential.kind == "zero":
        base = explicit_soliton_symmetric(P)
    else:
        base = _ground_state(cfg, P).profile
    amp, chirp = cfg["evolve.amplitude"], cfg["evolve.chirp"]
    u0 = scale(base, cfg["evolve.lambda"])
    if amp != 1 or chirp != 0:
        u0 = GraphFunction.from_callable(P.grid, lambda x: amp * np.exp(1j * chirp * x * x)) * u0
    return u0, base


def cmd_evolve(cfg, P, art):
    u0, ref = _initial_state(cfg, P)
    status = "completed"
    try:
        traj = evolve(u0, P, _evolution_config(cfg), reference=ref)
    except BlowUpError as exc:
        traj, status = exc.trajectory, "blowup"
    art.trajectory(traj)
    E, Q = traj.as_array("E"), traj.as_array("Q")
    out = {"status": status, "n_samples": len(traj.times), "t_end": traj.times[-1],
           "E0": E[0], "Q0": Q[0],
           "energy_rel_drift": float(np.max(np.abs(E - E[0])) / max(abs(E[0]), 1e-300)),
           "charge_rel_drift": float(np.max(np.abs(Q - Q[0])) / max(abs(Q[0]), 1e-300)),
           "max_distance": float(np.nanmax(traj.as_array("dist"))) if ref is not None else None}
    if status == "blowup":
        raise _Aborted(out)
    return out


def cmd_virial_check(cfg, P, art):
    u0, _ = _initial_state(cfg, P)
    reports = []
    for k, dt in enumerate((cfg["evolve.dt"], 0.5 * cfg["evolve.dt"])):
        traj = evolve(u0, P, _evolution_config(cfg, dt))
        reports.append(virial_check(traj))
        if k == 0:
            art.trajectory(traj)
            t = traj.as_array("t")
            f = traj.as_array("f")
            art.plot("f2_vs_t.dat", t[1:-1], (f[2:] - 2 * f[1:-1] + f[:-2]) / dt ** 2)
            art.plot("8P_vs_t.dat", t, 8 * traj.as_array("P"))
    a, b = reports
    return {"mismatch_f": [a.max_mismatch_f, b.max_mismatch_f],
            "mismatch_fprime": [a.max_mismatch_fprime, b.max_mismatch_fprime],
            "ratio_f": a.max_mismatch_f / b.max_mismatch_f if b.max_mismatch_f > 0 else None,
            "ratio_fprime": (a.max_mismatch_fprime / b.max_mismatch_fprime
                             if b.max_mismatch_fprime > 0 else None),
            "max_abs_8P": a.max_abs_8P, "max_abs_f2": a.max_abs_f2,
            "n_samples": [a.n_samples, b.n_samples]}


def cmd_instability(cfg, P, art):
    gs = _ground_state(cfg, P)
    a = cfg["instability.a"]
    if math.isnan(a):
        a = 6.0 / math.sqrt(P.omega)
    try:
        res = instability_experiment(
            gs, P, cfg["instability.lambda1"], a, cfg["instability.eps_tube"],
            _evolution_config(cfg), relative_tube=cfg["instability.relative_tube"],
            require_entry=cfg["instability.require_entry"],
            perturbation=cfg["instability.perturbation"],
            noise_amplitude=cfg["instability.noise_amplitude"], seed=cfg["seed"])
    except EntryConditionError as exc:
        raise _Failed({"entry": exc.entry, "cutoff_radius": a}, exc) from exc
    art.trajectory(res.trajectory)
    out = {"outcome": res.outcome, "entry": res.entry, "exit_time": res.exit_time,
           "min_neg_P": res.min_neg_P, "max_neg_P": res.max_neg_P, "f_concave": res.f_concave,
           "initial_distance": res.initial_distance, "tube_radius": res.tube_radius,
           "relative_tube": res.relative_tube, "cutoff_radius": a,
           "ground_state_residual": gs.residual,
           "criterion": instability_criterion(gs.profile, P).direct
           if P.potential.has_xvprime else None}
    if res.outcome in ("blowup", "breakdown"):
        raise _Aborted(out)
    return out


def cmd_symmetric_mode(cfg, P, art):
    if not P.potential.symmetric:
        raise ConfigError("potential.files", "symmetric mode needs an edge-symmetric potential")
    g = P.grid
    P_sym = P.with_(grid=g.symmetric_reduction())
    P_full = P.with_(grid=g.full())
    gs_sym = _ground_state(cfg, P_sym)
    gs_full = _ground_state(cfg, P_full)
    diff = float(np.max(np.abs(gs_sym.profile.to_full().values - gs_full.profile.values)))
    art.profile("profile_symmetric", gs_sym.profile)
    return {"linf_difference": diff, "omega0_symmetric": gs_sym.omega0,
            "omega0_full": gs_full.omega0, "action_symmetric": gs_sym.action_value,
            "action_full": gs_full.action_value}


COMMAND_TABLE = {
    "spectrum": cmd_spectrum, "ground-state": cmd_ground_state,
    "gamma-star": cmd_gamma_star, "criterion": cmd_criterion,
    "omega-star-scan": cmd_omega_star_scan, "evolve": cmd_evolve,
    "virial-check": cmd_virial_check, "instability": cmd_instability,
    "symmetric-mode": cmd_symmetric_mode,
}


class _Aborted(Exception):
    """Run ended by the blow-up guard; carries the partial results."""

    def __init__(self, results):
        super().__init__("blow-up guard")
        self.results = results


class _Failed(Exception):
    def __init__(self, results, cause):
        super().__init__(str(cause))
        self.results = results
        self.cause = cause


def output_dir(cfg: ExperimentConfig) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "."))
    name = cfg["output_dir"] or f"{cfg.command}-{cfg.hash()[:12]}"
    return root / name


def run(cfg: ExperimentConfig) -> tuple[int, dict]:
    """Execute ``cfg``; returns (exit status, record).  The record is also
    written to ``record.json`` in the output directory."""
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    art = Artifacts(out)
    status, results, error = EXIT_OK, {}, None
    try:
        P = build_model(cfg)
        results = COMMAND_TABLE[cfg.command](cfg, P, art)
    except _Aborted as exc:
        status, results = EXIT_BLOWUP, exc.results
    except _Failed as exc:
        status, results, error = EXIT_SOLVER, exc.results, exc.cause
    except ConfigError as exc:
        status, error = EXIT_CONFIG, exc
    except SOLVER_ERRORS as exc:
        status, error = EXIT_SOLVER, exc
    except ValueError as exc:  # precondition violations surfaced by the modules
        status, error = EXIT_CONFIG, exc
    record = {
        "command": cfg.command,
        "config": cfg.as_dict(),
        "config_hash": cfg.hash(),
        "provenance": {"version": __version__,
                       "grid": {"n_edges": cfg["n_edges"], "edge_length": cfg["edge_length"],
                                "cells_per_edge": cfg["cells_per_edge"],
                                "h": cfg["edge_length"] / cfg["cells_per_edge"],
                                "symmetric": cfg["symmetric"]},
                       "tolerances": {k: cfg[k] for k in ("eigen.tol", "solver.tol",
                                                          "evolve.fixedpoint_tol")}},
        "status": status,
        "error": None if error is None else {"type": type(error).__name__, "message": str(error),
                                             "last_value": getattr(error, "last_value", None),
                                             "iterations": getattr(error, "iterations", None)},
        "results": results,
        "artifacts": sorted(art.files),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    record = _clean(record)
    (out / "record.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    return status, record


@dataclass
class DiffReport:
    differences: dict
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def _flatten(prefix, obj, out):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else k, v, out)
    else:
        out[prefix] = obj


def compare(record_a, record_b, tolerances: dict | None = None) -> DiffReport:
    """Field-wise comparison of the ``results`` of two records.

    Numeric fields differ by their absolute difference, numeric lists by the
    max absolute elementwise difference (``profile_samples.abs`` gives the
    profile L^inf difference); other fields differ if unequal.  Only nonzero
    differences are listed; those above ``tolerances[field]`` (default 0)
    are violations.
    """
    recs = []
    for r in (record_a, record_b):
        if isinstance(r, (str, Path)):
            r = json.loads(Path(r).read_text())
        recs.append(r)
    a, b = recs
    if a.get("command") != b.get("command"):
        raise SchemaError(f"records come from different commands: "
                          f"{a.get('command')!r} vs {b.get('command')!r}")
    fa, fb = {}, {}
    _flatten("", a.get("results", {}), fa)
    _flatten("", b.get("results", {}), fb)
    tolerances = tolerances or {}
    diffs, bad = {}, []
    for key in sorted(set(fa) | set(fb)):
        va, vb = fa.get(key), fb.get(key)
        if isinstance(va, (int, float)) and isinstance(vb, (int, float)) \
                and not isinstance(va, bool) and not isinstance(vb, bool):
            d = abs(float(va) - float(vb))
        elif isinstance(va, list) and isinstance(vb, list) and len(va) == len(vb) and \
                all(isinstance(x, (int, float)) for x in va + vb):
            d = float(np.max(np.abs(np.subtract(va, vb)))) if va else 0.0
        else:
            d = 0.0 if va == vb else math.inf
        if d > 0:
            diffs[key] = d
            if d > tolerances.get(key, 0.0):
                bad.append(key)
    return DiffReport(diffs, bad)


def _parse_tolerances(items) -> dict:
    out = {}
    for item in items or ():
        k, _, v = item.partition("=")
        out[k.strip()] = float(v)
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="graphnls", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMAND_TABLE:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    cp = sub.add_parser("compare", help="diff the results of two record.json files")
    cp.add_argument("record_a")
    cp.add_argument("record_b")
    cp.add_argument("--tol", action="append", default=[], metavar="FIELD=TOL")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "compare":
        try:
            rep = compare(args.record_a, args.record_b, _parse_tolerances(args.tol))
        except SchemaError as exc:
            print(f"schema error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(json.dumps({"differences": _clean(rep.differences),
                          "violations": rep.violations}, indent=2))
        return EXIT_OK if rep.ok else 1

    try:
        raw = load_file(args.config) if args.config else {}
        cfg = resolve(args.command, raw, args.set)
    except (ConfigError, OSError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status, record = run(cfg)
    if record["error"]:
        print(f"{record['error']['type']}: {record['error']['message']}", file=sys.stderr)
    print(json.dumps({"status": status, "output": str(output_dir(cfg)),
                      "results": {k: v for k, v in record["results"].items()
                                  if not isinstance(v, (list, dict))}}, indent=2))
    return status


if __name__ == "__main__":
    sys.exit(main())
