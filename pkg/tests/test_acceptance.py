"""Acceptance gate: ten end-to-end checks, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import numpy as np
import pytest

from graphnls.dynamics import EvolutionConfig, evolve, instability_experiment, virial_check
from graphnls.functionals import (ModelParams, action, charge, explicit_soliton_symmetric,
                                  gamma_star, lp_power, nehari, nehari_projection)
from graphnls.grid import GraphFunction, make_grid
from graphnls.groundstate import (criterion_ratio, dual_residual, find_omega_star,
                                  instability_criterion, rescaled_diagnostics,
                                  solve_ground_state)
from graphnls.potentials import Potential
from graphnls.spectral import ground_eigenpair

COULOMB_HALF = Potential.inverse_power(1.0, 0.5)


def _line(tag, ok, detail):
    return f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"


def check_spectral_oracle():
    details, ok = [], True
    for gamma, n in ((2, 2), (3, 3), (2, 4)):
        exact = (gamma / n) ** 2
        errs = []
        for m in (2000, 4000, 8000):  # h = 2e-2, 1e-2, 5e-3 on L = 40
            res = ground_eigenpair(ModelParams(gamma, 1.0, 3, make_grid(n, 40.0, m)).hamiltonian)
            errs.append(abs(res.omega0 - exact) / exact)
            if m == 4000:
                positive = bool(np.min(res.psi0.values) > 0)
        order = np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2])
        good = errs[1] < 1e-4 and positive and all(1.8 < o < 2.2 for o in order)
        ok &= good
        details.append(f"(g={gamma},N={n}) rel={errs[1]:.2e} order={order[0]:.2f}/{order[1]:.2f}"
                       f" pos={positive}")
    return ok, "; ".join(details)


def check_soliton_regression():
    gs_res, errs, duals = None, [], []
    for m in (4000, 8000):
        P = ModelParams(2.0, 4.0, 3, make_grid(3, 40.0, m))
        exact = explicit_soliton_symmetric(P)
        duals.append(dual_residual(exact, P))
        if m == 4000:
            gs_res = solve_ground_state(P, tol=1e-10, with_criterion=False)
            linf = float(np.max(np.abs(gs_res.profile.values - exact.values)))
    order = np.log2(duals[0] / duals[1])
    ok = linf < 1e-3 and gs_res.residual < 1e-8 and 1.9 < order < 2.1
    return ok, (f"Linf={linf:.2e} solver residual={gs_res.residual:.1e} closed-form dual residual"
                f" {duals[0]:.2e} (h=1e-2), order {order:.3f}")


def check_gamma_star():
    g2 = gamma_star(3, 2, 1.0)
    roots = np.roots([-1.0 / 3.0, 0.0, 1.0, -2.0 / 9.0])
    a = min(r.real for r in roots if abs(r.imag) < 1e-14 and 0 < r.real < 1)
    g3 = gamma_star(3, 3, 1.0)
    ok = abs(g2) < 1e-10 and abs(g3 - 3 * a) < 1e-8
    return ok, f"N=2: {g2:.1e}; N=3: {g3:.12f} vs cubic {3 * a:.12f} (diff {abs(g3 - 3 * a):.1e})"


def check_nehari_identities():
    rng = np.random.default_rng(20240601)
    g = make_grid(3, 10.0, 400)
    worst_i, worst_s, n_neg, ok = 0.0, 0.0, 0, True
    for k in range(100):
        p = (3.0, 4.0, 6.0)[k % 3]
        pot = COULOMB_HALF if k % 2 else Potential.zero()
        P = ModelParams(float(rng.uniform(0.5, 3.0)), float(rng.uniform(2.0, 8.0)), p, g, pot)
        amp = 10 ** rng.uniform(-1, 1)
        coeffs = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        funcs = [lambda x, c=c: amp * np.exp(-x) * (c[0] + c[1] * x + c[2] * np.sin(x) + c[3] * x * x)
                 for c in coeffs]
        nod = np.array([f(g.x) for f in funcs])
        nod[:, 0] = nod[0, 0]
        v = GraphFunction.from_nodal(g, nod)
        i_v = nehari(v, P)
        lam1, w = nehari_projection(v, P)
        scale_ = lp_power(w, p + 1)
        worst_i = max(worst_i, abs(nehari(w, P)) / scale_)
        if i_v < 0:
            n_neg += 1
            ok &= 0 < lam1 < 1
        s = action(v, P) - 0.5 * i_v - (p - 1) / (2 * (p + 1)) * lp_power(v, p + 1)
        worst_s = max(worst_s, abs(s) / max(1.0, abs(action(v, P))))
    ok &= worst_i < 1e-10 and worst_s < 1e-12 and n_neg > 10
    return ok, f"max rel I(lam1 v)={worst_i:.1e}, S identity residual={worst_s:.1e}, I<0 cases={n_neg}"


def _criterion_cases():
    yield "p=3 V=0", ModelParams(2.0, 4.0, 3, make_grid(3, 10.0, 10000, symmetric=True))
    for w, h in ((10.0, 3e-4), (30.0, 1.5e-4), (100.0, 6e-5)):
        L = 20 / np.sqrt(w)
        yield f"p=6 w={w:g}", ModelParams(3.0, w, 6, make_grid(2, L, int(round(L / h)), symmetric=True),
                                          COULOMB_HALF)


def check_criterion_consistency():
    tol = 1e-6
    bound = max(1e-6, 100 * tol)
    ok, parts = True, []
    for name, P in _criterion_cases():
        gs = solve_ground_state(P, tol=tol, with_criterion=False)
        rep = instability_criterion(gs.profile, P)
        good = rep.max_discrepancy < bound
        if P.p == 3:
            good &= rep.direct > 0
        ok &= good
        parts.append(f"{name}: {rep.max_discrepancy:.1e} (crit {rep.direct:.3g})")
    return ok, f"bound {bound:.0e}; " + "; ".join(parts)


def check_conservation():
    P = ModelParams(1.0, 1.0, 3, make_grid(3, 30.0, 3000, symmetric=True))
    phi = explicit_soliton_symmetric(P)
    tr = evolve(phi, P, EvolutionConfig(dt=2e-3, t_final=5.0, monitor_stride=50), reference=phi)
    E, Q = tr.as_array("E"), tr.as_array("Q")
    dE = np.max(np.abs(E - E[0])) / abs(E[0])
    dQ = np.max(np.abs(Q - Q[0])) / Q[0]
    dist = np.max(tr.as_array("dist"))
    ok = dE < 1e-6 and dQ < 1e-6 and dist < 1e-3 and np.isclose(tr.times[-1], 5.0)
    return ok, f"dE={dE:.1e} dQ={dQ:.1e} max dist={dist:.2e} over T=5"


def check_virial():
    # generic run: chirped, amplified soliton on the two-edge line; smooth even data
    P = ModelParams(0.0, 1.0, 3, make_grid(2, 20.0, 16000, symmetric=True))
    u0 = GraphFunction.from_callable(P.grid, lambda x: 1.3 * np.exp(0.05j * x * x)) \
        * explicit_soliton_symmetric(P)
    mism = []
    for dt in (0.04, 0.02):
        cfg = EvolutionConfig(dt=dt, t_final=0.8, allow_large_dt=True)
        mism.append(virial_check(evolve(u0, P, cfg)).max_mismatch_f)
    ratio = mism[0] / mism[1]
    # standing wave
    Ps = ModelParams(1.0, 1.0, 3, make_grid(3, 30.0, 24000, symmetric=True))
    gs = solve_ground_state(Ps, tol=1e-10, with_criterion=False)
    rep = virial_check(evolve(gs.profile, Ps, EvolutionConfig(dt=0.01, t_final=0.5,
                                                              allow_large_dt=True)))
    ok = abs(ratio - 4) < 0.8 and rep.max_abs_f2 <= 1e-5 and rep.max_abs_8P <= 1e-5
    return ok, (f"generic mismatch {mism[0]:.2e} -> {mism[1]:.2e} (x{ratio:.2f}); standing wave"
                f" |f''|={rep.max_abs_f2:.1e} |8P|={rep.max_abs_8P:.1e}")


def check_rescaled_trends():
    g = make_grid(2, 20.0, 4000, symmetric=True)
    I0, gap, ratio = [], [], []
    for w in (10.0, 30.0, 100.0):
        P = ModelParams(3.0, w, 6, g, COULOMB_HALF)
        gs = solve_ground_state(P, tol=1e-8, with_criterion=False)
        d = rescaled_diagnostics(gs, P)
        I0.append(abs(d.I0))
        gap.append(abs(d.h1_minus_nl))
        ratio.append(criterion_ratio(gs.profile, P))

    def dec(a):
        return all(a[i + 1] < a[i] for i in range(len(a) - 1))

    ok = dec(I0) and dec(gap) and dec(ratio) and ratio[-1] > 0
    fmt = lambda a: "/".join(f"{x:.3g}" for x in a)  # noqa: E731
    return ok, f"|I0| {fmt(I0)}; |H1-nl| {fmt(gap)}; ratio {fmt(ratio)}"


def check_instability():
    grid = make_grid(2, 6.0, 6000, symmetric=True)
    P0 = ModelParams(3.0, 10.0, 6, grid, COULOMB_HALF)
    scan = find_omega_star(P0, (10.0, 200.0), n_scan=8, tol=1e-3, solver_tol=1e-6)
    if scan.omega_star is None:
        return False, "no sign change of the criterion found on [10, 200]"
    w = 2 * scan.omega_star
    P = P0.with_(omega=w)
    gs = solve_ground_state(P, tol=1e-8, with_criterion=False)
    a = 6 / np.sqrt(w)
    res = instability_experiment(gs, P, 1.01, a, 0.05, EvolutionConfig(dt=1e-3, t_final=0.5),
                                 require_entry=False)
    unstable = (res.entry_ok and res.outcome in ("exit", "blowup", "breakdown")
                and res.min_neg_P > 0)
    # control: cubic nonlinearity, same protocol, T = 10
    Pc = ModelParams(3.0, w, 3, make_grid(2, 6.0, 3000, symmetric=True), COULOMB_HALF)
    gsc = solve_ground_state(Pc, tol=1e-8, with_criterion=False)
    ctrl = instability_experiment(gsc, Pc, 1.01, a, 0.05,
                                  EvolutionConfig(dt=2e-3, t_final=10.0, monitor_stride=10),
                                  require_entry=False)
    ok = unstable and ctrl.outcome == "no-exit" and np.isclose(ctrl.trajectory.times[-1], 10.0)
    return ok, (f"omega*={scan.omega_star:.3f}; at 2omega*: entry={res.entry_ok} "
                f"outcome={res.outcome} t_exit={res.exit_time} -P>={res.min_neg_P:.3f}; "
                f"control outcome={ctrl.outcome} max dist/radius="
                f"{np.max(ctrl.trajectory.as_array('dist')) / ctrl.tube_radius:.2f}")


def check_symmetric_mode():
    worst = 0.0
    for P in (ModelParams(2.0, 4.0, 3, make_grid(3, 20.0, 2000)),
              ModelParams(3.0, 10.0, 6, make_grid(3, 20.0, 2000), COULOMB_HALF)):
        full = solve_ground_state(P.with_(grid=P.grid.full()), tol=1e-11, with_criterion=False)
        sym = solve_ground_state(P.with_(grid=P.grid.symmetric_reduction()), tol=1e-11,
                                 with_criterion=False)
        worst = max(worst, float(np.max(np.abs(sym.profile.to_full().values - full.profile.values))))
    return worst < 1e-8, f"max Linf(symmetric - full) = {worst:.1e}"


CRITERIA = [
    ("C1 spectral oracle", check_spectral_oracle),
    ("C2 explicit soliton", check_soliton_regression),
    ("C3 gamma* equation", check_gamma_star),
    ("C4 Nehari identities", check_nehari_identities),
    ("C5 criterion consistency", check_criterion_consistency),
    ("C6 conservation + standing wave", check_conservation),
    ("C7 virial identity", check_virial),
    ("C8 rescaled trends", check_rescaled_trends),
    ("C9 instability mechanism", check_instability),
    ("C10 symmetric mode", check_symmetric_mode),
]


@pytest.mark.parametrize("tag,check", CRITERIA, ids=[c[0].split()[0] for c in CRITERIA])
def test_acceptance(tag, check, capsys):
    ok, detail = check()
    with capsys.disabled():
        print("\n" + _line(tag, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    for tag, check in CRITERIA:
        print(_line(tag, *check()), flush=True)
