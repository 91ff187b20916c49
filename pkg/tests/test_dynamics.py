import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphnls.dynamics import (FIXEDPOINT, RELAXATION, BlowUpError, EntryConditionError,
                               EvolutionConfig, FixedPointError, _dfp_quotient, apply_cutoff,
                               evolve, instability_experiment, random_perturbation,
                               smooth_cutoff, virial_check)
from graphnls.functionals import ModelParams, explicit_soliton_symmetric
from graphnls.grid import GraphFunction, inner_l2, make_grid, norm_h1
from graphnls.groundstate import solve_ground_state
from graphnls.potentials import Potential
from graphnls.spectral import ground_eigenpair

COULOMB = Potential.inverse_power(1.0, 0.5)
SMALL = make_grid(3, 10.0, 200)


def bump(grid, c=1.0, k=0.0):
    return GraphFunction.from_callable(grid, lambda x: c * np.exp(-x * x / 2 + 1j * k * x * x))


def test_dt_guard():
    P = ModelParams(1.0, 1.0, 3, SMALL)
    with pytest.raises(ValueError, match="exceeds h"):
        evolve(bump(SMALL), P, EvolutionConfig(dt=0.1, t_final=1.0))
    evolve(bump(SMALL), P, EvolutionConfig(dt=0.1, t_final=0.2, allow_large_dt=True))
    for bad in (dict(dt=0.0), dict(scheme="euler"), dict(monitor_stride=0)):
        kw = dict(dt=0.01, t_final=0.1) | bad
        with pytest.raises(ValueError):
            EvolutionConfig(**kw).validate(SMALL.spacing)


def test_zero_stays_zero():
    P = ModelParams(1.0, 1.0, 3, SMALL, COULOMB)
    tr = evolve(GraphFunction.zeros(SMALL), P, EvolutionConfig(dt=0.01, t_final=0.2))
    assert np.all(tr.final_state.values == 0)
    rep = virial_check(tr)
    assert rep.max_abs_f2 == 0 and rep.max_abs_8P == 0


def test_virial_needs_three_samples():
    P = ModelParams(1.0, 1.0, 3, SMALL)
    tr = evolve(bump(SMALL), P, EvolutionConfig(dt=0.01, t_final=0.01))
    with pytest.raises(ValueError):
        virial_check(tr)


@pytest.mark.parametrize("p", [3, 4.5])
def test_fixedpoint_conserves_energy_and_charge(p):
    P = ModelParams(1.5, 1.0, p, SMALL, COULOMB)
    tr = evolve(bump(SMALL, 1.5, 0.2), P, EvolutionConfig(dt=0.01, t_final=2.0))
    E, Q = tr.as_array("E"), tr.as_array("Q")
    assert np.max(np.abs(E - E[0])) < 1e-10 * max(1, abs(E[0]))
    assert np.max(np.abs(Q - Q[0])) < 1e-10 * Q[0]


def test_relaxation_conserves_charge():
    P = ModelParams(1.5, 1.0, 3, SMALL, COULOMB)
    tr = evolve(bump(SMALL, 1.5, 0.2), P, EvolutionConfig(dt=0.02, t_final=2.0, scheme=RELAXATION))
    Q = tr.as_array("Q")
    E = tr.as_array("E")
    assert np.max(np.abs(Q - Q[0])) < 1e-12 * Q[0]
    assert np.max(np.abs(E - E[0])) < 1e-2 * abs(E[0])  # not exact, but close


def test_schemes_agree_to_second_order():
    # gamma = 0 keeps the even bump compatible with the vertex condition;
    # incompatible data lose the clean order
    P = ModelParams(0.0, 1.0, 3, SMALL)
    u0 = bump(SMALL, 1.2)
    final = {}
    for scheme in (FIXEDPOINT, RELAXATION):
        for dt in (0.02, 0.01):
            final[scheme, dt] = evolve(u0, P, EvolutionConfig(dt=dt, t_final=0.4,
                                                              scheme=scheme)).final_state
    d1 = norm_h1(final[FIXEDPOINT, 0.02] - final[RELAXATION, 0.02])
    d2 = norm_h1(final[FIXEDPOINT, 0.01] - final[RELAXATION, 0.01])
    assert 3.0 < d1 / d2 < 5.0


@settings(max_examples=10, deadline=None)
@given(st.floats(-np.pi, np.pi))
def test_gauge_covariance(theta):
    g = make_grid(2, 6.0, 60)
    P = ModelParams(1.0, 1.0, 3, g)
    cfg = EvolutionConfig(dt=0.05, t_final=0.5)
    u0 = bump(g, 1.3, 0.1)
    a = evolve(u0, P, cfg).final_state
    b = evolve(u0 * np.exp(1j * theta), P, cfg).final_state
    assert np.max(np.abs(b.values - np.exp(1j * theta) * a.values)) < 1e-10


def test_linear_flow_rotates_eigenvector():
    P = ModelParams(2.0, 1.0, 3, make_grid(2, 20.0, 2000))
    eig = ground_eigenpair(P.hamiltonian)
    psi = eig.psi0
    dt = 0.005
    tr = evolve(psi, P, EvolutionConfig(dt=dt, t_final=1.0, nonlinear_coefficient=0.0,
                                        snapshot_stride=20))
    norm = inner_l2(psi, psi).real
    for t, v in zip(tr.snapshot_times, tr.snapshots):
        c = inner_l2(GraphFunction(P.grid, v), psi) / norm
        assert abs(abs(c) - 1) < 1e-4
        assert abs(np.angle(c * np.exp(-1j * eig.omega0 * t))) < 1e-4


def test_blowup_guard_carries_trajectory():
    P = ModelParams(1.0, 1.0, 3, SMALL)
    with pytest.raises(BlowUpError) as info:
        evolve(bump(SMALL), P, EvolutionConfig(dt=0.01, t_final=0.1, blowup_factor=0.5))
    assert info.value.trajectory.status == "blowup"
    assert len(info.value.trajectory.times) == 1


def test_fixedpoint_failure_reports_dt():
    P = ModelParams(1.0, 1.0, 3, SMALL)
    cfg = EvolutionConfig(dt=0.2, t_final=1.0, allow_large_dt=True, fixedpoint_max_iter=2)
    with pytest.raises(FixedPointError, match="smaller dt") as info:
        evolve(bump(SMALL, 3.0), P, cfg)
    assert info.value.trajectory.status == "fixedpoint-failure"


def test_quotient_limits():
    p = 4.0
    s = np.array([0.0, 1.0, 2.0, 2.0, 0.0])
    s0 = np.array([0.0, 1.0, 2.0 + 1e-9, 1.0, 1.0])
    q = _dfp_quotient(s, s0, p)
    assert q[0] == 0
    assert np.isclose(q[1], 1.0)  # F'(s) = s^{(p-1)/2}
    assert np.isclose(q[2], 2.0 ** 1.5, rtol=1e-12)
    assert np.isclose(q[3], (2 * 2 ** 2.5 / 5 - 2 / 5) / 1.0)
    assert np.isclose(q[4], 2 / 5)


def test_cutoff_properties():
    assert smooth_cutoff(0.5) == 1 and smooth_cutoff(2.0) == 0
    r = np.linspace(0, 3, 301)
    assert np.all(np.diff(smooth_cutoff(r)) <= 0)
    g = make_grid(3, 40.0, 4000)
    u = bump(g)
    cut = apply_cutoff(u, 3.0)
    assert np.all(cut.nodal()[:, g.x >= 6.0] == 0)
    assert apply_cutoff(u, np.inf) is u
    assert np.allclose(apply_cutoff(u, 25.0).nodal()[:, g.x <= 25.0], u.nodal()[:, g.x <= 25.0])
    phi = explicit_soliton_symmetric(ModelParams(1.0, 1.0, 3, g))
    errs = [norm_h1(apply_cutoff(phi, a) - phi) for a in (5.0, 10.0, 20.0)]
    assert errs[0] > errs[1] > errs[2]
    with pytest.raises(ValueError):
        apply_cutoff(u, 0.0)


def test_random_perturbation_deterministic():
    g = make_grid(3, 5.0, 100)
    a = random_perturbation(g, 1e-3, seed=7)
    b = random_perturbation(g, 1e-3, seed=7)
    c = random_perturbation(g, 1e-3, seed=8)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert np.isclose(norm_h1(a), 1e-3)
    assert a.vertex_value == 0


@pytest.fixture(scope="module")
def supercritical():
    P = ModelParams(3.0, 100.0, 6, make_grid(2, 6.0, 1500, symmetric=True), COULOMB)
    return P, solve_ground_state(P, tol=1e-8, with_criterion=False)


def test_entry_conditions_enforced(supercritical):
    P, gs = supercritical
    cfg = EvolutionConfig(dt=1e-3, t_final=0.01)
    with pytest.raises(EntryConditionError) as info:
        instability_experiment(gs, P, 0.99, np.inf, 0.05, cfg)
    assert info.value.entry["pohozaev_negative"] is False
    with pytest.raises(ValueError):
        instability_experiment(gs, P, 1.01, 0.6, 0.05, cfg, perturbation="noise")


def test_standing_wave_stays_in_tube(supercritical):
    P, gs = supercritical
    res = instability_experiment(gs, P, 1.0, np.inf, 0.05, EvolutionConfig(dt=1e-3, t_final=0.05),
                                 require_entry=False)
    assert res.outcome == "no-exit"
    assert res.initial_distance == pytest.approx(0, abs=1e-12)
    assert np.max(res.trajectory.as_array("dist")) < 1e-3 * res.tube_radius


def test_noise_runs_are_reproducible(supercritical):
    P, gs = supercritical
    cfg = EvolutionConfig(dt=1e-3, t_final=0.005)
    runs = [instability_experiment(gs, P, 1.0, np.inf, 0.05, cfg, require_entry=False,
                                   perturbation="noise", seed=3) for _ in range(2)]
    assert np.array_equal(runs[0].trajectory.final_state.values,
                          runs[1].trajectory.final_state.values)
    assert runs[0].initial_distance > 0
