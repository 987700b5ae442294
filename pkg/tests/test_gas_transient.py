import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cybergas.attack_chain import ContingencyWindow
from cybergas.gas_network import GasNode, Pipe, RawGasNetwork, Scaling, nondimensionalize
from cybergas.gas_transient import (ControlSignal, ControlValues, GasState, PiecewiseLinear, apply_contingencies,
                                    apply_contingency, dae_residual, g, integrate, linepack_weight,
                                    min_pressure_violations, net_injection, solve_steady_state)
from cybergas.io import load_gas
from conftest import DESK, line_network, rho_psi
from oracles import critical_ratio, steady_radial

SC = Scaling(rho0=40.0, c=377.0, length=1e4)


def one_pipe(compressor=False, alpha_max=1.0, length=1e4):
    nodes = (GasNode("1", 10, 80, slack=True, slack_density=40.0), GasNode("2", 10, 80))
    return nondimensionalize(RawGasNetwork(nodes, (Pipe("e", "1", "2", length, 0.5, 0.01, compressor, alpha_max),),
                                           SC))


def desk_net():
    return load_gas(f"{DESK}/gas.yaml")


def bisect(f, lo, hi, tol=1e-15):
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------- residual

def test_friction_term():
    assert g(2.0, 4.0) == 1.0
    assert g(-2.0, 4.0) == -1.0
    with pytest.raises(ValueError):
        g(1.0, 0.0)


def test_one_pipe_residual_by_hand():
    net = one_pipe(True, 2.0)
    a, s, sdot, d = 1.3, 1.0, 0.01, 0.02
    rho2, phi, rho2dot, phidot = 0.9, 0.05, -0.003, 0.002
    u = ControlValues(np.array([a]), np.array([d]), np.array([s]), np.array([sdot]))
    r = dae_residual(np.array([rho2dot, phidot]), np.array([rho2, phi]), u, net)
    X, L, K = net.X[0], net.Lam[0], net.K[0]
    mass = X * L * rho2dot + X * L * a * sdot - 4 * (X * phi - d)
    mom = phidot + (rho2 - a * s) / L + K * phi * abs(phi) / (a * s + rho2)
    np.testing.assert_allclose(r, [mass, mom], rtol=1e-14, atol=1e-15)


def test_residual_rejects_nonpositive_density():
    net = one_pipe()
    u = ControlValues(np.array([]), np.array([0.0]), np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        dae_residual(np.zeros(2), np.array([-1.0, 0.0]), u, net)


# ---------------------------------------------------------------- steady state

def test_no_flow_equilibrium():
    net = desk_net()
    u = ControlValues(np.ones(net.n_compressors), np.zeros(net.n_demand), net.slack_density, np.zeros(1))
    st_ = solve_steady_state(net, u)
    np.testing.assert_allclose(st_.rho, net.slack_density[0], atol=1e-12)
    np.testing.assert_allclose(st_.flux, 0.0, atol=1e-12)


def test_one_pipe_against_scalar_bisection():
    net = one_pipe(length=5e4)
    d = 0.002
    u = ControlValues(np.array([]), np.array([d]), np.array([1.0]), np.array([0.0]))
    st_ = solve_steady_state(net, u)
    phi = d / net.X[0]
    L, K, s = net.Lam[0], net.K[0], 1.0
    rho2 = bisect(lambda r: s - r - L * K * phi * abs(phi) / (s + r), 1e-6, s)
    assert st_.flux[0] == pytest.approx(phi, rel=1e-12)
    assert st_.rho[0] == pytest.approx(rho2, rel=1e-10)


def test_compressor_zero_flow():
    net = one_pipe(True, 2.0)
    u = ControlValues(np.array([1.5]), np.array([0.0]), np.array([1.0]), np.array([0.0]))
    assert solve_steady_state(net, u).rho[0] == pytest.approx(1.5, abs=1e-12)


def test_steady_residual_small():
    net = desk_net()
    u = ControlSignal.constant(net, [1.2, 1.1, 1.1]).at(0.0, net)
    st_ = solve_steady_state(net, u)
    assert np.linalg.norm(dae_residual(np.zeros(len(st_.vector)), st_.vector, u, net)) < 1e-9


@settings(max_examples=20, deadline=None)
@given(a1=st.floats(1.0, 1.6), a2=st.floats(1.0, 1.6), a3=st.floats(1.0, 1.6), scale=st.floats(0.2, 1.5))
def test_steady_matches_tree_oracle(a1, a2, a3, scale):
    net = desk_net()
    alpha = np.minimum([a1, a2, a3], net.alpha_max[net.comp_idx])
    dem = net.base_withdrawal[net.demand_idx] + scale * np.array([0.0, 20.0, 30.0, 10.0, 40.0]) / net.scaling.mass_flow
    ref = steady_radial(net, alpha, dem)
    if ref is None:
        return
    rho, flux = ref
    st_ = solve_steady_state(net, ControlSignal.constant(net, alpha, dem).at(0.0, net))
    np.testing.assert_allclose(st_.rho, rho[net.demand_idx], rtol=1e-9)
    np.testing.assert_allclose(st_.flux, flux, rtol=1e-9, atol=1e-12)


def test_single_path_uniform_flux():
    net = line_network(demand_kg_s=80.0)
    st_ = solve_steady_state(net, ControlSignal.constant(net, [1.2]).at(0.0, net))
    d = net.base_withdrawal[net.node_index("f")]
    np.testing.assert_allclose(st_.flux, d / net.X, rtol=1e-12)


@settings(max_examples=15, deadline=None)
@given(k=st.integers(0, 2), hi=st.floats(1.05, 1.6), frac=st.floats(0.0, 1.0))
def test_lower_ratio_never_raises_downstream_density(k, hi, frac):
    net = desk_net()
    alpha = np.array([1.3, 1.2, 1.2])
    a_hi = alpha.copy()
    a_hi[k] = min(hi, net.alpha_max[net.comp_idx[k]])
    a_lo = a_hi.copy()
    a_lo[k] = 1.0 + frac * (a_hi[k] - 1.0)
    s_hi = solve_steady_state(net, ControlSignal.constant(net, a_hi).at(0, net))
    s_lo = solve_steady_state(net, ControlSignal.constant(net, a_lo).at(0, net))
    pipe = net.comp_idx[k]
    down = [net.node_ids[int(net.to_idx[pipe])]] + net.downstream_nodes(net.node_ids[int(net.to_idx[pipe])])
    pos = {net.node_ids[i]: j for j, i in enumerate(net.demand_idx)}
    for n in down:
        assert s_lo.rho[pos[n]] <= s_hi.rho[pos[n]] + 1e-12


# ---------------------------------------------------------------- integration

def test_equilibrium_persists():
    net = desk_net()
    u = ControlSignal.constant(net, [1.2, 1.1, 1.1])
    x0 = solve_steady_state(net, u.at(0, net))
    tr = integrate(net, x0, u, 24.0)
    assert np.max(np.abs(tr.step_states - x0.vector)) < 1e-6


def _step_run(net, t_step=1.0, factor=None, rtol=1e-6, atol=1e-5, T=24.0):
    d0 = net.base_withdrawal[net.demand_idx] + np.array([0, 14.6, 66.3, 19.3, 60.0]) / net.scaling.mass_flow
    factor = np.array([1, 1.2, 0.8, 1.2, 0.7]) if factor is None else factor
    d1 = d0 * factor
    alpha = np.array([1.15, 1.1, 1.1])
    dem = PiecewiseLinear([0, t_step, t_step, T], [d0, d0, d1, d1])
    u = ControlSignal(PiecewiseLinear.constant(alpha, 0, T), dem, PiecewiseLinear.constant(net.slack_density, 0, T),
                      net.compressor_ids)
    x0 = solve_steady_state(net, u.at(0, net))
    return u, x0, integrate(net, x0, u, T, rtol=rtol, atol=atol)


def test_step_reaches_new_steady_state():
    net = desk_net()
    u, _, tr = _step_run(net)
    target = solve_steady_state(net, u.at(24.0, net))
    assert np.max(np.abs(tr.step_states[-1] - target.vector)) < 1e-4


def test_halving_tolerance_changes_terminal_state_little():
    net = desk_net()
    _, _, a = _step_run(net, T=6.0)
    _, _, b = _step_run(net, rtol=5e-7, atol=5e-6, T=6.0)
    x = a.step_states[-1]
    tol = 1e-5 + 1e-6 * np.abs(x)
    assert np.all(np.abs(b.step_states[-1] - x) < tol)


def test_mass_balance_on_line():
    net = line_network(demand_kg_s=60.0)
    T = 6.0
    d0 = net.base_withdrawal[net.demand_idx]
    dem = PiecewiseLinear([0, 1, 1, T], [d0, d0, 1.3 * d0, 1.3 * d0])
    u = ControlSignal(PiecewiseLinear.constant([1.2], 0, T), dem, PiecewiseLinear.constant(net.slack_density, 0, T),
                      net.compressor_ids)
    x0 = solve_steady_state(net, u.at(0, net))
    tr = integrate(net, x0, u, T, max_step_h=1 / 60)
    Nd = net.n_demand

    def rall(x):
        r = np.empty(net.n_nodes)
        r[net.demand_idx] = x[:Nd]
        r[net.slack_idx] = net.slack_density
        return r

    st_, sx = tr.step_times, tr.step_states
    h = np.diff(st_) / net.scaling.hours_per_unit
    inj0 = [net_injection(net, sx[k, Nd:], dem(st_[k])) for k in range(len(st_) - 1)]
    inj1 = [net_injection(net, sx[k + 1, Nd:], dem.left(st_[k + 1])) for k in range(len(st_) - 1)]
    integral = float(np.sum(h * 0.5 * (np.array(inj0) + np.array(inj1))))
    dW = linepack_weight(net, rall(sx[-1]), [1.2]) - linepack_weight(net, rall(sx[0]), [1.2])
    assert abs(dW - integral) < 1e-3 * abs(dW)


def test_deterministic():
    net = desk_net()
    _, _, a = _step_run(net, T=4.0)
    _, _, b = _step_run(net, T=4.0)
    assert np.array_equal(a.step_states, b.step_states) and np.array_equal(a.rho, b.rho)


def test_output_grid_is_five_minutes():
    net = desk_net()
    _, _, tr = _step_run(net, T=2.0)
    np.testing.assert_allclose(np.diff(tr.times), 5 / 60)
    assert tr.times[0] == 0.0 and tr.times[-1] == 2.0


def test_inconsistent_start_raises():
    net = desk_net()
    u = ControlSignal.constant(net)
    with pytest.raises(ValueError):
        integrate(net, GasState(np.ones(net.n_demand), np.zeros(net.n_pipes)), u, 0.0)


def test_demand_bound_warning():
    net = line_network()
    d = net.base_withdrawal[net.demand_idx].copy()
    d[0] = -0.5 / net.scaling.mass_flow    # injection at a node whose withdrawal floor is 0
    u = ControlSignal.constant(net, [1.2], d, horizon=0.5)
    x0 = solve_steady_state(net, u.at(0, net))
    tr = integrate(net, x0, u, 0.5)
    assert tr.warnings[0] == "withdrawal at node m outside bounds at t=0.0000 h"
    assert all("node m" in w for w in tr.warnings)


# ---------------------------------------------------------------- contingencies

def test_full_window_unit_ratio():
    net = desk_net()
    u = ControlSignal.constant(net, [1.3, 1.2, 1.1])
    v = apply_contingency(u, ContingencyWindow("C2", 0.0, 24.0))
    for t in np.linspace(0, 24, 97):
        a = v.alpha(t)
        assert a[1] == 1.0
        np.testing.assert_allclose(a, [1.3, 1.0, 1.1], rtol=1e-15)


def test_window_inside():
    net = desk_net()
    u = ControlSignal.constant(net, [1.3, 1.2, 1.1])
    v = apply_contingency(u, ContingencyWindow("C1", 5.0, 9.0))
    assert v.alpha(4.99)[0] == pytest.approx(1.3)
    assert v.alpha(5.0)[0] == 1.0 and v.alpha(8.99)[0] == 1.0
    assert v.alpha(9.01)[0] == pytest.approx(1.3)
    assert v.demand is u.demand and v.slack_density is u.slack_density


def test_window_at_horizon_holds_to_the_end():
    net = desk_net()
    u = ControlSignal.constant(net, [1.3, 1.2, 1.1])
    v = apply_contingency(u, ContingencyWindow("C3", 20.0, 24.0))
    assert v.alpha(24.0)[2] == 1.0 and v.alpha.left(24.0)[2] == 1.0
    assert v.alpha(19.99)[2] == pytest.approx(1.1)


def test_no_windows_unchanged():
    net = desk_net()
    u = ControlSignal.constant(net, [1.3, 1.2, 1.1])
    assert apply_contingencies(u, []) is u


def test_unknown_compressor():
    net = desk_net()
    with pytest.raises(KeyError):
        apply_contingency(ControlSignal.constant(net), ContingencyWindow("C9", 0.0, 1.0))


# ---------------------------------------------------------------- violations

def test_steady_within_bounds_no_violation():
    net = desk_net()
    u = ControlSignal.constant(net, [1.2, 1.1, 1.1], horizon=2.0)
    x0 = solve_steady_state(net, u.at(0, net))
    assert min_pressure_violations(integrate(net, x0, u, 2.0), net) == []


def test_two_dips_two_intervals():
    net = desk_net()
    u = ControlSignal.constant(net, [1.2, 1.1, 1.1], horizon=2.0)
    x0 = solve_steady_state(net, u.at(0, net))
    tr = integrate(net, x0, u, 2.0)
    rho = tr.rho.copy()
    i = net.node_index("n3")
    lo = net.rho_min[i]
    rho[5:8, i] = lo * 0.99
    rho[15:17, i] = lo * 0.98
    v = min_pressure_violations(dataclasses.replace(tr, rho=rho), net)
    assert [x.node_id for x in v] == ["n3", "n3"]
    assert v[0].t_end < v[1].t_start
    assert v[1].worst_density == pytest.approx(lo * 0.98)


def test_outage_pushes_marginal_node_below_minimum():
    # far node set just above 500 psi by the compressor; the outage takes it below
    net = line_network(demand_kg_s=60.0)
    d = net.base_withdrawal[net.demand_idx]
    a_crit = critical_ratio(net, 0, [1.0], d)
    alpha = a_crit + 0.002
    u = ControlSignal.constant(net, [alpha], d)
    x0 = solve_steady_state(net, u.at(0, net))
    f = list(net.demand_idx).index(net.node_index("f"))
    p_far = net.pressure_pa(x0.rho[f]) / 6894.757293168
    assert 500.0 < p_far < 505.0
    tr = integrate(net, x0, apply_contingency(u, ContingencyWindow("C1", 4.0, 10.0)), 24.0)
    v = min_pressure_violations(tr, net)
    assert [x.node_id for x in v] == ["f"]
    assert 4.0 < v[0].t_start < 10.0 < v[0].t_end
    assert v[0].worst_density < net.rho_min[net.node_index("f")]
    assert rho_psi(500) / 40.0 == pytest.approx(net.rho_min[net.node_index("f")])
    assert math.isfinite(v[0].worst_time)
