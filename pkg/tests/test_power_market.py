import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cybergas.power_market import (Branch, CommitmentSchedule, Generator, InfeasibleScuc, PowerSystem, compute_ptdf,
                                   read_schedule_csv, schedule_cost, solve_dcopf, solve_scuc,
                                   write_dispatch_csv, write_schedule_csv)
from instances import instance_a, instance_b, instance_b_reserves, instance_b_system, triangle
from oracles import angle_flows, enumerate_scuc


def one_bus(*gens):
    return PowerSystem(["x"], [], list(gens), "x")


# ---------------------------------------------------------------- PTDF

def test_two_bus_ptdf():
    s = PowerSystem(["a", "b"], [Branch("ab", "a", "b", 5.0, -100, 100)], [Generator("g", "a", 1, p_max=10)], "b")
    np.testing.assert_allclose(compute_ptdf(s).matrix, [[1.0, 0.0]], atol=1e-15)


def test_triangle_split():
    s, _ = instance_a()
    M = compute_ptdf(s).matrix
    # inject at a, withdraw at the reference c: two thirds on the direct line
    np.testing.assert_allclose(M[:, 0], [1 / 3, 1 / 3, 2 / 3], atol=1e-14)
    np.testing.assert_array_equal(M[:, 2], 0.0)


def test_reference_injection_moves_nothing():
    s, _ = instance_a()
    inj = np.array([0.0, 0.0, 25.0])
    np.testing.assert_array_equal(compute_ptdf(s).matrix @ inj, 0.0)


def test_changing_reference_preserves_balanced_flows():
    s, _ = instance_a()
    inj = np.array([30.0, -10.0, -20.0])
    np.testing.assert_allclose(compute_ptdf(s).matrix @ inj, compute_ptdf(s, "a").matrix @ inj, atol=1e-12)


def test_unknown_reference():
    s, _ = instance_a()
    with pytest.raises(ValueError, match="unknown reference"):
        compute_ptdf(s, "zz")


@st.composite
def meshed(draw):
    n = draw(st.integers(2, 7))
    buses = [f"b{i}" for i in range(n)]
    edges = [(draw(st.integers(0, i - 1)), i) for i in range(1, n)]
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=4))
    edges += [(i, j) for i, j in extra if i != j]
    sus = draw(st.lists(st.floats(0.5, 20.0), min_size=len(edges), max_size=len(edges)))
    inj = draw(st.lists(st.floats(-50, 50), min_size=n, max_size=n))
    ref = draw(st.integers(0, n - 1))
    branches = [Branch(f"l{k}", buses[i], buses[j], b, -1e3, 1e3) for k, ((i, j), b) in enumerate(zip(edges, sus))]
    return PowerSystem(buses, branches, [], buses[ref]), np.array(inj)


@settings(max_examples=60, deadline=None)
@given(case=meshed())
def test_ptdf_matches_angle_solution(case):
    s, inj = case
    flows = compute_ptdf(s).matrix @ inj
    ref = angle_flows(s.buses, [(b.from_bus, b.to_bus, b.susceptance) for b in s.branches], s.ref_bus, inj)
    np.testing.assert_allclose(flows, ref, atol=1e-8)


def test_islanded_system_rejected():
    with pytest.raises(ValueError, match="not connected"):
        PowerSystem(["a", "b", "c"], [Branch("ab", "a", "b", 1, -1, 1)], [], "a")


def test_generator_validation_message():
    with pytest.raises(ValueError, match="generator g: unknown bus"):
        one_bus(Generator("g", "nowhere", 1, p_max=10))


# ---------------------------------------------------------------- commitment

def test_one_bus_closed_form():
    s = one_bus(Generator("g", "x", 12.0, no_load_cost=30.0, p_max=100, initial_on=True, initial_p=50))
    load = np.full((24, 1), 50.0)
    r = solve_scuc(s, load, reserves=False)
    assert r.cost == pytest.approx(24 * (50 * 12.0 + 30.0), abs=1e-6)
    np.testing.assert_array_equal(r.schedule.u, 1.0)


@pytest.mark.parametrize("make,reserves", [(instance_a, True), (instance_b, False), (instance_b_reserves, True)])
def test_matches_enumeration(make, reserves):
    s, load = make()
    r = solve_scuc(s, load, reserves=reserves)
    cost, u = enumerate_scuc(s, load, reserves=reserves)
    assert abs(r.cost - cost) <= 1e-6
    assert r.gap <= 1e-4


def test_instance_a_peaker_only_in_middle_hour():
    s, load = instance_a()
    r = solve_scuc(s, load)
    np.testing.assert_array_equal(r.schedule.u[2], [0, 1, 0])


def test_min_up_keeps_peaker_on():
    s, load = instance_b()
    r3 = solve_scuc(s, load, reserves=False)
    np.testing.assert_array_equal(r3.schedule.u[1], [1, 1, 1, 0])
    gens = [dataclasses.replace(g, min_up=1) if g.id == "peaker" else g for g in s.generators]
    r1 = solve_scuc(triangle(gens), load, reserves=False)
    np.testing.assert_array_equal(r1.schedule.u[1], [1, 0, 0, 0])
    assert r1.cost < r3.cost


def test_reserves_bring_second_unit():
    s, load = instance_b_reserves()
    with_r = solve_scuc(s, load)
    without = solve_scuc(s, load, reserves=False)
    assert with_r.cost >= without.cost
    # every hour has at least two units on under the single-outage rule
    assert (with_r.schedule.u.sum(axis=0) >= 2).all()


def _check_schedule(s, load, r, reserves=True):
    sch, dis = r.schedule, r.dispatch
    u, v, w, R, P = sch.u, sch.v, sch.w, sch.r, dis.P
    tol = 1e-6
    assert set(np.unique(u)) <= {0.0, 1.0}
    u0 = np.array([1.0 if g.initial_on else 0.0 for g in s.generators])
    prev = np.concatenate([u0[:, None], u[:, :-1]], axis=1)
    np.testing.assert_allclose(v - w, u - prev, atol=tol)
    assert (v >= -tol).all() and (w >= -tol).all()
    pmin, pmax = s.arr("p_min")[:, None], s.arr("p_max")[:, None]
    assert (P >= pmin * u + R - tol).all() and (P <= pmax * u - R + tol).all()
    np.testing.assert_allclose(P.sum(axis=0), load.sum(axis=1), atol=tol)
    if reserves:
        assert (R.sum(axis=0) >= 0.07 * load.sum(axis=1) - tol).all()
        for k in range(s.n_gens):
            assert (R.sum(axis=0) >= P[k] + R[k] - tol).all()
    for l, b in enumerate(s.branches):
        assert (dis.flows[l] <= b.p_max + tol).all() and (dis.flows[l] >= b.p_min - tol).all()
    for g, gen in enumerate(s.generators):
        for t in range(gen.min_up - 1, u.shape[1]):
            assert v[g, t - gen.min_up + 1:t + 1].sum() <= u[g, t] + tol
    assert schedule_cost(s, sch, P) == pytest.approx(r.cost, abs=1e-6)


@pytest.mark.parametrize("make,reserves", [(instance_a, True), (instance_b, False), (instance_b_reserves, True)])
def test_schedule_invariants(make, reserves):
    s, load = make()
    _check_schedule(s, load, solve_scuc(s, load, reserves=reserves), reserves)


@settings(max_examples=15, deadline=None)
@given(scale=st.floats(0.3, 0.9), shape=st.lists(st.floats(0.5, 1.0), min_size=3, max_size=3))
def test_invariants_on_random_loads(scale, shape):
    s, load = instance_b_reserves()
    load = load[:3] * np.array(shape)[:, None] * scale / 0.6
    r = solve_scuc(s, load)
    _check_schedule(s, load, r)


def test_capacity_shortfall_certificate():
    s = instance_b_system()
    with pytest.raises(InfeasibleScuc) as e:
        solve_scuc(s, np.full((2, 3), 70.0), reserves=False)
    assert "generator_limits" in e.value.certificate


def test_congestion_certificate():
    s = PowerSystem(["a", "b"], [Branch("ab", "a", "b", 5.0, -10, 10)],
                    [Generator("g", "a", 1, p_max=100, initial_on=True, initial_p=30)], "a")
    with pytest.raises(InfeasibleScuc) as e:
        solve_scuc(s, np.array([[0.0, 30.0]]), reserves=False)
    assert "flow_limits" in e.value.certificate
    assert "flow_limits" in str(e.value)


def test_schedule_csv_round_trip(tmp_path):
    s, load = instance_a()
    r = solve_scuc(s, load)
    write_schedule_csv(s, r.schedule, r.dispatch, tmp_path / "s.csv")
    sch, P = read_schedule_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(sch.u, r.schedule.u)
    np.testing.assert_array_equal(sch.r, r.schedule.r)
    np.testing.assert_array_equal(P, r.dispatch.P)
    write_dispatch_csv(s, r.dispatch, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().startswith("kind,id,h0,h1,h2")


# ---------------------------------------------------------------- redispatch

@pytest.fixture(scope="module")
def a_solved():
    s, load = instance_a()
    return s, load, solve_scuc(s, load)


def test_redispatch_without_curtailment(a_solved):
    s, load, r = a_solved
    d = solve_dcopf(s, r.schedule, load)
    assert d.status == "optimal" and d.shed_mwh == 0.0
    assert d.energy_cost <= r.dispatch.energy_cost + 1e-6


def test_curtailment_raises_cost(a_solved):
    s, load, r = a_solved
    d = solve_dcopf(s, r.schedule, load, {"cheap": 1}, baseline=r.dispatch)
    np.testing.assert_array_equal(d.P[0, 1:], 0.0)
    np.testing.assert_allclose(d.P[:, 0], r.dispatch.P[:, 0])
    assert d.objective > r.dispatch.energy_cost


def test_shed_equals_deficit():
    s = one_bus(Generator("a", "x", 10, p_max=60, initial_on=True, initial_p=50),
                Generator("b", "x", 20, p_max=30, initial_on=True, initial_p=0))
    u = np.ones((2, 3))
    sch = CommitmentSchedule(s.gen_ids, u, np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)))
    load = np.full((3, 1), 50.0)
    d = solve_dcopf(s, sch, load, {"a": 0}, voll=1000.0)
    assert d.status == "degraded"
    np.testing.assert_allclose(d.shed[0], [20.0, 20.0, 20.0], atol=1e-9)
    assert d.shed_cost == pytest.approx(60 * 1000.0)
    assert d.energy_cost == pytest.approx(90 * 20.0)


def test_earlier_curtailment_costs_more(a_solved):
    s, load, r = a_solved
    costs = [solve_dcopf(s, r.schedule, load, {"cheap": h}, baseline=r.dispatch).objective for h in (2, 1, 0)]
    assert all(b >= a - 1e-9 for a, b in zip(costs, costs[1:]))


def test_unknown_curtailed_generator(a_solved):
    s, load, r = a_solved
    with pytest.raises(KeyError):
        solve_dcopf(s, r.schedule, load, {"nope": 0})
