"""Small commitment instances shared by the unit and acceptance tests."""
import numpy as np

from cybergas.power_market import Branch, Generator, PowerSystem


def triangle(gens):
    br = [Branch("ab", "a", "b", 10, -60, 60), Branch("bc", "b", "c", 10, -60, 60),
          Branch("ac", "a", "c", 10, -60, 60)]
    return PowerSystem(["a", "b", "c"], br, gens, "c")


def instance_a():
    """Three units, reserve rules active; the peaker is needed only in the middle hour."""
    s = triangle([
        Generator("cheap", "a", 10, no_load_cost=50, startup_cost=200, reserve_cost=2, p_max=80, ramp_hr=40,
                  reserve_cap=40, initial_on=True, initial_p=20),
        Generator("mid", "b", 25, no_load_cost=150, startup_cost=300, shutdown_cost=20, reserve_cost=1,
                  p_max=60, reserve_cap=40),
        Generator("peak", "c", 40, no_load_cost=5, startup_cost=20, reserve_cost=0.5, p_max=50, reserve_cap=50)])
    load = np.array([[15, 15, 10], [30, 30, 30], [15, 10, 15]], float)
    return s, load


def instance_b_system():
    return triangle([
        Generator("base", "a", 10, no_load_cost=10, p_max=60, initial_on=True, initial_p=40),
        Generator("peaker", "b", 30, no_load_cost=100, startup_cost=50, p_max=60, min_up=3),
        Generator("spare", "c", 80, no_load_cost=0, p_max=60)])


def instance_b():
    """Energy only; a first-hour spike forces the peaker on, and its minimum up time keeps it on."""
    load = np.array([[30, 30, 20], [15, 15, 10], [15, 15, 10], [15, 15, 10]], float)
    return instance_b_system(), load


def instance_b_reserves():
    """Same units and shape at 60% load with the reserve rules active."""
    s, load = instance_b()
    return s, 0.6 * load
