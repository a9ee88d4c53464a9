"""Suspension flows: event-driven stepping, flow averages, and the two
bridge checks back to the base map."""

import math

import numpy as np
import pytest

import ergolab as E
from ergolab.errors import DomainError


def unit_flow():
    return E.SuspensionFlow(E.get_system("doubling"), E.constant_roof(1.0))


def test_roof_validation():
    r = E.constant_roof(0.7)
    assert (r.rho_min, r.rho_max) == (0.7, 0.7)
    c = E.cosine_roof(0.3)
    assert (c.rho_min, c.rho_max) == (0.7, 1.3)
    assert c.fn(np.array([[0.0]]))[0] == pytest.approx(1.3)
    assert c.fn(np.array([[0.5]]))[0] == pytest.approx(0.7)
    with pytest.raises(ValueError):
        E.constant_roof(0.0)
    with pytest.raises(ValueError):
        E.constant_roof(-1.0)
    with pytest.raises(ValueError):
        E.cosine_roof(1.0)
    with pytest.raises(ValueError):
        E.cosine_roof(-1.2)


def test_flow_step_worked_values():
    flow = unit_flow()
    # reaching the roof exactly crosses: (0.3, 0.6) + 0.4 -> (f(0.3), 0)
    out = E.flow_step(flow, E.FlowState(np.array([0.3]), 0.6), 0.4)
    assert out.x[0] == 0.6 and out.s == 0.0
    out = E.flow_step(flow, E.FlowState(np.array([0.3]), 0.6), 0.39)
    assert out.x[0] == 0.3 and out.s == pytest.approx(0.99)
    # two crossings and a quarter of the third fiber
    out = E.flow_step(flow, E.FlowState(np.array([0.3]), 0.0), 2.25)
    assert out.x[0] == pytest.approx(0.2, abs=1e-12)
    assert out.s == 0.25
    # zero time is the identity
    st = E.FlowState(np.array([0.3]), 0.125)
    out = E.flow_step(flow, st, 0.0)
    assert out.x[0] == 0.3 and out.s == 0.125


def test_flow_step_validation():
    flow = unit_flow()
    with pytest.raises(ValueError):
        E.flow_step(flow, E.FlowState(np.array([0.3]), 0.0), -0.1)
    with pytest.raises(DomainError):
        E.flow_step(flow, E.FlowState(np.array([0.3]), 1.0), 0.1)   # s >= roof
    with pytest.raises(DomainError):
        E.flow_step(flow, E.FlowState(np.array([0.3]), -0.1), 0.1)
    with pytest.raises(DomainError):
        E.flow_step(flow, E.FlowState(np.array([1.3]), 0.0), 0.1)


def test_flow_step_semigroup_under_cosine_roof():
    flow = E.SuspensionFlow(E.get_system("doubling"), E.cosine_roof(0.4))
    st = E.FlowState(np.array([0.137]), 0.2)
    one = E.flow_step(flow, st, 1.7)
    two = E.flow_step(flow, E.flow_step(flow, st, 0.9), 0.8)
    assert E.distance(flow.base, one.x, two.x) <= 1e-9
    assert one.s == pytest.approx(two.s, abs=1e-9)


def test_flow_average_reduces_to_map_average():
    # roof 1, fiber-constant observable, integer horizon, launched from s=0:
    # the flow average IS the base Birkhoff average
    flow = unit_flow()
    cos1 = E.get_observable("cos1", flow.base)
    fobs = E.fiber_constant(cos1)
    states, _ = E.sample_flow_states(flow, seed=21, start=0, count=50)
    for st in states:
        grounded = E.FlowState(st.x, 0.0)
        for T in (1, 5, 12):
            a_flow = E.flow_time_average(flow, fobs, grounded, float(T))
            a_map = E.time_average(flow.base, cos1, st.x, T)
            assert a_flow == pytest.approx(float(np.asarray(a_map).reshape(-1)[0]),
                                           abs=1e-12)


def test_flow_average_roof_rescaling():
    # roof c: T flow units traverse T/c base steps
    flow = E.SuspensionFlow(E.get_system("doubling"), E.constant_roof(0.5))
    cos1 = E.get_observable("cos1", flow.base)
    fobs = E.fiber_constant(cos1)
    x = np.array([0.3])
    a_flow = E.flow_time_average(flow, fobs, E.FlowState(x, 0.0), 10.0)
    a_map = E.time_average(flow.base, cos1, 0.3, 20)
    assert a_flow == pytest.approx(a_map, abs=1e-12)


def test_flow_average_at_fixed_point():
    flow = unit_flow()
    fobs = E.fiber_constant(E.get_observable("cos1", flow.base))
    for T in (1.0, 7.0, 12.75):
        got = E.flow_time_average(flow, fobs, E.FlowState(np.array([0.0]), 0.0), T)
        assert got == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        E.flow_time_average(flow, fobs, E.FlowState(np.array([0.0]), 0.0), 0.0)
    with pytest.raises(ValueError):
        E.flow_time_average(flow, fobs, E.FlowState(np.array([0.0]), 0.0), 1.0,
                            quadrature_step=0.0)


def test_quadrature_is_second_order_in_the_fiber():
    # a genuinely s-dependent observable: midpoint error shrinks ~4x per halving
    flow = unit_flow()
    fobs = E.FlowObservable("sinfiber", lambda x, s: np.sin(math.pi * s), 1.0)
    st = E.FlowState(np.array([0.3]), 0.0)
    exact = 2.0 / math.pi
    errs = [abs(E.flow_time_average(flow, fobs, st, 6.0, quadrature_step=h) - exact)
            for h in (0.2, 0.1, 0.05)]
    assert errs[1] / errs[0] <= 0.6
    assert errs[2] / errs[1] <= 0.6


def test_integer_part_reduction_check():
    flow = unit_flow()
    fobs = E.fiber_constant(E.get_observable("cos1", flow.base))
    st = E.FlowState(np.array([0.3]), 0.55)
    chk = E.integer_part_reduction_check(flow, fobs, st, 10.7)
    assert chk.ok
    assert chk.lhs <= chk.bound
    assert chk.bound == pytest.approx(2.0 * 0.7 / 10.7, abs=1e-9)
    assert chk.headline_constant == pytest.approx(1.0 / 10.0)
    # integer horizon: both averages are the same number
    chk0 = E.integer_part_reduction_check(flow, fobs, st, 8.0)
    assert chk0.lhs == 0.0 and chk0.ok and chk0.headline_ok
    with pytest.raises(ValueError):
        E.integer_part_reduction_check(flow, fobs, st, 1.9)


def test_integer_part_reduction_sampled_sweep():
    flow = unit_flow()
    fobs = E.fiber_constant(E.get_observable("cos1", flow.base))
    states, extra = E.sample_flow_states(flow, seed=33, start=0, count=200)
    for st, u in zip(states, extra):
        T = 2.0 + 48.0 * float(u)
        chk = E.integer_part_reduction_check(flow, fobs, st, T)
        assert chk.ok, f"factor-2 bound failed at T={T}"


def test_nontypical_inclusion_check():
    flow = unit_flow()
    fobs = E.fiber_constant(E.get_observable("cos1", flow.base))
    # typical state: deviation never reaches alpha, implication is vacuous
    st = E.FlowState(np.array([0.371]), 0.0)
    inc = E.flow_nontypical_inclusion_check(flow, fobs, 0.0, 0.6, st, 50.0)
    assert inc.vacuous and inc.ok and inc.dev_map is None
    # the fixed point deviates maximally: the map-side deviation must follow
    fixed = E.FlowState(np.array([0.0]), 0.0)
    inc = E.flow_nontypical_inclusion_check(flow, fobs, 0.0, 0.6, fixed, 50.0)
    assert not inc.vacuous
    assert inc.dev_flow == pytest.approx(1.0, abs=1e-12)
    assert inc.dev_map == pytest.approx(1.0, abs=1e-12)
    assert inc.ok
    with pytest.raises(ValueError):
        E.flow_nontypical_inclusion_check(flow, fobs, 0.0, 0.3, st, 13.0)  # T too short
    with pytest.raises(ValueError):
        E.flow_nontypical_inclusion_check(flow, fobs, 0.0, 0.0, st, 50.0)


def test_sample_flow_states():
    flow = E.SuspensionFlow(E.get_system("doubling"), E.cosine_roof(0.5))
    states, extra = E.sample_flow_states(flow, seed=4, start=0, count=300)
    assert len(states) == 300 and extra.shape == (300,)
    for st in states:
        room = float(flow.roof.fn(st.x.reshape(1, 1))[0])
        assert 0.0 <= st.s < room
    assert np.all((extra >= 0.0) & (extra < 1.0))
    # block addressing: chunked draws glue into the same sequence
    left, el = E.sample_flow_states(flow, seed=4, start=0, count=120)
    right, er = E.sample_flow_states(flow, seed=4, start=120, count=180)
    glued = left + right
    assert all(np.array_equal(a.x, b.x) and a.s == b.s
               for a, b in zip(states, glued))
    assert np.array_equal(extra, np.concatenate([el, er]))


def test_time1_lipschitz_estimate():
    flow = unit_flow()
    lip = E.estimate_time1_lipschitz(flow, 500, seed=9)
    # the time-1 map of the unit-roof suspension applies one doubling step
    assert 1.5 <= lip <= 2.0 * (1.0 + 1e-6)
    bent = E.SuspensionFlow(E.get_system("doubling"), E.cosine_roof(0.3))
    lip2 = E.estimate_time1_lipschitz(bent, 500, seed=9)
    assert math.isfinite(lip2) and lip2 > 1.0
    with pytest.raises(ValueError):
        E.estimate_time1_lipschitz(flow, 0, seed=9)


def test_suspension_over_cat_map():
    flow = E.SuspensionFlow(E.get_system("cat"), E.constant_roof(1.0))
    cos1 = E.get_observable("cos1", flow.base)
    fobs = E.fiber_constant(cos1)
    x = np.array([0.21, 0.34])
    out = E.flow_step(flow, E.FlowState(x, 0.0), 3.0)
    assert np.allclose(out.x, E.iterate(flow.base, x, 3), atol=0.0)
    a_flow = E.flow_time_average(flow, fobs, E.FlowState(x, 0.0), 9.0)
    a_map = E.time_average(flow.base, cos1, x, 9)
    assert a_flow == pytest.approx(float(a_map), abs=1e-12)
