import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossing_sim.agent_model import (
    SquashConfig,
    UtilityParams,
    collision_cost,
    free_speed,
    utility,
)
from crossing_sim.control import (
    AgentSnapshot,
    ControlSchedule,
    decide_deterministic,
    evaluate_primitives,
)
from crossing_sim.errors import UnboundedFreeSpeedError
from crossing_sim.kinematics import NO_COLLISION, AgentState, CollisionAssessment

NO_SQUASH = SquashConfig(c_max=1e300)


def test_free_speed_pedestrian():
    assert free_speed(UtilityParams(1.0, 0.38)) == pytest.approx(1.0 / 0.76)
    assert round(free_speed(UtilityParams(1.0, 0.38)), 4) == 1.3158


def test_free_speed_round_numbers():
    assert free_speed(UtilityParams(1.0, 0.5)) == 1.0


def test_free_speed_vehicle():
    assert free_speed(UtilityParams(1.0, 0.036, agent_kind="vehicle")) == pytest.approx(13.9, abs=0.02)


def test_free_speed_unbounded():
    with pytest.raises(UnboundedFreeSpeedError):
        free_speed(UtilityParams(1.0, 0.0))


def test_cost_zero_off_course():
    assert collision_cost(UtilityParams(collision_weight=1.0), NO_COLLISION, 1.0) == 0.0


def test_pedestrian_cost_squashed():
    c = collision_cost(UtilityParams(collision_weight=1.0), CollisionAssessment(True, 2.0, 2.0), 1.0)
    raw = 1.0 / 2.0
    assert c == pytest.approx(1e3 * raw / (1e3 + raw))
    assert c == pytest.approx(0.49975, abs=1e-5)


def test_vehicle_cost_raw():
    p = UtilityParams(collision_weight=1.0, agent_kind="vehicle")
    c = collision_cost(p, CollisionAssessment(True, 2.5, 34.75), 13.9, NO_SQUASH)
    assert c == pytest.approx((13.9 / 5.0) ** 2, rel=1e-12)
    assert c == pytest.approx(7.7284, abs=1e-4)


@settings(max_examples=200, deadline=None)
@given(v=st.floats(0.1, 30.0), tau=st.floats(0.05, 20.0))
def test_vehicle_cost_identity_stopping_distance(v, tau):
    p = UtilityParams(collision_weight=1.0, agent_kind="vehicle")
    d = v * tau
    c = collision_cost(p, CollisionAssessment(True, tau, d), v, NO_SQUASH)
    assert c == pytest.approx((v * v / (2 * d)) ** 2, rel=1e-9)


@settings(max_examples=300, deadline=None)
@given(w=st.floats(0.0, 1e6), tau=st.floats(0.0, 50.0), v=st.floats(0.0, 40.0),
       c_max=st.floats(0.1, 1e4), kind=st.sampled_from(["pedestrian", "vehicle"]))
def test_cost_bounded_by_c_max(w, tau, v, c_max, kind):
    p = UtilityParams(collision_weight=w, agent_kind=kind)
    c = collision_cost(p, CollisionAssessment(True, tau, v * tau), v, SquashConfig(c_max=c_max))
    assert 0.0 <= c <= c_max


def test_utility_standstill():
    assert utility(UtilityParams(), AgentState((0.0, 0.0), 0.0)) == 0.0


def test_utility_at_free_speed_is_maximum():
    p = UtilityParams(1.0, 0.38)
    u = utility(p, AgentState((0.0, 0.0), free_speed(p)))
    assert u == pytest.approx(1.0 / (4 * 0.38))
    assert round(u, 4) == 0.6579


def test_utility_with_pedestrian_conflict():
    p = UtilityParams(1.0, 0.38, 0.0, 1.0)
    u = utility(p, AgentState((0.0, 0.0), 1.0), [CollisionAssessment(True, 2.0, 2.0)], NO_SQUASH)
    assert u == pytest.approx(0.12)


def test_utility_concave_argmax_on_grid():
    p = UtilityParams(1.0, 0.38)
    vs = np.sort(np.append(np.linspace(0.0, 3.0, 301), free_speed(p)))
    us = [utility(p, AgentState((0.0, 0.0), float(v))) for v in vs]
    assert vs[int(np.argmax(us))] == free_speed(p)
    assert np.all(np.diff(np.diff(us)) < 0)


@settings(max_examples=200, deadline=None)
@given(kdv=st.floats(0.0, 2.0), kda=st.floats(0.0, 2.0), w=st.floats(0.0, 5.0),
       dk=st.floats(0.0, 1.0), v=st.floats(0.0, 5.0), a=st.floats(-3.0, 3.0),
       which=st.sampled_from(["k_dv", "k_da", "collision_weight"]))
def test_utility_non_increasing_in_weights(kdv, kda, w, dk, v, a, which):
    base = dict(k_g=1.0, k_dv=kdv, k_da=kda, collision_weight=w)
    bumped = dict(base, **{which: base[which] + dk})
    state = AgentState((0.0, 0.0), v, a)
    course = [CollisionAssessment(True, 1.5, 1.5 * v)]
    assert (utility(UtilityParams(**bumped), state, course)
            <= utility(UtilityParams(**base), state, course) + 1e-12)


@settings(max_examples=100, deadline=None)
@given(scale=st.floats(0.01, 100.0), kdv=st.floats(0.2, 1.0), kc=st.floats(0.0, 5.0),
       v0=st.sampled_from([0.0, 0.5, 1.0, 1.5]), other_x=st.floats(-8.0, -2.0))
def test_weight_scaling_preserves_decision(scale, kdv, kc, v0, other_x):
    p = UtilityParams(1.0, kdv, 0.0, kc)
    state = AgentState((0.0, -4.0), v0, 0.0, (0.0, 1.0))
    other = [AgentState((other_x, 0.0), 1.0, 0.0, (1.0, 0.0))]
    squash = SquashConfig(c_max=1e300)

    def choice(params):
        snap = AgentSnapshot(state, ControlSchedule(v0), params)
        return decide_deterministic(evaluate_primitives(snap, other, squash=squash))

    assert choice(p) == choice(p.scaled(scale))
