import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossing_sim import scenarios as S
from crossing_sim.engine import AccumulatorConfig, WorldConfig, run
from crossing_sim.errors import ConfigurationError
from crossing_sim.kinematics import time_to_crossing_point


def arrival(spec: S.ScenarioSpec, name: str) -> float:
    return spec.arrival_times()[[a.name for a in spec.agents].index(name)]


# --- pedestrian pair ---------------------------------------------------------

def test_pp_lead_is_faster_agent():
    spec = S.build_pp(0.9, 0.5, k_dv=0.45, k_c=2.0)
    assert arrival(spec, "A") == pytest.approx(7 / 0.9)
    assert arrival(spec, "B") == pytest.approx(7 / 0.5)
    assert arrival(spec, "A") < arrival(spec, "B")


def test_pp_equal_speeds_tie():
    spec = S.build_pp(0.5, 0.5)
    assert arrival(spec, "A") == arrival(spec, "B")


def test_pp_geometry_scales_with_d0():
    base, short = S.build_pp(0.9, 0.5), S.build_pp(0.9, 0.5, d0=5.0)
    for a, b in zip(base.arrival_times(), short.arrival_times()):
        assert b == pytest.approx(a * 5 / 7)


def test_pp_standing_agent_has_no_arrival():
    assert S.build_pp(0.0, 0.5).arrival_times()[0] is None


def test_pp_paths_perpendicular():
    a, b = S.build_pp(0.3, 0.4).agents
    assert a.heading[0] * b.heading[0] + a.heading[1] * b.heading[1] == 0.0


# --- crossing decision -------------------------------------------------------

@pytest.mark.parametrize("x, gap", [(30, 2.158), (60, 4.317), (90, 6.475)])
def test_cd_gaps(x, gap):
    t = arrival(S.build_cd(x, 1.0, 0.0), "vehicle")
    assert t == pytest.approx(x / 13.9)
    assert round(t, 3) == gap


def test_cd_pedestrian_starts_still():
    assert S.build_cd(60, 1.0, 0.0).agent("pedestrian").speed == 0.0
    assert arrival(S.build_cd(60, 1.0, 0.0), "pedestrian") is None


@pytest.mark.parametrize("gap, x", [(2.29, 31.831), (6.87, 95.493)])
def test_cd_stochastic_vehicle_position(gap, x):
    spec = S.build_cd_stochastic(gap)
    assert spec.agent("vehicle").position[0] == pytest.approx(13.9 * gap)
    assert spec.agent("vehicle").position[0] == pytest.approx(x, abs=1e-9)
    assert spec.agent("pedestrian").stochastic


def test_cd_stochastic_zero_noise_limit():
    spec = S.build_cd_stochastic(4.58)
    quiet = AccumulatorConfig(sigma=0.0, threshold=0.5, T=0.5)
    a = run(spec, seed=1, accumulator=quiet)
    b = run(spec, seed=99, accumulator=quiet)
    assert a.onset_time == b.onset_time
    assert a.pass_order == b.pass_order
    det = S.ScenarioSpec(
        "CD",
        tuple(S.AgentSpec(g.name, g.position, g.speed, g.heading, g.goal, g.params)
              for g in spec.agents),
        world=spec.world, squash=spec.squash,
    )
    assert a.onset_time[0] > run(det).onset_time[0]


def test_cd_rejects_bad_start():
    with pytest.raises(ConfigurationError):
        S.build_cd(0.0, 1.0, 0.0)
    with pytest.raises(ConfigurationError):
        S.build_cd_stochastic(-1.0)


# --- conflict resolution -----------------------------------------------------

def test_cr_near_vehicle_passes_first():
    spec = S.build_cr(10, 1.0, 1.0)
    assert arrival(spec, "vehicle") == pytest.approx(0.72, abs=0.005)
    assert arrival(spec, "pedestrian") == pytest.approx(4.55, abs=0.005)
    for kc, ksc in ((0.0, 0.0), (0.1, 2.0), (2.5, 0.0), (2.5, 2.5), (1.0, 1.0)):
        assert run(S.build_cr(10, kc, ksc)).pass_order[0] == "vehicle"


def test_cr_far_vehicle_pedestrian_first():
    spec = S.build_cr(100, 0.0, 0.0)
    assert arrival(spec, "vehicle") == pytest.approx(7.19, abs=0.005)
    assert run(spec).pass_order[0] == "pedestrian"


def test_cr_collision_range_without_avoidance():
    spec = S.build_cr(60, 0.0, 0.0)
    assert abs(arrival(spec, "pedestrian") - arrival(spec, "vehicle")) < 1.0
    assert run(spec).collision_flag


def test_cr_agents_start_at_free_speed():
    from crossing_sim.agent_model import free_speed
    spec = S.build_cr(50, 1.0, 1.0)
    for a in spec.agents:
        assert free_speed(a.params) == pytest.approx(a.speed)


# --- assertiveness grid ------------------------------------------------------

def test_encounter_examples():
    assert 7 / 1.4 == pytest.approx(5.0)
    assert S.is_encounter(-7.0, 70.0)
    assert not S.is_encounter(-5.0, 79.0)
    assert abs(5 / 1.4 - 79 / 13.9) == pytest.approx(2.11, abs=0.005)


def test_encounter_count():
    specs = S.build_cr_assert(1.0, 1.0)
    assert len(specs) == 859
    ys, xs = S.assert_grid()
    assert len(ys) * len(xs) == 3600
    assert sum(S.is_encounter(y, x) for y in ys for x in xs) == 859


@settings(max_examples=200, deadline=None)
@given(y=st.floats(-10.0, -5.0), delta=st.floats(0.0, 2.0))
def test_encounter_filter_symmetric(y, delta):
    t_ped = -y / S.ASSERT_PED_SPEED
    lead = S.is_encounter(y, (t_ped + delta) * S.ASSERT_VEHICLE_SPEED)
    lag = S.is_encounter(y, max(t_ped - delta, 0.0) * S.ASSERT_VEHICLE_SPEED)
    if t_ped - delta >= 0.0:
        assert lead == lag


# --- builder invariants ------------------------------------------------------

builders = st.one_of(
    st.builds(S.build_pp, st.floats(0, 0.9), st.floats(0, 0.9), st.floats(0.28, 0.71),
              st.floats(0, 10), st.floats(3, 10)),
    st.builds(S.build_cd, st.sampled_from(S.CD_STARTS), st.floats(0, 5), st.floats(0, 5)),
    st.builds(S.build_cd_stochastic, st.floats(0.5, 8.0)),
    st.builds(S.build_cr, st.sampled_from(S.CR_STARTS), st.floats(0, 2.5), st.floats(0, 2.5)),
)


@settings(max_examples=100, deadline=None)
@given(spec=builders)
def test_crossing_on_both_paths_and_gaps_consistent(spec):
    for a in spec.agents:
        assert a.on_path(spec.crossing, tol=0.0)
    for a, t in zip(spec.agents, spec.arrival_times()):
        ref = time_to_crossing_point(a.state, spec.crossing)
        if ref is None:
            assert t is None
        else:
            assert t == pytest.approx(ref, rel=1e-9)
            assert t == pytest.approx(a.progress_to(spec.crossing) / a.speed, rel=1e-9)


def test_crossing_off_path_rejected():
    a = S.build_pp(0.5, 0.5).agents
    with pytest.raises(ConfigurationError):
        S.ScenarioSpec("PP", a, crossing=(1.0, 1.0))


def test_unknown_tag_rejected():
    with pytest.raises(ConfigurationError):
        S.ScenarioSpec("XX", S.build_pp(0.5, 0.5).agents)


# --- config files ------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(spec=builders)
def test_config_round_trip(spec):
    assert S.from_config(S.to_config(spec)) == spec


def test_config_file_round_trip(tmp_path):
    spec = S.build_cr(40, 0.7, 1.3).with_world(t_see=0.5, t_max=20.0)
    path = tmp_path / "cr.ini"
    S.save_config(spec, path)
    assert S.load_config(path) == spec


def test_config_unknown_keys_listed():
    text = S.to_config(S.build_cd(60, 1.0, 0.0)).replace("[world]", "[world]\nbogus = 1\nzzz = 2")
    with pytest.raises(ConfigurationError) as err:
        S.from_config(text)
    assert "bogus" in str(err.value)
    assert "zzz" in str(err.value)


def test_config_unknown_section():
    text = S.to_config(S.build_cd(60, 1.0, 0.0)) + "\n[mystery]\na = 1\n"
    with pytest.raises(ConfigurationError):
        S.from_config(text)


def test_overrides_apply():
    spec = S.apply_overrides(S.build_cd(60, 1.0, 0.0),
                             {"agent.vehicle.x": "90", "world.dt": "0.025", "squash.c_max": "5"})
    assert spec.agent("vehicle").position == (90.0, 0.0)
    assert spec.world.dt == 0.025
    assert spec.squash.c_max == 5.0
    assert arrival(spec, "vehicle") == pytest.approx(90 / 13.9)


def test_overrides_reject_unknown():
    with pytest.raises(ConfigurationError):
        S.apply_overrides(S.build_cd(60, 1.0, 0.0), {"agent.vehicle.wheels": "4"})
    with pytest.raises(ConfigurationError):
        S.apply_overrides(S.build_cd(60, 1.0, 0.0), {"agent.ghost.x": "4"})


def test_world_defaults():
    w = WorldConfig()
    assert (w.dt, w.t_max, w.d_c, w.t_see) == (0.05, 30.0, 1.0, 0.0)
    assert w.n_steps == 600
    assert math.isclose(S.build_cd(60, 1, 0).world.tolerance, S.PV_TOLERANCE)
