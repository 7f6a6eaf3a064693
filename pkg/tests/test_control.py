import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossing_sim.agent_model import UtilityParams, free_speed
from crossing_sim.control import (
    DEFAULT_REPERTOIRE,
    AccumulatorBank,
    ActionEvaluation,
    AgentSnapshot,
    ControlSchedule,
    ModelConfig,
    MotorPrimitive,
    decide_deterministic,
    evaluate_primitives,
    step_accumulators,
)
from crossing_sim.errors import ConfigurationError
from crossing_sim.kinematics import AgentState

PED = UtilityParams(1.0, 0.38)


def _eval_from_deltas(deltas: dict[float, float]) -> ActionEvaluation:
    return ActionEvaluation(np.array([deltas.get(m, 0.0) for m in DEFAULT_REPERTOIRE]))


def _snapshot(v: float, params=PED) -> AgentSnapshot:
    return AgentSnapshot(AgentState((0.0, -5.0), v, 0.0, (0.0, 1.0)), ControlSchedule(v), params)


# --- evaluation --------------------------------------------------------------

def test_standstill_gains():
    ev = evaluate_primitives(_snapshot(0.0), [])
    d = dict(zip(DEFAULT_REPERTOIRE, ev.deltas))
    # utility at the end of the ramp: v - 0.38 v^2
    assert d[1.0] == pytest.approx(1.0 - 0.38)
    assert d[0.5] == pytest.approx(0.5 - 0.38 * 0.25)
    assert d[1.0] == pytest.approx(0.62)
    assert d[0.5] == pytest.approx(0.405)
    assert d[-0.5] == 0.0
    assert d[-1.0] == 0.0
    assert d[0.0] == 0.0


def test_no_gain_at_free_speed():
    ev = evaluate_primitives(_snapshot(free_speed(PED)), [])
    assert np.all(ev.deltas <= 1e-12)


@settings(max_examples=50, deadline=None)
@given(v=st.floats(0.0, 3.0), ox=st.floats(-10.0, -1.0), ov=st.floats(0.0, 2.0),
       kc=st.floats(0.0, 5.0))
def test_null_primitive_gain_is_zero(v, ox, ov, kc):
    other = AgentState((ox, 0.0), ov, 0.0, (1.0, 0.0))
    ev = evaluate_primitives(_snapshot(v, UtilityParams(1.0, 0.38, 0.0, kc)), [other])
    assert ev.deltas[0] == 0.0


# --- deterministic decisions -------------------------------------------------

def test_decide_picks_largest_gain():
    ev = _eval_from_deltas({1.0: 0.62, 0.5: 0.405, -0.5: -0.1})
    assert decide_deterministic(ev) == MotorPrimitive(1.0, 4)


def test_decide_none_without_positive_gain():
    assert decide_deterministic(_eval_from_deltas({1.0: -0.2, 0.5: 0.0})) is None


def test_decide_tie_prefers_smaller_then_negative():
    ev = _eval_from_deltas({0.5: 0.3, -0.5: 0.3})
    assert decide_deterministic(ev).magnitude == -0.5
    ev = _eval_from_deltas({1.0: 0.3, 0.5: 0.3})
    assert decide_deterministic(ev).magnitude == 0.5


# --- accumulators --------------------------------------------------------------

def test_accumulator_hand_iteration():
    bank = AccumulatorBank.zeros(sigma=0.0, threshold=10.0, T=0.5)
    ev = _eval_from_deltas({1.0: 1.0})
    seen = []
    for _ in range(3):
        bank, trig = step_accumulators(bank, ev, 0.1, np.zeros(5))
        assert trig is None
        seen.append(bank.values[4])
    assert seen == pytest.approx([0.2, 0.36, 0.488], rel=1e-15, abs=1e-15)


@pytest.mark.parametrize("c", [-0.7, 0.0, 0.25, 3.0])
def test_accumulator_converges_to_gain(c):
    bank = AccumulatorBank.zeros(sigma=0.0, threshold=10.0, T=0.4)
    ev = _eval_from_deltas({-1.0: c, 0.5: c})
    for _ in range(2000):
        bank, _ = step_accumulators(bank, ev, 0.05, np.zeros(5))
    assert bank.values[1] == pytest.approx(c, abs=1e-12)
    assert bank.values[3] == pytest.approx(c, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(a0=st.floats(-5, 5), du=st.floats(-5, 5), dt=st.floats(0.001, 0.2),
       T=st.floats(0.3, 5.0))
def test_accumulator_contraction(a0, du, dt, T):
    bank = AccumulatorBank(np.array([0.0, a0, 0.0, 0.0, 0.0]), sigma=0.0, threshold=100.0, T=T)
    new, _ = step_accumulators(bank, _eval_from_deltas({-1.0: du}), dt, np.zeros(5))
    assert abs(new.values[1] - du) == pytest.approx((1 - dt / T) * abs(a0 - du), rel=1e-9, abs=1e-12)


def test_accumulator_reset_after_trigger():
    bank = AccumulatorBank(np.array([0.0, 0.3, 0.2, 0.9, 0.1]), sigma=0.0, threshold=1.0, T=0.5)
    new, trig = step_accumulators(bank, _eval_from_deltas({0.5: 2.0}), 0.25, np.zeros(5))
    # slot 3 (+0.5): 0.9 + 0.5 * (2 - 0.9) = 1.45 > threshold
    assert trig == MotorPrimitive(0.5, 3)
    assert np.all(new.values == 0.0)


gains = st.sampled_from([-0.2, -0.05, 0.0, 0.05, 0.1, 0.15, 0.3, 0.62])


@settings(max_examples=200, deadline=None)
@given(g=st.lists(gains, min_size=4, max_size=4))
def test_noise_free_accumulator_matches_deterministic(g):
    ev = ActionEvaluation(np.array([0.0, *g]))
    bank = AccumulatorBank.zeros(sigma=0.0, threshold=1e-12, T=0.4)
    _, trig = step_accumulators(bank, ev, 0.05, np.zeros(5))
    assert trig == decide_deterministic(ev)


def test_accumulator_noise_variance():
    # 10^5 independent slots share one update; a huge T switches off the low-pass term
    n = 100_000
    rep = (0.0, *np.arange(1.0, n + 1.0))
    ev = ActionEvaluation(np.zeros(n + 1), rep)
    cfg = ModelConfig(repertoire=rep)
    sigma, dt, k = 0.5, 0.05, 20
    bank = AccumulatorBank.zeros(n + 1, sigma=sigma, threshold=1e9, T=1e12)
    rng = np.random.default_rng(5)
    for _ in range(k):
        bank, _ = step_accumulators(bank, ev, dt, rng.standard_normal(n + 1), cfg)
    var = bank.values[1:].var()
    assert var == pytest.approx(sigma**2 * k * dt, rel=0.05)


def test_accumulator_trigger_sequence_reproducible():
    ev = _eval_from_deltas({1.0: 0.3, 0.5: 0.25, -0.5: 0.05})

    def triggers(seed):
        rng = np.random.default_rng(seed)
        bank = AccumulatorBank.zeros(sigma=0.5, threshold=0.4, T=0.4)
        out = []
        for _ in range(400):
            bank, trig = step_accumulators(bank, ev, 0.05, rng.standard_normal(5))
            out.append(None if trig is None else trig.index)
        return out

    a = triggers(11)
    assert a == triggers(11)
    assert any(t is not None for t in a)
    assert a != triggers(12)


def test_bank_rejects_bad_parameters():
    with pytest.raises(ConfigurationError):
        AccumulatorBank.zeros(sigma=-1.0)
    with pytest.raises(ConfigurationError):
        AccumulatorBank.zeros(threshold=0.0)


# --- schedules and config ----------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(ramps=st.lists(st.tuples(st.floats(0, 5), st.sampled_from(DEFAULT_REPERTOIRE[1:])),
                      min_size=1, max_size=6),
       t=st.floats(0, 7), seed=st.integers(0, 1000))
def test_schedule_order_independent(ramps, t, seed):
    perm = list(np.random.default_rng(seed).permutation(len(ramps)))
    a = ControlSchedule(1.0, tuple(ramps))
    b = ControlSchedule(1.0, tuple(ramps[i] for i in perm))
    assert a.value(t) == pytest.approx(b.value(t), abs=1e-12)


def test_schedule_ramp_shape():
    s = ControlSchedule(1.0).with_ramp(1.0, 0.5)
    assert s.value(0.9) == 1.0
    assert s.value(1.15) == pytest.approx(1.25)
    assert s.value(2.0) == 1.5
    assert s.slope(1.1) == pytest.approx(0.5 / 0.3)


def test_model_config_rejects_non_dividing_dt():
    with pytest.raises(ConfigurationError):
        ModelConfig(dt=0.07)
    assert ModelConfig(dt=0.025).n_ramp == 12
