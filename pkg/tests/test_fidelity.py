import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alpha_mfrl import fidelity as fe
from alpha_mfrl.fidelity import AckleyParams, CostLedger, ModelId

import oracles

# frozen from tests/oracles.py (independent scalar evaluation)
HF_AT_A = 11.570311151282489
LF1_AT_C = 22.350402387287602
LF2_AT_D = 12.350402387287602


def test_g_at_center():
    c = (3.0, -4.0)
    assert fe.eval_g(c, AckleyParams(c, 1.0)) == 0.0
    assert fe.eval_g(c, AckleyParams(c, 0.0)) == 20.0
    assert fe.eval_g(c, AckleyParams(c, 1.5)) == -10.0


@pytest.mark.parametrize("offset, expected", [
    ((0.0, 0.0), 0.0),
    ((0.5, 0.5), math.e - math.exp(-1.0)),
    ((0.25, 0.75), math.e - 1.0),
])
def test_h_values(offset, expected):
    c = (1.25, -2.5)
    p = (c[0] + offset[0], c[1] + offset[1])
    assert fe.eval_h(p, c) == pytest.approx(expected, abs=1e-12)


def test_h_mid():
    assert fe.H_MID == pytest.approx(1.17520119, abs=1e-8)


def test_spot_values():
    ledger = CostLedger()
    assert fe.eval_model(ModelId.LF1, (-0.3, -0.3), ledger) == pytest.approx(LF1_AT_C, abs=1e-12)
    assert fe.eval_model(ModelId.LF2, (0.3, 0.3), ledger) == pytest.approx(LF2_AT_D, abs=1e-12)
    assert fe.eval_model(ModelId.HF, (0.5, 0.5), ledger) == pytest.approx(HF_AT_A, abs=1e-12)
    assert (ledger.count_lf1, ledger.count_lf2, ledger.count_hf) == (1, 1, 1)


def test_lf_depth_asymmetry_is_ten():
    diff = fe.eval_model("lf1", (-0.3, -0.3)) - fe.eval_model("lf2", (0.3, 0.3))
    assert diff == pytest.approx(10.0, abs=1e-12)


def test_models_match_oracle_on_random_points():
    rng = np.random.default_rng(7)
    for u in rng.uniform(-1, 1, size=(200, 2)):
        assert fe.f_hf(u) == pytest.approx(oracles.hf_direct(*u), abs=1e-12)
        assert fe.f_lf1(u) == pytest.approx(oracles.lf1_direct(*u), abs=1e-12)
        assert fe.f_lf2(u) == pytest.approx(oracles.lf2_direct(*u), abs=1e-12)


finite = st.floats(-40, 40, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(finite, finite, st.floats(-32, 32), st.floats(-32, 32), st.floats(0, 3))
def test_translation_identity(x1, x2, c1, c2, alpha):
    p = np.array([x1, x2])
    shifted = AckleyParams((c1, c2), alpha)
    origin = AckleyParams((0.0, 0.0), alpha)
    assert abs(fe.eval_g(p, shifted) - fe.eval_g(p - (c1, c2), origin)) <= 1e-12
    assert abs(fe.eval_h(p, (c1, c2)) - fe.eval_h(p - (c1, c2), (0.0, 0.0))) <= 1e-12


def test_minimum_is_exactly_zero():
    c = (5.5, -7.25)
    assert fe.ackley(c, AckleyParams(c, 1.0)) == 0.0


def test_params_validation():
    with pytest.raises(ValueError):
        AckleyParams((0.0, 0.0), -1.0)
    with pytest.raises(ValueError):
        AckleyParams((40.0, 0.0), 1.0)


def test_quality():
    assert fe.quality("hf", (0.5, 0.5)) == pytest.approx(1 - HF_AT_A / 50.0)
    assert fe.quality("hf", (0.5, 0.5)) == pytest.approx(0.76858, abs=1e-4)
    # quality never charges a ledger; there is no ledger argument at all
    ledger = CostLedger()
    fe.quality("lf1", (0.0, 0.0))
    assert ledger.total_count == 0


def test_quality_range_over_domain():
    u = np.linspace(-1, 1, 201)
    xy = np.stack(np.meshgrid(u, u), axis=-1)
    for m in ("hf", "lf1", "lf2"):
        q = fe.quality(m, xy)
        assert np.all((q > 0) & (q < 1))


@pytest.mark.parametrize("s, a, expected", [
    ((0.0, 0.0), (1.0, 0.0), (0.2, 0.0)),
    ((0.95, 0.0), (1.0, 0.0), (1.0, 0.0)),
    ((-0.9, -0.9), (-1.0, -1.0), (-1.0, -1.0)),
])
def test_env_step_dynamics(s, a, expected):
    s_next, _ = fe.env_step(np.array(s), np.array(a), "hf", CostLedger())
    np.testing.assert_allclose(s_next, expected, atol=1e-15)


def test_env_step_zero_action_zero_reward():
    s_next, r = fe.env_step(np.array([0.3, 0.3]), np.zeros(2), "lf2", CostLedger())
    assert r == 0.0
    np.testing.assert_array_equal(s_next, [0.3, 0.3])


def test_env_step_rejects_nonfinite():
    with pytest.raises(fe.NumericFault):
        fe.env_step(np.array([0.0, 0.0]), np.array([np.nan, 0.0]), "hf")
    with pytest.raises(fe.NumericFault):
        fe.env_step(np.array([np.inf, 0.0]), np.zeros(2), "hf")


def test_one_charged_evaluation_per_step_even_across_switches():
    ledger = CostLedger()
    env = fe.DesignEnv(ledger)
    env.reset((0.1, -0.2))
    rng = np.random.default_rng(0)
    models = ["lf1", "lf1", "hf", "lf2", "lf2", "hf", "hf", "lf1"]
    total = 0.0
    q_first = fe.quality(models[0], (0.1, -0.2))
    for m in models:
        _, r = env.step(rng.uniform(-1, 1, 2), m)
        total += r
    assert ledger.total_count == len(models)
    assert ledger.counts == {"lf1": 3, "lf2": 2, "hf": 3}
    assert np.isfinite(total) and q_first > 0


def test_reward_telescopes_for_single_model():
    env = fe.DesignEnv()
    s0 = np.array([-0.7, 0.4])
    env.reset(s0)
    rng = np.random.default_rng(3)
    total = sum(env.step(rng.uniform(-1, 1, 2), "hf")[1] for _ in range(20))
    assert total == pytest.approx(fe.quality("hf", env.state) - fe.quality("hf", s0), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), st.tuples(st.floats(-1, 1), st.floats(-1, 1)),
       st.sampled_from(["hf", "lf1", "lf2"]))
def test_env_step_stays_in_domain_and_reward_bounded(s, a, m):
    s_next, r = fe.env_step(np.array(s), np.array(a), m)
    assert np.all(np.abs(s_next) <= 1.0)
    # f ranges inside [0, 50] for all models over the box, so |r| < 1
    assert abs(r) <= 1.0


def test_ledger_total_is_exact():
    ledger = CostLedger()
    ledger.charge("lf1", 4200)
    ledger.charge("hf", 1800)
    assert ledger.total_time == 0.6294
    ledger = CostLedger()
    ledger.charge("lf2", 6000)
    assert ledger.total_time == 0.192
    ledger = CostLedger()
    ledger.charge("hf", 6000)
    assert ledger.total_time == 1.65


def test_seed_sampling():
    a = fe.sample_seed(np.random.default_rng(0))
    b = fe.sample_seed(np.random.default_rng(0))
    np.testing.assert_array_equal(a, b)
    pts = fe.sample_seeds(np.random.default_rng(1), 100_000)
    assert np.all(np.abs(pts) <= 1.0)
    assert np.all(np.abs(pts.mean(axis=0)) < 0.02)


def test_registry_extension_point():
    fe.register_model(fe.FidelityModel("toy", lambda p: np.sum(np.asarray(p) ** 2, axis=-1), 1e-3))
    try:
        ledger = CostLedger()
        assert fe.eval_model("toy", (0.5, 0.5), ledger) == 0.5
        assert ledger.counts["toy"] == 1
        assert ledger.model_time("toy") == 1e-3
    finally:
        del fe.REGISTRY["toy"]
