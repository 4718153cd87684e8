import math

import numpy as np
import pytest
from scipy import stats

from alpha_mfrl import analysis as an
from alpha_mfrl import nn

import oracles


def usage_log(models_per_episode, xy=(0.0, 0.0)):
    return [{"episode": e, "step": t, "x1": xy[0], "x2": xy[1], "model": m}
            for e, ms in enumerate(models_per_episode) for t, m in enumerate(ms)]


# -- usage over time ---------------------------------------------------------

def test_hier_usage_is_constant_per_window():
    log = usage_log([["lf1"] * 7 + ["lf2"] * 7 + ["hf"] * 6] * 30)
    rows = an.usage_over_time(log, 10)
    assert len(rows) == 3
    for r in rows:
        assert (r["frac_lf1"], r["frac_lf2"], r["frac_hf"]) == (0.35, 0.35, 0.3)
        assert r["steps"] == 200


def test_single_model_and_oversized_window():
    rows = an.usage_over_time(usage_log([["lf2"] * 5] * 4), 100)
    assert rows == [{"episode_start": 0, "episode_end": 3, "steps": 20,
                     "frac_lf1": 0.0, "frac_lf2": 1.0, "frac_hf": 0.0}]


def test_window_fractions_sum_to_one():
    rng = np.random.default_rng(0)
    log = usage_log([list(rng.choice(["lf1", "lf2", "hf"], 20)) for _ in range(37)])
    for r in an.usage_over_time(log, 10):
        assert r["frac_lf1"] + r["frac_lf2"] + r["frac_hf"] == pytest.approx(1.0, abs=1e-15)
    assert an.usage_over_time(log, 10)[-1]["episode_end"] == 36


def test_usage_fraction_and_errors():
    log = usage_log([["lf1", "hf"], ["hf", "hf"]])
    assert an.usage_fraction(log, "hf", 0, 2) == 0.75
    assert an.usage_fraction(log, ("lf1", "lf2"), 0, 1) == 0.5
    with pytest.raises(an.AnalysisError):
        an.usage_fraction(log, "hf", 5, 6)
    with pytest.raises(an.AnalysisError):
        an.usage_over_time([], 10)


# -- spatial grid --------------------------------------------------------------

def test_single_step_grid():
    g = an.grid_usage_proportions(usage_log([["hf"]]), 10)
    assert g.visited.sum() == 1 and g.visits[5, 5] == 1
    assert g.proportions("hf")[5, 5] == 1.0
    assert np.isnan(g.proportions("hf")[0, 0])


def test_upper_boundary_lands_in_last_cell():
    g = an.grid_usage_proportions(usage_log([["lf1"]], xy=(1.0, 1.0)), 10)
    assert g.visits[9, 9] == 1
    g = an.grid_usage_proportions(usage_log([["lf1"]], xy=(-1.0, 1.0)), 10)
    assert g.visits[0, 9] == 1
    with pytest.raises(an.AnalysisError):
        an.grid_usage_proportions(usage_log([["lf1"]], xy=(1.5, 0.0)), 10)


def test_uniform_cover_single_model():
    c = an.SpatialGrid(10, np.zeros((10, 10)), {}).centers().reshape(-1, 2)
    log = [{"episode": 0, "step": i, "x1": x, "x2": y, "model": "lf2"} for i, (x, y) in enumerate(c)]
    g = an.grid_usage_proportions(log, 10)
    assert np.all(g.visits == 1)
    assert np.all(g.proportions("lf2") == 1.0) and np.all(g.proportions("hf") == 0.0)


def test_centers_orientation():
    c = an.SpatialGrid(4, np.zeros((4, 4)), {}).centers()
    np.testing.assert_allclose(c[0, 3], [-0.75, 0.75])
    np.testing.assert_allclose(c[3, 0], [0.75, -0.75])


# -- weights and Moran's I -----------------------------------------------------

def test_kernel_weight_examples():
    w = an.kernel_weights(np.array([[0.0, 0.0], [0.3, 0.0], [0.3, 0.0]]), 0.3)
    assert w[0, 1] == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert w[1, 2] == 1.0
    assert np.all(np.diag(w) == 0.0) and np.array_equal(w, w.T)


def test_weight_matrix_needs_two_cells():
    g = an.grid_usage_proportions(usage_log([["hf"]]), 10)
    with pytest.raises(an.AnalysisError):
        an.kernel_weight_matrix(g, 0.3)


def test_checkerboard_is_minus_one():
    rook = np.array([[0, 1, 1, 0], [1, 0, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0]], dtype=float)
    x = [1.0, 0.0, 0.0, 1.0]
    assert an.morans_i(x, rook) == pytest.approx(-1.0, abs=1e-15)
    assert oracles.morans_i_double_sum(x, rook.tolist()) == pytest.approx(-1.0, abs=1e-15)


def test_block_field_positive():
    w = np.kron(np.eye(2), np.ones((3, 3)))
    np.fill_diagonal(w, 0)
    assert an.morans_i([1, 1, 1, 0, 0, 0], w) > 0


def test_matrix_form_matches_double_sum():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 30))
        x = rng.normal(size=n)
        w = an.kernel_weights(rng.uniform(-1, 1, (n, 2)), rng.uniform(0.05, 1))
        assert abs(an.morans_i(x, w) - oracles.morans_i_double_sum(list(x), w.tolist())) <= 1e-12


def test_affine_invariance():
    rng = np.random.default_rng(2)
    x = rng.normal(size=20)
    w = an.kernel_weights(rng.uniform(-1, 1, (20, 2)), 0.3)
    assert an.morans_i(3.5 * x - 7, w) == pytest.approx(an.morans_i(x, w), abs=1e-12)


def test_constant_field_raises():
    w = an.kernel_weights(np.random.default_rng(3).uniform(-1, 1, (5, 2)), 0.3)
    with pytest.raises(an.AnalysisError, match="zero variance"):
        an.morans_i(np.full(5, 0.4), w)


def half_field_grid():
    c = an.SpatialGrid(10, np.zeros((10, 10)), {}).centers()
    return c.reshape(-1, 2), (c[..., 0] < 0).astype(float).ravel()


def test_clustered_field_is_significant():
    pts, x = half_field_grid()
    w = an.kernel_weights(pts, an.bandwidth_from_cells(10, 1.5))
    res = an.permutation_test(x, w, 999, np.random.default_rng(4))
    assert res.i_value > 0.5 and res.p_value < 0.01 and res.p_value == 1 / 1000


def test_permutation_p_values_uniform_under_null():
    pts, _ = half_field_grid()
    w = an.kernel_weights(pts, an.bandwidth_from_cells(10, 1.5))
    rng = np.random.default_rng(5)
    ps = [an.permutation_test(rng.normal(size=100), w, 199, rng).p_value for _ in range(200)]
    assert stats.kstest(ps, "uniform").pvalue > 0.01


def test_permutation_deterministic_and_degenerate():
    pts, x = half_field_grid()
    x = x + np.random.default_rng(6).normal(0, 0.5, x.size)
    w = an.kernel_weights(pts, 0.3)
    a = an.permutation_test(x, w, 500, np.random.default_rng(7))
    b = an.permutation_test(x, w, 500, np.random.default_rng(7))
    assert a.p_value == b.p_value and np.array_equal(a.null, b.null)
    z = an.permutation_test(x, w, 0, np.random.default_rng(7))
    assert z.p_value == 1.0 and z.degenerate and z.n_permutations == 0


def test_spatial_moran_on_grid():
    log = []
    for i, (x, y) in enumerate(an.SpatialGrid(10, np.zeros((10, 10)), {}).centers().reshape(-1, 2)):
        log.append({"episode": 0, "step": i, "x1": x, "x2": y, "model": "hf" if x > 0 else "lf1"})
    g = an.grid_usage_proportions(log, 10)
    res = an.spatial_moran(g, "hf", 0.3, 199, np.random.default_rng(8))
    assert res.n_cells_used == 100 and res.p_value < 0.01


# -- efficiency and policy field ---------------------------------------------

def ledger(counts):
    costs = {"lf1": 32e-6, "lf2": 32e-6, "hf": 275e-6}
    rows = [{"model": m, "count": c, "mean_cost_s": costs[m], "total_s": c * costs[m]}
            for m, c in counts.items()]
    return rows + [{"model": "total", "count": sum(counts.values()), "mean_cost_s": None, "total_s": 0}]


def test_ledger_totals_exact():
    assert an.ledger_total(ledger({"lf1": 4200, "lf2": 0, "hf": 1800})) == 0.6294
    assert an.ledger_total(ledger({"lf1": 6000, "lf2": 0, "hf": 0})) == 0.192
    assert an.ledger_total(ledger({"lf1": 0, "lf2": 0, "hf": 6000})) == 1.65


def test_efficiency_report_flags_missing():
    evals = [{"seed_index": i, "iteration": it, "q_hf": 0.1 * i + it} for i in range(4) for it in (0, 1)]
    rep = an.efficiency_report({"a": (ledger({"hf": 10}), evals), "b": (None, evals), "c": (ledger({"lf1": 1}), None)})
    a, b, c = rep
    assert a.missing == [] and a.total_time_s == 0.00275
    assert a.q_median == pytest.approx(1.15) and a.seed_q_median == pytest.approx(0.15)
    assert b.missing == ["ledger"] and b.total_time_s is None and b.q_median is not None
    assert c.missing == ["eval"] and c.q_median is None


def test_policy_field_zero_policy(tmp_path):
    p = nn.init_policy(np.random.default_rng(0), 8)
    for k in p:
        p[k][:] = 0.0
    rows = an.policy_field_map(p, 4)
    assert len(rows) == 16 and all(r["mean1"] == 0.0 and r["mean2"] == 0.0 for r in rows)
    nn.checkpoint_save(tmp_path / "z.alphann", p, nn.init_value(np.random.default_rng(0), 8))
    assert an.policy_field_from_checkpoint(tmp_path / "z.alphann", 4) == rows
