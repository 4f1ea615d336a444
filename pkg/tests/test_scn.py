import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from scne import dataio, scn
from scne.dataio import Dataset
from scne.errors import (
    ConstructionError,
    DegenerateCandidateError,
    ParameterError,
    ShapeError,
)
from scne.scn import RvflConfig, ScnConfig, ScnModel

# Hidden-node estimates over 10 repeats and the reported "Medium" row.
TWITTER_NODE_RUNS = np.array([
    [17, 14, 44, 66, 10, 9, 42, 41, 23, 30, 15],
    [19, 22, 14, 63, 25, 10, 45, 48, 14, 17, 13],
    [10, 20, 23, 61, 18, 32, 45, 33, 21, 18, 17],
    [14, 30, 25, 77, 10, 18, 40, 24, 24, 29, 19],
    [23, 32, 15, 64, 17, 15, 41, 31, 18, 39, 16],
    [16, 30, 24, 69, 23, 21, 39, 39, 22, 24, 10],
    [17, 17, 15, 90, 17, 6, 38, 34, 32, 23, 19],
    [14, 30, 12, 53, 16, 13, 39, 41, 29, 32, 14],
    [17, 18, 30, 72, 23, 13, 41, 33, 18, 30, 17],
    [7, 13, 20, 73, 15, 31, 43, 36, 14, 20, 19],
])
TWITTER_NODE_MEDIUM = [17, 21, 22, 68, 17, 14, 41, 35, 22, 27, 17]
YEAR_NODE_RUNS = np.array([
    [70, 23, 17, 36, 51, 15, 18],
    [61, 54, 32, 19, 17, 21, 18],
    [62, 56, 17, 29, 36, 29, 37],
    [60, 44, 28, 23, 43, 26, 30],
    [61, 22, 23, 20, 22, 18, 33],
    [61, 24, 19, 24, 32, 21, 18],
    [60, 21, 28, 20, 38, 22, 33],
    [65, 28, 26, 19, 18, 19, 38],
    [40, 27, 21, 50, 16, 22, 23],
    [60, 27, 28, 19, 12, 29, 20],
])
YEAR_NODE_MEDIUM = [61, 27, 25, 22, 27, 22, 27]

# Validation RMSE (1e-3) of RVFL base models on Twitter per alpha, and alpha*.
ALPHAS = np.round(np.arange(0.5, 1.45, 0.1), 10)
TWITTER_ALPHA_SCORES = np.array([
    [4.244, 9.574, 6.014, 7.652, 2.226, 3.756, 8.012, 9.821, 4.448, 8.213, 2.108],
    [2.527, 14.557, 5.060, 7.842, 3.143, 4.242, 7.845, 8.590, 3.524, 8.578, 2.484],
    [3.990, 4.922, 7.852, 8.085, 2.849, 4.141, 7.749, 10.030, 3.990, 8.146, 2.949],
    [2.117, 6.759, 4.602, 8.206, 2.731, 3.744, 8.048, 8.550, 4.639, 8.596, 2.580],
    [2.133, 4.849, 5.584, 8.011, 2.332, 3.964, 7.899, 8.375, 5.041, 8.553, 2.198],
    [2.064, 4.001, 3.899, 8.206, 2.332, 3.823, 7.872, 8.336, 5.082, 8.468, 2.297],
    [2.568, 9.704, 4.361, 8.268, 3.029, 4.069, 8.218, 9.124, 5.293, 7.915, 2.593],
    [2.666, 4.211, 3.992, 7.904, 2.308, 4.289, 7.792, 11.154, 5.207, 8.059, 2.337],
    [2.509, 5.262, 4.551, 8.073, 2.137, 4.259, 7.719, 8.250, 3.602, 8.527, 2.295],
    [2.325, 5.375, 5.131, 8.161, 2.418, 3.505, 7.973, 8.389, 3.713, 8.076, 2.327],
])
TWITTER_ALPHA_STAR = [1.0, 1.0, 1.0, 0.5, 1.3, 1.4, 1.3, 1.3, 0.6, 1.1, 0.5]


@pytest.fixture(scope="module")
def synth_small():
    return dataio.synth_generate(300, seed=7)


class TestXiScore:
    def test_aligned(self):
        xi, total = scn.xi_score([1.0, 1.0], [1.0, 1.0], 0.9)
        assert total == pytest.approx(1.8)
        np.testing.assert_allclose(xi, [1.8])

    def test_orthogonal_rejected(self):
        _, total = scn.xi_score([1.0, 0.0], [0.0, 1.0], 0.9)
        assert total == pytest.approx(-0.1)

    def test_zero_candidate(self):
        with pytest.raises(DegenerateCandidateError):
            scn.xi_score([1.0, 2.0], [0.0, 0.0], 0.9)

    @pytest.mark.parametrize("r, mu", [(0.0, 0.0), (1.0, 0.0), (0.9, 0.2), (0.9, -0.01)])
    def test_bad_parameters(self, r, mu):
        with pytest.raises(ParameterError):
            scn.xi_score([1.0], [1.0], r, mu)

    def test_multi_output_matches_columns(self, rng):
        e = rng.normal(size=(10, 3))
        h = rng.normal(size=10)
        xi, total = scn.xi_score(e, h, 0.99, 0.001)
        for q in range(3):
            oracle = (e[:, q] @ h) ** 2 / (h @ h) - (1 - 0.99 - 0.001) * (e[:, q] @ e[:, q])
            assert xi[q] == pytest.approx(oracle)
        assert total == pytest.approx(xi.sum())

    @settings(max_examples=60, deadline=None)
    @given(
        seed=st.integers(0, 2**32 - 1),
        c=st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3),
        r=st.floats(0.5, 0.999),
    )
    def test_scaling(self, seed, c, r):
        rng = np.random.default_rng(seed)
        e = rng.normal(size=(8, 2))
        h = rng.normal(size=8)
        xi, _ = scn.xi_score(e, h, r)
        np.testing.assert_allclose(scn.xi_score(e, c * h, r)[0], xi, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(scn.xi_score(c * e, h, r)[0], c**2 * xi, rtol=1e-9, atol=1e-9)


class TestHiddenAndPredict:
    def test_zero_weights_sigmoid(self):
        m = ScnModel(np.zeros((3, 2)), np.zeros(3), np.zeros(3))
        np.testing.assert_array_equal(scn.hidden_matrix(m, np.ones((4, 2))), 0.5)

    def test_sigmoid_limits(self):
        m = ScnModel([[1.0]], [0.0], [1.0])
        assert scn.hidden_matrix(m, [[0.0]])[0, 0] == 0.5
        assert scn.hidden_matrix(m, [[1e3]])[0, 0] == pytest.approx(1.0)

    def test_hand_instance(self):
        W = np.array([[1.0, -2.0], [0.5, 0.25]])
        b = np.array([0.1, -0.3])
        X = np.array([[1.0, 2.0], [-1.0, 0.5]])
        m = ScnModel(W, b, np.zeros(2))
        H = scn.hidden_matrix(m, X)
        for n in range(2):
            for l in range(2):
                z = W[l, 0] * X[n, 0] + W[l, 1] * X[n, 1] + b[l]
                assert H[n, l] == pytest.approx(1.0 / (1.0 + np.exp(-z)), rel=1e-14)

    def test_shape_mismatch(self):
        m = ScnModel(np.zeros((1, 2)), [0.0], [1.0])
        with pytest.raises(ShapeError):
            m.predict(np.zeros((3, 3)))

    def test_zero_beta(self, rng):
        m = ScnModel(rng.normal(size=(4, 2)), rng.normal(size=4), np.zeros(4))
        np.testing.assert_array_equal(m.predict(rng.normal(size=(5, 2))), 0.0)

    def test_single_node_constant(self):
        m = ScnModel([[0.0]], [0.0], [2.0])
        np.testing.assert_array_equal(m.predict(np.arange(4.0)[:, None]), 1.0)

    def test_loop_oracle(self, rng):
        m = ScnModel(rng.normal(size=(6, 3)), rng.normal(size=6), rng.normal(size=6), "tanh")
        X = rng.normal(size=(7, 3))
        loop = [sum(m.beta[l] * np.tanh(m.W[l] @ x + m.b[l]) for l in range(6)) for x in X]
        np.testing.assert_allclose(m.predict(X), loop, rtol=1e-12, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_linear_in_beta(self, seed):
        rng = np.random.default_rng(seed)
        W, b = rng.normal(size=(5, 2)), rng.normal(size=5)
        b1, b2 = rng.normal(size=5), rng.normal(size=5)
        X = rng.normal(size=(6, 2))
        lhs = ScnModel(W, b, b1 + b2).predict(X)
        rhs = ScnModel(W, b, b1).predict(X) + ScnModel(W, b, b2).predict(X)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


class TestModel:
    def test_requires_a_node(self):
        with pytest.raises(ParameterError):
            ScnModel(np.zeros((0, 2)), np.zeros(0), np.zeros(0))

    def test_rejects_nan(self):
        with pytest.raises(ParameterError):
            ScnModel([[np.nan]], [0.0], [1.0])

    def test_json_round_trip(self, rng):
        m = ScnModel(rng.normal(size=(3, 2)), rng.normal(size=3), rng.normal(size=3), "tanh")
        back = ScnModel.from_json(json.loads(json.dumps(m.to_json())))
        np.testing.assert_array_equal(back.W, m.W)
        np.testing.assert_array_equal(back.beta, m.beta)
        assert back.activation == "tanh"
        assert m.to_json()["W"] == m.W.ravel().tolist()

    def test_truncate(self, rng):
        m = ScnModel(rng.normal(size=(4, 2)), rng.normal(size=4), rng.normal(size=4))
        t = m.truncate(2)
        np.testing.assert_array_equal(t.W, m.W[:2])
        np.testing.assert_array_equal(t.beta, 0.0)
        with pytest.raises(ParameterError):
            m.truncate(5)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            {"scopes": ()},
            {"r_sequence": (0.9, 1.0)},
            {"tol": 0.0},
            {"batch_size": 0},
            {"ridge": -1.0},
            {"scopes": (1.0, 0.5)},
            {"activation": "softsign"},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            ScnConfig(**kw)

    def test_rvfl_zero_nodes(self):
        with pytest.raises(ParameterError):
            RvflConfig(0)


class TestBuildScn:
    def test_planted_node(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, size=(80, 3))
        cfg = ScnConfig(L_max=10, T_max=20, seed=42)
        # replay the first pool draw of the builder
        pool = np.random.default_rng(cfg.seed)
        a = cfg.scopes[0]
        Wc = pool.uniform(-a, a, size=(cfg.T_max, 3))
        bc = pool.uniform(-a, a, size=cfg.T_max)
        y = expit(X @ Wc[5] + bc[5])
        model, trace = scn.build_scn(Dataset(X, y), cfg)
        assert model.hidden_count == 1
        assert trace[-1] <= 1e-6
        np.testing.assert_array_equal(model.W[0], Wc[5])

    def test_trace_strictly_decreasing(self):
        data = dataio.synth_generate(1000, seed=3)
        model, trace = scn.build_scn(data, ScnConfig(L_max=25, T_max=100, seed=1))
        assert model.hidden_count == 25
        assert np.all(np.diff(trace) < 0)
        assert scn_rmse(model, data) < trace[0]

    def test_trace_non_increasing_with_ridge(self, synth_small):
        _, trace = scn.build_scn(synth_small, ScnConfig(L_max=20, ridge=1e-3, seed=2))
        assert np.all(np.diff(trace) <= 0)

    @pytest.mark.parametrize("nb, L_max", [(1, 10), (3, 10), (4, 2)])
    def test_large_tolerance_stops_after_one_batch(self, synth_small, nb, L_max):
        cfg = ScnConfig(L_max=L_max, batch_size=nb, tol=1e30)
        model, trace = scn.build_scn(synth_small, cfg)
        assert model.hidden_count == min(nb, L_max)
        assert trace.size == 1

    def test_accepted_nodes_satisfy_inequality(self, synth_small):
        # replay growth: each accepted node must have xi > 0 at the largest r tried
        cfg = ScnConfig(L_max=12, T_max=50, seed=4)
        model, _ = scn.build_scn(synth_small, cfg)
        H = model.hidden(synth_small.X)
        y = synth_small.y
        e = y.copy()
        for L in range(model.hidden_count):
            xi, _ = scn.xi_score(e, H[:, L], cfg.r_sequence[-1], 0.0)
            assert xi[0] > 0
            beta = np.linalg.lstsq(H[:, :L + 1], y, rcond=None)[0]
            e = y - H[:, :L + 1] @ beta

    def test_residual_matches_pinv_refit(self, synth_small):
        model, trace = scn.build_scn(synth_small, ScnConfig(L_max=15, seed=5))
        assert trace[-1] == pytest.approx(scn_rmse(model, synth_small), rel=1e-8)

    def test_deterministic(self, synth_small):
        a, ta = scn.build_scn(synth_small, ScnConfig(L_max=8, seed=9))
        b, tb = scn.build_scn(synth_small, ScnConfig(L_max=8, seed=9))
        np.testing.assert_array_equal(a.W, b.W)
        np.testing.assert_array_equal(a.beta, b.beta)
        np.testing.assert_array_equal(ta, tb)

    def test_zero_target_fails(self):
        data = Dataset(np.random.default_rng(0).normal(size=(20, 2)), np.zeros(20))
        with pytest.raises(ConstructionError):
            scn.build_scn(data, ScnConfig(L_max=3, T_max=5))


class TestRvfl:
    def test_deterministic(self, synth_small):
        a = scn.build_rvfl(synth_small, RvflConfig(10, 1.0, seed=3))
        b = scn.build_rvfl(synth_small, RvflConfig(10, 1.0, seed=3))
        np.testing.assert_array_equal(a.W, b.W)
        np.testing.assert_array_equal(a.beta, b.beta)

    def test_weights_in_range(self, synth_small):
        m = scn.build_rvfl(synth_small, RvflConfig(50, 0.7, seed=1))
        assert np.abs(m.W).max() <= 0.7 and np.abs(m.b).max() <= 0.7
        assert m.hidden_count == 50

    def test_least_squares_fit(self, synth_small):
        m = scn.build_rvfl(synth_small, RvflConfig(8, 1.0, seed=1))
        H = m.hidden(synth_small.X)
        np.testing.assert_allclose(
            m.beta, np.linalg.lstsq(H, synth_small.y, rcond=None)[0], rtol=1e-6, atol=1e-8
        )


class TestNodeEstimation:
    def test_reported_medians_twitter(self):
        got = [scn.median_half_up(TWITTER_NODE_RUNS[:, m]) for m in range(11)]
        assert got == TWITTER_NODE_MEDIUM

    def test_reported_medians_year(self):
        got = [scn.median_half_up(YEAR_NODE_RUNS[:, m]) for m in range(7)]
        assert got == YEAR_NODE_MEDIUM

    def test_median_examples(self):
        assert scn.median_half_up([10, 20, 30]) == 20
        assert scn.median_half_up([7]) == 7

    def test_single_repeat_is_argmin(self, synth_small):
        tr, va = synth_small.take(np.arange(200)), synth_small.take(np.arange(200, 300))
        res = scn.node_search(tr, va, (1, 15), 1, ScnConfig(seed=3))
        Ls, curve = res.curves[0]
        assert res.chosen == res.argmins[0] == Ls[np.argmin(curve)]
        assert scn.estimate_nodes(tr, va, (1, 15), 1, ScnConfig(seed=3)) == res.chosen

    def test_prefix_curve_matches_direct_refit(self, synth_small):
        tr, va = synth_small.take(np.arange(200)), synth_small.take(np.arange(200, 300))
        model, _ = scn.build_scn(tr, ScnConfig(L_max=10, seed=1))
        for ridge in (0.0, 1e-2):
            Ls, curve = scn.prefix_rmse_curve(model, tr, va, ridge, (3, 10))
            for L, v in zip(Ls, curve):
                sub = model.truncate(L)
                beta = scn.fit_output_weights(sub.hidden(tr.X), tr.y, ridge)
                assert v == pytest.approx(np.sqrt(np.mean((sub.with_beta(beta).predict(va.X) - va.y) ** 2)), rel=1e-7)

    def test_reported_alpha_star(self):
        got = [scn.select_alpha(ALPHAS, TWITTER_ALPHA_SCORES[:, m]) for m in range(11)]
        assert got == TWITTER_ALPHA_STAR

    def test_estimate_alpha_is_argmin(self, synth_small):
        tr, va = synth_small.take(np.arange(200)), synth_small.take(np.arange(200, 300))
        a, alphas, scores = scn.estimate_alpha(tr, va, 10, repeats=2)
        assert alphas.size == 10 and alphas[0] == 0.5 and alphas[-1] == pytest.approx(1.4)
        assert a == alphas[np.argmin(scores)]


def scn_rmse(model, data):
    return float(np.sqrt(np.mean((model.predict(data.X) - data.y) ** 2)))
