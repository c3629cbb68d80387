import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from oracles import fd_gradient, fd_jacobian, logistic_value_naive, rel_err, softmax_hessian_blocks
from sketchnewton.problems import (
    Dataset,
    LibsvmFormatError,
    LogisticProblem,
    RidgeProblem,
    SoftmaxProblem,
    gen_synthetic_logistic,
    gen_synthetic_ridge,
    gen_synthetic_softmax,
    load_libsvm,
    save_libsvm,
)
from sketchnewton.simulator import SimExecutor, StragglerModel


def small_logistic(n=40, d=5, seed=0, lam=1e-2):
    data, _, _ = gen_synthetic_logistic(n, d, seed)
    return LogisticProblem(data, lam=lam, n_shards=3, coded_blocks=4)


def small_softmax(n=20, d=4, K=3, seed=0):
    data, _ = gen_synthetic_softmax(n, d, K, seed)
    return SoftmaxProblem(data, n_shards=3, coded_blocks=4)


class TestDataset:
    def test_rejects_bad_logistic_labels(self):
        with pytest.raises(ValueError, match="logistic"):
            Dataset(np.ones((2, 3)), np.array([1.0, 0.0, 1.0]), "logistic")

    def test_rejects_non_one_hot(self):
        with pytest.raises(ValueError, match="one-hot"):
            Dataset(np.ones((2, 2)), np.array([[1.0, 1.0], [1.0, 0.0]]), "softmax")

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[np.nan]]), np.array([1.0]))

    def test_shapes(self):
        data, _ = gen_synthetic_softmax(7, 3, 4, 0)
        assert (data.d, data.n, data.K) == (3, 7, 4)


class TestLogistic:
    def test_value_at_zero(self):
        assert small_logistic().value(np.zeros(5)) == pytest.approx(math.log(2), rel=1e-15)

    def test_value_zero_features(self):
        P = LogisticProblem(Dataset(np.zeros((3, 10)), np.ones(10)), lam=0.5)
        w = np.array([1.0, -2.0, 0.5])
        assert P.value(w) == pytest.approx(math.log(2) + 0.25 * (w @ w), rel=1e-14)

    def test_value_matches_naive(self):
        P = small_logistic(seed=3)
        w = np.random.default_rng(1).standard_normal(5) * 3
        assert P.value(w) == pytest.approx(logistic_value_naive(P.data.X, P.data.y, w, P.lam), rel=1e-12)

    def test_sharded_value_matches_serial(self):
        P = small_logistic(seed=4)
        w = np.random.default_rng(2).standard_normal(5)
        ex = SimExecutor(StragglerModel(straggler_prob=0.3, seed=3))
        assert P.value_shards(w, ex) == pytest.approx(P.value(w), rel=1e-10)
        assert P.value_shards(w, ex) == pytest.approx(logistic_value_naive(P.data.X, P.data.y, w, P.lam), rel=1e-10)

    def test_gradient_at_zero(self):
        P = small_logistic()
        expected = -(P.data.X @ P.data.y) / (2 * P.data.n)
        np.testing.assert_allclose(P.gradient(np.zeros(5)), expected, rtol=1e-13, atol=1e-16)

    def test_gradient_large_lambda(self):
        data, _, _ = gen_synthetic_logistic(30, 4, 1)
        P = LogisticProblem(data, lam=1e6)
        w = np.array([0.3, -0.2, 0.1, 0.5])
        assert rel_err(P.gradient(w), 1e6 * w) <= 1e-6

    def test_gradient_no_overflow(self):
        P = small_logistic()
        g = P.gradient(np.full(5, 1e3))
        assert np.all(np.isfinite(g)) and np.isfinite(P.value(np.full(5, 1e3)))

    @given(st.integers(0, 10_000), st.integers(1, 10))
    def test_gradient_fd(self, seed, d):
        P = small_logistic(n=30, d=d, seed=seed)
        w = np.random.default_rng(seed).standard_normal(d)
        assert rel_err(P.gradient(w), fd_gradient(P.value, w)) <= 1e-5

    def test_coded_gradient_equals_serial(self):
        P = small_logistic(n=300, d=8, seed=5)
        w = np.random.default_rng(0).standard_normal(8)
        ref = P.serial_gradient(w)
        for seed in range(25):
            ex = SimExecutor(StragglerModel(straggler_prob=0.3, slowdown=4.0, seed=seed))
            assert rel_err(P.gradient(w, ex), ref) <= 1e-10

    def test_hessian_sqrt_at_zero(self):
        P = small_logistic()
        P.gradient(np.zeros(5))
        np.testing.assert_allclose(P.hessian_sqrt(np.zeros(5)), 0.5 * P.data.X.T)

    def test_hessian_zero_features(self):
        P = LogisticProblem(Dataset(np.zeros((3, 6)), np.ones(6)), lam=0.2)
        np.testing.assert_allclose(P.hessian(np.ones(3)), 0.2 * np.eye(3))

    @given(st.integers(0, 10_000), st.integers(1, 6))
    def test_hessian_fd(self, seed, d):
        P = small_logistic(n=25, d=d, seed=seed)
        w = np.random.default_rng(seed).standard_normal(d)
        assert rel_err(P.hessian(w), fd_jacobian(P.serial_gradient, w)) <= 1e-4

    def test_curvature_bounds(self):
        P = small_logistic(n=200, d=6, seed=2)
        w = np.random.default_rng(3).standard_normal(6) * 5
        gam = P.curvature(w)
        assert np.all(gam > 0) and np.all(gam <= 0.25)
        bound = np.linalg.norm(P.data.X, 2) ** 2 / (4 * P.data.n) + P.lam
        assert np.linalg.eigvalsh(P.hessian(w))[-1] <= bound * (1 + 1e-12)

    def test_margins_cached_for_hessian(self):
        P = small_logistic()
        w = np.ones(5)
        P.gradient(w, SimExecutor())
        np.testing.assert_allclose(P.curvature(w), expit(P.data.y * (w @ P.data.X)) * expit(-P.data.y * (w @ P.data.X)))

    def test_rejects_wrong_kind(self):
        data, _ = gen_synthetic_ridge(10, 2)
        with pytest.raises(ValueError):
            LogisticProblem(data)


class TestSoftmax:
    def test_beta_at_zero_is_uniform_minus_labels(self):
        Y = np.tile(np.eye(3), 4)
        X = np.random.default_rng(0).uniform(-1, 1, (2, 12))
        P = SoftmaxProblem(Dataset(X, Y, "softmax"))
        expected = P.flatten(X @ (np.full((12, 3), 1 / 3) - Y.T))
        np.testing.assert_allclose(P.gradient(np.zeros(6)), expected, atol=1e-14)

    @given(st.integers(0, 10_000), st.integers(1, 4))
    def test_gradient_fd(self, seed, d):
        P = small_softmax(n=20, d=d, seed=seed)
        w = np.random.default_rng(seed).standard_normal(d * 3)
        assert rel_err(P.gradient(w), fd_gradient(P.value, w)) <= 1e-5

    def test_gradient_orthogonal_to_shift(self):
        P = small_softmax(seed=3)
        w = np.random.default_rng(1).standard_normal(12)
        g = P.gradient(w)
        for v in np.eye(4):
            shift = np.tile(v, 3)
            assert abs(g @ shift) <= 1e-10 * np.linalg.norm(g)
            assert P.value(w + shift) == pytest.approx(P.value(w), rel=1e-12)

    def test_coded_gradient_equals_serial(self):
        P = small_softmax(n=200, d=5, seed=2)
        w = np.random.default_rng(0).standard_normal(15)
        for seed in range(10):
            ex = SimExecutor(StragglerModel(straggler_prob=0.3, seed=seed))
            assert rel_err(P.gradient(w, ex), P.serial_gradient(w)) <= 1e-10

    def test_binary_reduces_to_logistic_curvature(self):
        P = small_softmax(n=6, d=2, K=2, seed=1)
        w = np.random.default_rng(2).standard_normal(4)
        A = P.hessian_sqrt(w)
        z = P.data.X.T @ P.unflatten(w)
        s = np.exp(z - z.max(1, keepdims=True))
        s /= s.sum(1, keepdims=True)
        for j in range(6):
            band = A[2 * j:2 * j + 2]
            lam = band.T @ band
            xx = np.outer(P.data.X[:, j], P.data.X[:, j])
            c = s[j, 0] * (1 - s[j, 0])
            np.testing.assert_allclose(lam, c * np.block([[xx, -xx], [-xx, xx]]), atol=1e-14)
            assert np.linalg.matrix_rank(lam, tol=1e-12) <= 1

    def test_block_assembly_oracle(self):
        P = small_softmax(n=5, d=2, K=3, seed=4)
        w = np.random.default_rng(5).standard_normal(6)
        A = P.hessian_sqrt(w)
        assert A.shape == (15, 6)
        assert rel_err(A.T @ A, softmax_hessian_blocks(P.data.X, P.unflatten(w))) <= 1e-10

    @given(st.integers(0, 10_000), st.integers(1, 4))
    def test_hessian_fd(self, seed, d):
        P = small_softmax(n=15, d=d, seed=seed)
        w = np.random.default_rng(seed).standard_normal(3 * d)
        assert rel_err(P.hessian(w), fd_jacobian(P.serial_gradient, w)) <= 1e-4

    def test_saturated_sample_contributes_nothing(self):
        X = np.array([[1.0]])
        P = SoftmaxProblem(Dataset(X, np.array([[1.0], [0.0], [0.0]]), "softmax"))
        A = P.hessian_sqrt(np.array([60.0, 0.0, 0.0]))
        assert np.abs(A).max() <= 1e-12

    def test_flatten_round_trip(self):
        P = small_softmax()
        W = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(P.unflatten(P.flatten(W)), W)


class TestRidge:
    def test_identity_design_one_newton_step(self):
        from sketchnewton.solvers import SolverConfig, solve

        y = np.array([1.0, -2.0, 0.5, 3.0])
        P = RidgeProblem(Dataset(np.eye(4), y, "ridge"), lam=0.0, n_shards=2)
        trace = solve(P, SolverConfig(hessian_mode="exact", grad_tol=1e-10, max_iters=5))
        np.testing.assert_allclose(trace.final_w, y, atol=1e-12)
        assert trace.iterations == 1

    def test_gradient_zero_at_closed_form(self):
        data, _ = gen_synthetic_ridge(200, 6, 1)
        P = RidgeProblem(data, lam=1e-3)
        assert np.linalg.norm(P.gradient(P.closed_form())) <= 1e-10

    @given(st.integers(0, 10_000), st.integers(1, 10))
    def test_gradient_fd(self, seed, d):
        data, _ = gen_synthetic_ridge(30, d, seed)
        P = RidgeProblem(data, lam=0.1)
        w = np.random.default_rng(seed).standard_normal(d)
        assert rel_err(P.gradient(w), fd_gradient(P.value, w)) <= 1e-5

    def test_hessian_matches_fd(self):
        data, _ = gen_synthetic_ridge(40, 5, 2)
        P = RidgeProblem(data, lam=0.3)
        w = np.zeros(5)
        np.testing.assert_allclose(P.hessian(w), data.X @ data.X.T / 40 + 0.3 * np.eye(5), rtol=1e-13)
        assert rel_err(P.hessian(w), fd_jacobian(P.serial_gradient, w)) <= 1e-4

    def test_rejects_negative_lambda(self):
        data, _ = gen_synthetic_ridge(5, 2)
        with pytest.raises(ValueError):
            RidgeProblem(data, lam=-1.0)


class TestLibsvm:
    def test_parse_line(self, tmp_path):
        path = tmp_path / "a.txt"
        path.write_text("+1 1:0.5 3:2.0\n-1\n")
        data = load_libsvm(path)
        np.testing.assert_array_equal(data.y, [1.0, -1.0])
        np.testing.assert_array_equal(data.X[:, 0], [0.5, 0.0, 2.0])
        np.testing.assert_array_equal(data.X[:, 1], [0.0, 0.0, 0.0])

    def test_zero_one_labels_mapped(self, tmp_path):
        path = tmp_path / "b.txt"
        path.write_text("0 1:1\n1 2:1\n")
        np.testing.assert_array_equal(load_libsvm(path).y, [-1.0, 1.0])

    def test_n_features_override(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("1 2:1\n")
        assert load_libsvm(path, n_features=5).d == 5

    @pytest.mark.parametrize(
        "body,lineno",
        [("1 1:1\n1 3:1 2:1\n", 2), ("1 1:1\n\nx 1:1\n", 3), ("1 1:abc\n", 1), ("1 0:1\n", 1), ("1 1\n", 1)],
    )
    def test_errors_carry_line_numbers(self, tmp_path, body, lineno):
        path = tmp_path / "bad.txt"
        path.write_text(body)
        with pytest.raises(LibsvmFormatError) as info:
            load_libsvm(path)
        assert info.value.lineno == lineno
        assert f":{lineno}:" in str(info.value)

    @pytest.mark.parametrize("kind", ["logistic", "softmax", "ridge"])
    def test_round_trip(self, tmp_path, kind):
        if kind == "logistic":
            data = gen_synthetic_logistic(30, 6, 1)[0]
        elif kind == "softmax":
            data = gen_synthetic_softmax(30, 6, 3, 1)[0]
        else:
            data = gen_synthetic_ridge(30, 6, 1)[0]
        X = data.X.copy()
        X[X < 0] = 0.0  # sparse rows exercise the omitted zeros
        data = Dataset(X, data.y, kind)
        path = tmp_path / f"{kind}.txt"
        save_libsvm(path, data)
        back = load_libsvm(path, kind=kind, n_features=6)
        np.testing.assert_array_equal(back.X, data.X)
        assert data.kind != "softmax" or data.y.sum(axis=1).all()
        np.testing.assert_array_equal(back.y, data.y)


class TestGenerators:
    def test_features_in_cube(self):
        data, w, b = gen_synthetic_logistic(500, 7, 3)
        assert np.all(np.abs(data.X) <= 1.0) and w.shape == (7,) and isinstance(b, float)

    def test_label_frequencies_match_planted(self):
        n = 100_000
        data, w, b = gen_synthetic_logistic(n, 5, 11)
        p = expit(-(w @ data.X + b))
        observed = np.mean(data.y == 1)
        assert abs(observed - p.mean()) <= 3 * np.sqrt(np.sum(p * (1 - p))) / n

    def test_softmax_generator(self):
        data, W = gen_synthetic_softmax(300, 4, 3, 2)
        assert W.shape == (4, 3) and np.all(data.y.sum(0) == 1)
        assert np.all(data.y.sum(1) > 0)

    def test_deterministic(self):
        a = gen_synthetic_logistic(50, 3, 9)[0]
        b = gen_synthetic_logistic(50, 3, 9)[0]
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)
