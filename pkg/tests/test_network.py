import os
import tempfile

import numpy as np
import pytest

from vofml import network as net


def straight_line_forward(w, inputs):
    """Independent reference evaluator: nested loops, no matrix ops."""
    h = [float(v) for v in inputs]
    n_layers = len(w.matrices)
    for ell in range(n_layers):
        m, b = w.matrices[ell], w.biases[ell]
        out = []
        for r in range(len(b)):
            s = float(b[r])
            for c in range(len(h)):
                s += float(m[r, c]) * h[c]
            if ell < n_layers - 1:
                s = max(s, 0.0)
            out.append(s)
        h = out
    return h[0]


class TestForward:
    def test_zero_weights_return_last_bias(self):
        w = net.init_weights(seed=0)
        for m in w.matrices:
            m[:] = 0.0
        w.biases[-1][:] = 0.375
        rng = np.random.default_rng(1)
        for _ in range(5):
            x = rng.random(27)
            assert net.forward(w, x, 0.3) == 0.375

    def test_relu_chain_passes_positive_coordinate(self):
        w = net.init_weights(seed=0)
        for m in w.matrices:
            m[:] = 0.0
        for b in w.biases:
            b[:] = 0.0
        for m in w.matrices:
            m[0, 0] = 1.0
        x = np.zeros(27)
        x[0] = 0.73
        assert net.forward(w, x, 0.1) == pytest.approx(0.73, abs=1e-15)

    def test_matches_straight_line_evaluator(self):
        rng = np.random.default_rng(2)
        w = net.init_weights(seed=3)
        for _ in range(20):
            x = rng.random(28)
            assert abs(net.forward(w, x[:27], x[27]) - straight_line_forward(w, x)) <= 1e-13

    def test_dimension_mismatch(self):
        w = net.init_weights(seed=0)
        with pytest.raises(net.DimensionMismatch):
            net.forward_batch(w, np.zeros((3, 17)))

    def test_parameter_count(self):
        assert net.init_weights().n_parameters == 9151


class TestPermutations:
    def test_identity_included(self):
        perms = net.s_equal_permutations()
        assert any(np.array_equal(p, np.arange(27)) for p in perms)

    def test_quarter_turn_order_four(self):
        perms = net.s_equal_permutations()
        quarter = perms[2]  # one quarter turn in the build order
        if np.array_equal(quarter, np.arange(27)):
            quarter = perms[1]
        p = np.arange(27)
        for _ in range(4):
            p = p[quarter]
        assert np.array_equal(p, np.arange(27))

    def test_group_closure(self):
        perms = [tuple(p) for p in net.s_equal_permutations()]
        assert len(set(perms)) == 8
        for p in net.s_equal_permutations():
            for q in net.s_equal_permutations():
                assert tuple(p[q]) in perms


class TestSymmetrizedForward:
    def test_constant_input_equals_raw(self):
        w = net.init_weights(seed=4)
        x = np.full(27, 0.42)
        assert net.symmetrized_forward(w, x, 0.2) == pytest.approx(net.forward(w, x, 0.2), abs=1e-14)

    def test_invariance(self):
        w = net.init_weights(seed=5)
        rng = np.random.default_rng(6)
        perms = net.s_equal_permutations()
        for _ in range(100):
            x = rng.random(27)
            beta = rng.random()
            base = net.symmetrized_forward(w, x, beta)
            for p in perms:
                assert abs(net.symmetrized_forward(w, x[p], beta) - base) <= 1e-12

    def test_equals_mean_of_raw_forwards(self):
        w = net.init_weights(seed=7)
        rng = np.random.default_rng(8)
        perms = net.s_equal_permutations()
        for _ in range(10):
            x = rng.random(27)
            beta = rng.random()
            mean = np.mean([net.forward(w, x[p], beta) for p in perms])
            assert abs(net.symmetrized_forward(w, x, beta) - mean) <= 1e-13


class TestWrappedForward:
    def test_additivity(self):
        w = net.init_weights(seed=9)
        rng = np.random.default_rng(10)
        for _ in range(100):
            x = rng.random(27)
            beta = rng.random()
            total = net.wrapped_forward(w, x, beta) + net.wrapped_forward(w, 1.0 - x, beta)
            assert abs(total - 1.0) <= 1e-12

    def test_half_input_is_fixed_point(self):
        w = net.init_weights(seed=11)
        x = np.full(27, 0.5)
        assert net.wrapped_forward(w, x, 0.37) == pytest.approx(0.5, abs=1e-13)

    def test_invariance_of_wrapped(self):
        w = net.init_weights(seed=12)
        rng = np.random.default_rng(13)
        perms = net.s_equal_permutations()
        for _ in range(20):
            x = rng.random(27)
            beta = rng.random()
            base = net.wrapped_forward(w, x, beta)
            for p in perms:
                assert abs(net.wrapped_forward(w, x[p], beta) - base) <= 1e-12


class TestLossAndMetrics:
    def test_perfect_predictor(self):
        w = net.init_weights(seed=14)
        rng = np.random.default_rng(15)
        X = rng.random((40, 28))
        assert net.loss_mse(w, X, net.forward_batch(w, X)) == 0.0
        mse, mae = net.metrics(w, X, net.wrapped_forward_batch(w, X))
        assert mse == 0.0 and mae == 0.0

    def test_constant_half_predictor(self):
        w = net.init_weights(seed=0)
        for m in w.matrices:
            m[:] = 0.0
        w.biases[-1][:] = 0.5
        X = np.random.default_rng(16).random((2, 28))
        y = np.array([0.0, 1.0])
        assert net.loss_mse(w, X, y) == pytest.approx(0.25, abs=1e-15)
        mse, mae = net.metrics(w, X, y)
        assert mse == pytest.approx(0.25, abs=1e-15)
        assert mae == pytest.approx(0.5, abs=1e-15)

    def test_empty_partition_raises(self):
        w = net.init_weights(seed=0)
        with pytest.raises(net.EmptyPartition):
            net.loss_mse(w, np.zeros((0, 28)), np.zeros(0))
        with pytest.raises(net.EmptyPartition):
            net.metrics(w, np.zeros((0, 28)), np.zeros(0))

    def test_baseline_predictions(self):
        # donor 0.4, downwind 0, upwind neighbor 1, beta 0.4: a sharp 1D front
        x = np.full(27, 0.0)
        from vofml.stencil import cell_index

        x[cell_index(-1, 0, 0)] = 1.0
        x[cell_index(0, 0, 0)] = 0.4
        row = np.concatenate([x, [0.4]])[None, :]
        assert net.upwind_prediction(row)[0] == pytest.approx(0.4)
        assert net.limited_downwind_prediction(row)[0] == pytest.approx(0.0)


class TestGradient:
    def test_finite_differences_away_from_kinks(self):
        w = net.init_weights(seed=17)
        rng = np.random.default_rng(18)
        X = rng.random((50, 28))
        y = rng.random(50)
        g = net.grad(w, X, y).to_vector()
        vec = w.to_vector()
        h = 1e-6

        def pattern(v):
            pre, _ = net._forward_cache(net.NetworkWeights.from_vector(w.layer_dims, v), X)
            return np.concatenate([(z > 0).reshape(-1) for z in pre])

        checked = 0
        for i in rng.permutation(len(vec)):
            if abs(g[i]) < 1e-3:
                continue  # FD roundoff at step 1e-6 would dominate the ratio
            vp = vec.copy()
            vp[i] += h
            vm = vec.copy()
            vm[i] -= h
            if not np.array_equal(pattern(vp), pattern(vm)):
                continue  # a ReLU kink flips inside the stencil
            fp = net.loss_mse(net.NetworkWeights.from_vector(w.layer_dims, vp), X, y)
            fm = net.loss_mse(net.NetworkWeights.from_vector(w.layer_dims, vm), X, y)
            fd = (fp - fm) / (2.0 * h)
            assert abs(fd - g[i]) / abs(fd) < 1e-6
            checked += 1
            if checked == 20:
                break
        assert checked == 20

    def test_zero_residuals_give_zero_gradient(self):
        w = net.init_weights(seed=19)
        X = np.random.default_rng(20).random((30, 28))
        g = net.grad(w, X, net.forward_batch(w, X))
        assert all(np.all(m == 0.0) for m in g.matrices)
        assert all(np.all(b == 0.0) for b in g.biases)

    def test_affine_network_matches_least_squares(self):
        rng = np.random.default_rng(21)
        w = net.NetworkWeights((28, 1), [rng.normal(size=(1, 28))], [rng.normal(size=1)])
        X = rng.random((60, 28))
        y = rng.random(60)
        g = net.grad(w, X, y)
        r = X @ w.matrices[0][0] + w.biases[0][0] - y
        gm = 2.0 * (r @ X) / len(X)
        gb = 2.0 * r.mean()
        assert np.max(np.abs(g.matrices[0][0] - gm)) <= 1e-12
        assert abs(g.biases[0][0] - gb) <= 1e-12


class TestMinmodExpressibility:
    def test_relu_identity(self):
        rng = np.random.default_rng(22)
        for _ in range(1000):
            a, b = rng.uniform(-2.0, 2.0, size=2)
            expected = 0.0 if a * b <= 0 else np.sign(a) * min(abs(a), abs(b))
            got = net.relu(a - net.relu(a - b)) - net.relu(-a - net.relu(b - a))
            assert got == expected


class TestTraining:
    @staticmethod
    def toy_problem(seed):
        rng = np.random.default_rng(seed)
        X = rng.random((100, 28))
        y = 0.8 * X[:, :27].mean(axis=1) + 0.1
        Xv = rng.random((30, 28))
        yv = 0.8 * Xv[:, :27].mean(axis=1) + 0.1
        return X, y, Xv, yv

    def test_adam_reduces_loss_hundredfold(self):
        X, y, Xv, yv = self.toy_problem(23)
        w0 = net.init_weights(seed=24)
        before = net.loss_mse(w0, X, y)
        w1 = net.train(w0, X, y, Xv, yv, net.TrainingSchedule(adam_steps=2000, quasi_newton_steps=0))
        after = net.loss_mse(w1, X, y)
        assert after * 100.0 <= before

    def test_zero_schedule_returns_initial_weights(self):
        X, y, Xv, yv = self.toy_problem(25)
        w0 = net.init_weights(seed=26)
        w1 = net.train(w0, X, y, Xv, yv, net.TrainingSchedule(adam_steps=0, quasi_newton_steps=0))
        assert np.array_equal(w1.to_vector(), w0.to_vector())

    def test_deterministic_per_seed(self):
        X, y, Xv, yv = self.toy_problem(27)
        w0 = net.init_weights(seed=28)
        sched = lambda: net.TrainingSchedule(adam_steps=60, quasi_newton_steps=25, seed=29)
        wa = net.train(w0, X, y, Xv, yv, sched())
        wb = net.train(w0, X, y, Xv, yv, sched())
        assert np.array_equal(wa.to_vector(), wb.to_vector())

    def test_minibatch_mode_runs(self):
        X, y, Xv, yv = self.toy_problem(30)
        w0 = net.init_weights(seed=31)
        sched = net.TrainingSchedule(adam_steps=200, quasi_newton_steps=0, batch_size=32, seed=32)
        w1 = net.train(w0, X, y, Xv, yv, sched)
        assert net.loss_mse(w1, X, y) < net.loss_mse(w0, X, y)

    def test_wrapped_training_gradient(self):
        rng = np.random.default_rng(33)
        w = net.init_weights(seed=34)
        X = rng.random((20, 28))
        y = rng.random(20)
        loss, g = net.wrapped_loss_and_grad(w, X, y)
        r = net.wrapped_forward_batch(w, X) - y
        assert loss == pytest.approx(float(np.mean(r * r)), abs=1e-14)
        vec = w.to_vector()
        gv = g.to_vector()
        h = 1e-6
        checked = 0
        for i in rng.permutation(len(vec)):
            if abs(gv[i]) < 1e-3:
                continue
            vp = vec.copy()
            vp[i] += h
            vm = vec.copy()
            vm[i] -= h
            rp = net.wrapped_forward_batch(net.NetworkWeights.from_vector(w.layer_dims, vp), X) - y
            rm = net.wrapped_forward_batch(net.NetworkWeights.from_vector(w.layer_dims, vm), X) - y
            fd = (np.mean(rp * rp) - np.mean(rm * rm)) / (2.0 * h)
            if abs(fd - gv[i]) / abs(fd) < 1e-5:
                checked += 1
            if checked == 5:
                break
        assert checked == 5


class TestWeightsFile:
    def test_round_trip_is_bit_exact(self):
        w = net.init_weights(seed=35)
        fd, path = tempfile.mkstemp()
        os.close(fd)
        try:
            net.save_weights(w, path)
            back = net.load_weights(path)
            assert back.layer_dims == w.layer_dims
            assert np.array_equal(back.to_vector(), w.to_vector())
        finally:
            os.remove(path)

    def test_bad_header_rejected(self):
        fd, path = tempfile.mkstemp()
        os.close(fd)
        try:
            with open(path, "w") as fh:
                fh.write("something else\n")
            with pytest.raises(ValueError):
                net.load_weights(path)
        finally:
            os.remove(path)
