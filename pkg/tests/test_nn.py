"""Dense-network engine: gradients vs finite differences, Adam, serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opnet import nn


def _loss_closure(batch, target):
    def closure(params):
        out, acts, zs = nn._forward_cached(params, batch)
        diff = out - target
        loss = float(np.sum(diff * diff)) / diff.size
        grads, _ = nn._backward_from_cache(params, acts, zs, 2.0 * diff / diff.size)
        return loss, grads

    return closure


class TestForward:
    def test_shapes(self):
        spec = nn.MlpSpec((3, 7, 2))
        params = nn.mlp_init(spec, seed=0)
        out = nn.mlp_forward(params, np.zeros((5, 3)))
        assert out.shape == (5, 2)

    def test_single_row_promoted(self):
        spec = nn.MlpSpec((3, 4, 2))
        params = nn.mlp_init(spec, seed=0)
        row = np.array([0.1, -0.2, 0.3])
        out_row = nn.mlp_forward(params, row)
        out_batch = nn.mlp_forward(params, row[None, :])
        assert out_row.shape == (1, 2)
        np.testing.assert_array_equal(out_row, out_batch)

    def test_rows_independent(self):
        # row-wise map: evaluating rows together or separately must agree
        spec = nn.MlpSpec((2, 5, 3), activation="relu")
        params = nn.mlp_init(spec, seed=3)
        batch = np.random.default_rng(1).normal(size=(6, 2))
        together = nn.mlp_forward(params, batch)
        separate = np.vstack([nn.mlp_forward(params, r) for r in batch])
        np.testing.assert_allclose(together, separate, rtol=0, atol=1e-15)

    def test_final_activation_bounds_tanh(self):
        spec = nn.MlpSpec((2, 4, 3), activation="tanh", final_activation=True)
        params = nn.mlp_init(spec, seed=0)
        out = nn.mlp_forward(params, np.random.default_rng(0).normal(size=(10, 2), scale=50))
        assert np.all(np.abs(out) <= 1.0)

    def test_linear_final_layer_unbounded(self):
        spec = nn.MlpSpec((1, 2, 1), activation="tanh")
        params = nn.mlp_init(spec, seed=0)
        params.weights[-1][:] = 100.0
        out = nn.mlp_forward(params, np.ones((1, 1)))
        assert np.abs(out).max() > 1.0

    def test_no_final_bias_means_zero_at_zero_hidden(self):
        # with final_bias off, output is a pure linear map of the last hidden layer
        spec = nn.MlpSpec((2, 3, 2), activation="relu", final_bias=False)
        params = nn.mlp_init(spec, seed=1)
        assert params.biases[-1] is None
        # relu(0 @ W1 + 0) = 0 hidden, so output must be exactly 0
        out = nn.mlp_forward(params, np.zeros((1, 2)))
        np.testing.assert_array_equal(out, np.zeros((1, 2)))

    def test_bad_batch_shape_rejected(self):
        params = nn.mlp_init(nn.MlpSpec((3, 2)), seed=0)
        with pytest.raises(ValueError):
            nn.mlp_forward(params, np.zeros((4, 5)))

    def test_zero_params_zero_output(self):
        params = nn.mlp_init(nn.MlpSpec((2, 4, 1), activation="relu"), seed=0)
        for w in params.weights:
            w[:] = 0.0
        np.testing.assert_array_equal(nn.mlp_forward(params, [[1.0, 2.0]]), [[0.0]])

    def test_single_affine_layer(self):
        params = nn.mlp_init(nn.MlpSpec((1, 1)), seed=0)
        params.weights[0][:] = 2.0
        params.biases[0][:] = 1.0
        assert nn.mlp_forward(params, [[3.0]])[0, 0] == 7.0

    def test_tanh_oddness_under_weight_negation(self):
        # zero biases, odd activation: negating all weights negates the output
        spec = nn.MlpSpec((3, 5, 5, 1), activation="tanh")
        params = nn.mlp_init(spec, seed=8)
        x = np.random.default_rng(2).normal(size=(4, 3))
        base = nn.mlp_forward(params, x)
        flipped = params.copy()
        for w in flipped.weights:
            w *= -1.0
        np.testing.assert_allclose(nn.mlp_forward(flipped, x), -base, atol=1e-15)

    def test_batch_permutation_commutes(self):
        params = nn.mlp_init(nn.MlpSpec((2, 6, 2)), seed=1)
        batch = np.random.default_rng(3).normal(size=(8, 2))
        perm = np.random.default_rng(4).permutation(8)
        np.testing.assert_array_equal(
            nn.mlp_forward(params, batch[perm]), nn.mlp_forward(params, batch)[perm]
        )


class TestInit:
    def test_deterministic(self):
        spec = nn.MlpSpec((4, 9, 2))
        a = nn.mlp_init(spec, seed=42)
        b = nn.mlp_init(spec, seed=42)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_seed_changes_weights(self):
        spec = nn.MlpSpec((4, 9, 2))
        a = nn.mlp_init(spec, seed=0)
        b = nn.mlp_init(spec, seed=1)
        assert not np.array_equal(a.weights[0], b.weights[0])

    def test_glorot_bound_and_zero_biases(self):
        spec = nn.MlpSpec((100, 40, 40))
        params = nn.mlp_init(spec, seed=7)
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            fan_out, fan_in = w.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            assert np.all(np.abs(w) <= bound), f"layer {i} exceeds Glorot bound"
            # bound should be nearly attained for this many samples
            assert np.abs(w).max() > 0.9 * bound
            np.testing.assert_array_equal(b, np.zeros_like(b))

    def test_parameter_count(self):
        params = nn.mlp_init(nn.MlpSpec((3, 5, 2)), seed=0)
        assert params.parameter_count() == (3 * 5 + 5) + (5 * 2 + 2)
        no_bias = nn.mlp_init(nn.MlpSpec((3, 5, 2), final_bias=False), seed=0)
        assert no_bias.parameter_count() == (3 * 5 + 5) + 5 * 2

    def test_validate_rejects_bad_shapes(self):
        params = nn.mlp_init(nn.MlpSpec((3, 5, 2)), seed=0)
        params.weights[0] = np.zeros((5, 4))
        with pytest.raises(ValueError):
            params.validate()

    def test_spec_rejects_junk(self):
        with pytest.raises(ValueError):
            nn.MlpSpec((3,))
        with pytest.raises(ValueError):
            nn.MlpSpec((3, 0, 1))
        with pytest.raises(ValueError):
            nn.MlpSpec((3, 2), activation="sigmoid")


class TestGradients:
    # exact reverse-mode gradients must match central finite differences

    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    @pytest.mark.parametrize("final_activation", [False, True])
    @pytest.mark.parametrize("final_bias", [True, False])
    def test_fd_match(self, activation, final_activation, final_bias):
        spec = nn.MlpSpec((2, 8, 1), activation, final_activation, final_bias)
        params = nn.mlp_init(spec, seed=11)
        rng = np.random.default_rng(5)
        # keep relu pre-activations away from the kink
        batch = rng.normal(size=(6, 2)) + 0.5
        target = rng.normal(size=(6, 1))
        rel = nn.gradient_check(params, _loss_closure(batch, target), eps=1e-6)
        assert rel < 1e-7

    def test_input_gradient(self):
        # d/dx of the network output, via the returned input gradient
        spec = nn.MlpSpec((3, 6, 1), activation="tanh")
        params = nn.mlp_init(spec, seed=2)
        x = np.array([[0.3, -0.1, 0.7]])
        _, dx = nn.mlp_backward(params, x, np.ones((1, 1)))
        eps = 1e-6
        for j in range(3):
            xp, xm = x.copy(), x.copy()
            xp[0, j] += eps
            xm[0, j] -= eps
            fd = (nn.mlp_forward(params, xp) - nn.mlp_forward(params, xm))[0, 0] / (2 * eps)
            assert abs(dx[0, j] - fd) < 1e-8

    def test_upstream_shape_rejected(self):
        params = nn.mlp_init(nn.MlpSpec((2, 3, 1)), seed=0)
        with pytest.raises(ValueError):
            nn.mlp_backward(params, np.zeros((4, 2)), np.zeros((3, 1)))

    def test_zero_upstream_gives_zero_grads(self):
        params = nn.mlp_init(nn.MlpSpec((2, 4, 2)), seed=0)
        grads, dx = nn.mlp_backward(params, np.ones((3, 2)), np.zeros((3, 2)))
        for g in grads.arrays():
            np.testing.assert_array_equal(g, 0.0)
        np.testing.assert_array_equal(dx, 0.0)

    def test_single_affine_layer_analytic(self):
        # y = w x + b with upstream 1: dw = x, db = 1
        params = nn.mlp_init(nn.MlpSpec((1, 1)), seed=0)
        grads, _ = nn.mlp_backward(params, [[3.0]], [[1.0]])
        assert grads.weights[0][0, 0] == 3.0
        assert grads.biases[0][0] == 1.0

    @pytest.mark.parametrize(
        "sizes",
        [(1, 40, 40, 40), (100, 40, 40), (2, 100, 100, 100), (100, 100, 100)],
        ids=["trunk-ode", "branch-ode", "trunk-pde", "branch-pde"],
    )
    def test_fd_match_production_shapes(self, sizes):
        # the four production architectures, tanh, small batch
        spec = nn.MlpSpec(sizes, activation="tanh", final_activation=sizes[0] < 100)
        params = nn.mlp_init(spec, seed=1)
        rng = np.random.default_rng(0)
        batch = rng.normal(size=(3, sizes[0]))
        target = rng.normal(size=(3, sizes[-1]))
        rel = nn.gradient_check(params, _loss_closure(batch, target), eps=1e-5)
        assert rel < 1e-4

    def test_gradient_check_rejects_zero_step(self):
        params = nn.mlp_init(nn.MlpSpec((1, 1)), seed=0)
        with pytest.raises(ValueError):
            nn.gradient_check(params, _loss_closure([[1.0]], [[0.0]]), eps=0.0)

    def test_gradient_check_exact_for_quadratic(self):
        # linear model + quadratic loss: central differences are exact
        params = nn.mlp_init(nn.MlpSpec((1, 1)), seed=3)
        rel = nn.gradient_check(params, _loss_closure([[2.0]], [[1.0]]), eps=1e-4)
        assert rel < 1e-8

    def test_gradient_check_two_hidden_layers(self):
        spec = nn.MlpSpec((2, 8, 8, 1), activation="tanh")
        params = nn.mlp_init(spec, seed=6)
        rng = np.random.default_rng(1)
        rel = nn.gradient_check(
            params, _loss_closure(rng.normal(size=(4, 2)), rng.normal(size=(4, 1))), eps=1e-5
        )
        assert rel < 1e-5

    def test_grad_accumulates_over_batch(self):
        # gradient of a summed loss equals the sum of per-row gradients
        params = nn.mlp_init(nn.MlpSpec((2, 4, 1)), seed=9)
        batch = np.random.default_rng(0).normal(size=(3, 2))
        up = np.ones((3, 1))
        whole, _ = nn.mlp_backward(params, batch, up)
        acc = nn.MlpGrads.zeros_like(params)
        for r in range(3):
            g, _ = nn.mlp_backward(params, batch[r], up[r])
            for i in range(len(acc.weights)):
                acc.weights[i] += g.weights[i]
                if acc.biases[i] is not None:
                    acc.biases[i] += g.biases[i]
        for gw, aw in zip(whole.weights, acc.weights):
            np.testing.assert_allclose(gw, aw, atol=1e-12)


class TestAdam:
    def test_quadratic_descent(self):
        # minimize |w|^2; Adam with defaults should get close to zero
        w = np.array([5.0, -3.0, 2.0])
        state = nn.adam_init([w], lr=0.05)
        for _ in range(2000):
            state, (w,) = nn.adam_step_arrays(state, [w], [2.0 * w])
        assert np.all(np.abs(w) < 1e-4)

    def test_first_step_size_is_lr(self):
        # bias correction makes the first update have magnitude ~lr per coordinate
        w = np.array([1.0])
        state = nn.adam_init([w], lr=1e-3)
        state, (w2,) = nn.adam_step_arrays(state, [w], [np.array([7.3])])
        assert abs(abs(w2[0] - w[0]) - 1e-3) < 1e-8

    def test_step_counter_and_immutability(self):
        w = np.ones(3)
        w_orig = w.copy()
        state = nn.adam_init([w])
        state2, _ = nn.adam_step_arrays(state, [w], [np.ones(3)])
        assert state.step == 0 and state2.step == 1
        np.testing.assert_array_equal(w, w_orig)

    def test_zero_gradients_are_identity(self):
        params = nn.mlp_init(nn.MlpSpec((2, 3, 1)), seed=4)
        before = params.copy()
        state = nn.adam_init(params.arrays())
        zeros = nn.MlpGrads.zeros_like(params)
        for _ in range(5):
            state, params = nn.adam_step(state, params, zeros)
        for w1, w2 in zip(before.weights, params.weights):
            np.testing.assert_array_equal(w1, w2)

    def test_hundred_steps_shrink_quadratic(self):
        w = np.array([1.0])
        state = nn.adam_init([w], lr=0.1)
        for _ in range(100):
            state, (w,) = nn.adam_step_arrays(state, [w], [2.0 * w])
        assert abs(w[0]) < 1.0

    def test_nonfinite_gradient_rejected(self):
        w = np.ones(2)
        state = nn.adam_init([w])
        with pytest.raises(nn.NonFiniteGradientError):
            nn.adam_step_arrays(state, [w], [np.array([1.0, np.nan])])
        with pytest.raises(nn.NonFiniteGradientError):
            nn.adam_step_arrays(state, [w], [np.array([np.inf, 1.0])])

    def test_whole_network_step_trains_sine(self):
        # small regression problem: loss must drop by a lot
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=(64, 1))
        y = np.sin(np.pi * x)
        spec = nn.MlpSpec((1, 16, 1), activation="tanh")
        params = nn.mlp_init(spec, seed=0)
        state = nn.adam_init(params.arrays(), lr=1e-2)
        first = None
        for _ in range(500):
            out, acts, zs = nn._forward_cached(params, x)
            loss = nn.mse(out, y)
            if first is None:
                first = loss
            grads, _ = nn._backward_from_cache(params, acts, zs, 2.0 * (out - y) / y.size)
            state, params = nn.adam_step(state, params, grads)
        assert loss < first / 100


class TestMse:
    def test_known_value(self):
        assert nn.mse([1.0, 2.0], [0.0, 0.0]) == pytest.approx(2.5)

    def test_zero_on_equal(self):
        v = np.arange(5, dtype=float)
        assert nn.mse(v, v) == 0.0

    def test_single_pair(self):
        assert nn.mse([2.0], [-1.0]) == 9.0

    def test_empty_and_mismatch_rejected(self):
        with pytest.raises(ValueError):
            nn.mse([], [])
        with pytest.raises(ValueError):
            nn.mse([1.0], [1.0, 2.0])

    def test_joint_permutation_invariant(self):
        rng = np.random.default_rng(0)
        p, t = rng.normal(size=10), rng.normal(size=10)
        perm = rng.permutation(10)
        assert nn.mse(p[perm], t[perm]) == pytest.approx(nn.mse(p, t), rel=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
    def test_nonnegative_and_shift_invariant(self, vals):
        v = np.array(vals)
        assert nn.mse(v, np.zeros_like(v)) >= 0.0
        # adding the same shift to both sides changes nothing
        assert nn.mse(v + 3.0, np.zeros_like(v) + 3.0) == pytest.approx(
            nn.mse(v, np.zeros_like(v)), rel=1e-9, abs=1e-12
        )


class TestSerialization:
    @pytest.mark.parametrize("final_bias", [True, False])
    @pytest.mark.parametrize("final_activation", [False, True])
    def test_roundtrip(self, tmp_path, final_bias, final_activation):
        spec = nn.MlpSpec((4, 7, 3), "relu", final_activation, final_bias)
        params = nn.mlp_init(spec, seed=13)
        path = tmp_path / "net.opnt"
        nn.save_params(params, path)
        loaded = nn.load_params(path)
        assert loaded.spec == spec
        for w1, w2 in zip(params.weights, loaded.weights):
            np.testing.assert_array_equal(w1, w2)
        for b1, b2 in zip(params.biases, loaded.biases):
            if b1 is None:
                assert b2 is None
            else:
                np.testing.assert_array_equal(b1, b2)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE!" + b"\x00" * 40)
        with pytest.raises(ValueError, match="OPNT1"):
            nn.load_params(path)

    def test_truncated_rejected(self, tmp_path):
        params = nn.mlp_init(nn.MlpSpec((3, 2)), seed=0)
        blob = nn.params_to_bytes(params)
        with pytest.raises(ValueError, match="truncated"):
            nn.params_from_bytes(blob[:-8])

    def test_trailing_bytes_rejected(self):
        params = nn.mlp_init(nn.MlpSpec((3, 2)), seed=0)
        blob = nn.params_to_bytes(params)
        with pytest.raises(ValueError, match="trailing"):
            nn.params_from_bytes(blob + b"\x00")
