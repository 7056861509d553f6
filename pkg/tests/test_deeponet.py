"""Branch-trunk models: merge algebra, gradients, embedding, baseline."""

import numpy as np
import pytest

from opnet import deeponet as dn
from opnet import nn


def tiny_model(variant="unstacked", m=5, dim_y=1, p=2, seed=0, use_bias=True,
               branch_activation="tanh"):
    return dn.build_deeponet(
        variant, m, dim_y, seed,
        branch_hidden=(6,), trunk_hidden=(6, p),
        branch_activation=branch_activation, use_bias=use_bias,
    )


def zero_out(model):
    for net in [model.trunk] + model.branches:
        for w in net.weights:
            w[:] = 0.0
        for b in net.biases:
            if b is not None:
                b[:] = 0.0
    return model


def fd_loss_closure(model, U, Y, targets):
    def loss_at(arrays):
        return dn.deeponet_gradients(dn.apply_arrays(model, arrays), U, Y, targets)[1]

    return loss_at


def model_fd_check(model, U, Y, targets, eps=1e-6):
    grads, _, _ = dn.deeponet_gradients(model, U, Y, targets)
    analytic = dn.grad_arrays(model, grads)
    arrays = [a.copy() for a in dn.model_arrays(model)]
    loss_at = fd_loss_closure(model, U, Y, targets)
    worst = 0.0
    for arr, g in zip(arrays, analytic):
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp = loss_at(arrays)
            flat[j] = orig - eps
            lm = loss_at(arrays)
            flat[j] = orig
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, abs(gflat[j] - fd) / max(1.0, abs(gflat[j])))
    return worst


class TestForward:
    def test_p1_dot_product(self):
        # constant nets: branch outputs 2, trunk outputs relu(3) = 3
        model = dn.build_deeponet(
            "unstacked", 4, 1, seed=0, branch_hidden=(3,), trunk_hidden=(3, 1),
            trunk_activation="relu",
        )
        zero_out(model)
        model.branches[0].biases[-1][:] = 2.0
        model.trunk.biases[-1][:] = 3.0
        model.b0 = 0.0
        assert dn.deeponet_forward(model, np.ones(4), 0.3) == pytest.approx(6.0)

    def test_zero_branch_gives_b0(self):
        model = tiny_model(branch_activation="relu")
        zero_out(model)
        model.b0 = 0.5
        for y in (0.1, 0.9):
            assert dn.deeponet_forward(model, np.ones(5), y) == pytest.approx(0.5)

    def test_p3_hand_set(self):
        model = dn.build_deeponet(
            "unstacked", 4, 1, seed=0, branch_hidden=(3,), trunk_hidden=(3, 3),
            trunk_activation="relu",
        )
        zero_out(model)
        model.branches[0].biases[-1][:] = [1.0, 2.0, 3.0]
        model.trunk.biases[-1][:] = 1.0
        model.b0 = 1.0
        assert dn.deeponet_forward(model, np.zeros(4), 0.0) == pytest.approx(7.0)

    def test_single_u_broadcasts_over_queries(self):
        model = tiny_model()
        u = np.random.default_rng(0).normal(size=5)
        ys = np.linspace(0, 1, 7)
        batch = dn.deeponet_forward(model, u, ys)
        singles = [dn.deeponet_forward(model, u, y) for y in ys]
        np.testing.assert_allclose(batch, singles, atol=1e-15)

    def test_variants_agree_on_shapes_only(self):
        stacked = tiny_model("stacked")
        assert len(stacked.branches) == stacked.p
        unstacked = tiny_model("unstacked")
        assert len(unstacked.branches) == 1

    def test_shape_mismatch_rejected(self):
        model = tiny_model()
        with pytest.raises(ValueError):
            dn.deeponet_forward(model, np.ones(4), 0.5)
        with pytest.raises(ValueError):
            dn.deeponet_forward(model, np.ones((3, 5)), np.zeros((2, 1)))

    def test_b0_disabled_not_added(self):
        model = tiny_model(use_bias=False)
        zero_out(model)
        model.b0 = 99.0  # must be ignored
        assert dn.deeponet_forward(model, np.ones(5), 0.5) == pytest.approx(0.0)


class TestMergeAlgebra:
    def test_bilinear_in_branch(self):
        # branch final layer is linear, so scaling it scales (pred - b0)
        model = tiny_model()
        u = np.random.default_rng(1).normal(size=(6, 5))
        y = np.random.default_rng(2).uniform(size=(6, 1))
        base = dn.deeponet_forward(model, u, y) - model.b0
        scaled = model.copy()
        scaled.branches[0].weights[-1] *= 3.0
        scaled.branches[0].biases[-1] *= 3.0
        got = dn.deeponet_forward(scaled, u, y) - scaled.b0
        np.testing.assert_allclose(got, 3.0 * base, rtol=1e-12)

    def test_bilinear_in_trunk_outputs(self):
        model = tiny_model()
        u = np.random.default_rng(3).normal(size=(4, 5))
        y = np.random.default_rng(4).uniform(size=(4, 1))
        B = dn.branch_outputs(model, u)
        T = dn.trunk_outputs(model, y)
        base = dn.merge_outputs(B, T, 0.0)
        np.testing.assert_allclose(dn.merge_outputs(B, -2.5 * T, 0.0), -2.5 * base, rtol=1e-12)

    def test_permuting_k_index_preserves_output(self):
        # jointly permute stacked branches and trunk output units
        model = tiny_model("stacked", p=4)
        u = np.random.default_rng(5).normal(size=(8, 5))
        y = np.random.default_rng(6).uniform(size=(8, 1))
        base = dn.deeponet_forward(model, u, y)
        perm = np.random.default_rng(7).permutation(4)
        shuffled = model.copy()
        shuffled.branches = [model.branches[k].copy() for k in perm]
        shuffled.trunk.weights[-1] = model.trunk.weights[-1][perm]
        shuffled.trunk.biases[-1] = model.trunk.biases[-1][perm]
        np.testing.assert_allclose(dn.deeponet_forward(shuffled, u, y), base, atol=1e-12)


class TestGradients:
    def test_zero_residual_zero_gradients(self):
        model = tiny_model(branch_activation="relu")
        zero_out(model)
        model.b0 = 0.5
        u = np.random.default_rng(0).normal(size=(6, 5))
        y = np.random.default_rng(1).uniform(size=(6, 1))
        grads, loss, _ = dn.deeponet_gradients(model, u, y, np.full(6, 0.5))
        assert loss == 0.0
        for g in dn.grad_arrays(model, grads):
            np.testing.assert_array_equal(g, 0.0)

    def test_b0_gradient_analytic(self):
        model = tiny_model()
        rng = np.random.default_rng(2)
        u, y, t = rng.normal(size=(9, 5)), rng.uniform(size=(9, 1)), rng.normal(size=9)
        grads, _, pred = dn.deeponet_gradients(model, u, y, t)
        assert grads.b0 == pytest.approx(2.0 * np.mean(pred - t), rel=1e-12)

    @pytest.mark.parametrize("variant", ["stacked", "unstacked"])
    @pytest.mark.parametrize("use_bias", [True, False])
    def test_fd_small_model(self, variant, use_bias):
        model = tiny_model(variant, use_bias=use_bias)
        rng = np.random.default_rng(3)
        u, y, t = rng.normal(size=(7, 5)), rng.uniform(size=(7, 1)), rng.normal(size=7)
        assert model_fd_check(model, u, y, t) < 1e-5

    @pytest.mark.parametrize(
        "variant,dim_y",
        [("stacked", 1), ("unstacked", 1), ("unstacked", 2)],
        ids=["stacked-ode", "unstacked-ode", "unstacked-pde"],
    )
    def test_fd_production_layouts_reduced_width(self, variant, dim_y):
        # production depths (trunk 3, branch 2) at width 8 and m=10
        model = dn.build_deeponet(
            variant, 10, dim_y, seed=4,
            branch_hidden=(8,), trunk_hidden=(8, 8, 8), branch_activation="tanh",
        )
        rng = np.random.default_rng(5)
        u = rng.normal(size=(5, 10))
        y = rng.uniform(size=(5, dim_y))
        t = rng.normal(size=5)
        assert model_fd_check(model, u, y, t, eps=1e-5) < 1e-4

    def test_indexed_route_matches_per_record(self):
        model = tiny_model()
        rng = np.random.default_rng(6)
        u_unique = rng.normal(size=(3, 5))
        y_unique = rng.uniform(size=(4, 1))
        iu = np.array([0, 0, 1, 2, 2, 1])
        iy = np.array([0, 1, 2, 3, 0, 1])
        t = rng.normal(size=6)
        gi, li, pi = dn.deeponet_gradients_indexed(model, u_unique, y_unique, iu, iy, t)
        gd, ld, pd = dn.deeponet_gradients(model, u_unique[iu], y_unique[iy], t)
        assert li == pytest.approx(ld, rel=1e-14)
        np.testing.assert_allclose(pi, pd, atol=1e-14)
        for a, b in zip(dn.grad_arrays(model, gi), dn.grad_arrays(model, gd)):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_indexed_validation(self):
        model = tiny_model()
        rng = np.random.default_rng(7)
        u, y = rng.normal(size=(2, 5)), rng.uniform(size=(2, 1))
        with pytest.raises(ValueError):
            dn.deeponet_gradients_indexed(model, u, y, [0, 5], [0, 1], [0.0, 0.0])
        with pytest.raises(ValueError):
            dn.deeponet_gradients(model, u, y, [])

    def test_apply_arrays_roundtrip(self):
        model = tiny_model("stacked", p=3)
        arrays = [a.copy() for a in dn.model_arrays(model)]
        rebuilt = dn.apply_arrays(model, arrays)
        u = np.random.default_rng(8).normal(size=(4, 5))
        y = np.random.default_rng(9).uniform(size=(4, 1))
        np.testing.assert_array_equal(
            dn.deeponet_forward(rebuilt, u, y), dn.deeponet_forward(model, u, y)
        )


class TestEmbedding:
    def test_forward_preserved(self):
        model = dn.build_deeponet(
            "stacked", 8, 1, seed=10, branch_hidden=(10,), trunk_hidden=(10, 4)
        )
        merged = dn.stacked_to_unstacked_embed(model)
        assert merged.variant == "unstacked"
        rng = np.random.default_rng(11)
        u = rng.normal(size=(100, 8))
        y = rng.uniform(size=(100, 1))
        a = dn.deeponet_forward(model, u, y)
        b = dn.deeponet_forward(merged, u, y)
        assert np.max(np.abs(a - b)) < 1e-12

    def test_forward_preserved_three_layer_branch(self):
        # a hidden-hidden layer exercises the block-diagonal middle case
        model = dn.build_deeponet(
            "stacked", 6, 1, seed=12, branch_hidden=(5, 7), trunk_hidden=(6, 3)
        )
        merged = dn.stacked_to_unstacked_embed(model)
        rng = np.random.default_rng(13)
        u = rng.normal(size=(50, 6))
        y = rng.uniform(size=(50, 1))
        assert np.max(np.abs(dn.deeponet_forward(model, u, y)
                             - dn.deeponet_forward(merged, u, y))) < 1e-12

    def test_p1_identity_reshape(self):
        model = dn.build_deeponet(
            "stacked", 5, 1, seed=14, branch_hidden=(6,), trunk_hidden=(4, 1)
        )
        merged = dn.stacked_to_unstacked_embed(model)
        for w1, w2 in zip(model.branches[0].weights, merged.branches[0].weights):
            np.testing.assert_array_equal(w1, w2)

    def test_parameter_count_at_least_native(self):
        model = dn.build_deeponet(
            "stacked", 8, 1, seed=15, branch_hidden=(10,), trunk_hidden=(10, 4)
        )
        merged = dn.stacked_to_unstacked_embed(model)
        native = dn.build_deeponet(
            "unstacked", 8, 1, seed=15, branch_hidden=(10,), trunk_hidden=(10, 4)
        )
        assert merged.parameter_count() >= native.parameter_count()

    def test_heterogeneous_branches_rejected(self):
        model = dn.build_deeponet(
            "stacked", 5, 1, seed=16, branch_hidden=(6,), trunk_hidden=(4, 2)
        )
        other = nn.mlp_init(nn.MlpSpec((5, 9, 1), "relu"), seed=0)
        model.branches[1] = other
        with pytest.raises(ValueError, match="share"):
            dn.stacked_to_unstacked_embed(model)

    def test_unstacked_input_rejected(self):
        with pytest.raises(ValueError):
            dn.stacked_to_unstacked_embed(tiny_model("unstacked"))


class TestBiasFreeForm:
    def test_parameter_audit_without_bias(self):
        # no affine offsets beyond hidden-layer biases: the merged output has
        # no branch final bias and no b0
        m, w, p = 7, 6, 4
        model = dn.build_deeponet(
            "unstacked", m, 1, seed=17, branch_hidden=(w,), trunk_hidden=(w, p),
            use_bias=False,
        )
        assert model.branches[0].biases[-1] is None
        assert not model.b0_enabled
        trunk_count = (1 * w + w) + (w * p + p)
        branch_count = (m * w + w) + (w * p)
        assert model.parameter_count() == trunk_count + branch_count

    def test_bias_variant_has_extra_terms(self):
        m, w, p = 7, 6, 4
        biased = dn.build_deeponet(
            "unstacked", m, 1, seed=18, branch_hidden=(w,), trunk_hidden=(w, p),
            use_bias=True,
        )
        bare = dn.build_deeponet(
            "unstacked", m, 1, seed=18, branch_hidden=(w,), trunk_hidden=(w, p),
            use_bias=False,
        )
        assert biased.parameter_count() == bare.parameter_count() + p + 1


class TestFnnBaseline:
    def test_zero_weight_net_outputs_bias(self):
        baseline = dn.build_fnn(4, 1, (6,), seed=0)
        for w in baseline.net.weights:
            w[:] = 0.0
        baseline.net.biases[-1][:] = 0.7
        assert dn.fnn_forward(baseline, np.ones(4), 0.5) == pytest.approx(0.7)

    def test_widest_grid_search_corner_instantiable(self):
        baseline = dn.build_fnn(100, 1, (2560,), seed=1)
        out = dn.fnn_forward(baseline, np.zeros((3, 100)), np.zeros((3, 1)))
        assert out.shape == (3,)
        assert baseline.parameter_count() == (101 * 2560 + 2560) + (2560 + 1)

    def test_gradient_fd(self):
        baseline = dn.build_fnn(10, 1, (8,), seed=2, activation="tanh")
        rng = np.random.default_rng(3)
        u, y, t = rng.normal(size=(5, 10)), rng.uniform(size=(5, 1)), rng.normal(size=5)

        def closure(params):
            fb = dn.FnnBaseline(10, 1, params)
            grads, loss, _ = dn.fnn_gradients(fb, u, y, t)
            return loss, grads

        assert nn.gradient_check(baseline.net, closure, eps=1e-6) < 1e-5

    def test_shape_checks(self):
        baseline = dn.build_fnn(4, 1, (6,), seed=0)
        with pytest.raises(ValueError):
            dn.fnn_forward(baseline, np.ones(3), 0.5)
        with pytest.raises(ValueError):
            dn.FnnBaseline(4, 1, nn.mlp_init(nn.MlpSpec((9, 2)), seed=0))


class TestCheckpoints:
    @pytest.mark.parametrize("variant", ["stacked", "unstacked"])
    @pytest.mark.parametrize("use_bias", [True, False])
    def test_roundtrip(self, tmp_path, variant, use_bias):
        model = tiny_model(variant, use_bias=use_bias)
        model.b0 = 0.25 if use_bias else 0.0
        path = tmp_path / "model.opmd"
        dn.save_model(model, path)
        loaded = dn.load_model(path)
        assert loaded.variant == variant
        assert loaded.b0 == model.b0
        assert loaded.branch_bias_enabled == use_bias
        rng = np.random.default_rng(0)
        u, y = rng.normal(size=(6, 5)), rng.uniform(size=(6, 1))
        np.testing.assert_array_equal(
            dn.deeponet_forward(loaded, u, y), dn.deeponet_forward(model, u, y)
        )

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.opmd"
        path.write_bytes(b"XXXXX" + b"\x00" * 30)
        with pytest.raises(ValueError, match="OPMD1"):
            dn.load_model(path)

    def test_truncated(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "model.opmd"
        dn.save_model(model, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(ValueError, match="truncated"):
            dn.load_model(path)


class TestValidation:
    def test_trunk_must_apply_final_activation(self):
        model = tiny_model()
        bad_spec = nn.MlpSpec(model.trunk.spec.layer_sizes, "tanh", final_activation=False)
        bad = nn.mlp_init(bad_spec, seed=0)
        with pytest.raises(ValueError, match="activation"):
            dn.DeepONetModel("unstacked", 5, 1, 2, bad, model.branches)

    def test_trunk_width_must_match_p(self):
        model = tiny_model()
        with pytest.raises(ValueError):
            dn.DeepONetModel("unstacked", 5, 1, 3, model.trunk, model.branches)

    def test_branch_count_checked(self):
        model = tiny_model("stacked", p=2)
        with pytest.raises(ValueError):
            dn.DeepONetModel("stacked", 5, 1, 2, model.trunk, model.branches[:1])
