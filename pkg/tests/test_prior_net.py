"""Recurrent prior network: forward conventions and exact gradients."""

import numpy as np
import pytest

from semidanse.prior_net import (
    PARAM_KEYS,
    NetDims,
    PriorNetParams,
    backward,
    cell_step,
    forward_batch,
    forward_priors,
    heads,
    init_params,
    load_params,
    param_shapes,
    save_params,
    softplus,
    zeros_params,
)

DIMS = NetDims(input_dim=2)


def perturbed_params(seed: int, scale: float = 0.05) -> PriorNetParams:
    """Generic parameter point: seeded init plus a small dense offset.

    Biases initialize to zero, which parks several ReLU pre-activations
    exactly on their kinks (the t = 1 trunk input is exactly zero); finite
    differences are only meaningful away from those kinks.
    """
    base = init_params(DIMS, seed)
    gen = np.random.default_rng(seed + 1)
    arrays = {k: v + scale * gen.standard_normal(v.shape) for k, v in base.arrays.items()}
    return PriorNetParams(DIMS, arrays)


def reference_unrolled(params: PriorNetParams, ys: np.ndarray):
    """Straight-line scalar-loop forward pass, independent of the library kernels."""
    a = params.arrays

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    def cell(z, y):
        r = sig(a["w_reset_in"] @ y + a["w_reset_rec"] @ z + a["b_reset"])
        u = sig(a["w_update_in"] @ y + a["w_update_rec"] @ z + a["b_update"])
        c = np.tanh(a["w_cand_in"] @ y + a["w_cand_rec"] @ (r * z) + a["b_cand"])
        return (1.0 - u) * z + u * c

    def head(z):
        trunk = np.maximum(a["w_trunk"] @ z + a["b_trunk"], 0.0)
        mh = np.maximum(a["w_mean_hidden"] @ trunk + a["b_mean_hidden"], 0.0)
        mean = a["w_mean_out"] @ mh + a["b_mean_out"]
        vh = np.maximum(a["w_var_hidden"] @ trunk + a["b_var_hidden"], 0.0)
        var = np.log1p(np.exp(-(np.abs(a["w_var_out"] @ vh + a["b_var_out"])))) + np.maximum(
            a["w_var_out"] @ vh + a["b_var_out"], 0.0
        )
        return mean, var

    z = np.zeros(params.dims.hidden)
    means, variances = [], []
    for t in range(len(ys)):
        m, v = head(z)
        means.append(m)
        variances.append(v)
        if t < len(ys) - 1:
            z = cell(z, ys[t])
    return np.array(means), np.array(variances)


class TestCellStep:
    def test_zero_params_zero_state(self):
        p = zeros_params(DIMS)
        out = cell_step(p, np.zeros(DIMS.hidden), np.array([1.0, -2.0]))
        np.testing.assert_array_equal(out, np.zeros(DIMS.hidden))

    def test_zero_params_halves_previous_state(self, rng):
        # update gate sits at sigmoid(0) = 0.5 and the candidate at tanh(0) = 0
        p = zeros_params(DIMS)
        v = rng.standard_normal(DIMS.hidden)
        out = cell_step(p, v, rng.standard_normal(2))
        np.testing.assert_allclose(out, 0.5 * v, atol=1e-15)

    def test_weight_perturbation_matches_gradient(self):
        # directional derivative of <g, output_2> wrt a single recurrent weight
        p = perturbed_params(3)
        ys = np.random.default_rng(0).standard_normal((2, 2))
        g_mean = np.zeros((2, 3))
        g_var = np.zeros((2, 3))
        g_mean[1] = np.array([0.3, -1.1, 0.7])
        grads = backward(p, ys, g_mean, g_var)
        for key in ("w_cand_in", "w_update_rec", "w_reset_in"):
            idx = (1, 0)
            h = 1e-6
            for sign in (+1, -1):
                q = p.copy()
                q.arrays[key][idx] += sign * h
                mean, _, _ = forward_batch(q, ys[None])
                if sign > 0:
                    f_plus = float(np.sum(g_mean * mean[0]))
                else:
                    f_minus = float(np.sum(g_mean * mean[0]))
            fd = (f_plus - f_minus) / (2 * h)
            an = grads.arrays[key][idx]
            assert an == pytest.approx(fd, rel=1e-5, abs=1e-9)


class TestHeads:
    def test_zero_params_give_log_two_variance(self):
        p = zeros_params(DIMS)
        out = heads(p, np.zeros(DIMS.hidden))
        np.testing.assert_array_equal(out.mean, np.zeros(3))
        np.testing.assert_allclose(out.diag_cov, np.log(2.0) * np.ones(3), rtol=1e-12)

    def test_bias_only_mean(self):
        p = zeros_params(DIMS)
        p.arrays["b_mean_out"][:] = [1.0, -2.0, 0.5]
        out = heads(p, np.zeros(DIMS.hidden))
        np.testing.assert_array_equal(out.mean, [1.0, -2.0, 0.5])

    def test_variance_strictly_positive(self, rng):
        p = perturbed_params(9, scale=0.5)
        for _ in range(20):
            out = heads(p, rng.standard_normal(DIMS.hidden) * 3.0)
            assert np.all(out.diag_cov > 0.0)

    def test_softplus_stability(self):
        big = np.array([800.0, -800.0, 0.0])
        vals = softplus(big)
        assert np.isfinite(vals).all()
        assert vals[0] == pytest.approx(800.0)
        assert vals[1] == 0.0
        assert vals[2] == pytest.approx(np.log(2.0))


class TestForwardPriors:
    def test_single_step_equals_initial_heads(self, rng):
        p = perturbed_params(4)
        ys = rng.standard_normal((1, 2))
        seq = forward_priors(p, ys)
        out0 = heads(p, np.zeros(DIMS.hidden))
        np.testing.assert_array_equal(seq.means[0], out0.mean)
        np.testing.assert_array_equal(seq.diag_covs[0], out0.diag_cov)

    def test_strict_causality_last_input_unused(self, rng):
        p = perturbed_params(5)
        ys = rng.standard_normal((8, 2))
        before = forward_priors(p, ys)
        ys2 = ys.copy()
        ys2[-1] = 1e6
        after = forward_priors(p, ys2)
        np.testing.assert_array_equal(before.means, after.means)
        np.testing.assert_array_equal(before.diag_covs, after.diag_covs)

    def test_prefix_property(self, rng):
        # Truncation changes array shapes, and BLAS picks shape-dependent
        # blocking, so prefix outputs agree to rounding rather than bitwise;
        # value-level causality (previous test) is exact.
        p = perturbed_params(6)
        ys = rng.standard_normal((12, 2))
        full = forward_priors(p, ys)
        for cut in (1, 5, 9):
            part = forward_priors(p, ys[:cut])
            np.testing.assert_allclose(part.means, full.means[:cut], rtol=0, atol=1e-12)
            np.testing.assert_allclose(part.diag_covs, full.diag_covs[:cut], rtol=0, atol=1e-12)

    def test_matches_straight_line_reference(self, rng):
        p = perturbed_params(7, scale=0.3)
        ys = rng.standard_normal((3, 2))
        seq = forward_priors(p, ys)
        ref_means, ref_vars = reference_unrolled(p, ys)
        np.testing.assert_allclose(seq.means, ref_means, atol=1e-12)
        np.testing.assert_allclose(seq.diag_covs, ref_vars, atol=1e-12)


class TestBackward:
    def test_zero_upstream_gives_zero_gradient(self, rng):
        p = perturbed_params(8)
        ys = rng.standard_normal((5, 2))
        grads = backward(p, ys, np.zeros((5, 3)), np.zeros((5, 3)))
        assert grads.to_vector().max() == 0.0
        assert grads.to_vector().min() == 0.0

    def test_mean_output_weight_gradient_hand_derived(self, rng):
        # For the linear mean output layer, d<g, mean>/dW_mo = sum_t g_t h_t^T
        # with h_t the post-ReLU activations of the mean-head hidden layer.
        p = perturbed_params(10, scale=0.2)
        ys = rng.standard_normal((4, 2))
        g_mean = rng.standard_normal((4, 3))
        grads = backward(p, ys, g_mean, np.zeros((4, 3)))
        a = p.arrays
        z = np.zeros(DIMS.hidden)
        expected = np.zeros_like(a["w_mean_out"])
        expected_bias = np.zeros_like(a["b_mean_out"])
        for t in range(4):
            trunk = np.maximum(a["w_trunk"] @ z + a["b_trunk"], 0.0)
            hidden = np.maximum(a["w_mean_hidden"] @ trunk + a["b_mean_hidden"], 0.0)
            expected += np.outer(g_mean[t], hidden)
            expected_bias += g_mean[t]
            z = cell_step(p, z, ys[t])
        np.testing.assert_allclose(grads.arrays["w_mean_out"], expected, atol=1e-12)
        np.testing.assert_allclose(grads.arrays["b_mean_out"], expected_bias, atol=1e-12)

    def test_finite_differences_over_all_groups(self, rng):
        # 60 randomly sampled parameters across a T = 10 unroll, step 1e-6
        p = perturbed_params(11)
        ys = rng.standard_normal((10, 2))
        g_mean = rng.standard_normal((10, 3))
        g_var = rng.standard_normal((10, 3))
        grads = backward(p, ys, g_mean, g_var).to_vector()
        theta = p.to_vector()

        def value(vec):
            seq = forward_priors(p.from_vector(vec), ys)
            return float(np.sum(g_mean * seq.means) + np.sum(g_var * seq.diag_covs))

        idx = rng.choice(theta.size, size=60, replace=False)
        h = 1e-6
        for i in idx:
            plus = theta.copy()
            plus[i] += h
            minus = theta.copy()
            minus[i] -= h
            fd = (value(plus) - value(minus)) / (2 * h)
            denom = max(abs(fd), abs(grads[i]), 1e-6)
            assert abs(fd - grads[i]) / denom < 1e-4

    def test_recurrent_weights_have_gradient_at_t10(self, rng):
        p = perturbed_params(12)
        ys = rng.standard_normal((10, 2))
        grads = backward(p, ys, rng.standard_normal((10, 3)), rng.standard_normal((10, 3)))
        for key in ("w_reset_rec", "w_update_rec", "w_cand_rec"):
            assert np.abs(grads.arrays[key]).max() > 0.0


class TestParams:
    def test_shapes_and_count(self):
        shapes = param_shapes(DIMS)
        assert shapes["w_reset_in"] == (30, 2)
        assert shapes["w_mean_hidden"] == (32, 30)
        p = init_params(DIMS, 0)
        assert p.num_params() == sum(int(np.prod(s)) for s in shapes.values())

    def test_init_bounds_and_zero_biases(self):
        p = init_params(DIMS, 123)
        for key, arr in p.arrays.items():
            if arr.ndim == 1:
                assert np.all(arr == 0.0)
            else:
                bound = 1.0 / np.sqrt(arr.shape[1])
                assert np.abs(arr).max() <= bound

    def test_init_seeded(self):
        a = init_params(DIMS, 5).to_vector()
        b = init_params(DIMS, 5).to_vector()
        c = init_params(DIMS, 6).to_vector()
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_vector_round_trip(self, rng):
        p = perturbed_params(13)
        vec = p.to_vector()
        q = p.from_vector(vec)
        for key in PARAM_KEYS:
            np.testing.assert_array_equal(p.arrays[key], q.arrays[key])

    def test_checkpoint_round_trip(self, tmp_path):
        p = perturbed_params(14)
        path = str(tmp_path / "net.ckpt")
        save_params(p, path, extra_meta={"note": "unit"})
        q, meta = load_params(path)
        assert meta["note"] == "unit"
        np.testing.assert_array_equal(p.to_vector(), q.to_vector())
        assert q.dims == p.dims
