"""Tensor engine: arithmetic, broadcasting, backward, gradient checker."""

import numpy as np
import pytest

from dsfnet.tensor import (Tensor, backward, concat, elementwise, finite_diff_check,
                           matmul, maximum, no_grad, reduce)


class TestElementwise:
    def test_relu_definition(self):
        out = elementwise("relu", Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_sigmoid_symmetry_point(self):
        assert elementwise("sigmoid", Tensor(0.0)).item() == 0.5

    def test_broadcast_add(self):
        out = elementwise("add", Tensor([1.0, 2.0]), Tensor([10.0]))
        assert np.array_equal(out.data, [11.0, 12.0])

    def test_binary_max(self):
        out = maximum(Tensor([1.0, 5.0]), Tensor([3.0, 2.0]))
        assert np.array_equal(out.data, [3.0, 5.0])

    def test_broadcast_commutes_bitwise(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal((3, 1, 4)))
        b = Tensor(rng.standard_normal((1, 5, 4)))
        assert np.array_equal((a + b).data, (b + a).data)
        assert np.array_equal((a * b).data, (b * a).data)

    def test_non_broadcastable_shapes_raise(self):
        with pytest.raises(ValueError):
            Tensor([1.0, 2.0]) + Tensor([1.0, 2.0, 3.0])

    def test_log_of_nonpositive_raises(self):
        with pytest.raises(ValueError):
            elementwise("ln", Tensor([1.0, 0.0]))

    def test_unknown_kind_raises(self):
        with pytest.raises(ValueError):
            elementwise("nope", Tensor([1.0]))


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor(np.eye(2)), Tensor([[3.0], [4.0]]))
        assert np.array_equal(out.data, [[3.0], [4.0]])

    def test_hand_dot_product(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert np.array_equal(out.data, [[11.0]])

    def test_inner_dim_mismatch(self):
        with pytest.raises(ValueError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_grad_of_sum_matches_ones_bt_and_fd(self):
        rng = np.random.default_rng(7)
        a = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((3, 3)))
        (a @ b).sum().backward()
        assert np.allclose(a.grad, np.ones((3, 3)) @ b.data.T)
        err = finite_diff_check(lambda t: (t @ b).sum(), a, 1e-5)
        assert err < 1e-6


class TestReduce:
    def test_sum(self):
        assert reduce("sum", Tensor([1.0, 2.0, 3.0])).item() == 6.0

    def test_mean_of_constant_map(self):
        assert reduce("mean", Tensor(np.full((4, 5), 2.5)), axes=(0, 1)).item() == 2.5

    def test_max(self):
        assert reduce("max", Tensor([3.0, -1.0, 7.0])).item() == 7.0

    def test_axis_out_of_range(self):
        with pytest.raises(ValueError):
            reduce("sum", Tensor([1.0]), axes=(3,))

    def test_keepdims_shapes(self):
        out = reduce("sum", Tensor(np.ones((2, 3, 4))), axes=(1,), keepdims=True)
        assert out.shape == (2, 1, 4)


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        (x * x).sum().backward()
        assert np.array_equal(x.grad, [2.0, 4.0])

    def test_sigmoid_slope_at_zero(self):
        w = Tensor(0.0, requires_grad=True)
        w.sigmoid().backward()
        assert w.grad == pytest.approx(0.25)

    def test_sum_gradient_is_ones_any_shape(self):
        for shape in [(3,), (2, 4), (2, 3, 2)]:
            x = Tensor(np.random.default_rng(0).random(shape), requires_grad=True)
            x.sum().backward()
            assert np.array_equal(x.grad, np.ones(shape))

    def test_unreached_leaf_keeps_zero_grad(self):
        x = Tensor([1.0], requires_grad=True)
        y = Tensor([2.0], requires_grad=True)
        (x * 3.0).sum().backward()
        assert np.array_equal(y.grad, [0.0])

    def test_gradient_map_contains_reachable_leaves(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        grads = backward((x * x).sum())
        assert np.array_equal(grads[id(x)], [2.0, 4.0])

    def test_non_scalar_output_raises(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError):
            (x * x).backward()

    def test_output_not_on_tape_raises(self):
        with pytest.raises(ValueError):
            Tensor([1.0]).backward()

    def test_random_composite_graph_matches_fd(self):
        # five-op composite: mul, add, sigmoid, exp-of-scaled, mean
        def f(t):
            y = (t * t + 3.0).sigmoid()
            z = (y * 0.25).exp()
            return z.mean()
        for seed in range(5):
            x = Tensor(np.random.default_rng(seed).standard_normal((2, 3)))
            assert finite_diff_check(f, x, 1e-5) < 1e-6

    def test_concat_backward_splits(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0], requires_grad=True)
        (concat([a, b]) * Tensor([1.0, 2.0, 3.0])).sum().backward()
        assert np.array_equal(a.grad, [1.0, 2.0])
        assert np.array_equal(b.grad, [3.0])


class TestFiniteDiffCheck:
    def test_sum_is_near_exact(self):
        # analytic gradient is exactly ones; the residual is the central
        # difference's cancellation floor (~macheps/epsilon)
        x = Tensor(np.random.default_rng(1).random(6))
        assert finite_diff_check(lambda t: t.sum(), x, 1e-5) < 1e-10

    def test_relu_sum_away_from_kinks(self):
        rng = np.random.default_rng(2)
        x = Tensor(np.sign(rng.standard_normal(8)) * (0.5 + rng.random(8)))
        assert finite_diff_check(lambda t: t.relu().sum(), x, 1e-5) < 1e-8

    def test_primitive_sweep_below_1e6(self):
        # every differentiable primitive, ten seeds each
        cases = {
            "add": lambda t, c: (t + c).sum(),
            "sub": lambda t, c: (t - c).sum(),
            "mul": lambda t, c: (t * c).mean(),
            "div": lambda t, c: (t / (c * c + 1.0)).sum(),
            "max": lambda t, c: maximum(t, c).sum(),
            "exp": lambda t, c: t.exp().sum(),
            "ln": lambda t, c: (t * t + 1.0).log().sum(),
            "sigmoid": lambda t, c: t.sigmoid().sum(),
            "relu": lambda t, c: t.relu().sum(),
            "abs": lambda t, c: t.abs().sum(),
            "sqrt": lambda t, c: (t * t + 1.0).sqrt().sum(),
            "mean": lambda t, c: t.mean(),
        }
        for name, f in cases.items():
            worst = 0.0
            for seed in range(10):
                rng = np.random.default_rng((name == "relu", seed))
                base = rng.standard_normal((3, 4))
                base = np.sign(base) * (np.abs(base) + 0.2)  # keep off kinks and ties
                c = Tensor(rng.standard_normal((3, 4)) * 0.7)
                worst = max(worst, finite_diff_check(lambda t: f(t, c), Tensor(base), 1e-5))
            assert worst < 1e-6, f"{name}: {worst}"

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            finite_diff_check(lambda t: t.sum(), Tensor([1.0]), 0.0)

    def test_non_scalar_f_raises(self):
        with pytest.raises(ValueError):
            finite_diff_check(lambda t: t * 2.0, Tensor([1.0, 2.0]), 1e-5)


class TestDeterminism:
    def test_replay_is_bit_identical(self):
        def build(seed):
            rng = np.random.default_rng(seed)
            x = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
            y = ((x @ x).sigmoid() * x.exp()).mean()
            y.backward()
            return y.data.copy(), x.grad.copy()
        v1, g1 = build(13)
        v2, g2 = build(13)
        assert np.array_equal(v1, v2) and np.array_equal(g1, g2)

    def test_no_grad_blocks_recording(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad
