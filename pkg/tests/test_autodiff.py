import numpy as np
import pytest

from debias import autodiff as ad
from debias.errors import ConfigError, LabelError, NonFiniteError, ShapeError

TOLERANCE = 1e-3


def param(rng, *shape, name=None):
    return ad.Parameter(rng.normal(size=shape), name)


class TestTensor:
    def test_read_only(self):
        t = ad.tensor([[1.0, 2.0], [3.0, 4.0]])
        assert t.dtype == np.float64
        with pytest.raises(ValueError):
            t[0, 0] = 5.0

    def test_reshape(self):
        assert ad.tensor(range(6), shape=(2, 3)).shape == (2, 3)

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            ad.tensor(range(6), shape=(4, 2))
        with pytest.raises(ShapeError):
            ad.tensor(np.zeros((0, 3)))

    def test_non_finite(self):
        with pytest.raises(NonFiniteError):
            ad.tensor([1.0, np.nan])

    def test_parameter_assign_shape(self, rng):
        p = param(rng, 2, 3)
        with pytest.raises(ShapeError):
            p.assign(np.zeros((3, 2)))
        p.assign(np.ones((2, 3)))
        assert np.all(p.value == 1.0)
        assert not p.value.flags.writeable


class TestGradients:
    def test_matmul_and_add(self, rng):
        w, b = param(rng, 4, 3), param(rng, 3)
        x = ad.constant(rng.normal(size=(5, 4)))
        assert ad.gradient_check(lambda: ad.mean(ad.tanh(ad.add(ad.matmul(x, w), b))), [w, b]) < TOLERANCE

    @pytest.mark.parametrize("seed", range(50))
    def test_three_layer_mlp(self, seed):
        rng = np.random.default_rng(seed)
        x = ad.constant(rng.uniform(-2, 2, size=(4, 5)))
        layers = [(ad.Parameter(rng.uniform(-2, 2, size=(i, o))), ad.Parameter(rng.uniform(-2, 2, size=o))) for i, o in ((5, 4), (4, 4), (4, 3))]

        def loss():
            h = x
            for w, b in layers:
                h = ad.tanh(ad.add(ad.matmul(h, w), b))
            return ad.mean(h)

        assert ad.gradient_check(loss, [p for layer in layers for p in layer]) < 1e-4

    def test_vector_matmul(self, rng):
        v, w = param(rng, 4), param(rng, 4, 3)
        assert ad.gradient_check(lambda: ad.reduce_sum(ad.tanh(ad.matmul(v, w))), [v, w]) < TOLERANCE

    def test_sub_mul_scale_concat(self, rng):
        a, b = param(rng, 3, 4), param(rng, 3, 4)

        def loss():
            mixed = ad.concat([a, b, ad.sub(a, b), ad.elementwise_mul(a, b)], axis=-1)
            return ad.scale(ad.mean(ad.tanh(mixed)), 2.5)

        assert ad.gradient_check(loss, [a, b]) < TOLERANCE

    def test_reduce_sum_axis(self, rng):
        a = param(rng, 3, 4)
        assert ad.gradient_check(lambda: ad.mean(ad.tanh(ad.reduce_sum(a, axis=1))), [a]) < TOLERANCE

    def test_segment_mean_and_embedding(self, rng):
        table = param(rng, 10, 4)
        ids = np.array([1, 3, 3, 7, 2, 9])

        def loss():
            pooled = ad.segment_mean(ad.embedding(table, ids), [2, 3, 1])
            return ad.mean(ad.tanh(pooled))

        assert ad.gradient_check(loss, [table]) < TOLERANCE

    def test_max_over_time(self, rng):
        steps = [param(rng, 2, 3) for _ in range(4)]
        mask = np.array([[True, True, False, False], [True, True, True, True]])
        assert ad.gradient_check(lambda: ad.reduce_sum(ad.max_over_time(steps, mask)), steps) < TOLERANCE

    def test_softmax_cross_entropy(self, rng):
        logits = param(rng, 6, 3)
        labels = np.array([0, 1, 2, 2, 1, 0])
        assert ad.gradient_check(lambda: ad.mean(ad.softmax_cross_entropy(logits, labels)), [logits]) < TOLERANCE

    def test_cross_entropy_value(self):
        loss = ad.softmax_cross_entropy(ad.constant([0.0, 0.0, 0.0]), 1)
        assert float(loss.value) == pytest.approx(np.log(3.0))

    def test_cross_entropy_labels(self):
        logits = ad.constant(np.zeros((2, 3)))
        with pytest.raises(LabelError):
            ad.softmax_cross_entropy(logits, np.array([0, 3]))
        with pytest.raises(LabelError):
            ad.softmax_cross_entropy(logits, np.array([0.0, 1.0]))
        with pytest.raises(ShapeError):
            ad.softmax_cross_entropy(logits, np.array([0, 1, 2]))


class TestReversalAndDetach:
    def test_grad_reverse_forward_is_identity(self, rng):
        x = param(rng, 3, 2)
        reversed_x = ad.grad_reverse(x, ad.ReversalCoefficient(1.0))
        assert reversed_x.value is x.value

    @pytest.mark.parametrize("scale", [0.0, 0.5, 1.0, 3.0])
    def test_grad_reverse_backward(self, rng, scale):
        x = param(rng, 3, 2)
        c = rng.normal(size=(3, 2))
        ad.backward(ad.reduce_sum(ad.elementwise_mul(ad.grad_reverse(x, ad.ReversalCoefficient(scale)), ad.constant(c))))
        np.testing.assert_allclose(x.grad, -scale * c)

    def test_negative_scale_rejected(self):
        with pytest.raises(ConfigError):
            ad.ReversalCoefficient(-1.0)

    def test_detach_blocks_gradient(self, rng):
        x = param(rng, 3)
        y = param(rng, 3)
        ad.backward(ad.reduce_sum(ad.add(ad.detach(x), y)))
        assert np.all(x.grad == 0.0)
        assert np.all(y.grad == 1.0)


class TestBackward:
    def test_accumulates_until_zeroed(self, rng):
        w = param(rng, 3)
        ad.backward(ad.reduce_sum(w))
        ad.backward(ad.reduce_sum(w))
        np.testing.assert_allclose(w.grad, 2.0)
        ad.zero_grad([w])
        assert np.all(w.grad == 0.0)

    def test_shared_subgraph(self, rng):
        w = param(rng, 3)
        h = ad.tanh(w)
        ad.backward(ad.reduce_sum(ad.add(h, h)))
        np.testing.assert_allclose(w.grad, 2.0 * (1.0 - np.tanh(w.value) ** 2))

    def test_non_scalar_loss(self, rng):
        with pytest.raises(ShapeError):
            ad.backward(param(rng, 3))

    def test_unreachable_parameter_reported_as_zero(self, rng):
        used, unused = param(rng, 2, name="used"), param(rng, 2, name="unused")
        grads = ad.backward(ad.reduce_sum(used), [used, unused])
        assert np.all(grads["unused"] == 0.0)

    def test_shape_errors(self, rng):
        with pytest.raises(ShapeError):
            ad.matmul(param(rng, 2, 3), param(rng, 2, 3))
        with pytest.raises(ShapeError):
            ad.add(param(rng, 2, 3), param(rng, 2))
        with pytest.raises(ShapeError):
            ad.elementwise_mul(param(rng, 2, 3), param(rng, 3, 2))


@pytest.mark.parametrize("seed", range(20))
class TestGradientsAcrossSeeds:
    def test_segment_mean(self, seed):
        rng = np.random.default_rng(seed)
        lengths = rng.integers(1, 5, size=4)
        rows = param(rng, int(lengths.sum()), 3)
        weights = ad.constant(rng.normal(size=(4, 3)))
        loss = lambda: ad.mean(ad.tanh(ad.elementwise_mul(ad.segment_mean(rows, lengths), weights)))  # noqa: E731
        assert ad.gradient_check(loss, [rows]) < 1e-4

    def test_max_over_time(self, seed):
        rng = np.random.default_rng(seed)
        steps = [param(rng, 3, 4) for _ in range(5)]
        mask = np.ones((3, 5), dtype=bool)
        mask[0, 3:] = False
        mask[2, 1:] = False
        weights = ad.constant(rng.normal(size=(3, 4)))
        loss = lambda: ad.reduce_sum(ad.elementwise_mul(ad.max_over_time(steps, mask), weights))  # noqa: E731
        assert ad.gradient_check(loss, steps) < 1e-4

    def test_embedding(self, seed):
        rng = np.random.default_rng(seed)
        table = param(rng, 7, 3)
        ids = rng.integers(0, 7, size=9)
        assert ad.gradient_check(lambda: ad.mean(ad.tanh(ad.embedding(table, ids))), [table]) < 1e-4

    def test_concat(self, seed):
        rng = np.random.default_rng(seed)
        parts = [param(rng, 2, width) for width in (1, 3, 2)]
        weights = ad.constant(rng.normal(size=(2, 6)))
        loss = lambda: ad.mean(ad.tanh(ad.elementwise_mul(ad.concat(parts), weights)))  # noqa: E731
        assert ad.gradient_check(loss, parts) < 1e-4

    def test_row_slice(self, seed):
        rng = np.random.default_rng(seed)
        a = param(rng, 6, 3)
        start = int(rng.integers(0, 5))
        stop = int(rng.integers(start + 1, 7))
        assert ad.gradient_check(lambda: ad.mean(ad.tanh(ad.row_slice(a, start, stop))), [a]) < 1e-4

    def test_softmax_cross_entropy(self, seed):
        rng = np.random.default_rng(seed)
        logits = ad.Parameter(rng.normal(scale=2.0, size=(5, 3)))
        labels = rng.integers(0, 3, size=5)
        assert ad.gradient_check(lambda: ad.mean(ad.softmax_cross_entropy(logits, labels)), [logits]) < 1e-4


class TestMaxOverTimeTies:
    def test_lowest_index_takes_the_gradient(self):
        steps = [ad.Parameter(np.array([[1.0, 2.0]])) for _ in range(3)]
        ad.backward(ad.reduce_sum(ad.max_over_time(steps)))
        np.testing.assert_array_equal(steps[0].grad, [[1.0, 1.0]])
        np.testing.assert_array_equal(steps[1].grad, [[0.0, 0.0]])
        np.testing.assert_array_equal(steps[2].grad, [[0.0, 0.0]])

    def test_padding_is_never_the_winner(self):
        steps = [ad.Parameter(np.array([[5.0]])), ad.Parameter(np.array([[1.0]])), ad.Parameter(np.array([[1.0]]))]
        mask = np.array([[False, True, True]])
        out = ad.max_over_time(steps, mask)
        ad.backward(ad.reduce_sum(out))
        assert float(out.value[0, 0]) == 1.0
        assert [float(s.grad[0, 0]) for s in steps] == [0.0, 1.0, 0.0]
