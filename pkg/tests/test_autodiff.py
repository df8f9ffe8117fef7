import numpy as np
import pytest

from mvocc import autodiff as ad
from mvocc.autodiff import Graph, backward, forward_eval
from mvocc.errors import MissingInputError, ShapeError


def test_square_value_and_derivative():
    graph = Graph()
    x = graph.input("x", np.array(3.0))
    y = ad.mul(x, x)
    assert forward_eval(graph, y) == pytest.approx(9.0)
    grads = backward(graph, y)
    assert grads[x.id] == pytest.approx(6.0)


def test_sum_gradient_is_ones():
    graph = Graph()
    x = graph.input("x", np.ones(3))
    grads = backward(graph, ad.reduce_sum(x))
    np.testing.assert_array_equal(grads[x.id], np.ones(3))


def test_mse_of_equal_vectors_is_zero():
    graph = Graph()
    a = graph.input("a", np.array([1.0, 2.0]))
    b = graph.constant(np.array([1.0, 2.0]))
    assert forward_eval(graph, ad.reduce_mean(ad.mul(a - b, a - b))) == 0.0


def test_deferred_input_binding():
    graph = Graph()
    x = graph.input("x")
    y = ad.scale(ad.tanh(x), 2.0)
    assert y.value is None
    with pytest.raises(MissingInputError):
        forward_eval(graph, y)
    graph.bind("x", np.array([0.5]))
    np.testing.assert_allclose(forward_eval(graph, y), 2.0 * np.tanh([0.5]))
    graph.bind("x", np.array([1.0]))
    np.testing.assert_allclose(forward_eval(graph, y), 2.0 * np.tanh([1.0]))


def test_two_layer_mlp_matches_straight_line():
    rng = np.random.default_rng(0)
    x, w1, b1, w2 = rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=(4, 2))
    graph = Graph()
    h = ad.tanh(ad.add(ad.matmul(graph.input("x", x), graph.parameter("w1", w1)), graph.parameter("b1", b1)))
    out = ad.matmul(h, graph.parameter("w2", w2))
    expected = np.tanh(x @ w1 + b1) @ w2
    assert np.max(np.abs(forward_eval(graph, out) - expected)) < 1e-12


def test_non_scalar_loss_rejected():
    graph = Graph()
    x = graph.input("x", np.ones((2, 2)))
    with pytest.raises(ShapeError):
        backward(graph, ad.scale(x, 2.0))


def test_unused_leaf_gets_zero_gradient():
    graph = Graph()
    x = graph.input("x", np.array([1.0, 2.0]))
    unused = graph.parameter("unused", np.ones((2, 3)))
    grads = backward(graph, ad.sum_of_squares(x))
    np.testing.assert_array_equal(grads[unused.id], np.zeros((2, 3)))


def test_backward_is_repeatable():
    graph = Graph()
    x = graph.parameter("x", np.array([1.0, -2.0]))
    loss = ad.sum_of_squares(ad.tanh(x))
    first = backward(graph, loss)[x.id]
    np.testing.assert_array_equal(first, backward(graph, loss)[x.id])


def test_parameter_lookup_by_name_is_shared():
    graph = Graph()
    a = graph.parameter("w", np.ones(2))
    b = graph.parameter("w", np.zeros(2))
    assert a is b
    loss = ad.reduce_sum(ad.add(a, b))
    assert graph.named_gradients(backward(graph, loss))["w"].tolist() == [2.0, 2.0]


def test_operator_overloads_record_nodes():
    graph = Graph()
    x = graph.parameter("x", np.array([[1.0, 2.0]]))
    y = (x * 3.0 - 1.0) @ np.ones((2, 1))
    assert forward_eval(graph, y)[0, 0] == pytest.approx(7.0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize(
    "build",
    [
        lambda g, x: ad.sum_of_squares(ad.tanh(ad.matmul(x, g.constant(np.arange(12.0).reshape(4, 3) / 10)))),
        lambda g, x: ad.reduce_sum(ad.sigmoid(x)),
        lambda g, x: ad.reduce_sum(ad.mul(ad.normalize_rows(x), g.constant(np.linspace(-1, 1, 4)))),
        lambda g, x: ad.reduce_sum(ad.reduce_sum(ad.mul(x, x), axis=1, keepdims=True)),
        lambda g, x: ad.sum_of_squares(ad.concat([x, ad.transpose(ad.transpose(x))], axis=1)),
        lambda g, x: ad.reduce_sum(ad.absolute(ad.sub(x, g.constant(np.full((3, 4), 5.0))))),
        lambda g, x: ad.reduce_mean(ad.relu(ad.add(x, g.constant(np.full(4, 3.0))))),
    ],
    ids=["matmul-tanh", "sigmoid", "normalize-rows", "axis-sum", "concat-transpose", "abs", "relu-mean"],
)
def test_primitive_gradients_match_finite_differences(build, seed, fd_gradient, rel_error):
    value = np.random.default_rng(seed).normal(size=(3, 4))

    def loss_at(candidate):
        graph = Graph()
        return float(build(graph, graph.parameter("x", candidate)).value)

    graph = Graph()
    x = graph.parameter("x", value)
    analytic = backward(graph, build(graph, x))[x.id]
    assert rel_error(analytic, fd_gradient(loss_at, value)) < 1e-4


def test_max_views_routes_gradient_to_first_maximum():
    graph = Graph()
    a = graph.parameter("a", np.array([[1.0, 5.0, 2.0]]))
    b = graph.parameter("b", np.array([[3.0, 2.0, 2.0]]))
    out = ad.max_views([a, b])
    np.testing.assert_array_equal(out.value, [[3.0, 5.0, 2.0]])
    grads = graph.named_gradients(backward(graph, ad.reduce_sum(out)))
    np.testing.assert_array_equal(grads["a"], [[0.0, 1.0, 1.0]])
    np.testing.assert_array_equal(grads["b"], [[1.0, 0.0, 0.0]])


def test_custom_gradient_node():
    graph = Graph()
    x = graph.parameter("x", np.array([2.0]))
    # forward doubles, backward pretends the derivative is 10
    node = graph.apply("custom", [x], lambda v: 2.0 * v[0], lambda g, v, out: (10.0 * g,))
    assert backward(graph, ad.reduce_sum(node))[x.id][0] == pytest.approx(10.0)


def test_nodes_from_other_graphs_rejected():
    first, second = Graph(), Graph()
    with pytest.raises(ValueError):
        ad.add(first.constant(1.0), second.constant(1.0))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_of_sum_is_sum_of_gradients(seed):
    rng = np.random.default_rng(seed)
    graph = Graph()
    w = graph.parameter("w", rng.normal(size=(3, 2)))
    h = ad.matmul(graph.constant(rng.normal(size=(4, 3))), w)
    first = ad.sum_of_squares(ad.tanh(h))
    second = ad.reduce_sum(ad.mul(ad.sigmoid(h), graph.constant(rng.normal(size=(4, 2)))))
    combined = backward(graph, ad.add(first, second))[w.id]
    separate = backward(graph, first)[w.id] + backward(graph, second)[w.id]
    np.testing.assert_allclose(combined, separate, rtol=0, atol=1e-10)
