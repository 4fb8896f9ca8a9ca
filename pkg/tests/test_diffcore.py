import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from macu import diffcore as dc


def central_diff(f, x, h=1e-6):
    x = x.copy()
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-12))


# ---------------------------------------------------------------- forward


def test_leaky_relu_negative_input():
    assert dc.leaky_relu(np.array([[-1.0]]))[0, 0] == pytest.approx(-0.01)


def test_zero_mlp_gives_zero_output():
    x = np.random.default_rng(0).standard_normal((4, 5))
    W1, b1, W2 = np.zeros((5, 7)), np.zeros((1, 7)), np.zeros((7, 2))
    out = dc.matmul(dc.leaky_relu(dc.add(dc.matmul(x, W1), b1)), W2)
    assert np.array_equal(out, np.zeros((4, 2)))


def test_sum_of_squares_forward_and_gradient():
    val, tape = dc.record_forward(lambda x: dc.sum(dc.mul(x, x)), [np.array([[1.0, 2.0]])])
    assert val[0, 0] == 5.0
    (g,) = dc.backward(tape)
    np.testing.assert_array_equal(g, [[2.0, 4.0]])


def test_constant_graph_has_zero_gradient():
    _, tape = dc.record_forward(lambda x: np.array([[3.0]]), [np.ones((2, 2))])
    (g,) = dc.backward(tape)
    np.testing.assert_array_equal(g, np.zeros((2, 2)))


def test_shape_error_names_primitive():
    with pytest.raises(dc.ShapeError, match="matmul"):
        dc.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(dc.ShapeError, match="add"):
        dc.add(np.ones((2, 3)), np.ones((3, 2)))


def test_non_finite_intermediate_is_an_error():
    with pytest.raises(dc.NonFiniteError):
        dc.record_forward(lambda x: dc.power(x, -1.0), [np.array([[0.0, 1.0]])])
    with pytest.raises(dc.NonFiniteError):
        dc.as_tensor([np.nan])


def test_tape_cannot_be_consumed_twice():
    _, tape = dc.record_forward(lambda x: dc.frob_sq(x), [np.ones((2, 2))])
    dc.backward(tape)
    with pytest.raises(dc.TapeConsumedError):
        dc.backward(tape)


def test_seed_shape_must_match_output():
    _, tape = dc.record_forward(lambda x: dc.scale(x, 2.0), [np.ones((2, 2))])
    with pytest.raises(dc.ShapeError):
        dc.backward(tape, np.ones((1, 2)))


def test_subgradients_at_zero_take_right_derivative():
    z = np.zeros((1, 1))
    for fn, expected in [(dc.relu, 1.0), (dc.leaky_relu, 1.0), (dc.absolute, 1.0)]:
        _, tape = dc.record_forward(fn, [z])
        (g,) = dc.backward(tape)
        assert g[0, 0] == expected


# ---------------------------------------------------------------- per-primitive gradients

rng = np.random.default_rng(1234)
X = rng.uniform(-2, 2, (3, 4))
Y = rng.uniform(-2, 2, (4, 5))
Z = rng.uniform(-2, 2, (3, 4))
ROW = rng.uniform(-2, 2, (1, 4))
POS = rng.uniform(0.5, 2, (3, 4))

PRIMITIVES = {
    "matmul": (lambda a, b: dc.matmul(a, b), [X, Y]),
    "add": (lambda a, b: dc.add(a, b), [X, Z]),
    "add_broadcast": (lambda a, b: dc.add(a, b), [X, ROW]),
    "mul": (lambda a, b: dc.mul(a, b), [X, Z]),
    "mul_broadcast": (lambda a, b: dc.mul(a, b), [X, ROW]),
    "leaky_relu": (dc.leaky_relu, [X]),
    "relu": (dc.relu, [X]),
    "abs": (dc.absolute, [X]),
    "sum": (dc.sum, [X]),
    "sum_axis0": (lambda a: dc.sum(a, axis=0), [X]),
    "sum_axis1": (lambda a: dc.sum(a, axis=1), [X]),
    "power": (lambda a: dc.power(a, 1.7), [POS]),
    "power_neg": (lambda a: dc.power(a, -0.5), [POS]),
    "frob_sq": (dc.frob_sq, [X]),
    "row_normalize": (dc.row_normalize, [X]),
    "concat": (lambda a, b: dc.concat(a, b), [X, Z]),
    "transpose": (dc.transpose, [X]),
    "reshape": (lambda a: dc.reshape(a, (2, 6)), [X]),
    "row_slice": (lambda a: dc.row_slice(a, 1, 3), [X]),
    "scale": (lambda a: dc.scale(a, -3.0), [X]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_matches_central_differences(name):
    fn, inputs = PRIMITIVES[name]
    out, tape = dc.record_forward(fn, [x.copy() for x in inputs])
    seed = np.random.default_rng(7).standard_normal(out.shape)
    grads = dc.backward(tape, seed)
    for i, x in enumerate(inputs):

        def f(xi, i=i):
            args = [v.copy() for v in inputs]
            args[i] = xi
            return float(np.sum(seed * fn(*args)))

        np.testing.assert_array_less(rel_err(grads[i], central_diff(f, x)), 1e-6)


def test_fan_out_accumulates_exactly():
    x = rng.uniform(-2, 2, (2, 3))

    def g(v):
        return dc.frob_sq(dc.leaky_relu(v))

    _, t1 = dc.record_forward(g, [x])
    (g1,) = dc.backward(t1)
    _, t2 = dc.record_forward(lambda v: dc.add(g(v), g(v)), [x])
    (g2,) = dc.backward(t2)
    np.testing.assert_array_equal(g2, 2.0 * g1)


def random_mlp(rng, widths):
    params = {}
    for i in range(len(widths) - 1):
        params[f"W{i}"] = rng.uniform(-1, 1, (widths[i], widths[i + 1]))
        params[f"b{i}"] = rng.uniform(-1, 1, (1, widths[i + 1]))
    return params


def mlp_loss(p, x):
    h = x
    n = len(p) // 2
    for i in range(n):
        h = dc.add(dc.matmul(h, p[f"W{i}"]), p[f"b{i}"])
        if i < n - 1:
            h = dc.leaky_relu(h)
    return dc.frob_sq(h)


def test_three_layer_mlp_gradient():
    r = np.random.default_rng(3)
    x = r.uniform(-2, 2, (5, 4))
    params = random_mlp(r, [4, 6, 5, 3])
    err = dc.grad_check(lambda p: mlp_loss(p, x), params, h=1e-6)
    assert err < 1e-6


# ---------------------------------------------------------------- grad_check itself


def test_grad_check_quadratic():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    err = dc.grad_check(lambda p: dc.sum(dc.mul(p["x"], dc.matmul(p["x"], A))), {"x": [[1.0, -2.0]]})
    assert err < 1e-8


def test_grad_check_detects_corrupted_gradient():
    x = np.array([[1.0, 2.0, 3.0]])
    bad = {"x": 2.0 * x + np.array([[0.0, 1.0, 0.0]])}
    err = dc.grad_check(lambda p: dc.frob_sq(p["x"]), {"x": x}, grads=bad, h=1e-6)
    assert err > 0.1


# ---------------------------------------------------------------- Adam


def test_adam_zero_gradient_is_identity():
    p = {"w": np.array([[1.0, -2.0]])}
    state = dc.AdamState()
    for _ in range(3):
        p2, state = dc.adam_step(p, {"w": np.zeros((1, 2))}, state, 0.1)
        np.testing.assert_array_equal(p2["w"], p["w"])
    assert state.t == 3


def test_adam_first_step_closed_form():
    # bias correction makes the first step -lr * g / (|g| + eps)
    new, state = dc.adam_step({"w": np.array([[1.0]])}, {"w": np.array([[0.5]])}, dc.AdamState(), 0.1)
    expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8)
    assert new["w"][0, 0] == pytest.approx(expected, rel=1e-12)
    assert new["w"][0, 0] == pytest.approx(0.9, abs=1e-7)


def test_adam_constant_gradient_decreases_parameter():
    p, state = {"w": np.array([[1.0]])}, dc.AdamState()
    vals = [1.0]
    for _ in range(2):
        p, state = dc.adam_step(p, {"w": np.array([[0.3]])}, state, 0.05)
        vals.append(p["w"][0, 0])
    assert vals[0] > vals[1] > vals[2]


def test_adam_inplace_matches_functional():
    r = np.random.default_rng(0)
    p1 = {"a": r.standard_normal((3, 2)), "b": r.standard_normal((1, 4))}
    p2 = {k: v.copy() for k, v in p1.items()}
    s1, s2 = dc.AdamState(), dc.AdamState()
    for _ in range(5):
        g = {k: r.standard_normal(v.shape) for k, v in p1.items()}
        p1, s1 = dc.adam_step(p1, g, s1, 0.01)
        p2, s2 = dc.adam_step(p2, g, s2, 0.01, inplace=True)
    for k in p1:
        np.testing.assert_allclose(p1[k], p2[k], rtol=1e-14, atol=1e-15)


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(dc.NonFiniteError):
        dc.adam_step({"w": np.ones((1, 1))}, {"w": np.array([[np.inf]])}, dc.AdamState(), 0.1)


def test_adam_moments_keep_parameter_shapes():
    p = {"w": np.ones((2, 3))}
    _, s = dc.adam_step(p, {"w": np.ones((2, 3))}, dc.AdamState(), 0.1)
    assert s.m["w"].shape == s.v["w"].shape == (2, 3)


# ---------------------------------------------------------------- properties

finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3), elements=finite), st.integers(0, 20))
def test_adam_zero_grad_identity_without_momentum(w, t):
    # canonical Adam keeps coasting on nonzero momentum, so the identity holds
    # for every step count and second-moment state once the first moment is zero
    v = np.random.default_rng(t).uniform(0, 1, (4, 3))
    state = dc.AdamState({"w": np.zeros((4, 3))}, {"w": v}, t)
    new, _ = dc.adam_step({"w": w}, {"w": np.zeros((4, 3))}, state, 0.1)
    np.testing.assert_array_equal(new["w"], w)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (5, 4), elements=finite))
def test_row_normalize_rows_sum_to_one(x):
    out = dc.row_normalize(x)
    nonzero = np.abs(x).sum(axis=1) > 0
    np.testing.assert_allclose(out[nonzero].sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(out[~nonzero], 0.25)
    assert np.all(out >= 0)
