import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import correlate2d

from fi2vts import autodiff as ad
from fi2vts.errors import ConfigError, ShapeError, UsageError


def grad_of(loss_fn, *tensors):
    for t in tensors:
        t.grad = None
    ad.backward(loss_fn())
    return [t.grad for t in tensors]


# ---------------------------------------------------------------- matmul

def test_matmul_identity_and_hand_example():
    v = ad.as_tensor(np.array([[1.0], [2.0], [3.0]]))
    assert np.array_equal(ad.matmul(np.eye(3), v).data, v.data)
    out = ad.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        ad.matmul(np.zeros((2, 2, 3)), np.zeros((3, 3, 1)))


@pytest.mark.parametrize("a_shape,b_shape", [((4, 3), (3, 5)), ((2, 4, 3), (3, 5)),
                                             ((2, 4, 3), (2, 3, 5)), ((4, 3), (2, 3, 5))])
def test_matmul_gradient_matches_finite_differences(rng, a_shape, b_shape):
    a = ad.parameter(rng.normal(size=a_shape))
    b = ad.parameter(rng.normal(size=b_shape))
    rep = ad.gradient_check(lambda: ad.tensor_sum(ad.matmul(a, b)), {"a": a, "b": b}, tol=1e-6)
    assert rep.passed, rep


def test_matmul_sum_gradient_closed_form(rng):
    a = ad.parameter(rng.normal(size=(3, 4)))
    b = ad.parameter(rng.normal(size=(4, 2)))
    ga, gb = grad_of(lambda: ad.tensor_sum(ad.matmul(a, b)), a, b)
    np.testing.assert_allclose(ga, np.ones((3, 2)) @ b.data.T, rtol=1e-14)
    np.testing.assert_allclose(gb, a.data.T @ np.ones((3, 2)), rtol=1e-14)



def test_affine_matches_matmul_plus_bias(rng):
    x = rng.normal(size=(2, 3, 4)).transpose(0, 2, 1)  # strided input
    w, b = rng.normal(size=(3, 5)), rng.normal(size=5)
    np.testing.assert_allclose(ad.affine(x, w, b).data, x @ w + b, rtol=1e-14)
    np.testing.assert_array_equal(ad.affine(x, w).data, ad.matmul(x, w).data)


def test_affine_gradient(rng):
    x = ad.parameter(rng.normal(size=(2, 3, 4)))
    w = ad.parameter(rng.normal(size=(4, 5)))
    b = ad.parameter(rng.normal(size=5))
    t = rng.normal(size=(2, 3, 5))
    rep = ad.gradient_check(lambda: ad.tensor_sum(ad.mul(ad.affine(x, w, b), t)),
                            {"x": x, "w": w, "b": b}, n_samples=None, tol=1e-6)
    assert rep.passed, rep

# ---------------------------------------------------------------- softmax

def test_softmax_examples():
    np.testing.assert_allclose(ad.softmax(np.zeros(3)).data, [1 / 3] * 3, rtol=1e-15)
    big = ad.softmax(np.array([1000.0, 0.0])).data
    assert np.all(np.isfinite(big))
    assert big[0] == 1.0 and big[1] < 1e-300


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_softmax_rows_sum_to_one(rows, cols, seed):
    x = np.random.default_rng(seed).normal(scale=30, size=(rows, cols))
    y = ad.softmax(x, axis=-1).data
    assert np.all(y > 0) or np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_gradient(rng):
    x = ad.parameter(rng.normal(size=(3, 5)))
    w = rng.normal(size=(3, 5))
    rep = ad.gradient_check(lambda: ad.tensor_sum(ad.mul(ad.softmax(x, axis=-1), w)), {"x": x},
                            tol=1e-6)
    assert rep.passed, rep


# ---------------------------------------------------------------- elementwise

def test_elementwise_examples(rng):
    x = rng.normal(size=(2, 3))
    assert np.array_equal(ad.add(x, np.zeros((2, 3))).data, x)
    assert ad.concat([np.zeros((2, 3)), np.ones((2, 3))], axis=1).shape == (2, 6)
    t = ad.parameter(rng.normal(size=(4, 5)))
    (g,) = grad_of(lambda: ad.mean(t), t)
    np.testing.assert_allclose(g, np.full((4, 5), 1 / 20), rtol=1e-15)


def test_broadcast_add_unbroadcasts_gradient(rng):
    a = ad.parameter(rng.normal(size=(3, 4)))
    b = ad.parameter(rng.normal(size=(4,)))
    ga, gb = grad_of(lambda: ad.tensor_sum(ad.add(a, b)), a, b)
    assert ga.shape == (3, 4) and gb.shape == (4,)
    np.testing.assert_array_equal(gb, np.full(4, 3.0))


def test_mismatched_shapes_rejected():
    with pytest.raises(ShapeError):
        ad.add(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        ad.concat([np.zeros((2, 3)), np.zeros((3, 3))], axis=1)
    with pytest.raises(ShapeError):
        ad.reshape(np.zeros(6), (4,))


OPS = {
    "relu": lambda x: ad.relu(x),
    "gelu": lambda x: ad.gelu(x),
    "square": lambda x: ad.square(x),
    "mul_self": lambda x: ad.mul(x, ad.scale(x, 0.5)),
    "div": lambda x: ad.div(x, ad.add(ad.square(x), 1.0)),
    "sub": lambda x: ad.sub(ad.scale(x, 3.0), x),
    "transpose": lambda x: ad.mul(ad.transpose(x, (1, 0)), np.arange(12.0).reshape(4, 3)),
    "getitem": lambda x: ad.getitem(x, (slice(None), slice(1, 3))),
    "fancy_getitem": lambda x: ad.getitem(x, (np.array([0, 0, 2]),)),
    "take": lambda x: ad.take(x, np.array([[0, 1], [1, 1]]), axis=0),
    "take_along": lambda x: ad.take_along_axis(x, np.array([[3, 0], [1, 1], [2, 2]]), axis=1),
    "pad": lambda x: ad.mul(ad.pad(x, ((1, 0), (0, 2))), np.arange(24.0).reshape(4, 6)),
    "frames": lambda x: ad.mul(ad.frames(x, 2, 1), np.arange(18.0).reshape(3, 3, 2)),
    "mean_axis": lambda x: ad.mean(ad.square(x), axis=0),
    "sum_keep": lambda x: ad.mul(ad.tensor_sum(x, axis=1, keepdims=True), x),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(rng, name):
    x = ad.parameter(rng.normal(size=(3, 4)) + 0.05)  # keep clear of the relu kink
    w = rng.normal(size=OPS[name](ad.as_tensor(x.data)).shape)
    rep = ad.gradient_check(lambda: ad.tensor_sum(ad.mul(OPS[name](x), w)), {"x": x})
    assert rep.passed, rep


# ---------------------------------------------------------------- conv2d

def test_conv2d_examples():
    x = ad.as_tensor(np.random.default_rng(0).normal(size=(1, 5, 6)))
    ident = ad.conv2d(x, np.ones((1, 1, 1, 1)))
    assert np.array_equal(ident.data, x.data)
    out = ad.conv2d(np.full((1, 4, 5), 2.0), np.ones((1, 1, 3, 3))).data[0]
    assert out[1, 1] == 18.0 and out[2, 3] == 18.0
    assert out[0, 0] == 8.0 and out[-1, -1] == 8.0


def test_conv2d_matches_scipy_correlation(rng):
    x = rng.normal(size=(3, 5, 7))
    k = rng.normal(size=(2, 3, 5, 3))
    out = ad.conv2d(x, k).data
    ref = np.stack([sum(correlate2d(x[c], k[o, c], mode="same") for c in range(3)) for o in range(2)])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv2d_kernel_larger_than_image(rng):
    x = rng.normal(size=(2, 3, 2))
    k = rng.normal(size=(2, 2, 11, 11))
    ref = np.stack([sum(correlate2d(x[c], k[o, c], mode="same") for c in range(2)) for o in range(2)])
    np.testing.assert_allclose(ad.conv2d(x, k).data, ref, atol=1e-12)


def test_conv2d_batched(rng):
    x = rng.normal(size=(4, 2, 3, 5))
    k = rng.normal(size=(3, 2, 3, 3))
    out = ad.conv2d(x, k).data
    for b in range(4):
        np.testing.assert_allclose(out[b], ad.conv2d(x[b], k).data, atol=1e-13)


def test_conv2d_even_kernel_rejected():
    with pytest.raises(ConfigError):
        ad.conv2d(np.zeros((1, 4, 4)), np.zeros((1, 1, 2, 3)))


def test_conv2d_gradients(rng):
    x = ad.parameter(rng.normal(size=(2, 4, 5)))
    k = ad.parameter(rng.normal(size=(3, 2, 3, 5)))
    w = rng.normal(size=(3, 4, 5))
    f = lambda: ad.tensor_sum(ad.mul(ad.conv2d(x, k), w))
    assert ad.gradient_check(f, {"k": k}, tol=1e-5).passed
    assert ad.gradient_check(f, {"x": x}, tol=1e-5).passed


# ---------------------------------------------------------------- backward

def test_backward_examples(rng):
    x = ad.parameter(rng.normal(size=(3, 2)))
    (g,) = grad_of(lambda: ad.tensor_sum(x), x)
    assert np.array_equal(g, np.ones((3, 2)))
    (g,) = grad_of(lambda: ad.tensor_sum(ad.mul(x, x)), x)
    np.testing.assert_allclose(g, 2 * x.data, rtol=1e-15)


def test_backward_twice_accumulates(rng):
    x = ad.parameter(rng.normal(size=4))
    loss = ad.tensor_sum(ad.square(x))
    ad.backward(loss)
    first = x.grad.copy()
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * first, rtol=1e-15)


def test_backward_rejects_non_scalar():
    x = ad.parameter(np.ones(3))
    with pytest.raises(UsageError):
        ad.backward(ad.mul(x, 2.0))


def test_gradient_grad_shapes_match_values(rng):
    a = ad.parameter(rng.normal(size=(2, 3)))
    b = ad.parameter(rng.normal(size=(3,)))
    ad.backward(ad.tensor_sum(ad.relu(ad.add(a, b))))
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_backward_is_linear(alpha, beta, seed):
    r = np.random.default_rng(seed)
    x = ad.parameter(r.normal(size=(3, 3)))
    w = r.normal(size=(3, 3))
    f = lambda: ad.tensor_sum(ad.mul(ad.softmax(x), w))
    g = lambda: ad.tensor_sum(ad.square(ad.matmul(x, x)))
    (gf,) = grad_of(f, x)
    (gg,) = grad_of(g, x)
    (gc,) = grad_of(lambda: ad.add(ad.scale(f(), alpha), ad.scale(g(), beta)), x)
    np.testing.assert_allclose(gc, alpha * gf + beta * gg, rtol=1e-10, atol=1e-10)


def test_no_grad_records_nothing():
    x = ad.parameter(np.ones(3))
    with ad.no_grad():
        y = ad.mul(x, 2.0)
    assert not y.requires_grad and y.is_leaf
    assert ad.is_grad_enabled()


def test_gradient_check_of_sum_is_exact(rng):
    x = ad.parameter(rng.normal(size=(5, 4)))
    rep = ad.gradient_check(lambda: ad.tensor_sum(x), {"x": x})
    assert rep.max_rel_error < 1e-9 and rep.n_checked == 20


def test_gradient_check_catches_a_wrong_gradient(rng):
    x = ad.parameter(rng.normal(size=6))

    def bad_square(a):
        return ad._result(a.data**2, (a,), lambda g: (g * a.data,))  # missing factor 2

    rep = ad.gradient_check(lambda: ad.tensor_sum(bad_square(x)), {"x": x})
    assert not rep.passed


# ---------------------------------------------------------------- rng and tracking

def test_rng_determinism_and_range():
    a = ad.make_rng(2**64 - 1).normal(size=5)
    b = ad.make_rng(2**64 - 1).normal(size=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(ad.make_rng(1).normal(size=5), ad.make_rng(2).normal(size=5))
    with pytest.raises(ConfigError):
        ad.make_rng(-1)
    with pytest.raises(ConfigError):
        ad.make_rng(2**64)


def test_rng_stream_is_frozen():
    # PCG64 seeded through SeedSequence(7): first draws, frozen
    draws = ad.make_rng(7).integers(0, 2**32, size=3)
    expected = np.random.Generator(np.random.PCG64(np.random.SeedSequence(7))).integers(0, 2**32, size=3)
    assert np.array_equal(draws, expected)


def test_track_allocations_counts_bytes():
    with ad.track_allocations() as stats:
        a = ad.as_tensor(np.zeros(100))
        b = ad.add(a, 1.0)
    # the scalar 1.0 becomes an 8-byte tensor too
    assert stats.total == 1608 and stats.count == 3
    assert stats.peak >= 1600
    del a, b


def test_tensor_values_stay_finite(rng):
    x = ad.as_tensor(rng.normal(scale=50, size=(4, 4)))
    y = ad.softmax(ad.gelu(ad.matmul(x, x)))
    assert np.all(np.isfinite(y.data))


def test_frames_gradient_many_frames(rng):
    # more frames than window taps takes the other backward branch
    x = ad.parameter(rng.normal(size=(2, 20)))
    w = rng.normal(size=(2, 9, 4))
    rep = ad.gradient_check(lambda: ad.tensor_sum(ad.mul(ad.frames(x, 4, 2), w)), {"x": x})
    assert rep.passed, rep
