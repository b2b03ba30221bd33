import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fi2vts import autodiff as ad, data, network as nw, training as tr
from fi2vts.errors import DataError, ShapeError
from conftest import small_config


def scalar_adam(grad_fn, theta, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-python Adam recurrence used as the oracle."""
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
    return theta


def run_adam(loss_fn, theta0, lr, steps):
    p = {"theta": ad.parameter(np.array([theta0]))}
    opt = tr.Adam(p, lr=lr)
    for _ in range(steps):
        ad.backward(loss_fn(p["theta"]))
        opt.step()
    return p["theta"].data[0], opt


# ---------------------------------------------------------------- loss and metrics

def test_l2_loss_examples():
    assert tr.l2_loss(ad.as_tensor([1.0, 2.0]), [1.0, 2.0]).item() == 0.0
    assert tr.l2_loss(ad.as_tensor(np.ones(4)), np.zeros(4)).item() == 1.0
    assert tr.l2_loss(ad.as_tensor([1.0, -3.0]), [0.0, 0.0]).item() == 5.0
    with pytest.raises(ShapeError):
        tr.l2_loss(ad.as_tensor(np.zeros(3)), np.zeros(2))


def test_metrics_examples():
    assert tr.metrics(np.zeros((1, 2)), np.zeros((1, 2))) == (0.0, 0.0)
    assert tr.metrics(np.array([[1.0, -3.0]]), np.zeros((1, 2))) == (5.0, 2.0)
    with pytest.raises(ShapeError):
        tr.metrics(np.zeros(2), np.zeros(3))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_metrics_symmetric_and_jensen(d, t, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(scale=3, size=(2, d, t))
    mse, mae = tr.metrics(a, b)
    assert (mse, mae) == tr.metrics(b, a)
    assert mae <= np.sqrt(mse) + 1e-12 and mse >= 0 and mae >= 0


# ---------------------------------------------------------------- adam

def test_adam_zero_gradient_keeps_parameters():
    p = {"w": ad.parameter(np.array([1.5, -2.0]))}
    opt = tr.Adam(p, lr=0.1)
    p["w"].grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p["w"].data, [1.5, -2.0]) and opt.t == 1


def test_adam_first_step_is_sign_of_gradient():
    p = {"w": ad.parameter(np.array([0.0, 0.0, 0.0]))}
    opt = tr.Adam(p, lr=0.01, eps=0.0)
    p["w"].grad = np.array([3.0, -0.002, 40.0])
    opt.step()
    np.testing.assert_allclose(p["w"].data, [-0.01, 0.01, -0.01], rtol=1e-12)
    assert p["w"].grad is None


def test_adam_matches_scalar_oracle_on_square():
    got, _ = run_adam(lambda th: ad.tensor_sum(ad.square(th)), 1.0, 0.1, 100)
    expect = scalar_adam(lambda th: 2 * th, 1.0, 0.1, 100)
    assert got == pytest.approx(expect, rel=1e-12, abs=1e-15)
    assert abs(got) < 0.1


def test_adam_converges_on_convex_quadratic():
    # f(theta) = 3 (theta - 2)^2 + 1, optimum value 1
    f = lambda th: ad.add(ad.scale(ad.tensor_sum(ad.square(ad.sub(th, 2.0))), 3.0), 1.0)
    theta, _ = run_adam(f, -1.0, 1e-2, 1000)
    assert 3 * (theta - 2) ** 2 < 1e-3


# ---------------------------------------------------------------- training

@pytest.fixture(scope="module")
def sine_splits():
    spec = data.SynthSpec(components=[[(12, 1.0, 0.0)]])
    series = data.generate(spec, 600, seed=0)
    return data.window_pairs(series, 48, 8)


def test_lr_zero_leaves_parameters(sine_splits):
    cfg = small_config(D=1, lr=0.0, epochs=2)
    p0 = nw.init_params(cfg)
    before = {k: t.data.copy() for k, t in p0.items()}
    params, history = tr.train(cfg, sine_splits, params=p0)
    assert all(np.array_equal(params[k].data, before[k]) for k in before)
    assert len(history) == 2


def test_training_reduces_loss_on_sinusoid(sine_splits):
    cfg = small_config(D=1, epochs=20, patience=20, lr=3e-3)
    _, history = tr.train(cfg, sine_splits)
    assert history[-1]["train_loss"] < 0.1 * history[0]["train_loss"]


def test_training_is_deterministic(sine_splits):
    cfg = small_config(D=1, epochs=2)
    pa, ha = tr.train(cfg, sine_splits)
    pb, hb = tr.train(cfg, sine_splits)
    assert ha == hb
    assert all(np.array_equal(pa[k].data, pb[k].data) for k in pa)


def test_best_validation_checkpoint_is_returned(sine_splits):
    cfg = small_config(D=1, epochs=6, patience=2, lr=3e-2)
    params, history = tr.train(cfg, sine_splits)
    final = tr.evaluate(params, cfg, sine_splits.val).mse
    assert final == pytest.approx(min(h["val_mse"] for h in history), rel=1e-12)
    assert all(final <= h["val_mse"] + 1e-15 for h in history)


def test_early_stopping_patience(sine_splits, monkeypatch):
    cfg = small_config(D=1, epochs=10, patience=3)
    vals = iter([1.0, 0.5, 0.6, 0.7, 0.8, 0.1, 0.1])
    real = tr.evaluate
    monkeypatch.setattr(tr, "evaluate", lambda *a, **k: tr.EvalReport(next(vals), 0.0, 8, 1))
    _, history = tr.train(cfg, sine_splits)
    monkeypatch.setattr(tr, "evaluate", real)
    assert [h["epoch"] for h in history] == [1, 2, 3, 4, 5]


def test_empty_split_errors(sine_splits):
    empty = data.WindowSet(np.zeros((0, 1, 48)), np.zeros((0, 1, 8)), np.zeros(0, int), (0, 0))
    bad = data.Splits(sine_splits.train, empty, sine_splits.test, 48, 8)
    with pytest.raises(DataError, match="val"):
        tr.train(small_config(D=1), bad)
    with pytest.raises(DataError):
        tr.evaluate(nw.init_params(small_config(D=1)), small_config(D=1), empty)


def test_evaluate_is_pure_and_repeatable(sine_splits):
    cfg = small_config(D=1)
    p = nw.init_params(cfg)
    before = {k: t.data.copy() for k, t in p.items()}
    a = tr.evaluate(p, cfg, sine_splits.test, ["s"])
    b = tr.evaluate(p, cfg, sine_splits.test, ["s"])
    assert (a.mse, a.mae, a.per_variable) == (b.mse, b.mae, b.per_variable)
    assert all(np.array_equal(p[k].data, before[k]) for k in p)
    assert a.per_variable[0]["variable"] == "s" and a.horizon == 8
    assert a.n_windows == len(sine_splits.test)


def test_eval_report_dict_fields():
    d = tr.EvalReport(1.0, 0.5, 48, 10, [], 0.25).to_dict("test", seed=3)
    assert {"split", "horizon", "mse", "mae", "per_variable", "runtime_s", "seed"} <= set(d)


# ---------------------------------------------------------------- baselines

def test_persistence_examples():
    const = np.full((2, 10), 3.0)
    np.testing.assert_array_equal(tr.baseline_persistence(const, 4), np.full((2, 4), 3.0))
    ramp = np.arange(10.0)[None]
    future = np.arange(10.0, 15.0)[None]
    err = future - tr.baseline_persistence(ramp, 5)
    np.testing.assert_array_equal(err, [[1, 2, 3, 4, 5]])


def test_persistence_on_constant_series_is_exact():
    series = data.SeriesSet(np.full((1, 1000), 2.5), ["c"])
    sp = data.window_pairs(series, 48, 8)
    assert tr.metrics(tr.baseline_persistence(sp.test.x, 8), sp.test.y) == (0.0, 0.0)


def test_linear_baseline_on_linear_trend():
    t = np.arange(400.0)
    series = data.SeriesSet(np.stack([0.3 * t - 2, -0.1 * t + 5]), ["a", "b"])
    sp = data.window_pairs(series, 20, 6)
    with pytest.warns(RuntimeWarning, match="ridge"):  # a ramp makes the normal equations singular
        lin = tr.LinearBaseline().fit(sp.train.x, sp.train.y)
    mse, _ = tr.metrics(lin.predict(sp.test.x), sp.test.y)
    assert mse < 1e-8


def test_linear_baseline_matches_lstsq(rng):
    x = rng.normal(size=(200, 2, 10))
    y = rng.normal(size=(200, 2, 3))
    lin = tr.LinearBaseline().fit(x, y)
    for j in range(2):
        a = np.concatenate([x[:, j], np.ones((200, 1))], axis=1)
        w, *_ = np.linalg.lstsq(a, y[:, j], rcond=None)
        np.testing.assert_allclose(lin.weights[j], w, atol=1e-10)
