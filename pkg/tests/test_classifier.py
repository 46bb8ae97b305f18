import csv
import math

import numpy as np
import pytest

from radarcal.classifier import (
    ClassifierParams,
    FeatureStats,
    TrainConfig,
    featurize,
    featurize_batch,
    fit_feature_stats,
    forward,
    init_params,
    load_model,
    loss_and_grad,
    multi_seed_train,
    predict_all,
    save_model,
    sgd_step,
    softmax,
    train,
    write_training_log,
)
from radarcal.dataset import DatasetConfig, dataset_stats, generate_dataset
from radarcal.errors import InvalidArgument, NumericFailure
from radarcal.smoothing import SmoothingPolicy, smooth_label, uniform_prior
from radarcal.synth import RoiSample, mean_power

TINY = DatasetConfig(split_sizes={"train": 300, "val": 100, "test": 100}, master_seed=11)
QUICK = TrainConfig(epochs=3, hidden_dims=(16,), batch_size=32)


@pytest.fixture(scope="module")
def tiny():
    ds = generate_dataset(TINY)
    return ds, dataset_stats(ds.train, ds.n_classes)


def _random_params(rng, dims):
    return init_params(dims, rng, scale=2.0)


# --- featurize ---------------------------------------------------------------

def test_featurize_train_mean_maps_to_zero():
    rng = np.random.default_rng(0)
    samples = [RoiSample(rng.exponential(1.0, (4, 4)), 5.0, 0) for _ in range(20)]
    fs = fit_feature_stats(samples, 0.1)
    mean_image = 10 ** fs.mean.reshape(4, 4) - 0.1
    assert np.allclose(featurize(RoiSample(mean_image, 5.0, 0), fs), 0.0, atol=1e-12)


def test_featurize_decade_scaling():
    rng = np.random.default_rng(1)
    x = rng.uniform(0.5, 5.0, (4, 4))
    fs = FeatureStats(0.0, rng.normal(size=16), rng.uniform(0.5, 2.0, 16))
    d = featurize(RoiSample(10 * x, 5.0, 0), fs) - featurize(RoiSample(x, 5.0, 0), fs)
    assert np.allclose(d, 1.0 / fs.std, rtol=1e-12)


def test_featurize_deterministic_and_batch_consistent():
    rng = np.random.default_rng(2)
    samples = [RoiSample(rng.exponential(1.0, (4, 4)), 5.0, 0) for _ in range(5)]
    fs = fit_feature_stats(samples)
    assert np.array_equal(featurize(samples[0], fs), featurize(samples[0], fs))
    assert np.allclose(featurize_batch(samples, fs)[3], featurize(samples[3], fs), rtol=0, atol=1e-15)


# --- forward -----------------------------------------------------------------

def test_zero_params_uniform():
    p = init_params([5, 4, 7], np.random.default_rng(0))
    p = ClassifierParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])
    assert np.allclose(forward(p, np.ones(5)), 1 / 7, rtol=0, atol=1e-15)


def test_bias_shift_invariance():
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = _random_params(rng, [6, 5, 7])
        x = rng.normal(size=6)
        q = p.copy()
        q.biases[-1] += rng.normal() * 10
        assert np.allclose(forward(p, x), forward(q, x), rtol=0, atol=1e-12)


def test_forward_in_simplex():
    rng = np.random.default_rng(4)
    p = _random_params(rng, [8, 6, 7])
    X = rng.normal(scale=3.0, size=(10_000, 8))
    P = forward(p, X)
    assert np.all(P >= 0) and np.all(P <= 1)
    assert np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-12


def test_softmax_overflow_safe():
    p = softmax(np.array([1000.0, 0.0, -1000.0]))
    assert np.all(np.isfinite(p)) and p[0] == 1.0


def test_forward_dimension_mismatch():
    p = _random_params(np.random.default_rng(0), [5, 3])
    with pytest.raises(InvalidArgument):
        forward(p, np.ones(4))


# --- loss and gradient -------------------------------------------------------

def test_uniform_prediction_loss_is_log_c():
    p = _random_params(np.random.default_rng(0), [3, 7])
    p.weights[0][:] = 0
    loss, _ = loss_and_grad(p, np.ones(3), np.eye(7)[2])
    assert loss == pytest.approx(math.log(7), abs=1e-12)
    assert round(loss, 7) == 1.9459101


def test_loss_vanishes_when_confident_and_right():
    p = _random_params(np.random.default_rng(0), [3, 4])
    p.weights[0][:] = 0
    p.biases[0][:] = [60.0, 0.0, 0.0, 0.0]
    loss, _ = loss_and_grad(p, np.ones(3), np.eye(4)[0])
    assert 0 <= loss < 1e-20


def _flat(params):
    return np.concatenate([a.ravel() for a in params.arrays()])


def test_gradient_matches_finite_differences():
    """Relative error ||g_analytic - g_numeric|| / (||g_analytic|| + ||g_numeric||), per instance."""
    rng = np.random.default_rng(5)
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        dims = [int(rng.integers(2, 7)), int(rng.integers(2, 6)), int(rng.integers(2, 6)),
                int(rng.integers(2, 8))]
        params = _random_params(rng, dims)
        for b in params.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        n = int(rng.integers(1, 5))
        X = rng.normal(size=(n, dims[0]))
        Y = rng.dirichlet(np.ones(dims[-1]), size=n)
        _, grads = loss_and_grad(params, X, Y)
        analytic = _flat(grads)
        numeric = []
        for arr in params.arrays():
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up, _ = loss_and_grad(params, X, Y)
                arr[idx] = old - h
                down, _ = loss_and_grad(params, X, Y)
                arr[idx] = old
                numeric.append((up - down) / (2 * h))
        numeric = np.array(numeric)
        rel = np.linalg.norm(analytic - numeric) / (np.linalg.norm(analytic) + np.linalg.norm(numeric))
        worst = max(worst, rel)
    assert worst < 1e-5


def test_loss_at_least_target_entropy():
    rng = np.random.default_rng(6)
    for _ in range(10_000):
        c = int(rng.integers(2, 10))
        z = rng.normal(scale=3.0, size=c)
        y = rng.dirichlet(np.ones(c) * rng.uniform(0.1, 3))
        p = softmax(z)
        ce = -np.sum(y * np.log(p))
        ent = -np.sum(y[y > 0] * np.log(y[y > 0]))
        assert ce - ent >= -1e-12


def test_nan_raises_numeric_failure():
    p = _random_params(np.random.default_rng(0), [3, 4])
    p.weights[0][0, 0] = np.nan
    with pytest.raises(NumericFailure):
        loss_and_grad(p, np.ones(3), np.eye(4)[0])


def test_target_shape_checked():
    p = _random_params(np.random.default_rng(0), [3, 4])
    with pytest.raises(InvalidArgument):
        loss_and_grad(p, np.ones(3), np.eye(5)[0])


def test_optimizer_reaches_soft_target():
    rng = np.random.default_rng(7)
    params = _random_params(rng, [10, 8, 7])
    x = rng.normal(size=(1, 10))
    y = smooth_label(3, 0.1, uniform_prior(7), 7)[None, :]
    velocity = [np.zeros_like(a) for a in params.arrays()]
    for _ in range(3000):
        _, g = loss_and_grad(params, x, y)
        sgd_step(params, g, velocity, 0.05, 0.9)
    assert np.max(np.abs(forward(params, x) - y)) < 0.01


# --- training ----------------------------------------------------------------

def test_zero_epochs_returns_init(tiny):
    ds, stats = tiny
    cfg = TrainConfig(epochs=0, hidden_dims=(16,), seed=4)
    res = train(ds.train, ds.val, SmoothingPolicy("hard"), stats, cfg, 7)
    init = init_params([256, 16, 7], np.random.default_rng(4), cfg.weight_init_scale)
    assert res.log == [] and res.best_epoch == 0
    assert all(np.array_equal(a, b) for a, b in zip(res.params.arrays(), init.arrays()))


def test_training_deterministic(tiny):
    ds, stats = tiny
    a = train(ds.train, ds.val, SmoothingPolicy("power", alpha=0.5), stats, QUICK, 7)
    b = train(ds.train, ds.val, SmoothingPolicy("power", alpha=0.5), stats, QUICK, 7)
    assert all(np.array_equal(x, y) for x, y in zip(a.params.arrays(), b.params.arrays()))
    assert a.log == b.log and a.best_epoch == b.best_epoch


def test_training_log_and_selection(tiny):
    ds, stats = tiny
    res = train(ds.train, ds.val, SmoothingPolicy("hard"), stats, QUICK, 7)
    assert [e.epoch for e in res.log] == [1, 2, 3]
    accs = [e.val_accuracy for e in res.log]
    assert res.best_epoch == 1 + accs.index(max(accs))  # first maximum wins ties
    assert all(e.train_loss > 0 for e in res.log)


def test_divergence_reports_epoch(tiny):
    ds, stats = tiny
    cfg = TrainConfig(epochs=3, hidden_dims=(16,), learning_rate=1e150, momentum=0.0)
    with pytest.raises(NumericFailure) as info:
        train(ds.train, ds.val, SmoothingPolicy("hard"), stats, cfg, 7)
    assert info.value.epoch == 1 and info.value.seed == cfg.seed


def test_empty_splits_rejected(tiny):
    ds, stats = tiny
    with pytest.raises(InvalidArgument):
        train([], ds.val, SmoothingPolicy("hard"), stats, QUICK, 7)


@pytest.mark.parametrize("kwargs", [dict(learning_rate=0), dict(momentum=1.0), dict(batch_size=0),
                                    dict(epochs=-1), dict(hidden_dims=(0,))])
def test_train_config_validation(kwargs):
    with pytest.raises(InvalidArgument):
        TrainConfig(**kwargs)


def test_multi_seed(tiny):
    ds, stats = tiny
    one = multi_seed_train(SmoothingPolicy("hard"), ds, QUICK, 1, stats)
    again = multi_seed_train(SmoothingPolicy("hard"), ds, QUICK, 1, stats)
    assert all(np.array_equal(a, b) for a, b in zip(one[0].params.arrays(), again[0].params.arrays()))
    cfg0 = TrainConfig(epochs=0, hidden_dims=(16,))
    runs = multi_seed_train(SmoothingPolicy("hard"), ds, cfg0, 10, stats)
    firsts = {r.params.weights[0][0, 0] for r in runs}
    assert len(firsts) == 10 and len({r.seed for r in runs}) == 10
    with pytest.raises(InvalidArgument):
        multi_seed_train(SmoothingPolicy("hard"), ds, QUICK, 0, stats)


def test_predict_all(tiny):
    ds, stats = tiny
    res = train(ds.train, ds.val, SmoothingPolicy("hard"), stats, QUICK, 7)
    assert predict_all(res.params, [], res.feature_stats) == []
    one = predict_all(res.params, ds.test[:1], res.feature_stats)[0]
    assert np.allclose(one.probs, forward(res.params, featurize(ds.test[0], res.feature_stats)),
                       rtol=0, atol=1e-15)
    assert one.range_m == ds.test[0].range_m and one.mean_power == mean_power(ds.test[0])
    recs = predict_all(res.params, ds.test, res.feature_stats)
    assert [r.true_class for r in recs] == [s.class_id for s in ds.test]
    for r in recs:
        assert abs(r.probs.sum() - 1) <= 1e-12 and r.predicted_class == int(np.argmax(r.probs))


def test_predict_many_records_valid(default_dataset, tiny):
    ds, stats = tiny
    res = train(ds.train, ds.val, SmoothingPolicy("hard"), stats, QUICK, 7)
    recs = predict_all(res.params, default_dataset.test, res.feature_stats)
    assert len(recs) == 10_000
    P = np.stack([r.probs for r in recs])
    assert np.all(P >= 0) and np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-12
    assert all(0 <= r.predicted_class < 7 and r.range_m > 0 for r in recs)


def test_model_file_round_trip(tiny, tmp_path):
    ds, stats = tiny
    res = train(ds.train, ds.val, SmoothingPolicy("range", alpha=0.5), stats, QUICK, 7)
    save_model(res, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert all(np.array_equal(a, b) for a, b in zip(res.params.arrays(), back.params.arrays()))
    assert back.policy == res.policy and back.config == res.config and back.stats == res.stats
    assert np.array_equal(back.feature_stats.std, res.feature_stats.std)
    save_model(back, tmp_path / "n.json")
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "n.json").read_bytes()


def test_training_log_csv(tiny, tmp_path):
    ds, stats = tiny
    res = train(ds.train, ds.val, SmoothingPolicy("hard"), stats, QUICK, 7)
    write_training_log(res.log, tmp_path / "log.csv")
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    assert float(rows[0]["val_accuracy"]) == res.log[0].val_accuracy


# --- default benchmark -------------------------------------------------------

def test_default_hard_val_accuracy(default_experiment):
    best = [max(e.val_accuracy for e in m.log) for m in default_experiment.models["hard"]]
    assert len(best) == 10
    assert min(best) > 0.70
    assert np.std(best, ddof=1) < 0.05
