"""MLP classifier, corrected risks, and their gradients."""
import numpy as np
import pytest

from partnoise.classifier import (
    REVISION_KINDS,
    RISK_KINDS,
    TrainConfig,
    evaluate,
    hidden_representations,
    init_params,
    load_model,
    noisy_posterior,
    predict_posterior,
    risk,
    save_model,
    train,
)
from partnoise.dataio import Dataset, SplitSpec, split_train_val
from partnoise.errors import ConfigError, ConvergenceError, DataError

from conftest import make_blobs


def _grad_setup(kind, seed=0):
    rng = np.random.default_rng(seed)
    b, d, c = 10, 4, 3
    params = init_params([d, 5, c], seed=1)
    x = rng.normal(size=(b, d))
    y = rng.integers(0, c, size=b)
    transitions = None if kind == "ce" else rng.dirichlet(np.ones(c), size=(b, c))
    slack = 0.01 * rng.normal(size=(c, c)) if kind in REVISION_KINDS else None
    return params, x, y, transitions, slack


@pytest.mark.parametrize("kind", RISK_KINDS)
def test_gradients_match_finite_differences(kind):
    params, x, y, transitions, slack = _grad_setup(kind)
    base = risk(params, x, y, kind, transitions=transitions, slack=slack)
    eps = 1e-5

    def loss():
        return risk(params, x, y, kind, transitions=transitions, slack=slack).loss

    worst = 0.0
    arrays = list(zip(params.weights, base.weight_grads)) + list(
        zip(params.biases, base.bias_grads)
    )
    if slack is not None:
        arrays.append((slack, base.slack_grad))
    for arr, grad in arrays:
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss()
            flat[i] = old - eps
            down = loss()
            flat[i] = old
            numeric = (up - down) / (2 * eps)
            scale = max(abs(numeric), abs(gflat[i]), 1e-8)
            worst = max(worst, abs(numeric - gflat[i]) / scale)
    assert worst <= 1e-4


def test_softmax_output_rows_normalized():
    params = init_params([3, 6, 4], seed=0)
    x = np.random.default_rng(0).normal(size=(20, 3))
    g = predict_posterior(params, x)
    assert g.shape == (20, 4)
    assert np.all(g > 0.0)
    assert np.allclose(g.sum(axis=1), 1.0, atol=1e-12)
    single = predict_posterior(params, x[0])
    assert np.array_equal(single, g[0])


def test_hidden_representations():
    params = init_params([3, 5, 2], seed=1)
    x = np.random.default_rng(1).normal(size=(7, 3))
    reps = hidden_representations(params, x)
    assert reps.shape == (7, 5)
    assert np.all(reps >= 0.0)  # relu output
    flat = init_params([3, 2], seed=1)
    assert np.array_equal(hidden_representations(flat, x), x)


def test_noisy_posterior_normalized():
    params = init_params([2, 4, 3], seed=2)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, 2))
    t = rng.dirichlet(np.ones(3), size=(6, 3))
    s = noisy_posterior(params, t, x)
    assert s.shape == (6, 3)
    assert np.allclose(s.sum(axis=1), 1.0, atol=1e-12)


def test_risk_validation():
    params, x, y, transitions, _ = _grad_setup("ptd_f")
    with pytest.raises(ConfigError):
        risk(params, x, y, "nope")
    with pytest.raises(ConfigError):
        risk(params, x, y, "ptd_f")  # missing transitions
    with pytest.raises(ConfigError):
        risk(params, x, y, "ptd_f_v", transitions=transitions)  # missing slack
    with pytest.raises(ConfigError):
        risk(params, x, y, "ptd_f", transitions=transitions[:3])
    with pytest.raises(DataError):
        risk(params, x[:0], y[:0], "ce")


def _noisy_blob_split(seed=0):
    ds = make_blobs(n=400, seed=seed)
    rng = np.random.default_rng(seed + 100)
    noisy = np.array(ds.clean_labels)
    flip = rng.random(ds.n) < 0.2
    noisy[flip] = (noisy[flip] + 1) % ds.class_count
    ds = ds.replace(noisy_labels=noisy)
    return split_train_val(ds, SplitSpec(val_fraction=0.15, seed=seed))


def test_training_learns_blobs():
    tr, va = _noisy_blob_split()
    cfg = TrainConfig(epochs=15, hidden_layers=(8,), seed=0, batch_size=64)
    result = train(tr, va, "ce", config=cfg)
    acc = evaluate(result.params, va)
    assert acc >= 0.85
    assert result.slack is None
    # best snapshot really is the best validation epoch in the log
    best_logged = max(row["val_accuracy"] for row in result.log.rows)
    assert result.log.selected_val_accuracy == best_logged


def test_training_deterministic():
    tr, va = _noisy_blob_split(seed=1)
    cfg = TrainConfig(epochs=5, hidden_layers=(6,), seed=3, batch_size=64)
    a = train(tr, va, "ce", config=cfg)
    b = train(tr, va, "ce", config=cfg)
    for wa, wb in zip(a.params.weights, b.params.weights):
        assert np.array_equal(wa, wb)
    assert a.log.selected_epoch == b.log.selected_epoch


def test_corrected_kind_trains_with_transitions():
    tr, va = _noisy_blob_split(seed=2)
    c = tr.class_count
    t_tr = np.broadcast_to(np.eye(c) * 0.8 + 0.1, (tr.n, c, c)).copy()
    t_va = np.broadcast_to(np.eye(c) * 0.8 + 0.1, (va.n, c, c)).copy()
    cfg = TrainConfig(
        epochs=4, hidden_layers=(6,), seed=0, batch_size=64, slack_epochs=2
    )
    result = train(tr, va, "ptd_r_v", transitions=t_tr, val_transitions=t_va, config=cfg)
    assert result.slack is not None and result.slack.shape == (c, c)
    phases = {row["phase"] for row in result.log.rows}
    assert phases == {1, 2}


def test_train_validation():
    tr, va = _noisy_blob_split(seed=3)
    with pytest.raises(ConfigError):
        train(tr, va, "bogus")
    with pytest.raises(ConfigError):
        train(tr, va, "ptd_f")  # transitions missing
    clean_only = tr.replace(noisy_labels=None)
    with pytest.raises(DataError):
        train(clean_only, va, "ce")
    bad_init = init_params([5, 4, tr.class_count], seed=0)
    with pytest.raises(ConfigError):
        train(tr, va, "ce", init=bad_init)


def test_divergence_raises():
    tr, va = _noisy_blob_split(seed=4)
    cfg = TrainConfig(epochs=12, hidden_layers=(6,), seed=0, learning_rate=1e12)
    with pytest.raises(ConvergenceError):
        train(tr, va, "ce", config=cfg)


def test_evaluate_and_validation():
    ds = make_blobs(n=50, seed=5)
    params = init_params([2, 4, 3], seed=0)
    acc = evaluate(params, ds)
    assert 0.0 <= acc <= 1.0
    with pytest.raises(DataError):
        evaluate(params, Dataset(features=ds.features, class_count=3))


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="lbfgs")
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(hidden_layers=(0,))
    with pytest.raises(ConfigError):
        TrainConfig(slack_learning_rate=-1.0)


def test_model_save_load_roundtrip(tmp_path):
    params = init_params([4, 6, 3], seed=7)
    save_model(params, tmp_path / "model.json")
    loaded = load_model(tmp_path / "model.json")
    assert loaded.layer_sizes == params.layer_sizes
    for wa, wb in zip(loaded.weights, params.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(loaded.biases, params.biases):
        assert np.array_equal(ba, bb)
    with pytest.raises(DataError):
        load_model(tmp_path / "missing.json")
