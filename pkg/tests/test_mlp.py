import json
import math
import time

import numpy as np
import pytest

from spmkit import mechanism as mk
from spmkit.mlp import (
    Adam,
    AnalyticIk,
    Diverged,
    FormatError,
    IkModel,
    MlpHyperparams,
    VersionError,
    _Workspace,
    evaluate,
    init_params,
    load_model,
    loss_and_grads,
    predict,
    save_model,
    train,
)
from spmkit.plant import DEG, PlantConfig, VelocityProfile, default_profiles, generate_dataset
from spmkit.rotation import UnitQuaternion


@pytest.fixture(scope="module")
def ideal_data():
    return generate_dataset(PlantConfig.ideal(), default_profiles(duration=3.0))


@pytest.fixture(scope="module")
def small_model(ideal_data):
    return train(ideal_data, MlpHyperparams(hidden_units=300, max_iterations=150, rng_seed=3))


def _toy(rng, n=12, h=10):
    X = rng.normal(size=(n, 4))
    Y = rng.normal(size=(n, 2))
    params = init_params(4, h, 2, rng)
    params[1] = rng.normal(size=h) * 0.3
    params[3] = rng.normal(size=2) * 0.3
    return params, X, Y


def test_hyperparam_validation():
    with pytest.raises(ValueError):
        MlpHyperparams(hidden_units=0)
    with pytest.raises(ValueError):
        MlpHyperparams(tolerance=0.0)
    with pytest.raises(ValueError):
        MlpHyperparams(max_iterations=0)
    with pytest.raises(ValueError):
        MlpHyperparams(activation="relu")


def test_gradient_matches_central_differences(rng):
    params, X, Y = _toy(rng)
    _, grads = loss_and_grads(params, X, Y)
    h = 1e-5
    for p, g in zip(params, grads):
        fd = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up, _ = loss_and_grads(params, X, Y)
            p[idx] = old - h
            dn, _ = loss_and_grads(params, X, Y)
            p[idx] = old
            fd[idx] = (up - dn) / (2 * h)
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd)


def test_workspace_gradients_equal_reference(rng):
    params, X, Y = _toy(rng, n=30, h=16)
    work = _Workspace(64, 16)
    ref = loss_and_grads(params, X, Y)
    got = work.loss_and_grads(params, X, Y)
    assert got[0] == ref[0]
    for a, b in zip(got[1], ref[1]):
        assert np.array_equal(a, b)


def test_adam_first_step_closed_form():
    # f(x) = 1.5 x^2, gradient 3x
    x0 = 2.0
    g = 3.0 * x0
    opt = Adam(step_size=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8)
    p = [np.array([x0])]
    opt.step(p, [np.array([g])])
    expected = x0 - 1e-3 * g / (abs(g) + 1e-8)
    assert p[0][0] == pytest.approx(expected, rel=0, abs=1e-15)
    assert x0 - p[0][0] == pytest.approx(1e-3 * math.copysign(1, g), rel=1e-8)


def test_adam_second_step_closed_form():
    b1, b2, lr, eps = 0.9, 0.999, 1e-2, 1e-8
    x = 1.0
    opt = Adam(lr, b1, b2, eps)
    p = [np.array([x])]
    m = v = 0.0
    for t in (1, 2):
        g = 2.0 * p[0][0]
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        opt.step(p, [np.array([g])])
        assert p[0][0] == pytest.approx(x, abs=1e-15)


def test_adam_minimises_quadratic():
    opt = Adam(step_size=0.05)
    p = [np.array([3.0, -2.0])]
    for _ in range(2000):
        opt.step(p, [2.0 * p[0]])
    assert np.all(np.abs(p[0]) < 1e-2)


def test_training_is_deterministic(ideal_data):
    hp = MlpHyperparams(hidden_units=40, max_iterations=5, rng_seed=11)
    a = train(ideal_data, hp)
    b = train(ideal_data, hp)
    for f in ("W1", "b1", "W2", "b2", "mean", "scale"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_seed_changes_weights(ideal_data):
    a = train(ideal_data, MlpHyperparams(hidden_units=20, max_iterations=2, rng_seed=1))
    b = train(ideal_data, MlpHyperparams(hidden_units=20, max_iterations=2, rng_seed=2))
    assert not np.array_equal(a.W1, b.W1)


def test_training_records_metadata(small_model):
    info = small_model.info
    assert 1 <= info.iterations <= 150
    assert info.final_loss == min(info.loss_curve)
    assert info.wall_time > 0
    assert small_model.is_finite()


def test_early_stop_triggers_on_plateau(ideal_data):
    hp = MlpHyperparams(hidden_units=5, tolerance=0.5, max_iterations=500)
    model = train(ideal_data, hp)
    assert model.info.iterations < 500


def test_diverged_on_absurd_step(ideal_data):
    with pytest.raises(Diverged):
        train(ideal_data, MlpHyperparams(hidden_units=20, step_size=1e300, max_iterations=5))


def test_empty_train_split_rejected(ideal_data):
    with pytest.raises(ValueError):
        train(ideal_data.split("test"), MlpHyperparams(hidden_units=5, max_iterations=1))


def test_small_model_learns_ideal_ik(small_model, ideal_data):
    report = evaluate(small_model, ideal_data)
    assert report.mae_theta1 < 1.0 and report.mae_theta2 < 1.0


def test_identity_maps_near_home(small_model):
    t1, t2 = predict(small_model, UnitQuaternion.identity())
    home = mk.inverse_kinematics(np.array([0.0, 0.0, 1.0]))
    assert abs(t1 - home[0]) < 0.5 * DEG
    assert abs(t2 - home[1]) < 0.5 * DEG


def test_prediction_sign_invariant(small_model, rng):
    for _ in range(20):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        assert predict(small_model, q) == predict(small_model, -q)
        assert small_model.predict_batch(q)[0] == pytest.approx(small_model.predict_batch(-q)[0], abs=1e-15)


def test_single_and_batch_prediction_agree(small_model, ideal_data):
    q = ideal_data.q01[:50]
    batch = small_model.predict_batch(q)
    single = np.array([small_model.predict(UnitQuaternion.from_array(r)) for r in q])
    assert np.allclose(batch, single, atol=1e-12)


def test_mae_is_mean_of_residuals(small_model, ideal_data):
    rep = evaluate(small_model, ideal_data)
    assert rep.mae_theta1 == pytest.approx(np.degrees(np.abs(rep.residuals[:, 0]).mean()))
    assert rep.mae_theta2 == pytest.approx(np.degrees(np.abs(rep.residuals[:, 1]).mean()))
    assert len(rep.residuals) == ideal_data.n_test


def test_perfect_model_has_zero_mae(ideal_data):
    class Oracle:
        def predict_batch(self, q01):
            lookup = {tuple(q): th for q, th in zip(ideal_data.q01, ideal_data.theta)}
            return np.array([lookup[tuple(q)] for q in q01])

    rep = evaluate(Oracle(), ideal_data, split="train")
    assert rep.mae == (0.0, 0.0)


def test_analytic_ik_on_ideal_data_is_exact(ideal_data):
    rep = evaluate(AnalyticIk(), ideal_data)
    assert max(rep.mae) < 1e-6


def test_constant_target_degenerate_dataset():
    frozen = VelocityProfile(0, (0.0, 0.0), (0.1, 0.1), (0.0, 0.0), 5.0)
    ds = generate_dataset(PlantConfig.ideal(quaternion_noise_std=0.1 * DEG), [frozen])
    model = train(ds, MlpHyperparams(hidden_units=20, max_iterations=300, step_size=0.01))
    rep = evaluate(model, ds)
    # inputs are pure noise, so the best fit is the constant itself
    assert max(rep.mae) < 0.3
    assert np.all(np.abs(np.degrees(rep.residuals.mean(0))) < 0.05)


def test_save_load_round_trip(small_model, ideal_data, tmp_path):
    path = save_model(small_model, tmp_path / "m.json")
    back = load_model(path)
    for f in ("W1", "b1", "W2", "b2", "mean", "scale"):
        assert np.array_equal(getattr(back, f), getattr(small_model, f))
    assert back.hyperparams == small_model.hyperparams
    assert np.array_equal(back.predict_batch(ideal_data.q01), small_model.predict_batch(ideal_data.q01))


def test_truncated_file_is_format_error(small_model, tmp_path):
    path = save_model(small_model, tmp_path / "m.json")
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(FormatError):
        load_model(path)


def test_missing_field_is_format_error(small_model, tmp_path):
    path = save_model(small_model, tmp_path / "m.json")
    doc = json.loads(path.read_text())
    del doc["W2"]
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_model(path)


def test_foreign_file_is_format_error(tmp_path):
    path = tmp_path / "x.json"
    path.write_text(json.dumps({"hello": 1}))
    with pytest.raises(FormatError):
        load_model(path)


def test_version_bump_names_both_versions(small_model, tmp_path):
    path = save_model(small_model, tmp_path / "m.json")
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(VersionError, match=r"99.*1"):
        load_model(path)


def test_model_rejects_zero_scale():
    with pytest.raises(ValueError):
        IkModel(np.zeros(4), np.array([1, 1, 0, 1.0]), np.zeros((4, 2)), np.zeros(2), np.zeros((2, 2)), np.zeros(2))


def test_capacity_sanity(ideal_data):
    hp = dict(max_iterations=60, rng_seed=0)
    small = evaluate(train(ideal_data, MlpHyperparams(hidden_units=100, **hp)), ideal_data)
    big = evaluate(train(ideal_data, MlpHyperparams(hidden_units=200, **hp)), ideal_data)
    for s, b in zip(small.mae, big.mae):
        assert b <= 1.1 * s


def test_predict_latency(small_model):
    q = UnitQuaternion.from_axis_angle([1, 0, 0], 0.2)
    start = time.perf_counter()
    for _ in range(1000):
        predict(small_model, q)
    assert (time.perf_counter() - start) / 1000 < 0.5e-3
