"""Regressor: normalizer, forward/backward oracles, training, persistence."""

import json
import math

import numpy as np
import pytest

from shmlink import mlp
from shmlink.mlp import (
    CorruptModelFile,
    DegenerateFeature,
    DimensionMismatch,
    EmptyTestSet,
    HyperGrid,
    MlpModel,
    NonFiniteLoss,
    ShapeMismatch,
    TrainConfig,
    TrainData,
    UnsupportedVersion,
    backward,
    evaluate,
    fit_normalizer,
    forward,
    grid_search,
    init_model,
    load_model,
    predict,
    save_model,
    train,
)

R1_COLUMN = [50.988, 51.002, 50.994, 50.990, 50.992]  # pinned recording values


def seeded_model(d_in=2, width=8, seed=0) -> MlpModel:
    rng = np.random.default_rng(seed)
    return init_model(d_in, width, mu=np.zeros(d_in), sigma=np.ones(d_in), rng=rng)


def identity_chain_model() -> MlpModel:
    ones = [np.ones((1, 1))] * 3
    zeros = [np.zeros(1)] * 3
    return MlpModel(layer_sizes=[1, 1, 1, 1], weights=ones, biases=zeros,
                    feature_mean=np.zeros(1), feature_std=np.ones(1))


def linear_data(n=400, noise_rel=0.01, seed=0) -> TrainData:
    """strain = a*R1 + b*R2 + noise, standardized target."""
    rng = np.random.default_rng(seed)
    x = np.column_stack([51.0 + rng.normal(0, 0.5, n), 43.0 + rng.normal(0, 0.4, n)])
    y = 2.0 * x[:, 0] - 1.5 * x[:, 1]
    y = (y - y.mean()) / y.std()
    y = y + rng.normal(0, noise_rel, n)
    cut = int(n * 0.8)
    return TrainData(train_x=x[:cut], train_y=y[:cut], test_x=x[cut:], test_y=y[cut:])


# -- normalizer --------------------------------------------------------------------


def test_fit_normalizer_pinned_values():
    # independent arithmetic on the pinned column
    expected_mu = sum(R1_COLUMN) / 5
    expected_sigma = math.sqrt(sum((v - expected_mu) ** 2 for v in R1_COLUMN) / 5)
    mu, sigma = fit_normalizer(np.array(R1_COLUMN)[:, None])
    assert mu[0] == pytest.approx(50.9932, abs=1e-12)
    assert mu[0] == expected_mu
    assert sigma[0] == pytest.approx(expected_sigma, rel=1e-12)
    assert sigma[0] == pytest.approx(4.833e-3, rel=1e-3)


def test_fit_normalizer_rejects_constant_column():
    features = np.column_stack([np.arange(5.0), np.full(5, 7.0)])
    with pytest.raises(DegenerateFeature) as excinfo:
        fit_normalizer(features)
    assert excinfo.value.column == 1


def test_fit_normalizer_standardized_column():
    rng = np.random.default_rng(0)
    col = rng.normal(0, 1, 5000)
    col = (col - col.mean()) / col.std()
    mu, sigma = fit_normalizer(col[:, None])
    assert abs(mu[0]) < 1e-12
    assert abs(sigma[0] - 1.0) < 1e-12


# -- forward -----------------------------------------------------------------------


def test_identity_chain():
    model = identity_chain_model()
    assert forward(model, [1.0]) == 1.0


def test_rectifier_clamps_negative():
    model = identity_chain_model()
    assert forward(model, [-1.0]) == 0.0


def test_forward_matches_straight_line_reimplementation():
    model = seeded_model(d_in=3, width=5, seed=42)
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.normal(0, 2, 3)
        # independent elementwise evaluation of the three matrix products
        xn = [(x[j] - model.feature_mean[j]) / model.feature_std[j] for j in range(3)]
        a1 = [max(0.0, sum(model.weights[0][i][j] * xn[j] for j in range(3))
                  + model.biases[0][i]) for i in range(5)]
        a2 = [max(0.0, sum(model.weights[1][i][j] * a1[j] for j in range(5))
                  + model.biases[1][i]) for i in range(5)]
        y = sum(model.weights[2][0][j] * a2[j] for j in range(5)) + model.biases[2][0]
        assert forward(model, x) == pytest.approx(y, rel=1e-12, abs=1e-15)


def test_forward_dimension_mismatch():
    model = seeded_model(d_in=2)
    with pytest.raises(DimensionMismatch):
        forward(model, [1.0, 2.0, 3.0])


# -- backward ----------------------------------------------------------------------


def finite_difference_grads(model, x, y, h=1e-5):
    """Central differences on every parameter; the independent gradient oracle."""
    wg, bg = [], []
    for arrays, grads in ((model.weights, wg), (model.biases, bg)):
        for arr in arrays:
            g = np.zeros_like(arr)
            flat = arr.ravel()
            gflat = g.ravel()
            for k in range(flat.size):
                keep = flat[k]
                flat[k] = keep + h
                up = mlp.mse_loss(model, x, y)
                flat[k] = keep - h
                down = mlp.mse_loss(model, x, y)
                flat[k] = keep
                gflat[k] = (up - down) / (2 * h)
            grads.append(g)
    return wg, bg


def kink_margin(model, x):
    """Distance of every rectifier pre-activation from its kink."""
    xn = (x - model.feature_mean) / model.feature_std
    z1 = xn @ model.weights[0].T + model.biases[0]
    z2 = np.maximum(z1, 0) @ model.weights[1].T + model.biases[1]
    return min(float(np.abs(z1).min()), float(np.abs(z2).min()))


def gradcheck_probe(seed):
    """Seeded 2-8-8-1 probe network and batch at a differentiable point.

    Zero-initialized biases can park a rectifier exactly on its kink (an
    all-negative first layer makes z2 = b2 = 0), where central differences
    are meaningless; the probe draws small random biases until every
    pre-activation clears the kink by far more than the step size.
    """
    rng = np.random.default_rng(seed)
    model = seeded_model(d_in=2, width=8, seed=seed)
    x = rng.normal(0, 1, (16, 2))
    y = rng.normal(0, 1, 16)
    while kink_margin(model, x) < 1e-3:
        for b in model.biases[:2]:
            b[:] = rng.uniform(0.05, 0.5, b.shape) * rng.choice([-1.0, 1.0], b.shape)
    return model, x, y


def max_relative_gradient_error(seed):
    model, x, y = gradcheck_probe(seed)
    wg, bg = backward(model, x, y)
    wg_fd, bg_fd = finite_difference_grads(model, x, y)
    worst = 0.0
    for analytic, numeric in zip(wg + bg, wg_fd + bg_fd):
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst


def test_gradients_match_finite_differences():
    assert max_relative_gradient_error(seed=0) < 1e-4


def test_zero_residual_batch_has_zero_gradients():
    model = seeded_model(d_in=2, width=4, seed=1)
    rng = np.random.default_rng(2)
    x = rng.normal(0, 1, (8, 2))
    y = predict(model, x)  # targets equal predictions
    wg, bg = backward(model, x, y)
    for g in wg + bg:
        assert np.max(np.abs(g)) <= 1e-12


def test_duplicated_batch_rows_leave_gradients_unchanged():
    model = seeded_model(d_in=2, width=4, seed=3)
    rng = np.random.default_rng(4)
    x = rng.normal(0, 1, (8, 2))
    y = rng.normal(0, 1, 8)
    wg1, bg1 = backward(model, x, y)
    wg2, bg2 = backward(model, np.vstack([x, x]), np.concatenate([y, y]))
    for a, b in zip(wg1 + bg1, wg2 + bg2):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_backward_dimension_mismatch():
    model = seeded_model(d_in=2)
    with pytest.raises(DimensionMismatch):
        backward(model, np.zeros((4, 3)), np.zeros(4))
    with pytest.raises(DimensionMismatch):
        backward(model, np.zeros((0, 2)), np.zeros(0))


# -- train -------------------------------------------------------------------------


def test_train_beats_least_squares_bound():
    data = linear_data()
    # closed-form least squares on the training split is the achievable-error oracle
    a = np.column_stack([data.train_x, np.ones(len(data.train_y))])
    coef, *_ = np.linalg.lstsq(a, data.train_y, rcond=None)
    ls_pred = np.column_stack([data.test_x, np.ones(len(data.test_y))]) @ coef
    ls_mae = float(np.mean(np.abs(ls_pred - data.test_y)))
    assert ls_mae <= 0.02  # the target is reachable

    model, report = train(data, TrainConfig(hidden_width=16, learning_rate=1e-2,
                                            batch_size=32, max_epochs=300, seed=0))
    _, mae = evaluate(model, data.test_x, data.test_y)
    assert mae <= 0.05


def test_train_diverges_with_huge_rate():
    data = linear_data()
    with pytest.raises(NonFiniteLoss):
        train(data, TrainConfig(learning_rate=1e3, max_epochs=50, seed=0))


def test_train_constant_target_reaches_zero_loss_by_plateau_stop():
    rng = np.random.default_rng(5)
    x = rng.normal(0, 1, (100, 1))
    y = np.full(100, 0.5)
    data = TrainData(train_x=x, train_y=y, test_x=x[:10], test_y=y[:10])
    model, report = train(data, TrainConfig(hidden_width=4, learning_rate=0.8,
                                            batch_size=None, max_epochs=500, seed=0))
    assert report.epoch_losses[-1] <= 1e-6
    assert report.epochs_run < 500  # the plateau stop fired, not the epoch cap


def test_train_is_deterministic():
    data = linear_data()
    config = TrainConfig(hidden_width=8, learning_rate=1e-2, max_epochs=40, seed=9)
    _, r1 = train(data, config)
    _, r2 = train(data, config)
    assert r1.epoch_losses == r2.epoch_losses
    assert r1.test_mse == r2.test_mse and r1.test_mae == r2.test_mae


def test_report_invariants():
    data = linear_data()
    _, report = train(data, TrainConfig(max_epochs=30, seed=0))
    assert report.epochs_run <= 30
    assert all(math.isfinite(l) for l in report.epoch_losses)
    assert len(report.epoch_losses) == report.epochs_run + 1  # entry 0 = pre-training


def test_eight_sensor_configuration_trains():
    from shmlink.synthetic import strain_records

    records = strain_records(n=400, channels=8, noise=0.01, seed=2)
    data = TrainData.from_records(records, train_fraction=0.8)
    model, report = train(data, TrainConfig(hidden_width=8, learning_rate=1e-2,
                                            batch_size=32, max_epochs=120, seed=0))
    assert model.d_in == 8
    assert report.test_mae <= 0.15


def test_normalization_invariance():
    data = linear_data(n=200)
    scaled = TrainData(train_x=data.train_x * np.array([4.0, 0.25]) + np.array([100.0, -7.0]),
                       train_y=data.train_y,
                       test_x=data.test_x * np.array([4.0, 0.25]) + np.array([100.0, -7.0]),
                       test_y=data.test_y)
    mu_a, sigma_a = fit_normalizer(data.train_x)
    mu_b, sigma_b = fit_normalizer(scaled.train_x)
    za = (data.train_x - mu_a) / sigma_a
    zb = (scaled.train_x - mu_b) / sigma_b
    assert np.max(np.abs(za - zb)) < 1e-9

    config = TrainConfig(hidden_width=8, learning_rate=1e-2, max_epochs=50, seed=4)
    _, ra = train(data, config)
    _, rb = train(scaled, config)
    assert np.allclose(ra.epoch_losses, rb.epoch_losses, rtol=1e-6, atol=1e-12)


# -- grid search --------------------------------------------------------------------


def test_grid_search_matches_exhaustive_loop():
    data = linear_data(n=250)
    grid = HyperGrid(hidden_widths=(4, 8), learning_rates=(1e-2, 1e-3),
                     batch_sizes=(32,), max_epochs=40, plateau_patience=20)
    config, model, report = grid_search(data, grid, seed=1)

    # brute force: rerun the same four combinations externally
    best = None
    for c in grid.combinations(seed=1):
        _, r = train(data, c)
        key = (r.test_mse, c.hidden_width, c.learning_rate)
        if best is None or key < best[0]:
            best = (key, c, r)
    assert config == best[1]
    assert report.test_mse == best[2].test_mse


def test_grid_search_singleton():
    data = linear_data(n=250)
    grid = HyperGrid(hidden_widths=(8,), learning_rates=(1e-2,), batch_sizes=(32,),
                     max_epochs=30, plateau_patience=20)
    config, _, _ = grid_search(data, grid, seed=0)
    assert (config.hidden_width, config.learning_rate, config.batch_size) == (8, 1e-2, 32)


def test_grid_search_all_divergent():
    data = linear_data(n=250)
    grid = HyperGrid(hidden_widths=(8,), learning_rates=(1e3, 1e4), batch_sizes=(32,),
                     max_epochs=30, plateau_patience=20)
    with pytest.raises(NonFiniteLoss):
        grid_search(data, grid, seed=0)


def test_grid_validation():
    with pytest.raises(ValueError):
        HyperGrid(hidden_widths=())
    with pytest.raises(ValueError):
        HyperGrid(max_epochs=10, plateau_patience=50)


# -- evaluate -----------------------------------------------------------------------


def test_evaluate_perfect_predictions():
    model = identity_chain_model()
    x = np.array([[1.0], [2.0], [3.0]])
    assert evaluate(model, x, predict(model, x)) == (0.0, 0.0)


def test_evaluate_constant_prediction_hand_values():
    # constant prediction c on targets {c-1, c+1} -> MSE 1, MAE 1
    model = identity_chain_model()
    model.weights[0][:] = 0.0
    model.biases[2][:] = 5.0
    x = np.array([[0.0], [0.0]])
    mse, mae = evaluate(model, x, np.array([4.0, 6.0]))
    assert mse == 1.0 and mae == 1.0


def test_evaluate_pinned_residuals():
    # residuals {0.1, -0.3} -> MSE 0.05, MAE 0.2
    model = identity_chain_model()
    model.weights[0][:] = 0.0
    model.biases[2][:] = 1.0
    x = np.array([[0.0], [0.0]])
    mse, mae = evaluate(model, x, np.array([0.9, 1.3]))
    assert mse == pytest.approx(0.05, rel=1e-12)
    assert mae == pytest.approx(0.2, rel=1e-12)


def test_evaluate_empty_test_set():
    with pytest.raises(EmptyTestSet):
        evaluate(identity_chain_model(), np.zeros((0, 1)), np.zeros(0))


# -- persistence --------------------------------------------------------------------


def test_save_load_forward_bit_exact(tmp_path):
    model = seeded_model(d_in=2, width=16, seed=6)
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    rng = np.random.default_rng(8)
    for _ in range(100):
        x = rng.normal(0, 3, 2)
        assert forward(model, x) == forward(loaded, x)


def test_truncated_file_corrupt(tmp_path):
    model = seeded_model()
    path = tmp_path / "model.json"
    save_model(model, path)
    path.write_text(path.read_text()[: path.stat().st_size // 2])
    with pytest.raises(CorruptModelFile):
        load_model(path)


def test_reshaped_weights_shape_mismatch(tmp_path):
    model = seeded_model(d_in=2, width=8)
    path = tmp_path / "model.json"
    save_model(model, path)
    doc = json.loads(path.read_text())
    w1 = doc["weights"][0]
    doc["weights"][0] = [sum(w1, [])]  # 8x2 flattened into 1x16
    path.write_text(json.dumps(doc))
    with pytest.raises(ShapeMismatch):
        load_model(path)


def test_unsupported_version(tmp_path):
    model = seeded_model()
    path = tmp_path / "model.json"
    save_model(model, path)
    doc = json.loads(path.read_text())
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(UnsupportedVersion):
        load_model(path)


def test_missing_file_corrupt(tmp_path):
    with pytest.raises(CorruptModelFile):
        load_model(tmp_path / "nope.json")
