"""Classifier tests: optimizer arithmetic, gradients, training protocol."""

import math

import numpy as np
import pytest

from hsiseg.errors import (
    DimensionError,
    EmptyInputError,
    NoViableModelError,
    TrainingDivergedError,
)
from hsiseg.mlp import (
    MlpSpec,
    TrainedMlp,
    cross_validate,
    default_mlp_grid,
    forward,
    gradients,
    mean_cross_entropy,
    predict_proba,
    train,
)
from hsiseg.optim import NadamState, nadam_step


def make_blobs(seed, n_per=30, spread=0.5):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    xs, ys = [], []
    for c in range(3):
        xs.append(rng.normal(centers[c], spread, (n_per, 2)))
        ys.append(np.full(n_per, c + 1))
    x = np.vstack(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(len(y))
    return x[perm], y[perm]


def small_model(seed=7, aux_weight=0.0, weight_decay=1e-3):
    rng = np.random.default_rng(seed)
    spec = MlpSpec(input_dim=5, num_classes=3, hidden_layers=2, units=64,
                   weight_decay=weight_decay, aux_weight=aux_weight)
    dims = spec.layer_dims
    ws = [rng.normal(0, 0.4, (a, b)) for a, b in zip(dims[:-1], dims[1:])]
    bs = [rng.normal(0, 0.1, (b,)) for b in dims[1:]]
    aw = ab = None
    if aux_weight > 0:
        aw = rng.normal(0, 0.3, (spec.units, spec.input_dim))
        ab = rng.normal(0, 0.1, (spec.input_dim,))
    return TrainedMlp(spec=spec, weights=ws, biases=bs,
                      aux_weights=aw, aux_biases=ab), rng


class TestNadam:
    def test_first_step_hand_value(self):
        # lr .002, b1 .9, b2 .999, eps 1e-8, g = 0.1 on a scalar:
        # m1 = .01, v1 = 1e-5, with step-1 corrections
        # m_hat = .9*.01/(1-.81) + .1*.1/(1-.9), v_hat = 1e-5/(1-.999).
        state = NadamState(learning_rate=0.002)
        params = [np.array([1.0])]
        nadam_step(state, params, [np.array([0.1])])
        m_hat = 0.9 * 0.01 / (1 - 0.81) + 0.1 * 0.1 / (1 - 0.9)
        v_hat = 1e-5 / (1 - 0.999)
        expected = 1.0 - 0.002 * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert params[0][0] == pytest.approx(expected, abs=1e-10)

    def test_zero_gradient_is_fixed_point(self):
        state = NadamState(learning_rate=0.1)
        params = [np.array([2.0, -3.0])]
        nadam_step(state, params, [np.zeros(2)])
        nadam_step(state, params, [np.zeros(2)])
        np.testing.assert_array_equal(params[0], [2.0, -3.0])

    def test_descends_quadratic(self):
        state = NadamState(learning_rate=0.05)
        params = [np.array([3.0])]
        for _ in range(400):
            nadam_step(state, params, [2.0 * params[0]])
        assert abs(params[0][0]) < 1e-2

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            NadamState(learning_rate=0.0)
        with pytest.raises(ValueError):
            NadamState(learning_rate=0.1, beta1=1.0)
        with pytest.raises(ValueError):
            NadamState(learning_rate=0.1, beta2=-0.1)

    def test_shape_mismatch_rejected(self):
        state = NadamState(learning_rate=0.1)
        with pytest.raises(ValueError):
            nadam_step(state, [np.zeros(3)], [np.zeros(4)])


class TestForward:
    def test_rows_on_simplex(self):
        model, rng = small_model()
        probs = forward(model, rng.normal(0, 2, (40, 5)))
        assert (probs >= 0).all()
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_hidden_unit_permutation_invariance(self):
        model, rng = small_model(weight_decay=0.0)
        x = rng.normal(0, 1, (10, 5))
        base = forward(model, x)
        perm = rng.permutation(model.spec.units)
        ws = [w.copy() for w in model.weights]
        bs = [b.copy() for b in model.biases]
        ws[0] = ws[0][:, perm]
        bs[0] = bs[0][perm]
        ws[1] = ws[1][perm, :]
        shuffled = TrainedMlp(spec=model.spec, weights=ws, biases=bs)
        np.testing.assert_allclose(forward(shuffled, x), base, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        model, _ = small_model()
        with pytest.raises(DimensionError):
            forward(model, np.zeros((4, 7)))

    def test_large_logits_stay_finite(self):
        model, rng = small_model()
        probs = forward(model, 1e6 * rng.normal(0, 1, (5, 5)))
        assert np.isfinite(probs).all()


class TestGradients:
    def _finite_difference(self, model, x, y, samples=20):
        grads, _ = gradients(model, x, y)
        arrays = list(zip(model.weights, grads["weights"]))
        arrays += list(zip(model.biases, grads["biases"]))
        if "aux" in grads:
            arrays += [
                (model.aux_weights, grads["aux"][0]),
                (model.aux_biases, grads["aux"][1]),
            ]
        rng = np.random.default_rng(99)
        eps = 1e-6
        worst = 0.0
        for arr, g in arrays:
            flat = arr.reshape(-1)
            gflat = np.asarray(g).reshape(-1)
            for i in rng.choice(flat.size, min(samples, flat.size), replace=False):
                keep = flat[i]
                flat[i] = keep + eps
                _, up = gradients(model, x, y)
                flat[i] = keep - eps
                _, down = gradients(model, x, y)
                flat[i] = keep
                fd = (up - down) / (2 * eps)
                denom = max(1e-8, abs(fd), abs(gflat[i]))
                worst = max(worst, abs(fd - gflat[i]) / denom)
        return worst

    def test_matches_finite_differences(self):
        model, rng = small_model(weight_decay=1e-3)
        x = rng.normal(0, 1, (9, 5))
        y = rng.integers(1, 4, 9)
        assert self._finite_difference(model, x, y) < 1e-5

    def test_matches_finite_differences_with_aux_head(self):
        model, rng = small_model(aux_weight=0.5)
        x = rng.normal(0, 1, (9, 5))
        y = rng.integers(1, 4, 9)
        assert self._finite_difference(model, x, y) < 1e-5

    def test_weight_decay_adds_ridge_term(self):
        model, rng = small_model(weight_decay=0.0)
        x = rng.normal(0, 1, (6, 5))
        y = rng.integers(1, 4, 6)
        _, plain = gradients(model, x, y)
        decayed = TrainedMlp(
            spec=MlpSpec(input_dim=5, num_classes=3, weight_decay=0.01),
            weights=model.weights, biases=model.biases,
        )
        _, ridged = gradients(decayed, x, y)
        expected = plain + 0.005 * sum(float((w ** 2).sum()) for w in model.weights)
        assert ridged == pytest.approx(expected, rel=1e-12)

    def test_out_of_range_labels_rejected(self):
        model, rng = small_model()
        x = rng.normal(0, 1, (3, 5))
        with pytest.raises(ValueError):
            gradients(model, x, np.array([0, 1, 2]))
        with pytest.raises(ValueError):
            gradients(model, x, np.array([1, 2, 4]))


class TestTraining:
    def test_fits_separable_blobs(self):
        x, y = make_blobs(0)
        spec = MlpSpec(input_dim=2, num_classes=3)
        model = train(spec, x[:60], y[:60], x[60:], y[60:], seed=1,
                      max_epochs=60)
        pred = forward(model, x[60:]).argmax(axis=1) + 1
        assert (pred == y[60:]).mean() == 1.0
        assert model.weights[0].dtype == np.float32

    def test_deterministic_reruns(self):
        x, y = make_blobs(2, n_per=15)
        spec = MlpSpec(input_dim=2, num_classes=3)
        a = train(spec, x[:30], y[:30], x[30:], y[30:], seed=9, max_epochs=15)
        b = train(spec, x[:30], y[:30], x[30:], y[30:], seed=9, max_epochs=15)
        assert a.history == b.history
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_early_stop_and_plateau_schedule(self):
        # Validation labels are random, so the monitored loss stops
        # improving almost immediately: the LR must decay by tenths on
        # the plateau and training must stop after the patience window.
        rng = np.random.default_rng(3)
        x = rng.normal(0, 1, (16, 4))
        y = rng.integers(1, 3, 16)
        vx = rng.normal(0, 1, (16, 4))
        vy = rng.integers(1, 3, 16)
        spec = MlpSpec(input_dim=4, num_classes=2)
        model = train(spec, x, y, vx, vy, seed=0, max_epochs=500)
        assert model.stop_reason == "early_stop"
        assert len(model.history) == model.best_epoch + 1 + 50
        lrs = [h[3] for h in model.history]
        assert lrs[0] == pytest.approx(0.002)
        assert min(lrs) < 0.002 / 9  # at least one tenth-step drop
        # Returned weights reproduce the best monitored loss.
        val_best = min(h[2] for h in model.history)
        assert model.best_val_loss == pytest.approx(val_best)
        assert mean_cross_entropy(model, vx, vy) == pytest.approx(
            val_best, rel=1e-4
        )

    def test_learning_rate_floor(self):
        state_lr = 2e-6
        rng = np.random.default_rng(4)
        x = rng.normal(0, 1, (12, 3))
        y = rng.integers(1, 3, 12)
        spec = MlpSpec(input_dim=3, num_classes=2)
        model = train(spec, x, y, x, np.where(y == 1, 2, 1), seed=0,
                      max_epochs=500)
        assert min(h[3] for h in model.history) >= state_lr

    def test_empty_sets_rejected(self):
        spec = MlpSpec(input_dim=2, num_classes=2)
        with pytest.raises(EmptyInputError):
            train(spec, np.zeros((0, 2)), np.zeros(0, int),
                  np.zeros((1, 2)), np.array([1]))

    def test_history_rows_are_numeric(self):
        x, y = make_blobs(5, n_per=10)
        spec = MlpSpec(input_dim=2, num_classes=3)
        model = train(spec, x[:20], y[:20], x[20:], y[20:], seed=0,
                      max_epochs=5)
        for epoch, tr, va, lr in model.history:
            assert isinstance(epoch, int)
            assert np.isfinite([tr, va, lr]).all()


class TestSpecAndGrid:
    def test_parameter_count(self):
        spec = MlpSpec(input_dim=5, num_classes=3, hidden_layers=2, units=64)
        assert spec.n_params == (5 * 64 + 64) + (64 * 64 + 64) + (64 * 3 + 3)

    def test_default_grid_covers_lattice(self):
        grid = default_mlp_grid(10, 4)
        assert len(grid) == 18
        assert {g.hidden_layers for g in grid} == {2, 3}
        assert {g.units for g in grid} == {64, 256, 1024}
        assert {g.weight_decay for g in grid} == {0.0, 1e-4, 1e-3}
        assert all(g.input_dim == 10 and g.num_classes == 4 for g in grid)

    def test_range_validation(self):
        with pytest.raises(ValueError):
            MlpSpec(input_dim=2, num_classes=2, hidden_layers=1)
        with pytest.raises(ValueError):
            MlpSpec(input_dim=2, num_classes=2, units=32)
        with pytest.raises(ValueError):
            MlpSpec(input_dim=2, num_classes=1)
        with pytest.raises(ValueError):
            MlpSpec(input_dim=2, num_classes=2, weight_decay=-1.0)


class TestCrossValidate:
    def _xor_blobs(self, seed, n):
        rng = np.random.default_rng(seed)
        corner = rng.integers(0, 4, n)
        centers = 3.0 * np.array([[0, 0], [1, 1], [0, 1], [1, 0]], float)
        x = centers[corner] + rng.normal(0, 0.3, (n, 2))
        y = np.where(corner < 2, 1, 2)
        return x, y

    def test_adequate_model_beats_crippled_one(self):
        x, y = self._xor_blobs(3, 120)
        vx, vy = self._xor_blobs(4, 80)
        grid = [
            MlpSpec(input_dim=2, num_classes=2, weight_decay=50.0),
            MlpSpec(input_dim=2, num_classes=2, weight_decay=0.0),
        ]
        best_spec, best_model = cross_validate(grid, x, y, vx, vy, seed=0,
                                               max_epochs=40)
        assert best_spec.weight_decay == 0.0
        pred = forward(best_model, vx).argmax(axis=1) + 1
        assert (pred == vy).mean() > 0.95

    def test_tie_breaks_prefer_fewer_parameters(self):
        x, y = make_blobs(6, n_per=10)
        big = MlpSpec(input_dim=2, num_classes=3, hidden_layers=3, units=256)
        small = MlpSpec(input_dim=2, num_classes=3, hidden_layers=2, units=64)

        recorded = []
        seen = {}

        def fake_train(spec, *args, **kwargs):
            model = TrainedMlp(spec=spec, weights=[], biases=[])
            model.best_val_loss = 0.25  # forced tie
            seen[id(spec)] = model
            recorded.append(spec)
            return model

        import hsiseg.mlp as mlp_module

        original = mlp_module.train
        mlp_module.train = fake_train
        try:
            spec, _ = cross_validate([big, small], x[:20], y[:20],
                                     x[20:], y[20:], seed=0)
        finally:
            mlp_module.train = original
        assert spec is small

    def test_all_divergent_grid_raises(self):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 1, (16, 3))
        y = rng.integers(1, 3, 16)
        grid = [MlpSpec(input_dim=3, num_classes=2, weight_decay=1e-3)]
        with np.errstate(all="ignore"):
            with pytest.raises(NoViableModelError):
                cross_validate(grid, x, y, x, y, seed=0, max_epochs=3,
                               learning_rate=1e160)

    def test_empty_grid_rejected(self):
        with pytest.raises(EmptyInputError):
            cross_validate([], np.zeros((2, 2)), np.array([1, 2]),
                           np.zeros((2, 2)), np.array([1, 2]))


class TestPredictProba:
    def test_matches_forward_rowwise(self):
        model, rng = small_model()
        cube = rng.normal(0, 1, (6, 7, 5))
        full = predict_proba(model, cube)
        assert full.shape == (6, 7, 3)
        np.testing.assert_allclose(
            full.reshape(-1, 3), forward(model, cube.reshape(-1, 5)),
            atol=1e-14,
        )
        np.testing.assert_allclose(full.sum(axis=2), 1.0, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        model, _ = small_model()
        with pytest.raises(DimensionError):
            predict_proba(model, np.zeros((4, 4, 9)))
