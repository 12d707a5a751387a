"""
Unit tests for losses and training loops.
"""

import math

import numpy as np
import pytest
from scipy.stats import norm

from models import DeepONetSpec, HeadKind, TrainConfig
from services import training
from services.datasets import TripletDataset
from services.operator_nets import deeponet_eval, ensemble_stats, prob_eval, quantile_eval
from services.training import (
    Trainer,
    gaussian_nll_loss,
    gaussian_nll_terms,
    mse_loss,
    pinball_loss,
    train_ensemble,
    train_model,
)
from utils.errors import IncompatibleArtifactsError, TrainingDivergedError, TrainingStalledError, ValidationError


def _noise_dataset(n: int, seed: int = 3) -> TripletDataset:
    """Targets ~ N(0, 1) independent of the inputs."""
    rng = np.random.default_rng(seed)
    return TripletDataset(rng.normal(size=(n, 4)), rng.uniform(size=(n, 1)), rng.normal(size=n))


def _constant_dataset(n: int, value: float = 0.7) -> TripletDataset:
    rng = np.random.default_rng(0)
    return TripletDataset(rng.normal(size=(n, 4)), rng.uniform(size=(n, 1)), np.full(n, value))


@pytest.mark.unit
class TestMseLoss:
    """Mean squared error."""

    def test_equal_arrays(self):
        assert mse_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0

    def test_known_value(self):
        assert mse_loss(np.array([0.0, 0.0]), np.array([1.0, 3.0])) == pytest.approx(5.0)

    def test_matches_naive_loop(self, rng):
        p, t = rng.normal(size=50), rng.normal(size=50)
        naive = sum((a - b) ** 2 for a, b in zip(p, t)) / 50
        assert mse_loss(p, t) == pytest.approx(naive, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            mse_loss(np.array([]), np.array([]))


@pytest.mark.unit
class TestGaussianNll:
    """Gaussian negative log-likelihood."""

    def test_zero_residual_unit_sigma(self):
        value = gaussian_nll_loss(np.array([0.3]), np.array([1.0]), np.array([0.3]))
        assert value == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-7)
        assert value == pytest.approx(0.9189385, abs=1e-7)

    def test_unit_residual(self):
        value = gaussian_nll_loss(np.array([0.0]), np.array([1.0]), np.array([1.0]))
        assert value == pytest.approx(1.4189385, abs=1e-7)

    def test_matches_naive_sum(self, rng):
        mu, sigma, g = rng.normal(size=20), rng.uniform(0.2, 2.0, size=20), rng.normal(size=20)
        total = sum((gi - mi) ** 2 / si**2 + 2 * math.log(si) for mi, si, gi in zip(mu, sigma, g))
        naive = (total + 20 * math.log(2 * math.pi)) / 40
        assert gaussian_nll_loss(mu, sigma, g) == pytest.approx(naive, abs=1e-12)

    def test_non_positive_sigma_rejected(self):
        with pytest.raises(ValidationError):
            gaussian_nll_loss(np.array([0.0]), np.array([0.0]), np.array([1.0]))

    def test_gradients_match_finite_differences(self, rng):
        mu, log_sigma, g = rng.normal(size=8), rng.normal(scale=0.5, size=8), rng.normal(size=8)
        loss, d_mu, d_ls = gaussian_nll_terms(mu, log_sigma, g)
        assert loss == pytest.approx(gaussian_nll_loss(mu, np.exp(log_sigma), g), abs=1e-12)
        h = 1e-6
        for i in range(8):
            e = np.zeros(8)
            e[i] = h
            num_mu = (gaussian_nll_terms(mu + e, log_sigma, g)[0] - gaussian_nll_terms(mu - e, log_sigma, g)[0]) / (2 * h)
            num_ls = (gaussian_nll_terms(mu, log_sigma + e, g)[0] - gaussian_nll_terms(mu, log_sigma - e, g)[0]) / (2 * h)
            assert abs(num_mu - d_mu[i]) <= 1e-5 * max(1.0, abs(num_mu))
            assert abs(num_ls - d_ls[i]) <= 1e-5 * max(1.0, abs(num_ls))


@pytest.mark.unit
class TestPinballLoss:
    """Pinball (quantile) loss."""

    def test_under_prediction(self):
        assert pinball_loss(0.9, 1.0, 0.0) == pytest.approx(0.9)

    def test_over_prediction(self):
        assert pinball_loss(0.9, 0.0, 1.0) == pytest.approx(0.1)

    def test_median_is_half_absolute_error(self, rng):
        y, y_hat = rng.normal(size=30), rng.normal(size=30)
        np.testing.assert_allclose(pinball_loss(0.5, y, y_hat), 0.5 * np.abs(y - y_hat), atol=1e-15)

    def test_non_negative_and_zero_only_at_equality(self, rng):
        gamma = 0.3
        y, y_hat = rng.normal(size=100), rng.normal(size=100)
        assert np.all(pinball_loss(gamma, y, y_hat) > 0)
        assert pinball_loss(gamma, 1.25, 1.25) == 0.0

    def test_convex_in_prediction(self, rng):
        for _ in range(200):
            gamma = rng.uniform(0.01, 0.99)
            y, a, b = rng.normal(size=3)
            mid = pinball_loss(gamma, y, 0.5 * (a + b))
            assert mid <= 0.5 * (pinball_loss(gamma, y, a) + pinball_loss(gamma, y, b)) + 1e-12

    @pytest.mark.parametrize("gamma", [0.0, 1.0, -0.1, 1.5])
    def test_gamma_outside_unit_interval_rejected(self, gamma):
        with pytest.raises(ValidationError):
            pinball_loss(gamma, 1.0, 0.0)


@pytest.mark.unit
class TestTrainer:
    """Training loops."""

    def test_constant_target_point_model(self, point_spec):
        cfg = TrainConfig(epochs=300, batch_size=32, seed=0, learning_rate=1e-2, patience=10)
        data = _constant_dataset(64)
        result = Trainer(point_spec, cfg).fit(data)
        preds = deeponet_eval(result.model, data.U, data.X)
        assert mse_loss(preds, data.G) < 1e-4
        assert result.final_loss <= result.initial_loss

    def test_history_rows(self, point_spec, small_triplets, tiny_train_config):
        result = Trainer(point_spec, tiny_train_config).fit(small_triplets)
        assert [row.epoch for row in result.history] == [1, 2, 3, 4, 5]
        assert all(math.isfinite(row.loss) for row in result.history)
        assert all(row.lr <= tiny_train_config.learning_rate for row in result.history)

    def test_zero_epochs_returns_initialization(self, point_spec, small_triplets):
        result = Trainer(point_spec, TrainConfig(epochs=0)).fit(small_triplets)
        assert result.history == []
        assert result.final_loss == result.initial_loss

    @pytest.mark.parametrize("head_kind", [HeadKind.POINT, HeadKind.PROB, HeadKind.QUANTILE])
    def test_fixed_seed_is_deterministic(self, spec_factory, small_triplets, tiny_train_config, head_kind):
        spec = spec_factory(head_kind)
        a = Trainer(spec, tiny_train_config).fit(small_triplets).model
        b = Trainer(spec, tiny_train_config).fit(small_triplets).model
        for ta, tb in zip(a.tensors(), b.tensors()):
            np.testing.assert_array_equal(ta, tb)

    def test_different_seeds_differ(self, point_spec, small_triplets, tiny_train_config):
        a = Trainer(point_spec, tiny_train_config).fit(small_triplets).model
        b = Trainer(point_spec, tiny_train_config.model_copy(update={"seed": 1})).fit(small_triplets).model
        assert not np.array_equal(a.tensors()[0], b.tensors()[0])

    def test_prob_model_learns_unit_noise(self, prob_spec):
        data = _noise_dataset(2000)
        cfg = TrainConfig(epochs=150, batch_size=128, seed=0, learning_rate=5e-3)
        model = Trainer(prob_spec, cfg).fit(data).model
        _, sigma = prob_eval(model, data.U, data.X)
        assert float(np.mean(sigma)) == pytest.approx(1.0, abs=0.15)

    def test_quantile_model_learns_gaussian_quantiles(self, spec_factory):
        spec = spec_factory(HeadKind.QUANTILE, alpha=0.2)
        data = _noise_dataset(2000)
        cfg = TrainConfig(epochs=150, batch_size=128, seed=0, learning_rate=5e-3, alpha=0.2)
        model = Trainer(spec, cfg).fit(data).model
        lo, hi = quantile_eval(model, data.U, data.X)
        z = float(norm.ppf(0.9))
        assert float(np.mean(lo)) == pytest.approx(-z, abs=0.2)
        assert float(np.mean(hi)) == pytest.approx(z, abs=0.2)

    def test_diverging_loss_aborts_with_position(self, point_spec, small_triplets, tiny_train_config):
        trainer = Trainer(point_spec, tiny_train_config)
        trainer.objective = lambda out, targets: (float("nan"), np.zeros((targets.shape[0], 1)))
        with pytest.raises(TrainingDivergedError) as exc_info:
            trainer.fit(small_triplets)
        assert exc_info.value.context["epoch"] == 1
        assert exc_info.value.context["batch"] == 0

    def test_sensor_mismatch_rejected(self, spec_factory, small_triplets, tiny_train_config):
        with pytest.raises(IncompatibleArtifactsError):
            Trainer(spec_factory(HeadKind.POINT, m=5), tiny_train_config).fit(small_triplets)

    def test_train_model_checks_kind(self, prob_spec, small_triplets, tiny_train_config):
        with pytest.raises(IncompatibleArtifactsError):
            train_model(HeadKind.POINT, small_triplets, prob_spec, tiny_train_config)

    def test_rising_loss_warns_and_train_model_rejects_it(
        self, point_spec, small_triplets, tiny_train_config, monkeypatch, caplog
    ):
        calls = []

        def rising(out, targets):
            calls.append(targets.shape[0])
            return float(len(calls)), np.zeros((targets.shape[0], 1))

        monkeypatch.setattr(training, "point_objective", rising)
        result = Trainer(point_spec, tiny_train_config).fit(small_triplets)
        assert not result.improved
        assert "above the initial" in caplog.text
        with pytest.raises(TrainingStalledError) as exc_info:
            train_model(HeadKind.POINT, small_triplets, point_spec, tiny_train_config)
        assert exc_info.value.exit_code == 3


@pytest.mark.unit
class TestOutputBiasFit:
    """Output biases start at the best constant offset for the initialized network."""

    def test_point_predictions_start_at_target_mean(self, point_spec):
        data = _constant_dataset(64)
        model = Trainer(point_spec, TrainConfig(epochs=0)).fit(data).model
        preds = deeponet_eval(model, data.U, data.X)
        assert float(np.mean(preds)) == pytest.approx(0.7, abs=1e-12)

    def test_prob_sigma_starts_at_residual_spread(self, prob_spec):
        data = _noise_dataset(500)
        model = Trainer(prob_spec, TrainConfig(epochs=0)).fit(data).model
        mu, sigma = prob_eval(model, data.U, data.X)
        assert float(np.mean(data.G - mu)) == pytest.approx(0.0, abs=1e-12)
        assert float(np.mean(np.log(sigma))) == pytest.approx(math.log(np.std(data.G - mu)), abs=1e-12)

    def test_quantile_heads_start_at_target_quantiles(self, spec_factory):
        spec = spec_factory(HeadKind.QUANTILE, alpha=0.2)
        data = _noise_dataset(2000)
        model = Trainer(spec, TrainConfig(epochs=0, alpha=0.2)).fit(data).model
        lo, hi = quantile_eval(model, data.U, data.X)
        assert float(np.mean(data.G < lo)) == pytest.approx(0.1, abs=0.002)
        assert float(np.mean(data.G < hi)) == pytest.approx(0.9, abs=0.002)

    def test_constant_target_initial_loss_is_prediction_variance(self, point_spec):
        data = _constant_dataset(64)
        result = Trainer(point_spec, TrainConfig(epochs=0)).fit(data)
        preds = deeponet_eval(result.model, data.U, data.X)
        assert result.initial_loss == pytest.approx(float(np.var(preds)), rel=1e-9)

    def test_disabled_output_bias_stays_zero(self, small_triplets):
        spec = DeepONetSpec.from_table(
            m=4, d=1, width=6, shared_depth=2, independent_depth=1, head_kind=HeadKind.POINT, include_output_bias=False
        )
        model = Trainer(spec, TrainConfig(epochs=0)).fit(small_triplets).model
        np.testing.assert_array_equal(model.output_bias, [0.0])


@pytest.mark.unit
class TestTrainEnsemble:
    """Deep ensembles of point models."""

    def test_untrained_members_differ(self, point_spec, small_triplets):
        ens = train_ensemble(2, small_triplets, point_spec, TrainConfig(epochs=0))
        assert len(ens.members) == 2
        assert not np.array_equal(ens.members[0].tensors()[0], ens.members[1].tensors()[0])

    def test_ensemble_is_deterministic(self, point_spec, small_triplets, tiny_train_config):
        a = train_ensemble(3, small_triplets, point_spec, tiny_train_config)
        b = train_ensemble(3, small_triplets, point_spec, tiny_train_config, max_workers=3)
        for ma, mb in zip(a.members, b.members):
            for ta, tb in zip(ma.tensors(), mb.tensors()):
                np.testing.assert_array_equal(ta, tb)

    def test_constant_target_gives_small_sigma(self, point_spec):
        cfg = TrainConfig(epochs=300, batch_size=32, seed=0, learning_rate=1e-2, patience=10)
        data = _constant_dataset(64)
        ens = train_ensemble(5, data, point_spec, cfg)
        _, sigma = ensemble_stats(ens, data.U, data.X)
        assert float(np.max(sigma)) < 0.05

    def test_single_member_rejected(self, point_spec, small_triplets, tiny_train_config):
        with pytest.raises(ValidationError):
            train_ensemble(1, small_triplets, point_spec, tiny_train_config)
