"""
Losses and training loops for point, prob and quantile DeepONets.

- point: mean squared error
- prob: Gaussian negative log-likelihood on (mu, log sigma)
- quantile: pinball loss at alpha/2 plus pinball loss at 1 - alpha/2,
  minimized jointly by one optimizer so the shared layers see both heads

Mini-batch Adam with a reduce-on-plateau schedule driven by the epoch-mean
training loss. Output biases start at the best constant fit to the targets
given the initialized network. Initialization and shuffling are seeded, so a
fixed TrainConfig reproduces the same parameters bit for bit.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from models import DeepONetSpec, HeadKind, TrainConfig
from services.datasets import TripletDataset
from services.nn_core import AdamState, PlateauScheduler, adam_step, plateau_update
from services.operator_nets import DeepONetModel, EnsembleModel, backward_heads, forward_heads, init_deeponet
from utils.errors import IncompatibleArtifactsError, TrainingDivergedError, TrainingStalledError, ValidationError
from utils.progress import ProgressManager

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
SIGMA_FLOOR = 1e-3

Objective = Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray]]


def _paired(preds: np.ndarray, targets: np.ndarray, what: str) -> Tuple[np.ndarray, np.ndarray]:
    preds = np.atleast_1d(np.asarray(preds, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    if preds.size == 0:
        raise ValidationError.empty(what)
    if preds.shape != targets.shape:
        raise ValidationError(what, f"{preds.shape} vs {targets.shape}", "Predictions and targets must have equal lengths")
    return preds, targets


def mse_loss(preds: np.ndarray, targets: np.ndarray) -> float:
    """(1/N) sum |G - G_theta|^2."""
    preds, targets = _paired(preds, targets, "preds")
    return float(np.mean((targets - preds) ** 2))


def gaussian_nll_loss(mus: np.ndarray, sigmas: np.ndarray, targets: np.ndarray) -> float:
    """(1/2N) (sum[(G - mu)^2 / sigma^2 + 2 log sigma] + N log 2 pi)."""
    mus, targets = _paired(mus, targets, "mus")
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=np.float64))
    if sigmas.shape != mus.shape:
        raise ValidationError("sigmas", sigmas.shape, "Sigmas must match the predictions in length")
    if np.any(sigmas <= 0):
        raise ValidationError("sigmas", float(sigmas.min()), "Standard deviations must be strictly positive")
    return float(0.5 * np.mean((targets - mus) ** 2 / sigmas**2 + 2.0 * np.log(sigmas)) + 0.5 * LOG_2PI)


def gaussian_nll_terms(mu: np.ndarray, log_sigma: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """NLL and its gradients with respect to mu and log sigma (mean over the batch)."""
    n = targets.shape[0]
    residual = targets - mu
    inv_var = np.exp(-2.0 * log_sigma)
    loss = 0.5 * np.mean(residual**2 * inv_var + 2.0 * log_sigma) + 0.5 * LOG_2PI
    d_mu = -residual * inv_var / n
    d_log_sigma = (1.0 - residual**2 * inv_var) / n
    return float(loss), d_mu, d_log_sigma


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise ValidationError.invalid_quantile_level(gamma)


def pinball_loss(gamma: float, y: Union[float, np.ndarray], y_hat: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """gamma (y - y_hat) when y > y_hat, else (1 - gamma)(y_hat - y)."""
    _check_gamma(gamma)
    diff = np.asarray(y, dtype=np.float64) - np.asarray(y_hat, dtype=np.float64)
    loss = np.where(diff > 0, gamma * diff, (gamma - 1.0) * diff)
    return float(loss) if loss.ndim == 0 else loss


def pinball_terms(gamma: float, targets: np.ndarray, preds: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean pinball loss and its gradient with respect to the predictions."""
    n = targets.shape[0]
    diff = targets - preds
    above = diff > 0
    loss = np.mean(np.where(above, gamma * diff, (gamma - 1.0) * diff))
    grad = np.where(above, -gamma, 1.0 - gamma) / n
    return float(loss), grad


def point_objective(out: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    residual = out[:, 0] - targets
    return float(np.mean(residual**2)), (2.0 * residual / targets.shape[0])[:, np.newaxis]


def prob_objective(out: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    loss, d_mu, d_log_sigma = gaussian_nll_terms(out[:, 0], out[:, 1], targets)
    return loss, np.column_stack([d_mu, d_log_sigma])


def quantile_objective(alpha: float) -> Objective:
    """Summed pinball losses of the alpha/2 and 1 - alpha/2 heads."""
    gamma_lo, gamma_hi = alpha / 2.0, 1.0 - alpha / 2.0

    def objective(out: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
        loss_lo, grad_lo = pinball_terms(gamma_lo, targets, out[:, 0])
        loss_hi, grad_hi = pinball_terms(gamma_hi, targets, out[:, 1])
        return loss_lo + loss_hi, np.column_stack([grad_lo, grad_hi])

    return objective


def _chunks(data: TripletDataset, chunk: int) -> List[TripletDataset]:
    return [data.subset(slice(start, start + chunk)) for start in range(0, len(data), chunk)]


@dataclass(frozen=True)
class EpochLog:
    """One row of the training loss log."""

    epoch: int
    loss: float
    lr: float


@dataclass
class TrainingResult:
    """Trained model with its loss history."""

    model: DeepONetModel
    initial_loss: float
    history: List[EpochLog] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1].loss if self.history else self.initial_loss

    @property
    def improved(self) -> bool:
        return math.isfinite(self.final_loss) and self.final_loss <= self.initial_loss


class Trainer:
    """
    Mini-batch Adam training of one DeepONet.

    The objective is chosen by ``spec.head_kind``; quantile models use the
    spec's quantile alpha, falling back to the config's alpha.
    """

    def __init__(
        self,
        spec: DeepONetSpec,
        cfg: TrainConfig,
        progress_manager: Optional[ProgressManager] = None,
    ):
        self.spec = spec
        self.cfg = cfg
        self.progress_manager = progress_manager
        self.objective = self._select_objective()

    @property
    def quantile_alpha(self) -> float:
        return self.spec.quantile_alpha if self.spec.quantile_alpha is not None else self.cfg.alpha

    def _select_objective(self) -> Objective:
        if self.spec.head_kind is HeadKind.POINT:
            return point_objective
        if self.spec.head_kind is HeadKind.PROB:
            return prob_objective
        return quantile_objective(self.quantile_alpha)

    def dataset_loss(self, model: DeepONetModel, data: TripletDataset, chunk: int = 4096) -> float:
        """Objective over the full dataset, evaluated in fixed-order chunks."""
        total = 0.0
        for part in _chunks(data, chunk):
            out, _ = forward_heads(model, part.U, part.X)
            loss, _ = self.objective(out, part.G)
            total += loss * len(part)
        return total / len(data)

    def fitted_output_bias(self, model: DeepONetModel, data: TripletDataset, chunk: int = 4096) -> np.ndarray:
        """
        Output biases that best fit the targets given the other parameters.

        The bias-free head outputs are subtracted from the targets; point and
        mean heads take the residual mean, the log-sigma head the log of the
        residual standard deviation (offset by its own mean), and quantile
        heads the residual quantiles at their levels.
        """
        raw = np.concatenate([forward_heads(model, part.U, part.X)[0] for part in _chunks(data, chunk)])
        raw -= model.output_bias
        residual = data.G[:, np.newaxis] - raw
        if self.spec.head_kind is HeadKind.POINT:
            return residual.mean(axis=0)
        if self.spec.head_kind is HeadKind.PROB:
            log_spread = math.log(max(float(np.std(residual[:, 0])), SIGMA_FLOOR))
            return np.array([float(residual[:, 0].mean()), log_spread - float(raw[:, 1].mean())])
        alpha = self.quantile_alpha
        return np.array([np.quantile(residual[:, 0], alpha / 2), np.quantile(residual[:, 1], 1 - alpha / 2)])

    def fit(self, data: TripletDataset) -> TrainingResult:
        if len(data) == 0:
            raise ValidationError.empty("training data")
        if data.m != self.spec.m or data.d != self.spec.d:
            raise IncompatibleArtifactsError(
                f"spec expects (m={self.spec.m}, d={self.spec.d}) but data has (m={data.m}, d={data.d})"
            )

        cfg = self.cfg
        model = init_deeponet(self.spec, np.random.default_rng(cfg.seed))
        if self.spec.include_output_bias:
            model = replace(model, output_bias=self.fitted_output_bias(model, data))
        shuffler = np.random.default_rng(cfg.effective_shuffle_seed)
        initial_loss = self.dataset_loss(model, data)
        logger.debug(f"Initial {self.spec.head_kind.value} loss {initial_loss:.6g} on {len(data)} triplets")

        sched = PlateauScheduler(lr=cfg.learning_rate, patience=cfg.patience, factor=cfg.factor, min_lr=cfg.min_lr)
        adam = AdamState.zeros_like(model.tensors(), lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
        history: List[EpochLog] = []
        n = len(data)

        if self.progress_manager is not None and cfg.epochs:
            self.progress_manager.start(cfg.epochs, description=f"Training {self.spec.head_kind.value} DeepONet")

        for epoch in range(1, cfg.epochs + 1):
            order = shuffler.permutation(n)
            total = 0.0
            for batch, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start : start + cfg.batch_size]
                out, cache = forward_heads(model, data.U[idx], data.X[idx])
                loss, upstream = self.objective(out, data.G[idx])
                if not math.isfinite(loss):
                    raise TrainingDivergedError(epoch, batch, loss)
                grads = backward_heads(model, cache, upstream)
                adam.lr = sched.lr
                tensors, adam = adam_step(adam, model.tensors(), grads)
                model = model.with_tensors(tensors)
                total += loss * idx.size
            epoch_loss = total / n
            sched = plateau_update(sched, epoch_loss)
            history.append(EpochLog(epoch, epoch_loss, sched.lr))
            if epoch == 1 or epoch % 50 == 0 or epoch == cfg.epochs:
                logger.info(f"epoch {epoch}/{cfg.epochs} loss={epoch_loss:.6g} lr={sched.lr:.3g}")
            if self.progress_manager is not None:
                self.progress_manager.update(description=f"epoch {epoch} loss {epoch_loss:.4g}")

        if self.progress_manager is not None and cfg.epochs:
            self.progress_manager.finish()
        result = TrainingResult(model, initial_loss, history)
        if not result.improved:
            logger.warning(
                f"{self.spec.head_kind.value} training ended at loss {result.final_loss:.6g}, "
                f"above the initial {initial_loss:.6g}"
            )
        return result


def train_model(
    kind: HeadKind,
    data: TripletDataset,
    spec: DeepONetSpec,
    cfg: TrainConfig,
    progress_manager: Optional[ProgressManager] = None,
) -> DeepONetModel:
    """Train one model of the given head kind; a run that ends above its initial loss is an error."""
    if spec.head_kind is not kind:
        raise IncompatibleArtifactsError(f"spec head kind {spec.head_kind.value} does not match {kind.value}")
    result = Trainer(spec, cfg, progress_manager).fit(data)
    if not result.improved:
        raise TrainingStalledError(result.initial_loss, result.final_loss)
    return result.model


def _member_config(cfg: TrainConfig, index: int) -> TrainConfig:
    shuffle = None if cfg.shuffle_seed is None else cfg.shuffle_seed + index
    return cfg.model_copy(update={"seed": cfg.seed + index, "shuffle_seed": shuffle})


def train_ensemble_with_history(
    M: int,
    data: TripletDataset,
    spec: DeepONetSpec,
    cfg: TrainConfig,
    max_workers: int = 1,
) -> Tuple[EnsembleModel, List[TrainingResult]]:
    """Train M point models with seeds seed+0 ... seed+M-1; members are independent."""
    if M < 2:
        raise ValidationError("M", M, "An ensemble needs at least 2 members")
    if spec.head_kind is not HeadKind.POINT:
        raise IncompatibleArtifactsError("ensemble members must use point heads")

    def fit_member(index: int) -> TrainingResult:
        logger.info(f"Training ensemble member {index + 1}/{M}")
        return Trainer(spec, _member_config(cfg, index)).fit(data)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(fit_member, range(M)))
    else:
        results = [fit_member(i) for i in range(M)]
    return EnsembleModel([r.model for r in results]), results


def train_ensemble(
    M: int,
    data: TripletDataset,
    spec: DeepONetSpec,
    cfg: TrainConfig,
    max_workers: int = 1,
) -> EnsembleModel:
    ensemble, _ = train_ensemble_with_history(M, data, spec, cfg, max_workers)
    return ensemble
