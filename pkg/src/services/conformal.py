"""
Split conformal calibration for DeepONet predictors.

Two score functions are supported:

- normalized residual |G - mu| / sigma, for models that predict a Gaussian
  (prob DeepONets, ensembles, the multi-fidelity composite)
- CQR score max(t_lo - G, G - t_hi), for quantile DeepONets

Calibration scores a held-out set, takes the ceil((n+1)(1-alpha))-th smallest
score as q_hat and widens (or shrinks) the raw intervals by it.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Tuple, Union

import numpy as np
from scipy.stats import norm

from models import CalibrationRecord, HeadKind, ScoreKind
from services.datasets import TripletDataset
from services.operator_nets import AnyModel, DeepONetModel, mean_std, model_kind_name, quantile_eval
from utils.errors import (
    ArtifactNotFoundError,
    DatasetFormatError,
    IncompatibleArtifactsError,
    ValidationError,
)

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8

ArrayLike = Union[float, np.ndarray]
PairPredictor = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


def _validate_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValidationError.invalid_alpha(alpha)


def _unwrap(values: np.ndarray) -> ArrayLike:
    return float(values) if values.ndim == 0 else values


def normalized_residual_score(mu: ArrayLike, sigma: ArrayLike, G: ArrayLike) -> ArrayLike:
    """s = |G - mu| / sigma."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValidationError("sigma", float(np.min(sigma)), "Scale must be strictly positive")
    return _unwrap(np.abs(np.asarray(G, dtype=np.float64) - np.asarray(mu, dtype=np.float64)) / sigma)


def cqr_score(t_lo: ArrayLike, t_hi: ArrayLike, G: ArrayLike) -> ArrayLike:
    """s = max(t_lo - G, G - t_hi); non-positive exactly when G lies in [t_lo, t_hi]."""
    G = np.asarray(G, dtype=np.float64)
    return _unwrap(np.maximum(np.asarray(t_lo, dtype=np.float64) - G, G - np.asarray(t_hi, dtype=np.float64)))


def conformal_rank(n: int, alpha: float) -> int:
    """1-based rank k = ceil((n+1)(1-alpha)) of the calibration quantile."""
    _validate_alpha(alpha)
    if n < 1:
        raise ValidationError.invalid_count("n", n)
    # Products such as 11 * 0.5 must not round up past the integer.
    return int(math.ceil((n + 1) * (1.0 - alpha) - 1e-9))


def conformal_quantile(scores: np.ndarray, alpha: float) -> float:
    """
    k-th smallest score with k = ceil((n+1)(1-alpha)), or +inf when k > n.

    Ties need no special handling: the order statistic is the smallest q
    with #{s_i <= q} >= k.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ValidationError.empty("scores")
    if np.any(np.isnan(scores)):
        raise ValidationError("scores", "NaN", "Calibration scores must not be NaN")
    k = conformal_rank(scores.size, alpha)
    if k > scores.size:
        return math.inf
    return float(np.partition(scores, k - 1)[k - 1])


def musigma_predictor(model: AnyModel) -> PairPredictor:
    """Batched (mu, sigma) predictor of a Gaussian-output model."""
    if isinstance(model, DeepONetModel) and model.spec.head_kind is not HeadKind.PROB:
        raise IncompatibleArtifactsError(
            f"normalized-residual calibration needs a prob, ensemble or multifidelity model, got {model_kind_name(model)}"
        )
    return lambda U, X: mean_std(model, U, X)


def quantile_predictor(model: AnyModel) -> PairPredictor:
    """Batched (t_lo, t_hi) predictor of a quantile model."""
    if not isinstance(model, DeepONetModel) or model.spec.head_kind is not HeadKind.QUANTILE:
        raise IncompatibleArtifactsError(f"CQR calibration needs a quantile model, got {model_kind_name(model)}")

    def predict(U: np.ndarray, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        t_lo, t_hi = quantile_eval(model, U, X)
        return np.atleast_1d(t_lo), np.atleast_1d(t_hi)

    return predict


def score_kind_for(model: AnyModel) -> ScoreKind:
    if isinstance(model, DeepONetModel) and model.spec.head_kind is HeadKind.QUANTILE:
        return ScoreKind.CQR
    return ScoreKind.NORMALIZED_RESIDUAL


def predictor_for(model: AnyModel) -> PairPredictor:
    """(mu, sigma) or (t_lo, t_hi) predictor, whichever the model's score kind consumes."""
    if score_kind_for(model) is ScoreKind.CQR:
        return quantile_predictor(model)
    return musigma_predictor(model)


def _as_predictor(predictor: Union[AnyModel, PairPredictor], kind: ScoreKind) -> PairPredictor:
    if callable(predictor):
        return predictor
    return quantile_predictor(predictor) if kind is ScoreKind.CQR else musigma_predictor(predictor)


def floor_sigma(sigma: np.ndarray) -> np.ndarray:
    """Clamp sigma below at SIGMA_FLOOR, logging how many values were raised."""
    sigma = np.asarray(sigma, dtype=np.float64)
    clamped = int(np.count_nonzero(sigma < SIGMA_FLOOR))
    if clamped:
        logger.warning(f"Clamped {clamped} sigma values below {SIGMA_FLOOR:g}")
    return np.maximum(sigma, SIGMA_FLOOR)


def calibration_scores(predictor: Union[AnyModel, PairPredictor], data: TripletDataset, kind: ScoreKind) -> np.ndarray:
    """Scores of every triplet in ``data`` under the given score kind."""
    if len(data) == 0:
        raise ValidationError.empty("calibration data")
    a, b = _as_predictor(predictor, kind)(data.U, data.X)
    if kind is ScoreKind.CQR:
        return np.asarray(cqr_score(a, b, data.G), dtype=np.float64).reshape(-1)
    return np.asarray(normalized_residual_score(a, floor_sigma(b), data.G), dtype=np.float64).reshape(-1)


def _record(kind: ScoreKind, scores: np.ndarray, alpha: float) -> CalibrationRecord:
    n = scores.size
    k = conformal_rank(n, alpha)
    q_hat = conformal_quantile(scores, alpha)
    if not math.isfinite(q_hat):
        logger.warning(f"Calibration set of size {n} is too small for alpha={alpha}: k={k} > n, q_hat=+inf")
    else:
        logger.info(f"Calibrated {kind.value}: n={n} k={k} q_hat={q_hat:.6g}")
    return CalibrationRecord(score_kind=kind, alpha=alpha, n=n, q_hat=q_hat, k=k)


def conformalize_musigma(
    predictor: Union[AnyModel, PairPredictor], calib: TripletDataset, alpha: float
) -> CalibrationRecord:
    """Fit q_hat from normalized residuals on the calibration triplets."""
    _validate_alpha(alpha)
    scores = calibration_scores(predictor, calib, ScoreKind.NORMALIZED_RESIDUAL)
    return _record(ScoreKind.NORMALIZED_RESIDUAL, scores, alpha)


def conformalize_cqr(predictor: Union[AnyModel, PairPredictor], calib: TripletDataset, alpha: float) -> CalibrationRecord:
    """Fit q_hat from CQR scores on the calibration triplets."""
    _validate_alpha(alpha)
    if isinstance(predictor, DeepONetModel):
        trained = predictor.spec.quantile_alpha
        if trained is not None and not math.isclose(trained, alpha):
            logger.warning(f"Quantile model was trained for alpha={trained} but is calibrated at alpha={alpha}")
    scores = calibration_scores(predictor, calib, ScoreKind.CQR)
    return _record(ScoreKind.CQR, scores, alpha)


def conformalize(model: AnyModel, calib: TripletDataset, alpha: float) -> CalibrationRecord:
    """Calibrate with the score kind matching the model."""
    if score_kind_for(model) is ScoreKind.CQR:
        return conformalize_cqr(model, calib, alpha)
    return conformalize_musigma(model, calib, alpha)


@dataclass(frozen=True)
class PredictionInterval:
    """Closed interval [lo, hi]; fields may be scalars or equal-length arrays."""

    lo: ArrayLike
    hi: ArrayLike

    @property
    def bounded(self) -> Union[bool, np.ndarray]:
        flags = np.isfinite(self.lo) & np.isfinite(self.hi)
        return bool(flags) if np.ndim(flags) == 0 else flags

    @property
    def length(self) -> ArrayLike:
        return _unwrap(np.asarray(self.hi, dtype=np.float64) - np.asarray(self.lo, dtype=np.float64))

    def contains(self, G: ArrayLike) -> Union[bool, np.ndarray]:
        G = np.asarray(G, dtype=np.float64)
        inside = (np.asarray(self.lo) <= G) & (G <= np.asarray(self.hi))
        return bool(inside) if inside.ndim == 0 else inside

    def __len__(self) -> int:
        return int(np.size(self.lo))


def predict_interval(record: CalibrationRecord, a: ArrayLike, b: ArrayLike) -> PredictionInterval:
    """
    Conformal interval from raw model outputs.

    For normalized_residual records ``(a, b)`` is (mu, sigma) and the interval
    is mu -/+ q_hat sigma; for cqr records it is (t_lo, t_hi) and the interval
    is [t_lo - q_hat, t_hi + q_hat], swapped if the ends cross. An unbounded
    record yields (-inf, +inf).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not record.is_bounded:
        lo, hi = np.full(a.shape, -math.inf), np.full(a.shape, math.inf)
    elif record.score_kind is ScoreKind.NORMALIZED_RESIDUAL:
        half = record.q_hat * np.maximum(b, SIGMA_FLOOR)
        lo, hi = a - half, a + half
    else:
        lo, hi = a - record.q_hat, b + record.q_hat
        crossed = lo > hi
        if np.any(crossed):
            logger.debug(f"Swapped {int(np.count_nonzero(crossed))} crossed quantile intervals")
            lo, hi = np.where(crossed, hi, lo), np.where(crossed, lo, hi)
    return PredictionInterval(_unwrap(lo), _unwrap(hi))


def raw_interval(kind: ScoreKind, a: ArrayLike, b: ArrayLike, alpha: float) -> PredictionInterval:
    """
    Non-conformal baseline interval.

    Gaussian models use mu -/+ z sigma with z the 1 - alpha/2 standard normal
    quantile; quantile models use the raw heads, swapped where they cross.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if kind is ScoreKind.NORMALIZED_RESIDUAL:
        z = float(norm.ppf(1.0 - alpha / 2.0))
        lo, hi = a - z * b, a + z * b
    else:
        lo, hi = np.minimum(a, b), np.maximum(a, b)
    return PredictionInterval(_unwrap(lo), _unwrap(hi))


def check_record_compatible(record: CalibrationRecord, model: AnyModel) -> None:
    """A record can only be applied to the kind of model it was fitted for."""
    expected = score_kind_for(model)
    if record.score_kind is not expected:
        raise IncompatibleArtifactsError(
            f"record uses {record.score_kind.value} scores but a {model_kind_name(model)} model needs {expected.value}",
            {"record": record.score_kind.value, "model": model_kind_name(model)},
        )


def check_record_trajectories(record: CalibrationRecord, n_eval: int, source: str = "test set") -> None:
    """A record that names its trajectory length only applies to trajectories of that length."""
    if record.n_eval is not None and record.n_eval != n_eval:
        raise IncompatibleArtifactsError(
            f"record expects {record.n_eval} points per trajectory but the {source} has {n_eval}",
            {"record": record.n_eval, "data": n_eval},
        )


def write_record(path: Union[str, Path], record: CalibrationRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(record.to_json(), encoding="utf-8")
    logger.info(f"Calibration record written to {path}")


def read_record(path: Union[str, Path]) -> CalibrationRecord:
    path = Path(path)
    if not path.exists():
        raise ArtifactNotFoundError(str(path), "calibration record")
    try:
        return CalibrationRecord.from_json(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, TypeError, ValueError) as e:
        raise DatasetFormatError(str(path), f"invalid calibration record: {e}") from e
