"""
Coverage metrics and ablation studies.

A trajectory's coverage is the fraction of its mesh points whose reference
value falls inside the predicted interval. Reports collect one coverage per
trajectory plus every interval length.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from models import AblationKind, AblationResult, CalibrationRecord, CoverageReport, ScoreKind
from services.conformal import (
    PairPredictor,
    PredictionInterval,
    conformal_quantile,
    conformal_rank,
    cqr_score,
    floor_sigma,
    normalized_residual_score,
    predict_interval,
    predictor_for,
    raw_interval,
    score_kind_for,
)
from services.datasets import TrajectoryDataset, TripletDataset
from services.operator_nets import AnyModel, model_kind_name
from utils.errors import ShapeError, ValidationError
from utils.progress import ProgressManager

logger = logging.getLogger(__name__)

DEFAULT_BINS = 20


def trajectory_coverage(
    intervals: Union[PredictionInterval, Sequence[PredictionInterval]], truths: np.ndarray
) -> float:
    """Fraction of truths inside the closed intervals."""
    if not isinstance(intervals, PredictionInterval):
        intervals = PredictionInterval(
            np.array([iv.lo for iv in intervals], dtype=np.float64),
            np.array([iv.hi for iv in intervals], dtype=np.float64),
        )
    truths = np.atleast_1d(np.asarray(truths, dtype=np.float64))
    if truths.size == 0:
        raise ValidationError.empty("truths")
    if len(intervals) != truths.size:
        raise ShapeError("interval count", truths.size, len(intervals))
    lo = np.broadcast_to(intervals.lo, truths.shape)
    hi = np.broadcast_to(intervals.hi, truths.shape)
    return float(np.count_nonzero((lo <= truths) & (truths <= hi)) / truths.size)


def coverage_report(
    model: str,
    alpha: float,
    conformalized: bool,
    lo: np.ndarray,
    hi: np.ndarray,
    truths: np.ndarray,
) -> CoverageReport:
    """Report over trajectories; ``lo``, ``hi`` and ``truths`` have shape (n_traj, n_eval)."""
    truths = np.asarray(truths, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if truths.ndim != 2:
        raise ShapeError("trajectory truths", "(n_traj, n_eval)", truths.shape)
    if lo.shape != truths.shape or hi.shape != truths.shape:
        raise ShapeError("interval bounds", truths.shape, (lo.shape, hi.shape))
    coverages = [trajectory_coverage(PredictionInterval(lo[j], hi[j]), truths[j]) for j in range(truths.shape[0])]
    lengths = (hi - lo).reshape(-1)
    unbounded = int(np.count_nonzero(~np.isfinite(lengths)))
    return CoverageReport(
        model=model,
        alpha=alpha,
        conformalized=conformalized,
        coverages=coverages,
        lengths=lengths.tolist(),
        n_traj=truths.shape[0],
        n_eval=truths.shape[1],
        unbounded_count=unbounded,
    )


@dataclass
class TrajectoryIntervals:
    """Conformalized and baseline intervals along one test trajectory."""

    model: str
    alpha: float
    trajectory: int
    X: np.ndarray
    G: np.ndarray
    G_hat: np.ndarray
    conformal: PredictionInterval
    baseline: PredictionInterval


def pick_trajectory(n_traj: int, seed: int) -> int:
    """Seeded choice of the trajectory whose intervals are exported."""
    if n_traj < 1:
        raise ValidationError.empty("test trajectories")
    return int(np.random.default_rng(seed).integers(n_traj))


def trajectory_intervals(
    model: AnyModel, record: CalibrationRecord, test: TrajectoryDataset, index: int
) -> TrajectoryIntervals:
    """
    Intervals of trajectory ``index`` next to its reference values.

    G_hat is the predicted mean of Gaussian models and the midpoint of the two
    heads of quantile models.
    """
    if not 0 <= index < test.n_traj:
        raise ValidationError("trajectory", index, f"Trajectory index must lie in [0, {test.n_traj})")
    U = np.repeat(test.U[index : index + 1], test.n_eval, axis=0)
    a, b = predictor_for(model)(U, test.X[index])
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    kind = score_kind_for(model)
    G_hat = 0.5 * (a + b) if kind is ScoreKind.CQR else a
    return TrajectoryIntervals(
        model=model_kind_name(model),
        alpha=record.alpha,
        trajectory=index,
        X=test.X[index],
        G=test.G[index],
        G_hat=G_hat,
        conformal=predict_interval(record, a, b),
        baseline=raw_interval(kind, a, b, record.alpha),
    )


def coverage_histogram(report: CoverageReport, bins: int = DEFAULT_BINS) -> Tuple[np.ndarray, np.ndarray]:
    """Counts of per-trajectory coverages over ``bins`` equal bins of [0, 1]."""
    counts, edges = np.histogram(np.asarray(report.coverages), bins=bins, range=(0.0, 1.0))
    return edges, counts


def length_statistics(lengths: Sequence[float]) -> Tuple[float, float]:
    """Mean and population standard deviation of the finite interval lengths."""
    values = np.asarray(lengths, dtype=np.float64)
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise ValidationError("lengths", "none finite", "Need at least one bounded interval")
    return float(values.mean()), float(values.std())


def ablation_adaptivity(report: CoverageReport, bins: int = DEFAULT_BINS) -> AblationResult:
    """
    Histogram of interval lengths and their coefficient of variation.

    Unbounded intervals are left out of both.
    """
    mean, std = length_statistics(report.lengths)
    values = np.asarray(report.lengths, dtype=np.float64)
    values = values[np.isfinite(values)]
    counts, edges = np.histogram(values, bins=bins)
    adaptivity = std / mean if mean > 0 else 0.0
    logger.info(f"Interval lengths: mean={mean:.4g} std={std:.4g} adaptivity={adaptivity:.4g}")
    return AblationResult(
        kind=AblationKind.ADAPTIVITY,
        alpha=report.alpha,
        bin_edges=edges.tolist(),
        counts=counts.tolist(),
        adaptivity=adaptivity,
    )


def ablation_calibration_size(
    pool: TripletDataset,
    n_values: Sequence[int],
    rounds: int,
    alpha: float,
    predictor: PairPredictor,
    score_kind: ScoreKind,
    n_val: Optional[int] = None,
    seed: int = 0,
    progress_manager: Optional[ProgressManager] = None,
) -> AblationResult:
    """
    Coverage distribution versus calibration size.

    Each round shuffles the pool, calibrates on the first n triplets and
    measures coverage on the next ``n_val``. Model outputs are computed once
    for the whole pool.
    """
    n_values = sorted(int(n) for n in n_values)
    if not n_values or n_values[0] < 1:
        raise ValidationError("n_values", n_values, "Need at least one positive calibration size")
    if rounds < 1:
        raise ValidationError.invalid_count("rounds", rounds)
    if n_val is None:
        n_val = len(pool) - n_values[-1]
    if n_val < 1 or len(pool) < n_values[-1] + n_val:
        raise ValidationError(
            "pool",
            len(pool),
            f"Pool must hold at least max(n) + n_val = {n_values[-1] + max(n_val, 1)} triplets",
        )

    a, b = predictor(pool.U, pool.X)
    if score_kind is ScoreKind.CQR:
        scores = np.asarray(cqr_score(a, b, pool.G), dtype=np.float64)
    else:
        scores = np.asarray(normalized_residual_score(a, floor_sigma(b), pool.G), dtype=np.float64)
    rng = np.random.default_rng(seed)
    round_coverages = {n: [] for n in n_values}

    if progress_manager is not None:
        progress_manager.start(rounds * len(n_values), description="Calibration-size ablation")
    for n in n_values:
        k = conformal_rank(n, alpha)
        for _ in range(rounds):
            order = rng.permutation(len(pool))
            calib, val = order[:n], order[n : n + n_val]
            q_hat = conformal_quantile(scores[calib], alpha)
            record = CalibrationRecord(score_kind=score_kind, alpha=alpha, n=n, q_hat=q_hat, k=k)
            interval = predict_interval(record, a[val], b[val])
            round_coverages[n].append(trajectory_coverage(interval, pool.G[val]))
            if progress_manager is not None:
                progress_manager.update()
        values = np.asarray(round_coverages[n])
        if k > n:
            logger.warning(f"n={n} is too small for alpha={alpha}; every interval is unbounded")
        logger.info(f"n={n}: mean coverage {values.mean():.4f}, std {values.std():.4f} over {rounds} rounds")
    if progress_manager is not None:
        progress_manager.finish()

    return AblationResult(
        kind=AblationKind.CALIB_SIZE,
        alpha=alpha,
        n_values=n_values,
        rounds=rounds,
        n_val=n_val,
        round_coverages=round_coverages,
    )
