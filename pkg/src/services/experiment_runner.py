"""
End-to-end experiment pipelines.

generate data -> train -> calibrate -> evaluate, for one problem and model
kind, producing a conformalized report and a non-conformal baseline report
over the same test trajectories. The multi-fidelity pipeline trains a
low-fidelity point model first and a prob model on the high-fidelity residual.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from models import (
    PROBLEM_PRESETS,
    AblationResult,
    CalibrationRecord,
    CoverageReport,
    Fidelity,
    HeadKind,
    ModelKind,
    Problem,
    RunConfig,
    Split,
)
from services.conformal import (
    check_record_trajectories,
    conformalize,
    predict_interval,
    predictor_for,
    raw_interval,
    score_kind_for,
)
from services.coverage_metrics import (
    TrajectoryIntervals,
    ablation_adaptivity,
    ablation_calibration_size,
    coverage_report,
    pick_trajectory,
    trajectory_intervals,
)
from services.datagen import ProblemGenerator, assemble_dataset, assemble_trajectories
from services.datasets import TrajectoryDataset, TripletDataset
from services.operator_nets import (
    AnyModel,
    DeepONetModel,
    MultiFidelityModel,
    check_dataset_dims,
    deeponet_eval,
    model_kind_name,
)
from services.training import Trainer, TrainingResult, train_ensemble_with_history
from utils.errors import IncompatibleArtifactsError, InsufficientCalibrationError, ValidationError
from utils.progress import ProgressInfo, ProgressManager, ProgressPhase

logger = logging.getLogger(__name__)


@dataclass
class ExperimentData:
    """Training, calibration and test splits of one run."""

    train: TripletDataset
    calib: TripletDataset
    test: TrajectoryDataset
    low_fidelity: Optional[TripletDataset] = None


@dataclass
class ExperimentResult:
    """Everything one pipeline run produces."""

    model: AnyModel
    record: CalibrationRecord
    conformal: CoverageReport
    baseline: CoverageReport
    histories: List[TrainingResult] = field(default_factory=list)
    trajectory: Optional[TrajectoryIntervals] = None


def evaluate_model(
    model: AnyModel, record: CalibrationRecord, test: TrajectoryDataset
) -> Tuple[CoverageReport, CoverageReport]:
    """Conformalized and baseline reports of ``model`` on the test trajectories."""
    check_dataset_dims(model, test.m, test.d, "test set")
    check_record_trajectories(record, test.n_eval)
    flat = test.flatten()
    a, b = predictor_for(model)(flat.U, flat.X)
    shape = (test.n_traj, test.n_eval)
    conf = predict_interval(record, a, b)
    base = raw_interval(score_kind_for(model), a, b, record.alpha)
    name = model_kind_name(model)
    conformal = coverage_report(
        name, record.alpha, True, np.reshape(conf.lo, shape), np.reshape(conf.hi, shape), test.G
    )
    baseline = coverage_report(
        name, record.alpha, False, np.reshape(base.lo, shape), np.reshape(base.hi, shape), test.G
    )
    logger.info(
        f"{name}: conformalized coverage {conformal.mean_coverage:.4f}, baseline {baseline.mean_coverage:.4f}"
    )
    return conformal, baseline


def require_bounded(record: CalibrationRecord) -> None:
    if not record.is_bounded:
        raise InsufficientCalibrationError(record.n, record.alpha, record.k)


class ExperimentRunner:
    """Runs the pipeline of one RunConfig."""

    def __init__(self, config: RunConfig, progress_manager: Optional[ProgressManager] = None):
        self.config = config
        self.progress_manager = progress_manager
        self.info = ProgressInfo(ProgressPhase.INITIALIZING)

    def _phase(self, phase: ProgressPhase) -> None:
        self.info.enter(phase, f"{self.config.problem.value}: {phase}")
        logger.info(f"Phase: {self.info.phase_description}")

    def generator(self, fidelity: Fidelity = Fidelity.HIGH) -> ProblemGenerator:
        return ProblemGenerator(self.config.problem, m=self.config.m, fidelity=fidelity)

    def generate_data(self) -> ExperimentData:
        cfg = self.config
        self._phase(ProgressPhase.GENERATING_DATA)
        high = self.generator()
        common = {"generator": high, "max_workers": cfg.threads, "progress_manager": self.progress_manager}
        train = assemble_dataset(cfg.problem, cfg.n_train, cfg.seed_data, Split.TRAIN, **common)
        calib = assemble_dataset(cfg.problem, cfg.n_calib, cfg.seed_data, Split.CALIB, **common)
        test = assemble_trajectories(cfg.problem, cfg.n_traj, cfg.n_eval, cfg.seed_data, Split.TEST, **common)
        low = None
        if cfg.problem is Problem.JUMP_MF:
            low = assemble_dataset(
                cfg.problem,
                cfg.n_low,
                cfg.seed_data,
                Split.TRAIN,
                generator=self.generator(Fidelity.LOW),
                max_workers=cfg.threads,
            )
        return ExperimentData(train, calib, test, low)

    def train(self, kind: ModelKind, data: TripletDataset) -> Tuple[AnyModel, List[TrainingResult]]:
        """Train a model of the requested kind with the configured architecture."""
        cfg = self.config
        self._phase(ProgressPhase.TRAINING)
        spec = cfg.deeponet_spec(data.m, data.d, kind.head_kind)
        if kind is ModelKind.ENSEMBLE:
            model, histories = train_ensemble_with_history(
                cfg.ensemble_size, data, spec, cfg.train_config(), max_workers=cfg.threads
            )
            return model, histories
        result = Trainer(spec, cfg.train_config(), self.progress_manager).fit(data)
        return result.model, [result]

    def train_residual(
        self, low_model: AnyModel, high: TripletDataset
    ) -> Tuple[MultiFidelityModel, TrainingResult]:
        """Prob model on the high-fidelity residual y_H - y_LF_hat, initialized with seed_init + 1."""
        cfg = self.config
        if not isinstance(low_model, DeepONetModel) or low_model.spec.head_kind is not HeadKind.POINT:
            raise IncompatibleArtifactsError(
                f"the low-fidelity model must be a point DeepONet, got {model_kind_name(low_model)}"
            )
        check_dataset_dims(low_model, high.m, high.d, "high-fidelity training set")
        residual_targets = high.G - np.atleast_1d(deeponet_eval(low_model, high.U, high.X))
        residual_data = high.with_targets(residual_targets)
        spec = cfg.deeponet_spec(residual_data.m, residual_data.d, HeadKind.PROB)
        train_cfg = cfg.train_config().model_copy(update={"seed": cfg.seed_init + 1})
        residual = Trainer(spec, train_cfg, self.progress_manager).fit(residual_data)
        return MultiFidelityModel(low_model, residual.model), residual

    def calibrate(self, model: AnyModel, calib: TripletDataset) -> CalibrationRecord:
        self._phase(ProgressPhase.CALIBRATING)
        check_dataset_dims(model, calib.m, calib.d, "calibration set")
        record = conformalize(model, calib, self.config.alpha)
        return record.model_copy(update={"n_eval": self.config.n_eval})

    def example_trajectory(
        self, model: AnyModel, record: CalibrationRecord, test: TrajectoryDataset
    ) -> TrajectoryIntervals:
        """Intervals along one test trajectory chosen from the data seed."""
        return trajectory_intervals(model, record, test, pick_trajectory(test.n_traj, self.config.seed_data))

    def run(self, data: Optional[ExperimentData] = None) -> ExperimentResult:
        """Single-fidelity pipeline for the configured problem and model kind."""
        cfg = self.config
        if cfg.problem is Problem.JUMP_MF:
            return self.run_multifidelity(data)
        if cfg.model_kind is ModelKind.POINT:
            raise ValidationError(
                "model_kind", cfg.model_kind.value, "Point models have no uncertainty estimate to conformalize"
            )
        data = data or self.generate_data()
        model, histories = self.train(cfg.model_kind, data.train)
        record = self.calibrate(model, data.calib)
        require_bounded(record)
        self._phase(ProgressPhase.EVALUATING)
        conformal, baseline = evaluate_model(model, record, data.test)
        trajectory = self.example_trajectory(model, record, data.test)
        self._phase(ProgressPhase.COMPLETED)
        return ExperimentResult(model, record, conformal, baseline, histories, trajectory)

    def run_multifidelity(self, data: Optional[ExperimentData] = None) -> ExperimentResult:
        """
        Low-fidelity point model, prob model on y_H - y_LF_hat, recombined
        predictor N(mu + y_LF_hat, sigma), then normalized-residual calibration.
        """
        cfg = self.config
        data = data or self.generate_data()
        if data.low_fidelity is None:
            raise ValidationError("low_fidelity", None, "Multi-fidelity runs need low-fidelity training data")
        self._phase(ProgressPhase.TRAINING)
        low_spec = cfg.deeponet_spec(data.low_fidelity.m, data.low_fidelity.d, HeadKind.POINT)
        low = Trainer(low_spec, cfg.train_config(), self.progress_manager).fit(data.low_fidelity)
        model, residual = self.train_residual(low.model, data.train)

        record = self.calibrate(model, data.calib)
        require_bounded(record)
        self._phase(ProgressPhase.EVALUATING)
        conformal, baseline = evaluate_model(model, record, data.test)
        trajectory = self.example_trajectory(model, record, data.test)
        self._phase(ProgressPhase.COMPLETED)
        return ExperimentResult(model, record, conformal, baseline, [low, residual], trajectory)

    def ablation_pool(self) -> TripletDataset:
        cfg = self.config
        size = max(cfg.ablation_n_values) + cfg.n_val
        return assemble_dataset(
            cfg.problem, size, cfg.seed_data, Split.POOL, generator=self.generator(), max_workers=cfg.threads
        )

    def run_calibration_size_ablation(self, model: AnyModel, pool: Optional[TripletDataset] = None) -> AblationResult:
        cfg = self.config
        self._phase(ProgressPhase.ABLATING)
        if pool is None:
            pool = self.ablation_pool()
        check_dataset_dims(model, pool.m, pool.d, "ablation pool")
        return ablation_calibration_size(
            pool,
            cfg.ablation_n_values,
            cfg.ablation_rounds,
            cfg.alpha,
            predictor_for(model),
            score_kind_for(model),
            n_val=cfg.n_val,
            seed=cfg.seed_data,
            progress_manager=self.progress_manager,
        )

    def run_adaptivity_ablation(self, report: CoverageReport) -> AblationResult:
        self._phase(ProgressPhase.ABLATING)
        return ablation_adaptivity(report, self.config.histogram_bins)


def run_experiment(config: RunConfig, progress_manager: Optional[ProgressManager] = None) -> ExperimentResult:
    """Conformalized and baseline reports for ``config.problem`` and ``config.model_kind``."""
    return ExperimentRunner(config, progress_manager).run()


def multifidelity_config(config: RunConfig) -> RunConfig:
    """
    ``config`` moved onto the jump-function problem.

    Sizes and architecture come from the jump-function preset; every other
    setting is kept.
    """
    if config.problem is Problem.JUMP_MF:
        return config
    preset_keys = {"problem", *PROBLEM_PRESETS[config.problem], *PROBLEM_PRESETS[Problem.JUMP_MF]}
    return RunConfig.for_problem(Problem.JUMP_MF, **config.model_dump(exclude=preset_keys))


def run_multifidelity(config: RunConfig, progress_manager: Optional[ProgressManager] = None) -> ExperimentResult:
    return ExperimentRunner(multifidelity_config(config), progress_manager).run_multifidelity()
