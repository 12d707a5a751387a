"""
Core data models for conformal DeepONet experiments.

This module contains Pydantic models for:
- MlpSpec / DeepONetSpec: network architecture descriptions
- TrainConfig: optimizer, scheduler and epoch budget
- GrfSpec, PendulumSpec, DiffusionReactionSpec, BurgersSpec, JumpFunctionSpec:
  synthetic problem generators
- CalibrationRecord: a fitted conformal quantile
- CoverageReport / AblationResult: evaluation outputs
- RunConfig: the merged configuration used by the command-line interface
"""

import json
import math
from enum import Enum
from typing import Dict, List, Literal, Optional

import pydantic
from pydantic import field_validator, model_validator


class HeadKind(str, Enum):
    """Output head configuration of a DeepONet."""

    POINT = "point"
    PROB = "prob"
    QUANTILE = "quantile"


class ModelKind(str, Enum):
    """Model kinds accepted by training and evaluation commands."""

    POINT = "point"
    PROB = "prob"
    QUANTILE = "quantile"
    ENSEMBLE = "ensemble"

    @property
    def head_kind(self) -> HeadKind:
        """Head configuration used by this model kind (ensembles use point members)."""
        if self is ModelKind.ENSEMBLE:
            return HeadKind.POINT
        return HeadKind(self.value)


class Problem(str, Enum):
    """Synthetic operator-learning problems."""

    PENDULUM = "pendulum"
    DIFFUSION = "diffusion"
    BURGERS = "burgers"
    JUMP_MF = "jump_mf"


class ScoreKind(str, Enum):
    """Conformal score functions."""

    NORMALIZED_RESIDUAL = "normalized_residual"
    CQR = "cqr"


class Split(str, Enum):
    """Dataset splits; each one draws from its own random stream."""

    TRAIN = "train"
    CALIB = "calib"
    TEST = "test"
    POOL = "pool"

    @property
    def stream(self) -> int:
        return {"train": 0, "calib": 1, "test": 2, "pool": 3}[self.value]


class Fidelity(str, Enum):
    """Fidelity level of the multi-fidelity jump function."""

    LOW = "low"
    HIGH = "high"


class AblationKind(str, Enum):
    """Ablation studies."""

    ADAPTIVITY = "adaptivity"
    CALIB_SIZE = "calib-size"


def _check_alpha(v: float) -> float:
    if not 0.0 < v < 1.0:
        raise ValueError(f"alpha must lie strictly between 0 and 1, got: {v}")
    return v


class MlpSpec(pydantic.BaseModel):
    """Layer sizes of a dense ReLU network, input dimension first."""

    model_config = pydantic.ConfigDict(frozen=True)

    layer_sizes: List[int]
    activation: Literal["relu"] = "relu"

    @field_validator("layer_sizes")
    @classmethod
    def validate_layer_sizes(cls, v: List[int]) -> List[int]:
        if len(v) < 2:
            raise ValueError(f"An MLP needs at least 2 layer sizes, got: {v}")
        if any(size < 1 for size in v):
            raise ValueError(f"Layer sizes must be positive, got: {v}")
        return v

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


class DeepONetSpec(pydantic.BaseModel):
    """
    Architecture of a branch/trunk DeepONet.

    Each sub-network is a stack of shared hidden layers followed, per head,
    by ``head_depth`` independent hidden layers and a linear layer producing
    the K basis coefficients. Point models keep every hidden layer shared.
    """

    model_config = pydantic.ConfigDict(frozen=True)

    m: int
    d: int
    K: int
    branch_width: int
    branch_shared_depth: int
    branch_head_depth: int = 0
    trunk_width: int
    trunk_shared_depth: int
    trunk_head_depth: int = 0
    head_kind: HeadKind = HeadKind.POINT
    include_output_bias: bool = True
    quantile_alpha: Optional[float] = None

    @field_validator("m", "d", "K", "branch_width", "trunk_width", "branch_shared_depth", "trunk_shared_depth")
    @classmethod
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"Must be at least 1, got: {v}")
        return v

    @field_validator("branch_head_depth", "trunk_head_depth")
    @classmethod
    def validate_head_depth(cls, v: int) -> int:
        if v < 0:
            raise ValueError(f"Head depth must be non-negative, got: {v}")
        return v

    @model_validator(mode="after")
    def validate_head_split(self) -> "DeepONetSpec":
        if self.head_kind is HeadKind.POINT and (self.branch_head_depth or self.trunk_head_depth):
            raise ValueError("Point DeepONets keep all hidden layers shared (head depth must be 0)")
        if self.quantile_alpha is not None:
            if self.head_kind is not HeadKind.QUANTILE:
                raise ValueError("quantile_alpha only applies to quantile heads")
            _check_alpha(self.quantile_alpha)
        return self

    @classmethod
    def from_table(
        cls,
        m: int,
        d: int,
        width: int,
        shared_depth: int,
        independent_depth: int,
        head_kind: HeadKind,
        quantile_alpha: Optional[float] = None,
        include_output_bias: bool = True,
    ) -> "DeepONetSpec":
        """Build a spec from the ``shared(independent) x width`` notation, with K = width."""
        if head_kind is HeadKind.POINT:
            shared_depth, independent_depth = shared_depth + independent_depth, 0
        return cls(
            m=m,
            d=d,
            K=width,
            branch_width=width,
            branch_shared_depth=shared_depth,
            branch_head_depth=independent_depth,
            trunk_width=width,
            trunk_shared_depth=shared_depth,
            trunk_head_depth=independent_depth,
            head_kind=head_kind,
            include_output_bias=include_output_bias,
            quantile_alpha=quantile_alpha if head_kind is HeadKind.QUANTILE else None,
        )

    @property
    def head_count(self) -> int:
        return 1 if self.head_kind is HeadKind.POINT else 2

    def branch_shared_spec(self) -> MlpSpec:
        return MlpSpec(layer_sizes=[self.m] + [self.branch_width] * self.branch_shared_depth)

    def branch_head_spec(self) -> MlpSpec:
        return MlpSpec(layer_sizes=[self.branch_width] * (self.branch_head_depth + 1) + [self.K])

    def trunk_shared_spec(self) -> MlpSpec:
        return MlpSpec(layer_sizes=[self.d] + [self.trunk_width] * self.trunk_shared_depth)

    def trunk_head_spec(self) -> MlpSpec:
        return MlpSpec(layer_sizes=[self.trunk_width] * (self.trunk_head_depth + 1) + [self.K])

    def quantile_levels(self) -> tuple[float, float]:
        """Lower and upper quantile levels (alpha/2, 1 - alpha/2) of a quantile model."""
        if self.head_kind is not HeadKind.QUANTILE or self.quantile_alpha is None:
            raise ValueError("Quantile levels are only defined for quantile heads with an alpha")
        return self.quantile_alpha / 2, 1 - self.quantile_alpha / 2


class TrainConfig(pydantic.BaseModel):
    """Optimizer, scheduler and epoch budget for one training run."""

    epochs: int = 500
    batch_size: int = 256
    seed: int = 0
    shuffle_seed: Optional[int] = None
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 20
    factor: float = 0.5
    min_lr: float = 1e-6
    alpha: float = 0.05

    @field_validator("epochs")
    @classmethod
    def validate_epochs(cls, v: int) -> int:
        if v < 0:
            raise ValueError(f"Epoch budget must be non-negative, got: {v}")
        return v

    @field_validator("batch_size", "patience")
    @classmethod
    def validate_positive_int(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"Must be at least 1, got: {v}")
        return v

    @field_validator("learning_rate", "min_lr", "eps")
    @classmethod
    def validate_positive_real(cls, v: float) -> float:
        if not v > 0:
            raise ValueError(f"Must be positive, got: {v}")
        return v

    @field_validator("factor", "beta1", "beta2")
    @classmethod
    def validate_unit_interval(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError(f"Must lie strictly between 0 and 1, got: {v}")
        return v

    @field_validator("alpha")
    @classmethod
    def validate_alpha(cls, v: float) -> float:
        return _check_alpha(v)

    @property
    def effective_shuffle_seed(self) -> int:
        return self.seed + 7919 if self.shuffle_seed is None else self.shuffle_seed


class GrfSpec(pydantic.BaseModel):
    """Mean-zero Gaussian random field with a squared-exponential kernel."""

    model_config = pydantic.ConfigDict(frozen=True)

    length_scale: float = 0.1
    m: int = 100
    lower: float = 0.0
    upper: float = 1.0
    jitter: float = 1e-10

    @field_validator("length_scale", "jitter")
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError(f"Must be positive, got: {v}")
        return v

    @field_validator("m")
    @classmethod
    def validate_m(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"Sensor count must be at least 1, got: {v}")
        return v

    @model_validator(mode="after")
    def validate_domain(self) -> "GrfSpec":
        if not self.upper > self.lower:
            raise ValueError("Grid must be strictly increasing (upper > lower)")
        return self


class PendulumSpec(pydantic.BaseModel):
    """Forced pendulum ds1/dt = s2, ds2/dt = -k sin(s1) + u(t) from rest."""

    model_config = pydantic.ConfigDict(frozen=True)

    k: float = 1.0
    t_end: float = 1.0
    dt: float = 1e-3
    m: int = 100

    @model_validator(mode="after")
    def validate_step(self) -> "PendulumSpec":
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got: {self.dt}")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-6:
            raise ValueError(f"dt={self.dt} does not divide the time span {self.t_end}")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


class DiffusionReactionSpec(pydantic.BaseModel):
    """
    ds/dt = D s_xx + k s^2 + u(x) on [0, 1] with zero boundary and initial data.

    ``nx`` counts grid intervals, so the grid has nx - 1 interior nodes and
    doubling nx nests the coarse nodes inside the fine grid.
    """

    model_config = pydantic.ConfigDict(frozen=True)

    D: float = 0.01
    k: float = 0.01
    t_end: float = 1.0
    nx: int = 100
    dt: float = 0.002
    m: int = 100

    @model_validator(mode="after")
    def validate_stability(self) -> "DiffusionReactionSpec":
        if self.nx < 2:
            raise ValueError(f"nx must be at least 2, got: {self.nx}")
        if not self.dt > 0 or not self.D > 0:
            raise ValueError("dt and D must be positive")
        bound = self.dx**2 / (2 * self.D)
        if self.dt > bound * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds the explicit stability bound dx^2/(2D)={bound:.3g}")
        return self

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_end / self.dt - 1e-9))


class BurgersSpec(pydantic.BaseModel):
    """Viscous Burgers equation on the periodic interval [0, 2 pi)."""

    model_config = pydantic.ConfigDict(frozen=True)

    viscosity: float = 0.05
    t_end: float = 0.3
    nx: int = 128
    dt: float = 2e-4
    m: int = 100
    weight_range: tuple[float, float] = (0.0, 5.0)
    mean_range: tuple[float, float] = (0.0, 2 * math.pi)
    std_range: tuple[float, float] = (0.1, 1.0)

    @model_validator(mode="after")
    def validate_grid(self) -> "BurgersSpec":
        if self.nx < 4 or self.nx % 2:
            raise ValueError(f"nx must be an even number >= 4, got: {self.nx}")
        if not self.dt > 0 or not self.viscosity > 0:
            raise ValueError("dt and viscosity must be positive")
        return self

    @property
    def length(self) -> float:
        return 2 * math.pi

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_end / self.dt - 1e-9))


class JumpFunctionSpec(pydantic.BaseModel):
    """Multi-fidelity jump function with inputs u(x) = a x - 4."""

    model_config = pydantic.ConfigDict(frozen=True)

    a_low: float = 10.0
    a_high: float = 14.0
    m: int = 100

    @model_validator(mode="after")
    def validate_range(self) -> "JumpFunctionSpec":
        if not self.a_high >= self.a_low:
            raise ValueError("a_high must not be below a_low")
        return self


class CalibrationRecord(pydantic.BaseModel):
    """
    A fitted conformal quantile and the settings it was fitted with.

    ``n_eval`` is the number of points per test trajectory the record is meant
    for; records without it are applied to any trajectory file.
    """

    score_kind: ScoreKind
    alpha: float
    n: int
    q_hat: float
    k: int
    n_eval: Optional[int] = None

    @field_validator("alpha")
    @classmethod
    def validate_alpha(cls, v: float) -> float:
        return _check_alpha(v)

    @field_validator("n")
    @classmethod
    def validate_n(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"Calibration size must be at least 1, got: {v}")
        return v

    @field_validator("n_eval")
    @classmethod
    def validate_n_eval(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError(f"Points per trajectory must be at least 1, got: {v}")
        return v

    @field_validator("q_hat")
    @classmethod
    def validate_q_hat(cls, v: float) -> float:
        if math.isnan(v) or v == -math.inf:
            raise ValueError(f"q_hat must be a real number or +inf, got: {v}")
        return v

    @property
    def is_bounded(self) -> bool:
        return math.isfinite(self.q_hat)

    def to_json(self) -> str:
        payload = {
            "score_kind": self.score_kind.value,
            "alpha": self.alpha,
            "n": self.n,
            "q_hat": self.q_hat if self.is_bounded else "inf",
            "k": self.k,
        }
        if self.n_eval is not None:
            payload["n_eval"] = self.n_eval
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CalibrationRecord":
        payload = json.loads(text)
        if payload.get("q_hat") == "inf":
            payload["q_hat"] = math.inf
        return cls(**payload)


class CoverageReport(pydantic.BaseModel):
    """Per-trajectory coverages and interval lengths of one model on one test set."""

    model: str
    alpha: float
    conformalized: bool
    coverages: List[float]
    lengths: List[float]
    n_traj: int
    n_eval: int
    unbounded_count: int = 0

    @field_validator("coverages")
    @classmethod
    def validate_coverages(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("A coverage report needs at least one trajectory")
        if any(not 0.0 <= c <= 1.0 for c in v):
            raise ValueError("Every trajectory coverage must lie in [0, 1]")
        return v

    @property
    def mean_coverage(self) -> float:
        return sum(self.coverages) / len(self.coverages)

    @property
    def mean_length(self) -> float:
        finite = [length for length in self.lengths if math.isfinite(length)]
        return sum(finite) / len(finite) if finite else math.inf


class AblationResult(pydantic.BaseModel):
    """Output of an ablation study; only the fields of its kind are populated."""

    kind: AblationKind
    alpha: Optional[float] = None
    n_values: List[int] = []
    rounds: int = 0
    n_val: int = 0
    round_coverages: Dict[int, List[float]] = {}
    bin_edges: List[float] = []
    counts: List[int] = []
    adaptivity: Optional[float] = None

    @model_validator(mode="after")
    def validate_rounds(self) -> "AblationResult":
        for n, values in self.round_coverages.items():
            if len(values) != self.rounds:
                raise ValueError(f"Expected {self.rounds} round coverages for n={n}, got {len(values)}")
            if any(not 0.0 <= c <= 1.0 for c in values):
                raise ValueError(f"Round coverages for n={n} must lie in [0, 1]")
        return self


PROBLEM_PRESETS: Dict[Problem, Dict[str, object]] = {
    Problem.PENDULUM: {
        "n_train": 5000, "n_calib": 500, "width": 100,
        "shared_depth": 3, "independent_depth": 1, "epochs": 500,
    },
    Problem.DIFFUSION: {
        "n_train": 10000, "n_calib": 1000, "width": 100,
        "shared_depth": 4, "independent_depth": 1, "epochs": 500,
    },
    Problem.BURGERS: {
        "n_train": 30000, "n_calib": 3000, "width": 128,
        "shared_depth": 5, "independent_depth": 1, "epochs": 300,
    },
    Problem.JUMP_MF: {
        "n_train": 760, "n_low": 3800, "n_calib": 380, "width": 64,
        "shared_depth": 2, "independent_depth": 1, "epochs": 500,
    },
}


class RunConfig(pydantic.BaseModel):
    """Merged configuration (preset, config file, command-line flags) of one run."""

    problem: Problem = Problem.PENDULUM
    model_kind: ModelKind = ModelKind.PROB
    alpha: float = 0.05
    n_train: int = 5000
    n_calib: int = 500
    n_low: int = 3800
    n_traj: int = 100
    n_eval: int = 100
    m: int = 100
    width: int = 100
    shared_depth: int = 3
    independent_depth: int = 1
    include_output_bias: bool = True
    epochs: int = 500
    batch_size: int = 256
    learning_rate: float = 1e-3
    patience: int = 20
    factor: float = 0.5
    min_lr: float = 1e-6
    ensemble_size: int = 10
    seed_data: int = 1
    seed_init: int = 0
    seed_shuffle: Optional[int] = None
    n_val: int = 2000
    ablation_n_values: List[int] = [500, 1000, 5000, 10000]
    ablation_rounds: int = 200
    histogram_bins: int = 20
    threads: int = 1

    @field_validator("alpha")
    @classmethod
    def validate_alpha(cls, v: float) -> float:
        return _check_alpha(v)

    @field_validator(
        "n_train", "n_calib", "n_low", "n_traj", "n_eval", "m", "width", "shared_depth",
        "batch_size", "patience", "n_val", "ablation_rounds", "histogram_bins", "threads",
    )
    @classmethod
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"Must be at least 1, got: {v}")
        return v

    @field_validator("ensemble_size")
    @classmethod
    def validate_ensemble_size(cls, v: int) -> int:
        if v < 2:
            raise ValueError(f"An ensemble needs at least 2 members, got: {v}")
        return v

    @field_validator("independent_depth", "epochs")
    @classmethod
    def validate_non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError(f"Must be non-negative, got: {v}")
        return v

    @field_validator("ablation_n_values", mode="before")
    @classmethod
    def parse_n_values(cls, v: object) -> object:
        if isinstance(v, str):
            v = [int(part) for part in v.split(",") if part.strip()]
        if isinstance(v, list) and any(int(n) < 1 for n in v):
            raise ValueError("Calibration sizes must be positive")
        return v

    @classmethod
    def for_problem(cls, problem: Problem, **overrides: object) -> "RunConfig":
        """Start from the problem's preset and apply overrides."""
        values: Dict[str, object] = {"problem": problem, **PROBLEM_PRESETS[problem]}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def deeponet_spec(self, m: int, d: int, head_kind: HeadKind) -> DeepONetSpec:
        return DeepONetSpec.from_table(
            m=m,
            d=d,
            width=self.width,
            shared_depth=self.shared_depth,
            independent_depth=self.independent_depth,
            head_kind=head_kind,
            quantile_alpha=self.alpha if head_kind is HeadKind.QUANTILE else None,
            include_output_bias=self.include_output_bias,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed_init,
            shuffle_seed=self.seed_shuffle,
            learning_rate=self.learning_rate,
            patience=self.patience,
            factor=self.factor,
            min_lr=self.min_lr,
            alpha=self.alpha,
        )
