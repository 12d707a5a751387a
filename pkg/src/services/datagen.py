"""
Dataset assembly for the synthetic operator-learning problems.

Training, calibration and pool splits pair every sampled input function with
one uniformly random evaluation point; test trajectories evaluate each input
on a uniform mesh. Every split draws from its own child stream of
``SeedSequence(seed)``, so the same user seed never reuses an input function
across splits.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from models import (
    BurgersSpec,
    DiffusionReactionSpec,
    Fidelity,
    GrfSpec,
    JumpFunctionSpec,
    PendulumSpec,
    Problem,
    Split,
)
from services.datasets import TrajectoryDataset, TripletDataset
from services.solvers import (
    burgers_sensor_grid,
    jump_fidelity_eval,
    jump_sensor_grid,
    sample_burgers_ic,
    sample_grf_batch,
    solve_burgers_batch,
    solve_diffusion_reaction_batch,
    solve_pendulum_batch,
)
from utils.errors import SolverInstabilityError, ValidationError
from utils.progress import ProgressManager

logger = logging.getLogger(__name__)

DEFAULT_CHUNK = 500


def split_seed(seed: int, split: Split, fidelity: Optional[Fidelity] = None) -> np.random.SeedSequence:
    """Independent random stream for one (seed, split[, fidelity]) combination."""
    key: Tuple[int, ...] = (split.stream,)
    if fidelity is Fidelity.LOW:
        key += (1,)
    return np.random.SeedSequence(seed, spawn_key=key)


@dataclass
class ProblemGenerator:
    """Input sampler and reference target map of one problem."""

    problem: Problem
    m: int = 100
    fidelity: Fidelity = Fidelity.HIGH
    grf: GrfSpec = field(default_factory=GrfSpec)
    pendulum: PendulumSpec = field(default_factory=PendulumSpec)
    diffusion: DiffusionReactionSpec = field(default_factory=DiffusionReactionSpec)
    burgers: BurgersSpec = field(default_factory=BurgersSpec)
    jump: JumpFunctionSpec = field(default_factory=JumpFunctionSpec)

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ValidationError.invalid_count("m", self.m)
        # Sensor counts follow the generator's m.
        self.grf = self.grf.model_copy(update={"m": self.m})
        self.pendulum = self.pendulum.model_copy(update={"m": self.m})
        self.diffusion = self.diffusion.model_copy(update={"m": self.m})
        self.burgers = self.burgers.model_copy(update={"m": self.m})
        self.jump = self.jump.model_copy(update={"m": self.m})
        if self.fidelity is Fidelity.LOW and self.problem is not Problem.JUMP_MF:
            raise ValidationError("fidelity", self.fidelity.value, "Only the jump_mf problem has a low fidelity")

    @property
    def d(self) -> int:
        return 1

    @property
    def domain(self) -> Tuple[float, float]:
        if self.problem is Problem.PENDULUM:
            return 0.0, self.pendulum.t_end
        if self.problem is Problem.BURGERS:
            return 0.0, self.burgers.length
        return 0.0, 1.0

    @property
    def solver_dt(self) -> float:
        if self.problem is Problem.PENDULUM:
            return self.pendulum.dt
        if self.problem is Problem.DIFFUSION:
            return self.diffusion.dt
        if self.problem is Problem.BURGERS:
            return self.burgers.dt
        return 0.0

    def sample_inputs(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """``count`` discretized input functions of shape (count, m)."""
        if self.problem in (Problem.PENDULUM, Problem.DIFFUSION):
            return sample_grf_batch(self.grf, count, rng)
        if self.problem is Problem.BURGERS:
            return np.stack([sample_burgers_ic(rng, self.burgers) for _ in range(count)])
        a = rng.uniform(self.jump.a_low, self.jump.a_high, size=count)
        return a[:, np.newaxis] * jump_sensor_grid(self.jump) - 4.0

    def sensor_grid(self) -> np.ndarray:
        if self.problem is Problem.BURGERS:
            return burgers_sensor_grid(self.burgers)
        if self.problem is Problem.JUMP_MF:
            return jump_sensor_grid(self.jump)
        return np.linspace(0.0, 1.0, self.m)

    def targets(self, U: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Reference outputs G(u_b)(X[b, e]) for inputs U (B, m) and points X (B, E)."""
        if self.problem is Problem.PENDULUM:
            return solve_pendulum_batch(U, self.pendulum).evaluate(X)
        if self.problem is Problem.DIFFUSION:
            return solve_diffusion_reaction_batch(U, self.diffusion).evaluate(X)
        if self.problem is Problem.BURGERS:
            return solve_burgers_batch(U, self.burgers).evaluate(X)
        # u(1) = a - 4 recovers the slope.
        a = U[:, -1:] + 4.0
        y_low, y_high = jump_fidelity_eval(a, X)
        return y_low if self.fidelity is Fidelity.LOW else y_high


def _solve_chunks(
    generator: ProblemGenerator,
    U: np.ndarray,
    X: np.ndarray,
    seed: int,
    chunk: int,
    max_workers: int,
    progress_manager: Optional[ProgressManager],
) -> np.ndarray:
    starts = list(range(0, U.shape[0], chunk))

    def solve(start: int) -> np.ndarray:
        try:
            return generator.targets(U[start : start + chunk], X[start : start + chunk])
        except SolverInstabilityError as e:
            raise SolverInstabilityError(e.solver, e.dt, seed) from e

    if progress_manager is not None:
        progress_manager.start(len(starts), description=f"Solving {generator.problem.value}")

    results: List[np.ndarray] = []
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for block in pool.map(solve, starts):
                results.append(block)
                if progress_manager is not None:
                    progress_manager.update()
    else:
        for start in starts:
            results.append(solve(start))
            if progress_manager is not None:
                progress_manager.update()
    if progress_manager is not None:
        progress_manager.finish()
    return np.concatenate(results, axis=0)


def assemble_dataset(
    problem: Problem,
    count: int,
    seed: int,
    split: Split = Split.TRAIN,
    fidelity: Fidelity = Fidelity.HIGH,
    generator: Optional[ProblemGenerator] = None,
    chunk: int = DEFAULT_CHUNK,
    max_workers: int = 1,
    progress_manager: Optional[ProgressManager] = None,
) -> TripletDataset:
    """``count`` triplets, one uniformly random evaluation point per input function."""
    if count < 1:
        raise ValidationError.invalid_count("count", count)
    generator = generator or ProblemGenerator(problem, fidelity=fidelity)
    rng = np.random.default_rng(split_seed(seed, split, generator.fidelity))
    U = generator.sample_inputs(count, rng)
    lo, hi = generator.domain
    X = rng.uniform(lo, hi, size=(count, 1))
    G = _solve_chunks(generator, U, X, seed, chunk, max_workers, progress_manager)[:, 0]
    logger.info(f"Assembled {count} {problem.value} triplets ({split.value}, seed {seed})")
    return TripletDataset(U, X, G)


def evaluation_mesh(generator: ProblemGenerator, n_eval: int) -> np.ndarray:
    lo, hi = generator.domain
    return np.linspace(lo, hi, n_eval)


def assemble_trajectories(
    problem: Problem,
    n_traj: int,
    n_eval: int = 100,
    seed: int = 0,
    split: Split = Split.TEST,
    fidelity: Fidelity = Fidelity.HIGH,
    generator: Optional[ProblemGenerator] = None,
    chunk: int = DEFAULT_CHUNK,
    max_workers: int = 1,
    progress_manager: Optional[ProgressManager] = None,
) -> TrajectoryDataset:
    """``n_traj`` input functions, each evaluated on a uniform mesh of ``n_eval`` points."""
    if n_traj < 1:
        raise ValidationError.invalid_count("n_traj", n_traj)
    if n_eval < 1:
        raise ValidationError.invalid_count("n_eval", n_eval)
    generator = generator or ProblemGenerator(problem, fidelity=fidelity)
    rng = np.random.default_rng(split_seed(seed, split, generator.fidelity))
    U = generator.sample_inputs(n_traj, rng)
    X = np.tile(evaluation_mesh(generator, n_eval), (n_traj, 1))
    G = _solve_chunks(generator, U, X, seed, chunk, max_workers, progress_manager)
    logger.info(f"Assembled {n_traj} {problem.value} trajectories x {n_eval} points ({split.value}, seed {seed})")
    return TrajectoryDataset(U, X, G)
