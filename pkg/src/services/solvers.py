"""
Input-function samplers and reference solvers for the synthetic problems.

- Gaussian random fields with a squared-exponential kernel (Cholesky factor)
- forced pendulum ODE (classical RK4)
- diffusion-reaction PDE (central differences in space, RK4 in time)
- viscous Burgers PDE (Fourier pseudo-spectral, 2/3 dealiasing, RK4)
- the two-fidelity jump function

Solvers take a batch of discretized inputs of shape (B, m) and return a
solution object that evaluates the output function at per-row query points.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Tuple, Union

import numpy as np
from numpy.linalg import LinAlgError
from scipy.interpolate import CubicSpline
from scipy.linalg import cholesky
from scipy.signal import resample

from models import BurgersSpec, DiffusionReactionSpec, GrfSpec, JumpFunctionSpec, PendulumSpec
from utils.errors import FactorizationError, ShapeError, SolverInstabilityError

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]

INSTABILITY_THRESHOLD = 1e6


def _as_batch(U: np.ndarray, m: int, what: str) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[np.newaxis, :]
    if U.ndim != 2 or U.shape[1] != m:
        raise ShapeError(what, f"(*, {m})", U.shape)
    return U


def _queries(X: np.ndarray, rows: int) -> Tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    if rows == 1 and X.ndim < 2:
        return X.reshape(1, -1), True
    if X.ndim == 1:
        X = X[:, np.newaxis]
    if X.ndim != 2 or X.shape[0] != rows:
        raise ShapeError("query points", f"({rows}, n_eval)", X.shape)
    return X, False


@dataclass
class GridSolution:
    """Output functions tabulated on a common grid, linearly interpolated."""

    grid: np.ndarray
    values: np.ndarray

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Values at per-row query points X of shape (B, n_eval)."""
        X, _ = _queries(X, self.values.shape[0])
        X = np.clip(X, self.grid[0], self.grid[-1])
        idx = np.clip(np.searchsorted(self.grid, X, side="right") - 1, 0, self.grid.size - 2)
        left, right = self.grid[idx], self.grid[idx + 1]
        w = (X - left) / (right - left)
        rows = np.arange(self.values.shape[0])[:, np.newaxis]
        return self.values[rows, idx] * (1.0 - w) + self.values[rows, idx + 1] * w

    def __call__(self, x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Evaluate a single-input solution at a point or an array of points."""
        out = self.evaluate(np.atleast_1d(x).reshape(1, -1))[0]
        return float(out[0]) if np.ndim(x) == 0 else out


@dataclass
class SpectralSolution:
    """Periodic output functions stored as rfft coefficients of an n-point grid."""

    coefficients: np.ndarray
    n: int
    length: float = 2.0 * math.pi

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n, endpoint=False)

    @property
    def values(self) -> np.ndarray:
        return np.fft.irfft(self.coefficients, n=self.n, axis=1)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Trigonometric interpolant at per-row query points X of shape (B, n_eval)."""
        X, _ = _queries(X, self.coefficients.shape[0])
        k = np.arange(self.coefficients.shape[1])
        weights = np.full(k.size, 2.0)
        weights[0] = 1.0
        if self.n % 2 == 0:
            weights[-1] = 1.0
        phase = np.exp(1j * (2.0 * math.pi / self.length) * X[:, :, np.newaxis] * k)
        terms = (self.coefficients * weights)[:, np.newaxis, :] * phase
        return terms.real.sum(axis=2) / self.n

    def __call__(self, x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        out = self.evaluate(np.atleast_1d(x).reshape(1, -1))[0]
        return float(out[0]) if np.ndim(x) == 0 else out


def rbf_kernel(t1: np.ndarray, t2: np.ndarray, length_scale: float) -> np.ndarray:
    """exp(-(t1 - t2)^2 / (2 l^2)) for every pair."""
    diff = np.subtract.outer(np.asarray(t1, dtype=np.float64), np.asarray(t2, dtype=np.float64))
    return np.exp(-(diff**2) / (2.0 * length_scale**2))


def grf_grid(spec: GrfSpec) -> np.ndarray:
    return np.linspace(spec.lower, spec.upper, spec.m)


@lru_cache(maxsize=16)
def grf_factor(spec: GrfSpec) -> np.ndarray:
    """Lower Cholesky factor of the kernel matrix plus jitter on the diagonal."""
    t = grf_grid(spec)
    cov = rbf_kernel(t, t, spec.length_scale) + spec.jitter * np.eye(spec.m)
    try:
        return cholesky(cov, lower=True)
    except LinAlgError as e:
        raise FactorizationError(spec.length_scale, spec.jitter, e) from e


def sample_grf_batch(spec: GrfSpec, count: int, seed: SeedLike) -> np.ndarray:
    """``count`` independent draws of shape (count, m)."""
    L = grf_factor(spec)
    z = np.random.default_rng(seed).standard_normal((count, spec.m))
    return z @ L.T


def sample_grf(spec: GrfSpec, seed: SeedLike) -> np.ndarray:
    """One draw from N(0, K + jitter I) on the sensor grid."""
    return sample_grf_batch(spec, 1, seed)[0]


def _rk4_step(f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + h / 2.0, y + h / 2.0 * k1)
    k3 = f(t + h / 2.0, y + h / 2.0 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def _check_stable(y: np.ndarray, solver: str, dt: float) -> None:
    if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > INSTABILITY_THRESHOLD:
        raise SolverInstabilityError(solver, dt)


def pendulum_sensor_grid(spec: PendulumSpec) -> np.ndarray:
    return np.linspace(0.0, spec.t_end, spec.m)


def solve_pendulum_batch(U: np.ndarray, spec: PendulumSpec) -> GridSolution:
    """
    s1(t) for each forcing row of U.

    Integration runs segment by segment between consecutive sensor times, where
    the linearly interpolated forcing is smooth, with the largest uniform step
    not exceeding ``spec.dt`` inside each segment.
    """
    U = _as_batch(U, spec.m, "pendulum forcing")
    sensors = pendulum_sensor_grid(spec)
    s1 = np.zeros(U.shape[0])
    s2 = np.zeros(U.shape[0])
    times, states = [0.0], [s1]
    for j in range(spec.m - 1):
        t0, t1 = sensors[j], sensors[j + 1]
        substeps = max(1, math.ceil((t1 - t0) / spec.dt - 1e-9))
        h = (t1 - t0) / substeps
        u0, u1 = U[:, j], U[:, j + 1]

        def rhs(t: float, y: np.ndarray) -> np.ndarray:
            w = (t - t0) / (t1 - t0)
            forcing = u0 * (1.0 - w) + u1 * w
            return np.stack([y[1], -spec.k * np.sin(y[0]) + forcing])

        y = np.stack([s1, s2])
        for step in range(substeps):
            t = t0 + step * h
            y = _rk4_step(rhs, t, y, h)
            times.append(t1 if step == substeps - 1 else t + h)
            states.append(y[0])
        _check_stable(y, "pendulum", h)
        s1, s2 = y[0], y[1]
    return GridSolution(np.array(times), np.stack(states, axis=1))


def solve_pendulum(u: np.ndarray, spec: PendulumSpec) -> GridSolution:
    """RK4 trajectory of the forced pendulum started from rest."""
    return solve_pendulum_batch(np.asarray(u)[np.newaxis, :], spec)


def diffusion_grid(spec: DiffusionReactionSpec) -> np.ndarray:
    """nx + 1 nodes on [0, 1] spaced dx = 1 / nx; the nx - 1 interior nodes carry the unknowns."""
    return np.arange(spec.nx + 1) / spec.nx


def solve_diffusion_reaction_batch(U: np.ndarray, spec: DiffusionReactionSpec) -> GridSolution:
    """
    Terminal profiles s(., t_end) with s = 0 on the boundary and at t = 0.

    Sensor values are interpolated onto the nodes with a cubic spline.
    """
    U = _as_batch(U, spec.m, "diffusion source")
    x = diffusion_grid(spec)
    forcing = CubicSpline(np.linspace(0.0, 1.0, spec.m), U, axis=1)(x[1:-1])
    coeff = spec.D / spec.dx**2

    def rhs(_t: float, s: np.ndarray) -> np.ndarray:
        padded = np.pad(s, ((0, 0), (1, 1)))
        laplacian = padded[:, :-2] - 2.0 * s + padded[:, 2:]
        return coeff * laplacian + spec.k * s**2 + forcing

    n_steps = spec.n_steps
    h = spec.t_end / n_steps
    s = np.zeros_like(forcing)
    for step in range(n_steps):
        s = _rk4_step(rhs, step * h, s, h)
        _check_stable(s, "diffusion-reaction", h)
    logger.debug(f"Diffusion-reaction: {n_steps} RK4 steps on {spec.nx} intervals for {U.shape[0]} inputs")
    return GridSolution(x, np.pad(s, ((0, 0), (1, 1))))


def solve_diffusion_reaction(u: np.ndarray, spec: DiffusionReactionSpec) -> GridSolution:
    return solve_diffusion_reaction_batch(np.asarray(u)[np.newaxis, :], spec)


def burgers_sensor_grid(spec: BurgersSpec) -> np.ndarray:
    """Periodic sensor points; the endpoint 2 pi coincides with 0."""
    return np.linspace(0.0, spec.length, spec.m, endpoint=False)


def _periodic_gaussian(x: np.ndarray, mean: float, std: float, length: float) -> np.ndarray:
    shifts = np.arange(-2, 3) * length
    z = (x[:, np.newaxis] - mean - shifts) / std
    return np.exp(-0.5 * z**2).sum(axis=1) / (std * math.sqrt(2.0 * math.pi))


def burgers_ic(spec: BurgersSpec, weight: float, means: Tuple[float, float], stds: Tuple[float, float]) -> np.ndarray:
    """w phi(x; mu1, s1) + phi(x; mu2, s2) on the sensor grid, each density wrapped to the period."""
    x = burgers_sensor_grid(spec)
    return weight * _periodic_gaussian(x, means[0], stds[0], spec.length) + _periodic_gaussian(
        x, means[1], stds[1], spec.length
    )


def sample_burgers_ic(seed: SeedLike, spec: Optional[BurgersSpec] = None) -> np.ndarray:
    """Random two-Gaussian initial condition with uniformly drawn weight, means and stds."""
    spec = spec or BurgersSpec()
    rng = np.random.default_rng(seed)
    weight = rng.uniform(*spec.weight_range)
    means = rng.uniform(*spec.mean_range, size=2)
    stds = rng.uniform(*spec.std_range, size=2)
    return burgers_ic(spec, weight, (means[0], means[1]), (stds[0], stds[1]))


def solve_burgers_batch(U0: np.ndarray, spec: BurgersSpec) -> SpectralSolution:
    """
    u_t + (u^2 / 2)_x = nu u_xx on [0, 2 pi), advanced to t_end in rfft space.

    Sensor values are Fourier-resampled onto the nx-point grid. The flux is
    formed pseudo-spectrally and its modes with |k| >= nx / 3 are dropped.
    """
    U0 = _as_batch(U0, spec.m, "Burgers initial condition")
    n = spec.nx
    u_grid = resample(U0, n, axis=1) if n != spec.m else U0.copy()
    k = np.arange(n // 2 + 1, dtype=np.float64)
    ik = 1j * k
    ik[-1] = 0.0
    keep = k < n / 3.0
    damping = spec.viscosity * k**2

    def rhs(_t: float, u_hat: np.ndarray) -> np.ndarray:
        u = np.fft.irfft(u_hat, n=n, axis=1)
        flux_hat = np.fft.rfft(0.5 * u * u, axis=1) * keep
        return -ik * flux_hat - damping * u_hat

    n_steps = spec.n_steps
    h = spec.t_end / n_steps
    u_hat = np.fft.rfft(u_grid, axis=1)
    for step in range(n_steps):
        u_hat = _rk4_step(rhs, step * h, u_hat, h)
        if step % 100 == 0 or step == n_steps - 1:
            _check_stable(np.abs(u_hat) / n, "burgers", h)
    logger.debug(f"Burgers: {n_steps} RK4 steps on {n} modes for {U0.shape[0]} inputs")
    return SpectralSolution(u_hat, n, spec.length)


def solve_burgers(u0: np.ndarray, spec: BurgersSpec) -> SpectralSolution:
    return solve_burgers_batch(np.asarray(u0)[np.newaxis, :], spec)


def jump_sensor_grid(spec: JumpFunctionSpec) -> np.ndarray:
    return np.linspace(0.0, 1.0, spec.m)


def jump_input(a: float, spec: JumpFunctionSpec) -> np.ndarray:
    """Sensor values of u(x) = a x - 4."""
    return a * jump_sensor_grid(spec) - 4.0


def jump_fidelity_eval(a: Union[float, np.ndarray], x: Union[float, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """(y_L, y_H) of the jump function; the lower branch includes x = 0.5."""
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    u = a * x - 4.0
    offset = np.where(x <= 0.5, -5.0, -2.0)
    y_low = 0.5 * (6.0 * x - 2.0) ** 2 * np.sin(u) + 10.0 * (x - 0.5) + offset
    y_high = 2.0 * y_low - 20.0 * x + 20.0
    if y_low.ndim == 0:
        return float(y_low), float(y_high)
    return y_low, y_high
