"""
Dense feed-forward network engine.

Forward evaluation, exact reverse-mode gradients, the Adam optimizer and a
reduce-on-plateau learning-rate scheduler for ReLU multilayer perceptrons.
Everything runs in 64-bit floats over explicit state; nothing here holds
global mutable state.

Inputs may be a single vector of shape (in,) or a batch of shape (B, in).
Weights of layer l have shape (layer_sizes[l+1], layer_sizes[l]).
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from models import MlpSpec
from utils.errors import DatasetFormatError, NonFiniteGradientError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

MLP_HEADER = "mlp v1"


@dataclass
class MlpParams:
    """Weights and biases of one MLP."""

    spec: MlpSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self) -> None:
        sizes = self.spec.layer_sizes
        if len(self.weights) != self.spec.n_layers or len(self.biases) != self.spec.n_layers:
            raise ShapeError("layer count", self.spec.n_layers, (len(self.weights), len(self.biases)))
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[layer + 1], sizes[layer]):
                raise ShapeError(f"weights[{layer}]", (sizes[layer + 1], sizes[layer]), w.shape)
            if b.shape != (sizes[layer + 1],):
                raise ShapeError(f"bias[{layer}]", (sizes[layer + 1],), b.shape)

    def tensors(self) -> List[np.ndarray]:
        """Parameter arrays in optimizer order: W0, b0, W1, b1, ..."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_tensors(cls, spec: MlpSpec, tensors: Sequence[np.ndarray]) -> "MlpParams":
        return cls(spec, list(tensors[0::2]), list(tensors[1::2]))

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors())


@dataclass
class ForwardCache:
    """Layer inputs and pre-activations kept for the backward pass."""

    inputs: List[np.ndarray] = field(default_factory=list)
    preactivations: List[np.ndarray] = field(default_factory=list)
    squeeze: bool = False


def init_mlp(spec: MlpSpec, rng: np.random.Generator, output_gain: Optional[float] = None) -> MlpParams:
    """
    He/Kaiming-uniform weights scaled by fan-in, zero biases.

    ``output_gain`` replaces the ReLU gain sqrt(2) on the last (linear) layer,
    whose bound becomes output_gain * sqrt(3 / fan_in).
    """
    weights, biases = [], []
    last = spec.n_layers - 1
    for layer, (fan_in, fan_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        if layer == last and output_gain is not None:
            bound = output_gain * math.sqrt(3.0 / fan_in)
        else:
            bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(spec, weights, biases)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_mask(z: np.ndarray) -> np.ndarray:
    """Derivative of ReLU; the subgradient at 0 is 0."""
    return (z > 0.0).astype(np.float64)


def _as_batch(params: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    batch = x[np.newaxis, :] if squeeze else x
    if batch.ndim != 2 or batch.shape[1] != params.spec.input_dim:
        raise ShapeError("MLP input", f"(*, {params.spec.input_dim})", x.shape)
    return batch, squeeze


def mlp_forward_cached(params: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Forward pass that also returns what the backward pass needs."""
    a, squeeze = _as_batch(params, x)
    cache = ForwardCache(squeeze=squeeze)
    last = params.spec.n_layers - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(a)
        z = a @ w.T + b
        cache.preactivations.append(z)
        a = z if layer == last else relu(z)
    return (a[0] if squeeze else a), cache


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network; the output layer is linear."""
    out, _ = mlp_forward_cached(params, x)
    return out


def mlp_backward(
    params: MlpParams, cache: ForwardCache, upstream: np.ndarray
) -> Tuple[MlpParams, np.ndarray]:
    """
    Reverse-mode gradients of <upstream, output>, summed over the batch.

    Returns the parameter gradients (same structure as ``params``) and the
    gradient with respect to the input.
    """
    dz = np.asarray(upstream, dtype=np.float64)
    if cache.squeeze:
        dz = dz[np.newaxis, :] if dz.ndim == 1 else dz
    expected = (cache.inputs[0].shape[0], params.spec.output_dim)
    if dz.shape != expected:
        raise ShapeError("upstream gradient", expected, np.shape(upstream))

    n_layers = params.spec.n_layers
    grad_w: List[np.ndarray] = [np.empty(0)] * n_layers
    grad_b: List[np.ndarray] = [np.empty(0)] * n_layers
    for layer in range(n_layers - 1, -1, -1):
        if layer != n_layers - 1:
            dz = dz * relu_mask(cache.preactivations[layer])
        grad_w[layer] = dz.T @ cache.inputs[layer]
        grad_b[layer] = dz.sum(axis=0)
        dz = dz @ params.weights[layer]
    input_grad = dz[0] if cache.squeeze else dz
    return MlpParams(params.spec, grad_w, grad_b), input_grad


def mlp_gradient(
    params: MlpParams, x: np.ndarray, upstream: np.ndarray
) -> Tuple[MlpParams, np.ndarray]:
    """Forward then backward in one call."""
    _, cache = mlp_forward_cached(params, x)
    return mlp_backward(params, cache, upstream)


@dataclass
class AdamState:
    """First/second moments, step counter and hyperparameters of Adam."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    lr: float = 1e-3
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(
        cls,
        tensors: Sequence[np.ndarray],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        return cls(
            m=[np.zeros_like(t) for t in tensors],
            v=[np.zeros_like(t) for t in tensors],
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


Tensors = Union[MlpParams, Sequence[np.ndarray]]


def adam_step(state: AdamState, params: Tensors, grads: Tensors) -> Tuple[Tensors, AdamState]:
    """
    One bias-corrected Adam update.

    ``params`` and ``grads`` are either MlpParams or matching lists of arrays;
    the updated parameters come back in the same form. Inputs are not mutated.
    """
    p_list = params.tensors() if isinstance(params, MlpParams) else list(params)
    g_list = grads.tensors() if isinstance(grads, MlpParams) else list(grads)
    if len(p_list) != len(g_list) or len(p_list) != len(state.m):
        raise ShapeError("parameter tensor count", len(p_list), (len(g_list), len(state.m)))
    for i, (p, g) in enumerate(zip(p_list, g_list)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ShapeError(f"gradient tensor {i}", p.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(i)

    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_list, g_list, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_p.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)

    new_state = replace(state, m=new_m, v=new_v, step=t)
    if isinstance(params, MlpParams):
        return MlpParams.from_tensors(params.spec, new_p), new_state
    return new_p, new_state


@dataclass(frozen=True)
class PlateauScheduler:
    """Reduce-on-plateau learning-rate schedule."""

    lr: float = 1e-3
    patience: int = 20
    factor: float = 0.5
    min_lr: float = 1e-6
    best_metric: float = math.inf
    wait: int = 0


def plateau_update(sched: PlateauScheduler, metric: float) -> PlateauScheduler:
    """
    Feed one metric value; returns the updated scheduler.

    After ``patience`` consecutive calls without improving on the best metric
    the learning rate becomes max(lr * factor, min_lr) and the wait resets.
    """
    if not math.isfinite(metric):
        raise ValidationError("metric", metric, "Scheduler metric must be finite")
    if metric < sched.best_metric:
        return replace(sched, best_metric=metric, wait=0)
    wait = sched.wait + 1
    if wait >= sched.patience:
        lr = max(sched.lr * sched.factor, sched.min_lr)
        if lr < sched.lr:
            logger.info(f"Plateau detected; learning rate {sched.lr:.3g} -> {lr:.3g}")
        return replace(sched, lr=lr, wait=0)
    return replace(sched, wait=wait)


def _format_row(values: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in values.ravel())


def format_mlp(params: MlpParams) -> List[str]:
    """Lines of the textual ``mlp v1`` format."""
    lines = [MLP_HEADER, " ".join(str(s) for s in params.spec.layer_sizes)]
    for w, b in zip(params.weights, params.biases):
        lines.append(_format_row(np.concatenate([w.ravel(), b])))
    return lines


def parse_mlp(lines: Iterator[str], source: str = "<model>") -> MlpParams:
    """Read one ``mlp v1`` block from an iterator of lines."""
    try:
        header = next(lines).strip()
        if header != MLP_HEADER:
            raise DatasetFormatError(source, f"expected '{MLP_HEADER}', found '{header}'")
        spec = MlpSpec(layer_sizes=[int(tok) for tok in next(lines).split()])
        weights, biases = [], []
        for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
            row = np.array([float(tok) for tok in next(lines).split()], dtype=np.float64)
            if row.size != fan_out * fan_in + fan_out:
                raise DatasetFormatError(source, f"layer {fan_in}->{fan_out} has {row.size} values")
            weights.append(row[: fan_out * fan_in].reshape(fan_out, fan_in))
            biases.append(row[fan_out * fan_in :].copy())
    except StopIteration as e:
        raise DatasetFormatError(source, "unexpected end of file inside an MLP block") from e
    except ValueError as e:
        raise DatasetFormatError(source, f"unparsable MLP block: {e}") from e
    return MlpParams(spec, weights, biases)
