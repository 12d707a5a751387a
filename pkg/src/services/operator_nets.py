"""
DeepONet architectures.

A DeepONet predicts G(u)(x) = sum_k b_k(u) tau_k(x) + bias from a branch
network on the discretized input function and a trunk network on the query
coordinate. Both sub-networks start with shared hidden layers; each output
head then has its own independent layers:

- point: one head, G(u)(x)
- prob: a mean head and a log-sigma head
- quantile: lower and upper conditional-quantile heads

Also provides deep ensembles of point models, the multi-fidelity composite
(low-fidelity point model plus a probabilistic residual) and the textual
``deeponet v1`` / ``ensemble v1`` / ``multifidelity v1`` persistence format.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from models import DeepONetSpec, HeadKind
from services.nn_core import (
    ForwardCache,
    MlpParams,
    format_mlp,
    init_mlp,
    mlp_backward,
    mlp_forward_cached,
    parse_mlp,
    relu,
    relu_mask,
)
from utils.errors import (
    ArtifactNotFoundError,
    DatasetFormatError,
    IncompatibleArtifactsError,
    NonFiniteOutputError,
    ShapeError,
    ValidationError,
)

logger = logging.getLogger(__name__)

DEEPONET_HEADER = "deeponet v1"
ENSEMBLE_HEADER = "ensemble v1"
MULTIFIDELITY_HEADER = "multifidelity v1"


@dataclass
class DeepONetModel:
    """Parameters of a DeepONet with one or two output heads."""

    spec: DeepONetSpec
    branch_shared: MlpParams
    branch_heads: List[MlpParams]
    trunk_shared: MlpParams
    trunk_heads: List[MlpParams]
    output_bias: np.ndarray

    def __post_init__(self) -> None:
        heads = self.spec.head_count
        if len(self.branch_heads) != heads or len(self.trunk_heads) != heads:
            raise ShapeError("head count", heads, (len(self.branch_heads), len(self.trunk_heads)))
        if self.output_bias.shape != (heads,):
            raise ShapeError("output bias", (heads,), self.output_bias.shape)
        expected = [
            (self.branch_shared, self.spec.branch_shared_spec()),
            (self.trunk_shared, self.spec.trunk_shared_spec()),
            *[(h, self.spec.branch_head_spec()) for h in self.branch_heads],
            *[(h, self.spec.trunk_head_spec()) for h in self.trunk_heads],
        ]
        for params, spec in expected:
            if params.spec.layer_sizes != spec.layer_sizes:
                raise ShapeError("sub-network layers", spec.layer_sizes, params.spec.layer_sizes)

    def tensors(self) -> List[np.ndarray]:
        """All trainable arrays in a fixed order (output bias last, when enabled)."""
        out = list(self.branch_shared.tensors())
        for head in self.branch_heads:
            out.extend(head.tensors())
        out.extend(self.trunk_shared.tensors())
        for head in self.trunk_heads:
            out.extend(head.tensors())
        if self.spec.include_output_bias:
            out.append(self.output_bias)
        return out

    def with_tensors(self, tensors: Sequence[np.ndarray]) -> "DeepONetModel":
        """A new model whose arrays are taken, in ``tensors()`` order, from ``tensors``."""
        it = iter(tensors)

        def take(params: MlpParams) -> MlpParams:
            return MlpParams.from_tensors(params.spec, [next(it) for _ in range(2 * params.spec.n_layers)])

        branch_shared = take(self.branch_shared)
        branch_heads = [take(h) for h in self.branch_heads]
        trunk_shared = take(self.trunk_shared)
        trunk_heads = [take(h) for h in self.trunk_heads]
        bias = next(it) if self.spec.include_output_bias else self.output_bias
        return DeepONetModel(self.spec, branch_shared, branch_heads, trunk_shared, trunk_heads, bias)


@dataclass
class EnsembleModel:
    """Independently seeded point DeepONets sharing one spec."""

    members: List[DeepONetModel]

    def __post_init__(self) -> None:
        if len(self.members) < 2:
            raise ValidationError("ensemble size", len(self.members), "An ensemble needs at least 2 members")
        spec = self.members[0].spec
        if spec.head_kind is not HeadKind.POINT:
            raise ValidationError("head_kind", spec.head_kind.value, "Ensemble members must be point models")
        if any(member.spec != spec for member in self.members):
            raise IncompatibleArtifactsError("ensemble members have different specs")

    @property
    def spec(self) -> DeepONetSpec:
        return self.members[0].spec


@dataclass
class MultiFidelityModel:
    """High-fidelity predictor N(mu + y_LF, sigma) from a low-fidelity model and a residual model."""

    low_fidelity: DeepONetModel
    residual: DeepONetModel

    def __post_init__(self) -> None:
        if self.low_fidelity.spec.head_kind is not HeadKind.POINT:
            raise ValidationError("low_fidelity", self.low_fidelity.spec.head_kind.value, "Must be a point model")
        if self.residual.spec.head_kind is not HeadKind.PROB:
            raise ValidationError("residual", self.residual.spec.head_kind.value, "Must be a prob model")
        if (self.low_fidelity.spec.m, self.low_fidelity.spec.d) != (self.residual.spec.m, self.residual.spec.d):
            raise IncompatibleArtifactsError("low-fidelity and residual models disagree on (m, d)")

    @property
    def spec(self) -> DeepONetSpec:
        return self.residual.spec


AnyModel = Union[DeepONetModel, EnsembleModel, MultiFidelityModel]


def head_output_gain(spec: DeepONetSpec) -> float:
    """Last-layer gain of the head nets: K^(-1/4) on each side keeps the K-term inner product near unit scale."""
    return spec.K**-0.25


def init_deeponet(spec: DeepONetSpec, rng: np.random.Generator) -> DeepONetModel:
    """Seeded initialization of every sub-network; output biases start at zero."""
    gain = head_output_gain(spec)
    branch_shared = init_mlp(spec.branch_shared_spec(), rng)
    branch_heads = [init_mlp(spec.branch_head_spec(), rng, gain) for _ in range(spec.head_count)]
    trunk_shared = init_mlp(spec.trunk_shared_spec(), rng)
    trunk_heads = [init_mlp(spec.trunk_head_spec(), rng, gain) for _ in range(spec.head_count)]
    return DeepONetModel(spec, branch_shared, branch_heads, trunk_shared, trunk_heads, np.zeros(spec.head_count))


@dataclass
class DeepONetCache:
    """Intermediate values of a batched forward pass."""

    branch_shared: ForwardCache
    branch_hidden_pre: np.ndarray
    trunk_shared: ForwardCache
    trunk_hidden_pre: np.ndarray
    branch_heads: List[Tuple[np.ndarray, ForwardCache]] = field(default_factory=list)
    trunk_heads: List[Tuple[np.ndarray, ForwardCache]] = field(default_factory=list)


def _as_queries(spec: DeepONetSpec, u: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool]:
    u = np.asarray(u, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    single = u.ndim == 1
    if single:
        u = u[np.newaxis, :]
        x = x.reshape(1, -1)
    elif x.ndim == 1 and spec.d == 1:
        x = x[:, np.newaxis]
    if u.ndim != 2 or u.shape[1] != spec.m:
        raise ShapeError("input function", f"(*, {spec.m})", u.shape)
    if x.ndim != 2 or x.shape[1] != spec.d or x.shape[0] != u.shape[0]:
        raise ShapeError("query coordinates", f"({u.shape[0]}, {spec.d})", x.shape)
    return u, x, single


def forward_heads(model: DeepONetModel, u: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, DeepONetCache]:
    """Raw head outputs of shape (n, head_count) for n queries, plus the cache."""
    u, x, _ = _as_queries(model.spec, u, x)
    hb_pre, cb = mlp_forward_cached(model.branch_shared, u)
    ht_pre, ct = mlp_forward_cached(model.trunk_shared, x)
    hb, ht = relu(hb_pre), relu(ht_pre)
    cache = DeepONetCache(cb, hb_pre, ct, ht_pre)
    out = np.empty((u.shape[0], model.spec.head_count))
    for h in range(model.spec.head_count):
        b, cbh = mlp_forward_cached(model.branch_heads[h], hb)
        t, cth = mlp_forward_cached(model.trunk_heads[h], ht)
        cache.branch_heads.append((b, cbh))
        cache.trunk_heads.append((t, cth))
        out[:, h] = np.sum(b * t, axis=1) + model.output_bias[h]
    return out, cache


def backward_heads(model: DeepONetModel, cache: DeepONetCache, upstream: np.ndarray) -> List[np.ndarray]:
    """
    Gradients of sum(upstream * head outputs) in ``model.tensors()`` order.

    ``upstream`` has shape (n, head_count).
    """
    heads = model.spec.head_count
    n = cache.branch_hidden_pre.shape[0]
    if upstream.shape != (n, heads):
        raise ShapeError("head upstream gradient", (n, heads), upstream.shape)

    d_hb = np.zeros_like(cache.branch_hidden_pre)
    d_ht = np.zeros_like(cache.trunk_hidden_pre)
    branch_grads, trunk_grads = [], []
    for h in range(heads):
        up = upstream[:, h : h + 1]
        b, cbh = cache.branch_heads[h]
        t, cth = cache.trunk_heads[h]
        g_b, d_in_b = mlp_backward(model.branch_heads[h], cbh, up * t)
        g_t, d_in_t = mlp_backward(model.trunk_heads[h], cth, up * b)
        d_hb += d_in_b
        d_ht += d_in_t
        branch_grads.append(g_b)
        trunk_grads.append(g_t)
    g_bs, _ = mlp_backward(model.branch_shared, cache.branch_shared, d_hb * relu_mask(cache.branch_hidden_pre))
    g_ts, _ = mlp_backward(model.trunk_shared, cache.trunk_shared, d_ht * relu_mask(cache.trunk_hidden_pre))

    grads = list(g_bs.tensors())
    for g in branch_grads:
        grads.extend(g.tensors())
    grads.extend(g_ts.tensors())
    for g in trunk_grads:
        grads.extend(g.tensors())
    if model.spec.include_output_bias:
        grads.append(upstream.sum(axis=0))
    return grads


def _require_head(model: DeepONetModel, kind: HeadKind) -> None:
    if model.spec.head_kind is not kind:
        raise IncompatibleArtifactsError(
            f"expected a {kind.value} model, got {model.spec.head_kind.value}",
            {"expected": kind.value, "actual": model.spec.head_kind.value},
        )


def _unwrap(values: np.ndarray, single: bool) -> Union[float, np.ndarray]:
    return float(values[0]) if single else values


def deeponet_eval(model: DeepONetModel, u: np.ndarray, x: np.ndarray) -> Union[float, np.ndarray]:
    """G(u)(x) of a point model for one query (u of shape (m,)) or a batch ((n, m), (n, d))."""
    _require_head(model, HeadKind.POINT)
    _, _, single = _as_queries(model.spec, u, x)
    out, _ = forward_heads(model, u, x)
    return _unwrap(out[:, 0], single)


def prob_eval(model: DeepONetModel, u: np.ndarray, x: np.ndarray) -> Tuple[Union[float, np.ndarray], ...]:
    """(mu, sigma) of a prob model; sigma is the exponential of the log-sigma head."""
    _require_head(model, HeadKind.PROB)
    _, _, single = _as_queries(model.spec, u, x)
    out, _ = forward_heads(model, u, x)
    with np.errstate(over="ignore"):
        sigma = np.exp(out[:, 1])
    bad = int(np.count_nonzero(~np.isfinite(sigma)))
    if bad:
        raise NonFiniteOutputError("sigma", bad)
    return _unwrap(out[:, 0], single), _unwrap(sigma, single)


def quantile_eval(model: DeepONetModel, u: np.ndarray, x: np.ndarray) -> Tuple[Union[float, np.ndarray], ...]:
    """Raw (t_lo, t_hi) head outputs of a quantile model; crossing is not corrected here."""
    _require_head(model, HeadKind.QUANTILE)
    _, _, single = _as_queries(model.spec, u, x)
    out, _ = forward_heads(model, u, x)
    return _unwrap(out[:, 0], single), _unwrap(out[:, 1], single)


def ensemble_predictions(ens: EnsembleModel, u: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Member predictions of shape (M, n)."""
    u, x, _ = _as_queries(ens.spec, u, x)
    return np.stack([forward_heads(member, u, x)[0][:, 0] for member in ens.members])


def ensemble_stats(ens: EnsembleModel, u: np.ndarray, x: np.ndarray) -> Tuple[Union[float, np.ndarray], ...]:
    """Population mean and standard deviation (1/M normalization) of member predictions."""
    _, _, single = _as_queries(ens.spec, u, x)
    preds = ensemble_predictions(ens, u, x)
    mu = preds.mean(axis=0)
    sigma = np.sqrt(np.mean((preds - mu) ** 2, axis=0))
    return _unwrap(mu, single), _unwrap(sigma, single)


def multifidelity_stats(model: MultiFidelityModel, u: np.ndarray, x: np.ndarray) -> Tuple[Union[float, np.ndarray], ...]:
    """(mu + y_LF, sigma) of the recombined high-fidelity predictor."""
    y_lf = deeponet_eval(model.low_fidelity, u, x)
    mu, sigma = prob_eval(model.residual, u, x)
    return mu + y_lf, sigma


def mean_std(model: AnyModel, u: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Batched (mu, sigma) of any model that predicts a Gaussian."""
    if isinstance(model, EnsembleModel):
        mu, sigma = ensemble_stats(model, u, x)
    elif isinstance(model, MultiFidelityModel):
        mu, sigma = multifidelity_stats(model, u, x)
    else:
        mu, sigma = prob_eval(model, u, x)
    return np.atleast_1d(mu), np.atleast_1d(sigma)


def _spec_line(spec: DeepONetSpec) -> str:
    alpha = "none" if spec.quantile_alpha is None else f"{spec.quantile_alpha:.17g}"
    return (
        f"m={spec.m} d={spec.d} K={spec.K} head_kind={spec.head_kind.value} "
        f"branch={spec.branch_width},{spec.branch_shared_depth},{spec.branch_head_depth} "
        f"trunk={spec.trunk_width},{spec.trunk_shared_depth},{spec.trunk_head_depth} "
        f"bias={int(spec.include_output_bias)} alpha={alpha}"
    )


def _parse_spec_line(line: str, source: str) -> DeepONetSpec:
    try:
        fields = dict(tok.split("=", 1) for tok in line.split())
        bw, bs, bh = (int(v) for v in fields["branch"].split(","))
        tw, ts, th = (int(v) for v in fields["trunk"].split(","))
        return DeepONetSpec(
            m=int(fields["m"]),
            d=int(fields["d"]),
            K=int(fields["K"]),
            branch_width=bw,
            branch_shared_depth=bs,
            branch_head_depth=bh,
            trunk_width=tw,
            trunk_shared_depth=ts,
            trunk_head_depth=th,
            head_kind=HeadKind(fields["head_kind"]),
            include_output_bias=fields["bias"] == "1",
            quantile_alpha=None if fields["alpha"] == "none" else float(fields["alpha"]),
        )
    except (KeyError, ValueError) as e:
        raise DatasetFormatError(source, f"bad DeepONet spec line: {e}") from e


def format_deeponet(model: DeepONetModel) -> List[str]:
    """
    Lines of the ``deeponet v1`` block: header, spec line, output-bias line,
    then branch shared, branch heads, trunk shared and trunk heads as ``mlp v1`` blocks.
    """
    lines = [DEEPONET_HEADER, _spec_line(model.spec), " ".join(f"{b:.17g}" for b in model.output_bias)]
    for params in [model.branch_shared, *model.branch_heads, model.trunk_shared, *model.trunk_heads]:
        lines.extend(format_mlp(params))
    return lines


def parse_deeponet(lines: Iterator[str], source: str = "<model>") -> DeepONetModel:
    try:
        header = next(lines).strip()
        if header != DEEPONET_HEADER:
            raise DatasetFormatError(source, f"expected '{DEEPONET_HEADER}', found '{header}'")
        spec = _parse_spec_line(next(lines), source)
        bias = np.array([float(tok) for tok in next(lines).split()], dtype=np.float64)
    except StopIteration as e:
        raise DatasetFormatError(source, "unexpected end of file in DeepONet header") from e
    except ValueError as e:
        raise DatasetFormatError(source, f"bad output bias line: {e}") from e
    branch_shared = parse_mlp(lines, source)
    branch_heads = [parse_mlp(lines, source) for _ in range(spec.head_count)]
    trunk_shared = parse_mlp(lines, source)
    trunk_heads = [parse_mlp(lines, source) for _ in range(spec.head_count)]
    try:
        return DeepONetModel(spec, branch_shared, branch_heads, trunk_shared, trunk_heads, bias)
    except ShapeError as e:
        raise DatasetFormatError(source, e.message) from e


def format_model(model: AnyModel) -> str:
    if isinstance(model, EnsembleModel):
        lines = [f"{ENSEMBLE_HEADER} M={len(model.members)}"]
        for member in model.members:
            lines.extend(format_deeponet(member))
    elif isinstance(model, MultiFidelityModel):
        lines = [MULTIFIDELITY_HEADER, *format_deeponet(model.low_fidelity), *format_deeponet(model.residual)]
    else:
        lines = format_deeponet(model)
    return "\n".join(lines) + "\n"


def parse_model(text: str, source: str = "<model>") -> AnyModel:
    lines = iter(text.splitlines())
    first = text.split("\n", 1)[0].strip()
    if first.startswith(ENSEMBLE_HEADER):
        next(lines)
        try:
            count = int(first.split("M=", 1)[1])
        except (IndexError, ValueError) as e:
            raise DatasetFormatError(source, "ensemble header lacks M=<int>") from e
        return EnsembleModel([parse_deeponet(lines, source) for _ in range(count)])
    if first == MULTIFIDELITY_HEADER:
        next(lines)
        return MultiFidelityModel(parse_deeponet(lines, source), parse_deeponet(lines, source))
    return parse_deeponet(lines, source)


def write_model(path: Union[str, Path], model: AnyModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_model(model), encoding="utf-8")
    logger.info(f"Model written to {path}")


def read_model(path: Union[str, Path]) -> AnyModel:
    path = Path(path)
    if not path.exists():
        raise ArtifactNotFoundError(str(path), "model file")
    return parse_model(path.read_text(encoding="utf-8"), str(path))


def model_kind_name(model: AnyModel) -> str:
    """Short name used in reports ('prob', 'quantile', 'ensemble', 'multifidelity', 'point')."""
    if isinstance(model, EnsembleModel):
        return "ensemble"
    if isinstance(model, MultiFidelityModel):
        return "multifidelity"
    return model.spec.head_kind.value


def input_dims(model: AnyModel) -> Tuple[int, int]:
    return model.spec.m, model.spec.d


def check_dataset_dims(model: AnyModel, m: int, d: int, source: Optional[str] = None) -> None:
    if input_dims(model) != (m, d):
        raise IncompatibleArtifactsError(
            f"model expects (m={model.spec.m}, d={model.spec.d}) but "
            f"{source or 'dataset'} has (m={m}, d={d})",
            {"model": input_dims(model), "dataset": (m, d)},
        )
