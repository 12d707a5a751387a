"""
Operator-learning datasets and their text formats.

Triplet file (``opds v1``)::

    opds v1 m=<int> d=<int> count=<int>
    <m sensor values> <d coordinates> <target>        (one line per triplet)

Trajectory file (``optraj v1``)::

    optraj v1 m=<int> d=<int> n_traj=<int> n_eval=<int>
    <m sensor values>                                  (per trajectory)
    <d coordinates> <target>                           (n_eval lines)

All numbers are written with ``%.17g`` so files round-trip bit-exactly.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np

from utils.errors import ArtifactNotFoundError, DatasetFormatError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

TRIPLET_HEADER = "opds v1"
TRAJECTORY_HEADER = "optraj v1"
NUMBER_FORMAT = "%.17g"


@dataclass(frozen=True)
class OperatorTriplet:
    """One sample (u, x, G): sensor values, evaluation coordinate, target value."""

    u: np.ndarray
    x: np.ndarray
    G: float


@dataclass
class TripletDataset:
    """Triplets stored column-wise: U (n, m), X (n, d), G (n,)."""

    U: np.ndarray
    X: np.ndarray
    G: np.ndarray

    def __post_init__(self) -> None:
        self.U = np.asarray(self.U, dtype=np.float64)
        self.X = np.asarray(self.X, dtype=np.float64)
        self.G = np.asarray(self.G, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X[:, np.newaxis]
        if self.U.ndim != 2 or self.X.ndim != 2 or self.G.ndim != 1:
            raise ShapeError("triplet arrays", "U (n, m), X (n, d), G (n,)", (self.U.shape, self.X.shape, self.G.shape))
        if not self.U.shape[0] == self.X.shape[0] == self.G.shape[0]:
            raise ShapeError("triplet count", self.U.shape[0], (self.X.shape[0], self.G.shape[0]))
        for name, values in (("U", self.U), ("X", self.X), ("G", self.G)):
            if not np.all(np.isfinite(values)):
                raise ValidationError(name, "non-finite", "Dataset entries must be finite")

    @classmethod
    def from_triplets(cls, triplets: Sequence[OperatorTriplet]) -> "TripletDataset":
        if not triplets:
            raise ValidationError.empty("triplets")
        return cls(
            np.stack([t.u for t in triplets]),
            np.stack([np.atleast_1d(t.x) for t in triplets]),
            np.array([t.G for t in triplets]),
        )

    def __len__(self) -> int:
        return self.G.shape[0]

    def __iter__(self) -> Iterator[OperatorTriplet]:
        for i in range(len(self)):
            yield OperatorTriplet(self.U[i], self.X[i], float(self.G[i]))

    @property
    def m(self) -> int:
        return self.U.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, index: Union[np.ndarray, slice]) -> "TripletDataset":
        return TripletDataset(self.U[index], self.X[index], self.G[index])

    def with_targets(self, G: np.ndarray) -> "TripletDataset":
        return TripletDataset(self.U, self.X, G)


@dataclass
class TrajectoryDataset:
    """Test trajectories: U (n_traj, m), X (n_traj, n_eval, d), G (n_traj, n_eval)."""

    U: np.ndarray
    X: np.ndarray
    G: np.ndarray

    def __post_init__(self) -> None:
        self.U = np.asarray(self.U, dtype=np.float64)
        self.X = np.asarray(self.X, dtype=np.float64)
        self.G = np.asarray(self.G, dtype=np.float64)
        if self.X.ndim == 2:
            self.X = self.X[:, :, np.newaxis]
        if self.U.ndim != 2 or self.X.ndim != 3 or self.G.ndim != 2:
            raise ShapeError("trajectory arrays", "U (T, m), X (T, E, d), G (T, E)", (self.U.shape, self.X.shape, self.G.shape))
        if self.X.shape[:2] != self.G.shape or self.U.shape[0] != self.G.shape[0]:
            raise ShapeError("trajectory layout", self.G.shape, (self.U.shape, self.X.shape))
        if not np.all(np.isfinite(self.G)):
            raise ValidationError("G", "non-finite", "Trajectory targets must be finite")

    @property
    def n_traj(self) -> int:
        return self.G.shape[0]

    @property
    def n_eval(self) -> int:
        return self.G.shape[1]

    @property
    def m(self) -> int:
        return self.U.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[2]

    def flatten(self) -> TripletDataset:
        """All (trajectory, point) pairs as one triplet dataset, trajectory-major."""
        U = np.repeat(self.U, self.n_eval, axis=0)
        return TripletDataset(U, self.X.reshape(-1, self.d), self.G.reshape(-1))

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        for j in range(self.n_traj):
            yield self.U[j], self.X[j], self.G[j]


def _parse_header(line: str, expected: str, keys: Sequence[str], source: str) -> Dict[str, int]:
    if not line.startswith(expected):
        raise DatasetFormatError(source, f"expected header '{expected} ...', found '{line.strip()}'", line=1)
    try:
        fields = dict(tok.split("=", 1) for tok in line[len(expected):].split())
        return {key: int(fields[key]) for key in keys}
    except (KeyError, ValueError) as e:
        raise DatasetFormatError(source, f"header must define {', '.join(keys)}", line=1) from e


def _require(path: Path) -> None:
    if not path.exists():
        raise ArtifactNotFoundError(str(path), "data file")


def write_triplets(path: Union[str, Path], data: TripletDataset) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{TRIPLET_HEADER} m={data.m} d={data.d} count={len(data)}\n")
        np.savetxt(fh, np.column_stack([data.U, data.X, data.G]), fmt=NUMBER_FORMAT)
    logger.info(f"Wrote {len(data)} triplets to {path}")


def read_triplets(path: Union[str, Path]) -> TripletDataset:
    path = Path(path)
    _require(path)
    with path.open("r", encoding="utf-8") as fh:
        header = _parse_header(fh.readline(), TRIPLET_HEADER, ("m", "d", "count"), str(path))
        try:
            rows = np.loadtxt(fh, dtype=np.float64, ndmin=2)
        except ValueError as e:
            raise DatasetFormatError(str(path), f"unparsable record: {e}") from e
    m, d, count = header["m"], header["d"], header["count"]
    if rows.shape != (count, m + d + 1):
        raise DatasetFormatError(str(path), f"expected {count} records of {m + d + 1} values, got shape {rows.shape}")
    return TripletDataset(rows[:, :m], rows[:, m : m + d], rows[:, m + d])


def write_trajectories(path: Union[str, Path], data: TrajectoryDataset) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{TRAJECTORY_HEADER} m={data.m} d={data.d} n_traj={data.n_traj} n_eval={data.n_eval}\n")
        for u, X, G in data:
            np.savetxt(fh, u[np.newaxis, :], fmt=NUMBER_FORMAT)
            np.savetxt(fh, np.column_stack([X, G]), fmt=NUMBER_FORMAT)
    logger.info(f"Wrote {data.n_traj} trajectories x {data.n_eval} points to {path}")


def read_trajectories(path: Union[str, Path]) -> TrajectoryDataset:
    path = Path(path)
    _require(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DatasetFormatError(str(path), "empty file")
    header = _parse_header(lines[0], TRAJECTORY_HEADER, ("m", "d", "n_traj", "n_eval"), str(path))
    m, d, n_traj, n_eval = header["m"], header["d"], header["n_traj"], header["n_eval"]
    if len(lines) != 1 + n_traj * (1 + n_eval):
        raise DatasetFormatError(str(path), f"expected {1 + n_traj * (1 + n_eval)} lines, found {len(lines)}")
    U = np.empty((n_traj, m))
    points: List[np.ndarray] = []
    cursor = 1
    try:
        for j in range(n_traj):
            U[j] = np.array(lines[cursor].split(), dtype=np.float64)
            block = np.array([ln.split() for ln in lines[cursor + 1 : cursor + 1 + n_eval]], dtype=np.float64)
            points.append(block.reshape(n_eval, d + 1))
            cursor += 1 + n_eval
    except ValueError as e:
        raise DatasetFormatError(str(path), f"malformed trajectory block: {e}", line=cursor + 1) from e
    stacked = np.stack(points)
    return TrajectoryDataset(U, stacked[:, :, :d], stacked[:, :, d])
