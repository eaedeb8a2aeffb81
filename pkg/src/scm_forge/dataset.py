"""CSV ingestion, min-max normalization, seeded splitting, synthetic generators.

Synthetic data uses the Philox counter-based PRNG (via numpy's SeedSequence),
so generated datasets are byte-identical across platforms for a given seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PRNG_NAME = "philox4x64"
RDB7_DEFAULT_N = 1000
RASTRIGIN_DEFAULT_DIMS = 2
RASTRIGIN_DEFAULT_TRAIN = 40000
RASTRIGIN_DEFAULT_TEST = 4489
RASTRIGIN_BOUND = 5.12


def _generator(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class Dataset:
    """Immutable input/target matrices with column names."""

    inputs: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...]
    target_names: tuple[str, ...]

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        targets = np.ascontiguousarray(self.targets, dtype=np.float64)
        if inputs.ndim != 2 or targets.ndim != 2:
            raise ValueError("inputs and targets must be 2-D")
        if inputs.shape[0] != targets.shape[0]:
            raise ValueError(f"row mismatch: {inputs.shape[0]} inputs vs {targets.shape[0]} targets")
        # Zero rows are tolerated so split() can hand back empty partitions;
        # training entry points reject empty sets themselves.
        if not (np.isfinite(inputs).all() and np.isfinite(targets).all()):
            raise ValueError("dataset contains non-finite values")
        inputs.flags.writeable = False
        targets.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "target_names", tuple(self.target_names))

    @property
    def n_rows(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_targets(self) -> int:
        return self.targets.shape[1]

    def take(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], self.feature_names, self.target_names)


@dataclass(frozen=True)
class NormParams:
    """Per-column min/max of inputs and targets, for [0,1] scaling."""

    in_min: np.ndarray
    in_max: np.ndarray
    t_min: np.ndarray
    t_max: np.ndarray

    def __post_init__(self):
        for lo, hi in ((self.in_min, self.in_max), (self.t_min, self.t_max)):
            if np.any(np.asarray(hi) < np.asarray(lo)):
                raise ValueError("per-column max must be >= min")

    @classmethod
    def identity(cls, d: int, m: int) -> "NormParams":
        return cls(np.zeros(d), np.ones(d), np.zeros(m), np.ones(m))

    def scale_inputs(self, x: np.ndarray) -> np.ndarray:
        return _scale(x, self.in_min, self.in_max)

    def scale_targets(self, y: np.ndarray) -> np.ndarray:
        return _scale(y, self.t_min, self.t_max)

    def unscale_inputs(self, x: np.ndarray) -> np.ndarray:
        return x * (self.in_max - self.in_min) + self.in_min

    def unscale_targets(self, y: np.ndarray) -> np.ndarray:
        return y * (self.t_max - self.t_min) + self.t_min


def _scale(v, lo, hi):
    v = np.asarray(v, dtype=np.float64)
    span = hi - lo
    out = np.zeros_like(v)
    nz = span != 0
    out[..., nz] = (v[..., nz] - lo[nz]) / span[nz]
    return out


def normalize_minmax(ds: Dataset) -> tuple[Dataset, NormParams]:
    """Map every column to [0,1]; constant columns map to 0."""
    params = NormParams(
        in_min=ds.inputs.min(axis=0),
        in_max=ds.inputs.max(axis=0),
        t_min=ds.targets.min(axis=0),
        t_max=ds.targets.max(axis=0),
    )
    scaled = Dataset(
        params.scale_inputs(ds.inputs),
        params.scale_targets(ds.targets),
        ds.feature_names,
        ds.target_names,
    )
    return scaled, params


def denormalize(ds: Dataset, params: NormParams) -> Dataset:
    """Inverse of normalize_minmax for non-constant columns."""
    return Dataset(
        params.unscale_inputs(ds.inputs),
        params.unscale_targets(ds.targets),
        ds.feature_names,
        ds.target_names,
    )


def split(ds: Dataset, fractions, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Partition rows by a seeded uniform shuffle into (train, val, test).

    Fractions must sum to 1 within 1e-9. Sizes are rounded; the test split
    takes the remainder so the partition always covers every row exactly once.
    """
    f_train, f_val, f_test = (float(f) for f in fractions)
    if min(f_train, f_val, f_test) < 0:
        raise ValueError(f"fractions must be >= 0, got {fractions}")
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    n = ds.n_rows
    rng = _generator(seed)
    perm = rng.permutation(n)
    n_train = int(round(f_train * n))
    n_val = min(int(round(f_val * n)), n - n_train)
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(ds.take(np.sort(p)) for p in parts)


def rdb7_function(x):
    """Three-bump target with sharp components at very different scales."""
    x = np.asarray(x, dtype=np.float64)
    return (
        0.2 * np.exp(-((10 * x - 4) ** 2))
        + 0.5 * np.exp(-((90 * x - 40) ** 2))
        + 0.3 * np.exp(-((80 * x - 20) ** 2))
    )


def gen_rdb7(n: int = RDB7_DEFAULT_N, seed: int = 0) -> Dataset:
    """1-D regression set: x uniform on [0,1], target rdb7_function(x)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = _generator(seed)
    x = rng.uniform(0.0, 1.0, size=(n, 1))
    return Dataset(x, rdb7_function(x), ("x",), ("y",))


def rastrigin_function(x, amplitude: float = 10.0):
    """Rastrigin value per row: A*n + sum(x_i^2 - A*cos(2*pi*x_i))."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    return amplitude * x.shape[1] + np.sum(x * x - amplitude * np.cos(2 * np.pi * x), axis=1)


def gen_rastrigin(
    n_dims: int = RASTRIGIN_DEFAULT_DIMS,
    n_train: int = RASTRIGIN_DEFAULT_TRAIN,
    n_test: int = RASTRIGIN_DEFAULT_TEST,
    seed: int = 0,
) -> tuple[Dataset, Dataset]:
    """Train/test sets sampled uniformly from the Rastrigin box [-5.12, 5.12]^n.

    Test points are drawn independently at random from the same box.
    """
    if n_dims < 1:
        raise ValueError(f"n_dims must be >= 1, got {n_dims}")
    names = tuple(f"x{i + 1}" for i in range(n_dims))
    sets = []
    for part, count in enumerate((n_train, n_test)):
        rng = _generator(seed, part)
        x = rng.uniform(-RASTRIGIN_BOUND, RASTRIGIN_BOUND, size=(count, n_dims))
        sets.append(Dataset(x, rastrigin_function(x).reshape(-1, 1), names, ("y",)))
    return sets[0], sets[1]


def load_csv(path, target_cols="last", has_header: bool = False) -> Dataset:
    """Load a numeric CSV; designated columns become targets, the rest inputs.

    ``target_cols`` is either the string "last", a list of zero-based column
    indices, or a list of header names (requires ``has_header``). Lines
    starting with ``#`` are provenance comments and are skipped. Row order
    is preserved.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    header: list[str] | None = None
    rows: list[list[float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            if record[0].lstrip().startswith("#"):
                continue
            if has_header and header is None:
                header = [c.strip() for c in record]
                continue
            values = []
            for col, cell in enumerate(record):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: non-numeric cell {cell!r} at row {lineno}, column {col + 1}"
                    ) from None
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"{path}: row {i + 1} has {len(row)} cells, expected {width}")
    data = np.array(rows, dtype=np.float64)
    names = header if header is not None else [f"c{i}" for i in range(width)]
    if len(names) != width:
        raise ValueError(f"{path}: header has {len(names)} names for {width} columns")

    if isinstance(target_cols, str):
        if target_cols.lower() != "last":
            raise ValueError(f"unknown target_cols spec {target_cols!r}")
        t_idx = [width - 1]
    else:
        t_idx = []
        for spec in target_cols:
            if isinstance(spec, str):
                if spec not in names:
                    raise ValueError(f"target column {spec!r} not found in header {names}")
                t_idx.append(names.index(spec))
            else:
                idx = int(spec)
                if not 0 <= idx < width:
                    raise ValueError(f"target column index {idx} out of range 0..{width - 1}")
                t_idx.append(idx)
    if not t_idx:
        raise ValueError("at least one target column is required")
    f_idx = [i for i in range(width) if i not in t_idx]
    if not f_idx:
        raise ValueError("no input columns left after selecting targets")
    return Dataset(
        data[:, f_idx],
        data[:, t_idx],
        tuple(names[i] for i in f_idx),
        tuple(names[i] for i in t_idx),
    )


def write_csv(ds: Dataset, path, provenance: str | None = None) -> None:
    """Write a dataset as CSV with a header and optional '#' provenance line."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.writer(fh)
        writer.writerow(list(ds.feature_names) + list(ds.target_names))
        for xi, yi in zip(ds.inputs, ds.targets):
            writer.writerow([repr(float(v)) for v in xi] + [repr(float(v)) for v in yi])
