"""Datasets: the in-memory container, a synthetic generator and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["Dataset", "SyntheticSpec", "DataError", "generate_synthetic", "load_csv", "save_csv"]


class DataError(ValueError):
    """Malformed input data; the message names the offending row/column."""


@dataclass(eq=False)
class Dataset:
    features: np.ndarray
    watch_time: np.ndarray
    duration: np.ndarray | None = None
    columns: list[str] | None = None
    truth_mean: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.watch_time = np.asarray(self.watch_time, dtype=np.float64).ravel()
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        n = self.watch_time.size
        if self.features.shape[0] != n:
            raise DataError(f"{self.features.shape[0]} feature rows but {n} watch times")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain NaN or infinite values")
        if not np.all(np.isfinite(self.watch_time)) or np.any(self.watch_time < 0):
            raise DataError("watch times must be finite and non-negative")
        if self.duration is not None:
            self.duration = np.asarray(self.duration, dtype=np.float64).ravel()
            if self.duration.size != n:
                raise DataError(f"{self.duration.size} durations but {n} watch times")
            if not np.all(np.isfinite(self.duration)) or np.any(self.duration <= 0):
                raise DataError("durations must be finite and positive")

    def __len__(self):
        return self.watch_time.size

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> Dataset:
        pick = lambda a: None if a is None else a[idx]
        return Dataset(self.features[idx], self.watch_time[idx], pick(self.duration),
                       self.columns, pick(self.truth_mean))

    def split(self, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
        order = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(len(self) * (1 - test_fraction)))
        return self.subset(np.sort(order[:cut])), self.subset(np.sort(order[cut:]))


@dataclass
class SyntheticSpec:
    """Parameters of the synthetic watch-time generator.

    The generator follows the causal graph D -> X, D -> T, X -> T, where D is a
    categorical duration bucket.  ``confound_x`` scales the shift D induces
    in the features and ``confound_t`` the multiplicative effect of D on
    watch time.  Noise is multiplicative and mean preserving: log-normal
    (``noise_kind="lognormal"``, right-skewed) or symmetric uniform
    (``"uniform"``, ``T = mean * (1 + s * U)`` with ``U ~ U(-1, 1)``, so the
    median equals the mean).  ``hetero`` lets the noise scale ``s`` depend on
    the features.
    """

    n: int = 5000
    input_dim: int = 8
    noise: float = 0.5
    confound_x: float = 0.0
    confound_t: float = 0.0
    hetero: float = 0.0
    noise_kind: str = "lognormal"
    duration_levels: int = 8
    base_seconds: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.input_dim < 1:
            raise ValueError("n and input_dim must be >= 1")
        if self.noise < 0 or self.hetero < 0:
            raise ValueError("noise and hetero must be >= 0")
        if self.duration_levels < 1:
            raise ValueError("duration_levels must be >= 1")
        if self.noise_kind not in ("lognormal", "uniform"):
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")
        if self.noise_kind == "uniform" and self.noise * (1 + self.hetero) > 1:
            raise ValueError("uniform noise needs noise * (1 + hetero) <= 1 to keep T >= 0")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw a dataset; ``truth_mean`` holds the exact E[T | X, D] for every row."""
    rng = np.random.default_rng(spec.seed)
    d = spec.input_dim
    # structural coefficients come from a fixed stream so that datasets with
    # different seeds share the same ground-truth function
    coef = np.random.default_rng(12345 + d)
    w_mean = coef.normal(size=d) / np.sqrt(d)
    w_wave = coef.normal(size=d) / np.sqrt(d)
    w_noise = coef.normal(size=d) / np.sqrt(d)
    shift = coef.choice([-1.0, 1.0], size=d)

    levels = spec.duration_levels
    D = rng.integers(0, levels, spec.n)
    centred = (D - (levels - 1) / 2) / max((levels - 1) / 2, 1.0)
    duration = 15.0 * (D + 1) + rng.uniform(0.0, 15.0, spec.n)

    z = rng.normal(size=(spec.n, d))
    X = z + spec.confound_x * centred[:, None] * shift
    score = X @ w_mean + 0.5 * np.sin(2.0 * (X @ w_wave))
    mean = spec.base_seconds * np.exp(0.6 * score + spec.confound_t * centred)

    sigma = spec.noise * (1.0 + spec.hetero * np.tanh(X @ w_noise))
    if spec.noise_kind == "lognormal":
        T = mean * np.exp(sigma * rng.normal(size=spec.n) - 0.5 * sigma ** 2)
    else:
        T = mean * (1.0 + sigma * rng.uniform(-1.0, 1.0, spec.n))
    cols = [f"x{i}" for i in range(d)]
    return Dataset(X, T, duration, cols, mean)


def load_csv(path, label: str = "watch_time", duration: str | None = "duration",
             features: list[str] | None = None) -> Dataset:
    """Read a headed CSV file.

    ``label`` and (if present) ``duration`` columns are pulled out; the
    remaining columns are features unless ``features`` names them
    explicitly.  A ``duration`` column that is absent is simply skipped;
    pass ``duration=None`` to never read one.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = list(reader)

    if label not in header:
        raise DataError(f"{path}: missing label column {label!r}")
    use_duration = duration is not None and duration in header
    if features is None:
        skip = {label, duration if use_duration else None}
        features = [h for h in header if h not in skip]
    missing = [c for c in features if c not in header]
    if missing:
        raise DataError(f"{path}: missing feature columns {missing}")
    if not features:
        raise DataError(f"{path}: no feature columns")

    wanted = [label, *([duration] if use_duration else []), *features]
    index = [header.index(c) for c in wanted]
    values = np.empty((len(rows), len(wanted)))
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
        for j, (col, i) in enumerate(zip(wanted, index)):
            try:
                v = float(row[i])
            except ValueError:
                raise DataError(f"{path}: row {r}, column {col!r}: non-numeric value {row[i]!r}") from None
            if not np.isfinite(v):
                raise DataError(f"{path}: row {r}, column {col!r}: value {row[i]!r} is not finite")
            values[r - 2, j] = v
    if values.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    bad = np.flatnonzero(values[:, 0] < 0)
    if bad.size:
        raise DataError(f"{path}: row {bad[0] + 2}, column {label!r}: negative watch time")
    dur = values[:, 1] if use_duration else None
    return Dataset(values[:, len(wanted) - len(features):], values[:, 0], dur, list(features))


def save_csv(dataset: Dataset, path, label: str = "watch_time", duration: str = "duration") -> None:
    cols = dataset.columns or [f"x{i}" for i in range(dataset.input_dim)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        head = [label] + ([duration] if dataset.duration is not None else []) + cols
        w.writerow(head)
        for i in range(len(dataset)):
            row = [repr(float(dataset.watch_time[i]))]
            if dataset.duration is not None:
                row.append(repr(float(dataset.duration[i])))
            row += [repr(float(v)) for v in dataset.features[i]]
            w.writerow(row)
