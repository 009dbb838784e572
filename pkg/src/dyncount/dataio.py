"""Dataset ingestion, batching, and snapshot persistence.

Datasets are CSV files with a header row; column roles (time, count,
covariates) are declared in a schema rather than inferred.  Rows are
time-normalized onto [0, 1], sorted, and assigned to half-open batch
intervals [(s-1)/S, s/S), the last interval closed at 1; times beyond the
normalization maximum map to batch indices above S, which is how online
updates extend the time axis.

Snapshots persist as versioned JSON: a self-describing structured text
format whose floats round-trip bit-exactly.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import ConfigError, DataError, SnapshotFormatError
from .filtering import (
    SNAPSHOT_VERSION,
    GaussianState,
    ModelSnapshot,
    TraceSummary,
)


@dataclass(frozen=True)
class DatasetSchema:
    """Declares which CSV columns play which role.

    ``covariates`` lists every covariate column to load, in the order they
    should appear in the dataset; ``encodings`` maps a categorical column to
    an explicit value -> number coding (the loader applies declared codings
    but never infers them).
    """

    time_column: str
    count_column: str
    covariates: tuple[str, ...]
    encodings: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BatchDataset:
    """Time-ordered observations partitioned into equal batch intervals."""

    t: np.ndarray
    y: np.ndarray
    x: np.ndarray
    columns: tuple[str, ...]
    S: int
    batch_of: np.ndarray
    time_min: float
    time_max: float

    @property
    def n(self) -> int:
        return int(self.y.size)

    def batch_ids(self) -> np.ndarray:
        return np.unique(self.batch_of)

    def rows_in_batch(self, s: int) -> slice:
        lo = np.searchsorted(self.batch_of, s, side="left")
        hi = np.searchsorted(self.batch_of, s, side="right")
        return slice(int(lo), int(hi))

    def take(self, index) -> "BatchDataset":
        """Row subset preserving order and the normalization record."""
        return BatchDataset(
            t=self.t[index],
            y=self.y[index],
            x=self.x[index],
            columns=self.columns,
            S=self.S,
            batch_of=self.batch_of[index],
            time_min=self.time_min,
            time_max=self.time_max,
        )

    def split_at_fraction(self, fraction: float) -> tuple["BatchDataset", "BatchDataset"]:
        """Split time-sorted rows at a count quantile (early rows first)."""
        if not (0.0 < fraction < 1.0):
            raise ConfigError("split fraction must lie in (0, 1)")
        cut = int(np.ceil(fraction * self.n))
        return self.take(slice(0, cut)), self.take(slice(cut, self.n))


def _assign_batches(t_norm: np.ndarray, S: int) -> np.ndarray:
    # [(s-1)/S, s/S) with the final training interval closed at 1
    idx = np.floor(t_norm * S).astype(int) + 1
    idx[(t_norm == 1.0) & (idx == S + 1)] = S
    return idx


def from_arrays(
    t,
    y,
    x,
    columns,
    S: int,
    time_min: float | None = None,
    time_max: float | None = None,
    normalized: bool = False,
    validate_counts: bool = True,
) -> BatchDataset:
    """Build a dataset from in-memory arrays (used by the simulator and tests)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] != t.size:
        x = x.T
    if t.size != y.size or (t.size and x.shape[0] != t.size):
        raise DataError("t, y and covariate rows must align")
    if not np.all(np.isfinite(t)) or not np.all(np.isfinite(x)):
        raise DataError("times and covariates must be finite")
    if validate_counts and (np.any(y < 0) or np.any(y != np.floor(y))):
        raise DataError("counts must be non-negative integers")
    if S < 1:
        raise ConfigError("S must be at least 1")
    if normalized:
        t_norm = t
        time_min = 0.0 if time_min is None else float(time_min)
        time_max = 1.0 if time_max is None else float(time_max)
    else:
        if time_min is None:
            time_min = float(np.min(t)) if t.size else 0.0
        if time_max is None:
            time_max = float(np.max(t)) if t.size else 1.0
        span = time_max - time_min
        t_norm = (t - time_min) / span if span > 0 else np.zeros_like(t)
    if np.any(t_norm < -1e-12):
        raise DataError("times precede the recorded normalization minimum")
    order = np.argsort(t_norm, kind="stable")
    t_norm = t_norm[order]
    if x.size == 0:
        x = np.zeros((t.size, len(tuple(columns))))
    return BatchDataset(
        t=t_norm,
        y=y[order],
        x=x[order],
        columns=tuple(columns),
        S=int(S),
        batch_of=_assign_batches(t_norm, S),
        time_min=float(time_min),
        time_max=float(time_max),
    )


def _parse_cell(raw: str, column: str, encodings: dict) -> float:
    text = raw.strip()
    if text == "":
        raise ValueError("missing value")
    if column in encodings:
        coding = encodings[column]
        if text in coding:
            return float(coding[text])
        raise ValueError(f"value {text!r} not in declared coding")
    return float(text)


def load_dataset(path, schema: DatasetSchema, config: ModelConfig) -> BatchDataset:
    """Parse, validate, time-normalize, sort and batch a CSV dataset.

    Every problem row is collected and reported with its line number in a
    single ingestion error.  Lines starting with '#' are skipped (the
    simulator writes its generator provenance that way).
    """
    return _load_csv(path, schema, config, require_counts=True)


def _load_csv(path, schema, config, require_counts: bool) -> BatchDataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path, newline="") as handle:
        lines = [ln for ln in handle if not ln.lstrip().startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    header = [h.strip() for h in header]
    needed = [schema.time_column] + list(schema.covariates)
    has_counts = schema.count_column in header
    if require_counts and not has_counts:
        raise DataError(f"{path}: missing column {schema.count_column!r}")
    if has_counts:
        needed = [schema.time_column, schema.count_column] + list(schema.covariates)
    missing = [c for c in needed if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    pos = {c: header.index(c) for c in needed}
    t_vals, y_vals, x_vals = [], [], []
    problems = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            if len(row) < len(header):
                raise ValueError("short row")
            t_val = _parse_cell(row[pos[schema.time_column]], schema.time_column, {})
            y_val = 0.0
            if has_counts:
                y_val = _parse_cell(row[pos[schema.count_column]], schema.count_column, {})
                if y_val < 0 or y_val != np.floor(y_val):
                    raise ValueError("count must be a non-negative integer")
            x_row = [_parse_cell(row[pos[c]], c, schema.encodings) for c in schema.covariates]
        except ValueError as exc:
            problems.append(f"line {line_no}: {exc}")
            continue
        t_vals.append(t_val)
        y_vals.append(y_val)
        x_vals.append(x_row)
    if problems:
        raise DataError(f"{path}: " + "; ".join(problems))
    x = np.asarray(x_vals, dtype=float).reshape(len(t_vals), len(schema.covariates))
    return from_arrays(
        t=np.asarray(t_vals),
        y=np.asarray(y_vals),
        x=x,
        columns=schema.covariates,
        S=config.S,
        time_min=config.time_min,
        time_max=config.time_max,
    )


def save_dataset(dataset: BatchDataset, path, comment: str | None = None) -> None:
    """Write a dataset back to CSV (normalized times), atomically."""
    header = ["t", "y", *dataset.columns]
    rows = np.column_stack([dataset.t, dataset.y, dataset.x]) if dataset.n else np.zeros((0, len(header)))
    _atomic_write(path, _format_csv(header, rows, comment))


def _format_csv(header, rows, comment=None) -> str:
    out = []
    if comment:
        out.append(f"# {comment}")
    out.append(",".join(header))
    for row in rows:
        out.append(",".join(repr(float(v)) for v in row))
    return "\n".join(out) + "\n"


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _config_to_dict(config: ModelConfig) -> dict:
    out = asdict(config)
    for key in ("tau", "varying", "constant", "zero_varying", "zero_constant"):
        if out[key] is not None:
            out[key] = list(out[key])
    return out


def _config_from_dict(data: dict) -> ModelConfig:
    kwargs = dict(data)
    for key in ("tau", "varying", "constant", "zero_varying", "zero_constant"):
        if kwargs.get(key) is not None:
            kwargs[key] = tuple(kwargs[key])
        elif key in ("varying", "constant") and kwargs.get(key) is None:
            kwargs[key] = ()
    return ModelConfig(**kwargs)


def _state_to_dict(state: GaussianState) -> dict:
    return {
        "mean": state.mean.tolist(),
        "cov": state.cov.tolist(),
        "batch_index": int(state.batch_index),
        "timepoint": float(state.timepoint),
    }


def _state_from_dict(data: dict) -> GaussianState:
    return GaussianState(
        mean=np.asarray(data["mean"], dtype=float),
        cov=np.asarray(data["cov"], dtype=float),
        batch_index=int(data["batch_index"]),
        timepoint=float(data["timepoint"]),
    )


def _trace_to_dict(trace: TraceSummary) -> dict:
    return {
        "batch_index": trace.batch_index.tolist(),
        "timepoint": trace.timepoint.tolist(),
        "n_obs": trace.n_obs.tolist(),
        "newton_iterations": trace.newton_iterations.tolist(),
        "predictive_loglik": trace.predictive_loglik.tolist(),
        "predicted_mean": trace.predicted_mean.tolist(),
        "predicted_var": trace.predicted_var.tolist(),
        "filtered_mean": trace.filtered_mean.tolist(),
        "filtered_var": trace.filtered_var.tolist(),
    }


def _trace_from_dict(data: dict, d: int) -> TraceSummary:
    n = len(data["batch_index"])
    return TraceSummary(
        batch_index=np.asarray(data["batch_index"], dtype=int),
        timepoint=np.asarray(data["timepoint"], dtype=float),
        n_obs=np.asarray(data["n_obs"], dtype=int),
        newton_iterations=np.asarray(data["newton_iterations"], dtype=int),
        predictive_loglik=np.asarray(data["predictive_loglik"], dtype=float),
        predicted_mean=np.asarray(data["predicted_mean"], dtype=float).reshape(n, d),
        predicted_var=np.asarray(data["predicted_var"], dtype=float).reshape(n, d),
        filtered_mean=np.asarray(data["filtered_mean"], dtype=float).reshape(n, d),
        filtered_var=np.asarray(data["filtered_var"], dtype=float).reshape(n, d),
    )


def save_snapshot(snapshot: ModelSnapshot, path, schema: DatasetSchema | None = None) -> None:
    """Persist a snapshot as versioned JSON; the write is atomic.

    An optional dataset schema rides along so update and predict commands
    can reload data files without the original run configuration.
    """
    doc = {
        "format": "dyncount-snapshot",
        "version": snapshot.version,
        "created": snapshot.created,
        "config": _config_to_dict(snapshot.config),
        "state": _state_to_dict(snapshot.state),
        "trace": _trace_to_dict(snapshot.trace),
    }
    if schema is not None:
        doc["schema"] = {
            "time_column": schema.time_column,
            "count_column": schema.count_column,
            "covariates": list(schema.covariates),
            "encodings": schema.encodings,
        }
    _atomic_write(path, json.dumps(doc, indent=1))


def load_snapshot(path) -> tuple[ModelSnapshot, DatasetSchema | None]:
    """Load a snapshot written by :func:`save_snapshot`."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"snapshot file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SnapshotFormatError(f"{path}: not a valid snapshot file ({exc})") from exc
    if doc.get("format") != "dyncount-snapshot":
        raise SnapshotFormatError(f"{path}: not a dyncount snapshot")
    if doc.get("version") != SNAPSHOT_VERSION:
        raise SnapshotFormatError(
            f"{path}: snapshot version {doc.get('version')} is not supported "
            f"(current {SNAPSHOT_VERSION}); upgrade required"
        )
    config = _config_from_dict(doc["config"])
    state = _state_from_dict(doc["state"])
    trace = _trace_from_dict(doc["trace"], state.mean.size)
    snapshot = ModelSnapshot(
        config=config,
        state=state,
        trace=trace,
        created=doc["created"],
        version=doc["version"],
    )
    schema = None
    if "schema" in doc:
        s = doc["schema"]
        schema = DatasetSchema(
            time_column=s["time_column"],
            count_column=s["count_column"],
            covariates=tuple(s["covariates"]),
            encodings=s.get("encodings", {}),
        )
    return snapshot, schema
