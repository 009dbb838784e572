"""Command-line front door: fit, update, predict, simulate, evaluate.

A single key/value configuration document drives all commands; flags
override document keys.  Exit codes: 0 success, 1 computational failure,
2 usage or configuration error, 3 data error.  On failure one
machine-readable line is printed to stderr: ``error:<code>: <message>``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ModelConfig
from .dataio import (
    BatchDataset,
    DatasetSchema,
    _atomic_write,
    _load_csv,
    load_dataset,
    load_snapshot,
    save_dataset,
    save_snapshot,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DyncountError,
    MetricError,
    NumericError,
    SelectionError,
    SequencingError,
    SnapshotFormatError,
)
from .evaluation import double_lift_data, lift_plot_data, metric_report
from .families import family_for_config
from .filtering import design_for_dataset, fit, update
from .prediction import (
    coefficient_bands,
    k_step_state,
    one_step_predictions,
    pmf_matrix,
    predict_counts,
)
from .simulate import RNG_ALGORITHM, SimSpec, generate
from .smoothing import SmoothingSearchConfig, refresh_smoothing, select_smoothing

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_USAGE = 2
EXIT_DATA = 3

_ERROR_CODES = {
    ConfigError: ("config_error", EXIT_USAGE),
    ValueError: ("usage_error", EXIT_USAGE),
    DataError: ("data_error", EXIT_DATA),
    SequencingError: ("sequencing_error", EXIT_DATA),
    MetricError: ("metric_error", EXIT_DATA),
    SnapshotFormatError: ("snapshot_error", EXIT_DATA),
    ConvergenceError: ("convergence_error", EXIT_COMPUTE),
    NumericError: ("numeric_error", EXIT_COMPUTE),
    SelectionError: ("selection_error", EXIT_COMPUTE),
}


def parse_config_document(path) -> dict[str, str]:
    """Parse a ``key = value`` text document; '#' starts a comment line."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config document not found: {path}")
    doc: dict[str, str] = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
        key, value = line.split("=", 1)
        doc[key.strip()] = value.strip()
    return doc


def _get_list(doc, key):
    raw = doc.get(key, "")
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _get_float(doc, key, default=None):
    if key not in doc or doc[key] == "":
        return default
    try:
        return float(doc[key])
    except ValueError:
        raise ConfigError(f"config key {key!r} must be a number, got {doc[key]!r}") from None


def _get_int(doc, key, default=None):
    value = _get_float(doc, key, default)
    return None if value is None else int(value)


def _get_bool(doc, key, default=False):
    if key not in doc:
        return default
    raw = doc[key].lower()
    if raw in ("true", "yes", "1"):
        return True
    if raw in ("false", "no", "0"):
        return False
    raise ConfigError(f"config key {key!r} must be true or false")


def _encodings(doc) -> dict:
    out: dict[str, dict[str, float]] = {}
    for key, raw in doc.items():
        if not key.startswith("encode."):
            continue
        column = key[len("encode."):]
        coding = {}
        for pair in raw.split(","):
            if not pair.strip():
                continue
            if ":" not in pair:
                raise ConfigError(f"encoding for {column!r} must be 'value:number' pairs")
            name, num = pair.split(":", 1)
            coding[name.strip()] = float(num)
        out[column] = coding
    return out


def build_model_config(doc: dict[str, str]) -> ModelConfig:
    family = doc.get("family", "poisson")
    varying = _get_list(doc, "varying")
    constant = _get_list(doc, "constant")
    kwargs = dict(
        family=family,
        q1=len(varying),
        q2=len(constant),
        S=_get_int(doc, "batches", 10),
        prior_scale=_get_float(doc, "prior_scale", 100.0),
        varying=varying,
        constant=constant,
        time_min=_get_float(doc, "time_min"),
        time_max=_get_float(doc, "time_max"),
        nb_alpha=_get_float(doc, "nb_alpha"),
    )
    tau = _get_list(doc, "tau")
    if tau:
        kwargs["tau"] = tuple(float(v) for v in tau)
    if family == "zip":
        zero_varying = _get_list(doc, "zero_varying") if "zero_varying" in doc else varying
        zero_constant = _get_list(doc, "zero_constant") if "zero_constant" in doc else constant
        kwargs.update(
            zero_q1=len(zero_varying),
            zero_q2=len(zero_constant),
            zero_varying=zero_varying,
            zero_constant=zero_constant,
        )
    return ModelConfig(**kwargs)


def build_schema(doc: dict[str, str], config: ModelConfig) -> DatasetSchema:
    columns: list[str] = []
    for name in (*config.varying, *config.constant):
        if name not in columns:
            columns.append(name)
    if config.family == "zip":
        for name in (*(config.zero_varying or ()), *(config.zero_constant or ())):
            if name not in columns:
                columns.append(name)
    return DatasetSchema(
        time_column=doc.get("time_column", "t"),
        count_column=doc.get("count_column", "y"),
        covariates=tuple(columns),
        encodings=_encodings(doc),
    )


def build_search(doc: dict[str, str]) -> SmoothingSearchConfig:
    return SmoothingSearchConfig(
        log10_low=_get_float(doc, "log10_tau_low", -4.0),
        log10_high=_get_float(doc, "log10_tau_high", 8.0),
        optimizer=doc.get("optimizer", "simplex"),
        grid_points=_get_int(doc, "grid_points", 5),
        simplex_tol=_get_float(doc, "simplex_tol", 1e-2),
        max_evaluations=_get_int(doc, "max_evaluations", 200),
    )


def _write_bands(path, series) -> None:
    lines = ["coefficient,kind,t,mean,lower,upper,phase"]
    for band in series.coefficients:
        for i in range(band.timepoints.size):
            lines.append(
                f"{band.name},{band.kind},{band.timepoints[i]!r},{band.mean[i]!r},"
                f"{band.lower[i]!r},{band.upper[i]!r},{band.phase[i]}"
            )
    _atomic_write(path, "\n".join(lines) + "\n")


def _derived_path(base, suffix) -> Path:
    base = Path(base)
    return base.with_name(base.stem + suffix)


def cmd_fit(args) -> int:
    doc = parse_config_document(args.config)
    config = build_model_config(doc)
    schema = build_schema(doc, config)
    dataset = load_dataset(args.data, schema, config)
    if config.time_min is None:
        config = config.with_time_range(dataset.time_min, dataset.time_max)
    select = _get_bool(doc, "select_smoothing", config.tau is None)
    if args.skip_selection:
        select = False
    if select:
        selection = select_smoothing(dataset, config, build_search(doc))
        config = config.with_tau(selection.tau, selection.nb_alpha)
    elif config.tau is None:
        raise ConfigError("tau must be given when smoothing selection is disabled")
    snapshot = fit(dataset, config)
    save_snapshot(snapshot, args.out_snapshot, schema)
    level = _get_float(doc, "band_level", 0.95)
    bands = coefficient_bands(snapshot.trace, level=level, config=config)
    bands_path = args.out_bands or _derived_path(args.out_snapshot, ".bands.csv")
    _write_bands(bands_path, bands)
    report_path = args.out_report or _derived_path(args.out_snapshot, ".report.txt")
    trace = snapshot.trace
    lines = [
        f"family = {config.family}",
        f"batches_processed = {len(trace)}",
        f"tau = {', '.join(repr(v) for v in config.tau)}",
    ]
    if config.nb_alpha is not None:
        lines.append(f"nb_alpha = {config.nb_alpha!r}")
    lines.append(f"predictive_loglik = {float(np.sum(trace.predictive_loglik))!r}")
    lines.append(
        "newton_iterations = " + ", ".join(str(int(v)) for v in trace.newton_iterations)
    )
    _atomic_write(report_path, "\n".join(lines) + "\n")
    print(f"fit: wrote {args.out_snapshot}, {bands_path}, {report_path}")
    return EXIT_OK


def cmd_update(args) -> int:
    snapshot, schema = load_snapshot(args.snapshot)
    doc = parse_config_document(args.config) if args.config else {}
    if schema is None:
        schema = build_schema(doc, snapshot.config)
    dataset = load_dataset(args.data, schema, snapshot.config)
    if args.refresh_smoothing:
        # the data file must then hold all accumulated observations
        search = build_search(doc)
        new_snapshot = refresh_smoothing(snapshot, dataset, search)
    else:
        new_snapshot = update(snapshot, dataset)
    save_snapshot(new_snapshot, args.out_snapshot, schema)
    print(f"update: wrote {args.out_snapshot} (batch {new_snapshot.batch_index})")
    return EXIT_OK


def cmd_predict(args) -> int:
    snapshot, schema = load_snapshot(args.snapshot)
    doc = parse_config_document(args.config) if args.config else {}
    if schema is None:
        schema = build_schema(doc, snapshot.config)
    config = snapshot.config
    family = family_for_config(config)
    k_max = args.pmf_max if args.pmf_max is not None else _get_int(doc, "pmf_max", 8)
    level = _get_float(doc, "band_level", 0.95)
    if args.horizon is not None:
        if args.horizon < 1:
            raise ValueError("prediction horizon must be at least 1")
        dataset = _load_csv(args.data, schema, config, require_counts=False)
        design = design_for_dataset(dataset, config)
        state = k_step_state(snapshot.state, args.horizon, config)
        if isinstance(design, tuple):
            eta = np.column_stack([design[0] @ state.mean, design[1] @ state.mean])
        else:
            eta = design @ state.mean
        means = np.asarray(family.mean(eta), dtype=float)
        pmf = pmf_matrix(family, eta, k_max)
        forecast_states = [
            k_step_state(snapshot.state, k, config) for k in range(1, args.horizon + 1)
        ]
        bands = coefficient_bands(
            snapshot.trace, forecast_states, level=level, config=config
        )
    else:
        dataset = load_dataset(args.data, schema, config)
        result = one_step_predictions(snapshot, dataset, family)
        means = result.means
        pmf = pmf_matrix(family, result.eta, k_max)
        bands = coefficient_bands(
            result.snapshot.trace, level=level, config=config, use="predicted"
        )
    header = ["row", "t", "mean"] + [f"pmf_{k}" for k in range(k_max + 1)]
    lines = [",".join(header)]
    for i in range(means.size):
        cells = [str(i), repr(float(dataset.t[i])), repr(float(means[i]))]
        cells += [repr(float(v)) for v in pmf[i]]
        lines.append(",".join(cells))
    _atomic_write(args.out, "\n".join(lines) + "\n")
    bands_path = args.out_bands or _derived_path(args.out, ".bands.csv")
    _write_bands(bands_path, bands)
    print(f"predict: wrote {args.out}, {bands_path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    doc = parse_config_document(args.config) if args.config else {}
    spec = SimSpec(
        n=args.n,
        seed=args.seed,
        family=doc.get("sim_family", "poisson"),
        S=args.batches or _get_int(doc, "batches", 50),
        train_fraction=_get_float(doc, "train_fraction", 0.75),
        nb_alpha=_get_float(doc, "nb_alpha"),
    )
    train, test = generate(spec)
    full = BatchDataset(
        t=np.concatenate([train.t, test.t]),
        y=np.concatenate([train.y, test.y]),
        x=np.vstack([train.x, test.x]),
        columns=train.columns,
        S=train.S,
        batch_of=np.concatenate([train.batch_of, test.batch_of]),
        time_min=train.time_min,
        time_max=train.time_max,
    )
    save_dataset(full, args.out, comment=f"generator={RNG_ALGORITHM} seed={spec.seed} n={spec.n}")
    print(f"simulate: wrote {args.out} ({full.n} rows)")
    return EXIT_OK


def _read_predictions(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"predictions file not found: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    header = [h.strip() for h in lines[0].split(",")]
    if "mean" not in header:
        raise DataError(f"{path}: predictions file needs a 'mean' column")
    mean_idx = header.index("mean")
    pmf_cols = sorted(
        (int(h.split("_", 1)[1]), header.index(h)) for h in header if h.startswith("pmf_")
    )
    means, pmf_rows = [], []
    for line in lines[1:]:
        cells = line.split(",")
        means.append(float(cells[mean_idx]))
        if pmf_cols:
            pmf_rows.append([float(cells[idx]) for _, idx in pmf_cols])
    means = np.asarray(means)
    pmf = np.asarray(pmf_rows) if pmf_cols else None
    return means, pmf


def _read_counts(path, count_column):
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    header = [h.strip() for h in lines[0].split(",")]
    if count_column not in header:
        raise DataError(f"{path}: missing count column {count_column!r}")
    idx = header.index(count_column)
    return np.asarray([float(line.split(",")[idx]) for line in lines[1:]])


def cmd_evaluate(args) -> int:
    means, pmf = _read_predictions(args.predictions)
    y = _read_counts(args.data, args.count_column)
    if y.size != means.size:
        raise DataError(
            f"row mismatch: {y.size} data rows vs {means.size} prediction rows"
        )
    report = metric_report(y, means, pmf)
    _atomic_write(args.out, "\n".join(report.to_lines()) + "\n")
    lift_rows = lift_plot_data(y, means)
    lift_path = args.out_lift or _derived_path(args.out, ".lift.csv")
    lift_lines = ["decile,mean_prediction,mean_response"]
    lift_lines += [f"{d},{p!r},{r!r}" for d, p, r in lift_rows]
    _atomic_write(lift_path, "\n".join(lift_lines) + "\n")
    written = [str(args.out), str(lift_path)]
    if args.predictions_b:
        means_b, _ = _read_predictions(args.predictions_b)
        if means_b.size != y.size:
            raise DataError("secondary predictions do not align with the data rows")
        result = double_lift_data(y, means, means_b)
        dl_path = args.out_double_lift or _derived_path(args.out, ".double_lift.csv")
        dl_lines = ["bucket_low,bucket_high,n,actual_ratio,model_ratio"]
        for row in result.rows:
            dl_lines.append(
                f"{row.bucket_low!r},{row.bucket_high!r},{row.n},"
                f"{row.actual_over_b!r},{row.a_over_b!r}"
            )
        _atomic_write(dl_path, "\n".join(dl_lines) + "\n")
        written.append(str(dl_path))
    print("evaluate: wrote " + ", ".join(written))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dyncount",
        description="Dynamic count regression with time-varying coefficients",
    )
    parser.add_argument("--version", action="version", version=f"dyncount {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="select smoothing and fit on a training file")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--out-snapshot", required=True)
    p_fit.add_argument("--out-bands")
    p_fit.add_argument("--out-report")
    p_fit.add_argument(
        "--skip-selection", action="store_true", help="use the configured tau verbatim"
    )
    p_fit.set_defaults(func=cmd_fit)

    p_up = sub.add_parser("update", help="resume filtering over newly arrived batches")
    p_up.add_argument("--snapshot", required=True)
    p_up.add_argument("--data", required=True)
    p_up.add_argument("--config")
    p_up.add_argument("--out-snapshot", required=True)
    p_up.add_argument(
        "--refresh-smoothing",
        action="store_true",
        help="re-select smoothing and refit; --data must then hold all accumulated data",
    )
    p_up.set_defaults(func=cmd_update)

    p_pr = sub.add_parser("predict", help="predict new rows from a snapshot")
    p_pr.add_argument("--snapshot", required=True)
    p_pr.add_argument("--data", required=True)
    p_pr.add_argument("--config")
    p_pr.add_argument(
        "--horizon",
        type=int,
        help="fixed forecast horizon in batches; omit for one-step-ahead refiltering",
    )
    p_pr.add_argument("--out", required=True)
    p_pr.add_argument("--out-bands")
    p_pr.add_argument("--pmf-max", type=int)
    p_pr.set_defaults(func=cmd_predict)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset CSV")
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--batches", type=int)
    p_sim.add_argument("--config")
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_ev = sub.add_parser("evaluate", help="score predictions against observed counts")
    p_ev.add_argument("--predictions", required=True)
    p_ev.add_argument("--predictions-b", help="second model for the double-lift table")
    p_ev.add_argument("--data", required=True)
    p_ev.add_argument("--count-column", default="y")
    p_ev.add_argument("--out", required=True)
    p_ev.add_argument("--out-lift")
    p_ev.add_argument("--out-double-lift")
    p_ev.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DyncountError as exc:
        code, exit_code = "internal_error", EXIT_COMPUTE
        for cls, (name, ec) in _ERROR_CODES.items():
            if isinstance(exc, cls):
                code, exit_code = name, ec
                break
        print(f"error:{code}: {exc}", file=sys.stderr)
        return exit_code
    except ValueError as exc:
        print(f"error:usage_error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
