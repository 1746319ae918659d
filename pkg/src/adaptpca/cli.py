"""Command-line interface.

Subcommands: ``fit-scaler``, ``run``, ``eval``, ``sweep`` and ``synth``.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from adaptpca import __version__
from adaptpca.config import (
    DETECTOR_KEYS,
    RunConfig,
    read_kv,
    run_config_from_kv,
    synth_spec_from_kv,
    with_params,
)
from adaptpca.detector import Detector, DetectorConfig, Verdict
from adaptpca.errors import AdaptPcaError, ConfigError
from adaptpca.evaluation import (
    extract_events,
    flag_fractions,
    match_rois,
    rank_events,
    read_verdicts_csv,
    write_events_csv,
    write_verdicts_csv,
)
from adaptpca.ingestion import (
    TimeSeries,
    concat_series,
    drop_incomplete,
    format_times,
    read_intervals_csv,
    read_timeseries_csv,
    write_intervals_csv,
    write_timeseries_csv,
)
from adaptpca.pca_core import PcaModel, load_model, save_model
from adaptpca.scaling import GroupScaler, fit_group_scaler, load_scaler, save_scaler, scale
from adaptpca.synth import gen_regime_stream

logger = logging.getLogger("adaptpca")

FIT_ON_INPUT = "fit-on-input"


class UsageError(Exception):
    """Bad invocation detected after argument parsing; exits with code 2."""


# --- shared pipeline ---------------------------------------------------------


@dataclass
class RunResult:
    timestamps: np.ndarray
    verdicts: list[Verdict]
    model: Optional[PcaModel]
    evolution: list[tuple[int, PcaModel]] = field(default_factory=list)


def _load_run_config(path: Optional[str], overrides: dict) -> RunConfig:
    kv = read_kv(path) if path else {}
    return run_config_from_kv(kv, overrides)


def _read_inputs(paths: Sequence[str], schema) -> list[TimeSeries]:
    out = []
    for p in paths:
        series = read_timeseries_csv(p, schema)
        series, removed = drop_incomplete(series)
        if removed:
            print(f"{p}: dropped {removed} incomplete rows", file=sys.stderr)
        out.append(series)
    return out


def _resolve_scaler(spec: str, inputs: Sequence[TimeSeries], inputs_names: Sequence[str]) -> GroupScaler:
    if spec == FIT_ON_INPUT:
        data = concat_series(list(inputs)) if len(inputs) > 1 else inputs[0]
        if len(data) == 0:
            raise ConfigError("no complete samples to fit the scaler on")
        return fit_group_scaler(data.values, data.group_map, provenance=f"{FIT_ON_INPUT}:{','.join(inputs_names)}")
    return load_scaler(spec)


def _interval_breaks(timestamps: np.ndarray, interval_starts: Sequence[int]) -> set[int]:
    idx = np.searchsorted(timestamps, np.asarray(interval_starts, dtype=np.int64), side="left")
    return {int(i) for i in idx if 0 < i < len(timestamps)}


def detect(
    segments: Sequence[TimeSeries],
    scaler: GroupScaler,
    config: DetectorConfig,
    initial_model: Optional[PcaModel] = None,
    interval_starts: Sequence[int] = (),
) -> RunResult:
    """Scale and replay ``segments`` in order through one detector.

    ``begin_new_interval`` is called at every segment boundary and at the
    first sample at or after each of ``interval_starts``.
    """
    det = Detector(config, scaler.d, initial_model=initial_model)
    verdicts: list[Verdict] = []
    stamps: list[np.ndarray] = []
    evolution: list[tuple[int, PcaModel]] = []
    model = det.model
    for k, seg in enumerate(segments):
        scaler.check_features(seg.feature_names)
        if len(seg) == 0:
            continue
        X = scale(scaler, seg.values)
        breaks = _interval_breaks(seg.timestamps, interval_starts)
        for i, x in enumerate(X):
            if (i == 0 and verdicts) or i in breaks:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    det.begin_new_interval()
            verdicts.append(det.step(x))
            if det.model is not model:
                model = det.model
                evolution.append((int(seg.timestamps[i]), model))
        stamps.append(seg.timestamps)
    ts = np.concatenate(stamps) if stamps else np.zeros(0, dtype=np.int64)
    return RunResult(ts, verdicts, det.model, evolution)


def _write_evolution(path: str, evolution, feature_names) -> None:
    rows = ["time,component_index,feature_name,loading"]
    times = format_times(np.array([t for t, _ in evolution], dtype=np.int64))
    for t, (_, model) in zip(times, evolution):
        for j in range(model.components.shape[1]):
            for f, name in enumerate(feature_names):
                rows.append(f"{t},{j},{name},{float(model.components[f, j])!r}")
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


# --- commands ----------------------------------------------------------------


def cmd_fit_scaler(args) -> int:
    cfg = _load_run_config(args.config, {})
    if cfg.groups is None:
        raise UsageError(f"config {args.config!r} defines no groups.<name> entries")
    series = _read_inputs([args.input], cfg.groups)[0]
    if len(series) == 0:
        raise ConfigError("no complete samples to fit the scaler on")
    scaler = fit_group_scaler(series.values, series.group_map, provenance=args.provenance or Path(args.input).name)
    save_scaler(scaler, args.out)
    for g, name in enumerate(scaler.groups.group_names):
        print(f"{name}: min={float(scaler.mins[g])!r} max={float(scaler.maxs[g])!r}")
    return 0


def _detector_overrides(args) -> dict:
    return {key: getattr(args, attr) for key, attr in _OVERRIDE_ATTRS.items()}


def cmd_run(args) -> int:
    cfg = _load_run_config(args.config, _detector_overrides(args))
    scaler = None if args.scaler == FIT_ON_INPUT else load_scaler(args.scaler)
    schema = scaler.groups if scaler is not None else cfg.groups
    inputs = _read_inputs(args.inputs, schema)
    if scaler is None:
        scaler = _resolve_scaler(FIT_ON_INPUT, inputs, [Path(p).name for p in args.inputs])
    initial = load_model(args.model_in) if args.model_in else None
    starts = [a for a, _ in read_intervals_csv(args.intervals).ranges] if args.intervals else ()
    result = detect(inputs, scaler, cfg.detector, initial, starts)
    write_verdicts_csv(result.timestamps, result.verdicts, args.out)
    if args.evolution:
        _write_evolution(args.evolution, result.evolution, scaler.feature_names)
    if args.model_out:
        if result.model is None:
            raise AdaptPcaError("stream ended before initialization finished; no model to save")
        save_model(result.model, args.model_out)
    n_cal = sum(v.calibrated for v in result.verdicts)
    print(f"{len(result.verdicts)} samples, {n_cal} calibrations -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    times, verdicts = read_verdicts_csv(args.verdicts)
    rois = read_intervals_csv(args.rois)
    events = extract_events(times, verdicts)
    report = match_rois(events, rois, args.slack, fractions=flag_fractions(verdicts) if verdicts else {})
    sys.stdout.write(report.to_text())
    if args.out:
        Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    if args.events:
        write_events_csv(rank_events(events), args.events)
    return 0


def _parse_grid(items: Sequence[str]) -> dict[str, list[str]]:
    grid: dict[str, list[str]] = {}
    for item in items or ():
        key, sep, values = item.partition("=")
        key = key.strip()
        if not sep or key not in DETECTOR_KEYS or key == "grace":
            raise UsageError(f"bad --grid entry {item!r}; expected <param>=v1,v2 with param in s_c,n_components,s_m,lambda,l_o")
        if key in grid:
            raise UsageError(f"--grid given twice for {key!r}")
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise UsageError(f"--grid {key!r} has no values")
        grid[key] = vals
    if not grid:
        raise UsageError("empty grid: pass at least one --grid <param>=v1,v2")
    return grid


SWEEP_KEYS = ("s_c", "n_components", "s_m", "lambda", "l_o")


def cmd_sweep(args) -> int:
    grid = _parse_grid(args.grid)
    cfg = _load_run_config(args.config, _detector_overrides(args))
    scaler = None if args.scaler == FIT_ON_INPUT else load_scaler(args.scaler)
    inputs = _read_inputs(args.inputs, scaler.groups if scaler else cfg.groups)
    if scaler is None:
        scaler = _resolve_scaler(FIT_ON_INPUT, inputs, [Path(p).name for p in args.inputs])
    rois = read_intervals_csv(args.rois)
    starts = [a for a, _ in read_intervals_csv(args.intervals).ranges] if args.intervals else ()

    keys = [k for k in SWEEP_KEYS if k in grid]
    header = list(SWEEP_KEYS) + ["detected", "n_rois", "events", "non_roi_events",
                                 "NoActivity", "Outlier", "Calibration", "Calibrating"]
    rows = [",".join(header)]
    for combo in itertools.product(*(grid[k] for k in keys)):
        try:
            point = with_params(cfg.detector, **dict(zip(keys, combo)))
        except ValueError as exc:
            raise ConfigError(f"grid point {dict(zip(keys, combo))}: {exc}") from None
        result = detect(inputs, scaler, point, None, starts)
        fractions = flag_fractions(result.verdicts)
        report = match_rois(extract_events(result.timestamps, result.verdicts), rois, args.slack, fractions)
        values = [point.s_c, point.n_components, point.s_m, repr(point.lam), point.l_o,
                  report.n_detected, len(report.rois), report.n_events, report.non_roi_events]
        values += [repr(fractions[f]) for f in ("NoActivity", "Outlier", "Calibration", "Calibrating")]
        rows.append(",".join(str(v) for v in values))
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    spec = synth_spec_from_kv(read_kv(args.spec))
    seed = spec.seed if args.seed is None else args.seed
    series, truth = gen_regime_stream(
        spec.segments, spec.d, seed,
        orthogonal=spec.orthogonal, start_ns=spec.start_ns, cadence_s=spec.cadence_s,
    )
    write_timeseries_csv(series, args.out)
    intervals_out = args.intervals_out or str(Path(args.out).with_suffix("")) + ".intervals.csv"
    write_intervals_csv(truth, intervals_out)
    print(f"{len(series)} samples x {series.d} features -> {args.out}; segments -> {intervals_out}")
    return 0


# --- argument parsing --------------------------------------------------------

_OVERRIDE_ATTRS = {"s_c": "s_c", "n_components": "n_components", "s_m": "s_m",
                   "lambda": "lam", "l_o": "l_o", "grace": "grace"}


def _add_detector_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("detector parameters (override the config file)")
    g.add_argument("--s-c", dest="s_c", type=int, help="calibration buffer size (default 15)")
    g.add_argument("--n-components", dest="n_components", type=int, help="PCA components N (default 2)")
    g.add_argument("--s-m", dest="s_m", type=int, help="mean buffer size (default 170)")
    g.add_argument("--lambda", dest="lam", type=float, help="threshold multiplier (default 4)")
    g.add_argument("--l-o", dest="l_o", type=int, help="outlier limit (default 20)")
    g.add_argument("--grace", type=int, help="NoActivity samples after an interval reset (default 2)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptpca", description="Adaptive PCA outlier detection for multi-feature time series.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-scaler", help="fit a feature-coupled MinMax scaler on a reference CSV")
    p.add_argument("input", help="time-series CSV")
    p.add_argument("--config", required=True, help="config file with groups.<name>=feature,... lines")
    p.add_argument("--out", required=True, help="scaler file to write")
    p.add_argument("--provenance", help="identifier of the fitting interval (default: input file name)")
    p.set_defaults(func=cmd_fit_scaler)

    p = sub.add_parser("run", help="replay CSV files through the detector")
    p.add_argument("inputs", nargs="+", help="CSV files, one per data interval, in order")
    p.add_argument("--scaler", required=True, help=f"scaler file or '{FIT_ON_INPUT}'")
    p.add_argument("--config", help="detector/group config file")
    p.add_argument("--intervals", help="interval CSV (label,start,end); the mean buffer resets at each start")
    p.add_argument("--model-in", help="pre-computed model; skips initialization")
    p.add_argument("--model-out", help="write the final model here")
    p.add_argument("--evolution", help="write component loadings after every model change here")
    p.add_argument("--out", required=True, help="verdict CSV to write")
    _add_detector_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="match verdict events against ROI intervals")
    p.add_argument("verdicts", help="verdict CSV from 'run'")
    p.add_argument("--rois", required=True, help="ROI CSV (label,start,end)")
    p.add_argument("--slack", type=float, default=0.0, help="seconds added on both sides of each ROI (default 0)")
    p.add_argument("--out", help="report CSV to write")
    p.add_argument("--events", help="ranked event CSV to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid over detector parameters, scored against ROIs")
    p.add_argument("inputs", nargs="+", help="CSV files, one per data interval, in order")
    p.add_argument("--grid", action="append", help="<param>=v1,v2,... ; repeatable")
    p.add_argument("--rois", required=True, help="ROI CSV (label,start,end)")
    p.add_argument("--scaler", default=FIT_ON_INPUT, help=f"scaler file or '{FIT_ON_INPUT}' (default)")
    p.add_argument("--config", help="base detector/group config file")
    p.add_argument("--intervals", help="interval CSV; the mean buffer resets at each start")
    p.add_argument("--slack", type=float, default=0.0, help="ROI slack in seconds")
    p.add_argument("--out", help="table CSV to write (also printed)")
    _add_detector_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic regime stream")
    p.add_argument("spec", help="stream spec file (d, seed, orthogonal, cadence, start, segment.<i>)")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--out", required=True, help="stream CSV to write")
    p.add_argument("--intervals-out", help="segment interval CSV (default <out>.intervals.csv)")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"adaptpca {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (AdaptPcaError, OSError) as exc:
        print(f"adaptpca {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
