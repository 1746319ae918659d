"""Time-series CSV ingestion, cadence alignment and interval segmentation.

Timestamps are stored as integer nanoseconds since the Unix epoch (UTC). The
``time`` column may hold ISO-8601 strings or raw epoch seconds. Missing values
(``NaN`` or empty cells) are kept as NaN until :func:`drop_incomplete`; this
module never interpolates, reorders or fabricates samples.
"""

from __future__ import annotations

import io
import logging
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Optional, Sequence, Union

import numpy as np
import pandas as pd

from adaptpca.errors import DataError, FormatError
from adaptpca.scaling import FeatureGroupMap

logger = logging.getLogger(__name__)

PathOrFile = Union[str, Path, IO[str]]

_EPOCH_RE = re.compile(r"^[+-]?\d+(\.\d*)?$|^[+-]?\.\d+$")
_NAN_TOKENS = {"", "nan", "NaN", "NAN"}


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Timestamped feature matrix.

    Attributes:
        timestamps: Strictly increasing int64 nanoseconds, shape ``(s,)``.
        values: float64 matrix, shape ``(s, d)``; may contain NaN until
            finalized with :func:`drop_incomplete`.
        feature_names: Column names, length ``d``.
        group_map: Feature grouping used for scaling.
    """

    timestamps: np.ndarray
    values: np.ndarray
    feature_names: tuple[str, ...]
    group_map: FeatureGroupMap

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise DataError(f"values must be 2-D, got shape {vals.shape}")
        if ts.shape != (vals.shape[0],):
            raise DataError(f"{ts.shape[0]} timestamps for {vals.shape[0]} rows")
        names = tuple(self.feature_names)
        if len(names) != vals.shape[1]:
            raise DataError(f"{len(names)} feature names for {vals.shape[1]} columns")
        if names != self.group_map.feature_names:
            raise DataError("group map features do not match the series features")
        if len(ts) > 1:
            bad = np.flatnonzero(np.diff(ts) <= 0)
            if bad.size:
                raise DataError(f"timestamps not strictly increasing at row {int(bad[0]) + 1}")
        ts = ts.copy()
        vals = vals.copy()
        ts.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def equals(self, other: TimeSeries) -> bool:
        return (
            self.feature_names == other.feature_names
            and self.group_map == other.group_map
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    def rows(self, sel) -> TimeSeries:
        return TimeSeries(self.timestamps[sel], self.values[sel], self.feature_names, self.group_map)


@dataclass(frozen=True)
class IntervalSpec:
    """Ordered, non-overlapping ``[start, end)`` ranges in nanoseconds."""

    ranges: tuple[tuple[int, int], ...]
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        ranges = tuple((int(a), int(b)) for a, b in self.ranges)
        labels = tuple(self.labels) or tuple(f"interval-{i}" for i in range(len(ranges)))
        if len(labels) != len(ranges):
            raise DataError("one label per interval is required")
        for a, b in ranges:
            if not a < b:
                raise DataError(f"interval start must precede end: {a} >= {b}")
        ordered = sorted(ranges)
        for (_, b0), (a1, _) in zip(ordered, ordered[1:]):
            if a1 < b0:
                raise DataError("intervals overlap")
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.ranges)


# --- time parsing / formatting -----------------------------------------------


def _epoch_to_ns(token: str) -> int:
    sign = -1 if token.startswith("-") else 1
    token = token.lstrip("+-")
    whole, _, frac = token.partition(".")
    frac = (frac + "000000000")[:9]
    return sign * (int(whole or "0") * 1_000_000_000 + int(frac))


def parse_times(tokens: Sequence[str], first_line: int = 2) -> np.ndarray:
    """Parse ISO-8601 (UTC) strings or epoch seconds into int64 nanoseconds.

    The representation is chosen from the first token; a column must not mix
    both. ``first_line`` is the file line of ``tokens[0]`` for error messages.
    """
    tokens = [t.strip() for t in tokens]
    if not tokens:
        return np.zeros(0, dtype=np.int64)
    if _EPOCH_RE.match(tokens[0]):
        out = np.empty(len(tokens), dtype=np.int64)
        for i, t in enumerate(tokens):
            if not _EPOCH_RE.match(t):
                raise DataError(f"line {first_line + i}: unparsable time {t!r}")
            out[i] = _epoch_to_ns(t)
        return out
    try:
        parsed = pd.to_datetime(pd.Series(tokens), utc=True, format="ISO8601", errors="coerce")
    except (ValueError, TypeError) as exc:
        raise DataError(f"unparsable time column: {exc}") from None
    bad = np.flatnonzero(parsed.isna().to_numpy())
    if bad.size:
        i = int(bad[0])
        raise DataError(f"line {first_line + i}: unparsable time {tokens[i]!r}")
    return parsed.dt.tz_convert(None).to_numpy().astype("datetime64[ns]").astype(np.int64)


def format_times(ns: np.ndarray) -> list[str]:
    """ISO-8601 UTC strings (``...Z``) with the shortest exact fractional part."""
    ns = np.asarray(ns, dtype=np.int64)
    dt = ns.astype("datetime64[ns]")
    if ns.size and np.all(ns % 1_000_000_000 == 0):
        dt = dt.astype("datetime64[s]")
    elif ns.size and np.all(ns % 1_000_000 == 0):
        dt = dt.astype("datetime64[ms]")
    elif ns.size and np.all(ns % 1_000 == 0):
        dt = dt.astype("datetime64[us]")
    return [s + "Z" for s in np.datetime_as_string(dt)]


# --- CSV input ---------------------------------------------------------------


def _read_text(source: PathOrFile) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8")
    return source.read()


def read_timeseries_csv(source: PathOrFile, schema: Optional[FeatureGroupMap] = None) -> TimeSeries:
    """Load a CSV with a ``time`` column and feature columns.

    Args:
        source: Path or text stream.
        schema: Features to load and their groups. Extra columns are ignored.
            Without a schema every non-time column is loaded as its own group.

    Raises:
        DataError: empty file, missing columns, unparsable fields or
            timestamps that are not strictly increasing. Messages carry the
            offending file line.
    """
    text = _read_text(source)
    if not text.strip():
        raise DataError("empty CSV file")
    try:
        header = pd.read_csv(io.StringIO(text), nrows=0, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"malformed CSV: {exc}") from None
    columns = [c.strip() for c in header.columns]
    if "time" not in columns:
        raise DataError("missing 'time' column")
    if schema is None:
        names = [c for c in columns if c != "time"]
        if not names:
            raise DataError("no feature columns")
        schema = FeatureGroupMap.per_feature(names)
    for name in schema.feature_names:
        if name not in columns:
            raise DataError(f"missing feature column {name!r}")

    frame = _parse_frame(text, schema.feature_names)
    if len(frame) == 0:
        raise DataError("CSV has a header but no rows")

    timestamps = parse_times(frame["time"].tolist())
    if len(timestamps) > 1:
        bad = np.flatnonzero(np.diff(timestamps) <= 0)
        if bad.size:
            line = int(bad[0]) + 3
            kind = "duplicated" if timestamps[bad[0] + 1] == timestamps[bad[0]] else "decreasing"
            raise DataError(f"line {line}: {kind} timestamp")
    values = frame[list(schema.feature_names)].to_numpy(dtype=np.float64)
    return TimeSeries(timestamps, values, schema.feature_names, schema)


def _parse_frame(text: str, features: Sequence[str]) -> pd.DataFrame:
    """Parse the numeric columns with the C reader; locate bad cells on failure."""
    read = lambda **kw: pd.read_csv(  # noqa: E731
        io.StringIO(text), skipinitialspace=True, keep_default_na=False, **kw
    )
    try:
        frame = read(
            dtype={"time": str},
            na_values=sorted(_NAN_TOKENS),
            float_precision="round_trip",
        )
    except (pd.errors.ParserError, ValueError) as exc:
        raise DataError(f"malformed CSV: {exc}") from None
    frame.columns = [c.strip() for c in frame.columns]
    if all(pd.api.types.is_float_dtype(frame[f]) or pd.api.types.is_integer_dtype(frame[f]) for f in features):
        return frame

    raw = read(dtype=str)
    raw.columns = [c.strip() for c in raw.columns]
    for name in features:
        col = raw[name].str.strip()
        nan_mask = col.isin(_NAN_TOKENS).to_numpy()
        numeric = pd.to_numeric(col.where(~nan_mask, "nan"), errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(np.isnan(numeric) & ~nan_mask)
        if bad.size:
            i = int(bad[0])
            raise DataError(f"line {i + 2}: unparsable value {col.iloc[i]!r} in column {name!r}")
    raise DataError("unparsable feature values")


def write_timeseries_csv(series: TimeSeries, sink: PathOrFile) -> None:
    """Write ``series`` in the ingestion CSV format (times as ISO-8601)."""
    times = format_times(series.timestamps)
    lines = [",".join(("time",) + series.feature_names)]
    for t, row in zip(times, series.values.tolist()):
        lines.append(t + "," + ",".join("NaN" if math.isnan(v) else repr(v) for v in row))
    text = "\n".join(lines) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


def read_intervals_csv(source: PathOrFile) -> IntervalSpec:
    """Read ``label,start,end`` rows (ISO-8601 or epoch seconds)."""
    text = _read_text(source)
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise FormatError(f"malformed interval CSV: {exc}") from None
    frame.columns = [c.strip() for c in frame.columns]
    for col in ("label", "start", "end"):
        if col not in frame.columns:
            raise FormatError(f"interval CSV missing column {col!r}")
    starts = parse_times(frame["start"].tolist())
    ends = parse_times(frame["end"].tolist())
    return IntervalSpec(tuple(zip(starts.tolist(), ends.tolist())), tuple(frame["label"].str.strip()))


def write_intervals_csv(spec: IntervalSpec, sink: PathOrFile) -> None:
    starts = format_times(np.array([a for a, _ in spec.ranges], dtype=np.int64))
    ends = format_times(np.array([b for _, b in spec.ranges], dtype=np.int64))
    lines = ["label,start,end"] + [f"{l},{a},{b}" for l, a, b in zip(spec.labels, starts, ends)]
    text = "\n".join(lines) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


# --- transformations ---------------------------------------------------------


def _bin_mean(values: np.ndarray) -> float:
    # Offsetting by the bin minimum keeps constant bins exact and makes the
    # result independent of sample order within the bin.
    lo = float(values.min())
    return lo + math.fsum((values - lo).tolist()) / len(values)


def resample_to_cadence(fast: TimeSeries, target_timestamps) -> TimeSeries:
    """Bin-average ``fast`` onto ``target_timestamps``.

    Target ``t_j`` owns the half-open bin between the midpoints to its
    neighbours; the outer bins extend symmetrically by half the adjacent
    spacing (a single target owns everything). An empty bin, or a bin whose
    samples are all NaN for a feature, yields NaN.
    """
    target = np.asarray(target_timestamps, dtype=np.int64)
    if target.size == 0:
        raise DataError("empty target timestamps")
    if target.size > 1 and np.any(np.diff(target) <= 0):
        raise DataError("target timestamps must be strictly increasing")
    if len(fast) and (fast.timestamps[0] > target[0] or fast.timestamps[-1] < target[-1]):
        warnings.warn("fast series does not cover the target span", RuntimeWarning, stacklevel=2)

    if target.size == 1:
        edges = np.array([np.iinfo(np.int64).min, np.iinfo(np.int64).max])
    else:
        mids = target[:-1] + (target[1:] - target[:-1]) // 2
        first = target[0] - (target[1] - target[0]) // 2
        last = target[-1] + (target[-1] - target[-2]) // 2 + 1
        edges = np.concatenate([[first], mids, [last]])
    idx = np.searchsorted(fast.timestamps, edges, side="left")

    out = np.full((target.size, fast.d), np.nan)
    for j in range(target.size):
        a, b = idx[j], idx[j + 1]
        if a == b:
            continue
        block = fast.values[a:b]
        for f in range(fast.d):
            col = block[:, f]
            col = col[~np.isnan(col)]
            if col.size:
                out[j, f] = _bin_mean(col)
    return TimeSeries(target, out, fast.feature_names, fast.group_map)


def merge_features(series: Sequence[TimeSeries]) -> TimeSeries:
    """Column-concatenate series sharing one timestamp vector.

    Group maps are merged in order; group ids of later series are shifted.
    """
    if not series:
        raise DataError("nothing to merge")
    ts = series[0].timestamps
    names: list[str] = []
    group_of: list[int] = []
    group_names: list[str] = []
    for s in series:
        if not np.array_equal(s.timestamps, ts):
            raise DataError("timestamp mismatch between merged series")
        for f in s.feature_names:
            if f in names:
                raise DataError(f"duplicate feature name {f!r}")
        offset = len(group_names)
        names.extend(s.feature_names)
        group_of.extend(g + offset for g in s.group_map.group_of)
        group_names.extend(s.group_map.group_names)
    if len(set(group_names)) != len(group_names):
        # Same group label in two sources; keep them distinct.
        group_names = [f"{n}#{i}" for i, n in enumerate(group_names)]
    gm = FeatureGroupMap(tuple(names), tuple(group_of), tuple(group_names))
    values = np.hstack([s.values for s in series])
    return TimeSeries(ts, values, tuple(names), gm)


def drop_incomplete(series: TimeSeries) -> tuple[TimeSeries, int]:
    """Remove rows containing any NaN; returns the series and the count removed."""
    keep = ~np.isnan(series.values).any(axis=1)
    removed = int(len(series) - keep.sum())
    if removed:
        logger.info("dropped %d incomplete rows", removed)
        return series.rows(keep), removed
    return series, 0


def split_intervals(series: TimeSeries, intervals: IntervalSpec) -> list[TimeSeries]:
    """One sub-series per interval, in interval order; empty intervals warn."""
    out = []
    for (a, b), label in zip(intervals.ranges, intervals.labels):
        lo, hi = np.searchsorted(series.timestamps, [a, b], side="left")
        if lo == hi:
            warnings.warn(f"interval {label!r} contains no samples", RuntimeWarning, stacklevel=2)
        out.append(series.rows(slice(lo, hi)))
    return out


def concat_series(series: Sequence[TimeSeries]) -> TimeSeries:
    """Row-concatenate series with identical features (timestamps must keep increasing)."""
    if not series:
        raise DataError("nothing to concatenate")
    first = series[0]
    for s in series[1:]:
        if s.feature_names != first.feature_names:
            raise DataError("cannot concatenate series with different features")
    return TimeSeries(
        np.concatenate([s.timestamps for s in series]),
        np.vstack([s.values for s in series]),
        first.feature_names,
        first.group_map,
    )
