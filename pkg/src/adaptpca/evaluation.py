"""Post-processing of verdict streams: events, ROI matching, flag fractions, ranking."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence, Union

import numpy as np

from adaptpca.detector import Flag, Verdict
from adaptpca.errors import DataError, FormatError
from adaptpca.ingestion import IntervalSpec, format_times, parse_times

NS_PER_S = 1_000_000_000

PathOrFile = Union[str, Path, IO[str]]


@dataclass(frozen=True)
class OutlierEvent:
    """A maximal run of Outlier/Calibration verdicts.

    ``start``/``end`` are the timestamps (ns) of the first and last sample of
    the run; ``first_index`` is the run's position in the verdict stream.
    """

    start: int
    end: int
    n_samples: int
    max_excess: float
    triggered_calibration: bool
    first_index: int = 0


@dataclass(frozen=True)
class RoiResult:
    label: str
    start: int
    end: int
    detected: bool


@dataclass(frozen=True)
class DetectionReport:
    rois: tuple[RoiResult, ...]
    non_roi_events: int
    n_events: int
    fractions: dict[str, float]

    @property
    def n_detected(self) -> int:
        return sum(r.detected for r in self.rois)

    def to_text(self) -> str:
        lines = [f"ROIs detected: {self.n_detected}/{len(self.rois)}"]
        times = format_times(np.array([t for r in self.rois for t in (r.start, r.end)], dtype=np.int64))
        for i, r in enumerate(self.rois):
            state = "detected" if r.detected else "missed"
            lines.append(f"  {r.label}: {times[2 * i]} -> {times[2 * i + 1]}  {state}")
        lines.append(f"events: {self.n_events} (outside any ROI: {self.non_roi_events})")
        lines.append("flag fractions:")
        for flag, frac in self.fractions.items():
            lines.append(f"  {flag}: {100 * frac:.2f}%")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["kind,label,start,end,value"]
        times = format_times(np.array([t for r in self.rois for t in (r.start, r.end)], dtype=np.int64))
        for i, r in enumerate(self.rois):
            rows.append(f"roi,{r.label},{times[2 * i]},{times[2 * i + 1]},{int(r.detected)}")
        rows.append(f"summary,detected,,,{self.n_detected}")
        rows.append(f"summary,rois,,,{len(self.rois)}")
        rows.append(f"summary,events,,,{self.n_events}")
        rows.append(f"summary,non_roi_events,,,{self.non_roi_events}")
        for flag, frac in self.fractions.items():
            rows.append(f"fraction,{flag},,,{frac!r}")
        return "\n".join(rows) + "\n"


def extract_events(timestamps: Sequence[int], verdicts: Sequence[Verdict]) -> list[OutlierEvent]:
    """Group consecutive outlier-flagged verdicts into events.

    Calibrating and NoActivity verdicts end a run.
    """
    if len(timestamps) != len(verdicts):
        raise DataError(f"{len(timestamps)} timestamps for {len(verdicts)} verdicts")
    events: list[OutlierEvent] = []
    run_start = None
    excess = -np.inf
    calibrated = False
    for i, v in enumerate(list(verdicts) + [None]):
        if v is not None and v.is_outlier:
            if run_start is None:
                run_start, excess, calibrated = i, -np.inf, False
            excess = max(excess, v.error - v.threshold)
            calibrated = calibrated or v.calibrated
            continue
        if run_start is not None:
            events.append(
                OutlierEvent(
                    start=int(timestamps[run_start]),
                    end=int(timestamps[i - 1]),
                    n_samples=i - run_start,
                    max_excess=float(excess),
                    triggered_calibration=calibrated,
                    first_index=run_start,
                )
            )
            run_start = None
    return events


def _overlaps(event: OutlierEvent, start: int, end: int) -> bool:
    # Event covers the closed span [event.start, event.end]; ROI window is [start, end).
    return event.start < end and event.end >= start


def match_rois(events: Sequence[OutlierEvent], rois: IntervalSpec, slack: float = 0.0, fractions=None) -> DetectionReport:
    """Mark each ROI detected iff some event overlaps ``[start - slack, end + slack)``.

    Args:
        slack: Seconds, ``>= 0``.
        fractions: Optional flag fractions to carry into the report.
    """
    if slack < 0:
        raise DataError(f"slack must be >= 0, got {slack}")
    pad = int(round(slack * NS_PER_S))
    windows = [(a - pad, b + pad) for a, b in rois.ranges]
    results = []
    for (a, b), (wa, wb), label in zip(rois.ranges, windows, rois.labels):
        hit = any(_overlaps(e, wa, wb) for e in events)
        results.append(RoiResult(label, a, b, hit))
    outside = sum(1 for e in events if not any(_overlaps(e, wa, wb) for wa, wb in windows))
    return DetectionReport(tuple(results), outside, len(events), dict(fractions or {}))


def flag_fractions(verdicts: Sequence[Verdict]) -> dict[str, float]:
    """Fraction of verdicts carrying each flag (all four flags always present)."""
    n = len(verdicts)
    if n == 0:
        raise DataError("flag_fractions of an empty verdict stream")
    counts = {f.value: 0 for f in Flag}
    for v in verdicts:
        counts[v.flag.value] += 1
    return {k: c / n for k, c in counts.items()}


def rank_events(events: Sequence[OutlierEvent]) -> list[OutlierEvent]:
    """Most notable first: longer runs, then larger excess, then earlier start."""
    return sorted(events, key=lambda e: (-e.n_samples, -e.max_excess, e.start, e.first_index))


def write_events_csv(events: Sequence[OutlierEvent], sink: PathOrFile) -> None:
    times = format_times(np.array([t for e in events for t in (e.start, e.end)], dtype=np.int64))
    rows = ["start,end,n_samples,max_excess,triggered_calibration"]
    for i, e in enumerate(events):
        rows.append(
            f"{times[2 * i]},{times[2 * i + 1]},{e.n_samples},{e.max_excess!r},"
            f"{str(e.triggered_calibration).lower()}"
        )
    text = "\n".join(rows) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


# --- verdict log -------------------------------------------------------------

VERDICT_HEADER = "time,error,threshold,flag,calibrated"


def _num(v) -> str:
    return "" if v is None else repr(v)


def verdict_rows(times: Sequence[str], verdicts: Sequence[Verdict]) -> list[str]:
    return [
        f"{t},{_num(v.error)},{_num(v.threshold)},{v.flag.value},{'true' if v.calibrated else 'false'}"
        for t, v in zip(times, verdicts)
    ]


def write_verdicts_csv(timestamps, verdicts: Sequence[Verdict], sink: PathOrFile) -> None:
    """Write the frozen verdict schema ``time,error,threshold,flag,calibrated``.

    Empty ``error``/``threshold`` cells mean "not computed".
    """
    rows = [VERDICT_HEADER] + verdict_rows(format_times(np.asarray(timestamps, dtype=np.int64)), verdicts)
    text = "\n".join(rows) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


def read_verdicts_csv(source: PathOrFile) -> tuple[np.ndarray, list[Verdict]]:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != VERDICT_HEADER:
        raise FormatError(f"verdict CSV must start with {VERDICT_HEADER!r}")
    times, verdicts = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 5:
            raise FormatError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        t, err, thr, flag, cal = (p.strip() for p in parts)
        try:
            verdicts.append(
                Verdict(
                    Flag(flag),
                    float(err) if err else None,
                    float(thr) if thr else None,
                    {"true": True, "false": False}[cal],
                )
            )
        except (ValueError, KeyError):
            raise FormatError(f"line {lineno}: malformed verdict {line!r}") from None
        times.append(t)
    return parse_times(times), verdicts
