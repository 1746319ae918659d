"""Adaptive reconstruction-error outlier detector.

The detector is a sequential state machine over scaled samples::

    Initialization --(c_buffer full: batch fit)--> Check <--> Calibrate

* Initialization buffers the first ``s_c`` samples, fits the model on them
  and seeds the mean buffer with their reconstruction errors.
* Check computes the sample error ``E``, the threshold ``T = mu + lambda*sigma``
  from the mean buffer (before the sample is considered) and labels the
  sample an outlier iff ``E > T``. Inliers reset the outlier counter, clear the
  calibration buffer and enter the mean buffer; outliers never do.
* After more than ``l_o`` consecutive outliers, further outliers are staged in
  the calibration buffer; once it holds ``s_c`` samples the model is updated
  incrementally with them.

Samples must be delivered in timestamp order, exactly once. A detector has a
single owner and is not thread-safe.
"""

from __future__ import annotations

import enum
import math
import warnings
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from adaptpca.errors import ConfigError, DataError, FormatError
from adaptpca.pca_core import (
    PcaModel,
    batch_fit,
    model_from_lines,
    model_to_lines,
    partial_fit,
    sample_error,
)

SNAPSHOT_FORMAT_VERSION = "adaptpca-snapshot v1"


class Mode(str, enum.Enum):
    INITIALIZATION = "Initialization"
    CHECK = "Check"


class Flag(str, enum.Enum):
    CALIBRATING = "Calibrating"
    NO_ACTIVITY = "NoActivity"
    OUTLIER = "Outlier"
    CALIBRATION = "Calibration"


@dataclass(frozen=True)
class DetectorConfig:
    """The five tuning parameters plus the post-reset grace length.

    Defaults ``S_c=15, N=2, S_m=170, lambda=4, L_o=20`` are a good starting point
    found by a manual parameter sweep.
    """

    s_c: int = 15
    n_components: int = 2
    s_m: int = 170
    lam: float = 4.0
    l_o: int = 20
    grace: int = 2

    def __post_init__(self) -> None:
        for name in ("s_c", "n_components", "s_m", "l_o", "grace"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        object.__setattr__(self, "lam", float(self.lam))
        if self.s_c < 2:
            raise ConfigError(f"s_c must be >= 2, got {self.s_c}")
        if self.n_components < 1:
            raise ConfigError(f"n_components must be >= 1, got {self.n_components}")
        if self.n_components > self.s_c:
            raise ConfigError(
                f"n_components={self.n_components} cannot exceed s_c={self.s_c}"
            )
        if self.s_m < 2:
            raise ConfigError(f"s_m must be >= 2, got {self.s_m}")
        if not math.isfinite(self.lam) or self.lam < 0:
            raise ConfigError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.l_o < 0:
            raise ConfigError(f"l_o must be >= 0, got {self.l_o}")
        if not 1 <= self.grace <= self.s_m:
            raise ConfigError(f"grace must be in [1, s_m], got {self.grace}")
        if self.s_c > self.s_m:
            warnings.warn(
                f"s_c={self.s_c} > s_m={self.s_m}: initialization errors will "
                "overflow the mean buffer",
                RuntimeWarning,
                stacklevel=3,
            )


@dataclass(frozen=True, slots=True)
class Verdict:
    """Per-sample output.

    ``error`` and ``threshold`` are ``None`` while initializing; ``threshold``
    is also ``None`` for a grace sample that arrives with an empty mean buffer.
    """

    flag: Flag
    error: Optional[float] = None
    threshold: Optional[float] = None
    calibrated: bool = False

    @property
    def is_outlier(self) -> bool:
        return self.flag in (Flag.OUTLIER, Flag.CALIBRATION)


@dataclass(frozen=True)
class DetectorState:
    """Read-only copy of the detector internals, for inspection."""

    mode: Mode
    c_buffer: tuple[np.ndarray, ...]
    m_buffer: tuple[float, ...]
    cnt: int
    grace: int
    model: Optional[PcaModel]


_SHIFT = 1074  # 2**-1074 is the smallest subnormal: every finite double is an integer multiple


def _exact(v: float) -> tuple[int, int]:
    """``v * 2**1074`` and ``v**2 * 2**2148`` as exact integers."""
    p, q = v.as_integer_ratio()
    k = _SHIFT - (q.bit_length() - 1)
    return p << k, (p * p) << (2 * k)


def _stats_from_sums(n: int, s1: int, s2: int) -> tuple[float, float]:
    # Integer true division is correctly rounded, so both moments are exact
    # up to one final rounding.
    mu = s1 / (n << _SHIFT)
    if n == 1:
        return mu, 0.0
    var = (n * s2 - s1 * s1) / ((n * n) << (2 * _SHIFT))
    return mu, math.sqrt(var)


def rolling_stats(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation of ``values``.

    Moments are accumulated in exact integer arithmetic, so the result depends
    only on the multiset of values, never on their order or on how the buffer
    was filled.
    """
    n = len(values)
    if n == 0:
        raise DataError("rolling_stats of an empty buffer")
    s1 = s2 = 0
    for v in values:
        a, b = _exact(float(v))
        s1 += a
        s2 += b
    return _stats_from_sums(n, s1, s2)


class MeanBuffer:
    """Fixed-capacity circular buffer of errors with O(1) exact moments."""

    def __init__(self, capacity: int, values: Iterable[float] = ()) -> None:
        self.capacity = capacity
        self._values: deque[float] = deque()
        self._exact: deque[tuple[int, int]] = deque()
        self._s1 = 0
        self._s2 = 0
        for v in values:
            self.append(v)

    def __len__(self) -> int:
        return len(self._values)

    def __iter__(self):
        return iter(self._values)

    def append(self, v: float) -> None:
        v = float(v)
        if not math.isfinite(v):
            raise DataError(f"non-finite error {v!r}")
        if len(self._values) == self.capacity:
            self._values.popleft()
            a, b = self._exact.popleft()
            self._s1 -= a
            self._s2 -= b
        a, b = _exact(v)
        self._values.append(v)
        self._exact.append((a, b))
        self._s1 += a
        self._s2 += b

    def clear(self) -> None:
        self._values.clear()
        self._exact.clear()
        self._s1 = self._s2 = 0

    def stats(self) -> tuple[float, float]:
        if not self._values:
            raise DataError("rolling_stats of an empty buffer")
        return _stats_from_sums(len(self._values), self._s1, self._s2)


def threshold(mu: float, sigma: float, lam: float) -> float:
    """Maximum allowed reconstruction error ``mu + lam * sigma``."""
    return mu + lam * sigma


class Detector:
    """Stateful adaptive detector. Feed scaled samples through :meth:`step`."""

    def __init__(
        self,
        config: DetectorConfig,
        d: int,
        initial_model: Optional[PcaModel] = None,
        seed_errors: Optional[Iterable[float]] = None,
    ) -> None:
        if d < 1:
            raise ConfigError(f"d must be >= 1, got {d}")
        if config.n_components > d:
            raise ConfigError(f"n_components={config.n_components} exceeds d={d}")
        self.config = config
        self.d = d
        self._c_buffer: list[np.ndarray] = []
        self._m_buffer = MeanBuffer(config.s_m)
        self._cnt = 0
        self._grace = 0
        self._stats: Optional[tuple[float, float]] = None
        self._model: Optional[PcaModel] = None
        self._mode = Mode.INITIALIZATION

        if seed_errors is not None and initial_model is None:
            raise ConfigError("seed_errors require an initial_model")
        if initial_model is not None:
            if initial_model.is_empty:
                raise ConfigError("initial_model has seen no data")
            if initial_model.d != d:
                raise ConfigError(f"initial_model has d={initial_model.d}, expected {d}")
            if initial_model.n_components != config.n_components:
                raise ConfigError(
                    f"initial_model has N={initial_model.n_components}, "
                    f"config expects {config.n_components}"
                )
            seeds = [float(e) for e in (seed_errors or ())]
            if len(seeds) > config.s_m:
                raise ConfigError(f"{len(seeds)} seed errors exceed s_m={config.s_m}")
            if not all(math.isfinite(e) and e >= 0 for e in seeds):
                raise ConfigError("seed errors must be finite and non-negative")
            self._model = initial_model
            self._mode = Mode.CHECK
            for e in seeds:
                self._m_buffer.append(e)
            if not seeds:
                # Nothing to threshold against yet: bootstrap like an interval reset.
                self._grace = config.grace

    # -- inspection -----------------------------------------------------------

    @property
    def mode(self) -> Mode:
        return self._mode

    @property
    def model(self) -> Optional[PcaModel]:
        return self._model

    @property
    def state(self) -> DetectorState:
        return DetectorState(
            mode=self._mode,
            c_buffer=tuple(x.copy() for x in self._c_buffer),
            m_buffer=tuple(self._m_buffer),
            cnt=self._cnt,
            grace=self._grace,
            model=self._model,
        )

    # -- stepping -------------------------------------------------------------

    def _push_error(self, e: float) -> None:
        self._m_buffer.append(e)
        self._stats = None

    def _current_stats(self) -> tuple[float, float]:
        if self._stats is None:
            self._stats = self._m_buffer.stats()
        return self._stats

    def step(self, x) -> Verdict:
        """Process one scaled sample and return its verdict.

        Raises:
            DataError: wrong length or non-finite values; state is unchanged.
        """
        x = np.array(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise DataError(f"sample must have shape ({self.d},), got {x.shape}")
        if not np.isfinite(x).all():
            raise DataError("non-finite sample rejected")
        cfg = self.config

        if self._mode is Mode.INITIALIZATION:
            self._c_buffer.append(x)
            if len(self._c_buffer) == cfg.s_c:
                model = batch_fit(np.vstack(self._c_buffer), cfg.n_components)
                for xk in self._c_buffer:
                    self._push_error(sample_error(model, xk))
                self._c_buffer.clear()
                self._model = model
                self._mode = Mode.CHECK
            return Verdict(Flag.CALIBRATING)

        e = sample_error(self._model, x)

        if self._grace:
            t = threshold(*self._current_stats(), cfg.lam) if self._m_buffer else None
            self._grace -= 1
            self._c_buffer.clear()
            self._cnt = 0
            self._push_error(e)
            return Verdict(Flag.NO_ACTIVITY, e, t)

        t = threshold(*self._current_stats(), cfg.lam)
        if e > t:
            self._cnt += 1
            if self._cnt <= cfg.l_o:
                return Verdict(Flag.OUTLIER, e, t)
            self._c_buffer.append(x)
            if len(self._c_buffer) < cfg.s_c:
                return Verdict(Flag.CALIBRATION, e, t)
            self._model = partial_fit(self._model, np.vstack(self._c_buffer))
            self._c_buffer.clear()
            self._cnt = 0
            return Verdict(Flag.CALIBRATION, e, t, calibrated=True)

        self._c_buffer.clear()
        self._cnt = 0
        self._push_error(e)
        return Verdict(Flag.NO_ACTIVITY, e, t)

    def run(self, X) -> list[Verdict]:
        """Step every row of ``X`` in order."""
        return [self.step(x) for x in np.asarray(X, dtype=np.float64)]

    def begin_new_interval(self) -> None:
        """Reset the mean buffer at a data-interval boundary.

        The next ``config.grace`` samples are labeled NoActivity and their
        errors re-seed the mean buffer. The model is kept. A no-op (with a
        warning) while still initializing.
        """
        if self._mode is Mode.INITIALIZATION:
            warnings.warn(
                "begin_new_interval during initialization is ignored",
                RuntimeWarning,
                stacklevel=2,
            )
            return
        self._m_buffer.clear()
        self._stats = None
        self._grace = self.config.grace
        self._c_buffer.clear()
        self._cnt = 0

    # -- persistence ----------------------------------------------------------

    def snapshot(self) -> str:
        """Serialize the full state (config, buffers, counters, model) to text."""
        cfg = self.config
        fmt = lambda v: format(float(v), ".17g")  # noqa: E731
        lines = [
            SNAPSHOT_FORMAT_VERSION,
            f"config s_c={cfg.s_c} n_components={cfg.n_components} s_m={cfg.s_m} "
            f"lambda={fmt(cfg.lam)} l_o={cfg.l_o} grace={cfg.grace}",
            f"d {self.d}",
            f"mode {self._mode.value}",
            f"cnt {self._cnt}",
            f"grace {self._grace}",
            f"m_buffer {len(self._m_buffer)}" + "".join(" " + fmt(v) for v in self._m_buffer),
            f"c_buffer {len(self._c_buffer)}",
        ]
        for x in self._c_buffer:
            lines.append("row " + " ".join(fmt(v) for v in x))
        if self._model is None:
            lines.append("model none")
        else:
            lines.append("model")
            lines.extend(model_to_lines(self._model))
        return "\n".join(lines) + "\n"

    @classmethod
    def restore(cls, snapshot: str) -> Detector:
        """Rebuild a detector from :meth:`snapshot` output.

        Raises:
            FormatError: version mismatch or corrupt payload.
        """
        lines = [ln for ln in snapshot.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != SNAPSHOT_FORMAT_VERSION:
            head = lines[0] if lines else ""
            raise FormatError(f"unsupported snapshot header {head!r}")
        try:
            head, *pairs = lines[1].split()
            if head != "config":
                raise FormatError("missing config line")
            kv = dict(p.split("=", 1) for p in pairs)
            config = DetectorConfig(
                s_c=int(kv["s_c"]),
                n_components=int(kv["n_components"]),
                s_m=int(kv["s_m"]),
                lam=float(kv["lambda"]),
                l_o=int(kv["l_o"]),
                grace=int(kv["grace"]),
            )
            fields = {}
            for ln in lines[2:6]:
                key, value = ln.split(" ", 1)
                fields[key] = value
            d = int(fields["d"])
            mode = Mode(fields["mode"])
            cnt = int(fields["cnt"])
            grace = int(fields["grace"])
            mb = lines[6].split()
            if mb[0] != "m_buffer" or len(mb) != 2 + int(mb[1]):
                raise FormatError("corrupt m_buffer line")
            m_buffer = [float(v) for v in mb[2:]]
            cb = lines[7].split()
            if cb[0] != "c_buffer":
                raise FormatError("corrupt c_buffer line")
            n_rows = int(cb[1])
            rows = []
            for ln in lines[8 : 8 + n_rows]:
                parts = ln.split()
                if parts[0] != "row" or len(parts) != d + 1:
                    raise FormatError("corrupt c_buffer row")
                rows.append(np.array([float(v) for v in parts[1:]]))
            if len(rows) != n_rows:
                raise FormatError("truncated c_buffer")
            rest = lines[8 + n_rows :]
            if not rest:
                raise FormatError("missing model section")
            if rest[0].strip() == "model none":
                model, used = None, 1
            elif rest[0].strip() == "model":
                model, n_model = model_from_lines(rest[1:])
                used = 1 + n_model
            else:
                raise FormatError("corrupt model section")
            if used != len(rest):
                raise FormatError("trailing content after snapshot")
        except FormatError:
            raise
        except (ValueError, KeyError, IndexError, ConfigError) as exc:
            raise FormatError(f"corrupt snapshot: {exc}") from None

        if (model is None) != (mode is Mode.INITIALIZATION):
            raise FormatError("model must be present iff mode is Check")
        if len(m_buffer) > config.s_m or len(rows) > config.s_c:
            raise FormatError("buffer exceeds configured capacity")
        if model is not None and (model.d != d or model.n_components != config.n_components):
            raise FormatError("embedded model does not match config")

        det = cls.__new__(cls)
        det.config = config
        det.d = d
        det._c_buffer = rows
        det._m_buffer = MeanBuffer(config.s_m, m_buffer)
        det._cnt = cnt
        det._grace = grace
        det._stats = None
        det._model = model
        det._mode = mode
        return det
