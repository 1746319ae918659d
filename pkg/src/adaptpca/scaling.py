"""Feature-coupled MinMax scaling.

Features of the same physical type form a group that shares one ``min`` and
one ``max``, so each group lands on ``[0, 1]`` over the fitting data while the
relative variance between features inside a group is untouched. Putting every
feature in its own group reduces to plain per-feature MinMax.

Streamed values outside the fitted range are not clipped.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence, Union

import numpy as np

from adaptpca.errors import ConfigError, DataError, FormatError

SCALER_FORMAT_VERSION = "adaptpca-scaler v1"

PathOrFile = Union[str, Path, IO[str]]


@dataclass(frozen=True)
class FeatureGroupMap:
    """Ordered feature names and the group each one belongs to.

    Group ids are contiguous from 0; ``group_names[g]`` labels group ``g``.
    """

    feature_names: tuple[str, ...]
    group_of: tuple[int, ...]
    group_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "group_of", tuple(int(g) for g in self.group_of))
        if not self.group_names:
            n = max(self.group_of) + 1 if self.group_of else 0
            object.__setattr__(self, "group_names", tuple(f"g{i}" for i in range(n)))
        else:
            object.__setattr__(self, "group_names", tuple(self.group_names))

        if not self.feature_names:
            raise ConfigError("at least one feature is required")
        if len(self.group_of) != len(self.feature_names):
            raise ConfigError("group_of must assign exactly one group to every feature")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ConfigError(f"duplicate feature names in {self.feature_names}")
        n_groups = len(self.group_names)
        used = set(self.group_of)
        if used != set(range(n_groups)):
            missing = sorted(set(range(n_groups)) - used)
            if missing:
                raise ConfigError(
                    f"group(s) {[self.group_names[g] for g in missing if g < n_groups]} have no features"
                )
            raise ConfigError(f"group ids must be contiguous from 0, got {sorted(used)}")

    @classmethod
    def from_groups(cls, groups: Mapping[str, Sequence[str]]) -> FeatureGroupMap:
        """Build from ``{group_name: [feature, ...]}``; order of both is kept."""
        names: list[str] = []
        group_of: list[int] = []
        for g, (gname, members) in enumerate(groups.items()):
            if not members:
                raise ConfigError(f"group {gname!r} has no features")
            for f in members:
                names.append(f)
                group_of.append(g)
        return cls(tuple(names), tuple(group_of), tuple(groups))

    @classmethod
    def per_feature(cls, feature_names: Iterable[str]) -> FeatureGroupMap:
        """Every feature in its own group (plain MinMax)."""
        names = tuple(feature_names)
        return cls(names, tuple(range(len(names))), names)

    @property
    def d(self) -> int:
        return len(self.feature_names)

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    def members(self, g: int) -> list[str]:
        return [f for f, gi in zip(self.feature_names, self.group_of) if gi == g]


@dataclass(frozen=True, eq=False)
class GroupScaler:
    """Per-group affine map ``x' = (x - min_g) / (max_g - min_g)``.

    Attributes:
        groups: The group map used at fit time.
        mins: Group minimums, shape ``(n_groups,)``, raw units.
        maxs: Group maximums, shape ``(n_groups,)``, raw units.
        provenance: Free-form identifier of the interval the scaler was fit on.
    """

    groups: FeatureGroupMap
    mins: np.ndarray
    maxs: np.ndarray
    provenance: str = ""

    def __post_init__(self) -> None:
        for name in ("mins", "maxs"):
            a = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if a.shape != (self.groups.n_groups,):
                raise DataError(f"{name} must have shape ({self.groups.n_groups},), got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise DataError(f"{name} contains non-finite values")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(self.maxs < self.mins):
            raise DataError("max_g must be >= min_g for every group")
        if "\n" in self.provenance:
            raise DataError("provenance must be a single line")
        gidx = np.asarray(self.groups.group_of, dtype=np.intp)
        # Per-feature expansions, cached for the vectorized paths.
        lo = self.mins[gidx]
        span = (self.maxs - self.mins)[gidx]
        for name, a in (("_lo", lo), ("_span", span)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def d(self) -> int:
        return self.groups.d

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.groups.feature_names

    @property
    def degenerate(self) -> np.ndarray:
        """Boolean mask over groups whose fitted range is zero."""
        return self.maxs == self.mins

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroupScaler):
            return NotImplemented
        return (
            self.groups == other.groups
            and self.provenance == other.provenance
            and np.array_equal(self.mins, other.mins)
            and np.array_equal(self.maxs, other.maxs)
        )

    __hash__ = None  # type: ignore[assignment]

    def check_features(self, feature_names: Sequence[str]) -> None:
        """Raise if ``feature_names`` differs from the fitted feature order."""
        if tuple(feature_names) != self.feature_names:
            raise ConfigError(
                f"feature mismatch: scaler fit on {list(self.feature_names)}, "
                f"data has {list(feature_names)}"
            )


def fit_group_scaler(X, groups: FeatureGroupMap, provenance: str = "") -> GroupScaler:
    """Fit per-group min/max over every entry of every feature of the group.

    A group whose values are all equal is kept (``min == max``) and scales to
    a constant 0; a warning is issued so a dead sensor does not halt a stream.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError(f"need a non-empty (s, d) matrix, got shape {X.shape}")
    if X.shape[1] != groups.d:
        raise DataError(f"matrix has {X.shape[1]} columns, group map has {groups.d} features")
    bad = ~np.isfinite(X)
    if bad.any():
        raise DataError(f"non-finite value in row {int(np.argwhere(bad)[0][0])}")
    col_min = X.min(axis=0)
    col_max = X.max(axis=0)
    gidx = np.asarray(groups.group_of, dtype=np.intp)
    mins = np.full(groups.n_groups, np.inf)
    maxs = np.full(groups.n_groups, -np.inf)
    np.minimum.at(mins, gidx, col_min)
    np.maximum.at(maxs, gidx, col_max)
    scaler = GroupScaler(groups, mins, maxs, provenance)
    for g in np.flatnonzero(scaler.degenerate):
        warnings.warn(
            f"feature group {groups.group_names[g]!r} is constant ({float(mins[g])!r}); "
            "it will scale to 0",
            RuntimeWarning,
            stacklevel=2,
        )
    return scaler


def _check_input(scaler: GroupScaler, x, finite: bool) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != scaler.d:
        raise DataError(f"expected {scaler.d} features, got shape {x.shape}")
    if finite and not np.all(np.isfinite(x)):
        raise DataError("non-finite input to scale")
    return x


def scale(scaler: GroupScaler, x) -> np.ndarray:
    """Apply the group map to a vector or to every row of a matrix."""
    x = _check_input(scaler, x, finite=True)
    span = scaler._span
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (x - scaler._lo) / span
    degenerate = span == 0
    if degenerate.any():
        out[..., degenerate] = 0.0
    return out


def unscale(scaler: GroupScaler, x) -> np.ndarray:
    """Inverse of :func:`scale`; degenerate groups return their ``min``."""
    x = _check_input(scaler, x, finite=False)
    return x * scaler._span + scaler._lo


# --- persistence -------------------------------------------------------------


def save_scaler(scaler: GroupScaler, sink: PathOrFile) -> None:
    g = scaler.groups
    lines = [
        SCALER_FORMAT_VERSION,
        f"provenance\t{scaler.provenance}",
        "features\t" + "\t".join(g.feature_names),
        f"groups\t{g.n_groups}",
    ]
    for gi in range(g.n_groups):
        lines.append(
            "\t".join(
                [
                    str(gi),
                    g.group_names[gi],
                    format(float(scaler.mins[gi]), ".17g"),
                    format(float(scaler.maxs[gi]), ".17g"),
                    ",".join(g.members(gi)),
                ]
            )
        )
    text = "\n".join(lines) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


def load_scaler(source: PathOrFile) -> GroupScaler:
    """Read a scaler written by :func:`save_scaler`.

    Raises:
        FormatError: wrong version, truncated or inconsistent payload.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    lines = text.splitlines()
    if not lines or lines[0].strip() != SCALER_FORMAT_VERSION:
        head = lines[0] if lines else ""
        raise FormatError(f"unsupported scaler header {head!r}")
    try:
        key, _, provenance = lines[1].partition("\t")
        if key != "provenance":
            raise FormatError("missing provenance line")
        fields = lines[2].split("\t")
        if fields[0] != "features" or len(fields) < 2:
            raise FormatError("missing features line")
        features = fields[1:]
        key, count = lines[3].split("\t")
        if key != "groups":
            raise FormatError("missing groups line")
        n_groups = int(count)
        group_lines = lines[4 : 4 + n_groups]
        if len(group_lines) != n_groups:
            raise FormatError(f"truncated scaler: expected {n_groups} group lines")
        names, mins, maxs = [], [], []
        group_of = {}
        for expected, line in enumerate(group_lines):
            gid, gname, lo, hi, members = line.split("\t")
            if int(gid) != expected:
                raise FormatError(f"group ids must be contiguous, got {gid}")
            names.append(gname)
            mins.append(float(lo))
            maxs.append(float(hi))
            for f in members.split(","):
                if f in group_of:
                    raise FormatError(f"feature {f!r} listed in two groups")
                group_of[f] = expected
    except FormatError:
        raise
    except (ValueError, IndexError) as exc:
        raise FormatError(f"malformed scaler payload: {exc}") from None
    if set(group_of) != set(features):
        raise FormatError("group members do not match the feature list")
    if any(ln.strip() for ln in lines[4 + n_groups :]):
        raise FormatError("trailing content after scaler")
    try:
        gm = FeatureGroupMap(tuple(features), tuple(group_of[f] for f in features), tuple(names))
        return GroupScaler(gm, np.array(mins), np.array(maxs), provenance)
    except (ConfigError, DataError) as exc:
        raise FormatError(f"invalid scaler: {exc}") from None
