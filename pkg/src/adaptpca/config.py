"""Flat ``key = value`` config files for runs and synthetic stream specs.

Run config keys: ``s_c, n_components, s_m, lambda, l_o, grace`` and any number
of ``groups.<name> = feature,feature,...`` lines; group order follows the file.
Lines starting with ``#`` are comments.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Optional, Union

from adaptpca.detector import DetectorConfig
from adaptpca.errors import ConfigError
from adaptpca.ingestion import parse_times
from adaptpca.scaling import FeatureGroupMap
from adaptpca.synth import Segment

DETECTOR_KEYS = {
    "s_c": ("s_c", int),
    "n_components": ("n_components", int),
    "s_m": ("s_m", int),
    "lambda": ("lam", float),
    "l_o": ("l_o", int),
    "grace": ("grace", int),
}


def parse_kv(text: str, origin: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines, keeping file order. Duplicate keys are rejected."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
        if key in out:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv(path: Union[str, Path]) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from None
    return parse_kv(text, str(path))


def _convert(key: str, value: str, kind):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}") from None


@dataclass(frozen=True)
class RunConfig:
    detector: DetectorConfig
    groups: Optional[FeatureGroupMap]


def run_config_from_kv(kv: Mapping[str, str], overrides: Optional[Mapping[str, object]] = None) -> RunConfig:
    """Build detector settings and feature groups; ``overrides`` win over ``kv``.

    Overrides use the config-file key names; ``None`` values are ignored.
    """
    params: dict[str, object] = {}
    groups: dict[str, list[str]] = {}
    for key, value in kv.items():
        if key.startswith("groups."):
            name = key[len("groups.") :].strip()
            members = [f.strip() for f in value.split(",") if f.strip()]
            if not name:
                raise ConfigError(f"group key {key!r} has no name")
            if not members:
                raise ConfigError(f"group {name!r} has no features")
            groups[name] = members
        elif key in DETECTOR_KEYS:
            attr, kind = DETECTOR_KEYS[key]
            params[attr] = _convert(key, value, kind)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in DETECTOR_KEYS:
            raise ConfigError(f"unknown override {key!r}")
        attr, kind = DETECTOR_KEYS[key]
        params[attr] = kind(value)
    detector = DetectorConfig(**params)
    group_map = FeatureGroupMap.from_groups(groups) if groups else None
    return RunConfig(detector, group_map)


def with_params(config: DetectorConfig, **params) -> DetectorConfig:
    """Copy of ``config`` with config-file-named parameters replaced."""
    mapped = {DETECTOR_KEYS[k][0]: DETECTOR_KEYS[k][1](v) for k, v in params.items()}
    return replace(config, **mapped)


# --- synthetic stream spec ---------------------------------------------------

_SEGMENT_FIELDS = {f.name: f for f in fields(Segment)}


@dataclass(frozen=True)
class SynthSpec:
    segments: tuple[Segment, ...]
    d: int
    seed: int = 0
    orthogonal: bool = False
    cadence_s: float = 5.0
    start_ns: int = 0


def _parse_bool(key: str, value: str) -> bool:
    low = value.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _parse_segment(key: str, value: str) -> Segment:
    kwargs: dict[str, object] = {}
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        name, sep, raw = part.partition("=")
        name = name.strip()
        if not sep or name not in _SEGMENT_FIELDS:
            raise ConfigError(f"{key}: bad segment field {part!r}")
        raw = raw.strip()
        if name in ("n_samples", "latent_rank", "loading_seed"):
            kwargs[name] = _convert(f"{key}.{name}", raw, int)
        elif name == "mean_offset" and " " in raw:
            kwargs[name] = tuple(_convert(f"{key}.{name}", v, float) for v in raw.split())
        else:
            kwargs[name] = _convert(f"{key}.{name}", raw, float)
    for required in ("n_samples", "latent_rank", "loading_seed"):
        if required not in kwargs:
            raise ConfigError(f"{key}: missing {required}")
    return Segment(**kwargs)


def synth_spec_from_kv(kv: Mapping[str, str]) -> SynthSpec:
    """Parse a stream spec.

    Keys: ``d``, ``seed``, ``orthogonal``, ``cadence`` (seconds), ``start``
    (ISO-8601 or epoch seconds) and ``segment.<i> = n_samples=..,
    latent_rank=.., loading_seed=.., noise_sigma=.., mean_offset=..,
    loading_scale=..``, ordered by ``i``. A vector ``mean_offset`` is written
    as space-separated floats.
    """
    segs: dict[int, Segment] = {}
    opts: dict[str, object] = {}
    for key, value in kv.items():
        if key.startswith("segment."):
            idx = _convert(key, key[len("segment.") :], int)
            segs[idx] = _parse_segment(key, value)
        elif key == "d":
            opts["d"] = _convert(key, value, int)
        elif key == "seed":
            opts["seed"] = _convert(key, value, int)
        elif key == "orthogonal":
            opts["orthogonal"] = _parse_bool(key, value)
        elif key == "cadence":
            opts["cadence_s"] = _convert(key, value, float)
        elif key == "start":
            try:
                opts["start_ns"] = int(parse_times([value])[0])
            except ValueError as exc:
                raise ConfigError(f"start: {exc}") from None
        else:
            raise ConfigError(f"unknown synth key {key!r}")
    if "d" not in opts:
        raise ConfigError("synth spec needs 'd'")
    if not segs:
        raise ConfigError("synth spec has no segments")
    return SynthSpec(segments=tuple(segs[i] for i in sorted(segs)), **opts)
