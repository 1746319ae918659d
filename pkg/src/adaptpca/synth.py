"""Synthetic regime streams and brute-force oracles for testing.

Streams are drawn segment by segment as ``x = A z + m + eps`` with a
segment-specific loading matrix ``A``, standard-normal latents ``z`` and
isotropic Gaussian noise. All randomness comes from numpy's ``PCG64`` bit
generator, so a seed reproduces the same stream on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import scipy.linalg

from adaptpca.errors import ConfigError, DataError
from adaptpca.ingestion import IntervalSpec, TimeSeries
from adaptpca.pca_core import PcaModel, _fix_signs
from adaptpca.scaling import FeatureGroupMap

NS_PER_S = 1_000_000_000


def rng_for(seed: int) -> np.random.Generator:
    """The package's one random source: PCG64 seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class Segment:
    """One regime of a synthetic stream.

    ``mean_offset`` is a scalar added to every feature or a length-``d`` vector.
    ``loading_scale`` multiplies the loading matrix, so each latent direction
    carries variance of order ``loading_scale**2``.
    """

    n_samples: int
    latent_rank: int
    loading_seed: int
    noise_sigma: float = 0.0
    mean_offset: Union[float, Sequence[float]] = 0.0
    loading_scale: float = 1.0


def _loading(d: int, r: int, seed: int) -> np.ndarray:
    return rng_for(seed).standard_normal((d, r))


def gen_regime_stream(
    segments: Sequence[Segment],
    d: int,
    seed: int,
    *,
    orthogonal: bool = False,
    start_ns: int = 0,
    cadence_s: float = 5.0,
    feature_prefix: str = "f",
) -> tuple[TimeSeries, IntervalSpec]:
    """Generate a multi-regime stream and its true segment boundaries.

    Args:
        segments: Regimes in stream order.
        d: Number of features.
        seed: Seed for latents and noise. Loadings use each segment's own
            ``loading_seed``; segments sharing a loading seed share a loading.
        orthogonal: Give every distinct loading orthonormal columns, orthogonal
            to all earlier loadings, times ``loading_scale``. Requires the
            distinct ranks to sum to at most ``d``.
        start_ns: Timestamp of the first sample, integer nanoseconds.
        cadence_s: Sample spacing in seconds.

    Returns:
        The series (one feature group per feature) and an IntervalSpec with
        one ``[start, end)`` range per segment, labeled ``segment-<i>``.
    """
    if not segments:
        raise ConfigError("segment list is empty")
    if d < 1:
        raise ConfigError(f"d must be >= 1, got {d}")
    cadence_ns = int(round(cadence_s * NS_PER_S))
    if cadence_ns <= 0:
        raise ConfigError("cadence must be positive")

    loadings: dict[int, np.ndarray] = {}
    basis = np.zeros((d, 0))
    for seg in segments:
        if seg.latent_rank < 1 or seg.latent_rank > d:
            raise ConfigError(f"latent_rank={seg.latent_rank} must be in [1, d={d}]")
        if seg.n_samples < 1:
            raise ConfigError("segments need at least one sample")
        if seg.loading_seed in loadings:
            if loadings[seg.loading_seed].shape[1] != seg.latent_rank:
                raise ConfigError(f"loading_seed {seg.loading_seed} reused with a different rank")
            continue
        A = _loading(d, seg.latent_rank, seg.loading_seed)
        if orthogonal:
            if basis.shape[1] + seg.latent_rank > d:
                raise ConfigError("orthogonal loadings need the distinct ranks to sum to <= d")
            A = A - basis @ (basis.T @ A)
            q, _ = np.linalg.qr(A)
            q = q - basis @ (basis.T @ q)
            A, _ = np.linalg.qr(q)
            basis = np.hstack([basis, A])
        loadings[seg.loading_seed] = A * seg.loading_scale

    rng = rng_for(seed)
    blocks = []
    for seg in segments:
        A = loadings[seg.loading_seed]
        offset = np.broadcast_to(np.asarray(seg.mean_offset, dtype=np.float64), (d,))
        z = rng.standard_normal((seg.n_samples, seg.latent_rank))
        eps = rng.standard_normal((seg.n_samples, d)) * seg.noise_sigma
        blocks.append(z @ A.T + offset + eps)
    values = np.vstack(blocks)

    n = values.shape[0]
    timestamps = start_ns + cadence_ns * np.arange(n, dtype=np.int64)
    names = tuple(f"{feature_prefix}{i}" for i in range(d))
    series = TimeSeries(timestamps, values, names, FeatureGroupMap.per_feature(names))

    ranges, labels = [], []
    pos = 0
    for i, seg in enumerate(segments):
        lo = int(timestamps[pos])
        pos += seg.n_samples
        hi = int(timestamps[pos]) if pos < n else int(timestamps[-1]) + cadence_ns
        ranges.append((lo, hi))
        labels.append(f"segment-{i}")
    return series, IntervalSpec(tuple(ranges), tuple(labels))


def brute_force_pca(X, n_components: int) -> PcaModel:
    """Reference PCA from the eigendecomposition of the explicit covariance.

    Independent of the SVD path used by :func:`adaptpca.pca_core.batch_fit`.
    Singular values are ``sqrt`` of the scatter-matrix eigenvalues; tiny
    negative eigenvalues from rounding are clamped to 0.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError(f"need a non-empty matrix, got shape {X.shape}")
    s, d = X.shape
    if not 1 <= n_components <= min(s, d):
        raise DataError(f"n_components={n_components} out of range")
    mean = X.sum(axis=0) / s
    Xc = X - mean
    scatter = Xc.T @ Xc
    evals, evecs = np.linalg.eigh(scatter)
    order = np.argsort(evals)[::-1][:n_components]
    sv = np.sqrt(np.clip(evals[order], 0.0, None))
    return PcaModel(mean, _fix_signs(evecs[:, order]), sv, s, n_components)


def principal_angles(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Principal angles (radians) between the column spaces of ``A`` and ``B``."""
    return scipy.linalg.subspace_angles(A, B)


def inject_spike(series: TimeSeries, t_ns: int, magnitude) -> TimeSeries:
    """Return a copy with ``magnitude`` added to the row nearest ``t_ns``.

    Ties go to the earlier row.
    """
    magnitude = np.broadcast_to(np.asarray(magnitude, dtype=np.float64), (series.d,))
    ts = series.timestamps
    if len(ts) == 0:
        raise DataError("cannot inject into an empty series")
    j = int(np.searchsorted(ts, t_ns))
    if j == len(ts):
        j -= 1
    elif j > 0 and (t_ns - ts[j - 1]) <= (ts[j] - t_ns):
        j -= 1
    values = series.values.copy()
    values[j] += magnitude
    return TimeSeries(series.timestamps, values, series.feature_names, series.group_map)
