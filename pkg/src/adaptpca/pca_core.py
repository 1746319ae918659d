"""Low-rank PCA with exact mean tracking and incremental updates.

The model keeps the mean, an orthonormal basis of the top ``N`` principal
directions (stored column-wise, ``d x N``) and the matching singular values of
the centered data seen so far. Models are immutable; every fit returns a new
one.

Incremental updates use the mean-corrected incremental SVD: the new batch is
centered on its own mean, an extra column carrying the mean shift is appended,
and the augmented block is folded into the existing factorization through a
small SVD. With ``N = d`` the update is exact.

No forgetting factor is applied, so ``n_samples`` grows without bound and long
runs weight history heavily.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Union

import numpy as np
import scipy.linalg

from adaptpca.errors import DataError, FormatError

MODEL_FORMAT_VERSION = "adaptpca-model v1"
ORTHONORMAL_TOL = 1e-10

PathOrFile = Union[str, Path, IO[str]]


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True, order="C")
    out.setflags(write=False)
    return out


def _check_finite_rows(X: np.ndarray, what: str = "input") -> None:
    bad = ~np.isfinite(X)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise DataError(f"non-finite value in {what} row {row}")


def _as_matrix(X, what: str = "input") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"{what} must be a 2-D matrix, got shape {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise DataError(f"{what} is empty (shape {X.shape})")
    _check_finite_rows(X, what)
    return X


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry of each is positive."""
    if components.shape[1] == 0:
        return components
    idx = np.argmax(np.abs(components), axis=0)
    signs = np.sign(components[idx, np.arange(components.shape[1])])
    signs[signs == 0] = 1.0
    return components * signs


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Learned affine subspace.

    Attributes:
        mean: Feature-wise mean of all samples seen, shape ``(d,)``.
        components: Orthonormal basis, shape ``(d, N)``. Empty models carry a
            ``(d, 0)`` basis.
        singular_values: Non-increasing, non-negative, shape ``(N,)``.
        n_samples: Number of samples folded into the model.
        n_components: Target number of components ``N``.
    """

    mean: np.ndarray
    components: np.ndarray
    singular_values: np.ndarray
    n_samples: int
    n_components: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", _frozen(self.mean))
        object.__setattr__(self, "components", _frozen(self.components))
        object.__setattr__(self, "singular_values", _frozen(self.singular_values))
        object.__setattr__(self, "n_samples", int(self.n_samples))
        object.__setattr__(self, "n_components", int(self.n_components))
        self.validate()

    @classmethod
    def empty(cls, d: int, n_components: int) -> PcaModel:
        """Model that has seen no data; ``partial_fit`` on it equals ``batch_fit``."""
        return cls(
            mean=np.zeros(d),
            components=np.zeros((d, 0)),
            singular_values=np.zeros(0),
            n_samples=0,
            n_components=n_components,
        )

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @property
    def is_empty(self) -> bool:
        return self.n_samples == 0

    def validate(self) -> None:
        """Check every structural invariant; raise :class:`DataError` on violation."""
        d = self.mean.ndim == 1 and self.mean.shape[0]
        if not d:
            raise DataError(f"mean must be a non-empty vector, got shape {self.mean.shape}")
        if self.n_components < 1:
            raise DataError(f"n_components must be >= 1, got {self.n_components}")
        if self.n_samples < 0:
            raise DataError(f"n_samples must be >= 0, got {self.n_samples}")
        k = 0 if self.n_samples == 0 else self.n_components
        if self.components.shape != (d, k):
            raise DataError(
                f"components must have shape {(d, k)}, got {self.components.shape}"
            )
        if self.singular_values.shape != (k,):
            raise DataError(
                f"singular_values must have shape {(k,)}, got {self.singular_values.shape}"
            )
        if self.n_samples and self.n_components > min(d, self.n_samples):
            raise DataError(
                f"n_components={self.n_components} exceeds min(d={d}, "
                f"n_samples={self.n_samples})"
            )
        for name in ("mean", "components", "singular_values"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"{name} contains non-finite values")
        sv = self.singular_values
        if np.any(sv < 0) or np.any(np.diff(sv) > 0):
            raise DataError("singular_values must be non-negative and non-increasing")
        if k:
            gram = self.components.T @ self.components
            dev = float(np.max(np.abs(gram - np.eye(k))))
            if dev >= ORTHONORMAL_TOL:
                raise DataError(f"components are not orthonormal (max deviation {dev:.3g})")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PcaModel):
            return NotImplemented
        return (
            self.n_samples == other.n_samples
            and self.n_components == other.n_components
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.components, other.components)
            and np.array_equal(self.singular_values, other.singular_values)
        )

    __hash__ = None  # type: ignore[assignment]


def batch_fit(X, n_components: int) -> PcaModel:
    """Fit a PCA model on all rows of ``X`` at once.

    Args:
        X: Matrix of shape ``(s, d)``.
        n_components: Number of components to keep, ``1 <= N <= min(d, s)``.

    Raises:
        DataError: empty matrix, ``N`` out of range, or non-finite values. The
            message names the first offending row.
    """
    X = _as_matrix(X)
    s, d = X.shape
    if not 1 <= n_components <= min(d, s):
        raise DataError(f"n_components={n_components} out of range [1, {min(d, s)}]")
    mean = X.mean(axis=0)
    _, sv, vt = np.linalg.svd(X - mean, full_matrices=False)
    components = _fix_signs(vt[:n_components].T)
    return PcaModel(
        mean=mean,
        components=components,
        singular_values=sv[:n_components],
        n_samples=s,
        n_components=n_components,
    )


def partial_fit(model: PcaModel, B) -> PcaModel:
    """Fold the batch ``B`` (shape ``(m, d)``) into ``model``.

    The new mean is the exact pooled mean. The basis update works on the
    augmented column block ``A = [(B - mean_B)^T, c]`` where
    ``c = sqrt(n m / (n + m)) (mean_old - mean_B)``: project ``A`` on the current
    basis, orthonormalize the residual, SVD the small
    ``[[diag(s), U^T A], [0, R]]`` matrix and keep the top ``N`` directions.
    """
    B = _as_matrix(B, "batch")
    m, d = B.shape
    if d != model.d:
        raise DataError(f"batch has {d} columns, model expects {model.d}")
    if model.is_empty:
        return batch_fit(B, model.n_components)

    n = model.n_samples
    N = model.n_components
    batch_mean = B.mean(axis=0)
    total = n + m
    # Pooled mean as a weighted combination; exact to rounding.
    new_mean = (n / total) * model.mean + (m / total) * batch_mean

    correction = math.sqrt(n * m / total) * (model.mean - batch_mean)
    A = np.hstack([(B - batch_mean).T, correction[:, None]])

    U = model.components
    proj = U.T @ A
    resid = A - U @ proj
    Q, R = _orthonormal_residual(U, resid, scale=max(float(model.singular_values[0]), float(np.linalg.norm(A))))
    r = Q.shape[1]

    K = np.zeros((N + r, N + A.shape[1]))
    K[:N, :N] = np.diag(model.singular_values)
    K[:N, N:] = proj
    K[N:, N:] = R
    uk, sk, _ = np.linalg.svd(K, full_matrices=False)

    basis = np.hstack([U, Q]) if r else U
    components = _fix_signs(basis @ uk[:, :N])
    return PcaModel(
        mean=new_mean,
        components=components,
        singular_values=sk[:N],
        n_samples=total,
        n_components=N,
    )


def _orthonormal_residual(U: np.ndarray, resid: np.ndarray, scale: float):
    """Orthonormal basis ``Q`` and coefficients ``R`` with ``resid ~= Q R``, ``Q ⟂ U``.

    Columns whose pivoted-QR magnitude is negligible relative to ``scale`` are
    dropped; a second Gram-Schmidt pass against ``U`` keeps ``[U Q]``
    orthonormal to machine precision.
    """
    d, c = resid.shape
    if scale == 0.0:
        return np.zeros((d, 0)), np.zeros((0, c))
    Q, R, piv = scipy.linalg.qr(resid, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = 1e-12 * scale
    rank = int(np.count_nonzero(diag > tol))
    # Number of extra directions can never exceed the free dimensions.
    rank = min(rank, d - U.shape[1])
    if rank == 0:
        return np.zeros((d, 0)), np.zeros((0, c))
    Q = Q[:, :rank]
    R_unpiv = np.empty((rank, c))
    R_unpiv[:, piv] = R[:rank]
    Q = Q - U @ (U.T @ Q)
    Q2, R2 = np.linalg.qr(Q)
    return Q2, R2 @ R_unpiv


def _as_sample(model: PcaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (model.d,) or x.ndim not in (1, 2):
        raise DataError(f"sample must have {model.d} features, got shape {x.shape}")
    return x


def reconstruct(model: PcaModel, x) -> np.ndarray:
    """Project ``x`` on the model's affine subspace: ``U U^T (x - mean) + mean``.

    Accepts a single vector of length ``d`` or a matrix of row samples.
    """
    x = _as_sample(model, x)
    U = model.components
    if x.ndim == 1:
        return U @ (U.T @ (x - model.mean)) + model.mean
    return ((x - model.mean) @ U) @ U.T + model.mean


def reconstruction_error_vector(model: PcaModel, x) -> np.ndarray:
    """Per-feature reconstruction error ``R - x``."""
    x = _as_sample(model, x)
    return reconstruct(model, x) - x


def sample_error(model: PcaModel, x: np.ndarray) -> float:
    """Unchecked :func:`reconstruction_error` for one validated float64 vector."""
    U = model.components
    e = (U @ (U.T @ (x - model.mean)) + model.mean) - x
    return math.sqrt(float(e @ e))


def reconstruction_error(model: PcaModel, x):
    """Euclidean norm of :func:`reconstruction_error_vector`; a float for a vector."""
    x = _as_sample(model, x)
    if x.ndim == 1:
        return sample_error(model, x)
    e = reconstruction_error_vector(model, x)
    return np.sqrt(np.einsum("ij,ij->i", e, e))


# --- persistence -------------------------------------------------------------


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def model_to_lines(model: PcaModel) -> list[str]:
    lines = [
        MODEL_FORMAT_VERSION,
        f"d {model.d}",
        f"N {model.n_components}",
        f"n_samples {model.n_samples}",
        f"mean {_fmt(model.mean)}",
        f"singular_values {_fmt(model.singular_values)}",
    ]
    for row in model.components:
        lines.append(f"component_row {_fmt(row)}")
    return lines


def _keyed(line: str, key: str) -> str:
    head, _, rest = line.partition(" ")
    if head != key:
        raise FormatError(f"expected '{key}' line, got {line[:40]!r}")
    return rest


def _floats(text: str, count: int, key: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != count:
        raise FormatError(f"'{key}' expects {count} values, got {len(parts)}")
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"bad float in '{key}' line: {exc}") from None


def model_from_lines(lines: list[str]) -> tuple[PcaModel, int]:
    """Parse a model starting at ``lines[0]``; returns the model and lines consumed."""
    if not lines:
        raise FormatError("empty model payload")
    if lines[0].strip() != MODEL_FORMAT_VERSION:
        raise FormatError(
            f"unsupported model header {lines[0].strip()!r}, expected {MODEL_FORMAT_VERSION!r}"
        )
    if len(lines) < 6:
        raise FormatError("truncated model payload")
    try:
        d = int(_keyed(lines[1], "d"))
        N = int(_keyed(lines[2], "N"))
        n_samples = int(_keyed(lines[3], "n_samples"))
    except ValueError as exc:
        raise FormatError(f"bad integer field: {exc}") from None
    if d < 1 or N < 1:
        raise FormatError(f"invalid dimensions d={d}, N={N}")
    k = 0 if n_samples == 0 else N
    mean = _floats(_keyed(lines[4], "mean"), d, "mean")
    sv = _floats(_keyed(lines[5], "singular_values"), k, "singular_values")
    if len(lines) < 6 + d:
        raise FormatError(f"truncated model payload: expected {d} component rows")
    rows = [
        _floats(_keyed(lines[6 + i], "component_row"), k, "component_row") for i in range(d)
    ]
    components = np.vstack(rows) if k else np.zeros((d, 0))
    try:
        model = PcaModel(mean, components, sv, n_samples, N)
    except DataError as exc:
        raise FormatError(f"invalid model: {exc}") from None
    return model, 6 + d


def save_model(model: PcaModel, sink: PathOrFile) -> None:
    """Write ``model`` in the versioned text format (17 significant digits)."""
    text = "\n".join(model_to_lines(model)) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


def load_model(source: PathOrFile) -> PcaModel:
    """Read a model written by :func:`save_model`.

    Raises:
        FormatError: truncated or malformed payload, version mismatch, or a
            payload that violates the model invariants.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    model, used = model_from_lines(lines)
    if used != len(lines):
        raise FormatError(f"trailing content after model ({len(lines) - used} lines)")
    return model
