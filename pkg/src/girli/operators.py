"""Discrete parallel-beam Radon transform and linear operator helpers.

Images are 2-D arrays of shape ``(height, width)``; sinograms are 2-D arrays
of shape ``(n_angles, bins)``.  The pixel grid is centred at the origin with
unit pixels, ``x`` growing with the column index and ``y`` growing upwards
(row 0 is the top row).  For angle ``theta`` the detector coordinate of a
point is ``s = x cos(theta) + y sin(theta)``, so at ``theta = 0`` the rays are
vertical and the projection is the vector of column sums.
"""

from __future__ import annotations

import functools
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

__all__ = [
    "LinearOperator",
    "MatrixOperator",
    "RadonOperator",
    "MaskedOperator",
    "ScaledOperator",
    "Sinogram",
    "default_angles",
    "default_bins",
    "check_image",
    "radon_forward",
    "radon_adjoint",
    "materialize_matrix",
    "estimate_operator_norm",
    "MAX_MATERIALIZE_COLUMNS",
]

MAX_MATERIALIZE_COLUMNS = 10_000

# direction components below this are snapped to zero so that axis-aligned
# rays are handled exactly
_AXIS_EPS = 1e-12
_MIN_SEGMENT = 1e-12


def default_angles(n: int = 180) -> np.ndarray:
    """Equally spaced angles ``k*pi/n`` for ``k = 0..n-1``."""
    if n < 1:
        raise ValueError(f"angle count must be >= 1, got {n}")
    return np.arange(n) * (np.pi / n)


def default_bins(width: int, height: int) -> int:
    """Detector size covering the image diagonal at every angle."""
    return int(math.ceil(math.sqrt(2.0) * max(width, height)))


def check_image(values, name: str = "image", nonnegative: bool = False) -> np.ndarray:
    """Validate and return ``values`` as a float64 2-D array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name}: expected a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite pixel values")
    if nonnegative and np.any(arr < 0):
        idx = np.unravel_index(np.argmin(arr), arr.shape)
        raise ValueError(f"{name}: negative pixel {arr[idx]!r} at {tuple(int(i) for i in idx)}")
    return arr


def _check_angles(angles) -> np.ndarray:
    angles = np.asarray(angles, dtype=np.float64).ravel()
    if angles.size == 0:
        raise ValueError("angles: empty angle list")
    if not np.all(np.isfinite(angles)):
        raise ValueError("angles: non-finite entries")
    if np.any(angles < 0) or np.any(angles >= np.pi):
        raise ValueError("angles: every angle must lie in [0, pi)")
    if angles.size > 1 and np.any(np.diff(angles) <= 0):
        raise ValueError("angles: must be strictly increasing")
    return angles


@dataclass(frozen=True)
class Sinogram:
    """Projection data together with the angles it was sampled at."""

    values: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        angles = _check_angles(self.angles)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != angles.size or values.shape[1] == 0:
            raise ValueError(
                f"sinogram: values shape {values.shape} does not match "
                f"{angles.size} angles x bins"
            )
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "values", values)

    @property
    def bins(self) -> int:
        return self.values.shape[1]


class LinearOperator:
    """A linear map between array spaces with an exact adjoint.

    Subclasses implement :meth:`apply` and :meth:`apply_adjoint` on arrays of
    shape ``domain_shape`` and ``range_shape`` respectively.
    """

    domain_shape: tuple[int, ...]
    range_shape: tuple[int, ...]

    def apply(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_adjoint(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def domain_size(self) -> int:
        return int(np.prod(self.domain_shape))

    @property
    def range_size(self) -> int:
        return int(np.prod(self.range_shape))

    def _check_domain(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != tuple(self.domain_shape):
            raise ValueError(
                f"geometry mismatch: operator domain is {self.domain_shape}, got {u.shape}"
            )
        return u

    def _check_range(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != tuple(self.range_shape):
            raise ValueError(
                f"geometry mismatch: operator range is {self.range_shape}, got {v.shape}"
            )
        return v

    def __call__(self, u):
        return self.apply(u)


class MatrixOperator(LinearOperator):
    """Operator realized by an explicit (dense or sparse) matrix.

    The adjoint is the literal transpose, so the pairing
    ``<Au, v> = <u, A^T v>`` holds up to rounding.
    """

    def __init__(self, matrix, domain_shape, range_shape):
        self.matrix = matrix
        self.domain_shape = tuple(int(s) for s in domain_shape)
        self.range_shape = tuple(int(s) for s in range_shape)
        if matrix.shape != (self.range_size, self.domain_size):
            raise ValueError(
                f"matrix shape {matrix.shape} does not match range {self.range_shape} "
                f"x domain {self.domain_shape}"
            )
        self._matrix_t = matrix.T.tocsr() if sp.issparse(matrix) else matrix.T

    def apply(self, u):
        u = self._check_domain(u)
        return np.asarray(self.matrix @ u.ravel()).reshape(self.range_shape)

    def apply_adjoint(self, v):
        v = self._check_range(v)
        return np.asarray(self._matrix_t @ v.ravel()).reshape(self.domain_shape)


class ScaledOperator(LinearOperator):
    """``factor * op``."""

    def __init__(self, op: LinearOperator, factor: float):
        self.op = op
        self.factor = float(factor)
        self.domain_shape = op.domain_shape
        self.range_shape = op.range_shape

    def apply(self, u):
        return self.factor * self.op.apply(u)

    def apply_adjoint(self, v):
        return self.factor * self.op.apply_adjoint(v)


class MaskedOperator(LinearOperator):
    """Zero the rows of ``op``'s output where ``mask`` is False.

    Used for limited-angle data: with a row mask over the angle axis the
    discarded directions are identically zero in both the data and the
    forward model.
    """

    def __init__(self, op: LinearOperator, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != tuple(op.range_shape[: mask.ndim]):
            raise ValueError(f"mask shape {mask.shape} incompatible with range {op.range_shape}")
        self.op = op
        self.domain_shape = op.domain_shape
        self.range_shape = op.range_shape
        extra = (1,) * (len(op.range_shape) - mask.ndim)
        self._weights = mask.reshape(mask.shape + extra).astype(np.float64)
        self.mask = mask

    def apply(self, u):
        return self.op.apply(u) * self._weights

    def apply_adjoint(self, v):
        v = self._check_range(v)
        return self.op.apply_adjoint(v * self._weights)


def _ray_weights(s, cos_t, sin_t, width, height):
    """Intersection lengths of the line ``x cos + y sin = s`` with each pixel.

    Returns flat pixel indices and lengths.  A ray lying exactly on a grid
    line gives half its length to each of the two neighbouring pixels.
    """
    half_w = width / 2.0
    half_h = height / 2.0
    if sin_t == 0.0:
        # vertical ray at x = s / cos
        x = s / cos_t
        cols = _line_columns(x + half_w, width)
        if not cols:
            return np.empty(0, np.int64), np.empty(0)
        rows = np.arange(height)
        idx = np.concatenate([rows * width + c for c, _ in cols])
        w = np.concatenate([np.full(height, wt) for _, wt in cols])
        return idx, w
    if cos_t == 0.0:
        # horizontal ray at y = s / sin
        y = s / sin_t
        hits = _line_columns(y + half_h, height)
        if not hits:
            return np.empty(0, np.int64), np.empty(0)
        cols = np.arange(width)
        # grid row index counts from the top
        idx = np.concatenate([(height - 1 - r) * width + cols for r, _ in hits])
        w = np.concatenate([np.full(width, wt) for _, wt in hits])
        return idx, w

    # parametrize p(t) = s*n + t*d with n = (cos, sin), d = (-sin, cos)
    px, py = s * cos_t, s * sin_t
    dx, dy = -sin_t, cos_t
    tx = (np.arange(width + 1) - half_w - px) / dx
    ty = (np.arange(height + 1) - half_h - py) / dy
    t_lo = max(min(tx[0], tx[-1]), min(ty[0], ty[-1]))
    t_hi = min(max(tx[0], tx[-1]), max(ty[0], ty[-1]))
    if t_hi - t_lo <= _MIN_SEGMENT:
        return np.empty(0, np.int64), np.empty(0)
    ts = np.concatenate([tx, ty])
    ts = ts[(ts > t_lo) & (ts < t_hi)]
    ts = np.unique(np.concatenate([[t_lo], ts, [t_hi]]))
    lengths = np.diff(ts)
    keep = lengths > _MIN_SEGMENT
    mid = 0.5 * (ts[:-1] + ts[1:])[keep]
    lengths = lengths[keep]
    col = np.floor(px + mid * dx + half_w).astype(np.int64)
    row = np.floor(half_h - (py + mid * dy)).astype(np.int64)
    np.clip(col, 0, width - 1, out=col)
    np.clip(row, 0, height - 1, out=row)
    return row * width + col, lengths


def _line_columns(offset, n):
    """Pixel indices (and weights) hit by an axis-aligned line at ``offset``
    measured from the grid edge, for a grid of ``n`` unit cells."""
    if offset < 0 or offset > n:
        return []
    k = math.floor(offset)
    if offset == k:
        return [(c, 0.5) for c in (k - 1, k) if 0 <= c < n]
    return [(k, 1.0)]


@functools.lru_cache(maxsize=16)
def _radon_matrix(width, height, angles_key, bins):
    angles = np.frombuffer(angles_key, dtype=np.float64)
    centers = np.arange(bins) - (bins - 1) / 2.0
    rows, cols, vals = [], [], []
    for a, theta in enumerate(angles):
        c, s = math.cos(theta), math.sin(theta)
        if abs(c) < _AXIS_EPS:
            c, s = 0.0, math.copysign(1.0, s)
        elif abs(s) < _AXIS_EPS:
            c, s = math.copysign(1.0, c), 0.0
        for b, offset in enumerate(centers):
            idx, w = _ray_weights(offset, c, s, width, height)
            if idx.size:
                rows.append(np.full(idx.size, a * bins + b, dtype=np.int64))
                cols.append(idx)
                vals.append(w)
    shape = (len(angles) * bins, width * height)
    if not rows:
        return sp.csr_matrix(shape)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    ).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


class RadonOperator(MatrixOperator):
    """Parallel-beam Radon transform with exact line-length pixel weights.

    Parameters
    ----------
    width, height : int
        Image size in pixels.
    angles : array-like, optional
        Strictly increasing projection angles in ``[0, pi)``.  Defaults to
        180 equally spaced angles.
    bins : int, optional
        Detector bins of unit width, centred on the image centre.  Defaults
        to ``ceil(sqrt(2) * max(width, height))``.
    """

    def __init__(self, width: int, height: int, angles=None, bins: int | None = None):
        if width < 1 or height < 1:
            raise ValueError(f"image dimensions must be positive, got {width}x{height}")
        angles = default_angles() if angles is None else _check_angles(angles)
        bins = default_bins(width, height) if bins is None else int(bins)
        if bins < 1:
            raise ValueError(f"bins must be >= 1, got {bins}")
        self.width = int(width)
        self.height = int(height)
        self.angles = np.array(angles, dtype=np.float64)
        self.bins = bins
        matrix = _radon_matrix(self.width, self.height, self.angles.tobytes(), bins)
        super().__init__(matrix, (self.height, self.width), (self.angles.size, bins))

    def forward(self, image) -> Sinogram:
        image = check_image(image)
        return Sinogram(self.apply(image), self.angles)

    def backproject(self, sino: Sinogram) -> np.ndarray:
        if sino.angles.shape != self.angles.shape or not np.array_equal(sino.angles, self.angles):
            raise ValueError("geometry mismatch: sinogram angles differ from operator angles")
        if sino.bins != self.bins:
            raise ValueError(f"geometry mismatch: sinogram has {sino.bins} bins, operator {self.bins}")
        return self.apply_adjoint(sino.values)


def radon_forward(image, angles=None, bins: int | None = None) -> Sinogram:
    """Project ``image`` along each ray of the given parallel-beam geometry."""
    image = check_image(image)
    if angles is not None:
        angles = _check_angles(angles)
    if bins is not None and bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    op = RadonOperator(image.shape[1], image.shape[0], angles, bins)
    return op.forward(image)


def radon_adjoint(sino: Sinogram, width: int, height: int) -> np.ndarray:
    """Backproject ``sino`` onto a ``height x width`` grid (exact transpose)."""
    if width < 1 or height < 1:
        raise ValueError(f"image dimensions must be positive, got {width}x{height}")
    op = RadonOperator(width, height, sino.angles, sino.bins)
    return op.backproject(sino)


def materialize_matrix(op: LinearOperator) -> np.ndarray:
    """Dense matrix whose column ``j`` is ``op.apply(e_j)``."""
    n = op.domain_size
    if n > MAX_MATERIALIZE_COLUMNS:
        raise ValueError(
            f"operator domain has {n} columns, above the materialization limit "
            f"of {MAX_MATERIALIZE_COLUMNS}"
        )
    out = np.empty((op.range_size, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        out[:, j] = op.apply(e.reshape(op.domain_shape)).ravel()
        e[j] = 0.0
    return out


def estimate_operator_norm(op: LinearOperator, iterations: int = 100, seed: int = 0) -> float:
    """Power-iteration estimate of the largest singular value of ``op``.

    Iterates ``x <- op* op x / |op* op x|`` from a seeded Gaussian start and
    returns ``|op x|``.  The estimate never exceeds the true norm and does not
    decrease with more iterations.  A zero operator yields ``0.0`` together
    with a :class:`RuntimeWarning`.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.domain_shape)
    x /= np.linalg.norm(x)
    best = 0.0
    for _ in range(iterations):
        y = op.apply(x)
        est = float(np.linalg.norm(y))
        best = max(best, est)
        z = op.apply_adjoint(y)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            break
        x = z / nz
    if best == 0.0:
        warnings.warn("operator norm estimate is zero (zero operator?)", RuntimeWarning, stacklevel=2)
    return best
