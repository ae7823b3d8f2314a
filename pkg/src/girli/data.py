"""Image data: IDX (MNIST) files, synthetic digit phantoms, noise, metrics."""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .operators import Sinogram, check_image

__all__ = [
    "IdxFormatError",
    "IDX_IMAGE_MAGIC",
    "IDX_LABEL_MAGIC",
    "read_idx_images",
    "read_idx_labels",
    "write_idx_images",
    "write_idx_labels",
    "Dataset",
    "PhantomSpec",
    "generate_phantoms",
    "load_idx_dataset",
    "NoiseSpec",
    "add_noise",
    "relative_error",
]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX payload; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(blob: bytes, expected_magic: int):
    if len(blob) < 4:
        raise IdxFormatError("truncated header: missing magic number", 0)
    (magic,) = struct.unpack_from(">I", blob, 0)
    if magic != expected_magic:
        raise IdxFormatError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise IdxFormatError(f"truncated header: need {ndim} dimension sizes", len(blob))
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    count = 1
    for i, d in enumerate(dims):
        count *= d
        if count > 2**40:
            raise IdxFormatError("dimension sizes overflow", 4 + 4 * i)
    if len(blob) - header < count:
        raise IdxFormatError(
            f"truncated payload: need {count} bytes, found {len(blob) - header}", len(blob)
        )
    data = np.frombuffer(blob, dtype=np.uint8, count=count, offset=header)
    return data.reshape(dims)


def read_idx_images(path) -> list[np.ndarray]:
    """Read an IDX image file (magic ``0x00000803``) into ``[0, 1]`` floats."""
    arr = _parse_idx(_read_bytes(path), IDX_IMAGE_MAGIC)
    scaled = arr.astype(np.float64) / 255.0
    return [scaled[i] for i in range(scaled.shape[0])]


def read_idx_labels(path) -> list[int]:
    arr = _parse_idx(_read_bytes(path), IDX_LABEL_MAGIC)
    return [int(v) for v in arr]


def _quantize(u) -> np.ndarray:
    return np.rint(np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_idx_images(images, path):
    """Write images (values in ``[0, 1]``) as an unsigned-byte IDX file."""
    images = [np.asarray(u) for u in images]
    if not images:
        raise ValueError("no images to write")
    h, w = images[0].shape
    payload = np.stack([_quantize(u) for u in images])
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, len(images), h, w))
        fh.write(payload.tobytes())


def write_idx_labels(labels, path):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, labels.size))
        fh.write(labels.tobytes())


@dataclass
class Dataset:
    """Candidate priors (``train``) and reconstruction targets (``validation``)."""

    train: list
    validation: list
    train_labels: list = field(default_factory=list)
    validation_labels: list = field(default_factory=list)
    source: dict = field(default_factory=dict)

    def check_disjoint(self):
        train = {u.tobytes() for u in self.train}
        for i, v in enumerate(self.validation):
            if v.tobytes() in train:
                raise ValueError(f"validation image {i} also appears in the training set")
        return True

    def train_of_class(self, label) -> list[int]:
        return [i for i, lab in enumerate(self.train_labels) if lab == label]

    def validation_of_class(self, label) -> list[int]:
        return [i for i, lab in enumerate(self.validation_labels) if lab == label]


def load_idx_dataset(train_images, train_labels=None, validation_images=None,
                     validation_labels=None, n_train=None, n_validation=None) -> Dataset:
    """Build a :class:`Dataset` from MNIST-style IDX files."""
    train = read_idx_images(train_images)
    tl = read_idx_labels(train_labels) if train_labels else [None] * len(train)
    if validation_images:
        val = read_idx_images(validation_images)
        vl = read_idx_labels(validation_labels) if validation_labels else [None] * len(val)
    else:
        val, vl = [], []
    if n_train is not None:
        train, tl = train[:n_train], tl[:n_train]
    if n_validation is not None:
        val, vl = val[:n_validation], vl[:n_validation]
    ds = Dataset(train, val, tl, vl, source={
        "kind": "idx",
        "train_images": str(train_images),
        "train_labels": None if train_labels is None else str(train_labels),
        "validation_images": None if validation_images is None else str(validation_images),
        "validation_labels": None if validation_labels is None else str(validation_labels),
    })
    return ds


# ---------------------------------------------------------------------------
# synthetic digit phantoms

def _ellipse(cx, cy, rx, ry, n=20, start=0.0, stop=2 * math.pi):
    t = np.linspace(start, stop, n)
    return list(zip(cx + rx * np.cos(t), cy + ry * np.sin(t)))


# stroke templates on the unit square, x to the right and y downwards
_TEMPLATES = {
    0: [_ellipse(0.5, 0.5, 0.28, 0.44)],
    1: [[(0.32, 0.22), (0.55, 0.04), (0.55, 0.96)]],
    2: [[(0.18, 0.28), (0.3, 0.08), (0.55, 0.03), (0.78, 0.15), (0.78, 0.38),
         (0.2, 0.95), (0.85, 0.95)]],
    3: [[(0.18, 0.12), (0.45, 0.03), (0.74, 0.12), (0.72, 0.35), (0.42, 0.48)],
        [(0.42, 0.48), (0.76, 0.6), (0.78, 0.82), (0.5, 0.97), (0.18, 0.88)]],
    4: [[(0.62, 0.96), (0.62, 0.04), (0.12, 0.66), (0.88, 0.66)]],
    5: [[(0.8, 0.04), (0.26, 0.04), (0.22, 0.46), (0.58, 0.4), (0.8, 0.6),
         (0.76, 0.86), (0.48, 0.97), (0.18, 0.88)]],
    6: [[(0.7, 0.04), (0.34, 0.38), (0.2, 0.7)], _ellipse(0.5, 0.73, 0.3, 0.23)],
    7: [[(0.14, 0.04), (0.86, 0.04), (0.42, 0.96)]],
    8: [_ellipse(0.5, 0.26, 0.24, 0.22), _ellipse(0.5, 0.72, 0.3, 0.25)],
    9: [_ellipse(0.5, 0.28, 0.27, 0.24), [(0.77, 0.28), (0.68, 0.96)]],
}

MIN_PHANTOM_SIZE = 8


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of the digit-phantom generator.

    ``jitter`` scales all random affine perturbations (rotation, scale,
    shear, translation); ``0`` renders the bare templates.
    """

    size: int = 16
    classes: tuple = tuple(range(10))
    train_per_class: int = 2
    validation_per_class: int = 1
    jitter: float = 1.0
    stroke: float = 1.0

    def as_dict(self) -> dict:
        return {"size": self.size, "classes": list(self.classes),
                "train_per_class": self.train_per_class,
                "validation_per_class": self.validation_per_class,
                "jitter": self.jitter, "stroke": self.stroke}


def _segment_distance(px, py, a, b):
    ax, ay = a
    bx, by = b
    vx, vy = bx - ax, by - ay
    den = vx * vx + vy * vy
    t = np.clip(((px - ax) * vx + (py - ay) * vy) / den, 0.0, 1.0) if den > 0 else 0.0
    return np.hypot(px - (ax + t * vx), py - (ay + t * vy))


def _render(label, size, rng, jitter, stroke):
    j = jitter
    angle = rng.uniform(-0.25, 0.25) * j
    scale = 1.0 + rng.uniform(-0.12, 0.08) * j
    shear = rng.uniform(-0.25, 0.25) * j
    shift = rng.uniform(-0.08, 0.08, size=2) * j * size
    box = 0.68 * size * scale
    c, s = math.cos(angle), math.sin(angle)
    lin = np.array([[c, -s], [s, c]]) @ np.array([[1.0, shear], [0.0, 1.0]])
    centre = np.array([size / 2.0, size / 2.0]) + shift

    half_width = stroke * max(size / 28.0, 0.5) * (1.0 + rng.uniform(-0.15, 0.15) * j)
    py, px = np.mgrid[0:size, 0:size] + 0.5
    dist = np.full((size, size), np.inf)
    for poly in _TEMPLATES[label]:
        pts = [centre + lin @ ((np.array(p) - 0.5) * box) for p in poly]
        for a, b in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _segment_distance(px, py, a, b))
    return np.clip(half_width + 0.5 - dist, 0.0, 1.0)


def generate_phantoms(spec: PhantomSpec, seed: int) -> Dataset:
    """Reproducible digit-like stroke images with ground truth.

    Every image is an independent random affine jitter of a fixed stroke
    template; values lie in ``[0, 1]``.  Images are produced in class order,
    training images first.
    """
    if spec.size < MIN_PHANTOM_SIZE:
        raise ValueError(f"grid size {spec.size} too small for digit templates (min {MIN_PHANTOM_SIZE})")
    if not spec.classes:
        raise ValueError("at least one class is required")
    if spec.train_per_class < 1 or spec.validation_per_class < 1:
        raise ValueError("train_per_class and validation_per_class must be >= 1")
    for label in spec.classes:
        if label not in _TEMPLATES:
            raise ValueError(f"no template for class {label!r}")
    rng = np.random.default_rng(seed)
    train, tl, val, vl = [], [], [], []
    for label in spec.classes:
        for _ in range(spec.train_per_class):
            train.append(_render(label, spec.size, rng, spec.jitter, spec.stroke))
            tl.append(label)
        for _ in range(spec.validation_per_class):
            val.append(_render(label, spec.size, rng, spec.jitter, spec.stroke))
            vl.append(label)
    ds = Dataset(train, val, tl, vl, source={"kind": "phantom", "seed": seed, **spec.as_dict()})
    ds.check_disjoint()
    return ds


# ---------------------------------------------------------------------------
# noise and metrics

@dataclass(frozen=True)
class NoiseSpec:
    sigma2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma2 >= 0:
            raise ValueError(f"sigma2 must be >= 0, got {self.sigma2}")


def add_noise(y, spec: NoiseSpec, mask=None):
    """Add i.i.d. ``N(0, sigma2)`` noise and measure ``delta = |y^delta - y|``.

    With a row ``mask`` only the retained rows receive noise, so ``delta``
    reflects the observed data.  Returns ``(y_delta, delta)`` with ``y_delta``
    of the same type as ``y``.
    """
    values = y.values if isinstance(y, Sinogram) else np.asarray(y, dtype=np.float64)
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal(values.shape) * math.sqrt(spec.sigma2)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        noise = noise * mask.reshape(mask.shape + (1,) * (values.ndim - mask.ndim))
    y_delta = values + noise
    delta = float(np.linalg.norm(y_delta - values))
    if isinstance(y, Sinogram):
        return Sinogram(y_delta, y.angles), delta
    return y_delta, delta


def relative_error(truth, rec) -> float:
    """``|truth - rec|_2 / |truth|_2`` (not squared)."""
    truth = check_image(truth, "truth")
    rec = np.asarray(rec, dtype=np.float64)
    if rec.shape != truth.shape:
        raise ValueError(f"shape mismatch: truth {truth.shape}, reconstruction {rec.shape}")
    nt = np.linalg.norm(truth)
    if nt == 0:
        raise ValueError("relative error undefined for an all-zero truth image")
    return float(np.linalg.norm(truth - rec) / nt)
