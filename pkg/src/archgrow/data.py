"""Dataset containers, file loaders, recurrence plots and time-series models."""

from __future__ import annotations

import csv
import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from archgrow.errors import DatasetError, FormatError, InvalidArgumentError
from archgrow.graph import DEFAULT_CONV_CHANNELS, LayerGraph

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass
class Dataset:
    """Samples for every model input plus integer labels.

    ``inputs`` holds one array per model input layer, all sharing the sample
    axis: ``(n, channels, height, width)`` for images, ``(n, features)`` for
    flat vectors.
    """

    inputs: list[np.ndarray]
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        if isinstance(self.inputs, np.ndarray):
            self.inputs = [self.inputs]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.labels.shape[0]
        if not self.inputs or any(x.shape[0] != n for x in self.inputs):
            raise DatasetError("every input must have one row per label")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DatasetError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def input_shapes(self) -> list[tuple[int, ...]]:
        return [x.shape[1:] for x in self.inputs]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset([x[idx] for x in self.inputs], self.labels[idx], self.class_count)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for x in self.inputs:
            h.update(str(x.shape).encode())
            h.update(np.ascontiguousarray(x, dtype=np.float64).tobytes())
        h.update(self.labels.astype("<i8").tobytes())
        return h.hexdigest()


@dataclass
class MtsDataset:
    """Equal-length multivariate series, shaped ``(n, dims, length)``."""

    series: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.series.ndim != 3:
            raise DatasetError(f"series must be (n, dims, length), got {self.series.shape}")
        if self.series.shape[0] != self.labels.shape[0]:
            raise DatasetError("one label per series required")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def dims(self) -> int:
        return self.series.shape[1]

    @property
    def length(self) -> int:
        return self.series.shape[2]


# -- IDX ---------------------------------------------------------------------


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _idx_header(buf: bytes, path, magic: int, ndim: int) -> tuple[int, ...]:
    need = 4 * (1 + ndim)
    if len(buf) < need:
        raise FormatError(f"{path}: truncated header at offset {len(buf)}, need {need} bytes")
    found = struct.unpack_from(">I", buf, 0)[0]
    if found != magic:
        raise FormatError(f"{path}: bad magic {found} at offset 0, expected {magic}")
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    size = int(np.prod(dims))
    if len(buf) - need < size:
        raise FormatError(f"{path}: truncated payload at offset {len(buf)}, expected {need + size} bytes")
    return dims


def load_idx(images_path, labels_path, class_count: int | None = None) -> Dataset:
    """Read an IDX image/label file pair (optionally gzipped); pixels scaled to [0, 1]."""
    img_buf = _read_bytes(images_path)
    lab_buf = _read_bytes(labels_path)
    n, rows, cols = _idx_header(img_buf, images_path, IDX_IMAGES_MAGIC, 3)
    (m,) = _idx_header(lab_buf, labels_path, IDX_LABELS_MAGIC, 1)
    if n != m:
        raise FormatError(f"{labels_path}: {m} labels at offset 4 but {n} images in {images_path}")
    pixels = np.frombuffer(img_buf, dtype=np.uint8, count=n * rows * cols, offset=16)
    labels = np.frombuffer(lab_buf, dtype=np.uint8, count=m, offset=8).astype(np.int64)
    images = pixels.reshape(n, 1, rows, cols).astype(np.float64) / 255.0
    if class_count is None:
        class_count = int(labels.max()) + 1 if m else 0
    return Dataset([images], labels, max(class_count, 2))


def write_idx(images: np.ndarray, labels, images_path, labels_path):
    """Write ``(n, rows, cols)`` uint8 images and their labels as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


# -- time-series CSV ----------------------------------------------------------
#
# First line: "dims=<d>,length=<n>,classes=<c>". Every following line is one
# sample: the label, then dims*length values with dimension 0's series first.


def load_timeseries_csv(path) -> MtsDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r and any(c.strip() for c in r)]
    if not rows:
        raise FormatError(f"{path}: empty file")
    try:
        header = dict(cell.strip().split("=", 1) for cell in rows[0])
        dims, length, classes = (int(header[k]) for k in ("dims", "length", "classes"))
    except (ValueError, KeyError):
        raise FormatError(f"{path}: row 1: header must be 'dims=D,length=N,classes=C'") from None
    if min(dims, length) < 1 or classes < 2:
        raise FormatError(f"{path}: row 1: dims and length must be positive, classes >= 2")
    width = dims * length
    series, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width + 1:
            raise FormatError(f"{path}: row {lineno}: expected {width + 1} fields, got {len(row)}")
        try:
            label = int(row[0])
            values = [float(v) for v in row[1:]]
        except ValueError:
            raise FormatError(f"{path}: row {lineno}: non-numeric field") from None
        if not 0 <= label < classes:
            raise FormatError(f"{path}: row {lineno}: label {label} outside [0, {classes})")
        labels.append(label)
        series.append(values)
    if not series:
        raise FormatError(f"{path}: no samples after the header")
    return MtsDataset(np.array(series).reshape(-1, dims, length), np.array(labels), classes)


def write_timeseries_csv(ds: MtsDataset, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"dims={ds.dims}", f"length={ds.length}", f"classes={ds.class_count}"])
        for label, s in zip(ds.labels, ds.series):
            w.writerow([int(label)] + [repr(float(v)) for v in s.ravel()])


# -- recurrence plots ------------------------------------------------------------


def recurrence_plot(x, eps: float) -> np.ndarray:
    """``R[i, j] = 1`` iff ``|x_i - x_j| <= eps``, as a uint8 matrix."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 1:
        raise InvalidArgumentError("recurrence plot needs at least one sample")
    if eps < 0:
        raise InvalidArgumentError(f"eps must be non-negative, got {eps}")
    return (np.abs(x[:, None] - x[None, :]) <= eps).astype(np.uint8)


def quantile_eps(x, q: float) -> float:
    """The q-quantile of the pairwise distances of a scalar series."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 2:
        return 0.0
    i, j = np.triu_indices(x.size, k=1)
    return float(np.quantile(np.abs(x[i] - x[j]), q))


def _standardize(x):
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)


def downsample_binary(img: np.ndarray, side: int) -> np.ndarray:
    """Mean-pool a square binary image onto ``side`` x ``side`` bins, threshold at 0.5."""
    n = img.shape[0]
    if n <= side:
        return img
    edges = np.linspace(0, n, side + 1).astype(int)[:-1]
    pooled = np.add.reduceat(np.add.reduceat(img.astype(np.float64), edges, axis=0), edges, axis=1)
    sizes = np.diff(np.append(edges, n))
    pooled /= sizes[:, None] * sizes[None, :]
    return (pooled >= 0.5).astype(np.uint8)


def mts_to_images(ds: MtsDataset, eps: float | None = None, quantile: float = 0.1,
                  standardize: bool = True, max_side: int | None = None) -> list[Dataset]:
    """One recurrence-plot image dataset per series dimension.

    With ``eps`` unset, each series gets its own threshold: the ``quantile``
    of its pairwise distances. Images are ``(n, 1, L, L)`` uint8, or at most
    ``max_side`` wide when downsampling is requested.
    """
    side = ds.length if max_side is None else min(ds.length, max_side)
    out = []
    for d in range(ds.dims):
        imgs = np.empty((len(ds), 1, side, side), dtype=np.uint8)
        for k in range(len(ds)):
            x = ds.series[k, d]
            if standardize:
                x = _standardize(x)
            e = quantile_eps(x, quantile) if eps is None else eps
            rp = recurrence_plot(x, e)
            imgs[k, 0] = rp if side == ds.length else downsample_binary(rp, side)
        out.append(Dataset([imgs], ds.labels.copy(), ds.class_count))
    return out


def as_channels(per_dim: list[Dataset]) -> Dataset:
    """Stack per-dimension images as channels of a single input."""
    x = np.concatenate([d.inputs[0] for d in per_dim], axis=1)
    return Dataset([x], per_dim[0].labels, per_dim[0].class_count)


def as_multi_input(per_dim: list[Dataset]) -> Dataset:
    """Keep each dimension as its own model input."""
    return Dataset([d.inputs[0] for d in per_dim], per_dim[0].labels, per_dim[0].class_count)


def build_mts_model(dims: int, image_side: int, classes: int, shared_input: bool,
                    def_neu: int, rng, conv_channels: int = DEFAULT_CONV_CHANNELS) -> LayerGraph:
    """Time-series starting model: conv input(s) -> one hidden dense layer -> output.

    ``shared_input`` feeds every dimension to one convolutional input as
    channels; otherwise each dimension gets its own single-channel input, and
    all of them meet at the hidden layer so each branch can grow on its own.
    """
    if dims < 1:
        raise InvalidArgumentError(f"dims must be positive, got {dims}")
    g = LayerGraph(def_neu, conv_channels)
    if shared_input:
        inputs = [g.add_input((dims, image_side, image_side), rng)]
    else:
        inputs = [g.add_input((1, image_side, image_side), rng) for _ in range(dims)]
    hidden = g.add_dense(def_neu, rng)
    out = g.add_output(classes, rng)
    for i in inputs:
        g.connect(i, hidden)
    g.connect(hidden, out)
    return g
