"""Deterministic generators for the long-memory benchmarks.

Three synthetic tasks (copy-first-input, denoising, sparse copy) plus the
sequential-MNIST pipeline over standard IDX files. Every generator is a pure
function of its parameters and the Rng handed in, so a seed pins the whole
sample stream. Networks see a time-series and must predict a target after
the final step; for all three regression tasks the predict-zero baseline
scores an MSE of 1, which is the random-guessing threshold.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .numerics import ContractError, Rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxError(ValueError):
    """Base class for IDX container problems."""


class IdxHeaderError(IdxError):
    """Bad magic number or impossible header fields."""


class IdxTruncatedError(IdxError):
    """File ends before the payload promised by the header."""


class IdxCountMismatchError(IdxError):
    """Image and label files disagree on the number of items."""


@dataclass
class SampleSpec:
    """Benchmark selector: which task, horizon T, and its knobs."""

    benchmark: str            # copy_first | denoising | sparse_copy | seq_mnist
    T: int = 0
    N: int = 0                # denoising forgetting period
    n_black: int = 0          # trailing black pixels for seq_mnist


def gen_copy_first(T: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """One-dimensional i.i.d. N(0,1) stream; the target is the first value."""
    if T < 1:
        raise ContractError(f"copy_first needs T >= 1, got {T}")
    inputs = rng.normal((T, 1))
    return inputs, inputs[0].copy()


def denoising_marker_slots(T: int, N: int) -> int:
    """Number of timesteps eligible to carry a relevant input.

    Markers must land strictly before the forgetting window of length N and
    must not collide with the end-of-sequence flag on the last step.
    """
    return min(T - N, T - 1)


def gen_denoising(T: int, N: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Two-channel stream: a {-1, 0, 1} marker code plus N(0,1) data.

    Channel 0 is -1 except at five distinct marked steps (0) and the final
    step (1); channel 1 is the data stream. The target is the five data
    values at the marked steps, ordered by time of appearance. N forces all
    marked steps into the first T - N steps.
    """
    slots = denoising_marker_slots(T, N)
    if N < 0 or slots < 5:
        raise ContractError(f"denoising needs 5 eligible marker slots, "
                            f"got T={T}, N={N}")
    inputs = np.empty((T, 2))
    inputs[:, 0] = -1.0
    inputs[:, 1] = rng.normal(T)
    marked = np.sort(rng.permutation(slots)[:5])
    inputs[marked, 0] = 0.0
    inputs[T - 1, 0] = 1.0
    return inputs, inputs[marked, 1].copy()


def gen_sparse_copy(T: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """All-zero stream except one N(0,1) value at a uniform step; copy it."""
    if T < 1:
        raise ContractError(f"sparse_copy needs T >= 1, got {T}")
    inputs = np.zeros((T, 1))
    t1 = int(rng.integers(0, T))
    value = float(rng.normal())
    inputs[t1, 0] = value
    return inputs, np.array([value])


# ---------------------------------------------------------------------------
# IDX container (standard MNIST distribution format, big-endian)

def _read_exact(f, n: int, path, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise IdxTruncatedError(f"{path}: truncated while reading {what} "
                                f"({len(data)}/{n} bytes)")
    return data


def load_idx_images(path) -> np.ndarray:
    """Read an IDX image file into a (count, rows, cols) uint8 array."""
    with open(path, "rb") as f:
        header = _read_exact(f, 16, path, "image header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGE_MAGIC:
            raise IdxHeaderError(f"{path}: bad image magic 0x{magic:08x}, "
                                 f"expected 0x{IDX_IMAGE_MAGIC:08x}")
        if count < 0 or rows < 1 or cols < 1:
            raise IdxHeaderError(f"{path}: impossible dimensions in header")
        payload = _read_exact(f, count * rows * cols, path, "pixel data")
        if f.read(1):
            raise IdxHeaderError(f"{path}: trailing bytes after pixel data")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    """Read an IDX label file into a (count,) uint8 array."""
    with open(path, "rb") as f:
        header = _read_exact(f, 8, path, "label header")
        magic, count = struct.unpack(">II", header)
        if magic != IDX_LABEL_MAGIC:
            raise IdxHeaderError(f"{path}: bad label magic 0x{magic:08x}, "
                                 f"expected 0x{IDX_LABEL_MAGIC:08x}")
        payload = _read_exact(f, count, path, "label data")
        if f.read(1):
            raise IdxHeaderError(f"{path}: trailing bytes after label data")
    return np.frombuffer(payload, dtype=np.uint8)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write a (count, rows, cols) uint8 array as an IDX image file."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ContractError("write_idx_images expects (count, rows, cols)")
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    """Write a (count,) uint8 array as an IDX label file."""
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if labels.ndim != 1:
        raise ContractError("write_idx_labels expects a flat label array")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


@dataclass
class MnistData:
    images: np.ndarray   # (n, rows, cols) uint8
    labels: np.ndarray   # (n,) uint8


def load_mnist(image_path, label_path) -> MnistData:
    """Load a paired IDX image/label set, checking the counts agree."""
    images = load_idx_images(image_path)
    labels = load_idx_labels(label_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{image_path} has {images.shape[0]} images but "
            f"{label_path} has {labels.shape[0]} labels")
    return MnistData(images=images, labels=labels)


def pad_image_to_32(image: np.ndarray) -> np.ndarray:
    """Center-pad a 28x28 image to 32x32 with black pixels."""
    out = np.zeros((32, 32), dtype=image.dtype)
    r0 = (32 - image.shape[0]) // 2
    c0 = (32 - image.shape[1]) // 2
    out[r0:r0 + image.shape[0], c0:c0 + image.shape[1]] = image
    return out


def downsample_image(image: np.ndarray, size: int) -> np.ndarray:
    """Area-average an image down to size x size (handles ragged bins)."""
    rows = np.floor(np.arange(size + 1) * image.shape[0] / size).astype(int)
    cols = np.floor(np.arange(size + 1) * image.shape[1] / size).astype(int)
    out = np.empty((size, size))
    for i in range(size):
        for j in range(size):
            out[i, j] = image[rows[i]:rows[i + 1], cols[j]:cols[j + 1]].mean()
    return out


def seq_mnist_sample(image: np.ndarray, n_black: int = 0, pad32: bool = False,
                     downsample: int | None = None) -> np.ndarray:
    """Turn one image into a pixel-by-pixel time-series.

    Pixels are scaled to [0, 1], flattened row-major, and followed by
    n_black zero steps (a forgetting period). `pad32` first pads to 32x32;
    `downsample` area-averages to a smaller square for desk-scale runs.
    """
    if n_black < 0:
        raise ContractError("n_black must be >= 0")
    img = image.astype(np.float64) / 255.0
    if pad32:
        img = pad_image_to_32(img)
    if downsample is not None:
        img = downsample_image(img, downsample)
    seq = np.concatenate([img.ravel(), np.zeros(n_black)])
    return seq[:, None]


def synthetic_digit_images(n: int, rng: Rng, size: int = 28) -> MnistData:
    """Procedural stand-in for handwritten digits (no download needed).

    Each class is a Gaussian blob at a class-specific position with a
    class-dependent width, plus uniform pixel noise; classes are easily
    separable, so a pipeline that learns at all makes quick progress.
    """
    labels = rng.integers(0, 10, n).astype(np.uint8)
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    images = np.empty((n, size, size), dtype=np.uint8)
    for k in range(n):
        cls = labels[k]
        angle = 2.0 * np.pi * cls / 10.0
        ci = size / 2.0 + (size / 3.5) * np.sin(angle)
        cj = size / 2.0 + (size / 3.5) * np.cos(angle)
        width = size / 8.0 + cls * size / 40.0
        blob = 255.0 * np.exp(-(((ii - ci) ** 2 + (jj - cj) ** 2) / (2.0 * width ** 2)))
        noise = rng.uniform(0.0, 40.0, (size, size))
        images[k] = np.clip(blob + noise, 0.0, 255.0).astype(np.uint8)
    return MnistData(images=images, labels=labels)


# ---------------------------------------------------------------------------
# Benchmark objects consumed by training.train

class CopyFirst:
    """Predict the first element of an i.i.d. noise stream."""

    metric = "mse"
    loss = "mse"
    input_dim = 1
    output_dim = 1

    def __init__(self, T: int):
        if T < 1:
            raise ContractError("copy_first needs T >= 1")
        self.T = T

    def sample(self, rng: Rng):
        return gen_copy_first(self.T, rng)

    def sample_batch(self, n: int, rng: Rng):
        xs, ys = zip(*(self.sample(rng) for _ in range(n)))
        return np.stack(xs), np.stack(ys)


class Denoising:
    """Reproduce five marked values after a forgetting period of length N."""

    metric = "mse"
    loss = "mse"
    input_dim = 2
    output_dim = 5

    def __init__(self, T: int, N: int = 0):
        if N < 0 or denoising_marker_slots(T, N) < 5:
            raise ContractError(f"infeasible denoising spec T={T}, N={N}")
        self.T = T
        self.N = N

    def sample(self, rng: Rng):
        return gen_denoising(self.T, self.N, rng)

    def sample_batch(self, n: int, rng: Rng):
        xs, ys = zip(*(self.sample(rng) for _ in range(n)))
        return np.stack(xs), np.stack(ys)


class SparseCopy:
    """Copy the single nonzero value hidden in a zero stream."""

    metric = "mse"
    loss = "mse"
    input_dim = 1
    output_dim = 1

    def __init__(self, T: int):
        if T < 1:
            raise ContractError("sparse_copy needs T >= 1")
        self.T = T

    def sample(self, rng: Rng):
        return gen_sparse_copy(self.T, rng)

    def sample_batch(self, n: int, rng: Rng):
        xs, ys = zip(*(self.sample(rng) for _ in range(n)))
        return np.stack(xs), np.stack(ys)


class SeqMnist:
    """Pixel-by-pixel digit classification with an optional forgetting tail."""

    metric = "accuracy"
    loss = "cross_entropy"
    input_dim = 1
    output_dim = 10

    def __init__(self, data: MnistData, n_black: int = 0, pad32: bool = False,
                 downsample: int | None = None):
        self.data = data
        self.n_black = n_black
        self.pad32 = pad32
        self.downsample = downsample
        side = 32 if pad32 else data.images.shape[1]
        if downsample is not None:
            side = downsample
        self.T = side * side + n_black

    def _sequence(self, idx: int) -> np.ndarray:
        return seq_mnist_sample(self.data.images[idx], self.n_black,
                                self.pad32, self.downsample)

    def sample_batch(self, n: int, rng: Rng):
        idx = rng.integers(0, self.data.images.shape[0], n)
        xs = np.stack([self._sequence(int(i)) for i in idx])
        return xs, self.data.labels[idx].astype(np.int64)


def make_benchmark(spec: SampleSpec, mnist: MnistData | None = None,
                   pad32: bool = False, downsample: int | None = None):
    """Instantiate the benchmark object a SampleSpec describes."""
    if spec.benchmark == "copy_first":
        return CopyFirst(spec.T)
    if spec.benchmark == "denoising":
        return Denoising(spec.T, spec.N)
    if spec.benchmark == "sparse_copy":
        return SparseCopy(spec.T)
    if spec.benchmark == "seq_mnist":
        if mnist is None:
            raise ContractError("seq_mnist needs a loaded MNIST dataset")
        return SeqMnist(mnist, n_black=spec.n_black, pad32=pad32,
                        downsample=downsample)
    raise ContractError(f"unknown benchmark {spec.benchmark!r}")


def baseline_mse(benchmark, n: int, rng: Rng) -> float:
    """MSE of the predict-zero baseline over n fresh samples."""
    _, targets = benchmark.sample_batch(n, rng)
    return float((targets * targets).sum(axis=1).mean() / targets.shape[1])
