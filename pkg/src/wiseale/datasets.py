"""Synthetic sine waves and the MNIST IDX reader.

Sine cache layout (``*.sined``)::

    8 bytes  b"SINED001"
    8 bytes  rows, little-endian uint64
    8 bytes  cols, little-endian uint64
    rest     rows * cols little-endian float64, row-major

with a sidecar CSV ``index,amplitude,frequency,phase`` holding the per-row
generator parameters.
"""

import csv
import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

SINE_LENGTH = 256
SINE_NOISE_STD = 0.05
SINE_MAGIC = b"SINED001"
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class FormatError(ValueError):
    pass


@dataclass
class SineData:
    x: np.ndarray
    amplitude: np.ndarray
    frequency: np.ndarray
    phase: np.ndarray

    @property
    def clean(self):
        """The noiseless waves rebuilt from the stored generator parameters."""
        return clean_waves(self.amplitude, self.frequency, self.phase, self.x.shape[1])


def clean_waves(amplitude, frequency, phase, length=SINE_LENGTH):
    t = np.arange(length) / length
    return amplitude[:, None] * np.sin(2.0 * np.pi * frequency[:, None] * t[None, :] + phase[:, None])


def generate_sine(count, seed, noise_std=SINE_NOISE_STD, overrides=None):
    """``count`` noisy sine waves of 256 samples over one second.

    A ~ U(0, 2), f ~ U(0, 20) Hz, phase ~ U(0, 2 pi), additive N(0, noise_std^2).
    ``overrides`` may replace ``amplitude``/``frequency``/``phase`` after the
    draws are made, so the noise stream is unaffected.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    params = {
        "amplitude": rng.uniform(0.0, 2.0, count),
        "frequency": rng.uniform(0.0, 20.0, count),
        "phase": rng.uniform(0.0, 2.0 * np.pi, count),
    }
    noise = rng.standard_normal((count, SINE_LENGTH))
    for key, val in (overrides or {}).items():
        if key not in params:
            raise KeyError(f"unknown sine parameter {key!r}")
        params[key] = np.broadcast_to(np.asarray(val, dtype=np.float64), (count,)).copy()
    x = clean_waves(params["amplitude"], params["frequency"], params["phase"]) + noise_std * noise
    return SineData(x, params["amplitude"], params["frequency"], params["phase"])


def save_sine(data, path):
    rows, cols = data.x.shape
    with open(path, "wb") as f:
        f.write(SINE_MAGIC + struct.pack("<QQ", rows, cols))
        f.write(np.ascontiguousarray(data.x, dtype="<f8").tobytes())
    with open(sine_meta_path(path), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "amplitude", "frequency", "phase"])
        for i in range(rows):
            w.writerow([i, repr(float(data.amplitude[i])), repr(float(data.frequency[i])), repr(float(data.phase[i]))])


def sine_meta_path(path):
    return os.path.splitext(path)[0] + "_meta.csv"


def load_sine(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != SINE_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}")
    if len(blob) < 24:
        raise FormatError(f"{path}: truncated header at byte {len(blob)}")
    rows, cols = struct.unpack("<QQ", blob[8:24])
    need = 24 + 8 * rows * cols
    if len(blob) < need:
        raise FormatError(f"{path}: truncated at byte {len(blob)}, expected {need}")
    x = np.frombuffer(blob[24:need], dtype="<f8").astype(np.float64).reshape(rows, cols)
    meta = {"amplitude": [], "frequency": [], "phase": []}
    with open(sine_meta_path(path), newline="") as f:
        for row in csv.DictReader(f):
            for key in meta:
                meta[key].append(float(row[key]))
    return SineData(x, *(np.array(meta[k]) for k in ("amplitude", "frequency", "phase")))


# ---------------------------------------------------------------------------
# IDX


def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def _header(blob, path, magic, n_dims):
    size = 4 * (1 + n_dims)
    if len(blob) < size:
        raise FormatError(f"{path}: truncated header at byte offset {len(blob)}")
    fields = struct.unpack(f">{1 + n_dims}I", blob[:size])
    if fields[0] != magic:
        raise FormatError(f"{path}: bad magic 0x{fields[0]:08x}, expected 0x{magic:08x}")
    return fields[1:], size


def read_idx_images(path):
    """IDX image file -> ``(count, rows * cols)`` uint8 array."""
    blob = _read_bytes(path)
    (count, rows, cols), off = _header(blob, path, IDX_IMAGES_MAGIC, 3)
    need = off + count * rows * cols
    if len(blob) < need:
        raise FormatError(f"{path}: truncated at byte offset {len(blob)}, expected {need} bytes")
    return np.frombuffer(blob, dtype=np.uint8, count=count * rows * cols, offset=off).reshape(count, rows * cols)


def read_idx_labels(path):
    blob = _read_bytes(path)
    (count,), off = _header(blob, path, IDX_LABELS_MAGIC, 1)
    if len(blob) < off + count:
        raise FormatError(f"{path}: truncated at byte offset {len(blob)}, expected {off + count} bytes")
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=off).astype(np.int64)


def write_idx_images(path, images, rows=28, cols=28):
    images = np.asarray(images, dtype=np.uint8).reshape(-1, rows * cols)
    with open(path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, images.shape[0], rows, cols) + images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


def _find(directory, stem):
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        p = os.path.join(directory, name)
        if os.path.exists(p):
            return p
    raise FileNotFoundError(f"no {stem}[.gz] in {directory}")


def load_mnist_idx(path, split, binarize_threshold=None):
    """Images scaled to [0, 1] as ``(count, 784)`` plus labels.

    ``path`` is the directory holding the standard IDX files. Pixels >=
    ``binarize_threshold`` become 1 and the rest 0 when a threshold is given.
    """
    if split not in MNIST_FILES:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    img_name, lbl_name = MNIST_FILES[split]
    images = read_idx_images(_find(path, img_name)).astype(np.float64) / 255.0
    labels = read_idx_labels(_find(path, lbl_name))
    if labels.shape[0] != images.shape[0]:
        raise FormatError(f"{split}: {images.shape[0]} images but {labels.shape[0]} labels")
    if binarize_threshold is not None:
        if not 0.0 < binarize_threshold < 1.0:
            raise ValueError("binarize_threshold must lie in (0, 1)")
        images = (images >= binarize_threshold).astype(np.float64)
    return images, labels


# ---------------------------------------------------------------------------
# dataset specs used by the trainer


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "sine"
    count: int = 20000
    seed: int = 0
    eval_count: int = 2000
    path: str = None
    binarize_threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("sine", "mnist"):
            raise ValueError(f"unknown dataset {self.kind!r}")
        if self.count < 1 or self.eval_count < 1:
            raise ValueError("count and eval_count must be >= 1")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError("binarize_threshold must lie in (0, 1)")

    @property
    def d_x(self):
        return SINE_LENGTH if self.kind == "sine" else 784


@dataclass
class Dataset:
    """Train/eval matrices plus bookkeeping; index sets identify source rows."""

    kind: str
    train_x: np.ndarray
    eval_x: np.ndarray
    train_index: np.ndarray
    eval_index: np.ndarray
    train_target: np.ndarray = None
    eval_target: np.ndarray = None
    train_labels: np.ndarray = None
    eval_labels: np.ndarray = None
    train_display: np.ndarray = None
    eval_display: np.ndarray = None

    @property
    def d_x(self):
        return self.train_x.shape[1]


def load_dataset(spec):
    if spec.kind == "sine":
        data = generate_sine(spec.count + spec.eval_count, spec.seed)
        clean = data.clean
        idx = np.arange(spec.count + spec.eval_count)
        tr, ev = idx[:spec.count], idx[spec.count:]
        return Dataset("sine", data.x[tr], data.x[ev], tr, ev, clean[tr], clean[ev],
                       train_display=data.x[tr], eval_display=data.x[ev])
    if spec.path is None:
        raise FileNotFoundError("MNIST needs the directory holding the IDX files")
    gray_tr, lab_tr = load_mnist_idx(spec.path, "train")
    gray_ev, lab_ev = load_mnist_idx(spec.path, "test")
    if spec.count > gray_tr.shape[0] or spec.eval_count > gray_ev.shape[0]:
        raise ValueError(f"asked for {spec.count}/{spec.eval_count} images, files hold "
                         f"{gray_tr.shape[0]}/{gray_ev.shape[0]}")
    gray_tr, lab_tr = gray_tr[:spec.count], lab_tr[:spec.count]
    gray_ev, lab_ev = gray_ev[:spec.eval_count], lab_ev[:spec.eval_count]
    t = spec.binarize_threshold
    bin_tr = (gray_tr >= t).astype(np.float64)
    bin_ev = (gray_ev >= t).astype(np.float64)
    # train rows come from the train file, eval rows from the test file
    tr_index = np.arange(spec.count)
    ev_index = -1 - np.arange(spec.eval_count)
    return Dataset("mnist", bin_tr, bin_ev, tr_index, ev_index, bin_tr, bin_ev, lab_tr, lab_ev, gray_tr, gray_ev)
