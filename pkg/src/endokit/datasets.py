"""Dataset generators and loaders for the bundled experiments.

Everything is deterministic given a seed: generators thread a single
PCG64 generator, and the digit loader samples per class with one draw
per class in class order.
"""

import struct

import numpy as np

from .errors import BadMagic

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


def polynomial_surface(x, y):
    """The benchmark surface p(x, y) = (2x - 1)^2 + 2y + xy - 3 on [0,1]^2."""
    return (2.0 * x - 1.0) ** 2 + 2.0 * y + x * y - 3.0


def gen_polynomial_grid(test_count=100, seed=0):
    """Uniform 6x6 training grid on [0,1]^2 plus random test points.

    Labels are the polynomial surface; test inputs are uniform on the
    square.  Returns (x_train (36, 2), y_train (36, 1), x_test, y_test).
    """
    side = np.linspace(0.0, 1.0, 6)
    xs, ys = np.meshgrid(side, side, indexing="ij")
    x_train = np.stack([xs.ravel(), ys.ravel()], axis=1)
    y_train = polynomial_surface(x_train[:, 0], x_train[:, 1])[:, None]
    rng = np.random.default_rng(seed)
    x_test = rng.uniform(0.0, 1.0, size=(test_count, 2))
    y_test = polynomial_surface(x_test[:, 0], x_test[:, 1])[:, None]
    return x_train, y_train, x_test, y_test


def gen_noisy_sine(count=100, noise=0.1, seed=0, interval=(0.0, 2.0 * np.pi)):
    """count points with x uniform on the interval, y = sin(x) + N(0, noise^2).

    Returns (x (count, 1), y (count, 1)).
    """
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    lo, hi = interval
    rng = np.random.default_rng(seed)
    x = rng.uniform(lo, hi, size=(count, 1))
    y = np.sin(x) + rng.normal(0.0, noise, size=(count, 1)) if noise > 0 else np.sin(x)
    return x, y


# ---------------------------------------------------------------------------
# digits
# ---------------------------------------------------------------------------

def _read_exact(fh, count):
    data = fh.read(count)
    if len(data) != count:
        raise BadMagic(f"truncated IDX file: wanted {count} bytes, got {len(data)}")
    return data


def read_idx_images(path):
    """(count, rows * cols) float array in [0, 1] from a big-endian IDX file."""
    with open(path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(fh, 16))
        if magic != IDX_IMAGE_MAGIC:
            raise BadMagic(f"image magic {magic}, expected {IDX_IMAGE_MAGIC}")
        raw = np.frombuffer(_read_exact(fh, count * rows * cols), dtype=np.uint8)
    return raw.reshape(count, rows * cols).astype(np.float64) / 255.0


def read_idx_labels(path):
    """(count,) int label array from a big-endian IDX file."""
    with open(path, "rb") as fh:
        magic, count = struct.unpack(">ii", _read_exact(fh, 8))
        if magic != IDX_LABEL_MAGIC:
            raise BadMagic(f"label magic {magic}, expected {IDX_LABEL_MAGIC}")
        raw = np.frombuffer(_read_exact(fh, count), dtype=np.uint8)
    return raw.astype(np.int64)


def write_idx_images(path, images):
    """Write uint8 images (count, rows, cols) in IDX format, big-endian."""
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, count, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    """Write uint8 labels (count,) in IDX format, big-endian."""
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABEL_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def load_digits(path=None, per_class=None, seed=0):
    """Per-class train/test split of a digit set, images scaled to [0, 1].

    path=None uses the builtin 8x8 set (1797 samples, 10 classes); a
    (images, labels) path pair reads big-endian IDX files instead.
    per_class picks that many training samples from each class (one
    seeded draw per class, in class order); the rest become the test
    split.  per_class=None keeps everything in the test split, like 0.

    Returns (x_train, y_train, x_test, y_test).
    """
    if path is None:
        from sklearn.datasets import load_digits as _sk_digits
        bunch = _sk_digits()
        x = bunch.data.astype(np.float64) / 16.0
        y = bunch.target.astype(np.int64)
    else:
        images_path, labels_path = path
        x = read_idx_images(images_path)
        y = read_idx_labels(labels_path)

    if not per_class:
        return x[:0], y[:0], x, y

    rng = np.random.default_rng(seed)
    train_idx = []
    for cls in np.unique(y):
        pool = np.flatnonzero(y == cls)
        if len(pool) < per_class:
            raise ValueError(f"class {cls} has {len(pool)} samples, "
                             f"need {per_class}")
        train_idx.extend(sorted(rng.choice(pool, size=per_class, replace=False)))
    train_idx = np.array(train_idx)
    mask = np.zeros(len(y), dtype=bool)
    mask[train_idx] = True
    return x[train_idx], y[train_idx], x[~mask], y[~mask]
