"""Synthetic normal/lesion images and on-disk dataset handling.

Normal images are sums of a few Gaussian blobs rescaled to [0, 1] plus weak
pixel noise. Abnormal images take a background from the same generator and
stamp a disk of additive contrast on it. All draws come from named streams
keyed by ``(seed, split, index)``.

Dataset layout on disk::

    root/train/normal/*.pgm
    root/test/normal/*.pgm
    root/test/abnormal/*.pgm
    root/labels.csv          # optional, id,split,label; id is the path stem

Images are stored as 8-bit PGM, so a round trip through disk quantizes pixels
to multiples of 1/255.
"""
from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ProtocolViolation
from .numerics import Tensor, bilinear_resize
from .pgm import quantize, read_pgm, write_pgm
from .rng import digest64, stream


@dataclass
class SyntheticSpec:
    image_size: tuple = (64, 64)
    n_train_normal: int = 200
    n_test_normal: int = 50
    n_test_abnormal: int = 50
    blob_count: tuple = (3, 6)
    lesion_radius: tuple = (4.0, 8.0)
    lesion_contrast: float = 0.5
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.blob_count = tuple(int(v) for v in self.blob_count)
        self.lesion_radius = tuple(float(v) for v in self.lesion_radius)
        self.validate()

    def validate(self):
        H, W = self.image_size
        kmin, kmax = self.blob_count
        rmin, rmax = self.lesion_radius
        if H < 8 or W < 8:
            raise ConfigError("data.image_size must be at least 8x8")
        if not 1 <= kmin <= kmax:
            raise ConfigError("data.blob_count must satisfy 1 <= min <= max")
        if not 0 < rmin <= rmax or 2 * (rmax + 1) >= min(H, W):
            raise ConfigError("data.lesion_radius must be positive and fit inside the image")
        if not 0 < self.lesion_contrast <= 1:
            raise ConfigError("data.lesion_contrast must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("data.noise_sigma must be non-negative")
        if min(self.n_train_normal, self.n_test_normal, self.n_test_abnormal) < 0:
            raise ConfigError("data sample counts must be non-negative")

    def to_dict(self):
        d = asdict(self)
        for k in ("image_size", "blob_count", "lesion_radius"):
            d[k] = list(d[k])
        return d


@dataclass
class Sample:
    id: str
    image: np.ndarray          # [1, H, W] in [0, 1]
    label: int
    mask: np.ndarray | None = field(default=None, repr=False)


def background(spec, split, index):
    H, W = spec.image_size
    rng = stream(spec.seed, "background", split, index)
    k = int(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1))
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    img = np.zeros((H, W))
    for _ in range(k):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        s = rng.uniform(min(H, W) / 10, min(H, W) / 3)
        amp = rng.uniform(0.3, 1.0)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    img = (img - img.min()) / max(img.max() - img.min(), 1e-12)
    img += rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def gen_normal(spec, index, split="train"):
    img = background(spec, f"{split}_normal", index)
    return Sample(f"{split}/normal/{index:05d}", img[None], 0)


def lesion(spec, index, bg):
    """Disk mask and signed contrast for abnormal sample ``index``.

    The sign points away from the local background level so the contrast is
    not swallowed by clipping.
    """
    H, W = spec.image_size
    rng = stream(spec.seed, "lesion", index)
    r = rng.uniform(*spec.lesion_radius)
    cy = rng.uniform(r + 1, H - r - 1)
    cx = rng.uniform(r + 1, W - r - 1)
    yy, xx = np.mgrid[0:H, 0:W]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    sign = 1.0 if bg[mask].mean() < 0.5 else -1.0
    return mask, sign * spec.lesion_contrast


def gen_abnormal(spec, index):
    bg = background(spec, "test_abnormal", index)
    mask, delta = lesion(spec, index, bg)
    img = np.clip(bg + delta * mask, 0.0, 1.0)
    return Sample(f"test/abnormal/{index:05d}", img[None], 1, mask)


def generate(spec):
    """All samples of a synthetic dataset as ``(train, test)`` lists."""
    train = [gen_normal(spec, i, "train") for i in range(spec.n_train_normal)]
    test = [gen_normal(spec, i, "test") for i in range(spec.n_test_normal)]
    test += [gen_abnormal(spec, i) for i in range(spec.n_test_abnormal)]
    return train, test


@dataclass
class Manifest:
    train: list
    test: list

    def digest(self):
        chunks = []
        # order-free: a generated manifest and its reloaded copy agree
        for s in sorted(self.train, key=lambda s: s.id) + sorted(self.test, key=lambda s: s.id):
            chunks.append(f"{s.id}|{s.label}|".encode())
            chunks.append(quantize(s.image[0]).tobytes())
        return digest64(*chunks)

    def counts(self):
        return {
            "train": len(self.train),
            "test_normal": sum(s.label == 0 for s in self.test),
            "test_abnormal": sum(s.label == 1 for s in self.test),
        }


def write_dataset(spec, root, comments=()):
    """Generate and write a dataset tree plus ``labels.csv``."""
    root = Path(root)
    train, test = generate(spec)
    rows = []
    for s in train + test:
        path = root / f"{s.id}.pgm"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_pgm(path, s.image[0], comments)
        rows.append((s.id, s.id.split("/")[0], s.label))
    for sub in ("train/normal", "test/normal", "test/abnormal"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    with open(root / "labels.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "split", "label"])
        w.writerows(rows)
    return Manifest(train, test)


def _load(path, sid, label):
    arr, maxval = read_pgm(path)
    return Sample(sid, (arr.astype(np.float64) / maxval)[None], label)


def load_dataset(root):
    """Read a dataset tree into a :class:`Manifest`, enforcing normal-only training."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    labels = root / "labels.csv"
    entries = []
    if labels.exists():
        with open(labels, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != ["id", "split", "label"]:
                raise FormatError(f"{labels}: header must be id,split,label")
            for row in reader:
                entries.append((row["id"], row["split"], int(row["label"])))
    else:
        if (root / "train" / "abnormal").is_dir() and any((root / "train" / "abnormal").glob("*.pgm")):
            raise ProtocolViolation(f"{root}/train/abnormal holds images; training must be normal-only")
        for split, cls, label in (("train", "normal", 0), ("test", "normal", 0), ("test", "abnormal", 1)):
            d = root / split / cls
            if d.is_dir():
                for p in d.glob("*.pgm"):
                    entries.append((f"{split}/{cls}/{p.stem}", split, label))
    bad = [e[0] for e in entries if e[1] == "train" and e[2] != 0]
    if bad:
        raise ProtocolViolation(f"abnormal samples in training split: {bad[:5]}")
    entries.sort(key=lambda e: e[0])
    missing = [e[0] for e in entries if not (root / f"{e[0]}.pgm").is_file()]
    if missing:
        raise FileNotFoundError(f"missing image files: {', '.join(missing[:10])}")
    train = [_load(root / f"{sid}.pgm", sid, lab) for sid, split, lab in entries if split == "train"]
    test = [_load(root / f"{sid}.pgm", sid, lab) for sid, split, lab in entries if split == "test"]
    return Manifest(train, test)


def normalize(image, size):
    """Resize ``[C, h, w]`` (or a batch) to ``size`` and map [0, 1] to [-1, 1]."""
    arr = np.asarray(image)
    batch = arr if arr.ndim == 4 else arr[None]
    t = bilinear_resize(Tensor(batch), *size)
    out = (t.data - 0.5) / 0.5
    return out if arr.ndim == 4 else out[0]


def batch_tensor(samples, size):
    return Tensor(normalize(np.stack([s.image for s in samples]), size))


def safe_name(sample_id):
    return sample_id.replace("/", "__").replace(os.sep, "__")
