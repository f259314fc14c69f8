"""Synthetic shape datasets, deterministic splits, and image-folder ingestion.

Both synthetic sets hold 1000 grayscale 224x224 images split evenly into
two classes, background 0.0 and one filled foreground shape at 1.0 placed
uniformly at random without touching the border.  The squares set opposes
5x5 against 9x9 squares; the rectangles set opposes 7-wide-by-3-tall
against 3-wide-by-7-tall rectangles (the first number is always the
width).  Images are stored as float32 and promoted to float64 by the
training loop.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import netpbm

IMAGE_SIZE = 224
DATASET_SIZE = 1000
SYNTHETIC_KINDS = ("squares", "rectangles")

# (width, height) of the foreground shape per class
_SHAPES = {
    "squares": ((5, 5), (9, 9)),
    "rectangles": ((7, 3), (3, 7)),
}


@dataclass
class Sample:
    image: np.ndarray  # (1, h, w) float32 in [0, 1]
    label: int
    id: int


@dataclass
class Split:
    train: list
    validation: list
    test: list

    def named(self):
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def of(self, name):
        try:
            return self.named()[name]
        except KeyError:
            raise ValueError(f"unknown split {name!r}; expected train/validation/test") from None


def _generate(kind, rng):
    shapes = _SHAPES[kind]
    per_class = DATASET_SIZE // 2
    samples = []
    for i in range(DATASET_SIZE):
        label = 0 if i < per_class else 1
        w, h = shapes[label]
        # corner range keeps one clear background row/column on every side
        top = int(rng.integers(1, IMAGE_SIZE - h))
        left = int(rng.integers(1, IMAGE_SIZE - w))
        img = np.zeros((1, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
        img[0, top : top + h, left : left + w] = 1.0
        samples.append(Sample(image=img, label=label, id=i))
    return samples


def gen_squares(seed):
    """1000 images of one filled square each: class 0 is 5x5, class 1 is 9x9."""
    return _generate("squares", np.random.default_rng(seed))


def gen_rectangles(seed):
    """1000 images of one filled rectangle each: class 0 is 7x3, class 1 is 3x7."""
    return _generate("rectangles", np.random.default_rng(seed))


def generate(kind, seed):
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unknown synthetic dataset {kind!r}; expected one of {SYNTHETIC_KINDS}")
    return _generate(kind, np.random.default_rng(seed))


def split_60_20_20(samples, seed):
    """Stratified 60/20/20 split of sample ids, shuffled by the given seed.

    Each class is shuffled and partitioned separately, so per-split class
    counts are exact and the three id lists are disjoint and covering.
    """
    rng = np.random.default_rng(seed)
    by_class = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s.id)
    parts = ([], [], [])
    for label in sorted(by_class):
        ids = np.array(by_class[label])
        ids = ids[rng.permutation(len(ids))]
        n = len(ids)
        n_train = round(n * 0.6)
        n_val = round(n * 0.2)
        parts[0].extend(int(i) for i in ids[:n_train])
        parts[1].extend(int(i) for i in ids[n_train : n_train + n_val])
        parts[2].extend(int(i) for i in ids[n_train + n_val :])
    return Split(train=sorted(parts[0]), validation=sorted(parts[1]), test=sorted(parts[2]))


def take(samples, ids):
    """Samples selected by id, in the order the ids are given."""
    by_id = {s.id: s for s in samples}
    return [by_id[i] for i in ids]


def save_dataset(samples, split, out_dir):
    """Write one PGM per sample under class<label>/ plus a manifest.csv.

    The manifest rows (id, file, label, split) are ordered by id, so two
    runs over the same samples produce byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    split_of = {}
    for name, ids in split.named().items():
        for i in ids:
            split_of[i] = name
    rows = []
    for s in sorted(samples, key=lambda s: s.id):
        rel = f"class{s.label}/img{s.id:04d}.pgm"
        path = out / rel
        path.parent.mkdir(exist_ok=True)
        netpbm.write_pgm(path, s.image[0])
        rows.append((s.id, rel, s.label, split_of[s.id]))
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "file", "label", "split"])
        writer.writerows(rows)
    return out / "manifest.csv"


def load_dataset(path):
    """Load a dataset directory written by save_dataset, split included."""
    root = Path(path)
    manifest = root / "manifest.csv"
    if not manifest.is_file():
        raise FileNotFoundError(f"no manifest.csv under {root}")
    samples = []
    parts = {"train": [], "validation": [], "test": []}
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            sid = int(row["id"])
            img = netpbm.read_netpbm(root / row["file"])
            samples.append(Sample(image=img, label=int(row["label"]), id=sid))
            parts[row["split"]].append(sid)
    return samples, Split(**parts)


def bilinear_resize(image, out_h, out_w):
    """Bilinear resample of a (c, h, w) image with pixel-center alignment."""
    image = np.asarray(image)
    c, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()
    src_i = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    src_j = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    i0 = np.floor(src_i).astype(int)
    j0 = np.floor(src_j).astype(int)
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fi = (src_i - i0)[None, :, None]
    fj = (src_j - j0)[None, None, :]
    top = image[:, i0][:, :, j0] * (1 - fj) + image[:, i0][:, :, j1] * fj
    bottom = image[:, i1][:, :, j0] * (1 - fj) + image[:, i1][:, :, j1] * fj
    return (top * (1 - fi) + bottom * fi).astype(image.dtype)


def load_image_folder(path, target_size=IMAGE_SIZE):
    """Ingest a class-per-subdirectory tree of PGM/PPM files.

    Labels follow the lexicographic order of the subdirectory names.
    Every image is bilinearly resized to target_size x target_size;
    intensities are already scaled to [0, 1] by the decoder.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ValueError(f"{root} contains no class subdirectories")
    samples = []
    next_id = 0
    for label, cdir in enumerate(class_dirs):
        for f in sorted(cdir.iterdir()):
            if f.suffix.lower() not in (".pgm", ".ppm", ".pnm"):
                continue
            img = netpbm.read_netpbm(f)
            img = bilinear_resize(img, target_size, target_size)
            samples.append(Sample(image=img.astype(np.float32), label=label, id=next_id))
            next_id += 1
    if not samples:
        raise ValueError(f"no PGM/PPM images found under {root}")
    return samples
