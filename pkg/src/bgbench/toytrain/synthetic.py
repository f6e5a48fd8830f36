"""Synthetic images whose backgrounds correlate with their class.

Each class is a coloured glyph (shape + hue). Each class is also tied to one
texture from a procedural bank; with probability ``bg_correlation`` an image
is placed on its class texture (randomly shifted), otherwise on a uniformly
drawn bank texture. Masks are exact by construction.

Classes are split into disjoint train / val / test groups: ``num_classes``
classes for training and validation and another ``num_classes`` for testing.
Two extra texture pools, tagged ``train-pool`` and ``test-pool``, supply
backgrounds for augmentation and for corrupting the test set.
"""

import colorsys
import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bgbench import imaging
from bgbench.corruption import MANIFEST_HEADER, MANIFEST_NAME, BackgroundPool

SHAPES = ("disk", "square", "triangle", "cross", "ring", "diamond")
TEXTURE_KINDS = ("stripes", "checker", "gradient", "blobs", "rings")

# stream ids for np.random.SeedSequence keys
_STREAM_BANK = 1
_STREAM_ITEM = 2
_STREAM_TRAIN_POOL = 3
_STREAM_TEST_POOL = 4


@dataclass
class SyntheticSpec:
    image_size: int = 32
    num_classes: int = 8
    samples_per_class: int = 50
    bg_correlation: float = 1.0
    texture_bank: int = None
    pool_size: int = 100
    val_fraction: float = 0.2
    texture_shift: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.bg_correlation <= 1.0:
            raise ValueError("bg_correlation must be in [0, 1]")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")
        if self.texture_bank is None:
            self.texture_bank = 2 * self.num_classes
        n_val = self.n_val_classes
        if n_val < 2 or self.num_classes - n_val < 2:
            raise ValueError(
                f"{self.num_classes} classes with val_fraction {self.val_fraction} "
                "leaves fewer than 2 classes in the train or val split"
            )

    @property
    def n_val_classes(self):
        return max(2, int(round(self.num_classes * self.val_fraction)))

    @property
    def total_classes(self):
        return 2 * self.num_classes


@dataclass
class Split:
    images: np.ndarray
    masks: np.ndarray
    labels: np.ndarray
    texture_ids: np.ndarray
    item_ids: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.labels)

    @property
    def classes(self):
        return np.unique(self.labels)


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    train: Split
    val: Split
    test: Split
    train_pool: BackgroundPool
    test_pool: BackgroundPool
    bank: list


# --------------------------------------------------------------------------
# textures
# --------------------------------------------------------------------------


def _random_color(rng):
    return np.array(colorsys.hsv_to_rgb(rng.random(), rng.uniform(0.2, 0.9), rng.uniform(0.25, 0.95)))


def random_texture_params(rng):
    kind = TEXTURE_KINDS[int(rng.integers(len(TEXTURE_KINDS)))]
    return {
        "kind": kind,
        "c0": _random_color(rng),
        "c1": _random_color(rng),
        "angle": rng.uniform(0, np.pi),
        "freq": rng.uniform(1.5, 5.0),
        "cell": int(rng.integers(3, 9)),
        "cx": rng.uniform(0.0, 1.0),
        "cy": rng.uniform(0.0, 1.0),
        "phase": rng.uniform(0, 2 * np.pi, size=3),
        "kx": rng.uniform(-3, 3, size=3),
        "ky": rng.uniform(-3, 3, size=3),
    }


def render_texture(params, size, shift=(0.0, 0.0)):
    """Render a texture on a ``size x size`` grid; ``shift`` moves it in pixels."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    yy = (yy + shift[0]) / size
    xx = (xx + shift[1]) / size
    kind = params["kind"]
    if kind == "stripes":
        u = xx * np.cos(params["angle"]) + yy * np.sin(params["angle"])
        t = 0.5 + 0.5 * np.sin(2 * np.pi * params["freq"] * u)
    elif kind == "checker":
        cell = params["cell"] / size
        t = ((np.floor(xx / cell) + np.floor(yy / cell)) % 2).astype(np.float64)
    elif kind == "gradient":
        u = xx * np.cos(params["angle"]) + yy * np.sin(params["angle"])
        t = np.clip((u - u.min()) / max(u.max() - u.min(), 1e-9), 0.0, 1.0)
    elif kind == "blobs":
        acc = np.zeros_like(xx)
        for kx, ky, ph in zip(params["kx"], params["ky"], params["phase"]):
            acc += np.sin(2 * np.pi * (kx * xx + ky * yy) + ph)
        t = 0.5 + acc / 6.0
    else:
        r = np.hypot(xx - params["cx"], yy - params["cy"])
        t = 0.5 + 0.5 * np.cos(2 * np.pi * params["freq"] * r)
    t = np.clip(t, 0.0, 1.0)[..., None]
    return (1.0 - t) * params["c0"] + t * params["c1"]


# --------------------------------------------------------------------------
# glyphs
# --------------------------------------------------------------------------


def class_glyph(label):
    """Shape name and hue of a class. Hues follow a golden-ratio sequence."""
    return SHAPES[label % len(SHAPES)], (0.11 + label * 0.6180339887) % 1.0


def glyph_mask(shape, size, cy, cx, radius):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if shape == "disk":
        return dy * dy + dx * dx <= radius * radius
    if shape == "square":
        return (np.abs(dy) <= radius * 0.85) & (np.abs(dx) <= radius * 0.85)
    if shape == "triangle":
        return (dy <= radius * 0.8) & (dy >= -radius) & (np.abs(dx) <= (dy + radius) * 0.6)
    if shape == "cross":
        arm = radius * 0.38
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= radius)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= radius))
    if shape == "ring":
        r2 = dy * dy + dx * dx
        return (r2 <= radius * radius) & (r2 >= (radius * 0.5) ** 2)
    if shape == "diamond":
        return np.abs(dy) + np.abs(dx) <= radius * 1.1
    raise ValueError(f"unknown shape {shape!r}")


def render_glyph(label, size, rng):
    """Foreground layer and exact mask for one sample of class ``label``."""
    shape, hue = class_glyph(label)
    radius = size * rng.uniform(0.24, 0.3)
    jitter = size * 0.12
    cy = size / 2 - 0.5 + rng.uniform(-jitter, jitter)
    cx = size / 2 - 0.5 + rng.uniform(-jitter, jitter)
    mask = glyph_mask(shape, size, cy, cx, radius)
    rgb = np.array(colorsys.hsv_to_rgb((hue + rng.uniform(-0.02, 0.02)) % 1.0, 0.85, rng.uniform(0.8, 0.95)))
    layer = np.clip(rgb + rng.normal(0.0, 0.02, size=(size, size, 3)), 0.0, 1.0)
    return layer, mask


# --------------------------------------------------------------------------
# dataset assembly
# --------------------------------------------------------------------------


def _texture_of_class(label, spec):
    return label % spec.texture_bank


def _render_item(spec, bank, label, index):
    rng = np.random.default_rng([spec.seed, _STREAM_ITEM, int(label), int(index)])
    layer, mask = render_glyph(label, spec.image_size, rng)
    if rng.random() < spec.bg_correlation:
        tex = _texture_of_class(label, spec)
    else:
        tex = int(rng.integers(spec.texture_bank))
    shift = rng.uniform(0, spec.texture_shift, size=2)
    background = render_texture(bank[tex], spec.image_size, shift)
    image = imaging.composite(layer, mask, background)
    return image, mask, tex


def _build_split(spec, bank, labels, threads):
    jobs = [(int(c), i) for c in labels for i in range(spec.samples_per_class)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        rendered = list(ex.map(lambda job: _render_item(spec, bank, *job), jobs))
    return Split(
        images=np.stack([r[0] for r in rendered]),
        masks=np.stack([r[1] for r in rendered]),
        labels=np.array([c for c, _ in jobs], dtype=np.int64),
        texture_ids=np.array([r[2] for r in rendered], dtype=np.int64),
        item_ids=np.arange(len(jobs), dtype=np.int64),
    )


def _pool(spec, stream, tag):
    rng = np.random.default_rng([spec.seed, stream])
    images = [render_texture(random_texture_params(rng), spec.image_size) for _ in range(spec.pool_size)]
    return BackgroundPool(images, tag, [f"{tag}-{i:03d}.png" for i in range(spec.pool_size)])


def generate_synthetic(spec, threads=1):
    """Build train/val/test splits and the two background pools."""
    bank_rng = np.random.default_rng([spec.seed, _STREAM_BANK])
    bank = [random_texture_params(bank_rng) for _ in range(spec.texture_bank)]
    n_train = spec.num_classes - spec.n_val_classes
    train_labels = np.arange(n_train)
    val_labels = np.arange(n_train, spec.num_classes)
    test_labels = np.arange(spec.num_classes, spec.total_classes)
    return SyntheticData(
        spec=spec,
        train=_build_split(spec, bank, train_labels, threads),
        val=_build_split(spec, bank, val_labels, threads),
        test=_build_split(spec, bank, test_labels, threads),
        train_pool=_pool(spec, _STREAM_TRAIN_POOL, "train-pool"),
        test_pool=_pool(spec, _STREAM_TEST_POOL, "test-pool"),
        bank=bank,
    )


def write_split(split, out_dir, prefix="img"):
    """Write a split as PNG images + masks with a ``manifest.csv``."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (img, m, lab) in enumerate(zip(split.images, split.masks, split.labels)):
        name = f"{prefix}{i:05d}.png"
        imaging.save_image(out_dir / "images" / name, img)
        imaging.save_mask(out_dir / "masks" / name, m)
        rows.append([f"images/{name}", f"masks/{name}", int(lab)])
    with open(out_dir / MANIFEST_NAME, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)
    return out_dir / MANIFEST_NAME


def write_pool(pool, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, img in zip(pool.names, pool.images):
        imaging.save_image(out_dir / name, img)
    return out_dir
