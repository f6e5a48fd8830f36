"""Corrupted test sets and training-time background sampling.

A corrupted set replaces the background of every image in a clean dataset
with a background drawn from a pool. Draws come from :mod:`bgbench.prng`, so a
plan depends only on ``(seed, item_count, pool_size)``.
"""

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bgbench import imaging, prng
from bgbench.errors import BGBenchError, PoolOverlapError

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
MANIFEST_NAME = "manifest.csv"
MANIFEST_HEADER = ["image", "mask", "label"]


class CorruptionError(BGBenchError):
    """One or more items failed; ``failures`` lists ``(item_index, message)``."""

    def __init__(self, failures):
        self.failures = list(failures)
        lines = "\n".join(f"  item {i}: {msg}" for i, msg in self.failures)
        super().__init__(f"{len(self.failures)} item(s) failed:\n{lines}")


@dataclass
class BackgroundPool:
    images: list
    source_tag: str
    names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.images:
            raise ValueError("background pool must not be empty")
        if not self.names:
            self.names = [f"{i:04d}" for i in range(len(self.images))]

    def __len__(self):
        return len(self.images)


def load_pool(directory, source_tag=None):
    """Load every image in ``directory`` in lexicographic file-name order.

    The tag defaults to the resolved directory path, so two pools loaded from
    the same folder compare equal.
    """
    directory = Path(directory)
    files = sorted(
        (p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )
    if not files:
        raise BGBenchError(f"no background images found in {directory}")
    tag = source_tag if source_tag is not None else str(directory.resolve())
    return BackgroundPool([imaging.load_image(p) for p in files], tag, [p.name for p in files])


def check_disjoint_pools(eval_pool, train_pool_tag):
    """Refuse an evaluation pool that is the training (BGAugment) pool."""
    if train_pool_tag is not None and eval_pool.source_tag == train_pool_tag:
        raise PoolOverlapError(
            f"evaluation background pool {eval_pool.source_tag!r} is the training pool; "
            "corrupted evaluation needs backgrounds never seen in training"
        )


@dataclass(frozen=True)
class CorruptionPlan:
    seed: int
    background_indices: np.ndarray
    pool_size: int

    @property
    def assignments(self):
        return [(i, int(b)) for i, b in enumerate(self.background_indices)]

    def __len__(self):
        return len(self.background_indices)


def plan_corruption(seed, item_count, pool_size):
    """Assign one background per item, uniformly with replacement."""
    if item_count < 1 or pool_size < 1:
        raise ValueError("item_count and pool_size must be >= 1")
    idx = prng.randbelow(pool_size, seed, np.arange(item_count, dtype=np.uint64))
    idx.setflags(write=False)
    return CorruptionPlan(int(seed), idx, int(pool_size))


def training_background_indices(pool_size, epoch, item_indices, seed):
    """Vectorized form of :func:`sample_training_background` (indices only)."""
    items = np.asarray(item_indices, dtype=np.uint64)
    return prng.randbelow(pool_size, seed, np.uint64(epoch), items)


def sample_training_background(pool, epoch, item_index, seed):
    """Background for one training image at one iteration, keyed by all three."""
    i = int(training_background_indices(len(pool), epoch, [item_index], seed)[0])
    return pool.images[i]


def corrupt_arrays(images, masks, pool, plan):
    """In-memory corruption of aligned image/mask sequences."""
    if len(plan) != len(images) or plan.pool_size != len(pool):
        raise ValueError("plan does not match dataset length or pool size")
    out = []
    for img, m, b in zip(images, masks, plan.background_indices):
        h, w = np.shape(img)[:2]
        out.append(imaging.composite(img, m, imaging.fit_background(pool.images[b], h, w)))
    return np.stack(out) if out else np.empty((0,))


# --------------------------------------------------------------------------
# manifests on disk
# --------------------------------------------------------------------------


@dataclass
class ManifestItem:
    image: Path
    mask: Path
    label: int


@dataclass
class DatasetManifest:
    items: list

    def __len__(self):
        return len(self.items)

    @property
    def labels(self):
        return [it.label for it in self.items]


def read_manifest(path):
    """Parse an ``image,mask,label`` CSV; paths are relative to its directory."""
    path = Path(path)
    root = path.parent
    items = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise BGBenchError(f"{path}: expected header {','.join(MANIFEST_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise BGBenchError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                label = int(row[2])
            except ValueError:
                raise BGBenchError(f"{path}:{lineno}: label {row[2]!r} is not an integer") from None
            if label < 0:
                raise BGBenchError(f"{path}:{lineno}: label must be >= 0")
            items.append(ManifestItem(root / row[0], root / row[1], label))
    return DatasetManifest(items)


def write_manifest(manifest, path):
    path = Path(path)
    root = path.parent.resolve()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for it in manifest.items:
            writer.writerow(
                [
                    Path(os.path.relpath(Path(it.image).resolve(), root)).as_posix(),
                    Path(os.path.relpath(Path(it.mask).resolve(), root)).as_posix(),
                    it.label,
                ]
            )


def corrupt_dataset(manifest, pool, plan, out_dir, threads=1):
    """Write the corrupted version of ``manifest`` into ``out_dir``.

    Each output keeps its source file stem (as ``.png``) and label. Failures are
    collected for all items and raised together as :class:`CorruptionError`.
    Returns the manifest of the new set, also written as ``manifest.csv``.
    """
    if len(plan) != len(manifest) or plan.pool_size != len(pool):
        raise ValueError(
            f"plan covers {len(plan)} items / pool {plan.pool_size}, "
            f"dataset has {len(manifest)} items / pool {len(pool)}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    names = [Path(it.image).stem + ".png" for it in manifest.items]
    seen = {}
    for i, n in enumerate(names):
        if n in seen:
            raise CorruptionError([(i, f"output name {n} collides with item {seen[n]}")])
        seen[n] = i

    def work(i):
        item = manifest.items[i]
        try:
            img = imaging.load_image(item.image)
            mask = imaging.load_mask(item.mask)
            bg = imaging.fit_background(pool.images[plan.background_indices[i]], *img.shape[:2])
            imaging.save_image(out_dir / names[i], imaging.composite(img, mask, bg))
        except Exception as exc:  # collected, reported together
            return f"{item.image}: {exc}"
        return None

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool_exec:
        results = list(pool_exec.map(work, range(len(manifest))))
    failures = [(i, msg) for i, msg in enumerate(results) if msg is not None]
    if failures:
        raise CorruptionError(failures)

    out = DatasetManifest(
        [ManifestItem(out_dir / n, it.mask, it.label) for n, it in zip(names, manifest.items)]
    )
    write_manifest(out, out_dir / MANIFEST_NAME)
    logger.info("wrote %d corrupted images to %s (seed %d)", len(out), out_dir, plan.seed)
    return out
