"""Occlusion-sensitivity attribution maps for the toy embedder."""

import numpy as np

from bgbench import kernels
from bgbench.toytrain import model

GRAY = 0.5


def patch_origins(size, patch, stride):
    """Top/left offsets that cover ``size`` pixels, including the far edge."""
    if not 1 <= patch <= size:
        raise ValueError(f"patch must be in [1, {size}], got {patch}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    starts = list(range(0, size - patch + 1, stride))
    if starts[-1] != size - patch:
        starts.append(size - patch)
    return np.array(starts, dtype=np.int64)


def occlusion_attribution(params, image, patch=4, stride=2, gray=GRAY):
    """Per-pixel mean embedding shift caused by gray patches covering it.

    Each patch position scores ``||e(image) - e(occluded)||``; a pixel's value
    is the average score of all patches that cover it.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    tops, lefts = np.meshgrid(patch_origins(h, patch, stride), patch_origins(w, patch, stride), indexing="ij")
    tops, lefts = tops.ravel(), lefts.ravel()
    batch = np.repeat(image[None], len(tops), axis=0)
    for k, (y, x) in enumerate(zip(tops, lefts)):
        batch[k, y : y + patch, x : x + patch] = gray
    ref = model.embed_vectors(params, image[None])[0]
    occluded = model.embed_vectors(params, batch)
    scores = np.linalg.norm(occluded - ref, axis=1)
    total, count = kernels.occlusion_accumulate(scores, tops, lefts, patch, h, w)
    return np.divide(total, count, out=np.zeros_like(total), where=count > 0)
