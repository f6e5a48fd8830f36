"""Images, masks, compositing and mask overlap.

Images are float64 arrays of shape ``(h, w, 3)`` with values in [0, 1]; masks
are ``(h, w)`` arrays in [0, 1] with 1 marking the foreground. A binary mask is
a boolean ``(h, w)`` array. All functions are pure and never modify inputs.
"""

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from bgbench import kernels
from bgbench.errors import DegenerateInputError, DimensionMismatchError

DEFAULT_THRESHOLD = 0.5


def as_image(pixels):
    """Validate and return ``pixels`` as a float64 ``(h, w, 3)`` array."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must have shape (h, w, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise ValueError("image values must lie in [0, 1]")
    return arr


def as_mask(values):
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"mask must have shape (h, w), got {arr.shape}")
    if arr.dtype == bool:
        return arr.astype(np.float64)
    arr = arr.astype(np.float64)
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise ValueError("mask values must lie in [0, 1]")
    return arr


def _check_same_hw(name_a, shape_a, name_b, shape_b):
    bad = [
        f"{axis}: {name_a}={a} vs {name_b}={b}"
        for axis, a, b in zip(("height", "width"), shape_a[:2], shape_b[:2])
        if a != b
    ]
    if bad:
        raise DimensionMismatchError("dimension mismatch on " + "; ".join(bad))


def composite(image, mask, background):
    """Blend the masked foreground of ``image`` onto ``background``.

    ``out = M * I + (1 - M) * B`` per channel. Soft masks alpha-blend; with a
    binary mask each output pixel is exactly the image or background pixel.
    """
    image = as_image(image)
    background = as_image(background)
    mask = as_mask(mask)
    _check_same_hw("image", image.shape, "mask", mask.shape)
    _check_same_hw("image", image.shape, "background", background.shape)
    out = kernels.composite(image, mask, background)
    # guards rounding of soft blends at the boundaries
    return np.clip(out, 0.0, 1.0, out=out)


def fit_background(background, target_h, target_w):
    """Scale ``background`` to cover ``target_h x target_w``, then center-crop.

    Scaling is uniform (no aspect distortion) with bilinear interpolation; if
    the scale factor is exactly 1 the pixels are only cropped.
    """
    background = as_image(background)
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target size must be >= 1x1, got {target_h}x{target_w}")
    h, w = background.shape[:2]
    scale = max(target_h / h, target_w / w)
    if scale != 1.0:
        new_h = max(target_h, int(round(h * scale)))
        new_w = max(target_w, int(round(w * scale)))
        background = np.clip(kernels.resize_bilinear(background, new_h, new_w), 0.0, 1.0)
        h, w = new_h, new_w
    top = (h - target_h) // 2
    left = (w - target_w) // 2
    return background[top : top + target_h, left : left + target_w].copy()


def binarize(mask, threshold=DEFAULT_THRESHOLD):
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return as_mask(mask) >= threshold


def overlap(generated, ground_truth):
    """Fraction of the ground-truth foreground also covered by ``generated``.

    False positives are deliberately ignored.
    """
    generated = np.asarray(generated, dtype=bool)
    ground_truth = np.asarray(ground_truth, dtype=bool)
    _check_same_hw("generated", generated.shape, "ground_truth", ground_truth.shape)
    total = int(ground_truth.sum())
    if total == 0:
        raise DegenerateInputError("ground-truth mask has no foreground pixels")
    return int(np.logical_and(generated, ground_truth).sum()) / total


# --------------------------------------------------------------------------
# 8-bit PNG boundary
# --------------------------------------------------------------------------


def quantize(values):
    """Map [0, 1] reals to uint8 with round-half-up."""
    return np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def load_image(path):
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def load_mask(path):
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return arr / 255.0


def save_image(path, image):
    # fixed encoder settings keep the output bytes reproducible
    PILImage.fromarray(quantize(as_image(image)), mode="RGB").save(Path(path), format="PNG", optimize=False)


def save_mask(path, mask):
    PILImage.fromarray(quantize(as_mask(mask)), mode="L").save(Path(path), format="PNG", optimize=False)
