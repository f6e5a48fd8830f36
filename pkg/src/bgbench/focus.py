"""Foreground-focus score of an attribution map.

``score = (a - f) / (1 - f)`` where ``f`` is the foreground fraction of the
mask and ``a`` the fraction of attribution mass on the foreground. A score
of 1 means all attribution lies on the foreground, 0 means it is spread
uniformly, and negative values mean the background dominates.

Soft masks are binarized at 0.5 first so that a uniform map scores exactly 0.
"""

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bgbench import imaging
from bgbench.errors import DegenerateInputError, DimensionMismatchError, FormatError

ATT_MAGIC = b"ATT1"


def _binary(mask):
    mask = np.asarray(mask)
    if mask.dtype == bool:
        return mask
    return imaging.binarize(mask, imaging.DEFAULT_THRESHOLD)


def as_attribution(values):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"attribution map must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("attribution map contains non-finite values")
    if np.any(arr < 0):
        raise ValueError("attribution map has negative entries")
    return arr


def foreground_fraction(mask):
    m = _binary(mask)
    return int(m.sum()) / m.size


def attribution_on_foreground(mask, attribution):
    m = _binary(mask)
    a = as_attribution(attribution)
    if m.shape != a.shape:
        raise DimensionMismatchError(f"mask shape {m.shape} != attribution shape {a.shape}")
    # exactly rounded sums: zeros off the foreground cannot perturb the ratio
    total = math.fsum(a.ravel())
    if total <= 0:
        raise DegenerateInputError("attribution map is all zeros")
    return math.fsum(a[m]) / total


def focus_score(mask, attribution):
    """Foreground-size-normalized share of attribution on the foreground."""
    m = _binary(mask)
    f = foreground_fraction(m)
    if f == 0.0:
        raise DegenerateInputError("mask has no foreground")
    if f == 1.0:
        raise DegenerateInputError("mask has no background")
    a = attribution_on_foreground(m, attribution)
    return (a - f) / (1.0 - f)


@dataclass
class FocusReport:
    scores: list
    mean: float
    std: float
    skipped: int = 0
    skipped_reasons: list = field(default_factory=list, repr=False)

    @property
    def n(self):
        return len(self.scores)

    def to_dict(self, include_scores=False):
        out = {"mean": self.mean, "std": self.std, "n": self.n, "skipped": self.skipped}
        if include_scores:
            out["scores"] = [float(s) for s in self.scores]
        return out


def aggregate_focus(pairs):
    """Mean and sample std of focus scores over ``(mask, attribution)`` pairs.

    Images whose score is undefined (empty or full foreground, all-zero map)
    are skipped and counted rather than imputed.
    """
    scores, reasons = [], []
    for i, (mask, attribution) in enumerate(pairs):
        try:
            scores.append(focus_score(mask, attribution))
        except DegenerateInputError as exc:
            reasons.append((i, str(exc)))
    if not scores:
        raise DegenerateInputError(f"no scoreable images ({len(reasons)} skipped)")
    # fsum is exactly rounded, so the mean does not depend on summation order
    mean = math.fsum(scores) / len(scores)
    std = math.sqrt(math.fsum((s - mean) ** 2 for s in scores) / (len(scores) - 1)) if len(scores) > 1 else 0.0
    return FocusReport(scores, mean, std, len(reasons), reasons)


# --------------------------------------------------------------------------
# ATT1 binary format and PNG maps
# --------------------------------------------------------------------------


def dumps_attribution(attribution):
    a = as_attribution(attribution)
    h, w = a.shape
    return ATT_MAGIC + struct.pack("<II", h, w) + a.astype("<f4").tobytes()


def loads_attribution(data):
    data = bytes(data)
    if len(data) < 4 or data[:4] != ATT_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {ATT_MAGIC!r}", 0)
    if len(data) < 12:
        raise FormatError("truncated header", len(data))
    h, w = struct.unpack_from("<II", data, 4)
    if h < 1 or w < 1:
        raise FormatError(f"invalid dimensions h={h}, w={w}", 4)
    expected = 12 + 4 * h * w
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "trailing bytes"
        raise FormatError(f"{kind}: expected {expected} bytes, got {len(data)}", min(len(data), expected))
    values = np.frombuffer(data, dtype="<f4", offset=12).astype(np.float64).reshape(h, w)
    bad = np.flatnonzero(~(values >= 0) | ~np.isfinite(values))
    if bad.size:
        raise FormatError(f"value {bad[0]} is negative or non-finite", 12 + 4 * int(bad[0]))
    return values


def load_attribution(path):
    """Read an ATT1 file, or an 8-bit grayscale PNG scaled to [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        return imaging.load_mask(path)
    return loads_attribution(path.read_bytes())


def save_attribution(path, attribution):
    Path(path).write_bytes(dumps_attribution(attribution))


def write_report(path, report, **extra):
    payload = report.to_dict()
    payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
