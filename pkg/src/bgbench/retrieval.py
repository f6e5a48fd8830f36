"""Exact nearest-neighbour retrieval and MAP@R.

Distances between unit vectors are computed as ``2 - 2 * cos`` (the squared
Euclidean distance), which orders neighbours exactly like the Euclidean
distance. Ties go to the lower reference index.
"""

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from bgbench import kernels
from bgbench.errors import DegenerateInputError, DimensionMismatchError, FormatError

EMB_MAGIC = b"EMB1"
NORM_TOL = 1e-6


@dataclass
class EmbeddingSet:
    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {self.vectors.shape}")
        n, d = self.vectors.shape
        if n < 1 or d < 2:
            raise ValueError(f"need n >= 1 and d >= 2, got n={n}, d={d}")
        if self.labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got shape {self.labels.shape}")
        if np.any(self.labels < 0):
            raise ValueError("labels must be >= 0")
        norms = np.linalg.norm(self.vectors, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
        if bad.size:
            raise ValueError(f"vector {bad[0]} has norm {norms[bad[0]]:.9f}, expected unit length")

    @property
    def count(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


def _distances(query, reference):
    if query.dim != reference.dim:
        raise DimensionMismatchError(f"embedding dims differ: query {query.dim}, reference {reference.dim}")
    return 2.0 - 2.0 * (query.vectors @ reference.vectors.T)


def knn(query, reference, exclude_self=False):
    """Reference indices for each query, nearest first.

    With ``exclude_self`` the sets must be the same and each query's own index
    is dropped, so rows have ``n - 1`` entries.
    """
    dist = _distances(query, reference)
    if exclude_self:
        if query.count != reference.count:
            raise ValueError("exclude_self requires query and reference to be the same set")
        dist[np.arange(query.count), np.arange(query.count)] = np.inf
    order = np.argsort(dist, axis=1, kind="stable")
    return order[:, :-1] if exclude_self else order


@dataclass
class RetrievalReport:
    map_at_r: float
    precision_at_1: float
    r_precision: float
    num_queries: int
    skipped_queries: int
    per_query: dict = field(default_factory=dict, repr=False)

    def to_dict(self, include_per_query=False):
        out = {
            "map_at_r": self.map_at_r,
            "precision_at_1": self.precision_at_1,
            "r_precision": self.r_precision,
            "num_queries": self.num_queries,
            "skipped_queries": self.skipped_queries,
        }
        if include_per_query:
            out["per_query"] = {k: [float(x) for x in v] for k, v in self.per_query.items()}
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["map_at_r"]),
            float(d["precision_at_1"]),
            float(d["r_precision"]),
            int(d["num_queries"]),
            int(d["skipped_queries"]),
        )


def map_at_r(query, reference, exclude_self=False):
    """MAP@R, Precision@1 and R-Precision over all usable queries.

    A query with no same-class reference (R = 0) is skipped and counted in
    ``skipped_queries``.
    """
    if exclude_self and query.count != reference.count:
        raise ValueError("exclude_self requires query and reference to be the same set")
    dist = _distances(query, reference)
    ap, p1, rprec, r_count = kernels.retrieval_stats(dist, query.labels, reference.labels, exclude_self)
    usable = r_count > 0
    if not usable.any():
        raise DegenerateInputError("no query has a same-class reference")
    per_query = {
        "query_index": np.flatnonzero(usable),
        "map_at_r": ap[usable],
        "precision_at_1": p1[usable],
        "r_precision": rprec[usable],
    }
    return RetrievalReport(
        map_at_r=math.fsum(ap[usable]) / usable.sum(),
        precision_at_1=math.fsum(p1[usable]) / usable.sum(),
        r_precision=math.fsum(rprec[usable]) / usable.sum(),
        num_queries=int(usable.sum()),
        skipped_queries=int((~usable).sum()),
        per_query=per_query,
    )


def mean_std(values):
    """Mean and sample standard deviation (0 for a single value)."""
    values = [float(v) for v in values]
    if not values:
        raise DegenerateInputError("no values to aggregate")
    mean = math.fsum(values) / len(values)
    if len(values) == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)


def compare_clean_corrupted(clean, corrupted_runs):
    """Clean-vs-corrupted MAP@R summary over repeated corruption runs.

    ``relative_drop`` is ``None`` when the clean MAP@R is zero.
    """
    if not corrupted_runs:
        raise ValueError("need at least one corrupted run")
    clean_value = clean.map_at_r if isinstance(clean, RetrievalReport) else float(clean)
    runs = [r.map_at_r if isinstance(r, RetrievalReport) else float(r) for r in corrupted_runs]
    mean, std = mean_std(runs)
    drop = clean_value - mean
    return {
        "clean_map_at_r": clean_value,
        "corrupted_map_at_r_mean": mean,
        "corrupted_map_at_r_std": std,
        "num_runs": len(runs),
        "absolute_drop": drop,
        "relative_drop": drop / clean_value if clean_value != 0 else None,
    }


# --------------------------------------------------------------------------
# EMB1 binary format
# --------------------------------------------------------------------------


def dumps_embeddings(emb):
    n, d = emb.vectors.shape
    rec = np.empty(n, dtype=np.dtype([("label", "<i8"), ("vec", "<f4", (d,))]))
    rec["label"] = emb.labels
    rec["vec"] = emb.vectors.astype("<f4")
    return EMB_MAGIC + struct.pack("<II", n, d) + rec.tobytes()


def loads_embeddings(data):
    """Parse EMB1 bytes. Raises :class:`FormatError` naming the byte offset."""
    data = bytes(data)
    if len(data) < 4 or data[:4] != EMB_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {EMB_MAGIC!r}", 0)
    if len(data) < 12:
        raise FormatError("truncated header", len(data))
    n, d = struct.unpack_from("<II", data, 4)
    if n < 1 or d < 2:
        raise FormatError(f"invalid dimensions n={n}, d={d}", 4)
    rec_size = 8 + 4 * d
    expected = 12 + n * rec_size
    if len(data) < expected:
        whole = (len(data) - 12) // rec_size
        raise FormatError(f"truncated: record {whole} of {n} incomplete", 12 + whole * rec_size)
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes", expected)
    rec = np.frombuffer(data, dtype=np.dtype([("label", "<i8"), ("vec", "<f4", (d,))]), count=n, offset=12)
    labels = rec["label"].astype(np.int64)
    neg = np.flatnonzero(labels < 0)
    if neg.size:
        raise FormatError(f"record {neg[0]} has negative label", 12 + int(neg[0]) * rec_size)
    vectors = rec["vec"].astype(np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    bad = np.flatnonzero(~(np.abs(norms - 1.0) <= NORM_TOL))
    if bad.size:
        raise FormatError(
            f"record {bad[0]} is not unit-norm (|v| = {norms[bad[0]]:.9f})",
            12 + int(bad[0]) * rec_size + 8,
        )
    return EmbeddingSet(vectors, labels)


def save_embeddings(path, emb):
    with open(path, "wb") as fh:
        fh.write(dumps_embeddings(emb))


def load_embeddings(path):
    with open(path, "rb") as fh:
        return loads_embeddings(fh.read())


def write_report(path, report, **extra):
    payload = report.to_dict() if isinstance(report, RetrievalReport) else dict(report)
    payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
