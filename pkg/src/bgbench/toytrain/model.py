"""Two-layer perceptron embedder on flattened pixels.

``e = normalize(relu((x - 0.5) @ w1 + b1) @ w2 + b2)``. An output with zero
norm maps to the first basis vector, so a zero-weight network embeds every
image to the same unit vector.
"""

import struct
from dataclasses import dataclass

import numpy as np

from bgbench.errors import DimensionMismatchError, FormatError
from bgbench.retrieval import EmbeddingSet

MLP_MAGIC = b"MLP1"
PIXEL_OFFSET = 0.5
# fixed row-block size keeps matmul results independent of thread count
EMBED_BLOCK = 256


@dataclass
class EmbedderParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def d_in(self):
        return self.w1.shape[0]

    @property
    def hidden(self):
        return self.w1.shape[1]

    @property
    def d_out(self):
        return self.w2.shape[1]

    def copy(self):
        return EmbedderParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def arrays(self):
        return (self.w1, self.b1, self.w2, self.b2)


def init_params(d_in, hidden, d_out, rng, scale=1.0):
    """He-initialized weights times ``scale``, zero biases."""
    return EmbedderParams(
        rng.standard_normal((d_in, hidden)) * (scale * np.sqrt(2.0 / d_in)),
        np.zeros(hidden),
        rng.standard_normal((hidden, d_out)) * np.sqrt(2.0 / hidden),
        np.zeros(d_out),
    )


def zero_params(d_in, hidden, d_out):
    return EmbedderParams(np.zeros((d_in, hidden)), np.zeros(hidden), np.zeros((hidden, d_out)), np.zeros(d_out))


def flatten(images, d_in=None):
    images = np.asarray(images, dtype=np.float64)
    x = images.reshape(images.shape[0], -1) - PIXEL_OFFSET
    if d_in is not None and x.shape[1] != d_in:
        raise DimensionMismatchError(f"images flatten to {x.shape[1]} inputs, model expects {d_in}")
    return x


def _normalize(y):
    norm = np.linalg.norm(y, axis=1, keepdims=True)
    zero = norm[:, 0] == 0.0
    e = np.divide(y, norm, out=np.zeros_like(y), where=norm > 0)
    e[zero, 0] = 1.0
    return e, norm


def forward(params, x):
    """Forward pass on flat inputs; returns embeddings and the backward cache."""
    z = x @ params.w1 + params.b1
    a = np.maximum(z, 0.0)
    y = a @ params.w2 + params.b2
    e, norm = _normalize(y)
    return e, (x, z, a, e, norm)


def backward(params, cache, grad_e):
    """Parameter gradients given ``dL/de``."""
    x, z, a, e, norm = cache
    safe = np.where(norm > 0, norm, 1.0)
    grad_y = (grad_e - e * np.sum(grad_e * e, axis=1, keepdims=True)) / safe
    grad_y[norm[:, 0] == 0.0] = 0.0
    grad_w2 = a.T @ grad_y
    grad_b2 = grad_y.sum(axis=0)
    grad_z = (grad_y @ params.w2.T) * (z > 0)
    grad_w1 = x.T @ grad_z
    grad_b1 = grad_z.sum(axis=0)
    return EmbedderParams(grad_w1, grad_b1, grad_w2, grad_b2)


def embed_vectors(params, images):
    """Unit-norm embeddings of an ``(n, h, w, 3)`` batch, in input order."""
    x = flatten(images, params.d_in)
    out = np.empty((x.shape[0], params.d_out))
    for start in range(0, x.shape[0], EMBED_BLOCK):
        out[start : start + EMBED_BLOCK] = forward(params, x[start : start + EMBED_BLOCK])[0]
    return out


def embed(params, images, labels=None):
    vectors = embed_vectors(params, images)
    if labels is None:
        labels = np.zeros(len(vectors), dtype=np.int64)
    return EmbeddingSet(vectors, labels)


# --------------------------------------------------------------------------
# MLP1 binary format
# --------------------------------------------------------------------------


def dumps_params(params):
    head = MLP_MAGIC + struct.pack("<III", params.d_in, params.hidden, params.d_out)
    return head + b"".join(np.asarray(a, dtype="<f4").tobytes() for a in params.arrays())


def loads_params(data):
    data = bytes(data)
    if len(data) < 4 or data[:4] != MLP_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MLP_MAGIC!r}", 0)
    if len(data) < 16:
        raise FormatError("truncated header", len(data))
    d_in, hidden, d_out = struct.unpack_from("<III", data, 4)
    if min(d_in, hidden, d_out) < 1:
        raise FormatError(f"invalid dims {d_in}x{hidden}x{d_out}", 4)
    shapes = [(d_in, hidden), (hidden,), (hidden, d_out), (d_out,)]
    expected = 16 + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "trailing bytes"
        raise FormatError(f"{kind}: expected {expected} bytes, got {len(data)}", min(len(data), expected))
    arrays, offset = [], 16
    for s in shapes:
        count = int(np.prod(s))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float64).reshape(s)
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
            raise FormatError("non-finite parameter", offset + 4 * bad)
        arrays.append(arr)
        offset += 4 * count
    return EmbedderParams(*arrays)


def save_params(path, params):
    with open(path, "wb") as fh:
        fh.write(dumps_params(params))


def load_params(path):
    with open(path, "rb") as fh:
        return loads_params(fh.read())
