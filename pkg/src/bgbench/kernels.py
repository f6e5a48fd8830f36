"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public names dispatch to whichever backend ``bgbench._backend`` selected.
Both implementations of a kernel are kept importable as ``_<name>_numba`` and
``_<name>_numpy`` so tests and ``benchmarks/bench_kernels.py`` can compare them.
Neither path uses fastmath: outputs must be bit-reproducible.
"""

import numpy as np

from bgbench._backend import USE_NUMBA, njit

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


# --------------------------------------------------------------------------
# counter-based hashing (SplitMix64 finalizer)
# --------------------------------------------------------------------------


def _hash_keys_numpy(seed, keys):
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    h = np.full(keys.shape[0], np.uint64(seed), dtype=np.uint64)
    h = _mix64_numpy(h)
    for col in range(keys.shape[1]):
        h = _mix64_numpy(h ^ keys[:, col])
    return h


def _mix64_numpy(z):
    z = z + GOLDEN_GAMMA
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit
def _mix64_nb(z):
    z = z + GOLDEN_GAMMA
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit
def _hash_keys_nb(seed, keys):
    n, k = keys.shape
    out = np.empty(n, dtype=np.uint64)
    base = _mix64_nb(seed)
    for i in range(n):
        h = base
        for j in range(k):
            h = _mix64_nb(h ^ keys[i, j])
        out[i] = h
    return out


def _hash_keys_numba(seed, keys):
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    return _hash_keys_nb(np.uint64(seed), keys)


# --------------------------------------------------------------------------
# alpha compositing
# --------------------------------------------------------------------------


# B + m (I - B): exact for m in {0, 1} and for I == B
def _composite_numpy(image, mask, background):
    m = mask[..., None]
    out = background + m * (image - background)
    return np.where(m == 1.0, image, out)


@njit
def _composite_nb(image, mask, background, out):
    h, w, c = image.shape
    for i in range(h):
        for j in range(w):
            m = mask[i, j]
            for k in range(c):
                if m == 1.0:
                    out[i, j, k] = image[i, j, k]
                else:
                    out[i, j, k] = background[i, j, k] + m * (image[i, j, k] - background[i, j, k])


def _composite_numba(image, mask, background):
    image = np.ascontiguousarray(image, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    background = np.ascontiguousarray(background, dtype=np.float64)
    out = np.empty_like(image)
    if image.ndim == 3:
        _composite_nb(image, mask, background, out)
        return out
    flat_i = image.reshape((-1,) + image.shape[-3:])
    flat_m = mask.reshape((-1,) + mask.shape[-2:])
    flat_b = background.reshape((-1,) + background.shape[-3:])
    flat_o = out.reshape(flat_i.shape)
    for n in range(flat_i.shape[0]):
        _composite_nb(flat_i[n], flat_m[n], flat_b[n], flat_o[n])
    return out


# --------------------------------------------------------------------------
# bilinear resampling (half-pixel centers, edge clamp)
# --------------------------------------------------------------------------


def _source_coords(n_out, n_in):
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def _resize_bilinear_numpy(src, out_h, out_w):
    y0, y1, fy = _source_coords(out_h, src.shape[0])
    x0, x1, fx = _source_coords(out_w, src.shape[1])
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    return top * (1.0 - fy) + bot * fy


@njit
def _resize_bilinear_nb(src, y0, y1, fy, x0, x1, fx, out):
    oh, ow, c = out.shape
    for i in range(oh):
        wy = fy[i]
        for j in range(ow):
            wx = fx[j]
            for k in range(c):
                top = src[y0[i], x0[j], k] * (1.0 - wx) + src[y0[i], x1[j], k] * wx
                bot = src[y1[i], x0[j], k] * (1.0 - wx) + src[y1[i], x1[j], k] * wx
                out[i, j, k] = top * (1.0 - wy) + bot * wy


def _resize_bilinear_numba(src, out_h, out_w):
    src = np.ascontiguousarray(src, dtype=np.float64)
    y0, y1, fy = _source_coords(out_h, src.shape[0])
    x0, x1, fx = _source_coords(out_w, src.shape[1])
    out = np.empty((out_h, out_w, src.shape[2]), dtype=np.float64)
    _resize_bilinear_nb(src, y0, y1, fy, x0, x1, fx, out)
    return out


# --------------------------------------------------------------------------
# ranked retrieval statistics
# --------------------------------------------------------------------------


def _retrieval_stats_numpy(dist, labels_q, labels_r, exclude_self):
    """Per-query (AP@R, P@1, R-precision, R) from a distance matrix."""
    dist = np.array(dist, dtype=np.float64, copy=True)
    nq = dist.shape[0]
    if exclude_self:
        dist[np.arange(nq), np.arange(nq)] = np.inf
    order = np.argsort(dist, axis=1, kind="stable")
    if exclude_self:
        order = order[:, :-1]
    rel = labels_r[order] == labels_q[:, None]
    r_count = rel.sum(axis=1)
    ranks = np.arange(1, order.shape[1] + 1)
    in_top_r = ranks[None, :] <= r_count[:, None]
    hits = np.cumsum(rel, axis=1)
    prec = hits / ranks[None, :]
    safe_r = np.maximum(r_count, 1)
    # sequential accumulation, bit-identical to the compiled loop
    terms = rel * in_top_r * prec
    ap = (np.cumsum(terms, axis=1)[:, -1] if terms.shape[1] else np.zeros(nq)) / safe_r
    rprec = (rel * in_top_r).sum(axis=1) / safe_r
    p1 = rel[:, 0].astype(np.float64) if order.shape[1] else np.zeros(nq)
    return ap, p1, rprec, r_count.astype(np.int64)


@njit
def _retrieval_stats_nb(dist, labels_q, labels_r, exclude_self):
    nq, nr = dist.shape
    ap = np.zeros(nq)
    p1 = np.zeros(nq)
    rprec = np.zeros(nq)
    r_count = np.zeros(nq, dtype=np.int64)
    for q in range(nq):
        row = dist[q].copy()
        if exclude_self:
            row[q] = np.inf
        order = np.argsort(row, kind="mergesort")
        m = nr - 1 if exclude_self else nr
        r = 0
        for t in range(m):
            if labels_r[order[t]] == labels_q[q]:
                r += 1
        r_count[q] = r
        if m > 0 and labels_r[order[0]] == labels_q[q]:
            p1[q] = 1.0
        if r == 0:
            continue
        hits = 0
        acc = 0.0
        for t in range(r):
            if labels_r[order[t]] == labels_q[q]:
                hits += 1
                acc += hits / (t + 1)
        ap[q] = acc / r
        rprec[q] = hits / r
    return ap, p1, rprec, r_count


def _retrieval_stats_numba(dist, labels_q, labels_r, exclude_self):
    return _retrieval_stats_nb(
        np.ascontiguousarray(dist, dtype=np.float64),
        np.ascontiguousarray(labels_q, dtype=np.int64),
        np.ascontiguousarray(labels_r, dtype=np.int64),
        bool(exclude_self),
    )


# --------------------------------------------------------------------------
# occlusion accumulation
# --------------------------------------------------------------------------


def _occlusion_accumulate_numpy(scores, tops, lefts, patch, h, w):
    total = np.zeros((h, w))
    count = np.zeros((h, w))
    for s, y, x in zip(scores, tops, lefts):
        total[y : y + patch, x : x + patch] += s
        count[y : y + patch, x : x + patch] += 1.0
    return total, count


@njit
def _occlusion_accumulate_nb(scores, tops, lefts, patch, h, w):
    total = np.zeros((h, w))
    count = np.zeros((h, w))
    for p in range(scores.shape[0]):
        y = tops[p]
        x = lefts[p]
        for i in range(y, min(y + patch, h)):
            for j in range(x, min(x + patch, w)):
                total[i, j] += scores[p]
                count[i, j] += 1.0
    return total, count


def _occlusion_accumulate_numba(scores, tops, lefts, patch, h, w):
    return _occlusion_accumulate_nb(
        np.ascontiguousarray(scores, dtype=np.float64),
        np.ascontiguousarray(tops, dtype=np.int64),
        np.ascontiguousarray(lefts, dtype=np.int64),
        int(patch),
        int(h),
        int(w),
    )


if USE_NUMBA:
    hash_keys = _hash_keys_numba
    composite = _composite_numba
    resize_bilinear = _resize_bilinear_numba
    retrieval_stats = _retrieval_stats_numba
    occlusion_accumulate = _occlusion_accumulate_numba
else:
    hash_keys = _hash_keys_numpy
    composite = _composite_numpy
    resize_bilinear = _resize_bilinear_numpy
    retrieval_stats = _retrieval_stats_numpy
    occlusion_accumulate = _occlusion_accumulate_numpy

KERNELS = {
    "hash_keys": (_hash_keys_numba, _hash_keys_numpy),
    "composite": (_composite_numba, _composite_numpy),
    "resize_bilinear": (_resize_bilinear_numba, _resize_bilinear_numpy),
    "retrieval_stats": (_retrieval_stats_numba, _retrieval_stats_numpy),
    "occlusion_accumulate": (_occlusion_accumulate_numba, _occlusion_accumulate_numpy),
}
