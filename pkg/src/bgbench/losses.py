"""Metric-learning losses with analytic gradients.

Ranking losses (contrastive, triplet, multi-similarity) enumerate every pair
or triplet in the batch. Contrastive and triplet use the Euclidean distance;
multi-similarity uses the dot product, which is the cosine similarity for
unit vectors. The classification losses (ArcFace, normalized softmax) score
embeddings against one unit-norm proxy row per class.

Every loss returns ``(loss, grad)`` or, for the proxy losses,
``(loss, grad_embeddings, grad_weights)``. Gradients are taken with respect
to the vectors as given; hinge kinks use the subgradient 0.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources

import numpy as np

from bgbench.errors import DegenerateInputError

LOSS_KINDS = ("contrastive", "triplet", "multi_similarity", "arcface", "normalized_softmax")
PROXY_LOSSES = ("arcface", "normalized_softmax")
ARCFACE_EPS = 1e-7


def _load_defaults():
    text = resources.files("bgbench.data").joinpath("defaults.json").read_text(encoding="utf-8")
    return json.loads(text)["loss"]


@dataclass
class LossConfig:
    """Loss kind plus hyperparameters; unused ones are ignored by each kind.

    Defaults come from ``bgbench/data/defaults.json`` and are the common
    choices of the public metric-learning benchmark code, not tuned values.
    """

    kind: str = "contrastive"
    pos_margin: float = field(default_factory=lambda: _load_defaults()["pos_margin"])
    neg_margin: float = field(default_factory=lambda: _load_defaults()["neg_margin"])
    margin: float = field(default_factory=lambda: _load_defaults()["margin"])
    alpha: float = field(default_factory=lambda: _load_defaults()["alpha"])
    beta: float = field(default_factory=lambda: _load_defaults()["beta"])
    lam: float = field(default_factory=lambda: _load_defaults()["lambda"])
    arc_margin: float = field(default_factory=lambda: _load_defaults()["arc_margin"])
    scale: float = field(default_factory=lambda: _load_defaults()["scale"])
    temperature: float = field(default_factory=lambda: _load_defaults()["temperature"])
    num_classes: int = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        for name in ("pos_margin", "neg_margin", "margin", "arc_margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("alpha", "beta", "scale", "temperature"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        if self.kind in PROXY_LOSSES and self.num_classes is not None and self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown loss config keys: {unknown}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


# --------------------------------------------------------------------------
# shared pieces
# --------------------------------------------------------------------------


def _pairwise_dist(x):
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _dist_backward(x, dist, coef):
    """Gradient of ``sum(coef * dist)`` with respect to ``x``; 0 where dist == 0."""
    s = np.divide(coef, dist, out=np.zeros_like(coef), where=dist > 0)
    a = s + s.T
    return a.sum(axis=1)[:, None] * x - a @ x


def _label_masks(labels):
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    diff = labels[:, None] != labels[None, :]
    return same, diff


def _check_batch(x, labels):
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise ValueError(f"expected (n, d) embeddings with n labels, got {x.shape} and {labels.shape}")
    return x, labels


def _log1p_sum_exp(z, m):
    """Row-wise ``log(1 + sum_j exp(z_ij))`` over entries where ``m`` is set, plus weights."""
    zz = np.where(m, z, -np.inf)
    top = np.maximum(zz.max(axis=1, initial=-np.inf), 0.0)
    e = np.where(m, np.exp(zz - top[:, None]), 0.0)
    denom = np.exp(-top) + e.sum(axis=1)
    return top + np.log(denom), e / denom[:, None]


# --------------------------------------------------------------------------
# ranking losses
# --------------------------------------------------------------------------


def _contrastive(x, labels, pos_margin, neg_margin):
    x, labels = _check_batch(x, labels)
    same, diff = _label_masks(labels)
    upper = np.triu(np.ones_like(same), k=1)
    pos, neg = same & upper, diff & upper
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 and n_neg == 0:
        raise DegenerateInputError("batch has no positive or negative pairs")
    dist = _pairwise_dist(x)
    pos_act = pos & (dist > pos_margin)
    neg_act = neg & (dist < neg_margin)
    loss = 0.0
    coef = np.zeros_like(dist)
    if n_pos:
        loss += (dist[pos_act] - pos_margin).sum() / n_pos
        coef[pos_act] = 1.0 / n_pos
    if n_neg:
        loss += (neg_margin - dist[neg_act]).sum() / n_neg
        coef[neg_act] = -1.0 / n_neg
    grad = _dist_backward(x, dist, coef)
    gaps = np.concatenate([np.abs(dist[pos] - pos_margin), np.abs(neg_margin - dist[neg]), dist[pos | neg]])
    return float(loss), grad, float(gaps.min())


def contrastive_loss(x, labels, cfg):
    """Mean positive-pair hinge ``d - pos_margin`` plus mean negative-pair hinge ``neg_margin - d``."""
    loss, grad, _ = _contrastive(x, labels, cfg.pos_margin, cfg.neg_margin)
    return loss, grad


def _triplet(x, labels, margin):
    x, labels = _check_batch(x, labels)
    same, diff = _label_masks(labels)
    valid = same[:, :, None] & diff[:, None, :]
    count = int(valid.sum())
    if count == 0:
        raise DegenerateInputError("batch has no valid (anchor, positive, negative) triplet")
    dist = _pairwise_dist(x)
    t = dist[:, :, None] - dist[:, None, :] + margin
    active = valid & (t > 0)
    loss = t[active].sum() / count
    coef = active.sum(axis=2) / count - active.sum(axis=1) / count
    grad = _dist_backward(x, dist, coef)
    used = same | diff
    gaps = np.concatenate([np.abs(t[valid]), dist[used]])
    return float(loss), grad, float(gaps.min())


def triplet_loss(x, labels, cfg):
    """Mean over all in-batch triplets of ``max(0, d_ap - d_an + margin)``."""
    loss, grad, _ = _triplet(x, labels, cfg.margin)
    return loss, grad


def _multi_similarity(x, labels, alpha, beta, lam):
    x, labels = _check_batch(x, labels)
    same, diff = _label_masks(labels)
    anchors = same.any(axis=1) | diff.any(axis=1)
    n_anchor = int(anchors.sum())
    if n_anchor == 0:
        raise DegenerateInputError("no anchor has a positive or negative pair")
    sim = x @ x.T
    pos_term, w_pos = _log1p_sum_exp(-alpha * (sim - lam), same)
    neg_term, w_neg = _log1p_sum_exp(beta * (sim - lam), diff)
    loss = (pos_term / alpha + neg_term / beta)[anchors].sum() / n_anchor
    coef = (w_neg - w_pos) / n_anchor
    coef[~anchors] = 0.0
    grad = (coef + coef.T) @ x
    return float(loss), grad, np.inf


def multi_similarity_loss(x, labels, cfg):
    """Soft-weighted positive and negative similarity terms per anchor, averaged."""
    loss, grad, _ = _multi_similarity(x, labels, cfg.alpha, cfg.beta, cfg.lam)
    return loss, grad


# --------------------------------------------------------------------------
# proxy (classification) losses
# --------------------------------------------------------------------------


def _check_proxy(x, labels, weights):
    x, labels = _check_batch(x, labels)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ValueError(f"weights must be (num_classes, {x.shape[1]}), got {w.shape}")
    if labels.min() < 0 or labels.max() >= w.shape[0]:
        raise ValueError(f"labels must lie in [0, {w.shape[0]}), got range [{labels.min()}, {labels.max()}]")
    return x, labels, w


def _cross_entropy(logits, labels):
    n = logits.shape[0]
    top = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - top)
    z = e.sum(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(z[:, 0])
    loss = (lse - logits[np.arange(n), labels]).mean()
    dlogits = e / z
    dlogits[np.arange(n), labels] -= 1.0
    return float(loss), dlogits / n


def _arcface(x, labels, weights, arc_margin, scale):
    x, labels, w = _check_proxy(x, labels, weights)
    n = x.shape[0]
    rows = np.arange(n)
    cos = x @ w.T
    c = cos[rows, labels]
    cc = np.clip(c, -1.0 + ARCFACE_EPS, 1.0 - ARCFACE_EPS)
    sin = np.sqrt(1.0 - cc * cc)
    logits = scale * cos
    # cos(theta + m) written without arccos; equal for theta in [0, pi]
    logits[rows, labels] = scale * (cc * np.cos(arc_margin) - sin * np.sin(arc_margin))
    loss, dlogits = _cross_entropy(logits, labels)
    dcos = scale * dlogits
    inside = (c > -1.0 + ARCFACE_EPS) & (c < 1.0 - ARCFACE_EPS)
    dtarget = np.where(inside, np.cos(arc_margin) + cc * np.sin(arc_margin) / sin, 0.0)
    dcos[rows, labels] = scale * dlogits[rows, labels] * dtarget
    gap = float(((1.0 - ARCFACE_EPS) - np.abs(c)).min())
    return loss, dcos @ w, dcos.T @ x, gap


def arcface_loss(x, labels, weights, cfg):
    """Cross-entropy over ``scale * cos(theta_j + [j == y] * arc_margin)``."""
    loss, gx, gw, _ = _arcface(x, labels, weights, cfg.arc_margin, cfg.scale)
    return loss, gx, gw


def _normalized_softmax(x, labels, weights, temperature):
    x, labels, w = _check_proxy(x, labels, weights)
    loss, dlogits = _cross_entropy((x @ w.T) / temperature, labels)
    dcos = dlogits / temperature
    return loss, dcos @ w, dcos.T @ x, np.inf


def normalized_softmax_loss(x, labels, weights, cfg):
    """Cross-entropy over ``cos(e, w_j) / temperature``."""
    loss, gx, gw, _ = _normalized_softmax(x, labels, weights, cfg.temperature)
    return loss, gx, gw


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------


def _evaluate(cfg, x, labels, weights=None):
    """``(loss, grad_x, grad_w or None, kink_gap)`` for any loss kind."""
    if cfg.kind == "contrastive":
        loss, gx, gap = _contrastive(x, labels, cfg.pos_margin, cfg.neg_margin)
        return loss, gx, None, gap
    if cfg.kind == "triplet":
        loss, gx, gap = _triplet(x, labels, cfg.margin)
        return loss, gx, None, gap
    if cfg.kind == "multi_similarity":
        loss, gx, gap = _multi_similarity(x, labels, cfg.alpha, cfg.beta, cfg.lam)
        return loss, gx, None, gap
    if weights is None:
        raise ValueError(f"{cfg.kind} needs class weights")
    if cfg.kind == "arcface":
        return _arcface(x, labels, weights, cfg.arc_margin, cfg.scale)
    return _normalized_softmax(x, labels, weights, cfg.temperature)


def compute_loss(cfg, x, labels, weights=None):
    """Loss value and gradients as ``(loss, grad_x, grad_w)``; ``grad_w`` is None for ranking losses."""
    loss, gx, gw, _ = _evaluate(cfg, x, labels, weights)
    return loss, gx, gw


# --------------------------------------------------------------------------
# finite-difference verification
# --------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    kind: str
    trials: int
    checked: int
    skipped: int
    max_rel_error: float
    tolerance: float
    failures: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures and self.checked > 0


def _unit_rows(a):
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def random_batch(rng, n_range=(4, 16), d_range=(4, 16)):
    """Random unit-norm batch where every class has at least two members."""
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    d = int(rng.integers(d_range[0], d_range[1] + 1))
    n_classes = int(rng.integers(2, n // 2 + 1))
    labels = rng.permutation(np.arange(n) % n_classes)
    return _unit_rows(rng.standard_normal((n, d))), labels, n_classes


def _central_diff(fn, arr, h):
    out = np.empty_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + h
        fp = fn()
        arr[idx] = orig - h
        fm = fn()
        arr[idx] = orig
        out[idx] = (fp - fm) / (2.0 * h)
    return out


def relative_error(analytic, numeric, scale_floor=1e-3):
    """Component-wise ``|a - n| / max(|a|, |n|, scale_floor * max|g|)``.

    The floor keeps components many orders of magnitude below the largest
    gradient entry from being judged against pure finite-difference noise.
    """
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-300)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), scale_floor * scale)
    return np.abs(analytic - numeric) / denom


def grad_check(
    kind,
    trials=50,
    tolerance=1e-4,
    h=1e-5,
    seed=0,
    cfg=None,
    kink_tol=None,
    scale_floor=1e-3,
    tamper=None,
):
    """Compare analytic gradients to central differences on random batches.

    Trials whose loss is exactly 0, or whose nearest hinge kink or clamp
    boundary is closer than ``kink_tol`` (default ``10 * h``), are skipped and
    noted. ``tamper(grad_x)`` may modify the analytic gradient in place; it
    exists so the harness can be shown to fail on a wrong gradient.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = cfg if cfg is not None else LossConfig(kind=kind)
    if cfg.kind != kind:
        raise ValueError("cfg.kind does not match kind")
    kink_tol = 10.0 * h if kink_tol is None else kink_tol
    rng = np.random.default_rng(seed)
    checked = skipped = 0
    worst = 0.0
    failures, notes = [], []
    for t in range(trials):
        x, labels, n_classes = random_batch(rng)
        w = _unit_rows(rng.standard_normal((n_classes, x.shape[1]))) if kind in PROXY_LOSSES else None
        loss, gx, gw, gap = _evaluate(cfg, x, labels, w)
        if loss == 0.0:
            skipped += 1
            notes.append(f"trial {t}: loss identically 0, skipped")
            continue
        if gap < kink_tol:
            skipped += 1
            notes.append(f"trial {t}: within {gap:.2e} of a kink, skipped")
            continue
        if tamper is not None:
            tamper(gx)
        num_x = _central_diff(lambda: _evaluate(cfg, x, labels, w)[0], x, h)
        err = relative_error(gx, num_x, scale_floor).max()
        if w is not None:
            num_w = _central_diff(lambda: _evaluate(cfg, x, labels, w)[0], w, h)
            err = max(err, relative_error(gw, num_w, scale_floor).max())
        checked += 1
        worst = max(worst, float(err))
        if not err < tolerance:
            failures.append((t, float(err)))
    return GradCheckReport(kind, trials, checked, skipped, worst, tolerance, failures, notes)
