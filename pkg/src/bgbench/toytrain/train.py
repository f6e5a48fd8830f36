"""Deterministic mini-batch training of the toy embedder.

Batches hold ``classes_per_batch`` classes with ``samples_per_class`` images
each. With ``bgaugment`` on, every image in every batch gets a fresh
background from the training pool, keyed by ``(seed, step, item)``; the
validation set is corrupted once with the same pool. The checkpoint with the
best validation MAP@R is returned.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from bgbench import corruption, imaging, kernels, prng
from bgbench.errors import BGBenchError
from bgbench.losses import PROXY_LOSSES, LossConfig, compute_loss
from bgbench.retrieval import EmbeddingSet, map_at_r
from bgbench.toytrain import model

logger = logging.getLogger(__name__)

_VAL_STREAM = 0x5641_4C00  # salt for the validation corruption seed
_BG_STREAM = 0x4247_4100  # salt for per-step background draws
_INIT_STREAM = 0x494E_4954


class TrainingDivergedError(BGBenchError):
    pass


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 25
    classes_per_batch: int = 4
    samples_per_class: int = 4
    learning_rate: float = 0.05
    seed: int = 0
    bgaugment: bool = False
    hidden: int = 128
    embed_dim: int = 32
    init_scale: float = 0.1

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig.from_dict(self.loss)
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning_rate must be >= 0")
        if self.classes_per_batch < 2 or self.samples_per_class < 2:
            raise ValueError("batches need >= 2 classes with >= 2 samples each")

    @property
    def batch_size(self):
        return self.classes_per_batch * self.samples_per_class

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown train config keys: {unknown}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        return d


@dataclass
class TrainResult:
    params: model.EmbedderParams
    log: list
    best_epoch: int
    best_val_map_at_r: float
    proxies: np.ndarray = None

    def log_lines(self):
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.log)


def _unit_rows(a):
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def sample_batch(rng, labels, classes_per_batch, samples_per_class):
    """Indices of a balanced P x K batch."""
    classes = np.unique(labels)
    chosen = rng.choice(classes, size=min(classes_per_batch, len(classes)), replace=False)
    out = []
    for c in chosen:
        members = np.flatnonzero(labels == c)
        out.append(rng.choice(members, size=samples_per_class, replace=len(members) < samples_per_class))
    return np.concatenate(out)


def fitted_pool(pool, size):
    return np.stack([imaging.fit_background(b, size[0], size[1]) for b in pool.images])


def _validation_map(params, images, labels):
    emb = EmbeddingSet(model.embed_vectors(params, images), labels)
    return map_at_r(emb, emb, exclude_self=True).map_at_r


def train(train_split, val_split, cfg, pool=None):
    """Train an embedder; ``pool`` is required when ``cfg.bgaugment`` is set."""
    if cfg.bgaugment and pool is None:
        raise ValueError("bgaugment needs a training background pool")
    rng = np.random.default_rng([cfg.seed, _INIT_STREAM])
    h, w = train_split.images.shape[1:3]
    d_in = h * w * 3
    params = model.init_params(d_in, cfg.hidden, cfg.embed_dim, rng, cfg.init_scale)

    train_labels = np.asarray(train_split.labels)
    classes = np.unique(train_labels)
    class_index = np.searchsorted(classes, train_labels)
    proxy_raw = None
    if cfg.loss.kind in PROXY_LOSSES:
        proxy_raw = rng.standard_normal((len(classes), cfg.embed_dim))

    masks = np.asarray(train_split.masks, dtype=np.float64)
    bg_images = fitted_pool(pool, (h, w)) if cfg.bgaugment else None
    bg_seed = prng.derive_seed(cfg.seed, _BG_STREAM)

    val_images = val_split.images
    if cfg.bgaugment:
        plan = corruption.plan_corruption(prng.derive_seed(cfg.seed, _VAL_STREAM), len(val_split), len(pool))
        val_images = corruption.corrupt_arrays(val_split.images, val_split.masks, pool, plan)

    steps_per_epoch = max(1, int(np.ceil(len(train_split) / cfg.batch_size)))
    log = []
    best = (-1.0, 0, params.copy(), None if proxy_raw is None else proxy_raw.copy())
    if cfg.epochs == 0:
        score = _validation_map(params, val_images, val_split.labels)
        best = (score, 0, params.copy(), best[3])
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for _ in range(steps_per_epoch):
            idx = sample_batch(rng, train_labels, cfg.classes_per_batch, cfg.samples_per_class)
            images = train_split.images[idx]
            if cfg.bgaugment:
                b = corruption.training_background_indices(len(pool), step, idx, bg_seed)
                images = kernels.composite(images, masks[idx], bg_images[b])
            x = model.flatten(images)
            e, cache = model.forward(params, x)
            if proxy_raw is not None:
                norms = np.linalg.norm(proxy_raw, axis=1, keepdims=True)
                proxies = proxy_raw / norms
                loss, g_e, g_w = compute_loss(cfg.loss, e, class_index[idx], proxies)
                # chain rule through the row normalization of the proxies
                g_raw = (g_w - proxies * np.sum(g_w * proxies, axis=1, keepdims=True)) / norms
            else:
                loss, g_e, _ = compute_loss(cfg.loss, e, train_labels[idx])
            if not np.isfinite(loss) or not np.all(np.isfinite(g_e)):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch}, step {step}; "
                    f"learning rate {cfg.learning_rate} may be too high"
                )
            grads = model.backward(params, cache, g_e)
            for p, g in zip(params.arrays(), grads.arrays()):
                p -= cfg.learning_rate * g
            if proxy_raw is not None:
                proxy_raw -= cfg.learning_rate * g_raw
            if not all(np.all(np.isfinite(p)) for p in params.arrays()):
                raise TrainingDivergedError(
                    f"non-finite parameters after epoch {epoch}, step {step}; "
                    f"learning rate {cfg.learning_rate} may be too high"
                )
            log.append({"step": step, "epoch": epoch, "loss": float(loss), "val_map_at_r": None})
            step += 1
        score = _validation_map(params, val_images, val_split.labels)
        log[-1]["val_map_at_r"] = score
        if score >= best[0]:  # ties keep the later, longer-trained checkpoint
            best = (score, epoch, params.copy(), None if proxy_raw is None else proxy_raw.copy())
        logger.debug("epoch %d loss %.4f val MAP@R %.4f", epoch, log[-1]["loss"], score)
    score, best_epoch, best_params, best_proxies = best
    return TrainResult(
        best_params,
        log,
        best_epoch,
        score,
        None if best_proxies is None else _unit_rows(best_proxies),
    )
