"""Vanilla-vs-BGAugment comparison on synthetic data.

For one loss and one training seed this trains both variants on the same
data, measures MAP@R on the clean test set and on several corrupted copies
of it, and scores occlusion-attribution focus on the clean test images.
"""

import logging
import time
from dataclasses import replace

import numpy as np

from bgbench import corruption, focus, retrieval
from bgbench.corruption import DEFAULT_SEEDS
from bgbench.toytrain import model
from bgbench.toytrain.occlusion import occlusion_attribution
from bgbench.losses import LossConfig
from bgbench.toytrain.train import TrainConfig, train

logger = logging.getLogger(__name__)

# loss overrides for the toy setting; the library default temperature is too
# sharp for an 8-class toy with plain gradient descent
TOY_LOSS_OVERRIDES = {"normalized_softmax": {"temperature": 0.1}}
TOY_LOSSES = ("contrastive", "normalized_softmax")


def toy_train_config(kind, seed=0, **overrides):
    """Training config used for the toy comparison of one loss."""
    loss = LossConfig(kind=kind, **TOY_LOSS_OVERRIDES.get(kind, {}))
    return TrainConfig(loss=loss, seed=seed, **overrides)


def evaluate_model(params, data, corruption_seeds=DEFAULT_SEEDS, focus_images=None, patch=4, stride=2):
    """Clean/corrupted MAP@R and clean-set focus for one trained embedder."""
    test = data.test
    corruption.check_disjoint_pools(data.test_pool, data.train_pool.source_tag)
    clean = retrieval.EmbeddingSet(model.embed_vectors(params, test.images), test.labels)
    clean_report = retrieval.map_at_r(clean, clean, exclude_self=True)
    runs = []
    for s in corruption_seeds:
        plan = corruption.plan_corruption(s, len(test), len(data.test_pool))
        images = corruption.corrupt_arrays(test.images, test.masks, data.test_pool, plan)
        emb = retrieval.EmbeddingSet(model.embed_vectors(params, images), test.labels)
        runs.append(retrieval.map_at_r(emb, emb, exclude_self=True))
    summary = retrieval.compare_clean_corrupted(clean_report, runs)
    n = len(test) if focus_images is None else min(focus_images, len(test))
    pairs = (
        (test.masks[i], occlusion_attribution(params, test.images[i], patch, stride)) for i in range(n)
    )
    fr = focus.aggregate_focus(pairs)
    return {
        "clean": clean_report.to_dict(),
        "corrupted_runs": [r.to_dict() for r in runs],
        "summary": summary,
        "focus": fr.to_dict(),
    }


def run_variant(data, cfg, **eval_kwargs):
    t0 = time.perf_counter()
    result = train(data.train, data.val, cfg, pool=data.train_pool if cfg.bgaugment else None)
    out = evaluate_model(result.params, data, **eval_kwargs)
    out.update(
        loss=cfg.loss.kind,
        seed=cfg.seed,
        bgaugment=cfg.bgaugment,
        best_epoch=result.best_epoch,
        best_val_map_at_r=result.best_val_map_at_r,
    )
    logger.info(
        "%s seed=%d bgaugment=%s clean=%.4f corrupted=%.4f focus=%.3f (%.1fs)",
        cfg.loss.kind,
        cfg.seed,
        cfg.bgaugment,
        out["summary"]["clean_map_at_r"],
        out["summary"]["corrupted_map_at_r_mean"],
        out["focus"]["mean"],
        time.perf_counter() - t0,
    )
    return out, result


def compare_variants(data, cfg, **eval_kwargs):
    """Train and evaluate both variants with otherwise identical settings."""
    vanilla, _ = run_variant(data, replace(cfg, bgaugment=False), **eval_kwargs)
    augmented, _ = run_variant(data, replace(cfg, bgaugment=True), **eval_kwargs)
    return {"vanilla": vanilla, "bgaugment": augmented}


def run_grid(kinds=TOY_LOSSES, seeds=DEFAULT_SEEDS, spec_overrides=None, **eval_kwargs):
    """Full vanilla-vs-BGAugment grid; returns ``{kind: summarize_grid(...)}``."""
    from bgbench.toytrain.synthetic import SyntheticSpec, generate_synthetic

    datasets = {s: generate_synthetic(SyntheticSpec(seed=s, **(spec_overrides or {}))) for s in seeds}
    out = {}
    for kind in kinds:
        results = [compare_variants(datasets[s], toy_train_config(kind, seed=s), **eval_kwargs) for s in seeds]
        out[kind] = summarize_grid(results)
    return out


def summarize_grid(results):
    """Aggregate ``compare_variants`` outputs of several seeds for one loss."""
    def col(variant, key):
        return np.array([r[variant]["summary"][key] for r in results], dtype=float)

    def rel(variant):
        return np.array([r[variant]["summary"]["relative_drop"] for r in results], dtype=float)

    def foc(variant):
        return np.array([r[variant]["focus"]["mean"] for r in results], dtype=float)

    return {
        "seeds": [r["vanilla"]["seed"] for r in results],
        "vanilla_clean": col("vanilla", "clean_map_at_r").tolist(),
        "vanilla_corrupted": col("vanilla", "corrupted_map_at_r_mean").tolist(),
        "bgaugment_clean": col("bgaugment", "clean_map_at_r").tolist(),
        "bgaugment_corrupted": col("bgaugment", "corrupted_map_at_r_mean").tolist(),
        "vanilla_relative_drop_mean": float(rel("vanilla").mean()),
        "bgaugment_relative_drop_mean": float(rel("bgaugment").mean()),
        "bgaugment_wins_corrupted": int((col("bgaugment", "corrupted_map_at_r_mean") > col("vanilla", "corrupted_map_at_r_mean")).sum()),
        "vanilla_focus": foc("vanilla").tolist(),
        "bgaugment_focus": foc("bgaugment").tolist(),
        "bgaugment_wins_focus": int((foc("bgaugment") > foc("vanilla")).sum()),
    }
