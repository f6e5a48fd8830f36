"""``bgbench`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

from bgbench import __version__, corruption, focus, imaging, losses, retrieval
from bgbench.config import (
    ConfigError,
    build_run_config,
    dataclass_from_dict,
    load_config_file,
    require,
)
from bgbench.errors import BGBenchError

logger = logging.getLogger("bgbench")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "BGBENCH_THREADS"
# options that only steer argument handling and never go into a config
_META = {"command", "config", "func", "verbose"}


def resolve_threads(value):
    if value is None:
        env = os.environ.get(THREADS_ENV)
        if env is None or env == "":
            return 1
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}={env!r} is not an integer") from None
    if int(value) < 1:
        raise ConfigError("--threads must be >= 1")
    return int(value)


def _dump_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _files_by_stem(directory, suffixes):
    directory = Path(directory)
    if not directory.is_dir():
        raise BGBenchError(f"{directory} is not a directory")
    out = {}
    for p in sorted(directory.iterdir(), key=lambda p: p.name):
        if p.is_file() and p.suffix.lower() in suffixes:
            if p.stem in out:
                raise BGBenchError(f"{directory}: both {out[p.stem].name} and {p.name} have stem {p.stem!r}")
            out[p.stem] = p
    return out


def _read_labels(path):
    """``name,label`` CSV (header optional) keyed by file stem."""
    labels = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise BGBenchError(f"{path}:{lineno}: expected name,label")
            try:
                label = int(row[1])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise BGBenchError(f"{path}:{lineno}: label {row[1]!r} is not an integer") from None
            if label < 0:
                raise BGBenchError(f"{path}:{lineno}: label must be >= 0")
            labels[Path(row[0]).stem] = label
    return labels


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_corrupt(cfg):
    require(cfg, "images", "masks", "backgrounds", "out")
    threads = resolve_threads(cfg["threads"])
    seeds = cfg.seeds
    for s in seeds:
        if not 0 <= int(s) < 2**64:
            raise ConfigError(f"seed {s} out of range")

    images = _files_by_stem(cfg["images"], corruption.IMAGE_SUFFIXES)
    masks = _files_by_stem(cfg["masks"], corruption.IMAGE_SUFFIXES)
    labels = _read_labels(cfg["labels"]) if cfg["labels"] else None
    failures = []
    items = []
    for stem, img_path in images.items():
        if stem not in masks:
            failures.append(f"{img_path.name}: no mask with stem {stem!r} in {cfg['masks']}")
            continue
        if labels is not None and stem not in labels:
            failures.append(f"{img_path.name}: no label in {cfg['labels']}")
            continue
        items.append(corruption.ManifestItem(img_path, masks[stem], 0 if labels is None else labels[stem]))
    if not images:
        failures.append(f"no images found in {cfg['images']}")
    if failures:
        raise corruption.CorruptionError([(None, f) for f in failures])
    manifest = corruption.DatasetManifest(items)

    pool = corruption.load_pool(cfg["backgrounds"], cfg["pool_tag"])
    if cfg["train_pool_tag"] is not None:
        corruption.check_disjoint_pools(pool, cfg["train_pool_tag"])
    out = Path(cfg["out"])
    for s in seeds:
        target = out if len(seeds) == 1 else out / f"seed_{int(s)}"
        plan = corruption.plan_corruption(int(s), len(manifest), len(pool))
        corruption.corrupt_dataset(manifest, pool, plan, target, threads=threads)
        print(f"seed {int(s)}: wrote {len(manifest)} images to {target}")
    return EXIT_OK


def _self_report(path):
    emb = retrieval.load_embeddings(path)
    return retrieval.map_at_r(emb, emb, exclude_self=True)


def cmd_eval(cfg):
    require(cfg, "out")
    tags = {k: cfg[k] for k in ("loss", "method") if cfg[k] is not None}
    if cfg["runs"]:
        if cfg["clean"] is None:
            raise ConfigError("eval: --runs needs --clean")
        if cfg["query"] is not None or cfg["ref"] is not None:
            raise ConfigError("eval: use either --query/--ref or --clean/--runs")
        clean = _self_report(cfg["clean"])
        runs = [_self_report(p) for p in cfg["runs"]]
        summary = retrieval.compare_clean_corrupted(clean, runs)
        payload = {
            "clean": clean.to_dict(),
            "corrupted_runs": [r.to_dict() for r in runs],
            "summary": summary,
            **tags,
        }
        _dump_json(cfg["out"], payload)
        print(
            f"clean MAP@R {summary['clean_map_at_r']:.4f}  corrupted "
            f"{summary['corrupted_map_at_r_mean']:.4f} +/- {summary['corrupted_map_at_r_std']:.4f}"
        )
        return EXIT_OK
    require(cfg, "query")
    query = retrieval.load_embeddings(cfg["query"])
    ref = retrieval.load_embeddings(cfg["ref"]) if cfg["ref"] is not None else query
    # same-set retrieval excludes self matches unless configured otherwise
    exclude = cfg["self_exclude"] if cfg["self_exclude"] is not None else cfg["ref"] is None
    report = retrieval.map_at_r(query, ref, exclude_self=bool(exclude))
    _dump_json(cfg["out"], {**report.to_dict(), **tags})
    print(f"MAP@R {report.map_at_r:.4f}  P@1 {report.precision_at_1:.4f}  R-precision {report.r_precision:.4f}")
    return EXIT_OK


def cmd_focus(cfg):
    require(cfg, "masks", "attributions", "out")
    masks = _files_by_stem(cfg["masks"], corruption.IMAGE_SUFFIXES)
    maps = _files_by_stem(cfg["attributions"], (".att", ".att1", ".png"))
    missing = sorted(set(masks) ^ set(maps))
    if missing:
        raise BGBenchError(f"masks and attribution maps do not pair up: {missing}")
    stems = sorted(masks)
    pairs = [(imaging.binarize(imaging.load_mask(masks[s])), focus.load_attribution(maps[s])) for s in stems]
    report = focus.aggregate_focus(pairs)
    skipped = {i for i, _ in report.skipped_reasons}
    scored = [s for i, s in enumerate(stems) if i not in skipped]
    payload = report.to_dict()
    payload["per_image"] = {s: v for s, v in zip(scored, report.scores)}
    payload["skipped_images"] = {stems[i]: reason for i, reason in report.skipped_reasons}
    _dump_json(cfg["out"], payload)
    print(f"focus {report.mean:.4f} +/- {report.std:.4f} over {report.n} images ({report.skipped} skipped)")
    return EXIT_OK


def cmd_overlap(cfg):
    require(cfg, "generated", "ground_truth", "out")
    threshold = cfg.get("threshold", imaging.DEFAULT_THRESHOLD)
    gen = _files_by_stem(cfg["generated"], corruption.IMAGE_SUFFIXES)
    gt = _files_by_stem(cfg["ground_truth"], corruption.IMAGE_SUFFIXES)
    missing = sorted(set(gen) ^ set(gt))
    if missing:
        raise BGBenchError(f"generated and ground-truth masks do not pair up: {missing}")
    per_file, failures = {}, []
    for stem in sorted(gen):
        try:
            g = imaging.binarize(imaging.load_mask(gen[stem]), threshold)
            t = imaging.binarize(imaging.load_mask(gt[stem]), threshold)
            per_file[stem] = imaging.overlap(g, t)
        except BGBenchError as exc:
            failures.append(f"{stem}: {exc}")
    if failures:
        raise BGBenchError("overlap failed:\n  " + "\n  ".join(failures))
    values = list(per_file.values())
    mean, std = retrieval.mean_std(values)
    _dump_json(cfg["out"], {"mean": mean, "std": std, "n": len(values), "threshold": threshold, "per_file": per_file})
    print(f"overlap {mean:.4f} over {len(values)} masks")
    return EXIT_OK


def cmd_train_toy(cfg):
    from bgbench.toytrain import experiment, model
    from bgbench.toytrain.synthetic import SyntheticSpec, generate_synthetic, write_pool, write_split
    from bgbench.toytrain.train import TrainConfig

    require(cfg, "out")
    threads = resolve_threads(cfg["threads"])
    seeds = cfg.seeds if cfg["seed"] is not None else [0]
    if len(seeds) != 1:
        raise ConfigError("train-toy takes a single --seed")
    seed = int(seeds[0])

    train_section = dict(cfg.sections.get("train") or {})
    if "loss" in train_section:
        raise ConfigError("put loss settings under the top-level 'loss' key")
    loss_section = dict(cfg.sections.get("loss") or {})
    kind = cfg["loss"] or loss_section.get("kind", "contrastive")
    loss_section["kind"] = kind
    if not cfg.sections.get("loss"):
        loss_section = {**experiment.TOY_LOSS_OVERRIDES.get(kind, {}), **loss_section}
    try:
        loss_cfg = losses.LossConfig.from_dict(loss_section)
    except ValueError as exc:
        raise ConfigError(f"invalid loss config: {exc}") from None
    for flag, key in (("epochs", "epochs"), ("learning_rate", "learning_rate")):
        if cfg[flag] is not None:
            train_section[key] = cfg[flag]
    if cfg["bgaugment"] is not None:
        train_section["bgaugment"] = bool(cfg["bgaugment"])
    train_section["seed"] = seed
    train_cfg = dataclass_from_dict(TrainConfig, {**train_section, "loss": loss_cfg}, "train config")
    data_section = {**(cfg.sections.get("data") or {}), "seed": seed}
    spec = dataclass_from_dict(SyntheticSpec, data_section, "data config")

    out = Path(cfg["out"])
    data = generate_synthetic(spec, threads=threads)
    if cfg["export_data"]:
        for name in ("train", "val", "test"):
            write_split(getattr(data, name), out / "data" / name)
        write_pool(data.train_pool, out / "data" / "train_pool")
        write_pool(data.test_pool, out / "data" / "test_pool")
    eval_kwargs = {"focus_images": cfg["focus_images"]}
    outcome, result = experiment.run_variant(data, train_cfg, **eval_kwargs)

    out.mkdir(parents=True, exist_ok=True)
    model.save_params(out / "params.mlp1", result.params)
    (out / "train_log.jsonl").write_text(result.log_lines(), encoding="utf-8")
    outcome["method"] = "bgaugment" if train_cfg.bgaugment else "vanilla"
    outcome["config"] = {"train": train_cfg.to_dict(), "data": asdict(spec)}
    _dump_json(out / "summary.json", outcome)
    s = outcome["summary"]
    print(
        f"{kind} {outcome['method']} seed {seed}: clean {s['clean_map_at_r']:.4f} "
        f"corrupted {s['corrupted_map_at_r_mean']:.4f} focus {outcome['focus']['mean']:.4f}"
    )
    return EXIT_OK


def _fmt(mean, std):
    if mean is None:
        return "n/a"
    if std is None or (isinstance(std, float) and math.isnan(std)):
        return f"{100 * mean:.2f}"
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def aggregate_reports(payloads):
    """Group train-toy / eval summaries by loss and method.

    Each entry gets clean and corrupted MAP@R (mean and sample std over the
    merged reports), the mean relative drop and, if present, the mean focus.
    """
    groups = {}
    for p in payloads:
        if "summary" not in p:
            raise BGBenchError("report input lacks a 'summary' (use train-toy or eval --clean/--runs output)")
        method = p.get("method") or ("bgaugment" if p.get("bgaugment") else "vanilla")
        key = (p.get("loss") or "unknown", method)
        groups.setdefault(key, []).append(p)
    table = []
    for (loss, method), items in sorted(groups.items()):
        clean = [it["summary"]["clean_map_at_r"] for it in items]
        corrupted = [it["summary"]["corrupted_map_at_r_mean"] for it in items]
        drops = [it["summary"]["relative_drop"] for it in items if it["summary"].get("relative_drop") is not None]
        foc = [it["focus"]["mean"] for it in items if "focus" in it]
        row = {
            "loss": loss,
            "method": method,
            "n": len(items),
            "seeds": sorted(it["seed"] for it in items if "seed" in it),
            "clean_mean": retrieval.mean_std(clean)[0],
            "clean_std": retrieval.mean_std(clean)[1],
            "corrupted_mean": retrieval.mean_std(corrupted)[0],
            # a single report keeps its spread over corruption seeds
            "corrupted_std": (
                items[0]["summary"]["corrupted_map_at_r_std"] if len(items) == 1 else retrieval.mean_std(corrupted)[1]
            ),
            "relative_drop_mean": retrieval.mean_std(drops)[0] if drops else None,
            "focus_mean": retrieval.mean_std(foc)[0] if foc else None,
        }
        table.append(row)
    return table


def render_markdown(table):
    """Methods as rows and a clean / corrupted column pair per loss."""
    loss_names = sorted({r["loss"] for r in table})
    methods = sorted({r["method"] for r in table}, key=lambda m: (m != "vanilla", m))
    cell = {(r["loss"], r["method"]): r for r in table}
    head = "| Method | " + " | ".join(f"{l} clean | {l} corrupted" for l in loss_names) + " |"
    sep = "|---|" + "---|---|" * len(loss_names)
    lines = ["MAP@R (%), mean ± std over seeds", "", head, sep]
    for m in methods:
        cells = []
        for l in loss_names:
            r = cell.get((l, m))
            if r is None:
                cells += ["", ""]
            else:
                cells += [_fmt(r["clean_mean"], r["clean_std"]), _fmt(r["corrupted_mean"], r["corrupted_std"])]
        lines.append(f"| {m} | " + " | ".join(cells) + " |")
    if any(r["focus_mean"] is not None for r in table):
        lines += ["", "Focus score on the clean test set (mean over seeds)", ""]
        lines.append("| Method | " + " | ".join(loss_names) + " |")
        lines.append("|---|" + "---|" * len(loss_names))
        for m in methods:
            vals = []
            for l in loss_names:
                r = cell.get((l, m))
                vals.append("" if r is None or r["focus_mean"] is None else f"{r['focus_mean']:.4f}")
            lines.append(f"| {m} | " + " | ".join(vals) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(cfg):
    require(cfg, "inputs", "out")
    payloads = []
    for p in sorted(cfg["inputs"]):
        with open(p, encoding="utf-8") as fh:
            try:
                payloads.append(json.load(fh))
            except json.JSONDecodeError as exc:
                raise BGBenchError(f"{p}: not valid JSON: {exc}") from None
    table = aggregate_reports(payloads)
    out = Path(cfg["out"])
    md = render_markdown(table)
    if out.suffix.lower() == ".json":
        _dump_json(out, {"rows": table})
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(md, encoding="utf-8")
    if cfg["json_out"]:
        _dump_json(cfg["json_out"], {"rows": table})
    sys.stdout.write(md)
    return EXIT_OK


def cmd_grad_check(cfg):
    kinds = cfg["loss_kinds"] or list(losses.LOSS_KINDS)
    trials = cfg.get("trials", 50)
    results, ok = {}, True
    for kind in kinds:
        if kind not in losses.LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {kind!r}")
        rep = losses.grad_check(kind, trials=trials, seed=cfg.get("grad_seed", 0))
        ok &= rep.passed
        results[kind] = {
            "passed": rep.passed,
            "checked": rep.checked,
            "skipped": rep.skipped,
            "max_rel_error": rep.max_rel_error,
            "tolerance": rep.tolerance,
        }
        print(f"{kind:20s} {'PASS' if rep.passed else 'FAIL'}  max rel err {rep.max_rel_error:.2e}  "
              f"({rep.checked} checked, {rep.skipped} skipped)")
    if cfg["out"]:
        _dump_json(cfg["out"], results)
    return EXIT_OK if ok else EXIT_FAILURE


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _seed(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="bgbench", description="Background-bias benchmark for metric learning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.set_defaults(func=func)
        return p

    p = command("corrupt", cmd_corrupt, "Replace image backgrounds with pool images, once per seed.")
    p.add_argument("--images", help="directory of input images")
    p.add_argument("--masks", help="directory of foreground masks, matched to images by file stem")
    p.add_argument("--backgrounds", help="directory of background images")
    p.add_argument("--out", help="output directory; one seed_<s> subdirectory per seed if several")
    p.add_argument("--seed", type=_seed, nargs="+", help="corruption seeds (default 0 1 2 3 4)")
    p.add_argument("--labels", help="optional name,label CSV; labels default to 0")
    p.add_argument("--pool-tag", help="identity tag of the background pool (default: its path)")
    p.add_argument("--train-pool-tag", help="refuse to run if the pool has this tag")
    p.add_argument("--threads", type=int)

    p = command("eval", cmd_eval, "MAP@R, P@1 and R-precision of EMB1 embeddings.")
    p.add_argument("--query", help="query embeddings")
    p.add_argument("--ref", help="reference embeddings (default: the query set)")
    p.add_argument("--self-exclude", action="store_true", default=None, help="drop each query from its own ranking (default when --ref is omitted)")
    p.add_argument("--clean", help="clean-set embeddings, used with --runs")
    p.add_argument("--runs", nargs="+", help="corrupted-set embeddings, one file per seed")
    p.add_argument("--loss", help="loss name recorded in the report")
    p.add_argument("--method", help="method name recorded in the report")
    p.add_argument("--out", help="report JSON path")

    p = command("focus", cmd_focus, "Foreground-focus score of attribution maps.")
    p.add_argument("--masks", help="directory of foreground masks")
    p.add_argument("--attributions", help="directory of ATT1 or PNG maps, matched by stem")
    p.add_argument("--out", help="report JSON path")

    p = command("overlap", cmd_overlap, "Overlap of generated masks with ground-truth masks.")
    p.add_argument("--generated", help="directory of generated masks")
    p.add_argument("--ground-truth", help="directory of ground-truth masks, matched by stem")
    p.add_argument("--threshold", type=float, help="binarization threshold (default 0.5)")
    p.add_argument("--out", help="report JSON path")

    p = command("train-toy", cmd_train_toy, "Train and evaluate the toy embedder on synthetic data.")
    p.add_argument("--loss", choices=losses.LOSS_KINDS)
    p.add_argument("--seed", type=_seed, nargs=1, help="data and training seed (default 0)")
    p.add_argument("--bgaugment", action="store_true", default=None)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", "--lr", type=float, dest="learning_rate")
    p.add_argument("--focus-images", type=int, help="score focus on the first N test images (default all)")
    p.add_argument("--export-data", action="store_true", default=None, help="also write the synthetic data as PNGs")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int)

    p = command("report", cmd_report, "Merge summaries into a clean/corrupted table per loss.")
    p.add_argument("--inputs", nargs="+", help="summary JSON files")
    p.add_argument("--out", help="Markdown (or .json) output path")
    p.add_argument("--json-out", help="also write the table as JSON")

    p = command("grad-check", cmd_grad_check, "Finite-difference check of the loss gradients.")
    p.add_argument("--loss-kinds", nargs="+", help="losses to check (default all)")
    p.add_argument("--trials", type=int)
    p.add_argument("--grad-seed", type=int)
    p.add_argument("--out", help="optional report JSON path")
    return parser


_SECTIONS = {"train-toy": ("loss", "train", "data")}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    flags = {k: v for k, v in vars(args).items() if k not in _META}
    try:
        file_data = load_config_file(args.config) if args.config else None
        cfg = build_run_config(args.command, flags, file_data, section_names=_SECTIONS.get(args.command, ()))
        return args.func(cfg)
    except ConfigError as exc:
        print(f"bgbench {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except corruption.CorruptionError as exc:
        print(f"bgbench {args.command}: {len(exc.failures)} item(s) failed:", file=sys.stderr)
        for index, msg in exc.failures:
            prefix = "" if index is None else f"[{index}] "
            print(f"  {prefix}{msg}", file=sys.stderr)
        return EXIT_FAILURE
    except (BGBenchError, OSError, ValueError) as exc:
        print(f"bgbench {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
