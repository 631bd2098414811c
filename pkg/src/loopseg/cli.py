"""Batch command-line surface.

Subcommands: ``gen`` (synthetic annotations), ``augment`` (non-referent
sample conversion with a post-hoc audit), ``forward`` (decoder pass over an
annotation file), ``eval`` (metrics report), ``verify`` (oracle suite).

Every command is deterministic under a fixed ``--seed`` (``DERIS_SEED`` is
the environment fallback). Options resolve flag > config file > built-in
default; the config file is a single JSON document with the sections shown
in ``DEFAULTS``. Exit codes: 0 success, 1 invariant or audit failure,
2 usage error.
"""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from . import verify as verify_mod
from .decoder import LoopbackDecoder, predict_targets
from .fixtures import (
    FeatureDims,
    FixtureConfig,
    dataset_stats,
    dumps_line,
    gen_dataset,
    load_annotations,
    pseudo_features,
    save_annotations,
)
from .losses import LossWeights, round_loss, total_loss
from .masks import decode_rle, downsample_majority, encode_rle, rle_from_json, rle_to_json, union_masks
from .matching import hungarian, match_cost
from .metrics import evaluate, sample_iou
from .nsc import NscConfig, SentencePool, audit_conversion, convert_dataset
from .numerics import sigmoid
from .rng import Rng

DEFAULTS = {
    "seed": 0,
    "fixtures": {
        "samples": 200,
        "height": 64,
        "width": 64,
        "max_instances": 3,
        "vocab_size": 50,
        "sentence_len": 8,
        "p_nonreferent": 0.09,
    },
    "features": {"channels": 32, "grid_stride": 8},
    "decoder": {"n_queries": 20, "rounds": 3, "width": 32, "heads": 4, "points": 4},
    "loss": {"mask": 1.0, "referent": 1.0, "existence": 1.0, "aux": 0.2},
    "nsc": {"rc": 0.15, "nw": 2, "ts": 0.6, "max_attempts": 50},
    "inference": {"t_ref": 0.7, "use_pnr": True},
}


def _load_config(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return cfg


def _pick(flag, cfg, section, key):
    if flag is not None:
        return flag
    if section is None:
        return cfg.get(key, DEFAULTS[key])
    return cfg.get(section, {}).get(key, DEFAULTS[section][key])


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _loss_report(result, sample, mask_stride: int, weights: LossWeights) -> dict:
    """Per-sample loss dump: per-round matched losses plus the aux-weighted
    total. Matching is recomputed for every round against the GT masks
    pooled to the mask-head resolution."""
    if sample.gt_masks:
        h, w = sample.gt_masks[0].shape
        gt_small = np.stack([
            downsample_majority(m, h // mask_stride, w // mask_stride)
            for m in sample.gt_masks
        ]).astype(np.float64)
    else:
        gt_small = np.zeros((0,) + result.rounds[0].mask_logits.shape[1:])
    exists = not sample.is_nonreferent
    last = len(result.rounds) - 1
    rounds = []
    for i, r in enumerate(result.rounds):
        cost = match_cost(r.mask_logits, r.referent_logits, gt_small)
        match = hungarian(cost)
        rounds.append(round_loss(
            r.mask_logits, r.referent_logits, gt_small, match.pairs, weights,
            existence_logit=result.existence_logit if i == last else None,
            exists=exists if i == last else None,
        ))
    return {
        "l_mask": [r.mask_term for r in rounds],
        "l_r": [r.referent_term for r in rounds],
        "l_nr": [r.existence_term for r in rounds],
        "per_round": [r.total for r in rounds],
        "total": total_loss([r.total for r in rounds], aux_weight=weights.aux),
        "weights": {"mask": weights.mask, "referent": weights.referent,
                    "existence": weights.existence, "aux": weights.aux},
    }


@click.group()
def main():
    """Loopback referring-segmentation toolkit on synthetic fixtures."""


config_option = click.option(
    "--config", "config_path",
    type=click.Path(exists=True, dir_okay=False), default=None,
    help="JSON config file; explicit flags win over it.",
)
seed_option = click.option(
    "--seed", type=int, default=None, envvar="DERIS_SEED",
    help="Master seed (env fallback DERIS_SEED).",
)


@main.command()
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False, writable=True))
@click.option("--n", "count", type=int, default=None, help="Sample count.")
@click.option("--height", type=int, default=None)
@click.option("--width", type=int, default=None)
@click.option("--max-instances", type=int, default=None)
@click.option("--vocab-size", type=int, default=None)
@click.option("--sentence-len", type=int, default=None)
@click.option("--p-nonreferent", type=float, default=None)
@seed_option
@config_option
def gen(out_path, count, height, width, max_instances, vocab_size, sentence_len,
        p_nonreferent, seed, config_path):
    """Write a synthetic JSONL annotation file and print dataset statistics."""
    cfg = _load_config(config_path)
    seed = _pick(seed, cfg, None, "seed")
    fixture = FixtureConfig(
        height=_pick(height, cfg, "fixtures", "height"),
        width=_pick(width, cfg, "fixtures", "width"),
        max_instances=_pick(max_instances, cfg, "fixtures", "max_instances"),
        vocab_size=_pick(vocab_size, cfg, "fixtures", "vocab_size"),
        sentence_len=_pick(sentence_len, cfg, "fixtures", "sentence_len"),
        p_nonreferent=_pick(p_nonreferent, cfg, "fixtures", "p_nonreferent"),
    )
    count = _pick(count, cfg, "fixtures", "samples")
    try:
        samples = gen_dataset(seed, fixture, count)
        save_annotations(samples, out_path)
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    stats = dataset_stats(samples)
    stats["seed"] = seed
    stats["path"] = out_path
    click.echo(json.dumps(stats, sort_keys=True))


@main.command()
@click.option("--input", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "out_path", required=True, type=click.Path(dir_okay=False, writable=True))
@click.option("--rc", type=float, default=None, help="Conversion probability.")
@click.option("--nw", type=int, default=None, help="Minimum word count (strict).")
@click.option("--ts", type=float, default=None, help="Similarity ceiling (strict).")
@click.option("--max-attempts", type=int, default=None)
@seed_option
@config_option
def augment(in_path, out_path, rc, nw, ts, max_attempts, seed, config_path):
    """Convert referent samples to non-referent ones and audit the result.

    The audit re-checks all three filters on every converted line; any
    violation exits nonzero.
    """
    cfg = _load_config(config_path)
    seed = _pick(seed, cfg, None, "seed")
    nsc_cfg = NscConfig(
        convert_rate=_pick(rc, cfg, "nsc", "rc"),
        min_words=_pick(nw, cfg, "nsc", "nw"),
        max_similarity=_pick(ts, cfg, "nsc", "ts"),
        max_attempts=_pick(max_attempts, cfg, "nsc", "max_attempts"),
    )
    try:
        samples = load_annotations(in_path)
        pool = SentencePool.from_samples(samples)
        converted = convert_dataset(samples, pool, nsc_cfg, Rng(seed))
        save_annotations(converted, out_path)
        problems = audit_conversion(samples, converted, pool, nsc_cfg)
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    n_converted = sum(
        1 for before, after in zip(samples, converted)
        if after.is_nonreferent and not before.is_nonreferent
    )
    referent_total = sum(1 for s in samples if not s.is_nonreferent)
    summary = {
        "samples": len(samples),
        "referent_samples": referent_total,
        "converted": n_converted,
        "conversion_rate": (n_converted / referent_total) if referent_total else 0.0,
        "violations": len(problems),
        "seed": seed,
        "path": out_path,
    }
    click.echo(json.dumps(summary, sort_keys=True))
    if problems:
        for p in problems:
            click.echo(f"audit: {p}", err=True)
        sys.exit(1)


@main.command()
@click.option("--annotations", "ann_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--predictions", "pred_path", required=True, type=click.Path(dir_okay=False, writable=True))
@click.option("--dump", "dump_path", type=click.Path(dir_okay=False, writable=True), default=None,
              help="Optional per-round JSON dump.")
@click.option("--loss-dump", "loss_path", type=click.Path(dir_okay=False, writable=True), default=None,
              help="Optional per-sample matched-loss JSONL dump.")
@click.option("--queries", "n_queries", type=int, default=None)
@click.option("--rounds", type=int, default=None)
@click.option("--width", type=int, default=None)
@click.option("--heads", type=int, default=None)
@click.option("--points", type=int, default=None)
@click.option("--channels", type=int, default=None)
@click.option("--grid-stride", type=int, default=None)
@click.option("--height", type=int, default=None)
@click.option("--img-width", "img_width", type=int, default=None,
              help="Working resolution width (distinct from decoder --width).")
@click.option("--t-ref", "t_ref", type=float, default=None)
@click.option("--use-pnr/--no-use-pnr", "use_pnr", default=None,
              help="Gate query scores by the existence probability.")
@seed_option
@config_option
def forward(ann_path, pred_path, dump_path, loss_path, n_queries, rounds, width, heads,
            points, channels, grid_stride, height, img_width, t_ref, use_pnr, seed,
            config_path):
    """Run the decoder over an annotation file; write predictions and a dump."""
    cfg = _load_config(config_path)
    seed = _pick(seed, cfg, None, "seed")
    weights = LossWeights(
        mask=_pick(None, cfg, "loss", "mask"),
        referent=_pick(None, cfg, "loss", "referent"),
        existence=_pick(None, cfg, "loss", "existence"),
        aux=_pick(None, cfg, "loss", "aux"),
    )
    dims = FeatureDims(
        height=_pick(height, cfg, "fixtures", "height"),
        width=_pick(img_width, cfg, "fixtures", "width"),
        channels=_pick(channels, cfg, "features", "channels"),
        grid_stride=_pick(grid_stride, cfg, "features", "grid_stride"),
    )
    decoder = LoopbackDecoder(
        n_queries=_pick(n_queries, cfg, "decoder", "n_queries"),
        rounds=_pick(rounds, cfg, "decoder", "rounds"),
        width=_pick(width, cfg, "decoder", "width"),
        heads=_pick(heads, cfg, "decoder", "heads"),
        points=_pick(points, cfg, "decoder", "points"),
        threshold=_pick(t_ref, cfg, "inference", "t_ref"),
        use_existence=_pick(use_pnr, cfg, "inference", "use_pnr"),
        random_state=seed,
    )
    try:
        samples = load_annotations(ann_path)
        if not samples:
            raise ValueError(f"annotation file {ann_path} is empty")
        for s in samples:
            for m in s.gt_masks:
                if m.shape != (dims.height, dims.width):
                    raise ValueError(
                        f"mask shape {m.shape} of image {s.image_id} does not match "
                        f"working resolution {dims.height}x{dims.width}"
                    )
        bundles = [pseudo_features(s, dims, seed) for s in samples]
        decoder.fit(bundles[0])
        dump_records = []
        loss_records = []
        with open(pred_path, "w", encoding="utf-8") as fh:
            for i, (sample, bundle) in enumerate(zip(samples, bundles)):
                result = decoder.forward(bundle)
                existence_prob = float(sigmoid(np.asarray(result.existence_logit)))
                pred = predict_targets(
                    result.final, existence_prob,
                    threshold=decoder.threshold, use_existence=decoder.use_existence,
                )
                mask_json = None if pred.empty else rle_to_json(encode_rle(pred.union_mask))
                fh.write(dumps_line({
                    "image_id": int(sample.image_id),
                    "sentence_id": i,
                    "mask": mask_json,
                }) + "\n")
                dump_records.append({
                    "sentence_id": i,
                    "image_id": int(sample.image_id),
                    "rounds": [
                        {"referent_probs": [float(v) for v in sigmoid(r.referent_logits)]}
                        for r in result.rounds
                    ],
                    "existence_prob": existence_prob,
                    "selected": list(pred.selected),
                    "empty": pred.empty,
                    "union_mask": mask_json,
                })
                if loss_path is not None:
                    record = _loss_report(result, sample, dims.mask_stride, weights)
                    record["sentence_id"] = i
                    loss_records.append(record)
        if loss_path is not None:
            with open(loss_path, "w", encoding="utf-8") as fh:
                for record in loss_records:
                    fh.write(dumps_line(record) + "\n")
        if dump_path is not None:
            dump = {
                "rounds": decoder.rounds,
                "queries": decoder.n_queries,
                "t_ref": decoder.threshold,
                "use_pnr": decoder.use_existence,
                "seed": seed,
                "samples": dump_records,
            }
            with open(dump_path, "w", encoding="utf-8") as fh:
                fh.write(dumps_line(dump) + "\n")
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    click.echo(json.dumps({
        "samples": len(samples),
        "empty_predictions": sum(1 for r in dump_records if r["empty"]),
        "predictions": pred_path,
        "seed": seed,
    }, sort_keys=True))


@main.command(name="eval")
@click.option("--predictions", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--annotations", "ann_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--stride", type=int, default=4, show_default=True,
              help="Evaluation grid stride relative to the annotation resolution.")
@click.option("--pr-thresholds", "pr_thresholds", type=str, default="0.9", show_default=True,
              help="Comma-separated precision thresholds.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, writable=True), default=None)
def eval_cmd(pred_path, ann_path, stride, pr_thresholds, out_path):
    """Score a prediction file against annotations; print the metrics report."""
    try:
        thresholds = tuple(float(x) for x in pr_thresholds.split(",") if x.strip())
        samples = load_annotations(ann_path)
        preds = {}
        with open(pred_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                preds[int(obj["sentence_id"])] = obj
        evals = []
        for i, sample in enumerate(samples):
            if i not in preds:
                raise ValueError(f"prediction file is missing sentence_id {i}")
            mask_obj = preds[i].get("mask")
            pred_mask = None if mask_obj is None else decode_rle(rle_from_json(mask_obj))
            if sample.gt_masks:
                full = union_masks(sample.gt_masks)
                h, w = full.shape
                if h % stride or w % stride:
                    raise ValueError(f"resolution {h}x{w} not divisible by stride {stride}")
                gt_small = downsample_majority(full, h // stride, w // stride)
            elif pred_mask is not None:
                gt_small = np.zeros(pred_mask.shape, dtype=np.uint8)
            else:
                gt_small = np.zeros((1, 1), dtype=np.uint8)
            if pred_mask is None:
                pred_mask = np.zeros(gt_small.shape, dtype=np.uint8)
            evals.append(sample_iou(pred_mask, gt_small))
        report = evaluate(evals, pr_thresholds=thresholds).to_dict()
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    text = json.dumps(report, sort_keys=True)
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    click.echo(text)


@main.command()
@click.option("--cases", type=int, default=1000, show_default=True,
              help="Random matrices for the assignment oracle.")
@seed_option
@click.option("--out", "out_path", type=click.Path(dir_okay=False, writable=True), default=None)
def verify(cases, seed, out_path):
    """Run all oracle checks; exit nonzero if any fails."""
    seed = 94621 if seed is None else seed
    results = verify_mod.run_all(seed=seed, matching_cases=cases)
    for r in results:
        click.echo(r.line())
    report = {
        "all_passed": all(r.passed for r in results),
        "checks": [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results],
    }
    text = json.dumps(report, sort_keys=True)
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    click.echo(text)
    if not report["all_passed"]:
        sys.exit(1)


if __name__ == "__main__":
    main()
