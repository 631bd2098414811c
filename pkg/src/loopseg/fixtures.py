"""Synthetic dataset and encoder stand-in.

Samples carry instance masks plus an integer-token sentence; features are
seeded noise shaped like the multi-scale encoder outputs the decoder expects.
Both are pure functions of (seed, config), so any artifact built from them
can be byte-compared across runs.

Annotation files are JSON Lines, one object per sample::

    {"image_id": int, "sentence": str | [int], "masks": [rle...], "nonreferent": bool}

with masks RLE-encoded in annotation order (see :mod:`loopseg.masks`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .masks import decode_rle, encode_rle, rle_from_json, rle_to_json
from .rng import Rng, stable_hash
from .validation import check_mask, check_positive, check_unit


@dataclass
class Sample:
    """One image/sentence annotation. Empty ``gt_masks`` marks a non-referent."""

    image_id: int
    sentence: list[int] | str
    gt_masks: list[np.ndarray]
    is_nonreferent: bool


@dataclass
class FixtureConfig:
    height: int = 64
    width: int = 64
    max_instances: int = 3
    vocab_size: int = 50
    sentence_len: int = 8
    p_nonreferent: float = 0.09  # matches the observed non-referent rate in general-scenario data

    def validate(self) -> "FixtureConfig":
        if self.height < 8 or self.width < 8:
            raise ValueError(f"fixture size must be >= 8, got {self.height}x{self.width}")
        check_positive(self.max_instances, "max_instances")
        check_positive(self.vocab_size, "vocab_size")
        check_positive(self.sentence_len, "sentence_len")
        check_unit(self.p_nonreferent, "p_nonreferent")
        return self


@dataclass
class FeatureDims:
    """Shapes of the pseudo-encoder outputs at the working resolution."""

    height: int = 64
    width: int = 64
    channels: int = 32
    pyramid_strides: tuple[int, ...] = (32, 16, 8)
    mask_stride: int = 4
    grid_stride: int = 8

    def validate(self) -> "FeatureDims":
        check_positive(self.channels, "channels")
        strides = tuple(self.pyramid_strides) + (self.mask_stride, self.grid_stride)
        for s in strides:
            if self.height % s or self.width % s:
                raise ValueError(
                    f"resolution {self.height}x{self.width} not divisible by stride {s}"
                )
        if self.grid_stride <= self.mask_stride:
            raise ValueError("grid_stride must be coarser than mask_stride")
        return self


@dataclass
class FeatureBundle:
    """Stand-in encoder outputs for one sample.

    ``pyramid`` holds the coarse-to-fine perception levels, ``fine`` the
    stride-4 map feeding the mask head, ``grid`` the coarse visual map from
    the image-text side, and ``text`` the (L, C) token features.
    """

    pyramid: list[np.ndarray]
    fine: np.ndarray
    grid: np.ndarray
    text: np.ndarray


def _rand_rect(rng: Rng, h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=np.uint8)
    y0 = rng.below(h)
    x0 = rng.below(w)
    hh = 1 + rng.below(h - y0)
    ww = 1 + rng.below(w - x0)
    mask[y0 : y0 + hh, x0 : x0 + ww] = 1
    return mask


def _rand_ellipse(rng: Rng, h: int, w: int) -> np.ndarray:
    cy = rng.below(h)
    cx = rng.below(w)
    ry = 1 + rng.below(max(1, h // 4))
    rx = 1 + rng.below(max(1, w // 4))
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    inside = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
    return inside.astype(np.uint8)  # center pixel is always inside


def gen_sample(rng: Rng, cfg: FixtureConfig) -> Sample:
    """Draw one sample: a random sentence plus 1..max_instances masks, or an
    empty-target sample with probability ``p_nonreferent``."""
    cfg.validate()
    image_id = rng.below(10**9)
    sentence = [rng.below(cfg.vocab_size) for _ in range(cfg.sentence_len)]
    if rng.bernoulli(cfg.p_nonreferent):
        return Sample(image_id=image_id, sentence=sentence, gt_masks=[], is_nonreferent=True)
    count = 1 + rng.below(cfg.max_instances)
    masks = []
    for _ in range(count):
        if rng.below(2) == 0:
            masks.append(_rand_rect(rng, cfg.height, cfg.width))
        else:
            masks.append(_rand_ellipse(rng, cfg.height, cfg.width))
    return Sample(image_id=image_id, sentence=sentence, gt_masks=masks, is_nonreferent=False)


def gen_dataset(seed: int, cfg: FixtureConfig, count: int) -> list[Sample]:
    """Generate ``count`` samples; each one runs off its own child seed, so
    content never depends on generation order."""
    root = Rng(seed)
    return [gen_sample(root.spawn("sample", i), cfg) for i in range(count)]


def _sentence_key(sentence) -> tuple:
    if isinstance(sentence, str):
        return ("s", sentence)
    return ("t", tuple(int(t) for t in sentence))


def _sentence_length(sentence) -> int:
    if isinstance(sentence, str):
        return max(1, len(sentence.split()))
    return max(1, len(sentence))


def pseudo_features(sample: Sample, dims: FeatureDims, seed: int) -> FeatureBundle:
    """Deterministic encoder stand-in.

    Visual maps are keyed by (image_id, seed) and text features by
    (sentence, seed): samples sharing an image get identical visual maps
    regardless of sentence, and vice versa.
    """
    dims.validate()
    vis = Rng(stable_hash("visual", sample.image_id, seed))
    h, w, c = dims.height, dims.width, dims.channels
    pyramid = [vis.uniform(-1.0, 1.0, (c, h // s, w // s)) for s in dims.pyramid_strides]
    fine = vis.uniform(-1.0, 1.0, (c, h // dims.mask_stride, w // dims.mask_stride))
    grid = vis.uniform(-1.0, 1.0, (c, h // dims.grid_stride, w // dims.grid_stride))
    txt = Rng(stable_hash("text", _sentence_key(sample.sentence), seed))
    text = txt.uniform(-1.0, 1.0, (_sentence_length(sample.sentence), c))
    return FeatureBundle(pyramid=pyramid, fine=fine, grid=grid, text=text)


def sample_to_json(sample: Sample) -> dict:
    return {
        "image_id": int(sample.image_id),
        "sentence": sample.sentence if isinstance(sample.sentence, str)
        else [int(t) for t in sample.sentence],
        "masks": [rle_to_json(encode_rle(m)) for m in sample.gt_masks],
        "nonreferent": bool(sample.is_nonreferent),
    }


def sample_from_json(obj: dict) -> Sample:
    masks = [decode_rle(rle_from_json(m)) for m in obj.get("masks", [])]
    sample = Sample(
        image_id=int(obj["image_id"]),
        sentence=obj["sentence"],
        gt_masks=masks,
        is_nonreferent=bool(obj["nonreferent"]),
    )
    validate_sample(sample)
    return sample


def validate_sample(sample: Sample) -> None:
    if sample.is_nonreferent != (len(sample.gt_masks) == 0):
        raise ValueError(
            f"nonreferent flag {sample.is_nonreferent} inconsistent with "
            f"{len(sample.gt_masks)} masks (image {sample.image_id})"
        )
    shapes = {m.shape for m in map(check_mask, sample.gt_masks)}
    if len(shapes) > 1:
        raise ValueError(f"masks of image {sample.image_id} disagree on shape: {shapes}")
    for m in sample.gt_masks:
        if not m.any():
            raise ValueError(f"empty instance mask in image {sample.image_id}")


def dumps_line(obj: dict) -> str:
    # Canonical JSON so reruns are byte-identical.
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_annotations(samples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(dumps_line(sample_to_json(sample)) + "\n")


def load_annotations(path) -> list[Sample]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(sample_from_json(json.loads(line)))
    return out


def dataset_stats(samples) -> dict:
    n = len(samples)
    k = sum(1 for s in samples if s.is_nonreferent)
    return {
        "samples": n,
        "nonreferent": k,
        "nonreferent_fraction": (k / n) if n else 0.0,
        "instances": int(sum(len(s.gt_masks) for s in samples)),
    }
