"""Binary mask utilities: run-length codec, majority pooling, unions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_mask


@dataclass(frozen=True)
class RleMask:
    """Run-length encoded binary mask.

    ``runs`` alternate zero-runs and one-runs in row-major order, starting
    with the count of leading zeros (which is the only run allowed to be 0).
    """

    height: int
    width: int
    runs: tuple[int, ...]


def encode_rle(mask) -> RleMask:
    mask = check_mask(mask)
    h, w = mask.shape
    flat = mask.ravel().astype(np.int64)
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    lengths = np.diff(bounds).tolist()
    if flat[0] == 1:
        lengths = [0] + lengths
    return RleMask(height=h, width=w, runs=tuple(int(r) for r in lengths))


def decode_rle(rle: RleMask) -> np.ndarray:
    """Decode back to a (H, W) uint8 mask; malformed runs raise ValueError."""
    h, w = int(rle.height), int(rle.width)
    if h < 1 or w < 1:
        raise ValueError(f"invalid RLE size {h}x{w}")
    runs = [int(r) for r in rle.runs]
    if not runs:
        raise ValueError("RLE has no runs")
    if any(r < 0 for r in runs):
        raise ValueError(f"RLE runs must be nonnegative: {runs}")
    if any(r == 0 for r in runs[1:]):
        raise ValueError(f"only the leading zero-run may be empty: {runs}")
    if sum(runs) != h * w:
        raise ValueError(f"RLE runs sum to {sum(runs)}, expected {h * w}")
    values = np.arange(len(runs), dtype=np.int64) % 2
    return np.repeat(values, runs).astype(np.uint8).reshape(h, w)


def rle_to_json(rle: RleMask) -> dict:
    return {"height": rle.height, "width": rle.width, "runs": list(rle.runs)}


def rle_from_json(obj: dict) -> RleMask:
    try:
        return RleMask(
            height=int(obj["height"]),
            width=int(obj["width"]),
            runs=tuple(int(r) for r in obj["runs"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed RLE object: {obj!r}") from exc


def downsample_majority(mask, out_h: int, out_w: int) -> np.ndarray:
    """Block-pool a binary mask; an output pixel is 1 when foreground covers
    at least half of its block. Input dims must be multiples of the output.
    """
    mask = check_mask(mask)
    h, w = mask.shape
    if h % out_h or w % out_w:
        raise ValueError(f"cannot pool {h}x{w} onto {out_h}x{out_w} evenly")
    fh, fw = h // out_h, w // out_w
    blocks = mask.reshape(out_h, fh, out_w, fw).sum(axis=(1, 3))
    return (2 * blocks >= fh * fw).astype(np.uint8)


def union_masks(masks, shape=None) -> np.ndarray:
    """Pixelwise OR over a list/stack of binary masks; ``shape`` supplies the
    output size when the collection is empty."""
    stack = [check_mask(m) for m in masks]
    if not stack:
        if shape is None:
            raise ValueError("union of zero masks needs an explicit shape")
        return np.zeros(shape, dtype=np.uint8)
    out = np.zeros_like(stack[0], dtype=np.uint8)
    for m in stack:
        if m.shape != out.shape:
            raise ValueError(f"mask shapes disagree: {m.shape} vs {out.shape}")
        out |= m.astype(np.uint8)
    return out
