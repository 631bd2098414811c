"""Dense float64 tensor kernel: linear maps, normalizers, attention, sampling.

Arrays are plain C-order ``numpy.ndarray`` in float64 throughout; every
operation here is deterministic and keeps outputs finite for finite inputs.
"""

from __future__ import annotations

import numpy as np

from .validation import as_f64

LAYER_NORM_EPS = 1e-5


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = as_f64(a)
    b = as_f64(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def softmax(x, axis: int = -1) -> np.ndarray:
    """Softmax along ``axis``, max-subtracted for overflow safety."""
    x = as_f64(x)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(x):
    """Elementwise logistic function.

    Piecewise form keeps outputs strictly positive down to the subnormal
    range (sigmoid(-745) ~ 5e-324, never 0 or NaN), which the absolute-value
    trick alone does not guarantee.
    """
    x = as_f64(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def linear(x, w, b=None) -> np.ndarray:
    """Affine map applied to the last axis; leading axes broadcast through."""
    x = as_f64(x)
    w = as_f64(w)
    if w.ndim != 2:
        raise ValueError(f"weight must be 2-D, got shape {w.shape}")
    if x.shape[-1] != w.shape[0]:
        raise ValueError(
            f"linear: input width {x.shape[-1]} does not match weight {w.shape}"
        )
    out = x @ w
    if b is not None:
        b = as_f64(b)
        if b.shape != (w.shape[1],):
            raise ValueError(f"bias shape {b.shape} does not match weight {w.shape}")
        out = out + b
    return out


def layer_norm(x, gain=None, shift=None, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Normalize the last axis to mean 0 / variance 1, then apply gain and shift."""
    x = as_f64(x)
    mean = x.mean(axis=-1, keepdims=True)
    var = np.square(x - mean).mean(axis=-1, keepdims=True)
    out = (x - mean) / np.sqrt(var + eps)
    if gain is not None:
        out = out * as_f64(gain)
    if shift is not None:
        out = out + as_f64(shift)
    return out


def attention(q, k, v, heads: int, w_out=None, b_out=None, return_weights: bool = False):
    """Multi-head scaled dot-product attention.

    Args:
        q: (N, D) queries.
        k: (M, D) keys.
        v: (M, D) values.
        heads: head count; D must be divisible by it.
        w_out, b_out: optional output projection (identity when omitted).
        return_weights: also return the (heads, N, M) attention weights.

    Each head attends with scale 1/sqrt(D/heads); heads are concatenated and
    passed through the output projection.
    """
    q = as_f64(q)
    k = as_f64(k)
    v = as_f64(v)
    n, d = q.shape
    m = k.shape[0]
    if k.shape != (m, d) or v.shape != (m, d):
        raise ValueError(f"attention: shapes disagree: q{q.shape} k{k.shape} v{v.shape}")
    if d % heads != 0:
        raise ValueError(f"attention: width {d} not divisible by {heads} heads")
    dh = d // heads
    scale = 1.0 / np.sqrt(dh)
    out = np.empty((n, d))
    weights = np.empty((heads, n, m))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = (q[:, sl] @ k[:, sl].T) * scale
        w = softmax(scores, axis=-1)
        weights[h] = w
        out[:, sl] = w @ v[:, sl]
    if w_out is not None:
        out = linear(out, w_out, b_out)
    if return_weights:
        return out, weights
    return out


def bilinear_sample(feature_map, points) -> np.ndarray:
    """Bilinearly sample a (C, H, W) map at (P, 2) points.

    Points are (x, y) in [0, 1] with grid-cell centers at
    ((j + 0.5) / W, (i + 0.5) / H); sampling is exact at centers and
    out-of-range points clamp to the border. Returns (P, C).
    """
    fm = as_f64(feature_map)
    pts = as_f64(points)
    if fm.ndim != 3:
        raise ValueError(f"feature map must be (C, H, W), got {fm.shape}")
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points must be (P, 2), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("sampling points must be finite")
    c, h, w = fm.shape
    u = np.clip(pts[:, 0] * w - 0.5, 0.0, w - 1.0)
    v = np.clip(pts[:, 1] * h - 0.5, 0.0, h - 1.0)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = u - x0
    fy = v - y0
    flat = fm.reshape(c, h * w)
    top = flat[:, y0 * w + x0] * (1.0 - fx) + flat[:, y0 * w + x1] * fx
    bottom = flat[:, y1 * w + x0] * (1.0 - fx) + flat[:, y1 * w + x1] * fx
    return (top * (1.0 - fy) + bottom * fy).T


def resize_bilinear(feature_map, out_h: int, out_w: int) -> np.ndarray:
    """Resize a (C, H, W) map to (C, out_h, out_w) by center-aligned sampling."""
    fm = as_f64(feature_map)
    c = fm.shape[0]
    xs = (np.arange(out_w) + 0.5) / out_w
    ys = (np.arange(out_h) + 0.5) / out_h
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    sampled = bilinear_sample(fm, pts)
    return sampled.T.reshape(c, out_h, out_w)
