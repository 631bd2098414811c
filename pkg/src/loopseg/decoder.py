"""Loopback decoder: alternating perception and cognition layers over a
fixed number of rounds, with per-round independent weights.

Each round runs

1. a perception layer: deformable cross-attention of the queries into the
   multi-scale pyramid, self-attention across queries, then a mask head that
   dots each embedded query against the fused stride-4 feature map;
2. a cognition layer: mask-weighted pooling of the fused map as a spatial
   prior, instance-instance attention (keys shifted by the pooled prior),
   instance-text cross-attention, and a per-query referent score head;
3. query fusion: an MLP over the concatenated perception and cognition
   queries produces the next round's input queries.

The final round's cognition queries feed a pooled linear head whose sigmoid
is the probability that a referent exists at all; at inference that
probability can gate the per-query referent scores before thresholding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .fixtures import FeatureBundle
from .masks import union_masks
from .numerics import attention, bilinear_sample, layer_norm, linear, resize_bilinear, sigmoid, softmax
from .rng import Rng, stable_hash
from .validation import as_f64


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class Linear:
    w: np.ndarray
    b: np.ndarray

    def __call__(self, x):
        return linear(x, self.w, self.b)


@dataclass
class Mlp:
    layers: list[Linear]

    def __call__(self, x):
        for i, lin in enumerate(self.layers):
            x = lin(x)
            if i < len(self.layers) - 1:
                x = np.maximum(x, 0.0)
        return x


@dataclass
class Norm:
    gain: np.ndarray
    shift: np.ndarray


@dataclass
class AttentionBlock:
    """One residual multi-head attention sublayer (projections + post-norm)."""

    heads: int
    wq: Linear
    wk: Linear
    wv: Linear
    out: Linear
    norm: Norm


@dataclass
class DeformableBlock:
    """Deformable cross-attention: per query, a learned reference point plus
    predicted offsets select sampling locations on every pyramid level; the
    sampled values are mixed by softmax weights over (levels x points) per
    head."""

    heads: int
    points: int
    ref: Linear      # query -> 2 (sigmoid-normalized reference point)
    offsets: Linear  # query -> heads * levels * points * 2
    weights: Linear  # query -> heads * levels * points
    value: Linear    # feature channels -> width
    out: Linear
    norm: Norm


@dataclass
class PerceptionParams:
    deform: DeformableBlock
    self_attn: AttentionBlock
    mask_embed: Mlp  # 3 layers, width -> channels


@dataclass
class CognitionParams:
    inst_inst: AttentionBlock
    inst_text: AttentionBlock
    score: Mlp  # 2 layers, width -> 1


@dataclass
class RoundParams:
    perception: PerceptionParams
    cognition: CognitionParams
    fuse: Mlp  # 2 layers, 2*width -> width


@dataclass
class DecoderConfig:
    n_queries: int = 20
    rounds: int = 3
    width: int = 32
    heads: int = 4
    points: int = 4
    fuse_hidden: int | None = None  # hidden width of the fusion MLP (default 2*width)

    def validate(self) -> "DecoderConfig":
        if self.n_queries < 1 or self.rounds < 1:
            raise ValueError("need at least one query and one round")
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by {self.heads} heads")
        if self.points < 1:
            raise ValueError("need at least one sampling point per level")
        return self


@dataclass
class DecoderParams:
    config: DecoderConfig
    initial_queries: np.ndarray       # (N, width), consumed by round 1 only
    feature_fusion: Linear            # 1x1 projection, 2*channels -> channels
    rounds: list[RoundParams]         # independent weights per round
    existence: Linear                 # width -> 1, pooled over queries


@dataclass
class RoundOutput:
    perception_queries: np.ndarray  # (N, width)
    mask_logits: np.ndarray         # (N, h, w)
    cognition_queries: np.ndarray   # (N, width)
    referent_logits: np.ndarray     # (N,)
    fused_queries: np.ndarray       # (N, width)
    attention: dict = field(default_factory=dict)


@dataclass
class ForwardResult:
    rounds: list[RoundOutput]
    existence_logit: float

    @property
    def final(self) -> RoundOutput:
        return self.rounds[-1]


@dataclass(frozen=True)
class Prediction:
    selected: tuple[int, ...]
    scores: np.ndarray       # (N,) effective per-query scores after gating
    union_mask: np.ndarray   # (h, w) uint8 union of the selected masks
    empty: bool


# ---------------------------------------------------------------------------
# initialization


def _init_linear(rng: Rng, d_in: int, d_out: int) -> Linear:
    bound = 1.0 / np.sqrt(d_in)
    return Linear(
        w=rng.uniform(-bound, bound, (d_in, d_out)),
        b=rng.uniform(-bound, bound, (d_out,)),
    )


def _init_norm(width: int) -> Norm:
    return Norm(gain=np.ones(width), shift=np.zeros(width))


def _init_attention(rng: Rng, width: int, key_width: int, heads: int) -> AttentionBlock:
    return AttentionBlock(
        heads=heads,
        wq=_init_linear(rng, width, width),
        wk=_init_linear(rng, key_width, width),
        wv=_init_linear(rng, key_width, width),
        out=_init_linear(rng, width, width),
        norm=_init_norm(width),
    )


def init_decoder_params(channels: int, levels: int, cfg: DecoderConfig, rng: Rng) -> DecoderParams:
    """Materialize all weights from one stream, in a fixed draw order, so a
    seed pins the entire decoder bit-for-bit.

    The instance-instance relation adds the pooled map prior directly onto
    the queries, which requires feature channels == decoder width.
    """
    cfg.validate()
    if channels != cfg.width:
        raise ValueError(
            f"feature channels ({channels}) must equal decoder width ({cfg.width}): "
            "the pooled map prior is added onto the queries"
        )
    width = cfg.width
    fusion = _init_linear(rng, 2 * channels, channels)
    initial = rng.uniform(-1.0, 1.0, (cfg.n_queries, width))
    hidden = cfg.fuse_hidden or 2 * width
    rounds = []
    for _ in range(cfg.rounds):
        deform = DeformableBlock(
            heads=cfg.heads,
            points=cfg.points,
            ref=_init_linear(rng, width, 2),
            offsets=_init_linear(rng, width, cfg.heads * levels * cfg.points * 2),
            weights=_init_linear(rng, width, cfg.heads * levels * cfg.points),
            value=_init_linear(rng, channels, width),
            out=_init_linear(rng, width, width),
            norm=_init_norm(width),
        )
        perception = PerceptionParams(
            deform=deform,
            self_attn=_init_attention(rng, width, width, cfg.heads),
            mask_embed=Mlp([
                _init_linear(rng, width, width),
                _init_linear(rng, width, width),
                _init_linear(rng, width, channels),
            ]),
        )
        cognition = CognitionParams(
            inst_inst=_init_attention(rng, width, width, cfg.heads),
            inst_text=_init_attention(rng, width, channels, cfg.heads),
            score=Mlp([
                _init_linear(rng, width, width),
                _init_linear(rng, width, 1),
            ]),
        )
        fuse = Mlp([
            _init_linear(rng, 2 * width, hidden),
            _init_linear(rng, hidden, width),
        ])
        rounds.append(RoundParams(perception=perception, cognition=cognition, fuse=fuse))
    existence = _init_linear(rng, width, 1)
    return DecoderParams(
        config=cfg,
        initial_queries=initial,
        feature_fusion=fusion,
        rounds=rounds,
        existence=existence,
    )


# ---------------------------------------------------------------------------
# layers


def fuse_feature_map(fine, grid, fusion: Linear) -> np.ndarray:
    """Blend the coarse cognition grid into the stride-4 perception map:
    upsample, concatenate channelwise, project back with a per-pixel (1x1)
    linear map."""
    fine = as_f64(fine)
    grid = as_f64(grid)
    if fine.ndim != 3 or grid.ndim != 3:
        raise ValueError(f"expected (C, H, W) maps, got {fine.shape} and {grid.shape}")
    c, h, w = fine.shape
    if grid.shape[0] != c:
        raise ValueError(f"channel counts differ: {fine.shape} vs {grid.shape}")
    if fusion.w.shape != (2 * c, c):
        raise ValueError(f"fusion projection must be ({2*c}, {c}), got {fusion.w.shape}")
    upsampled = resize_bilinear(grid, h, w)
    stacked = np.concatenate([fine, upsampled], axis=0).reshape(2 * c, h * w)
    fused = fusion(stacked.T)
    return fused.T.reshape(c, h, w)


def _residual_attention(block: AttentionBlock, queries, keys, values):
    ctx, weights = attention(
        block.wq(queries), block.wk(keys), block.wv(values),
        block.heads, block.out.w, block.out.b, return_weights=True,
    )
    return layer_norm(queries + ctx, block.norm.gain, block.norm.shift), weights


def _deformable_attention(queries, pyramid, p: DeformableBlock):
    n, d = queries.shape
    levels = len(pyramid)
    dh = d // p.heads
    ref = sigmoid(p.ref(queries))  # (N, 2) in (0, 1)
    offsets = p.offsets(queries).reshape(n, p.heads, levels, p.points, 2)
    weights = softmax(p.weights(queries).reshape(n, p.heads, levels * p.points), axis=-1)
    gathered = np.empty((n, p.heads, levels, p.points, dh))
    for lvl, feat in enumerate(pyramid):
        c, hl, wl = feat.shape
        vmap = p.value(feat.reshape(c, hl * wl).T).T.reshape(d, hl, wl)
        # offsets live in cells of this level; scale into normalized coords
        pts = ref[:, None, None, :] + offsets[:, :, lvl, :, :] / np.array([wl, hl], dtype=np.float64)
        sampled = bilinear_sample(vmap, pts.reshape(-1, 2)).reshape(n, p.heads, p.points, d)
        for h in range(p.heads):
            gathered[:, h, lvl, :, :] = sampled[:, h, :, h * dh : (h + 1) * dh]
    mixed = (weights.reshape(n, p.heads, levels, p.points, 1) * gathered).sum(axis=(2, 3))
    out = p.out(mixed.reshape(n, d))
    return layer_norm(queries + out, p.norm.gain, p.norm.shift), weights


def perception_layer(queries, pyramid, fused_map, p: PerceptionParams):
    """Refine queries against the pyramid and decode one mask logit map per
    query. Returns (queries, mask_logits, attention weights)."""
    x, deform_w = _deformable_attention(queries, pyramid, p.deform)
    x, self_w = _residual_attention(p.self_attn, x, x, x)
    embed = p.mask_embed(x)  # (N, channels)
    c, h, w = fused_map.shape
    mask_logits = (embed @ fused_map.reshape(c, h * w)).reshape(-1, h, w)
    return x, mask_logits, {"deformable": deform_w, "self": self_w}


def mask_weighted_pool(fused_map, mask_logits) -> np.ndarray:
    """Spatial average of the fused map weighted by each query's mask
    probability: the perception prior handed to the cognition layer."""
    fused_map = as_f64(fused_map)
    probs = sigmoid(as_f64(mask_logits))
    c, h, w = fused_map.shape
    return np.einsum("chw,nhw->nc", fused_map, probs) / (h * w)


def cognition_layer(perception_queries, mask_logits, fused_map, text, p: CognitionParams):
    """Relate instances to each other (keys carry the mask-pooled prior) and
    to the text tokens; score each query's relevance to the expression.
    Returns (queries, referent_logits, attention weights)."""
    pooled = mask_weighted_pool(fused_map, mask_logits)
    x, inst_w = _residual_attention(
        p.inst_inst, perception_queries, perception_queries + pooled, perception_queries
    )
    x, text_w = _residual_attention(p.inst_text, x, text, text)
    scores = p.score(x).ravel()
    return x, scores, {"instance_instance": inst_w, "instance_text": text_w}


def fuse_queries(perception_queries, cognition_queries, fuse: Mlp) -> np.ndarray:
    """Per-query MLP over the concatenated branch outputs; produces the next
    round's input queries."""
    pq = as_f64(perception_queries)
    cq = as_f64(cognition_queries)
    if pq.shape != cq.shape:
        raise ValueError(f"query sets disagree: {pq.shape} vs {cq.shape}")
    return fuse(np.concatenate([pq, cq], axis=1))


def non_referent_head(cognition_queries, existence: Linear) -> float:
    """Pooled existence logit: per-query linear scores averaged over queries.
    Its sigmoid is the probability that a referent exists in the image."""
    logits = existence(as_f64(cognition_queries))
    return float(logits.mean())


def loopback_forward(bundle: FeatureBundle, params: DecoderParams) -> ForwardResult:
    """Run every round; round r > 1 consumes round r-1's fused queries. The
    fused feature map is computed once per forward pass."""
    fused = fuse_feature_map(bundle.fine, bundle.grid, params.feature_fusion)
    queries = params.initial_queries
    rounds = []
    for rp in params.rounds:
        pq, mask_logits, attn_p = perception_layer(queries, bundle.pyramid, fused, rp.perception)
        cq, scores, attn_c = cognition_layer(pq, mask_logits, fused, bundle.text, rp.cognition)
        fq = fuse_queries(pq, cq, rp.fuse)
        rounds.append(RoundOutput(
            perception_queries=pq,
            mask_logits=mask_logits,
            cognition_queries=cq,
            referent_logits=scores,
            fused_queries=fq,
            attention={**attn_p, **attn_c},
        ))
        queries = fq
    existence_logit = non_referent_head(rounds[-1].cognition_queries, params.existence)
    return ForwardResult(rounds=rounds, existence_logit=existence_logit)


def predict_targets(final_round: RoundOutput, existence_prob: float,
                    threshold: float = 0.7, use_existence: bool = True) -> Prediction:
    """Select queries whose (optionally existence-gated) referent probability
    exceeds the threshold and union their binarized masks.

    With gating on, each query's score is ``sigmoid(logit) * existence_prob``,
    so an unlikely referent suppresses every query at once.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    probs = sigmoid(final_round.referent_logits)
    gate = float(existence_prob) if use_existence else 1.0
    scores = probs * gate
    selected = np.flatnonzero(scores > threshold)
    shape = final_round.mask_logits.shape[1:]
    binarized = [
        (sigmoid(final_round.mask_logits[i]) > 0.5).astype(np.uint8) for i in selected
    ]
    union = union_masks(binarized, shape=shape)
    return Prediction(
        selected=tuple(int(i) for i in selected),
        scores=scores,
        union_mask=union,
        empty=selected.size == 0,
    )


# ---------------------------------------------------------------------------
# estimator facade


class LoopbackDecoder(BaseEstimator):
    """Seeded loopback decoder with a fit/predict surface.

    ``fit`` reads the feature geometry from an example bundle and
    materializes the weights from ``random_state`` (there is nothing to
    train here; weights are a deterministic function of the seed, exactly
    like a random-projection estimator). ``predict`` maps feature bundles to
    :class:`Prediction` objects; ``forward`` exposes the full per-round
    output for inspection and loss computation.
    """

    def __init__(self, n_queries=20, rounds=3, width=32, heads=4, points=4,
                 fuse_hidden=None, threshold=0.7, use_existence=True, random_state=0):
        self.n_queries = n_queries
        self.rounds = rounds
        self.width = width
        self.heads = heads
        self.points = points
        self.fuse_hidden = fuse_hidden
        self.threshold = threshold
        self.use_existence = use_existence
        self.random_state = random_state

    def _as_bundle(self, X) -> FeatureBundle:
        if isinstance(X, FeatureBundle):
            return X
        seq = list(X)
        if not seq:
            raise ValueError("need at least one feature bundle")
        return seq[0]

    def fit(self, X, y=None):
        bundle = self._as_bundle(X)
        cfg = DecoderConfig(
            n_queries=self.n_queries,
            rounds=self.rounds,
            width=self.width,
            heads=self.heads,
            points=self.points,
            fuse_hidden=self.fuse_hidden,
        )
        rng = Rng(stable_hash("decoder-init", int(self.random_state)))
        self.params_ = init_decoder_params(
            channels=bundle.fine.shape[0], levels=len(bundle.pyramid), cfg=cfg, rng=rng
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("LoopbackDecoder is not fitted; call fit first")

    def forward(self, bundle: FeatureBundle) -> ForwardResult:
        self._check_fitted()
        return loopback_forward(bundle, self.params_)

    def predict_one(self, bundle: FeatureBundle) -> Prediction:
        result = self.forward(bundle)
        return predict_targets(
            result.final, sigmoid(np.asarray(result.existence_logit)),
            threshold=self.threshold, use_existence=self.use_existence,
        )

    def predict(self, X) -> list[Prediction]:
        bundles = [X] if isinstance(X, FeatureBundle) else list(X)
        return [self.predict_one(b) for b in bundles]
