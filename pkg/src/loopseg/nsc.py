"""Non-referent sample conversion.

Converts a referent sample into a non-referent one by swapping its sentence
for a foreign sentence drawn from a pool, guarded by three filters: the
candidate must come from a different image, must be longer than
``min_words`` words, and must score below ``max_similarity`` against the
original sentence (mean of Jaccard and term-frequency cosine similarity).
Selected samples lose their masks and gain the non-referent flag; everything
else passes through untouched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .fixtures import Sample
from .rng import Rng
from .validation import check_positive, check_unit

_WORD_RE = re.compile(r"[a-z0-9]+")


def tokenize(sentence: str) -> list[str]:
    """Lowercase words: maximal alphanumeric runs, everything else a separator."""
    return _WORD_RE.findall(sentence.lower())


def words_of(sentence) -> list[str]:
    """Word list for either a raw string or an integer-token sentence."""
    if isinstance(sentence, str):
        return tokenize(sentence)
    return [str(int(t)) for t in sentence]


def jaccard(s1, s2) -> float:
    """Set overlap of the two word sets; 0 when both are empty."""
    a, b = set(words_of(s1)), set(words_of(s2))
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def cosine_tf(s1, s2) -> float:
    """Cosine of term-frequency vectors over the union vocabulary."""
    w1, w2 = words_of(s1), words_of(s2)
    if not w1 or not w2:
        return 0.0
    vocab = sorted(set(w1) | set(w2))
    c1 = [w1.count(v) for v in vocab]
    c2 = [w2.count(v) for v in vocab]
    dot = sum(a * b for a, b in zip(c1, c2))
    n1 = sum(a * a for a in c1) ** 0.5
    n2 = sum(b * b for b in c2) ** 0.5
    if n1 == 0.0 or n2 == 0.0:
        return 0.0
    return dot / (n1 * n2)


def similarity(s1, s2) -> float:
    """Mean of Jaccard and term-frequency cosine similarity, in [0, 1]."""
    return 0.5 * (jaccard(s1, s2) + cosine_tf(s1, s2))


@dataclass(frozen=True)
class NscConfig:
    convert_rate: float = 0.15
    min_words: int = 2
    max_similarity: float = 0.6
    max_attempts: int = 50

    def validate(self) -> "NscConfig":
        check_unit(self.convert_rate, "convert_rate")
        check_positive(self.min_words, "min_words")
        check_unit(self.max_similarity, "max_similarity")
        check_positive(self.max_attempts, "max_attempts")
        return self


@dataclass(frozen=True)
class SentencePool:
    """Candidate sentences with their source image ids."""

    entries: tuple[tuple[int, object], ...]

    @classmethod
    def from_samples(cls, samples) -> "SentencePool":
        entries = []
        for s in samples:
            if isinstance(s.sentence, str):
                if not s.sentence.strip():
                    continue
            elif not len(s.sentence):
                continue
            entries.append((int(s.image_id), s.sentence))
        return cls(entries=tuple(entries))

    def __len__(self):
        return len(self.entries)


def passes_filters(candidate, sample: Sample, cfg: NscConfig) -> bool:
    """Three-level check for one candidate (image_id, sentence) pair:
    foreign image, word count strictly above ``min_words``, similarity to the
    sample's sentence strictly below ``max_similarity``."""
    cand_image, cand_sentence = candidate
    if int(cand_image) == int(sample.image_id):
        return False
    if len(words_of(cand_sentence)) <= cfg.min_words:
        return False
    return similarity(cand_sentence, sample.sentence) < cfg.max_similarity


def _convert_one(sample: Sample, pool: SentencePool, cfg: NscConfig, rng: Rng) -> Sample:
    if sample.is_nonreferent:
        return sample
    if not rng.bernoulli(cfg.convert_rate):
        return sample
    for _ in range(cfg.max_attempts):
        candidate = pool.entries[rng.below(len(pool))]
        if passes_filters(candidate, sample, cfg):
            return replace(
                sample, sentence=candidate[1], gt_masks=[], is_nonreferent=True
            )
    return sample


def convert_dataset(samples, pool: SentencePool, cfg: NscConfig, rng: Rng) -> list[Sample]:
    """Apply the conversion independently per sample.

    Each sample uses a child stream keyed by its index, so results do not
    depend on iteration order. Non-referent inputs are never touched; a
    selected sample that exhausts ``max_attempts`` without a passing
    candidate is kept as-is.
    """
    cfg.validate()
    if len(pool) == 0:
        raise ValueError("sentence pool is empty")
    return [
        _convert_one(sample, pool, cfg, rng.spawn("nsc", i))
        for i, sample in enumerate(samples)
    ]


def audit_conversion(original, augmented, pool: SentencePool, cfg: NscConfig) -> list[str]:
    """Post-hoc check of every converted line against the three filters plus
    the structural guarantees (empty GT, flag set, non-referents untouched).
    Returns human-readable violation strings; empty means clean."""
    problems = []
    if len(original) != len(augmented):
        return [f"length changed: {len(original)} -> {len(augmented)}"]
    by_sentence: dict = {}
    for image_id, sentence in pool.entries:
        key = repr(sentence)
        by_sentence.setdefault(key, set()).add(image_id)
    for i, (before, after) in enumerate(zip(original, augmented)):
        if before.is_nonreferent:
            if after.sentence != before.sentence or not after.is_nonreferent:
                problems.append(f"line {i}: non-referent input was modified")
            continue
        if not after.is_nonreferent:
            if after.sentence != before.sentence or len(after.gt_masks) != len(before.gt_masks):
                problems.append(f"line {i}: unconverted sample was modified")
            continue
        if after.gt_masks:
            problems.append(f"line {i}: converted sample kept {len(after.gt_masks)} masks")
        sources = by_sentence.get(repr(after.sentence), set())
        if not sources:
            problems.append(f"line {i}: replacement sentence not found in pool")
        elif sources == {int(before.image_id)}:
            problems.append(f"line {i}: replacement sentence only exists for the same image")
        if len(words_of(after.sentence)) <= cfg.min_words:
            problems.append(f"line {i}: replacement sentence too short")
        if similarity(after.sentence, before.sentence) >= cfg.max_similarity:
            problems.append(f"line {i}: replacement too similar to the original")
    return problems


class NonReferentConverter(BaseEstimator, TransformerMixin):
    """Dataset transformer wrapping :func:`convert_dataset`.

    ``fit`` collects the sentence pool from the training samples; ``transform``
    rewrites a sample list, converting referent samples with probability
    ``convert_rate`` subject to the three filters.
    """

    def __init__(self, convert_rate=0.15, min_words=2, max_similarity=0.6,
                 max_attempts=50, random_state=0):
        self.convert_rate = convert_rate
        self.min_words = min_words
        self.max_similarity = max_similarity
        self.max_attempts = max_attempts
        self.random_state = random_state

    def _config(self) -> NscConfig:
        return NscConfig(
            convert_rate=self.convert_rate,
            min_words=self.min_words,
            max_similarity=self.max_similarity,
            max_attempts=self.max_attempts,
        ).validate()

    def fit(self, X, y=None):
        self._config()
        self.pool_ = SentencePool.from_samples(X)
        if len(self.pool_) == 0:
            raise ValueError("cannot fit: no non-empty sentences in the samples")
        return self

    def transform(self, X):
        if not hasattr(self, "pool_"):
            raise NotFittedError("NonReferentConverter is not fitted; call fit first")
        return convert_dataset(X, self.pool_, self._config(), Rng(self.random_state))
