"""Deterministic planted-rule corpus generator for experiments and tests.

Entities are three-token phrases: a binary quality adjective, a cluster noun
shared within their cluster, and a unique id token. Each relation links one
cluster to another and is true exactly when head and tail qualities agree.
The stored KB samples a fraction of the true pairs as positives and a
fraction of the quality-disagreeing (false but type-compatible) pairs as
negated statements under a prefixed relation, ready for the true-negative
split rewrite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kb import KnowledgeBase, LabeledTriple, Phrase
from .samplers import AntonymLexicon

QUALITIES = ("bright", "dull")


@dataclass(frozen=True)
class SyntheticSpec:
    """Size and sampling knobs for one generated corpus."""

    clusters: int = 12
    cluster_size: int = 18
    relations: int = 24
    density: float = 0.85
    negative_fraction: float = 0.25
    phrase_tokens: int = 3
    negation_prefix: str = "Not"
    seed: int = 0

    def __post_init__(self):
        if self.clusters < 2:
            raise ValueError(f"need at least 2 clusters, got {self.clusters}")
        if self.phrase_tokens < 3:
            raise ValueError(f"phrase_tokens must be >= 3, got {self.phrase_tokens}")
        if self.cluster_size < 2 or self.cluster_size % 2:
            raise ValueError(
                f"cluster_size must be even and >= 2, got {self.cluster_size}"
            )
        if not 1 <= self.relations <= self.clusters * (self.clusters - 1):
            raise ValueError(
                f"relations must be in [1, {self.clusters * (self.clusters - 1)}], "
                f"got {self.relations}"
            )
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density must be in (0, 1], got {self.density}")
        if not 0.0 <= self.negative_fraction <= 1.0:
            raise ValueError(
                f"negative_fraction must be in [0, 1], got {self.negative_fraction}"
            )
        if self.negative_fraction >= self.density:
            # The true-negative split later balances each evaluation negative
            # with a held-out positive, which must leave training data behind.
            raise ValueError("negative_fraction must be smaller than density")
        if not self.negation_prefix:
            raise ValueError("negation_prefix must be non-empty")


def cluster_pair(spec: SyntheticSpec, k: int) -> tuple[int, int]:
    """Head and tail clusters of relation k; distinct by construction."""
    if not 0 <= k < spec.relations:
        raise ValueError(f"relation index {k} out of range")
    offset = 1 + k // spec.clusters
    return k % spec.clusters, (k + offset) % spec.clusters


def entity_phrase(spec: SyntheticSpec, cluster: int, index: int) -> Phrase:
    """Phrase of the index-th entity in a cluster; qualities alternate."""
    if not 0 <= cluster < spec.clusters:
        raise ValueError(f"cluster {cluster} out of range")
    if not 0 <= index < spec.cluster_size:
        raise ValueError(f"entity index {index} out of range")
    quality = QUALITIES[index % 2]
    unique = cluster * spec.cluster_size + index
    traits = tuple(f"trait{cluster}x{j}" for j in range(spec.phrase_tokens - 3))
    return Phrase((quality, f"kind{cluster}", f"e{unique}") + traits)


def quality_of(phrase: Phrase) -> str:
    return phrase.tokens[0]


def relation_name(spec: SyntheticSpec, k: int, negated: bool = False) -> str:
    name = f"rel{k}"
    return spec.negation_prefix + name if negated else name


def generate_kb(spec: SyntheticSpec) -> KnowledgeBase:
    """Sample the stored corpus: positives plus prefixed negated statements."""
    entities = [
        [entity_phrase(spec, c, i) for i in range(spec.cluster_size)]
        for c in range(spec.clusters)
    ]
    rng = np.random.default_rng([spec.seed, 30])
    positives: list[LabeledTriple] = []
    negated: list[LabeledTriple] = []
    for k in range(spec.relations):
        a, b = cluster_pair(spec, k)
        true_pairs = [
            (h, t)
            for h in entities[a]
            for t in entities[b]
            if quality_of(h) == quality_of(t)
        ]
        false_pairs = [
            (h, t)
            for h in entities[a]
            for t in entities[b]
            if quality_of(h) != quality_of(t)
        ]
        n_pos = int(round(spec.density * len(true_pairs)))
        n_neg = int(round(spec.negative_fraction * len(false_pairs)))
        pos_picks = sorted(rng.permutation(len(true_pairs))[:n_pos].tolist())
        neg_picks = sorted(rng.permutation(len(false_pairs))[:n_neg].tolist())
        rel = relation_name(spec, k)
        neg_rel = relation_name(spec, k, negated=True)
        positives.extend(
            LabeledTriple(h, rel, t) for h, t in (true_pairs[i] for i in pos_picks)
        )
        negated.extend(
            LabeledTriple(h, neg_rel, t) for h, t in (false_pairs[i] for i in neg_picks)
        )
    return KnowledgeBase(positives + negated)


def generate_lexicon() -> AntonymLexicon:
    """Antonym table for the quality adjectives used by generated corpora."""
    return AntonymLexicon(
        {
            QUALITIES[0]: ("adjective", [QUALITIES[1]]),
            QUALITIES[1]: ("adjective", [QUALITIES[0]]),
        }
    )
