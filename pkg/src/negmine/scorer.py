"""Compact differentiable triple classifier.

A triple is linearized to a token-id sequence, mean-pooled over a learned
embedding table, passed through one residual feedforward layer, and scored by
a linear head with a sigmoid. Training is contrastive: each positive is paired
with corrupted counterparts under binary cross-entropy, optimized by
mini-batch gradient descent with adaptive per-parameter step sizes. Exact
analytic gradients over every parameter are exposed for gradient-based
ranking.
"""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .kb import HEAD, TAIL, KnowledgeBase, LabeledTriple, Phrase

logger = logging.getLogger(__name__)

CORRUPT_RETRIES = 10
LOSS_EPS = 1e-12
ADA_EPS = 1e-10
CORRUPTION_MODES = ("head", "relation", "tail")


class TokenVocab:
    """Dense token-id map with reserved start/separator/unknown ids.

    Ids are assigned as: 0 start, 1 sep, 2 unknown, then one id per relation
    (in the given order), then one id per word. Relation ids and word ids are
    disjoint even when spellings collide.
    """

    START = 0
    SEP = 1
    UNK = 2
    RESERVED = 3

    def __init__(self, relations: tuple[str, ...] | list[str], words: tuple[str, ...] | list[str]):
        self.relations = tuple(relations)
        self.words = tuple(words)
        if len(set(self.relations)) != len(self.relations):
            raise ValueError("duplicate relation names")
        if len(set(self.words)) != len(self.words):
            raise ValueError("duplicate word tokens")
        self.relation_ids = {r: self.RESERVED + i for i, r in enumerate(self.relations)}
        offset = self.RESERVED + len(self.relations)
        self.word_ids = {w: offset + i for i, w in enumerate(self.words)}
        self.size = offset + len(self.words)

    @classmethod
    def from_kb(cls, kb: KnowledgeBase) -> "TokenVocab":
        """Vocabulary over every relation and word visible in any split."""
        relations: set[str] = set(kb.relations)
        words: set[str] = set()
        for split in (kb.splits.train, kb.splits.validation, kb.splits.test):
            for t in split:
                relations.add(t.relation)
                for phrase in (t.head, t.tail):
                    words.update(phrase.tokens)
        for phrase in kb.phrases:
            words.update(phrase.tokens)
        return cls(sorted(relations), sorted(words))

    def word_id(self, token: str) -> int:
        return self.word_ids.get(token, self.UNK)

    def relation_id(self, relation: str) -> int:
        return self.relation_ids.get(relation, self.UNK)

    def encode_triple(self, triple: LabeledTriple) -> np.ndarray:
        """[start, head tokens, sep, relation, sep, tail tokens] as ids."""
        ids = [self.START]
        ids.extend(self.word_id(t) for t in triple.head.tokens)
        ids.append(self.SEP)
        ids.append(self.relation_id(triple.relation))
        ids.append(self.SEP)
        ids.extend(self.word_id(t) for t in triple.tail.tokens)
        return np.asarray(ids, dtype=np.int64)

    def encode_phrase(self, phrase: Phrase) -> np.ndarray:
        return np.asarray([self.word_id(t) for t in phrase.tokens], dtype=np.int64)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TokenVocab)
            and self.relations == other.relations
            and self.words == other.words
        )


class ScorerParams:
    """Full parameter set: embeddings, residual feedforward, linear head.

    `retrieval_emb` is a frozen, separately seeded copy of the embedding
    table used only for phrase lookup; it never receives gradient updates.
    `grad_evals` counts backward passes, so forward-only code paths can
    prove they never differentiate.
    """

    def __init__(
        self,
        vocab: TokenVocab,
        emb: np.ndarray,
        ff_w: np.ndarray,
        ff_b: np.ndarray,
        w: np.ndarray,
        b: float,
        retrieval_emb: np.ndarray,
    ):
        hidden_dim = emb.shape[1]
        if hidden_dim < 2:
            raise ValueError(f"hidden dimension must be >= 2, got {hidden_dim}")
        if emb.shape != (vocab.size, hidden_dim) or retrieval_emb.shape != emb.shape:
            raise ValueError("embedding tables must be (vocab size, hidden dim)")
        if ff_w.shape != (hidden_dim, hidden_dim) or ff_b.shape != (hidden_dim,):
            raise ValueError("feedforward weights must be (H, H) and (H,)")
        if w.shape != (hidden_dim,):
            raise ValueError("classification vector must be (H,)")
        self.vocab = vocab
        self.hidden_dim = hidden_dim
        self.emb = emb
        self.ff_w = ff_w
        self.ff_b = ff_b
        self.w = w
        self.b = float(b)
        self.retrieval_emb = retrieval_emb
        self.grad_evals = 0
        self._grad_lock = threading.Lock()

    def all_finite(self) -> bool:
        return bool(
            np.isfinite(self.emb).all()
            and np.isfinite(self.ff_w).all()
            and np.isfinite(self.ff_b).all()
            and np.isfinite(self.w).all()
            and math.isfinite(self.b)
        )

    def count_grad_evals(self, n: int) -> None:
        with self._grad_lock:
            self.grad_evals += n


def init_params(vocab: TokenVocab, hidden_dim: int = 64, seed: int = 0) -> ScorerParams:
    """Fresh parameters; the retrieval table uses an independent seed stream."""
    if hidden_dim < 2:
        raise ValueError(f"hidden dimension must be >= 2, got {hidden_dim}")
    rng = np.random.default_rng([seed, 0])
    emb = rng.normal(0.0, 1.0, size=(vocab.size, hidden_dim))
    ff_w = rng.normal(0.0, 1.0, size=(hidden_dim, hidden_dim))
    ff_b = np.zeros(hidden_dim)
    w = rng.normal(0.0, 1.0, size=hidden_dim)
    retrieval_rng = np.random.default_rng([seed, 1])
    retrieval_emb = retrieval_rng.normal(0.0, 1.0, size=(vocab.size, hidden_dim))
    return ScorerParams(vocab, emb, ff_w, ff_b, w, 0.0, retrieval_emb)


def sigmoid(z):
    """Numerically stable logistic function for scalars and arrays."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def encode(params: ScorerParams, triple: LabeledTriple) -> np.ndarray:
    """Pooled H-vector: token-mean plus a residual feedforward correction.

    With zero feedforward weights the layer is the identity, so the output
    equals the token mean exactly.
    """
    ids = params.vocab.encode_triple(triple)
    m = params.emb[ids].mean(axis=0)
    return m + np.tanh(params.ff_w @ m + params.ff_b)


def score(params: ScorerParams, triple: LabeledTriple) -> float:
    return float(sigmoid(params.w @ encode(params, triple) + params.b))


def score_batch(params: ScorerParams, triples: list[LabeledTriple]) -> np.ndarray:
    if not triples:
        return np.zeros(0)
    ids, mask, lengths = _pad_ids([params.vocab.encode_triple(t) for t in triples])
    _, _, _, p = _forward(params, ids, mask, lengths)
    return p


def corrupt(
    kb: KnowledgeBase,
    positive: LabeledTriple,
    mode: str,
    rng: np.random.Generator,
) -> LabeledTriple | None:
    """Replace one slot with a uniform draw from the KB, excluding the original.

    Draws that land on an in-KB positive are resampled up to a bounded number
    of retries; exhausting them skips the corruption (returns None).
    """
    if mode not in CORRUPTION_MODES:
        raise ValueError(f"unknown corruption mode {mode!r}")
    if mode == "relation":
        pool: tuple = tuple(sorted(kb.relations))
        original = positive.relation
    else:
        pool = kb.phrases
        original = positive.phrase(HEAD if mode == "head" else TAIL)
    try:
        skip = pool.index(original)
    except ValueError:
        skip = None
    n = len(pool) - (skip is not None)
    if n < 1:
        raise ValueError(f"KB too small to corrupt {mode}: no replacement differs from the original")
    for _ in range(CORRUPT_RETRIES):
        j = int(rng.integers(n))
        if skip is not None and j >= skip:
            j += 1
        replacement = pool[j]
        if mode == "relation":
            candidate = LabeledTriple(positive.head, replacement, positive.tail, 0)
        else:
            candidate = positive.replace(HEAD if mode == "head" else TAIL, replacement, label=0)
        if not kb.contains(candidate):
            return candidate
    logger.debug("corrupt(%s) skipped after %d in-KB collisions", mode, CORRUPT_RETRIES)
    return None


@dataclass
class TripleGradient:
    """Gradient of one triple's loss over every parameter.

    Embedding rows not touched by the triple have zero gradient and are
    omitted from `emb_rows`.
    """

    emb_rows: dict[int, np.ndarray]
    ff_w: np.ndarray
    ff_b: np.ndarray
    w: np.ndarray
    b: float

    def norm(self, final_layer_only: bool = False) -> float:
        total = float(self.w @ self.w) + self.b * self.b
        if not final_layer_only:
            total += float((self.ff_w * self.ff_w).sum()) + float(self.ff_b @ self.ff_b)
            for row in self.emb_rows.values():
                total += float(row @ row)
        return math.sqrt(total)


def loss_and_gradient(
    params: ScorerParams, triple: LabeledTriple, label: int
) -> tuple[float, TripleGradient]:
    """Binary cross-entropy and its exact gradient for one triple."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    ids = params.vocab.encode_triple(triple)
    m = params.emb[ids].mean(axis=0)
    t = np.tanh(params.ff_w @ m + params.ff_b)
    h = m + t
    p = sigmoid(params.w @ h + params.b)
    pc = min(max(p, LOSS_EPS), 1.0 - LOSS_EPS)
    loss = -(label * math.log(pc) + (1 - label) * math.log(1.0 - pc))

    dz = p - label
    dw = dz * h
    dh = dz * params.w
    da = dh * (1.0 - t * t)
    dff_w = np.outer(da, m)
    dm = dh + params.ff_w.T @ da
    emb_rows: dict[int, np.ndarray] = {}
    scale = 1.0 / len(ids)
    for i in ids:
        i = int(i)
        if i in emb_rows:
            emb_rows[i] = emb_rows[i] + dm * scale
        else:
            emb_rows[i] = dm * scale
    params.count_grad_evals(1)
    return loss, TripleGradient(emb_rows, dff_w, da, dw, float(dz))


def _pad_ids(id_lists: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lengths = np.asarray([len(ids) for ids in id_lists], dtype=np.int64)
    width = int(lengths.max())
    ids = np.zeros((len(id_lists), width), dtype=np.int64)
    mask = np.zeros((len(id_lists), width))
    for i, row in enumerate(id_lists):
        ids[i, : len(row)] = row
        mask[i, : len(row)] = 1.0
    return ids, mask, lengths


def _forward(params: ScorerParams, ids, mask, lengths):
    m = (params.emb[ids] * mask[:, :, None]).sum(axis=1) / lengths[:, None]
    t = np.tanh(m @ params.ff_w.T + params.ff_b)
    h = m + t
    p = sigmoid(h @ params.w + params.b)
    return m, t, h, p


class _BatchGrads:
    __slots__ = ("emb", "ff_w", "ff_b", "w", "b")

    def __init__(self, emb, ff_w, ff_b, w, b):
        self.emb = emb
        self.ff_w = ff_w
        self.ff_b = ff_b
        self.w = w
        self.b = b


def _loss_and_gradient_batch(params: ScorerParams, ids, mask, lengths, labels) -> tuple[float, _BatchGrads]:
    """Mean loss and dense mean gradient over a padded id batch."""
    n = ids.shape[0]
    m, t, h, p = _forward(params, ids, mask, lengths)
    pc = np.clip(p, LOSS_EPS, 1.0 - LOSS_EPS)
    loss = float(-(labels * np.log(pc) + (1.0 - labels) * np.log(1.0 - pc)).mean())

    dz = (p - labels) / n
    dw = h.T @ dz
    db = float(dz.sum())
    dh = np.outer(dz, params.w)
    da = dh * (1.0 - t * t)
    dff_w = da.T @ m
    dff_b = da.sum(axis=0)
    dm = dh + da @ params.ff_w
    demb = np.zeros_like(params.emb)
    contrib = (dm / lengths[:, None])[:, None, :] * mask[:, :, None]
    np.add.at(demb, ids.ravel(), contrib.reshape(-1, params.hidden_dim))
    params.count_grad_evals(n)
    return loss, _BatchGrads(demb, dff_w, dff_b, dw, db)


class _Adagrad:
    """Per-parameter adaptive steps from accumulated squared gradients."""

    def __init__(self, params: ScorerParams, learning_rate: float):
        self.lr = learning_rate
        self.acc_emb = np.zeros_like(params.emb)
        self.acc_ff_w = np.zeros_like(params.ff_w)
        self.acc_ff_b = np.zeros_like(params.ff_b)
        self.acc_w = np.zeros_like(params.w)
        self.acc_b = 0.0

    def step(self, params: ScorerParams, g: _BatchGrads) -> None:
        self.acc_emb += g.emb * g.emb
        self.acc_ff_w += g.ff_w * g.ff_w
        self.acc_ff_b += g.ff_b * g.ff_b
        self.acc_w += g.w * g.w
        self.acc_b += g.b * g.b
        params.emb -= self.lr * g.emb / (np.sqrt(self.acc_emb) + ADA_EPS)
        params.ff_w -= self.lr * g.ff_w / (np.sqrt(self.acc_ff_w) + ADA_EPS)
        params.ff_b -= self.lr * g.ff_b / (np.sqrt(self.acc_ff_b) + ADA_EPS)
        params.w -= self.lr * g.w / (np.sqrt(self.acc_w) + ADA_EPS)
        params.b -= self.lr * g.b / (math.sqrt(self.acc_b) + ADA_EPS)


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-2
    batch_size: int = 64
    negatives_per_positive: int = 3
    seed: int = 0
    corruption_mode: str = "cycle"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives-per-positive must be >= 1")
        if self.corruption_mode not in CORRUPTION_MODES + ("cycle",):
            raise ValueError(f"unknown corruption mode {self.corruption_mode!r}")

    def modes(self) -> list[str]:
        """Corruption mode of the i-th negative for each positive."""
        if self.corruption_mode == "cycle":
            return [CORRUPTION_MODES[i % 3] for i in range(self.negatives_per_positive)]
        return [self.corruption_mode] * self.negatives_per_positive


def _run_epoch(
    params: ScorerParams,
    id_lists: list[np.ndarray],
    labels: np.ndarray,
    rng: np.random.Generator,
    batch_size: int,
    optimizer: _Adagrad,
) -> float:
    perm = rng.permutation(len(id_lists))
    total = 0.0
    for start in range(0, len(perm), batch_size):
        sel = perm[start : start + batch_size]
        ids, mask, lengths = _pad_ids([id_lists[i] for i in sel])
        loss, grads = _loss_and_gradient_batch(params, ids, mask, lengths, labels[sel])
        optimizer.step(params, grads)
        total += loss * len(sel)
    return total / len(id_lists)


def corruption_examples(
    kb: KnowledgeBase,
    positives: list[LabeledTriple],
    config: TrainConfig,
    rng: np.random.Generator,
) -> list[LabeledTriple]:
    """One corrupted negative per positive per configured mode; skips logged."""
    negatives = []
    for pos in positives:
        for mode in config.modes():
            neg = corrupt(kb, pos, mode, rng)
            if neg is not None:
                negatives.append(neg)
    return negatives


def train_contrastive(
    params: ScorerParams, kb: KnowledgeBase, config: TrainConfig
) -> tuple[ScorerParams, list[float]]:
    """Fit the scorer on KB positives against fresh per-epoch corruptions."""
    positives = list(kb.splits.train)
    if not positives:
        raise ValueError("training split is empty")
    rng = np.random.default_rng([config.seed, 2])
    optimizer = _Adagrad(params, config.learning_rate)
    vocab = params.vocab
    pos_ids = [vocab.encode_triple(t) for t in positives]
    trace: list[float] = []
    for epoch in range(config.epochs):
        negatives = corruption_examples(kb, positives, config, rng)
        id_lists = pos_ids + [vocab.encode_triple(t) for t in negatives]
        labels = np.concatenate([np.ones(len(positives)), np.zeros(len(negatives))])
        mean_loss = _run_epoch(params, id_lists, labels, rng, config.batch_size, optimizer)
        if not math.isfinite(mean_loss):
            raise ValueError(f"non-finite training loss {mean_loss} at epoch {epoch}")
        trace.append(mean_loss)
    return params, trace


def train_supervised(
    params: ScorerParams, examples: list[LabeledTriple], config: TrainConfig
) -> tuple[ScorerParams, list[float]]:
    """Fit the scorer on a fixed labeled example set (labels from the triples)."""
    if not examples:
        raise ValueError("example set is empty")
    rng = np.random.default_rng([config.seed, 3])
    optimizer = _Adagrad(params, config.learning_rate)
    id_lists = [params.vocab.encode_triple(t) for t in examples]
    labels = np.asarray([float(t.label) for t in examples])
    trace: list[float] = []
    for epoch in range(config.epochs):
        mean_loss = _run_epoch(params, id_lists, labels, rng, config.batch_size, optimizer)
        if not math.isfinite(mean_loss):
            raise ValueError(f"non-finite training loss {mean_loss} at epoch {epoch}")
        trace.append(mean_loss)
    return params, trace


@dataclass
class ThresholdMap:
    """Per-relation decision thresholds with a global fallback."""

    per_relation: dict[str, float] = field(default_factory=dict)
    fallback: float = 0.5

    def threshold_for(self, relation: str) -> float:
        return self.per_relation.get(relation, self.fallback)


def best_threshold(pos_scores: np.ndarray, neg_scores: np.ndarray) -> tuple[float, float]:
    """Accuracy-maximizing threshold for `score > theta` classification.

    Candidates are the midpoints between adjacent distinct sorted scores plus
    one sentinel below the minimum and one above the maximum (classify-all
    cases). Ties prefer the widest margin, then the smallest threshold.
    Returns (threshold, accuracy).
    """
    scores = np.concatenate([pos_scores, neg_scores])
    labels = np.concatenate([np.ones(len(pos_scores)), np.zeros(len(neg_scores))])
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    margins = (distinct[1:] - distinct[:-1]) / 2.0
    # Sentinel margin 1.0 beats any probability-gap half-width.
    cands = np.concatenate([[distinct[0] - 1.0], mids, [distinct[-1] + 1.0]])
    cand_margins = np.concatenate([[1.0], margins, [1.0]])
    correct = (scores[None, :] > cands[:, None]) == labels[None, :].astype(bool)
    accs = correct.mean(axis=1)
    order = np.lexsort((cands, -cand_margins, -accs))
    best = order[0]
    return float(cands[best]), float(accs[best])


def fit_thresholds(params: ScorerParams, validation: list[LabeledTriple]) -> ThresholdMap:
    """Per-relation accuracy-maximizing thresholds on validation examples.

    Relations lacking both classes fall back to a single global threshold fit
    over all validation examples.
    """
    if not validation:
        raise ValueError("validation set is empty")
    scores = score_batch(params, validation)
    by_relation: dict[str, list[int]] = {}
    for i, t in enumerate(validation):
        by_relation.setdefault(t.relation, []).append(i)
    labels = np.asarray([t.label for t in validation])
    fallback, _ = best_threshold(scores[labels == 1], scores[labels == 0])
    per_relation: dict[str, float] = {}
    for relation, idx in by_relation.items():
        rel_scores = scores[idx]
        rel_labels = labels[idx]
        if 0 < rel_labels.sum() < len(rel_labels):
            theta, _ = best_threshold(rel_scores[rel_labels == 1], rel_scores[rel_labels == 0])
            per_relation[relation] = theta
    return ThresholdMap(per_relation, fallback)


def classify(params: ScorerParams, thresholds: ThresholdMap, triple: LabeledTriple) -> bool:
    """True iff the triple scores strictly above its relation's threshold."""
    return score(params, triple) > thresholds.threshold_for(triple.relation)


def embed_phrase(params: ScorerParams, phrase: Phrase, use_trained: bool = False) -> np.ndarray:
    """Mean token embedding from the frozen retrieval table (or trained table)."""
    table = params.emb if use_trained else params.retrieval_emb
    ids = params.vocab.encode_phrase(phrase)
    return table[ids].mean(axis=0)
