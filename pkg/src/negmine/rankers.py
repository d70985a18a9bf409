"""Rank candidate negatives by contradiction strength.

Two primary keys: classification score among the below-threshold pool
("almost positive" first), and the L2 magnitude of the loss gradient under a
forced positive label (larger means the statement fights the trained beliefs
harder). The gradient key also has a regression fast path that predicts
magnitudes from pooled vectors, skipping every backward pass.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .candidates import Candidate
from .ioutil import atomic_write_text, format_float
from .kb import LabeledTriple, ParseError, Phrase
from .scorer import (
    ScorerParams,
    ThresholdMap,
    loss_and_gradient,
    score_batch,
)

RANK_METHODS = ("theta", "grad", "grad-fast", "none")


@dataclass(frozen=True)
class RankedCandidate:
    """A candidate with its ranking key and pre-shuffle rank position.

    Ranks are a permutation of 1..n. For shuffled outputs the list order is
    the shuffled order while `rank` preserves the pre-shuffle position, so
    sorting by `rank` recovers the key-descending order within each pool.
    """

    candidate: Candidate
    key: float
    rank: int


def _encode_candidates(params: ScorerParams, candidates: list[Candidate]) -> np.ndarray:
    """Pooled representations of many triples, forward only.

    Mean pooling is linear in the token rows, so the embedding sum of each
    distinct phrase is computed once and shared by every triple that reuses
    the phrase; only the residual block sees the full batch. The backward
    pass has no such shortcut: it must scatter into individual token rows.
    """
    vocab = params.vocab
    phrase_index: dict[Phrase, int] = {}
    sums: list[np.ndarray] = []
    token_counts: list[int] = []
    relation_index: dict[str, int] = {}
    relation_ids: list[int] = []

    def phrase_slot(phrase: Phrase) -> int:
        slot = phrase_index.get(phrase)
        if slot is None:
            slot = len(sums)
            phrase_index[phrase] = slot
            sums.append(params.emb[vocab.encode_phrase(phrase)].sum(axis=0))
            token_counts.append(len(phrase.tokens))
        return slot

    head_slot = np.empty(len(candidates), dtype=np.int64)
    tail_slot = np.empty(len(candidates), dtype=np.int64)
    rel_slot = np.empty(len(candidates), dtype=np.int64)
    for i, c in enumerate(candidates):
        head_slot[i] = phrase_slot(c.triple.head)
        tail_slot[i] = phrase_slot(c.triple.tail)
        slot = relation_index.get(c.triple.relation)
        if slot is None:
            slot = len(relation_ids)
            relation_index[c.triple.relation] = slot
            relation_ids.append(vocab.relation_id(c.triple.relation))
        rel_slot[i] = slot

    phrase_sums = np.stack(sums)
    counts = np.asarray(token_counts, dtype=np.int64)
    rel_rows = params.emb[np.asarray(relation_ids, dtype=np.int64)]
    # encode_triple layout: [start, head tokens, sep, relation, sep, tail tokens]
    frame = params.emb[vocab.START] + 2.0 * params.emb[vocab.SEP]
    lengths = 3 + counts[head_slot] + counts[tail_slot]
    m = (frame + rel_rows[rel_slot] + phrase_sums[head_slot] + phrase_sums[tail_slot])
    m /= lengths[:, None]
    return m + np.tanh(m @ params.ff_w.T + params.ff_b)


def rank_theta(
    params: ScorerParams,
    thresholds: ThresholdMap,
    candidates: list[Candidate],
    keep_fraction: float = 0.5,
    *,
    seed: int = 0,
    shuffle: bool = True,
) -> list[RankedCandidate]:
    """Keep below-threshold candidates, best-scoring first, per relation.

    Per relation: candidates with score <= theta_r are sorted descending by
    score (ties by emission order) and truncated to ceil(keep_fraction x pool
    size). Pools are concatenated in sorted relation order, ranks assigned,
    then the list order is shuffled by a seeded permutation unless `shuffle`
    is off.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    if not candidates:
        return []
    scores = score_batch(params, [c.triple for c in candidates])
    by_relation: dict[str, list[int]] = {}
    for i, c in enumerate(candidates):
        by_relation.setdefault(c.triple.relation, []).append(i)
    ordered: list[RankedCandidate] = []
    for relation in sorted(by_relation):
        theta = thresholds.threshold_for(relation)
        pool = [i for i in by_relation[relation] if scores[i] <= theta]
        # Stable sort on negated score keeps emission order among ties.
        pool.sort(key=lambda i: -scores[i])
        kept = pool[: math.ceil(keep_fraction * len(pool))]
        base = len(ordered)
        ordered.extend(
            RankedCandidate(candidates[i], float(scores[i]), base + j + 1)
            for j, i in enumerate(kept)
        )
    if not shuffle:
        return ordered
    perm = np.random.default_rng([seed, 10]).permutation(len(ordered))
    return [ordered[i] for i in perm]


def gradient_magnitude(
    params: ScorerParams, candidate: Candidate | LabeledTriple, final_layer_only: bool = False
) -> float:
    """L2 norm of the full parameter gradient at a forced positive label."""
    triple = candidate.triple if isinstance(candidate, Candidate) else candidate
    _, grad = loss_and_gradient(params, triple, 1)
    return grad.norm(final_layer_only=final_layer_only)


def _rank_descending(
    candidates: list[Candidate], keys: np.ndarray
) -> list[RankedCandidate]:
    """Descending stable sort; emission order breaks ties; ranks 1..n."""
    order = np.argsort(-keys, kind="stable")
    return [
        RankedCandidate(candidates[int(i)], float(keys[int(i)]), rank)
        for rank, i in enumerate(order, start=1)
    ]


def rank_grad(
    params: ScorerParams,
    candidates: list[Candidate],
    final_layer_only: bool = False,
    threads: int = 1,
) -> list[RankedCandidate]:
    """Descending exact gradient magnitude; one backward pass per candidate."""
    if not candidates:
        return []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            keys = np.fromiter(
                pool.map(lambda c: gradient_magnitude(params, c, final_layer_only), candidates),
                dtype=np.float64,
                count=len(candidates),
            )
    else:
        keys = np.fromiter(
            (gradient_magnitude(params, c, final_layer_only) for c in candidates),
            dtype=np.float64,
            count=len(candidates),
        )
    return _rank_descending(candidates, keys)


def rank_none(candidates: list[Candidate], *, seed: int = 0) -> list[RankedCandidate]:
    """No-ranking ablation: a seeded shuffle with constant keys."""
    perm = np.random.default_rng([seed, 11]).permutation(len(candidates))
    return [
        RankedCandidate(candidates[int(i)], 0.0, rank) for rank, i in enumerate(perm, start=1)
    ]


class GradientPredictor:
    """One-hidden-layer regressor from pooled vectors to gradient magnitudes.

    The hidden block is the same residual tanh used by the scorer's encoder,
    so exactly linear targets stay exactly representable. Inputs and targets
    are standardized internally; `predict` returns values in original target
    units. Zero target variance collapses to the constant predictor.
    """

    def __init__(self, input_dim: int):
        self.input_dim = input_dim
        self.w1 = np.zeros((input_dim, input_dim))
        self.b1 = np.zeros(input_dim)
        self.w2 = np.zeros(input_dim)
        self.b2 = 0.0
        self.x_mean = np.zeros(input_dim)
        self.x_scale = np.ones(input_dim)
        self.y_mean = 0.0
        self.y_scale = 1.0
        self.n_train = 0
        self.train_mae = float("nan")

    def predict(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features[None, :]
        if features.shape[1] != self.input_dim:
            raise ValueError(
                f"feature dimension {features.shape[1]} does not match predictor input {self.input_dim}"
            )
        x = (features - self.x_mean) / self.x_scale
        hidden = x + np.tanh(x @ self.w1 + self.b1)
        return (hidden @ self.w2 + self.b2) * self.y_scale + self.y_mean


def fit_mae_regressor(
    features: np.ndarray,
    targets: np.ndarray,
    rng: np.random.Generator,
    *,
    epochs: int = 300,
    learning_rate: float = 0.05,
    batch_size: int = 64,
) -> GradientPredictor:
    """Fit the one-hidden-layer regressor on explicit (features, targets).

    Hidden width equals the feature dimension with the same tanh nonlinearity
    as the scorer's encoder; the mean absolute error objective is minimized
    by the same adaptive-step mini-batch descent.
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n, h = features.shape
    model = GradientPredictor(h)
    model.n_train = n
    std = features.std(axis=0)
    model.x_mean = features.mean(axis=0)
    model.x_scale = np.where(std > 1e-12, std, 1.0)
    model.y_mean = float(targets.mean())
    y_std = float(targets.std())
    if y_std <= 1e-12:
        # Constant targets: the bias alone is the exact fit.
        model.train_mae = float(np.abs(model.predict(features) - targets).mean())
        return model
    model.y_scale = y_std

    x = (features - model.x_mean) / model.x_scale
    y = (targets - model.y_mean) / model.y_scale
    init = np.random.default_rng(rng.integers(2**63))
    random_w1 = init.normal(0.0, 1.0 / math.sqrt(h), size=(h, h))

    # Output-layer warm start: least squares over two candidate bases (the
    # bare inputs with a zeroed hidden block, and the random tanh features)
    # drops the descent into a near-optimal basin, so few epochs suffice.
    def output_lstsq(w1: np.ndarray) -> tuple[np.ndarray, float, float]:
        phi = np.column_stack([x + np.tanh(x @ w1), np.ones(n)])
        solution = np.linalg.lstsq(phi, y, rcond=None)[0]
        mae = float(np.abs(phi @ solution - y).mean())
        return solution[:h], float(solution[h]), mae

    starts = [(w1,) + output_lstsq(w1) for w1 in (np.zeros((h, h)), random_w1)]
    model.w1, model.w2, model.b2, best_mae = min(starts, key=lambda s: s[3])
    best = (model.w1.copy(), model.b1.copy(), model.w2.copy(), model.b2)

    acc_w1 = np.zeros_like(model.w1)
    acc_b1 = np.zeros_like(model.b1)
    acc_w2 = np.zeros_like(model.w2)
    acc_b2 = 0.0
    eps = 1e-10
    for _ in range(epochs):
        perm = init.permutation(n)
        for start in range(0, n, batch_size):
            sel = perm[start : start + batch_size]
            xb, yb = x[sel], y[sel]
            t = np.tanh(xb @ model.w1 + model.b1)
            pred = (xb + t) @ model.w2 + model.b2
            dpred = np.sign(pred - yb) / len(sel)
            dw2 = (xb + t).T @ dpred
            db2 = float(dpred.sum())
            dt = np.outer(dpred, model.w2) * (1.0 - t * t)
            dw1 = xb.T @ dt
            db1 = dt.sum(axis=0)
            acc_w1 += dw1 * dw1
            acc_b1 += db1 * db1
            acc_w2 += dw2 * dw2
            acc_b2 += db2 * db2
            model.w1 -= learning_rate * dw1 / (np.sqrt(acc_w1) + eps)
            model.b1 -= learning_rate * db1 / (np.sqrt(acc_b1) + eps)
            model.w2 -= learning_rate * dw2 / (np.sqrt(acc_w2) + eps)
            model.b2 -= learning_rate * db2 / (math.sqrt(acc_b2) + eps)
        # Keep the best epoch-end parameters: refinement from a warm start
        # must never hand back something worse than a point it visited.
        t = np.tanh(x @ model.w1 + model.b1)
        epoch_mae = float(np.abs((x + t) @ model.w2 + model.b2 - y).mean())
        if epoch_mae < best_mae:
            best_mae = epoch_mae
            best = (model.w1.copy(), model.b1.copy(), model.w2.copy(), model.b2)
    model.w1, model.b1, model.w2, model.b2 = best
    model.train_mae = float(np.abs(model.predict(features) - targets).mean())
    return model


def fit_gradient_predictor(
    params: ScorerParams,
    candidates: list[Candidate],
    n: int,
    rng: np.random.Generator,
    *,
    epochs: int = 300,
    learning_rate: float = 0.05,
    batch_size: int = 64,
    final_layer_only: bool = False,
) -> GradientPredictor:
    """Fit the magnitude regressor on n uniformly sampled candidates.

    Features are the scorer's pooled vectors; targets are the exact gradient
    magnitudes. Sampling is uniform without replacement.
    """
    if n < 2:
        raise ValueError(f"need at least 2 training candidates, got n={n}")
    if n > len(candidates):
        raise ValueError(f"n={n} exceeds candidate count {len(candidates)}")
    chosen = [candidates[int(i)] for i in rng.choice(len(candidates), size=n, replace=False)]
    features = _encode_candidates(params, chosen)
    targets = np.fromiter(
        (gradient_magnitude(params, c, final_layer_only) for c in chosen),
        dtype=np.float64,
        count=n,
    )
    return fit_mae_regressor(
        features, targets, rng, epochs=epochs, learning_rate=learning_rate, batch_size=batch_size
    )


def rank_grad_fast(
    params: ScorerParams, predictor: GradientPredictor, candidates: list[Candidate]
) -> list[RankedCandidate]:
    """Descending predicted gradient magnitude; forward passes only."""
    if predictor.input_dim != params.hidden_dim:
        raise ValueError(
            f"predictor input dimension {predictor.input_dim} does not match "
            f"scorer hidden dimension {params.hidden_dim}"
        )
    if not candidates:
        return []
    keys = predictor.predict(_encode_candidates(params, candidates))
    return _rank_descending(candidates, keys)


def loss_ranked(params: ScorerParams, candidates: list[Candidate]) -> list[tuple[Candidate, float]]:
    """Diagnostic only: candidates by descending loss at a forced positive label.

    Kept for side-by-side comparison with the gradient key; no ranking
    quality claim is attached to it.
    """
    losses = []
    for c in candidates:
        loss, _ = loss_and_gradient(params, c.triple, 1)
        losses.append(loss)
    order = np.argsort(-np.asarray(losses), kind="stable")
    return [(candidates[int(i)], float(losses[int(i)])) for i in order]


def pearson(xs, ys) -> float:
    """Sample Pearson correlation; zero variance in either input is an error."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be equal-length 1-D sequences")
    if len(x) < 2:
        raise ValueError("need at least 2 observations")
    xd = x - x.mean()
    yd = y - y.mean()
    vx = float(xd @ xd)
    vy = float(yd @ yd)
    if vx == 0.0 or vy == 0.0:
        raise ValueError("zero variance input")
    return float(xd @ yd) / math.sqrt(vx * vy)


def write_ranked_tsv(ranked: list[RankedCandidate], method: str, path: str | Path) -> None:
    """Rows in list order: `rank relation head tail key method` (tab-separated)."""
    if method not in RANK_METHODS:
        raise ValueError(f"method must be one of {RANK_METHODS}, got {method!r}")
    lines = []
    for rc in ranked:
        triple = rc.candidate.triple
        lines.append(
            "\t".join(
                [str(rc.rank), triple.relation, triple.head.text, triple.tail.text,
                 format_float(rc.key), method]
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


@dataclass(frozen=True)
class RankedRow:
    rank: int
    triple: LabeledTriple
    key: float
    method: str


def read_ranked_tsv(path: str | Path) -> list[RankedRow]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise ParseError(path, line_no, f"expected 6 tab-separated fields, got {len(fields)}")
            rank_text, relation, head, tail, key_text, method = fields
            if method not in RANK_METHODS:
                raise ParseError(path, line_no, f"unknown ranking method {method!r}")
            try:
                rows.append(
                    RankedRow(
                        int(rank_text),
                        LabeledTriple(Phrase.parse(head), relation, Phrase.parse(tail), 0),
                        float(key_text),
                        method,
                    )
                )
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
    return rows
