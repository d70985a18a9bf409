"""Phrase-valued knowledge base: triple store, slot indices, and split construction.

Triples are (head phrase, relation, tail phrase) with free-text phrases and a
finite relation dictionary. The on-disk format is one triple per line:

    relation<TAB>head phrase<TAB>tail phrase[<TAB>label]

UTF-8, ``#``-prefixed comment lines ignored.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

HEAD = "head"
TAIL = "tail"
SLOTS = (HEAD, TAIL)


class ParseError(ValueError):
    """Malformed triple TSV line; message carries path and line number."""

    def __init__(self, path: str | Path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


@dataclass(frozen=True, order=True)
class Phrase:
    """A non-empty sequence of lowercase word tokens."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("phrase must have at least one token")
        for tok in self.tokens:
            if not tok or "\t" in tok or "\n" in tok:
                raise ValueError(f"invalid phrase token: {tok!r}")

    @classmethod
    def parse(cls, text: str) -> "Phrase":
        """Normalize free text: lowercase, whitespace-tokenize."""
        return cls(tuple(text.lower().split()))

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class LabeledTriple:
    head: Phrase
    relation: str
    tail: Phrase
    label: int = 1

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")

    def key(self) -> tuple[Phrase, str, Phrase]:
        """Identity of the statement, ignoring the label."""
        return (self.head, self.relation, self.tail)

    def phrase(self, slot: str) -> Phrase:
        if slot == HEAD:
            return self.head
        if slot == TAIL:
            return self.tail
        raise ValueError(f"unknown slot {slot!r}")

    def replace(self, slot: str, phrase: Phrase, label: int = 0) -> "LabeledTriple":
        if slot == HEAD:
            return LabeledTriple(phrase, self.relation, self.tail, label)
        if slot == TAIL:
            return LabeledTriple(self.head, self.relation, phrase, label)
        raise ValueError(f"unknown slot {slot!r}")


@dataclass
class Splits:
    train: list[LabeledTriple]
    validation: list[LabeledTriple]
    test: list[LabeledTriple]


class KnowledgeBase:
    """Immutable store of positive triples with slot and membership indices.

    ``triples`` holds the positive (training) statements. Evaluation splits,
    when present, live in ``splits``; they are invisible to the slot index and
    to membership checks, which only ever see stored positives.
    """

    def __init__(self, positives: list[LabeledTriple], splits: Splits | None = None):
        seen: set[tuple] = set()
        for t in positives:
            if t.label != 1:
                raise ValueError(f"KB store accepts positives only, got label 0: {t}")
            if t.key() in seen:
                raise ValueError(f"duplicate positive triple: {t.key()}")
            seen.add(t.key())
        self.triples: tuple[LabeledTriple, ...] = tuple(positives)
        self._keys = seen
        self.relations: frozenset[str] = frozenset(t.relation for t in positives)
        # Phrase vocabulary in first-occurrence order (heads before tails per triple).
        phrases: list[Phrase] = []
        phrase_seen: set[Phrase] = set()
        for t in positives:
            for p in (t.head, t.tail):
                if p not in phrase_seen:
                    phrase_seen.add(p)
                    phrases.append(p)
        self.phrases: tuple[Phrase, ...] = tuple(phrases)
        self.phrase_positions: dict[Phrase, int] = {p: i for i, p in enumerate(phrases)}
        self.slot_index: dict[tuple[str, str], frozenset[Phrase]] = build_slot_index(positives)
        self.splits = splits if splits is not None else Splits(list(positives), [], [])

    def slot_phrases(self, relation: str, slot: str) -> frozenset[Phrase]:
        """Phrases observed in `slot` of `relation` among stored positives."""
        if slot not in SLOTS:
            raise ValueError(f"unknown slot {slot!r}")
        return self.slot_index.get((relation, slot), frozenset())

    def contains(self, triple: LabeledTriple) -> bool:
        """True iff (head, relation, tail) is a stored positive."""
        return triple.key() in self._keys

    def __len__(self) -> int:
        return len(self.triples)


def build_slot_index(triples: list[LabeledTriple]) -> dict[tuple[str, str], frozenset[Phrase]]:
    index: dict[tuple[str, str], set[Phrase]] = defaultdict(set)
    for t in triples:
        index[(t.relation, HEAD)].add(t.head)
        index[(t.relation, TAIL)].add(t.tail)
    return {k: frozenset(v) for k, v in index.items()}


def load_tsv(
    path: str | Path,
    has_labels: bool = False,
    column_order: str = "rht",
) -> list[LabeledTriple]:
    """Read a triple TSV, collapsing duplicate positive lines with a warning.

    `column_order` is a permutation of "rht" mapping external column layouts
    onto (relation, head, tail); an optional trailing label column follows.
    Triples are returned in file order. Without labels every triple is
    positive.
    """
    if sorted(column_order) != ["h", "r", "t"]:
        raise ValueError(f"column_order must be a permutation of 'rht', got {column_order!r}")
    expected = 4 if has_labels else 3
    triples: list[LabeledTriple] = []
    seen_positive: set[tuple] = set()
    duplicates = 0
    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != expected:
                raise ParseError(path, line_no, f"expected {expected} tab-separated fields, got {len(fields)}")
            relation = fields[column_order.index("r")].strip()
            head_text = fields[column_order.index("h")]
            tail_text = fields[column_order.index("t")]
            if not relation:
                raise ParseError(path, line_no, "empty relation")
            if has_labels:
                label_text = fields[3].strip()
                if label_text not in ("0", "1"):
                    raise ParseError(path, line_no, f"label must be 0 or 1, got {label_text!r}")
                label = int(label_text)
            else:
                label = 1
            try:
                head = Phrase.parse(head_text)
                tail = Phrase.parse(tail_text)
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from exc
            triple = LabeledTriple(head, relation, tail, label)
            if label == 1:
                if triple.key() in seen_positive:
                    duplicates += 1
                    continue
                seen_positive.add(triple.key())
            triples.append(triple)
    if duplicates:
        logger.warning("collapsed %d duplicate positive lines in %s", duplicates, path)
    return triples


def save_tsv(triples: list[LabeledTriple], path: str | Path, with_labels: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in triples:
            fields = [t.relation, t.head.text, t.tail.text]
            if with_labels:
                fields.append(str(t.label))
            f.write("\t".join(fields) + "\n")


def build_true_negative_split(
    kb: KnowledgeBase,
    negation_prefix: str = "Not",
    *,
    seed: int = 0,
    validation_fraction: float = 0.5,
    balance_per_relation: bool = True,
) -> KnowledgeBase:
    """Rebuild a KB whose test-time negatives come from negated relations.

    Relations are paired as (r, prefix+r). Only triples of paired relations
    survive. Triples under prefix+r become label-0 triples under r and are
    divided between validation and test (`validation_fraction` of them to
    validation); an equal number of positives joins each evaluation split so
    classes stay balanced, per relation when `balance_per_relation` is set.
    The remaining positives form the training split and the returned KB's
    triple store.
    """
    import numpy as np

    base_relations = sorted(
        r for r in kb.relations if (negation_prefix + r) in kb.relations
    )
    if not base_relations:
        raise ValueError(f"no relation pairs (r, {negation_prefix}r) found in KB")
    base_set = set(base_relations)

    positives_by_rel: dict[str, list[LabeledTriple]] = defaultdict(list)
    negatives_by_rel: dict[str, list[LabeledTriple]] = defaultdict(list)
    for t in kb.triples:
        if t.relation in base_set:
            positives_by_rel[t.relation].append(t)
        elif t.relation.startswith(negation_prefix) and t.relation[len(negation_prefix):] in base_set:
            rewritten = LabeledTriple(t.head, t.relation[len(negation_prefix):], t.tail, 0)
            negatives_by_rel[rewritten.relation].append(rewritten)

    rng = np.random.default_rng(seed)
    groups: list[str] | list[None] = list(base_relations) if balance_per_relation else [None]
    train: list[LabeledTriple] = []
    val_pos: list[LabeledTriple] = []
    val_neg: list[LabeledTriple] = []
    test_pos: list[LabeledTriple] = []
    test_neg: list[LabeledTriple] = []
    for group in groups:
        if group is None:
            pos = [t for r in base_relations for t in positives_by_rel[r]]
            neg = [t for r in base_relations for t in negatives_by_rel[r]]
        else:
            pos = positives_by_rel[group]
            neg = negatives_by_rel[group]
        n_val = int(round(len(neg) * validation_fraction))
        neg_perm = rng.permutation(len(neg))
        g_val_neg = [neg[i] for i in neg_perm[:n_val]]
        g_test_neg = [neg[i] for i in neg_perm[n_val:]]
        n_eval_pos = len(g_val_neg) + len(g_test_neg)
        if len(pos) <= n_eval_pos:
            name = group if group is not None else "KB"
            raise ValueError(
                f"{name}: {len(pos)} positives cannot balance {n_eval_pos} negatives "
                "and still leave a training split"
            )
        pos_perm = rng.permutation(len(pos))
        g_val_pos = [pos[i] for i in pos_perm[: len(g_val_neg)]]
        g_test_pos = [pos[i] for i in pos_perm[len(g_val_neg): n_eval_pos]]
        held_out = set(pos_perm[:n_eval_pos])
        train.extend(pos[i] for i in range(len(pos)) if i not in held_out)
        val_pos.extend(g_val_pos)
        val_neg.extend(g_val_neg)
        test_pos.extend(g_test_pos)
        test_neg.extend(g_test_neg)

    # Keep the surviving training positives in original KB order.
    train_keys = {t.key() for t in train}
    train_ordered = [t for t in kb.triples if t.key() in train_keys]
    splits = Splits(train_ordered, val_pos + val_neg, test_pos + test_neg)
    return KnowledgeBase(train_ordered, splits)
