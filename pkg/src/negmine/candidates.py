"""Candidate negative statements by nearest-neighbor phrase substitution.

For each KB positive, the head and the tail phrase are each replaced by their
k nearest neighbor phrases, keeping only candidates that (a) are not stored
positives, (b) put the substituted phrase in a slot where that relation has
actually seen it, and (c) have not been emitted before. The surviving
candidates are plausible-but-unsupported statements, ready for ranking.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .ioutil import atomic_write_text
from .kb import HEAD, SLOTS, TAIL, KnowledgeBase, LabeledTriple, ParseError, Phrase
from .retrieval import PhraseIndex, knn


@dataclass(frozen=True)
class Candidate:
    """An out-of-KB triple plus the substitution that produced it."""

    triple: LabeledTriple
    source: LabeledTriple
    slot: str
    neighbor_rank: int  # 1-based position in the k-NN list

    def __post_init__(self):
        if self.slot not in SLOTS:
            raise ValueError(f"unknown slot {self.slot!r}")
        if self.neighbor_rank < 1:
            raise ValueError("neighbor_rank is 1-based")


def generate_candidates(kb: KnowledgeBase, index: PhraseIndex, k: int) -> list[Candidate]:
    """All filtered substitution candidates, in deterministic order.

    Order: positives in KB order; head substitutions before tail; neighbors
    by ascending distance. Duplicate candidate triples keep their first
    occurrence only, so each positive yields at most 2k candidates and
    usually fewer.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    neighbor_cache: dict[Phrase, list[tuple[Phrase, float]]] = {}
    seen: set[tuple] = set()
    out: list[Candidate] = []
    for positive in kb.triples:
        for slot in (HEAD, TAIL):
            original = positive.phrase(slot)
            neighbors = neighbor_cache.get(original)
            if neighbors is None:
                neighbors = knn(index, original, k)
                neighbor_cache[original] = neighbors
            allowed = kb.slot_phrases(positive.relation, slot)
            for rank, (replacement, _) in enumerate(neighbors, start=1):
                if replacement not in allowed:
                    continue
                triple = positive.replace(slot, replacement, label=0)
                if kb.contains(triple):
                    continue
                key = triple.key()
                if key in seen:
                    continue
                seen.add(key)
                out.append(Candidate(triple, positive, slot, rank))
    return out


@dataclass
class ValidationReport:
    """Violation counts over a candidate list; all zero for generator output."""

    in_kb_leaks: int = 0
    slot_violations: int = 0
    overflow_positives: int = 0
    duplicates: int = 0

    def total(self) -> int:
        return self.in_kb_leaks + self.slot_violations + self.overflow_positives + self.duplicates

    def ok(self) -> bool:
        return self.total() == 0


def validate_candidates(
    kb: KnowledgeBase, candidates: list[Candidate], k: int | None = None
) -> ValidationReport:
    """Independent recheck of every generation invariant.

    `k` bounds per-positive emission at 2k; when omitted, it is inferred as
    the largest neighbor_rank present.
    """
    report = ValidationReport()
    if k is None:
        k = max((c.neighbor_rank for c in candidates), default=0)
    per_positive: dict[tuple, int] = {}
    seen: set[tuple] = set()
    for c in candidates:
        if kb.contains(c.triple):
            report.in_kb_leaks += 1
        if c.triple.phrase(c.slot) not in kb.slot_phrases(c.triple.relation, c.slot):
            report.slot_violations += 1
        per_positive[c.source.key()] = per_positive.get(c.source.key(), 0) + 1
        key = c.triple.key()
        if key in seen:
            report.duplicates += 1
        seen.add(key)
    report.overflow_positives = sum(1 for n in per_positive.values() if n > 2 * k)
    return report


def write_candidates_tsv(candidates: list[Candidate], path: str | Path) -> None:
    lines = []
    for c in candidates:
        lines.append(
            "\t".join(
                [
                    c.triple.relation,
                    c.triple.head.text,
                    c.triple.tail.text,
                    c.source.head.text,
                    c.source.tail.text,
                    c.slot,
                    str(c.neighbor_rank),
                ]
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_candidates_tsv(path: str | Path) -> list[Candidate]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 7:
                raise ParseError(path, line_no, f"expected 7 tab-separated fields, got {len(fields)}")
            relation, head, tail, src_head, src_tail, slot, rank_text = fields
            try:
                rank = int(rank_text)
            except ValueError:
                raise ParseError(path, line_no, f"bad neighbor_rank {rank_text!r}") from None
            try:
                out.append(
                    Candidate(
                        LabeledTriple(Phrase.parse(head), relation, Phrase.parse(tail), 0),
                        LabeledTriple(Phrase.parse(src_head), relation, Phrase.parse(src_tail), 1),
                        slot,
                        rank,
                    )
                )
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
    return out
