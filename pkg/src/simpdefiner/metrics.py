"""Evaluation suite: corpus BLEU, SARI, an encoder-cosine similarity proxy,
and difficulty-level proportions against a graded lexicon.

All metrics are pure functions of their inputs. The similarity proxy
mean-pools the trained model's own encoder states; it is NOT comparable to
sentence-embedding similarity numbers produced by external toolkits.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .data import Vocab
from .model import SimpDefinerModel

Tokens = Sequence[str]

NGRAM_ORDER = 4

LOW_BAND_MAX = 3   # levels 1-3
HIGH_BAND_MIN = 7  # levels 7-9 and harder


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[Tokens], references: Sequence[Tokens]) -> float:
    """Corpus BLEU-4 with clipped counts, 0..100.

    Orders at which the hypothesis corpus has no n-grams at all are skipped
    (effective order), which keeps BLEU(h, h) == 100 for hypotheses shorter
    than 4 tokens. A zero clipped-match count at an order with H_n > 0
    hypothesis n-grams is smoothed to 1/(2*H_n). Brevity penalty
    exp(1 - r/c) applies when the hypothesis corpus is shorter.
    """
    if len(hypotheses) != len(references):
        raise ValueError(
            f"bleu: {len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise ValueError("bleu: empty corpus")
    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    if hyp_len == 0:
        return 0.0
    log_precisions = []
    for n in range(1, NGRAM_ORDER + 1):
        matched = 0
        total = 0
        for hyp, ref in zip(hypotheses, references):
            hyp_counts = _ngrams(hyp, n)
            clipped = hyp_counts & _ngrams(ref, n)
            matched += sum(clipped.values())
            total += sum(hyp_counts.values())
        if total == 0:
            continue
        precision = matched / total if matched > 0 else 1.0 / (2 * total)
        log_precisions.append(math.log(precision))
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(sum(log_precisions) / len(log_precisions))


@dataclass(frozen=True)
class SariScore:
    sari: float
    add: float
    keep: float
    delete: float


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _sari_ngram(src: Counter, hyp: Counter, refs: Counter, n_refs: int
                ) -> tuple[float, float, float]:
    """(keep, delete, add) for one n-gram order: keep and add are F1 scores,
    delete is precision only; source/hypothesis counts are scaled by the
    number of references before Counter intersection."""
    src_rep = Counter({g: c * n_refs for g, c in src.items()})
    hyp_rep = Counter({g: c * n_refs for g, c in hyp.items()})

    kept = src_rep & hyp_rep
    kept_good = kept & refs
    keepable = src_rep & refs
    keep_p = (sum(kept_good[g] / kept[g] for g in kept_good) / len(kept)
              if kept else 0.0)
    keep_r = (sum(kept_good[g] / keepable[g] for g in kept_good) / len(keepable)
              if keepable else 0.0)

    deleted = src_rep - hyp_rep
    deleted_good = deleted - refs
    delete_p = (sum(deleted_good[g] / deleted[g] for g in deleted_good) / len(deleted)
                if deleted else 0.0)

    added = set(hyp) - set(src)
    added_good = added & set(refs)
    addable = set(refs) - set(src)
    add_p = len(added_good) / len(added) if added else 0.0
    add_r = len(added_good) / len(addable) if addable else 0.0

    return _f1(keep_p, keep_r), delete_p, _f1(add_p, add_r)


def sari(sources: Sequence[Tokens], hypotheses: Sequence[Tokens],
         reference_lists: Sequence[Sequence[Tokens]]) -> SariScore:
    """SARI add/keep/delete over n-gram orders 1..4, averaged over orders and
    items; the final score is the mean of the three operation scores (0..100)."""
    if not (len(sources) == len(hypotheses) == len(reference_lists)):
        raise ValueError("sari: sources, hypotheses and references must align")
    if not sources:
        raise ValueError("sari: empty corpus")
    keep_scores, delete_scores, add_scores = [], [], []
    for src, hyp, refs in zip(sources, hypotheses, reference_lists):
        if not refs:
            raise ValueError("sari: every item needs at least one reference")
        per_n = []
        for n in range(1, NGRAM_ORDER + 1):
            ref_counts = Counter()
            for ref in refs:
                ref_counts.update(_ngrams(ref, n))
            per_n.append(_sari_ngram(_ngrams(src, n), _ngrams(hyp, n),
                                     ref_counts, len(refs)))
        keep_scores.append(sum(k for k, _, _ in per_n) / NGRAM_ORDER)
        delete_scores.append(sum(d for _, d, _ in per_n) / NGRAM_ORDER)
        add_scores.append(sum(a for _, _, a in per_n) / NGRAM_ORDER)
    keep = 100.0 * sum(keep_scores) / len(keep_scores)
    delete = 100.0 * sum(delete_scores) / len(delete_scores)
    add = 100.0 * sum(add_scores) / len(add_scores)
    return SariScore(sari=(keep + delete + add) / 3.0, add=add, keep=keep, delete=delete)


def _mean_pooled_encoding(model: SimpDefinerModel, vocab: Vocab,
                          tokens: Tokens) -> np.ndarray:
    if not tokens:
        raise ValueError("similarity_proxy: empty sentence")
    ids = np.asarray([vocab.encode(list(tokens))], dtype=np.int64)
    with ag.no_grad():
        states = model.encode(ids).data[0]
    return states.mean(axis=0)


def similarity_proxy(hypothesis: Tokens, reference: Tokens,
                     model: SimpDefinerModel, vocab: Vocab) -> float:
    """Cosine of mean-pooled encoder states, in [-1, 1]."""
    a = _mean_pooled_encoding(model, vocab, hypothesis)
    b = _mean_pooled_encoding(model, vocab, reference)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.dot(a, b) / denom)


def _is_punctuation(token: str) -> bool:
    return bool(token) and not any(ch.isalnum() for ch in token)


class LevelLexicon:
    """token -> difficulty level (1 easiest .. 9 hardest); TSV "token<TAB>level"."""

    def __init__(self, levels: dict[str, int]):
        for token, level in levels.items():
            if not 1 <= level <= 9:
                raise ValueError(f"level for {token!r} must lie in 1..9, got {level}")
        self.levels = dict(levels)

    @classmethod
    def from_tsv(cls, path: str) -> "LevelLexicon":
        levels: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{line_no}: expected 'token<TAB>level'")
                token, level_str = parts
                if token in levels:
                    raise ValueError(f"{path}:{line_no}: duplicate token {token!r}")
                try:
                    levels[token] = int(level_str)
                except ValueError as exc:
                    raise ValueError(f"{path}:{line_no}: level must be an integer") from exc
        return cls(levels)

    def level(self, token: str) -> int | None:
        return self.levels.get(token)


def level_proportions(definitions: Sequence[Tokens], lexicon: LevelLexicon,
                      include_out_of_lexicon: bool = True) -> tuple[float, float]:
    """(low_pct, high_pct) over all non-punctuation tokens of all definitions.

    Out-of-lexicon tokens count toward the denominator and the high band
    (treated as harder than level 9); pass include_out_of_lexicon=False to
    restrict both numerators and the denominator to lexicon tokens.
    """
    low = high = total = 0
    for definition in definitions:
        for token in definition:
            if _is_punctuation(token):
                continue
            level = lexicon.level(token)
            if level is None:
                if include_out_of_lexicon:
                    total += 1
                    high += 1
                continue
            total += 1
            if level <= LOW_BAND_MAX:
                low += 1
            elif level >= HIGH_BAND_MIN:
                high += 1
    if total == 0:
        return 0.0, 0.0
    return 100.0 * low / total, 100.0 * high / total


@dataclass
class EvalReport:
    """Scores for one generation run; null fields mark inapplicable metrics."""

    items: int
    unk_tokens: int
    bleu_complex: float | None = None
    bleu_simple: float | None = None
    sari: float | None = None
    sari_add: float | None = None
    sari_keep: float | None = None
    sari_delete: float | None = None
    similarity: float | None = None
    level_low_pct: float | None = None
    level_high_pct: float | None = None

    def to_dict(self) -> dict:
        return {
            "items": self.items,
            "unk_tokens": self.unk_tokens,
            "bleu_complex": self.bleu_complex,
            "bleu_simple": self.bleu_simple,
            "sari": self.sari,
            "sari_add": self.sari_add,
            "sari_keep": self.sari_keep,
            "sari_delete": self.sari_delete,
            "similarity": self.similarity,
            "level_low_pct": self.level_low_pct,
            "level_high_pct": self.level_high_pct,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)
