"""Tokenization, vocabulary, dataset loading, batching and corpus corruption.

Dataset files are JSONL (UTF-8), one object per line:
  dictionary entries:  {"word": str, "context": str, "definition": str}
  simple corpus:       {"text": str}

Tokenization is whitespace word-level with lowercasing; runs of ideographic
characters are split into single-character tokens so the level-lexicon
metrics stay well defined for Chinese-style text.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD, BOS, EOS, SEP, UNK, BLANK = 0, 1, 2, 3, 4, 5

PAD_TOKEN = "[PAD]"
BOS_TOKEN = "[BOS]"
EOS_TOKEN = "[EOS]"
SEP_TOKEN = "[SEP]"
UNK_TOKEN = "[UNK]"
BLANK_TOKEN = "[BLANK]"

RESERVED_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, SEP_TOKEN, UNK_TOKEN, BLANK_TOKEN)


class SchemaError(ValueError):
    """A dataset line violated the expected JSONL schema."""

    def __init__(self, path: str, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def _is_ideographic(ch: str) -> bool:
    code = ord(ch)
    return (
        0x4E00 <= code <= 0x9FFF
        or 0x3400 <= code <= 0x4DBF
        or 0xF900 <= code <= 0xFAFF
        or 0x20000 <= code <= 0x2A6DF
    )


def tokenize(text: str) -> list[str]:
    """Whitespace word tokens, lowercased; ideographic runs become single chars."""
    tokens: list[str] = []
    for chunk in text.split():
        if any(_is_ideographic(ch) for ch in chunk):
            buf = ""
            for ch in chunk:
                if _is_ideographic(ch):
                    if buf:
                        tokens.append(buf.lower())
                        buf = ""
                    tokens.append(ch)
                else:
                    buf += ch
            if buf:
                tokens.append(buf.lower())
        else:
            tokens.append(chunk.lower())
    return tokens


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


class Vocab:
    """Token/id bijection with fixed reserved ids; built from training text only."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._id_to_token: list[str] = list(RESERVED_TOKENS)
        self._token_to_id: dict[str, int] = {t: i for i, t in enumerate(RESERVED_TOKENS)}
        for tok in tokens:
            self.add(tok)

    @classmethod
    def build(cls, corpora: Iterable[Sequence[str]]) -> "Vocab":
        """Build from token sequences, keeping first-seen order (deterministic)."""
        vocab = cls()
        for seq in corpora:
            for tok in seq:
                vocab.add(tok)
        return vocab

    def add(self, token: str) -> int:
        idx = self._token_to_id.get(token)
        if idx is None:
            idx = len(self._id_to_token)
            self._token_to_id[token] = idx
            self._id_to_token.append(token)
        return idx

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id(self, token: str) -> int:
        return self._token_to_id.get(token, UNK)

    def token(self, idx: int) -> str:
        return self._id_to_token[idx]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self._id_to_token[i] for i in ids]

    def to_dict(self) -> dict:
        return {"tokens": self._id_to_token[len(RESERVED_TOKENS):]}

    @classmethod
    def from_dict(cls, payload: dict) -> "Vocab":
        return cls(payload["tokens"])


@dataclass(frozen=True)
class DictionaryEntry:
    """One (word, context, complex-definition) triple of the supervised corpus."""

    word: str
    context: str
    definition: str

    def validate(self) -> None:
        if not tokenize(self.word):
            raise ValueError("empty word")
        if not tokenize(self.context):
            raise ValueError("empty context")
        if not tokenize(self.definition):
            raise ValueError("empty definition")
        # substring containment, case-insensitive and whitespace-insensitive:
        # inflected forms in the context ("commanders" for "commander") count
        needle = "".join(self.word.lower().split())
        if needle not in self.context.lower().replace(" ", ""):
            raise ValueError(f"context does not contain the word {self.word!r}")

    def to_json(self) -> str:
        return json.dumps(
            {"word": self.word, "context": self.context, "definition": self.definition},
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class SimpleSentence:
    text: str

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.text)

    def to_json(self) -> str:
        return json.dumps({"text": self.text}, ensure_ascii=False)


@dataclass(frozen=True)
class CorruptionConfig:
    """Per-token delete/blank draws plus a bounded local shuffle window."""

    p_delete: float = 0.2
    p_blank: float = 0.2
    shuffle_window: int = 5
    rng_seed: int = 0

    def validate(self) -> None:
        if not (0.0 <= self.p_delete <= 1.0 and 0.0 <= self.p_blank <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.p_delete + self.p_blank > 1.0 + 1e-12:
            raise ValueError(
                f"p_delete + p_blank must be <= 1, got {self.p_delete + self.p_blank}"
            )
        if self.shuffle_window < 0:
            raise ValueError("shuffle_window must be non-negative")


def corrupt(
    tokens: Sequence[str], cfg: CorruptionConfig, rng: random.Random | None = None
) -> list[str]:
    """Produce the corrupted sequence: per-token delete/blank, then local shuffle.

    Each token takes one categorical draw {delete, blank, keep}; survivors are
    reordered by sorting index + U[0, k) noise keys (stable), which bounds any
    displacement to k-1 positions. At least one token always survives.
    """
    cfg.validate()
    if rng is None:
        rng = random.Random(cfg.rng_seed)
    survivors: list[str] = []
    for tok in tokens:
        u = rng.random()
        if u < cfg.p_delete:
            continue
        if u < cfg.p_delete + cfg.p_blank:
            survivors.append(BLANK_TOKEN)
        else:
            survivors.append(tok)
    if not survivors and tokens:
        keep = rng.randrange(len(tokens))
        survivors = [tokens[keep]]
    if cfg.shuffle_window > 1 and len(survivors) > 1:
        keys = [i + rng.uniform(0.0, cfg.shuffle_window) for i in range(len(survivors))]
        order = sorted(range(len(survivors)), key=lambda i: keys[i])
        survivors = [survivors[i] for i in order]
    return survivors


def encode_input(word: str, context: str, vocab: Vocab) -> list[int]:
    """Ids of (word ; [SEP] ; context); no [BOS]/[EOS], the model adds those."""
    return vocab.encode(tokenize(word)) + [SEP] + vocab.encode(tokenize(context))


def build_input(entry: DictionaryEntry, vocab: Vocab) -> list[int]:
    """Validated dictionary-entry input construction; see encode_input."""
    entry.validate()
    return encode_input(entry.word, entry.context, vocab)


def _read_jsonl(path: str) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise SchemaError(path, line_no, "expected a JSON object")
            yield line_no, obj


def _require_str(path: str, line_no: int, obj: dict, field: str) -> str:
    if field not in obj:
        raise SchemaError(path, line_no, f"missing field {field!r}")
    value = obj[field]
    if not isinstance(value, str) or not value.strip():
        raise SchemaError(path, line_no, f"field {field!r} must be a non-empty string")
    return value


def load_dictionary(path: str) -> list[DictionaryEntry]:
    entries = []
    for line_no, obj in _read_jsonl(path):
        entry = DictionaryEntry(
            word=_require_str(path, line_no, obj, "word"),
            context=_require_str(path, line_no, obj, "context"),
            definition=_require_str(path, line_no, obj, "definition"),
        )
        try:
            entry.validate()
        except ValueError as exc:
            raise SchemaError(path, line_no, str(exc)) from exc
        entries.append(entry)
    return entries


def load_simple_corpus(path: str) -> list[SimpleSentence]:
    sentences = []
    for line_no, obj in _read_jsonl(path):
        sentences.append(SimpleSentence(text=_require_str(path, line_no, obj, "text")))
    return sentences


def save_jsonl(items: Iterable[DictionaryEntry | SimpleSentence], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(item.to_json() + "\n")


@dataclass
class Batch:
    """Padded source/target id matrices with boolean non-pad masks.

    ``tgt`` rows are wrapped [BOS] ... [EOS]; the model consumes tgt[:, :-1]
    and predicts tgt[:, 1:].
    """

    src: np.ndarray
    src_mask: np.ndarray
    tgt: np.ndarray
    tgt_mask: np.ndarray

    def __len__(self) -> int:
        return self.src.shape[0]


def _pad(rows: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), PAD, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = row
        mask[i, : len(row)] = True
    return ids, mask


def pack_batch(pairs: Sequence[tuple[Sequence[int], Sequence[int]]]) -> Batch:
    """Pad a list of (src_ids, tgt_ids) pairs; targets get [BOS]/[EOS] wrapping."""
    if not pairs:
        raise ValueError("cannot pack an empty batch")
    src, src_mask = _pad([list(s) for s, _ in pairs])
    tgt, tgt_mask = _pad([[BOS] + list(t) + [EOS] for _, t in pairs])
    return Batch(src=src, src_mask=src_mask, tgt=tgt, tgt_mask=tgt_mask)


def make_batches(
    pairs: Sequence[tuple[Sequence[int], Sequence[int]]],
    batch_size: int,
    rng: random.Random | None = None,
) -> Iterator[Batch]:
    """One epoch of padded batches; order is shuffled when an rng is given."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not pairs:
        raise ValueError("cannot batch an empty dataset")
    order = list(range(len(pairs)))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = [pairs[i] for i in order[start : start + batch_size]]
        yield pack_batch(chunk)
