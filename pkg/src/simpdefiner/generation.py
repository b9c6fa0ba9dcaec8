"""Decoding of complex and simple definitions from a trained model.

Both paths run the same decoder stack; they differ only in which per-flag
parameter bank is active. The simple path is the zero-shot route: encoder
states of (word ; [SEP] ; context) are fed to the decoder under the simple
flag with cross-attention enabled, with no retraining and no extra inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .data import BLANK, BOS, EOS, PAD, SEP, Vocab, encode_input
from .model import ComplexityFlag, SimpDefinerModel

# tokens never emitted during generation ([EOS] and [UNK] stay allowed)
BANNED_OUTPUT_IDS = (PAD, BOS, SEP, BLANK)


@dataclass(frozen=True)
class GenerationConfig:
    mode: str = "greedy"
    beam_size: int = 4
    max_new_tokens: int = 48
    length_penalty: float = 1.0

    def validate(self) -> None:
        if self.mode not in ("greedy", "beam"):
            raise ValueError(f"unknown decoding mode {self.mode!r}")
        if self.beam_size < 1 or self.max_new_tokens < 1:
            raise ValueError("beam_size and max_new_tokens must be >= 1")


@dataclass(frozen=True)
class GenerationResult:
    """Generated ids (after [BOS], including a final [EOS] when reached),
    their log-probabilities, the length-normalized score, and the flag used."""

    token_ids: tuple[int, ...]
    logprobs: tuple[float, ...]
    score: float
    flag: ComplexityFlag
    ended_with_eos: bool

    def surface_ids(self) -> list[int]:
        ids = list(self.token_ids)
        if self.ended_with_eos:
            ids = ids[:-1]
        return ids

    def text(self, vocab: Vocab) -> str:
        return " ".join(vocab.decode(self.surface_ids()))


StepFn = Callable[[Sequence[int]], np.ndarray]


def _normalized(logprob_sum: float, length: int, alpha: float) -> float:
    return logprob_sum / (max(1, length) ** alpha)


def greedy_search(step_fn: StepFn, gcfg: GenerationConfig,
                  bos: int = BOS, eos: int = EOS) -> GenerationResult:
    ids: list[int] = [bos]
    logprobs: list[float] = []
    ended = False
    for _ in range(gcfg.max_new_tokens):
        logp = step_fn(ids)
        nxt = int(np.argmax(logp))  # argmax breaks ties toward the lowest id
        ids.append(nxt)
        logprobs.append(float(logp[nxt]))
        if nxt == eos:
            ended = True
            break
    return GenerationResult(
        token_ids=tuple(ids[1:]),
        logprobs=tuple(logprobs),
        score=_normalized(sum(logprobs), len(logprobs), gcfg.length_penalty),
        flag=ComplexityFlag.COMPLEX,
        ended_with_eos=ended,
    )


def beam_search(step_fn: StepFn, gcfg: GenerationConfig,
                bos: int = BOS, eos: int = EOS) -> GenerationResult:
    """Length-normalized beam search; ties broken deterministically by token id.

    Hypotheses are ranked by cumulative log-probability while open and by
    sum(logprobs) / len**alpha once finished (or truncated at the budget).
    """
    beams: list[tuple[tuple[int, ...], float, tuple[float, ...]]] = [((bos,), 0.0, ())]
    done: list[GenerationResult] = []
    for _ in range(gcfg.max_new_tokens):
        candidates: list[tuple[float, tuple[int, ...], tuple[float, ...]]] = []
        for ids, total, lps in beams:
            logp = step_fn(ids)
            for tok, lp in enumerate(logp):
                if np.isneginf(lp):
                    continue
                candidates.append((total + float(lp), ids + (tok,), lps + (float(lp),)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = []
        for total, ids, lps in candidates[: gcfg.beam_size]:
            if ids[-1] == eos:
                done.append(GenerationResult(
                    token_ids=ids[1:], logprobs=lps,
                    score=_normalized(total, len(lps), gcfg.length_penalty),
                    flag=ComplexityFlag.COMPLEX, ended_with_eos=True))
            else:
                beams.append((ids, total, lps))
        if not beams:
            break
    for ids, total, lps in beams:  # budget reached without [EOS]
        done.append(GenerationResult(
            token_ids=ids[1:], logprobs=lps,
            score=_normalized(total, len(lps), gcfg.length_penalty),
            flag=ComplexityFlag.COMPLEX, ended_with_eos=False))
    return max(done, key=lambda r: (r.score, tuple(-i for i in r.token_ids)))


def _make_step_fn(model: SimpDefinerModel, enc, enc_mask,
                  flag: ComplexityFlag) -> StepFn:
    vocab_size = model.config.vocab_size

    def step(prefix: Sequence[int]) -> np.ndarray:
        ids = np.asarray([list(prefix)], dtype=np.int64)
        with ag.no_grad():
            logits = model.decode(ids, enc, enc_mask, flag).data[0, -1]
        shifted = logits - logits.max()
        logp = shifted - np.log(np.exp(shifted).sum())
        for banned in BANNED_OUTPUT_IDS:
            if banned < vocab_size:
                logp[banned] = -np.inf
        return logp

    return step


def generate(model: SimpDefinerModel, vocab: Vocab, word: str, context: str,
             gcfg: GenerationConfig, flag: ComplexityFlag) -> GenerationResult:
    gcfg.validate()
    if model.has_nonfinite_weights():
        raise RuntimeError("model weights contain NaN/Inf; refusing to generate")
    src = np.asarray([encode_input(word, context, vocab)], dtype=np.int64)
    src_mask = np.ones_like(src, dtype=bool)
    with ag.no_grad():
        enc = model.encode(src, src_mask)
    step_fn = _make_step_fn(model, enc, src_mask, flag)
    if gcfg.mode == "beam":
        result = beam_search(step_fn, gcfg)
    else:
        result = greedy_search(step_fn, gcfg)
    return GenerationResult(
        token_ids=result.token_ids, logprobs=result.logprobs,
        score=result.score, flag=flag, ended_with_eos=result.ended_with_eos)


def generate_complex(model: SimpDefinerModel, vocab: Vocab, word: str,
                     context: str, gcfg: GenerationConfig) -> GenerationResult:
    """Decode with the complex-flag bank over the encoded (word ; [SEP] ; context)."""
    return generate(model, vocab, word, context, gcfg, ComplexityFlag.COMPLEX)


def generate_simple(model: SimpDefinerModel, vocab: Vocab, word: str,
                    context: str, gcfg: GenerationConfig) -> GenerationResult:
    """Zero-shot simple definition: identical to the complex path except that
    the simple-flag bank is active."""
    return generate(model, vocab, word, context, gcfg, ComplexityFlag.SIMPLE)
