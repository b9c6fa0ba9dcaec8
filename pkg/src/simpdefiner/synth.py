"""Synthetic corpora for exercising the pipeline without licensed dictionaries.

Two generators: a small memorization corpus, and a two-register world in
which complex definitions draw content words from partition A while the
simple corpus draws from a disjoint partition B, with function words shared.
The register world is what the zero-shot simplification experiments run on.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .data import DictionaryEntry, SimpleSentence

FUNCTION_WORDS = ("a", "the", "that", "thing", "is", "it", "you", "see", "here", "near")


def make_overfit_corpus(n_entries: int = 50, n_simple: int = 200, seed: int = 0,
                        ) -> tuple[list[DictionaryEntry], list[SimpleSentence]]:
    """Distinct, memorizable definitions plus a small unaligned simple corpus."""
    rng = random.Random(seed)
    rels = [f"rel{j}" for j in range(8)]
    props = [f"prop{k}" for k in range(8)]
    combos = [(j, k) for j in range(len(rels)) for k in range(len(props))]
    rng.shuffle(combos)
    entries = []
    for i in range(n_entries):
        j, k = combos[i % len(combos)]
        word = f"item{i}"
        entries.append(DictionaryEntry(
            word=word,
            context=f"you see the {word} here",
            definition=f"a thing that {rels[j]} the {props[k]}",
        ))
    simple_rels = [f"srel{j}" for j in range(6)]
    simple_props = [f"sprop{k}" for k in range(6)]
    sentences = []
    for _ in range(n_simple):
        rel = rng.choice(simple_rels)
        prop = rng.choice(simple_props)
        sentences.append(SimpleSentence(text=f"a thing that {rel} the {prop}"))
    return entries, sentences


@dataclass(frozen=True)
class RegisterWorld:
    """Disentanglement testbed: A-register dictionary, B-register simple corpus."""

    train_entries: list[DictionaryEntry]
    heldout_entries: list[DictionaryEntry]
    simple_sentences: list[SimpleSentence]
    a_content: frozenset[str]
    b_content: frozenset[str]
    function_words: frozenset[str]

    def content_fractions(self, token_lists: list[list[str]]) -> tuple[float, float]:
        """(A-fraction, B-fraction) of content tokens pooled over all outputs."""
        a = b = 0
        for tokens in token_lists:
            for tok in tokens:
                if tok in self.a_content:
                    a += 1
                elif tok in self.b_content:
                    b += 1
        total = a + b
        if total == 0:
            return 0.0, 0.0
        return a / total, b / total


def make_register_world(n_items: int = 150, n_heldout: int = 100,
                        n_simple: int = 240, seed: int = 0) -> RegisterWorld:
    """Paired-register world: every item has an A-register complex definition;
    the simple corpus contains unaligned B-register sentences of the same
    shape. Held-out entries reuse trained words under a different context
    template, so register behavior is measured on inputs never seen in G."""
    rng = random.Random(seed)
    n_rel, n_prop = 6, 8
    a_rels = [f"arel{j}" for j in range(n_rel)]
    a_props = [f"aprop{k}" for k in range(n_prop)]
    b_rels = [f"brel{j}" for j in range(n_rel)]
    b_props = [f"bprop{k}" for k in range(n_prop)]

    train_entries = []
    heldout_entries = []
    for i in range(n_items):
        j, k = rng.randrange(n_rel), rng.randrange(n_prop)
        word = f"word{i}"
        definition = f"a thing that {a_rels[j]} the {a_props[k]}"
        train_entries.append(DictionaryEntry(
            word=word, context=f"you see the {word} here", definition=definition))
        if len(heldout_entries) < n_heldout:
            heldout_entries.append(DictionaryEntry(
                word=word, context=f"the {word} is near", definition=definition))

    sentences = []
    for _ in range(n_simple):
        j, k = rng.randrange(n_rel), rng.randrange(n_prop)
        if rng.random() < 0.5:
            text = f"a thing that {b_rels[j]} the {b_props[k]}"
        else:
            text = f"it is a thing that {b_rels[j]} the {b_props[k]}"
        sentences.append(SimpleSentence(text=text))

    return RegisterWorld(
        train_entries=train_entries,
        heldout_entries=heldout_entries,
        simple_sentences=sentences,
        a_content=frozenset(a_rels + a_props),
        b_content=frozenset(b_rels + b_props),
        function_words=frozenset(FUNCTION_WORDS),
    )
