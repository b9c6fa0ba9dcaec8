"""Acceptance suite: one test per criterion, each at its stated tolerance and
runtime budget. Paper-scale numbers are out of reach without pretrained
weights and licensed dictionaries, so these are property checks plus one
synthetic directional reproduction of the register-disentanglement effect.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from helpers import finite_difference, max_relative_error

from simpdefiner.checkpoint import load_checkpoint, save_checkpoint
from simpdefiner.cli import main
from simpdefiner.data import Vocab, pack_batch, save_jsonl, tokenize
from simpdefiner.generation import GenerationConfig, generate_complex, generate_simple
from simpdefiner.metrics import LevelLexicon, bleu, level_proportions, sari
from simpdefiner.model import ComplexityFlag, ModelConfig, SimpDefinerModel
from simpdefiner.synth import make_overfit_corpus, make_register_world
from simpdefiner.training import TrainConfig, TrainState, train

FIXTURES = __file__.rsplit("/", 1)[0] + "/fixtures"

GREEDY = GenerationConfig(mode="greedy", max_new_tokens=12)


def build_vocab(entries, sentences):
    streams = []
    for e in entries:
        streams += [tokenize(e.word), tokenize(e.context), tokenize(e.definition)]
    streams += [s.tokens for s in sentences]
    return Vocab.build(streams)


def register_experiment(share_ln=False, share_qp=False):
    """Train on the two-register world and measure the B-content fractions of
    both generation paths over the held-out items."""
    world = make_register_world(n_items=150, n_heldout=100, n_simple=240, seed=0)
    vocab = build_vocab(world.train_entries, world.simple_sentences)
    model = SimpDefinerModel(
        ModelConfig(vocab_size=len(vocab), d_model=48, n_heads=4,
                    n_encoder_layers=1, n_decoder_layers=1, d_ff=96,
                    dropout=0.1, max_len=32),
        seed=0, share_ln=share_ln, share_qp=share_qp)
    cfg = TrainConfig(lambda_alpha=0.8, lambda_beta=0.1, lambda_gamma=0.1,
                      learning_rate=3e-3, warmup_steps=50, batch_size=16,
                      max_steps=800, rng_seed=0,
                      share_ln=share_ln, share_qp=share_qp)
    train(model, vocab, world.train_entries, world.simple_sentences, cfg)
    complex_out, simple_out = [], []
    for entry in world.heldout_entries:
        complex_out.append(
            generate_complex(model, vocab, entry.word, entry.context, GREEDY)
            .text(vocab).split())
        simple_out.append(
            generate_simple(model, vocab, entry.word, entry.context, GREEDY)
            .text(vocab).split())
    _, b_complex = world.content_fractions(complex_out)
    _, b_simple = world.content_fractions(simple_out)
    return 100.0 * (b_simple - b_complex)


@pytest.fixture(scope="module")
def full_model_gap():
    start = time.monotonic()
    gap = register_experiment()
    return gap, time.monotonic() - start


def test_criterion_1_gradient_correctness():
    """Micro-model joint-loss gradients vs central differences, rel err < 1e-4."""
    start = time.monotonic()
    model = SimpDefinerModel(
        ModelConfig(vocab_size=32, d_model=16, n_heads=4, n_encoder_layers=1,
                    n_decoder_layers=1, d_ff=32, dropout=0.0, max_len=16),
        seed=0)
    dict_batch = pack_batch([([8, 3, 9, 10], [11, 12]), ([13, 3, 14], [15, 16, 17])])
    simple_batch = pack_batch([([18, 5, 19], [18, 20, 19]), ([21, 22], [21, 22])])

    def loss_fn():
        l_gen, l_rec, l_lm = model.task_losses(dict_batch, simple_batch, simple_batch)
        return l_gen * 0.8 + l_rec * 0.1 + l_lm * 0.1

    model.zero_grad()
    loss_fn().backward()
    params = model.parameters()
    fd_grads = finite_difference(loss_fn, [p.tensor for p in params], h=1e-5)
    worst = 0.0
    n_checked = 0
    for p, fd in zip(params, fd_grads):
        got = p.grad if p.grad is not None else np.zeros_like(fd)
        worst = max(worst, max_relative_error(got, fd, floor=1e-4))
        n_checked += fd.size
    elapsed = time.monotonic() - start
    assert n_checked == sum(p.data.size for p in params)  # every parameter
    assert worst < 1e-4, f"worst relative error {worst}"
    assert elapsed < 60.0, f"runtime {elapsed:.1f}s exceeds 60s budget"


def test_criterion_2_sharing_partition_audit():
    """Exactly 3 LN pairs + 1 query matrix (+bias) duplicated per flag per
    decoder layer; cross-flag gradients exactly zero."""
    start = time.monotonic()
    model = SimpDefinerModel(
        ModelConfig(vocab_size=40, d_model=32, n_heads=4, n_encoder_layers=2,
                    n_decoder_layers=2, d_ff=64, dropout=0.0, max_len=16),
        seed=0)
    report = model.sharing_report()
    for flag in ("complex", "simple"):
        names = report["complexity_dependent"][flag]
        for layer in range(2):
            in_layer = [n for n in names if f"decoder.layers.{layer}." in n]
            ln_pairs = [n for n in in_layer if n.endswith((".gamma", ".beta"))]
            query = [n for n in in_layer if ".cross_attn.query." in n]
            assert len(ln_pairs) == 6, in_layer   # 3 (gamma, beta) pairs
            assert len(query) == 2, in_layer      # weight and bias
            assert sorted(in_layer) == sorted(ln_pairs + query)
        assert len(names) == 2 * 8
    for name in report["shared"]:
        assert ".complex." not in name and ".simple." not in name

    batch = pack_batch([([8, 3, 9], [10, 11]), ([12, 13], [14])])
    model.zero_grad()
    (model.reconstruction_loss(batch) + model.lm_loss(batch)).backward()
    for p in model.flag_parameters(ComplexityFlag.COMPLEX):
        assert p.grad is None or not p.grad.any(), p.name
    model.zero_grad()
    model.generation_loss(batch).backward()
    for p in model.flag_parameters(ComplexityFlag.SIMPLE):
        assert p.grad is None or not p.grad.any(), p.name
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"runtime {elapsed:.1f}s exceeds 10s budget"


def test_criterion_3_lm_mode_source_independence():
    """use_cross_attention=false: logits bit-identical over 10 random sources."""
    start = time.monotonic()
    model = SimpDefinerModel(
        ModelConfig(vocab_size=50, d_model=32, n_heads=4, n_encoder_layers=1,
                    n_decoder_layers=2, d_ff=64, dropout=0.0, max_len=24),
        seed=3)
    tgt = np.array([[1, 10, 11, 12, 13]])
    reference = None
    rng = np.random.default_rng(0)
    for _ in range(10):
        length = int(rng.integers(2, 20))
        src = rng.integers(6, 50, size=(1, length))
        enc = model.encode(src)
        logits = model.decode(tgt, enc, np.ones((1, length), bool),
                              ComplexityFlag.SIMPLE, use_cross_attention=False).data
        if reference is None:
            reference = logits
        else:
            assert np.array_equal(logits, reference)
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"runtime {elapsed:.1f}s exceeds 10s budget"


def test_criterion_4_overfit_reproduces_training_definitions():
    """50-entry overfit: L_gen < 0.1 and >= 90% exact greedy reproduction."""
    start = time.monotonic()
    entries, sentences = make_overfit_corpus(n_entries=50, n_simple=200, seed=0)
    vocab = build_vocab(entries, sentences)
    model = SimpDefinerModel(
        ModelConfig(vocab_size=len(vocab), d_model=48, n_heads=4,
                    n_encoder_layers=1, n_decoder_layers=1, d_ff=96,
                    dropout=0.1, max_len=32),
        seed=0)
    cfg = TrainConfig(learning_rate=3e-3, warmup_steps=50, batch_size=16,
                      max_steps=1200, rng_seed=0)
    assert cfg.max_steps <= 2000
    _, history = train(model, vocab, entries, sentences, cfg)
    assert history[-1].l_gen < 0.1, f"final L_gen {history[-1].l_gen}"

    exact = 0
    for entry in entries:
        result = generate_complex(model, vocab, entry.word, entry.context, GREEDY)
        if result.text(vocab) == " ".join(tokenize(entry.definition)):
            exact += 1
    elapsed = time.monotonic() - start
    assert exact >= 45, f"only {exact}/50 definitions reproduced exactly"
    assert elapsed < 300.0, f"runtime {elapsed:.1f}s exceeds 5min budget"


def test_criterion_5_register_disentanglement(full_model_gap):
    """Simple-path outputs use B-partition content words at a rate >= 20pp
    above the complex path on 100 held-out items (frozen threshold)."""
    gap, elapsed = full_model_gap
    assert gap >= 20.0, f"B-content gap {gap:.1f}pp below the frozen 20pp threshold"
    assert elapsed < 600.0, f"runtime {elapsed:.1f}s exceeds 10min budget"


def test_criterion_6_ablation_reduces_disentanglement(full_model_gap):
    """share_ln + share_qp (the \"both layers shared\" ablation) must shrink
    the register gap relative to the full model, matching the reported
    direction of quality loss when both sharing mechanisms are removed."""
    full_gap, full_elapsed = full_model_gap
    start = time.monotonic()
    ablated_gap = register_experiment(share_ln=True, share_qp=True)
    elapsed = time.monotonic() - start
    assert ablated_gap < full_gap, (
        f"ablated gap {ablated_gap:.1f}pp not below full-model gap {full_gap:.1f}pp")
    assert full_elapsed + elapsed < 1200.0, "exceeds 20min budget"


def test_criterion_7_metric_oracles():
    """BLEU/SARI/level fixtures at 1e-6 / 1e-4 / exact (oracle-frozen values)."""
    start = time.monotonic()
    T = str.split
    assert bleu([T("a b c d e")], [T("a b c d e")]) == pytest.approx(100.0, abs=1e-9)
    assert bleu([T("the the the the")], [T("the cat")]) == pytest.approx(
        26.86424829558855, abs=1e-6)
    assert bleu([T("the cat")], [T("the cat sat on the mat")]) == pytest.approx(
        13.53352832366127, abs=1e-6)
    assert bleu([T("a b c d"), T("a x")], [T("a b c d"), T("a y")]) == pytest.approx(
        88.91397050194614, abs=1e-6)

    s1 = sari([T("about 95 species are currently accepted .")],
              [T("about 95 you now get in .")],
              [[T("about 95 species are currently known ."),
                T("about 95 species are now accepted ."),
                T("95 species are now accepted .")]])
    assert s1.sari == pytest.approx(26.82782411698074, abs=1e-4)
    s2 = sari([T("the cat sat down")], [T("the cat sat down")],
              [[T("the cat sat down")]])
    assert s2.sari == pytest.approx(100.0 / 3.0, abs=1e-4)
    assert s2.keep == pytest.approx(100.0, abs=1e-9)
    s3 = sari([T("the big cat sat down")], [T("the cat sat down")],
              [[T("the cat sat down"), T("a cat sat down")]])
    assert s3.sari == pytest.approx(74.44444444444444, abs=1e-4)

    lexicon = LevelLexicon({"a": 1, "b": 2, "z": 8})
    defs = [T("a b z z"), T("a a unknown")]
    low, high = level_proportions(defs, lexicon)
    counted = low_n = high_n = 0  # brute-force recount
    for d in defs:
        for tok in d:
            counted += 1
            if tok in lexicon.levels and lexicon.levels[tok] <= 3:
                low_n += 1
            if tok not in lexicon.levels or lexicon.levels[tok] >= 7:
                high_n += 1
    assert low == 100.0 * low_n / counted
    assert high == 100.0 * high_n / counted
    elapsed = time.monotonic() - start
    assert elapsed < 5.0, f"runtime {elapsed:.1f}s exceeds 5s budget"


def test_criterion_8_end_to_end_determinism(tmp_path):
    """train(100 steps) / generate(greedy) / corrupt / evaluate are byte-identical
    across two same-seed runs."""
    start = time.monotonic()
    entries, sentences = make_overfit_corpus(n_entries=12, n_simple=24, seed=0)
    save_jsonl(entries, str(tmp_path / "dict.jsonl"))
    save_jsonl(sentences, str(tmp_path / "simple.jsonl"))
    items = tmp_path / "items.jsonl"
    items.write_text(
        '{"word": "item0", "context": "you see the item0 here"}\n'
        '{"word": "item7", "context": "you see the item7 here"}\n')

    artifacts = {"train_csv": [], "train_ckpt": [], "gen": [], "corrupt": [],
                 "evaluate": []}
    for run in ("a", "b"):
        out = tmp_path / run
        assert main([
            "train",
            "--set", f"dictionary_path={tmp_path / 'dict.jsonl'}",
            f"simple_corpus_path={tmp_path / 'simple.jsonl'}",
            f"output_dir={out}", "max_steps=100", "d_model=32", "d_ff=64",
            "n_encoder_layers=1", "n_decoder_layers=1", "max_len=32",
            "batch_size=10", "warmup_steps=10", "learning_rate=0.003", "seed=11",
        ]) == 0
        artifacts["train_csv"].append((out / "losses.csv").read_bytes())
        artifacts["train_ckpt"].append((out / "checkpoint.ckpt").read_bytes())

        gen_out = tmp_path / f"gen_{run}.jsonl"
        assert main(["generate", str(out / "checkpoint.ckpt"), str(items),
                     "--mode", "both", "--out", str(gen_out)]) == 0
        artifacts["gen"].append(gen_out.read_bytes())

        cor_out = tmp_path / f"cor_{run}.jsonl"
        assert main(["corrupt", str(tmp_path / "simple.jsonl"),
                     "--out", str(cor_out), "--seed", "11"]) == 0
        artifacts["corrupt"].append(cor_out.read_bytes())

        eval_out = tmp_path / f"eval_{run}.json"
        assert main(["evaluate", f"{FIXTURES}/eval_hyp.jsonl",
                     f"{FIXTURES}/eval_refs.jsonl",
                     "--lexicon", f"{FIXTURES}/lexicon_en.tsv",
                     "--out", str(eval_out)]) == 0
        artifacts["evaluate"].append(eval_out.read_bytes())

    for name, (first, second) in artifacts.items():
        assert first == second, f"{name} differs between same-seed runs"
    elapsed = time.monotonic() - start
    assert elapsed < 180.0, f"runtime {elapsed:.1f}s exceeds 3min budget"


def test_criterion_9_checkpoint_resume_is_bit_exact(tmp_path):
    """save at step N, restore, one step == uninterrupted N+1 steps."""
    start = time.monotonic()
    entries, sentences = make_overfit_corpus(n_entries=10, n_simple=20, seed=0)
    vocab = build_vocab(entries, sentences)

    def fresh_model():
        return SimpDefinerModel(
            ModelConfig(vocab_size=len(vocab), d_model=32, n_heads=4,
                        n_encoder_layers=1, n_decoder_layers=1, d_ff=64,
                        dropout=0.1, max_len=32), seed=0)

    def cfg(steps):
        return TrainConfig(learning_rate=3e-3, warmup_steps=10, batch_size=8,
                           max_steps=steps, rng_seed=5)

    uninterrupted = fresh_model()
    state_full, _ = train(uninterrupted, vocab, entries, sentences, cfg(8))

    half = fresh_model()
    state_half, _ = train(half, vocab, entries, sentences, cfg(7))
    path = tmp_path / "step7.ckpt"
    save_checkpoint(str(path), half, vocab, state_half.to_checkpoint_dict())

    restored = load_checkpoint(str(path))
    resumed_state = TrainState.from_checkpoint_dict(restored.train_state)
    resumed_state, _ = train(restored.model, vocab, entries, sentences, cfg(8),
                             state=resumed_state)

    assert resumed_state.step == state_full.step == 8
    for p, q in zip(uninterrupted.parameters(), restored.model.parameters()):
        assert np.array_equal(p.data, q.data), p.name
    for name in state_full.moments:
        for kind in ("m", "v"):
            assert np.array_equal(state_full.moments[name][kind],
                                  resumed_state.moments[name][kind]), (name, kind)
    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"runtime {elapsed:.1f}s exceeds 1min budget"
