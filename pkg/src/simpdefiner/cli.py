"""Command-line entry point: train / generate / evaluate / corrupt / sweep.

Configuration is a flat key=value file (``#`` comments allowed); ``--set
key=value`` overrides win over the file, which wins over built-in defaults.
Every subcommand that writes outputs also writes a resolved-config snapshot
sufficient to reproduce the run. Exit codes: 0 success, 1 usage/config
error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .checkpoint import load_checkpoint
from .data import (
    CorruptionConfig,
    SchemaError,
    SimpleSentence,
    Vocab,
    corrupt,
    load_dictionary,
    load_simple_corpus,
    tokenize,
)
from .generation import GenerationConfig, generate_complex, generate_simple
from .metrics import EvalReport, LevelLexicon, bleu, level_proportions, sari, similarity_proxy
from .model import ModelConfig, SimpDefinerModel
from .training import ConfigError, NumericError, TrainConfig, train

SEED_ENV_VAR = "SIMPDEFINER_SEED"

CONFIG_DEFAULTS: dict = {
    # data
    "dictionary_path": None,
    "simple_corpus_path": None,
    "val_dictionary_path": None,
    "lexicon_path": None,
    "output_dir": "runs/default",
    "seed": None,
    # model
    "d_model": 128,
    "n_heads": 4,
    "n_encoder_layers": 2,
    "n_decoder_layers": 2,
    "d_ff": 256,
    "dropout": 0.1,
    "max_len": 128,
    # training
    "lambda_alpha": 0.8,
    "lambda_beta": 0.1,
    "lambda_gamma": 0.1,
    "learning_rate": 3e-4,
    "warmup_steps": 500,
    "batch_size": 16,
    "max_steps": 1000,
    "checkpoint_every": 0,
    "validate_every": 0,
    "grad_clip": 1.0,
    "disable_lm": False,
    "disable_tr": False,
    "share_ln": False,
    "share_qp": False,
    # corruption
    "p_delete": 0.2,
    "p_blank": 0.2,
    "shuffle_window": 5,
    # generation
    "mode": "greedy",
    "beam_size": 4,
    "max_new_tokens": 48,
    "length_penalty": 1.0,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors map to exit code 1
        raise ConfigError(message)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _read_config_file(path: str) -> dict:
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, raw = line.split("=", 1)
            values[key.strip()] = _parse_value(raw.strip().strip('"'))
    return values


def resolve_config(config_path: str | None, overrides: Sequence[str]) -> dict:
    config = dict(CONFIG_DEFAULTS)
    if config_path is not None:
        file_values = _read_config_file(config_path)
        for key, value in file_values.items():
            if key not in CONFIG_DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            config[key] = value
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        config[key] = _parse_value(raw.strip())
    if config["seed"] is None:
        config["seed"] = int(os.environ.get(SEED_ENV_VAR, "0"))
    return config


def _snapshot(config: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _model_config(config: dict, vocab_size: int) -> ModelConfig:
    try:
        return ModelConfig(
            vocab_size=vocab_size,
            d_model=int(config["d_model"]),
            n_heads=int(config["n_heads"]),
            n_encoder_layers=int(config["n_encoder_layers"]),
            n_decoder_layers=int(config["n_decoder_layers"]),
            d_ff=int(config["d_ff"]),
            dropout=float(config["dropout"]),
            max_len=int(config["max_len"]),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid model configuration: {exc}") from exc


def _train_config(config: dict) -> TrainConfig:
    cfg = TrainConfig(
        lambda_alpha=float(config["lambda_alpha"]),
        lambda_beta=float(config["lambda_beta"]),
        lambda_gamma=float(config["lambda_gamma"]),
        learning_rate=float(config["learning_rate"]),
        warmup_steps=int(config["warmup_steps"]),
        batch_size=int(config["batch_size"]),
        max_steps=int(config["max_steps"]),
        rng_seed=int(config["seed"]),
        disable_lm=bool(config["disable_lm"]),
        disable_tr=bool(config["disable_tr"]),
        share_ln=bool(config["share_ln"]),
        share_qp=bool(config["share_qp"]),
        grad_clip=float(config["grad_clip"]),
        checkpoint_every=int(config["checkpoint_every"]),
        validate_every=int(config["validate_every"]),
    )
    cfg.validate()
    return cfg


def _corruption_config(config: dict) -> CorruptionConfig:
    cfg = CorruptionConfig(
        p_delete=float(config["p_delete"]),
        p_blank=float(config["p_blank"]),
        shuffle_window=int(config["shuffle_window"]),
        rng_seed=int(config["seed"]),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _generation_config(config: dict) -> GenerationConfig:
    cfg = GenerationConfig(
        mode=str(config["mode"]),
        beam_size=int(config["beam_size"]),
        max_new_tokens=int(config["max_new_tokens"]),
        length_penalty=float(config["length_penalty"]),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _build_vocab(dict_entries, simple_sentences) -> Vocab:
    streams = []
    for entry in dict_entries:
        streams.append(tokenize(entry.word))
        streams.append(tokenize(entry.context))
        streams.append(tokenize(entry.definition))
    for sentence in simple_sentences:
        streams.append(sentence.tokens)
    return Vocab.build(streams)


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args.config, args.set or [])
    train_cfg = _train_config(config)
    la, lb, lg = train_cfg.effective_lambdas()
    if la > 0 and not config["dictionary_path"]:
        raise ConfigError("lambda_alpha > 0 requires dictionary_path")
    if (lb > 0 or lg > 0) and not config["simple_corpus_path"]:
        raise ConfigError("lambda_beta/lambda_gamma > 0 requires simple_corpus_path")

    dict_entries = (load_dictionary(config["dictionary_path"])
                    if config["dictionary_path"] else [])
    simple_sentences = (load_simple_corpus(config["simple_corpus_path"])
                        if config["simple_corpus_path"] else [])
    val_entries = (load_dictionary(config["val_dictionary_path"])
                   if config["val_dictionary_path"] else None)

    vocab = _build_vocab(dict_entries, simple_sentences)
    model = SimpDefinerModel(
        _model_config(config, len(vocab)), seed=int(config["seed"]),
        share_ln=train_cfg.share_ln, share_qp=train_cfg.share_qp)

    out_dir = Path(config["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _snapshot(config, out_dir / "resolved_config.json")
    state, _ = train(model, vocab, dict_entries, simple_sentences, train_cfg,
                     out_dir=out_dir, val_entries=val_entries,
                     corruption=_corruption_config(config))
    print(f"trained {state.step} steps; outputs in {out_dir}")
    return 0


def _generate_one(model, vocab, gcfg, modes, item):
    out = {"word": item["word"], "context": item["context"], "scores": {}}
    if "complex" in modes:
        result = generate_complex(model, vocab, item["word"], item["context"], gcfg)
        out["complex"] = result.text(vocab)
        out["scores"]["complex"] = result.score
    if "simple" in modes:
        result = generate_simple(model, vocab, item["word"], item["context"], gcfg)
        out["simple"] = result.text(vocab)
        out["scores"]["simple"] = result.score
    return out


def _load_items(path: str, required: Sequence[str]) -> list[dict]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            for field in required:
                if field not in obj:
                    raise SchemaError(path, line_no, f"missing field {field!r}")
            items.append(obj)
    return items


def cmd_generate(args: argparse.Namespace) -> int:
    config = resolve_config(args.config, args.set or [])
    if args.decoding:
        config["mode"] = args.decoding
    gcfg = _generation_config(config)
    modes = ("complex", "simple") if args.paths == "both" else (args.paths,)

    ckpt = load_checkpoint(args.checkpoint)
    items = _load_items(args.input, required=("word", "context"))

    if args.workers > 1 and items:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(
                lambda item: _generate_one(ckpt.model, ckpt.vocab, gcfg, modes, item),
                items))
    else:
        rows = [_generate_one(ckpt.model, ckpt.vocab, gcfg, modes, item)
                for item in items]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    _snapshot({**config, "checkpoint": args.checkpoint, "input": args.input,
               "paths": args.paths, "workers": args.workers},
              Path(str(out) + ".config.json"))
    print(f"wrote {len(rows)} generations to {out}")
    return 0


def _field(obj: dict, *names: str) -> str | None:
    for name in names:
        if name in obj and isinstance(obj[name], str):
            return obj[name]
    return None


def cmd_evaluate(args: argparse.Namespace) -> int:
    hyp_items = _load_items(args.hypotheses, required=())
    ref_items = _load_items(args.references, required=())
    if len(hyp_items) != len(ref_items):
        raise SchemaError(args.hypotheses, min(len(hyp_items), len(ref_items)) + 1,
                          f"aligned files required: {len(hyp_items)} hypothesis items "
                          f"vs {len(ref_items)} reference items")

    hyp_complex = [_field(o, "complex", "definition") for o in hyp_items]
    hyp_simple = [_field(o, "simple", "simple_definition") for o in hyp_items]
    ref_complex = [_field(o, "definition", "complex") for o in ref_items]
    ref_simple = [_field(o, "simple_definition", "simple") for o in ref_items]

    def toks(texts):
        return [tokenize(t) for t in texts]

    report = EvalReport(items=len(hyp_items), unk_tokens=0)
    report.unk_tokens = sum(
        1
        for text in hyp_complex + hyp_simple if text is not None
        for tok in text.split() if tok.upper() == "[UNK]"
    )

    if all(t is not None for t in hyp_complex) and all(t is not None for t in ref_complex):
        report.bleu_complex = bleu(toks(hyp_complex), toks(ref_complex))
    if all(t is not None for t in hyp_simple) and all(t is not None for t in ref_simple):
        report.bleu_simple = bleu(toks(hyp_simple), toks(ref_simple))
        if all(t is not None for t in ref_complex):
            # sources for SARI are the complex gold definitions
            score = sari(toks(ref_complex), toks(hyp_simple),
                         [[r] for r in toks(ref_simple)])
            report.sari = score.sari
            report.sari_add = score.add
            report.sari_keep = score.keep
            report.sari_delete = score.delete

    side = hyp_simple if all(t is not None for t in hyp_simple) else hyp_complex
    side_refs = ref_simple if all(t is not None for t in hyp_simple) else ref_complex
    if args.lexicon and all(t is not None for t in side):
        lexicon = LevelLexicon.from_tsv(args.lexicon)
        low, high = level_proportions(toks(side), lexicon)
        report.level_low_pct = low
        report.level_high_pct = high
    if args.checkpoint and all(t is not None for t in side) \
            and all(t is not None for t in side_refs):
        ckpt = load_checkpoint(args.checkpoint)
        sims = [similarity_proxy(tokenize(h), tokenize(r), ckpt.model, ckpt.vocab)
                for h, r in zip(side, side_refs)]
        report.similarity = float(sum(sims) / len(sims)) if sims else None

    payload = report.to_json()
    print(payload)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(payload + "\n", encoding="utf-8")
        _snapshot({"hypotheses": args.hypotheses, "references": args.references,
                   "lexicon": args.lexicon, "checkpoint": args.checkpoint},
                  Path(str(out) + ".config.json"))
    return 0


def cmd_corrupt(args: argparse.Namespace) -> int:
    cfg = CorruptionConfig(p_delete=args.p_delete, p_blank=args.p_blank,
                           shuffle_window=args.shuffle_window, rng_seed=args.seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sentences = load_simple_corpus(args.input)
    rng = random.Random(cfg.rng_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for sentence in sentences:
            corrupted = corrupt(sentence.tokens, cfg, rng)
            fh.write(SimpleSentence(text=" ".join(corrupted)).to_json() + "\n")
    _snapshot({"input": args.input, "p_delete": args.p_delete,
               "p_blank": args.p_blank, "shuffle_window": args.shuffle_window,
               "seed": args.seed}, Path(str(out) + ".config.json"))
    print(f"wrote {len(sentences)} corrupted sentences to {out}")
    return 0


def _parse_grid(spec: str) -> list[tuple[float, float, float]]:
    grid = []
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        values = [float(v) for v in part.split(",")]
        if len(values) != 3:
            raise ConfigError(f"grid entries need 3 weights, got {part!r}")
        grid.append((values[0], values[1], values[2]))
    if not grid:
        raise ConfigError("empty sweep grid")
    return grid


def cmd_sweep(args: argparse.Namespace) -> int:
    config = resolve_config(args.config, args.set or [])
    base_cfg = _train_config(config)
    grid = _parse_grid(args.grid)
    if not config["dictionary_path"] or not config["simple_corpus_path"]:
        raise ConfigError("sweep requires dictionary_path and simple_corpus_path")
    dict_entries = load_dictionary(config["dictionary_path"])
    simple_sentences = load_simple_corpus(config["simple_corpus_path"])
    val_entries = (load_dictionary(config["val_dictionary_path"])
                   if config["val_dictionary_path"] else None)
    vocab = _build_vocab(dict_entries, simple_sentences)

    out_dir = Path(config["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _snapshot({**config, "grid": args.grid}, out_dir / "resolved_config.json")
    rows = []
    for i, (la, lb, lg) in enumerate(grid):
        run_cfg = replace(base_cfg, lambda_alpha=la, lambda_beta=lb, lambda_gamma=lg)
        run_cfg.validate()
        model = SimpDefinerModel(_model_config(config, len(vocab)),
                                 seed=int(config["seed"]),
                                 share_ln=run_cfg.share_ln, share_qp=run_cfg.share_qp)
        state, history = train(model, vocab, dict_entries, simple_sentences, run_cfg,
                               out_dir=out_dir / f"run_{i}", val_entries=val_entries,
                               corruption=_corruption_config(config))
        last = history[-1]
        rows.append([la, lb, lg, last.l_gen, last.l_rec, last.l_lm, last.total,
                     state.best_val if state.best_val is not None else float("nan")])
    with open(out_dir / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write("lambda_alpha,lambda_beta,lambda_gamma,L_gen,L_rec,L_lm,total,val_L_gen\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(f"sweep complete: {len(rows)} runs, results in {out_dir / 'sweep.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="simpdefiner",
                     description="Joint complex/simple definition generation")
    parser.add_argument("--version", action="version",
                        version=f"simpdefiner {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from config")
    p_train.add_argument("--config", default=None, help="key=value config file")
    p_train.add_argument("--set", nargs="*", metavar="KEY=VALUE",
                         help="config overrides")
    p_train.set_defaults(fn=cmd_train)

    p_gen = sub.add_parser("generate", help="generate definitions from a checkpoint")
    p_gen.add_argument("checkpoint")
    p_gen.add_argument("input", help="JSONL with word/context items")
    p_gen.add_argument("--mode", dest="paths", default="both",
                       choices=("complex", "simple", "both"))
    p_gen.add_argument("--decoding", default=None,
                       choices=("greedy", "beam"), help="decoding algorithm")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--workers", type=int, default=1)
    p_gen.add_argument("--config", default=None)
    p_gen.add_argument("--set", nargs="*", metavar="KEY=VALUE")
    p_gen.set_defaults(fn=cmd_generate)

    p_eval = sub.add_parser("evaluate", help="score hypotheses against references")
    p_eval.add_argument("hypotheses")
    p_eval.add_argument("references")
    p_eval.add_argument("--lexicon", default=None, help="TSV token<TAB>level file")
    p_eval.add_argument("--checkpoint", default=None,
                        help="enables the encoder-cosine similarity proxy")
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(fn=cmd_evaluate)

    p_cor = sub.add_parser("corrupt", help="write a corrupted simple corpus")
    p_cor.add_argument("input")
    p_cor.add_argument("--out", required=True)
    p_cor.add_argument("--p-delete", type=float, default=0.2)
    p_cor.add_argument("--p-blank", type=float, default=0.2)
    p_cor.add_argument("--shuffle-window", type=int, default=5)
    p_cor.add_argument("--seed", type=int,
                       default=int(os.environ.get(SEED_ENV_VAR, "0")))
    p_cor.set_defaults(fn=cmd_corrupt)

    p_sweep = sub.add_parser("sweep", help="train over a grid of loss weights")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--set", nargs="*", metavar="KEY=VALUE")
    p_sweep.add_argument("--grid", default="0.8,0.1,0.1;0.6,0.2,0.2;0.4,0.3,0.3",
                         help="semicolon-separated alpha,beta,gamma triples")
    p_sweep.set_defaults(fn=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SchemaError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
