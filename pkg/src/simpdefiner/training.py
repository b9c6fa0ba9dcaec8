"""Joint optimization of the weighted three-task loss with ablation switches.

Every random draw of step ``s`` (dictionary sampling, simple-corpus sampling,
corruption, per-task dropout) comes from a fresh generator keyed by
(run_seed, s, stream). Consequences: resuming from a checkpoint reproduces
the uninterrupted run bit-exactly, and zeroing a task weight cannot perturb
the randomness seen by the remaining tasks.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import save_checkpoint
from .data import (
    Batch,
    CorruptionConfig,
    DictionaryEntry,
    SimpleSentence,
    Vocab,
    build_input,
    corrupt,
    pack_batch,
    tokenize,
)
from .model import SimpDefinerModel


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class NumericError(RuntimeError):
    """A loss component became non-finite; names the offending component."""


_STREAMS = {"dict": 1, "simple": 2, "corrupt": 3,
            "drop_gen": 4, "drop_rec": 5, "drop_lm": 6}


def _seq(seed: int, step: int, stream: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed & 0xFFFFFFFF, step, _STREAMS[stream]])


def _np_rng(seed: int, step: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(_seq(seed, step, stream))


def _py_rng(seed: int, step: int, stream: str) -> random.Random:
    return random.Random(int(_seq(seed, step, stream).generate_state(1)[0]))


@dataclass(frozen=True)
class TrainConfig:
    lambda_alpha: float = 0.8
    lambda_beta: float = 0.1
    lambda_gamma: float = 0.1
    learning_rate: float = 3e-4
    warmup_steps: int = 500
    batch_size: int = 16
    max_steps: int = 1000
    rng_seed: int = 0
    disable_lm: bool = False
    disable_tr: bool = False
    share_ln: bool = False
    share_qp: bool = False
    grad_clip: float = 1.0
    checkpoint_every: int = 0
    validate_every: int = 0
    grad_audit: bool = False

    def effective_lambdas(self) -> tuple[float, float, float]:
        """Loss weights after ablation zeroing (disable_tr/disable_lm)."""
        beta = 0.0 if self.disable_tr else self.lambda_beta
        gamma = 0.0 if self.disable_lm else self.lambda_gamma
        return self.lambda_alpha, beta, gamma

    def validate(self) -> None:
        lams = self.effective_lambdas()
        if any(l < 0 or not np.isfinite(l) for l in lams):
            raise ConfigError("loss weights must be finite and non-negative")
        if sum(lams) <= 0:
            raise ConfigError("at least one loss weight must be positive")
        if self.batch_size < 1 or self.max_steps < 0 or self.warmup_steps < 0:
            raise ConfigError("batch_size must be >=1 and step counts non-negative")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class TrainState:
    """Everything needed to resume: with derived RNG streams, the rng state is
    fully determined by (seed, step)."""

    step: int = 0
    seed: int = 0
    best_val: float | None = None
    moments: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def to_checkpoint_dict(self) -> dict:
        return {"step": self.step, "seed": self.seed,
                "best_val": self.best_val, "moments": self.moments}

    @classmethod
    def from_checkpoint_dict(cls, payload: dict) -> "TrainState":
        return cls(step=payload["step"], seed=payload["seed"],
                   best_val=payload.get("best_val"),
                   moments=payload.get("moments", {}))


@dataclass(frozen=True)
class StepResult:
    step: int
    l_gen: float
    l_rec: float
    l_lm: float
    total: float
    lr: float


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to learning_rate over warmup_steps, constant after."""
    if step < 1:
        raise ValueError("step must be >= 1")
    if cfg.warmup_steps <= 0 or step >= cfg.warmup_steps:
        return cfg.learning_rate
    return cfg.learning_rate * (step / cfg.warmup_steps)


def _clip_gradients(model: SimpDefinerModel, max_norm: float) -> None:
    if max_norm <= 0:
        return
    total = 0.0
    for p in model.parameters():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = total ** 0.5
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for p in model.parameters():
            if p.grad is not None:
                np.multiply(p.grad, scale, out=p.grad)


def _adam_update(model: SimpDefinerModel, state: TrainState, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    t = state.step
    for p in model.parameters():
        slot = state.moments.setdefault(
            p.name, {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)})
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        slot["m"] = beta1 * slot["m"] + (1 - beta1) * g
        slot["v"] = beta2 * slot["v"] + (1 - beta2) * (g * g)
        m_hat = slot["m"] / (1 - beta1 ** t)
        v_hat = slot["v"] / (1 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _assert_isolated(model: SimpDefinerModel, quiet_flag, component: str) -> None:
    from .model import ComplexityFlag  # local to avoid cycle at import time

    for p in model.flag_parameters(ComplexityFlag(quiet_flag)):
        if p.grad is not None and np.any(p.grad != 0.0):
            raise AssertionError(
                f"gradient leak: {component} reached {quiet_flag}-flag parameter {p.name}"
            )


def joint_step(model: SimpDefinerModel, dict_batch: Batch | None,
               simple_pair_batch: Batch | None, cfg: TrainConfig,
               state: TrainState) -> StepResult:
    """One optimizer update on total = la*L_gen + lb*L_rec + lg*L_lm.

    Zero-weight components are skipped entirely (their code path never runs).
    The reconstruction loss reads the pair batch's corrupted source side; the
    LM loss reads only its target side.
    """
    la, lb, lg = cfg.effective_lambdas()
    step = state.step + 1
    lr = lr_schedule(step, cfg)
    seed = cfg.rng_seed

    def drop_rng(stream: str) -> np.random.Generator | None:
        return _np_rng(seed, step, stream) if model.config.dropout > 0 else None

    components: list[tuple[str, float, Tensor]] = []
    if la > 0:
        if dict_batch is None:
            raise ConfigError("generation loss has nonzero weight but no dictionary batch")
        components.append(("L_gen", la, model.generation_loss(dict_batch, drop_rng("drop_gen"))))
    if lb > 0:
        if simple_pair_batch is None:
            raise ConfigError("reconstruction loss has nonzero weight but no simple batch")
        components.append(("L_rec", lb, model.reconstruction_loss(simple_pair_batch, drop_rng("drop_rec"))))
    if lg > 0:
        if simple_pair_batch is None:
            raise ConfigError("LM loss has nonzero weight but no simple batch")
        components.append(("L_lm", lg, model.lm_loss(simple_pair_batch, drop_rng("drop_lm"))))

    for name, _, tensor in components:
        if not np.isfinite(tensor.data).all():
            raise NumericError(f"loss component {name} is non-finite at step {step}")

    if cfg.grad_audit:
        audits = {"L_gen": "simple", "L_rec": "complex", "L_lm": "complex"}
        for name, _, tensor in components:
            model.zero_grad()
            tensor.backward()
            _assert_isolated(model, audits[name], name)
        model.zero_grad()

    total: Tensor | None = None
    for _, weight, tensor in components:
        term = ag.scale(tensor, weight)
        total = term if total is None else total + term
    assert total is not None
    if not np.isfinite(total.data).all():
        raise NumericError(f"total loss is non-finite at step {step}")

    model.zero_grad()
    total.backward()
    _clip_gradients(model, cfg.grad_clip)
    state.step = step
    _adam_update(model, state, lr)

    values = {name: float(t.data) for name, _, t in components}
    return StepResult(
        step=step,
        l_gen=values.get("L_gen", float("nan")),
        l_rec=values.get("L_rec", float("nan")),
        l_lm=values.get("L_lm", float("nan")),
        total=float(total.data),
        lr=lr,
    )


def _sample(rng: np.random.Generator, n: int, k: int) -> list[int]:
    take = min(k, n)
    return [int(i) for i in rng.permutation(n)[:take]]


def _encode_dictionary(entries: Sequence[DictionaryEntry],
                       vocab: Vocab) -> list[tuple[list[int], list[int]]]:
    return [(build_input(e, vocab), vocab.encode(tokenize(e.definition)))
            for e in entries]


def validation_loss(model: SimpDefinerModel, vocab: Vocab,
                    entries: Sequence[DictionaryEntry], batch_size: int = 32) -> float:
    """Mean generation loss over a held-out dictionary split (no dropout)."""
    pairs = _encode_dictionary(entries, vocab)
    losses = []
    with ag.no_grad():
        for start in range(0, len(pairs), batch_size):
            batch = pack_batch(pairs[start:start + batch_size])
            losses.append(float(model.generation_loss(batch).data))
    return float(np.mean(losses))


def train(model: SimpDefinerModel, vocab: Vocab,
          dict_entries: Sequence[DictionaryEntry],
          simple_sentences: Sequence[SimpleSentence],
          cfg: TrainConfig,
          out_dir: str | Path | None = None,
          val_entries: Sequence[DictionaryEntry] | None = None,
          corruption: CorruptionConfig | None = None,
          state: TrainState | None = None) -> tuple[TrainState, list[StepResult]]:
    """Run joint_step until the step budget; emits checkpoints and a loss CSV.

    Pass a restored ``state`` to resume; training continues at state.step + 1
    and reproduces the uninterrupted run bit-exactly.
    """
    cfg.validate()
    la, lb, lg = cfg.effective_lambdas()
    if la > 0 and not dict_entries:
        raise ConfigError("generation weight is nonzero but the dictionary dataset is empty")
    if (lb > 0 or lg > 0) and not simple_sentences:
        raise ConfigError("reconstruction/LM weight is nonzero but the simple corpus is empty")
    corruption = corruption or CorruptionConfig()
    corruption.validate()
    if state is None:
        state = TrainState(step=0, seed=cfg.rng_seed)

    dict_pairs = _encode_dictionary(dict_entries, vocab) if dict_entries else []
    simple_tokens = [s.tokens for s in simple_sentences]
    simple_ids = [vocab.encode(toks) for toks in simple_tokens]

    out_path = Path(out_dir) if out_dir is not None else None
    csv_file = None
    writer = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        fresh = state.step == 0
        csv_file = open(out_path / "losses.csv", "w" if fresh else "a", newline="")
        writer = csv.writer(csv_file)
        if fresh:
            writer.writerow(["step", "L_gen", "L_rec", "L_lm", "total", "lr"])

    history: list[StepResult] = []
    try:
        while state.step < cfg.max_steps:
            step = state.step + 1
            dict_batch = None
            if la > 0:
                idx = _sample(_np_rng(cfg.rng_seed, step, "dict"),
                              len(dict_pairs), cfg.batch_size)
                dict_batch = pack_batch([dict_pairs[i] for i in idx])
            simple_batch = None
            if lb > 0 or lg > 0:
                idx = _sample(_np_rng(cfg.rng_seed, step, "simple"),
                              len(simple_ids), cfg.batch_size)
                if lb > 0:
                    crng = _py_rng(cfg.rng_seed, step, "corrupt")
                    src = [vocab.encode(corrupt(simple_tokens[i], corruption, crng))
                           for i in idx]
                else:
                    src = [simple_ids[i] for i in idx]
                simple_batch = pack_batch(
                    [(s, simple_ids[i]) for s, i in zip(src, idx)])

            result = joint_step(model, dict_batch, simple_batch, cfg, state)
            history.append(result)
            if writer is not None:
                writer.writerow([result.step, repr(result.l_gen), repr(result.l_rec),
                                 repr(result.l_lm), repr(result.total), repr(result.lr)])

            if val_entries and cfg.validate_every > 0 and step % cfg.validate_every == 0:
                val = validation_loss(model, vocab, val_entries, cfg.batch_size)
                if state.best_val is None or val < state.best_val:
                    state.best_val = val
                    if out_path is not None:
                        save_checkpoint(str(out_path / "best.ckpt"), model, vocab,
                                        state.to_checkpoint_dict())
            if (out_path is not None and cfg.checkpoint_every > 0
                    and step % cfg.checkpoint_every == 0):
                save_checkpoint(str(out_path / f"checkpoint_step{step}.ckpt"),
                                model, vocab, state.to_checkpoint_dict())
    finally:
        if csv_file is not None:
            csv_file.close()

    if val_entries and cfg.validate_every == 0:
        val = validation_loss(model, vocab, val_entries, cfg.batch_size)
        if state.best_val is None or val < state.best_val:
            state.best_val = val
    if out_path is not None:
        save_checkpoint(str(out_path / "checkpoint.ckpt"), model, vocab,
                        state.to_checkpoint_dict())
    return state, history


def sweep_lambdas(base_cfg: TrainConfig,
                  grids: Sequence[tuple[float, float, float]]) -> list[TrainConfig]:
    """Expand a list of (alpha, beta, gamma) triples into run configs."""
    return [replace(base_cfg, lambda_alpha=a, lambda_beta=b, lambda_gamma=g)
            for a, b, g in grids]
