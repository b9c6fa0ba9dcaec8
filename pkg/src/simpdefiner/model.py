"""Shared encoder plus two partially shared decoders behind one parameter store.

The two decoders are realized as a single decoder stack with per-flag
parameter banks rather than two object copies: every layer norm affine pair
and every cross-attention query projection (weight and bias) exists once per
complexity flag, everything else exists exactly once and is read by both
paths. The three task losses are three forward routes through this store:

  generation      encode(word ; [SEP] ; context) -> decode(flag=complex)
  reconstruction  encode(corrupted sentence)     -> decode(flag=simple)
  language model  no encoder                     -> decode(flag=simple, cross off)

"Cross off" substitutes a single zero-valued memory position, so the
cross-attention block contributes a bit-exact constant regardless of any
source content or length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .data import PAD, Batch

LAYER_NORM_EPS = 1e-5
ATTN_MASK_FILL = -1e9


class ComplexityFlag(Enum):
    """Selects which decoder parameter bank is active (the binary register switch)."""

    COMPLEX = "complex"
    SIMPLE = "simple"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    d_ff: int = 256
    dropout: float = 0.1
    max_len: int = 128

    def __post_init__(self) -> None:
        for field in ("vocab_size", "d_model", "n_heads", "n_encoder_layers",
                      "n_decoder_layers", "d_ff", "max_len"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_encoder_layers": self.n_encoder_layers,
            "n_decoder_layers": self.n_decoder_layers,
            "d_ff": self.d_ff,
            "dropout": self.dropout,
            "max_len": self.max_len,
        }


def sinusoidal_positions(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    dim = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (dim // 2)) / d_model)
    pe = np.zeros((max_len, d_model))
    pe[:, 0::2] = np.sin(angle[:, 0::2])
    pe[:, 1::2] = np.cos(angle[:, 1::2])
    return pe


class _Linear:
    def __init__(self, model: "SimpDefinerModel", prefix: str, d_in: int, d_out: int,
                 tag: str, flag: ComplexityFlag | None = None,
                 weight_init: np.ndarray | None = None):
        if weight_init is None:
            weight_init = model._xavier(d_in, d_out)
        self.weight = model._register(f"{prefix}.weight", weight_init, tag, flag)
        self.bias = model._register(f"{prefix}.bias", np.zeros(d_out), tag, flag)

    def __call__(self, x: Tensor) -> Tensor:
        shape = x.shape
        flat = x.reshape((-1, shape[-1])) if x.ndim != 2 else x
        out = ag.add(ag.matmul(flat, self.weight.tensor), self.bias.tensor)
        if x.ndim != 2:
            out = out.reshape(shape[:-1] + (self.weight.tensor.shape[1],))
        return out


class _LayerNorm:
    def __init__(self, model: "SimpDefinerModel", prefix: str, d: int):
        self.gamma = model._register(f"{prefix}.gamma", np.ones(d), Parameter.SHARED)
        self.beta = model._register(f"{prefix}.beta", np.zeros(d), Parameter.SHARED)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma.tensor, self.beta.tensor, LAYER_NORM_EPS)


class _CDLayerNorm:
    """Layer norm whose gamma/beta pair is duplicated per complexity flag."""

    def __init__(self, model: "SimpDefinerModel", prefix: str, d: int, share: bool):
        self.gamma: dict[ComplexityFlag, Parameter] = {}
        self.beta: dict[ComplexityFlag, Parameter] = {}
        if share:
            gamma = model._register(f"{prefix}.gamma", np.ones(d), Parameter.SHARED)
            beta = model._register(f"{prefix}.beta", np.zeros(d), Parameter.SHARED)
            for flag in ComplexityFlag:
                self.gamma[flag] = gamma
                self.beta[flag] = beta
        else:
            for flag in ComplexityFlag:
                self.gamma[flag] = model._register(
                    f"{prefix}.{flag.value}.gamma", np.ones(d),
                    Parameter.COMPLEXITY_DEPENDENT, flag)
                self.beta[flag] = model._register(
                    f"{prefix}.{flag.value}.beta", np.zeros(d),
                    Parameter.COMPLEXITY_DEPENDENT, flag)

    def __call__(self, x: Tensor, flag: ComplexityFlag) -> Tensor:
        return ag.layer_norm(
            x, self.gamma[flag].tensor, self.beta[flag].tensor, LAYER_NORM_EPS
        )


class _Attention:
    """Multi-head attention with fully shared projections."""

    def __init__(self, model: "SimpDefinerModel", prefix: str, d: int):
        self.model = model
        self.q = _Linear(model, f"{prefix}.q", d, d, Parameter.SHARED)
        self.k = _Linear(model, f"{prefix}.k", d, d, Parameter.SHARED)
        self.v = _Linear(model, f"{prefix}.v", d, d, Parameter.SHARED)
        self.out = _Linear(model, f"{prefix}.out", d, d, Parameter.SHARED)

    def __call__(self, x: Tensor, key_mask: np.ndarray | None, causal: bool,
                 rng: np.random.Generator | None) -> Tensor:
        return self.out(self.model._attend(
            self.q(x), self.k(x), self.v(x), key_mask, causal, rng))


class _CrossAttention:
    """Cross-attention: key/value/output shared, query projection per flag."""

    def __init__(self, model: "SimpDefinerModel", prefix: str, d: int, share_qp: bool):
        self.model = model
        self.query: dict[ComplexityFlag, _Linear] = {}
        if share_qp:
            lin = _Linear(model, f"{prefix}.query", d, d, Parameter.SHARED)
            for flag in ComplexityFlag:
                self.query[flag] = lin
        else:
            weight0 = model._xavier(d, d)  # both flags start identical
            for flag in ComplexityFlag:
                self.query[flag] = _Linear(
                    model, f"{prefix}.query.{flag.value}", d, d,
                    Parameter.COMPLEXITY_DEPENDENT, flag, weight_init=weight0.copy())
        self.k = _Linear(model, f"{prefix}.key", d, d, Parameter.SHARED)
        self.v = _Linear(model, f"{prefix}.value", d, d, Parameter.SHARED)
        self.out = _Linear(model, f"{prefix}.out", d, d, Parameter.SHARED)

    def __call__(self, x: Tensor, memory: Tensor, mem_mask: np.ndarray | None,
                 flag: ComplexityFlag, rng: np.random.Generator | None) -> Tensor:
        q = self.query[flag](x)
        return self.out(self.model._attend(
            q, self.k(memory), self.v(memory), mem_mask, False, rng))


class _FeedForward:
    def __init__(self, model: "SimpDefinerModel", prefix: str, d: int, d_ff: int):
        self.model = model
        self.lin1 = _Linear(model, f"{prefix}.lin1", d, d_ff, Parameter.SHARED)
        self.lin2 = _Linear(model, f"{prefix}.lin2", d_ff, d, Parameter.SHARED)

    def __call__(self, x: Tensor, rng: np.random.Generator | None) -> Tensor:
        h = ag.dropout(ag.relu(self.lin1(x)), self.model.config.dropout, rng)
        return self.lin2(h)


class _EncoderLayer:
    def __init__(self, model: "SimpDefinerModel", prefix: str, cfg: ModelConfig):
        self.model = model
        self.self_attn = _Attention(model, f"{prefix}.self_attn", cfg.d_model)
        self.norm_attn = _LayerNorm(model, f"{prefix}.norm_attn", cfg.d_model)
        self.ffn = _FeedForward(model, f"{prefix}.ffn", cfg.d_model, cfg.d_ff)
        self.norm_ffn = _LayerNorm(model, f"{prefix}.norm_ffn", cfg.d_model)

    def __call__(self, x: Tensor, src_mask: np.ndarray | None,
                 rng: np.random.Generator | None) -> Tensor:
        p = self.model.config.dropout
        x = self.norm_attn(x + ag.dropout(self.self_attn(x, src_mask, False, rng), p, rng))
        return self.norm_ffn(x + ag.dropout(self.ffn(x, rng), p, rng))


class _DecoderLayer:
    def __init__(self, model: "SimpDefinerModel", prefix: str, cfg: ModelConfig,
                 share_ln: bool, share_qp: bool):
        self.model = model
        self.self_attn = _Attention(model, f"{prefix}.self_attn", cfg.d_model)
        self.norm_self = _CDLayerNorm(model, f"{prefix}.norm_self", cfg.d_model, share_ln)
        self.cross_attn = _CrossAttention(model, f"{prefix}.cross_attn", cfg.d_model, share_qp)
        self.norm_cross = _CDLayerNorm(model, f"{prefix}.norm_cross", cfg.d_model, share_ln)
        self.ffn = _FeedForward(model, f"{prefix}.ffn", cfg.d_model, cfg.d_ff)
        self.norm_ffn = _CDLayerNorm(model, f"{prefix}.norm_ffn", cfg.d_model, share_ln)

    def __call__(self, x: Tensor, memory: Tensor, mem_mask: np.ndarray | None,
                 flag: ComplexityFlag, rng: np.random.Generator | None) -> Tensor:
        p = self.model.config.dropout
        x = self.norm_self(
            x + ag.dropout(self.self_attn(x, None, True, rng), p, rng), flag)
        x = self.norm_cross(
            x + ag.dropout(self.cross_attn(x, memory, mem_mask, flag, rng), p, rng), flag)
        return self.norm_ffn(x + ag.dropout(self.ffn(x, rng), p, rng), flag)


class SimpDefinerModel:
    """Encoder/decoder stack over a single flat parameter store.

    ``share_ln`` / ``share_qp`` collapse the corresponding per-flag banks to a
    single shared copy (the parameter-unification ablations).
    """

    def __init__(self, config: ModelConfig, seed: int = 0,
                 share_ln: bool = False, share_qp: bool = False):
        self.config = config
        self.share_ln = share_ln
        self.share_qp = share_qp
        self._params: dict[str, Parameter] = {}
        self._flag_params: dict[ComplexityFlag, list[Parameter]] = {
            flag: [] for flag in ComplexityFlag
        }
        self._init_rng = np.random.default_rng(seed)

        self.embedding = self._register(
            "embedding.weight",
            self._xavier(config.vocab_size, config.d_model),
            Parameter.SHARED,
        )
        self.positions = sinusoidal_positions(config.max_len, config.d_model)
        self.encoder_layers = [
            _EncoderLayer(self, f"encoder.layers.{i}", config)
            for i in range(config.n_encoder_layers)
        ]
        self.decoder_layers = [
            _DecoderLayer(self, f"decoder.layers.{i}", config, share_ln, share_qp)
            for i in range(config.n_decoder_layers)
        ]
        del self._init_rng

    # -- parameter store ----------------------------------------------------

    def _xavier(self, d_in: int, d_out: int) -> np.ndarray:
        limit = math.sqrt(6.0 / (d_in + d_out))
        return self._init_rng.uniform(-limit, limit, size=(d_in, d_out))

    def _register(self, name: str, data: np.ndarray, tag: str,
                  flag: ComplexityFlag | None = None) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        param = Parameter(data, name, tag)
        self._params[name] = param
        if flag is not None:
            self._flag_params[flag].append(param)
        return param

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def shared_parameters(self) -> list[Parameter]:
        return [p for p in self._params.values() if p.sharing_tag == Parameter.SHARED]

    def flag_parameters(self, flag: ComplexityFlag) -> list[Parameter]:
        return list(self._flag_params[flag])

    def sharing_report(self) -> dict:
        return {
            "shared": [p.name for p in self.shared_parameters()],
            "complexity_dependent": {
                flag.value: [p.name for p in self._flag_params[flag]]
                for flag in ComplexityFlag
            },
        }

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def has_nonfinite_weights(self) -> bool:
        return any(not np.isfinite(p.data).all() for p in self._params.values())

    # -- forward passes -----------------------------------------------------

    def _attend(self, q: Tensor, k: Tensor, v: Tensor,
                key_mask: np.ndarray | None, causal: bool,
                rng: np.random.Generator | None) -> Tensor:
        cfg = self.config
        batch, len_q, d = q.shape
        len_k = k.shape[1]
        dk = d // cfg.n_heads
        qh = q.reshape((batch, len_q, cfg.n_heads, dk)).transpose((0, 2, 1, 3))
        kh = k.reshape((batch, len_k, cfg.n_heads, dk)).transpose((0, 2, 3, 1))
        vh = v.reshape((batch, len_k, cfg.n_heads, dk)).transpose((0, 2, 1, 3))
        scores = ag.matmul(qh, kh) * (1.0 / math.sqrt(dk))
        invalid = np.zeros((batch, 1, 1, len_k), dtype=bool)
        if key_mask is not None:
            invalid |= ~np.asarray(key_mask, dtype=bool)[:, None, None, :]
        if causal:
            future = ~np.tril(np.ones((len_q, len_k), dtype=bool))
            invalid = invalid | future[None, None, :, :]
        scores = ag.masked_fill(scores, invalid, ATTN_MASK_FILL)
        probs = ag.dropout(ag.softmax(scores, axis=-1), cfg.dropout, rng)
        ctx = ag.matmul(probs, vh)
        return ctx.transpose((0, 2, 1, 3)).reshape((batch, len_q, d))

    def _embed(self, ids: np.ndarray, rng: np.random.Generator | None) -> Tensor:
        batch, length = ids.shape
        scaled = ag.scale(ag.embedding(self.embedding.tensor, ids),
                          math.sqrt(self.config.d_model))
        pe = Tensor(np.broadcast_to(self.positions[:length],
                                    (batch, length, self.config.d_model)).copy())
        return ag.dropout(scaled + pe, self.config.dropout, rng)

    def _check_len(self, length: int, what: str) -> None:
        if length > self.config.max_len:
            raise ValueError(
                f"{what} length {length} exceeds max_len {self.config.max_len}"
            )

    def encode(self, src_ids: np.ndarray, src_mask: np.ndarray | None = None,
               rng: np.random.Generator | None = None) -> Tensor:
        """Transformer encoder output (batch, len, d_model); one shared function."""
        src_ids = np.asarray(src_ids, dtype=np.int64)
        self._check_len(src_ids.shape[1], "source")
        if src_mask is None:
            src_mask = src_ids != PAD
        x = self._embed(src_ids, rng)
        for layer in self.encoder_layers:
            x = layer(x, src_mask, rng)
        return x

    def decode(self, tgt_ids: np.ndarray, enc_states: Tensor | None,
               enc_mask: np.ndarray | None, flag: ComplexityFlag,
               use_cross_attention: bool = True,
               rng: np.random.Generator | None = None) -> Tensor:
        """Causal logits (batch, len, vocab) through the selected parameter bank."""
        tgt_ids = np.asarray(tgt_ids, dtype=np.int64)
        batch, length = tgt_ids.shape
        self._check_len(length, "target")
        if use_cross_attention:
            if enc_states is None:
                raise ValueError("decode: enc_states required when cross-attention is on")
            memory, mem_mask = enc_states, enc_mask
        else:
            # single zero memory position: softmax over one key is exactly 1,
            # so the block adds a constant independent of any source
            memory = Tensor(np.zeros((batch, 1, self.config.d_model)))
            mem_mask = np.ones((batch, 1), dtype=bool)
        x = self._embed(tgt_ids, rng)
        for layer in self.decoder_layers:
            x = layer(x, memory, mem_mask, flag, rng)
        flat = x.reshape((batch * length, self.config.d_model))
        logits = ag.matmul(flat, ag.transpose(self.embedding.tensor, (1, 0)))
        return logits.reshape((batch, length, self.config.vocab_size))

    # -- spec op surface for the complexity-dependent layers ----------------

    def cd_layer_norm(self, x: Tensor, flag: ComplexityFlag, layer: int = 0,
                      which: str = "norm_self") -> Tensor:
        norm: _CDLayerNorm = getattr(self.decoder_layers[layer], which)
        return norm(x, flag)

    def cd_query_projection(self, q_in: Tensor, flag: ComplexityFlag,
                            layer: int = 0) -> Tensor:
        return self.decoder_layers[layer].cross_attn.query[flag](q_in)

    # -- task losses ---------------------------------------------------------

    def _target_loss(self, batch: Batch, enc: Tensor | None,
                     enc_mask: np.ndarray | None, flag: ComplexityFlag,
                     use_cross: bool, rng: np.random.Generator | None) -> Tensor:
        tgt_in = batch.tgt[:, :-1]
        tgt_out = batch.tgt[:, 1:]
        logits = self.decode(tgt_in, enc, enc_mask, flag,
                             use_cross_attention=use_cross, rng=rng)
        flat = logits.reshape((-1, self.config.vocab_size))
        return ag.softmax_cross_entropy(flat, tgt_out.reshape(-1), ignore_index=PAD)

    def generation_loss(self, dict_batch: Batch,
                        rng: np.random.Generator | None = None) -> Tensor:
        enc = self.encode(dict_batch.src, dict_batch.src_mask, rng=rng)
        return self._target_loss(dict_batch, enc, dict_batch.src_mask,
                                 ComplexityFlag.COMPLEX, True, rng)

    def reconstruction_loss(self, corrupted_batch: Batch,
                            rng: np.random.Generator | None = None) -> Tensor:
        enc = self.encode(corrupted_batch.src, corrupted_batch.src_mask, rng=rng)
        return self._target_loss(corrupted_batch, enc, corrupted_batch.src_mask,
                                 ComplexityFlag.SIMPLE, True, rng)

    def lm_loss(self, simple_batch: Batch,
                rng: np.random.Generator | None = None) -> Tensor:
        return self._target_loss(simple_batch, None, None,
                                 ComplexityFlag.SIMPLE, False, rng)

    def task_losses(self, dict_batch: Batch, simple_batch: Batch,
                    corrupted_batch: Batch,
                    rngs: Mapping[str, np.random.Generator] | None = None,
                    ) -> tuple[Tensor, Tensor, Tensor]:
        """The three joint-training losses; [PAD] target positions are ignored."""
        for name, batch in (("dict", dict_batch), ("simple", simple_batch),
                            ("corrupted", corrupted_batch)):
            if len(batch) == 0:
                raise ValueError(f"task_losses: empty {name} batch")
        rngs = rngs or {}
        return (
            self.generation_loss(dict_batch, rngs.get("gen")),
            self.reconstruction_loss(corrupted_batch, rngs.get("rec")),
            self.lm_loss(simple_batch, rngs.get("lm")),
        )
