"""Self-describing checkpoint container with byte-deterministic serialization.

Layout: magic line, 8-byte little-endian header length, UTF-8 JSON header,
then the raw little-endian float64 buffers of every array in header order.
The header carries the model config, sharing-ablation switches, vocabulary,
per-parameter metadata (name, shape, sharing_tag, flag) and optional
training state, so a file can be loaded with no outside context. No
timestamps anywhere; identical runs produce identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

from .data import Vocab
from .model import ComplexityFlag, ModelConfig, SimpDefinerModel

MAGIC = b"SIMPDEFINER-CKPT-1\n"


@dataclass
class Checkpoint:
    model: SimpDefinerModel
    vocab: Vocab
    train_state: dict[str, Any] | None


def _flag_of(model: SimpDefinerModel, name: str) -> str | None:
    for flag in ComplexityFlag:
        if any(p.name == name for p in model.flag_parameters(flag)):
            return flag.value
    return None


def save_checkpoint(path: str, model: SimpDefinerModel, vocab: Vocab,
                    train_state: dict[str, Any] | None = None) -> None:
    arrays: list[tuple[str, np.ndarray]] = []
    params_meta = []
    for p in model.parameters():
        arrays.append((p.name, p.data))
        params_meta.append({
            "name": p.name,
            "shape": list(p.data.shape),
            "sharing_tag": p.sharing_tag,
            "flag": _flag_of(model, p.name),
        })
    extra_meta = []
    if train_state is not None:
        for key, moment in sorted(train_state.get("moments", {}).items()):
            for kind in ("m", "v"):
                arr = np.asarray(moment[kind], dtype=np.float64)
                arrays.append((f"moment.{kind}.{key}", arr))
                extra_meta.append({"name": f"moment.{kind}.{key}",
                                   "shape": list(arr.shape)})
    header = {
        "format": 1,
        "config": model.config.to_dict(),
        "share_ln": model.share_ln,
        "share_qp": model.share_qp,
        "vocab": vocab.to_dict(),
        "params": params_meta,
        "extra_arrays": extra_meta,
        "train_state": None if train_state is None else {
            "step": train_state["step"],
            "seed": train_state["seed"],
            "best_val": train_state.get("best_val"),
        },
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        config = ModelConfig(**header["config"])
        model = SimpDefinerModel(config, seed=0, share_ln=header["share_ln"],
                                 share_qp=header["share_qp"])
        for meta in header["params"]:
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            param = model._params.get(meta["name"])
            if param is None:
                raise ValueError(f"{path}: unknown parameter {meta['name']!r}")
            param.data = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        moments: dict[str, dict[str, np.ndarray]] = {}
        for meta in header["extra_arrays"]:
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            arr = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            _, kind, key = meta["name"].split(".", 2)
            moments.setdefault(key, {})[kind] = arr
    vocab = Vocab.from_dict(header["vocab"])
    train_state = None
    if header["train_state"] is not None:
        train_state = dict(header["train_state"])
        train_state["moments"] = moments
    return Checkpoint(model=model, vocab=vocab, train_state=train_state)
