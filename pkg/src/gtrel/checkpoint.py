"""Parameter checkpoints: one JSON header line, then raw little-endian floats.

The header records a format version, arbitrary metadata (config, label set,
vocabulary), and the name and shape of every tensor in payload order. The
payload is the concatenation of each tensor's float64 little-endian bytes.
Writes are byte-deterministic for identical inputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .data import Vocab
from .encoder import EncoderConfig
from .errors import DatasetError
from .model import Model, ModelConfig, init_model_params

FORMAT = "gtrel-checkpoint"
VERSION = 1


def save_checkpoint(path, meta: dict, named_tensors):
    named = [(name, np.asarray(value, dtype=np.float64)) for name, value in named_tensors]
    header = {
        "format": FORMAT,
        "version": VERSION,
        "meta": meta,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in named],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for _, arr in named:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (meta, dict of name -> float64 array)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"checkpoint header is not valid JSON: {exc}") from None
    if header.get("format") != FORMAT:
        raise DatasetError(f"not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise DatasetError(f"unsupported checkpoint version {header.get('version')!r}")
    tensors = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise DatasetError(f"checkpoint payload truncated at tensor {entry['name']!r}")
        tensors[entry["name"]] = (
            np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += nbytes
    if offset != len(payload):
        raise DatasetError(f"checkpoint payload has {len(payload) - offset} trailing bytes")
    return header["meta"], tensors


def model_meta(model: Model) -> dict:
    cfg = model.config
    return {
        "encoder": asdict(cfg.encoder),
        "label_set": list(cfg.label_set),
        "entity_slots": list(cfg.entity_slots),
        "gt_sentence_mode": cfg.gt_sentence_mode,
        "gt_branch_enabled": cfg.gt_branch_enabled,
        "max_neighbors": cfg.max_neighbors,
        "vocab": list(model.vocab.words),
    }


def save_model(path, model: Model):
    save_checkpoint(
        path, model_meta(model), ((name, t.data) for name, t in model.params.named_tensors())
    )


def load_model(path) -> Model:
    meta, tensors = load_checkpoint(path)
    cfg = ModelConfig(
        encoder=EncoderConfig(**meta["encoder"]),
        label_set=tuple(meta["label_set"]),
        entity_slots=tuple(meta["entity_slots"]),
        gt_sentence_mode=meta["gt_sentence_mode"],
        gt_branch_enabled=meta["gt_branch_enabled"],
        max_neighbors=meta["max_neighbors"],
    )
    vocab = Vocab(meta["vocab"])
    rng = np.random.default_rng(0)  # values overwritten below
    params = init_model_params(cfg, rng)
    for name, tensor in params.named_tensors():
        if name not in tensors:
            raise DatasetError(f"checkpoint is missing tensor {name!r}")
        if tensors[name].shape != tensor.data.shape:
            raise DatasetError(
                f"checkpoint tensor {name!r} has shape {tensors[name].shape}, "
                f"expected {tensor.data.shape}"
            )
        tensor.data = tensors[name].copy()
    return Model(config=cfg, vocab=vocab, params=params)
