"""Dual-encoder relation classifier.

One embedded input feeds two encoder stacks. The sentence representation is
the text encoder's output at the reserved first token; each entity's
representation is the mean of the graph encoder's output rows over all of
that entity's mention tokens. Sentence and entity representations are
concatenated and passed through a linear layer, an activation, and a dense
layer whose output width equals the number of labels. An alternative mode
uses the graph encoder's first-token row instead of the pooled entity
representations; an ablation switch zeroes the graph side entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .attention import NeighborMask
from .data import NeighborGraph, RelationInstance, Vocab, CLS_TOKEN, is_single_sentence
from .encoder import (
    BlockParams,
    EmbeddingTable,
    EncoderConfig,
    embed,
    graph_encode,
    init_embedding_table,
    init_encoder_stack,
    transformer_encode,
)
from .errors import ConfigError, InstanceError, LabelError
from .rng import truncated_normal

GT_SENTENCE_MODES = ("entity_mean", "cls")


@dataclass
class ModelConfig:
    """Architecture plus task description (labels, entity slots)."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    label_set: tuple[str, ...] = ()
    entity_slots: tuple[str, ...] = ()
    gt_sentence_mode: str = "entity_mean"
    gt_branch_enabled: bool = True
    max_neighbors: int | None = None

    def validate(self):
        self.encoder.validate()
        if len(self.label_set) < 2:
            raise ConfigError("label_set needs at least two labels")
        if len(set(self.label_set)) != len(self.label_set):
            raise ConfigError("label_set contains duplicates")
        if len(self.entity_slots) < 1:
            raise ConfigError("at least one entity slot is required")
        if len(set(self.entity_slots)) != len(self.entity_slots):
            raise ConfigError("entity_slots contains duplicates")
        if self.gt_sentence_mode not in GT_SENTENCE_MODES:
            raise ConfigError(
                f"gt_sentence_mode must be one of {GT_SENTENCE_MODES}, got {self.gt_sentence_mode!r}"
            )
        if self.max_neighbors is not None and self.max_neighbors < 1:
            raise ConfigError(f"max_neighbors must be positive, got {self.max_neighbors}")

    @property
    def graph_part_width(self) -> int:
        """Width the graph side contributes to the head input."""
        h = self.encoder.width
        return h if self.gt_sentence_mode == "cls" else h * len(self.entity_slots)


@dataclass
class HeadParams:
    """Linear layer into a hidden width, then dense layer onto the labels."""

    w_hidden: Tensor
    b_hidden: Tensor
    w_out: Tensor
    b_out: Tensor

    def named_tensors(self, prefix="head"):
        yield f"{prefix}.w_hidden", self.w_hidden
        yield f"{prefix}.b_hidden", self.b_hidden
        yield f"{prefix}.w_out", self.w_out
        yield f"{prefix}.b_out", self.b_out


@dataclass
class ModelParams:
    embedding: EmbeddingTable
    transformer_blocks: list[BlockParams]
    graph_blocks: list[BlockParams]
    head: HeadParams

    def named_tensors(self):
        yield from self.embedding.named_tensors()
        for i, bp in enumerate(self.transformer_blocks):
            yield from bp.named_tensors(f"transformer.{i}")
        for i, bp in enumerate(self.graph_blocks):
            yield from bp.named_tensors(f"graph.{i}")
        yield from self.head.named_tensors()

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def zero_grad(self):
        for t in self.tensors():
            t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def restore(self, snapshot: dict[str, np.ndarray]):
        for name, t in self.named_tensors():
            t.data = snapshot[name].copy()


def init_model_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Draws follow named_tensors order (embedding, stacks, head last), so
    configs that differ only in head width share every encoder draw."""
    cfg.validate()
    enc = cfg.encoder
    h = enc.width
    embedding = init_embedding_table(enc, rng)
    transformer_blocks = init_encoder_stack(enc, enc.n_transformer_blocks, rng)
    graph_blocks = init_encoder_stack(enc, enc.n_graph_blocks, rng)
    head = HeadParams(
        w_hidden=ad.parameter(truncated_normal((h + cfg.graph_part_width, h), 0.02, rng)),
        b_hidden=ad.parameter(np.zeros(h)),
        w_out=ad.parameter(truncated_normal((h, len(cfg.label_set)), 0.02, rng)),
        b_out=ad.parameter(np.zeros(len(cfg.label_set))),
    )
    return ModelParams(
        embedding=embedding,
        transformer_blocks=transformer_blocks,
        graph_blocks=graph_blocks,
        head=head,
    )


@dataclass
class PreparedInstance:
    """Everything the forward pass needs, precomputed once per instance."""

    instance: RelationInstance
    token_ids: np.ndarray
    mask: NeighborMask
    slot_rows: dict[str, np.ndarray]
    gold_index: int | None
    source_index: int = 0

    @property
    def single_sentence(self) -> bool:
        return is_single_sentence(self.instance)


def prepare_instance(inst: RelationInstance, graph: NeighborGraph, vocab: Vocab,
                     cfg: ModelConfig, source_index: int = 0) -> PreparedInstance:
    """Validate one (instance, graph) pair against the config and freeze the
    arrays the forward pass consumes."""
    if not inst.tokens or inst.tokens[0] != CLS_TOKEN:
        raise InstanceError(f"instance {inst.id!r} must start with the reserved {CLS_TOKEN} token")
    if graph.size != len(inst.tokens):
        raise InstanceError(
            f"graph covers {graph.size} tokens but instance {inst.id!r} has {len(inst.tokens)}"
        )
    by_slot = {}
    for ent in inst.entities:
        if ent.eid in by_slot:
            raise InstanceError(f"instance {inst.id!r} has duplicate entity slot {ent.eid!r}")
        by_slot[ent.eid] = ent
    slot_rows = {}
    for slot in cfg.entity_slots:
        ent = by_slot.get(slot)
        if ent is None:
            raise InstanceError(f"instance {inst.id!r} is missing entity slot {slot!r}")
        rows = [t for start, end in ent.mentions for t in range(start, end)]
        if not rows:
            raise InstanceError(f"entity slot {slot!r} of {inst.id!r} has no mention tokens")
        slot_rows[slot] = np.array(rows, dtype=np.int64)
    extra = set(by_slot) - set(cfg.entity_slots)
    if extra:
        raise InstanceError(f"instance {inst.id!r} has unknown entity slots {sorted(extra)}")
    gold = None
    if inst.label:
        if inst.label not in cfg.label_set:
            raise LabelError(f"label {inst.label!r} not in model label set {cfg.label_set}")
        gold = cfg.label_set.index(inst.label)
    return PreparedInstance(
        instance=inst,
        token_ids=vocab.encode(inst.tokens),
        mask=graph.to_mask(),
        slot_rows=slot_rows,
        gold_index=gold,
        source_index=source_index,
    )


def _forward_prepared(prep: PreparedInstance, params: ModelParams, cfg: ModelConfig,
                      dropout_rng=None) -> Tensor:
    """Logits as a 1 x labels tensor."""
    x = embed(prep.token_ids, params.embedding, cfg.encoder)
    text_out = transformer_encode(x, cfg.encoder, params.transformer_blocks, dropout_rng)
    parts = [ad.mean_rows(text_out, [0])]
    if cfg.gt_branch_enabled:
        graph_out = graph_encode(x, prep.mask, cfg.encoder, params.graph_blocks, dropout_rng)
        if cfg.gt_sentence_mode == "cls":
            parts.append(ad.mean_rows(graph_out, [0]))
        else:
            for slot in cfg.entity_slots:
                parts.append(ad.mean_rows(graph_out, prep.slot_rows[slot]))
    else:
        parts.append(ad.constant(np.zeros((1, cfg.graph_part_width))))
    joined = ad.concat_cols(parts)
    hidden = ad.gelu(ad.linear(joined, params.head.w_hidden, params.head.b_hidden))
    return ad.linear(hidden, params.head.w_out, params.head.b_out)


@dataclass
class Model:
    """A config, its vocabulary, and one set of trained (or fresh) weights."""

    config: ModelConfig
    vocab: Vocab
    params: ModelParams

    def prepare(self, inst, graph, source_index=0) -> PreparedInstance:
        return prepare_instance(inst, graph, self.vocab, self.config, source_index)

    def forward(self, inst: RelationInstance, graph: NeighborGraph,
                mode: str = "eval", dropout_rng=None) -> Tensor:
        """Logits over the label set for one instance, as a flat tensor."""
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be train or eval, got {mode!r}")
        rng = dropout_rng if mode == "train" else None
        prep = inst if isinstance(inst, PreparedInstance) else self.prepare(inst, graph)
        logits = _forward_prepared(prep, self.params, self.config, rng)
        return ad.reshape(logits, (len(self.config.label_set),))

    def predict_proba(self, inst, graph=None) -> np.ndarray:
        prep = inst if isinstance(inst, PreparedInstance) else self.prepare(inst, graph)
        with ad.no_grad():
            logits = _forward_prepared(prep, self.params, self.config, None)
            return ad.softmax_rows(logits).data[0]

    def predict(self, inst, graph=None) -> str:
        """Argmax label; ties go to the earliest label in the label set."""
        probs = self.predict_proba(inst, graph)
        return self.config.label_set[int(np.argmax(probs))]


def init_model(cfg: ModelConfig, vocab: Vocab, rng: np.random.Generator) -> Model:
    cfg = replace(cfg, encoder=replace(cfg.encoder, vocab_size=vocab.size))
    return Model(config=cfg, vocab=vocab, params=init_model_params(cfg, rng))


def loss_and_grads(batch, model: Model, mode: str = "train", dropout_rng=None):
    """Mean cross-entropy over a batch plus gradients for every parameter.

    ``batch`` is a non-empty list of PreparedInstance (or (instance, graph)
    pairs). Gradients are left on the parameter tensors and also returned
    as a name -> array dict; parameters untouched by the batch get zeros.
    """
    if not batch:
        raise ConfigError("loss_and_grads needs a non-empty batch")
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be train or eval, got {mode!r}")
    rng = dropout_rng if mode == "train" else None
    prepared = [
        item if isinstance(item, PreparedInstance) else model.prepare(*item) for item in batch
    ]
    gold = []
    for prep in prepared:
        if prep.gold_index is None:
            raise LabelError(f"instance {prep.instance.id!r} has no gold label")
        gold.append(prep.gold_index)
    model.params.zero_grad()
    rows = [_forward_prepared(p, model.params, model.config, rng) for p in prepared]
    loss = ad.cross_entropy(ad.concat_rows(rows), gold)
    loss.backward()
    grads = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in model.params.named_tensors()
    }
    return float(loss.data), grads
