"""The two encoder stacks over a shared embedded input.

Both stacks are made of standard post-norm blocks: attention, residual add,
layer norm, position-wise feed-forward (GELU), residual add, layer norm,
with dropout after the attention and feed-forward sublayers while training.
The text encoder uses full self-attention; the graph encoder swaps in
neighbor-restricted attention and is otherwise identical. The two stacks
never share weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .attention import AttentionParams, NeighborMask, init_attention_params, \
    neighbor_attention, self_attention
from .errors import ConfigError, LengthError
from .rng import truncated_normal

UNK_ID = 1  # ids outside the table map here, never fail
INIT_STD = 0.02


@dataclass
class EncoderConfig:
    """Shared architecture hyperparameters for both encoder stacks."""

    width: int = 64
    n_heads: int = 4
    ffn_width: int = 128
    n_transformer_blocks: int = 2
    n_graph_blocks: int = 2
    dropout_rate: float = 0.1
    max_len: int = 128
    vocab_size: int = 0

    def validate(self):
        if self.width < 1 or self.n_heads < 1 or self.width % self.n_heads != 0:
            raise ConfigError(f"width {self.width} not divisible into {self.n_heads} heads")
        if self.n_transformer_blocks < 1 or self.n_graph_blocks < 1:
            raise ConfigError("both encoder stacks need at least one block")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.ffn_width < 1 or self.max_len < 1:
            raise ConfigError("ffn_width and max_len must be positive")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must cover the reserved ids (>= 2)")


@dataclass
class EmbeddingTable:
    """Token and position embeddings; their sum feeds both encoders."""

    tokens: Tensor
    positions: Tensor

    def named_tensors(self, prefix="embedding"):
        yield f"{prefix}.tokens", self.tokens
        yield f"{prefix}.positions", self.positions


@dataclass
class BlockParams:
    """Learnable state of one encoder block."""

    attn: AttentionParams
    ln1_gain: Tensor
    ln1_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    def named_tensors(self, prefix):
        yield f"{prefix}.attn.m_q", self.attn.m_q
        yield f"{prefix}.attn.m_k", self.attn.m_k
        yield f"{prefix}.attn.m_v", self.attn.m_v
        yield f"{prefix}.attn.m_o", self.attn.m_o
        yield f"{prefix}.ln1_gain", self.ln1_gain
        yield f"{prefix}.ln1_bias", self.ln1_bias
        yield f"{prefix}.ffn_w1", self.ffn_w1
        yield f"{prefix}.ffn_b1", self.ffn_b1
        yield f"{prefix}.ffn_w2", self.ffn_w2
        yield f"{prefix}.ffn_b2", self.ffn_b2
        yield f"{prefix}.ln2_gain", self.ln2_gain
        yield f"{prefix}.ln2_bias", self.ln2_bias


def init_embedding_table(cfg: EncoderConfig, rng: np.random.Generator) -> EmbeddingTable:
    cfg.validate()
    return EmbeddingTable(
        tokens=ad.parameter(truncated_normal((cfg.vocab_size, cfg.width), INIT_STD, rng)),
        positions=ad.parameter(truncated_normal((cfg.max_len, cfg.width), INIT_STD, rng)),
    )


def init_block_params(cfg: EncoderConfig, rng: np.random.Generator) -> BlockParams:
    h, f = cfg.width, cfg.ffn_width
    return BlockParams(
        attn=init_attention_params(h, cfg.n_heads, rng, INIT_STD),
        ln1_gain=ad.parameter(np.ones(h)),
        ln1_bias=ad.parameter(np.zeros(h)),
        ffn_w1=ad.parameter(truncated_normal((h, f), INIT_STD, rng)),
        ffn_b1=ad.parameter(np.zeros(f)),
        ffn_w2=ad.parameter(truncated_normal((f, h), INIT_STD, rng)),
        ffn_b2=ad.parameter(np.zeros(h)),
        ln2_gain=ad.parameter(np.ones(h)),
        ln2_bias=ad.parameter(np.zeros(h)),
    )


def init_encoder_stack(cfg: EncoderConfig, n_blocks: int, rng) -> list[BlockParams]:
    return [init_block_params(cfg, rng) for _ in range(n_blocks)]


def embed(token_ids, table: EmbeddingTable, cfg: EncoderConfig) -> Tensor:
    """Token embedding plus position embedding per position.

    Ids outside [0, vocab_size) are mapped to the reserved unknown id.
    Sequences longer than ``max_len`` are a hard error; empty sequences
    produce an empty 0 x width tensor.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ConfigError(f"token ids must be a 1-D sequence, got shape {ids.shape}")
    t = ids.shape[0]
    if t > cfg.max_len:
        raise LengthError(f"sequence length {t} exceeds max_len {cfg.max_len}")
    vocab = table.tokens.data.shape[0]
    ids = np.where((ids >= 0) & (ids < vocab), ids, UNK_ID)
    tok = ad.gather_rows(table.tokens, ids)
    pos = ad.gather_rows(table.positions, np.arange(t))
    return ad.add(tok, pos)


def _block_forward(x: Tensor, bp: BlockParams, cfg: EncoderConfig,
                   mask: NeighborMask | None, dropout_rng) -> Tensor:
    if mask is None:
        attended = self_attention(x, bp.attn)
    else:
        attended = neighbor_attention(x, bp.attn, mask)
    if dropout_rng is not None:
        attended = ad.dropout(attended, cfg.dropout_rate, dropout_rng)
    x = ad.layer_norm(ad.add(x, attended), bp.ln1_gain, bp.ln1_bias)
    ff = ad.linear(ad.gelu(ad.linear(x, bp.ffn_w1, bp.ffn_b1)), bp.ffn_w2, bp.ffn_b2)
    if dropout_rng is not None:
        ff = ad.dropout(ff, cfg.dropout_rate, dropout_rng)
    return ad.layer_norm(ad.add(x, ff), bp.ln2_gain, bp.ln2_bias)


def transformer_encode(x: Tensor, cfg: EncoderConfig, blocks: list[BlockParams],
                       dropout_rng=None) -> Tensor:
    """Run the full-attention stack. Pass a generator to enable dropout
    (training); with ``dropout_rng=None`` the forward is deterministic."""
    for bp in blocks:
        x = _block_forward(x, bp, cfg, None, dropout_rng)
    return x


def graph_encode(x: Tensor, mask: NeighborMask, cfg: EncoderConfig,
                 blocks: list[BlockParams], dropout_rng=None) -> Tensor:
    """Run the neighbor-attention stack; every block reuses the same mask."""
    for bp in blocks:
        x = _block_forward(x, bp, cfg, mask, dropout_rng)
    return x
