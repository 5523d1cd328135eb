"""Multi-head scaled dot-product attention, full-context and neighbor-restricted.

Both variants share one parameter layout and one code path; the neighbor
variant differs only in that each query row's softmax runs over an allowed
key subset. Restriction is implemented by adding -inf to disallowed scores
before the softmax, which zeroes both the weight and its gradient, so a
complete mask reproduces full self-attention exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, GraphError
from .rng import truncated_normal


@dataclass
class AttentionParams:
    """Projection matrices for one attention layer.

    ``m_q``, ``m_k``, ``m_v`` and the output projection ``m_o`` are all
    width x width; ``n_heads`` heads act on contiguous column slices of
    width/n_heads each.
    """

    m_q: Tensor
    m_k: Tensor
    m_v: Tensor
    m_o: Tensor
    n_heads: int

    def validate(self):
        shapes = {m.data.shape for m in (self.m_q, self.m_k, self.m_v, self.m_o)}
        if len(shapes) != 1:
            raise ConfigError(f"attention projections disagree on shape: {shapes}")
        (h, h2), = shapes
        if h != h2:
            raise ConfigError(f"attention projections must be square, got {h}x{h2}")
        if self.n_heads < 1 or h % self.n_heads != 0:
            raise ConfigError(f"width {h} is not divisible into {self.n_heads} heads")

    @property
    def width(self) -> int:
        return self.m_q.data.shape[0]


def init_attention_params(width: int, n_heads: int, rng: np.random.Generator,
                          std: float = 0.02) -> AttentionParams:
    if n_heads < 1 or width % n_heads != 0:
        raise ConfigError(f"width {width} is not divisible into {n_heads} heads")
    mats = [ad.parameter(truncated_normal((width, width), std, rng)) for _ in range(4)]
    return AttentionParams(*mats, n_heads=n_heads)


class NeighborMask:
    """Static per-query key restriction as a boolean matrix.

    ``allowed[i, j]`` says query token i may attend to key token j. Every
    row must allow at least one key (each token attends at least to itself
    in any mask produced by the graph builder).
    """

    def __init__(self, allowed: np.ndarray):
        allowed = np.asarray(allowed)
        if allowed.ndim != 2 or allowed.shape[0] != allowed.shape[1]:
            raise GraphError(f"neighbor mask must be square, got shape {allowed.shape}")
        if allowed.dtype != np.bool_:
            allowed = allowed.astype(np.bool_)
        empty = ~allowed.any(axis=1)
        if empty.any():
            rows = np.flatnonzero(empty).tolist()
            raise GraphError(f"neighbor mask rows with no allowed keys: {rows}")
        self.allowed = allowed
        self.size = allowed.shape[0]
        # 0 where allowed, -inf where masked; added to scores pre-softmax
        self.bias = np.where(allowed, 0.0, -np.inf)

    @classmethod
    def complete(cls, size: int) -> "NeighborMask":
        return cls(np.ones((size, size), dtype=bool))

    def permuted(self, perm) -> "NeighborMask":
        perm = np.asarray(perm, dtype=np.int64)
        return NeighborMask(self.allowed[np.ix_(perm, perm)])


def apply_head_split(x: Tensor, n_heads: int) -> list[Tensor]:
    """Split a T x width tensor into n contiguous column slices of equal width."""
    width = x.data.shape[1]
    if n_heads < 1 or width % n_heads != 0:
        raise ConfigError(f"width {width} is not divisible into {n_heads} heads")
    per_head = width // n_heads
    return [ad.slice_cols(x, j * per_head, (j + 1) * per_head) for j in range(n_heads)]


def _attend(x: Tensor, params: AttentionParams, mask_bias: np.ndarray | None) -> Tensor:
    """Whole attention sublayer as one fused tape node.

    Projections, head split, scaled dot-product scores (+ additive mask),
    row softmax, value mixing, head concat, and output projection run in
    one vectorized forward with a hand-derived backward. The compositional
    route (:func:`_attend_composed`) computes the identical function from
    the primitive ops and anchors the equivalence tests.
    """
    params.validate()
    if x.data.ndim != 2 or x.data.shape[1] != params.width:
        raise ConfigError(f"input shape {x.data.shape} does not match width {params.width}")
    n = params.n_heads
    t, h = x.data.shape
    per_head = h // n
    inv_sqrt = 1.0 / math.sqrt(per_head)

    def heads_of(mat):  # (T, h) -> (n, T, h')
        return mat.reshape(t, n, per_head).transpose(1, 0, 2)

    def flat_of(stack):  # (n, T, h') -> (T, h)
        return stack.transpose(1, 0, 2).reshape(t, h)

    xd = x.data
    q = heads_of(xd @ params.m_q.data)
    k = heads_of(xd @ params.m_k.data)
    v = heads_of(xd @ params.m_v.data)
    scores = np.matmul(q, k.transpose(0, 2, 1)) * inv_sqrt
    if mask_bias is not None:
        scores = scores + mask_bias
    probs = np.exp(scores - scores.max(axis=2, keepdims=True))
    probs /= probs.sum(axis=2, keepdims=True)
    mixed = flat_of(np.matmul(probs, v))
    value = mixed @ params.m_o.data

    def backward(g):
        ad.accumulate(params.m_o, mixed.T @ g, owned=True)
        d_mixed = heads_of(g @ params.m_o.data.T)
        d_probs = np.matmul(d_mixed, v.transpose(0, 2, 1))
        d_v = np.matmul(probs.transpose(0, 2, 1), d_mixed)
        d_scores = probs * (d_probs - (d_probs * probs).sum(axis=2, keepdims=True))
        d_q = np.matmul(d_scores, k) * inv_sqrt
        d_k = np.matmul(d_scores.transpose(0, 2, 1), q) * inv_sqrt
        dq_flat, dk_flat, dv_flat = flat_of(d_q), flat_of(d_k), flat_of(d_v)
        ad.accumulate(params.m_q, xd.T @ dq_flat, owned=True)
        ad.accumulate(params.m_k, xd.T @ dk_flat, owned=True)
        ad.accumulate(params.m_v, xd.T @ dv_flat, owned=True)
        d_x = dq_flat @ params.m_q.data.T
        d_x += dk_flat @ params.m_k.data.T
        d_x += dv_flat @ params.m_v.data.T
        ad.accumulate(x, d_x, owned=True)

    return ad.make_node(
        value,
        (x, params.m_q, params.m_k, params.m_v, params.m_o),
        backward,
        "attention",
    )


def _attend_composed(x: Tensor, params: AttentionParams,
                     mask_bias: np.ndarray | None) -> Tensor:
    """Reference route built only from the primitive tape ops."""
    params.validate()
    per_head = params.width // params.n_heads
    inv_sqrt = 1.0 / math.sqrt(per_head)
    q = ad.matmul(x, params.m_q)
    k = ad.matmul(x, params.m_k)
    v = ad.matmul(x, params.m_v)
    bias = ad.constant(mask_bias) if mask_bias is not None else None
    heads = []
    for qj, kj, vj in zip(
        apply_head_split(q, params.n_heads),
        apply_head_split(k, params.n_heads),
        apply_head_split(v, params.n_heads),
    ):
        scores = ad.scale(ad.matmul(qj, ad.transpose(kj)), inv_sqrt)
        if bias is not None:
            scores = ad.add(scores, bias)
        heads.append(ad.matmul(ad.softmax_rows(scores), vj))
    return ad.matmul(ad.concat_cols(heads), params.m_o)


def self_attention(x: Tensor, params: AttentionParams) -> Tensor:
    """Multi-head attention where every query sees every key."""
    return _attend(x, params, None)


def neighbor_attention(x: Tensor, params: AttentionParams, mask: NeighborMask) -> Tensor:
    """Multi-head attention where query i sees only the keys in mask row i.

    With a complete mask this equals :func:`self_attention` on the same
    inputs; with a partial mask, output row i is numerically independent of
    every token outside mask row i.
    """
    if mask.size != x.data.shape[0]:
        raise GraphError(f"mask for {mask.size} tokens applied to {x.data.shape[0]} rows")
    return _attend(x, params, mask.bias)


def attention_weights(x: Tensor, params: AttentionParams,
                      mask: NeighborMask | None = None) -> np.ndarray:
    """Per-head softmax weight matrices (heads x T x T), for inspection only."""
    params.validate()
    per_head = params.width // params.n_heads
    inv_sqrt = 1.0 / math.sqrt(per_head)
    with ad.no_grad():
        q = ad.matmul(x, params.m_q)
        k = ad.matmul(x, params.m_k)
        out = []
        for qj, kj in zip(apply_head_split(q, params.n_heads), apply_head_split(k, params.n_heads)):
            scores = ad.scale(ad.matmul(qj, ad.transpose(kj)), inv_sqrt)
            if mask is not None:
                scores = ad.add(scores, ad.constant(mask.bias))
            out.append(ad.softmax_rows(scores).data)
    return np.stack(out)
