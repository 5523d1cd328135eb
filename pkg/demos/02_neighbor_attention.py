"""Full self-attention vs neighbor-restricted attention, side by side.

Neighbor attention runs each query's softmax only over that token's allowed
keys (a boolean mask row). With the complete mask it is exactly standard
self-attention; with a sparse mask, information outside a token's
neighborhood cannot reach it, bit for bit.
"""

import numpy as np

from gtrel import autodiff as ad
from gtrel.attention import (
    NeighborMask,
    attention_weights,
    init_attention_params,
    neighbor_attention,
    self_attention,
)

rng = np.random.default_rng(1)
T, width, heads = 6, 8, 2
params = init_attention_params(width, heads, rng, std=0.5)
x = ad.constant(rng.normal(size=(T, width)))

# a sparse neighborhood: each token sees itself and one or two others
allowed = np.eye(T, dtype=bool)
allowed[0, 1] = allowed[1, 0] = True
allowed[2, 3] = allowed[3, 2] = True
allowed[4, 5] = allowed[5, 4] = True
allowed[0, 5] = True
mask = NeighborMask(allowed)

print("mask (rows = queries, columns = allowed keys):")
print(allowed.astype(int), "\n")

weights = attention_weights(x, params, mask)
print("head-0 attention weights under the mask (zeros where masked):")
print(np.round(weights[0], 3), "\n")

# equivalence: complete mask == plain self-attention
full = neighbor_attention(x, params, NeighborMask.complete(T))
plain = self_attention(x, params)
print("complete mask == self-attention:",
      np.max(np.abs(full.data - plain.data)) <= 1e-10)

# locality: perturbing a token outside row 2's neighborhood leaves row 2 alone
base = neighbor_attention(x, params, mask).data
perturbed = x.data.copy()
perturbed[0] += 100.0  # token 0 is not a neighbor of token 2
moved = neighbor_attention(ad.constant(perturbed), params, mask).data
print("row 2 bit-identical after perturbing token 0:",
      np.array_equal(base[2], moved[2]))
print("row 1 changed (token 0 IS its neighbor):   ",
      not np.array_equal(base[1], moved[1]))
