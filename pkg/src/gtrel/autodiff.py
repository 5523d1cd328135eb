"""Reverse-mode automatic differentiation over dense float64 arrays.

All model math in this package runs on a small define-by-run tape. Every
operation takes :class:`Tensor` operands, computes its value eagerly with
numpy, and records a closure that turns the output gradient into parent
gradients. ``Tensor.backward()`` replays the closures once each, in
reverse topological order, so shared subexpressions accumulate correctly.

Everything is float64: the point of this codebase is verifiability, and
central-difference gradient checks (:func:`grad_check`) need the headroom.
Tensor values are immutable by convention once created. The one exception
is leaf tensors (parameters), whose ``data`` the single owner may update
between graph constructions (an optimizer step or a finite-difference
probe). Gradients of one backward pass belong to whoever called
``backward()``; distinct computation graphs are safe to use from distinct
threads because nothing here is shared or global except the ``no_grad``
switch, which is process-wide and intended for single-threaded eval loops.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import NonFiniteError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block. Use for eval-only forwards."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A float64 array plus the tape bookkeeping needed to differentiate it.

    ``data`` is the value (row-major numpy array), ``grad`` the accumulated
    gradient of the same shape (``None`` until a backward pass touches this
    node). ``op`` tags which operation produced the node; leaves carry
    ``"leaf"``.
    """

    __slots__ = ("data", "grad", "op", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(node) into ``grad`` for every ancestor node.

        ``self`` must be a scalar (size-1) tensor. Each node's backward
        closure runs exactly once, after all of its consumers.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.data.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative postorder: every node appears after all of its parents."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def accumulate(tensor: Tensor, grad: np.ndarray, owned: bool = False):
    """Add ``grad`` into a node's gradient buffer.

    ``owned=True`` promises the caller will not reuse ``grad`` (it was
    freshly allocated for this call), letting the first accumulation adopt
    the array instead of copying. Views or shared arrays must pass
    ``owned=False``.
    """
    if tensor.grad is None:
        tensor.grad = grad if owned else np.array(grad, dtype=np.float64)
    else:
        tensor.grad += grad


_accumulate = accumulate  # backward-compat alias for the op closures below


def make_node(value, parents, backward: Callable, op: str) -> Tensor:
    """Create a tape node; records parents only while gradients are enabled.

    This is the extension point for fused operations defined outside this
    module (e.g. the attention core): compute ``value`` eagerly, then supply
    a closure that maps the output gradient to parent gradients via
    :func:`accumulate`.
    """
    if _grad_enabled:
        return Tensor(value, parents=parents, backward=backward, op=op)
    return Tensor(value, op=op)


_node = make_node


def constant(data) -> Tensor:
    """A leaf tensor that participates in forward math only."""
    return Tensor(data)


def parameter(data) -> Tensor:
    """A trainable leaf tensor. Identical to :func:`constant`; the name
    records intent (its owner will read ``grad`` and update ``data``)."""
    return Tensor(data, op="param")


# ---------------------------------------------------------------------------
# Primitive operations
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b. Also accepts a 1-D bias b broadcast over rows of a."""
    if a.data.shape == b.data.shape:
        value = a.data + b.data

        def backward(g):
            _accumulate(a, g)
            _accumulate(b, g)

    elif a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        value = a.data + b.data

        def backward(g):
            _accumulate(a, g)
            _accumulate(b, g.sum(axis=0), owned=True)

    else:
        raise ShapeError(f"add: incompatible shapes {a.data.shape} and {b.data.shape}")
    return _node(value, (a, b), backward, "add")


def scale(a: Tensor, factor: float) -> Tensor:
    """a multiplied by a python scalar."""
    factor = float(factor)

    def backward(g):
        _accumulate(a, factor * g, owned=True)

    return _node(a.data * factor, (a,), backward, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors.

    Backward: dA = dC @ B^T, dB = A^T @ dC.
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")

    def backward(g):
        _accumulate(a, g @ b.data.T, owned=True)
        _accumulate(b, a.data.T @ g, owned=True)

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map x @ w + b in one tape node (b broadcast over rows)."""
    if (
        x.data.ndim != 2
        or w.data.ndim != 2
        or x.data.shape[1] != w.data.shape[0]
        or b.data.shape != (w.data.shape[1],)
    ):
        raise ShapeError(
            f"linear: x {x.data.shape}, w {w.data.shape}, b {b.data.shape} do not compose"
        )

    def backward(g):
        _accumulate(x, g @ w.data.T, owned=True)
        _accumulate(w, x.data.T @ g, owned=True)
        _accumulate(b, g.sum(axis=0), owned=True)

    return _node(x.data @ w.data + b.data, (x, w, b), backward, "linear")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.data.shape}")

    def backward(g):
        _accumulate(a, g.T)

    return _node(a.data.T.copy(), (a,), backward, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), backward, "reshape")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along the last axis."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_cols of zero tensors")
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ: {[q.data.shape for q in parts]}")
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[:, lo:hi])

    return _node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward, "concat_cols")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along the first axis (batch stacking)."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_rows of zero tensors")
    cols = parts[0].data.shape[1]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[1] != cols:
            raise ShapeError(f"concat_rows: column counts differ: {[q.data.shape for q in parts]}")
    heights = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + heights)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[lo:hi, :])

    return _node(np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward, "concat_rows")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a 2-D tensor."""
    if a.data.ndim != 2 or not (0 <= start < stop <= a.data.shape[1]):
        raise ShapeError(f"slice_cols [{start}:{stop}] invalid for shape {a.data.shape}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accumulate(a, full, owned=True)

    return _node(a.data[:, start:stop].copy(), (a,), backward, "slice_cols")


def gather_rows(table: Tensor, indices) -> Tensor:
    """Rows of ``table`` selected by an integer index array (embedding lookup).

    Repeated indices are fine; backward scatter-adds into the table gradient.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix table, got {table.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(f"gather_rows index out of range for {table.data.shape[0]} rows")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _accumulate(table, full, owned=True)

    return _node(table.data[idx], (table,), backward, "gather_rows")


def mean_rows(a: Tensor, rows) -> Tensor:
    """Mean over a subset of rows, as a 1 x width tensor.

    ``rows`` is a non-empty index sequence; duplicates contribute twice,
    which makes the mean invariant under duplicating the whole subset.
    """
    idx = np.asarray(rows, dtype=np.int64)
    if idx.size == 0:
        raise ShapeError("mean_rows over an empty row subset")
    if a.data.ndim != 2 or idx.min() < 0 or idx.max() >= a.data.shape[0]:
        raise IndexError(f"mean_rows indices out of range for shape {a.data.shape}")
    inv = 1.0 / idx.size

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, np.broadcast_to(g * inv, (idx.size, a.data.shape[1])))
        _accumulate(a, full, owned=True)

    return _node(a.data[idx].mean(axis=0, keepdims=True), (a,), backward, "mean_rows")


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by subtracting the row max.

    Rows may contain -inf entries (masked scores); those positions get
    probability exactly 0 and gradient exactly 0. At least one finite entry
    per row is required.
    """
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    value = exps / exps.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * value).sum(axis=1, keepdims=True)
        _accumulate(a, value * (g - dot), owned=True)

    return _node(value, (a,), backward, "softmax_rows")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Per-row normalization to mean 0 / variance 1, then gain and bias.

    ``gain`` and ``bias`` are per-feature vectors broadcast across rows;
    ``eps`` guards zero-variance rows.
    """
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    h = x.data.shape[-1]
    if x.data.ndim != 2 or gain.data.shape != (h,) or bias.data.shape != (h,):
        raise ShapeError(
            f"layer_norm: x {x.data.shape}, gain {gain.data.shape}, bias {bias.data.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    normalized = centered * inv_std

    def backward(g):
        _accumulate(bias, g.sum(axis=0), owned=True)
        _accumulate(gain, (g * normalized).sum(axis=0), owned=True)
        gx = g * gain.data
        _accumulate(
            x,
            inv_std
            * (
                gx
                - gx.mean(axis=1, keepdims=True)
                - normalized * (gx * normalized).mean(axis=1, keepdims=True)
            ),
            owned=True,
        )

    return _node(normalized * gain.data + bias.data, (x, gain, bias), backward, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form: x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)

    def backward(g):
        _accumulate(x, g * (cdf + x.data * pdf), owned=True)

    return _node(x.data * cdf, (x,), backward, "gelu")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout with an explicit generator.

    ``rate`` 0 is the identity (the input tensor is returned unchanged and
    the generator is not consumed). Otherwise each element is kept with
    probability 1-rate and scaled by 1/(1-rate); the mask comes entirely
    from ``rng``, so a generator rebuilt from the same seed reproduces the
    same mask on the same call sequence.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout with rate > 0 requires a generator")
    keep = (rng.random(x.data.shape) >= rate).astype(np.float64) / (1.0 - rate)

    def backward(g):
        _accumulate(x, g * keep, owned=True)

    return _node(x.data * keep, (x,), backward, "dropout")


def cross_entropy(logits: Tensor, gold) -> Tensor:
    """Mean negative log-likelihood of the gold class per row.

    ``logits`` is batch x labels, ``gold`` one class index per row.
    Backward is (softmax - one_hot) / batch. Stabilized via logsumexp.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects batch x labels, got {logits.data.shape}")
    b, n_labels = logits.data.shape
    idx = np.asarray(gold, dtype=np.int64)
    if idx.shape != (b,):
        raise ShapeError(f"cross_entropy: {b} logit rows but gold shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n_labels):
        raise IndexError(f"gold index out of range for {n_labels} labels: {idx.tolist()}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    value = -log_probs[np.arange(b), idx].mean()

    def backward(g):
        grad = np.exp(log_probs)
        grad[np.arange(b), idx] -= 1.0
        _accumulate(logits, grad * (float(g) / b), owned=True)

    return _node(value, (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds a scalar loss from the leaf tensors in ``params`` on every
    call (define-by-run), and must be deterministic across calls, so run it
    with dropout off. Each parameter coordinate is probed with a central
    difference of half-width ``step``; the relative error per coordinate is
    |analytic - cd| / max(|analytic|, |cd|, 1e-8), and the max over all
    coordinates is returned.
    """
    if not 0.0 < step <= 1e-3:
        raise ValueError(f"step must be in (0, 1e-3], got {step}")
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    if loss.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar loss, got shape {loss.data.shape}")
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("loss is not finite at the evaluation point")
    loss.backward()
    analytic = [
        np.array(p.grad) if p.grad is not None else np.zeros_like(p.data) for p in params
    ]

    worst = 0.0
    with no_grad():
        for p, grads in zip(params, analytic):
            flat = p.data.reshape(-1)
            flat_grads = grads.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + step
                f_plus = f().data.item()
                flat[i] = original - step
                f_minus = f().data.item()
                flat[i] = original
                if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                    raise NonFiniteError("loss is not finite at a probe point")
                cd = (f_plus - f_minus) / (2.0 * step)
                a = flat_grads[i]
                rel = abs(a - cd) / max(abs(a), abs(cd), 1e-8)
                if rel > worst:
                    worst = rel
    return worst
