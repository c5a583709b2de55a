"""Dense rank-1/2 tensors with tape-based reverse-mode differentiation.

All arithmetic is float64. Operations run eagerly on numpy arrays; when a
Tape is active they are also recorded so that Tape.backward can replay the
chain rule in reverse execution order. With no tape active the same
functions work as plain forward math.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, ValidationError

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "backward",
    "zeros",
    "ones",
    "matmul",
    "add",
    "add_row",
    "sub",
    "mul",
    "relu",
    "sigmoid",
    "tanh",
    "one_minus",
    "scale",
    "transpose",
    "concat_cols",
    "concat_rows",
    "take_rows",
    "softmax_rows",
    "mean_rows",
    "max_pool_rows",
    "cross_entropy",
    "sum_all",
    "elementwise",
    "grad_check",
]


class Tensor:
    """A dense real array of rank 1 or 2.

    `data` is a float64 ndarray; `node` points into the active tape when the
    tensor was produced or consumed while recording, else is None.
    """

    __slots__ = ("data", "node")

    def __init__(self, data, check: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if check:
            if arr.ndim not in (1, 2):
                raise ShapeError(f"tensors must have rank 1 or 2, got rank {arr.ndim}")
            if arr.size == 0:
                raise ShapeError(f"tensor extents must be positive, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError("tensor values must be finite")
        self.data = arr
        self.node = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        # rank-2 only
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), check=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    # Operator sugar over the module-level primitives.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return NotImplemented

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), check=False)


def ones(*shape) -> Tensor:
    return Tensor(np.ones(shape), check=False)


class _Node:
    """One executed primitive on the tape (or a leaf input)."""

    __slots__ = ("tape", "index", "parents", "backward_fn")

    def __init__(self, tape, index, parents, backward_fn):
        self.tape = tape
        self.index = index
        self.parents = parents
        self.backward_fn = backward_fn


class Gradients:
    """Result of a backward pass: accumulated gradients keyed by tensor."""

    def __init__(self, tape: "Tape", grads: list):
        self._tape = tape
        self._grads = grads

    def wrt(self, tensor: Tensor) -> np.ndarray:
        """Gradient of the loss with respect to `tensor` (zeros if unused)."""
        node = tensor.node
        if node is None or node.tape is not self._tape:
            raise ValidationError("tensor was not recorded on this tape")
        g = self._grads[node.index]
        if g is None:
            return np.zeros_like(tensor.data)
        return g


_ACTIVE = threading.local()


def _active_tape():
    stack = getattr(_ACTIVE, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Append-only record of executed primitives, in execution order.

    Execution order is a topological order by construction, so the backward
    pass is a single reverse sweep with gradient accumulation at each node.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_ACTIVE, "stack", None)
        if stack is None:
            stack = _ACTIVE.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE.stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def _leaf(self, tensor: Tensor) -> _Node:
        node = tensor.node
        if node is not None and node.tape is self:
            return node
        node = _Node(self, len(self.nodes), (), None)
        self.nodes.append(node)
        tensor.node = node
        return node

    def watch(self, tensor: Tensor) -> None:
        """Register `tensor` as a leaf so backward() reports a gradient for it."""
        self._leaf(tensor)

    def _record(self, out: Tensor, parents: Sequence[Tensor], backward_fn) -> None:
        parent_nodes = tuple(self._leaf(p) for p in parents)
        node = _Node(self, len(self.nodes), parent_nodes, backward_fn)
        self.nodes.append(node)
        out.node = node

    def backward(self, loss: Tensor) -> Gradients:
        """Reverse-accumulate gradients of a scalar `loss` over the tape."""
        node = loss.node
        if node is None or node.tape is not self:
            raise ValidationError("loss is not recorded on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        grads: list = [None] * len(self.nodes)
        grads[node.index] = np.ones_like(loss.data)
        for n in reversed(self.nodes):
            g = grads[n.index]
            if g is None or n.backward_fn is None:
                continue
            for parent, contribution in zip(n.parents, n.backward_fn(g)):
                if contribution is None:
                    continue
                if grads[parent.index] is None:
                    grads[parent.index] = np.zeros_like(contribution)
                grads[parent.index] = grads[parent.index] + contribution
        return Gradients(self, grads)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Functional alias for Tape.backward."""
    return tape.backward(loss)


def _emit(value: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(value, check=False)
    tape = _active_tape()
    if tape is not None:
        tape._record(out, parents, backward_fn)
    return out


# ---------------------------------------------------------------------------
# Forward primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an m*k and a k*n tensor."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return (g @ bd.T, ad.T @ g)

    return _emit(ad @ bd, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two equally shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def add_row(m: Tensor, r: Tensor) -> Tensor:
    """Add a 1*n row vector to every row of an m*n matrix."""
    if m.ndim != 2 or r.ndim != 2 or r.shape[0] != 1 or r.shape[1] != m.shape[1]:
        raise ShapeError(f"add_row shape mismatch: {m.shape} vs {r.shape}")
    return _emit(m.data + r.data, (m, r), lambda g: (g, g.sum(axis=0, keepdims=True)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference of two equally shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two equally shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def relu(x: Tensor) -> Tensor:
    """max(x, 0) elementwise; gradient is zero on the non-positive side."""
    xd = x.data
    return _emit(np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0.0),))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, computed stably on both tails."""
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    """Hyperbolic tangent elementwise."""
    y = np.tanh(x.data)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),))


def one_minus(x: Tensor) -> Tensor:
    """1 - x elementwise."""
    return _emit(1.0 - x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a Python constant (no gradient to the constant)."""
    c = float(c)
    return _emit(x.data * c, (x,), lambda g: (g * c,))


def transpose(x: Tensor) -> Tensor:
    """Matrix transpose."""
    if x.ndim != 2:
        raise ShapeError(f"transpose needs rank 2, got shape {x.shape}")
    return _emit(x.data.T.copy(), (x,), lambda g: (g.T,))


def concat_cols(*tensors: Tensor) -> Tensor:
    """Stack matrices along the feature axis; all must share the row count."""
    if len(tensors) < 2:
        raise ValidationError("concat_cols needs at least two tensors")
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.ndim != 2 or t.shape[0] != rows:
            raise ShapeError(
                f"concat_cols row mismatch: {[tuple(t.shape) for t in tensors]}"
            )
    widths = [t.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def back(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(widths)))

    return _emit(np.concatenate([t.data for t in tensors], axis=1), tensors, back)


def concat_rows(*tensors: Tensor) -> Tensor:
    """Stack matrices vertically; all must share the column count."""
    if len(tensors) < 1:
        raise ValidationError("concat_rows needs at least one tensor")
    cols = tensors[0].shape[1] if tensors[0].ndim == 2 else None
    for t in tensors:
        if t.ndim != 2 or t.shape[1] != cols:
            raise ShapeError(
                f"concat_rows column mismatch: {[tuple(t.shape) for t in tensors]}"
            )
    heights = [t.shape[0] for t in tensors]
    offsets = np.cumsum([0] + heights)

    def back(g):
        return tuple(g[offsets[i]:offsets[i + 1], :] for i in range(len(heights)))

    return _emit(np.concatenate([t.data for t in tensors], axis=0), tensors, back)


def take_rows(m: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows of `m` by index (repeats allowed); gradients scatter-add."""
    if m.ndim != 2:
        raise ShapeError(f"take_rows needs rank 2, got shape {m.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ValidationError("take_rows needs a non-empty index list")
    if idx.min() < 0 or idx.max() >= m.shape[0]:
        raise ValidationError(
            f"row index out of range for {m.shape[0]} rows: {indices}"
        )
    shape = m.shape

    def back(g):
        acc = np.zeros(shape)
        np.add.at(acc, idx, g)
        return (acc,)

    return _emit(m.data[idx], (m,), back)


def softmax_rows(m: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability."""
    if m.ndim != 2:
        raise ShapeError(f"softmax_rows needs rank 2, got shape {m.shape}")
    shifted = m.data - m.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def back(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return ((g - dot) * y,)

    return _emit(y, (m,), back)


def mean_rows(m: Tensor) -> Tensor:
    """Columnwise arithmetic mean, returned as a 1*n matrix."""
    if m.ndim != 2:
        raise ShapeError(f"mean_rows needs rank 2, got shape {m.shape}")
    n_rows = m.shape[0]
    return _emit(
        m.data.mean(axis=0, keepdims=True),
        (m,),
        lambda g: (np.repeat(g, n_rows, axis=0) / n_rows,),
    )


def max_pool_rows(m: Tensor) -> Tensor:
    """Columnwise maximum as a 1*n matrix.

    The gradient flows only to the first maximal row of each column.
    """
    if m.ndim != 2:
        raise ShapeError(f"max_pool_rows needs rank 2, got shape {m.shape}")
    argmax = m.data.argmax(axis=0)  # first occurrence on ties
    shape = m.shape

    def back(g):
        acc = np.zeros(shape)
        acc[argmax, np.arange(shape[1])] = g[0]
        return (acc,)

    return _emit(m.data.max(axis=0, keepdims=True), (m,), back)


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log-softmax of the target ids over T rows of logits."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy needs rank-2 logits, got {logits.shape}")
    t_count, vocab = logits.shape
    idx = np.asarray(targets, dtype=np.intp)
    if idx.ndim != 1 or idx.size != t_count:
        raise ValidationError(
            f"cross_entropy needs one target per logit row: {t_count} rows, {idx.size} targets"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise ValidationError(f"target id out of range for vocab {vocab}: {targets}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[np.arange(t_count), idx].mean()
    probs = np.exp(log_probs)

    def back(g):
        grad = probs.copy()
        grad[np.arange(t_count), idx] -= 1.0
        return (grad * (g.reshape(-1)[0] / t_count),)

    return _emit(np.array([loss]), (logits,), back)


def sum_all(x: Tensor) -> Tensor:
    """Sum of every element, as a scalar (shape (1,)) tensor."""
    shape = x.shape
    return _emit(
        np.array([x.data.sum()]),
        (x,),
        lambda g: (np.full(shape, g.reshape(-1)[0]),),
    )


_ELEMENTWISE = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "mul": mul,
    "add": add,
    "concat_cols": concat_cols,
}


def elementwise(kind: str, *args: Tensor) -> Tensor:
    """Dispatch a pointwise/stacking primitive by name."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValidationError(
            f"unknown elementwise kind {kind!r}; expected one of {sorted(_ELEMENTWISE)}"
        ) from None
    return fn(*args)


# ---------------------------------------------------------------------------
# Gradient checking


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be scalar-valued and is re-evaluated at coordinate-wise +/- eps
    perturbations of `x` (mutated in place and restored). The error at each
    coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if not (1e-6 <= eps <= 1e-3):
        raise ValidationError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    with Tape() as tape:
        tape.watch(x)
        y = f(x)
        if y.data.size != 1:
            raise ShapeError(f"grad_check needs a scalar-valued f, got shape {y.shape}")
        analytic = tape.backward(y).wrt(x)

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x).item()
        flat[i] = orig - eps
        lo = f(x).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * eps)
    numeric = numeric.reshape(x.shape)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max())
