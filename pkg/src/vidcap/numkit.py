"""Dense 2-D tensors with reverse-mode automatic differentiation.

Values are numpy arrays of shape (rows, cols).  float32 is the training
precision; float64 is used when checking gradients against finite
differences.  Each operation runs eagerly and records a node linking the
result to its inputs.  backward() walks the recorded graph once in reverse
topological order, propagating through a pass-local table, and then adds the
pass totals into each node's persistent grad -- so calling it twice without
zeroing doubles every gradient.

Exponentials are guarded (max-subtraction in the softmaxes, split-sign
sigmoid) so finite inputs of bounded magnitude never produce inf/nan.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ContractError, DimensionError, DomainError

# --------------------------------------------------------------------------
# graph node


class Tensor:
    """A 2-D value plus its gradient and links to the inputs that made it."""

    __slots__ = ("data", "_grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data: np.ndarray, requires_grad: bool = False,
                 _parents: tuple = (), _backward=None):
        self.data = data
        self._grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def grad(self) -> np.ndarray:
        """Accumulated gradient; zeros if backward never reached this node."""
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def tensor(values, dtype=None, requires_grad: bool = False) -> Tensor:
    """Wrap array-like values (must be 2-D) as a leaf tensor."""
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.ndim != 2:
        raise ContractError(f"tensor: expected 2-D data, got shape {arr.shape}")
    return Tensor(arr, requires_grad=requires_grad)


def constant(values, dtype=None) -> Tensor:
    return tensor(values, dtype=dtype, requires_grad=False)


def zeros(rows: int, cols: int, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros((rows, cols), dtype=dtype))


# --------------------------------------------------------------------------
# graph recording

_grad_enabled = True

# pass-local gradient table, only set while backward() is running
_flow: dict[int, np.ndarray] | None = None


@contextlib.contextmanager
def no_grad():
    """Skip graph recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Result node; records links only if some parent needs gradients."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)
    return Tensor(data)


def _send(t: Tensor, g: np.ndarray) -> None:
    """Route a gradient contribution into the current pass table."""
    held = _flow.get(id(t))
    if held is None:
        _flow[id(t)] = np.array(g, copy=True)
    else:
        held += g


# --------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a (R, K) @ b (K, C) -> (R, C)."""
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _send(a, g @ b.data.T)
        if b.requires_grad:
            _send(b, a.data.T @ g)

    return _node(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    out = np.ascontiguousarray(a.data.T)

    def backward(g):
        if a.requires_grad:
            _send(a, np.ascontiguousarray(g.T))

    return _node(out, (a,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a (1, C) bias against an (R, C) operand."""
    if a.shape != b.shape:
        row_vs_mat = a.shape[0] == 1 and a.shape[1] == b.shape[1]
        mat_vs_row = b.shape[0] == 1 and b.shape[1] == a.shape[1]
        if not (row_vs_mat or mat_vs_row):
            raise DimensionError(f"add: incompatible shapes {a.shape} + {b.shape}")
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _send(a, g.sum(axis=0, keepdims=True) if a.shape[0] != g.shape[0] else g)
        if b.requires_grad:
            _send(b, g.sum(axis=0, keepdims=True) if b.shape[0] != g.shape[0] else g)

    return _node(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product, shapes must match exactly."""
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} * {b.shape}")
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _send(a, g * b.data)
        if b.requires_grad:
            _send(b, g * a.data)

    return _node(out, (a, b), backward)


def scale(a: Tensor, k: float) -> Tensor:
    """a * k for a plain python scalar k."""
    out = a.data * a.data.dtype.type(k)

    def backward(g):
        if a.requires_grad:
            _send(a, g * a.data.dtype.type(k))

    return _node(out, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    """Sum of every element -> (1, 1)."""
    out = a.data.sum(dtype=a.data.dtype).reshape(1, 1)

    def backward(g):
        if a.requires_grad:
            _send(a, np.full_like(a.data, g[0, 0]))

    return _node(out, (a,), backward)


# --------------------------------------------------------------------------
# nonlinearities


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        if a.requires_grad:
            _send(a, g * out * (1.0 - out))

    return _node(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            _send(a, g * (1.0 - out * out))

    return _node(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log: input has non-positive entries")
    out = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            _send(a, g / a.data)

    return _node(out, (a,), backward)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax, stabilised by subtracting each row's max."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * out).sum(axis=1, keepdims=True)
            _send(a, out * (g - inner))

    return _node(out, (a,), backward)


def log_softmax_rows(a: Tensor) -> Tensor:
    """Row-wise log softmax; the stable route to log-likelihoods."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse

    def backward(g):
        if a.requires_grad:
            soft = np.exp(out)
            _send(a, g - soft * g.sum(axis=1, keepdims=True))

    return _node(out, (a,), backward)


# --------------------------------------------------------------------------
# shape surgery


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """[a | b] along columns; row counts must agree."""
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols: row counts differ, {a.shape} | {b.shape}")
    out = np.concatenate([a.data, b.data], axis=1)
    split = a.shape[1]

    def backward(g):
        if a.requires_grad:
            _send(a, g[:, :split])
        if b.requires_grad:
            _send(b, g[:, split:])

    return _node(out, (a, b), backward)


def concat_rows(parts: list[Tensor]) -> Tensor:
    """Stack tensors vertically; column counts must agree."""
    if not parts:
        raise ContractError("concat_rows: empty input")
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise DimensionError(f"concat_rows: column counts differ, {p.shape} vs (*, {cols})")
    out = np.concatenate([p.data for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _send(p, g[lo:hi])

    return _node(out, tuple(parts), backward)


def _check_range(lo: int, hi: int, size: int, what: str):
    if not (0 <= lo < hi <= size):
        raise ContractError(f"{what}: bad range [{lo}, {hi}) for size {size}")


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    _check_range(lo, hi, a.shape[1], "slice_cols")
    out = a.data[:, lo:hi].copy()

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, lo:hi] = g
            _send(a, full)

    return _node(out, (a,), backward)


def slice_rows(a: Tensor, lo: int, hi: int) -> Tensor:
    """Row range [lo, hi); with hi = lo + 1 this is an embedding-row lookup."""
    _check_range(lo, hi, a.shape[0], "slice_rows")
    out = a.data[lo:hi].copy()

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[lo:hi] = g
            _send(a, full)

    return _node(out, (a,), backward)


# --------------------------------------------------------------------------
# dropout


def dropout_mask(shape: tuple[int, int], p: float, gen: np.random.Generator,
                 dtype=np.float32) -> Tensor:
    """Inverted-dropout mask: entries are 0 with probability p, else 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout_mask: p must be in [0, 1), got {p}")
    keep = gen.random(shape) >= p
    return Tensor((keep / (1.0 - p)).astype(dtype))


def dropout(a: Tensor, p: float, gen: np.random.Generator | None,
            training: bool) -> Tensor:
    """Inverted dropout on a's entries; identity when p = 0 or not training."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if gen is None:
        raise ContractError("dropout: training mode needs a generator")
    return mul(a, dropout_mask(a.shape, p, gen, dtype=a.data.dtype))


# --------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Add d(loss)/d(node) into every reachable node's grad.

    loss must be 1x1.  Each call contributes one full pass, so gradients add
    up across calls; zero them between optimizer steps.  Nodes not on a path
    to the loss are never touched.
    """
    global _flow
    if loss.shape != (1, 1):
        raise ContractError(f"backward: loss must be (1, 1), got {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    _flow = {id(loss): np.ones((1, 1), dtype=loss.data.dtype)}
    try:
        for node in reversed(topo):
            g = _flow.get(id(node))
            if g is None or node._backward is None:
                continue
            node._backward(g)
        for node in topo:
            g = _flow.get(id(node))
            if g is None:
                continue
            if node._grad is None:
                node._grad = g
            else:
                node._grad += g
    finally:
        _flow = None
