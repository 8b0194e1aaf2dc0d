"""Dense float64 tensors with reverse-mode automatic differentiation.

Covers exactly what small fully connected classification heads need:
2-D matmul, elementwise arithmetic with bias-row broadcasting, relu,
softplus, log, row-wise log-softmax, negative log-likelihood and
summation. Every operation validates its output and raises NumericError
on NaN/Inf instead of letting bad values propagate.

The recorded graph doubles as the gradient tape: each node keeps its
parents and a backward closure, ``backward()`` zero-initialises the
gradient buffers of every reachable node and then replays the closures
in reverse topological order. A root can be walked backward only once.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError, ShapeError, TapeError


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced non-finite values")
    return arr


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tensor:
    """A value in the computation graph: float64 data plus a grad buffer."""

    __slots__ = ("data", "grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, _parents=(), _backward_fn=None, _op="tensor"):
        arr = np.asarray(data, dtype=np.float64, order="C")
        self.data = _check_finite(arr, _op)
        self.grad = None
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={self.data!r})"

    # ---- construction helpers -------------------------------------------

    @staticmethod
    def zeros(shape) -> "Tensor":
        return Tensor(np.zeros(shape))

    # ---- elementwise arithmetic -----------------------------------------

    def _binary_shapes(self, other: "Tensor", op: str) -> bool:
        """Validate shapes; return True when `other` broadcasts as a bias row."""
        if self.shape == other.shape:
            return False
        if (
            len(self.shape) == 2
            and other.shape in ((self.shape[1],), (1, self.shape[1]))
        ):
            return True
        raise ShapeError(f"{op}: shapes {self.shape} and {other.shape} are incompatible")

    def _binary(self, other, op: str, fwd, bwd_self, bwd_other):
        if isinstance(other, (int, float)):
            c = float(other)
            out = Tensor(fwd(self.data, c), (self,), _op=op)

            def _bw_scalar(g):
                self.grad += bwd_self(g, self.data, c)

            out._backward_fn = _bw_scalar
            return out

        if not isinstance(other, Tensor):
            raise TypeError(f"{op}: expected Tensor or scalar, got {type(other).__name__}")
        bias_row = self._binary_shapes(other, op)
        out = Tensor(fwd(self.data, other.data), (self, other), _op=op)

        def _bw(g):
            self.grad += bwd_self(g, self.data, other.data)
            go = bwd_other(g, self.data, other.data)
            if bias_row:
                go = go.sum(axis=0).reshape(other.shape)
            other.grad += go

        out._backward_fn = _bw
        return out

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return self._binary(other, "add", lambda a, c: a + c, lambda g, a, c: g, None)
        return self._binary(
            other, "add",
            lambda a, b: a + b,
            lambda g, a, b: g,
            lambda g, a, b: g,
        )

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self._binary(other, "sub", lambda a, c: a - c, lambda g, a, c: g, None)
        return self._binary(
            other, "sub",
            lambda a, b: a - b,
            lambda g, a, b: g,
            lambda g, a, b: -g,
        )

    def __rsub__(self, other):
        return (self * -1.0) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self._binary(other, "mul", lambda a, c: a * c, lambda g, a, c: g * c, None)
        return self._binary(
            other, "mul",
            lambda a, b: a * b,
            lambda g, a, b: g * b,
            lambda g, a, b: g * a,
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    # ---- matmul -----------------------------------------------------------

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def matmul(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    # ---- unary ops ---------------------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, 0.0), (self,), _op="relu")

        def _bw(g):
            self.grad += np.where(mask, g, 0.0)

        out._backward_fn = _bw
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), (self,), _op="log")

        def _bw(g):
            self.grad += g / self.data

        out._backward_fn = _bw
        return out

    def softplus(self) -> "Tensor":
        """ln(1 + exp(x)), overflow-safe: returns x itself above 30."""
        x = self.data
        big = x > 30.0
        out_data = np.where(big, x, np.log1p(np.exp(np.minimum(x, 30.0))))
        out = Tensor(out_data, (self,), _op="softplus")

        def _bw(g):
            self.grad += g * _sigmoid(x)

        out._backward_fn = _bw
        return out

    def sum(self) -> "Tensor":
        out = Tensor(self.data.sum(), (self,), _op="sum")

        def _bw(g):
            self.grad += np.broadcast_to(g, self.data.shape)

        out._backward_fn = _bw
        return out

    def log_softmax(self) -> "Tensor":
        return log_softmax(self)

    def nll(self, labels) -> "Tensor":
        return nll(self, labels)

    # ---- backward ------------------------------------------------------------

    def backward(self) -> None:
        """Propagate gradients from this scalar to every node in its graph.

        Gradient buffers of all reachable nodes are zeroed first, so no
        manual reset between passes is needed. Raises TapeError when this
        root has already been walked.
        """
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar root, got shape {self.shape}")
        if self._consumed:
            raise TapeError("backward already ran on this root; build a fresh graph")
        self._consumed = True

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        for node in topo:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)


# ---- module-level operations ---------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard 2-D matrix product with dA = g Bᵀ, dB = Aᵀ g."""
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    out = Tensor(a.data @ b.data, (a, b), _op="matmul")

    def _bw(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    out._backward_fn = _bw
    return out


def add(a: Tensor, b) -> Tensor:
    return a + b


def sub(a: Tensor, b) -> Tensor:
    return a - b


def mul(a: Tensor, b) -> Tensor:
    return a * b


def relu(a: Tensor) -> Tensor:
    return a.relu()


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log-softmax with max-subtraction for stability."""
    if len(logits.shape) != 2:
        raise ShapeError(f"log_softmax: expected a 2-D tensor, got shape {logits.shape}")
    if logits.shape[1] < 2:
        raise ContractError(f"log_softmax: need at least 2 classes, got {logits.shape[1]}")
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = shifted - logsumexp
    out = Tensor(out_data, (logits,), _op="log_softmax")
    probs = np.exp(out_data)

    def _bw(g):
        logits.grad += g - probs * g.sum(axis=1, keepdims=True)

    out._backward_fn = _bw
    return out


def nll(log_probs: Tensor, labels) -> Tensor:
    """Mean over rows of -log_probs[row, label]."""
    if len(log_probs.shape) != 2:
        raise ShapeError(f"nll: expected a 2-D tensor, got shape {log_probs.shape}")
    m, k = log_probs.shape
    idx = np.asarray(labels)
    if idx.shape != (m,):
        raise ShapeError(f"nll: expected {m} labels, got shape {idx.shape}")
    if not np.issubdtype(idx.dtype, np.integer):
        raise ContractError("nll: labels must be integers")
    if idx.min() < 0 or idx.max() >= k:
        bad = idx[(idx < 0) | (idx >= k)][0]
        raise IndexError(f"nll: label {bad} out of range [0, {k})")
    rows = np.arange(m)
    out = Tensor(-log_probs.data[rows, idx].mean(), (log_probs,), _op="nll")

    def _bw(g):
        buf = np.zeros_like(log_probs.data)
        buf[rows, idx] = -g / m
        log_probs.grad += buf

    out._backward_fn = _bw
    return out
