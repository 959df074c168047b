"""Reverse-mode accumulation over an explicit operation tape.

Only the operations the recurrent engine needs are supported: matmul, add,
sub, elementwise sigmoid/tanh/mul, concat, column slicing, sum, gather by
index and softmax cross-entropy.

Model code is written once against an *ops* object. ``NUMPY_OPS`` evaluates
plain arrays; a ``Tape`` evaluates the same arithmetic on ``Var`` nodes and
records how to differentiate it. Both produce bit-identical values.
"""
import numpy as np


def sigmoid(x):
    # tanh form stays finite for any input, unlike 1 / (1 + exp(-x))
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class NumpyOps:
    """Array-valued evaluation of the tape operation set."""

    @staticmethod
    def value(x):
        return x

    def const(self, x):
        return np.asarray(x, dtype=np.float64)

    def matmul(self, a, b):
        return a @ b

    def add(self, a, b):
        return a + b

    def sub(self, a, b):
        return a - b

    def mul(self, a, b):
        return a * b

    def sigmoid(self, a):
        return sigmoid(a)

    def tanh(self, a):
        return np.tanh(a)

    def concat(self, items, axis=-1):
        return np.concatenate(items, axis=axis)

    def cols(self, a, start, stop):
        return a[:, start:stop]

    def sum(self, a):
        return np.sum(a)

    def gather(self, table, ids):
        return table[ids]

    def softmax_xent(self, logits, labels, weights):
        logp = log_softmax(logits)
        return -np.sum(weights * logp[np.arange(len(labels)), labels])


NUMPY_OPS = NumpyOps()


class Var:
    """A node on a tape: a value plus an accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad=False):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape(NumpyOps):
    """Records operations on ``Var`` nodes for a later ``backward`` sweep."""

    def __init__(self):
        self._records = []

    @staticmethod
    def value(x):
        return x.value if isinstance(x, Var) else x

    def leaf(self, value):
        return Var(np.asarray(value, dtype=np.float64), requires_grad=True)

    def const(self, x):
        return Var(np.asarray(x, dtype=np.float64))

    def _emit(self, value, inputs, backward):
        out = Var(value, requires_grad=any(v.requires_grad for v in inputs))
        if out.requires_grad:
            self._records.append((out, inputs, backward))
        return out

    def matmul(self, a, b):
        av, bv = a.value, b.value
        return self._emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))

    def add(self, a, b):
        sa, sb = a.shape, b.shape
        return self._emit(a.value + b.value, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a, b):
        sa, sb = a.shape, b.shape
        return self._emit(a.value - b.value, (a, b),
                          lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

    def mul(self, a, b):
        av, bv = a.value, b.value
        sa, sb = a.shape, b.shape
        return self._emit(av * bv, (a, b),
                          lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))

    def sigmoid(self, a):
        y = sigmoid(a.value)
        return self._emit(y, (a,), lambda g: (g * y * (1.0 - y),))

    def tanh(self, a):
        y = np.tanh(a.value)
        return self._emit(y, (a,), lambda g: (g * (1.0 - y * y),))

    def concat(self, items, axis=-1):
        value = np.concatenate([v.value for v in items], axis=axis)
        bounds = np.cumsum([v.value.shape[axis] for v in items])[:-1]
        return self._emit(value, tuple(items),
                          lambda g: tuple(np.split(g, bounds, axis=axis)))

    def cols(self, a, start, stop):
        shape = a.shape

        def backward(g):
            full = np.zeros(shape)
            full[:, start:stop] = g
            return (full,)

        return self._emit(a.value[:, start:stop], (a,), backward)

    def sum(self, a):
        shape = a.shape
        return self._emit(np.sum(a.value), (a,), lambda g: (np.full(shape, g),))

    def gather(self, table, ids):
        ids = np.asarray(ids)
        shape = table.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, ids, g)
            return (full,)

        return self._emit(table.value[ids], (table,), backward)

    def softmax_xent(self, logits, labels, weights):
        labels = np.asarray(labels)
        weights = np.asarray(weights, dtype=np.float64)
        logp = log_softmax(logits.value)
        rows = np.arange(len(labels))
        loss = -np.sum(weights * logp[rows, labels])

        def backward(g):
            d = np.exp(logp)
            d[rows, labels] -= 1.0
            return (g * weights[:, None] * d,)

        return self._emit(loss, (logits,), backward)

    def backward(self, out):
        """Accumulate d(out)/d(leaf) into ``leaf.grad`` for every leaf."""
        if not isinstance(out, Var) or not out.requires_grad:
            return
        out.grad = np.ones_like(out.value)
        for node, inputs, backward in reversed(self._records):
            if node.grad is None:
                continue
            grads = backward(node.grad)
            for inp, g in zip(inputs, grads):
                if not inp.requires_grad:
                    continue
                inp.grad = g if inp.grad is None else inp.grad + g
        self._records.clear()
