"""Reverse-mode differentiation over dense numpy tensors.

Small define-by-run engine: every operation appends a node to the owning
``Graph``'s tape, so execution order is a topological order and the backward
pass simply walks the tape in reverse.  Only the operations needed by
feed-forward encoder/decoder stacks and the training objective are provided;
there is no broadcasting beyond row-wise bias addition inside ``affine`` and
``batch_norm``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GraphError(RuntimeError):
    """Raised for malformed graph usage: bad shapes, non-finite values,

    backward before forward, or a non-scalar backward target."""


def sigmoid(x):
    """Numerically safe logistic function of a numpy array or scalar."""
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def softplus(x):
    """log(1 + e^x) computed without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def logsumexp(x, axis=None):
    """Max-shifted log-sum-exp of a numpy array."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


class Tensor:
    """A node in the computation graph holding a dense float array.

    Leaves are created through ``Graph.parameter`` / ``Graph.constant``;
    interior nodes through the ``Graph`` op methods.  ``grad`` is populated
    by ``Graph.backward``.
    """

    __slots__ = ("graph", "value", "grad", "parents", "backward_fn", "op", "node_id", "name")

    def __init__(self, graph, value, parents, backward_fn, op, name=None):
        self.graph = graph
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor(node {self.node_id}: {label}, shape={self.value.shape})"


@dataclass
class BatchNormState:
    """Running statistics for one batch-normalization layer."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5
    updates: int = 0

    @classmethod
    def create(cls, width, momentum=0.9, eps=1e-5):
        return cls(np.zeros(width), np.ones(width), momentum, eps, 0)


class Graph:
    """Tape-recording execution context.

    A graph instance is single-threaded; build a fresh one per forward pass
    (parameter arrays live outside and are bound by name each time).
    """

    def __init__(self, dtype=np.float64, check_finite=True):
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite
        self.nodes = []
        self.params = {}

    # -- construction ----------------------------------------------------

    def _record(self, value, parents, backward_fn, op, name=None):
        value = np.asarray(value, dtype=self.dtype)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise GraphError(f"non-finite values produced by {op} node {len(self.nodes)}")
        t = Tensor(self, value, tuple(parents), backward_fn, op, name)
        t.node_id = len(self.nodes)
        self.nodes.append(t)
        return t

    def constant(self, value, name=None):
        """Leaf tensor that takes no gradient."""
        return self._record(value, (), None, "constant", name)

    def parameter(self, name, value):
        """Named leaf tensor whose gradient ``backward`` reports.

        Binding the same name twice returns the original node as long as it
        wraps the identical array object.
        """
        if name in self.params:
            bound = self.params[name]
            if bound.value is value or np.shares_memory(bound.value, np.asarray(value)):
                return bound
            raise GraphError(f"parameter {name!r} already bound to a different array")
        value = np.asarray(value)
        if value.dtype != self.dtype:
            raise GraphError(
                f"parameter {name!r} has dtype {value.dtype}, graph expects {self.dtype}"
            )
        t = Tensor(self, value, (), None, "parameter", name)
        t.node_id = len(self.nodes)
        self.nodes.append(t)
        self.params[name] = t
        return t

    def _check_same_shape(self, op, x, y):
        if x.value.shape != y.value.shape:
            raise GraphError(
                f"{op} node {len(self.nodes)}: shape mismatch {x.value.shape} vs {y.value.shape}"
            )

    @staticmethod
    def _accumulate(t, g):
        t.grad = g if t.grad is None else t.grad + g

    # -- elementwise -----------------------------------------------------

    def add(self, x, y):
        self._check_same_shape("add", x, y)
        out = self._record(x.value + y.value, (x, y), None, "add")

        def backward(g):
            self._accumulate(x, g)
            self._accumulate(y, g)

        out.backward_fn = backward
        return out

    def sub(self, x, y):
        self._check_same_shape("sub", x, y)
        out = self._record(x.value - y.value, (x, y), None, "sub")

        def backward(g):
            self._accumulate(x, g)
            self._accumulate(y, -g)

        out.backward_fn = backward
        return out

    def mul(self, x, y):
        self._check_same_shape("multiply", x, y)
        out = self._record(x.value * y.value, (x, y), None, "multiply")

        def backward(g):
            self._accumulate(x, g * y.value)
            self._accumulate(y, g * x.value)

        out.backward_fn = backward
        return out

    def scale(self, x, c):
        c = float(c)
        out = self._record(x.value * c, (x,), None, "scale")
        out.backward_fn = lambda g: self._accumulate(x, g * c)
        return out

    def add_scalar(self, x, c):
        c = float(c)
        out = self._record(x.value + c, (x,), None, "add_scalar")
        out.backward_fn = lambda g: self._accumulate(x, g)
        return out

    def neg(self, x):
        return self.scale(x, -1.0)

    # -- nonlinearities --------------------------------------------------

    def sigmoid(self, x):
        with np.errstate(over="ignore"):
            s = 1.0 / (1.0 + np.exp(-x.value))
        out = self._record(s, (x,), None, "sigmoid")
        out.backward_fn = lambda g: self._accumulate(x, g * s * (1.0 - s))
        return out

    def tanh(self, x):
        t = np.tanh(x.value)
        out = self._record(t, (x,), None, "tanh")
        out.backward_fn = lambda g: self._accumulate(x, g * (1.0 - t * t))
        return out

    def log(self, x):
        with np.errstate(invalid="ignore", divide="ignore"):
            v = np.log(x.value)
        out = self._record(v, (x,), None, "log")
        out.backward_fn = lambda g: self._accumulate(x, g / x.value)
        return out

    def exp(self, x):
        e = np.exp(x.value)
        out = self._record(e, (x,), None, "exp")
        out.backward_fn = lambda g: self._accumulate(x, g * e)
        return out

    def softplus(self, x):
        v = np.maximum(x.value, 0.0) + np.log1p(np.exp(-np.abs(x.value)))
        out = self._record(v, (x,), None, "softplus")

        def backward(g):
            with np.errstate(over="ignore"):
                s = 1.0 / (1.0 + np.exp(-x.value))
            self._accumulate(x, g * s)

        out.backward_fn = backward
        return out

    # -- linear algebra --------------------------------------------------

    def matmul(self, x, y):
        if x.value.ndim != 2 or y.value.ndim != 2 or x.value.shape[1] != y.value.shape[0]:
            raise GraphError(
                f"matmul node {len(self.nodes)}: incompatible shapes "
                f"{x.value.shape} @ {y.value.shape}"
            )
        with np.errstate(invalid="ignore"):
            v = x.value @ y.value
        out = self._record(v, (x, y), None, "matmul")

        def backward(g):
            self._accumulate(x, g @ y.value.T)
            self._accumulate(y, x.value.T @ g)

        out.backward_fn = backward
        return out

    def affine(self, x, w, bias):
        """x @ w + bias with the bias broadcast across rows."""
        if x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[0]:
            raise GraphError(
                f"affine node {len(self.nodes)}: incompatible shapes "
                f"{x.value.shape} @ {w.value.shape}"
            )
        if bias.value.shape != (w.value.shape[1],):
            raise GraphError(
                f"affine node {len(self.nodes)}: bias shape {bias.value.shape} "
                f"does not match output width {w.value.shape[1]}"
            )
        with np.errstate(invalid="ignore"):
            v = x.value @ w.value + bias.value
        out = self._record(v, (x, w, bias), None, "affine")

        def backward(g):
            self._accumulate(x, g @ w.value.T)
            self._accumulate(w, x.value.T @ g)
            self._accumulate(bias, g.sum(axis=0))

        out.backward_fn = backward
        return out

    # -- reductions & shape ----------------------------------------------

    def sum(self, x, axis=None, keepdims=False):
        out = self._record(np.sum(x.value, axis=axis, keepdims=keepdims), (x,), None, "sum")

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(x, np.broadcast_to(g, x.value.shape).copy())

        out.backward_fn = backward
        return out

    def mean(self, x, axis=None):
        n = x.value.size if axis is None else x.value.shape[axis]
        out = self._record(np.mean(x.value, axis=axis), (x,), None, "mean")

        def backward(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            self._accumulate(x, np.broadcast_to(g / n, x.value.shape).copy())

        out.backward_fn = backward
        return out

    def logsumexp(self, x, axis):
        m = np.max(x.value, axis=axis, keepdims=True)
        shifted = np.exp(x.value - m)
        total = np.sum(shifted, axis=axis, keepdims=True)
        v = np.squeeze(m + np.log(total), axis=axis)
        out = self._record(v, (x,), None, "logsumexp")

        def backward(g):
            self._accumulate(x, np.expand_dims(g, axis) * shifted / total)

        out.backward_fn = backward
        return out

    def reshape(self, x, shape):
        out = self._record(x.value.reshape(shape), (x,), None, "reshape")
        out.backward_fn = lambda g: self._accumulate(x, g.reshape(x.value.shape))
        return out

    def repeat_rows(self, x, k):
        """Repeat every row k times: (N, F) -> (N*k, F)."""
        if k == 1:
            return x
        out = self._record(np.repeat(x.value, k, axis=0), (x,), None, "repeat_rows")

        def backward(g):
            n, f = x.value.shape
            self._accumulate(x, g.reshape(n, k, f).sum(axis=1))

        out.backward_fn = backward
        return out

    def concat(self, xs, axis=1):
        xs = tuple(xs)
        out = self._record(np.concatenate([t.value for t in xs], axis=axis), xs, None, "concat")
        sizes = [t.value.shape[axis] for t in xs]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                self._accumulate(t, g[tuple(index)])

        out.backward_fn = backward
        return out

    def slice_cols(self, x, start, stop):
        out = self._record(x.value[:, start:stop], (x,), None, "slice")

        def backward(g):
            full = np.zeros_like(x.value)
            full[:, start:stop] = g
            self._accumulate(x, full)

        out.backward_fn = backward
        return out

    def stop_gradient(self, x):
        """Forwards the value, blocks the gradient exactly."""
        return self._record(x.value, (x,), None, "stop_gradient")

    # -- batch normalization ----------------------------------------------

    def batch_norm(self, x, gamma, beta, state, training):
        """Normalize columns of a (batch, features) tensor.

        Training mode normalizes with the batch statistics (biased variance)
        and folds them into ``state`` with its momentum; eval mode uses the
        running statistics.
        """
        if x.value.ndim != 2:
            raise GraphError(f"batch_norm node {len(self.nodes)}: input must be 2-D")
        n, f = x.value.shape
        if gamma.value.shape != (f,) or beta.value.shape != (f,):
            raise GraphError(
                f"batch_norm node {len(self.nodes)}: gamma/beta must have shape ({f},)"
            )
        if training:
            mu = x.value.mean(axis=0)
            var = x.value.var(axis=0)
            m = state.momentum
            state.mean = m * state.mean + (1.0 - m) * mu
            state.var = m * state.var + (1.0 - m) * var
            state.updates += 1
        else:
            mu, var = state.mean, state.var
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.value - mu) * inv_std
        out = self._record(gamma.value * xhat + beta.value, (x, gamma, beta), None, "batch_norm")

        def backward(g):
            self._accumulate(gamma, np.sum(g * xhat, axis=0))
            self._accumulate(beta, np.sum(g, axis=0))
            gg = g * gamma.value
            if training:
                dx = inv_std * (gg - gg.mean(axis=0) - xhat * np.mean(gg * xhat, axis=0))
            else:
                dx = gg * inv_std
            self._accumulate(x, dx)

        out.backward_fn = backward
        return out

    # -- backward ----------------------------------------------------------

    def backward(self, output):
        """Run the reverse pass from a scalar node.

        Returns a dict mapping every bound parameter name to its gradient
        (zeros when the parameter does not influence the output).
        """
        if not self.nodes:
            raise GraphError("backward before forward: the tape is empty")
        if output.graph is not self:
            raise GraphError("output tensor belongs to a different graph")
        if output.value.size != 1:
            raise GraphError(
                f"backward requires a scalar output, got shape {output.value.shape}"
            )
        needed = set()
        stack = [output]
        while stack:
            node = stack.pop()
            if id(node) not in needed:
                needed.add(id(node))
                stack.extend(node.parents)
        for node in self.nodes:
            node.grad = None
        output.grad = np.ones_like(output.value)
        for node in reversed(self.nodes[: output.node_id + 1]):
            if id(node) not in needed or node.backward_fn is None or node.grad is None:
                continue
            node.backward_fn(node.grad)
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.value))
            for name, p in self.params.items()
        }


def grad_check(fn, params, step=1e-5, dtype=np.float64):
    """Compare analytic gradients of a scalar function against central differences.

    ``fn(graph, tensors)`` must build and return a scalar Tensor from the
    dict of parameter tensors bound from ``params`` (name -> array).  Returns
    the max over all coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = {k: np.asarray(v, dtype=dtype) for k, v in params.items()}

    def evaluate(p):
        g = Graph(dtype=dtype)
        tensors = {name: g.parameter(name, arr) for name, arr in p.items()}
        out = fn(g, tensors)
        val = float(out.value)
        if not np.isfinite(val):
            raise GraphError("grad_check: function value is not finite")
        return g, out, val

    g, out, _ = evaluate(params)
    grads = g.backward(out)

    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            _, _, up = evaluate(params)
            flat[i] = orig - step
            _, _, down = evaluate(params)
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            analytic = grads[name].reshape(-1)[i]
            err = abs(analytic - numeric) / max(1.0, abs(analytic))
            worst = max(worst, err)
    return worst
