"""Minimal reverse-mode automatic differentiation over a flat numpy tape.

A :class:`Tape` records a topologically ordered list of nodes, each either a
leaf (constant, named input, parameter) or an operation over earlier nodes.
Values flow forward as float64 arrays, conventionally shaped ``(batch, width)``
with parameters broadcasting against the batch axis. ``backward`` walks the
tape once in reverse, accumulating vector-Jacobian products, and returns
gradients for trainable parameters only.

The same tape expresses both trainable layers and fixed physics operators, so
gradients propagate through static operator chains exactly as through affine
layers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DIV_GUARD = 1e-12
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LEAKY_SLOPE = 0.01

#: Every op kind the tape supports, each with a forward and an adjoint rule.
NODE_KINDS = (
    "constant", "input", "parameter",
    "add", "subtract", "multiply", "divide", "negate",
    "sin", "cos", "arctan", "exp", "square", "reciprocal",
    "affine", "leaky_relu", "concat", "batch_norm", "mean", "sum",
    "abs", "sigmoid", "tanh", "softplus",
)


class TapeError(ValueError):
    """Structural or numeric failure while evaluating a tape."""


class DomainError(TapeError):
    """A physics-block input left its declared valid domain."""

    def __init__(self, variable: str, message: str):
        super().__init__(message)
        self.variable = variable


class BatchNormState:
    """Running statistics for one batch-normalize node (inference mode)."""

    __slots__ = ("running_mean", "running_var", "initialized")

    def __init__(self, width: int):
        self.running_mean = np.zeros(width, dtype=np.float64)
        self.running_var = np.ones(width, dtype=np.float64)
        self.initialized = False


@dataclass
class Node:
    kind: str
    parents: tuple[int, ...]
    aux: object = None


@dataclass
class Parameter:
    """Handle + storage for a leaf the optimizer may update."""

    handle: int
    name: str
    value: np.ndarray
    requires_grad: bool = True


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    grad = np.asarray(grad, dtype=np.float64)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Ordered computational graph; nodes only reference earlier nodes."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.values: list[np.ndarray | None] = []
        self.params: dict[int, Parameter] = {}
        self._inputs: dict[str, int] = {}
        self._outputs: dict[str, int] = {}
        self._last_inputs: dict[str, np.ndarray] | None = None
        self.training = True

    # -- construction -----------------------------------------------------

    def _push(self, kind: str, parents: tuple[int, ...] = (), aux=None) -> int:
        for p in parents:
            if not 0 <= p < len(self.nodes):
                raise TapeError(f"{kind} node references unknown parent {p}")
        self.nodes.append(Node(kind, parents, aux))
        self.values.append(None)
        return len(self.nodes) - 1

    def constant(self, value) -> int:
        return self._push("constant", aux=_as_f64(value))

    def input(self, name: str) -> int:
        if name in self._inputs:
            raise TapeError(f"duplicate input name {name!r}")
        h = self._push("input", aux=name)
        self._inputs[name] = h
        return h

    def parameter(self, name: str, value, requires_grad: bool = True) -> int:
        h = self._push("parameter", aux=name)
        self.params[h] = Parameter(h, name, _as_f64(value).copy(), requires_grad)
        return h

    def add(self, a, b):
        return self._push("add", (a, b))

    def subtract(self, a, b):
        return self._push("subtract", (a, b))

    def multiply(self, a, b):
        return self._push("multiply", (a, b))

    def divide(self, a, b):
        return self._push("divide", (a, b))

    def negate(self, a):
        return self._push("negate", (a,))

    def sin(self, a):
        return self._push("sin", (a,))

    def cos(self, a):
        return self._push("cos", (a,))

    def arctan(self, a):
        return self._push("arctan", (a,))

    def exp(self, a):
        return self._push("exp", (a,))

    def square(self, a):
        return self._push("square", (a,))

    def reciprocal(self, a):
        return self._push("reciprocal", (a,))

    def affine(self, x, weight, bias):
        return self._push("affine", (x, weight, bias))

    def leaky_relu(self, a):
        return self._push("leaky_relu", (a,))

    def concat(self, parts: list[int]):
        if not parts:
            raise TapeError("concat needs at least one part")
        return self._push("concat", tuple(parts))

    def batch_norm(self, x, gamma, beta, width: int):
        return self._push("batch_norm", (x, gamma, beta), aux=BatchNormState(width))

    def mean(self, a):
        return self._push("mean", (a,))

    def sum(self, a):
        return self._push("sum", (a,))

    def abs(self, a):
        return self._push("abs", (a,))

    def sigmoid(self, a):
        return self._push("sigmoid", (a,))

    def tanh(self, a):
        return self._push("tanh", (a,))

    def softplus(self, a):
        return self._push("softplus", (a,))

    def mark_output(self, name: str, handle: int) -> int:
        self._outputs[name] = handle
        return handle

    # -- introspection ----------------------------------------------------

    def value(self, handle: int) -> np.ndarray:
        v = self.values[handle]
        if v is None:
            raise TapeError(f"node {handle} has no cached value; run forward first")
        return v

    def trainable(self) -> list[Parameter]:
        return [p for p in self.params.values() if p.requires_grad]

    def input_names(self) -> list[str]:
        return list(self._inputs)

    # -- forward ----------------------------------------------------------

    def forward(self, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        for name in self._inputs:
            if name not in inputs:
                raise TapeError(f"unbound input {name!r}")
        self._last_inputs = {k: _as_f64(v) for k, v in inputs.items()}
        vals = self.values
        for h, node in enumerate(self.nodes):
            vals[h] = self._eval(h, node)
        return {name: vals[h] for name, h in self._outputs.items()}

    def _eval(self, h: int, node: Node) -> np.ndarray:
        v = self.values
        k = node.kind
        if k == "constant":
            return node.aux
        if k == "input":
            return self._last_inputs[node.aux]
        if k == "parameter":
            return self.params[h].value
        p = node.parents
        if k == "add":
            return v[p[0]] + v[p[1]]
        if k == "subtract":
            return v[p[0]] - v[p[1]]
        if k == "multiply":
            return v[p[0]] * v[p[1]]
        if k == "divide":
            den = v[p[1]]
            if np.min(np.abs(den)) < DIV_GUARD:
                raise TapeError(f"divide node {h}: denominator magnitude < {DIV_GUARD}")
            return v[p[0]] / den
        if k == "negate":
            return -v[p[0]]
        if k == "sin":
            return np.sin(v[p[0]])
        if k == "cos":
            return np.cos(v[p[0]])
        if k == "arctan":
            return np.arctan(v[p[0]])
        if k == "exp":
            return np.exp(v[p[0]])
        if k == "square":
            x = v[p[0]]
            return x * x
        if k == "reciprocal":
            x = v[p[0]]
            if np.min(np.abs(x)) < DIV_GUARD:
                raise TapeError(f"reciprocal node {h}: magnitude < {DIV_GUARD}")
            return 1.0 / x
        if k == "affine":
            x, w, b = v[p[0]], v[p[1]], v[p[2]]
            if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
                raise TapeError(
                    f"affine node {h}: shape mismatch x{getattr(x, 'shape', None)} "
                    f"w{getattr(w, 'shape', None)}"
                )
            return x @ w.T + b
        if k == "leaky_relu":
            x = v[p[0]]
            return np.where(x > 0, x, LEAKY_SLOPE * x)
        if k == "concat":
            return np.concatenate([v[q] for q in p], axis=1)
        if k == "batch_norm":
            return self._eval_batch_norm(node, v[p[0]], v[p[1]], v[p[2]])
        if k == "mean":
            return np.asarray(np.mean(v[p[0]]))
        if k == "sum":
            return np.asarray(np.sum(v[p[0]]))
        if k == "abs":
            return np.abs(v[p[0]])
        if k == "sigmoid":
            return _stable_sigmoid(v[p[0]])
        if k == "tanh":
            return np.tanh(v[p[0]])
        if k == "softplus":
            x = v[p[0]]
            return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
        raise TapeError(f"unknown node kind {k!r}")

    def _eval_batch_norm(self, node: Node, x, gamma, beta) -> np.ndarray:
        state: BatchNormState = node.aux
        if self.training:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            if not state.initialized:
                state.running_mean = mu.copy()
                state.running_var = var.copy()
                state.initialized = True
            else:
                m = BN_MOMENTUM
                state.running_mean = (1 - m) * state.running_mean + m * mu
                state.running_var = (1 - m) * state.running_var + m * var
        else:
            mu = state.running_mean
            var = state.running_var
        xhat = (x - mu) / np.sqrt(var + BN_EPS)
        node._cache = (xhat, var)  # reused by the adjoint
        return gamma * xhat + beta

    # -- backward ---------------------------------------------------------

    def backward(self, loss: int) -> dict[int, np.ndarray]:
        """Gradients of the scalar node `loss` w.r.t. trainable parameters."""
        lv = self.values[loss]
        if lv is None:
            raise TapeError("backward before forward: loss value missing")
        if np.size(lv) != 1:
            raise TapeError(f"loss node {loss} is not scalar (size {np.size(lv)})")
        adj: dict[int, np.ndarray] = {loss: np.ones_like(lv)}
        for h in range(loss, -1, -1):
            g = adj.pop(h, None)
            if g is None:
                continue
            node = self.nodes[h]
            if node.kind == "parameter":
                p = self.params[h]
                if p.requires_grad:
                    acc = adj.get(("grad", h))
                    adj[("grad", h)] = g if acc is None else acc + g
                continue
            if node.kind in ("constant", "input"):
                continue
            for pid, pg in _ADJOINTS[node.kind](self, h, node, g):
                if self.nodes[pid].kind == "constant":
                    continue
                acc = adj.get(pid)
                adj[pid] = pg if acc is None else acc + pg
        grads: dict[int, np.ndarray] = {}
        for p in self.trainable():
            g = adj.get(("grad", p.handle))
            grads[p.handle] = np.zeros_like(p.value) if g is None else g
        return grads


def _adj_elementwise(local: Callable):
    def rule(tape: Tape, h: int, node: Node, g):
        (a,) = node.parents
        x = tape.values[a]
        return [(a, _unbroadcast(g * local(x, tape.values[h]), x.shape))]

    return rule


def _adj_add(tape, h, node, g):
    a, b = node.parents
    return [
        (a, _unbroadcast(g, tape.values[a].shape)),
        (b, _unbroadcast(g, tape.values[b].shape)),
    ]


def _adj_subtract(tape, h, node, g):
    a, b = node.parents
    return [
        (a, _unbroadcast(g, tape.values[a].shape)),
        (b, _unbroadcast(-g, tape.values[b].shape)),
    ]


def _adj_multiply(tape, h, node, g):
    a, b = node.parents
    va, vb = tape.values[a], tape.values[b]
    return [
        (a, _unbroadcast(g * vb, va.shape)),
        (b, _unbroadcast(g * va, vb.shape)),
    ]


def _adj_divide(tape, h, node, g):
    a, b = node.parents
    va, vb = tape.values[a], tape.values[b]
    return [
        (a, _unbroadcast(g / vb, va.shape)),
        (b, _unbroadcast(-g * va / (vb * vb), vb.shape)),
    ]


def _adj_affine(tape, h, node, g):
    xh, wh, bh = node.parents
    x, w = tape.values[xh], tape.values[wh]
    return [(xh, g @ w), (wh, g.T @ x), (bh, g.sum(axis=0))]


def _adj_concat(tape, h, node, g):
    out = []
    col = 0
    for pid in node.parents:
        width = tape.values[pid].shape[1]
        out.append((pid, g[:, col:col + width]))
        col += width
    return out


def _adj_batch_norm(tape, h, node, g):
    xh, gh, bh = node.parents
    xhat, var = node._cache
    gamma = tape.values[gh]
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    dxhat = g * gamma
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    if tape.training:
        n = xhat.shape[0]
        dx = (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )
    else:
        dx = dxhat * inv_std
    return [(xh, dx), (gh, dgamma), (bh, dbeta)]


def _adj_mean(tape, h, node, g):
    (a,) = node.parents
    x = tape.values[a]
    return [(a, np.full_like(x, float(g) / x.size))]


def _adj_sum(tape, h, node, g):
    (a,) = node.parents
    return [(a, np.full_like(tape.values[a], float(g)))]


_ADJOINTS: dict[str, Callable] = {
    "add": _adj_add,
    "subtract": _adj_subtract,
    "multiply": _adj_multiply,
    "divide": _adj_divide,
    "negate": _adj_elementwise(lambda x, y: -1.0),
    "sin": _adj_elementwise(lambda x, y: np.cos(x)),
    "cos": _adj_elementwise(lambda x, y: -np.sin(x)),
    "arctan": _adj_elementwise(lambda x, y: 1.0 / (1.0 + x * x)),
    "exp": _adj_elementwise(lambda x, y: y),
    "square": _adj_elementwise(lambda x, y: 2.0 * x),
    "reciprocal": _adj_elementwise(lambda x, y: -y * y),
    "affine": _adj_affine,
    "leaky_relu": _adj_elementwise(lambda x, y: np.where(x > 0, 1.0, LEAKY_SLOPE)),
    "concat": _adj_concat,
    "batch_norm": _adj_batch_norm,
    "mean": _adj_mean,
    "sum": _adj_sum,
    "abs": _adj_elementwise(lambda x, y: np.sign(x)),
    "sigmoid": _adj_elementwise(lambda x, y: y * (1.0 - y)),
    "tanh": _adj_elementwise(lambda x, y: 1.0 - y * y),
    "softplus": _adj_elementwise(lambda x, y: _stable_sigmoid(x)),
}


def check_gradient(tape: Tape, loss: int, epsilon: float = 1e-5) -> float:
    """Max relative error of reverse-mode grads vs central finite differences.

    Re-runs forward on the tape's last bound inputs, perturbing every
    coordinate of every trainable parameter by ±epsilon. Error per coordinate
    is ``|g_ad - g_fd| / max(1, |g_fd|)``.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise TapeError("epsilon must lie in (0, 1e-2]")
    if tape._last_inputs is None:
        raise TapeError("check_gradient requires a prior forward pass")
    inputs = tape._last_inputs

    def eval_loss() -> float:
        tape.forward(inputs)
        for v in tape.values:
            if v is not None and not np.all(np.isfinite(v)):
                raise TapeError("non-finite intermediate value during gradient check")
        return float(tape.values[loss])

    eval_loss()
    grads = tape.backward(loss)
    worst = 0.0
    for p in tape.trainable():
        g_ad = grads[p.handle]
        flat = p.value.reshape(-1)
        g_flat = g_ad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = eval_loss()
            flat[i] = orig - epsilon
            down = eval_loss()
            flat[i] = orig
            g_fd = (up - down) / (2.0 * epsilon)
            err = abs(g_flat[i] - g_fd) / max(1.0, abs(g_fd))
            worst = max(worst, err)
    eval_loss()
    return worst
