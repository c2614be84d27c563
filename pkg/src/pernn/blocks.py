"""Knowledge blocks: trainable learning/residual stacks and fixed physics ops.

A model is one tape composed of three kinds of fragment:

* learning block — trainable layers inferring intermediate physical variables,
  each squashed into its valid range by a smooth head;
* physics block — a fragment of fixed operators (zero trainable parameters)
  mapping intermediates + raw inputs to the target;
* residual block — a trainable branch from the learning block's last hidden
  vector whose output is added to the physics prediction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape


# -- squashing heads -------------------------------------------------------

@dataclass
class SquashSpec:
    """Smooth map from an unbounded head output into a physical range."""

    kind: str  # sigmoid_range | tanh_range | softplus | linear
    lo: float = 0.0
    hi: float = 1.0
    scale: float = 1.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "SquashSpec":
        return cls(**d)


def apply_squash(t: Tape, h: int, spec: SquashSpec) -> int:
    if spec.kind == "sigmoid_range":
        span = t.constant(spec.hi - spec.lo)
        return t.add(t.constant(spec.lo), t.multiply(span, t.sigmoid(h)))
    if spec.kind == "tanh_range":
        return t.multiply(t.constant(spec.scale), t.tanh(h))
    if spec.kind == "softplus":
        return t.softplus(h)
    if spec.kind == "linear":
        return t.multiply(t.constant(spec.scale), h)
    raise ValueError(f"unknown squash kind {spec.kind!r}")


# -- trainable stacks -------------------------------------------------------

@dataclass
class BuiltStack:
    """Handles produced while building a trainable fragment."""

    out: int
    out_width: int
    params: list[int] = field(default_factory=list)
    hidden: list[int] = field(default_factory=list)


def kaiming_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def build_affine(t: Tape, x: int, in_width: int, out_width: int,
                 rng: np.random.Generator, name: str) -> tuple[int, list[int]]:
    w = t.parameter(f"{name}.w", kaiming_uniform(rng, in_width, (out_width, in_width)))
    b = t.parameter(f"{name}.b", np.zeros(out_width))
    return t.affine(x, w, b), [w, b]


def build_plain_layer(t: Tape, x: int, in_width: int, out_width: int,
                      rng: np.random.Generator, name: str) -> BuiltStack:
    h, params = build_affine(t, x, in_width, out_width, rng, name)
    return BuiltStack(t.leaky_relu(h), out_width, params)


def build_skip_layer(t: Tape, x: int, in_width: int, hidden_width: int,
                     out_width: int, rng: np.random.Generator,
                     name: str = "skip") -> BuiltStack:
    """y = Projection([x ; activation(batchnorm(affine(x)))]).

    Parameter count: in*hidden + hidden (affine) + 2*hidden (batch norm)
    + (in+hidden)*out + out (projection).
    """
    if in_width < 1 or hidden_width < 1 or out_width < 1:
        raise ValueError("skip layer widths must be >= 1")
    h, params = build_affine(t, x, in_width, hidden_width, rng, f"{name}.pre")
    gamma = t.parameter(f"{name}.bn.gamma", np.ones(hidden_width))
    beta = t.parameter(f"{name}.bn.beta", np.zeros(hidden_width))
    normed = t.batch_norm(h, gamma, beta, hidden_width)
    act = t.leaky_relu(normed)
    joined = t.concat([x, act])
    proj, proj_params = build_affine(
        t, joined, in_width + hidden_width, out_width, rng, f"{name}.proj"
    )
    return BuiltStack(proj, out_width, params + [gamma, beta] + proj_params)


def skip_layer_parameter_count(in_width: int, hidden_width: int, out_width: int) -> int:
    return (in_width * hidden_width + hidden_width
            + 2 * hidden_width
            + (in_width + hidden_width) * out_width + out_width)


def build_trunk(t: Tape, x: int, in_width: int, widths: list[int], style: str,
                rng: np.random.Generator, name: str) -> BuiltStack:
    """Stack of hidden layers; `out` is the last hidden activation vector V."""
    params: list[int] = []
    hidden: list[int] = []
    cur, cur_w = x, in_width
    for i, w in enumerate(widths):
        if style == "plain":
            layer = build_plain_layer(t, cur, cur_w, w, rng, f"{name}.l{i}")
        elif style == "skip_batchnorm":
            layer = build_skip_layer(t, cur, cur_w, w, w, rng, f"{name}.l{i}")
        else:
            raise ValueError(f"unknown layer style {style!r}")
        params += layer.params
        hidden.append(layer.out)
        cur, cur_w = layer.out, w
    return BuiltStack(cur, cur_w, params, hidden)


def build_heads(t: Tape, v: int, v_width: int, squashes: list[SquashSpec],
                rng: np.random.Generator, name: str) -> tuple[list[int], list[int]]:
    """One single-column affine head per intermediate variable, squashed."""
    outs, params = [], []
    for i, sq in enumerate(squashes):
        raw, p = build_affine(t, v, v_width, 1, rng, f"{name}.head{i}")
        outs.append(apply_squash(t, raw, sq))
        params += p
    return outs, params


def build_residual(t: Tape, v: int, v_width: int, widths: list[int],
                   rng: np.random.Generator, name: str = "residual",
                   out_scale: float = 1.0) -> BuiltStack:
    """Hidden plain layers on V followed by a linear single-output head.

    `out_scale` keeps the untrained correction small against the physics
    output it is added to (the target derivative is O(1e-4) in the flux case)
    while leaving the gradient pathway through the branch intact.
    """
    params: list[int] = []
    cur, cur_w = v, v_width
    for i, w in enumerate(widths):
        layer = build_plain_layer(t, cur, cur_w, w, rng, f"{name}.l{i}")
        params += layer.params
        cur, cur_w = layer.out, w
    out, p = build_affine(t, cur, cur_w, 1, rng, f"{name}.out")
    if out_scale != 1.0:
        out = t.multiply(t.constant(out_scale), out)
    return BuiltStack(out, 1, params + p)


# -- physics blocks ---------------------------------------------------------

class PhysicsBlock:
    """Fragment of fixed operators. Contains zero trainable parameters.

    ``domain`` maps each checked variable (intermediate or raw input) to its
    open valid interval; violations surface as DomainError naming the
    variable.
    """

    name: str = "physics"
    intermediate_names: tuple[str, ...] = ()
    raw_input_names: tuple[str, ...] = ()
    domain: dict[str, tuple[float, float]] = {}

    def build(self, t: Tape, intermediates: dict[str, int], raws: dict[str, int]) -> int:
        raise NotImplementedError


class ZeroJacobianStub(PhysicsBlock):
    """Physics stand-in whose output is constant zero w.r.t. everything.

    Multiplying the summed intermediates by 0 keeps them in the graph while
    blocking any gradient through the physics path; used to demonstrate the
    residual block's alternative gradient pathway.
    """

    name = "zero_jacobian_stub"

    def __init__(self, intermediate_names: tuple[str, ...]):
        self.intermediate_names = intermediate_names
        self.raw_input_names = ()
        self.domain = {}

    def build(self, t: Tape, intermediates: dict[str, int], raws: dict[str, int]) -> int:
        total = None
        for name in self.intermediate_names:
            h = intermediates[name]
            total = h if total is None else t.add(total, h)
        return t.multiply(t.constant(0.0), total)
