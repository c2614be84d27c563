"""Randomized finite-difference verification cases, shared by tests and CLI.

One small tape per node kind, built on seeded random values kept inside each
op's smooth region (away from |x|=0 for abs/leaky, denominators bounded away
from zero), plus end-to-end cases that append each fixed physics block to a
small trainable network.
"""
from __future__ import annotations

import numpy as np

from . import autodiff
from .autodiff import Tape, check_gradient
from .rng import stream

TOLERANCE = 1e-4
EPSILON = 1e-5

#: kinds with their own randomized check case (leaf kinds are exercised by all)
CHECKED_KINDS = (
    "add", "subtract", "multiply", "divide", "negate",
    "sin", "cos", "arctan", "exp", "square", "reciprocal",
    "affine", "leaky_relu", "concat", "batch_norm", "mean", "sum",
    "abs", "sigmoid", "tanh", "softplus",
)


def _rand(rng, shape, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape)


def _rand_away_from_zero(rng, shape, lo=0.2, hi=1.2):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def build_node_case(kind: str, seed: int = 0) -> tuple[Tape, int]:
    """Tape with trainable leaves feeding one `kind` op and a scalar loss."""
    rng = stream(seed, f"gradcheck/{kind}")
    batch = int(rng.integers(2, 5))
    width = int(rng.integers(1, 5))
    t = Tape()

    if kind in ("divide", "reciprocal"):
        a = t.parameter("a", _rand(rng, (batch, width)))
        b = t.parameter("b", _rand_away_from_zero(rng, (batch, width), 0.5, 1.5))
        out = t.divide(a, b) if kind == "divide" else t.reciprocal(b)
    elif kind in ("add", "subtract", "multiply"):
        a = t.parameter("a", _rand(rng, (batch, width)))
        b = t.parameter("b", _rand(rng, (batch, width)))
        out = getattr(t, kind)(a, b)
    elif kind in ("abs", "leaky_relu"):
        a = t.parameter("a", _rand_away_from_zero(rng, (batch, width)))
        out = getattr(t, kind)(a)
    elif kind == "affine":
        out_w = int(rng.integers(1, 5))
        x = t.parameter("x", _rand(rng, (batch, width)))
        w = t.parameter("w", _rand(rng, (out_w, width)))
        b = t.parameter("b", _rand(rng, (out_w,)))
        out = t.affine(x, w, b)
    elif kind == "concat":
        a = t.parameter("a", _rand(rng, (batch, width)))
        b = t.parameter("b", _rand(rng, (batch, int(rng.integers(1, 4)))))
        out = t.concat([a, b])
    elif kind == "batch_norm":
        x = t.parameter("x", _rand(rng, (max(batch, 3), width)))
        gamma = t.parameter("gamma", rng.uniform(0.5, 1.5, size=width))
        beta = t.parameter("beta", _rand(rng, (width,)))
        out = t.batch_norm(x, gamma, beta, width)
    elif kind in ("mean", "sum"):
        a = t.parameter("a", _rand(rng, (batch, width)))
        reduced = getattr(t, kind)(a)
        out = t.square(reduced)
    else:
        a = t.parameter("a", _rand(rng, (batch, width)))
        out = getattr(t, kind)(a)

    loss = t.sum(t.square(out)) if kind not in ("mean", "sum") else t.sum(out)
    t.forward({})
    return t, loss


def _two_layer_trunk(t: Tape, rng, in_width: int, hidden: int, n_out: int):
    """Small trainable net producing `n_out` single-column heads."""
    x = t.input("x")
    w1 = t.parameter("w1", rng.normal(0, 0.5, size=(hidden, in_width)))
    b1 = t.parameter("b1", rng.normal(0, 0.1, size=hidden))
    h = t.leaky_relu(t.affine(x, w1, b1))
    heads = []
    for i in range(n_out):
        wh = t.parameter(f"wh{i}", rng.normal(0, 0.5, size=(1, hidden)))
        bh = t.parameter(f"bh{i}", rng.normal(0, 0.1, size=1))
        heads.append(t.affine(h, wh, bh))
    return x, heads


def build_steering_physics_case(seed: int = 0) -> tuple[Tape, int, dict]:
    from .steering.physics import PurePursuitBlock

    rng = stream(seed, "gradcheck/physics_steering")
    t = Tape()
    _, heads = _two_layer_trunk(t, rng, in_width=6, hidden=5, n_out=2)
    lookahead = t.add(t.constant(2.0), t.multiply(t.constant(20.0), t.sigmoid(heads[0])))
    heading = t.multiply(t.constant(np.pi / 2), t.tanh(heads[1]))
    wheelbase = t.input("wheelbase")
    delta = PurePursuitBlock().build(
        t, {"lookahead": lookahead, "heading": heading}, {"wheelbase": wheelbase}
    )
    loss = t.sum(t.square(delta))
    batch = 4
    inputs = {
        "x": rng.normal(0, 1, size=(batch, 6)),
        "wheelbase": np.full((batch, 1), 2.5),
    }
    t.forward(inputs)
    return t, loss, inputs


def build_nee_physics_case(seed: int = 0) -> tuple[Tape, int, dict]:
    from .nee.physics import NeeOdeBlock

    rng = stream(seed, "gradcheck/physics_nee")
    t = Tape()
    _, heads = _two_layer_trunk(t, rng, in_width=6, hidden=5, n_out=3)
    e0 = t.add(t.constant(50.0), t.multiply(t.constant(350.0), t.sigmoid(heads[0])))
    rb = t.softplus(heads[1])
    dtdt = t.multiply(t.constant(1e-3), heads[2])
    t_air = t.input("t_air")
    rhs = NeeOdeBlock().build(
        t, {"e0": e0, "rb_night": rb, "dtdt": dtdt}, {"t_air": t_air}
    )
    loss = t.sum(t.square(t.multiply(t.constant(1e4), rhs)))
    batch = 4
    inputs = {
        "x": rng.normal(0, 1, size=(batch, 6)),
        "t_air": rng.uniform(-5.0, 30.0, size=(batch, 1)),
    }
    t.forward(inputs)
    return t, loss, inputs


def run_all(seed: int = 0, epsilon: float = EPSILON) -> list[tuple[str, float]]:
    """(name, max relative error) for every node kind and both physics blocks."""
    results = []
    for kind in CHECKED_KINDS:
        tape, loss = build_node_case(kind, seed)
        results.append((kind, check_gradient(tape, loss, epsilon)))
    tape, loss, _ = build_steering_physics_case(seed)
    results.append(("physics_pure_pursuit", check_gradient(tape, loss, epsilon)))
    tape, loss, _ = build_nee_physics_case(seed)
    results.append(("physics_nee_ode", check_gradient(tape, loss, epsilon)))
    return results
