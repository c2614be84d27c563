"""Model assembly: one tape per model wiring trunk, heads, physics, residual.

Variants
--------
PERNN   trunk -> squashed intermediate heads -> fixed physics block, plus a
        residual branch from the last hidden vector V; output = physics + r.
PENN    PERNN without the residual branch; output = physics.
FCNN    plain data-driven baseline: trunk -> single linear head.
PINN    FCNN architecture trained with an extra physics-consistency loss term.

Steering models predict the steering angle (rad). NEE models predict the NEE
time derivative; a shared Euler node turns it into the half-hour-ahead
forecast NEE_{t+1} = NEE_t + d * dt.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import DomainError, Tape, TapeError
from .blocks import (
    PhysicsBlock,
    SquashSpec,
    ZeroJacobianStub,
    apply_squash,
    build_affine,
    build_residual,
    build_trunk,
)
from .nee.physics import STEP_SECONDS, NeeOdeBlock
from .rng import stream
from .steering.physics import N_FEATURES as STEERING_FEATURES
from .steering.physics import PurePursuitBlock

VARIANTS = ("PERNN", "PENN", "PINN", "FCNN")

# residual-branch output scales per domain (keeps the untrained correction
# small against the physics output it joins)
NEE_RESIDUAL_SCALE = 1e-3
STEERING_RESIDUAL_SCALE = 0.1

STEERING_DEFAULTS = {
    "learning_widths": [32, 16, 8],
    "residual_widths": [8, 4],
    "baseline_widths": [64, 32, 16, 8, 4],
    "layer_style": "plain",
}
NEE_DEFAULTS = {
    "learning_widths": [32, 16],
    "residual_widths": [8],
    "baseline_widths": [32, 16],
    "layer_style": "skip_batchnorm",
}

NEE_FEATURE_WIDTH = 29  # 9 climate channels + hour/doy sin-cos + month + season

MAGIC = b"PEKB\x01"
FORMAT_VERSION = 1


@dataclass
class ModelSpec:
    domain: str
    variant: str
    input_width: int
    learning_widths: list[int]
    residual_widths: list[int]
    layer_style: str
    seed: int
    squashes: list[SquashSpec] = field(default_factory=list)
    intermediate_names: list[str] = field(default_factory=list)
    physics_stub: bool = False
    activation: str = "leaky_relu"
    # per-term scale (typically the training-set target std) dividing each
    # intermediate/target difference inside the composite losses
    loss_scales: dict = field(default_factory=dict)

    def scale(self, key: str, default: float = 1.0) -> float:
        return float(self.loss_scales.get(key, default))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["squashes"] = [s.to_dict() for s in self.squashes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["squashes"] = [SquashSpec.from_dict(s) for s in d["squashes"]]
        return cls(**d)


def default_spec(domain: str, variant: str, seed: int,
                 learning_widths=None, residual_widths=None,
                 baseline_widths=None, physics_stub: bool = False) -> ModelSpec:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if domain == "steering":
        defaults, input_width = STEERING_DEFAULTS, STEERING_FEATURES
        squashes = [
            SquashSpec("sigmoid_range", lo=0.5, hi=200.0),
            SquashSpec("tanh_range", scale=math.pi / 2),
        ]
        names = ["lookahead", "heading"]
    elif domain == "nee":
        defaults, input_width = NEE_DEFAULTS, NEE_FEATURE_WIDTH
        squashes = [
            SquashSpec("sigmoid_range", lo=50.0, hi=400.0),
            SquashSpec("softplus"),
            SquashSpec("linear", scale=1e-3),
        ]
        names = ["e0", "rb_night", "dtdt"]
    else:
        raise ValueError(f"unknown domain {domain!r}")
    if variant in ("FCNN", "PINN"):
        widths = list(baseline_widths if baseline_widths is not None
                      else defaults["baseline_widths"])
        squashes, names = [], []
    else:
        widths = list(learning_widths if learning_widths is not None
                      else defaults["learning_widths"])
    return ModelSpec(
        domain=domain,
        variant=variant,
        input_width=input_width,
        learning_widths=widths,
        residual_widths=list(residual_widths if residual_widths is not None
                             else defaults["residual_widths"]),
        layer_style=defaults["layer_style"],
        seed=seed,
        squashes=squashes,
        intermediate_names=names,
        physics_stub=physics_stub,
    )


class PernnModel:
    """A built model: tape, named handles, input scaler, physics metadata."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.tape = Tape()
        self.handles: dict[str, int] = {}
        self.losses: dict[str, int] = {}
        self.intermediates: dict[str, int] = {}
        self.input_widths: dict[str, int] = {}
        self.physics: PhysicsBlock | None = None
        self.feature_mean = np.zeros(spec.input_width)
        self.feature_std = np.ones(spec.input_width)
        self.feature_active = np.ones(spec.input_width)
        self._build()

    # -- construction ------------------------------------------------------

    def _declare_input(self, name: str, width: int) -> int:
        self.input_widths[name] = width
        h = self.tape.input(name)
        self.handles[name] = h
        return h

    def _build(self):
        s = self.spec
        rng = stream(s.seed, f"init/{s.domain}/{s.variant}")
        t = self.tape
        x = self._declare_input("x", s.input_width)

        trunk = build_trunk(t, x, s.input_width, s.learning_widths,
                            s.layer_style, rng, "learn")
        v = trunk.out
        self.handles["v"] = v

        if s.variant in ("PERNN", "PENN"):
            for i, name in enumerate(s.intermediate_names):
                raw, _ = build_affine(t, v, trunk.out_width, 1, rng, f"head.{name}")
                self.intermediates[name] = apply_squash(t, raw, s.squashes[i])
            if s.physics_stub:
                self.physics = ZeroJacobianStub(tuple(s.intermediate_names))
            elif s.domain == "steering":
                self.physics = PurePursuitBlock()
            else:
                self.physics = NeeOdeBlock()
            raws = {name: self._declare_input(name, 1)
                    for name in self.physics.raw_input_names}
            phys = self.physics.build(t, self.intermediates, raws)
            self.handles["physics_out"] = phys
            if s.variant == "PERNN":
                out_scale = (NEE_RESIDUAL_SCALE if s.domain == "nee"
                             else STEERING_RESIDUAL_SCALE)
                res = build_residual(t, v, trunk.out_width, s.residual_widths,
                                     rng, out_scale=out_scale)
                self.handles["residual_out"] = res.out
                output = t.add(phys, res.out)
            else:
                output = phys
        else:
            raw, _ = build_affine(t, v, trunk.out_width, 1, rng, "head.out")
            output = t.multiply(t.constant(1e-3), raw) if s.domain == "nee" else raw
        self.handles["output"] = output

        if s.domain == "steering":
            self._build_steering_losses(output)
        else:
            self._build_nee_losses(output)

    def _scaled_diff(self, a: int, b: int, key: str, default: float = 1.0) -> int:
        t = self.tape
        diff = t.subtract(a, b)
        scale = self.spec.scale(key, default)
        if scale != 1.0:
            diff = t.multiply(t.constant(1.0 / scale), diff)
        return diff

    def _build_steering_losses(self, output: int):
        t, s = self.tape, self.spec
        delta = self._declare_input("delta", 1)
        self.losses["data"] = t.mean(t.square(t.subtract(output, delta)))
        if s.variant in ("PERNN", "PENN"):
            l_lab = self._declare_input("lookahead_label", 1)
            h_lab = self._declare_input("heading_label", 1)
            pred = t.concat([
                self._scaled_diff(self.intermediates["lookahead"], l_lab, "lookahead"),
                self._scaled_diff(self.intermediates["heading"], h_lab, "heading"),
            ])
            self.losses["phase1"] = t.mean(t.abs(pred))
            self.losses["phase2"] = self.losses["data"]
        if s.variant == "PINN":
            self._add_pinn_loss(output)

    def _build_nee_losses(self, output: int):
        t, s = self.tape, self.spec
        nee_t = self._declare_input("nee_t", 1)
        nee_next = self._declare_input("nee_next", 1)
        forecast = t.add(nee_t, t.multiply(t.constant(STEP_SECONDS), output))
        self.handles["forecast"] = forecast
        self.losses["data"] = t.mean(t.square(t.subtract(forecast, nee_next)))
        if s.variant in ("PERNN", "PENN"):
            e0_lab = self._declare_input("e0_label", 1)
            rb_lab = self._declare_input("rb_label", 1)
            dt_lab = self._declare_input("dtdt_label", 1)
            # each term is divided by its target scale (E0 defaults to the
            # 1/100 balance; pipelines set training-set stds) so no head is
            # starved by unit magnitudes
            e0_term = t.square(self._scaled_diff(self.intermediates["e0"], e0_lab,
                                                 "e0", default=100.0))
            rb_term = t.square(self._scaled_diff(self.intermediates["rb_night"],
                                                 rb_lab, "rb"))
            dt_term = t.square(self._scaled_diff(self.intermediates["dtdt"],
                                                 dt_lab, "dtdt"))
            inter = t.add(e0_term, t.add(rb_term, dt_term))
            self.losses["phase1"] = t.mean(inter)
            nee_term = t.square(self._scaled_diff(forecast, nee_next, "nee_next"))
            self.losses["phase2"] = t.mean(t.add(nee_term, inter))
        if s.variant == "PINN":
            self._add_pinn_loss(forecast)

    def _add_pinn_loss(self, pred: int):
        t = self.tape
        phys_pred = self._declare_input("physics_pred", 1)
        # per-sample weights mask/count are assembled per batch by the feed
        phys_w = self._declare_input("phys_weight", 1)
        l_phy = t.sum(t.multiply(phys_w, t.square(t.subtract(pred, phys_pred))))
        self.losses["pinn"] = t.add(self.losses["data"], l_phy)

    # -- evaluation ---------------------------------------------------------

    def set_scaler(self, mean: np.ndarray, std: np.ndarray,
                   active: np.ndarray | None = None):
        """Standardization stats plus an activity mask.

        Columns with no training variance are zeroed: their first-layer
        weights never see a gradient, so letting them fire later would inject
        untrained random weights into every prediction.
        """
        std = np.asarray(std, dtype=np.float64).copy()
        std[std < 1e-9] = 1.0
        self.feature_mean = np.asarray(mean, dtype=np.float64).copy()
        self.feature_std = std
        if active is not None:
            self.feature_active = np.asarray(active, dtype=np.float64).copy()

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feature_mean) / self.feature_std * self.feature_active

    def make_feed(self, n: int, given: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        feed = {}
        for name, width in self.input_widths.items():
            if name in given:
                arr = np.asarray(given[name], dtype=np.float64)
                feed[name] = arr.reshape(n, width)
            else:
                feed[name] = np.zeros((n, width))
        return feed

    def forward_batch(self, features: np.ndarray, extra: dict[str, np.ndarray] | None = None,
                      training: bool = False) -> dict[str, np.ndarray]:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features[None, :]
        if features.shape[1] != self.spec.input_width:
            raise TapeError(
                f"feature width {features.shape[1]} != model input width "
                f"{self.spec.input_width}")
        n = features.shape[0]
        given = dict(extra or {})
        given["x"] = self.standardize(features)
        feed = self.make_feed(n, given)
        self.tape.training = training
        try:
            self.tape.forward(feed)
        except TapeError:
            self._check_domain()
            raise
        self._check_domain()
        out = {name: self.tape.value(h) for name, h in self.handles.items()
               if name not in self.input_widths}
        out["intermediates"] = {k: self.tape.value(h)
                                for k, h in self.intermediates.items()}
        return out

    def _check_domain(self):
        if self.physics is None:
            return
        for name, (lo, hi) in self.physics.domain.items():
            handle = self.intermediates.get(name, self.handles.get(name))
            if handle is None:
                continue
            val = self.tape.values[handle]
            if val is None:
                continue
            if np.any(val < lo) or np.any(val > hi):
                raise DomainError(
                    name, f"{name} left its valid domain [{lo}, {hi}]")

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.tape.trainable())

    # -- serialization -------------------------------------------------------

    def _array_manifest(self) -> list[tuple[str, np.ndarray, str]]:
        arrays: list[tuple[str, np.ndarray, str]] = []
        for h in sorted(self.tape.params):
            p = self.tape.params[h]
            arrays.append((p.name, p.value, "param"))
        for i, node in enumerate(self.tape.nodes):
            if node.kind == "batch_norm":
                arrays.append((f"bn{i}.running_mean", node.aux.running_mean, "buffer"))
                arrays.append((f"bn{i}.running_var", node.aux.running_var, "buffer"))
        arrays.append(("feature_mean", self.feature_mean, "scaler"))
        arrays.append(("feature_std", self.feature_std, "scaler"))
        arrays.append(("feature_active", self.feature_active, "scaler"))
        return arrays

    def save(self, path: str):
        arrays = self._array_manifest()
        header = {
            "format_version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "activation": self.spec.activation,
            "arrays": [
                {"name": name, "shape": list(a.shape), "kind": kind}
                for name, a, kind in arrays
            ],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(len(blob).to_bytes(8, "little"))
            f.write(blob)
            for _, a, _ in arrays:
                f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str) -> "PernnModel":
        with open(path, "rb") as f:
            data = f.read()
        buf = io.BytesIO(data)
        if buf.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a model container")
        size = int.from_bytes(buf.read(8), "little")
        header = json.loads(buf.read(size).decode("utf-8"))
        if header["format_version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {header['format_version']}")
        model = cls(ModelSpec.from_dict(header["spec"]))
        arrays = model._array_manifest()
        if len(arrays) != len(header["arrays"]):
            raise ValueError("model container does not match rebuilt architecture")
        for (name, arr, _), meta in zip(arrays, header["arrays"]):
            if list(arr.shape) != meta["shape"] or name != meta["name"]:
                raise ValueError(f"array mismatch for {meta['name']}")
            raw = buf.read(arr.size * 8)
            arr[...] = np.frombuffer(raw, dtype="<f8").reshape(arr.shape)
        return model


def build_model(spec: ModelSpec) -> PernnModel:
    return PernnModel(spec)


def forward_pernn(model: PernnModel, features: np.ndarray,
                  extra: dict[str, np.ndarray] | None = None) -> dict:
    """Single inspection pass returning intermediates and both output paths."""
    if model.spec.variant not in ("PERNN", "PENN"):
        raise ValueError("forward_pernn requires a PERNN or PENN model")
    out = model.forward_batch(features, extra, training=False)
    n = out["output"].shape[0]
    residual = out.get("residual_out")
    if residual is None:
        residual = np.zeros((n, 1))
    return {
        "intermediates": out["intermediates"],
        "physics_out": out["physics_out"],
        "residual_out": residual,
        "output": out["output"],
        "forecast": out.get("forecast"),
    }
