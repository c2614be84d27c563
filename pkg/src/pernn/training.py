"""Mini-batch Adam training with the two-phase warm-start procedure.

Phase I fits the learning block alone against heuristic / derived labels for
the intermediate variables. Phase II trains the integrated model (learning +
fixed physics + residual) on the target signal, starting from the Phase-I
weights. Baselines (FCNN, PINN) train in a single phase on their data loss.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .models import PernnModel
from .rng import stream


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


# -- losses (pure reference implementations) --------------------------------

def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.size == 0:
        raise ValueError("empty input")
    if pred.size != target.size:
        raise ValueError(f"length mismatch: {pred.size} vs {target.size}")
    return pred, target


def mse_loss(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae_loss(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def pinn_loss(pred, target, physics_pred, mask) -> float:
    """Unweighted sum of the data loss and the masked physics-consistency loss."""
    pred, target = _pair(pred, target)
    physics_pred = np.asarray(physics_pred, dtype=np.float64).reshape(-1)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if physics_pred.size != pred.size or mask.size != pred.size:
        raise ValueError("length mismatch")
    l_data = float(np.mean((pred - target) ** 2))
    if mask.any():
        l_phy = float(np.mean((pred[mask] - physics_pred[mask]) ** 2))
    else:
        l_phy = 0.0
    return l_data + l_phy


# -- optimizer ----------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 100
    loss_threshold: float = 1e-3
    seed: int = 0
    phase: str = "warm_start"  # warm_start | integrated
    clip_norm: float = 10.0
    converge_window: int = 5
    converge_rtol: float = 1e-5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if self.loss_threshold <= 0.0:
            raise ValueError("loss threshold must be > 0")


class AdamState:
    """First/second moment accumulators keyed by parameter handle."""

    def __init__(self):
        self.m: dict[int, np.ndarray] = {}
        self.v: dict[int, np.ndarray] = {}
        self.step = 0


def adam_step(model: PernnModel, grads: dict[int, np.ndarray],
              state: AdamState, cfg: TrainConfig):
    """Standard bias-corrected Adam update on the tape's trainable parameters."""
    params = model.tape.params
    for handle, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(
                f"non-finite gradient for parameter {params[handle].name!r}", [])
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    for handle, g in grads.items():
        p = params[handle]
        m = state.m.get(handle)
        if m is None:
            m = state.m.setdefault(handle, np.zeros_like(p.value))
            state.v[handle] = np.zeros_like(p.value)
        v = state.v[handle]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.value -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def clip_gradients(grads: dict[int, np.ndarray], max_norm: float) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = total ** 0.5
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# -- training data ------------------------------------------------------------

@dataclass
class TrainData:
    """Raw feature matrix plus named per-sample columns bound as tape inputs."""

    features: np.ndarray
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        n = self.features.shape[0]
        cols = {}
        for name, col in self.columns.items():
            arr = np.asarray(col, dtype=np.float64).reshape(n, -1)
            cols[name] = arr
        self.columns = cols

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def subset(self, idx: np.ndarray) -> "TrainData":
        return TrainData(self.features[idx],
                         {k: v[idx] for k, v in self.columns.items()})


def _batch_extra(model: PernnModel, data: TrainData, idx: np.ndarray) -> dict:
    extra = {name: col[idx] for name, col in data.columns.items()
             if name in model.input_widths}
    if "phys_weight" in model.input_widths and "phys_mask" in data.columns:
        mask = data.columns["phys_mask"][idx]
        count = float(mask.sum())
        extra["phys_weight"] = mask / max(count, 1.0)
    return extra


# -- training loops -------------------------------------------------------------

def _run_epochs(model: PernnModel, data: TrainData, loss_name: str,
                cfg: TrainConfig, phase_label: str, stop: str) -> list[tuple]:
    """Shared epoch loop. `stop` is 'converge' or 'threshold'."""
    if loss_name not in model.losses:
        raise ValueError(f"model has no loss {loss_name!r}")
    loss_handle = model.losses[loss_name]
    shuffle_rng = stream(cfg.seed, f"shuffle/{phase_label}")
    state = AdamState()
    history: list[tuple] = []
    n = data.n
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            extra = _batch_extra(model, data, idx)
            model.forward_batch(data.features[idx], extra, training=True)
            batch_loss = float(model.tape.value(loss_handle))
            grads = model.tape.backward(loss_handle)
            clip_gradients(grads, cfg.clip_norm)
            try:
                adam_step(model, grads, state, cfg)
            except TrainingDiverged as exc:
                raise TrainingDiverged(str(exc), history) from None
            total += batch_loss * idx.size
            seen += idx.size
        epoch_loss = total / max(seen, 1)
        wall_ms = (time.perf_counter() - t0) * 1e3
        history.append((epoch, phase_label, epoch_loss, wall_ms))
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(
                f"epoch {epoch} loss is not finite", history)
        if stop == "threshold" and epoch_loss < cfg.loss_threshold:
            break
        if stop == "converge" and len(history) > cfg.converge_window:
            prev = history[-1 - cfg.converge_window][2]
            rel = (prev - epoch_loss) / max(abs(prev), 1e-12)
            if rel < cfg.converge_rtol:
                break
    return history


def train_phase1(model: PernnModel, data: TrainData, cfg: TrainConfig) -> list[tuple]:
    """Warm start: fit the learning block to labeled intermediate variables."""
    history = _run_epochs(model, data, "phase1", cfg, "phase1", stop="converge")
    model.phase1_done = True
    return history


def train_phase2(model: PernnModel, data: TrainData, cfg: TrainConfig) -> list[tuple]:
    """Integrated training of the full model; physics block stays fixed."""
    if not getattr(model, "phase1_done", False):
        raise ValueError("phase 2 requires the learning block warm start (phase 1)")
    return _run_epochs(model, data, "phase2", cfg, "phase2", stop="threshold")


def train_single_phase(model: PernnModel, data: TrainData, cfg: TrainConfig) -> list[tuple]:
    """Baseline training: one phase on the data (FCNN) or combined (PINN) loss."""
    loss_name = "pinn" if model.spec.variant == "PINN" else "data"
    return _run_epochs(model, data, loss_name, cfg, "single", stop="threshold")
