"""Adam training with halving learning rate, early stopping, and forecast metrics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import WindowSet
from .model import ForecastModel

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, msg: str, history: list | None = None):
        super().__init__(msg)
        self.history = history or []


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    lr_decay: float = 0.5
    epochs: int = 6
    batch: int = 32
    patience: int = 2
    repeats: int = 10
    seed: int = 0
    clip_norm: float | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be >= 1")


def lr_at(epoch: int, config: TrainConfig = TrainConfig()) -> float:
    return config.lr0 * config.lr_decay**epoch


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, T.Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """In-place bias-corrected Adam update of ``params``."""
    b1, b2 = betas
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name} at step {state.step + 1}")
    state.step += 1
    c1, c2 = 1 - b1**state.step, 1 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm
    return norm


# ---------------------------------------------------------------------------
# metrics


def mse(y, yhat) -> float:
    return float(np.mean((np.asarray(y) - np.asarray(yhat)) ** 2))


def mae(y, yhat) -> float:
    return float(np.mean(np.abs(np.asarray(y) - np.asarray(yhat))))


def rmse(y, yhat) -> float:
    """Per-run root mean squared error (the inline S formula)."""
    return math.sqrt(mse(y, yhat))


@dataclass(frozen=True)
class RepeatStats:
    mean: float
    msd: float
    cv_percent: float | None


def repeat_stats(mse_runs) -> RepeatStats:
    """Mean, population std (MSD) and coefficient of variation of per-run MSEs."""
    runs = np.asarray(mse_runs, dtype=float)
    if runs.size < 1:
        raise ValueError("need at least one run")
    mean = float(runs.mean())
    msd = float(np.sqrt(np.mean((runs - mean) ** 2)))
    return RepeatStats(mean, msd, 100.0 * msd / mean if mean > 0 else None)


@dataclass
class MetricsReport:
    mse_runs: list[float]
    mae_runs: list[float]
    seeds: list[int]

    @property
    def stats(self) -> RepeatStats:
        return repeat_stats(self.mse_runs)


# ---------------------------------------------------------------------------
# training and evaluation


def _batch_inputs(model: ForecastModel, x, y, mi, mt):
    tok = model.config.token_len
    md = np.concatenate([mi[:, mi.shape[1] - tok :], mt], axis=1)
    if not model.config.time_features:
        return x, None, None
    return x, mi, md


def predict(model: ForecastModel, windows: WindowSet, batch: int = 64) -> np.ndarray:
    outs = []
    with T.no_grad():
        for x, y, mi, mt in windows.batches(batch):
            xe, me, md = _batch_inputs(model, x, y, mi, mt)
            outs.append(model(xe, me, md).data)
    return np.concatenate(outs, axis=0)


def evaluate(model: ForecastModel, windows: WindowSet, batch: int = 64) -> tuple[float, float]:
    """(MSE, MAE) flat-averaged over every (window, step, series) cell."""
    if len(windows) == 0:
        raise ValueError("no windows to evaluate")
    pred = predict(model, windows, batch)
    _, y, _, _ = windows.arrays()
    return mse(y, pred), mae(y, pred)


def naive_last_value(windows: WindowSet) -> np.ndarray:
    x, y, _, _ = windows.arrays()
    return np.repeat(x[:, -1:, :], y.shape[1], axis=1)


def train(model: ForecastModel, train_windows: WindowSet, val_windows: WindowSet | None,
          config: TrainConfig = TrainConfig()) -> tuple[ForecastModel, list[dict]]:
    """MSE training; keeps the best-validation weights.

    Stops once validation MSE has failed to improve for ``patience`` epochs.
    """
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    state = AdamState()
    history: list[dict] = []
    best_val, best_state, stale = math.inf, model.state_dict(), 0
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        losses = []
        for x, y, mi, mt in train_windows.batches(config.batch, rng):
            xe, me, md = _batch_inputs(model, x, y, mi, mt)
            loss = T.mse_loss(model(xe, me, md), y)
            if not math.isfinite(loss.item()):
                raise TrainingError(f"loss diverged at epoch {epoch}", history)
            T.backward(loss)
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            if config.clip_norm is not None:
                clip_grads(grads, config.clip_norm)
            try:
                adam_step(params, grads, state, lr, config.betas, config.eps)
            except TrainingError as err:
                raise TrainingError(str(err), history) from err
            model.zero_grad()
            losses.append(loss.item())
        record = {"epoch": epoch, "lr": lr, "train_mse": float(np.mean(losses))}
        if val_windows is not None:
            record["val_mse"] = evaluate(model, val_windows)[0]
        history.append(record)
        log.info("epoch %d lr %.3g train %.5f val %s", epoch, lr, record["train_mse"], record.get("val_mse"))
        score = record.get("val_mse", record["train_mse"])
        if score < best_val:
            best_val, best_state, stale = score, model.state_dict(), 0
        else:
            stale += 1
            if stale >= config.patience:
                record["early_stop"] = True
                break
    model.load_state_dict(best_state)
    return model, history
