"""Adam training with early stopping, MSE/MAE metrics and reference baselines."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Splits, WindowSet
from .errors import DataError, ShapeError
from .network import Params, RunConfig, init_params, model_forward, predict

log = logging.getLogger(__name__)


def l2_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"l2_loss: prediction {pred.shape} vs target {target.shape}")
    return ad.mean(ad.square(ad.sub(pred, target)))


def metrics(pred, target) -> tuple[float, float]:
    """Mean squared and mean absolute error over every element."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"metrics: prediction {pred.shape} vs target {target.shape}")
    err = pred - target
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


class Adam:
    def __init__(self, params: Params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        """One bias-corrected update from ``.grad``; gradients are cleared after."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.lr:
                p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass
class EvalReport:
    mse: float
    mae: float
    horizon: int
    n_windows: int
    per_variable: list[dict] = field(default_factory=list)
    runtime_s: float = 0.0

    def to_dict(self, split: str = "test", seed: int | None = None) -> dict:
        d = asdict(self)
        d.pop("n_windows")
        return {"split": split, "horizon": self.horizon, "mse": self.mse, "mae": self.mae,
                "per_variable": d["per_variable"], "n_windows": self.n_windows,
                "runtime_s": self.runtime_s, "seed": seed}


def _report(pred: np.ndarray, target: np.ndarray, runtime: float, names=None) -> EvalReport:
    mse, mae = metrics(pred, target)
    per_var = []
    for j in range(target.shape[1]):
        vm, va = metrics(pred[:, j], target[:, j])
        per_var.append({"variable": names[j] if names else j, "mse": vm, "mae": va})
    return EvalReport(mse, mae, target.shape[-1], len(target), per_var, runtime)


def evaluate(params: Params, cfg: RunConfig, windows: WindowSet, names=None,
             batch: int = 256, workers: int = 1) -> EvalReport:
    """Average metrics over every window of one split; parameters are untouched."""
    if len(windows) == 0:
        raise DataError("cannot evaluate on an empty split")
    t0 = time.perf_counter()
    pred = predict(windows.x, params, cfg, batch=batch, workers=workers)
    return _report(pred, windows.y, time.perf_counter() - t0, names)


def _snapshot(params: Params) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def _restore(params: Params, snap: dict[str, np.ndarray]) -> None:
    for k, arr in snap.items():
        params[k].data[...] = arr


def train(cfg: RunConfig, splits: Splits, params: Params | None = None) -> tuple[Params, list[dict]]:
    """Mini-batch Adam on the L2 loss with validation-based early stopping.

    Returns the parameters of the best validation epoch and the per-epoch
    history (``epoch``, ``train_loss``, ``val_mse``).
    """
    for name in ("train", "val"):
        if len(splits[name]) == 0:
            raise DataError(f"{name} split has no windows")
    if params is None:
        params = init_params(cfg)
    opt = Adam(params, lr=cfg.lr)
    shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 1])))
    x_tr, y_tr = splits.train.x, splits.train.y
    history: list[dict] = []
    best_val, best_snap, stale = np.inf, _snapshot(params), 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(x_tr))
        losses, weights = [], []
        for i in range(0, len(order), cfg.batch):
            idx = order[i:i + cfg.batch]
            loss = l2_loss(model_forward(x_tr[idx], params, cfg), y_tr[idx])
            ad.backward(loss)
            opt.step()
            losses.append(loss.item())
            weights.append(len(idx))
        train_loss = float(np.average(losses, weights=weights))
        val_mse = evaluate(params, cfg, splits.val).mse
        history.append({"epoch": epoch, "train_loss": train_loss, "val_mse": val_mse})
        log.info("epoch %d train_loss %.6f val_mse %.6f", epoch, train_loss, val_mse)
        if val_mse < best_val:
            best_val, best_snap, stale = val_mse, _snapshot(params), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    _restore(params, best_snap)
    return params, history


# ------------------------------------------------------------------ baselines

def baseline_persistence(lookback, T: int) -> np.ndarray:
    """Repeat the last observed value across the horizon."""
    x = np.asarray(lookback, dtype=float)
    return np.repeat(x[..., -1:], T, axis=-1)


class LinearBaseline:
    """Per-variable affine least squares from the lookback to the horizon."""

    def __init__(self, ridge: float = 1e-6, cond_limit: float = 1e12):
        self.ridge = ridge
        self.cond_limit = cond_limit
        self.weights: np.ndarray | None = None  # [D, L + 1, T]

    def fit(self, x, y) -> "LinearBaseline":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(x) == 0:
            raise DataError("linear baseline needs at least one training window")
        n, d, L = x.shape
        ws = []
        for j in range(d):
            a = np.concatenate([x[:, j], np.ones((n, 1))], axis=1)
            ata = a.T @ a
            atb = a.T @ y[:, j]
            if np.linalg.cond(ata) > self.cond_limit:
                warnings.warn(f"variable {j}: singular normal equations, using ridge {self.ridge}",
                              RuntimeWarning, stacklevel=2)
                ata = ata + self.ridge * np.eye(L + 1)
            ws.append(np.linalg.solve(ata, atb))
        self.weights = np.stack(ws)
        return self

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        w = self.weights
        return np.einsum("ndl,dlt->ndt", x, w[:, :-1]) + w[None, :, -1]
