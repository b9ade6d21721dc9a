"""Spectrogram screening CNN, trained from scratch on numpy/numba kernels.

Three blocks of conv(3x3, same) -> ReLU -> batch-norm -> max-pool(2x2), then a
single affine head with softmax over {non-pathological, pathological}. Training
is mini-batch Adam on cross-entropy with validation-loss early stopping, fully
deterministic per seed.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import DataError, NumericError


@dataclass(frozen=True)
class CnnConfig:
    input_shape: tuple = (128, 256)
    filters: tuple = (32, 64, 128)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs_max: int = 50
    patience: Optional[int] = 5       # None disables early stopping
    batch_size: int = 32
    seed: int = 0
    dtype: str = "float32"            # float64 exists for gradient checking
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if len(self.filters) != 3:
            raise DataError("exactly three conv blocks are expected")
        h, w = self.input_shape
        if h % 8 or w % 8:
            raise DataError("input dimensions must be divisible by 8 (three 2x2 pools)")
        if self.dtype not in ("float32", "float64"):
            raise DataError("dtype must be float32 or float64")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def flat_dim(self) -> int:
        h, w = self.input_shape
        return self.filters[2] * (h // 8) * (w // 8)


class CnnModel:
    """Parameter container plus pure forward/backward passes."""

    def __init__(self, config: CnnConfig):
        self.config = config
        dt = config.np_dtype
        rng = np.random.default_rng(config.seed)
        self.params = {}
        self.running = {}
        in_ch = 1
        for b, out_ch in enumerate(config.filters):
            limit = np.sqrt(6.0 / (in_ch * 9))
            self.params[f"conv{b}_w"] = rng.uniform(
                -limit, limit, (out_ch, in_ch, 3, 3)
            ).astype(dt)
            self.params[f"conv{b}_b"] = np.zeros(out_ch, dtype=dt)
            self.params[f"bn{b}_gamma"] = np.ones(out_ch, dtype=dt)
            self.params[f"bn{b}_beta"] = np.zeros(out_ch, dtype=dt)
            self.running[f"bn{b}_mean"] = np.zeros(out_ch, dtype=dt)
            self.running[f"bn{b}_var"] = np.ones(out_ch, dtype=dt)
            in_ch = out_ch
        limit = np.sqrt(6.0 / config.flat_dim)
        self.params["head_w"] = rng.uniform(-limit, limit, (config.flat_dim, 2)).astype(dt)
        self.params["head_b"] = np.zeros(2, dtype=dt)

    def copy_state(self):
        return (
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.running.items()},
        )

    def load_state(self, state):
        params, running = state
        self.params = {k: v.copy() for k, v in params.items()}
        self.running = {k: v.copy() for k, v in running.items()}

    def _check_input(self, x):
        h, w = self.config.input_shape
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (h, w):
            raise DataError(f"expected input shape (B, 1, {h}, {w}), got {x.shape}")

    def forward(self, x, mode: str = "infer", want_cache: bool = False):
        """Class probabilities (B, 2). Train mode normalizes with batch statistics
        (running-stat updates are the caller's job, via the cache); infer mode
        uses the stored running statistics. No mutation either way."""
        if mode not in ("train", "infer"):
            raise DataError(f"unknown mode {mode!r}")
        self._check_input(x)
        dt = self.config.np_dtype
        a = np.ascontiguousarray(x, dtype=dt)
        cache = {"blocks": []}
        for b in range(3):
            blk = {"x_in": a}
            conv = kernels.conv3x3_fwd(a, self.params[f"conv{b}_w"], self.params[f"conv{b}_b"])
            blk["conv"] = conv
            act = np.maximum(conv, 0)
            if mode == "train":
                mu = act.mean(axis=(0, 2, 3))
                var = act.var(axis=(0, 2, 3))
            else:
                mu = self.running[f"bn{b}_mean"]
                var = self.running[f"bn{b}_var"]
            inv = 1.0 / np.sqrt(var + self.config.bn_eps)
            xhat = (act - mu[None, :, None, None]) * inv[None, :, None, None]
            z = (
                self.params[f"bn{b}_gamma"][None, :, None, None] * xhat
                + self.params[f"bn{b}_beta"][None, :, None, None]
            )
            pooled, idx = kernels.maxpool2_fwd(np.ascontiguousarray(z, dtype=dt))
            blk.update(xhat=xhat, inv=inv, mu=mu, var=var, pool_idx=idx)
            cache["blocks"].append(blk)
            a = pooled
        flat = a.reshape(a.shape[0], -1)
        logits = flat @ self.params["head_w"] + self.params["head_b"]
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)
        if want_cache:
            cache.update(flat=flat, pooled_shape=a.shape, probs=probs)
            return probs, cache
        return probs

    def backward(self, cache, labels):
        """Gradients of mean cross-entropy w.r.t. every parameter (train mode)."""
        probs = cache["probs"]
        n = probs.shape[0]
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), labels] = 1.0
        dlogits = (probs - onehot) / n
        grads = {}
        grads["head_w"] = cache["flat"].T @ dlogits
        grads["head_b"] = dlogits.sum(axis=0)
        da = (dlogits @ self.params["head_w"].T).reshape(cache["pooled_shape"])
        dt = self.config.np_dtype
        for b in reversed(range(3)):
            blk = cache["blocks"][b]
            dz = kernels.maxpool2_bwd(np.ascontiguousarray(da, dtype=dt), blk["pool_idx"])
            gamma = self.params[f"bn{b}_gamma"]
            xhat = blk["xhat"]
            grads[f"bn{b}_gamma"] = (dz * xhat).sum(axis=(0, 2, 3))
            grads[f"bn{b}_beta"] = dz.sum(axis=(0, 2, 3))
            dxhat = dz * gamma[None, :, None, None]
            cnt = dz.shape[0] * dz.shape[2] * dz.shape[3]
            sum_dxhat = dxhat.sum(axis=(0, 2, 3))
            sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))
            dact = (
                blk["inv"][None, :, None, None]
                / cnt
                * (
                    cnt * dxhat
                    - sum_dxhat[None, :, None, None]
                    - xhat * sum_dxhat_xhat[None, :, None, None]
                )
            )
            dconv = np.where(blk["conv"] > 0, dact, 0).astype(dt, copy=False)
            dconv = np.ascontiguousarray(dconv)
            dw, db = kernels.conv3x3_bwd_w(blk["x_in"], dconv)
            grads[f"conv{b}_w"] = dw
            grads[f"conv{b}_b"] = db
            if b > 0:
                da = kernels.conv3x3_bwd_x(dconv, self.params[f"conv{b}_w"])
        return grads

    def batchnorm_updates(self, cache):
        """(name, batch_mean, batch_var) triples for the running-stat update."""
        return [
            (b, blk["mu"], blk["var"]) for b, blk in enumerate(cache["blocks"])
        ]


def cnn_forward(model: CnnModel, x, mode: str = "infer"):
    """Softmax probabilities for a batch of spectrogram images."""
    return model.forward(x, mode=mode)


def cross_entropy(probs, labels) -> float:
    n = probs.shape[0]
    p = np.clip(probs[np.arange(n), labels], 1e-12, None)
    return float(-np.mean(np.log(p)))


class AdamOptimizer:
    def __init__(self, config: CnnConfig, params):
        self.cfg = config
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * (g * g)
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            params[k] -= (c.lr * mhat / (np.sqrt(vhat) + c.adam_eps)).astype(
                params[k].dtype, copy=False
            )


class EarlyStopper:
    """Stop after `patience` consecutive epochs without validation improvement."""

    def __init__(self, patience: Optional[int]):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.bad = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch; True means stop now."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.bad = 0
            return False
        self.bad += 1
        return self.patience is not None and self.bad >= self.patience


def _evaluate(model: CnnModel, x, y, batch: int = 64):
    losses = []
    correct = 0
    for i in range(0, x.shape[0], batch):
        probs = model.forward(x[i : i + batch], mode="infer")
        losses.append(cross_entropy(probs, y[i : i + batch]) * probs.shape[0])
        correct += int(np.sum(np.argmax(probs, axis=1) == y[i : i + batch]))
    return float(np.sum(losses) / x.shape[0]), correct / x.shape[0]


def cnn_train(train_x, train_y, val_x, val_y, config: CnnConfig):
    """Train on labeled spectrograms; returns (model, log rows).

    Log rows are (epoch, train_loss, val_loss, val_acc). The returned model
    carries the parameters (and running stats) of the best-validation epoch.
    """
    train_x = np.asarray(train_x)
    val_x = np.asarray(val_x)
    train_y = np.asarray(train_y, dtype=np.int64)
    val_y = np.asarray(val_y, dtype=np.int64)
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise DataError("train and validation sets must be non-empty")
    model = CnnModel(config)
    opt = AdamOptimizer(config, model.params)
    stopper = EarlyStopper(config.patience)
    rng = np.random.default_rng(config.seed ^ 0x5EED)
    mom = config.bn_momentum
    log = []
    best_state = model.copy_state()
    for epoch in range(1, config.epochs_max + 1):
        perm = rng.permutation(train_x.shape[0])
        total_loss = 0.0
        for i in range(0, perm.shape[0], config.batch_size):
            sel = perm[i : i + config.batch_size]
            probs, cache = model.forward(train_x[sel], mode="train", want_cache=True)
            loss = cross_entropy(probs, train_y[sel])
            if not np.isfinite(loss):
                raise NumericError(f"NaN/inf training loss at epoch {epoch}")
            total_loss += loss * sel.shape[0]
            grads = model.backward(cache, train_y[sel])
            opt.step(model.params, grads)
            for b, mu, var in model.batchnorm_updates(cache):
                rm = model.running[f"bn{b}_mean"]
                rv = model.running[f"bn{b}_var"]
                model.running[f"bn{b}_mean"] = ((1 - mom) * rm + mom * mu).astype(rm.dtype)
                model.running[f"bn{b}_var"] = ((1 - mom) * rv + mom * var).astype(rv.dtype)
        train_loss = total_loss / train_x.shape[0]
        val_loss, val_acc = _evaluate(model, val_x, val_y)
        if not np.isfinite(val_loss):
            raise NumericError(f"NaN/inf validation loss at epoch {epoch}")
        log.append((epoch, train_loss, val_loss, val_acc))
        improved = val_loss < stopper.best_loss
        stop = stopper.update(epoch, val_loss)
        if improved:
            best_state = model.copy_state()
        if stop:
            break
    model.load_state(best_state)
    model.best_epoch = stopper.best_epoch
    return model, log


def training_log_csv(log) -> str:
    lines = ["epoch,train_loss,val_loss,val_acc"]
    for epoch, tl, vl, va in log:
        lines.append(f"{epoch},{tl:.6f},{vl:.6f},{va:.6f}")
    return "\n".join(lines) + "\n"


def cnn_backward_check(model: CnnModel, x, y, h: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    Meant for a float64 tiny-model variant; checks every parameter element.
    """
    if model.config.dtype != "float64":
        raise DataError("gradient checking requires a float64 model")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    probs, cache = model.forward(x, mode="train", want_cache=True)
    grads = model.backward(cache, y)

    def loss_at():
        return cross_entropy(model.forward(x, mode="train"), y)

    worst = 0.0
    for name, p in model.params.items():
        g = grads[name]
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.shape[0]):
            orig = flat_p[i]
            flat_p[i] = orig + h
            lp = loss_at()
            flat_p[i] = orig - h
            lm = loss_at()
            flat_p[i] = orig
            num = (lp - lm) / (2 * h)
            denom = max(abs(flat_g[i]), abs(num), 1e-6)
            worst = max(worst, abs(flat_g[i] - num) / denom)
    return worst
