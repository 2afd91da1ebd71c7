"""Alpha discovery network: a dense net trained on a smooth rank-IC surrogate.

The training objective replaces the non-differentiable rank of the network
output with a centred, scaled sigmoid

    g(x_i) = 1 / (1 + exp(-p * (x_i - mean(x)) / (2 * std(x) + eps)))

computed per trading day, and maximizes the Pearson correlation between
g(outputs) and the exact [0, 1] ranks of forward returns. Gradients are
exact, including the paths through the day's mean and standard deviation.
"""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .ic import daily_spearman, feature_ic, rank01
from .market_data import (
    FIELDS,
    CrossSectionBatch,
    FeaturePanel,
    WindowDataset,
    sample_batch,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelParams:
    p: float = 1.83
    epsilon_std: float = 1e-8

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError("p must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple[int, ...] = (64, 32)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_days: int = 10
    batches_per_epoch: int = 25
    max_epochs: int = 200
    patience: int = 10
    pretrain_epochs: int = 200
    pretrain_target: float = 0.9
    pretrain_lr: float = 3e-3
    pretrain_batch_days: int = 2
    pretrain_transform: str = "normal_scores"
    random_pretrain_epochs: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.lr < 0 or self.pretrain_lr < 0:
            raise ValueError("learning rates must be >= 0")
        for name in ("batch_days", "batches_per_epoch", "max_epochs", "pretrain_batch_days"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.patience < self.max_epochs:
            raise ValueError(f"patience={self.patience} must be in [0, max_epochs)")
        if self.pretrain_transform not in TARGET_TRANSFORMS:
            raise ValueError(f"pretrain_transform={self.pretrain_transform!r} must be one of {TARGET_TRANSFORMS}")
        if self.pretrain_epochs < 0 or self.random_pretrain_epochs < 0:
            raise ValueError("pretraining budgets must be >= 0")


# ---------------------------------------------------------------------------
# Network

class MlpNetwork:
    """Dense tanh network with a linear scalar output.

    ``weights[l]`` has shape (fan_in, fan_out), so ``weights[0][j, k]`` links
    input coordinate j to first-layer hidden unit k. Gradients from the last
    backward pass live in ``grad_weights`` / ``grad_biases``.
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError("inconsistent layer shapes")
        for w1, w2 in zip(self.weights, self.weights[1:]):
            if w1.shape[1] != w2.shape[0]:
                raise ValueError("inconsistent layer shapes")
        self.grad_weights = [np.zeros_like(w) for w in self.weights]
        self.grad_biases = [np.zeros_like(b) for b in self.biases]

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> "MlpNetwork":
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def gradients(self) -> list[np.ndarray]:
        return [*self.grad_weights, *self.grad_biases]

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(self.weights, self.biases)

    def _forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(f"input shape {x.shape} does not match input size {self.sizes[0]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            acts.append(h)
        return h[:, 0], acts

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[0]

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> None:
        """Store dL/dparams given dL/doutput for the cached activations."""
        delta = np.asarray(grad_out, dtype=np.float64)[:, None]
        for i in range(len(self.weights) - 1, -1, -1):
            self.grad_weights[i] = acts[i].T @ delta
            self.grad_biases[i] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)


def forward(net: MlpNetwork, inputs: np.ndarray) -> np.ndarray:
    return net.forward(inputs)


class Adam:
    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# Kernel and surrogate loss

def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def g_kernel(x, params: KernelParams = KernelParams(), *, mean: float | None = None,
             std: float | None = None) -> np.ndarray:
    """Smooth rank surrogate of ``x``; statistics default to those of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("g_kernel needs a non-empty vector")
    mu = x.mean() if mean is None else mean
    sd = x.std() if std is None else std
    return _sigmoid(params.p * (x - mu) / (2.0 * sd + params.epsilon_std))


def _day_loss(x: np.ndarray, target: np.ndarray, params: KernelParams) -> tuple[float, np.ndarray, bool]:
    """-Pearson(g(x), target) and its gradient w.r.t. x for one day."""
    n = len(x)
    mu = x.mean()
    xc = x - mu
    sigma = np.sqrt(xc @ xc / n)
    s = 2.0 * sigma + params.epsilon_std
    a = params.p * xc / s
    g = _sigmoid(a)
    gc = g - g.mean()
    tc = target - target.mean()
    ngg, ntt = float(np.sqrt(gc @ gc)), float(np.sqrt(tc @ tc))
    if sigma == 0.0 or ngg == 0.0 or ntt == 0.0:
        return 0.0, np.zeros(n), True
    rho = float(gc @ tc) / (ngg * ntt)
    d_g = tc / (ngg * ntt) - rho * gc / (ngg * ngg)       # d rho / d g
    d_a = d_g * g * (1.0 - g)                               # d rho / d a
    # a_i = p (x_i - mu) / s,  s = 2 sigma + eps,  d sigma / d x_j = (x_j - mu) / (n sigma)
    d_x = params.p / s * (d_a - d_a.mean()) - params.p / (s * s) * float(d_a @ xc) * 2.0 * xc / (n * sigma)
    return -rho, -d_x, False


class SurrogateLoss(NamedTuple):
    loss: float
    grads: list[np.ndarray]
    degenerate: list[bool]


def surrogate_ic_loss(outputs: Sequence[np.ndarray], returns: Sequence[np.ndarray],
                      params: KernelParams = KernelParams(), *, ranked: bool = False) -> SurrogateLoss:
    """Negative mean over days of Pearson(g(outputs_day), rank01(returns_day)).

    With ``ranked=True`` the returns are taken to be rank01 values already.
    """
    if len(outputs) != len(returns) or not outputs:
        raise ValueError("need matching, non-empty per-day outputs and returns")
    B = len(outputs)
    total, grads, flags = 0.0, [], []
    for x, r in zip(outputs, returns):
        x = np.asarray(x, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        if x.shape != r.shape or len(x) < 2:
            raise ValueError("each day needs equal-length vectors of length >= 2")
        loss, grad, degenerate = _day_loss(x, r if ranked else rank01(r), params)
        total += loss
        grads.append(grad / B)
        flags.append(degenerate)
    return SurrogateLoss(total / B, grads, flags)


# ---------------------------------------------------------------------------
# Training

def make_optimizer(net: MlpNetwork, cfg: TrainConfig, lr: float | None = None) -> Adam:
    return Adam(net.parameters(), cfg.lr if lr is None else lr, cfg.beta1, cfg.beta2, cfg.adam_eps)


def return_ranks(ds: WindowDataset, split: str = "train") -> dict[int, np.ndarray]:
    """rank01 of each eligible day's forward returns over its cross-section."""
    return {t: rank01(ds.returns.values[ds.cross_section(t), t]) for t in ds.eligible_days(split)}


def batch_loss_and_grad(net: MlpNetwork, batch: CrossSectionBatch, kernel: KernelParams,
                        ranks: dict[int, np.ndarray] | None = None) -> SurrogateLoss:
    """Surrogate loss of ``net`` on ``batch``; leaves parameter gradients on ``net``."""
    x = np.concatenate(batch.inputs)
    out, acts = net._forward(x)
    bounds = np.cumsum([len(v) for v in batch.inputs])[:-1]
    if ranks is None:
        res = surrogate_ic_loss(np.split(out, bounds), batch.returns, kernel)
    else:
        targets = [ranks[t] for t in batch.day_indices]
        res = surrogate_ic_loss(np.split(out, bounds), targets, kernel, ranked=True)
    net.backward(acts, np.concatenate(res.grads))
    return res


def train_step(net: MlpNetwork, batch: CrossSectionBatch, optimizer: Adam,
               kernel: KernelParams = KernelParams(), ranks: dict[int, np.ndarray] | None = None) -> float:
    """One backpropagation + Adam update; returns the batch loss."""
    res = batch_loss_and_grad(net, batch, kernel, ranks)
    if not np.isfinite(res.loss):
        raise TrainingError(f"non-finite loss {res.loss} on days {batch.day_indices}")
    optimizer.step(net.parameters(), net.gradients())
    return res.loss


def predict(net: MlpNetwork, ds: WindowDataset, days=None, name: str = "adnn") -> FeaturePanel:
    """Network output on every valid window of ``days`` (all days by default)."""
    values = np.full(ds.valid.shape, np.nan)
    mask = ds.valid.copy()
    if days is not None:
        keep = np.zeros(mask.shape[1], dtype=bool)
        keep[np.asarray(list(days), dtype=int)] = True
        mask &= keep[None, :]
    if mask.any():
        values[mask] = net.forward(ds.inputs[mask])
    return FeaturePanel(name, values, mask)


def validation_ic(net: MlpNetwork, ds: WindowDataset, split: str = "val") -> float:
    feat = predict(net, ds, ds.splits[split])
    return feature_ic(feat, ds.returns, ds.splits[split], ds.min_cross_section, universe=ds.valid).mean


def random_teacher(ds: WindowDataset, rng: np.random.Generator) -> FeaturePanel:
    """I.i.d. standard-normal target per sample."""
    return FeaturePanel("random", rng.standard_normal(ds.valid.shape), ds.valid)


@dataclass(frozen=True, eq=False)
class TeacherTargets:
    """Per-day z-scored teacher values on the sample grid."""
    days: np.ndarray
    mask: np.ndarray
    z: np.ndarray
    assets: dict[int, np.ndarray]


TARGET_TRANSFORMS = ("normal_scores", "zscore")


def teacher_targets(teacher: FeaturePanel, ds: WindowDataset, days,
                    transform: str = "normal_scores") -> TeacherTargets:
    """Per-day standardized teacher values.

    ``zscore`` standardizes raw values; ``normal_scores`` standardizes the
    standard-normal quantiles of the teacher's average-tie ranks, which keeps
    the day's ordering and removes heavy tails.
    """
    if transform not in TARGET_TRANSFORMS:
        raise ValueError(f"unknown target transform {transform!r}; expected one of {TARGET_TRANSFORMS}")
    mask = np.zeros(ds.valid.shape, dtype=bool)
    z = np.zeros(ds.valid.shape)
    kept, assets = [], {}
    for t in days:
        ix = np.flatnonzero(ds.valid[:, t] & teacher.valid[:, t])
        if len(ix) < 2:
            continue
        v = teacher.values[ix, t]
        if transform == "normal_scores":
            v = ndtri((rankdata(v) - 0.5) / len(v))
        sd = v.std()
        z[ix, t] = 0.0 if sd == 0 else (v - v.mean()) / sd
        mask[ix, t] = True
        kept.append(t)
        assets[t] = ix
    return TeacherTargets(np.asarray(kept, dtype=int), mask, z, assets)


def teacher_fidelity(net: MlpNetwork, targets: TeacherTargets, ds: WindowDataset) -> float:
    """Mean daily Spearman between network output and teacher on the target days."""
    if len(targets.days) == 0:
        return 0.0
    days = targets.days
    mask = targets.mask[:, days]
    out = np.zeros(mask.shape)
    out[mask] = net.forward(ds.inputs[:, days][mask])
    rho, _ = daily_spearman(out, targets.z[:, days], mask)
    return float(rho.mean())


@dataclass
class PretrainResult:
    epochs: int
    fidelity: float
    reached: bool


def pretrain(net: MlpNetwork, teacher: FeaturePanel, ds: WindowDataset, cfg: TrainConfig,
             rng: np.random.Generator, max_epochs: int | None = None,
             target: float | None = None) -> PretrainResult:
    """Regress the network onto the per-day standardized teacher (mean squared error).

    One epoch is a shuffled pass over the training days in mini-batches of
    ``pretrain_batch_days`` days.
    Stops once the mean daily train Spearman against the teacher reaches
    ``target`` or the epoch budget runs out; the latter only warns.
    """
    max_epochs = cfg.pretrain_epochs if max_epochs is None else max_epochs
    target = cfg.pretrain_target if target is None else target
    targets = teacher_targets(teacher, ds, ds.splits["train"], cfg.pretrain_transform)
    days = np.asarray([t for t in targets.days if len(targets.assets[t]) >= ds.min_cross_section])
    if len(days) == 0:
        raise ValueError("teacher is undefined on every training day")
    opt = make_optimizer(net, cfg, cfg.pretrain_lr)
    fidelity = teacher_fidelity(net, targets, ds)
    epoch = 0
    while fidelity < target and epoch < max_epochs:
        epoch += 1
        order = rng.permutation(days)
        for start in range(0, len(order), cfg.pretrain_batch_days):
            picked = np.sort(order[start:start + cfg.pretrain_batch_days])
            ix = np.concatenate([targets.assets[t] for t in picked])
            tt = np.concatenate([np.full(len(targets.assets[t]), t) for t in picked])
            y = targets.z[ix, tt]
            out, acts = net._forward(ds.inputs[ix, tt])
            net.backward(acts, 2.0 * (out - y) / len(y))
            opt.step(net.parameters(), net.gradients())
        fidelity = teacher_fidelity(net, targets, ds)
    reached = fidelity >= target
    if not reached and max_epochs > 0 and teacher.name != "random":
        warnings.warn(f"pretraining on {teacher.name!r} stopped at fidelity {fidelity:.3f} < {target}",
                      RuntimeWarning, stacklevel=2)
    return PretrainResult(epoch, fidelity, reached)


@dataclass(frozen=True)
class ContributionVector:
    values: np.ndarray
    window_len: int = 30

    @property
    def by_field(self) -> dict[str, float]:
        per = self.values.reshape(len(FIELDS), self.window_len)
        return {f: float(v) for f, v in zip(FIELDS, per.sum(axis=1))}

    @property
    def by_lag(self) -> np.ndarray:
        """Index ``lag`` (0 = sample day) summed over fields."""
        per = self.values.reshape(len(FIELDS), self.window_len)
        return per.sum(axis=0)[::-1]


def contribution(net: MlpNetwork, window_len: int | None = None) -> ContributionVector:
    """Per-input sum of absolute first-layer weights."""
    c = np.abs(net.weights[0]).sum(axis=1)
    if window_len is None:
        window_len = len(c) // len(FIELDS)
    return ContributionVector(c, window_len)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_ic: list[float] = field(default_factory=list)
    contributions: list[np.ndarray] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_ic(self) -> float:
        return max(self.val_ic) if self.val_ic else float("nan")


def train(net: MlpNetwork, ds: WindowDataset, cfg: TrainConfig, rng: np.random.Generator,
          kernel: KernelParams = KernelParams()) -> tuple[MlpNetwork, TrainHistory]:
    """IC training with validation early stopping; returns the best-validation copy.

    ``history.contributions[0]`` is the snapshot before the first epoch.
    """
    cfg.validate()
    opt = make_optimizer(net, cfg)
    hist = TrainHistory()
    hist.contributions.append(contribution(net).values)
    ranks = return_ranks(ds, "train")
    best, best_ic, since = net.copy(), -np.inf, 0
    for epoch in range(1, cfg.max_epochs + 1):
        losses = [train_step(net, sample_batch(ds, "train", cfg.batch_days, rng), opt, kernel, ranks)
                  for _ in range(cfg.batches_per_epoch)]
        val = validation_ic(net, ds)
        hist.train_loss.append(float(np.mean(losses)))
        hist.val_ic.append(val)
        hist.contributions.append(contribution(net).values)
        if val > best_ic:
            best, best_ic, since = net.copy(), val, 0
            hist.best_epoch = epoch
        else:
            since += 1
        log.debug("epoch %d loss %.4f val IC %.4f", epoch, hist.train_loss[-1], val)
        if since >= cfg.patience:
            break
    return best, hist


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, layer sizes, weights (row-major), biases

MAGIC = b"ADNNCKPT"
VERSION = 1


def save_network(net: MlpNetwork, path: str | Path) -> None:
    sizes = net.sizes
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        for w in net.weights:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        for b in net.biases:
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_network(path: str | Path) -> MlpNetwork:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a network checkpoint")
    pos = len(MAGIC)
    version, n = struct.unpack_from("<HI", data, pos)
    pos += struct.calcsize("<HI")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    sizes = struct.unpack_from(f"<{n}I", data, pos)
    pos += 4 * n
    weights, biases = [], []
    for a, b in zip(sizes, sizes[1:]):
        weights.append(np.frombuffer(data, "<f8", a * b, pos).reshape(a, b).copy())
        pos += 8 * a * b
    for b in sizes[1:]:
        biases.append(np.frombuffer(data, "<f8", b, pos).copy())
        pos += 8 * b
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return MlpNetwork(weights, biases)

