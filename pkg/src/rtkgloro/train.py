"""Training GloRo-style heads with Adam and the epoch schedules."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GradientTape, Tensor
from .certify import GuaranteeConfig, gloro_logits
from .data import LabeledDataset
from .lipschitz import init_power_states, pair_bounds_tensor, update_power_states
from .metrics import clean_correct, evaluate_network
from .netcore import Network, forward_tensor

logger = logging.getLogger(__name__)

LOSSES = ("cross-entropy", "trades", "clean")


class TrainingError(RuntimeError):
    pass


@dataclass
class LRSchedule:
    start: float = 1e-3
    end: float = 1e-6
    decay_onset: float = 0.5


@dataclass
class LambdaSchedule:
    start: float = 1.0
    end: float = 1.0
    shape: str = "linear"
    onset: float = 1.0


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr_schedule: LRSchedule = field(default_factory=LRSchedule)
    loss: str = "cross-entropy"
    trades_schedule: LambdaSchedule = field(default_factory=LambdaSchedule)
    power_iters_per_batch: int = 2
    eps: float = 0.1
    guarantee: GuaranteeConfig = field(default_factory=GuaranteeConfig.standard)
    seed: int = 0
    eval_every: int = 0  # epochs between converged-bound VRA evaluations; 0 = final epoch only

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.epochs < 1 or self.batch_size < 1 or self.power_iters_per_batch < 1:
            raise ValueError("epochs, batch_size and power_iters_per_batch must be positive")
        lr = self.lr_schedule
        if not 0 < lr.decay_onset <= 1:
            raise ValueError("decay_onset must lie in (0, 1]")
        if min(lr.start, lr.end) < 0 or (lr.start != lr.end and min(lr.start, lr.end) == 0):
            raise ValueError("a decaying learning rate needs positive endpoints")
        ts = self.trades_schedule
        if ts.shape not in ("linear", "logarithmic") or not 0 < ts.onset <= 1:
            raise ValueError("trades schedule shape must be linear/logarithmic with onset in (0, 1]")
        if ts.start < 0 or ts.end < 0:
            raise ValueError("TRADES lambda must be non-negative")
        if ts.shape == "logarithmic" and ts.start <= 0:
            raise ValueError("a logarithmic lambda schedule needs a positive start")

    def to_dict(self) -> dict:
        d = asdict(self)
        g = self.guarantee
        d["guarantee"] = {"kind": g.kind, "K": g.K}
        if g.affinity is not None:
            d["guarantee"]["affinity_sets"] = [sorted(s) for s in g.affinity.sets]
        return d


@dataclass
class OptimizerState:
    """Adam moments, one pair per parameter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "OptimizerState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])

    def apply(self, params: list[Tensor], grads: list[np.ndarray], lr: float) -> None:
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1**self.step, 1.0 - b2**self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------- losses


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-softmax at ``labels`` over the rows of ``logits``."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels).reshape(-1)
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label out of range")
    picked = ad.take_along_axis(logits, labels[:, None], axis=1).reshape(-1)
    return ad.tsum(ad.logsumexp(logits, axis=1) - picked) * (1.0 / logits.shape[0])


def loss_ce_augmented(aug_logits, label) -> Tensor:
    """Cross-entropy over the C + 1 augmented logits; the bottom class is never a target."""
    aug = ad.as_tensor(aug_logits)
    C = aug.shape[-1] - 1
    labels = np.atleast_1d(np.asarray(label))
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"label must be a real class in 0..{C - 1}")
    return cross_entropy(aug, labels)


def loss_trades(clean_logits, aug_logits, label, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return cross_entropy(clean_logits, np.atleast_1d(label)) + loss_ce_augmented(aug_logits, label) * lam


# ---------------------------------------------------------------- schedules


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Constant until the decay onset, then geometric down to ``end`` at the final epoch."""
    s = config.lr_schedule
    if s.start == s.end:
        return s.start
    last = config.epochs - 1
    onset = min(int(round(s.decay_onset * config.epochs)), last)
    if epoch < onset:
        return s.start
    if epoch >= last:
        return s.end
    t = (epoch - onset) / (last - onset)
    return s.start * (s.end / s.start) ** t


def lambda_schedule(epoch: int, config: TrainConfig) -> float:
    """TRADES weight: linear or logarithmic (concave) rise that reaches ``end`` at the onset epoch."""
    s = config.trades_schedule
    reach = min(int(round(s.onset * config.epochs)), config.epochs - 1)
    if reach <= 0 or epoch >= reach:
        return s.end
    t = epoch / reach
    if s.shape == "linear":
        return s.start + (s.end - s.start) * t
    ratio = s.end / s.start
    if ratio == 1.0:
        return s.start
    return s.start + (s.end - s.start) * math.log1p(t * (ratio - 1.0)) / math.log(ratio)


# ---------------------------------------------------------------- training loop


def batch_loss(net: Network, states, x: np.ndarray, y: np.ndarray, config: TrainConfig, lam: float) -> Tensor:
    """Loss of one batch at the current power states; records on the active tape."""
    f = forward_tensor(net, Tensor(x))
    if config.loss == "clean":
        return cross_entropy(f, y)
    K = pair_bounds_tensor(net, states)
    aug = gloro_logits(f, K, config.eps, config.guarantee)
    if config.loss == "cross-entropy":
        return loss_ce_augmented(aug, y)
    return loss_trades(f, aug, y, lam)


def train(
    net: Network,
    dataset: LabeledDataset,
    config: TrainConfig,
    eval_data: LabeledDataset | None = None,
) -> tuple[Network, list[dict]]:
    """Train ``net`` in place; returns it with one history row per epoch."""
    if dataset.labels.max() >= net.num_classes:
        raise ValueError("dataset labels exceed the network's class count")
    rng = np.random.default_rng(config.seed)
    states = init_power_states(net, seed=config.seed, include_final=False)
    params = net.params
    opt = OptimizerState.for_params(params)
    X = dataset.points.reshape((len(dataset),) + net.input_shape)
    Y = dataset.labels
    n = len(dataset)
    history = []
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        lam = lambda_schedule(epoch, config) if config.loss == "trades" else 0.0
        perm = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start : start + config.batch_size]
            if config.loss != "clean":
                update_power_states(net, states, iters=config.power_iters_per_batch)
            with GradientTape() as tape:
                loss = batch_loss(net, states, X[idx], Y[idx], config, lam)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b} (rows {idx[:8].tolist()}...)")
            grads = tape.gradient(loss, params)
            opt.apply(params, grads, lr)
            total += value * len(idx)
        row = {"epoch": epoch, "lr": lr, "lambda": lam, "loss": total / n}
        last = epoch == config.epochs - 1
        if last or (config.eval_every and (epoch + 1) % config.eval_every == 0):
            report = evaluate_network(net, config.eps, config.guarantee, eval_data or dataset)
            row.update(clean_acc=report.clean_accuracy, vra=report.vra, rejection_rate=report.rejection_rate)
        else:
            logits = forward_tensor(net, Tensor(X)).data
            acc = float(clean_correct(logits, Y, config.guarantee).mean())
            row.update(clean_acc=acc, vra=None, rejection_rate=None)
        history.append(row)
        logger.debug("epoch %d: %s", epoch, row)
    net.metadata.update(
        epsilon=config.eps,
        guarantee=config.guarantee.kind,
        K=config.guarantee.K,
        power_seed=config.seed,
    )
    if config.guarantee.affinity is not None:
        net.metadata["affinity_sets"] = [sorted(s) for s in config.guarantee.affinity.sets]
    net.metadata.setdefault("class_names", dataset.class_names)
    return net, history
