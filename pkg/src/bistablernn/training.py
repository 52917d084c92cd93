"""Losses, Adam, and the experiment loop (train / periodic eval / CSV log).

The loop samples fresh mini-batches from a benchmark generator, evaluates on
a test set pre-generated once per run from a dedicated stream, and appends
one RunLog record at iteration 0, every `eval_every` iterations, and at the
end. Given (seed, config, netspec) the whole run is deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .network import Network, NetworkSpec, backward_batch, forward_batch
from .numerics import ContractError, Rng


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over the components; grad = 2(pred-target)/n."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1:
        raise ContractError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = pred.shape[0]
    return float(diff @ diff) / n, 2.0 * diff / n


def mse_loss_batch(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch mean of per-sample MSE; grads are per-sample (not batch-averaged)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ContractError(f"mse_loss_batch shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = pred.shape[1]
    per_sample = (diff * diff).sum(axis=1) / n
    return float(per_sample.mean()), 2.0 * diff / n


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, log-sum-exp stabilised."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits: np.ndarray, cls: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy of one logit vector against a class index."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ContractError("cross_entropy_loss expects a 1-d logit vector")
    if not 0 <= cls < logits.shape[0]:
        raise ContractError(f"class index {cls} out of range for {logits.shape[0]} logits")
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    loss = lse - logits[cls]
    grad = softmax(logits)
    grad[cls] -= 1.0
    return float(loss), grad


def cross_entropy_batch(logits: np.ndarray, classes: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch mean cross-entropy; per-sample gradients."""
    logits = np.asarray(logits, dtype=np.float64)
    classes = np.asarray(classes, dtype=np.int64)
    if logits.ndim != 2 or classes.shape != (logits.shape[0],):
        raise ContractError("cross_entropy_batch expects (batch, K) logits and (batch,) classes")
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))).ravel()
    rows = np.arange(logits.shape[0])
    losses = lse - logits[rows, classes]
    grads = softmax(logits)
    grads[rows, classes] -= 1.0
    return float(losses.mean()), grads


class AdamState:
    """Per-parameter first/second moments plus the step counter."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    if set(params) != set(state.m) or set(grads) != set(params):
        raise ContractError("adam_step: parameter/gradient/state keys do not match")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"adam_step: gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is <= max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class TrainConfig:
    iterations: int
    batch_size: int = 100
    eval_every: int = 500
    seed: int = 0
    loss_kind: str = "auto"        # mse | cross_entropy | auto (from benchmark)
    lr: float = 1e-3
    test_size: int = 2000
    clip_norm: float = 5.0

    def validate(self) -> None:
        if self.iterations < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ContractError("iterations, batch_size and eval_every must be >= 1")
        if self.loss_kind not in ("auto", "mse", "cross_entropy"):
            raise ContractError(f"unknown loss_kind {self.loss_kind!r}")


@dataclass
class EvalRecord:
    iteration: int
    train_loss: float
    test_metric: float
    seconds: float


@dataclass
class RunLog:
    """Per-eval records; serialises to `iteration,train_loss,test_metric,seconds`."""

    records: list[EvalRecord] = field(default_factory=list)

    def add(self, iteration: int, train_loss: float, test_metric: float,
            seconds: float) -> None:
        if self.records and iteration <= self.records[-1].iteration:
            raise ContractError("RunLog iterations must be strictly increasing")
        self.records.append(EvalRecord(iteration, train_loss, test_metric, seconds))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("iteration,train_loss,test_metric,seconds\n")
            for r in self.records:
                f.write(f"{r.iteration},{float(r.train_loss)!r},"
                        f"{float(r.test_metric)!r},{r.seconds:.3f}\n")

    @property
    def final(self) -> EvalRecord:
        return self.records[-1]


def evaluate(net: Network, inputs: np.ndarray, targets: np.ndarray,
             metric: str, batch_size: int = 128) -> float:
    """Test metric over a fixed set: mean per-sample MSE, or accuracy."""
    n = inputs.shape[0]
    total = 0.0
    for lo in range(0, n, batch_size):
        out, _, _ = forward_batch(net, inputs[lo:lo + batch_size])
        if metric == "mse":
            diff = out - targets[lo:lo + batch_size]
            total += float(((diff * diff).sum(axis=1) / diff.shape[1]).sum())
        elif metric == "accuracy":
            total += float((out.argmax(axis=1) == targets[lo:lo + batch_size]).sum())
        else:
            raise ContractError(f"unknown metric {metric!r}")
    return total / n


def batch_loss(loss_kind: str, outputs: np.ndarray, targets: np.ndarray):
    if loss_kind == "mse":
        return mse_loss_batch(outputs, targets)
    if loss_kind == "cross_entropy":
        return cross_entropy_batch(outputs, targets)
    raise ContractError(f"unknown loss_kind {loss_kind!r}")


def train(netspec: NetworkSpec, benchmark, config: TrainConfig,
          log_hook=None) -> tuple[Network, RunLog]:
    """Train a fresh network on a benchmark generator.

    `benchmark` provides sample_batch(n, rng) -> (inputs, targets) plus
    input_dim / metric / loss attributes (see `benchmarks`). Batches are
    sampled online; the test set is drawn once from a spawned stream.
    """
    config.validate()
    base = Rng(config.seed)
    rng_init = base.spawn()
    rng_batch = base.spawn()
    rng_test = base.spawn()

    net = Network(netspec, rng_init)
    params = net.params()
    adam = AdamState(params, lr=config.lr)
    loss_kind = benchmark.loss if config.loss_kind == "auto" else config.loss_kind

    test_x, test_y = benchmark.sample_batch(config.test_size, rng_test)
    log = RunLog()
    t0 = time.perf_counter()

    def record(iteration, train_loss):
        metric = evaluate(net, test_x, test_y, benchmark.metric)
        log.add(iteration, train_loss, metric, time.perf_counter() - t0)
        if log_hook is not None:
            log_hook(log.records[-1])

    # Probe batch for the initial entry (forward only, no update).
    xb, yb = benchmark.sample_batch(config.batch_size, rng_batch)
    out, _, _ = forward_batch(net, xb)
    loss0, _ = batch_loss(loss_kind, out, yb)
    record(0, loss0)

    window: list[float] = []
    for it in range(1, config.iterations + 1):
        xb, yb = benchmark.sample_batch(config.batch_size, rng_batch)
        out, cache, _ = forward_batch(net, xb)
        loss, gout = batch_loss(loss_kind, out, yb)
        grads = backward_batch(net, cache, gout)
        clip_global_norm(grads, config.clip_norm)
        adam_step(params, grads, adam)
        window.append(loss)
        if it % config.eval_every == 0 or it == config.iterations:
            record(it, float(np.mean(window)))
            window = []
    return net, log
