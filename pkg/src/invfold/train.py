"""Loss, metrics, Adam, the training loop and evaluation reports."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .autodiff import Tape
from .decoders import one_shot_decode
from .graph import batch_graphs, featurize
from .pignn import ModelParams, forward

SCHEDULES = ("constant", "onecycle")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 1
    max_steps: int | None = None
    seed: int = 0
    precision: str = "f64"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "constant"
    clip_norm: float | None = 1.0

    def __post_init__(self):
        if self.lr < 0 or self.eps <= 0:
            raise ValueError("lr must be >= 0 and eps > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


class NonFiniteLoss(FloatingPointError):
    """Raised when a training step produces a non-finite loss or gradient."""


# ---------------------------------------------------------------------------
# loss and metrics


def sequence_loss(logits, labels, mask):
    """Mean negative log-softmax at the true label over unmasked residues."""
    return ops.log_softmax_nll(logits, labels, mask)


def perplexity(loss: float) -> float:
    if not loss >= 0:
        raise ValueError(f"perplexity needs a non-negative loss, got {loss}")
    return math.exp(loss)


def recovery(predicted, labels, mask=None) -> float:
    """Percentage of unmasked positions where ``predicted`` equals ``labels``."""
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if predicted.shape != labels.shape:
        raise ValueError("predicted and labels must align")
    keep = np.ones(labels.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(keep.sum())
    if count == 0:
        raise ValueError("recovery needs at least one unmasked position")
    return 100.0 * int((predicted[keep] == labels[keep]).sum()) / count


# ---------------------------------------------------------------------------
# optimiser


def onecycle_lr(step: int, total: int, peak: float) -> float:
    """Cosine one-cycle: 30% warm-up from peak/25, then anneal to peak/1e4."""
    if total <= 1:
        return peak
    warm = max(1, int(0.3 * total))
    start, end = peak / 25.0, peak / 1e4
    if step < warm:
        frac = step / warm
        return start + (peak - start) * 0.5 * (1 - math.cos(math.pi * frac))
    frac = min(1.0, (step - warm) / max(1, total - 1 - warm))
    return end + (peak - end) * 0.5 * (1 + math.cos(math.pi * frac))


class Adam:
    def __init__(self, named: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.value) for k, v in named.items()}
        self.v = {k: np.zeros_like(v.value) for k, v in named.items()}

    def step(self, named: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for k, tensor in named.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            update = lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            # rebind rather than write in place; closures on old tapes keep their values
            tensor.value = (tensor.value - update).astype(tensor.value.dtype)


def project_virtual(params: ModelParams) -> None:
    v = params.virtual.value
    if v.size:
        params.virtual.value = v / np.linalg.norm(v, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainState:
    params: ModelParams
    optimizer: Adam
    step: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)


def new_state(params: ModelParams, config: TrainConfig) -> TrainState:
    opt = Adam(params.named_tensors(), config.beta1, config.beta2, config.eps)
    return TrainState(params, opt, 0, np.random.default_rng([config.seed, 2]))


def train_step(batch, state: TrainState, config: TrainConfig, lr: float | None = None) -> float:
    """One Adam step on ``batch`` (a ProteinGraph); returns the pre-step loss."""
    params = state.params
    named = params.named_tensors()
    with Tape() as tape:
        logits = forward(batch, params, train=True, rng=state.rng)
        loss = sequence_loss(logits, batch.labels, np.ones(batch.n, dtype=bool))
    value = float(loss.value)
    if not math.isfinite(value):
        raise NonFiniteLoss(f"step {state.step}: loss is {value} on batch {batch.names[:4]}")
    g = tape.backward(loss)
    grads = {k: g[t] for k, t in named.items()}
    bad = [k for k, v in grads.items() if not np.isfinite(v).all()]
    if bad:
        raise NonFiniteLoss(f"step {state.step}: non-finite gradient in {bad[:5]} (loss {value:.4g})")
    if config.clip_norm is not None:
        total = math.sqrt(sum(float((v * v).sum()) for v in grads.values()))
        if total > config.clip_norm:
            scale = config.clip_norm / total
            grads = {k: v * scale for k, v in grads.items()}
    state.optimizer.step(named, grads, config.lr if lr is None else lr)
    project_virtual(params)
    state.step += 1
    return value


def featurize_all(proteins, params: ModelParams) -> list:
    return [featurize(p, params.config.features, params.virtual.value) for p in proteins]


def train(proteins, params: ModelParams, config: TrainConfig, log=None, on_step=None) -> TrainState:
    """Shuffled mini-batch training for ``config.epochs`` (capped by ``max_steps``).

    Graphs are featurised once: the virtual-atom columns are recomputed from
    the live parameters inside every forward pass. ``log`` is a writable
    text stream receiving one JSON line per step.
    """
    graphs = featurize_all(proteins, params)
    if not graphs:
        raise ValueError("no training proteins")
    state = new_state(params, config)
    order_rng = np.random.default_rng([config.seed, 3])
    per_epoch = math.ceil(len(graphs) / config.batch_size)
    total = per_epoch * config.epochs
    if config.max_steps is not None:
        total = min(total, config.max_steps)
    started = time.perf_counter()
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(graphs))
        for b in range(per_epoch):
            if state.step >= total:
                return state
            batch = batch_graphs([graphs[i] for i in order[b * config.batch_size : (b + 1) * config.batch_size]])
            lr = onecycle_lr(state.step, total, config.lr) if config.schedule == "onecycle" else config.lr
            loss = train_step(batch, state, config, lr)
            if log is not None:
                rec = {"step": state.step, "epoch": epoch, "loss": loss, "lr": lr,
                       "wall_time": round(time.perf_counter() - started, 6)}
                log.write(json.dumps(rec) + "\n")
            if on_step is not None:
                on_step(state, loss)
    return state


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    count: int
    residues: int
    perplexity: float | None
    median_recovery: float | None
    worst_recovery: float | None
    recoveries: list
    names: list
    wall_time: float
    empty: bool = False
    skipped: list = field(default_factory=list)
    max_length: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.empty:
            d["status"] = "empty subset"
        return d


def evaluate(proteins, params: ModelParams, max_length: int | None = None, batch_size: int = 8) -> EvalReport:
    """Perplexity over all scored residues plus per-protein recovery.

    ``max_length`` keeps proteins of at most that many residues. Proteins
    with no complete residue cannot be featurised and are listed in
    ``skipped``. An empty selection yields ``empty=True`` and ``None``
    statistics rather than NaN.
    """
    started = time.perf_counter()
    chosen = [p for p in proteins if max_length is None or len(p) <= max_length]
    usable = [p for p in chosen if p.mask.any()]
    skipped = [p.name for p in chosen if not p.mask.any()]
    if not usable:
        return EvalReport(0, 0, None, None, None, [], [], time.perf_counter() - started,
                          empty=True, skipped=skipped, max_length=max_length)
    nll_total, residues, recs = 0.0, 0, []
    graphs = featurize_all(usable, params)
    for lo in range(0, len(graphs), batch_size):
        batch = batch_graphs(graphs[lo : lo + batch_size])
        out = one_shot_decode(batch, params)
        nll_total += -float(out.log_probs[np.arange(batch.n), batch.labels].sum())
        residues += batch.n
        for k in range(batch.num_proteins):
            rows = batch.protein_ids == k
            recs.append(recovery(out.sequence[rows], batch.labels[rows]))
    mean_nll = nll_total / residues
    return EvalReport(
        count=len(usable),
        residues=residues,
        perplexity=perplexity(max(mean_nll, 0.0)),
        median_recovery=float(np.median(recs)),
        worst_recovery=float(np.min(recs)),
        recoveries=recs,
        names=[p.name for p in usable],
        wall_time=time.perf_counter() - started,
        skipped=skipped,
        max_length=max_length,
    )
