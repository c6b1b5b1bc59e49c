"""Parameter learning: 1-vs-all binary cross-entropy and Adam."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .checkpoint import load_arrays, load_sidecar, save_arrays, save_sidecar
from .data import Dataset, LpQuery, derive_queries
from .model import GraphContext, HypeTKG, ModelConfig

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-4
    epochs: int = 100
    seed: int = 0
    eval_every: int = 0
    patience: int = 0
    weight_decay: float = 0.0
    grad_clip: float = 0.0
    label_smoothing: float = 0.0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in known}
        if "adam_betas" in kw:
            kw["adam_betas"] = tuple(kw["adam_betas"])
        return cls(**kw)


def bce_loss(scores, truths: Sequence[int] | np.ndarray, label_smoothing: float = 0.0) -> Tensor:
    """Mean binary cross-entropy over every (query, candidate) pair.

    Raw scores are squashed with a logistic before the log terms; the truth of
    each row is the positive, all other candidates are negatives.  Accepts a
    (B, N) score matrix or a single (N,) vector.
    """
    scores = ad.as_tensor(scores)
    if scores.ndim == 1:
        scores = scores.reshape(1, -1)
    b, n = scores.shape
    truths = np.asarray(truths, dtype=np.int64).reshape(-1)
    if truths.size != b:
        raise ValueError(f"{truths.size} truths for {b} score rows")
    y = np.zeros((b, n))
    y[np.arange(b), truths] = 1.0
    if label_smoothing:
        y = y * (1.0 - label_smoothing) + label_smoothing / n
    pos = ad.mul(ad.logsigmoid(scores), ad.Tensor(y))
    neg = ad.mul(ad.logsigmoid(ad.mul(scores, -1.0)), ad.Tensor(1.0 - y))
    return ad.mul(ad.add(pos, neg).sum(), -1.0 / (b * n))


class Adam:
    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p in self.params:
            if p.grad is None or not p.trainable:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m, v = self.m[p.name], self.v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out


def clip_gradients(params: Sequence[Parameter], max_norm: float) -> float:
    norm = ad.parameters_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


def query_loss(
    model: HypeTKG,
    queries: Sequence[LpQuery],
    graph: GraphContext,
    rng: np.random.Generator | None = None,
    label_smoothing: float = 0.0,
) -> Tensor:
    scores = model.scores(queries, graph, rng)
    return bce_loss(scores, [q.ground_truth for q in queries], label_smoothing)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_mrr: float | None = None
    valid_h1: float | None = None
    valid_h3: float | None = None
    valid_h10: float | None = None
    wall_seconds: float = 0.0


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_valid_mrr: float | None = None
    best_state: dict[str, np.ndarray] | None = None
    rng_state: dict | None = None


METRIC_COLUMNS = ["epoch", "train_loss", "valid_MRR", "valid_H1", "valid_H3", "valid_H10", "wall_seconds"]


def write_metrics_csv(path: str | Path, history: Sequence[EpochRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in history:
            fmt = lambda v: "" if v is None else f"{v:.6f}"  # noqa: E731
            w.writerow(
                [r.epoch, f"{r.train_loss:.8f}", fmt(r.valid_mrr), fmt(r.valid_h1), fmt(r.valid_h3),
                 fmt(r.valid_h10), f"{r.wall_seconds:.3f}"]
            )


def train(
    model: HypeTKG,
    ds: Dataset,
    cfg: TrainConfig,
    graph: GraphContext | None = None,
    validate: Callable[[HypeTKG], "object"] | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Fit ``model`` on the augmented training split.

    ``validate`` (if given, and ``cfg.eval_every`` > 0) returns a report with
    ``mrr``/``hits1``/``hits3``/``hits10``; the best-MRR parameters are kept in
    the result and restored into the model at the end.
    """
    if not ds.augmented:
        raise ValueError("train expects an inverse-augmented dataset")
    graph = graph or GraphContext.from_dataset(ds, model.cfg)
    queries = derive_queries(ds.train)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps, cfg.weight_decay)
    result = TrainResult()
    bad_rounds = 0
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(queries))
        total, count = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [queries[i] for i in order[lo : lo + cfg.batch_size]]
            model.store.zero_grad()
            loss = query_loss(model, batch, graph, rng, cfg.label_smoothing)
            value = loss.item()
            if not math.isfinite(value):
                dump = {p.name: float(np.abs(p.data).max()) for p in model.params}
                raise NonFiniteLossError(f"epoch {epoch}: loss {value}; max |param| = {json.dumps(dump)}")
            loss.backward()
            if cfg.grad_clip:
                clip_gradients(model.params, cfg.grad_clip)
            opt.step()
            total += value * len(batch)
            count += len(batch)
        rec = EpochRecord(epoch, total / max(count, 1), wall_seconds=time.perf_counter() - start)
        if validate is not None and cfg.eval_every and epoch % cfg.eval_every == 0:
            rep = validate(model)
            rec.valid_mrr, rec.valid_h1, rec.valid_h3, rec.valid_h10 = rep.mrr, rep.hits1, rep.hits3, rep.hits10
            if result.best_valid_mrr is None or rep.mrr > result.best_valid_mrr:
                result.best_valid_mrr, result.best_epoch = rep.mrr, epoch
                result.best_state = model.store.state()
                bad_rounds = 0
            else:
                bad_rounds += 1
        result.history.append(rec)
        logger.info("epoch %d loss %.6f valid_mrr %s", epoch, rec.train_loss, rec.valid_mrr)
        if on_epoch is not None:
            on_epoch(rec)
        if cfg.patience and bad_rounds >= cfg.patience:
            logger.info("early stop at epoch %d", epoch)
            break
    if result.best_state is not None:
        model.store.load_state(result.best_state)
    result.rng_state = rng.bit_generator.state
    return result


def save_checkpoint(
    path: str | Path,
    model: HypeTKG,
    train_cfg: TrainConfig | None = None,
    extra: dict | None = None,
) -> None:
    save_arrays(path, model.store.state())
    meta = {"model": model.cfg.to_dict(), "seed": model.store.seed}
    if train_cfg is not None:
        meta["train"] = train_cfg.to_dict()
    if extra:
        meta.update(extra)
    save_sidecar(path, meta)


def load_checkpoint(path: str | Path, ds: Dataset) -> tuple[HypeTKG, dict]:
    meta = load_sidecar(path)
    cfg = ModelConfig.from_dict(meta["model"])
    model = HypeTKG.for_dataset(ds, cfg, seed=meta.get("seed", 0))
    model.store.load_state(load_arrays(path))
    return model, meta
