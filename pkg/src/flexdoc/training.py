"""Masked-field loss, Adam, and the IMP / EXP / EXP-FT / expert training regimes."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .evaluation import ScoreReport, evaluate, model_predictor
from .masking import MaskSet, TaskSpec, sample_task, task_mask
from .model import FlexDM, collate, doc_arrays, mask_targets
from .schema import Document, Schema

log = logging.getLogger(__name__)

REGIMES = ("IMP", "EXP", "EXP_FT", "EXPERT")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 500
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    weight_decay: float = 1e-2
    mask_prob_imp: float = 0.15
    seed: int = 0
    regime: str = "EXP"
    expert_task: str | None = None
    per_batch_task: bool = False
    eval_every: int = 1
    eval_docs: int | None = None
    select_best: bool = True

    def __post_init__(self):
        self.regime = self.regime.upper().replace("-", "_")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        for name in ("batch_size", "epochs", "lr", "beta1", "beta2", "adam_eps", "mask_prob_imp"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.regime == "EXPERT" and not self.expert_task:
            raise ValueError("EXPERT regime needs expert_task")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# --------------------------------------------------------------------------- #
# loss
# --------------------------------------------------------------------------- #
def masked_loss(outputs: Mapping[str, Tensor], target: Document, mask: MaskSet, schema: Schema) -> Tensor:
    """Sum of per-field losses over the masked fields of one document.

    ``outputs[name]`` holds the decoder output for every element, shape
    ``(S, C)`` for categorical and ``(S, d)`` for numerical attributes.
    """
    if not mask:
        raise ValueError("loss is undefined for an empty mask")
    total = None
    for name, (_, es, values) in mask_targets([target], [mask], schema).items():
        rows = ag.take_rows(outputs[name], es)
        if schema[name].is_categorical:
            term = ag.cross_entropy(rows, values)
        else:
            term = ag.mse_sum(rows, values)
        total = term if total is None else ag.add(total, term)
    return total


# --------------------------------------------------------------------------- #
# optimiser
# --------------------------------------------------------------------------- #
class Adam:
    """Bias-corrected Adam with L2 weight decay added to the gradient."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.99, eps=1e-8, weight_decay=0.0, decay_mask: Mapping[str, bool] | None = None):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.decay_mask = dict(decay_mask or {})
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray | None]) -> None:
        """Update the arrays in ``params`` in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p)
            if self.weight_decay and self.decay_mask.get(k, True):
                g = g + self.weight_decay * p
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}


def adam_step(params, grads, state: Adam) -> None:
    state.step(params, grads)


# --------------------------------------------------------------------------- #
# training loop
# --------------------------------------------------------------------------- #
@dataclass
class TrainResult:
    model: FlexDM
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_score: float = float("nan")
    seconds: float = 0.0

    def losses(self) -> list[float]:
        return [h["loss"] for h in self.history if h["split"] == "train"]


class _Sampler:
    """Draws tasks and masks for training examples."""

    def __init__(self, docs, tasks, schema, config: TrainConfig):
        self.docs, self.schema, self.config = docs, schema, config
        if config.regime == "IMP":
            self.tasks = [TaskSpec("RANDOM", p=config.mask_prob_imp)]
        elif config.regime == "EXPERT":
            from .masking import task

            self.tasks = [task(config.expert_task)]
        else:
            self.tasks = list(tasks)
        if not self.tasks:
            raise ValueError("no training tasks")

    def draw(self, doc_index: int, rng, batch_task: TaskSpec | None):
        doc = self.docs[doc_index]
        spec = batch_task or sample_task(self.tasks, rng)
        mask = task_mask(doc, spec, self.schema, rng)
        if mask:
            return spec, mask
        # degenerate task for this document (e.g. IMG without images)
        others = [t for t in self.tasks if t != spec]
        rng.shuffle(others)
        for alt in others:
            mask = task_mask(doc, alt, self.schema, rng)
            if mask:
                return alt, mask
        return None, MaskSet()


def train(
    model: FlexDM,
    train_docs: Sequence[Document],
    tasks: Sequence[TaskSpec],
    config: TrainConfig,
    val_docs: Sequence[Document] | None = None,
    eval_tasks: Sequence[TaskSpec] | None = None,
    log_fn: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train ``model`` in place and return it with its loss and score curves.

    When validation documents are given, the parameters with the best mean
    validation score across ``eval_tasks`` are restored at the end.
    """
    from .schema import validate

    schema = model.schema
    for doc in train_docs[:50]:
        problems = validate(doc, schema)
        if problems:
            raise TrainingError(f"document {doc.id!r} does not match the schema: {problems[0]}")
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    sampler = _Sampler(train_docs, tasks, schema, config)
    eval_tasks = list(eval_tasks or (tasks if config.regime != "IMP" else []))
    if config.regime == "EXPERT" and not eval_tasks:
        eval_tasks = sampler.tasks
    arrays = [doc_arrays(d, schema, model.dtype) for d in train_docs]
    opt = Adam(config.lr, config.beta1, config.beta2, config.adam_eps, config.weight_decay, model.decay_mask())
    params = {k: t.data for k, t in model.params.items()}
    result = TrainResult(model)
    best_state, best = None, -math.inf
    n = len(train_docs)
    val_subset = list(val_docs[: config.eval_docs] if config.eval_docs else val_docs or [])

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        losses, per_task = [], {}
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch_task = sample_task(sampler.tasks, rng) if config.per_batch_task else None
            specs, masks, keep = [], [], []
            for j in idx:
                spec, mask = sampler.draw(int(j), rng, batch_task)
                if mask:
                    specs.append(spec)
                    masks.append(mask)
                    keep.append(int(j))
            if not keep:
                continue
            tids = None
            if model.config.use_task_embedding:
                tids = [model.task_index(str(s)) for s in specs]
            batch = collate([arrays[j] for j in keep], schema, masks, tids)
            targets = mask_targets([train_docs[j] for j in keep], masks, schema)
            for t in model.params.values():
                t.grad = None
            loss = model.loss(batch, targets, train=True, rng=rng)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch}, step {start // config.batch_size}; "
                    f"tasks {sorted({str(s) for s in specs})}"
                )
            ag.backward(loss)
            opt.step(params, {k: t.grad for k, t in model.params.items()})
            losses.append(value)
            for s in specs:
                per_task[str(s)] = per_task.get(str(s), 0) + 1
        record = {"epoch": epoch, "split": "train", "task": "all", "loss": float(np.mean(losses)), "score": None}
        result.history.append(record)
        if log_fn:
            log_fn(record)
        log.info("epoch %d loss %.4f", epoch, record["loss"])

        if val_subset and eval_tasks and (epoch % config.eval_every == 0 or epoch == config.epochs):
            report = evaluate(model_predictor(model), val_subset, eval_tasks, schema, seed=0)
            for tname, s in report.scores.items():
                rec = {"epoch": epoch, "split": "val", "task": tname, "loss": None, "score": s}
                result.history.append(rec)
                if log_fn:
                    log_fn(rec)
            if report.mean > best:
                best, result.best_epoch, result.best_score = report.mean, epoch, report.mean
                best_state = {k: v.copy() for k, v in params.items()}
    if config.select_best and best_state is not None:
        model.load_state_dict(best_state)
    result.seconds = time.perf_counter() - t0
    return result


def train_expert(model: FlexDM, train_docs, task: TaskSpec | str, config: TrainConfig, val_docs=None, log_fn=None) -> TrainResult:
    """Train on a single task's masking pattern only."""
    name = task if isinstance(task, str) else str(task)
    cfg = TrainConfig.from_dict({**config.to_dict(), "regime": "EXPERT", "expert_task": name})
    from .masking import task as parse

    return train(model, train_docs, [parse(name)], cfg, val_docs, [parse(name)], log_fn)


def jsonl_logger(path) -> Callable[[dict], None]:
    fh = open(path, "a", encoding="utf-8")

    def write(record: dict) -> None:
        fh.write(json.dumps(record) + "\n")
        fh.flush()

    return write


def report_from_history(history: Sequence[dict], epoch: int) -> ScoreReport:
    scores = {h["task"]: h["score"] for h in history if h["split"] == "val" and h["epoch"] == epoch}
    return ScoreReport(scores, {}, {})
