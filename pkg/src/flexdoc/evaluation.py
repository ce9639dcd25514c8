"""Scoring, the evaluation harness, the most-frequent baseline and box metrics."""

from __future__ import annotations

import hashlib
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .masking import MaskSet, TaskSpec, build_triplet
from .schema import MASK, NULL, Document, Schema

log = logging.getLogger(__name__)

# predictor(inputs, masks, task_name) -> completed documents
Predictor = Callable[[Sequence[Document], Sequence[MaskSet], str], list]


def field_score(pred, target, categorical: bool) -> float:
    """Per-field score: exact match, or cosine similarity mapped to [0, 1]."""
    if pred is NULL or pred is MASK:
        return 0.0
    if categorical:
        return 1.0 if pred == target else 0.0
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    denom = np.linalg.norm(p) * np.linalg.norm(t)
    if denom == 0.0:
        log.debug("zero-norm vector in cosine score, using 0.5")
        return 0.5
    cos = float(np.clip(p @ t / denom, -1.0, 1.0))
    return (1.0 + cos) / 2.0


def score(prediction: Document, target: Document, mask: MaskSet, schema: Schema) -> float:
    if not mask:
        raise ValueError("score is undefined for an empty mask")
    total = 0.0
    for i, name in sorted(mask):
        total += field_score(
            prediction.elements[i][name], target.elements[i][name], schema[name].is_categorical
        )
    return total / len(mask)


def group_scores(prediction: Document, target: Document, mask: MaskSet, schema: Schema) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    for i, name in sorted(mask):
        a = schema[name]
        s = field_score(prediction.elements[i][name], target.elements[i][name], a.is_categorical)
        out.setdefault(a.group, []).append(s)
    return out


# --------------------------------------------------------------------------- #
# most-frequent baseline
# --------------------------------------------------------------------------- #
@dataclass
class FrequencyTable:
    counts: dict[str, np.ndarray]
    means: dict[str, np.ndarray]

    @classmethod
    def fit(cls, documents: Sequence[Document], schema: Schema) -> "FrequencyTable":
        counts = {a.name: np.zeros(a.size, dtype=np.int64) for a in schema if a.is_categorical}
        sums = {a.name: np.zeros(a.size) for a in schema if not a.is_categorical}
        n = {name: 0 for name in sums}
        for doc in documents:
            for el in doc.elements:
                for name, c in counts.items():
                    v = el[name]
                    if isinstance(v, int):
                        c[v] += 1
                for name, s in sums.items():
                    v = el[name]
                    if isinstance(v, tuple):
                        s += v
                        n[name] += 1
        means = {name: s / max(n[name], 1) for name, s in sums.items()}
        return cls(counts, means)

    def value(self, name: str):
        if name in self.counts:
            return int(np.argmax(self.counts[name]))  # first maximum wins ties
        if name in self.means:
            return tuple(float(x) for x in self.means[name])
        raise KeyError(f"attribute {name!r} not in frequency table")

    def predict(self, input: Document, mask: MaskSet) -> Document:
        elements = [dict(e) for e in input.elements]
        for i, name in mask:
            elements[i][name] = self.value(name)
        return input.replace(elements)

    def predictor(self) -> Predictor:
        def predict_many(inputs, masks, task_name=None):
            return [self.predict(d, m) for d, m in zip(inputs, masks)]

        return predict_many

    def to_dict(self) -> dict:
        return {
            "counts": {k: v.tolist() for k, v in self.counts.items()},
            "means": {k: v.tolist() for k, v in self.means.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "FrequencyTable":
        return cls(
            {k: np.asarray(v, dtype=np.int64) for k, v in d["counts"].items()},
            {k: np.asarray(v, dtype=np.float64) for k, v in d["means"].items()},
        )


def most_frequent_predict(input: Document, mask: MaskSet, table: FrequencyTable) -> Document:
    return table.predict(input, mask)


# --------------------------------------------------------------------------- #
# harness
# --------------------------------------------------------------------------- #
def doc_seed(doc_id: str) -> int:
    return zlib.crc32(doc_id.encode())


def eval_triplets(documents: Sequence[Document], task: TaskSpec, schema: Schema, seed: int = 0):
    """One triplet per document with a mask fixed by ``(seed, doc id, task)``."""
    out = []
    tkey = zlib.crc32(str(task).encode())
    for doc in documents:
        rng = np.random.default_rng([seed, doc_seed(doc.id), tkey])
        trip = build_triplet(doc, task, schema, rng)
        if trip.mask:
            out.append(trip)
    return out


@dataclass
class ScoreReport:
    scores: dict[str, float]
    groups: dict[str, dict[str, float]]
    counts: dict[str, int]
    config_hash: str = ""
    name: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.scores.values()))) if self.scores else 0.0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "scores": self.scores,
            "mean": self.mean,
            "groups": self.groups,
            "counts": self.counts,
            "config_hash": self.config_hash,
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate(
    predictor: Predictor,
    documents: Sequence[Document],
    tasks: Sequence[TaskSpec],
    schema: Schema,
    seed: int = 0,
    batch_size: int = 256,
    name: str = "",
    config: Mapping | None = None,
    workers: int = 1,
) -> ScoreReport:
    """Mean per-document score for each task; empty-mask documents are skipped.

    With ``workers > 1`` prediction chunks run in a thread pool; the result
    does not depend on the worker count.
    """
    scores, groups, counts = {}, {}, {}
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    for t in tasks:
        trips = eval_triplets(documents, t, schema, seed)
        doc_scores = []
        gsum: dict[str, list[float]] = {}
        chunks = [trips[s : s + batch_size] for s in range(0, len(trips), batch_size)]

        def run(chunk, t=t):
            return predictor([x.input for x in chunk], [x.mask for x in chunk], str(t))

        outputs = pool.map(run, chunks) if pool else map(run, chunks)
        for chunk, preds in zip(chunks, outputs):
            for trip, pred in zip(chunk, preds):
                doc_scores.append(score(pred, trip.target, trip.mask, schema))
                for g, vals in group_scores(pred, trip.target, trip.mask, schema).items():
                    gsum.setdefault(g, []).extend(vals)
        key = str(t)
        scores[key] = float(np.mean(doc_scores)) if doc_scores else float("nan")
        groups[key] = {g: float(np.mean(v)) for g, v in sorted(gsum.items())}
        counts[key] = len(doc_scores)
    if pool:
        pool.shutdown()
    blob = json.dumps({"seed": seed, "tasks": [str(t) for t in tasks], **(config or {})}, sort_keys=True, default=str)
    return ScoreReport(scores, groups, counts, hashlib.sha256(blob.encode()).hexdigest()[:12], name)


def model_predictor(model) -> Predictor:
    """Adapt a :class:`~flexdoc.model.FlexDM` to the predictor protocol."""

    def predict_many(inputs, masks, task_name=None):
        tids = None
        if model.config.use_task_embedding:
            tids = [model.task_index(task_name)] * len(inputs)
        return model.predict_many(inputs, masks, tids)

    return predict_many


def format_table(reports: Sequence[ScoreReport], tasks: Sequence[str] | None = None, params: Mapping[str, str] | None = None) -> str:
    """Aligned plain-text table with one row per model and one column per task."""
    if not reports:
        return ""
    tasks = list(tasks or reports[0].scores)
    params = params or {}
    name_w = max(5, *(len(r.name) for r in reports))
    head = f"{'Model':<{name_w}}  {'#par.':>6}  " + "  ".join(f"{t:>6}" for t in tasks) + f"  {'mean':>6}"
    lines = [head, "-" * len(head)]
    for r in reports:
        cells = "  ".join(f"{r.scores.get(t, float('nan')):6.3f}" for t in tasks)
        mean = np.mean([r.scores[t] for t in tasks if t in r.scores])
        lines.append(f"{r.name:<{name_w}}  {params.get(r.name, ''):>6}  {cells}  {mean:6.3f}")
    return "\n".join(lines)


# --------------------------------------------------------------------------- #
# box metrics
# --------------------------------------------------------------------------- #
def _check_box(box):
    left, top, w, h = (float(x) for x in box)
    if w < 0 or h < 0:
        raise ValueError(f"box {box} has negative width or height")
    return left, top, w, h


def iou(box_a, box_b) -> float:
    """Intersection over union of two ``(left, top, width, height)`` boxes."""
    ax, ay, aw, ah = _check_box(box_a)
    bx, by, bw, bh = _check_box(box_b)
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    if union <= 0.0:
        return 1.0 if (ax, ay, aw, ah) == (bx, by, bw, bh) else 0.0
    return inter / union


def bde(box_a, box_b) -> float:
    """Boundary displacement error: mean absolute shift of the four edges."""
    ax, ay, aw, ah = _check_box(box_a)
    bx, by, bw, bh = _check_box(box_b)
    edges_a = (ax, ay, ax + aw, ay + ah)
    edges_b = (bx, by, bx + bw, by + bh)
    return sum(abs(p - q) for p, q in zip(edges_a, edges_b)) / 4.0
