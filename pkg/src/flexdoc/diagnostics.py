"""Finite-difference check of the full model loss."""

from __future__ import annotations

import numpy as np

from .autograd import GradCheckReport, grad_check
from .masking import TaskSpec, task_mask
from .model import FlexDM, ModelConfig, collate, doc_arrays, mask_targets
from .synth import GeneratorConfig, generate

SMALL_MODEL = dict(d_model=32, num_layers=2, num_heads=4, ffn_dim=64, dropout=0.1)


def coverage_masks(docs, schema, rng):
    """Masks for a handful of documents that together touch every attribute."""
    tasks = [TaskSpec("ELEM"), TaskSpec("ATTR"), TaskSpec("RANDOM", p=0.5), TaskSpec("POS")]
    masks = []
    for k, doc in enumerate(docs):
        m = task_mask(doc, tasks[k % len(tasks)], schema, rng)
        m = m | task_mask(doc, TaskSpec("IMG"), schema, rng) | task_mask(doc, TaskSpec("TXT"), schema, rng)
        masks.append(m)
    return masks


def model_grad_check(
    seed: int = 0,
    num_docs: int = 4,
    probes: int = 200,
    eps: float = 1e-5,
    tol: float = 1e-4,
    model_overrides: dict | None = None,
) -> GradCheckReport:
    """Check backprop through encoder, transformer and heads on synthetic documents.

    The model runs in float64 with dropout active; the dropout rng is reset
    before every loss evaluation so that all evaluations see the same masks.
    """
    gen = GeneratorConfig(train=num_docs, val=0, test=0, seed=seed, min_elements=3, max_elements=8, check_gap=False)
    docs = generate(gen)["train"]
    schema = gen.schema
    cfg = ModelConfig(**{**SMALL_MODEL, **(model_overrides or {}), "dtype": "float64", "seed": seed})
    model = FlexDM(schema, cfg)
    rng = np.random.default_rng(seed)
    masks = coverage_masks(docs, schema, rng)
    tids = None
    if cfg.use_task_embedding:
        tids = [k % len(cfg.task_names) for k in range(len(docs))]
    batch = collate([doc_arrays(d, schema, np.float64) for d in docs], schema, masks, tids)
    targets = mask_targets(docs, masks, schema)

    def loss():
        return model.loss(batch, targets, train=True, rng=np.random.default_rng(seed + 1))

    return grad_check(loss, model.params, probes=probes, eps=eps, tol=tol, rng=np.random.default_rng(seed + 2))
