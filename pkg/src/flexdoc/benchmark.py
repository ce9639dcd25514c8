"""Train and score every model variant on one corpus.

Variants: the most-frequent baseline, Ours-IMP (random masking), Ours-EXP
(explicit task sampling), Ours-EXP-FT (EXP started from the IMP weights),
one expert per task, the two ablations (no self-attention with twice the
depth; task-ID query embedding) and the generator's Bayes oracle.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

from .evaluation import FrequencyTable, ScoreReport, evaluate, format_table, model_predictor
from .masking import TaskSpec, parse_tasks
from .model import FlexDM, ModelConfig
from .training import TrainConfig, train

log = logging.getLogger(__name__)

DEFAULT_TASKS = ("ELEM", "POS", "ATTR", "IMG", "TXT")
VARIANTS = ("most_frequent", "imp", "exp", "exp_ft", "expert", "no_attention", "task_id", "oracle")


@dataclass
class BenchmarkResult:
    reports: dict[str, ScoreReport] = field(default_factory=dict)
    models: dict[str, FlexDM] = field(default_factory=dict)
    params: dict[str, int] = field(default_factory=dict)
    seconds: dict[str, float] = field(default_factory=dict)

    def table(self, tasks=DEFAULT_TASKS) -> str:
        base = self.params.get("Ours-EXP") or max(self.params.values(), default=1)
        ratios = {k: f"{v / base:.1f}x" for k, v in self.params.items()}
        return format_table(list(self.reports.values()), list(tasks), ratios)


def run_benchmark(
    splits,
    schema,
    model_config: ModelConfig,
    train_config: TrainConfig,
    tasks=DEFAULT_TASKS,
    variants=VARIANTS,
    oracle=None,
    eval_split: str = "test",
    eval_seed: int = 0,
) -> BenchmarkResult:
    """Train the requested variants with equal epoch budgets and score them.

    ``oracle`` is a predictor used for the ``oracle`` row when given.
    """
    tasks: list[TaskSpec] = parse_tasks(list(tasks))
    train_docs, val_docs, test_docs = splits["train"], splits.get("val") or [], splits[eval_split]
    out = BenchmarkResult()

    def score(name, predictor):
        rep = evaluate(predictor, test_docs, tasks, schema, seed=eval_seed, name=name)
        out.reports[name] = rep
        log.info("%s: %s", name, {k: round(v, 3) for k, v in rep.scores.items()})
        return rep

    def fit(name, mcfg, tcfg, init=None, fit_tasks=tasks, eval_tasks=tasks):
        t0 = time.perf_counter()
        model = init.copy() if init is not None else FlexDM(schema, mcfg)
        train(model, train_docs, fit_tasks, tcfg, val_docs, eval_tasks)
        out.seconds[name] = time.perf_counter() - t0
        out.models[name] = model
        out.params[name] = model.num_parameters()
        return model

    if "most_frequent" in variants:
        table = FrequencyTable.fit(train_docs, schema)
        score("Most-frequent", table.predictor())
        out.params["Most-frequent"] = 0
    imp = None
    if "imp" in variants or "exp_ft" in variants:
        imp = fit("Ours-IMP", model_config, replace(train_config, regime="IMP"))
        if "imp" in variants:
            score("Ours-IMP", model_predictor(imp))
    if "exp" in variants:
        exp = fit("Ours-EXP", model_config, replace(train_config, regime="EXP"))
        score("Ours-EXP", model_predictor(exp))
    if "exp_ft" in variants:
        ft = fit("Ours-EXP-FT", model_config, replace(train_config, regime="EXP_FT"), init=imp)
        score("Ours-EXP-FT", model_predictor(ft))
    if "expert" in variants:
        experts = {}
        for t in tasks:
            cfg = replace(train_config, regime="EXPERT", expert_task=str(t))
            experts[str(t)] = fit(f"Expert-{t}", model_config, cfg, fit_tasks=[t], eval_tasks=[t])

        def expert_predict(inputs, masks, task_name):
            return model_predictor(experts[task_name])(inputs, masks, task_name)

        score("Expert", expert_predict)
        out.params["Expert"] = sum(out.params.pop(f"Expert-{t}") for t in tasks)
    if "no_attention" in variants:
        cfg = replace(model_config, use_attention=False, num_layers=2 * model_config.num_layers)
        m = fit("w/o attention", cfg, replace(train_config, regime="EXP"))
        score("w/o attention", model_predictor(m))
    if "task_id" in variants:
        cfg = replace(model_config, use_task_embedding=True, task_names=tuple(str(t) for t in tasks))
        m = fit("w/ task-ID", cfg, replace(train_config, regime="EXP"))
        score("w/ task-ID", model_predictor(m))
    if "oracle" in variants and oracle is not None:
        score("Oracle", oracle)
    return out
