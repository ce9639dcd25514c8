"""Command-line entry point: ``flexdoc <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import ConfigError, RunConfig
from .evaluation import FrequencyTable, evaluate, format_table, model_predictor
from .masking import MaskSet, parse_tasks
from .model import FlexDM, load_checkpoint
from .schema import MASK, DocumentError, load_schema, read_jsonl, validate, write_jsonl

log = logging.getLogger("flexdoc")


class CommandError(RuntimeError):
    pass


def _setup_logging() -> None:
    level = os.environ.get("FLEXDOC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--tasks", help="comma-separated task names, e.g. ELEM,POS,ATTR")
    p.add_argument("--workers", type=int)
    p.add_argument("--data", help="corpus directory with schema.json and split JSONL files")


def _training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flexdoc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic corpus")
    _common(p)

    p = sub.add_parser("pretrain", help="IMP pre-training with random masking")
    _common(p)
    _training_flags(p)

    p = sub.add_parser("train", help="explicit multi-task training (EXP, EXP-FT) or per-task experts")
    _common(p)
    _training_flags(p)
    p.add_argument("--regime", default="exp", choices=["exp", "exp-ft", "expert"])
    p.add_argument("--init-checkpoint", help="IMP checkpoint to fine-tune (exp-ft)")

    p = sub.add_parser("eval", help="score a checkpoint or baseline on a split")
    _common(p)
    p.add_argument("--checkpoint", action="append", default=[], help="model checkpoint (repeatable)")
    p.add_argument("--baseline", action="append", default=[], choices=["most-frequent", "oracle"])
    p.add_argument("--split", default="test")

    p = sub.add_parser("predict", help="fill __MASK__ fields of documents")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="JSONL documents containing __MASK__ values")

    p = sub.add_parser("render", help="render documents as SVG files")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--schema")

    p = sub.add_parser("grad-check", help="finite-difference check of the model gradient")
    _common(p)
    p.add_argument("--probes", type=int, default=200)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.tasks is not None:
        cfg.tasks = [t.strip() for t in args.tasks.split(",") if t.strip()]
    if args.workers is not None:
        cfg.workers = args.workers
    if args.data is not None:
        cfg.data["dir"] = args.data
    if getattr(args, "epochs", None) is not None:
        cfg.train["epochs"] = args.epochs
    if getattr(args, "batch_size", None) is not None:
        cfg.train["batch_size"] = args.batch_size
    try:
        parse_tasks(cfg.tasks)
    except ValueError as exc:
        raise ConfigError(f"tasks: {exc}", ["tasks"]) from exc
    return cfg


def _echo_config(cfg: RunConfig, command: str, extra: dict | None = None) -> None:
    os.makedirs(cfg.out, exist_ok=True)
    blob = {"command": command, **cfg.to_dict(), **(extra or {})}
    with open(os.path.join(cfg.out, f"{command}.config.json"), "w", encoding="utf-8") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_corpus(cfg: RunConfig, splits=("train", "val")):
    schema = load_schema(cfg.data_path("schema"))
    out = {}
    for name in splits:
        path = cfg.data_path(name)
        if not os.path.exists(path):
            if name == "val":
                out[name] = []
                continue
            raise CommandError(f"missing corpus file {path}")
        docs = read_jsonl(path, schema)
        for d in docs:
            problems = validate(d, schema)
            if problems:
                raise CommandError(f"{path}: document {d.id!r} does not match the schema: {problems[0]}")
        out[name] = docs
    return schema, out


# --------------------------------------------------------------------------- #
# commands
# --------------------------------------------------------------------------- #
def cmd_generate(cfg: RunConfig) -> dict:
    from .synth import write_corpus

    gen = cfg.generator_config()
    _echo_config(cfg, "generate", {"generator_effective": gen.to_dict()})
    return write_corpus(gen, cfg.out)


def _train(cfg: RunConfig, regime: str, init_checkpoint: str | None, command: str) -> dict:
    from .training import jsonl_logger, train

    tasks = parse_tasks(cfg.tasks)
    tcfg = cfg.train_config(regime=regime) if regime != "EXPERT" else None
    if regime == "EXP_FT" and not init_checkpoint:
        raise ConfigError("train --regime exp-ft requires --init-checkpoint", ["init_checkpoint"])
    schema, corpus = _load_corpus(cfg)
    _echo_config(cfg, command, {"regime": regime, "init_checkpoint": init_checkpoint})
    log_path = os.path.join(cfg.out, "train_log.jsonl")
    results = {}
    runs = [(regime, None)] if regime != "EXPERT" else [("EXPERT", str(t)) for t in tasks]
    for reg, expert_task in runs:
        if init_checkpoint:
            model, _ = load_checkpoint(init_checkpoint, schema)
        else:
            model = FlexDM(schema, cfg.model_config())
        if reg == "EXPERT":
            tcfg = cfg.train_config(regime="EXPERT", expert_task=expert_task)
            fit_tasks = parse_tasks([expert_task])
        else:
            fit_tasks = tasks
        res = train(model, corpus["train"], fit_tasks, tcfg, corpus["val"], fit_tasks, jsonl_logger(log_path))
        name = {"IMP": "imp", "EXP": "exp", "EXP_FT": "exp_ft"}.get(reg, f"expert-{expert_task}")
        path = os.path.join(cfg.out, f"{name}.ckpt")
        model.save(path, {"regime": reg, "tasks": [str(t) for t in fit_tasks], "train": tcfg.to_dict()})
        results[name] = {"checkpoint": path, "best_epoch": res.best_epoch, "best_score": res.best_score}
    return results


def cmd_eval(cfg: RunConfig, checkpoints, baselines, split: str) -> str:
    from .evaluation import Predictor

    tasks = parse_tasks(cfg.tasks)
    schema, corpus = _load_corpus(cfg, ("train", split) if "most-frequent" in baselines else (split,))
    docs = corpus[split]
    _echo_config(cfg, "eval", {"checkpoints": checkpoints, "baselines": baselines, "split": split})
    entries: list[tuple[str, Predictor]] = []
    params = {}
    for b in baselines:
        if b == "most-frequent":
            entries.append(("Most-frequent", FrequencyTable.fit(corpus["train"], schema).predictor()))
            params["Most-frequent"] = "0.0x"
        else:
            entries.append(("Oracle", _oracle_for(cfg, schema)))
    models = []
    for path in checkpoints:
        model, _ = load_checkpoint(path, schema)
        name = os.path.splitext(os.path.basename(path))[0]
        entries.append((name, model_predictor(model)))
        models.append((name, model.num_parameters()))
    if models:
        base = models[0][1]
        params.update({n: f"{k / base:.1f}x" for n, k in models})
    reports = [evaluate(p, docs, tasks, schema, seed=cfg.seed, name=n, workers=cfg.workers) for n, p in entries]
    with open(os.path.join(cfg.out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)
        fh.write("\n")
    return format_table(reports, [str(t) for t in tasks], params)


def _oracle_for(cfg: RunConfig, schema):
    from .synth import GeneratorConfig, oracle_predictor

    manifest = os.path.join(os.path.dirname(cfg.data_path("schema")), "manifest.json")
    if not os.path.exists(manifest):
        raise CommandError("the oracle baseline needs a corpus written by `flexdoc generate`")
    with open(manifest, encoding="utf-8") as fh:
        gen = GeneratorConfig.from_dict(json.load(fh)["generator"])
    if gen.schema.digest() != schema.digest():
        raise CommandError("manifest generator does not match the corpus schema")
    return oracle_predictor(gen)


def cmd_predict(cfg: RunConfig, checkpoint: str, input_path: str) -> str:
    model, _ = load_checkpoint(checkpoint)
    docs = read_jsonl(input_path, model.schema)
    _echo_config(cfg, "predict", {"checkpoint": checkpoint, "input": input_path})
    masks = [
        MaskSet((i, k) for i, el in enumerate(d.elements) for k, v in el.items() if v is MASK) for d in docs
    ]
    task_name = cfg.tasks[0] if len(cfg.tasks) == 1 else None
    tids = None
    if model.config.use_task_embedding:
        if task_name is None:
            raise ConfigError("this model needs a task id: pass exactly one task with --tasks", ["tasks"])
        tids = [model.task_index(task_name)] * len(docs)
    preds = []
    for start in range(0, len(docs), 256):
        chunk = slice(start, start + 256)
        preds += model.predict_many(docs[chunk], masks[chunk], None if tids is None else tids[chunk])
    out = os.path.join(cfg.out, "predictions.jsonl")
    write_jsonl(out, preds)
    return out


def cmd_render(cfg: RunConfig, input_path: str, schema_path: str | None) -> int:
    from .render import render_svg

    schema = load_schema(schema_path or cfg.data_path("schema"))
    docs = read_jsonl(input_path, schema)
    _echo_config(cfg, "render", {"input": input_path})
    for k, d in enumerate(docs):
        name = (d.id or f"doc{k}").replace("/", "_")
        with open(os.path.join(cfg.out, f"{name}.svg"), "w", encoding="utf-8") as fh:
            fh.write(render_svg(d, schema))
    return len(docs)


def cmd_grad_check(cfg: RunConfig, probes: int, eps: float, tol: float):
    from .diagnostics import model_grad_check

    _echo_config(cfg, "grad-check", {"probes": probes, "eps": eps, "tol": tol})
    return model_grad_check(seed=cfg.seed, probes=probes, eps=eps, tol=tol, model_overrides=cfg.model)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "generate":
            manifest = cmd_generate(cfg)
            print(json.dumps(manifest["splits"]))
        elif args.command == "pretrain":
            print(json.dumps(_train(cfg, "IMP", None, "pretrain"), indent=2))
        elif args.command == "train":
            regime = {"exp": "EXP", "exp-ft": "EXP_FT", "expert": "EXPERT"}[args.regime]
            print(json.dumps(_train(cfg, regime, args.init_checkpoint, "train"), indent=2))
        elif args.command == "eval":
            if not args.checkpoint and not args.baseline:
                raise ConfigError("eval needs --checkpoint or --baseline", ["checkpoint"])
            print(cmd_eval(cfg, args.checkpoint, args.baseline, args.split))
        elif args.command == "predict":
            print(cmd_predict(cfg, args.checkpoint, args.input))
        elif args.command == "render":
            print(cmd_render(cfg, args.input, args.schema))
        elif args.command == "grad-check":
            report = cmd_grad_check(cfg, args.probes, args.eps, args.tol)
            print(report)
            return 0 if report.passed else 1
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc), "keys": exc.keys}), file=sys.stderr)
        return 2
    except (CommandError, DocumentError, OSError, ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
