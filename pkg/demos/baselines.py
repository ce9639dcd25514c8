"""Score the most-frequent baseline and the generator's Bayes oracle.

The gap between the two rows is the room a learned model has to work with.
At rho = 0 the documents carry no structure and the gap closes.

    python demos/baselines.py --rho 0.9
"""

import argparse

from flexdoc.evaluation import FrequencyTable, evaluate, format_table
from flexdoc.masking import parse_tasks
from flexdoc.synth import GeneratorConfig, generate, oracle_predictor


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rho", type=float, default=0.9)
    ap.add_argument("--docs", type=int, default=500)
    args = ap.parse_args()

    cfg = GeneratorConfig(train=args.docs, val=0, test=200, rho=args.rho, check_gap=False)
    splits = generate(cfg)
    tasks = parse_tasks(["ELEM", "POS", "ATTR", "IMG", "TXT"])
    table = FrequencyTable.fit(splits["train"], cfg.schema)
    reports = [
        evaluate(table.predictor(), splits["test"], tasks, cfg.schema, name="Most-frequent"),
        evaluate(oracle_predictor(cfg), splits["test"], tasks, cfg.schema, name="Oracle"),
    ]
    print(format_table(reports))


if __name__ == "__main__":
    main()
