"""Show which fields each completion task hides on a small synthetic document.

    python demos/masking_tasks.py --seed 3
"""

import argparse

import numpy as np

from flexdoc.masking import build_triplet, parse_tasks
from flexdoc.schema import NULL
from flexdoc.synth import GeneratorConfig, generate


def show(doc, mask, schema):
    types = schema.type_names
    for i, el in enumerate(doc.elements):
        hidden = [n for n in schema.names if (i, n) in mask]
        present = sum(el[n] is not NULL for n in schema.names)
        print(f"  {i:2d} {types[el['type']]:6s} {present:2d} fields, masked: {', '.join(hidden) or '-'}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = GeneratorConfig(train=1, val=0, test=0, seed=args.seed, min_elements=4, max_elements=6, check_gap=False)
    doc = generate(cfg)["train"][0]
    rng = np.random.default_rng(args.seed)
    for spec in parse_tasks(["ELEM", "POS", "ATTR", "IMG", "TXT", "RANDOM"]):
        trip = build_triplet(doc, spec, cfg.schema, rng)
        print(f"{spec} ({len(trip.mask)} fields)")
        show(doc, trip.mask, cfg.schema)


if __name__ == "__main__":
    main()
