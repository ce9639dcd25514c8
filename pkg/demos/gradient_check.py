"""Finite-difference check of the full model loss in float64.

    python demos/gradient_check.py --seeds 3
"""

import argparse

from flexdoc.diagnostics import model_grad_check


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--probes", type=int, default=200)
    args = ap.parse_args()
    size = dict(d_model=64, num_layers=4, num_heads=4, ffn_dim=128, dropout=0.1)
    for seed in range(args.seeds):
        rep = model_grad_check(seed=seed, probes=args.probes, model_overrides=size)
        print(f"seed {seed}: {rep}")
        if rep.worst:
            print(f"  worst probe {rep.worst[0]}{list(rep.worst[1])}")


if __name__ == "__main__":
    main()
