"""Train a small model, hide one element of a test document and fill it back in.

Writes before/after SVG files and decodes the predicted image feature to the
nearest asset of the test split.

    python demos/complete_document.py --epochs 20 --out demo_out
"""

import argparse
import os

import numpy as np

from flexdoc.evaluation import evaluate, model_predictor, score
from flexdoc.masking import apply_mask, element_mask, parse_tasks
from flexdoc.model import FlexDM, ModelConfig
from flexdoc.render import AssetGallery, nn_retrieve, render_svg
from flexdoc.synth import IMAGE, GeneratorConfig, generate
from flexdoc.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--out", default="demo_out")
    args = ap.parse_args()

    cfg = GeneratorConfig(train=600, val=100, test=100, seed=1)
    splits = generate(cfg)
    schema = cfg.schema
    tasks = parse_tasks(["ELEM", "POS", "ATTR", "IMG", "TXT"])
    model = FlexDM(schema, ModelConfig(d_model=64, num_layers=2, num_heads=4, ffn_dim=128))
    res = train(model, splits["train"], tasks, TrainConfig(batch_size=32, epochs=args.epochs, lr=1e-3, eval_every=5), splits["val"], tasks)
    print(f"trained in {res.seconds:.0f}s, best validation mean {res.best_score:.3f} at epoch {res.best_epoch}")
    print(evaluate(model_predictor(model), splits["test"], tasks, schema).scores)

    # pick a test document with an image element and hide that element
    doc = next(d for d in splits["test"] if any(e["type"] == IMAGE for e in d.elements))
    i = next(k for k, e in enumerate(doc.elements) if e["type"] == IMAGE)
    mask = element_mask(doc, [i], schema)
    pred = model.predict(apply_mask(doc, mask), mask)
    print(f"{doc.id}: element {i} restored with score {score(pred, doc, mask, schema):.3f}")
    for name in ("type", "left", "top", "width", "height"):
        print(f"  {name:6s} truth {doc.elements[i][name]!s:>4} predicted {pred.elements[i][name]!s:>4}")

    gallery = AssetGallery.from_documents(splits["test"], schema)
    if pred.elements[i]["type"] == IMAGE:
        hit = nn_retrieve(np.asarray(pred.elements[i]["image"]), gallery, "image")
        print(f"  nearest image asset {hit} (truth {doc.id}/{i})")

    os.makedirs(args.out, exist_ok=True)
    for tag, d in (("input", apply_mask(doc, mask)), ("prediction", pred), ("truth", doc)):
        path = os.path.join(args.out, f"{doc.id}-{tag}.svg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(render_svg(d, schema))
        print("wrote", path)


if __name__ == "__main__":
    main()
