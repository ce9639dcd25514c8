import json
import logging

import numpy as np
import pytest

from conftest import sample_schema
from flexdoc.evaluation import (
    FrequencyTable,
    ScoreReport,
    bde,
    evaluate,
    eval_triplets,
    field_score,
    format_table,
    iou,
    most_frequent_predict,
    score,
)
from flexdoc.masking import MaskSet, TaskSpec, apply_mask, parse_tasks
from flexdoc.schema import MASK, NULL, AttributeSpec, Document, Schema


def identity_predictor(targets):
    by_id = {d.id: d for d in targets}

    def predict(inputs, masks, task_name=None):
        return [by_id[d.id] for d in inputs]

    return predict


# ------------------------------------------------------------------ score
def test_all_correct(schema, doc):
    m = MaskSet({(0, "color"), (3, "font"), (4, "type")})
    assert score(doc, doc, m, schema) == 1.0


def test_one_of_two_correct(schema, doc):
    els = [dict(e) for e in doc.elements]
    els[3]["font"] = 0
    assert score(doc.replace(els), doc, MaskSet({(0, "color"), (3, "font")}), schema) == 0.5


def test_negated_vector_scores_zero(schema, doc):
    els = [dict(e) for e in doc.elements]
    els[1]["image"] = tuple(-x for x in els[1]["image"])
    assert score(doc.replace(els), doc, MaskSet({(1, "image")}), schema) == 0.0


def test_scaled_vector_scores_one(schema, doc):
    els = [dict(e) for e in doc.elements]
    els[1]["image"] = tuple(7 * x for x in els[1]["image"])
    assert score(doc.replace(els), doc, MaskSet({(1, "image")}), schema) == pytest.approx(1.0)


def test_zero_norm_half_and_logged(caplog):
    with caplog.at_level(logging.DEBUG, logger="flexdoc.evaluation"):
        assert field_score((0.0, 0.0), (1.0, 0.0), False) == 0.5
    assert "zero-norm" in caplog.text


def test_special_prediction_scores_zero():
    assert field_score(NULL, 3, True) == 0.0
    assert field_score(MASK, (1.0,), False) == 0.0


def test_empty_mask_rejected(schema, doc):
    with pytest.raises(ValueError):
        score(doc, doc, MaskSet(), schema)


def test_score_order_invariant(schema, doc, rng):
    els = [dict(e) for e in doc.elements]
    els[2]["color"] = 9
    els[4]["text"] = (1.0, 0.0, 0.0, 0.0)
    pred = doc.replace(els)
    m = MaskSet({(2, "color"), (4, "text"), (0, "position")})
    perm = rng.permutation(5)
    inv = np.argsort(perm)
    pp = pred.replace([pred.elements[j] for j in perm])
    pt = doc.replace([doc.elements[j] for j in perm])
    pm = MaskSet((int(inv[i]), n) for i, n in m)
    assert score(pp, pt, pm, schema) == pytest.approx(score(pred, doc, m, schema), abs=1e-15)


# ------------------------------------------------------------ most frequent
def table_schema():
    return Schema([AttributeSpec("type", "categorical", 3, "TYPE"), AttributeSpec("vec", "numerical", 2, "IMG")])


def docs_with_types(counts, vecs=((1.0, 0.0), (0.0, 1.0))):
    els = []
    for t, c in enumerate(counts):
        els += [{"type": t, "vec": vecs[len(els) % len(vecs)]} for _ in range(c)]
    return [Document(tuple(els), id="x")]


def test_most_frequent_argmax():
    s = table_schema()
    table = FrequencyTable.fit(docs_with_types([5, 9, 2]), s)
    assert table.value("type") == 1
    d = Document(({"type": MASK, "vec": (0.3, 0.3)},) * 2)
    m = MaskSet({(0, "type"), (1, "type")})
    out = most_frequent_predict(d, m, table)
    assert [e["type"] for e in out.elements] == [1, 1]


def test_most_frequent_tie_lowest_id():
    s = Schema([AttributeSpec("type", "categorical", 2, "TYPE")])
    table = FrequencyTable.fit([Document(tuple({"type": t} for t in [1, 0, 1, 0, 0, 1, 1, 0]))], s)
    assert list(table.counts["type"]) == [4, 4]
    assert table.value("type") == 0


def test_most_frequent_mean():
    table = FrequencyTable.fit(docs_with_types([1, 1, 0]), table_schema())
    assert table.value("vec") == (0.5, 0.5)


def test_frequency_table_unknown_attribute_and_round_trip():
    table = FrequencyTable.fit(docs_with_types([2, 1, 1]), table_schema())
    with pytest.raises(KeyError):
        table.value("nope")
    back = FrequencyTable.from_dict(json.loads(json.dumps(table.to_dict())))
    assert back.value("type") == table.value("type") and back.value("vec") == table.value("vec")


def test_nulls_not_counted(schema, doc):
    table = FrequencyTable.fit([doc], schema)
    assert table.counts["font"].sum() == 2
    assert np.allclose(table.means["image"], doc.elements[1]["image"])


# ---------------------------------------------------------------- harness
TASKS = parse_tasks(["ELEM", "POS", "ATTR", "IMG", "TXT"])


def test_identity_scores_one(small_corpus):
    cfg, splits = small_corpus
    rep = evaluate(identity_predictor(splits["test"]), splits["test"], TASKS, cfg.schema, seed=0)
    assert rep.scores == {str(t): 1.0 for t in TASKS}
    assert all(0 < c <= len(splits["test"]) for c in rep.counts.values())


def test_same_seed_same_report(small_corpus):
    cfg, splits = small_corpus
    table = FrequencyTable.fit(splits["train"], cfg.schema)
    a = evaluate(table.predictor(), splits["test"], TASKS, cfg.schema, seed=3)
    b = evaluate(table.predictor(), splits["test"], TASKS, cfg.schema, seed=3)
    c = evaluate(table.predictor(), splits["test"], TASKS, cfg.schema, seed=3, workers=4, batch_size=3)
    assert a.to_dict() == b.to_dict() == c.to_dict()
    assert all(0.0 <= v <= 1.0 for v in a.scores.values())


def test_eval_masks_depend_on_id_not_position(small_corpus):
    cfg, splits = small_corpus
    docs = splits["test"]
    fwd = {t.target.id: t.mask for t in eval_triplets(docs, TaskSpec("ELEM"), cfg.schema, seed=1)}
    rev = {t.target.id: t.mask for t in eval_triplets(docs[::-1], TaskSpec("ELEM"), cfg.schema, seed=1)}
    assert fwd == rev


def test_empty_mask_documents_skipped(schema, doc):
    texts = doc.replace(doc.elements[3:])
    rep = evaluate(identity_predictor([texts, doc]), [texts, doc], [TaskSpec("IMG")], schema)
    assert rep.counts["IMG"] == 1


def test_report_json_and_table(small_corpus):
    cfg, splits = small_corpus
    table = FrequencyTable.fit(splits["train"], cfg.schema)
    rep = evaluate(table.predictor(), splits["test"], TASKS, cfg.schema, name="Most-frequent")
    blob = json.loads(rep.to_json())
    assert blob["name"] == "Most-frequent" and set(blob["scores"]) == {str(t) for t in TASKS}
    assert blob["config_hash"] == rep.config_hash
    text = format_table([rep], [str(t) for t in TASKS])
    assert text.splitlines()[0].split()[:3] == ["Model", "#par.", "ELEM"]
    assert "Most-frequent" in text


# ------------------------------------------------------------- box metrics
def test_iou_bde_examples():
    a, b = (0.0, 0.0, 0.5, 0.5), (0.25, 0.25, 0.5, 0.5)
    assert iou(a, b) == pytest.approx(1 / 7)
    assert bde(a, b) == pytest.approx(0.25)
    assert iou(a, a) == 1.0 and bde(a, a) == 0.0
    assert iou(a, (0.6, 0.6, 0.1, 0.1)) == 0.0


def test_box_symmetry(rng):
    for _ in range(200):
        a, b = rng.random(4), rng.random(4)
        assert iou(a, b) == iou(b, a)
        assert bde(a, b) == bde(b, a)


def test_negative_size_rejected():
    with pytest.raises(ValueError):
        iou((0, 0, -0.1, 0.2), (0, 0, 0.1, 0.1))
    with pytest.raises(ValueError):
        bde((0, 0, 0.1, 0.2), (0, 0, 0.1, -0.1))


def grid_iou(a, b, n=64):
    c = (np.arange(n) + 0.5) / n
    x, y = np.meshgrid(c, c)

    def raster(box):
        l, t, w, h = box
        return (x >= l) & (x < l + w) & (y >= t) & (y < t + h)

    ra, rb = raster(a), raster(b)
    union = (ra | rb).sum()
    return (ra & rb).sum() / union if union else 1.0


def random_box(rng):
    """A box inside the unit canvas with sides of at least 0.15."""
    w, h = 0.15 + rng.random(2) * 0.5
    return np.array([rng.random() * (1 - w), rng.random() * (1 - h), w, h])


def random_bin_box(rng, bins=64):
    """A box whose edges sit on the ``bins`` grid used by the position attributes."""
    w, h = rng.integers(1, bins // 2, size=2)
    return np.array([rng.integers(0, bins - w + 1), rng.integers(0, bins - h + 1), w, h]) / bins


def test_iou_pixel_grid_oracle(rng):
    for _ in range(300):
        a, b = random_bin_box(rng), random_bin_box(rng)
        assert abs(iou(a, b) - grid_iou(a, b)) <= 0.02


def test_iou_fine_grid_continuous_boxes(rng):
    # off-grid edges need a finer raster for the same tolerance
    for _ in range(100):
        a, b = random_box(rng), random_box(rng)
        assert abs(iou(a, b) - grid_iou(a, b, 1024)) <= 0.02
