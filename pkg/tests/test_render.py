import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from flexdoc.masking import MaskSet, apply_mask
from flexdoc.render import TYPE_COLORS, AssetGallery, count_rects, element_box, nn_retrieve, render_svg
from flexdoc.schema import Document, make_element
from flexdoc.synth import FILL, TEXT, crello_schema

SVG = "{http://www.w3.org/2000/svg}"


def gallery_of(vectors, attribute="image"):
    g = AssetGallery()
    for k, v in enumerate(vectors):
        g.add(attribute, str(k), v, {"k": k})
    return g


# --------------------------------------------------------------- retrieval
def test_query_equal_to_member(rng):
    vecs = rng.normal(size=(50, 8))
    g = gallery_of(vecs)
    for k in (0, 17, 49):
        assert nn_retrieve(vecs[k], g, "image") == str(k)


def test_single_asset_gallery(rng):
    g = gallery_of(rng.normal(size=(1, 4)))
    for _ in range(5):
        assert nn_retrieve(rng.normal(size=4), g, "image") == "0"


def test_matches_independent_scan(rng):
    for _ in range(5):
        vecs = rng.normal(size=(1000, 16))
        g = gallery_of(vecs)
        q = rng.normal(size=16)
        best, best_sim = None, -np.inf
        for k, v in enumerate(vecs):
            sim = sum(a * b for a, b in zip(q, v)) / (np.sqrt(sum(a * a for a in q)) * np.sqrt(sum(b * b for b in v)))
            if sim > best_sim:
                best, best_sim = k, sim
        assert nn_retrieve(q, g, "image") == str(best)


def test_scale_invariance(rng):
    g = gallery_of(rng.normal(size=(200, 6)))
    q = rng.normal(size=6)
    assert nn_retrieve(q, g, "image") == nn_retrieve(37.5 * q, g, "image")


def test_ties_go_to_lowest_id():
    g = AssetGallery()
    for aid in ("10", "9", "30"):
        g.add("text", aid, (1.0, 0.0))
    assert nn_retrieve((2.0, 0.0), g, "text") == "9"


def test_dim_mismatch_and_missing_attribute(rng):
    g = gallery_of(rng.normal(size=(3, 4)))
    with pytest.raises(ValueError):
        nn_retrieve(np.ones(5), g, "image")
    with pytest.raises(KeyError):
        nn_retrieve(np.ones(4), g, "text")
    with pytest.raises(ValueError):
        g.add("image", "x", np.ones(3))


def test_gallery_jsonl_round_trip(tmp_path, rng):
    g = gallery_of(rng.normal(size=(4, 3)))
    g.write_jsonl(tmp_path / "g.jsonl")
    back = AssetGallery.read_jsonl(tmp_path / "g.jsonl")
    ids, mat = back.matrix("image")
    assert ids == ["0", "1", "2", "3"] and np.array_equal(mat, g.matrix("image")[1])
    assert back.payload("image", "2") == {"k": 2}


def test_gallery_from_documents(small_corpus):
    cfg, splits = small_corpus
    g = AssetGallery.from_documents(splits["test"], cfg.schema)
    n_text = sum(isinstance(e["text"], tuple) for d in splits["test"] for e in d.elements)
    assert len(g.matrix("text")[0]) == n_text


# --------------------------------------------------------------------- SVG
@pytest.fixture
def schema():
    return crello_schema()


def test_empty_document_is_canvas_only(schema):
    svg = render_svg(Document((), id="empty"), schema)
    root = ET.fromstring(svg.split("\n", 1)[1])
    rects = root.findall(f"{SVG}rect")
    assert [r.get("class") for r in rects] == ["canvas"]
    assert root.get("version") == "1.1"


def test_full_canvas_element(schema):
    el = make_element(schema, type=FILL, left=0, top=0, width=63, height=63, color_r=1, color_g=2, color_b=3)
    svg = render_svg(Document((el,), id="f"), schema)
    rect = [r for r in ET.fromstring(svg.split("\n", 1)[1]).findall(f"{SVG}rect") if r.get("class") == "element"][0]
    assert (rect.get("x"), rect.get("y"), rect.get("width"), rect.get("height")) == ("0.00", "0.00", "400.00", "400.00")
    assert rect.get("fill") == TYPE_COLORS["fill"]
    assert element_box(el, schema) == (0.0, 0.0, 1.0, 1.0)


def test_colors_by_type_and_rect_count(small_corpus):
    cfg, splits = small_corpus
    for d in splits["test"][:5]:
        svg = render_svg(d, cfg.schema)
        assert count_rects(svg) == len(d)
        fills = re.findall(r'data-type="(\w+)"[^>]*fill="(#\w+)"', svg)
        assert all(TYPE_COLORS[t] == c for t, c in fills)


def test_missing_pos_is_flagged(schema):
    el = make_element(schema, type=TEXT, left=3, top=4, width=10, height=2, color_r=0, color_g=0, color_b=0, font=1, text=[0.0] * 16)
    d = apply_mask(Document((el, el), id="m"), MaskSet({(1, "left")}))
    svg = render_svg(d, schema)
    assert svg.count('data-missing="pos"') == 1
    assert count_rects(svg) == 1
    assert "stroke-dasharray" in svg


def test_deterministic_output(small_corpus):
    cfg, splits = small_corpus
    d = splits["test"][0]
    assert render_svg(d, cfg.schema) == render_svg(d, cfg.schema)
