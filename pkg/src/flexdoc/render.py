"""Nearest-neighbour decoding of predicted features and SVG rendering."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .schema import Document, Schema

# element type name -> fill colour
TYPE_COLORS = {
    "shape": "#2ca02c",  # green: vector shape
    "image": "#e377c2",  # magenta
    "text": "#7b4fa0",  # purple
    "fill": "#f2d31b",  # yellow: solid fill
}
FALLBACK_COLOR = "#7f7f7f"


@dataclass
class AssetGallery:
    """Per-attribute collection of ``(asset_id, vector, payload)`` records."""

    assets: dict[str, list[tuple[str, np.ndarray, object]]] = field(default_factory=lambda: defaultdict(list))

    def add(self, attribute: str, asset_id: str, vector, payload=None) -> None:
        vec = np.asarray(vector, dtype=np.float64)
        items = self.assets[attribute]
        if items and items[0][1].shape != vec.shape:
            raise ValueError(f"{attribute}: vector dim {vec.shape} differs from gallery {items[0][1].shape}")
        items.append((str(asset_id), vec, payload))

    def matrix(self, attribute: str) -> tuple[list[str], np.ndarray]:
        items = self.assets.get(attribute)
        if not items:
            raise KeyError(f"gallery has no assets for {attribute!r}")
        return [i[0] for i in items], np.stack([i[1] for i in items])

    def payload(self, attribute: str, asset_id: str):
        for aid, _, payload in self.assets[attribute]:
            if aid == asset_id:
                return payload
        raise KeyError(asset_id)

    @classmethod
    def from_documents(cls, documents, schema: Schema) -> "AssetGallery":
        """Gallery of every numerical field in ``documents`` (e.g. a test split)."""
        gallery = cls()
        for doc in documents:
            for i, el in enumerate(doc.elements):
                for a in schema:
                    v = el[a.name]
                    if not a.is_categorical and isinstance(v, tuple):
                        gallery.add(a.name, f"{doc.id}/{i}", v, {"document": doc.id, "element": i})
        return gallery

    @classmethod
    def read_jsonl(cls, path) -> "AssetGallery":
        gallery = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    gallery.add(rec["attribute"], rec["asset_id"], rec["vector"], rec.get("payload"))
        return gallery

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for attribute, items in self.assets.items():
                for aid, vec, payload in items:
                    rec = {"attribute": attribute, "asset_id": aid, "vector": vec.tolist(), "payload": payload}
                    fh.write(json.dumps(rec) + "\n")


def nn_retrieve(query, gallery: AssetGallery, attribute: str) -> str:
    """Asset with the highest cosine similarity; ties go to the smallest id."""
    ids, mat = gallery.matrix(attribute)
    q = np.asarray(query, dtype=np.float64)
    if q.shape != mat.shape[1:]:
        raise ValueError(f"query dim {q.shape} does not match gallery dim {mat.shape[1:]}")
    norms = np.linalg.norm(mat, axis=1) * np.linalg.norm(q)
    sims = np.where(norms > 0, mat @ q / np.where(norms > 0, norms, 1.0), 0.0)
    best = sims.max()
    return min((aid for aid, s in zip(ids, sims) if s == best), key=_id_order)


def _id_order(asset_id: str):
    # numeric ids compare as numbers so that "9" precedes "10"
    return (0, int(asset_id), "") if asset_id.isdigit() else (1, 0, asset_id)


# --------------------------------------------------------------------------- #
# SVG
# --------------------------------------------------------------------------- #
@dataclass
class SvgStyle:
    width: int = 400
    height: int = 400
    stroke: str = "#333333"
    opacity: float = 0.6
    pos_attrs: tuple[str, str, str, str] = ("left", "top", "width", "height")
    colors: dict = field(default_factory=lambda: dict(TYPE_COLORS))


def element_box(element, schema: Schema, style: SvgStyle | None = None):
    """Normalised ``(left, top, width, height)`` or ``None`` if any part is missing.

    Position bins give the lower edge (``k / bins``); size bins are inclusive
    so that the last bin spans the whole canvas (``(k + 1) / bins``).
    """
    style = style or SvgStyle()
    vals = []
    for name in style.pos_attrs:
        if name not in schema or not isinstance(element[name], int):
            return None
        vals.append(element[name] / schema[name].size)
    left, top, w, h = vals
    w += 1 / schema[style.pos_attrs[2]].size
    h += 1 / schema[style.pos_attrs[3]].size
    return left, top, w, h


def _type_name(element, schema: Schema) -> str:
    t = element[schema.type_attr.name]
    if isinstance(t, int) and schema.type_names:
        return schema.type_names[t]
    return str(t)


def render_svg(document: Document, schema: Schema, style: SvgStyle | None = None) -> str:
    """One rectangle per element, coloured by element type.

    Elements whose position/size fields are missing or masked are drawn as a
    dashed outline at the canvas centre and flagged with ``data-missing``.
    """
    style = style or SvgStyle()
    W, H = style.width, style.height
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'  <title>{escape(document.id)}</title>',
        f'  <rect class="canvas" x="0" y="0" width="{W}" height="{H}" fill="#ffffff" stroke="{style.stroke}"/>',
    ]
    for i, el in enumerate(document.elements):
        tname = _type_name(el, schema)
        color = style.colors.get(tname, FALLBACK_COLOR)
        box = element_box(el, schema, style)
        if box is None:
            x, y, w, h = W * 0.4, H * 0.4, W * 0.2, H * 0.2
            lines.append(
                f'  <rect class="element" data-index="{i}" data-type="{escape(tname)}" data-missing="pos" '
                f'x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" fill="none" '
                f'stroke="{color}" stroke-dasharray="4 3"/>'
            )
            continue
        left, top, w, h = box
        lines.append(
            f'  <rect class="element" data-index="{i}" data-type="{escape(tname)}" '
            f'x="{left * W:.2f}" y="{top * H:.2f}" width="{w * W:.2f}" height="{h * H:.2f}" '
            f'fill="{color}" fill-opacity="{style.opacity}" stroke="{style.stroke}"/>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def count_rects(svg: str) -> int:
    return svg.count('class="element"') - svg.count('data-missing="pos"')

