"""Attribute schema and the order-less multi-modal document model.

A document is a list of elements; each element maps every attribute name in
the schema to one field value. A field value is one of

* ``int`` -- category id of a categorical attribute,
* ``tuple[float, ...]`` -- feature vector of a numerical attribute,
* :data:`NULL` -- the field is inapplicable (or batch padding),
* :data:`MASK` -- the field is hidden and has to be predicted.

Element order is kept for storage but carries no meaning.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

MAX_ELEMENTS = 50
GROUPS = ("TYPE", "POS", "IMG", "TXT", "ATTR")


class Special(enum.Enum):
    NULL = "__NULL__"
    MASK = "__MASK__"

    def __repr__(self) -> str:
        return f"[{self.name}]"


NULL = Special.NULL
MASK = Special.MASK


class SchemaError(ValueError):
    pass


class DocumentError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeSpec:
    """One attribute (row of the field array).

    ``size`` is the cardinality for categorical attributes and the vector
    dimension for numerical ones. ``applies_to`` lists the element-type ids
    for which the attribute is meaningful; an empty tuple means all types.
    """

    name: str
    kind: str  # "categorical" | "numerical"
    size: int
    group: str
    applies_to: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("categorical", "numerical"):
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.group not in GROUPS:
            raise SchemaError(f"{self.name}: unknown group {self.group!r}")
        if self.kind == "categorical" and self.size < 2:
            raise SchemaError(f"{self.name}: cardinality must be >= 2")
        if self.kind == "numerical" and self.size < 1:
            raise SchemaError(f"{self.name}: dim must be >= 1")
        object.__setattr__(self, "applies_to", tuple(sorted(set(self.applies_to))))

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    def applies(self, type_id: int) -> bool:
        return not self.applies_to or type_id in self.applies_to

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "size": self.size,
            "group": self.group,
            "applies_to": list(self.applies_to),
        }


class Schema:
    """Ordered collection of attributes; the order is canonical everywhere."""

    def __init__(self, attributes: Sequence[AttributeSpec], type_names: Sequence[str] | None = None):
        self.attributes = tuple(attributes)
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("attribute names must be unique")
        type_attrs = [a for a in self.attributes if a.group == "TYPE"]
        if len(type_attrs) != 1 or not type_attrs[0].is_categorical:
            raise SchemaError("schema needs exactly one categorical TYPE attribute")
        self.type_attr = type_attrs[0]
        if self.type_attr.applies_to:
            raise SchemaError("the TYPE attribute must apply to every element type")
        for a in self.attributes:
            bad = [t for t in a.applies_to if not 0 <= t < self.type_attr.size]
            if bad:
                raise SchemaError(f"{a.name}: applies_to has unknown type ids {bad}")
        if type_names is not None and len(type_names) != self.type_attr.size:
            raise SchemaError("type_names length must equal the TYPE cardinality")
        self.type_names = tuple(type_names) if type_names is not None else None
        self._by_name = {a.name: a for a in self.attributes}

    def __getitem__(self, name: str) -> AttributeSpec:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __iter__(self):
        return iter(self.attributes)

    def __len__(self) -> int:
        return len(self.attributes)

    def __eq__(self, other) -> bool:
        return isinstance(other, Schema) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(self.digest())

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def group(self, group: str) -> tuple[AttributeSpec, ...]:
        return tuple(a for a in self.attributes if a.group == group)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"attributes": [a.to_dict() for a in self.attributes]}
        if self.type_names is not None:
            d["type_names"] = list(self.type_names)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        attrs = [
            AttributeSpec(
                name=a["name"],
                kind=a["kind"],
                size=int(a["size"]),
                group=a["group"],
                applies_to=tuple(a.get("applies_to", ())),
            )
            for a in d["attributes"]
        ]
        return cls(attrs, d.get("type_names"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Schema":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Document:
    """A vector graphic document: a set of elements sharing one schema.

    Elements are plain ``dict`` objects mapping attribute name to value and
    must be treated as read-only; every operation here returns new documents.
    """

    elements: tuple[dict, ...]
    id: str = ""
    canvas: Mapping[str, Any] | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))

    def __len__(self) -> int:
        return len(self.elements)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Document):
            return NotImplemented
        return (
            self.id == other.id
            and (self.canvas or None) == (other.canvas or None)
            and len(self.elements) == len(other.elements)
            and all(a == b for a, b in zip(self.elements, other.elements))
        )

    def replace(self, elements: Iterable[dict]) -> "Document":
        return Document(tuple(elements), self.id, self.canvas)

    def has_mask(self) -> bool:
        return any(v is MASK for e in self.elements for v in e.values())


def element_type(element: Mapping, schema: Schema):
    """Type id of an element, or the special token stored there."""
    return element[schema.type_attr.name]


def make_element(schema: Schema, **values) -> dict:
    """Build an element, filling attributes that do not apply with NULL.

    Vectors may be given as any sequence; they are stored as float tuples.
    """
    type_id = values[schema.type_attr.name]
    out = {}
    for a in schema:
        if a.name in values and values[a.name] is not NULL:
            v = values[a.name]
            if isinstance(v, Special):
                out[a.name] = v
            elif a.is_categorical:
                out[a.name] = int(v)
            else:
                out[a.name] = tuple(float(x) for x in v)
        elif isinstance(type_id, int) and not a.applies(type_id):
            out[a.name] = NULL
        elif a.name in values:
            out[a.name] = NULL
        else:
            raise DocumentError(f"missing value for applicable attribute {a.name!r}")
    unknown = set(values) - set(schema.names)
    if unknown:
        raise DocumentError(f"unknown attributes {sorted(unknown)}")
    return out


# --------------------------------------------------------------------------- #
# validation
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Violation:
    element: int | None
    attribute: str | None
    message: str

    def __str__(self) -> str:
        where = "document" if self.element is None else f"element {self.element}"
        if self.attribute:
            where += f", {self.attribute}"
        return f"{where}: {self.message}"


def _value_problem(value, attr: AttributeSpec) -> str | None:
    if isinstance(value, Special):
        return None
    if attr.is_categorical:
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            return f"categorical value must be an integer id, got {value!r}"
        if not 0 <= value < attr.size:
            return f"id out of range: {value} not in [0, {attr.size})"
        return None
    if not isinstance(value, tuple):
        return f"numerical value must be a tuple, got {type(value).__name__}"
    if len(value) != attr.size:
        return f"vector length {len(value)} != dim {attr.size}"
    if not all(isinstance(x, float) and math.isfinite(x) for x in value):
        return "vector components must be finite floats"
    return None


def validate(document: Document, schema: Schema) -> list[Violation]:
    """Check every element/document invariant; an empty list means valid."""
    report: list[Violation] = []
    n = len(document.elements)
    if n < 1:
        report.append(Violation(None, None, "document has no elements"))
    if n > MAX_ELEMENTS:
        report.append(Violation(None, None, f"too many elements: {n} > {MAX_ELEMENTS}"))
    type_name = schema.type_attr.name
    for i, el in enumerate(document.elements):
        missing = [a.name for a in schema if a.name not in el]
        for name in missing:
            report.append(Violation(i, name, "missing attribute"))
        for name in el:
            if name not in schema:
                report.append(Violation(i, name, "unknown attribute"))
        t = el.get(type_name, NULL)
        if t is NULL:
            report.append(Violation(i, type_name, "type must not be NULL"))
        for a in schema:
            if a.name not in el:
                continue
            v = el[a.name]
            problem = _value_problem(v, a)
            if problem:
                report.append(Violation(i, a.name, problem))
                continue
            if isinstance(t, int) and not a.applies(t) and v is not NULL:
                report.append(Violation(i, a.name, f"not applicable to type {t}, must be NULL"))
    return report


# --------------------------------------------------------------------------- #
# serialization
# --------------------------------------------------------------------------- #
def _encode_value(v):
    if isinstance(v, Special):
        return v.value
    if isinstance(v, tuple):
        return list(v)
    return int(v)


def document_to_dict(document: Document) -> dict:
    d: dict[str, Any] = {
        "id": document.id,
        "elements": [{k: _encode_value(v) for k, v in el.items()} for el in document.elements],
    }
    if document.canvas:
        d["canvas"] = dict(document.canvas)
    return d


def serialize(document: Document) -> str:
    """Canonical single-line JSON; floats are written with ``repr`` precision."""
    return json.dumps(document_to_dict(document), separators=(",", ":"), allow_nan=False)


def _decode_value(raw, attr: AttributeSpec, where: str):
    if isinstance(raw, str):
        try:
            return Special(raw)
        except ValueError:
            raise DocumentError(f"{where}: unknown sentinel {raw!r}") from None
    if attr.is_categorical:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise DocumentError(f"{where}: expected integer category id, got {raw!r}")
        if not 0 <= raw < attr.size:
            raise DocumentError(f"{where}: id out of range ({raw} not in [0, {attr.size}))")
        return raw
    if not isinstance(raw, list):
        raise DocumentError(f"{where}: expected a vector, got {raw!r}")
    if len(raw) != attr.size:
        raise DocumentError(f"{where}: wrong vector length {len(raw)} (dim {attr.size})")
    vec = tuple(float(x) for x in raw)
    if not all(math.isfinite(x) for x in vec):
        raise DocumentError(f"{where}: non-finite vector component")
    return vec


def document_from_dict(d: Mapping, schema: Schema) -> Document:
    elements = []
    for i, raw_el in enumerate(d["elements"]):
        unknown = set(raw_el) - set(schema.names)
        if unknown:
            raise DocumentError(f"element {i}: unknown attribute(s) {sorted(unknown)}")
        el = {}
        for a in schema:
            if a.name not in raw_el:
                raise DocumentError(f"element {i}: missing attribute {a.name!r}")
            el[a.name] = _decode_value(raw_el[a.name], a, f"element {i}, {a.name}")
        elements.append(el)
    return Document(tuple(elements), str(d.get("id", "")), d.get("canvas"))


def deserialize(text: str, schema: Schema) -> Document:
    return document_from_dict(json.loads(text), schema)


def write_jsonl(path, documents: Iterable[Document]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for doc in documents:
            fh.write(serialize(doc))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path, schema: Schema) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                docs.append(deserialize(line, schema))
            except (DocumentError, json.JSONDecodeError) as exc:
                raise DocumentError(f"{path}:{lineno}: {exc}") from exc
    return docs


def load_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return Schema.from_json(fh.read())


def save_schema(schema: Schema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(schema.to_json())
        fh.write("\n")


# --------------------------------------------------------------------------- #
# batching
# --------------------------------------------------------------------------- #
@dataclass(frozen=True, eq=False)
class Batch:
    documents: tuple[Document, ...]
    pad_mask: np.ndarray  # (B, S_max) bool, True at real elements

    @property
    def max_len(self) -> int:
        return self.pad_mask.shape[1]

    def unpad(self) -> list[Document]:
        lengths = self.pad_mask.sum(axis=1)
        return [d.replace(d.elements[:n]) for d, n in zip(self.documents, lengths)]


def padding_element(schema: Schema) -> dict:
    return {a.name: NULL for a in schema}


def pad_batch(documents: Sequence[Document], schema: Schema) -> Batch:
    if not documents:
        raise ValueError("pad_batch needs at least one document")
    lengths = [len(d) for d in documents]
    s_max = max(lengths)
    pad = padding_element(schema)
    padded = tuple(d.replace(d.elements + (pad,) * (s_max - len(d))) for d in documents)
    mask = np.arange(s_max)[None, :] < np.asarray(lengths)[:, None]
    return Batch(padded, mask)


# --------------------------------------------------------------------------- #
# discretization
# --------------------------------------------------------------------------- #
def discretize(value: float, bins: int) -> int:
    if bins < 1:
        raise ValueError("bins must be positive")
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"value {value} outside [0, 1]")
    return min(int(math.floor(value * bins)), bins - 1)


def undiscretize(index: int, bins: int) -> float:
    if not 0 <= index < bins:
        raise ValueError(f"bin {index} outside [0, {bins})")
    return (index + 0.5) / bins
