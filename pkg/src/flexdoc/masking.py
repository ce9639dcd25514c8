"""Masking strategies and design tasks expressed as masking patterns."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .schema import MASK, NULL, Document, Schema

TASK_GROUPS = {"POS": ("POS",), "ATTR": ("ATTR",), "IMG": ("IMG",), "TXT": ("TXT",)}
TASK_NAMES = ("ELEM", "POS", "ATTR", "IMG", "TXT", "RANDOM")


class MaskSet(frozenset):
    """Set of ``(element_index, attribute_name)`` pairs to predict."""

    def sorted(self, schema: Schema | None = None) -> list[tuple[int, str]]:
        if schema is None:
            return sorted(self)
        order = {n: i for i, n in enumerate(schema.names)}
        return sorted(self, key=lambda e: (e[0], order[e[1]]))

    def __or__(self, other):
        return MaskSet(frozenset.__or__(self, other))

    def __repr__(self) -> str:
        return f"MaskSet({sorted(self)!r})"


@dataclass(frozen=True)
class TaskSpec:
    name: str
    groups: tuple[str, ...] = ()
    p: float = 0.15

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise ValueError(f"unknown task {self.name!r}; expected one of {TASK_NAMES}")
        if self.name in TASK_GROUPS and not self.groups:
            object.__setattr__(self, "groups", TASK_GROUPS[self.name])
        if "TYPE" in self.groups:
            raise ValueError("TYPE is never a prediction target")
        if self.name == "RANDOM" and not 0.0 < self.p < 1.0:
            raise ValueError("RANDOM task needs 0 < p < 1")

    def __str__(self) -> str:
        return f"RANDOM({self.p:g})" if self.name == "RANDOM" else self.name


def task(name: str, p: float = 0.15) -> TaskSpec:
    """Parse a task name such as ``"ELEM"``, ``"pos"`` or ``"RANDOM(0.2)"``."""
    name = name.strip()
    upper = name.upper()
    if upper.startswith("RANDOM(") and upper.endswith(")"):
        return TaskSpec("RANDOM", p=float(name[7:-1]))
    return TaskSpec(upper, p=p)


def parse_tasks(names) -> list[TaskSpec]:
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    return [t if isinstance(t, TaskSpec) else task(t) for t in names]


@dataclass(frozen=True, eq=False)
class Triplet:
    input: Document
    target: Document
    mask: MaskSet
    task: TaskSpec | None = field(default=None)


def _non_null(document: Document, schema: Schema):
    for i, el in enumerate(document.elements):
        for name in schema.names:
            if el[name] is not NULL:
                yield i, name


def element_mask(document: Document, element_indices, schema: Schema, rng=None) -> MaskSet:
    """Mask every non-NULL field of the selected elements."""
    entries = []
    n = len(document)
    for i in element_indices:
        if not 0 <= i < n:
            raise IndexError(f"element index {i} out of range for {n} elements")
        el = document.elements[i]
        entries.extend((i, name) for name in schema.names if el[name] is not NULL)
    return MaskSet(entries)


def attribute_mask(document: Document, groups, schema: Schema) -> MaskSet:
    """Mask every non-NULL field whose attribute is in one of ``groups``."""
    groups = set(groups)
    if not groups:
        raise ValueError("attribute_mask needs at least one group")
    names = [a.name for a in schema if a.group in groups]
    return MaskSet(
        (i, name)
        for i, el in enumerate(document.elements)
        for name in names
        if el[name] is not NULL
    )


def random_mask(document: Document, p: float, schema: Schema, rng: np.random.Generator) -> MaskSet:
    """Include each non-NULL field independently with probability ``p``.

    Empty draws are redrawn, so the result is conditioned on being non-empty.
    Returns an empty set only when the document has no non-NULL field.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    fields = list(_non_null(document, schema))
    if not fields:
        return MaskSet()
    while True:
        keep = rng.random(len(fields)) < p
        if keep.any():
            return MaskSet(f for f, k in zip(fields, keep) if k)


def apply_mask(document: Document, mask: MaskSet) -> Document:
    rows: dict[int, list[str]] = {}
    for i, name in mask:
        rows.setdefault(i, []).append(name)
    elements = list(document.elements)
    for i, names in rows.items():
        el = dict(elements[i])
        for name in names:
            el[name] = MASK
        elements[i] = el
    return document.replace(elements)


def task_mask(document: Document, spec: TaskSpec, schema: Schema, rng: np.random.Generator) -> MaskSet:
    if spec.name == "ELEM":
        if len(document) == 0:
            raise ValueError("ELEM needs at least one element")
        return element_mask(document, [int(rng.integers(len(document)))], schema)
    if spec.name == "RANDOM":
        return random_mask(document, spec.p, schema, rng)
    return attribute_mask(document, spec.groups, schema)


def build_triplet(target: Document, spec: TaskSpec, schema: Schema, rng: np.random.Generator) -> Triplet:
    """Make ``(input, target, mask)`` for one task.

    Tasks that find nothing to mask (IMG on a document without images) give an
    empty mask; callers skip or resample those.
    """
    if target.has_mask():
        raise ValueError("target document already contains MASK values")
    mask = task_mask(target, spec, schema, rng)
    return Triplet(apply_mask(target, mask), target, mask, spec)


def sample_task(tasks: Sequence[TaskSpec], rng: np.random.Generator) -> TaskSpec:
    if not tasks:
        raise ValueError("task list is empty")
    return tasks[int(rng.integers(len(tasks)))]


def restore(triplet: Triplet) -> Document:
    """Overwrite the masked fields of the input with the target values."""
    elements = [dict(e) for e in triplet.input.elements]
    for i, name in triplet.mask:
        elements[i][name] = triplet.target.elements[i][name]
    return triplet.input.replace(elements)
