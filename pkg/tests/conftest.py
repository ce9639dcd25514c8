"""Shared fixtures: small hand-built schemas and a tiny synthetic corpus."""

import numpy as np
import pytest

from flexdoc.schema import AttributeSpec, Document, Schema, make_element
from flexdoc.synth import GeneratorConfig, generate

SHAPE, IMAGE, TEXT, FILL = 0, 1, 2, 3

ACCEPTANCE = {
    1: "gradient correctness",
    2: "permutation equivariance",
    3: "metric oracles",
    4: "masking contracts",
    5: "overfit smoke test",
    6: "synthetic benchmark",
    7: "ablation directions",
    8: "determinism and persistence",
}
_results = pytest.StashKey[dict]()


def sample_schema() -> Schema:
    """Seven attributes covering every group and both modalities."""
    return Schema(
        [
            AttributeSpec("type", "categorical", 4, "TYPE"),
            AttributeSpec("position", "numerical", 2, "POS"),
            AttributeSpec("size", "numerical", 2, "POS"),
            AttributeSpec("color", "categorical", 16, "ATTR", (SHAPE, TEXT, FILL)),
            AttributeSpec("font", "categorical", 8, "ATTR", (TEXT,)),
            AttributeSpec("image", "numerical", 4, "IMG", (IMAGE,)),
            AttributeSpec("text", "numerical", 4, "TXT", (TEXT,)),
        ],
        ("shape", "image", "text", "fill"),
    )


def sample_document(n: int = 5) -> Document:
    """Fill, image, shape, text, text (truncated to ``n`` elements)."""
    s = sample_schema()
    rows = [
        make_element(s, type=FILL, position=(0.0, 0.0), size=(1.0, 1.0), color=3),
        make_element(s, type=IMAGE, position=(0.1, 0.1), size=(0.5, 0.4), image=(1.0, 0.0, 0.5, 0.2)),
        make_element(s, type=SHAPE, position=(0.6, 0.1), size=(0.2, 0.2), color=7),
        make_element(s, type=TEXT, position=(0.1, 0.6), size=(0.8, 0.1), color=0, font=2, text=(0.3, 0.1, 0.9, 0.0)),
        make_element(s, type=TEXT, position=(0.1, 0.8), size=(0.5, 0.1), color=1, font=5, text=(0.0, 1.0, 0.2, 0.4)),
    ]
    return Document(tuple(rows[:n]), id=f"sample-{n}")


def ten_attribute_schema() -> Schema:
    """Ten attributes; three of them apply to images only."""
    return Schema(
        [
            AttributeSpec("type", "categorical", 4, "TYPE"),
            AttributeSpec("left", "categorical", 64, "POS"),
            AttributeSpec("top", "categorical", 64, "POS"),
            AttributeSpec("width", "categorical", 64, "POS"),
            AttributeSpec("height", "categorical", 64, "POS"),
            AttributeSpec("color", "categorical", 16, "ATTR"),
            AttributeSpec("text", "numerical", 3, "TXT", (TEXT,)),
            AttributeSpec("image", "numerical", 3, "IMG", (IMAGE,)),
            AttributeSpec("filter", "categorical", 5, "ATTR", (IMAGE,)),
            AttributeSpec("crop", "categorical", 4, "ATTR", (IMAGE,)),
        ]
    )


@pytest.fixture
def schema():
    return sample_schema()


@pytest.fixture
def doc():
    return sample_document()


@pytest.fixture(scope="session")
def small_corpus():
    cfg = GeneratorConfig(train=64, val=16, test=16, seed=11, check_gap=False)
    return cfg, generate(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance
def pytest_configure(config):
    config.stash[_results] = {}


@pytest.fixture
def acceptance(request):
    """``acceptance(n, part, ok, detail)`` records one checked part of criterion ``n``."""
    store = request.config.stash[_results]

    def record(n: int, part: str, ok: bool, detail: str = "") -> bool:
        store.setdefault(n, []).append((part, bool(ok), detail))
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_results, {})
    if not any("test_acceptance" in k for k in _collected(terminalreporter)):
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in ACCEPTANCE.items():
        parts = store.get(n)
        if not parts:
            tr.write_line(f"[{n}] NOT RUN  {title}")
            continue
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{p}: {'ok' if ok else 'FAILED'} ({d})" if d else f"{p}: {'ok' if ok else 'FAILED'}" for p, ok, d in parts)
        tr.write_line(f"[{n}] {status}  {title} | {detail}")


def _collected(tr):
    for reports in tr.stats.values():
        for r in reports:
            nodeid = getattr(r, "nodeid", "")
            if nodeid:
                yield nodeid
