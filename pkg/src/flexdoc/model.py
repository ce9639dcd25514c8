"""The masked field prediction network.

Shape legend: ``B`` batch size, ``S`` padded element count, ``D`` model
width, ``H`` attention heads.

Each field is embedded by its attribute's encoder and the embeddings of an
element are summed into one vector per element. A stack of transformer
blocks mixes information across elements, and one linear head per attribute
maps every element vector back to field space.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .masking import MaskSet
from .schema import MASK, NULL, Document, Schema

NEG_INF = -1e9
_MAGIC = b"FLEXDOC1"


@dataclass
class ModelConfig:
    d_model: int = 256
    num_layers: int = 4
    num_heads: int = 8
    ffn_dim: int = 1024
    dropout: float = 0.1
    use_positional_embedding: bool = False
    use_task_embedding: bool = False
    use_attention: bool = True
    max_elements: int = 50
    task_names: tuple[str, ...] = ()
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError("d_model must be divisible by num_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.use_task_embedding and not self.task_names:
            raise ValueError("use_task_embedding needs task_names")
        self.task_names = tuple(self.task_names)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task_names"] = list(self.task_names)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# --------------------------------------------------------------------------- #
# batch tensorisation
# --------------------------------------------------------------------------- #
@dataclass
class EncodedBatch:
    """Array form of a padded batch.

    Categorical ids use ``C`` for NULL and ``C + 1`` for MASK. Numerical
    attributes carry ``(values, code)`` where code is 0 for a real vector,
    1 for NULL and 2 for MASK.
    """

    cat: dict[str, np.ndarray]
    num: dict[str, tuple[np.ndarray, np.ndarray]]
    pad_mask: np.ndarray
    task_ids: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.pad_mask.shape


def doc_arrays(doc: Document, schema: Schema, dtype=np.float32) -> dict:
    """Unpadded array form of one document (see :class:`EncodedBatch`)."""
    n = len(doc)
    out = {}
    for a in schema:
        if a.is_categorical:
            ids = np.full(n, a.size, dtype=np.int64)
            for i, el in enumerate(doc.elements):
                v = el[a.name]
                if v is MASK:
                    ids[i] = a.size + 1
                elif v is not NULL:
                    ids[i] = v
            out[a.name] = ids
        else:
            vals = np.zeros((n, a.size), dtype=dtype)
            code = np.ones(n, dtype=np.int64)
            for i, el in enumerate(doc.elements):
                v = el[a.name]
                if v is MASK:
                    code[i] = 2
                elif v is not NULL:
                    code[i] = 0
                    vals[i] = v
            out[a.name] = (vals, code)
    return out


def collate(arrays: Sequence[dict], schema: Schema, masks: Sequence[MaskSet] | None = None, task_ids=None) -> EncodedBatch:
    """Pad per-document arrays into a batch, optionally writing MASK codes."""
    if not arrays:
        raise ValueError("empty batch")
    type_name = schema.type_attr.name
    lengths = [len(a[type_name]) for a in arrays]
    B, S = len(arrays), max(lengths)
    pad = np.arange(S)[None, :] < np.asarray(lengths)[:, None]
    cat, num = {}, {}
    for a in schema:
        if a.is_categorical:
            ids = np.full((B, S), a.size, dtype=np.int64)
            for b, arr in enumerate(arrays):
                ids[b, : lengths[b]] = arr[a.name]
            cat[a.name] = ids
        else:
            dtype = arrays[0][a.name][0].dtype
            vals = np.zeros((B, S, a.size), dtype=dtype)
            code = np.ones((B, S), dtype=np.int64)
            for b, arr in enumerate(arrays):
                vals[b, : lengths[b]] = arr[a.name][0]
                code[b, : lengths[b]] = arr[a.name][1]
            num[a.name] = (vals, code)
    if masks is not None:
        for b, m in enumerate(masks):
            for i, name in m:
                if name in cat:
                    cat[name][b, i] = schema[name].size + 1
                else:
                    num[name][1][b, i] = 2
                    num[name][0][b, i] = 0.0
    tids = None if task_ids is None else np.asarray(task_ids, dtype=np.int64)
    return EncodedBatch(cat, num, pad, tids)


def encode_documents(
    documents: Sequence[Document], schema: Schema, dtype=np.float32, task_ids=None
) -> EncodedBatch:
    """Pad documents to a common length and convert them to arrays."""
    return collate([doc_arrays(d, schema, dtype) for d in documents], schema, task_ids=task_ids)


def mask_targets(targets: Sequence[Document], masks: Sequence[MaskSet], schema: Schema):
    """Group masked ground-truth values by attribute.

    Returns ``{attr: (batch_idx, elem_idx, values)}`` with values an int
    array (categorical) or a 2-D float array (numerical).
    """
    out = {}
    for a in schema:
        bs, es, vs = [], [], []
        for b, (doc, m) in enumerate(zip(targets, masks)):
            for i, name in sorted(m):
                if name == a.name:
                    bs.append(b)
                    es.append(i)
                    vs.append(doc.elements[i][name])
        if bs:
            if a.is_categorical:
                values = np.asarray(vs, dtype=np.int64)
            else:
                values = np.asarray(vs, dtype=np.float64)
            out[a.name] = (np.asarray(bs), np.asarray(es), values)
    return out


# --------------------------------------------------------------------------- #
# model
# --------------------------------------------------------------------------- #
def _is_decayed(name: str) -> bool:
    """Weight decay skips embedding tables and layer-norm parameters."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf not in ("table", "special", "gamma", "beta")


class FlexDM:
    """Encoder, transformer blocks and per-attribute decoders."""

    def __init__(self, schema: Schema, config: ModelConfig | None = None, params: dict | None = None):
        self.schema = schema
        self.config = config or ModelConfig()
        self.dtype = np.dtype(self.config.dtype)
        if params is None:
            params = self._init_params(np.random.default_rng(self.config.seed))
        self.params: dict[str, Tensor] = params

    # ------------------------------------------------------------------ init
    def _init_params(self, rng: np.random.Generator) -> dict[str, Tensor]:
        cfg, D = self.config, self.config.d_model
        shapes: list[tuple[str, tuple, str]] = []
        for a in self.schema:
            if a.is_categorical:
                shapes.append((f"enc.{a.name}.table", (a.size + 2, D), "emb"))
            else:
                shapes += [
                    (f"enc.{a.name}.proj", (a.size, D), "lin"),
                    (f"enc.{a.name}.bias", (D,), "zero"),
                    (f"enc.{a.name}.special", (2, D), "emb"),
                ]
        if cfg.use_positional_embedding:
            shapes.append(("pos.table", (cfg.max_elements, D), "emb"))
        if cfg.use_task_embedding:
            shapes.append(("task.table", (len(cfg.task_names), D), "emb"))
        for l in range(cfg.num_layers):
            p = f"blocks.{l}"
            if cfg.use_attention:
                shapes += [
                    (f"{p}.ln1.gamma", (D,), "one"),
                    (f"{p}.ln1.beta", (D,), "zero"),
                    (f"{p}.attn.wqkv", (D, 3 * D), "lin"),
                    # no key bias: it shifts every logit of a query equally
                    (f"{p}.attn.bq", (D,), "zero"),
                    (f"{p}.attn.bv", (D,), "zero"),
                    (f"{p}.attn.wo", (D, D), "lin"),
                    (f"{p}.attn.bo", (D,), "zero"),
                ]
            shapes += [
                (f"{p}.ln2.gamma", (D,), "one"),
                (f"{p}.ln2.beta", (D,), "zero"),
                (f"{p}.ffn.w1", (D, cfg.ffn_dim), "lin"),
                (f"{p}.ffn.b1", (cfg.ffn_dim,), "zero"),
                (f"{p}.ffn.w2", (cfg.ffn_dim, D), "lin"),
                (f"{p}.ffn.b2", (D,), "zero"),
            ]
        shapes += [("final_ln.gamma", (D,), "one"), ("final_ln.beta", (D,), "zero")]
        for a in self.schema:
            shapes += [(f"dec.{a.name}.w", (D, a.size), "lin"), (f"dec.{a.name}.b", (a.size,), "zero")]

        params = {}
        for name, shape, init in shapes:
            if init == "emb":
                arr = rng.normal(0.0, 0.02, shape)
            elif init == "lin":
                arr = rng.normal(0.0, shape[0] ** -0.5, shape)
            elif init == "one":
                arr = np.ones(shape)
            else:
                arr = np.zeros(shape)
            params[name] = Tensor(arr.astype(self.dtype), requires_grad=True, name=name)
        return params

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def decay_mask(self) -> dict[str, bool]:
        return {name: _is_decayed(name) for name in self.params}

    # ----------------------------------------------------------------- layers
    def encode(self, batch: EncodedBatch, order: Sequence[str] | None = None, train=False, rng=None) -> Tensor:
        """Sum of per-field embeddings for every element -> (B, S, D).

        With the task embedding on, the task vector is prepended at
        position 0, giving (B, S + 1, D).
        """
        P, cfg = self.params, self.config
        B, S = batch.shape
        h = None
        for name in order or self.schema.names:
            a = self.schema[name]
            if a.is_categorical:
                e = ag.embedding(P[f"enc.{name}.table"], batch.cat[name])
            else:
                vals, code = batch.num[name]
                real = (code == 0)[..., None].astype(self.dtype)
                proj = ag.add(ag.matmul(Tensor(vals.astype(self.dtype)), P[f"enc.{name}.proj"]), P[f"enc.{name}.bias"])
                special = ag.embedding(P[f"enc.{name}.special"], np.maximum(code - 1, 0))
                e = ag.add(ag.mul(proj, real), ag.mul(special, 1.0 - real))
            h = e if h is None else ag.add(h, e)
        if cfg.use_positional_embedding:
            if S > cfg.max_elements:
                raise ValueError(f"{S} elements exceed max_elements={cfg.max_elements}")
            h = ag.add(h, ag.embedding(P["pos.table"], np.arange(S))[None])
        if cfg.use_task_embedding:
            if batch.task_ids is None:
                raise ValueError("model uses a task embedding but the batch has no task ids")
            t = ag.embedding(P["task.table"], batch.task_ids)
            h = ag.concat([ag.reshape(t, (B, 1, cfg.d_model)), h], axis=1)
        return ag.dropout(h, cfg.dropout, rng, train)

    def _attention(self, x: Tensor, bias: np.ndarray, prefix: str, train, rng) -> Tensor:
        P, cfg = self.params, self.config
        B, S, D = x.shape
        H = cfg.num_heads
        dh = D // H
        qkv = ag.transpose(ag.reshape(ag.matmul(x, P[f"{prefix}.wqkv"]), (B, S, 3, H, dh)), (2, 0, 3, 1, 4))
        q = ag.add(qkv[0], ag.reshape(P[f"{prefix}.bq"], (1, H, 1, dh)))  # B,H,S,dh
        k = qkv[1]
        v = ag.add(qkv[2], ag.reshape(P[f"{prefix}.bv"], (1, H, 1, dh)))
        logits = ag.add(ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), dh ** -0.5), bias)
        attn = ag.dropout(ag.softmax(logits, axis=-1), cfg.dropout, rng, train)
        out = ag.reshape(ag.transpose(ag.matmul(attn, v), (0, 2, 1, 3)), (B, S, D))
        return ag.add(ag.matmul(out, P[f"{prefix}.wo"]), P[f"{prefix}.bo"])

    def _ffn(self, x: Tensor, prefix: str, train, rng) -> Tensor:
        P = self.params
        hidden = ag.relu(ag.add(ag.matmul(x, P[f"{prefix}.w1"]), P[f"{prefix}.b1"]))
        hidden = ag.dropout(hidden, self.config.dropout, rng, train)
        return ag.add(ag.matmul(hidden, P[f"{prefix}.w2"]), P[f"{prefix}.b2"])

    def transform(self, h: Tensor, pad_mask: np.ndarray, train=False, rng=None) -> Tensor:
        """Pre-norm transformer blocks; padded keys are excluded from attention."""
        P, cfg = self.params, self.config
        if h.shape[1] == pad_mask.shape[1] + 1:
            pad_mask = np.concatenate([np.ones((pad_mask.shape[0], 1), bool), pad_mask], axis=1)
        bias = np.where(pad_mask, 0.0, NEG_INF).astype(self.dtype)[:, None, None, :]
        x = h
        for l in range(cfg.num_layers):
            p = f"blocks.{l}"
            if cfg.use_attention:
                y = ag.layer_norm(x, P[f"{p}.ln1.gamma"], P[f"{p}.ln1.beta"])
                x = ag.add(x, ag.dropout(self._attention(y, bias, f"{p}.attn", train, rng), cfg.dropout, rng, train))
            y = ag.layer_norm(x, P[f"{p}.ln2.gamma"], P[f"{p}.ln2.beta"])
            x = ag.add(x, ag.dropout(self._ffn(y, f"{p}.ffn", train, rng), cfg.dropout, rng, train))
        return ag.layer_norm(x, P["final_ln.gamma"], P["final_ln.beta"])

    def hidden(self, batch: EncodedBatch, train=False, rng=None) -> Tensor:
        """Element states after the transformer, task slot removed -> (B, S, D)."""
        h = self.transform(self.encode(batch, train=train, rng=rng), batch.pad_mask, train, rng)
        if self.config.use_task_embedding:
            h = h[:, 1:, :]
        return h

    def decode_head(self, h: Tensor, name: str) -> Tensor:
        """Apply one attribute head to hidden states of any leading shape."""
        return ag.add(ag.matmul(h, self.params[f"dec.{name}.w"]), self.params[f"dec.{name}.b"])

    def decode(self, h: Tensor) -> dict[str, Tensor]:
        """Logits (categorical) or vectors (numerical) for every attribute."""
        return {a.name: self.decode_head(h, a.name) for a in self.schema}

    # ------------------------------------------------------------- training
    def loss(self, batch: EncodedBatch, targets: Mapping, train=False, rng=None, normalizer: float | None = None) -> Tensor:
        """Masked-field loss of a batch, averaged over documents.

        ``targets`` comes from :func:`mask_targets`. Each document contributes
        the sum of cross-entropy (categorical) and per-field mean squared
        error (numerical) over its masked fields.
        """
        h = self.hidden(batch, train, rng)
        B, S, D = h.shape
        flat = ag.reshape(h, (B * S, D))
        total = None
        for name, (bs, es, values) in targets.items():
            rows = ag.take_rows(flat, bs * S + es)
            out = self.decode_head(rows, name)
            if self.schema[name].is_categorical:
                term = ag.cross_entropy(out, values)
            else:
                term = ag.mse_sum(out, values)
            total = term if total is None else ag.add(total, term)
        if total is None:
            raise ValueError("loss needs a non-empty mask")
        return ag.scale(total, 1.0 / (normalizer or B))

    # ------------------------------------------------------------ inference
    def predict_many(self, inputs: Sequence[Document], masks: Sequence[MaskSet], task_ids=None) -> list[Document]:
        """Fill the masked fields of several documents in one forward pass.

        The element type is resolved first (taken from the input, or the
        argmax of the type head when masked); masked fields that do not apply
        to that type are predicted as NULL.
        """
        for doc, m in zip(inputs, masks):
            _check_mask(doc, m)
        batch = encode_documents(inputs, self.schema, self.dtype, task_ids)
        h = self.hidden(batch, train=False).data
        out_docs = []
        type_name = self.schema.type_attr.name
        for b, (doc, m) in enumerate(zip(inputs, masks)):
            if not m:
                out_docs.append(doc)
                continue
            rows = sorted({i for i, _ in m})
            hb = h[b, rows]
            elements = [dict(e) for e in doc.elements]
            preds = {}
            for r, i in enumerate(rows):
                preds[i] = hb[r]
            for i in rows:
                el = elements[i]
                if el[type_name] is MASK:
                    logits = self._head_np(preds[i], type_name)
                    el[type_name] = int(np.argmax(logits))
                t = el[type_name]
                for name in self.schema.names:
                    if el[name] is not MASK:
                        continue
                    a = self.schema[name]
                    if not a.applies(t):
                        el[name] = NULL
                    elif a.is_categorical:
                        el[name] = int(np.argmax(self._head_np(preds[i], name)))
                    else:
                        el[name] = tuple(float(x) for x in self._head_np(preds[i], name))
            out_docs.append(doc.replace(elements))
        return out_docs

    def _head_np(self, h: np.ndarray, name: str) -> np.ndarray:
        return h @ self.params[f"dec.{name}.w"].data + self.params[f"dec.{name}.b"].data

    def predict(self, input: Document, mask: MaskSet, task_id: int | None = None) -> Document:
        tids = None if task_id is None else [task_id]
        return self.predict_many([input], [mask], tids)[0]

    def task_index(self, task_name: str) -> int | None:
        if not self.config.use_task_embedding:
            return None
        names = self.config.task_names
        if task_name in names:
            return names.index(task_name)
        if task_name.startswith("RANDOM") and "RANDOM" in names:
            return names.index("RANDOM")
        raise KeyError(f"task {task_name!r} has no task embedding")

    # ----------------------------------------------------------- checkpoint
    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.dtype)

    def copy(self) -> "FlexDM":
        m = FlexDM(self.schema, ModelConfig.from_dict(self.config.to_dict()))
        m.load_state_dict(self.state_dict())
        return m

    def save(self, path, extra: Mapping | None = None) -> None:
        save_checkpoint(path, self, extra)

    @classmethod
    def load(cls, path, schema: Schema | None = None, dtype: str | None = None) -> "FlexDM":
        return load_checkpoint(path, schema, dtype)[0]


def _check_mask(doc: Document, mask: MaskSet) -> None:
    masked = {(i, k) for i, el in enumerate(doc.elements) for k, v in el.items() if v is MASK}
    if masked != set(mask):
        raise ValueError("input MASK tokens do not match the mask set")


# --------------------------------------------------------------------------- #
# checkpoint file: magic, u64 header length, JSON header, float32 LE payload
# --------------------------------------------------------------------------- #
def save_checkpoint(path, model: FlexDM, extra: Mapping | None = None) -> None:
    manifest, offset = [], 0
    for name, t in model.params.items():
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.data.size
    header = {
        "schema_hash": model.schema.digest(),
        "schema": model.schema.to_dict(),
        "config": model.config.to_dict(),
        "tensors": manifest,
        "extra": dict(extra or {}),
    }
    head = json.dumps(header).encode()
    payload = b"".join(np.ascontiguousarray(t.data, dtype="<f4").tobytes() for t in model.params.values())
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<Q", len(head)))
            fh.write(head)
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, schema: Schema | None = None, dtype: str | None = None):
    """Return ``(model, header)``; refuses a checkpoint built for another schema."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a flexdoc checkpoint")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        payload = np.frombuffer(fh.read(), dtype="<f4")
    stored = Schema.from_dict(header["schema"])
    if schema is not None and schema.digest() != header["schema_hash"]:
        raise ValueError("checkpoint schema hash does not match the given schema")
    cfg = dict(header["config"])
    if dtype is not None:
        cfg["dtype"] = dtype
    model = FlexDM(schema or stored, ModelConfig.from_dict(cfg))
    state = {}
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"]))
        state[entry["name"]] = payload[entry["offset"] : entry["offset"] + size].reshape(entry["shape"])
    model.load_state_dict(state)
    return model, header
