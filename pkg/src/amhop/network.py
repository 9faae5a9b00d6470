"""Whole-model assembly: encoders + hopping + classifier head, and the
concat-fusion baseline, with cross-entropy loss and checkpoint persistence.

Two model kinds share the three GRU encoders and the softmax head:

* ``amh``  — run the hop schedule, classify the fused [rep_A; rep_T; rep_V].
* ``mdre`` — concatenate the encoder last states, pass them through one
  tanh dense layer, classify that.

Loss is the mean negative log-likelihood computed from logits via
log-sum-exp; probabilities are only materialized for prediction/reporting.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gru import EmbeddingTable, EncodedModality, GruParams, ModalitySequence, encode, glorot_uniform
from .hopping import AttentionParams, HopRecord, PerHopAttentionParams, hop_schedule, run_hops

DEFAULT_LABELS: Tuple[str, ...] = (
    "angry",
    "excite",
    "happy",
    "sad",
    "frustrated",
    "surprise",
    "neutral",
)

CHECKPOINT_MAGIC = b"AMH1"


@dataclass
class ModelConfig:
    kind: str = "amh"  # "amh" or "mdre"
    n_hops: int = 3
    hidden_dim: int = 200
    embed_dim: int = 100
    vocab_size: int = 5000
    audio_dim: int = 120
    video_dim: int = 2048
    labels: Tuple[str, ...] = DEFAULT_LABELS
    per_hop_attention: bool = False

    def __post_init__(self):
        self.labels = tuple(self.labels)
        if self.kind not in ("amh", "mdre"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "amh" and self.n_hops < 1:
            raise ValueError("hops must be >= 1")

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_hops": self.n_hops,
            "hidden_dim": self.hidden_dim,
            "embed_dim": self.embed_dim,
            "vocab_size": self.vocab_size,
            "audio_dim": self.audio_dim,
            "video_dim": self.video_dim,
            "labels": list(self.labels),
            "per_hop_attention": self.per_hop_attention,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "labels": tuple(d["labels"])})


@dataclass
class ClassifierParams:
    """Softmax head: w_out (in_dim, C), b_out (C,)."""

    w_out: Tensor
    b_out: Tensor

    @classmethod
    def init(cls, in_dim: int, n_classes: int, rng: np.random.Generator) -> "ClassifierParams":
        return cls(
            ad.parameter(glorot_uniform(rng, in_dim, n_classes)),
            ad.parameter(np.zeros(n_classes)),
        )

    def named(self, prefix: str = "classifier") -> dict:
        return {f"{prefix}.w_out": self.w_out, f"{prefix}.b_out": self.b_out}


@dataclass
class FusionDenseParams:
    """The baseline's tanh dense layer between concat and head."""

    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "FusionDenseParams":
        return cls(
            ad.parameter(glorot_uniform(rng, in_dim, out_dim)),
            ad.parameter(np.zeros(out_dim)),
        )

    def named(self, prefix: str = "fusion") -> dict:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


@dataclass
class ModelParams:
    """All learnable parameters plus the configuration they were built from."""

    config: ModelConfig
    gru_a: GruParams
    gru_t: GruParams
    gru_v: GruParams
    embedding: EmbeddingTable
    classifier: ClassifierParams
    attention: Optional[Union[AttentionParams, PerHopAttentionParams]] = None
    fusion: Optional[FusionDenseParams] = None

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        d_h = config.hidden_dim
        gru_a = GruParams.init(config.audio_dim, d_h, rng)
        gru_t = GruParams.init(config.embed_dim, d_h, rng)
        gru_v = GruParams.init(config.video_dim, d_h, rng)
        embedding = EmbeddingTable.init(config.vocab_size, config.embed_dim, rng)
        attention = None
        fusion = None
        if config.kind == "amh":
            if config.per_hop_attention:
                attention = PerHopAttentionParams.init(d_h, config.n_hops, rng)
            else:
                attention = AttentionParams.init(d_h, rng)
            head_in = 3 * d_h
        else:
            fusion = FusionDenseParams.init(3 * d_h, d_h, rng)
            head_in = d_h
        classifier = ClassifierParams.init(head_in, config.n_classes, rng)
        return cls(config, gru_a, gru_t, gru_v, embedding, classifier, attention, fusion)

    def named_parameters(self) -> dict:
        named = {}
        named.update(self.gru_a.named("gru_a"))
        named.update(self.gru_t.named("gru_t"))
        named.update(self.gru_v.named("gru_v"))
        named["embedding.matrix"] = self.embedding.matrix
        if self.attention is not None:
            named.update(self.attention.named())
        if self.fusion is not None:
            named.update(self.fusion.named())
        named.update(self.classifier.named())
        return named

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    def copy_values(self) -> dict:
        """Snapshot of parameter arrays (for early-stopping restore)."""
        return {name: t.data.copy() for name, t in self.named_parameters().items()}

    def load_values(self, values: dict) -> None:
        for name, t in self.named_parameters().items():
            t.data = values[name].copy()


def head_logits(fused: Tensor, classifier: ClassifierParams) -> Tensor:
    return ad.add(ad.matmul(fused, classifier.w_out), classifier.b_out)


def classify(fused: Tensor, classifier: ClassifierParams) -> Tensor:
    """Class probability vector for a fused representation."""
    return ad.softmax(head_logits(fused, classifier))


def cross_entropy(logits: Union[Tensor, Sequence[Tensor]], labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood from unnormalized logits.

    Computed per row as logsumexp(row) - row[label], never by taking logs of
    already-softmaxed probabilities.
    """
    if isinstance(logits, Tensor):
        if logits.data.ndim != 2:
            raise ad.ShapeMismatchError(
                f"cross_entropy: expected (batch, classes) logits, got {logits.shape}"
            )
        rows: List[Tensor] = [ad.take_row(logits, j) for j in range(logits.shape[0])]
    else:
        rows = list(logits)
    if len(rows) != len(labels):
        raise ValueError(f"cross_entropy: {len(rows)} rows but {len(labels)} labels")
    total = None
    for row, label in zip(rows, labels):
        label = int(label)
        if not 0 <= label < row.shape[0]:
            raise IndexError(f"label {label} out of range for {row.shape[0]} classes")
        nll = ad.sub(ad.logsumexp(row), ad.pick(row, label))
        total = nll if total is None else ad.add(total, nll)
    return ad.scale(total, 1.0 / len(rows))


def _encode_all(sample, params: ModelParams) -> Tuple[EncodedModality, EncodedModality, EncodedModality]:
    enc_a = encode(params.gru_a, sample.audio)
    enc_t = encode(params.gru_t, sample.text, embedding=params.embedding)
    enc_v = encode(params.gru_v, sample.video)
    return enc_a, enc_t, enc_v


def forward_logits(sample, params: ModelParams) -> Tuple[Tensor, Optional[List[HopRecord]]]:
    """Unnormalized class scores for one sample (either model kind)."""
    enc_a, enc_t, enc_v = _encode_all(sample, params)
    if params.config.kind == "amh":
        fused, trace = run_hops(enc_a, enc_t, enc_v, params.attention, params.config.n_hops)
        return head_logits(fused, params.classifier), trace
    concat_states = ad.concat([enc_a.last_state, enc_t.last_state, enc_v.last_state])
    hidden = ad.tanh(ad.add(ad.matmul(concat_states, params.fusion.w), params.fusion.b))
    return head_logits(hidden, params.classifier), None


def forward_amh(sample, params: ModelParams) -> Tuple[Tensor, List[HopRecord]]:
    """Class probabilities plus per-hop attention trace (amh kind only)."""
    if params.config.kind != "amh":
        raise ValueError("forward_amh requires an amh-kind model")
    logits, trace = forward_logits(sample, params)
    return ad.softmax(logits), trace


def forward_mdre(sample, params: ModelParams) -> Tensor:
    """Class probabilities for the concat-fusion baseline."""
    if params.config.kind != "mdre":
        raise ValueError("forward_mdre requires an mdre-kind model")
    logits, _ = forward_logits(sample, params)
    return ad.softmax(logits)


# --- plain-numpy evaluation twin --------------------------------------------
#
# Inference and finite-difference probing only need loss/score values, not a
# graph.  This vectorized re-statement of the forward math is kept exactly in
# step with the taped path (tests assert agreement to 1e-12) and doubles as
# an independently coded forward for the gradient oracle.


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.where(
        x >= 0,
        1.0 / (1.0 + np.exp(-np.abs(x))),
        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))),
    )


def _np_encode(gru: GruParams, x_seq: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Hidden states over the valid steps; input projections precomputed."""
    xz = x_seq @ gru.w_z.data + gru.b_z.data
    xr = x_seq @ gru.w_r.data + gru.b_r.data
    xh = x_seq @ gru.w_h.data + gru.b_h.data
    u_z, u_r, u_h = gru.u_z.data, gru.u_r.data, gru.u_h.data
    h = np.zeros(gru.hidden_dim)
    states = np.empty((x_seq.shape[0], gru.hidden_dim))
    for t in range(x_seq.shape[0]):
        z = _np_sigmoid(xz[t] + h @ u_z)
        r = _np_sigmoid(xr[t] + h @ u_r)
        cand = np.tanh(xh[t] + (r * h) @ u_h)
        h = z * h + (1.0 - z) * cand
        states[t] = h
    return states, h


def _np_attend(context: np.ndarray, states: np.ndarray, w: np.ndarray) -> np.ndarray:
    scores = states @ (context @ w)
    e = np.exp(scores - scores.max())
    return (e / e.sum()) @ states


def _np_fused(sample, params: ModelParams) -> np.ndarray:
    """Head input (fused vector or dense-layer output), plain numpy."""
    states = {}
    rep = {}
    for key, gru, seq in (
        ("A", params.gru_a, sample.audio),
        ("T", params.gru_t, sample.text),
        ("V", params.gru_v, sample.video),
    ):
        if seq.is_tokens:
            x_seq = params.embedding.matrix.data[seq.features[: seq.length]]
        else:
            x_seq = seq.features[: seq.length]
        states[key], rep[key] = _np_encode(gru, x_seq)
    if params.config.kind == "amh":
        for entry in hop_schedule(params.config.n_hops):
            c1, c2 = entry.context
            context = np.concatenate([rep[c1], rep[c2]])
            w = params.attention.weight_for(entry)
            rep[entry.target] = _np_attend(context, states[entry.target], w.data)
        return np.concatenate([rep["A"], rep["T"], rep["V"]])
    concat_states = np.concatenate([rep["A"], rep["T"], rep["V"]])
    return np.tanh(concat_states @ params.fusion.w.data + params.fusion.b.data)


def fast_logits(sample, params: ModelParams) -> np.ndarray:
    return _np_fused(sample, params) @ params.classifier.w_out.data + params.classifier.b_out.data


def fast_loss(samples: Sequence, params: ModelParams) -> float:
    """Mean cross-entropy of the plain-numpy forward (float, no graph)."""
    total = 0.0
    for sample in samples:
        logits = fast_logits(sample, params)
        m = logits.max()
        total += m + np.log(np.exp(logits - m).sum()) - logits[sample.label]
    return total / len(samples)


def predict_probs(sample, params: ModelParams) -> np.ndarray:
    """Inference-only probability vector (no graph recorded)."""
    logits = fast_logits(sample, params)
    e = np.exp(logits - logits.max())
    return e / e.sum()


def batch_loss(samples: Sequence, params: ModelParams) -> Tensor:
    """Mean cross-entropy over per-sample forward passes."""
    rows = []
    labels = []
    for sample in samples:
        logits, _ = forward_logits(sample, params)
        rows.append(logits)
        labels.append(sample.label)
    return cross_entropy(rows, labels)


# --- checkpoint persistence ------------------------------------------------
#
# Layout: magic "AMH1", u32 config length + UTF-8 JSON config, u32 tensor
# count, then per tensor: u32 name length, name bytes, u32 rank, rank u64
# extents, row-major little-endian float64 payload.  Round-trips bit-exactly.


def _write_u32(buf: io.BufferedIOBase, value: int) -> None:
    buf.write(struct.pack("<I", value))


def _read_u32(buf: io.BufferedIOBase) -> int:
    return struct.unpack("<I", buf.read(4))[0]


def save_checkpoint(path: str, params: ModelParams) -> None:
    named = params.named_parameters()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        config_bytes = json.dumps(params.config.to_dict(), sort_keys=True).encode("utf-8")
        _write_u32(fh, len(config_bytes))
        fh.write(config_bytes)
        _write_u32(fh, len(named))
        for name in sorted(named):
            data = np.ascontiguousarray(named[name].data, dtype="<f8")
            name_bytes = name.encode("utf-8")
            _write_u32(fh, len(name_bytes))
            fh.write(name_bytes)
            _write_u32(fh, data.ndim)
            for extent in data.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(data.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (bad magic {magic!r})")
        config = ModelConfig.from_dict(json.loads(fh.read(_read_u32(fh)).decode("utf-8")))
        params = ModelParams.init(config, np.random.default_rng(0))
        named = params.named_parameters()
        n_tensors = _read_u32(fh)
        if n_tensors != len(named):
            raise ValueError(
                f"{path}: checkpoint has {n_tensors} tensors, model expects {len(named)}"
            )
        for _ in range(n_tensors):
            name = fh.read(_read_u32(fh)).decode("utf-8")
            rank = _read_u32(fh)
            extents = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(rank))
            payload = fh.read(8 * int(np.prod(extents, dtype=np.int64)))
            data = np.frombuffer(payload, dtype="<f8").reshape(extents).astype(np.float64)
            if name not in named:
                raise ValueError(f"{path}: unexpected tensor {name!r}")
            if named[name].data.shape != data.shape:
                raise ValueError(
                    f"{path}: tensor {name!r} has shape {data.shape}, expected {named[name].data.shape}"
                )
            named[name].data = data
    return params
