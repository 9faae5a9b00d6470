"""Iterative cross-modal attention: the modality hopping mechanism.

One hop re-summarizes a single target modality by attending over its encoder
hidden states with a bilinear score against the fused context of the other
two modalities' current summaries.  Hops cycle over targets video, audio,
text; each hop replaces only the target's summary vector, and attention is
always computed over the original encoder states, never over summaries.

Hop targets and context pairs (context is concatenated in the listed order):

    hop 1: target V, context (A, T)
    hop 2: target A, context (T, V)
    hop 3: target T, context (A, V)
    hop 4: target V, context (A, T)   ... and so on, cycling V, A, T.

Before a modality has been hopped on, its "current summary" is the encoder
last state, so the fused output after one hop is
[last_A ; last_T ; summary_V].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gru import EncodedModality, glorot_uniform

AUDIO, TEXT, VIDEO = "A", "T", "V"
HOP_CYCLE: Tuple[str, ...] = (VIDEO, AUDIO, TEXT)
CONTEXT_PAIR: Dict[str, Tuple[str, str]] = {
    VIDEO: (AUDIO, TEXT),
    AUDIO: (TEXT, VIDEO),
    TEXT: (AUDIO, VIDEO),
}


@dataclass
class AttentionParams:
    """One bilinear map per target modality, each (2·d_h, d_h), shared by
    every hop that targets that modality."""

    w_a: Tensor
    w_t: Tensor
    w_v: Tensor

    @classmethod
    def init(cls, hidden_dim: int, rng: np.random.Generator) -> "AttentionParams":
        def w():
            return ad.parameter(glorot_uniform(rng, 2 * hidden_dim, hidden_dim))

        return cls(w(), w(), w())

    def for_target(self, modality: str) -> Tensor:
        return {AUDIO: self.w_a, TEXT: self.w_t, VIDEO: self.w_v}[modality]

    def weight_for(self, entry: "HopScheduleEntry") -> Tensor:
        return self.for_target(entry.target)

    def named(self, prefix: str = "attention") -> dict:
        return {
            f"{prefix}.w_a": self.w_a,
            f"{prefix}.w_t": self.w_t,
            f"{prefix}.w_v": self.w_v,
        }


@dataclass
class PerHopAttentionParams:
    """Config-switchable alternative: an independent bilinear map per hop."""

    weights: List[Tensor]

    @classmethod
    def init(cls, hidden_dim: int, n_hops: int, rng: np.random.Generator) -> "PerHopAttentionParams":
        return cls([ad.parameter(glorot_uniform(rng, 2 * hidden_dim, hidden_dim)) for _ in range(n_hops)])

    def weight_for(self, entry: "HopScheduleEntry") -> Tensor:
        return self.weights[entry.hop_index - 1]

    def named(self, prefix: str = "attention") -> dict:
        return {f"{prefix}.hop{k + 1}": w for k, w in enumerate(self.weights)}


@dataclass
class HopScheduleEntry:
    hop_index: int  # 1-based
    target: str
    context: Tuple[str, str]


@dataclass
class HopState:
    """Current per-modality summary vectors and how often each was updated."""

    rep: Dict[str, Tensor]
    update_counts: Dict[str, int]


@dataclass
class HopRecord:
    """Attention weights produced by one executed hop, for inspection."""

    entry: HopScheduleEntry
    weights: np.ndarray


def hop_schedule(n_hops: int) -> List[HopScheduleEntry]:
    """The fixed V, A, T target cycle with its context pairs."""
    if n_hops < 1:
        raise ValueError("hops must be >= 1")
    return [
        HopScheduleEntry(k, HOP_CYCLE[(k - 1) % 3], CONTEXT_PAIR[HOP_CYCLE[(k - 1) % 3]])
        for k in range(1, n_hops + 1)
    ]


def fuse_context(u: Tensor, v: Tensor) -> Tensor:
    """Fuse two summary vectors into one context vector by concatenation."""
    if u.data.ndim != 1 or v.data.ndim != 1 or u.shape != v.shape:
        raise ad.ShapeMismatchError(
            f"fuse_context: expected equal-length vectors, got {u.shape} and {v.shape}"
        )
    return ad.concat([u, v])


def attend(
    context: Tensor,
    target: EncodedModality,
    w: Tensor,
) -> Tuple[Tensor, Tensor]:
    """Bilinear attention of ``context`` over the target's hidden states.

    score_i = context^T W h_i over valid steps; weights are the masked
    softmax of the scores (padded positions get exactly 0); the summary is
    the weight-averaged hidden state.  Returns (summary, weights).
    """
    if target.length < 1:
        raise ValueError("attend: empty target")
    t_steps = target.hidden_states.shape[0]
    if context.shape != (w.shape[0],):
        raise ad.ShapeMismatchError(
            f"attend: context shape {context.shape} does not match W rows {w.shape}"
        )
    if target.hidden_states.shape[1] != w.shape[1]:
        raise ad.ShapeMismatchError(
            f"attend: hidden dim {target.hidden_states.shape} does not match W columns {w.shape}"
        )
    query = ad.matmul(context, w)  # (d_h,)
    scores = ad.matmul(target.hidden_states, query)  # (T,)
    mask = np.arange(t_steps) < target.length
    weights = ad.softmax(scores, mask=mask)
    summary = ad.matmul(weights, target.hidden_states)  # (d_h,)
    return summary, weights


def run_hops(
    encoded_a: EncodedModality,
    encoded_t: EncodedModality,
    encoded_v: EncodedModality,
    params: AttentionParams,
    n_hops: int,
) -> Tuple[Tensor, List[HopRecord]]:
    """Execute the hop schedule and fuse the final summaries.

    Returns the fused vector [rep_A ; rep_T ; rep_V] after the last hop, plus
    a per-hop record of attention weights.  Modalities never targeted keep
    their encoder last state in the fused output.
    """
    d_h = encoded_a.last_state.shape[0]
    for enc, name in ((encoded_t, "text"), (encoded_v, "video")):
        if enc.last_state.shape != (d_h,):
            raise ad.ShapeMismatchError(
                f"run_hops: {name} hidden dim {enc.last_state.shape} != audio {d_h}"
            )
    encoded = {AUDIO: encoded_a, TEXT: encoded_t, VIDEO: encoded_v}
    state = HopState(
        rep={m: encoded[m].last_state for m in (AUDIO, TEXT, VIDEO)},
        update_counts={AUDIO: 0, TEXT: 0, VIDEO: 0},
    )
    trace: List[HopRecord] = []
    for entry in hop_schedule(n_hops):
        c1, c2 = entry.context
        context = fuse_context(state.rep[c1], state.rep[c2])
        summary, weights = attend(context, encoded[entry.target], params.weight_for(entry))
        state.rep[entry.target] = summary
        state.update_counts[entry.target] += 1
        trace.append(HopRecord(entry, weights.data.copy()))
    fused = ad.concat([state.rep[AUDIO], state.rep[TEXT], state.rep[VIDEO]])
    return fused, trace


def trace_to_jsonable(sample_id: str, trace: Sequence[HopRecord]) -> dict:
    """Attention weights per hop in a JSON-ready structure."""
    return {
        "sample_id": sample_id,
        "hops": [
            {
                "hop": rec.entry.hop_index,
                "target": rec.entry.target,
                "context": list(rec.entry.context),
                "weights": [float(x) for x in rec.weights],
            }
            for rec in trace
        ],
    }
