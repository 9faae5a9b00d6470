"""Per-modality recurrent encoding of variable-length feature sequences.

Each modality (audio frames, token ids, video frames) runs through its own
single-layer unidirectional GRU; the encoder returns the full hidden-state
sequence plus the final valid state as the modality summary.  Padding rows
never influence any output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


@dataclass
class ModalitySequence:
    """Time-major features for one modality of one sample.

    ``features`` is (T, d_in) float for audio/video, or a 1-D integer token
    array for text.  ``length`` marks the valid prefix; any later rows are
    padding and are ignored everywhere downstream.
    """

    features: np.ndarray
    length: int

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim not in (1, 2):
            raise ValueError(f"features must be 1-D tokens or 2-D frames, got ndim={self.features.ndim}")
        if not 1 <= self.length <= self.features.shape[0]:
            raise ValueError(
                f"length {self.length} out of range for {self.features.shape[0]} rows"
            )

    @property
    def padded_steps(self) -> int:
        return self.features.shape[0]

    @property
    def is_tokens(self) -> bool:
        return self.features.ndim == 1


@dataclass
class GruParams:
    """Gate weights for one GRU: input-to-hidden (d_in, d_h), hidden-to-hidden
    (d_h, d_h) and a bias per gate (update z, reset r, candidate h)."""

    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    @property
    def input_dim(self) -> int:
        return self.w_z.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_z.shape[1]

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "GruParams":
        def w():
            return ad.parameter(glorot_uniform(rng, input_dim, hidden_dim))

        def u():
            return ad.parameter(glorot_uniform(rng, hidden_dim, hidden_dim))

        def b():
            return ad.parameter(np.zeros(hidden_dim))

        return cls(w(), u(), b(), w(), u(), b(), w(), u(), b())

    def named(self, prefix: str) -> dict:
        return {
            f"{prefix}.{name}": getattr(self, name)
            for name in ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")
        }


@dataclass
class EmbeddingTable:
    """Learned token embeddings; row per vocabulary entry."""

    matrix: Tensor
    unknown_index: int = 0

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def init(cls, vocab_size: int, dim: int, rng: np.random.Generator) -> "EmbeddingTable":
        return cls(ad.parameter(glorot_uniform(rng, vocab_size, dim)))

    def lookup(self, token_id: int) -> Tensor:
        if not 0 <= token_id < self.vocab_size:
            raise IndexError(
                f"token id {token_id} out of vocabulary range [0, {self.vocab_size})"
            )
        return ad.take_row(self.matrix, token_id)


@dataclass
class EncodedModality:
    """GRU outputs for one modality: hidden_states is (T, d_h) with rows past
    ``length`` exactly zero; last_state is the state at step length - 1."""

    hidden_states: Tensor
    last_state: Tensor
    length: int


def gru_cell(params: GruParams, h_prev: Tensor, x: Tensor) -> Tensor:
    """One GRU update.

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    cand = tanh(x W_h + (r * h) U_h + b_h)
    h' = z * h + (1 - z) * cand

    The update gate gates the previous state: z -> 1 copies h_prev through
    unchanged, z -> 0 replaces it with the candidate.
    """
    if x.shape != (params.input_dim,):
        raise ad.ShapeMismatchError(
            f"gru_cell: input shape {x.shape} does not match expected ({params.input_dim},)"
        )
    if h_prev.shape != (params.hidden_dim,):
        raise ad.ShapeMismatchError(
            f"gru_cell: hidden shape {h_prev.shape} does not match expected ({params.hidden_dim},)"
        )
    z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, params.w_z), ad.matmul(h_prev, params.u_z)), params.b_z))
    r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, params.w_r), ad.matmul(h_prev, params.u_r)), params.b_r))
    gated = ad.mul(r, h_prev)
    cand = ad.tanh(ad.add(ad.add(ad.matmul(x, params.w_h), ad.matmul(gated, params.u_h)), params.b_h))
    one_minus_z = ad.sub(ad.constant(np.ones(params.hidden_dim)), z)
    return ad.add(ad.mul(z, h_prev), ad.mul(one_minus_z, cand))


def encode(
    params: GruParams,
    seq: ModalitySequence,
    embedding: Optional[EmbeddingTable] = None,
) -> EncodedModality:
    """Run the GRU over the valid prefix of ``seq``.

    h_0 is zero.  Token sequences require ``embedding``.  Output rows at or
    past ``length`` are zero and carry no gradient.
    """
    if seq.length < 1:
        raise ValueError("encode: zero-length sequence")
    if seq.is_tokens and embedding is None:
        raise ValueError("encode: token sequence requires an embedding table")
    d_h = params.hidden_dim
    h = ad.constant(np.zeros(d_h))
    rows = []
    for t in range(seq.length):
        if seq.is_tokens:
            x = embedding.lookup(int(seq.features[t]))
        else:
            x = ad.constant(seq.features[t])
        h = gru_cell(params, h, x)
        rows.append(h)
    last_state = h
    for _ in range(seq.padded_steps - seq.length):
        rows.append(ad.constant(np.zeros(d_h)))
    return EncodedModality(ad.stack_rows(rows), last_state, seq.length)
