"""Differentiable bridge between the continuous parameter matrix and discrete tokens.

Three pieces: relaxed sampling with Gumbel noise, hard categorical sampling,
and embedding mixing so models can consume probability vectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .core import (
    ConfigError,
    InvalidInputError,
    SoftTokenSequence,
    ThetaMatrix,
    TokenSequence,
)

_EPS = 1e-20


@dataclass(frozen=True)
class EmbeddingTable:
    """A (V, d) lookup table of input embeddings."""

    vectors: torch.Tensor

    def __post_init__(self):
        if self.vectors.dim() != 2:
            raise InvalidInputError("embedding table must be 2-D (V, d)")

    @property
    def vocab_size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, seq: TokenSequence) -> torch.Tensor:
        if seq.vocab_size != self.vocab_size:
            raise InvalidInputError("sequence encoded against a different vocabulary size")
        return self.vectors[seq.to_tensor()]


@dataclass
class GumbelSample:
    """One relaxed sample, reproducible from (theta, T, noise_seed)."""

    soft: SoftTokenSequence
    noise_seed: int


def _fresh_seed(rng: torch.Generator) -> int:
    return int(torch.randint(0, 2**62, (1,), generator=rng).item())


def _gumbel_noise(shape, seed: int, dtype: torch.dtype) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    u = torch.rand(shape, generator=gen, dtype=dtype)
    return -torch.log(-torch.log(u + _EPS) + _EPS)


def _apply_frozen_onehot(probs: torch.Tensor, theta: ThetaMatrix) -> torch.Tensor:
    """Overwrite frozen rows with their deterministic one-hot (no gradient)."""
    if not theta.frozen_rows:
        return probs
    out = probs.clone()
    for row, tok in theta.frozen_tokens().items():
        onehot = torch.zeros(theta.vocab_size, dtype=probs.dtype)
        onehot[tok] = 1.0
        out[row] = onehot
    return out


def sample_gumbel_softmax(
    theta: ThetaMatrix,
    temperature: float,
    rng: torch.Generator,
) -> GumbelSample:
    """Draw one relaxed sample: softmax((theta + g) / T) with g ~ Gumbel(0, 1).

    Differentiable w.r.t. theta for the fixed drawn noise. Frozen rows bypass
    the noise entirely and emit a constant one-hot, so their gradient is zero
    by construction.
    """
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    seed = _fresh_seed(rng)
    g = _gumbel_noise(theta.values.shape, seed, theta.values.dtype)
    # torch.softmax subtracts the row max internally, so this is stable.
    probs = torch.softmax((theta.values + g) / temperature, dim=-1)
    probs = _apply_frozen_onehot(probs, theta)
    return GumbelSample(soft=SoftTokenSequence(probs=probs, is_relaxed=True), noise_seed=seed)


def replay_gumbel_softmax(
    theta: ThetaMatrix, temperature: float, noise_seed: int
) -> GumbelSample:
    """Re-create a relaxed sample from a recorded noise seed."""
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    g = _gumbel_noise(theta.values.shape, noise_seed, theta.values.dtype)
    probs = torch.softmax((theta.values + g) / temperature, dim=-1)
    probs = _apply_frozen_onehot(probs, theta)
    return GumbelSample(soft=SoftTokenSequence(probs=probs, is_relaxed=True), noise_seed=noise_seed)


def sample_categorical(theta: ThetaMatrix, rng: torch.Generator) -> TokenSequence:
    """Draw a discrete sequence, token i ~ Categorical(softmax(theta_i)).

    Frozen rows emit their fixed token deterministically.
    """
    with torch.no_grad():
        probs = torch.softmax(theta.values, dim=-1)
        ids = torch.multinomial(probs, 1, generator=rng).squeeze(-1)
        for row, tok in theta.frozen_tokens().items():
            ids[row] = tok
    return TokenSequence(ids=tuple(int(i) for i in ids), vocab_size=theta.vocab_size)


def mix_embeddings(probs: SoftTokenSequence, table: EmbeddingTable) -> torch.Tensor:
    """Convex combination of embedding rows: out_i = sum_j (pi_i)_j e(j)."""
    if probs.vocab_size != table.vocab_size:
        raise InvalidInputError(
            f"vocab mismatch: probs has V={probs.vocab_size}, table has V={table.vocab_size}"
        )
    return probs.probs @ table.vectors


def mix_embeddings_batch(probs: torch.Tensor, table: EmbeddingTable) -> torch.Tensor:
    """Batched variant over a (B, n, V) stack of probability rows."""
    if probs.shape[-1] != table.vocab_size:
        raise InvalidInputError("vocab mismatch between probability stack and table")
    return probs @ table.vectors
