"""Shared value types for the distributional text attack.

Token ids are 0-based everywhere. Tensors are torch tensors so that every
downstream quantity stays differentiable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class ConfigError(ValueError):
    """A configuration value or model/vocabulary pairing is invalid."""


@dataclass(frozen=True)
class Vocabulary:
    """A fixed token inventory with optional reserved positions.

    ``special_positions`` marks token ids (padding, separators, ...) that the
    attack must not touch; rows of theta at sequence positions holding these
    tokens are frozen.
    """

    tokens: tuple[str, ...]
    special_positions: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise InvalidInputError("vocabulary must contain at least one token")
        if len(set(self.tokens)) != len(self.tokens):
            raise InvalidInputError("vocabulary tokens must be unique")
        for p in self.special_positions:
            if not 0 <= p < len(self.tokens):
                raise InvalidInputError(f"special position {p} outside vocabulary")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def token_to_id(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    def id_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise InvalidInputError(f"token {token!r} not in vocabulary") from None


@dataclass(frozen=True)
class TokenSequence:
    """A discrete token sequence encoded against a vocabulary of size ``vocab_size``."""

    ids: tuple[int, ...]
    vocab_size: int

    def __post_init__(self):
        if len(self.ids) < 1:
            raise InvalidInputError("token sequence must be non-empty")
        if any(not 0 <= i < self.vocab_size for i in self.ids):
            raise InvalidInputError("token id outside vocabulary")

    def __len__(self) -> int:
        return len(self.ids)

    def to_tensor(self) -> torch.Tensor:
        return torch.tensor(self.ids, dtype=torch.long)

    def one_hot(self, dtype: torch.dtype = torch.float32) -> "SoftTokenSequence":
        probs = torch.zeros(len(self.ids), self.vocab_size, dtype=dtype)
        probs[torch.arange(len(self.ids)), self.to_tensor()] = 1.0
        return SoftTokenSequence(probs=probs, is_relaxed=False)


_ROW_SUM_TOL = 1e-6


@dataclass
class SoftTokenSequence:
    """A sequence of probability vectors over the vocabulary.

    ``is_relaxed`` distinguishes exact softmax(theta) rows from noisy
    relaxed samples.
    """

    probs: torch.Tensor  # (n, V)
    is_relaxed: bool = False

    def __post_init__(self):
        if self.probs.dim() != 2:
            raise InvalidInputError("probs must be a 2-D (n, V) matrix")
        with torch.no_grad():
            if torch.any(self.probs < -_ROW_SUM_TOL) or torch.any(self.probs > 1 + _ROW_SUM_TOL):
                raise InvalidInputError("probabilities must lie in [0, 1]")
            row_sums = self.probs.sum(dim=-1)
            if torch.any((row_sums - 1.0).abs() > 1e-4):
                raise InvalidInputError("each probability row must sum to 1")

    def __len__(self) -> int:
        return self.probs.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.probs.shape[1]


@dataclass
class ThetaMatrix:
    """The unconstrained (n, V) parameter matrix of the adversarial distribution.

    ``frozen_rows`` are sequence positions excluded from optimization; they
    always emit their argmax token deterministically.
    """

    values: torch.Tensor  # (n, V)
    frozen_rows: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.values.dim() != 2:
            raise InvalidInputError("theta must be a 2-D (n, V) matrix")
        for r in self.frozen_rows:
            if not 0 <= r < self.values.shape[0]:
                raise InvalidInputError(f"frozen row {r} outside sequence")

    @property
    def seq_len(self) -> int:
        return self.values.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.values.shape[1]

    def frozen_tokens(self) -> dict[int, int]:
        """Map each frozen row to the token it deterministically emits."""
        with torch.no_grad():
            return {r: int(self.values[r].argmax()) for r in sorted(self.frozen_rows)}


@dataclass(frozen=True)
class AttackConfig:
    """All scalar knobs of the attack.

    Defaults follow the standard recipe: Adam at lr 0.3, batch 10,
    100 iterations, one-hot init constant 12, fluency weight 1,
    similarity weight 20, margin 5, sampling budgets 100 (white-box)
    and 1000 (transfer).
    """

    temperature: float = 1.0
    kappa: float = 5.0
    lambda_lm: float = 1.0
    lambda_sim: float = 20.0
    init_constant: float = 12.0
    learning_rate: float = 0.3
    batch_size: int = 10
    num_iterations: int = 100
    max_samples_whitebox: int = 100
    max_samples_transfer: int = 1000
    rng_seed: int = 0
    temperature_anneal_to: float | None = None  # linear anneal target, off by default

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.kappa < 0:
            raise ConfigError("kappa must be non-negative")
        if self.lambda_lm < 0 or self.lambda_sim < 0:
            raise ConfigError("constraint weights must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.num_iterations < 0:
            raise ConfigError("num_iterations must be >= 0")
        if self.max_samples_whitebox < 1 or self.max_samples_transfer < 1:
            raise ConfigError("sampling budgets must be >= 1")


@dataclass(frozen=True)
class LogitVector:
    """Raw class scores from a classifier."""

    values: torch.Tensor  # (K,)

    def __post_init__(self):
        if self.values.dim() != 1:
            raise InvalidInputError("logit vector must be 1-D")

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]

    def predicted_class(self) -> int:
        return int(self.values.argmax())


@dataclass
class SampleRecord:
    """One sampled candidate and whether it fooled the target."""

    sequence: TokenSequence
    predicted: int
    success: bool
    retokenization_stable: bool = True


@dataclass
class AttackResult:
    """Per-input attack outcome."""

    original: TokenSequence
    label: int
    adversarial_samples: list[SampleRecord]
    queries_used: int
    similarity: float | None = None
    loss_trace: list[dict] | None = None
    entropy_trace: list[float] | None = None

    @property
    def success(self) -> bool:
        """Success is judged on the last drawn sample."""
        if not self.adversarial_samples:
            return False
        return self.adversarial_samples[-1].success

    @property
    def final_sample(self) -> TokenSequence | None:
        """The successful sample, or None when the attack failed."""
        if not self.success:
            return None
        return self.adversarial_samples[-1].sequence


def row_softmax(theta: ThetaMatrix) -> SoftTokenSequence:
    """Exact per-row softmax of theta (no noise)."""
    if not torch.isfinite(theta.values).all():
        raise InvalidInputError("theta contains non-finite entries")
    return SoftTokenSequence(probs=torch.softmax(theta.values, dim=-1), is_relaxed=False)


def row_entropy(probs: SoftTokenSequence) -> list[float]:
    """Shannon entropy (nats) of each row, with 0*log(0) := 0."""
    return [float(h) for h in row_entropy_tensor(probs.probs)]


def row_entropy_tensor(probs: torch.Tensor) -> torch.Tensor:
    p = probs.clamp_min(0.0)
    logp = torch.where(p > 0, torch.log(p.clamp_min(1e-300)), torch.zeros_like(p))
    return -(p * logp).sum(dim=-1)


def max_row_entropy(vocab_size: int) -> float:
    return math.log(vocab_size)
