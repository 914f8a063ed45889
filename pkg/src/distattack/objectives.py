"""Differentiable loss components and their weighted combination.

Three terms: the margin-based adversarial loss, a causal-LM fluency penalty
(soft-sequence NLL), and a recall-style contextual-similarity penalty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .core import (
    AttackConfig,
    ConfigError,
    InvalidInputError,
    LogitVector,
    SoftTokenSequence,
    ThetaMatrix,
    TokenSequence,
)
from .relaxation import GumbelSample, mix_embeddings_batch


@dataclass(frozen=True)
class IdfWeights:
    """Per-position weights for the reference sequence, normalized to sum 1."""

    weights: torch.Tensor  # (n,)

    def __post_init__(self):
        if self.weights.dim() != 1:
            raise InvalidInputError("idf weights must be 1-D")
        if torch.any(self.weights < 0):
            raise InvalidInputError("idf weights must be non-negative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-6:
            raise InvalidInputError("idf weights must sum to 1")

    def __len__(self) -> int:
        return self.weights.shape[0]


def uniform_idf(length: int, dtype: torch.dtype = torch.float32) -> IdfWeights:
    """Fallback when no corpus is available: every position weighted equally."""
    if length < 1:
        raise InvalidInputError("length must be >= 1")
    return IdfWeights(weights=torch.full((length,), 1.0 / length, dtype=dtype))


def compute_idf(
    corpus: list[TokenSequence] | None,
    reference: TokenSequence,
    dtype: torch.dtype = torch.float32,
) -> IdfWeights:
    """Smoothed idf of each reference token, normalized over positions.

    idf(t) = ln((N + 1) / (df(t) + 1)) + 1 over the N corpus documents.
    With no corpus, returns uniform weights.
    """
    if not corpus:
        return uniform_idf(len(reference), dtype=dtype)
    n_docs = len(corpus)
    doc_sets = [set(doc.ids) for doc in corpus]
    raw = []
    for tok in reference.ids:
        df = sum(1 for s in doc_sets if tok in s)
        raw.append(math.log((n_docs + 1) / (df + 1)) + 1.0)
    w = torch.tensor(raw, dtype=dtype)
    return IdfWeights(weights=w / w.sum())


@dataclass
class LossBreakdown:
    """The three loss components and their weighted total.

    Fields are torch scalars so the total stays differentiable;
    ``as_floats`` detaches for logging.
    """

    adversarial: torch.Tensor
    fluency: torch.Tensor
    similarity: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            "adversarial": float(self.adversarial.detach()),
            "fluency": float(self.fluency.detach()),
            "similarity": float(self.similarity.detach()),
            "total": float(self.total.detach()),
        }


def margin_loss(logits: LogitVector | torch.Tensor, label: int, kappa: float) -> torch.Tensor:
    """Carlini-Wagner style margin: max(phi_y - max_{k != y} phi_k + kappa, 0)."""
    values = logits.values if isinstance(logits, LogitVector) else logits
    return margin_loss_batch(values.unsqueeze(0), torch.tensor([label]), kappa).squeeze(0)

def margin_loss_batch(logits: torch.Tensor, labels: torch.Tensor, kappa: float) -> torch.Tensor:
    """Batched margin loss over (B, K) logits."""
    if logits.shape[-1] < 2:
        raise InvalidInputError("margin loss needs at least 2 classes")
    if torch.any(labels < 0) or torch.any(labels >= logits.shape[-1]):
        raise InvalidInputError("label outside class range")
    batch = torch.arange(logits.shape[0])
    own = logits[batch, labels]
    masked = logits.clone()
    masked[batch, labels] = float("-inf")
    runner_up = masked.max(dim=-1).values
    return torch.clamp(own - runner_up + kappa, min=0.0)


def soft_nll(probs: SoftTokenSequence, lm) -> torch.Tensor:
    """Soft-sequence NLL under a causal LM with log-probability outputs.

    -sum_i sum_j (pi_i)_j * logprobs(prefix e(pi_1..pi_{i-1}))_j, where the
    first position conditions on the LM's begin-of-sequence context. For
    one-hot rows this coincides with the token-level sequence NLL.
    """
    return soft_nll_batch(probs.probs.unsqueeze(0), lm).squeeze(0)


def soft_nll_batch(probs: torch.Tensor, lm) -> torch.Tensor:
    """Batched soft NLL over a (B, n, V) stack; returns (B,)."""
    if probs.shape[-1] != lm.vocab_size:
        raise ConfigError(
            f"LM vocabulary size {lm.vocab_size} does not match probs V={probs.shape[-1]}"
        )
    embeds = mix_embeddings_batch(probs, lm.embedding_table())
    logprobs = lm.next_token_logprobs(embeds)  # (B, n, V); row i conditions on BOS..i-1
    return -(probs * logprobs).sum(dim=(-1, -2))


def sequence_nll(seq: TokenSequence, lm) -> torch.Tensor:
    """Standard token-level NLL of a discrete sequence under the LM."""
    return soft_nll(seq.one_hot(dtype=lm.dtype), lm)


def bertscore_dissimilarity(
    reference: TokenSequence,
    probs: SoftTokenSequence,
    embedder,
    idf: IdfWeights | None = None,
) -> torch.Tensor:
    """1 minus the idf-weighted recall similarity in contextual embedding space."""
    if len(reference) == 0 or len(probs) == 0:
        raise InvalidInputError("empty sequences")
    if idf is None:
        idf = uniform_idf(len(reference), dtype=probs.probs.dtype)
    if len(idf) != len(reference):
        raise InvalidInputError("idf weights length must match the reference length")
    ref_vecs = embedder.embed_tokens(reference)  # (n, d'), unit rows
    return _recall_dissim(ref_vecs, embedder.embed_soft_batch(probs.probs.unsqueeze(0)), idf).squeeze(0)


def bertscore_dissimilarity_batch(
    ref_vecs: torch.Tensor, probs: torch.Tensor, embedder, idf: IdfWeights
) -> torch.Tensor:
    """Batched variant given precomputed reference embeddings; returns (B,)."""
    return _recall_dissim(ref_vecs, embedder.embed_soft_batch(probs), idf)


def _recall_dissim(ref_vecs: torch.Tensor, cand_vecs: torch.Tensor, idf: IdfWeights) -> torch.Tensor:
    # ref_vecs (n, d'), cand_vecs (B, m, d')
    sims = torch.einsum("nd,bmd->bnm", ref_vecs, cand_vecs)
    best = sims.max(dim=-1).values  # (B, n)
    recall = (best * idf.weights.to(best.dtype)).sum(dim=-1)
    return 1.0 - recall


def combined_objective(
    theta: ThetaMatrix,
    batch: list[GumbelSample],
    target,
    lm,
    embedder,
    reference: TokenSequence,
    label: int,
    config: AttackConfig,
    idf: IdfWeights | None = None,
) -> LossBreakdown:
    """Batch-mean of margin + lambda_lm * NLL + lambda_sim * dissimilarity.

    All three components depend on the sampled relaxed sequences, so each is
    computed per sample and averaged. Differentiable w.r.t. theta for the
    fixed noise carried by the batch.
    """
    if not batch:
        raise InvalidInputError("batch must be non-empty")
    probs = torch.stack([s.soft.probs for s in batch])  # (B, n, V)
    if probs.shape[-1] != theta.vocab_size:
        raise ConfigError("batch samples do not match theta's vocabulary size")
    if target.embedding_table().vocab_size != theta.vocab_size:
        raise ConfigError("target classifier vocabulary does not match theta")

    embeds = mix_embeddings_batch(probs, target.embedding_table())
    logits = target.forward_embeddings(embeds)  # (B, K)
    labels = torch.full((probs.shape[0],), label, dtype=torch.long)
    adv = margin_loss_batch(logits, labels, config.kappa).mean()

    if config.lambda_lm > 0:
        flu = soft_nll_batch(probs, lm).mean()
    else:
        flu = torch.zeros((), dtype=probs.dtype)

    if config.lambda_sim > 0:
        if idf is None:
            idf = uniform_idf(len(reference), dtype=probs.dtype)
        ref_vecs = embedder.embed_tokens(reference)
        sim = bertscore_dissimilarity_batch(ref_vecs, probs, embedder, idf).mean()
    else:
        sim = torch.zeros((), dtype=probs.dtype)

    total = adv + config.lambda_lm * flu + config.lambda_sim * sim
    return LossBreakdown(adversarial=adv, fluency=flu, similarity=sim, total=total)
