"""Model interface contracts plus self-contained desk-scale implementations.

The interfaces are what external pretrained models must satisfy to plug in.
The tiny reference models (single-head attention classifier, causal LM, and
an LM-derived contextual embedder) are small enough for finite-difference
gradient checks yet trainable to high accuracy on the synthetic task.
"""
from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ConfigError, InvalidInputError, LogitVector, TokenSequence, Vocabulary
from .relaxation import EmbeddingTable

CHECKPOINT_VERSION = 1


class Classifier(abc.ABC):
    """A differentiable classifier that accepts embedding-sequence input."""

    @abc.abstractmethod
    def forward_embeddings(self, embeds: torch.Tensor) -> torch.Tensor:
        """(B, n, d) input embeddings -> (B, K) logits, differentiable."""

    @abc.abstractmethod
    def embedding_table(self) -> EmbeddingTable:
        ...

    @property
    @abc.abstractmethod
    def num_classes(self) -> int:
        ...

    def forward_tokens(self, seq: TokenSequence) -> LogitVector:
        embeds = self.embedding_table().lookup(seq).unsqueeze(0)
        return LogitVector(values=self.forward_embeddings(embeds).squeeze(0))

    def predict(self, seq: TokenSequence) -> int:
        with torch.no_grad():
            return self.forward_tokens(seq).predicted_class()


class CausalLM(abc.ABC):
    """A next-token model with log-probability outputs over its vocabulary."""

    @abc.abstractmethod
    def next_token_logprobs(self, embeds: torch.Tensor) -> torch.Tensor:
        """(B, n, d) input embeddings -> (B, n, V) log-probs.

        Output row i is the predicted distribution of token i, conditioned on
        the begin-of-sequence context plus embeddings 0..i-1.
        """

    @abc.abstractmethod
    def embedding_table(self) -> EmbeddingTable:
        ...

    @property
    @abc.abstractmethod
    def vocab_size(self) -> int:
        ...

    @property
    def dtype(self) -> torch.dtype:
        return self.embedding_table().vectors.dtype


class ContextualEmbedder(abc.ABC):
    """Produces unit-norm contextual embeddings for hard and soft sequences."""

    @abc.abstractmethod
    def embed_soft_batch(self, probs: torch.Tensor) -> torch.Tensor:
        """(B, n, V) probability rows -> (B, n, d') unit vectors, differentiable."""

    def embed_tokens(self, seq: TokenSequence) -> torch.Tensor:
        onehot = seq.one_hot(dtype=self.dtype)
        return self.embed_soft_batch(onehot.probs.unsqueeze(0)).squeeze(0)

    @property
    @abc.abstractmethod
    def dtype(self) -> torch.dtype:
        ...


class HardLabelTarget(abc.ABC):
    """A target exposing only its predicted class id, never scores."""

    @abc.abstractmethod
    def predict(self, seq: TokenSequence) -> int:
        ...


class HardLabelView(HardLabelTarget):
    """Restricts a classifier to hard-label output for black-box evaluation."""

    def __init__(self, classifier: Classifier, name: str = "target"):
        self._classifier = classifier
        self.name = name

    def predict(self, seq: TokenSequence) -> int:
        return self._classifier.predict(seq)


class _SelfAttentionBlock(nn.Module):
    """Single-head attention + residual + layer norm, optionally causal."""

    def __init__(self, dim: int, causal: bool):
        super().__init__()
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.norm = nn.LayerNorm(dim)
        self.causal = causal
        self.scale = 1.0 / math.sqrt(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        scores = torch.einsum("bid,bjd->bij", self.q(x), self.k(x)) * self.scale
        if self.causal:
            n = x.shape[1]
            mask = torch.triu(torch.ones(n, n, dtype=torch.bool), diagonal=1)
            scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        return self.norm(x + torch.einsum("bij,bjd->bid", attn, self.v(x)))


class TinyClassifier(nn.Module, Classifier):
    """Small classifier over token embeddings.

    arch="attention": one self-attention block, mean pool, linear head.
    arch="pool": mean pool straight into a 2-layer MLP.
    """

    def __init__(
        self,
        vocab_size: int,
        num_classes: int,
        dim: int = 16,
        max_len: int = 32,
        arch: str = "attention",
        dtype: torch.dtype = torch.float32,
        seed: int = 0,
    ):
        if vocab_size < 4 or num_classes < 2:
            raise ConfigError("need vocab_size >= 4 and num_classes >= 2")
        if arch not in ("attention", "pool"):
            raise ConfigError(f"unknown arch {arch!r}")
        super().__init__()
        torch.manual_seed(seed)
        self.hparams = dict(
            vocab_size=vocab_size, num_classes=num_classes, dim=dim,
            max_len=max_len, arch=arch, seed=seed,
        )
        self.embed = nn.Embedding(vocab_size, dim)
        self.pos = nn.Parameter(0.02 * torch.randn(max_len, dim))
        if arch == "attention":
            self.block = _SelfAttentionBlock(dim, causal=False)
            self.head = nn.Linear(dim, num_classes)
        else:
            self.block = None
            self.head = nn.Sequential(nn.Linear(dim, dim), nn.Tanh(), nn.Linear(dim, num_classes))
        self.to(dtype)

    @property
    def num_classes(self) -> int:
        return self.hparams["num_classes"]

    def embedding_table(self) -> EmbeddingTable:
        return EmbeddingTable(vectors=self.embed.weight)

    def forward_embeddings(self, embeds: torch.Tensor) -> torch.Tensor:
        n = embeds.shape[1]
        if n > self.pos.shape[0]:
            raise InvalidInputError(f"sequence length {n} exceeds max_len {self.pos.shape[0]}")
        x = embeds + self.pos[:n]
        if self.block is not None:
            x = self.block(x)
        return self.head(x.mean(dim=1))

    forward = forward_embeddings


class TinyCausalLM(nn.Module, CausalLM):
    """Single-block causal next-token model with a learned BOS vector."""

    def __init__(
        self,
        vocab_size: int,
        dim: int = 16,
        max_len: int = 33,
        dtype: torch.dtype = torch.float32,
        seed: int = 0,
    ):
        if vocab_size < 4:
            raise ConfigError("need vocab_size >= 4")
        super().__init__()
        torch.manual_seed(seed)
        self.hparams = dict(vocab_size=vocab_size, dim=dim, max_len=max_len, seed=seed)
        self.embed = nn.Embedding(vocab_size, dim)
        self.bos = nn.Parameter(0.02 * torch.randn(dim))
        self.pos = nn.Parameter(0.02 * torch.randn(max_len, dim))
        self.block = _SelfAttentionBlock(dim, causal=True)
        self.head = nn.Linear(dim, vocab_size)
        self.to(dtype)

    @property
    def vocab_size(self) -> int:
        return self.hparams["vocab_size"]

    def embedding_table(self) -> EmbeddingTable:
        return EmbeddingTable(vectors=self.embed.weight)

    def _hidden(self, embeds: torch.Tensor) -> torch.Tensor:
        """(B, n, d) -> (B, n+1, d) hidden states over [BOS, e_1, .., e_n]."""
        batch, n, _ = embeds.shape
        if n + 1 > self.pos.shape[0]:
            raise InvalidInputError(f"sequence length {n} exceeds max_len {self.pos.shape[0] - 1}")
        bos = self.bos.expand(batch, 1, -1)
        x = torch.cat([bos, embeds], dim=1) + self.pos[: n + 1]
        return self.block(x)

    def next_token_logprobs(self, embeds: torch.Tensor) -> torch.Tensor:
        h = self._hidden(embeds)
        # hidden at prepended index i-1 predicts token i
        return F.log_softmax(self.head(h[:, :-1, :]), dim=-1)

    forward = next_token_logprobs


class LMContextualEmbedder(ContextualEmbedder):
    """Contextual embeddings read off the causal LM's hidden states.

    Shares weights with the LM, so the same model serves both the fluency
    constraint and the similarity constraint.
    """

    def __init__(self, lm: TinyCausalLM):
        self.lm = lm

    @property
    def dtype(self) -> torch.dtype:
        return self.lm.dtype

    def embed_soft_batch(self, probs: torch.Tensor) -> torch.Tensor:
        if probs.shape[-1] != self.lm.vocab_size:
            raise ConfigError("probability rows do not match the embedder vocabulary")
        embeds = probs @ self.lm.embedding_table().vectors
        h = self.lm._hidden(embeds)[:, 1:, :]  # state at each token's own position
        return F.normalize(h, dim=-1)


@dataclass
class ModelBundle:
    """Everything the attack needs about one task: vocab, tokenizer, models."""

    vocab: Vocabulary
    classifier: TinyClassifier
    lm: TinyCausalLM
    embedder: LMContextualEmbedder

    def freeze(self) -> "ModelBundle":
        for p in self.classifier.parameters():
            p.requires_grad_(False)
        for p in self.lm.parameters():
            p.requires_grad_(False)
        return self


def save_bundle(bundle: ModelBundle, path: str | Path) -> None:
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "vocab_tokens": list(bundle.vocab.tokens),
            "vocab_special": sorted(bundle.vocab.special_positions),
            "classifier_hparams": bundle.classifier.hparams,
            "classifier_state": bundle.classifier.state_dict(),
            "lm_hparams": bundle.lm.hparams,
            "lm_state": bundle.lm.state_dict(),
        },
        path,
    )


def load_bundle(path: str | Path) -> ModelBundle:
    blob = torch.load(path, weights_only=True)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {blob.get('version')!r}")
    vocab = Vocabulary(
        tokens=tuple(blob["vocab_tokens"]),
        special_positions=frozenset(blob["vocab_special"]),
    )
    clf = TinyClassifier(**blob["classifier_hparams"])
    clf.load_state_dict(blob["classifier_state"])
    lm = TinyCausalLM(**blob["lm_hparams"])
    lm.load_state_dict(blob["lm_state"])
    return ModelBundle(vocab=vocab, classifier=clf, lm=lm, embedder=LMContextualEmbedder(lm)).freeze()


# Plugin registry: name -> loader(path) -> ModelBundle
MODEL_REGISTRY: dict[str, callable] = {"reference": load_bundle}


def register_model(name: str, loader) -> None:
    MODEL_REGISTRY[name] = loader


def load_model(name: str, path: str | Path) -> ModelBundle:
    if name not in MODEL_REGISTRY:
        raise ConfigError(f"unknown model plugin {name!r}; known: {sorted(MODEL_REGISTRY)}")
    return MODEL_REGISTRY[name](path)
