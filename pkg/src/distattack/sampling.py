"""Post-optimization sampling, stopping rules, transfer attacks and metrics.

Discrete candidates are drawn from the hard categorical distribution, never
the relaxed one. Targets are queried strictly through the hard-label
interface: no code path here can read scores.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import torch

from .core import (
    AttackResult,
    InvalidInputError,
    SampleRecord,
    ThetaMatrix,
    TokenSequence,
)
from .models import HardLabelTarget
from .relaxation import sample_categorical
from .tokenization import Tokenizer, check_retokenization


@dataclass(frozen=True)
class SamplingBudget:
    max_samples: int = 100
    stop_on_success: bool = True

    def __post_init__(self):
        if self.max_samples < 1:
            raise InvalidInputError("max_samples must be >= 1")


class TargetQueryError(RuntimeError):
    """Wraps a target failure, preserving how many queries had been spent."""

    def __init__(self, queries_used: int, cause: Exception):
        self.queries_used = queries_used
        super().__init__(f"target raised after {queries_used} queries: {cause}")
        self.__cause__ = cause


_SCORE_ATTRS = ("forward_embeddings", "forward_tokens", "predict_proba", "logits", "scores")


def ensure_hard_label(target) -> HardLabelTarget:
    """Reject anything that exposes continuous-valued outputs.

    The transfer harness only ever holds objects that pass this check, so it
    structurally cannot read scores from a target.
    """
    if not isinstance(target, HardLabelTarget):
        raise TypeError(f"{type(target).__name__} does not implement the hard-label interface")
    leaky = [a for a in _SCORE_ATTRS if hasattr(target, a)]
    if leaky:
        raise TypeError(f"{type(target).__name__} exposes score outputs {leaky}; wrap it in a hard-label view")
    return target


def sample_adversarial(
    theta: ThetaMatrix,
    target: HardLabelTarget,
    label: int,
    budget: SamplingBudget,
    rng: torch.Generator,
    tokenizer: Tokenizer | None = None,
    resample_until_stable: bool = False,
    original: TokenSequence | None = None,
) -> AttackResult:
    """Draw discrete samples until one is misclassified or the budget runs out.

    Every draw counts as a query. When a tokenizer is given, each sample is
    decoded and re-encoded first and the query uses the re-encoded sequence;
    with ``resample_until_stable`` unstable draws are skipped (still spending
    their query) rather than evaluated.
    """
    target = ensure_hard_label(target)
    records: list[SampleRecord] = []
    queries = 0
    for _ in range(budget.max_samples):
        z = sample_categorical(theta, rng)
        stable = True
        if tokenizer is not None:
            retok = check_retokenization(z, tokenizer)
            stable = retok.stable
            z = retok.retokenized
        queries += 1
        if tokenizer is not None and resample_until_stable and not stable:
            records.append(SampleRecord(sequence=z, predicted=label, success=False,
                                        retokenization_stable=False))
            continue
        try:
            predicted = target.predict(z)
        except Exception as e:  # noqa: BLE001 - propagate with query count attached
            raise TargetQueryError(queries, e) from e
        success = predicted != label
        records.append(SampleRecord(sequence=z, predicted=predicted, success=success,
                                    retokenization_stable=stable))
        if success and budget.stop_on_success:
            break
    if original is None:
        original_ids = theta.values.argmax(dim=-1)
        original = TokenSequence(ids=tuple(int(i) for i in original_ids), vocab_size=theta.vocab_size)
    return AttackResult(
        original=original, label=label, adversarial_samples=records, queries_used=queries
    )


@dataclass
class TransferInputReport:
    success: bool
    queries_used: int
    similarity: float | None
    retokenization_stable: bool


@dataclass
class TransferReport:
    """Per-target aggregate of a transfer attack."""

    target_name: str
    per_input: list[TransferInputReport] = field(default_factory=list)
    skipped: int = 0

    @property
    def num_attacked(self) -> int:
        return len(self.per_input)

    @property
    def success_rate(self) -> float:
        if not self.per_input:
            return 0.0
        return sum(r.success for r in self.per_input) / len(self.per_input)

    @property
    def adversarial_accuracy(self) -> float:
        """Fraction of inputs for which no sampled candidate fooled the target."""
        return 1.0 - self.success_rate

    @property
    def mean_queries(self) -> float:
        if not self.per_input:
            return 0.0
        return sum(r.queries_used for r in self.per_input) / len(self.per_input)

    @property
    def mean_similarity(self) -> float | None:
        sims = [r.similarity for r in self.per_input if r.similarity is not None]
        return sum(sims) / len(sims) if sims else None


def _stream_seed(rng_seed: int, target_name: str, input_idx: int) -> int:
    """Stable per-(target, input) seed, independent of process hash salting."""
    digest = hashlib.sha256(f"{rng_seed}:{target_name}:{input_idx}".encode()).digest()
    return int.from_bytes(digest[:4], "big") % 2**31


def transfer_attack(
    theta_store: list[tuple[TokenSequence, int, ThetaMatrix]],
    targets: dict[str, HardLabelTarget],
    budget: SamplingBudget,
    similarity_scorer=None,
    tokenizer: Tokenizer | None = None,
    rng_seed: int = 0,
) -> dict[str, TransferReport]:
    """Sample from each stored theta against every hard-label target.

    Each (target, input) pair uses an independent RNG stream keyed by the
    target's name, so per-target results do not depend on target ordering.
    """
    checked = {name: ensure_hard_label(t) for name, t in targets.items()}
    reports: dict[str, TransferReport] = {}
    for name, target in checked.items():
        report = TransferReport(target_name=name)
        for i_idx, (original, label, theta) in enumerate(theta_store):
            rng = torch.Generator().manual_seed(_stream_seed(rng_seed, name, i_idx))
            result = sample_adversarial(
                theta, target, label, budget, rng, tokenizer=tokenizer, original=original
            )
            final = result.final_sample
            sim = None
            if similarity_scorer is not None and final is not None:
                sim = similarity_scorer(original, final)
            stable = all(s.retokenization_stable for s in result.adversarial_samples)
            report.per_input.append(
                TransferInputReport(
                    success=result.success,
                    queries_used=result.queries_used,
                    similarity=sim,
                    retokenization_stable=stable,
                )
            )
        reports[name] = report
    return reports


class MeanPooledSimilarity:
    """Desk-scale sentence similarity: cosine of mean-pooled contextual vectors."""

    def __init__(self, embedder):
        self.embedder = embedder

    def __call__(self, a: TokenSequence, b: TokenSequence) -> float:
        return similarity_score(a, b, self)

    def embed_sentence(self, seq: TokenSequence) -> torch.Tensor:
        vecs = self.embedder.embed_tokens(seq)
        pooled = vecs.mean(dim=0)
        return pooled / pooled.norm().clamp_min(1e-12)


def similarity_score(a: TokenSequence, b: TokenSequence, scorer) -> float:
    """Cosine similarity of two sentence embeddings, in [-1, 1]."""
    if len(a) == 0 or len(b) == 0:
        raise InvalidInputError("cannot score empty text")
    with torch.no_grad():
        va = scorer.embed_sentence(a)
        vb = scorer.embed_sentence(b)
        return float(torch.dot(va, vb))
