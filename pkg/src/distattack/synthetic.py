"""Synthetic keyword-classification task and reference-model training.

The label is determined by which class's indicator words appear in the
sentence; the remaining words follow a ring-structured Markov chain so the
tiny causal LM has real sequential statistics to learn.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .core import TokenSequence, Vocabulary
from .models import LMContextualEmbedder, ModelBundle, TinyCausalLM, TinyClassifier
from .tokenization import WhitespaceTokenizer

CLASS_KEYWORDS = (
    ("sweet", "sugar", "honey", "candy"),
    ("sour", "lemon", "vinegar", "bitter"),
)
NUM_FILLERS = 56
CHAIN_FOLLOW_PROB = 0.8


def make_vocab() -> Vocabulary:
    tokens = [kw for group in CLASS_KEYWORDS for kw in group]
    tokens += [f"w{i:02d}" for i in range(NUM_FILLERS)]
    return Vocabulary(tokens=tuple(tokens))


@dataclass
class LabeledExample:
    sequence: TokenSequence
    label: int


@dataclass
class SyntheticTask:
    vocab: Vocabulary
    tokenizer: WhitespaceTokenizer
    train: list[LabeledExample]
    test: list[LabeledExample]
    bundle: ModelBundle

    @property
    def num_classes(self) -> int:
        return len(CLASS_KEYWORDS)


def _filler_chain(length: int, num_fillers: int, offset: int, rng: torch.Generator) -> list[int]:
    """Random walk on a ring of filler ids (offset past the keyword block)."""
    ids = [int(torch.randint(0, num_fillers, (1,), generator=rng))]
    for _ in range(length - 1):
        if float(torch.rand(1, generator=rng)) < CHAIN_FOLLOW_PROB:
            ids.append((ids[-1] + 1) % num_fillers)
        else:
            ids.append(int(torch.randint(0, num_fillers, (1,), generator=rng)))
    return [offset + i for i in ids]


def generate_example(
    vocab: Vocabulary, seq_len: int, rng: torch.Generator, label: int | None = None
) -> LabeledExample:
    if label is None:
        label = int(torch.randint(0, len(CLASS_KEYWORDS), (1,), generator=rng))
    num_keywords = 1 + int(torch.randint(0, 2, (1,), generator=rng))
    offset = sum(len(g) for g in CLASS_KEYWORDS)
    ids = _filler_chain(seq_len, NUM_FILLERS, offset, rng)
    positions = torch.randperm(seq_len, generator=rng)[:num_keywords]
    kw_base = label * len(CLASS_KEYWORDS[0])
    for p in positions:
        ids[int(p)] = kw_base + int(torch.randint(0, len(CLASS_KEYWORDS[label]), (1,), generator=rng))
    return LabeledExample(
        sequence=TokenSequence(ids=tuple(ids), vocab_size=vocab.size), label=label
    )


def generate_dataset(
    vocab: Vocabulary, num_examples: int, seq_len: int, rng: torch.Generator
) -> list[LabeledExample]:
    """Balanced dataset: labels split as evenly as the count allows, shuffled."""
    labels = [i % len(CLASS_KEYWORDS) for i in range(num_examples)]
    order = torch.randperm(num_examples, generator=rng)
    return [generate_example(vocab, seq_len, rng, label=labels[int(i)]) for i in order]


def _batches(n: int, batch_size: int, steps: int, rng: torch.Generator):
    for _ in range(steps):
        yield torch.randint(0, n, (batch_size,), generator=rng)


def train_classifier(
    dataset: list[LabeledExample],
    vocab: Vocabulary,
    num_classes: int,
    dim: int = 16,
    arch: str = "attention",
    seed: int = 0,
    steps: int = 300,
    batch_size: int = 64,
    lr: float = 1e-2,
) -> TinyClassifier:
    model = TinyClassifier(vocab.size, num_classes, dim=dim, arch=arch, seed=seed)
    ids = torch.stack([ex.sequence.to_tensor() for ex in dataset])
    labels = torch.tensor([ex.label for ex in dataset])
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    loss_fn = torch.nn.CrossEntropyLoss()
    rng = torch.Generator().manual_seed(seed + 1)
    for idx in _batches(len(dataset), batch_size, steps, rng):
        opt.zero_grad()
        logits = model.forward_embeddings(model.embed(ids[idx]))
        loss = loss_fn(logits, labels[idx])
        loss.backward()
        opt.step()
    model.eval()
    return model


def train_lm(
    dataset: list[LabeledExample],
    vocab: Vocabulary,
    dim: int = 16,
    seed: int = 0,
    steps: int = 400,
    batch_size: int = 64,
    lr: float = 1e-2,
) -> TinyCausalLM:
    model = TinyCausalLM(vocab.size, dim=dim, seed=seed)
    ids = torch.stack([ex.sequence.to_tensor() for ex in dataset])
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    rng = torch.Generator().manual_seed(seed + 2)
    for idx in _batches(len(dataset), batch_size, steps, rng):
        opt.zero_grad()
        batch = ids[idx]
        logprobs = model.next_token_logprobs(model.embed(batch))
        nll = -logprobs.gather(-1, batch.unsqueeze(-1)).squeeze(-1).mean()
        nll.backward()
        opt.step()
    model.eval()
    return model


def accuracy(model: TinyClassifier, dataset: list[LabeledExample]) -> float:
    with torch.no_grad():
        ids = torch.stack([ex.sequence.to_tensor() for ex in dataset])
        labels = torch.tensor([ex.label for ex in dataset])
        logits = model.forward_embeddings(model.embed(ids))
        return float((logits.argmax(dim=-1) == labels).float().mean())


def mean_nll(lm: TinyCausalLM, dataset: list[LabeledExample]) -> float:
    with torch.no_grad():
        ids = torch.stack([ex.sequence.to_tensor() for ex in dataset])
        logprobs = lm.next_token_logprobs(lm.embed(ids))
        return float(-logprobs.gather(-1, ids.unsqueeze(-1)).squeeze(-1).mean())


def train_synthetic_task(
    seed: int = 0,
    num_train: int = 512,
    num_test: int = 256,
    seq_len: int = 8,
    dim: int = 16,
    classifier_seed: int | None = None,
    arch: str = "attention",
) -> SyntheticTask:
    """Generate the keyword task and train all three reference models.

    ``classifier_seed`` lets callers train an independently initialized
    classifier on the same data, e.g. as a transfer-attack target.
    """
    vocab = make_vocab()
    data_rng = torch.Generator().manual_seed(seed)
    train = generate_dataset(vocab, num_train, seq_len, data_rng)
    test = generate_dataset(vocab, num_test, seq_len, data_rng)
    clf_seed = seed if classifier_seed is None else classifier_seed
    classifier = train_classifier(train, vocab, len(CLASS_KEYWORDS), dim=dim, arch=arch, seed=clf_seed)
    lm = train_lm(train, vocab, dim=dim, seed=seed)
    bundle = ModelBundle(
        vocab=vocab, classifier=classifier, lm=lm, embedder=LMContextualEmbedder(lm)
    ).freeze()
    return SyntheticTask(
        vocab=vocab, tokenizer=WhitespaceTokenizer(vocab), train=train, test=test, bundle=bundle
    )
