import pytest
import torch

from distattack.core import ConfigError, TokenSequence
from distattack.models import (
    HardLabelView,
    LMContextualEmbedder,
    TinyCausalLM,
    TinyClassifier,
    load_bundle,
    load_model,
    register_model,
    save_bundle,
)
from distattack.objectives import bertscore_dissimilarity
from distattack.synthetic import (
    accuracy,
    generate_dataset,
    make_vocab,
    mean_nll,
    train_synthetic_task,
)


@pytest.fixture(params=["attention", "pool"])
def classifier(request):
    return TinyClassifier(vocab_size=8, num_classes=3, dim=6, max_len=8, arch=request.param, seed=1)


@pytest.fixture
def lm():
    return TinyCausalLM(vocab_size=8, dim=6, max_len=9, seed=2)


SEQ = TokenSequence(ids=(3, 0, 7, 2), vocab_size=8)


class TestClassifierContract:
    def test_logit_shape(self, classifier):
        assert classifier.forward_tokens(SEQ).num_classes == 3

    def test_tokens_match_embeddings(self, classifier):
        via_tokens = classifier.forward_tokens(SEQ).values
        embeds = classifier.embedding_table().lookup(SEQ).unsqueeze(0)
        via_embeds = classifier.forward_embeddings(embeds).squeeze(0)
        assert torch.allclose(via_tokens, via_embeds, atol=1e-5)

    def test_gradient_reaches_inputs(self, classifier):
        embeds = classifier.embedding_table().lookup(SEQ).unsqueeze(0).detach().requires_grad_(True)
        classifier.forward_embeddings(embeds).sum().backward()
        assert embeds.grad is not None and torch.any(embeds.grad != 0)

    def test_rejects_tiny_vocab_or_classes(self):
        with pytest.raises(ConfigError):
            TinyClassifier(vocab_size=2, num_classes=2)
        with pytest.raises(ConfigError):
            TinyClassifier(vocab_size=8, num_classes=1)


class TestCausalLMContract:
    def test_rows_logsumexp_to_zero(self, lm):
        embeds = lm.embedding_table().lookup(SEQ).unsqueeze(0)
        lp = lm.next_token_logprobs(embeds)
        assert torch.allclose(lp.logsumexp(dim=-1), torch.zeros(1, 4), atol=1e-5)

    def test_causality(self, lm):
        # changing a later input must not change earlier predictions
        embeds = lm.embedding_table().lookup(SEQ).unsqueeze(0)
        base = lm.next_token_logprobs(embeds)
        perturbed = embeds.clone()
        perturbed[0, -1] += 1.0
        changed = lm.next_token_logprobs(perturbed)
        assert torch.allclose(base[0, :3], changed[0, :3], atol=1e-6)

    def test_gradient_reaches_inputs(self, lm):
        embeds = lm.embedding_table().lookup(SEQ).unsqueeze(0).detach().requires_grad_(True)
        lm.next_token_logprobs(embeds).sum().backward()
        assert embeds.grad is not None


class TestEmbedderContract:
    def test_unit_norm(self, lm):
        embedder = LMContextualEmbedder(lm)
        vecs = embedder.embed_tokens(SEQ)
        assert torch.allclose(vecs.norm(dim=-1), torch.ones(4), atol=1e-5)

    def test_soft_one_hot_matches_tokens(self, lm):
        embedder = LMContextualEmbedder(lm)
        onehot = SEQ.one_hot().probs.unsqueeze(0)
        assert torch.allclose(embedder.embed_soft_batch(onehot).squeeze(0), embedder.embed_tokens(SEQ))

    def test_differentiable(self, lm):
        embedder = LMContextualEmbedder(lm)
        probs = torch.softmax(torch.randn(1, 4, 8, generator=torch.Generator().manual_seed(3)), dim=-1)
        probs.requires_grad_(True)
        embedder.embed_soft_batch(probs).sum().backward()
        assert probs.grad is not None


class TestHardLabelView:
    def test_exposes_only_predict(self, classifier):
        view = HardLabelView(classifier)
        assert isinstance(view.predict(SEQ), int)
        assert not hasattr(view, "forward_tokens")
        assert not hasattr(view, "forward_embeddings")

    def test_deterministic(self, classifier):
        view = HardLabelView(classifier)
        assert view.predict(SEQ) == view.predict(SEQ)


class TestCheckpoint:
    def test_bundle_round_trip(self, tmp_path, task):
        path = tmp_path / "bundle.pt"
        save_bundle(task.bundle, path)
        loaded = load_bundle(path)
        assert loaded.vocab == task.vocab
        seq = task.test[0].sequence
        assert torch.allclose(
            loaded.classifier.forward_tokens(seq).values,
            task.bundle.classifier.forward_tokens(seq).values,
        )
        assert loaded.classifier.embed.weight.requires_grad is False

    def test_registry(self, tmp_path, task):
        path = tmp_path / "bundle.pt"
        save_bundle(task.bundle, path)
        assert load_model("reference", path).vocab == task.vocab
        with pytest.raises(ConfigError):
            load_model("nope", path)
        register_model("alias", load_bundle)
        assert load_model("alias", path).vocab == task.vocab


class TestSyntheticTask:
    def test_dataset_label_balance(self):
        vocab = make_vocab()
        rng = torch.Generator().manual_seed(11)
        data = generate_dataset(vocab, 200, 8, rng)
        frac = sum(ex.label for ex in data) / len(data)
        assert abs(frac - 0.5) <= 0.05

    def test_clean_accuracy(self, task):
        assert accuracy(task.bundle.classifier, task.test) >= 0.95

    def test_lm_prefers_in_distribution_text(self, task):
        in_dist = mean_nll(task.bundle.lm, task.test)
        rng = torch.Generator().manual_seed(12)
        shuffled = []
        for ex in task.test:
            perm = torch.randperm(task.vocab.size, generator=rng)
            ids = tuple(int(perm[i]) for i in ex.sequence.ids)
            shuffled.append(type(ex)(sequence=TokenSequence(ids=ids, vocab_size=task.vocab.size), label=ex.label))
        assert in_dist < mean_nll(task.bundle.lm, shuffled)

    def test_embedder_self_similarity(self, task):
        seq = task.test[0].sequence
        d = bertscore_dissimilarity(seq, seq.one_hot(), task.bundle.embedder)
        assert float(d) == pytest.approx(0.0, abs=1e-6)
