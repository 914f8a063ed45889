import pytest
import torch

from distattack.core import InvalidInputError, ThetaMatrix, TokenSequence, Vocabulary
from distattack.models import HardLabelTarget, HardLabelView
from distattack.sampling import (
    MeanPooledSimilarity,
    SamplingBudget,
    TargetQueryError,
    TransferReport,
    TransferInputReport,
    ensure_hard_label,
    sample_adversarial,
    transfer_attack,
)
from distattack.tokenization import GreedyMergeTokenizer


class CountingTarget(HardLabelTarget):
    """Hard-label stub with a scripted verdict per query."""

    def __init__(self, verdicts):
        self.verdicts = list(verdicts)
        self.queries = 0

    def predict(self, z: TokenSequence) -> int:
        verdict = self.verdicts[min(self.queries, len(self.verdicts) - 1)]
        self.queries += 1
        return verdict


class FailingTarget(HardLabelTarget):
    def __init__(self, fail_at):
        self.fail_at = fail_at
        self.queries = 0

    def predict(self, z: TokenSequence) -> int:
        self.queries += 1
        if self.queries >= self.fail_at:
            raise RuntimeError("backend down")
        return 0


def uniform_theta(n=3, v=4):
    return ThetaMatrix(values=torch.zeros(n, v))


class TestBudget:
    def test_rejects_non_positive(self):
        with pytest.raises(InvalidInputError):
            SamplingBudget(max_samples=0)


class TestEnsureHardLabel:
    def test_accepts_hard_label_view(self, task):
        view = HardLabelView(task.bundle.classifier)
        assert ensure_hard_label(view) is view

    def test_rejects_raw_classifier(self, task):
        with pytest.raises(TypeError):
            ensure_hard_label(task.bundle.classifier)

    def test_rejects_score_exposing_subclass(self):
        class Leaky(CountingTarget):
            def predict_proba(self, z):
                return [0.5, 0.5]

        with pytest.raises(TypeError, match="predict_proba"):
            ensure_hard_label(Leaky([0]))


class TestSampleAdversarial:
    def test_immediate_hit_uses_one_query(self):
        target = CountingTarget([1])  # differs from label 0 right away
        rng = torch.Generator().manual_seed(0)
        result = sample_adversarial(uniform_theta(), target, 0, SamplingBudget(max_samples=50), rng)
        assert result.success
        assert result.queries_used == 1
        assert target.queries == 1

    def test_never_hits_spends_full_budget(self):
        target = CountingTarget([0])
        rng = torch.Generator().manual_seed(0)
        result = sample_adversarial(uniform_theta(), target, 0, SamplingBudget(max_samples=17), rng)
        assert not result.success
        assert result.queries_used == 17
        assert result.final_sample is None

    def test_success_on_kth_query(self):
        target = CountingTarget([0, 0, 0, 1])
        rng = torch.Generator().manual_seed(0)
        result = sample_adversarial(uniform_theta(), target, 0, SamplingBudget(max_samples=50), rng)
        assert result.success
        assert result.queries_used == 4
        assert target.queries == 4  # no queries after the stopping success

    def test_no_stop_on_success_collects_everything(self):
        target = CountingTarget([1])
        rng = torch.Generator().manual_seed(0)
        budget = SamplingBudget(max_samples=9, stop_on_success=False)
        result = sample_adversarial(uniform_theta(), target, 0, budget, rng)
        assert result.queries_used == 9
        assert len(result.adversarial_samples) == 9

    def test_larger_budget_never_hurts(self):
        # success under budget b implies success under any budget >= b
        for seed in range(5):
            verdicts = [0] * 6 + [1]
            small = sample_adversarial(
                uniform_theta(), CountingTarget(verdicts), 0,
                SamplingBudget(max_samples=7), torch.Generator().manual_seed(seed),
            )
            large = sample_adversarial(
                uniform_theta(), CountingTarget(verdicts), 0,
                SamplingBudget(max_samples=30), torch.Generator().manual_seed(seed),
            )
            assert large.success >= small.success

    def test_target_failure_wrapped_with_query_count(self):
        rng = torch.Generator().manual_seed(0)
        with pytest.raises(TargetQueryError) as err:
            sample_adversarial(uniform_theta(), FailingTarget(fail_at=3), 0,
                               SamplingBudget(max_samples=10), rng)
        assert err.value.queries_used == 3

    def test_original_passed_through(self):
        original = TokenSequence(ids=(1, 2, 3), vocab_size=4)
        rng = torch.Generator().manual_seed(0)
        result = sample_adversarial(uniform_theta(), CountingTarget([1]), 0,
                                    SamplingBudget(max_samples=5), rng, original=original)
        assert result.original is original

    def test_evaluation_uses_reencoded_sequence(self):
        vocab = Vocabulary(tokens=("jui", "cy", "juic", "y"))
        tok = GreedyMergeTokenizer(vocab)
        theta = ThetaMatrix(
            values=torch.tensor([[30.0, 0, 0, 0], [0, 30.0, 0, 0]]),
            frozen_rows=frozenset({0, 1}),
        )  # always draws jui + cy

        seen = []

        class Recording(CountingTarget):
            def predict(self, z):
                seen.append(z.ids)
                return super().predict(z)

        rng = torch.Generator().manual_seed(0)
        result = sample_adversarial(theta, Recording([1]), 0,
                                    SamplingBudget(max_samples=3), rng, tokenizer=tok)
        assert seen == [(2, 3)]  # juic + y, not the raw draw
        assert not result.adversarial_samples[0].retokenization_stable


class TestTransferAttack:
    def _store(self, task, n=4):
        store = []
        for ex in task.test[:n]:
            theta = ThetaMatrix(values=torch.zeros(len(ex.sequence.ids), task.vocab.size))
            store.append((ex.sequence, ex.label, theta))
        return store

    def test_reports_per_target(self, task, task_b):
        store = self._store(task)
        targets = {
            "a": HardLabelView(task.bundle.classifier),
            "b": HardLabelView(task_b.bundle.classifier),
        }
        reports = transfer_attack(store, targets, SamplingBudget(max_samples=20), rng_seed=3)
        assert set(reports) == {"a", "b"}
        for report in reports.values():
            assert report.num_attacked == 4
            assert report.adversarial_accuracy == pytest.approx(1.0 - report.success_rate)

    def test_target_order_does_not_change_results(self, task, task_b):
        store = self._store(task)
        t_a = HardLabelView(task.bundle.classifier)
        t_b = HardLabelView(task_b.bundle.classifier)
        fwd = transfer_attack(store, {"a": t_a, "b": t_b}, SamplingBudget(max_samples=10), rng_seed=5)
        rev = transfer_attack(store, {"b": t_b, "a": t_a}, SamplingBudget(max_samples=10), rng_seed=5)
        for name in ("a", "b"):
            assert [r.queries_used for r in fwd[name].per_input] == [
                r.queries_used for r in rev[name].per_input
            ]

    def test_rejects_leaky_target(self, task):
        with pytest.raises(TypeError):
            transfer_attack(self._store(task), {"raw": task.bundle.classifier},
                            SamplingBudget(max_samples=5))

    def test_similarity_recorded_on_success(self, task):
        store = self._store(task, n=2)
        scorer = MeanPooledSimilarity(task.bundle.embedder)

        class AlwaysFooled(CountingTarget):
            def __init__(self):
                super().__init__([99])

        reports = transfer_attack(store, {"t": AlwaysFooled()},
                                  SamplingBudget(max_samples=5), similarity_scorer=scorer)
        for row in reports["t"].per_input:
            assert row.success
            assert -1.0 <= row.similarity <= 1.0


class TestTransferReport:
    def test_empty_report_aggregates(self):
        report = TransferReport(target_name="t")
        assert report.success_rate == 0.0
        assert report.mean_queries == 0.0
        assert report.mean_similarity is None

    def test_aggregate_arithmetic(self):
        report = TransferReport(target_name="t")
        report.per_input = [
            TransferInputReport(success=True, queries_used=2, similarity=0.9, retokenization_stable=True),
            TransferInputReport(success=False, queries_used=10, similarity=None, retokenization_stable=True),
        ]
        assert report.success_rate == 0.5
        assert report.mean_queries == 6.0
        assert report.mean_similarity == 0.9


class TestSimilarity:
    def test_self_similarity_is_one(self, task):
        scorer = MeanPooledSimilarity(task.bundle.embedder)
        seq = task.test[0].sequence
        assert scorer(seq, seq) == pytest.approx(1.0, abs=1e-6)

    def test_symmetric(self, task):
        scorer = MeanPooledSimilarity(task.bundle.embedder)
        a, b = task.test[0].sequence, task.test[1].sequence
        assert scorer(a, b) == pytest.approx(scorer(b, a), abs=1e-6)

    def test_bounded(self, task):
        scorer = MeanPooledSimilarity(task.bundle.embedder)
        a, b = task.test[2].sequence, task.test[3].sequence
        assert -1.0 - 1e-6 <= scorer(a, b) <= 1.0 + 1e-6
