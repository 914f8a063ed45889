import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from distattack.core import (
    AttackConfig,
    ConfigError,
    InvalidInputError,
    SoftTokenSequence,
    ThetaMatrix,
    TokenSequence,
    Vocabulary,
    row_entropy,
    row_softmax,
)


def make_theta(values, frozen=()):
    return ThetaMatrix(values=torch.tensor(values, dtype=torch.float64), frozen_rows=frozenset(frozen))


class TestTypes:
    def test_vocabulary_rejects_duplicate_tokens(self):
        with pytest.raises(InvalidInputError):
            Vocabulary(tokens=("a", "a"))

    def test_vocabulary_rejects_bad_special_position(self):
        with pytest.raises(InvalidInputError):
            Vocabulary(tokens=("a", "b"), special_positions=frozenset({5}))

    def test_token_sequence_rejects_out_of_range_id(self):
        with pytest.raises(InvalidInputError):
            TokenSequence(ids=(0, 4), vocab_size=4)

    def test_token_sequence_rejects_empty(self):
        with pytest.raises(InvalidInputError):
            TokenSequence(ids=(), vocab_size=4)

    def test_soft_sequence_rejects_unnormalized_rows(self):
        with pytest.raises(InvalidInputError):
            SoftTokenSequence(probs=torch.tensor([[0.5, 0.2]]))

    def test_one_hot_round_trip(self):
        seq = TokenSequence(ids=(2, 0, 1), vocab_size=3)
        onehot = seq.one_hot()
        assert torch.equal(onehot.probs.argmax(dim=-1), seq.to_tensor())

    def test_theta_frozen_tokens(self):
        theta = make_theta([[0, 12, 0], [5, 0, 0]], frozen={0})
        assert theta.frozen_tokens() == {0: 1}

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            AttackConfig(temperature=0.0)
        with pytest.raises(ConfigError):
            AttackConfig(batch_size=0)
        with pytest.raises(ConfigError):
            AttackConfig(learning_rate=-1.0)


class TestRowSoftmax:
    def test_uniform_row(self):
        probs = row_softmax(make_theta([[0.0, 0.0, 0.0, 0.0]]))
        assert torch.allclose(probs.probs, torch.full((1, 4), 0.25, dtype=torch.float64))
        assert not probs.is_relaxed

    def test_init_constant_row(self):
        # e^12 / (e^12 + 3)
        probs = row_softmax(make_theta([[12.0, 0.0, 0.0, 0.0]]))
        expected = math.exp(12) / (math.exp(12) + 3)
        assert abs(float(probs.probs[0, 0]) - expected) < 1e-9
        assert abs(float(probs.probs[0, 0]) - 0.999982) < 1e-6

    def test_frozen_one_hot_row_stays_dominated(self):
        theta = make_theta([[12.0] + [0.0] * 15], frozen={0})
        probs = row_softmax(theta)
        assert float(probs.probs[0].max()) > 0.99

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            row_softmax(make_theta([[float("inf"), 0.0]]))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.floats(-50, 50), min_size=3, max_size=3), min_size=1, max_size=4))
    def test_rows_sum_to_one(self, rows):
        probs = row_softmax(make_theta(rows))
        assert torch.allclose(probs.probs.sum(dim=-1), torch.ones(len(rows), dtype=torch.float64), atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(-50, 50), min_size=4, max_size=4),
        st.floats(-20, 20),
    )
    def test_shift_invariance(self, row, shift):
        base = row_softmax(make_theta([row]))
        shifted = row_softmax(make_theta([[v + shift for v in row]]))
        assert torch.allclose(base.probs, shifted.probs, atol=1e-6)


class TestRowEntropy:
    def test_uniform_is_log_v(self):
        probs = SoftTokenSequence(probs=torch.full((1, 4), 0.25))
        assert abs(row_entropy(probs)[0] - math.log(4)) < 1e-6

    def test_one_hot_is_zero(self):
        probs = SoftTokenSequence(probs=torch.tensor([[0.0, 1.0, 0.0]]))
        assert row_entropy(probs)[0] == 0.0

    def test_two_point_uniform(self):
        probs = SoftTokenSequence(probs=torch.tensor([[0.5, 0.5, 0.0, 0.0]]))
        assert abs(row_entropy(probs)[0] - math.log(2)) < 1e-6

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=5, max_size=5))
    def test_uniform_maximizes(self, row):
        probs = row_softmax(make_theta([row]))
        h = row_entropy(probs)[0]
        assert 0.0 <= h <= math.log(5) + 1e-9
