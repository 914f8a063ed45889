"""Sklearn-style estimator wrapper around the attack.

``fit(X, y)`` optimizes one adversarial distribution per input text against
the wrapped models; ``transform(X)`` returns the sampled adversarial texts
(falling back to the original text where the attack failed or was skipped).
"""
from __future__ import annotations

import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .attack import initialize_theta, optimize
from .core import AttackConfig, InvalidInputError
from .models import HardLabelView, ModelBundle
from .sampling import MeanPooledSimilarity, SamplingBudget, sample_adversarial
from .tokenization import WhitespaceTokenizer


def check_texts_labels(X, y=None):
    """Validate a batch of texts (and optional integer labels)."""
    if not isinstance(X, (list, tuple)) or not all(isinstance(t, str) for t in X):
        raise InvalidInputError("X must be a list of strings")
    if y is not None:
        if len(y) != len(X):
            raise InvalidInputError(f"X has {len(X)} rows but y has {len(y)}")
        if not all(isinstance(int(label), int) for label in y):
            raise InvalidInputError("y must contain integer class ids")
    return list(X), None if y is None else [int(label) for label in y]


class DistributionalAttack(BaseEstimator):
    """Adversarial-text generator with a fit/transform surface.

    Parameters mirror the attack scalars so the estimator composes with
    grid-search tooling via ``get_params`` / ``set_params``.
    """

    def __init__(
        self,
        bundle: ModelBundle | None = None,
        temperature: float = 1.0,
        kappa: float = 5.0,
        lambda_lm: float = 1.0,
        lambda_sim: float = 20.0,
        init_constant: float = 12.0,
        learning_rate: float = 0.3,
        batch_size: int = 10,
        num_iterations: int = 100,
        max_samples: int = 100,
        random_state: int = 0,
    ):
        self.bundle = bundle
        self.temperature = temperature
        self.kappa = kappa
        self.lambda_lm = lambda_lm
        self.lambda_sim = lambda_sim
        self.init_constant = init_constant
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.num_iterations = num_iterations
        self.max_samples = max_samples
        self.random_state = random_state

    def _attack_config(self) -> AttackConfig:
        return AttackConfig(
            temperature=self.temperature,
            kappa=self.kappa,
            lambda_lm=self.lambda_lm,
            lambda_sim=self.lambda_sim,
            init_constant=self.init_constant,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            num_iterations=self.num_iterations,
            max_samples_whitebox=self.max_samples,
            rng_seed=self.random_state,
        )

    def fit(self, X, y):
        """Optimize one adversarial distribution per correctly-classified input."""
        if self.bundle is None:
            raise InvalidInputError("a model bundle is required to fit")
        X, y = check_texts_labels(X, y)
        config = self._attack_config()
        tokenizer = WhitespaceTokenizer(self.bundle.vocab)
        target = self.bundle.classifier
        hard_target = HardLabelView(target)
        scorer = MeanPooledSimilarity(self.bundle.embedder)
        budget = SamplingBudget(max_samples=self.max_samples)

        self.inputs_ = X
        self.thetas_ = []
        self.results_ = []
        self.adversarial_texts_ = []
        for idx, (text, label) in enumerate(zip(X, y)):
            seq = tokenizer.encode(text)
            if target.predict(seq) != label:
                self.thetas_.append(None)
                self.results_.append(None)
                self.adversarial_texts_.append(text)
                continue
            rng = torch.Generator().manual_seed(self.random_state * 1_000_003 + idx)
            theta0 = initialize_theta(
                seq, self.bundle.vocab, self.init_constant,
                dtype=target.embedding_table().vectors.dtype,
            )
            theta, traces = optimize(
                seq, label, target, self.bundle.lm, self.bundle.embedder, config, rng, theta=theta0
            )
            result = sample_adversarial(
                theta, hard_target, label, budget, rng, tokenizer=tokenizer, original=seq
            )
            result.loss_trace = traces.losses
            result.entropy_trace = traces.entropies
            final = result.final_sample
            result.similarity = scorer(seq, final) if final is not None else None
            self.thetas_.append(theta)
            self.results_.append(result)
            self.adversarial_texts_.append(
                tokenizer.decode(final) if result.success and final is not None else text
            )
        return self

    def transform(self, X):
        """Return adversarial texts for the fitted inputs, in input order."""
        if not hasattr(self, "adversarial_texts_"):
            raise NotFittedError("call fit before transform")
        X, _ = check_texts_labels(X)
        if X != self.inputs_:
            raise InvalidInputError("transform expects the same texts that were fitted")
        return list(self.adversarial_texts_)

    def fit_transform(self, X, y):
        return self.fit(X, y).transform(X)

    def success_rate(self) -> float:
        if not hasattr(self, "results_"):
            raise NotFittedError("call fit first")
        attacked = [r for r in self.results_ if r is not None]
        if not attacked:
            return 0.0
        return sum(r.success for r in attacked) / len(attacked)
