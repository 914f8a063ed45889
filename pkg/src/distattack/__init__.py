"""Gradient-based distributional adversarial attacks on text classifiers.

Optimizes a continuous matrix defining a distribution over token sequences
with a Gumbel-softmax relaxation plus differentiable fluency and semantic
similarity penalties, then samples discrete adversarial texts for white-box
and hard-label transfer evaluation.
"""
from .attack import (
    NonFiniteLossError,
    OptimizationTraces,
    initialize_theta,
    load_theta,
    loss_traces_summary,
    optimize,
    save_theta,
)
from .core import (
    AttackConfig,
    AttackResult,
    ConfigError,
    InvalidInputError,
    LogitVector,
    SoftTokenSequence,
    ThetaMatrix,
    TokenSequence,
    Vocabulary,
    row_entropy,
    row_softmax,
)
from .estimator import DistributionalAttack
from .models import (
    CausalLM,
    Classifier,
    ContextualEmbedder,
    HardLabelTarget,
    HardLabelView,
    LMContextualEmbedder,
    ModelBundle,
    TinyCausalLM,
    TinyClassifier,
    load_bundle,
    load_model,
    register_model,
    save_bundle,
)
from .objectives import (
    IdfWeights,
    LossBreakdown,
    bertscore_dissimilarity,
    combined_objective,
    compute_idf,
    margin_loss,
    soft_nll,
    uniform_idf,
)
from .relaxation import (
    EmbeddingTable,
    GumbelSample,
    mix_embeddings,
    sample_categorical,
    sample_gumbel_softmax,
)
from .sampling import (
    MeanPooledSimilarity,
    SamplingBudget,
    TransferReport,
    ensure_hard_label,
    sample_adversarial,
    similarity_score,
    transfer_attack,
)
from .synthetic import train_synthetic_task
from .tokenization import (
    GreedyMergeTokenizer,
    IdentityTokenizer,
    WhitespaceTokenizer,
    check_retokenization,
)

__version__ = "0.1.0"
