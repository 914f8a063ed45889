"""The optimization loop: initialize theta, descend on the combined objective
with batched relaxed samples, and record per-iteration traces."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .core import (
    AttackConfig,
    InvalidInputError,
    ThetaMatrix,
    TokenSequence,
    Vocabulary,
    row_entropy_tensor,
)
from .objectives import IdfWeights, combined_objective
from .relaxation import sample_gumbel_softmax

THETA_CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    """Raised when the objective turns non-finite; carries the iteration index."""

    def __init__(self, iteration: int, components: dict[str, float]):
        self.iteration = iteration
        self.components = components
        super().__init__(f"non-finite loss at iteration {iteration}: {components}")


@dataclass
class OptimizationTraces:
    """Per-iteration loss components and distribution entropy."""

    losses: list[dict[str, float]] = field(default_factory=list)
    entropies: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.losses)


def initialize_theta(
    x: TokenSequence,
    vocab: Vocabulary,
    init_constant: float,
    dtype: torch.dtype = torch.float32,
    extra_frozen: frozenset[int] = frozenset(),
) -> ThetaMatrix:
    """Zero matrix with the clean token of each position boosted to the
    init constant. Positions holding reserved vocabulary tokens are frozen,
    as are any extra caller-supplied positions (e.g. a non-attacked segment)."""
    if x.vocab_size != vocab.size:
        raise InvalidInputError("sequence was encoded against a different vocabulary")
    values = torch.zeros(len(x), vocab.size, dtype=dtype)
    values[torch.arange(len(x)), x.to_tensor()] = init_constant
    frozen = {i for i, tok in enumerate(x.ids) if tok in vocab.special_positions}
    frozen |= set(extra_frozen)
    return ThetaMatrix(values=values, frozen_rows=frozenset(frozen))


def _iteration_temperature(config: AttackConfig, iteration: int) -> float:
    if config.temperature_anneal_to is None or config.num_iterations <= 1:
        return config.temperature
    frac = iteration / (config.num_iterations - 1)
    return config.temperature + frac * (config.temperature_anneal_to - config.temperature)


def optimize(
    x: TokenSequence,
    label: int,
    target,
    lm,
    embedder,
    config: AttackConfig,
    rng: torch.Generator,
    idf: IdfWeights | None = None,
    theta: ThetaMatrix | None = None,
) -> tuple[ThetaMatrix, OptimizationTraces]:
    """Run the full gradient loop and return the final theta plus traces.

    Each iteration draws ``batch_size`` relaxed samples with fresh noise,
    evaluates the combined objective, and takes one Adam step on theta.
    Frozen rows are restored after every step.
    """
    if theta is None:
        dtype = target.embedding_table().vectors.dtype
        values = torch.zeros(len(x), x.vocab_size, dtype=dtype)
        values[torch.arange(len(x)), x.to_tensor()] = config.init_constant
        theta = ThetaMatrix(values=values)
    param = theta.values.clone().requires_grad_(True)
    working = ThetaMatrix(values=param, frozen_rows=theta.frozen_rows)
    frozen_idx = sorted(theta.frozen_rows)
    frozen_values = theta.values[frozen_idx].clone() if frozen_idx else None

    opt = torch.optim.Adam([param], lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    traces = OptimizationTraces()

    for it in range(config.num_iterations):
        temperature = _iteration_temperature(config, it)
        batch = [sample_gumbel_softmax(working, temperature, rng) for _ in range(config.batch_size)]
        breakdown = combined_objective(
            working, batch, target, lm, embedder, x, label, config, idf=idf
        )
        if not torch.isfinite(breakdown.total):
            raise NonFiniteLossError(it, breakdown.as_floats())
        opt.zero_grad()
        breakdown.total.backward()
        if frozen_idx:
            param.grad[frozen_idx] = 0.0
        opt.step()
        if frozen_idx:
            with torch.no_grad():
                param[frozen_idx] = frozen_values
        traces.losses.append(breakdown.as_floats())
        with torch.no_grad():
            traces.entropies.append(
                float(row_entropy_tensor(torch.softmax(param, dim=-1)).mean())
            )

    final = ThetaMatrix(values=param.detach().clone(), frozen_rows=theta.frozen_rows)
    return final, traces


def loss_traces_summary(traces: OptimizationTraces) -> dict:
    """Compact report of the loss curves and the entropy diagnostic."""
    if len(traces) == 0:
        raise InvalidInputError("traces must be non-empty")
    components = {k: [row[k] for row in traces.losses] for k in traces.losses[0]}
    quartile = max(1, len(traces) // 4)
    return {
        "num_iterations": len(traces),
        "curves": components,
        "entropy_curve": list(traces.entropies),
        "initial": traces.losses[0],
        "final": traces.losses[-1],
        "adversarial_drop_first_quartile": (
            components["adversarial"][0] - components["adversarial"][quartile - 1]
        ),
        "entropy_min": min(traces.entropies),
        "entropy_max": max(traces.entropies),
    }


def plot_traces(traces: OptimizationTraces, path: str | Path) -> None:
    """Render the loss and entropy curves to a PNG (requires matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    summary = loss_traces_summary(traces)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for name, curve in summary["curves"].items():
        ax1.plot(curve, label=name)
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(summary["entropy_curve"], color="tab:green")
    ax2.set_ylabel("mean row entropy (nats)")
    ax2.set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def config_hash(config: AttackConfig) -> str:
    blob = json.dumps(asdict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def save_theta(theta: ThetaMatrix, config: AttackConfig, path: str | Path) -> None:
    torch.save(
        {
            "version": THETA_CHECKPOINT_VERSION,
            "n": theta.seq_len,
            "V": theta.vocab_size,
            "frozen_rows": sorted(theta.frozen_rows),
            "config_hash": config_hash(config),
            "values": theta.values,
        },
        path,
    )


def load_theta(path: str | Path) -> tuple[ThetaMatrix, str]:
    blob = torch.load(path, weights_only=True)
    if blob.get("version") != THETA_CHECKPOINT_VERSION:
        raise InvalidInputError(f"unsupported theta checkpoint version {blob.get('version')!r}")
    values = blob["values"]
    if values.shape != (blob["n"], blob["V"]):
        raise InvalidInputError("theta checkpoint header does not match matrix shape")
    theta = ThetaMatrix(values=values, frozen_rows=frozenset(blob["frozen_rows"]))
    return theta, blob["config_hash"]
