"""End-to-end run orchestration: dataset ingestion, white-box runs, transfer
runs, hyperparameter sweeps, and result persistence.

Result records are line-delimited JSON; every run also writes its fully
resolved configuration so any record is reproducible from config + seed.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .attack import config_hash, initialize_theta, optimize
from .core import AttackConfig, ConfigError, ThetaMatrix, TokenSequence
from .models import HardLabelView, ModelBundle, load_model
from .objectives import compute_idf
from .sampling import (
    MeanPooledSimilarity,
    SamplingBudget,
    TransferReport,
    sample_adversarial,
    transfer_attack,
)
from .tokenization import WhitespaceTokenizer

SEP_TOKEN = "<sep>"


@dataclass
class RunConfig:
    """Everything one run needs beyond the attack scalars."""

    dataset_path: str
    output_dir: str
    model_path: str
    model_plugin: str = "reference"
    dataset_format: str = "tsv"  # "tsv" or "jsonl"
    attack_segment: str = "hypothesis"  # for pair tasks: "premise" or "hypothesis"
    transfer_targets: list[dict] = field(default_factory=list)  # {name, plugin, path}
    idf_corpus: str | None = None
    valid_labels: list[int] | None = None
    max_examples: int | None = None
    seed: int = 0
    attack: AttackConfig = field(default_factory=AttackConfig)

    def __post_init__(self):
        if self.dataset_format not in ("tsv", "jsonl"):
            raise ConfigError(f"unknown dataset format {self.dataset_format!r}")
        if self.attack_segment not in ("premise", "hypothesis"):
            raise ConfigError(f"unknown attack segment {self.attack_segment!r}")

    def validate_paths(self) -> None:
        for p in [self.dataset_path, self.model_path, self.idf_corpus]:
            if p is not None and not Path(p).exists():
                raise ConfigError(f"path does not exist: {p}")
        for t in self.transfer_targets:
            if not Path(t["path"]).exists():
                raise ConfigError(f"transfer target path does not exist: {t['path']}")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, blob: dict) -> "RunConfig":
        blob = dict(blob)
        attack = blob.pop("attack", {})
        return cls(attack=AttackConfig(**attack), **blob)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Example:
    """One dataset row; pair tasks carry two segments."""

    label: int
    text: str | None = None
    premise: str | None = None
    hypothesis: str | None = None

    @property
    def is_pair(self) -> bool:
        return self.premise is not None


class DatasetError(ValueError):
    pass


def _parse_label(raw: str, line_no: int, valid_labels: list[int] | None) -> int:
    try:
        label = int(raw)
    except ValueError:
        raise DatasetError(f"line {line_no}: label {raw!r} is not an integer") from None
    if valid_labels is not None and label not in valid_labels:
        raise DatasetError(f"line {line_no}: label {label} not in valid labels {valid_labels}")
    return label


def ingest_dataset(
    path: str | Path, fmt: str = "tsv", valid_labels: list[int] | None = None
) -> list[Example]:
    """Parse and validate a dataset file.

    TSV rows are either ``text<TAB>label`` or ``premise<TAB>hypothesis<TAB>label``;
    JSONL objects carry the same fields by name.
    """
    examples: list[Example] = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if fmt == "tsv":
            cols = line.split("\t")
            if len(cols) == 2:
                examples.append(Example(text=cols[0], label=_parse_label(cols[1], line_no, valid_labels)))
            elif len(cols) == 3:
                examples.append(
                    Example(
                        premise=cols[0],
                        hypothesis=cols[1],
                        label=_parse_label(cols[2], line_no, valid_labels),
                    )
                )
            else:
                raise DatasetError(f"line {line_no}: expected 2 or 3 tab-separated columns, got {len(cols)}")
        else:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"line {line_no}: invalid JSON: {e}") from None
            if "label" not in obj:
                raise DatasetError(f"line {line_no}: missing label")
            label = _parse_label(str(obj["label"]), line_no, valid_labels)
            if "text" in obj:
                examples.append(Example(text=obj["text"], label=label))
            elif "premise" in obj and "hypothesis" in obj:
                examples.append(Example(premise=obj["premise"], hypothesis=obj["hypothesis"], label=label))
            else:
                raise DatasetError(f"line {line_no}: need either 'text' or 'premise'+'hypothesis'")
    return examples


def _input_seed(seed: int, index: int) -> int:
    return (seed * 1_000_003 + index * 7919 + 1) % 2**31


def encode_example(example: Example, tokenizer, segment: str) -> tuple[TokenSequence, frozenset[int]]:
    """Tokenize an example; for pairs, return extra frozen positions covering
    the non-attacked segment (and the separator, when the vocab has one)."""
    if not example.is_pair:
        return tokenizer.encode(example.text), frozenset()
    premise = tokenizer.encode(example.premise)
    hypothesis = tokenizer.encode(example.hypothesis)
    sep_ids: tuple[int, ...] = ()
    if SEP_TOKEN in tokenizer.vocab.tokens:
        sep_ids = (tokenizer.vocab.id_of(SEP_TOKEN),)
    ids = premise.ids + sep_ids + hypothesis.ids
    seq = TokenSequence(ids=ids, vocab_size=tokenizer.vocab.size)
    n_premise = len(premise.ids)
    boundary = range(n_premise, n_premise + len(sep_ids))
    if segment == "hypothesis":
        frozen = set(range(n_premise)) | set(boundary)
    else:
        frozen = set(boundary) | set(range(n_premise + len(sep_ids), len(ids)))
    return seq, frozenset(frozen)


@dataclass
class WhiteboxSummary:
    total: int
    pre_attack_errors: int
    attacked: int
    successes: int
    clean_accuracy: float
    adversarial_accuracy: float
    mean_queries: float | None
    mean_similarity: float | None


def run_whitebox(
    config: RunConfig, bundle: ModelBundle | None = None, write_outputs: bool = True
) -> tuple[WhiteboxSummary, list[dict]]:
    """Attack every correctly-classified input in the dataset.

    Already-misclassified inputs are skipped and count against clean accuracy
    only. Returns the summary plus the per-input records; optionally persists
    records, theta checkpoints and the resolved config to the output dir.
    """
    config.validate_paths()
    if bundle is None:
        bundle = load_model(config.model_plugin, config.model_path)
    tokenizer = WhitespaceTokenizer(bundle.vocab)
    examples = ingest_dataset(config.dataset_path, config.dataset_format, config.valid_labels)
    if config.max_examples is not None:
        examples = examples[: config.max_examples]

    idf_corpus = None
    if config.idf_corpus:
        idf_corpus = [
            tokenizer.encode(line)
            for line in Path(config.idf_corpus).read_text().splitlines()
            if line.strip()
        ]

    target = bundle.classifier
    hard_target = HardLabelView(target, name="source")
    scorer = MeanPooledSimilarity(bundle.embedder)
    budget = SamplingBudget(max_samples=config.attack.max_samples_whitebox)
    chash = config_hash(config.attack)

    records: list[dict] = []
    theta_items: list[dict] = []
    pre_attack_errors = 0
    successes = 0
    attacked = 0
    queries: list[int] = []
    similarities: list[float] = []

    for idx, example in enumerate(examples):
        seq, extra_frozen = encode_example(example, tokenizer, config.attack_segment)
        clean_text = tokenizer.decode(seq)
        record = {
            "id": idx,
            "clean_text": clean_text,
            "label": example.label,
            "config_hash": chash,
        }
        if target.predict(seq) != example.label:
            pre_attack_errors += 1
            record.update(
                success=None, queries=0, similarity=None,
                adversarial_text=None, retokenization_stable=None, skipped="pre_attack_error",
            )
            records.append(record)
            continue

        rng = torch.Generator().manual_seed(_input_seed(config.seed, idx))
        theta0 = initialize_theta(
            seq, bundle.vocab, config.attack.init_constant,
            dtype=target.embedding_table().vectors.dtype, extra_frozen=extra_frozen,
        )
        idf = compute_idf(idf_corpus, seq) if idf_corpus else None
        theta, traces = optimize(
            seq, example.label, target, bundle.lm, bundle.embedder,
            config.attack, rng, idf=idf, theta=theta0,
        )
        result = sample_adversarial(
            theta, hard_target, example.label, budget, rng,
            tokenizer=tokenizer, original=seq,
        )
        final = result.final_sample
        sim = scorer(seq, final) if final is not None else None
        attacked += 1
        successes += int(result.success)
        queries.append(result.queries_used)
        if sim is not None:
            similarities.append(sim)
        stable = all(s.retokenization_stable for s in result.adversarial_samples)
        record.update(
            success=result.success,
            queries=result.queries_used,
            similarity=sim,
            adversarial_text=tokenizer.decode(final) if final is not None else None,
            retokenization_stable=stable,
            entropy_trace_len=len(traces.entropies),
        )
        records.append(record)
        theta_items.append(
            {
                "id": idx,
                "ids": list(seq.ids),
                "label": example.label,
                "values": theta.values,
                "frozen_rows": sorted(theta.frozen_rows),
            }
        )

    total = len(examples)
    summary = WhiteboxSummary(
        total=total,
        pre_attack_errors=pre_attack_errors,
        attacked=attacked,
        successes=successes,
        clean_accuracy=(total - pre_attack_errors) / total if total else 0.0,
        adversarial_accuracy=1.0 - successes / attacked if attacked else 0.0,
        mean_queries=sum(queries) / len(queries) if queries else None,
        mean_similarity=sum(similarities) / len(similarities) if similarities else None,
    )

    if write_outputs:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(config.to_json() + "\n")
        with open(out / "records.jsonl", "w") as f:
            for record in records:
                f.write(json.dumps(record, sort_keys=True) + "\n")
        (out / "summary.json").write_text(json.dumps(dataclasses.asdict(summary), sort_keys=True, indent=2) + "\n")
        torch.save({"version": 1, "config_hash": chash, "items": theta_items}, out / "thetas.pt")
    return summary, records


def load_theta_store(path: str | Path) -> list[tuple[TokenSequence, int, ThetaMatrix]]:
    blob = torch.load(path, weights_only=True)
    store = []
    for item in blob["items"]:
        seq = TokenSequence(ids=tuple(item["ids"]), vocab_size=item["values"].shape[1])
        theta = ThetaMatrix(values=item["values"], frozen_rows=frozenset(item["frozen_rows"]))
        store.append((seq, item["label"], theta))
    return store


def run_transfer(
    config: RunConfig,
    theta_store: list[tuple[TokenSequence, int, ThetaMatrix]] | None = None,
    targets=None,
    write_outputs: bool = True,
) -> dict[str, TransferReport]:
    """Query each configured hard-label target with samples from stored thetas."""
    config.validate_paths()
    bundle = load_model(config.model_plugin, config.model_path)
    tokenizer = WhitespaceTokenizer(bundle.vocab)
    if theta_store is None:
        theta_store = load_theta_store(Path(config.output_dir) / "thetas.pt")
    if targets is None:
        targets = {}
        for spec_item in config.transfer_targets:
            target_bundle = load_model(spec_item.get("plugin", "reference"), spec_item["path"])
            targets[spec_item["name"]] = HardLabelView(target_bundle.classifier, name=spec_item["name"])
    scorer = MeanPooledSimilarity(bundle.embedder)
    budget = SamplingBudget(max_samples=config.attack.max_samples_transfer)
    reports = transfer_attack(
        theta_store, targets, budget,
        similarity_scorer=scorer, tokenizer=tokenizer, rng_seed=config.seed,
    )
    # Inputs with no stored theta (e.g. pre-attack errors) are skipped, not attacked.
    num_examples = len(ingest_dataset(config.dataset_path, config.dataset_format, config.valid_labels))
    if config.max_examples is not None:
        num_examples = min(num_examples, config.max_examples)
    for report in reports.values():
        report.skipped = max(0, num_examples - len(theta_store))
    if write_outputs:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, report in reports.items():
            payload = {
                "target": name,
                "adversarial_accuracy": report.adversarial_accuracy,
                "success_rate": report.success_rate,
                "mean_queries": report.mean_queries,
                "mean_similarity": report.mean_similarity,
                "skipped": report.skipped,
                "per_input": [dataclasses.asdict(r) for r in report.per_input],
            }
            (out / f"transfer_{name}.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return reports


SWEEP_COLUMNS = ("lambda_sim", "kappa", "init_constant", "adv_accuracy", "mean_similarity", "mean_queries")


def run_sweep(
    config: RunConfig,
    lambda_sims: list[float],
    kappas: list[float],
    init_constants: list[float],
    seeds: list[int],
    bundle: ModelBundle | None = None,
    write_outputs: bool = True,
) -> list[dict]:
    """Grid sweep over the soft-constraint strength, margin and init constant.

    Each grid point averages white-box metrics over the given seeds; the
    resulting table maps out the similarity / success / query trade-off.
    """
    if not (lambda_sims and kappas and init_constants and seeds):
        raise ConfigError("sweep grid must be non-empty")
    if bundle is None:
        bundle = load_model(config.model_plugin, config.model_path)
    rows: list[dict] = []
    for lam in lambda_sims:
        for kappa in kappas:
            for c in init_constants:
                accs, sims, qs = [], [], []
                for seed in seeds:
                    point = dataclasses.replace(
                        config,
                        seed=seed,
                        attack=dataclasses.replace(
                            config.attack, lambda_sim=lam, kappa=kappa, init_constant=c, rng_seed=seed
                        ),
                    )
                    summary, _ = run_whitebox(point, bundle=bundle, write_outputs=False)
                    accs.append(summary.adversarial_accuracy)
                    if summary.mean_similarity is not None:
                        sims.append(summary.mean_similarity)
                    if summary.mean_queries is not None:
                        qs.append(summary.mean_queries)
                rows.append(
                    {
                        "lambda_sim": lam,
                        "kappa": kappa,
                        "init_constant": c,
                        "adv_accuracy": sum(accs) / len(accs),
                        "mean_similarity": sum(sims) / len(sims) if sims else None,
                        "mean_queries": sum(qs) / len(qs) if qs else None,
                    }
                )
    if write_outputs:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_sweep_table(rows, out / "sweep.tsv")
    return rows


def write_sweep_table(rows: list[dict], path: str | Path) -> None:
    with open(path, "w") as f:
        f.write("\t".join(SWEEP_COLUMNS) + "\n")
        for row in rows:
            f.write("\t".join(json.dumps(row[c]) for c in SWEEP_COLUMNS) + "\n")


def read_sweep_table(path: str | Path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split("\t")
    return [dict(zip(header, (json.loads(v) for v in line.split("\t")))) for line in lines[1:]]
