"""Command-line entry points.

Subcommands: ``train-reference`` (build desk-scale models and datasets),
``attack`` (white-box run), ``transfer``, ``sweep``, and ``idf``.
Flags map 1:1 to run-config fields; a JSON config file may supply any field,
with flags taking precedence.
"""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import click

from .core import AttackConfig, ConfigError
from .models import save_bundle
from .runner import DatasetError, RunConfig, run_sweep, run_transfer, run_whitebox
from .synthetic import accuracy, train_synthetic_task


@click.group()
def main():
    """Gradient-based distributional attacks on text classifiers."""


_ATTACK_FIELDS = {f.name for f in dataclasses.fields(AttackConfig)}
_RUN_FIELDS = {f.name for f in dataclasses.fields(RunConfig)} - {"attack"}


def _build_config(config_file: str | None, overrides: dict) -> RunConfig:
    blob: dict = {}
    if config_file:
        blob = json.loads(Path(config_file).read_text())
    attack_blob = dict(blob.pop("attack", {}))
    for key, value in overrides.items():
        if value is None:
            continue
        if key in _ATTACK_FIELDS:
            attack_blob[key] = value
        elif key in _RUN_FIELDS:
            blob[key] = value
        else:
            raise ConfigError(f"unknown config field {key!r}")
    blob["attack"] = attack_blob
    try:
        return RunConfig.from_dict(blob)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def _common_options(fn):
    options = [
        click.option("--config", "config_file", type=click.Path(exists=True), default=None,
                     help="JSON config file; flags override its fields."),
        click.option("--dataset", "dataset_path", type=str, default=None),
        click.option("--dataset-format", type=click.Choice(["tsv", "jsonl"]), default=None),
        click.option("--models", "model_path", type=str, default=None,
                     help="Model bundle checkpoint."),
        click.option("--model-plugin", type=str, default=None),
        click.option("--out", "output_dir", type=str, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--max-examples", type=int, default=None),
        click.option("--idf-corpus", type=str, default=None),
        click.option("--attack-segment", type=click.Choice(["premise", "hypothesis"]), default=None),
        click.option("--learning-rate", type=float, default=None),
        click.option("--batch-size", type=int, default=None),
        click.option("--num-iterations", type=int, default=None),
        click.option("--init-constant", type=float, default=None),
        click.option("--kappa", type=float, default=None),
        click.option("--lambda-lm", type=float, default=None),
        click.option("--lambda-sim", type=float, default=None),
        click.option("--temperature", type=float, default=None),
        click.option("--max-samples-whitebox", type=int, default=None),
        click.option("--max-samples-transfer", type=int, default=None),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _fail(e: Exception):
    raise click.ClickException(str(e))


@main.command("attack")
@_common_options
def attack_cmd(config_file, **overrides):
    """Run the white-box attack over a dataset."""
    try:
        config = _build_config(config_file, overrides)
        summary, _ = run_whitebox(config)
    except (ConfigError, DatasetError, OSError) as e:
        _fail(e)
    click.echo(json.dumps(dataclasses.asdict(summary), indent=2))


@main.command("transfer")
@click.option("--target", "target_specs", multiple=True,
              help="name=path of a hard-label target bundle; repeatable.")
@_common_options
def transfer_cmd(config_file, target_specs, **overrides):
    """Transfer stored adversarial distributions to hard-label targets."""
    try:
        config = _build_config(config_file, overrides)
        for item in target_specs:
            name, _, path = item.partition("=")
            if not path:
                raise ConfigError(f"--target must be name=path, got {item!r}")
            config.transfer_targets.append({"name": name, "plugin": "reference", "path": path})
        reports = run_transfer(config)
    except (ConfigError, DatasetError, OSError) as e:
        _fail(e)
    for name, report in reports.items():
        click.echo(
            f"{name}: adv_acc={report.adversarial_accuracy:.3f} "
            f"mean_queries={report.mean_queries:.1f} "
            f"mean_sim={report.mean_similarity if report.mean_similarity is None else round(report.mean_similarity, 3)}"
        )


@main.command("sweep")
@click.option("--lambda-sims", default="10,20,50", help="Comma-separated grid.")
@click.option("--kappas", default="5", help="Comma-separated grid.")
@click.option("--init-constants", default="12", help="Comma-separated grid.")
@click.option("--seeds", default="0,1,2,3,4", help="Comma-separated seeds to average over.")
@_common_options
def sweep_cmd(config_file, lambda_sims, kappas, init_constants, seeds, **overrides):
    """Grid-sweep the trade-off between similarity pressure and attack success."""
    try:
        config = _build_config(config_file, overrides)
        rows = run_sweep(
            config,
            [float(v) for v in lambda_sims.split(",")],
            [float(v) for v in kappas.split(",")],
            [float(v) for v in init_constants.split(",")],
            [int(v) for v in seeds.split(",")],
        )
    except (ConfigError, DatasetError, OSError) as e:
        _fail(e)
    for row in rows:
        click.echo(json.dumps(row))


@main.command("train-reference")
@click.option("--out", "output_dir", required=True, type=str)
@click.option("--seed", type=int, default=0)
@click.option("--num-train", type=int, default=512)
@click.option("--num-test", type=int, default=256)
@click.option("--seq-len", type=int, default=8)
@click.option("--dim", type=int, default=16)
@click.option("--classifier-seed", type=int, default=None,
              help="Train the classifier with a different init seed (transfer targets).")
def train_reference_cmd(output_dir, seed, num_train, num_test, seq_len, dim, classifier_seed):
    """Build the synthetic task, train the desk-scale models, save everything."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    task = train_synthetic_task(
        seed=seed, num_train=num_train, num_test=num_test,
        seq_len=seq_len, dim=dim, classifier_seed=classifier_seed,
    )
    save_bundle(task.bundle, out / "bundle.pt")
    for split_name, split in (("train", task.train), ("test", task.test)):
        with open(out / f"{split_name}.tsv", "w") as f:
            for ex in split:
                f.write(f"{task.tokenizer.decode(ex.sequence)}\t{ex.label}\n")
    acc = accuracy(task.bundle.classifier, task.test)
    click.echo(f"saved bundle and splits to {out}; clean test accuracy {acc:.3f}")


@main.command("idf")
@click.option("--corpus", required=True, type=click.Path(exists=True),
              help="Plain text, one document per line.")
@click.option("--out", "output_path", required=True, type=str)
def idf_cmd(corpus, output_path):
    """Compute a smoothed idf table over a line-per-document corpus."""
    docs = [line.split() for line in Path(corpus).read_text().splitlines() if line.strip()]
    if not docs:
        _fail(ConfigError("corpus is empty"))
    n_docs = len(docs)
    df: dict[str, int] = {}
    for doc in docs:
        for tok in set(doc):
            df[tok] = df.get(tok, 0) + 1
    table = {tok: math.log((n_docs + 1) / (count + 1)) + 1.0 for tok, count in sorted(df.items())}
    Path(output_path).write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    click.echo(f"wrote idf table for {len(table)} tokens over {n_docs} documents")


if __name__ == "__main__":
    main()
