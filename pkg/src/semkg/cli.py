"""Command-line entry point: train, eval-lp, eval-tc, sweep, subsample.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage/config errors.
Machine-readable output is always the CSV files (figures are rendered
alongside them); stdout tables are for humans.
"""

from __future__ import annotations

import os
import sys

import click

from . import evaluation, figures, shallow, training
from .config import ConfigError, RunConfig, load_run_config
from .encoder import Encoder, EncoderConfig
from .errors import GraphIntegrityError, GraphLoadError, TrainingError
from .evaluation import (EncoderScorer, PerfectScorer, ShallowScorer,
                         link_prediction, low_resource_sweep,
                         triplet_classification, tune_threshold)
from .graph import KnowledgeGraph, SubsampleSpec, load_graph, save_graph, subsample_train
from .shallow import SHALLOW_KINDS, init_shallow, train_shallow
from .text import Tokenizer, build_vocab

DEFAULT_FRACTIONS = (0.05, 0.10, 0.15, 0.20, 0.30)
VOCAB_FILE = "vocab.txt"

_config_option = click.option("--config", "config_path", required=True,
                              type=click.Path(), help="Run configuration YAML.")
_seed_option = click.option("--seed", type=int, default=None,
                            help="Override the config seed.")
_threads_option = click.option("--threads", type=int, default=None,
                               help="Worker cap (default SEMKG_THREADS or 1).")
_out_option = click.option("--out", "out_dir", type=click.Path(), default=None,
                           help="Override the config output_dir.")


def _load(config_path, seed, out_dir, threads) -> RunConfig:
    try:
        return load_run_config(config_path, seed_override=seed,
                               output_override=out_dir,
                               threads_override=threads)
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc


def _load_graph(cfg: RunConfig) -> KnowledgeGraph:
    try:
        return load_graph(cfg.data_dir)
    except (GraphLoadError, GraphIntegrityError) as exc:
        raise click.ClickException(str(exc)) from exc


def _encoder_config(cfg: RunConfig, vocab_size: int) -> EncoderConfig:
    try:
        return EncoderConfig(vocab_size=vocab_size,
                             seed=cfg.module_seeds()["encoder_init"],
                             **cfg.encoder)
    except (TypeError, ValueError) as exc:
        raise click.UsageError(f"section 'encoder': {exc}") from exc


def _train_lass(cfg: RunConfig, g: KnowledgeGraph) -> None:
    tok = build_vocab(g, min_count=cfg.tokenizer_min_count,
                      max_len=cfg.encoder.get("max_len", 128))
    os.makedirs(cfg.output_dir, exist_ok=True)
    tok.save(os.path.join(cfg.output_dir, VOCAB_FILE))
    encoder_cfg = _encoder_config(cfg, tok.vocab_size)
    opt_cfg = _replace_seed(cfg.optimizer, cfg.module_seeds()["training"])
    state = training.train(g, tok, encoder_cfg, cfg.loss, opt_cfg,
                           cfg.output_dir,
                           manifest_extra={"vocab_file": VOCAB_FILE,
                                           "loss_b": cfg.loss.b})
    figures.plot_loss_curve(state.loss_history,
                            os.path.join(cfg.output_dir, "loss_curve.png"))
    click.echo(f"trained {state.step} steps; outputs in {cfg.output_dir}")


def _replace_seed(opt_cfg, seed):
    from dataclasses import replace
    return replace(opt_cfg, seed=seed)


def _train_shallow(cfg: RunConfig, g: KnowledgeGraph) -> None:
    seeds = cfg.module_seeds()
    model = init_shallow(cfg.model, g.num_entities, g.num_relations,
                         cfg.shallow_k, seed=seeds["shallow_init"])
    opt_cfg = _replace_seed(cfg.optimizer, seeds["training"])
    model = train_shallow(g, model, cfg.loss, opt_cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    shallow.save_shallow(cfg.output_dir, "final", model)
    training.write_loss_history(os.path.join(cfg.output_dir, "loss_history.csv"),
                                model.loss_history)
    figures.plot_loss_curve(model.loss_history,
                            os.path.join(cfg.output_dir, "loss_curve.png"))
    click.echo(f"trained {len(model.loss_history)} steps; "
               f"outputs in {cfg.output_dir}")


def _scorer_from_checkpoint(cfg: RunConfig, g: KnowledgeGraph,
                            checkpoint: str) -> evaluation.Scorer:
    try:
        from . import tensorio
        manifest = tensorio.load_manifest(checkpoint)
    except (OSError, ValueError) as exc:
        raise click.ClickException(f"cannot read checkpoint: {exc}") from exc
    kind = manifest.get("model")
    if kind != cfg.model:
        raise click.ClickException(
            f"checkpoint model {kind!r} does not match config model {cfg.model!r}")
    try:
        if kind == "lass":
            encoder, manifest = training.load_checkpoint(checkpoint)
            vocab_path = os.path.join(os.path.dirname(checkpoint),
                                      manifest.get("vocab_file", VOCAB_FILE))
            tok = Tokenizer.load(vocab_path, max_len=encoder.cfg.max_len)
            if encoder.cfg.vocab_size != tok.vocab_size:
                raise ValueError(f"vocabulary size {tok.vocab_size} does not "
                                 f"match checkpoint {encoder.cfg.vocab_size}")
            return EncoderScorer(g, encoder, tok, b=cfg.loss.b)
        model, _ = shallow.load_shallow(checkpoint)
        if model.entity_table.shape[0] != g.num_entities:
            raise ValueError("checkpoint entity table does not match the dataset")
        return ShallowScorer(g, model)
    except (OSError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc


@click.group()
def main():
    """Knowledge-graph completion: training, ranking, and classification."""


@main.command()
@_config_option
@_seed_option
@_threads_option
@_out_option
def train(config_path, seed, threads, out_dir):
    """Train the configured model and write checkpoints plus a loss CSV."""
    cfg = _load(config_path, seed, out_dir, threads)
    g = _load_graph(cfg)
    try:
        if cfg.model == "lass":
            _train_lass(cfg, g)
        else:
            _train_shallow(cfg, g)
    except (TrainingError, ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc


@main.command("eval-lp")
@_config_option
@click.option("--checkpoint", type=click.Path(), default=None,
              help="Checkpoint manifest (.json) to evaluate.")
@click.option("--stub-scorer", type=click.Choice(["perfect"]), default=None,
              hidden=True, help="Test hook: replace the model scorer.")
@_seed_option
@_threads_option
@_out_option
def eval_lp(config_path, checkpoint, stub_scorer, seed, threads, out_dir):
    """Filtered link prediction on the test split; prints MR/MRR/Hits@k."""
    cfg = _load(config_path, seed, out_dir, threads)
    g = _load_graph(cfg)
    if stub_scorer == "perfect":
        scorer = PerfectScorer(g)
    elif checkpoint is None:
        raise click.UsageError("--checkpoint is required (or --stub-scorer)")
    else:
        scorer = _scorer_from_checkpoint(cfg, g, checkpoint)
    try:
        outcome = link_prediction(scorer, g, cutoffs=cfg.eval.cutoffs,
                                  threads=cfg.threads)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = os.path.join(cfg.output_dir, "ranking.csv")
    evaluation.write_ranking_csv(csv_path, g, outcome)
    figures.plot_rank_histogram(outcome,
                                os.path.join(cfg.output_dir, "rank_histogram.png"))
    click.echo(f"{'metric':<10}{'value':>10}")
    click.echo(f"{'MR':<10}{outcome.mr:>10.3f}")
    click.echo(f"{'MRR':<10}{outcome.mrr:>10.3f}")
    for k in sorted(outcome.hits):
        click.echo(f"{f'Hits@{k}':<10}{outcome.hits[k]:>10.3f}")
    click.echo(f"report: {csv_path}")


@main.command("eval-tc")
@_config_option
@click.option("--checkpoint", type=click.Path(), required=True,
              help="Checkpoint manifest (.json) to evaluate.")
@_seed_option
@_threads_option
@_out_option
def eval_tc(config_path, checkpoint, seed, threads, out_dir):
    """Tune a score threshold on valid, classify test, report errors."""
    cfg = _load(config_path, seed, out_dir, threads)
    g = _load_graph(cfg)
    if g.labels_valid is None or g.labels_test is None:
        raise click.ClickException(
            "triplet classification needs labeled valid and test splits "
            "(a fourth 1/-1 column); this dataset has none")
    scorer = _scorer_from_checkpoint(cfg, g, checkpoint)
    try:
        tuned = tune_threshold(scorer, g)
        report = triplet_classification(scorer, g, tuned.threshold)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = os.path.join(cfg.output_dir, "classification.csv")
    evaluation.write_classification_csv(csv_path, g, report)
    figures.plot_error_breakdown(report, g,
                                 os.path.join(cfg.output_dir,
                                              "error_breakdown.png"))
    click.echo(f"{'threshold':<12}{report.threshold:>10.4f}")
    click.echo(f"{'accuracy':<12}{report.accuracy:>10.3f}")
    ordered = sorted(report.per_relation_errors.items(),
                     key=lambda item: (-item[1], item[0]))
    if ordered:
        click.echo("top error relations:")
        for rel, share in ordered[:10]:
            click.echo(f"  {g.relations[rel]:<28}{share:>8.1%}")
    click.echo(f"report: {csv_path}")


@main.command()
@_config_option
@click.option("--fractions", default=",".join(str(f) for f in DEFAULT_FRACTIONS),
              show_default=True, help="Comma-separated training fractions.")
@_seed_option
@_threads_option
@_out_option
def sweep(config_path, fractions, seed, threads, out_dir):
    """Train and evaluate on nested-seed subsets of the training split."""
    cfg = _load(config_path, seed, out_dir, threads)
    try:
        fraction_list = [float(f) for f in fractions.split(",") if f.strip()]
    except ValueError as exc:
        raise click.UsageError(f"invalid --fractions: {exc}") from exc
    if not fraction_list:
        raise click.UsageError("--fractions must name at least one fraction")
    for f in fraction_list:
        if not 0.0 < f <= 1.0:
            raise click.UsageError(f"invalid fraction {f}: must be in (0, 1]")
    g = _load_graph(cfg)
    labeled = g.labels_valid is not None and g.labels_test is not None

    def run_one(sub: KnowledgeGraph, fraction: float) -> float:
        run_dir = os.path.join(cfg.output_dir, "sweep", f"fraction_{fraction:g}")
        if cfg.model == "lass":
            tok = build_vocab(sub, min_count=cfg.tokenizer_min_count,
                              max_len=cfg.encoder.get("max_len", 128))
            encoder_cfg = _encoder_config(cfg, tok.vocab_size)
            opt_cfg = _replace_seed(cfg.optimizer, cfg.module_seeds()["training"])
            state = training.train(sub, tok, encoder_cfg, cfg.loss, opt_cfg, run_dir)
            scorer = EncoderScorer(sub, state.encoder, tok, b=cfg.loss.b)
        else:
            seeds = cfg.module_seeds()
            model = init_shallow(cfg.model, sub.num_entities, sub.num_relations,
                                 cfg.shallow_k, seed=seeds["shallow_init"])
            opt_cfg = _replace_seed(cfg.optimizer, seeds["training"])
            model = train_shallow(sub, model, cfg.loss, opt_cfg)
            shallow.save_shallow(run_dir, "final", model)
            scorer = ShallowScorer(sub, model)
        if labeled:
            tuned = tune_threshold(scorer, sub)
            return triplet_classification(scorer, sub, tuned.threshold).accuracy
        return link_prediction(scorer, sub, cutoffs=cfg.eval.cutoffs,
                               threads=cfg.threads).hits[10]

    rows = low_resource_sweep(g, fraction_list, run_one,
                              base_seed=cfg.module_seeds()["subsample"])
    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = os.path.join(cfg.output_dir, "sweep.csv")
    evaluation.write_sweep_csv(csv_path, rows)
    figures.plot_sweep_curve(rows, os.path.join(cfg.output_dir, "sweep.png"))
    metric = "accuracy" if labeled else "hits@10"
    click.echo(f"{'fraction':<10}{metric:>12}")
    for row in rows:
        shown = "error" if row.value is None else f"{row.value:.3f}"
        click.echo(f"{row.fraction:<10g}{shown:>12}")
        if row.error:
            click.echo(f"  failed: {row.error}")
    click.echo(f"report: {csv_path}")
    if all(row.value is None for row in rows):
        raise click.ClickException("every sweep row failed")


@main.command()
@_config_option
@click.option("--fraction", type=float, required=True,
              help="Training fraction to keep, in (0, 1].")
@click.option("--out", "out_dir", type=click.Path(), required=True,
              help="Directory for the subsampled dataset.")
@_seed_option
def subsample(config_path, fraction, out_dir, seed):
    """Write a copy of the dataset with a subsampled training split."""
    cfg = _load(config_path, seed, None, None)
    if not 0.0 < fraction <= 1.0:
        raise click.UsageError(f"invalid fraction {fraction}: must be in (0, 1]")
    g = _load_graph(cfg)
    sub = subsample_train(g, SubsampleSpec(fraction=fraction,
                                           seed=cfg.module_seeds()["subsample"]))
    save_graph(sub, out_dir)
    click.echo(f"kept {len(sub.train)} of {len(g.train)} training triples "
               f"in {out_dir}")


if __name__ == "__main__":
    sys.exit(main())
