"""Command-line interface. Exit codes: 0 ok, 2 config, 3 data, 4 mining,
5 scoring, 6 training, 7 evaluation.

Every subcommand accepts --config FILE (a TOML experiment config supplying
defaults) plus explicit flags that override the corresponding config keys.
"""

from __future__ import annotations

import sys

import click

from . import rotate as rotate_mod
from .augment import AugmentConfig, augment_pipeline
from .errors import ConfigError, RulekitError
from .evaluation import evaluate, write_outcomes_tsv
from .kg import load_graph_dir
from .metrics import FilterConfig, filter_rules, score_rules, write_scored_rules
from .mining import MiningTally, mine_rules
from .pipeline import (
    ablation_matrix,
    load_config,
    run_pipeline,
    write_ablation_tsv,
)
from .predictor import load_predictor, make_scorer, save_predictor, train_predictor
from .rotate import EnsembleConfig, save_rotate, train_rotate
from .rules import RuleSet, read_rules_file, ruleset_hash, write_rules_file


def _parse_lengths(text: str | None):
    if text is None:
        return None
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad walk lengths {text!r}; expected e.g. '2,3'") from None


def _experiment(config_path, **overrides):
    return load_config(config_path, overrides=overrides)


def _load_kg(cfg):
    return load_graph_dir(cfg.kg_dir, cfg.train_file, cfg.valid_file, cfg.test_file)


def _load_rules(path, kg):
    try:
        return read_rules_file(path, kg)
    except OSError as exc:
        raise ConfigError(f"cannot read rules file {path}: {exc}") from exc


def shared_flags(fn):
    fn = click.option("--config", "config_path", default=None,
                      help="TOML experiment config supplying defaults.")(fn)
    fn = click.option("--kg", "kg_dir", default=None,
                      help="Directory with train/valid/test TSVs.")(fn)
    fn = click.option("--seed", default=None, type=int)(fn)
    fn = click.option("--threads", default=None, type=int,
                      help="Worker cap; informational, recorded in manifests.")(fn)
    return fn


@click.group()
def cli():
    """Rule mining, augmentation, scoring and link-prediction toolkit."""


@cli.command()
@shared_flags
@click.option("--walks", default=None, type=int, help="Walks per entity per length.")
@click.option("--lengths", default=None, help="Comma-separated walk lengths, e.g. '2,3'.")
@click.option("--min-pca", default=None, type=float)
@click.option("--out", required=True, help="Output rules file.")
def mine(config_path, kg_dir, seed, threads, walks, lengths, min_pca, out):
    """Mine candidate rules by local random walks, keep those above the PCA cut."""
    cfg = _experiment(
        config_path,
        kg_dir=kg_dir, seed=seed, threads=threads,
        **{
            "mine.walks_per_entity": walks,
            "mine.lengths": _parse_lengths(lengths),
            "mine.pca_threshold": min_pca,
        },
    )
    kg = _load_kg(cfg)
    tally = MiningTally()
    rules = mine_rules(kg, cfg.walk, tally=tally)
    write_rules_file(rules, kg, out)
    click.echo(
        f"mined {len(rules)} rules ({tally.walks_attempted} walks, "
        f"{tally.walks_dead_ended} dead ends) -> {out}"
    )


@cli.command()
@shared_flags
@click.option("--rules", "rules_path", default=None, help="Input rules file.")
@click.option("--abduce/--no-abduce", default=True, show_default=True)
@click.option("--invert/--no-invert", default=True, show_default=True)
@click.option("--mine", "do_mine", is_flag=True, default=False, help="Add random-walk rules.")
@click.option("--filter", "do_filter", is_flag=True, default=False, help="Apply the PCA filter.")
@click.option("--walks", default=None, type=int)
@click.option("--lengths", default=None)
@click.option("--min-pca", default=None, type=float)
@click.option("--out", required=True)
def augment(config_path, kg_dir, seed, threads, rules_path, abduce, invert,
            do_mine, do_filter, walks, lengths, min_pca, out):
    """Augment a ruleset by abduction, inversion, mining and filtering."""
    cfg = _experiment(
        config_path,
        kg_dir=kg_dir, seed=seed, threads=threads, rules_path=rules_path,
        **{
            "mine.walks_per_entity": walks,
            "mine.lengths": _parse_lengths(lengths),
            "mine.pca_threshold": min_pca,
            "filter.pca_threshold": min_pca,
        },
    )
    kg = _load_kg(cfg)
    rules = _load_rules(cfg.rules_path, kg) if cfg.rules_path else RuleSet()
    aug_cfg = AugmentConfig(
        enable_abduction=abduce, enable_inversion=invert,
        enable_random_walk=do_mine, enable_filter=do_filter,
    )
    out_rules = augment_pipeline(rules, kg, aug_cfg, cfg.walk, cfg.filter)
    write_rules_file(out_rules, kg, out)
    click.echo(f"augmented {len(rules)} -> {len(out_rules)} rules -> {out}")


@cli.command()
@shared_flags
@click.option("--rules", "rules_path", required=True)
@click.option("--head-scope", default=None,
              type=click.Choice(["all_train_heads", "test_heads"]))
@click.option("--positives", default=None,
              type=click.Choice(["train", "train_and_test"]))
@click.option("--out", required=True, help="Output scored-rules TSV.")
def score(config_path, kg_dir, seed, threads, rules_path, head_scope, positives, out):
    """Score every rule's PCA confidence and FOIL score into a TSV."""
    cfg = _experiment(
        config_path,
        kg_dir=kg_dir, seed=seed, threads=threads,
        **{"filter.head_scope": head_scope, "filter.positives_scope": positives},
    )
    kg = _load_kg(cfg)
    rules = _load_rules(rules_path, kg)
    scores = score_rules(rules, kg, cfg.filter)
    write_scored_rules(out, kg, rules, scores)
    click.echo(f"scored {len(rules)} rules -> {out}")


@cli.command("filter")
@shared_flags
@click.option("--rules", "rules_path", required=True)
@click.option("--min-pca", default=None, type=float)
@click.option("--rescue-groundings", default=None, type=int,
              help="Keep rules with at least this many groundings regardless of PCA.")
@click.option("--out", required=True)
def filter_cmd(config_path, kg_dir, seed, threads, rules_path, min_pca,
               rescue_groundings, out):
    """Keep rules whose PCA confidence reaches the threshold."""
    cfg = _experiment(
        config_path,
        kg_dir=kg_dir, seed=seed, threads=threads,
        **{
            "filter.pca_threshold": min_pca,
            "filter.min_groundings_rescue": rescue_groundings,
        },
    )
    kg = _load_kg(cfg)
    rules = _load_rules(rules_path, kg)
    kept = filter_rules(rules, kg, cfg.filter)
    write_rules_file(kept, kg, out)
    click.echo(f"kept {len(kept)} / {len(rules)} rules -> {out}")


@cli.command()
@shared_flags
@click.option("--rules", "rules_path", required=True)
@click.option("--epochs", default=None, type=int)
@click.option("--batch-size", default=None, type=int)
@click.option("--lr", default=None, type=float)
@click.option("--dim", default=None, type=int)
@click.option("--hidden", default=None, type=int)
@click.option("--count-transform", default=None, type=click.Choice(["raw", "log1p"]))
@click.option("--out", required=True, help="Checkpoint path.")
def train(config_path, kg_dir, seed, threads, rules_path, epochs, batch_size,
          lr, dim, hidden, count_transform, out):
    """Train the rule-embedding predictor."""
    cfg = _experiment(
        config_path,
        kg_dir=kg_dir, seed=seed, threads=threads,
        **{
            "train.epochs": epochs,
            "train.batch_size": batch_size,
            "train.learning_rate": lr,
            "train.dim": dim,
            "train.hidden": hidden,
            "train.count_transform": count_transform,
        },
    )
    kg = _load_kg(cfg)
    rules = _load_rules(rules_path, kg)
    params = train_predictor(kg, rules, cfg.train)
    save_predictor(out, params)
    click.echo(f"trained predictor on {len(rules)} rules -> {out}")


@cli.command("train-rotate")
@shared_flags
@click.option("--dim", default=None, type=int)
@click.option("--gamma", default=None, type=float)
@click.option("--epochs", default=None, type=int)
@click.option("--batch-size", default=None, type=int)
@click.option("--lr", default=None, type=float)
@click.option("--negatives", default=None, type=int)
@click.option("--out", required=True)
def train_rotate_cmd(config_path, kg_dir, seed, threads, dim, gamma, epochs,
                     batch_size, lr, negatives, out):
    """Train the rotation embedding model."""
    cfg = _experiment(
        config_path,
        kg_dir=kg_dir, seed=seed, threads=threads,
        **{
            "rotate.dim": dim,
            "rotate.gamma": gamma,
            "rotate.epochs": epochs,
            "rotate.batch_size": batch_size,
            "rotate.learning_rate": lr,
            "rotate.negatives": negatives,
        },
    )
    kg = _load_kg(cfg)
    params = train_rotate(kg, cfg.rotate)
    save_rotate(out, params)
    click.echo(f"trained rotate embeddings -> {out}")


@cli.command("eval")
@shared_flags
@click.option("--rules", "rules_path", default=None)
@click.option("--ckpt", default=None, help="Predictor checkpoint.")
@click.option("--rotate-ckpt", default=None, help="Rotation checkpoint for the ensemble.")
@click.option("--eta", default=None, type=float)
@click.option("--out", required=True, help="Metrics JSON path.")
@click.option("--per-query", default=None, help="Optional per-query TSV path.")
def eval_cmd(config_path, kg_dir, seed, threads, rules_path, ckpt, rotate_ckpt,
             eta, out, per_query):
    """Filtered-ranking evaluation on the test split."""
    cfg = _experiment(
        config_path,
        kg_dir=kg_dir, seed=seed, threads=threads,
        **{"ensemble.eta": eta},
    )
    kg = _load_kg(cfg)
    scorer = None
    if ckpt is not None:
        if rules_path is None:
            raise ConfigError("--ckpt needs --rules to rebuild groundings")
        rules = _load_rules(rules_path, kg)
        params = load_predictor(ckpt, expect_digest=ruleset_hash(rules))
        scorer = make_scorer(params, kg, rules)
    if rotate_ckpt is not None:
        rot = rotate_mod.make_scorer(rotate_mod.load_rotate(rotate_ckpt))
        if scorer is None:
            scorer = rot
        else:
            scorer = rotate_mod.make_ensemble_scorer(scorer, rot, cfg.ensemble)
    if scorer is None:
        raise ConfigError("nothing to evaluate: pass --ckpt and/or --rotate-ckpt")
    report = evaluate(scorer, kg, split="test")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    if per_query:
        write_outcomes_tsv(per_query, kg, report)
    click.echo(report.to_json().rstrip())


@cli.command()
@shared_flags
@click.option("--out", "out_dir", default=None)
@click.option("--rules", "rules_path", default=None)
def pipeline(config_path, kg_dir, seed, threads, out_dir, rules_path):
    """Run the full staged pipeline from a config file (flags override it)."""
    cfg = _experiment(
        config_path,
        kg_dir=kg_dir, out_dir=out_dir, rules_path=rules_path,
        seed=seed, threads=threads,
    )
    result = run_pipeline(cfg)
    if result.metrics is not None:
        click.echo(result.metrics.to_json().rstrip())
    click.echo(f"manifest: {result.manifest_path}")


@cli.command()
@shared_flags
@click.option("--out", "out_dir", default=None)
@click.option("--rules", "rules_path", default=None)
def ablate(config_path, kg_dir, seed, threads, out_dir, rules_path):
    """Leave-one-out ablation over the augmentation stages."""
    import os

    cfg = _experiment(
        config_path,
        kg_dir=kg_dir, out_dir=out_dir, rules_path=rules_path,
        seed=seed, threads=threads,
    )
    rows = ablation_matrix(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    table_path = os.path.join(cfg.out_dir, "ablation.tsv")
    write_ablation_tsv(table_path, rows)
    for label, report in rows:
        mrr = "NA" if report is None else f"{report.mrr:.4f}"
        click.echo(f"{label}\tMRR={mrr}")
    click.echo(f"table: {table_path}")


def main():
    try:
        cli.main(standalone_mode=False)
    except RulekitError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except click.exceptions.Abort:
        sys.exit(130)


if __name__ == "__main__":
    main()
