"""Experiment orchestration: staged pipeline, ablation table, run manifest.

A run reads the graph, optionally augments an input ruleset (abduction,
inversion, walk mining, PCA filtering), optionally caps rules per head
relation, trains the rule predictor and/or the rotation embeddings, and
evaluates under the filtered protocol. Every artifact is re-readable by
its loader and every byte of output is determined by (config, seed,
input files); the manifest records artifact digests so reruns can be
compared cheaply.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

from . import rotate as rotate_mod
from .augment import AugmentConfig, augment_pipeline
from .errors import (
    ConfigError,
    MiningError,
    RulekitError,
    ScoringError,
    TrainingError,
)
from .evaluation import MetricsReport, evaluate, write_outcomes_tsv
from .kg import KnowledgeGraph, load_graph_dir
from .metrics import FilterConfig, RuleScore, score_rules, write_scored_rules
from .mining import WalkConfig
from .predictor import (
    GroundingCache,
    TrainConfig,
    make_scorer,
    save_predictor,
    train_predictor,
)
from .rotate import EnsembleConfig, RotateConfig, make_ensemble_scorer, save_rotate
from .rules import RuleSet, read_rules_file, ruleset_hash, write_rules_file

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib


@dataclass
class StageToggles:
    mine: bool = True
    abduce: bool = True
    invert: bool = True
    filter: bool = True
    train: bool = True
    train_rotate: bool = False
    evaluate: bool = True

    def any_enabled(self) -> bool:
        return any(asdict(self).values())


@dataclass
class ExperimentConfig:
    kg_dir: str = "."
    out_dir: str = "run"
    rules_path: str | None = None
    seed: int = 7
    threads: int = 0
    train_file: str = "train.txt"
    valid_file: str = "valid.txt"
    test_file: str = "test.txt"
    rules_per_relation: int | None = None
    stages: StageToggles = field(default_factory=StageToggles)
    walk: WalkConfig = field(default_factory=WalkConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rotate: RotateConfig = field(default_factory=RotateConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)

    def __post_init__(self):
        # One run seed drives every stage's RNG stream.
        self.walk = replace(self.walk, rng_seed=self.seed)
        self.train = replace(self.train, rng_seed=self.seed)
        self.rotate = replace(self.rotate, rng_seed=self.seed)

    def digest(self) -> str:
        doc = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(doc.encode()).hexdigest()


_SECTION_TYPES = {
    "stages": StageToggles,
    "mine": WalkConfig,
    "filter": FilterConfig,
    "train": TrainConfig,
    "rotate": RotateConfig,
    "ensemble": EnsembleConfig,
}
_SECTION_ATTR = {
    "stages": "stages",
    "mine": "walk",
    "filter": "filter",
    "train": "train",
    "rotate": "rotate",
    "ensemble": "ensemble",
}


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from an optional TOML file plus flat CLI overrides.

    TOML layout: top-level keys in [run], one table per stage family.
    Overrides use dotted keys ("train.epochs") or run-level names.
    """
    doc: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    run = dict(doc.get("run", {}))
    kwargs = {}
    for key in (
        "kg_dir", "out_dir", "rules_path", "seed", "threads",
        "train_file", "valid_file", "test_file", "rules_per_relation",
    ):
        if key in run:
            kwargs[key] = run[key]
    for section, cls in _SECTION_TYPES.items():
        table = doc.get(section)
        if table is not None:
            try:
                kwargs[_SECTION_ATTR[section]] = cls(**table)
            except TypeError as exc:
                raise ConfigError(f"bad [{section}] table: {exc}") from None
    try:
        cfg = ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad [run] table: {exc}") from None
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    updates: dict = {}
    section_updates: dict[str, dict] = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTION_ATTR:
                raise ConfigError(f"unknown config section {section!r}")
            section_updates.setdefault(section, {})[name] = value
        else:
            updates[key] = value
    for section, table in section_updates.items():
        attr = _SECTION_ATTR[section]
        current = getattr(cfg, attr)
        try:
            updates[attr] = replace(current, **table)
        except TypeError as exc:
            raise ConfigError(f"bad override in [{section}]: {exc}") from None
    try:
        return replace(cfg, **updates)
    except TypeError as exc:
        raise ConfigError(f"bad override: {exc}") from None


@dataclass
class PipelineResult:
    rules: RuleSet
    scores: list[RuleScore]
    metrics: MetricsReport | None
    artifacts: dict[str, str]
    manifest_path: str | None


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def cap_rules_per_relation(
    rules: RuleSet,
    cap: int,
    scores: list[RuleScore] | None = None,
    kg: KnowledgeGraph | None = None,
    filter_cfg: FilterConfig | None = None,
) -> RuleSet:
    """Keep at most ``cap`` rules per head relation, best PCA first.

    Undefined PCA ranks below any defined score; ties keep file order.
    """
    if cap < 1:
        raise ConfigError("rules_per_relation cap must be at least 1")
    if scores is None:
        if kg is None:
            raise ConfigError("cap_rules_per_relation needs scores or a graph")
        scores = score_rules(rules, kg, filter_cfg or FilterConfig())
    keep: set[int] = set()
    for _head, positions in rules.by_head().items():
        # PCA lies in [0, 1], so 1.0 ranks undefined scores below them all.
        ranked = sorted(
            positions,
            key=lambda p: (-scores[p].pca if scores[p].pca is not None else 1.0, p),
        )
        keep.update(ranked[:cap])
    return RuleSet(rule for i, rule in enumerate(rules) if i in keep)


def run_pipeline(
    config: ExperimentConfig,
    kg: KnowledgeGraph | None = None,
    input_rules: RuleSet | None = None,
    cache: GroundingCache | None = None,
    write_artifacts: bool = True,
) -> PipelineResult:
    """Execute the configured stages in order; see the module docstring.

    ``kg``/``input_rules``/``cache`` may be supplied to skip reloading when
    several runs share a graph (the ablation driver does this).
    """
    stages = config.stages
    if not stages.any_enabled():
        raise ConfigError("no stage enabled")
    timings: dict[str, float] = {}
    artifacts: dict[str, str] = {}
    out_dir = config.out_dir
    if write_artifacts:
        os.makedirs(out_dir, exist_ok=True)

    def timed(name):
        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timings[name] = timings.get(name, 0.0) + time.perf_counter() - self.t0

        return _Timer()

    if kg is None:
        with timed("load"):
            kg = load_graph_dir(
                config.kg_dir, config.train_file, config.valid_file, config.test_file
            )

    if input_rules is None:
        if config.rules_path is not None:
            with timed("load"):
                input_rules = read_rules_file(config.rules_path, kg)
        else:
            input_rules = RuleSet()

    rules = RuleSet(input_rules)
    aug_cfg = AugmentConfig(
        enable_abduction=stages.abduce,
        enable_inversion=stages.invert,
        enable_random_walk=stages.mine,
        enable_filter=stages.filter,
    )
    if aug_cfg.any_enabled():
        with timed("augment"):
            try:
                rules = augment_pipeline(rules, kg, aug_cfg, config.walk, config.filter)
            except RulekitError:
                raise
            except Exception as exc:  # pragma: no cover - defensive
                raise MiningError(f"augmentation failed: {exc}") from exc

    with timed("score"):
        try:
            scores = score_rules(rules, kg, config.filter)
            if config.rules_per_relation is not None:
                capped = cap_rules_per_relation(rules, config.rules_per_relation, scores)
                scores = [scores[rules.position(rule)] for rule in capped]
                rules = capped
        except RulekitError:
            raise
        except Exception as exc:  # pragma: no cover - defensive
            raise ScoringError(f"rule scoring failed: {exc}") from exc

    if write_artifacts:
        rules_path = os.path.join(out_dir, "rules.out")
        write_rules_file(rules, kg, rules_path)
        artifacts["rules"] = rules_path
        scored_path = os.path.join(out_dir, "scored_rules.tsv")
        write_scored_rules(scored_path, kg, rules, scores)
        artifacts["scored_rules"] = scored_path

    shared_cache = cache if cache is not None else GroundingCache(kg)
    predictor_params = None
    if stages.train:
        with timed("train"):
            predictor_params = train_predictor(kg, rules, config.train, cache=shared_cache)
        if write_artifacts:
            ckpt = os.path.join(out_dir, "predictor.json")
            save_predictor(ckpt, predictor_params)
            artifacts["predictor"] = ckpt

    rotate_params = None
    if stages.train_rotate:
        with timed("train_rotate"):
            rotate_params = rotate_mod.train_rotate(kg, config.rotate)
        if write_artifacts:
            ckpt = os.path.join(out_dir, "rotate.json")
            save_rotate(ckpt, rotate_params)
            artifacts["rotate"] = ckpt

    metrics = None
    if stages.evaluate:
        with timed("evaluate"):
            if predictor_params is not None and rotate_params is not None:
                scorer = make_ensemble_scorer(
                    make_scorer(predictor_params, kg, rules, cache=shared_cache),
                    rotate_mod.make_scorer(rotate_params),
                    config.ensemble,
                )
            elif predictor_params is not None:
                scorer = make_scorer(predictor_params, kg, rules, cache=shared_cache)
            elif rotate_params is not None:
                scorer = rotate_mod.make_scorer(rotate_params)
            else:
                raise ConfigError("evaluate stage enabled but no model was trained")
            metrics = evaluate(scorer, kg, split="test")
        if write_artifacts:
            metrics_path = os.path.join(out_dir, "metrics.json")
            with open(metrics_path, "w", encoding="utf-8") as fh:
                fh.write(metrics.to_json())
            artifacts["metrics"] = metrics_path
            per_query = os.path.join(out_dir, "per_query.tsv")
            write_outcomes_tsv(per_query, kg, metrics)
            artifacts["per_query"] = per_query

    manifest_path = None
    if write_artifacts:
        manifest_path = os.path.join(out_dir, "manifest.json")
        manifest = {
            "config_digest": config.digest(),
            "seed": config.seed,
            "threads": config.threads,
            "ruleset_digest": ruleset_hash(rules),
            "artifacts": {k: _sha256_file(v) for k, v in artifacts.items()},
            "timings_s": {k: round(v, 6) for k, v in timings.items()},
        }
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return PipelineResult(rules, scores, metrics, artifacts, manifest_path)


ABLATION_ROWS: list[tuple[str, dict]] = [
    ("baseline", dict(mine=False, abduce=False, invert=False, filter=False)),
    ("aug", dict()),
    ("aug-abd", dict(abduce=False)),
    ("aug-inv", dict(invert=False)),
    ("aug-fil", dict(filter=False)),
    ("aug-rw", dict(mine=False)),
]


def ablation_matrix(
    config: ExperimentConfig,
    subsets: list[tuple[str, dict]] | None = None,
    kg: KnowledgeGraph | None = None,
    input_rules: RuleSet | None = None,
) -> list[tuple[str, MetricsReport | None]]:
    """One pipeline run per stage subset, sharing the grounding cache.

    The default rows are the no-augmentation control, the full pipeline,
    and every leave-one-out subset. Rows whose ruleset comes out empty
    report no metrics instead of failing the whole table.
    """
    if subsets is None:
        subsets = ABLATION_ROWS
    if kg is None:
        kg = load_graph_dir(
            config.kg_dir, config.train_file, config.valid_file, config.test_file
        )
    if input_rules is None:
        if config.rules_path is not None:
            input_rules = read_rules_file(config.rules_path, kg)
        else:
            input_rules = RuleSet()
    cache = GroundingCache(kg)
    rows: list[tuple[str, MetricsReport | None]] = []
    for label, toggles in subsets:
        stages = replace(
            config.stages, train=True, evaluate=True, train_rotate=False, **toggles
        )
        row_cfg = replace(config, stages=stages)
        try:
            result = run_pipeline(
                row_cfg, kg=kg, input_rules=input_rules, cache=cache,
                write_artifacts=False,
            )
            rows.append((label, result.metrics))
        except TrainingError:
            rows.append((label, None))
    return rows


def write_ablation_tsv(path, rows: list[tuple[str, MetricsReport | None]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("subset\tmr\tmrr\thits1\thits3\thits10\tnum_queries\n")
        for label, report in rows:
            if report is None:
                fh.write(f"{label}\tNA\tNA\tNA\tNA\tNA\tNA\n")
                continue
            fh.write(
                f"{label}\t{report.mr!r}\t{report.mrr!r}\t{report.hits[1]!r}"
                f"\t{report.hits[3]!r}\t{report.hits[10]!r}\t{report.num_queries}\n"
            )
