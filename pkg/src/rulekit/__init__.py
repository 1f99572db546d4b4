"""rulekit: chain-rule mining, augmentation, scoring and link prediction."""

from .augment import AugmentConfig, abduce, augment_pipeline, invert
from .errors import (
    ConfigError,
    DataError,
    EvaluationError,
    MiningError,
    RulekitError,
    ScoringError,
    TrainingError,
)
from .evaluation import (
    MetricsReport,
    Query,
    RankOutcome,
    evaluate,
    filtered_mask,
    rank_of,
    split_queries,
)
from .kg import (
    KnowledgeGraph,
    Triple,
    build_graph,
    inverse_of,
    is_inverse,
    load_graph_dir,
    load_triples,
    write_triples,
)
from .metrics import (
    FilterConfig,
    GroundingStats,
    RuleScore,
    filter_rules,
    foil_score,
    path_count_rows,
    pca_confidence,
    quality_histogram,
    score_rule,
    score_rules,
)
from .mining import MiningTally, WalkConfig, mine_rules, random_walk_candidates
from .pipeline import (
    ExperimentConfig,
    ablation_matrix,
    cap_rules_per_relation,
    load_config,
    run_pipeline,
)
from .predictor import (
    GroundingCache,
    PredictorParams,
    TrainConfig,
    gradient_check,
    grounding_counts,
    score_candidates,
    train_predictor,
)
from .rotate import (
    EnsembleConfig,
    RotateConfig,
    RotateParams,
    ensemble_score,
    rotate_score,
    train_rotate,
)
from .rules import Rule, RuleOrigin, RuleSet, dedup, parse_rule, serialize_rule

__version__ = "0.1.0"
