"""Grounding counts and rule quality scores (PCA confidence, FOIL).

Path counts are computed by chaining sparse row blocks against the
per-relation train adjacency. Counts are exact 64-bit integers saturating
at ``SATURATION_LIMIT``; saturation is recorded per rule instead of
silently wrapping.

PCA confidence is the partial-closed-world precision: of the (h, t) pairs
reached by the body, the fraction that are known positives, restricted to
heads h that have at least one known tail under the head relation. The
FOIL variant weighs each pair by its number of groundings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import sparse

from .errors import ScoringError
from .kg import KnowledgeGraph
from .rules import Rule, RuleSet, serialize_rule, parse_rule

SATURATION_LIMIT = 2**62

NA_TOKEN = "NA"


@dataclass
class GroundingStats:
    pair_support: int = 0
    positive_pair_support: int = 0
    pca_denominator: int = 0
    grounding_total: int = 0
    grounding_positive: int = 0
    saturated: bool = False


@dataclass
class RuleScore:
    pca: float | None
    foil: float | None
    stats: GroundingStats


@dataclass
class FilterConfig:
    pca_threshold: float = 0.01
    min_groundings_rescue: int | None = None
    head_scope: str = "all_train_heads"  # or "test_heads"
    positives_scope: str = "train"  # or "train_and_test"

    def __post_init__(self):
        if not 0.0 <= self.pca_threshold <= 1.0:
            raise ScoringError(
                f"pca_threshold must lie in [0, 1], got {self.pca_threshold}"
            )


def resolve_heads(kg: KnowledgeGraph, head_scope: str) -> np.ndarray:
    if head_scope == "all_train_heads":
        return kg.train_heads
    if head_scope == "test_heads":
        return kg.test_heads
    raise ScoringError(f"unknown head scope {head_scope!r}")


def _chain_counts(
    kg: KnowledgeGraph, body: Sequence[int], heads: np.ndarray
) -> tuple[sparse.csr_matrix, bool]:
    """Saturating path-count rows: entry (i, t) counts body paths heads[i] -> t.

    A float64 shadow product detects entries crossing the saturation limit;
    below the limit the int64 product is exact (partial sums of nonnegative
    terms cannot wrap before the final value does).
    """
    n = len(heads)
    mat = sparse.csr_matrix(
        (np.ones(n, dtype=np.int64), (np.arange(n), heads)),
        shape=(n, kg.n_entities),
        dtype=np.int64,
    )
    saturated = False
    for rel in body:
        adj = kg.adjacency(rel)
        shadow = mat.astype(np.float64) @ adj.astype(np.float64)
        mat = mat @ adj
        # canonicalize both so the data arrays align entry for entry
        mat.sort_indices()
        shadow.sort_indices()
        overflow = shadow.data >= SATURATION_LIMIT
        if overflow.any():
            saturated = True
            mat.data[overflow] = SATURATION_LIMIT
    return mat, saturated


def path_count_rows(
    kg: KnowledgeGraph, body: Sequence[int], heads: np.ndarray
) -> sparse.csr_matrix:
    """Sparse matrix of exact train-path counts for the given body and head rows."""
    mat, _ = _chain_counts(kg, body, np.asarray(heads, dtype=np.int64))
    return mat


def _saturating_sum(data: np.ndarray) -> tuple[int, bool]:
    if len(data) == 0:
        return 0, False
    if float(np.sum(data, dtype=np.float64)) < SATURATION_LIMIT:
        return int(np.sum(data)), False
    return 2**63 - 1, True


def score_rule(kg: KnowledgeGraph, rule: Rule, cfg: FilterConfig) -> RuleScore:
    """PCA confidence and FOIL score of one rule under the configured scopes."""
    heads = resolve_heads(kg, cfg.head_scope)
    stats = GroundingStats()
    if len(heads) == 0:
        return RuleScore(None, None, stats)

    counts, saturated = _chain_counts(kg, rule.body, heads)
    stats.saturated = saturated
    stats.pair_support = counts.nnz
    stats.grounding_total, overflow = _saturating_sum(counts.data)
    stats.saturated = stats.saturated or overflow

    positives = kg.positive_matrix(rule.head, cfg.positives_scope)
    pos_rows = positives[heads, :].astype(np.int64)

    positive_counts = counts.multiply(pos_rows).tocsr()
    positive_counts.eliminate_zeros()
    stats.positive_pair_support = positive_counts.nnz
    stats.grounding_positive, overflow = _saturating_sum(
        np.asarray(positive_counts.data, dtype=np.int64)
    )
    stats.saturated = stats.saturated or overflow

    # Rows whose head entity has any known tail under the head relation.
    head_has_tail = np.diff(positives.indptr)[heads] > 0
    per_row_reached = np.diff(counts.indptr)
    stats.pca_denominator = int(per_row_reached[head_has_tail].sum())

    pca = (
        stats.positive_pair_support / stats.pca_denominator
        if stats.pca_denominator
        else None
    )
    foil = (
        stats.grounding_positive / stats.grounding_total
        if stats.grounding_total
        else None
    )
    return RuleScore(pca, foil, stats)


def score_rules(
    rules: Iterable[Rule], kg: KnowledgeGraph, cfg: FilterConfig
) -> list[RuleScore]:
    return [score_rule(kg, rule, cfg) for rule in rules]


def pca_confidence(kg: KnowledgeGraph, rule: Rule, cfg: FilterConfig) -> float | None:
    """Positive reached pairs over reached pairs with a known head; None if none."""
    return score_rule(kg, rule, cfg).pca


def foil_score(kg: KnowledgeGraph, rule: Rule, cfg: FilterConfig) -> float | None:
    """Grounding mass on positives over total grounding mass; None if no groundings."""
    return score_rule(kg, rule, cfg).foil


def filter_rules(
    rules: RuleSet,
    kg: KnowledgeGraph,
    cfg: FilterConfig,
    scores: Sequence[RuleScore] | None = None,
) -> RuleSet:
    """Keep rules with PCA >= threshold; optionally rescue well-grounded rules.

    Rules whose PCA is undefined (the body never fires on a head with known
    tails) are dropped unless the grounding rescue admits them.
    """
    if scores is None:
        scores = score_rules(rules, kg, cfg)
    kept = RuleSet()
    for rule, score in zip(rules, scores):
        keep = score.pca is not None and score.pca >= cfg.pca_threshold
        if not keep and cfg.min_groundings_rescue is not None:
            keep = score.stats.grounding_total >= cfg.min_groundings_rescue
        if keep:
            kept.add(rule)
    return kept


class QualityCounts(NamedTuple):
    foil: int
    pca: int


def quality_histogram(
    rules: Iterable[Rule], kg: KnowledgeGraph, quality_threshold: float = 0.1
) -> QualityCounts:
    """Number of rules with FOIL / PCA score at or above the threshold.

    Uses the analysis convention: heads restricted to test-split heads and
    positives drawn from train plus test.
    """
    cfg = FilterConfig(
        pca_threshold=0.0, head_scope="test_heads", positives_scope="train_and_test"
    )
    foil_count = 0
    pca_count = 0
    for rule in rules:
        score = score_rule(kg, rule, cfg)
        if score.foil is not None and score.foil >= quality_threshold:
            foil_count += 1
        if score.pca is not None and score.pca >= quality_threshold:
            pca_count += 1
    return QualityCounts(foil_count, pca_count)


class ScoredRule(NamedTuple):
    rule: Rule
    pca: float | None
    foil: float | None
    grounding_total: int
    positive_pair_support: int
    pca_denominator: int


def _fmt_score(value: float | None) -> str:
    return NA_TOKEN if value is None else repr(value)


def write_scored_rules(path, kg: KnowledgeGraph, rules, scores) -> None:
    """Scored-rules TSV: rule, pca, foil, groundings, positive pairs, denominator."""
    with open(path, "w", encoding="utf-8") as fh:
        for rule, score in zip(rules, scores):
            fh.write(
                "\t".join(
                    [
                        serialize_rule(rule, kg, include_weight=False),
                        _fmt_score(score.pca),
                        _fmt_score(score.foil),
                        str(score.stats.grounding_total),
                        str(score.stats.positive_pair_support),
                        str(score.stats.pca_denominator),
                    ]
                )
                + "\n"
            )


def read_scored_rules(path, kg: KnowledgeGraph) -> list[ScoredRule]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise ScoringError(
                    f"{path}:{lineno}: expected 6 fields, got {len(fields)}"
                )
            rule = parse_rule(fields[0], kg)
            pca = None if fields[1] == NA_TOKEN else float(fields[1])
            foil = None if fields[2] == NA_TOKEN else float(fields[2])
            out.append(
                ScoredRule(rule, pca, foil, int(fields[3]), int(fields[4]), int(fields[5]))
            )
    return out
