"""Filtered-ranking evaluation with tie-averaged ranks.

Each base test triple (h, r, t) produces a forward query (h, r, ?) with
answer t and an inverse query (t, !r, ?) with answer h. Candidates known
to be true in any split are filtered out of the ranking, except the
answer itself. Ties are broken by averaging: with m entities scored
strictly higher and n scored exactly equal (answer included), the rank is
m + (n + 1) / 2, so a unique score gives rank m + 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import EvaluationError
from .kg import KnowledgeGraph, inverse_of, is_inverse

Scorer = Callable[[int, int], np.ndarray]

DEFAULT_HITS_KS = (1, 3, 10)


class Query(NamedTuple):
    head: int
    rel: int
    answer: int
    source: str  # "forward" or "inverse"


@dataclass
class RankOutcome:
    m: int
    n: int

    @property
    def rank(self) -> float:
        return self.m + (self.n + 1) / 2


@dataclass
class MetricsReport:
    mr: float
    mrr: float
    hits: dict[int, float]
    num_queries: int
    outcomes: list[tuple[Query, RankOutcome]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mr": self.mr,
            "mrr": self.mrr,
            "hits": {str(k): v for k, v in sorted(self.hits.items())},
            "num_queries": self.num_queries,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def split_queries(kg: KnowledgeGraph, split: str = "test") -> list[Query]:
    """Forward and inverse queries for the base (non-inverse) triples of a split.

    The split already stores each triple together with its mirror, so
    enumerating base triples in both directions covers every stored triple
    exactly once.
    """
    out = []
    for h, r, t in kg.split(split):
        if is_inverse(int(r)):
            continue
        out.append(Query(int(h), int(r), int(t), "forward"))
        out.append(Query(int(t), inverse_of(int(r)), int(h), "inverse"))
    return out


def filtered_mask(kg: KnowledgeGraph, query: Query) -> np.ndarray:
    """Admissible candidates: the answer plus everything not known to be true."""
    mask = np.ones(kg.n_entities, dtype=bool)
    mask[kg.all_known_tails(query.head, query.rel)] = False
    mask[query.answer] = True
    return mask


def rank_of(scores: np.ndarray, answer: int, mask: np.ndarray) -> RankOutcome:
    """Tie-averaged rank of the answer among admissible candidates.

    Ties are exact floating-point score equality; scorers are deterministic
    so tie groups are reproducible.
    """
    if not mask[answer]:
        raise EvaluationError("internal: answer filtered out of its own query")
    visible = scores[mask]
    if not np.all(np.isfinite(visible)):
        raise EvaluationError("non-finite score among admissible candidates")
    target = scores[answer]
    m = int((visible > target).sum())
    n = int((visible == target).sum())
    return RankOutcome(m, n)


def evaluate(
    scorer: Scorer,
    kg: KnowledgeGraph,
    ks: Sequence[int] = DEFAULT_HITS_KS,
    split: str = "test",
    keep_outcomes: bool = True,
    filtered: bool = True,
) -> MetricsReport:
    """Score every query of a split and aggregate MR, MRR and Hits@k.

    ``filtered=False`` ranks against all entities (debug only; reported
    numbers use the filtered protocol).
    """
    queries = split_queries(kg, split)
    if not queries:
        raise EvaluationError(f"split {split!r} has no queries")
    all_mask = np.ones(kg.n_entities, dtype=bool)
    outcomes = []
    ranks = np.empty(len(queries), dtype=np.float64)
    for i, query in enumerate(queries):
        scores = scorer(query.head, query.rel)
        mask = filtered_mask(kg, query) if filtered else all_mask
        outcome = rank_of(scores, query.answer, mask)
        ranks[i] = outcome.rank
        if keep_outcomes:
            outcomes.append((query, outcome))
    hits = {int(k): float(np.mean(ranks <= k)) for k in ks}
    return MetricsReport(
        mr=float(ranks.mean()),
        mrr=float((1.0 / ranks).mean()),
        hits=hits,
        num_queries=len(queries),
        outcomes=outcomes,
    )


def write_outcomes_tsv(path, kg: KnowledgeGraph, report: MetricsReport) -> None:
    """Per-query outcomes: head, relation, answer, direction, m, n, rank."""
    with open(path, "w", encoding="utf-8") as fh:
        for query, outcome in report.outcomes:
            fh.write(
                "\t".join(
                    [
                        kg.entity_names[query.head],
                        kg.relation_names[query.rel],
                        kg.entity_names[query.answer],
                        query.source,
                        str(outcome.m),
                        str(outcome.n),
                        repr(outcome.rank),
                    ]
                )
                + "\n"
            )
