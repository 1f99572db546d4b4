"""Random-walk rule candidate generation and PCA-thresholded mining.

Walks start at every entity, traverse uniformly sampled outgoing train
edges (inverse relations included, so backward steps come for free), and
every relation linking the walk's endpoints in the train split yields a
candidate rule whose body is the walked relation sequence.

Each entity draws from its own RNG stream derived from (seed, entity id),
so results do not depend on scheduling or entity batching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MiningError
from .kg import KnowledgeGraph
from .rules import DEFAULT_MAX_BODY_LEN, Rule, RuleOrigin, RuleSet


@dataclass
class WalkConfig:
    walks_per_entity: int = 100
    lengths: tuple[int, ...] = (2, 3)
    pca_threshold: float = 0.01
    rng_seed: int = 0
    max_body_len: int = DEFAULT_MAX_BODY_LEN

    def __post_init__(self):
        self.lengths = tuple(sorted(set(int(x) for x in self.lengths)))
        if self.walks_per_entity < 1:
            raise MiningError("walks_per_entity must be at least 1")
        if not self.lengths:
            raise MiningError("at least one walk length is required")
        if any(not 1 <= x <= self.max_body_len for x in self.lengths):
            raise MiningError(
                f"walk lengths {self.lengths} must lie in 1..{self.max_body_len}"
            )
        if not 0.0 <= self.pca_threshold <= 1.0:
            raise MiningError(
                f"pca_threshold must lie in [0, 1], got {self.pca_threshold}"
            )


@dataclass
class MiningTally:
    """Diagnostics collected while walking."""

    walks_attempted: int = 0
    walks_dead_ended: int = 0
    candidates_emitted: int = 0


def random_walk_candidates(
    kg: KnowledgeGraph, cfg: WalkConfig, tally: MiningTally | None = None
) -> list[Rule]:
    """Deduplicated candidate rules from local random walks, deterministic in the seed.

    Walks hitting an entity with no outgoing edges are skipped (counted in
    the tally when one is passed).
    """
    if len(kg.train) == 0:
        raise MiningError("cannot mine rules: train split is empty")
    indptr, rels, dsts = kg.out_edges()
    if tally is None:
        tally = MiningTally()
    found = RuleSet()
    for entity in range(kg.n_entities):
        if indptr[entity] == indptr[entity + 1]:
            continue
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((cfg.rng_seed, 101, entity)))
        )
        for length in cfg.lengths:
            for _ in range(cfg.walks_per_entity):
                tally.walks_attempted += 1
                node = entity
                body = []
                for _step in range(length):
                    lo, hi = indptr[node], indptr[node + 1]
                    if lo == hi:
                        break
                    pick = lo + int(rng.integers(hi - lo))
                    body.append(int(rels[pick]))
                    node = int(dsts[pick])
                if len(body) < length:
                    tally.walks_dead_ended += 1
                    continue
                for head_rel in kg.train_pair_relations(entity, node):
                    tally.candidates_emitted += 1
                    found.add(Rule(head_rel, tuple(body), RuleOrigin.RANDOM_WALK))
    return list(found)


def mine_rules(
    kg: KnowledgeGraph, cfg: WalkConfig, tally: MiningTally | None = None
) -> RuleSet:
    """Walk candidates kept when their PCA confidence reaches the threshold."""
    from .metrics import FilterConfig, filter_rules

    candidates = RuleSet(random_walk_candidates(kg, cfg, tally=tally))
    fcfg = FilterConfig(pca_threshold=cfg.pca_threshold)
    return filter_rules(candidates, kg, fcfg)
