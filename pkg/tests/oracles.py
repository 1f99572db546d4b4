"""Independent brute-force oracles used to check the matrix engines.

Everything here works on plain dicts, sets and recursion, reading only
the raw split arrays of a graph. Nothing touches the sparse adjacency or
any production scoring code path.
"""

from __future__ import annotations

import numpy as np


def edge_index(kg, split="train"):
    """rel -> head -> sorted list of tails, straight from the split array."""
    index: dict[int, dict[int, list[int]]] = {}
    for h, r, t in kg.split(split):
        index.setdefault(int(r), {}).setdefault(int(h), []).append(int(t))
    return index


def count_paths(edges, body, start, end=None):
    """Number of distinct edge paths from start realizing the body sequence.

    Returns a dict tail -> count, or the single count when end is given.
    """
    frontier = {start: 1}
    for rel in body:
        nxt: dict[int, int] = {}
        rel_edges = edges.get(rel, {})
        for node, ways in frontier.items():
            for neighbor in rel_edges.get(node, []):
                nxt[neighbor] = nxt.get(neighbor, 0) + ways
        frontier = nxt
    if end is None:
        return frontier
    return frontier.get(end, 0)


def enumerate_witness_paths(edges, body, start):
    """All full entity paths (e0, e1, .., eL) realizing the body from start."""
    paths = [[start]]
    for rel in body:
        rel_edges = edges.get(rel, {})
        nxt = []
        for path in paths:
            for neighbor in rel_edges.get(path[-1], []):
                nxt.append(path + [neighbor])
        paths = nxt
    return [tuple(p) for p in paths]


def positives_set(kg, scope="train"):
    triples = set()
    splits = ["train"] if scope == "train" else ["train", "test"]
    for split in splits:
        for h, r, t in kg.split(split):
            triples.add((int(h), int(r), int(t)))
    return triples


def scope_heads(kg, head_scope):
    if head_scope == "all_train_heads":
        return sorted({int(h) for h, _, _ in kg.train})
    if head_scope == "test_heads":
        return sorted({int(h) for h, _, _ in kg.test})
    raise ValueError(head_scope)


def brute_rule_stats(kg, rule, head_scope="all_train_heads", positives_scope="train"):
    """All five grounding statistics by exhaustive pair enumeration."""
    edges = edge_index(kg, "train")
    positives = positives_set(kg, positives_scope)
    heads_with_tail = {h for (h, r, _t) in positives if r == rule.head}
    pair_support = 0
    positive_pair_support = 0
    pca_denominator = 0
    grounding_total = 0
    grounding_positive = 0
    for h in scope_heads(kg, head_scope):
        for t, ways in sorted(count_paths(edges, rule.body, h).items()):
            if ways <= 0:
                continue
            pair_support += 1
            grounding_total += ways
            if (h, rule.head, t) in positives:
                positive_pair_support += 1
                grounding_positive += ways
            if h in heads_with_tail:
                pca_denominator += 1
    return {
        "pair_support": pair_support,
        "positive_pair_support": positive_pair_support,
        "pca_denominator": pca_denominator,
        "grounding_total": grounding_total,
        "grounding_positive": grounding_positive,
    }


def brute_pca(kg, rule, head_scope="all_train_heads", positives_scope="train"):
    stats = brute_rule_stats(kg, rule, head_scope, positives_scope)
    if stats["pca_denominator"] == 0:
        return None
    return stats["positive_pair_support"] / stats["pca_denominator"]


def brute_foil(kg, rule, head_scope="all_train_heads", positives_scope="train"):
    stats = brute_rule_stats(kg, rule, head_scope, positives_scope)
    if stats["grounding_total"] == 0:
        return None
    return stats["grounding_positive"] / stats["grounding_total"]


def random_rule_ids(rng: np.random.Generator, kg, max_body=3):
    """A random (head, body) over the graph's relation ids."""
    length = int(rng.integers(1, max_body + 1))
    head = int(rng.integers(kg.n_relations))
    body = tuple(int(rng.integers(kg.n_relations)) for _ in range(length))
    return head, body
