"""Rule-embedding link predictor: counts, PNA aggregation, MLP, training.

A candidate tail o for a query (h, r) is scored by collecting every rule
with head r whose body has at least one train-edge path h -> o, weighting
each such rule's embedding by the (transformed) path count, aggregating
the weighted embeddings with the symmetric multi-aggregator
{mean, min, max, population std}, and passing the 4d feature through a
one-hidden-layer MLP. Candidates with no firing rule get the score of the
all-zeros feature.

The forward and backward passes are written out by hand in numpy so the
finite-difference gradient check validates exactly what training uses.
Counts depend only on the graph and the ruleset, never on parameters, so
they are cached aggressively.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ConfigError, TrainingError
from .kg import KnowledgeGraph, inverse_of
from .rules import RuleSet, ruleset_hash

# Variance below this is treated as exactly zero when backpropagating
# through the std aggregator (guards the 1/std factor at degenerate sets).
_VAR_FLOOR = 1e-24


def fd_relative_error(fd: float, an: float) -> float:
    """Error metric for analytic-vs-central-difference comparisons.

    Coordinates where both sides sit within the absolute tolerance 1e-8
    count as exact; the denominator is floored at 1e-6 because central
    differences of an O(1) loss carry roundoff noise around 1e-10, which
    would otherwise dominate the ratio for tiny true gradients.
    """
    if abs(fd) <= 1e-8 and abs(an) <= 1e-8:
        return 0.0
    return abs(fd - an) / max(abs(fd), abs(an), 1e-6)

CHECKPOINT_VERSION = 1


@dataclass
class PredictorParams:
    rule_embeddings: np.ndarray  # (n_rules, d)
    w1: np.ndarray  # (4d, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: np.ndarray  # scalar, shape ()
    count_transform: str = "log1p"
    rng_seed: int = 0
    ruleset_digest: str = ""

    @property
    def dim(self) -> int:
        return self.rule_embeddings.shape[1]

    @property
    def hidden(self) -> int:
        return self.b1.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "rule_embeddings": self.rule_embeddings,
            "w1": self.w1,
            "b1": self.b1,
            "w2": self.w2,
            "b2": self.b2,
        }

    def copy(self) -> "PredictorParams":
        return PredictorParams(
            self.rule_embeddings.copy(),
            self.w1.copy(),
            self.b1.copy(),
            self.w2.copy(),
            self.b2.copy(),
            self.count_transform,
            self.rng_seed,
            self.ruleset_digest,
        )


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 1e-3
    dim: int = 16
    hidden: int = 64
    count_transform: str = "log1p"
    mask_query_edge: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.count_transform not in ("raw", "log1p"):
            raise ConfigError(f"unknown count transform {self.count_transform!r}")


def init_params(
    n_rules: int,
    dim: int = 16,
    hidden: int = 64,
    count_transform: str = "log1p",
    rng_seed: int = 0,
    ruleset_digest: str = "",
) -> PredictorParams:
    """Uniform init in +-1/sqrt(fan_in) per tensor, deterministic in the seed."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((rng_seed, 201))))

    def uniform(bound, shape):
        return rng.uniform(-bound, bound, shape)

    return PredictorParams(
        rule_embeddings=uniform(1.0 / np.sqrt(dim), (n_rules, dim)),
        w1=uniform(1.0 / np.sqrt(4 * dim), (4 * dim, hidden)),
        b1=uniform(1.0 / np.sqrt(4 * dim), (hidden,)),
        w2=uniform(1.0 / np.sqrt(hidden), (hidden,)),
        b2=uniform(1.0 / np.sqrt(hidden), ()),
        count_transform=count_transform,
        rng_seed=rng_seed,
        ruleset_digest=ruleset_digest,
    )


class GroundingCache:
    """Memo of path-count rows keyed by (head, body, masked relation).

    Rows depend only on the graph, so one cache can be shared across
    rulesets and pipeline runs over the same graph (ablation reuses it).
    """

    def __init__(self, kg: KnowledgeGraph):
        self.kg = kg
        self._rows: dict[tuple, np.ndarray] = {}

    def count_row(
        self, head: int, body: tuple[int, ...], mask_rel: int | None
    ) -> np.ndarray:
        key = (head, body, -1 if mask_rel is None else mask_rel)
        row = self._rows.get(key)
        if row is None:
            row = self._compute(head, body, mask_rel)
            self._rows[key] = row
        return row

    def _compute(self, head, body, mask_rel):
        kg = self.kg
        u = np.zeros(kg.n_entities, dtype=np.float64)
        u[head] = 1.0
        inv_mask = None if mask_rel is None else inverse_of(mask_rel)
        for rel in body:
            # u @ A[rel] via the closure identity A[rel].T == A[!rel]
            v = kg.adjacency(inverse_of(rel)).dot(u)
            if mask_rel is not None:
                if rel == mask_rel and u[head] != 0.0:
                    masked_row = kg.adjacency(rel).getrow(head).toarray().ravel()
                    v -= u[head] * masked_row
                if rel == inv_mask:
                    # every edge into `head` under !mask_rel is a mirror of a
                    # masked query edge, so the whole column drops
                    v[head] = 0.0
            u = v
        return u


def grounding_counts(
    kg: KnowledgeGraph,
    rules: RuleSet,
    query: tuple[int, int],
    mask_query_edge: bool = False,
    cache: GroundingCache | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Raw per-rule, per-candidate path counts #(h, l, o) for rules headed by r.

    Returns (positions, counts): positions are indices into the ruleset and
    counts has one row per position. When masking is on, the train edges
    (h, r, .) and their mirrors are excluded from the paths.
    """
    head, rel = query
    if cache is None:
        cache = GroundingCache(kg)
    positions = rules.by_head().get(rel, [])
    counts = np.zeros((len(positions), kg.n_entities), dtype=np.float64)
    mask_rel = rel if mask_query_edge else None
    for i, pos in enumerate(positions):
        counts[i] = cache.count_row(head, rules[pos].body, mask_rel)
    return np.asarray(positions, dtype=np.int64), counts


class CountTable:
    """Per-(head, relation) transformed count columns, assembled once.

    Stores, for each query pair, the rule positions with the matching head
    and a CSC matrix of transformed counts (rules x entities), which is the
    exact layout the PNA forward pass consumes.
    """

    def __init__(
        self,
        kg: KnowledgeGraph,
        rules: RuleSet,
        count_transform: str,
        mask_query_edge: bool,
        cache: GroundingCache | None = None,
    ):
        self.kg = kg
        self.rules = rules
        self.transform = count_transform
        self.mask_query_edge = mask_query_edge
        self.cache = cache if cache is not None else GroundingCache(kg)
        self.by_head = rules.by_head()
        self._assembled: dict[tuple[int, int], tuple[np.ndarray, sparse.csc_matrix]] = {}

    def get(self, head: int, rel: int) -> tuple[np.ndarray, sparse.csc_matrix]:
        key = (head, rel)
        entry = self._assembled.get(key)
        if entry is None:
            positions, counts = grounding_counts(
                self.kg,
                self.rules,
                (head, rel),
                mask_query_edge=self.mask_query_edge,
                cache=self.cache,
            )
            if self.transform == "log1p":
                counts = np.log1p(counts)
            entry = (positions, sparse.csc_matrix(counts))
            self._assembled[key] = entry
        return entry


def _pna_forward(weights: sparse.csc_matrix, positions: np.ndarray, params):
    """Features (n_entities x 4d) plus the context needed for backward."""
    n_e = weights.shape[1]
    d = params.dim
    feats = np.zeros((n_e, 4 * d))
    col_nnz = np.diff(weights.indptr)
    cols = np.nonzero(col_nnz)[0]
    ctx = {"cols": cols}
    if cols.size:
        starts = weights.indptr[cols]
        lens = col_nnz[cols]
        w = weights.data
        local_rows = weights.indices
        emb = params.rule_embeddings[positions]
        x = w[:, None] * emb[local_rows]
        seg_of = np.repeat(np.arange(len(cols)), lens)
        mean = np.add.reduceat(x, starts, axis=0) / lens[:, None]
        mn = np.minimum.reduceat(x, starts, axis=0)
        mx = np.maximum.reduceat(x, starts, axis=0)
        var = np.add.reduceat(x * x, starts, axis=0) / lens[:, None] - mean**2
        var = np.where(var < _VAR_FLOOR, 0.0, var)
        std = np.sqrt(var)
        feats[cols] = np.concatenate([mean, mn, mx, std], axis=1)
        ctx.update(
            x=x, w=w, local_rows=local_rows, starts=starts, lens=lens,
            seg_of=seg_of, mean=mean, mn=mn, mx=mx, std=std,
        )
    return feats, ctx


def _forward(weights, positions, params):
    feats, ctx = _pna_forward(weights, positions, params)
    z1 = feats @ params.w1 + params.b1
    a1 = np.maximum(z1, 0.0)
    scores = a1 @ params.w2 + params.b2
    ctx.update(feats=feats, z1=z1, a1=a1, positions=positions)
    return scores, ctx


def _backward(d_scores: np.ndarray, ctx, params, grads: dict[str, np.ndarray]):
    d = params.dim
    feats, a1, z1 = ctx["feats"], ctx["a1"], ctx["z1"]
    da1 = np.outer(d_scores, params.w2)
    dz1 = da1 * (z1 > 0)
    grads["w1"] += feats.T @ dz1
    grads["b1"] += dz1.sum(axis=0)
    grads["w2"] += a1.T @ d_scores
    grads["b2"] += d_scores.sum()
    dfeats = dz1 @ params.w1.T

    cols = ctx["cols"]
    if cols.size == 0:
        return
    x, w = ctx["x"], ctx["w"]
    starts, lens, seg_of = ctx["starts"], ctx["lens"], ctx["seg_of"]
    mean, mn, mx, std = ctx["mean"], ctx["mn"], ctx["mx"], ctx["std"]
    d_mean = dfeats[cols, 0 * d : 1 * d]
    d_mn = dfeats[cols, 1 * d : 2 * d]
    d_mx = dfeats[cols, 2 * d : 3 * d]
    d_std = dfeats[cols, 3 * d : 4 * d]

    dx = np.repeat(d_mean / lens[:, None], lens, axis=0)

    # std: d std / d x_k = (x_k - mean) / (n * std), zero at degenerate sets
    coef = np.zeros_like(std)
    np.divide(d_std, lens[:, None] * std, out=coef, where=std > 0)
    dx += coef[seg_of] * (x - mean[seg_of])

    # min/max route their gradient to the first attaining element per
    # segment and dimension (subgradient choice)
    row_within = np.arange(len(w)) - np.repeat(starts, lens)
    sentinel = len(w) + 1
    col_idx = np.broadcast_to(np.arange(d), (len(cols), d))
    for extreme, dext in ((mn, d_mn), (mx, d_mx)):
        keys = np.where(x == extreme[seg_of], row_within[:, None], sentinel)
        first = np.minimum.reduceat(keys, starts, axis=0)
        np.add.at(dx, (starts[:, None] + first, col_idx), dext)

    d_emb_rows = w[:, None] * dx
    np.add.at(
        grads["rule_embeddings"], ctx["positions"][ctx["local_rows"]], d_emb_rows
    )


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return e / e.sum()


def score_candidates(
    params: PredictorParams,
    kg: KnowledgeGraph,
    rules: RuleSet,
    query: tuple[int, int],
    table: CountTable | None = None,
) -> np.ndarray:
    """Score every entity as a tail candidate for (h, r). Deterministic."""
    if params.rule_embeddings.shape[0] != len(rules):
        raise ConfigError(
            f"params cover {params.rule_embeddings.shape[0]} rules but the "
            f"ruleset has {len(rules)}"
        )
    if table is None:
        table = CountTable(kg, rules, params.count_transform, mask_query_edge=False)
    positions, weights = table.get(*query)
    scores, _ = _forward(weights, positions, params)
    return scores


def make_scorer(
    params: PredictorParams,
    kg: KnowledgeGraph,
    rules: RuleSet,
    cache: GroundingCache | None = None,
):
    """Evaluation scorer (h, r) -> scores; counts are unmasked and cached."""
    if params.rule_embeddings.shape[0] != len(rules):
        raise ConfigError("params do not match the ruleset size")
    table = CountTable(
        kg, rules, params.count_transform, mask_query_edge=False, cache=cache
    )

    def scorer(head: int, rel: int) -> np.ndarray:
        positions, weights = table.get(head, rel)
        scores, _ = _forward(weights, positions, params)
        return scores

    return scorer


class Adam:
    """Adaptive-moment optimizer over a dict of parameter arrays."""

    def __init__(self, shapes: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in shapes.items()}
        self.v = {k: np.zeros_like(v) for k, v in shapes.items()}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for key, arr in arrays.items():
            g = grads[key]
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * g * g
            update = (self.m[key] / bc1) / (np.sqrt(self.v[key] / bc2) + self.eps)
            arr -= self.lr * update


def _zero_grads(params: PredictorParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays().items()}


def _query_loss_and_backward(params, table, query, answer, scale, grads):
    positions, weights = table.get(*query)
    scores, ctx = _forward(weights, positions, params)
    probs = _softmax(scores)
    loss = -np.log(max(probs[answer], 1e-300))
    if grads is not None:
        d_scores = probs.copy()
        d_scores[answer] -= 1.0
        _backward(d_scores * scale, ctx, params, grads)
    return loss


def train_predictor(
    kg: KnowledgeGraph,
    rules: RuleSet,
    cfg: TrainConfig,
    cache: GroundingCache | None = None,
) -> PredictorParams:
    """Minimize full-softmax cross-entropy over train queries with Adam.

    Train queries are all train triples (the inverse mirrors are stored in
    the split, so inverse queries come along automatically). Returns the
    parameters of the best validation-MRR epoch, or the final epoch when
    the valid split is empty. Deterministic given the config seed.
    """
    from .evaluation import evaluate

    if len(kg.train) == 0:
        raise TrainingError("cannot train: train split is empty")
    if len(rules) == 0:
        raise TrainingError("cannot train: ruleset is empty")

    params = init_params(
        len(rules),
        dim=cfg.dim,
        hidden=cfg.hidden,
        count_transform=cfg.count_transform,
        rng_seed=cfg.rng_seed,
        ruleset_digest=ruleset_hash(rules),
    )
    shared_cache = cache if cache is not None else GroundingCache(kg)
    train_table = CountTable(
        kg, rules, cfg.count_transform, cfg.mask_query_edge, cache=shared_cache
    )
    eval_cache = GroundingCache(kg)

    queries = kg.train
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.rng_seed, 202))))
    adam = Adam(params.arrays(), lr=cfg.learning_rate)
    has_valid = len(kg.valid) > 0
    best_params = params.copy()
    best_mrr = -np.inf

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(queries))
        for batch_id, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            grads = _zero_grads(params)
            total = 0.0
            for qi in batch:
                h, r, t = (int(v) for v in queries[qi])
                total += _query_loss_and_backward(
                    params, train_table, (h, r), t, 1.0 / len(batch), grads
                )
            loss = total / len(batch)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch {batch_id} "
                    f"(learning_rate={cfg.learning_rate})"
                )
            adam.step(params.arrays(), grads)
        if has_valid:
            scorer = make_scorer(params, kg, rules, cache=eval_cache)
            mrr = evaluate(scorer, kg, split="valid", keep_outcomes=False).mrr
            if mrr > best_mrr:
                best_mrr = mrr
                best_params = params.copy()
    return best_params if has_valid else params


def gradient_check(
    params: PredictorParams,
    kg: KnowledgeGraph,
    rules: RuleSet,
    queries: list[tuple[int, int, int]],
    epsilon: float = 1e-5,
    num_coords: int = 200,
    rng_seed: int = 0,
    mask_query_edge: bool = True,
) -> float:
    """Max relative error of analytic vs central-difference loss gradients.

    Coordinates where both gradients are below 1e-8 in absolute value count
    as exact. The loss is the mean cross-entropy over the given
    (head, rel, answer) queries, the same objective training uses.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ConfigError("epsilon must lie in [1e-7, 1e-3]")
    table = CountTable(kg, rules, params.count_transform, mask_query_edge)

    def loss_of(p: PredictorParams) -> float:
        total = 0.0
        for h, r, t in queries:
            total += _query_loss_and_backward(p, table, (h, r), t, 1.0, None)
        return total / len(queries)

    grads = _zero_grads(params)
    for h, r, t in queries:
        _query_loss_and_backward(params, table, (h, r), t, 1.0 / len(queries), grads)

    names = list(params.arrays())
    sizes = np.array([params.arrays()[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((rng_seed, 203))))
    picks = rng.choice(offsets[-1], size=min(num_coords, offsets[-1]), replace=False)

    work = params.copy()
    max_err = 0.0
    for flat in sorted(int(p) for p in picks):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[which]
        idx = np.unravel_index(flat - offsets[which], work.arrays()[name].shape)
        arr = work.arrays()[name]
        orig = arr[idx]
        arr[idx] = orig + epsilon
        up = loss_of(work)
        arr[idx] = orig - epsilon
        down = loss_of(work)
        arr[idx] = orig
        fd = (up - down) / (2 * epsilon)
        max_err = max(max_err, fd_relative_error(fd, float(grads[name][idx])))
    return max_err


# -- checkpoint container ---------------------------------------------


def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype=np.float64)
    return {
        "shape": list(data.shape),
        "dtype": "float64",
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype=np.float64).reshape(obj["shape"]).copy()


def save_predictor(path, params: PredictorParams) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "model_type": "rule_predictor",
        "ruleset_digest": params.ruleset_digest,
        "count_transform": params.count_transform,
        "rng_seed": params.rng_seed,
        "arrays": {k: _encode_array(v) for k, v in params.arrays().items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_predictor(path, expect_digest: str | None = None) -> PredictorParams:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("model_type") != "rule_predictor":
        raise ConfigError(f"{path}: not a rule predictor checkpoint")
    if expect_digest is not None and doc["ruleset_digest"] != expect_digest:
        raise ConfigError(
            f"{path}: checkpoint was trained on a different ruleset "
            f"(digest {doc['ruleset_digest'][:12]}.. != {expect_digest[:12]}..)"
        )
    arrays = {k: _decode_array(v) for k, v in doc["arrays"].items()}
    b2 = arrays["b2"].reshape(())
    return PredictorParams(
        rule_embeddings=arrays["rule_embeddings"],
        w1=arrays["w1"],
        b1=arrays["b1"],
        w2=arrays["w2"],
        b2=b2,
        count_transform=doc["count_transform"],
        rng_seed=doc["rng_seed"],
        ruleset_digest=doc["ruleset_digest"],
    )
