"""Complex-rotation embedding model and the predictor/embedding ensemble.

Entities are complex vectors, relations are unit-modulus rotations stored
directly as phase angles (so the modulus constraint can never drift). A
triple is scored as minus the distance between the rotated head and the
tail: the sum over coordinates of the complex modulus of the difference
(the L1 norm over complex coordinates). The maximum score 0 occurs
exactly when the rotation maps head onto tail, and the score is invariant
under a joint unit-complex shift of head and tail.

Training follows the standard margin loss with self-adversarially
weighted negative samples; the weights are treated as constants when
differentiating, which is also the convention the gradient check uses.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TrainingError
from .kg import KnowledgeGraph
from .predictor import fd_relative_error

CHECKPOINT_VERSION = 1


@dataclass
class RotateParams:
    entity_re: np.ndarray  # (n_entities, k)
    entity_im: np.ndarray  # (n_entities, k)
    rel_phase: np.ndarray  # (n_relations, k), each in (-pi, pi]
    gamma: float = 12.0
    rng_seed: int = 0

    @property
    def dim(self) -> int:
        return self.entity_re.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "entity_re": self.entity_re,
            "entity_im": self.entity_im,
            "rel_phase": self.rel_phase,
        }

    def copy(self) -> "RotateParams":
        return RotateParams(
            self.entity_re.copy(),
            self.entity_im.copy(),
            self.rel_phase.copy(),
            self.gamma,
            self.rng_seed,
        )


@dataclass
class RotateConfig:
    dim: int = 200
    gamma: float = 12.0
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-2
    negatives: int = 64
    adversarial_temperature: float = 1.0
    eval_every: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.negatives < 1:
            raise ConfigError("negatives must be at least 1")


@dataclass
class EnsembleConfig:
    """Weight of the embedding score added to the rule predictor score."""

    eta: float = 0.1

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigError("eta must be nonnegative")


def init_rotate(
    n_entities: int, n_relations: int, cfg: RotateConfig
) -> RotateParams:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.rng_seed, 301))))
    bound = (cfg.gamma + 2.0) / cfg.dim
    return RotateParams(
        entity_re=rng.uniform(-bound, bound, (n_entities, cfg.dim)),
        entity_im=rng.uniform(-bound, bound, (n_entities, cfg.dim)),
        rel_phase=rng.uniform(-np.pi, np.pi, (n_relations, cfg.dim)),
        gamma=cfg.gamma,
        rng_seed=cfg.rng_seed,
    )


def wrap_phases(phases: np.ndarray) -> np.ndarray:
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - phases, 2.0 * np.pi)


def _rotated_head(params: RotateParams, h: int, r: int):
    cos = np.cos(params.rel_phase[r])
    sin = np.sin(params.rel_phase[r])
    hr_re = params.entity_re[h] * cos - params.entity_im[h] * sin
    hr_im = params.entity_re[h] * sin + params.entity_im[h] * cos
    return hr_re, hr_im


def rotate_score(params: RotateParams, h: int, r: int, t: int) -> float:
    """Minus the sum over coordinates of |x_h o x_r - x_t| (complex modulus)."""
    hr_re, hr_im = _rotated_head(params, h, r)
    d_re = hr_re - params.entity_re[t]
    d_im = hr_im - params.entity_im[t]
    return float(-np.hypot(d_re, d_im).sum())


def rotate_scores_all(params: RotateParams, h: int, r: int) -> np.ndarray:
    """Scores of every entity as tail of (h, r), in one vectorized sweep."""
    hr_re, hr_im = _rotated_head(params, h, r)
    d_re = hr_re[None, :] - params.entity_re
    d_im = hr_im[None, :] - params.entity_im
    return -np.hypot(d_re, d_im).sum(axis=1)


def make_scorer(params: RotateParams):
    def scorer(head: int, rel: int) -> np.ndarray:
        return rotate_scores_all(params, head, rel)

    return scorer


def ensemble_score(
    predictor_scores: np.ndarray,
    rotate_scores: np.ndarray,
    cfg: EnsembleConfig,
) -> np.ndarray:
    """Elementwise predictor + eta * embedding score."""
    if predictor_scores.shape != rotate_scores.shape:
        raise ConfigError(
            f"score vectors disagree: {predictor_scores.shape} vs {rotate_scores.shape}"
        )
    return predictor_scores + cfg.eta * rotate_scores


def make_ensemble_scorer(predictor_scorer, rotate_scorer, cfg: EnsembleConfig):
    def scorer(head: int, rel: int) -> np.ndarray:
        return ensemble_score(predictor_scorer(head, rel), rotate_scorer(head, rel), cfg)

    return scorer


def validate_rotate(params: RotateParams) -> None:
    """Unit-modulus and finiteness invariants; cheap enough to run per epoch."""
    modulus = np.cos(params.rel_phase) ** 2 + np.sin(params.rel_phase) ** 2
    if not np.allclose(modulus, 1.0, atol=1e-12):
        raise TrainingError("relation rotation lost unit modulus")
    for name, arr in params.arrays().items():
        if not np.all(np.isfinite(arr)):
            raise TrainingError(f"non-finite values in {name}")


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _triple_distance_parts(params, h, r, t):
    cos = np.cos(params.rel_phase[r])
    sin = np.sin(params.rel_phase[r])
    hr_re = params.entity_re[h] * cos - params.entity_im[h] * sin
    hr_im = params.entity_re[h] * sin + params.entity_im[h] * cos
    d_re = hr_re - params.entity_re[t]
    d_im = hr_im - params.entity_im[t]
    return cos, sin, d_re, d_im


def _distance(params, h, r, t) -> float:
    _, _, d_re, d_im = _triple_distance_parts(params, h, r, t)
    return float(np.hypot(d_re, d_im).sum())


def self_adversarial_loss(
    params: RotateParams,
    positive: tuple[int, int, int],
    negatives: np.ndarray,
    temperature: float,
    grads: dict[str, np.ndarray] | None = None,
    neg_weights: np.ndarray | None = None,
) -> float:
    """Margin loss with softmax-weighted negatives for one positive triple.

    The negative weights are computed from the current distances unless
    fixed ones are supplied; either way they are constants with respect to
    differentiation (the self-adversarial convention). All tails (the true
    one plus the negatives) are processed in one vectorized sweep.
    """
    h, r, t = positive
    gamma = params.gamma
    tails = np.concatenate([[t], np.asarray(negatives, dtype=np.int64)])

    cos = np.cos(params.rel_phase[r])
    sin = np.sin(params.rel_phase[r])
    h_re = params.entity_re[h]
    h_im = params.entity_im[h]
    hr_re = h_re * cos - h_im * sin
    hr_im = h_re * sin + h_im * cos
    delta_re = hr_re[None, :] - params.entity_re[tails]
    delta_im = hr_im[None, :] - params.entity_im[tails]
    moduli = np.hypot(delta_re, delta_im)
    dists = moduli.sum(axis=1)
    d_pos, d_negs = dists[0], dists[1:]

    if neg_weights is None:
        logits = (gamma - d_negs) * temperature
        logits = logits - logits.max()
        e = np.exp(logits)
        neg_weights = e / e.sum()
    loss_pos = -np.log(max(_sigmoid(gamma - d_pos), 1e-300))
    loss_neg = -(neg_weights * np.log(np.maximum(_sigmoid(d_negs - gamma), 1e-300))).sum()

    if grads is not None:
        # coeff_i = dL/d(dist_i); positive: sigmoid(d - gamma), negatives:
        # -w_i * sigmoid(gamma - d_i), with w_i held constant
        coeffs = np.concatenate(
            [[_sigmoid(d_pos - gamma)], -neg_weights * _sigmoid(gamma - d_negs)]
        )
        # d|delta|/d(delta_re) = delta_re / |delta|; zero at the origin
        safe = np.where(moduli > 0, moduli, 1.0)
        s_re = (delta_re / safe) * coeffs[:, None]
        s_im = (delta_im / safe) * coeffs[:, None]
        np.add.at(grads["entity_re"], tails, -s_re)
        np.add.at(grads["entity_im"], tails, -s_im)
        sum_re = s_re.sum(axis=0)
        sum_im = s_im.sum(axis=0)
        grads["entity_re"][h] += sum_re * cos + sum_im * sin
        grads["entity_im"][h] += -sum_re * sin + sum_im * cos
        grads["rel_phase"][r] += sum_re * (-h_re * sin - h_im * cos) + sum_im * (
            h_re * cos - h_im * sin
        )
    return float(loss_pos + loss_neg)


def train_rotate(
    kg: KnowledgeGraph,
    cfg: RotateConfig,
    epoch_hook=None,
) -> RotateParams:
    """Train embeddings on the train split with tail-corrupting negatives.

    Head corruption is covered implicitly because the split stores every
    triple's inverse mirror. Negatives are drawn uniformly from entities
    that are not train-split tails of the query pair (held-out answers
    stay eligible as negatives; filtering them would leak the splits). Phases are wrapped back
    into (-pi, pi] after every optimizer step; returns the best
    validation-MRR checkpoint when a valid split exists, else the final
    epoch. Deterministic given the config seed.
    """
    from .evaluation import evaluate
    from .predictor import Adam

    if len(kg.train) == 0:
        raise TrainingError("cannot train: train split is empty")
    params = init_rotate(kg.n_entities, kg.n_relations, cfg)
    adam = Adam(params.arrays(), lr=cfg.learning_rate)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.rng_seed, 302))))
    triples = kg.train
    has_valid = len(kg.valid) > 0
    best = params.copy()
    best_mrr = -np.inf

    allowed_cache: dict[tuple[int, int], np.ndarray] = {}

    def allowed_negatives(h: int, r: int) -> np.ndarray:
        key = (h, r)
        arr = allowed_cache.get(key)
        if arr is None:
            mask = np.ones(kg.n_entities, dtype=bool)
            known = kg.train_tails(h, r)
            mask[known] = False
            arr = np.nonzero(mask)[0]
            allowed_cache[key] = arr
        return arr

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(triples))
        for batch_id, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            grads = {k: np.zeros_like(v) for k, v in params.arrays().items()}
            total = 0.0
            for qi in batch:
                h, r, t = (int(v) for v in triples[qi])
                pool = allowed_negatives(h, r)
                if len(pool) == 0:
                    continue
                negs = pool[rng.integers(len(pool), size=cfg.negatives)]
                total += self_adversarial_loss(
                    params, (h, r, t), negs, cfg.adversarial_temperature, grads
                )
            loss = total / len(batch)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch {batch_id} "
                    f"(learning_rate={cfg.learning_rate})"
                )
            for key in grads:
                grads[key] /= len(batch)
            adam.step(params.arrays(), grads)
            params.rel_phase[...] = wrap_phases(params.rel_phase)
        validate_rotate(params)
        if epoch_hook is not None:
            epoch_hook(epoch, params)
        if has_valid and (epoch + 1) % cfg.eval_every == 0:
            mrr = evaluate(make_scorer(params), kg, split="valid", keep_outcomes=False).mrr
            if mrr > best_mrr:
                best_mrr = mrr
                best = params.copy()
    if has_valid:
        mrr = evaluate(make_scorer(params), kg, split="valid", keep_outcomes=False).mrr
        if mrr > best_mrr:
            best = params.copy()
        return best
    return params


def rotate_gradient_check(
    params: RotateParams,
    positive: tuple[int, int, int],
    negatives: np.ndarray,
    temperature: float = 1.0,
    epsilon: float = 1e-5,
    num_coords: int = 200,
    rng_seed: int = 0,
) -> float:
    """Finite-difference check of the training loss gradients.

    The adversarial weights are frozen at the base point so the analytic
    and numerical sides differentiate the same function.
    """
    d_negs = np.array([_distance(params, *positive[:2], int(n)) for n in negatives])
    logits = (params.gamma - d_negs) * temperature
    logits -= logits.max()
    e = np.exp(logits)
    weights = e / e.sum()

    grads = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    self_adversarial_loss(params, positive, negatives, temperature, grads, weights)

    names = list(params.arrays())
    sizes = np.array([params.arrays()[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((rng_seed, 303))))
    picks = rng.choice(offsets[-1], size=min(num_coords, offsets[-1]), replace=False)

    work = params.copy()
    max_err = 0.0
    for flat in sorted(int(p) for p in picks):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[which]
        arr = work.arrays()[name]
        idx = np.unravel_index(flat - offsets[which], arr.shape)
        orig = arr[idx]
        arr[idx] = orig + epsilon
        up = self_adversarial_loss(work, positive, negatives, temperature, None, weights)
        arr[idx] = orig - epsilon
        down = self_adversarial_loss(work, positive, negatives, temperature, None, weights)
        arr[idx] = orig
        fd = (up - down) / (2 * epsilon)
        max_err = max(max_err, fd_relative_error(fd, float(grads[name][idx])))
    return max_err


# -- checkpoint container ---------------------------------------------


def save_rotate(path, params: RotateParams) -> None:
    def encode(arr):
        data = np.ascontiguousarray(arr, dtype=np.float64)
        return {
            "shape": list(data.shape),
            "dtype": "float64",
            "data": base64.b64encode(data.tobytes()).decode("ascii"),
        }

    doc = {
        "format_version": CHECKPOINT_VERSION,
        "model_type": "rotate",
        "gamma": params.gamma,
        "rng_seed": params.rng_seed,
        "arrays": {k: encode(v) for k, v in params.arrays().items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_rotate(path) -> RotateParams:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("model_type") != "rotate":
        raise ConfigError(f"{path}: not a rotate checkpoint")

    def decode(obj):
        raw = base64.b64decode(obj["data"])
        return np.frombuffer(raw, dtype=np.float64).reshape(obj["shape"]).copy()

    arrays = {k: decode(v) for k, v in doc["arrays"].items()}
    return RotateParams(
        entity_re=arrays["entity_re"],
        entity_im=arrays["entity_im"],
        rel_phase=arrays["rel_phase"],
        gamma=doc["gamma"],
        rng_seed=doc["rng_seed"],
    )
