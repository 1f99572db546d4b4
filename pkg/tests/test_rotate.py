import numpy as np
import pytest

from rulekit import (
    EnsembleConfig,
    RotateConfig,
    build_graph,
    ensemble_score,
    evaluate,
    rotate_score,
    train_rotate,
)
from rulekit.errors import ConfigError, TrainingError
from rulekit.rotate import (
    init_rotate,
    load_rotate,
    make_scorer,
    rotate_gradient_check,
    rotate_scores_all,
    save_rotate,
    validate_rotate,
    wrap_phases,
)
from rulekit.synth import planted_rotate_kg


def _random_params(n_entities=6, n_relations=4, dim=5, seed=0):
    return init_rotate(n_entities, n_relations, RotateConfig(dim=dim, rng_seed=seed))


def test_exact_rotation_scores_zero():
    params = _random_params()
    h, r, t = 0, 1, 2
    cos = np.cos(params.rel_phase[r])
    sin = np.sin(params.rel_phase[r])
    params.entity_re[t] = params.entity_re[h] * cos - params.entity_im[h] * sin
    params.entity_im[t] = params.entity_re[h] * sin + params.entity_im[h] * cos
    assert rotate_score(params, h, r, t) == 0.0
    # any other entity scores strictly below zero
    for other in range(params.entity_re.shape[0]):
        if other != t:
            assert rotate_score(params, h, r, other) < 0.0


def test_identity_relation_scores_self_zero():
    params = _random_params()
    params.rel_phase[0][:] = 0.0
    assert rotate_score(params, 3, 0, 3) == 0.0


def test_score_never_positive():
    rng = np.random.default_rng(2)
    params = _random_params(seed=3)
    for _ in range(200):
        h, r, t = rng.integers(6), rng.integers(4), rng.integers(6)
        assert rotate_score(params, int(h), int(r), int(t)) <= 0.0


def test_score_matches_scalar_loop_oracle():
    rng = np.random.default_rng(4)
    params = _random_params(seed=5)
    for _ in range(50):
        h, r, t = (int(x) for x in (rng.integers(6), rng.integers(4), rng.integers(6)))
        # independent recomputation with python complex arithmetic
        total = 0.0
        for j in range(params.dim):
            hc = complex(params.entity_re[h][j], params.entity_im[h][j])
            rc = complex(np.cos(params.rel_phase[r][j]), np.sin(params.rel_phase[r][j]))
            tc = complex(params.entity_re[t][j], params.entity_im[t][j])
            total += abs(hc * rc - tc)
        assert rotate_score(params, h, r, t) == pytest.approx(-total, abs=1e-12)


def test_scores_all_matches_single():
    params = _random_params(seed=6)
    all_scores = rotate_scores_all(params, 1, 2)
    for t in range(6):
        assert all_scores[t] == pytest.approx(rotate_score(params, 1, 2, t), abs=1e-12)


def test_global_phase_shift_invariance():
    # multiplying head and tail by the same unit complex per coordinate
    # leaves the score unchanged
    params = _random_params(seed=7)
    h, r, t = 0, 1, 2
    base = rotate_score(params, h, r, t)
    shift = np.random.default_rng(8).uniform(-np.pi, np.pi, params.dim)
    cos, sin = np.cos(shift), np.sin(shift)
    shifted = params.copy()
    for e in (h, t):
        re = params.entity_re[e] * cos - params.entity_im[e] * sin
        im = params.entity_re[e] * sin + params.entity_im[e] * cos
        shifted.entity_re[e] = re
        shifted.entity_im[e] = im
    assert rotate_score(shifted, h, r, t) == pytest.approx(base, abs=1e-9)


def test_wrap_phases_interval():
    raw = np.array([0.0, np.pi, -np.pi, 3 * np.pi, -3 * np.pi, 7.0, -7.0])
    wrapped = wrap_phases(raw)
    assert np.all(wrapped > -np.pi - 1e-15)
    assert np.all(wrapped <= np.pi + 1e-15)
    assert np.allclose(np.mod(wrapped - raw, 2 * np.pi) % (2 * np.pi), 0.0, atol=1e-9)


def test_gradient_check_rotate():
    params = _random_params(n_entities=8, dim=6, seed=9)
    rng = np.random.default_rng(10)
    negatives = rng.integers(8, size=12)
    err = rotate_gradient_check(params, (0, 1, 2), negatives, num_coords=250)
    assert err < 1e-4


def test_ensemble_arithmetic():
    pred = np.array([1.0, 2.0])
    rot = np.array([4.0, 0.0])
    assert np.allclose(ensemble_score(pred, rot, EnsembleConfig(eta=0.5)), [3.0, 2.0])


def test_ensemble_eta_zero_keeps_predictor_ranking():
    rng = np.random.default_rng(11)
    pred = rng.normal(size=10)
    rot = rng.normal(size=10)
    combined = ensemble_score(pred, rot, EnsembleConfig(eta=0.0))
    assert np.array_equal(np.argsort(combined), np.argsort(pred))


def test_ensemble_constant_predictor_follows_rotate():
    rng = np.random.default_rng(12)
    rot = rng.normal(size=10)
    combined = ensemble_score(np.zeros(10), rot, EnsembleConfig(eta=0.25))
    assert np.array_equal(np.argsort(combined), np.argsort(rot))


def test_ensemble_length_mismatch():
    with pytest.raises(ConfigError):
        ensemble_score(np.zeros(3), np.zeros(4), EnsembleConfig())


def test_ensemble_eta_negative_rejected():
    with pytest.raises(ConfigError):
        EnsembleConfig(eta=-0.1)


def test_train_requires_edges():
    kg = build_graph([], test=[("a", "r", "b")])
    with pytest.raises(TrainingError):
        train_rotate(kg, RotateConfig(dim=4, epochs=1))


def test_training_deterministic_and_valid():
    planted = planted_rotate_kg(seed=1, dim=4, grid=(3, 2, 1))
    kg = build_graph(planted.splits.train, planted.splits.valid, planted.splits.test)
    cfg = RotateConfig(dim=4, epochs=3, batch_size=16, negatives=8, rng_seed=5)
    a = train_rotate(kg, cfg)
    b = train_rotate(kg, cfg)
    for key, arr in a.arrays().items():
        assert np.array_equal(arr, b.arrays()[key]), key
    validate_rotate(a)


def test_planted_model_ranks_perfectly():
    planted = planted_rotate_kg(seed=2, dim=8, grid=(5, 2, 2))
    kg = build_graph(planted.splits.train, planted.splits.valid, planted.splits.test)
    assert kg.n_entities == 20
    truth = planted.true_params(kg)
    report = evaluate(make_scorer(truth), kg)
    assert report.mrr == 1.0
    assert report.hits[1] == 1.0


def test_checkpoint_round_trip(tmp_path):
    params = _random_params(seed=13)
    path = tmp_path / "rotate.json"
    save_rotate(path, params)
    loaded = load_rotate(path)
    for key, arr in params.arrays().items():
        assert np.array_equal(arr, loaded.arrays()[key])
    assert loaded.gamma == params.gamma


def test_checkpoint_wrong_type_refused(tmp_path):
    import json

    path = tmp_path / "bogus.json"
    path.write_text(json.dumps({"model_type": "rule_predictor"}))
    with pytest.raises(ConfigError):
        load_rotate(path)
