import json
import os
import subprocess
import sys

import pytest

from rulekit import Rule, RuleSet, build_graph
from rulekit.errors import ConfigError
from rulekit.metrics import FilterConfig, score_rules
from rulekit.pipeline import (
    ExperimentConfig,
    StageToggles,
    ablation_matrix,
    apply_overrides,
    cap_rules_per_relation,
    load_config,
    run_pipeline,
    write_ablation_tsv,
)
from rulekit.rules import parse_rule, read_rules_file
from rulekit.synth import planted_rule_kg


def _write_kg(tmp_path, data):
    kg_dir = tmp_path / "kg"
    kg_dir.mkdir()
    for split, triples in (
        ("train.txt", data.train),
        ("valid.txt", data.valid),
        ("test.txt", data.test),
    ):
        with open(kg_dir / split, "w", encoding="utf-8") as fh:
            for h, r, t in triples:
                fh.write(f"{h}\t{r}\t{t}\n")
    return kg_dir


@pytest.fixture
def small_experiment(tmp_path):
    data = planted_rule_kg(n_chains=14, n_test=4, n_valid=2, seed=2)
    kg_dir = _write_kg(tmp_path, data)
    rules_path = tmp_path / "in.rules"
    rules_path.write_text("".join(line + "\n" for line in data.rule_lines))
    return kg_dir, rules_path


def _fast_config(kg_dir, out_dir, rules_path, **kw):
    cfg = ExperimentConfig(
        kg_dir=str(kg_dir),
        out_dir=str(out_dir),
        rules_path=str(rules_path),
        seed=5,
    )
    over = {
        "mine.walks_per_entity": 10,
        "mine.lengths": (2,),
        "train.epochs": 6,
        "train.batch_size": 16,
        "train.learning_rate": 3e-3,
        "train.dim": 8,
        "train.hidden": 16,
    }
    over.update(kw)
    return apply_overrides(cfg, over)


def test_no_stage_enabled_is_config_error(small_experiment, tmp_path):
    kg_dir, rules_path = small_experiment
    cfg = _fast_config(kg_dir, tmp_path / "out", rules_path)
    off = StageToggles(False, False, False, False, False, False, False)
    cfg = apply_overrides(cfg, {})
    from dataclasses import replace

    cfg = replace(cfg, stages=off)
    with pytest.raises(ConfigError, match="no stage enabled"):
        run_pipeline(cfg)


def test_pipeline_artifacts_and_roundtrip(small_experiment, tmp_path):
    kg_dir, rules_path = small_experiment
    cfg = _fast_config(kg_dir, tmp_path / "out", rules_path)
    result = run_pipeline(cfg)
    for name in ("rules", "scored_rules", "predictor", "metrics", "per_query", "manifest"):
        if name == "manifest":
            assert os.path.exists(result.manifest_path)
        else:
            assert os.path.exists(result.artifacts[name]), name
    # every artifact reloads through its loader
    from rulekit.kg import load_graph_dir
    from rulekit.metrics import read_scored_rules
    from rulekit.predictor import load_predictor
    from rulekit.rules import ruleset_hash

    kg = load_graph_dir(kg_dir)
    reloaded_rules = read_rules_file(result.artifacts["rules"], kg)
    assert len(reloaded_rules) == len(result.rules)
    scored = read_scored_rules(result.artifacts["scored_rules"], kg)
    assert len(scored) == len(result.rules)
    params = load_predictor(
        result.artifacts["predictor"], expect_digest=ruleset_hash(reloaded_rules)
    )
    assert params.rule_embeddings.shape[0] == len(reloaded_rules)
    doc = json.loads(open(result.artifacts["metrics"]).read())
    assert set(doc) == {"mr", "mrr", "hits", "num_queries"}
    manifest = json.loads(open(result.manifest_path).read())
    assert set(manifest["artifacts"]) == set(result.artifacts)


def test_pipeline_determinism(small_experiment, tmp_path):
    kg_dir, rules_path = small_experiment
    digests = []
    blobs = {}
    for run in ("one", "two"):
        out = tmp_path / run
        cfg = _fast_config(kg_dir, out, rules_path)
        result = run_pipeline(cfg)
        manifest = json.loads(open(result.manifest_path).read())
        digests.append(manifest["artifacts"])
        for name, path in result.artifacts.items():
            blobs.setdefault(name, []).append(open(path, "rb").read())
    assert digests[0] == digests[1]
    for name, (a, b) in blobs.items():
        assert a == b, f"artifact {name} differs between identical runs"


def test_mine_only_pipeline_writes_composition(tmp_path):
    triples = [("a", "r1", "b"), ("b", "r2", "c"), ("a", "r3", "c")]
    kg_dir = tmp_path / "kg"
    kg_dir.mkdir()
    with open(kg_dir / "train.txt", "w") as fh:
        for h, r, t in triples:
            fh.write(f"{h}\t{r}\t{t}\n")
    cfg = ExperimentConfig(
        kg_dir=str(kg_dir), out_dir=str(tmp_path / "out"), seed=3,
        stages=StageToggles(mine=True, abduce=False, invert=False, filter=False,
                            train=False, train_rotate=False, evaluate=False),
    )
    cfg = apply_overrides(cfg, {"mine.walks_per_entity": 100, "mine.lengths": (2,)})
    result = run_pipeline(cfg)
    text = open(result.artifacts["rules"]).read()
    assert "r3 <- r1 r2" in text


def test_cap_rules_identity_when_large(small_experiment):
    kg_dir, rules_path = small_experiment
    from rulekit.kg import load_graph_dir

    kg = load_graph_dir(kg_dir)
    rules = read_rules_file(rules_path, kg)
    scores = score_rules(rules, kg, FilterConfig())
    capped = cap_rules_per_relation(rules, 100, scores)
    assert list(capped) == list(rules)


def test_cap_prefers_higher_pca():
    kg = build_graph(
        [("a", "r1", "b"), ("b", "r2", "c"), ("a", "r3", "c"), ("a", "x", "q")]
    )
    good = parse_rule("r3 <- r1 r2", kg)
    bad = parse_rule("r3 <- x", kg)  # fires but never on a positive
    rules = RuleSet([bad, good])
    scores = score_rules(rules, kg, FilterConfig())
    capped = cap_rules_per_relation(rules, 1, scores)
    assert list(capped) == [good]


def test_cap_all_na_keeps_file_order():
    kg = build_graph([("a", "r1", "b"), ("c", "r3", "d")])
    # neither body fires from any head that has an r3 tail
    first = parse_rule("r3 <- r1 r1", kg)
    second = parse_rule("r3 <- !r1 !r1", kg)
    rules = RuleSet([first, second])
    scores = score_rules(rules, kg, FilterConfig())
    assert all(s.pca is None for s in scores)
    capped = cap_rules_per_relation(rules, 1, scores)
    assert list(capped) == [first]


def test_cap_requires_positive(small_experiment):
    with pytest.raises(ConfigError):
        cap_rules_per_relation(RuleSet([Rule(0, (0,))]), 0, [])


def test_ablation_single_row(small_experiment, tmp_path):
    kg_dir, rules_path = small_experiment
    cfg = _fast_config(kg_dir, tmp_path / "out", rules_path)
    rows = ablation_matrix(cfg, subsets=[("aug", {})])
    assert len(rows) == 1
    assert rows[0][0] == "aug"
    assert rows[0][1] is not None


def test_ablation_baseline_row_first(small_experiment, tmp_path):
    kg_dir, rules_path = small_experiment
    cfg = _fast_config(kg_dir, tmp_path / "out", rules_path)
    rows = ablation_matrix(
        cfg, subsets=[("baseline", dict(mine=False, abduce=False, invert=False, filter=False)), ("aug", {})]
    )
    assert rows[0][0] == "baseline"
    table = tmp_path / "ablation.tsv"
    write_ablation_tsv(table, rows)
    lines = table.read_text().strip().split("\n")
    assert lines[0].startswith("subset\t")
    assert len(lines) == 3


def test_toml_config_and_overrides(tmp_path):
    config = tmp_path / "exp.toml"
    config.write_text(
        """
[run]
kg_dir = "somewhere"
out_dir = "out"
seed = 9
rules_per_relation = 40

[stages]
mine = false
train_rotate = false

[mine]
walks_per_entity = 7
lengths = [2]

[train]
epochs = 3
batch_size = 4

[ensemble]
eta = 0.05
"""
    )
    cfg = load_config(config)
    assert cfg.kg_dir == "somewhere"
    assert cfg.seed == 9
    assert cfg.rules_per_relation == 40
    assert cfg.stages.mine is False
    assert cfg.walk.walks_per_entity == 7
    assert cfg.train.epochs == 3
    assert cfg.ensemble.eta == 0.05
    # the run seed propagates into every stage config
    assert cfg.walk.rng_seed == 9
    assert cfg.train.rng_seed == 9
    assert cfg.rotate.rng_seed == 9
    over = apply_overrides(cfg, {"seed": 11, "train.epochs": 5})
    assert over.seed == 11
    assert over.train.epochs == 5
    assert over.train.rng_seed == 11


def test_unknown_toml_key_rejected(tmp_path):
    config = tmp_path / "exp.toml"
    config.write_text("[train]\nnot_a_key = 3\n")
    with pytest.raises(ConfigError):
        load_config(config)


def _run_cli(args, cwd):
    return subprocess.run(
        [sys.executable, "-m", "rulekit.cli", *args],
        capture_output=True,
        text=True,
        cwd=cwd,
    )


def test_cli_module_entry_point(tmp_path, small_experiment):
    kg_dir, rules_path = small_experiment
    out = tmp_path / "mined.rules"
    proc = _run_cli(
        ["mine", "--kg", str(kg_dir), "--walks", "30", "--lengths", "2",
         "--seed", "3", "--out", str(out)],
        cwd=tmp_path,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
    assert "mined" in proc.stdout


def test_cli_pipeline_determinism(tmp_path, small_experiment):
    kg_dir, rules_path = small_experiment
    config = tmp_path / "exp.toml"
    config.write_text(
        f"""
[run]
kg_dir = "{kg_dir}"
rules_path = "{rules_path}"
seed = 5

[stages]
train_rotate = false

[mine]
walks_per_entity = 10
lengths = [2]

[train]
epochs = 4
batch_size = 16
dim = 8
hidden = 16
"""
    )
    outputs = []
    for name in ("runA", "runB"):
        out_dir = tmp_path / name
        proc = _run_cli(
            ["pipeline", "--config", str(config), "--out", str(out_dir)],
            cwd=tmp_path,
        )
        assert proc.returncode == 0, proc.stderr
        outputs.append(
            {
                p: open(out_dir / p, "rb").read()
                for p in ("rules.out", "scored_rules.tsv", "metrics.json")
            }
        )
    assert outputs[0] == outputs[1]


def test_cli_exit_code_config_error(tmp_path):
    proc = _run_cli(["pipeline"], cwd=tmp_path)  # no kg dir anywhere
    assert proc.returncode == 3  # missing train file -> data error
    proc = _run_cli(
        ["eval", "--kg", str(tmp_path), "--out", str(tmp_path / "m.json")],
        cwd=tmp_path,
    )
    assert proc.returncode == 3


def test_cli_exit_code_data_error(tmp_path):
    kg_dir = tmp_path / "kg"
    kg_dir.mkdir()
    (kg_dir / "train.txt").write_text("only_two\tfields\n")
    proc = _run_cli(
        ["mine", "--kg", str(kg_dir), "--out", str(tmp_path / "x.rules")],
        cwd=tmp_path,
    )
    assert proc.returncode == 3
    assert "error" in proc.stderr.lower()


def test_cli_score_and_filter_round_trip(tmp_path, small_experiment):
    kg_dir, rules_path = small_experiment
    scored = tmp_path / "scored.tsv"
    proc = _run_cli(
        ["score", "--kg", str(kg_dir), "--rules", str(rules_path), "--out", str(scored)],
        cwd=tmp_path,
    )
    assert proc.returncode == 0, proc.stderr
    kept = tmp_path / "kept.rules"
    proc = _run_cli(
        ["filter", "--kg", str(kg_dir), "--rules", str(rules_path),
         "--min-pca", "0.5", "--out", str(kept)],
        cwd=tmp_path,
    )
    assert proc.returncode == 0, proc.stderr
    assert kept.read_text().strip()  # the planted rule is perfect, it stays


def test_pipeline_with_rotate_ensemble(small_experiment, tmp_path):
    kg_dir, rules_path = small_experiment
    cfg = _fast_config(
        kg_dir,
        tmp_path / "out",
        rules_path,
        **{
            "rotate.dim": 6,
            "rotate.epochs": 5,
            "rotate.batch_size": 16,
            "rotate.negatives": 4,
            "ensemble.eta": 0.05,
        },
    )
    from dataclasses import replace

    cfg = replace(cfg, stages=replace(cfg.stages, train_rotate=True))
    result = run_pipeline(cfg)
    assert os.path.exists(result.artifacts["rotate"])
    assert result.metrics is not None
    from rulekit.rotate import load_rotate

    loaded = load_rotate(result.artifacts["rotate"])
    assert loaded.entity_re.shape[1] == 6


def test_pipeline_evaluate_without_model_is_config_error(small_experiment, tmp_path):
    kg_dir, rules_path = small_experiment
    cfg = _fast_config(kg_dir, tmp_path / "out", rules_path)
    from dataclasses import replace

    cfg = replace(
        cfg,
        stages=StageToggles(
            mine=False, abduce=True, invert=False, filter=False,
            train=False, train_rotate=False, evaluate=True,
        ),
    )
    with pytest.raises(ConfigError, match="no model"):
        run_pipeline(cfg)


def test_cli_train_rotate_then_ensemble_eval(tmp_path, small_experiment):
    kg_dir, rules_path = small_experiment
    rot_ckpt = tmp_path / "rot.json"
    proc = _run_cli(
        ["train-rotate", "--kg", str(kg_dir), "--dim", "4", "--epochs", "3",
         "--batch-size", "16", "--negatives", "4", "--seed", "2",
         "--out", str(rot_ckpt)],
        cwd=tmp_path,
    )
    assert proc.returncode == 0, proc.stderr
    pred_ckpt = tmp_path / "pred.json"
    proc = _run_cli(
        ["train", "--kg", str(kg_dir), "--rules", str(rules_path),
         "--epochs", "2", "--dim", "4", "--hidden", "8", "--out", str(pred_ckpt)],
        cwd=tmp_path,
    )
    assert proc.returncode == 0, proc.stderr
    metrics = tmp_path / "metrics.json"
    proc = _run_cli(
        ["eval", "--kg", str(kg_dir), "--rules", str(rules_path),
         "--ckpt", str(pred_ckpt), "--rotate-ckpt", str(rot_ckpt),
         "--eta", "0.1", "--out", str(metrics)],
        cwd=tmp_path,
    )
    assert proc.returncode == 0, proc.stderr
    doc = json.loads(metrics.read_text())
    assert 0.0 < doc["mrr"] <= 1.0


def test_cli_eval_refuses_mismatched_ruleset(tmp_path, small_experiment):
    kg_dir, rules_path = small_experiment
    pred_ckpt = tmp_path / "pred.json"
    proc = _run_cli(
        ["train", "--kg", str(kg_dir), "--rules", str(rules_path),
         "--epochs", "2", "--dim", "4", "--hidden", "8", "--out", str(pred_ckpt)],
        cwd=tmp_path,
    )
    assert proc.returncode == 0, proc.stderr
    other_rules = tmp_path / "other.rules"
    other_rules.write_text("shortcut <- leg1 leg2\nshortcut <- shortcut\n")
    proc = _run_cli(
        ["eval", "--kg", str(kg_dir), "--rules", str(other_rules),
         "--ckpt", str(pred_ckpt), "--out", str(tmp_path / "m.json")],
        cwd=tmp_path,
    )
    assert proc.returncode == 2
