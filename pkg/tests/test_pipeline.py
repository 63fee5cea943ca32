"""Training loops, metrics, reports and benchmarks."""
import numpy as np
import pytest

from rlhgnn.hin import HinSchema, RelationType, build_graph
from rlhgnn.pipeline import (
    TrainConfig,
    action_report,
    bench_aggregation,
    evaluate_f1,
    predict,
    run_rl_hgnn,
    run_rl_hgnn_pp,
)
from rlhgnn.synth import SyntheticSpec, generate_planted_hin


def brute_force_f1(preds, labels):
    """Independent scorer: enumerate TP/FP/FN per class from scratch."""
    classes = sorted(set(preds) | set(labels))
    per_class = []
    tps = fps = fns = 0
    for c in classes:
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if p != c and y == c)
        tps, fps, fns = tps + tp, fps + fp, fns + fn
        per_class.append(2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0)
    micro = 2 * tps / (2 * tps + fps + fns)
    return micro, sum(per_class) / len(per_class)


def planted_spec_1hop(seed=0, n_movies=90):
    return SyntheticSpec(
        node_counts={"Movie": n_movies, "Actor": 24, "Director": 12},
        relations=[("M-A", "Movie", "Actor"), ("M-D", "Movie", "Director")],
        out_degree={"M-A": 2, "M-D": 2},
        target_type="Movie",
        planted_path=("M-A",),
        signal_strength=1.0,
        num_classes=3,
        train_count=36,
        val_count=27,
        seed=seed,
    )


def small_cfg(**overrides):
    base = dict(variant="rl-hgnn-pp", max_timesteps=2, rounds=8, inner_rounds=8,
                node_batch=24, hidden_dim=16, heads=2, dropout=0.2, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# evaluate_f1


def test_f1_all_correct():
    labels = np.array([0, 1, 2, 1])
    assert evaluate_f1(labels.copy(), labels, np.arange(4)) == (1.0, 1.0)


def test_f1_binary_confusion_matrix_case():
    # confusion [[2,1],[1,2]]: two right per class, one wrong each way
    labels = np.array([0, 0, 0, 1, 1, 1])
    preds = np.array([0, 0, 1, 1, 1, 0])
    micro, macro = evaluate_f1(preds, labels, np.arange(6))
    bf_micro, bf_macro = brute_force_f1(preds.tolist(), labels.tolist())
    assert abs(micro - 4 / 6) < 1e-12
    assert abs(macro - 2 / 3) < 1e-12
    assert abs(micro - bf_micro) < 1e-12 and abs(macro - bf_macro) < 1e-12


def test_f1_single_class():
    labels = np.array([1, 1, 1])
    assert evaluate_f1(labels.copy(), labels, np.arange(3)) == (1.0, 1.0)


def test_f1_micro_equals_accuracy_multiclass():
    rng = np.random.default_rng(0)
    for _ in range(10):
        labels = rng.integers(0, 4, size=50)
        preds = rng.integers(0, 4, size=50)
        micro, _ = evaluate_f1(preds, labels, np.arange(50))
        assert abs(micro - np.mean(preds == labels)) < 1e-12


def test_f1_empty_set_errors():
    with pytest.raises(ValueError):
        evaluate_f1(np.array([0]), np.array([0]), np.array([], dtype=int))


def test_f1_random_cases_match_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(20):
        labels = rng.integers(0, 3, size=30)
        preds = rng.integers(0, 3, size=30)
        micro, macro = evaluate_f1(preds, labels, np.arange(30))
        bf_micro, bf_macro = brute_force_f1(preds.tolist(), labels.tolist())
        assert abs(micro - bf_micro) < 1e-12
        assert abs(macro - bf_macro) < 1e-12


# ---------------------------------------------------------------------------
# Loop structure invariants


def test_alg1_counts():
    g, split = generate_planted_hin(planted_spec_1hop())
    cfg = small_cfg(variant="rl-hgnn", max_timesteps=1, rounds=2, inner_rounds=2,
                    eps_start=0.0, eps_end=0.0)
    params, agent, report = run_rl_hgnn(cfg, g, split)
    assert report.meta["hgnn_reinits"] == 2
    assert report.meta["dqn_update_opportunities"] == 2 * (1 + 1)  # K * (T+1)


def test_alg1_zero_weight_net_tie_breaks_to_lowest_action(monkeypatch):
    """K=1, T=1, eps=0, zero-weight Q: the tie-break is visible end to end."""
    import rlhgnn.pipeline as pl

    g, split = generate_planted_hin(planted_spec_1hop())
    real_make = pl._make_agent

    def zeroed(*args, **kwargs):
        agent = real_make(*args, **kwargs)
        for v in agent.qnet.vars():
            v.value = np.zeros_like(v.value)
        for v in agent.target_net.vars():
            v.value = np.zeros_like(v.value)
        return agent

    monkeypatch.setattr(pl, "_make_agent", zeroed)
    cfg = small_cfg(variant="rl-hgnn", max_timesteps=1, rounds=1, inner_rounds=1,
                    eps_start=0.0, eps_end=0.0)
    _, _, report = run_rl_hgnn(cfg, g, split)
    first = report.steps[0]
    # M-A is relation index 0 and legal from Movie: every node picks it
    assert g.schema.relation_index("M-A") == 0
    assert set(first.actions) == {0}


def test_alg2_counts():
    g, split = generate_planted_hin(planted_spec_1hop())
    cfg = small_cfg(rounds=7, max_timesteps=2)
    params, agent, report = run_rl_hgnn_pp(cfg, g, split)
    assert report.meta["hgnn_steps"] == 7
    assert report.meta["dqn_update_opportunities"] == 7
    assert len(report.steps) == 7
    # timesteps cycle 1..T
    assert [s.timestep for s in report.steps] == [1, 2, 1, 2, 1, 2, 1]


def test_episode_paths_never_exceed_T():
    g, split = generate_planted_hin(planted_spec_1hop())
    for cfg, runner in ((small_cfg(variant="rl-hgnn", max_timesteps=2, rounds=2,
                                   inner_rounds=2), run_rl_hgnn),
                        (small_cfg(rounds=6, max_timesteps=2), run_rl_hgnn_pp)):
        _, _, report = runner(cfg, g, split)
        for r in report.rounds:
            assert all(len(p) <= cfg.max_timesteps for p in r.paths)


def test_default_dimensions_smoke():
    """Both loops run at the default widths (d=128, 8 heads, 16-wide heads)."""
    g, split = generate_planted_hin(planted_spec_1hop())
    for variant, runner in (("rl-hgnn", run_rl_hgnn), ("rl-hgnn-pp", run_rl_hgnn_pp)):
        cfg = TrainConfig(variant=variant, max_timesteps=2, rounds=2, inner_rounds=2,
                          node_batch=12, seed=0)  # d=128, heads=8, dropout=0.5 defaults
        params, agent, report = runner(cfg, g, split)
        assert params.d == 128 and params.heads == 8 and params.head_dim == 16
        assert len(report.steps) > 0
        assert np.isfinite(report.meta["best_val_metric"])


def test_determinism_identical_reports():
    g, split = generate_planted_hin(planted_spec_1hop())
    for variant, runner in (("rl-hgnn", run_rl_hgnn), ("rl-hgnn-pp", run_rl_hgnn_pp)):
        cfg = small_cfg(variant=variant, max_timesteps=1 if variant == "rl-hgnn" else 2,
                        rounds=3, inner_rounds=3, seed=42)
        _, _, r1 = runner(cfg, g, split)
        cfg2 = small_cfg(variant=variant, max_timesteps=1 if variant == "rl-hgnn" else 2,
                         rounds=3, inner_rounds=3, seed=42)
        _, _, r2 = runner(cfg2, g, split)
        assert r1.to_csv() == r2.to_csv()
        _, _, r3 = runner(small_cfg(variant=variant,
                                    max_timesteps=1 if variant == "rl-hgnn" else 2,
                                    rounds=3, inner_rounds=3, seed=43), g, split)
        assert r1.to_csv() != r3.to_csv()


# ---------------------------------------------------------------------------
# Reports


def test_action_report_all_stop_and_accounting():
    g, split = generate_planted_hin(planted_spec_1hop())
    # a fixed empty path forces Stop at the first decision for every node
    cfg = small_cfg(rounds=2, fixed_path=())
    _, _, report = run_rl_hgnn_pp(cfg, g, split)
    stats = action_report(report, g)
    assert stats.per_timestep[1] == {"STOP": 1.0}
    assert stats.stop_at_zero_fraction == 1.0
    assert stats.path_table == []
    # accounting identity on a learned run
    cfg2 = small_cfg(rounds=6)
    _, _, rep2 = run_rl_hgnn_pp(cfg2, g, split)
    st2 = action_report(rep2, g)
    total = st2.stop_at_zero_fraction + sum(f for _, f in st2.path_table)
    assert abs(total - 1.0) < 1e-9
    for t, freqs in st2.per_timestep.items():
        assert abs(sum(freqs.values()) - 1.0) < 1e-9


def test_action_report_arrow_format():
    g, split = generate_planted_hin(planted_spec_1hop())
    cfg = small_cfg(rounds=4, fixed_path=("M-A",), max_timesteps=1)
    _, _, report = run_rl_hgnn_pp(cfg, g, split)
    stats = action_report(report, g)
    assert stats.path_table[0][0] == "Movie -M-A-> Actor"
    assert stats.path_table[0][1] == 1.0
    rendered = stats.render()
    assert "Movie -M-A-> Actor" in rendered and "%" in rendered


def test_stop_at_zero_nonzero_when_labels_are_own_attributes():
    spec = SyntheticSpec(
        node_counts={"Movie": 90, "Actor": 20, "Director": 10},
        relations=[("M-A", "Movie", "Actor"), ("M-D", "Movie", "Director")],
        out_degree={"M-A": 2, "M-D": 2},
        target_type="Movie",
        planted_path=(),  # label signal sits in the movie's own attributes
        num_classes=3,
        train_count=36, val_count=27, seed=1,
    )
    g, split = generate_planted_hin(spec)
    cfg = small_cfg(rounds=60, max_timesteps=2, hidden_dim=16, heads=2,
                    dropout=0.1, inner_rounds=32, eps_fraction=0.4, seed=1)
    _, _, report = run_rl_hgnn_pp(cfg, g, split)
    stats = action_report(report, g)
    assert stats.stop_at_zero_fraction > 0.0


# ---------------------------------------------------------------------------
# Planted recovery (base variant; the fast variant is exercised in acceptance)


def test_alg1_concentrates_on_planted_relation():
    g, split = generate_planted_hin(planted_spec_1hop())
    cfg = TrainConfig(variant="rl-hgnn", max_timesteps=1, rounds=30, inner_rounds=30,
                      node_batch=36, hidden_dim=32, heads=4, dropout=0.1, seed=0,
                      eps_start=1.0, eps_end=0.05, eps_fraction=0.4, dqn_batch=64)
    params, agent, report = run_rl_hgnn(cfg, g, split)
    stats = action_report(report, g)
    planted = sum(f for arrow, f in stats.path_table if arrow.startswith("Movie -M-A->"))
    assert planted >= 0.8
    assert report.meta["best_val_metric"] >= 0.9
    # greedy predictions from the returned artifacts transfer to test nodes
    preds = predict(params, agent, g, cfg, split.test)
    micro, _ = evaluate_f1(preds, g.labels, split.test)
    assert micro >= 0.8


# ---------------------------------------------------------------------------
# Benchmarks


def test_bench_aggregation_star_graph_single_episode_no_sharing():
    schema = HinSchema(
        node_types=("Hub", "Leaf"),
        relation_types=(RelationType("out", "Hub", "Leaf"),),
        attribute_dims={"Hub": 2, "Leaf": 2},
    )
    g = build_graph(
        schema, {"Hub": 1, "Leaf": 5},
        {"out": [(0, i) for i in range(5)]},
        {}, "Hub", 2, {0: 0},
    )
    cfg = TrainConfig(node_batch=1, fan_out_cap=None)
    stats = bench_aggregation(g, cfg, [1], episodes_per_t=1, seed=0)
    assert stats[1].reduction_ratio == 0.0
    assert stats[1].step_count_naive == stats[1].step_count_merged == 1


def test_bench_runtime_equal_seed_rerun_spread_under_20_percent():
    """The benchmark reports design time averaged over repeated runs;
    rerunning it with equal seeds must reproduce that average within 20%.
    The workload is sized so scheduler noise stays well below the bound."""
    from rlhgnn.pipeline import bench_runtime

    g, split = generate_planted_hin(planted_spec_1hop())
    cfg = TrainConfig(variant="rl-hgnn", max_timesteps=2, rounds=14, inner_rounds=10,
                      node_batch=24, hidden_dim=16, heads=2, dropout=0.2, seed=0)
    bench_runtime(cfg, g, split, repeats=1)  # warmup
    means = []
    for _ in range(2):
        res = bench_runtime(cfg, g, split, repeats=4)
        means.append(res["mean_rl-hgnn_ms"])
    spread = abs(means[0] - means[1]) / np.mean(means)
    assert spread < 0.2, f"equal-seed benchmark rerun spread {spread:.3f}"


def test_bench_aggregation_ratio_grows_with_T_and_matches_enumeration():
    from rlhgnn.aggplan import build_plan, count_steps_by_enumeration, naive_plan
    from rlhgnn.pipeline import random_legal_episodes

    spec = SyntheticSpec(
        node_counts={"Movie": 30, "Actor": 12, "Director": 6},
        relations=[("M-D", "Movie", "Director"), ("D-M", "Director", "Movie"),
                   ("M-A", "Movie", "Actor"), ("A-M", "Actor", "Movie")],
        out_degree={"M-D": 3, "D-M": 3, "M-A": 3, "A-M": 3},
        target_type="Movie", planted_path=("M-A",), num_classes=3,
        train_count=12, val_count=9, seed=0,
    )
    g, _ = generate_planted_hin(spec)
    cfg = TrainConfig(node_batch=40, fan_out_cap=None)
    stats = bench_aggregation(g, cfg, [2, 4], seed=5)
    assert stats[4].reduction_ratio > stats[2].reduction_ratio
    # independent recount of one batch
    rng = np.random.default_rng(5)
    starts = np.sort(rng.integers(0, 30, size=40))
    eps = random_legal_episodes(g, starts, 2, seed=7, fan_out_cap=None)
    nv, mg = count_steps_by_enumeration(g, [(e.start, e.path) for e in eps])
    assert naive_plan(g, eps).step_count == nv
    assert build_plan(g, eps).step_count == mg
