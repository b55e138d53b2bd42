import numpy as np
import pytest
from scipy.stats import kstest

from prsl.model import validate_model
from prsl.simulation import (
    SimConfig,
    approx_quality_experiment,
    generate_model,
    generate_observations,
    parse_size,
    sample_inhibition,
)


def test_model_shape():
    model = generate_model(SimConfig(5, 5, seed=3))
    assert [s.name for s in model.labels] == ["L1", "L2", "L3", "L4", "L5"]
    for s in model.labels:
        assert 2 <= s.size <= 4
        assert s.categories == tuple(f"c{m + 1}" for m in range(s.size))
    assert len(model.rules) == 5
    assert validate_model(model) == []


def test_rule_draw_counts():
    counts = set()
    for seed in range(60):
        for rule in generate_model(SimConfig(5, 5, seed=seed)).rules:
            n = sum(sum(q < 1.0 for q in row) for row in rule.q.values())
            assert 2 <= n <= 5
            counts.add(n)
            assert all(0.0 < q <= 1.0 for row in rule.q.values() for q in row)
    assert counts == {2, 3, 4, 5}


def test_draws_capped_by_pool():
    model = generate_model(SimConfig(1, 20, seed=0))
    pool = model.labels[0].size
    for rule in model.rules:
        assert sum(q < 1.0 for q in rule.q["L1"]) <= pool


def test_inhibition_density():
    x = sample_inhibition(np.random.default_rng(0), 100_000)
    assert abs(x.mean() - 1 / 3) < 0.01
    assert np.all((x > 0) & (x <= 1))
    # CDF of 2(1 - x) is 1 - (1 - x)^2
    assert kstest(x, lambda t: 1 - (1 - t) ** 2).statistic < 0.01
    assert 0 < sample_inhibition(np.random.default_rng(1)) <= 1


def test_observations_on_simplex():
    model = generate_model(SimConfig(4, 2, seed=1))
    obs = generate_observations(model, 50, seed=1)
    assert len(obs) == 50 and obs[0].id == "obs00" and obs[-1].id == "obs49"
    for o in obs:
        assert not o.truth
        for p in o.predictions.values():
            probs = np.asarray(p.probs)
            assert abs(probs.sum() - 1) < 1e-12 and np.all(probs > 0)


def test_flat_dirichlet_is_uniform_for_two_categories():
    from prsl.model import LabelSpec, Model

    model = Model((LabelSpec("A", ("x", "y")),))
    first = [o.predictions["A"].probs[0] for o in generate_observations(model, 100_000, seed=2)]
    assert kstest(first, "uniform").statistic < 0.01


def test_determinism():
    cfg = SimConfig(5, 5, seed=7)
    assert generate_model(cfg) == generate_model(cfg)
    a = generate_observations(generate_model(cfg), 10, 7)
    b = generate_observations(generate_model(cfg), 10, 7)
    assert all(np.array_equal(x.predictions["L1"].probs, y.predictions["L1"].probs) for x, y in zip(a, b))
    assert generate_model(SimConfig(5, 5, seed=8)) != generate_model(cfg)


def test_config_validated():
    with pytest.raises(ValueError):
        SimConfig(0, 1)


def test_tree_experiment_is_exact():
    report = approx_quality_experiment([(2, 1)], reps=3, n_data=5, seed=0)
    for row in report.rows:
        assert row.correlation == pytest.approx(1.0, abs=1e-9)
        assert row.mpe_match_joint == 1.0


def test_small_experiment_report():
    report = approx_quality_experiment([(5, 5)], reps=3, n_data=20, seed=0, threads=2)
    assert len(report.rows) == 3 and not report.skipped
    med = report.medians()["5x5"]
    assert med["correlation"] >= 0.98
    assert med["mpe_match_joint"] >= med["mpe_match_marginal"]
    csv = report.to_csv().splitlines()
    assert csv[0] == "size,rep,correlation,mpe_match_joint,mpe_match_marginal"
    assert len(csv) == 4
    serial = approx_quality_experiment([(5, 5)], reps=3, n_data=20, seed=0)
    assert serial.to_csv() == report.to_csv()


def test_oversized_models_are_skipped():
    report = approx_quality_experiment([(30, 30)], reps=1, n_data=1)
    assert not report.rows and len(report.skipped) == 1


def test_parse_size():
    assert parse_size("10x10") == (10, 10)
    with pytest.raises(ValueError):
        parse_size("ten")
