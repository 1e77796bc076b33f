import logging

import numpy as np
import pytest

from zapfield.d2r import (BehaviorLabel, EvalConfig, FitnessReport, OracleEvaluator, PromptFitness,
                          classify_distance_trend, classify_final_layout, epoch_reward, epoch_seed,
                          evaluate_fitness, linkage_radius, make_evaluator, target_label)
from zapfield.exceptions import ConfigurationError, EvaluatorError, InputError
from zapfield.sim_core import SimConfig

CLUSTERING = BehaviorLabel.CLUSTERING
SCATTERING = BehaviorLabel.SCATTERING


def test_target_label():
    assert target_label("Cluster!") == CLUSTERING
    assert target_label("clustering slowly") == CLUSTERING
    assert target_label("Scatter!") == SCATTERING
    assert target_label("spread out") == SCATTERING

    with pytest.raises(ConfigurationError):
        target_label("cluster then scatter")
    with pytest.raises(ConfigurationError):
        target_label("dance")


def test_eval_config():
    cfg = EvalConfig()
    assert cfg.epochs == 30 and cfg.alpha == 0.5 and cfg.beta == 0.5
    assert cfg.evaluator == "oracle"

    with pytest.raises(ConfigurationError) as e:
        EvalConfig(alpha=0.7, beta=0.5)
    assert e.value.field == "alpha"

    with pytest.raises(ConfigurationError):
        EvalConfig(epochs=0)

    with pytest.raises(ConfigurationError):
        EvalConfig(evaluator="human")

    assert EvalConfig.for_reward("distance").alpha == 1.0
    assert EvalConfig.for_reward("position").beta == 1.0
    assert EvalConfig.for_reward("combined", epochs=3).epochs == 3

    with pytest.raises(ConfigurationError):
        EvalConfig.for_reward("speed")


def test_classify_distance_trend():
    cfg = EvalConfig()
    assert classify_distance_trend(np.linspace(200, 50, 501), cfg) == CLUSTERING
    assert classify_distance_trend(np.linspace(50, 200, 501), cfg) == SCATTERING
    assert classify_distance_trend(np.full(501, 120.0), cfg) == SCATTERING

    # a slope just above the threshold still reads as scattering
    tiny = 100.0 * (1 - 0.5e-4 * np.arange(501))
    assert classify_distance_trend(tiny, cfg) == SCATTERING

    with pytest.raises(InputError):
        classify_distance_trend([1.0], cfg)


def test_classify_final_layout():
    cfg = EvalConfig()
    sim = SimConfig()
    assert linkage_radius(cfg, sim) == 30.0

    # a chain with links shorter than the radius is one cluster
    chain = np.column_stack([np.arange(10) * 25.0 + 50, np.full(10, 250.0)])
    assert classify_final_layout(chain, cfg, sim) == CLUSTERING

    # boundary inclusive
    pair = np.array([[100.0, 100.0], [130.0, 100.0]])
    assert classify_final_layout(pair, cfg, sim) == CLUSTERING

    groups = np.array([[50, 50], [55, 50], [400, 400], [405, 400]], dtype=float)
    assert classify_final_layout(groups, cfg, sim) == SCATTERING


def single_linkage_groups(positions, radius):
    parent = list(range(len(positions)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(positions)):
        for j in range(i + 1, len(positions)):
            if np.linalg.norm(positions[i] - positions[j]) <= radius:
                parent[find(i)] = find(j)
    return len({find(i) for i in range(len(positions))})


def test_classify_final_layout_matches_union_find():
    cfg = EvalConfig()
    sim = SimConfig()
    radius = linkage_radius(cfg, sim)
    rng = np.random.default_rng(6)

    seen = set()
    for _ in range(100):
        n = int(rng.integers(2, 15))
        positions = rng.uniform(200, 200 + rng.uniform(20, 150), size=(n, 2))
        expected = CLUSTERING if single_linkage_groups(positions, radius) == 1 else SCATTERING
        assert classify_final_layout(positions, cfg, sim) == expected
        seen.add(expected)

    assert seen == {CLUSTERING, SCATTERING}


def test_classify_final_layout_shrinking_keeps_clusters():
    cfg = EvalConfig()
    sim = SimConfig()
    rng = np.random.default_rng(8)

    for _ in range(20):
        positions = rng.uniform(50, 450, size=(20, 2))
        centroid  = positions.mean(axis=0)
        clustered = False
        for factor in np.linspace(1.0, 0.02, 25):
            label = classify_final_layout(centroid + factor * (positions - centroid), cfg, sim)
            if clustered:
                assert label == CLUSTERING
            clustered = label == CLUSTERING
        assert clustered


def test_label_symmetry():
    opposite = {CLUSTERING: SCATTERING, SCATTERING: CLUSTERING}
    for target in BehaviorLabel:
        for trend in BehaviorLabel:
            for layout in BehaviorLabel:
                d, p = epoch_reward(target, trend, layout)
                assert epoch_reward(opposite[target], trend, layout) == (1 - d, 1 - p)


def test_epoch_reward_and_report():
    assert epoch_reward(CLUSTERING, CLUSTERING, SCATTERING) == (1, 0)
    assert epoch_reward(SCATTERING, SCATTERING, SCATTERING) == (1, 1)

    report = FitnessReport.from_epochs([(1, 0), (1, 1)], 0.5, 0.5)
    assert report.r_distance == 1.0
    assert report.r_position == 0.5
    assert report.r_combined == 0.75
    assert report.to_dict()["per_epoch"] == [[1, 0], [1, 1]]

    with pytest.raises(InputError):
        FitnessReport.from_epochs([], 0.5, 0.5)


def test_epoch_seed():
    assert epoch_seed(0, 1) == epoch_seed(0, 1)
    assert len({epoch_seed(0, i) for i in range(1, 31)}) == 30
    assert epoch_seed(1, 1) != epoch_seed(0, 1)


def test_make_evaluator():
    assert isinstance(make_evaluator(EvalConfig()), OracleEvaluator)


def test_inward_field_matches_cluster_prompt(linear_arch, inward, small_sim):
    cfg = EvalConfig(epochs=3)

    report = evaluate_fitness(inward, "Cluster!", linear_arch, small_sim, cfg, base_seed=1)
    assert report.r_distance == 1.0
    assert report.r_position == 1.0
    assert report.r_combined == 1.0
    assert len(report.per_epoch) == 3

    report = evaluate_fitness(inward, "Scatter!", linear_arch, small_sim, cfg, base_seed=1)
    assert report.r_combined == 0.0


def test_evaluate_fitness_deterministic(linear_arch, small_sim):
    genome = np.random.default_rng(0).normal(0, 0.5, size=(768 * 8 + 8))
    cfg = EvalConfig(epochs=4)

    a = evaluate_fitness(genome, "Cluster!", linear_arch, small_sim, cfg, base_seed=5)
    b = evaluate_fitness(genome, "Cluster!", linear_arch, small_sim, cfg, base_seed=5)
    assert a == b

    threaded = evaluate_fitness(genome, "Cluster!", linear_arch, small_sim,
                                EvalConfig(epochs=4, workers=3), base_seed=5)
    assert threaded.per_epoch == a.per_epoch
    assert threaded.r_combined == a.r_combined


def test_reward_modes(linear_arch, inward, small_sim):
    distance_only = EvalConfig.for_reward("distance", epochs=2)
    report = evaluate_fitness(inward, "Cluster!", linear_arch, small_sim, distance_only, base_seed=0)
    assert report.r_combined == report.r_distance


class FlakyEvaluator(OracleEvaluator):
    deterministic = False

    def classify_trend(self, traj, sim, cfg):
        raise EvaluatorError("connection refused")


def test_evaluator_failure_scores_zero(linear_arch, inward, small_sim, caplog):
    cfg = EvalConfig(epochs=2)
    with caplog.at_level(logging.WARNING, logger="zapfield.d2r"):
        report = evaluate_fitness(inward, "Cluster!", linear_arch, small_sim, cfg,
                                  base_seed=1, evaluator=FlakyEvaluator())

    assert report.r_distance == 0.0
    assert report.r_position == 1.0
    assert "connection refused" in caplog.text


def test_prompt_fitness(linear_arch, inward, small_sim):
    cfg = EvalConfig(epochs=2)
    fitness = PromptFitness("Cluster!", linear_arch, small_sim, cfg)
    assert fitness(inward, 1) == evaluate_fitness(inward, "Cluster!", linear_arch, small_sim, cfg, 1)

    with pytest.raises(ConfigurationError):
        PromptFitness("dance", linear_arch, small_sim, cfg)
