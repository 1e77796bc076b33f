import numpy as np
import pytest

from zapfield.cli import collect_logs, run_campaign
from zapfield.config import resolve_config
from zapfield.stats import PairedSamples, wilcoxon_signed_rank

# full desk-profile campaigns, minutes each
pytestmark = pytest.mark.slow


def campaign(tmp_path, name, **flags):
    config = resolve_config(flags={"output_dir": str(tmp_path / name), "workers": 4, **flags}, profile="desk")
    run_campaign(config)
    return [log for _, log in collect_logs(tmp_path / name)]


def improvement(logs):
    initial = np.array([log.initial_fitness for log in logs])
    final   = np.array([log.best_fitness for log in logs])
    return initial, final, wilcoxon_signed_rank(PairedSamples(initial, final))


def final_position_scores(logs):
    return np.array([log.records[-1].best_r_position for log in logs])


def test_es_improves_on_coarse_grid(tmp_path):
    logs = campaign(tmp_path, "es2", grid_sizes=[2], prompt="Cluster!")
    assert len(logs) == 10

    initial, final, result = improvement(logs)
    assert result.p_value < 0.05
    assert final.mean() >= initial.mean() + 0.2


@pytest.mark.parametrize("grid_n", [2, 3])
def test_combined_reward_clusters(tmp_path, grid_n):
    logs = campaign(tmp_path, f"es{grid_n}", grid_sizes=[grid_n])
    assert np.median(final_position_scores(logs)) >= 0.6


def test_ga_beats_es_on_fine_grid(tmp_path):
    ga_logs = campaign(tmp_path, "ga5", grid_sizes=[5], optimizer="ga",
                       ga={"pop_size": 10, "generations": 20})
    # same number of fitness evaluations: 10 + 20 * 9
    es_logs = campaign(tmp_path, "es5", grid_sizes=[5], optimizer="es",
                       es={"generations": 189})

    assert np.median(final_position_scores(ga_logs)) >= np.median(final_position_scores(es_logs))
    _, _, result = improvement(ga_logs)
    assert result.p_value < 0.05
