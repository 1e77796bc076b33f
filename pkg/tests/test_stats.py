import numpy as np
import pytest
from scipy import stats as sps

from zapfield.evolve import EvolutionLog, GenerationRecord
from zapfield.exceptions import InputError, InsufficientDataError
from zapfield.stats import (PairedSamples, linreg_slope, summarize_runs, wilcoxon_signed_rank,
                            write_summary_csv)


def test_paired_samples():
    with pytest.raises(InputError):
        PairedSamples([1, 2, 3], [1, 2])
    with pytest.raises(InputError):
        PairedSamples([1, np.nan], [1, 2])

    s = PairedSamples([1, 2], [3, 2])
    np.testing.assert_array_equal(s.differences, [2, 0])


def test_exact_all_positive():
    first  = np.zeros(10)
    second = np.arange(1, 11) * 0.1
    result = wilcoxon_signed_rank(PairedSamples(first, second))

    assert result.statistic == 0.0
    assert result.n == 10
    assert result.w_plus == 55.0
    assert result.exact
    assert result.p_value == pytest.approx(0.001953125, abs=1e-5)


def test_uniform_improvement():
    first  = np.linspace(0.1, 0.4, 10)
    second = first + 0.5
    result = wilcoxon_signed_rank(PairedSamples(first, second))
    assert result.p_value < 0.01


def test_one_sided():
    first  = np.zeros(10)
    second = np.arange(1, 11, dtype=float)

    greater = wilcoxon_signed_rank(PairedSamples(first, second), alternative="greater")
    assert greater.p_value == pytest.approx(1 / 1024)

    less = wilcoxon_signed_rank(PairedSamples(first, second), alternative="less")
    assert less.p_value == pytest.approx(1.0)

    with pytest.raises(InputError):
        wilcoxon_signed_rank(PairedSamples(first, second), alternative="sideways")


@pytest.mark.parametrize("seed", range(5))
def test_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 1.0, 12)
    y = x + rng.normal(0.3, 1.0, 12)

    ours = wilcoxon_signed_rank(PairedSamples(x, y))
    ref  = sps.wilcoxon(y, x)

    assert ours.statistic == pytest.approx(ref.statistic)
    assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-6)

    for alternative in ("greater", "less"):
        ours = wilcoxon_signed_rank(PairedSamples(x, y), alternative=alternative)
        ref  = sps.wilcoxon(y, x, alternative=alternative)
        assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-6)


def test_ties_use_average_ranks():
    d = np.array([1.0, 1.0, 2.0, -2.0, 3.0, 4.0])
    result = wilcoxon_signed_rank(PairedSamples(np.zeros(6), d))
    # ranks 1.5, 1.5, 3.5, 3.5, 5, 6
    assert result.w_minus == 3.5
    assert result.w_plus == 17.5
    assert result.statistic == 3.5
    assert 0.0 < result.p_value < 1.0


def test_normal_approximation():
    first  = np.zeros(30)
    second = np.arange(1, 31, dtype=float)
    result = wilcoxon_signed_rank(PairedSamples(first, second))
    assert not result.exact
    assert result.n == 30
    assert 0.0 < result.p_value < 1e-5


def test_zero_differences():
    # one zero difference is dropped
    first  = np.zeros(6)
    second = np.array([0.0, 1, 2, 3, 4, 5])
    assert wilcoxon_signed_rank(PairedSamples(first, second)).n == 5

    with pytest.raises(InsufficientDataError, match="all paired differences are zero"):
        wilcoxon_signed_rank(PairedSamples(np.ones(10), np.ones(10)))

    with pytest.raises(InsufficientDataError):
        wilcoxon_signed_rank(PairedSamples(np.zeros(4), np.ones(4)))


def test_linreg_slope():
    assert linreg_slope([1, 2, 3]) == pytest.approx(1.0)
    assert linreg_slope([3, 1, 2, 0]) == pytest.approx(-0.8)
    assert linreg_slope([5, 5, 5, 5]) == 0.0

    with pytest.raises(InputError):
        linreg_slope([1.0])


def test_linreg_slope_translation_and_scale():
    y = np.random.default_rng(3).normal(size=40)
    slope = linreg_slope(y)
    assert linreg_slope(y + 123.0) == pytest.approx(slope, abs=1e-9)
    assert linreg_slope(-2.5 * y) == pytest.approx(-2.5 * slope, rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_swapping_samples(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=12), rng.normal(size=12)

    forward  = wilcoxon_signed_rank(PairedSamples(a, b))
    backward = wilcoxon_signed_rank(PairedSamples(b, a))
    assert backward.statistic == forward.statistic
    assert backward.p_value == pytest.approx(forward.p_value, rel=1e-12)
    assert (backward.w_plus, backward.w_minus) == (forward.w_minus, forward.w_plus)


def _log(values):
    return EvolutionLog([GenerationRecord(g, v, v) for g, v in enumerate(values)])


def test_summarize_runs(tmp_path):
    rows = summarize_runs([_log([0.0, 0.5, 1.0]), _log([0.2, 0.5, 0.6])])
    assert [r.generation for r in rows] == [0, 1, 2]
    assert rows[0].mean == pytest.approx(0.1)
    assert rows[0].std == pytest.approx(0.1)
    assert rows[1].std == 0.0
    assert rows[2].min == 0.6 and rows[2].max == 1.0

    write_summary_csv(tmp_path / "summary.csv", rows)
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0] == ("generation,mean,std,min,max,"
                        "r_distance_mean,r_distance_std,r_position_mean,r_position_std")
    assert lines[1].endswith(",,,,")
    assert rows[0].r_distance_mean is None
    assert len(lines) == 4

    with pytest.raises(InputError):
        summarize_runs([_log([0.0, 1.0]), _log([0.0])])
    with pytest.raises(InputError):
        summarize_runs([])


def _report_log(values, r_distance, r_position):
    return EvolutionLog([GenerationRecord(g, v, v, d, p)
                         for g, (v, d, p) in enumerate(zip(values, r_distance, r_position))])


def test_summarize_reward_components(tmp_path):
    logs = [_report_log([0.5, 1.0], [1.0, 1.0], [0.0, 1.0]),
            _report_log([0.25, 0.5], [0.5, 0.5], [0.0, 0.5])]
    rows = summarize_runs(logs)

    assert rows[0].r_distance_mean == pytest.approx(0.75)
    assert rows[0].r_distance_std == pytest.approx(0.25)
    assert rows[0].r_position_mean == 0.0
    assert rows[0].r_position_std == 0.0
    assert rows[1].r_position_mean == pytest.approx(0.75)

    write_summary_csv(tmp_path / "summary.csv", rows)
    header, first, _ = (tmp_path / "summary.csv").read_text().splitlines()
    assert dict(zip(header.split(","), first.split(",")))["r_distance_mean"] == "0.75"

    # one run without components blanks the columns for all
    rows = summarize_runs(logs + [_log([0.0, 0.0])])
    assert all(r.r_distance_mean is None and r.r_position_std is None for r in rows)
    assert rows[1].mean == pytest.approx(0.5)
