import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy import stats as sps

from .exceptions import InputError, InsufficientDataError
from .helpers import PathLike, write_csv

# exact signed-rank distribution up to this many non-zero differences
EXACT_MAX_N = 25

MIN_PAIRS = 5

ALTERNATIVES = ("two-sided", "greater", "less")

SUMMARY_HEADER = ("generation", "mean", "std", "min", "max",
                  "r_distance_mean", "r_distance_std", "r_position_mean", "r_position_std")


@dataclass(frozen=True)
class PairedSamples:
    """
    Two measurements per seed, e.g. generation-0 and final best fitness.
    """

    first: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        first  = np.asarray(self.first, dtype=float)
        second = np.asarray(self.second, dtype=float)
        if first.ndim != 1 or first.shape != second.shape:
            raise InputError(f"paired samples must be equal-length vectors, got {first.shape} and {second.shape}")
        if not (np.all(np.isfinite(first)) and np.all(np.isfinite(second))):
            raise InputError("paired samples must be finite")
        object.__setattr__(self, "first", first)
        object.__setattr__(self, "second", second)

    @property
    def differences(self) -> np.ndarray:
        return self.second - self.first


@dataclass(frozen=True)
class WilcoxonResult:
    """
    Outcome of a Wilcoxon signed-rank test.

    Attributes:
        statistic: W = min(W+, W-).
        p_value: p-value for the requested alternative, in (0, 1].
        n: Number of non-zero differences used.
        w_plus, w_minus: Rank sums of positive / negative differences
            (differences are second - first).
        alternative: "two-sided", "greater" (second > first) or "less".
        exact: Whether the exact null distribution was used.
    """

    statistic: float
    p_value: float
    n: int
    w_plus: float
    w_minus: float
    alternative: str = "two-sided"
    exact: bool = True


@dataclass(frozen=True)
class SummaryRow:
    generation: int
    mean: float
    std: float
    min: float
    max: float
    # None unless every run logged the component rewards
    r_distance_mean: Optional[float] = None
    r_distance_std: Optional[float] = None
    r_position_mean: Optional[float] = None
    r_position_std: Optional[float] = None


def _signed_rank_null(ranks: np.ndarray) -> np.ndarray:
    """
    Null distribution of W+ for the given ranks: every sign pattern equally
    likely. Ranks are doubled so average ranks of ties stay integral.

    Returns:
        np.ndarray: Probability of each doubled rank sum 0..2*sum(ranks).
    """

    doubled = np.rint(2 * ranks).astype(int)
    counts  = np.zeros(int(doubled.sum()) + 1)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:counts.size - r]
        counts = counts + shifted
    return counts / 2.0 ** ranks.size


def wilcoxon_signed_rank(samples: PairedSamples, alternative: str = "two-sided") -> WilcoxonResult:
    """
    Wilcoxon signed-rank test on second - first.

    Zero differences are dropped and tied absolute differences share their
    average rank. Up to EXACT_MAX_N pairs the exact null distribution is
    enumerated; above it a normal approximation with tie and continuity
    corrections is used.

    Args:
        samples (PairedSamples): The paired measurements.
        alternative (str): "two-sided" (default), "greater" or "less".

    Returns:
        WilcoxonResult: W and the p-value.

    Raises:
        InsufficientDataError: fewer than 5 non-zero differences.
    """

    if alternative not in ALTERNATIVES:
        raise InputError(f"alternative must be one of {ALTERNATIVES}, got {alternative!r}")

    d = samples.differences
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise InsufficientDataError("all paired differences are zero")
    if n < MIN_PAIRS:
        raise InsufficientDataError(f"need at least {MIN_PAIRS} non-zero differences, got {n}")

    ranks   = sps.rankdata(np.abs(d))
    w_plus  = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w       = min(w_plus, w_minus)

    if n <= EXACT_MAX_N:
        null = _signed_rank_null(ranks)
        cdf  = np.cumsum(null)
        k_plus = int(round(2 * w_plus))

        if alternative == "two-sided":
            p = 2.0 * cdf[int(round(2 * w))]
        elif alternative == "greater":
            # P(W+ >= observed)
            p = 1.0 - (cdf[k_plus - 1] if k_plus > 0 else 0.0)
        else:
            p = cdf[k_plus]
        exact = True
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_counts ** 3 - tie_counts).sum() / 48.0
        sd  = math.sqrt(var)

        if alternative == "two-sided":
            z = (abs(w_plus - mean) - 0.5) / sd
            p = 2.0 * sps.norm.sf(max(z, 0.0))
        elif alternative == "greater":
            p = sps.norm.sf((w_plus - mean - 0.5) / sd)
        else:
            p = sps.norm.cdf((w_plus - mean + 0.5) / sd)
        exact = False

    p = float(min(1.0, max(p, np.finfo(float).tiny)))
    return WilcoxonResult(statistic=w, p_value=p, n=int(n), w_plus=w_plus, w_minus=w_minus,
                          alternative=alternative, exact=exact)


def linreg_slope(series) -> float:
    """
    Ordinary least-squares slope of series against 0..len-1.
    """

    y = np.asarray(series, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise InputError(f"slope needs at least 2 values, got {y.size}")

    x = np.arange(y.size, dtype=float)
    x -= x.mean()
    return float(np.dot(x, y - y.mean()) / np.dot(x, x))


def summarize_runs(logs: Sequence) -> List[SummaryRow]:
    """
    Per-generation mean, population standard deviation, min and max of
    best_fitness across runs, plus mean and standard deviation of the best
    individual's distance and position rewards when every run logged them.

    Args:
        logs: EvolutionLogs of equal length.

    Returns:
        list: One SummaryRow per generation.
    """

    if len(logs) == 0:
        raise InputError("no logs to summarize")

    lengths = {len(log.records) for log in logs}
    if len(lengths) != 1:
        raise InputError(f"logs differ in length: {sorted(lengths)}")

    curves     = np.array([[r.best_fitness for r in log.records] for log in logs])
    r_distance = _component_curves(logs, "best_r_distance")
    r_position = _component_curves(logs, "best_r_position")

    def moments(component, g):
        if component is None:
            return None, None
        return float(component[:, g].mean()), float(component[:, g].std())

    rows = []
    for g in range(curves.shape[1]):
        rd_mean, rd_std = moments(r_distance, g)
        rp_mean, rp_std = moments(r_position, g)
        rows.append(SummaryRow(
            generation=g,
            mean=float(curves[:, g].mean()),
            std=float(curves[:, g].std()),
            min=float(curves[:, g].min()),
            max=float(curves[:, g].max()),
            r_distance_mean=rd_mean,
            r_distance_std=rd_std,
            r_position_mean=rp_mean,
            r_position_std=rp_std,
        ))
    return rows


def _component_curves(logs: Sequence, attr: str) -> Optional[np.ndarray]:
    values = [[getattr(r, attr) for r in log.records] for log in logs]
    if any(v is None for curve in values for v in curve):
        return None
    return np.array(values, dtype=float)


def write_summary_csv(path: PathLike, rows: Sequence[SummaryRow]) -> None:
    """
    Export a summary, one line per generation; missing reward columns are
    left empty.
    """

    write_csv(path, SUMMARY_HEADER, (
        (r.generation, r.mean, r.std, r.min, r.max,
         r.r_distance_mean, r.r_distance_std, r.r_position_mean, r.r_position_std)
        for r in rows
    ))
