"""Proper scores, skill scores, reliability diagnostics and significance tests.

CRPS conventions follow Gneiting and Raftery (2007): the score is the
integrated squared difference between the forecast CDF and the step function
of the observation; lower is better and 0 is a perfect forecast. For a
Gaussian forecast the closed form

    crps(N(mu, sigma), y) = sigma * (z*(2*Phi(z)-1) + 2*phi(z) - 1/sqrt(pi)),
    z = (y - mu) / sigma

is used (Gneiting et al. 2005). For a raw ensemble the classical kernel form
of the empirical-CDF integral is used:

    crps = mean_i |x_i - y| - (1 / (2 m^2)) * sum_ij |x_i - x_j|
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum

import numpy as np
from scipy.special import ndtr

from .domain import GaussianPredictive

__all__ = [
    "ScoreSeries",
    "PitHistogram",
    "SignificanceResult",
    "Conclusion",
    "StratumStat",
    "VerificationReport",
    "gaussian_crps",
    "gaussian_crps_gradient",
    "ensemble_crps",
    "crpss",
    "pit_value",
    "pit_histogram",
    "diebold_mariano",
    "stratified_report",
    "season_of",
    "is_day",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)

# Day/night stratification bounds in UTC: day = 07-18, night = 19-06.
DAY_HOURS = frozenset(range(7, 19))

_SEASON_BY_MONTH = {
    12: "DJF", 1: "DJF", 2: "DJF",
    3: "MAM", 4: "MAM", 5: "MAM",
    6: "JJA", 7: "JJA", 8: "JJA",
    9: "SON", 10: "SON", 11: "SON",
}


def _std_normal_pdf(z):
    return np.exp(-0.5 * np.square(z)) / _SQRT_2PI


def crps_normal_unit(z):
    """CRPS of a standard normal forecast at standardized error z (vectorized)."""
    cdf = ndtr(z)
    return z * (2.0 * cdf - 1.0) + 2.0 * _std_normal_pdf(z) - _INV_SQRT_PI


def gaussian_crps(pred: GaussianPredictive, y: float) -> float:
    """CRPS of a Gaussian predictive distribution against observation y."""
    if pred.sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {pred.sigma}")
    z = (y - pred.mu) / pred.sigma
    return float(pred.sigma * crps_normal_unit(z))


def gaussian_crps_gradient(pred: GaussianPredictive, y: float) -> tuple[float, float]:
    """Analytic partial derivatives (d/dmu, d/dsigma) of ``gaussian_crps``.

    d/dmu   = 1 - 2*Phi(z)
    d/dsigma = 2*phi(z) - 1/sqrt(pi)
    """
    if pred.sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {pred.sigma}")
    z = (y - pred.mu) / pred.sigma
    d_mu = 1.0 - 2.0 * float(ndtr(z))
    d_sigma = 2.0 * float(_std_normal_pdf(z)) - _INV_SQRT_PI
    return d_mu, d_sigma


def ensemble_crps(members, y: float) -> float:
    """CRPS of a raw ensemble, empirical-CDF (kernel) form, biased 1/(2m^2) term.

    Computes mean_i |x_i - y| - (1/(2 m^2)) sum_ij |x_i - x_j|; the pairwise
    sum uses the exact sorted-order identity sum_ij |x_i - x_j| =
    2 * sum_i (2i - m + 1) * x_(i), so the cost is O(m log m).
    """
    x = np.asarray(members, dtype=float)
    if x.size == 0:
        raise ValueError("cannot score an empty ensemble")
    m = x.size
    term_obs = np.abs(x - y).mean()
    xs = np.sort(x)
    weights = 2.0 * np.arange(m) - m + 1.0
    term_pairs = float(np.dot(weights, xs)) / (m * m)
    return float(term_obs - term_pairs)


def crpss(crps: float, crps_ref: float) -> float:
    """Skill score 1 - crps/crps_ref; positive means better than the reference."""
    if crps_ref <= 0.0:
        raise ValueError(f"reference CRPS must be > 0, got {crps_ref}")
    return 1.0 - crps / crps_ref


def pit_value(pred: GaussianPredictive, y: float) -> float:
    """Probability integral transform: forecast CDF evaluated at the observation."""
    if pred.sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {pred.sigma}")
    return float(ndtr((y - pred.mu) / pred.sigma))


@dataclass(frozen=True)
class PitHistogram:
    """Counts of PIT values over equal-width bins on [0, 1]."""

    bin_count: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != self.bin_count:
            raise ValueError("counts length must equal bin_count")

    @property
    def edges(self) -> tuple[float, ...]:
        return tuple(i / self.bin_count for i in range(self.bin_count + 1))


def pit_histogram(pits, bin_count: int) -> PitHistogram:
    """Histogram PIT values into ``bin_count`` equal-width bins on [0, 1].

    Bins are half-open [lo, hi) except the last, which also receives the
    boundary value 1.0; counts always sum to the number of inputs.
    """
    if bin_count < 2:
        raise ValueError(f"bin_count must be >= 2, got {bin_count}")
    p = np.asarray(pits, dtype=float)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("all PIT values must lie in [0, 1]")
    counts, _ = np.histogram(p, bins=np.linspace(0.0, 1.0, bin_count + 1))
    return PitHistogram(bin_count=bin_count, counts=tuple(int(c) for c in counts))


class Conclusion(str, Enum):
    FIRST_BETTER = "first_better"
    SECOND_BETTER = "second_better"
    NOT_SIGNIFICANT = "not_significant"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class SignificanceResult:
    statistic: float
    p_value: float
    conclusion: Conclusion

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p_value must lie in [0, 1]")


@dataclass(frozen=True)
class ScoreSeries:
    """Per-case CRPS values with the metadata needed for stratification.

    ``station_ids`` and ``lead_times`` are optional parallel arrays; they are
    required only when stratifying by station or lead time.
    """

    valid_times: tuple[datetime, ...]
    crps_values: tuple[float, ...]
    station_ids: tuple[str, ...] | None = None
    lead_times: tuple[int, ...] | None = None

    def __post_init__(self):
        n = len(self.valid_times)
        if len(self.crps_values) != n:
            raise ValueError("valid_times and crps_values must have equal length")
        if any(v < 0.0 for v in self.crps_values):
            raise ValueError("CRPS values must be >= 0")
        for name, extra in (("station_ids", self.station_ids), ("lead_times", self.lead_times)):
            if extra is not None and len(extra) != n:
                raise ValueError(f"{name} must have the same length as crps_values")

    def __len__(self) -> int:
        return len(self.crps_values)


def diebold_mariano(scores_a: ScoreSeries, scores_b: ScoreSeries, alpha: float = 0.05) -> SignificanceResult:
    """Diebold-Mariano test on the score differential d_t = a_t - b_t.

    statistic = mean(d) / sqrt(var(d) / n) with the n-1 sample variance and a
    two-sided p-value from the standard normal. Daily scores at a fixed lead
    time are treated as independent (lag-0 variance). Zero-variance
    differentials yield a flagged ``degenerate`` conclusion instead of an
    infinite statistic: p = 1 when the series are identical, p = 0 when the
    constant differential is nonzero.
    """
    if len(scores_a) != len(scores_b):
        raise ValueError("score series must have equal length")
    if scores_a.valid_times != scores_b.valid_times:
        raise ValueError("score series must cover identical valid times")
    n = len(scores_a)
    if n < 2:
        raise ValueError(f"need at least 2 paired scores, got {n}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")

    d = np.asarray(scores_a.crps_values, dtype=float) - np.asarray(scores_b.crps_values, dtype=float)
    mean_d = float(d.mean())
    var_d = float(d.var(ddof=1))
    if var_d == 0.0:
        p = 1.0 if mean_d == 0.0 else 0.0
        return SignificanceResult(statistic=0.0, p_value=p, conclusion=Conclusion.DEGENERATE)

    stat = mean_d / math.sqrt(var_d / n)
    p = 2.0 * float(ndtr(-abs(stat)))
    if p >= alpha:
        conclusion = Conclusion.NOT_SIGNIFICANT
    elif mean_d < 0.0:
        conclusion = Conclusion.FIRST_BETTER  # a has the lower scores
    else:
        conclusion = Conclusion.SECOND_BETTER
    return SignificanceResult(statistic=stat, p_value=min(p, 1.0), conclusion=conclusion)


def season_of(t: datetime) -> str:
    return _SEASON_BY_MONTH[t.month]


def is_day(t: datetime) -> bool:
    """Day stratum: valid hour 07-18 UTC; night is 19-06."""
    return t.hour in DAY_HOURS


@dataclass(frozen=True)
class StratumStat:
    mean_crps: float
    count: int
    crpss: float | None = None


@dataclass(frozen=True)
class VerificationReport:
    """Stratified mean CRPS and skill relative to a reference strategy.

    ``by_stratum`` maps stratification name -> strategy -> stratum label ->
    statistics. ``station_skill_fraction`` is the fraction of stations with
    positive CRPSS against the reference (only present when station metadata
    was available).
    """

    reference: str
    overall: dict[str, StratumStat]
    by_stratum: dict[str, dict[str, dict[str, StratumStat]]]
    station_skill_fraction: dict[str, float] = field(default_factory=dict)


_ALL_STRATA = ("season", "daynight", "lead", "station")


def _stratum_labels(series: ScoreSeries, stratification: str) -> list[str]:
    if stratification == "season":
        return [season_of(t) for t in series.valid_times]
    if stratification == "daynight":
        return ["day" if is_day(t) else "night" for t in series.valid_times]
    if stratification == "lead":
        if series.lead_times is None:
            raise ValueError("lead stratification requires lead_times on every series")
        return [str(lt) for lt in series.lead_times]
    if stratification == "station":
        if series.station_ids is None:
            raise ValueError("station stratification requires station_ids on every series")
        return list(series.station_ids)
    raise ValueError(f"unknown stratification {stratification!r}")


def stratified_report(
    scores: dict[str, ScoreSeries],
    reference: str,
    strata: tuple[str, ...] = _ALL_STRATA,
) -> VerificationReport:
    """Aggregate aligned per-case scores into stratified means and skill scores.

    All series must cover identical cases (same valid times, and same station
    and lead metadata when present). CRPSS per stratum is computed from the
    stratum-mean CRPS values, 1 - mean/mean_ref.
    """
    if reference not in scores:
        raise ValueError(f"unknown reference strategy {reference!r}")
    ref_series = scores[reference]
    for name, series in scores.items():
        if series.valid_times != ref_series.valid_times:
            raise ValueError(f"series {name!r} is not aligned with the reference")
        if (series.station_ids is None) != (ref_series.station_ids is None) or (
            series.station_ids is not None and series.station_ids != ref_series.station_ids
        ):
            raise ValueError(f"series {name!r} has mismatched station metadata")
        if (series.lead_times is None) != (ref_series.lead_times is None) or (
            series.lead_times is not None and series.lead_times != ref_series.lead_times
        ):
            raise ValueError(f"series {name!r} has mismatched lead metadata")

    def mean_of(values) -> float:
        return float(np.mean(values)) if len(values) else math.nan

    ref_overall = mean_of(ref_series.crps_values)
    overall: dict[str, StratumStat] = {}
    for name in sorted(scores):
        m = mean_of(scores[name].crps_values)
        skill = crpss(m, ref_overall) if ref_overall > 0.0 else None
        overall[name] = StratumStat(mean_crps=m, count=len(scores[name]), crpss=skill)

    by_stratum: dict[str, dict[str, dict[str, StratumStat]]] = {}
    for stratification in strata:
        labels = _stratum_labels(ref_series, stratification)
        stratum_keys = sorted(set(labels), key=lambda s: (len(s), s) if stratification == "lead" else s)
        ref_values = np.asarray(ref_series.crps_values, dtype=float)
        label_arr = np.asarray(labels)
        ref_means = {k: mean_of(ref_values[label_arr == k]) for k in stratum_keys}

        table: dict[str, dict[str, StratumStat]] = {}
        for name in sorted(scores):
            values = np.asarray(scores[name].crps_values, dtype=float)
            per_stratum: dict[str, StratumStat] = {}
            for k in stratum_keys:
                mask = label_arr == k
                m = mean_of(values[mask])
                skill = crpss(m, ref_means[k]) if ref_means[k] > 0.0 else None
                per_stratum[k] = StratumStat(mean_crps=m, count=int(mask.sum()), crpss=skill)
            table[name] = per_stratum
        by_stratum[stratification] = table

    station_skill_fraction: dict[str, float] = {}
    if "station" in by_stratum:
        station_table = by_stratum["station"]
        for name, per_station in sorted(station_table.items()):
            skills = [st.crpss for st in per_station.values() if st.crpss is not None]
            if skills:
                station_skill_fraction[name] = sum(1 for s in skills if s > 0.0) / len(skills)

    return VerificationReport(
        reference=reference,
        overall=overall,
        by_stratum=by_stratum,
        station_skill_fraction=station_skill_fraction,
    )
