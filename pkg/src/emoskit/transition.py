"""Seamless blending from the two-model combination to the surviving model.

At the shorter model's horizon the combined product must hand over to the
single-model stream. Two smoothing schemes are supported:

* t1 tapers the shorter model's influence before the horizon by imposing
  decaying upper bounds on its coefficients in the refits at horizon-2,
  horizon-1 and the horizon itself, anchored at the fit three hours earlier.
* t2 carries the combined-minus-single difference of mu and sigma at the
  horizon into the following three hours with decaying weights.

Both schemes use the weights 0.75, 0.5, 0.25.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import GaussianPredictive
from .emos import MixedEmosCoefficients
from .scoring import gaussian_crps

__all__ = [
    "DEFAULT_TRANSITION_WEIGHTS",
    "TransitionSpec",
    "SeamDiagnostics",
    "transition1_bounds",
    "transition2_blend",
    "seam_diagnostics",
]

DEFAULT_TRANSITION_WEIGHTS = (0.75, 0.5, 0.25)

SCHEMES = ("none", "t1", "t2")


@dataclass(frozen=True)
class TransitionSpec:
    horizon: int = 120
    scheme: str = "none"
    weights: tuple[float, ...] = DEFAULT_TRANSITION_WEIGHTS

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.weights:
            raise ValueError("weights must be non-empty")
        if any(not 0.0 < w < 1.0 for w in self.weights):
            raise ValueError("weights must lie in (0, 1)")
        for a, b in zip(self.weights, self.weights[1:]):
            if b >= a:
                raise ValueError("weights must be strictly decreasing")

    @property
    def anchor_lead(self) -> int:
        """Lead whose coefficients anchor the t1 bounds (horizon - 3)."""
        return self.horizon - len(self.weights)

    @property
    def taper_leads(self) -> tuple[int, ...]:
        """Leads refit with bounds under t1: horizon-2 .. horizon."""
        return tuple(self.anchor_lead + 1 + k for k in range(len(self.weights)))

    @property
    def blend_leads(self) -> tuple[int, ...]:
        """Leads blended under t2: horizon+1 .. horizon+3."""
        return tuple(self.horizon + 1 + k for k in range(len(self.weights)))


def transition1_bounds(
    coef_at_anchor: MixedEmosCoefficients, spec: TransitionSpec
) -> dict[int, tuple[float, float]]:
    """Upper bounds (b1_max, d1_max) per taper lead, from the anchor-lead fit.

    At taper lead t with weight w(t), the refit must satisfy
    b1(t) <= b1(anchor) * w(t) and d1(t) <= d1(anchor) * w(t).
    """
    if coef_at_anchor is None:
        raise ValueError(f"no coefficients available at the anchor lead ({spec.anchor_lead} h)")
    return {
        lead: (coef_at_anchor.b1 * w, coef_at_anchor.d1 * w)
        for lead, w in zip(spec.taper_leads, spec.weights)
    }


def transition2_blend(
    mixed_at_horizon: GaussianPredictive,
    single_series: dict[int, GaussianPredictive],
    spec: TransitionSpec,
    min_sigma: float = 1e-3,
) -> dict[int, GaussianPredictive]:
    """Propagate the horizon-lead difference into the next three hours.

    delta_mu = mu_mixed(horizon) - mu_single(horizon), likewise for sigma;
    at horizon+k the single-model values gain w_k * delta (sigma floored at
    ``min_sigma``). All other leads of ``single_series`` pass through
    unchanged, so callers may feed the whole continuing series.
    """
    required = (spec.horizon, *spec.blend_leads)
    missing = [lead for lead in required if lead not in single_series]
    if missing:
        raise ValueError(f"single-model series missing leads {missing}")

    base = single_series[spec.horizon]
    delta_mu = mixed_at_horizon.mu - base.mu
    delta_sigma = mixed_at_horizon.sigma - base.sigma

    weight_at = dict(zip(spec.blend_leads, spec.weights))
    out: dict[int, GaussianPredictive] = {}
    for lead in sorted(single_series):
        pred = single_series[lead]
        w = weight_at.get(lead)
        if w is None:
            out[lead] = pred
        else:
            out[lead] = GaussianPredictive(
                mu=pred.mu + w * delta_mu,
                sigma=max(pred.sigma + w * delta_sigma, min_sigma),
            )
    return out


@dataclass(frozen=True)
class SeamDiagnostics:
    """Smoothness and score diagnostics over a window of consecutive leads.

    ``mu_steps``/``sigma_steps`` hold, per lead, the mean absolute change
    against the previous lead (so the first window lead has no entry);
    ``mean_crps`` holds the mean score per lead.
    """

    leads: tuple[int, ...]
    mu_steps: dict[int, float] = field(default_factory=dict)
    sigma_steps: dict[int, float] = field(default_factory=dict)
    mean_crps: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for table in (self.mu_steps, self.sigma_steps, self.mean_crps):
            for lead, v in table.items():
                if v < 0.0:
                    raise ValueError(f"diagnostic at lead {lead} must be >= 0, got {v}")


def seam_diagnostics(
    series: dict[object, dict[int, GaussianPredictive]],
    observations: dict[object, dict[int, float]],
    leads: list[int],
) -> SeamDiagnostics:
    """Mean absolute mu/sigma step versus the previous lead plus mean CRPS.

    ``series`` maps a case (e.g. a (station, init time) pair) to its per-lead
    predictions across the seam window; every case must cover every lead of
    the hourly window, otherwise the seam statistics would silently mix
    different case sets.
    """
    leads = sorted(leads)
    for a, b in zip(leads, leads[1:]):
        if b - a != 1:
            raise ValueError(f"seam window must be hourly and contiguous, got gap {a}..{b}")
    if not series:
        raise ValueError("no cases supplied")

    cases = sorted(series, key=repr)
    for case in cases:
        missing = [lead for lead in leads if lead not in series[case]]
        if missing:
            raise ValueError(f"case {case!r} is missing leads {missing}")
        if case not in observations:
            raise ValueError(f"case {case!r} has no observations")

    mu_steps: dict[int, float] = {}
    sigma_steps: dict[int, float] = {}
    mean_crps: dict[int, float] = {}
    for i, lead in enumerate(leads):
        crps_vals = []
        for case in cases:
            y = observations[case].get(lead)
            if y is None:
                raise ValueError(f"case {case!r} has no observation at lead {lead}")
            crps_vals.append(gaussian_crps(series[case][lead], y))
        mean_crps[lead] = float(np.mean(crps_vals))
        if i > 0:
            prev = leads[i - 1]
            mu_steps[lead] = float(
                np.mean([abs(series[c][lead].mu - series[c][prev].mu) for c in cases])
            )
            sigma_steps[lead] = float(
                np.mean([abs(series[c][lead].sigma - series[c][prev].sigma) for c in cases])
            )
    return SeamDiagnostics(leads=tuple(leads), mu_steps=mu_steps, sigma_steps=sigma_steps, mean_crps=mean_crps)
