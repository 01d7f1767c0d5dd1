"""Nonhomogeneous Gaussian regression (EMOS) fit by CRPS minimization.

Single-model form:

    mu    = a + b * xbar
    sigma = sqrt(c^2 + d^2 * s^2)

Two-predictor ("mixed") form, combining two models' ensemble statistics:

    mu    = a + b1 * xbar1 + b2 * xbar2
    sigma = sqrt(c^2 + d1^2 * s1^2 + d2^2 * s2^2)

Coefficients are estimated by minimizing the mean Gaussian CRPS over a
training set. The b and d coefficients are constrained non-negative via an
internal squared parametrization (b = gamma^2, d = delta^2; c enters the
sigma formula squared already, so it needs no constraint). Optimization is a
quasi-Newton local minimizer (L-BFGS-B) fed the analytic CRPS gradient
chained through the two equations above; optional upper bounds on b1 and d1
become box constraints on the internal parameters, which is projected
descent. If the gradient path fails to improve, a derivative-free simplex
restart is attempted.

The mixed fit is multi-started from a symmetric initialization and from
perturbed embeddings of each single-model fit; the exact embeddings are also
evaluated as candidates, so the mixed training objective can never end up
above a single-model optimum (nesting).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .domain import EnsembleStats, GaussianPredictive, TrainingSample
from .scoring import _INV_SQRT_PI, _std_normal_pdf

__all__ = [
    "EmosCoefficients",
    "MixedEmosCoefficients",
    "FitOptions",
    "ModelWeights",
    "FitResult",
    "NonConvergenceError",
    "predict_single",
    "predict_mixed",
    "fit_single",
    "fit_mixed",
    "model_weights",
    "identity_single",
    "identity_mixed",
]


@dataclass(frozen=True)
class EmosCoefficients:
    """Single-model regression coefficients (a, b, c, d)."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"coefficient {name} must be finite")


@dataclass(frozen=True)
class MixedEmosCoefficients:
    """Two-predictor coefficients; b1, b2, d1, d2 are constrained non-negative."""

    a: float
    b1: float
    b2: float
    c: float
    d1: float
    d2: float

    def __post_init__(self):
        for name in ("a", "b1", "b2", "c", "d1", "d2"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"coefficient {name} must be finite")
        for name in ("b1", "b2", "d1", "d2"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"coefficient {name} must be >= 0")


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    ``bounds``, when given, is (b1_max, d1_max): upper bounds applied to the
    first predictor's coefficients in the mixed fit (used by the pre-horizon
    transition scheme). ``min_sigma`` floors every predicted sigma so CRPS
    and its gradient stay finite for degenerate ensembles.
    """

    max_iterations: int = 1000
    objective_tolerance: float = 1e-8
    bounds: tuple[float, float] | None = None
    min_sigma: float = 1e-3
    record_trace: bool = False

    def __post_init__(self):
        if self.objective_tolerance <= 0.0:
            raise ValueError("objective_tolerance must be > 0")
        if self.min_sigma <= 0.0:
            raise ValueError("min_sigma must be > 0")
        if self.bounds is not None:
            b1_max, d1_max = self.bounds
            if b1_max < 0.0 or d1_max < 0.0:
                raise ValueError("upper bounds must be >= 0")


@dataclass(frozen=True)
class ModelWeights:
    """Relative weight of predictor 1: b1/(b1+b2) for the mean, d1/(d1+d2)
    for the spread. Degenerate zero sums report 0.5 with the defined flag
    cleared."""

    weight_mean: float
    weight_std: float
    defined_mean: bool
    defined_std: bool


@dataclass(frozen=True)
class FitResult:
    """Outcome of one coefficient fit.

    ``trace`` holds the objective value at successive accepted iterates of
    the winning optimizer run (populated when FitOptions.record_trace).
    """

    coefficients: EmosCoefficients | MixedEmosCoefficients
    objective: float
    converged: bool
    n_iterations: int
    n_samples: int
    trace: tuple[float, ...] = ()


class NonConvergenceError(RuntimeError):
    """Raised when the optimizer exhausts max_iterations; carries best-so-far."""

    def __init__(self, message: str, result: FitResult):
        super().__init__(message)
        self.result = result


def identity_single() -> EmosCoefficients:
    """Pass-through coefficients: mu = ensemble mean, sigma = ensemble std."""
    return EmosCoefficients(a=0.0, b=1.0, c=0.0, d=1.0)


def identity_mixed() -> MixedEmosCoefficients:
    """Equal-weight pass-through for two models; d1 = d2 = sqrt(1/2) keeps
    sigma^2 the average of the two ensemble variances."""
    half_sqrt = math.sqrt(0.5)
    return MixedEmosCoefficients(a=0.0, b1=0.5, b2=0.5, c=0.0, d1=half_sqrt, d2=half_sqrt)


def predict_single(coef: EmosCoefficients, stats: EnsembleStats, min_sigma: float = 1e-3) -> GaussianPredictive:
    """Apply single-model coefficients to ensemble statistics."""
    mu = coef.a + coef.b * stats.mean
    sigma = math.sqrt(coef.c**2 + coef.d**2 * stats.std**2)
    return GaussianPredictive(mu=mu, sigma=max(sigma, min_sigma))


def predict_mixed(
    coef: MixedEmosCoefficients,
    stats1: EnsembleStats,
    stats2: EnsembleStats,
    min_sigma: float = 1e-3,
) -> GaussianPredictive:
    """Apply two-predictor coefficients to both models' ensemble statistics."""
    mu = coef.a + coef.b1 * stats1.mean + coef.b2 * stats2.mean
    sigma = math.sqrt(coef.c**2 + coef.d1**2 * stats1.std**2 + coef.d2**2 * stats2.std**2)
    return GaussianPredictive(mu=mu, sigma=max(sigma, min_sigma))


def model_weights(coef: MixedEmosCoefficients) -> ModelWeights:
    """Fractional weight of predictor 1 for the mean and the spread."""
    sum_b = coef.b1 + coef.b2
    sum_d = coef.d1 + coef.d2
    defined_mean = sum_b > 0.0
    defined_std = sum_d > 0.0
    return ModelWeights(
        weight_mean=coef.b1 / sum_b if defined_mean else 0.5,
        weight_std=coef.d1 / sum_d if defined_std else 0.5,
        defined_mean=defined_mean,
        defined_std=defined_std,
    )


# ---------------------------------------------------------------------------
# Internal objective machinery.
#
# Parameter vectors:
#   single: p = (a, gamma, c, delta),          b = gamma^2, d = delta^2
#   mixed:  p = (a, g1, g2, c, t1, t2),        bi = gi^2,   di = ti^2
# ---------------------------------------------------------------------------


class _SingleProblem:
    n_params = 4

    def __init__(self, xbar, std, y, min_sigma):
        self.xbar = np.ascontiguousarray(xbar, dtype=float)
        self.var = np.ascontiguousarray(std, dtype=float) ** 2
        self.y = np.ascontiguousarray(y, dtype=float)
        self.min_sigma = min_sigma
        self.n = self.xbar.size

    def params_from(self, coef: EmosCoefficients) -> np.ndarray:
        return np.array([coef.a, math.sqrt(max(coef.b, 0.0)), coef.c, math.sqrt(max(coef.d, 0.0))])

    def coef_from(self, p: np.ndarray) -> EmosCoefficients:
        return EmosCoefficients(a=float(p[0]), b=float(p[1] ** 2), c=abs(float(p[2])), d=float(p[3] ** 2))

    def box(self, bounds):
        return None  # single fits take no upper bounds

    def value_and_grad(self, p):
        a, g, c, t = p
        err = self.y - (a + (g * g) * self.xbar)
        sig_raw = np.sqrt(c * c + t**4 * self.var)
        floored = sig_raw < self.min_sigma
        sig = np.maximum(sig_raw, self.min_sigma) if floored.any() else sig_raw

        z = err / sig
        two_cdf_m1 = 2.0 * ndtr(z) - 1.0
        pdf = _std_normal_pdf(z)
        n = self.n
        # sig * z == err, so crps_i = err*(2F-1) + sig*(2*pdf - 1/sqrt(pi))
        dc_dsig = 2.0 * pdf - _INV_SQRT_PI
        f = (np.dot(err, two_cdf_m1) + np.dot(sig, dc_dsig)) / n

        if floored.any():
            dc_dsig = np.where(floored, 0.0, dc_dsig)  # floor freezes sigma
        w_sig = dc_dsig / np.maximum(sig_raw, 1e-300)
        g_a = -two_cdf_m1.sum() / n
        g_g = -2.0 * g * np.dot(two_cdf_m1, self.xbar) / n
        g_c = c * w_sig.sum() / n
        g_t = 2.0 * t**3 * np.dot(w_sig, self.var) / n
        return f, np.array([g_a, g_g, g_c, g_t])


class _MixedProblem:
    n_params = 6

    def __init__(self, xbar1, std1, xbar2, std2, y, min_sigma):
        self.xbar1 = np.ascontiguousarray(xbar1, dtype=float)
        self.xbar2 = np.ascontiguousarray(xbar2, dtype=float)
        self.var1 = np.ascontiguousarray(std1, dtype=float) ** 2
        self.var2 = np.ascontiguousarray(std2, dtype=float) ** 2
        self.y = np.ascontiguousarray(y, dtype=float)
        self.min_sigma = min_sigma
        self.n = self.y.size

    def params_from(self, coef: MixedEmosCoefficients) -> np.ndarray:
        return np.array(
            [
                coef.a,
                math.sqrt(coef.b1),
                math.sqrt(coef.b2),
                coef.c,
                math.sqrt(coef.d1),
                math.sqrt(coef.d2),
            ]
        )

    def coef_from(self, p: np.ndarray) -> MixedEmosCoefficients:
        return MixedEmosCoefficients(
            a=float(p[0]),
            b1=float(p[1] ** 2),
            b2=float(p[2] ** 2),
            c=abs(float(p[3])),
            d1=float(p[4] ** 2),
            d2=float(p[5] ** 2),
        )

    def box(self, bounds):
        if bounds is None:
            return None
        b1_max, d1_max = bounds
        g1 = math.sqrt(b1_max)
        t1 = math.sqrt(d1_max)
        return [(None, None), (-g1, g1), (None, None), (None, None), (-t1, t1), (None, None)]

    def value_and_grad(self, p):
        a, g1, g2, c, t1, t2 = p
        err = self.y - (a + (g1 * g1) * self.xbar1 + (g2 * g2) * self.xbar2)
        sig_raw = np.sqrt(c * c + t1**4 * self.var1 + t2**4 * self.var2)
        floored = sig_raw < self.min_sigma
        sig = np.maximum(sig_raw, self.min_sigma) if floored.any() else sig_raw

        z = err / sig
        two_cdf_m1 = 2.0 * ndtr(z) - 1.0
        pdf = _std_normal_pdf(z)
        n = self.n
        dc_dsig = 2.0 * pdf - _INV_SQRT_PI
        f = (np.dot(err, two_cdf_m1) + np.dot(sig, dc_dsig)) / n

        if floored.any():
            dc_dsig = np.where(floored, 0.0, dc_dsig)
        w_sig = dc_dsig / np.maximum(sig_raw, 1e-300)
        g_a = -two_cdf_m1.sum() / n
        g_g1 = -2.0 * g1 * np.dot(two_cdf_m1, self.xbar1) / n
        g_g2 = -2.0 * g2 * np.dot(two_cdf_m1, self.xbar2) / n
        g_c = c * w_sig.sum() / n
        g_t1 = 2.0 * t1**3 * np.dot(w_sig, self.var1) / n
        g_t2 = 2.0 * t2**3 * np.dot(w_sig, self.var2) / n
        return f, np.array([g_a, g_g1, g_g2, g_c, g_t1, g_t2])


def _clip_to_box(p, box):
    if box is None:
        return p
    q = p.copy()
    for i, (lo, hi) in enumerate(box):
        if lo is not None:
            q[i] = max(q[i], lo)
        if hi is not None:
            q[i] = min(q[i], hi)
    return q


def _run_lbfgsb(problem, p0, box, options: FitOptions):
    trace: list[float] = []
    if options.record_trace:
        trace.append(problem.value_and_grad(p0)[0])

        def callback(xk):
            trace.append(problem.value_and_grad(xk)[0])

    else:
        callback = None

    res = minimize(
        problem.value_and_grad,
        p0,
        jac=True,
        method="L-BFGS-B",
        bounds=box,
        callback=callback,
        options={
            "maxiter": options.max_iterations,
            "ftol": options.objective_tolerance,
            "gtol": 1e-12,
            "maxls": 50,
        },
    )
    return res, trace


def _optimize(problem, starts, options: FitOptions, extra_candidates=()):
    """Minimize from several starts; also consider zero-cost candidate points.

    Returns (params, objective, converged, n_iterations, trace).
    """
    box = problem.box(options.bounds)
    best = None
    any_converged = False
    for p0 in starts:
        p0 = _clip_to_box(np.asarray(p0, dtype=float), box)
        res, trace = _run_lbfgsb(problem, p0, box, options)
        f_run, p_run = float(res.fun), np.asarray(res.x)
        n_iter = int(res.nit)
        if res.status == 0:
            converged = True
        elif res.status == 1:  # max_iterations exhausted
            converged = False
        else:
            # Gradient path stalled (line-search failure): simplex restart.
            nm = minimize(
                lambda q: problem.value_and_grad(_clip_to_box(q, box))[0],
                p_run,
                method="Nelder-Mead",
                options={
                    "maxiter": options.max_iterations * problem.n_params,
                    "fatol": options.objective_tolerance,
                    "xatol": 1e-8,
                },
            )
            if float(nm.fun) < f_run:
                p_run = _clip_to_box(np.asarray(nm.x), box)
                f_run = float(nm.fun)
                if options.record_trace:
                    trace.append(f_run)
            converged = bool(nm.success)
            n_iter += int(nm.nit)
        any_converged = any_converged or converged
        if best is None or f_run < best[0]:
            best = (f_run, p_run, n_iter, trace)

    # Zero-cost candidate points may improve the answer but say nothing
    # about convergence.
    for p_fixed in extra_candidates:
        p_fixed = _clip_to_box(np.asarray(p_fixed, dtype=float), box)
        f_fixed = problem.value_and_grad(p_fixed)[0]
        if f_fixed < best[0]:
            best = (f_fixed, p_fixed, 0, [f_fixed] if options.record_trace else [])

    f_best, p_best, n_iter, trace = best
    return p_best, f_best, any_converged, n_iter, tuple(trace)


def _extract_single_arrays(samples: list[TrainingSample], model_id: str):
    try:
        xbar = np.array([s.stats_per_model[model_id].mean for s in samples])
        std = np.array([s.stats_per_model[model_id].std for s in samples])
    except KeyError:
        raise ValueError(f"model {model_id!r} missing from at least one training sample") from None
    y = np.array([s.observation for s in samples])
    return xbar, std, y


def _wake_dormant(p: np.ndarray, indices, eps: float = 0.1) -> np.ndarray:
    """Nudge (near-)zero squared-parametrization entries off their stationary
    point so the optimizer can move them again."""
    q = p.copy()
    for i in indices:
        if abs(q[i]) < 1e-8:
            q[i] = eps
    return q


def fit_single(
    samples: list[TrainingSample],
    model_id: str,
    options: FitOptions = FitOptions(),
    start: EmosCoefficients | None = None,
) -> FitResult:
    """Fit single-model coefficients by minimizing mean Gaussian CRPS.

    ``start`` warm-starts the optimizer (e.g. from the previous issue date's
    coefficients). Whatever the starting point, the achieved objective is
    never above the objective at the default initialization or at the
    identity (pass-through) coefficients: both are evaluated as candidates.

    Raises
    ------
    NonConvergenceError
        If max_iterations is exhausted before the relative objective change
        drops below the tolerance; the best-so-far fit rides on the error.
    """
    if len(samples) == 0:
        raise ValueError("cannot fit on an empty training set")
    xbar, std, y = _extract_single_arrays(samples, model_id)
    problem = _SingleProblem(xbar, std, y, options.min_sigma)

    default_start = np.array([0.0, 1.0, 1.0, 1.0])  # a=0, b=1, c=1, d=1
    identity_p = problem.params_from(identity_single())
    if start is not None:
        p0 = _wake_dormant(problem.params_from(start), (1, 2, 3))
    else:
        # better of the default and near-identity starts (c nudged off zero)
        near_identity = np.array([0.0, 1.0, 0.1, 1.0])
        f_default = problem.value_and_grad(default_start)[0]
        f_near = problem.value_and_grad(near_identity)[0]
        p0 = near_identity if f_near < f_default else default_start

    p, f, converged, n_iter, trace = _optimize(
        problem, [p0], options, extra_candidates=[identity_p, default_start]
    )
    result = FitResult(
        coefficients=problem.coef_from(p),
        objective=f,
        converged=converged,
        n_iterations=n_iter,
        n_samples=len(samples),
        trace=trace,
    )
    if not converged:
        raise NonConvergenceError(
            f"single-model fit for {model_id!r} did not converge in {options.max_iterations} iterations",
            result,
        )
    return result


def fit_mixed(
    samples: list[TrainingSample],
    model_ids: tuple[str, str],
    options: FitOptions = FitOptions(),
    single_fits: tuple[FitResult, FitResult] | None = None,
    start: MixedEmosCoefficients | None = None,
) -> FitResult:
    """Fit two-predictor coefficients subject to b, d >= 0 and optional
    upper bounds on b1 and d1.

    ``single_fits`` may carry precomputed single-model fits for the two
    models (in model_ids order) to seed the multi-start; otherwise they are
    computed internally. Embedding a single-model optimum into the mixed
    space gives the same objective value, so the returned objective is never
    above either single-model optimum (up to the bound clamp, when bounds
    exclude that embedding). ``start`` warm-starts the optimizer and skips
    the symmetric multi-start run.
    """
    if len(samples) == 0:
        raise ValueError("cannot fit on an empty training set")
    m1, m2 = model_ids
    xbar1, std1, _ = _extract_single_arrays(samples, m1)
    xbar2, std2, y = _extract_single_arrays(samples, m2)
    problem = _MixedProblem(xbar1, std1, xbar2, std2, y, options.min_sigma)

    if single_fits is None:
        single_fits = (
            _best_effort_single(samples, m1, options),
            _best_effort_single(samples, m2, options),
        )

    def embed(coef: EmosCoefficients, first: bool) -> MixedEmosCoefficients:
        if first:
            return MixedEmosCoefficients(a=coef.a, b1=coef.b, b2=0.0, c=coef.c, d1=coef.d, d2=0.0)
        return MixedEmosCoefficients(a=coef.a, b1=0.0, b2=coef.b, c=coef.c, d1=0.0, d2=coef.d)

    embeds = [
        problem.params_from(embed(single_fits[0].coefficients, True)),
        problem.params_from(embed(single_fits[1].coefficients, False)),
    ]
    if start is not None:
        starts = [_wake_dormant(problem.params_from(start), (1, 2, 3, 4, 5))]
    else:
        # b=0 is a stationary point of the squared parametrization, so an
        # exact embedding cannot move; perturb the dormant predictor of the
        # better single fit to let the optimizer discover genuine mixing,
        # and keep both exact points as candidates to preserve nesting.
        better = 0 if single_fits[0].objective <= single_fits[1].objective else 1
        perturbed = embeds[better].copy()
        for dormant in ((2, 5), (1, 4))[better]:
            perturbed[dormant] = 0.3
        half = math.sqrt(0.5)
        symmetric = np.array([0.0, half, half, 1.0, 0.5**0.25, 0.5**0.25])
        starts = [perturbed, symmetric]

    p, f, converged, n_iter, trace = _optimize(problem, starts, options, extra_candidates=embeds)
    result = FitResult(
        coefficients=problem.coef_from(p),
        objective=f,
        converged=converged,
        n_iterations=n_iter,
        n_samples=len(samples),
        trace=trace,
    )
    if not converged:
        raise NonConvergenceError(
            f"mixed fit for {model_ids!r} did not converge in {options.max_iterations} iterations",
            result,
        )
    return result


def _best_effort_single(samples, model_id, options: FitOptions) -> FitResult:
    # Internal seeding fits never take the mixed fit's b1/d1 bounds.
    try:
        return fit_single(samples, model_id, replace(options, bounds=None, record_trace=False))
    except NonConvergenceError as err:
        return err.result
