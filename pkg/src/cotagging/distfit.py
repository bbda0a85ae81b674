"""Heavy-tailed fits to tag-frequency vectors.

All families are continuous. The power law, truncated power law and
stretched exponential are normalized on ``[xmin, inf)`` with ``xmin`` the
sample minimum. The lognormal uses the plain (unconditioned) MLE and density,
while its KS statistic compares against the CDF conditioned on ``x >= xmin``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import mpmath
import numpy as np
from scipy import optimize, special

from .errors import DataError, FitError, NumericError

FAMILIES = ("lognormal", "powerlaw", "truncated_powerlaw", "stretched_exponential")
MIN_SAMPLES = 10
PARAM_TOL = 1e-8
MAX_ITER = 10_000

# bound on log-parametrized optimizer coordinates; exp() overflows past ~709
_MAX_LOG_PARAM = 300.0
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class DistributionFit:
    family: str
    params: dict[str, float]
    xmin: float
    n: int
    loglik: float
    ks_statistic: float

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": dict(self.params),
            "D": self.ks_statistic,
            "loglik": self.loglik,
            "xmin": self.xmin,
            "n": self.n,
        }


@dataclass(frozen=True)
class LikelihoodRatioResult:
    R: float
    p_value: float

    def to_dict(self) -> dict:
        return {"R": self.R, "p": self.p_value}


@dataclass(frozen=True)
class ParamPopulation:
    mus: list[float]
    sigmas: list[float]
    mu_mean: float
    mu_sd: float
    sigma_mean: float
    sigma_sd: float
    mu_normality_D: float = field(default=float("nan"))
    sigma_normality_D: float = field(default=float("nan"))

    def to_dict(self) -> dict:
        return {
            "mu": {"mean": self.mu_mean, "sd": self.mu_sd, "normality_D": self.mu_normality_D, "values": self.mus},
            "sigma": {
                "mean": self.sigma_mean,
                "sd": self.sigma_sd,
                "normality_D": self.sigma_normality_D,
                "values": self.sigmas,
            },
        }


def normal_cdf(z):
    """Standard normal CDF via ``erfc``, accurate in both tails."""
    return 0.5 * special.erfc(-np.asarray(z, dtype=float) / math.sqrt(2.0))


def _values(freqs, min_samples=MIN_SAMPLES) -> np.ndarray:
    x = np.asarray(freqs, dtype=float)
    if x.ndim != 1:
        raise DataError("frequency vector must be one-dimensional")
    if len(x) < min_samples:
        raise DataError(f"need at least {min_samples} values to fit, got {len(x)}")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise DataError("frequencies must be positive and finite")
    return x


# -- densities ---------------------------------------------------------------


def _tpl_log_norm(alpha: float, lam: float, lower) -> np.ndarray:
    """log of the integral of x^-alpha e^(-lam x) over [lower, inf).

    Uses the generalized exponential integral:
    integral = lower^(1-alpha) * E_alpha(lam * lower).
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    out = np.empty(len(lower))
    for i, xl in enumerate(lower):
        e = mpmath.expint(alpha, lam * xl)
        out[i] = (1.0 - alpha) * math.log(xl) + float(mpmath.log(e)) if e > 0 else -math.inf
    return out


def logpdf(x, family: str, params: dict, xmin: float) -> np.ndarray:
    """Per-point log-density of ``family`` at ``x``."""
    x = np.asarray(x, dtype=float)
    lx = np.log(x)
    if family == "lognormal":
        mu, sigma = params["mu"], params["sigma"]
        return -lx - math.log(sigma) - _LOG_SQRT_2PI - (lx - mu) ** 2 / (2 * sigma**2)
    if family == "powerlaw":
        alpha = params["alpha"]
        return math.log(alpha - 1) - math.log(xmin) - alpha * (lx - math.log(xmin))
    if family == "truncated_powerlaw":
        alpha, lam = params["alpha"], params["lambda"]
        return -alpha * lx - lam * x - _tpl_log_norm(alpha, lam, xmin)[0]
    if family == "stretched_exponential":
        lam, beta = params["lambda"], params["beta"]
        return (
            math.log(beta)
            + beta * math.log(lam)
            + (beta - 1) * lx
            - (lam * x) ** beta
            + (lam * xmin) ** beta
        )
    raise ValueError(f"unknown family {family!r}")


def cdf(x, family: str, params: dict, xmin: float) -> np.ndarray:
    """Model CDF conditioned on ``x >= xmin``."""
    x = np.maximum(np.asarray(x, dtype=float), xmin)
    if family == "lognormal":
        mu, sigma = params["mu"], params["sigma"]

        def surv(v):
            return 0.5 * special.erfc((np.log(v) - mu) / (sigma * math.sqrt(2.0)))

        s0 = surv(xmin)
        if s0 <= 0:
            return np.ones_like(x)
        return 1.0 - surv(x) / s0
    if family == "powerlaw":
        return 1.0 - (x / xmin) ** (1.0 - params["alpha"])
    if family == "truncated_powerlaw":
        alpha, lam = params["alpha"], params["lambda"]
        uniq, inv = np.unique(x, return_inverse=True)
        tail = _tpl_log_norm(alpha, lam, uniq) - _tpl_log_norm(alpha, lam, xmin)[0]
        return (-np.expm1(tail))[inv]
    if family == "stretched_exponential":
        lam, beta = params["lambda"], params["beta"]
        return -np.expm1((lam * xmin) ** beta - (lam * x) ** beta)
    raise ValueError(f"unknown family {family!r}")


# -- goodness of fit -----------------------------------------------------------


def _ks_against(x: np.ndarray, model_cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    uniq, counts = np.unique(x, return_counts=True)
    n = len(x)
    upper = np.cumsum(counts) / n
    lower = upper - counts / n
    f = model_cdf(uniq)
    d = max(float(np.max(upper - f)), float(np.max(f - lower)))
    return min(max(d, 0.0), 1.0)


def ks_statistic(freqs, fit: DistributionFit) -> float:
    """Two-sided KS distance between the sample and the fitted model.

    Ties are handled by checking the empirical CDF on both sides of each
    step.
    """
    x = np.asarray(freqs, dtype=float)
    return _ks_against(x, lambda v: cdf(v, fit.family, fit.params, fit.xmin))


def likelihood_ratio_test(freqs, null_fit: DistributionFit, alt_fit: DistributionFit) -> LikelihoodRatioResult:
    """Normalized (Vuong) log-likelihood ratio; ``R > 0`` favors ``null_fit``.

    ``R = sum(l_i) / (s * sqrt(n))`` with ``l_i`` the pointwise log-density
    differences and ``s`` their sample standard deviation; ``p = 2 Phi(-|R|)``.
    """
    x = np.asarray(freqs, dtype=float)
    if null_fit.xmin != alt_fit.xmin or null_fit.n != alt_fit.n or len(x) != null_fit.n:
        raise DataError("fits were not computed on the same sample")
    diff = logpdf(x, null_fit.family, null_fit.params, null_fit.xmin) - logpdf(
        x, alt_fit.family, alt_fit.params, alt_fit.xmin
    )
    n = len(x)
    s = float(np.std(diff, ddof=1))
    if s == 0 or not math.isfinite(s):
        raise NumericError("indistinguishable models")
    r = float(np.sum(diff)) / (s * math.sqrt(n))
    p = float(special.erfc(abs(r) / math.sqrt(2.0)))
    return LikelihoodRatioResult(r, min(max(p, 0.0), 1.0))


# -- fitting --------------------------------------------------------------------


def _finish(x, family, params) -> DistributionFit:
    xmin = float(x.min())
    ll = float(np.sum(logpdf(x, family, params, xmin)))
    if not math.isfinite(ll):
        raise FitError(f"{family} log-likelihood is not finite", best=params)
    fit = DistributionFit(family, params, xmin, len(x), ll, 0.0)
    return DistributionFit(family, params, xmin, len(x), ll, ks_statistic(x, fit))


def fit_lognormal(freqs) -> DistributionFit:
    x = _values(freqs)
    lx = np.log(x)
    mu = float(np.mean(lx))
    sigma = float(np.std(lx))
    if sigma == 0:
        raise FitError("degenerate sample: all values identical")
    return _finish(x, "lognormal", {"mu": mu, "sigma": sigma})


def powerlaw_alpha(x: np.ndarray, xmin: float) -> float:
    s = float(np.sum(np.log(x / xmin)))
    if s <= 0:
        raise FitError("degenerate sample: all values identical")
    return 1.0 + len(x) / s


def fit_powerlaw(freqs) -> DistributionFit:
    x = _values(freqs)
    return _finish(x, "powerlaw", {"alpha": powerlaw_alpha(x, float(x.min()))})


def _nelder_mead(neg_ll, x0, to_params, family):
    res = optimize.minimize(
        neg_ll,
        np.asarray(x0, dtype=float),
        method="Nelder-Mead",
        options={"xatol": PARAM_TOL, "fatol": 1e-10, "maxiter": MAX_ITER, "maxfev": 4 * MAX_ITER},
    )
    if not res.success or not np.isfinite(res.fun):
        raise FitError(f"{family} fit did not converge: {res.message}", best=to_params(res.x))
    return to_params(res.x)


def fit_truncated_powerlaw(freqs) -> DistributionFit:
    x = _values(freqs)
    xmin = float(x.min())
    n = len(x)
    sum_lx = float(np.sum(np.log(x)))
    sum_x = float(np.sum(x))

    def to_params(p):
        return {"alpha": float(p[0]), "lambda": float(math.exp(p[1]))}

    def neg_ll(p):
        if abs(p[1]) > _MAX_LOG_PARAM:
            return math.inf
        alpha, lam = p[0], math.exp(p[1])
        log_z = _tpl_log_norm(alpha, lam, xmin)[0]
        val = alpha * sum_lx + lam * sum_x + n * log_z
        return val if math.isfinite(val) else math.inf

    alpha0 = powerlaw_alpha(x, xmin)
    params = _nelder_mead(neg_ll, [alpha0, math.log(1.0 / np.mean(x))], to_params, "truncated_powerlaw")
    return _finish(x, "truncated_powerlaw", params)


def fit_stretched_exponential(freqs) -> DistributionFit:
    x = _values(freqs)
    xmin = float(x.min())
    n = len(x)
    lx = np.log(x)
    sum_lx = float(np.sum(lx))

    def to_params(p):
        return {"lambda": float(math.exp(p[0])), "beta": float(math.exp(p[1]))}

    def neg_ll(p):
        if max(abs(p[0]), abs(p[1])) > _MAX_LOG_PARAM:
            return math.inf
        lam, beta = math.exp(p[0]), math.exp(p[1])
        with np.errstate(over="ignore", invalid="ignore"):
            ll = (
                n * (math.log(beta) + beta * math.log(lam))
                + (beta - 1) * sum_lx
                - float(np.sum((lam * x) ** beta))
                + n * (lam * xmin) ** beta
            )
        return -ll if math.isfinite(ll) else math.inf

    params = _nelder_mead(neg_ll, [math.log(1.0 / np.mean(x)), 0.0], to_params, "stretched_exponential")
    return _finish(x, "stretched_exponential", params)


_FITTERS = {
    "lognormal": fit_lognormal,
    "powerlaw": fit_powerlaw,
    "truncated_powerlaw": fit_truncated_powerlaw,
    "stretched_exponential": fit_stretched_exponential,
}


def fit(freqs, family: str) -> DistributionFit:
    try:
        return _FITTERS[family](freqs)
    except KeyError:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}") from None


def fit_all(freqs, families: Sequence[str] = FAMILIES) -> dict[str, DistributionFit]:
    return {family: fit(freqs, family) for family in families}


def param_population(fits: Sequence[DistributionFit]) -> ParamPopulation:
    """Collect lognormal parameters across communities.

    Also reports, for each parameter, the KS distance between its values and a
    normal with the sample mean and standard deviation.
    """
    if len(fits) < 2:
        raise DataError("need at least two fits")
    if any(f.family != "lognormal" for f in fits):
        raise DataError("param_population takes lognormal fits only")
    mus = np.array([f.params["mu"] for f in fits])
    sigmas = np.array([f.params["sigma"] for f in fits])

    def normality(v, mean, sd):
        if sd == 0:
            return float("nan")
        return _ks_against(v, lambda u: normal_cdf((u - mean) / sd))

    mu_mean, mu_sd = float(np.mean(mus)), float(np.std(mus, ddof=1))
    s_mean, s_sd = float(np.mean(sigmas)), float(np.std(sigmas, ddof=1))
    return ParamPopulation(
        mus.tolist(),
        sigmas.tolist(),
        mu_mean,
        mu_sd,
        s_mean,
        s_sd,
        normality(mus, mu_mean, mu_sd),
        normality(sigmas, s_mean, s_sd),
    )
