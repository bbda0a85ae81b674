"""Co-tag regressions, closed-form expectations under the random model, PCA.

Logarithms are natural throughout; reports carry ``"log_base": "e"``.
"""

from __future__ import annotations

import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from . import cotag, distfit, generator
from .errors import CotagError, DataError, NumericError
from .ingest import BipartiteTagGraph

logger = logging.getLogger(__name__)

LOG_BASE = "e"
# exp(-46) < 1e-20: below this the log-gamma form is accurate enough
_NEGLIGIBLE_LOG = 46.0


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r_squared}


@dataclass(frozen=True)
class CubicLogFit:
    coeffs: tuple[float, float, float, float]
    mse: float
    degree: int = 3
    rank_deficient: bool = False

    def to_dict(self) -> dict:
        out = {f"a{i}": c for i, c in enumerate(self.coeffs)}
        out.update(mse=self.mse, degree=self.degree, rank_deficient=self.rank_deficient)
        return out


@dataclass(frozen=True)
class PcaSummary:
    explained_variance_ratios: list[float]


def linear_cotag_regression(x, k) -> LinearFit:
    """Ordinary least squares of weighted co-tag counts ``k`` on frequencies ``x``."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=float)
    if x.shape != k.shape or x.ndim != 1:
        raise DataError("x and k must be aligned vectors")
    if len(x) < 3:
        raise DataError("need at least 3 points for a regression")
    dx = x - x.mean()
    dk = k - k.mean()
    sxx = float(dx @ dx)
    if sxx == 0:
        raise NumericError("zero variance in x")
    sxy = float(dx @ dk)
    syy = float(dk @ dk)
    slope = sxy / sxx
    intercept = float(k.mean() - slope * x.mean())
    r2 = 1.0 if syy == 0 else min(max(sxy * sxy / (sxx * syy), 0.0), 1.0)
    return LinearFit(slope, intercept, r2)


def expected_weighted_cotags(x, t: int, n_hat: int) -> float:
    """E[k_t] = (m - x_t) x_t / n_hat with m the total of ``x``."""
    x = np.asarray(x, dtype=np.int64)
    xt = int(x[t])
    return (int(x.sum()) - xt) * xt / n_hat


class _ZeroOverlap:
    """log P(two uniform subsets of sizes a and b of n items are disjoint).

    That is log[C(n-a, b) / C(n, b)], symmetric in a and b. Small cases use
    prefix sums of log1p(-hi / (n - j)), exact up to rounding; cases where the
    probability is below 1e-20 use log-gamma.
    """

    def __init__(self, n: int):
        self.n = int(n)
        self._prefix: dict[int, np.ndarray] = {}

    def _table(self, hi: int, length: int) -> np.ndarray:
        table = self._prefix.get(hi)
        if table is None or len(table) <= length:
            j = np.arange(length, dtype=float)
            table = np.concatenate([[0.0], np.cumsum(np.log1p(-hi / (self.n - j)))])
            self._prefix[hi] = table
        return table

    def __call__(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        hi = np.maximum(a, b)
        lo = np.minimum(a, b)
        n = self.n
        out = np.empty(len(hi))
        certain = hi + lo > n
        out[certain] = -np.inf
        tiny = ~certain & (hi * lo.astype(float) > _NEGLIGIBLE_LOG * n)
        if tiny.any():
            h, l = hi[tiny], lo[tiny]
            out[tiny] = (
                special.gammaln(n - h + 1.0)
                - special.gammaln(n - h - l + 1.0)
                - special.gammaln(n + 1.0)
                + special.gammaln(n - l + 1.0)
            )
        exact = ~certain & ~tiny
        if exact.any():
            idx = np.flatnonzero(exact)
            for h in np.unique(hi[idx]):
                sel = idx[hi[idx] == h]
                table = self._table(int(h), int(lo[sel].max()))
                out[sel] = table[lo[sel]]
        return out


def expected_unique_cotags(x, t: int, n_hat: int, *, _zero=None) -> float:
    """E[d_t]: sum over s != t of the probability that s and t share a question."""
    x = np.asarray(x, dtype=np.int64)
    if np.any(x > n_hat):
        raise DataError("a frequency exceeds n_hat")
    zero = _zero if _zero is not None else _ZeroOverlap(n_hat)
    others = np.delete(x, t)
    if len(others) == 0:
        return 0.0
    p_share = -np.expm1(zero(others, np.full(len(others), x[t])))
    return float(np.clip(p_share, 0.0, 1.0).sum())


def expected_unique_cotags_all(x, n_hat: int) -> np.ndarray:
    zero = _ZeroOverlap(n_hat)
    return np.array([expected_unique_cotags(x, t, n_hat, _zero=zero) for t in range(len(x))])


def log_poly_fit(x, d, degree: int = 3) -> CubicLogFit:
    """Least squares of log(d+1) on powers 0..degree of log(x+1), via SVD.

    If the design is rank deficient the degree is lowered until it is not.
    """
    lx = np.log1p(np.asarray(x, dtype=float))
    ld = np.log1p(np.asarray(d, dtype=float))
    if lx.shape != ld.shape or lx.ndim != 1:
        raise DataError("x and d must be aligned vectors")
    if len(lx) < 5:
        raise DataError("need at least 5 points for the polynomial fit")
    deg = degree
    while True:
        design = np.vander(lx, deg + 1, increasing=True)
        coef, _, rank, _ = np.linalg.lstsq(design, ld, rcond=None)
        if rank == deg + 1 or deg == 0:
            break
        deg -= 1
    resid = ld - design @ coef
    padded = tuple(float(c) for c in coef) + (0.0,) * (3 - deg)
    return CubicLogFit(padded, float(np.mean(resid**2)), deg, deg < degree)


def cubic_log_fit(x, d) -> CubicLogFit:
    return log_poly_fit(x, d, 3)


def pca_explained_variance(coeff_rows) -> PcaSummary:
    """Eigenvalue shares of the covariance of mean-centered rows, descending."""
    rows = np.asarray(coeff_rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise DataError("need at least two coefficient rows")
    centered = rows - rows.mean(axis=0)
    cov = centered.T @ centered / (rows.shape[0] - 1)
    if np.trace(cov) <= 0:
        raise NumericError("zero variance")
    eig = np.clip(np.linalg.eigvalsh(cov)[::-1], 0.0, None)
    return PcaSummary((eig / eig.sum()).tolist())


@dataclass
class AnalysisReport:
    """Per-community statistics; sections are ``None`` when their preconditions fail."""

    community: str
    n_tags: int
    n_questions: int
    m: int
    lognormal: dict | None = None
    linear: LinearFit | None = None
    cubic: CubicLogFit | None = None
    clustering: cotag.ClusteringReport | None = None
    tags_per_question: list[float] | None = None
    skipped: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "community": self.community,
            "log_base": LOG_BASE,
            "n_tags": self.n_tags,
            "n_questions": self.n_questions,
            "m": self.m,
            "lognormal": self.lognormal,
            "linear": self.linear.to_dict() if self.linear else None,
            "cubic": self.cubic.to_dict() if self.cubic else None,
            "clustering": self.clustering.to_dict() if self.clustering else None,
            "tags_per_question": self.tags_per_question,
            "skipped": dict(self.skipped),
        }


def analyze_graph(graph: BipartiteTagGraph, community: str) -> AnalysisReport:
    report = AnalysisReport(community, graph.n_tags, graph.n_questions, graph.m)
    x = graph.frequencies
    g = cotag.project(graph)

    def attempt(name, fn):
        try:
            return fn()
        except CotagError as exc:
            report.skipped[name] = str(exc)
            return None

    def lognormal():
        fit = distfit.fit_lognormal(x)
        return {"mu": fit.params["mu"], "sigma": fit.params["sigma"], "D": fit.ks_statistic}

    report.lognormal = attempt("lognormal", lognormal)
    report.linear = attempt("linear", lambda: linear_cotag_regression(x, g.weighted_degrees()))
    report.cubic = attempt("cubic", lambda: cubic_log_fit(x, g.unweighted_degrees()))
    report.clustering = attempt("clustering", lambda: cotag.clustering_report(g))
    report.tags_per_question = attempt("tags_per_question", lambda: generator.tags_per_question_distribution(graph))
    return report


# -- model vs data ----------------------------------------------------------------

TPQ_LABELS = ("1", "2", "3", "4", "5", "gt5")
REFERENCE_TARGETS = {
    "slope_mean": 1.82,
    "slope_correlation": 0.932,
    "slope_mse": 0.10,
    "pca_data_first": 0.86,
    "pca_data_second": 0.13,
    "pca_model_first": 0.89,
    "pca_model_second": 0.10,
}
_REPLICATE_SUFFIX = re.compile(r"\.rep\d+$")


def _metrics(report: dict) -> dict[str, float | None]:
    def get(section, key):
        sec = report.get(section)
        return None if sec is None else sec.get(key)

    out = {
        "slope": get("linear", "slope"),
        "r2": get("linear", "r2"),
        "C": get("clustering", "C"),
        "logCw": get("clustering", "logCw"),
        "Clw": get("clustering", "Clw"),
        "cubic_mse": get("cubic", "mse"),
    }
    tpq = report.get("tags_per_question") or [None] * len(TPQ_LABELS)
    for label, value in zip(TPQ_LABELS, tpq):
        out[f"tpq_{label}"] = value
    return out


def _as_dict(report) -> dict:
    return report.to_dict() if isinstance(report, AnalysisReport) else report


def _group(reports, strip_replicate):
    grouped = defaultdict(list)
    for r in map(_as_dict, reports):
        name = r["community"]
        if strip_replicate:
            name = _REPLICATE_SUFFIX.sub("", name)
        grouped[name].append(r)
    return grouped


def _mean_metrics(reports: list[dict]) -> dict[str, float | None]:
    per = [_metrics(r) for r in reports]
    out = {}
    for key in per[0]:
        vals = [p[key] for p in per if p[key] is not None]
        out[key] = float(np.mean(vals)) if vals else None
    return out


def _correlation(a: np.ndarray, b: np.ndarray) -> float | None:
    if len(a) < 2:
        return None
    if np.array_equal(a, b):
        return 1.0
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return None
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def _cubic_rows(grouped) -> np.ndarray:
    rows = []
    for reps in grouped.values():
        for r in reps:
            c = r.get("cubic")
            if c is not None:
                rows.append([c["a0"], c["a1"], c["a2"], c["a3"]])
    return np.asarray(rows, dtype=float)


def _pca_or_none(rows):
    try:
        return pca_explained_variance(rows).explained_variance_ratios
    except CotagError:
        return None


def compare_model_to_data(data_reports: Sequence, model_reports: Sequence) -> dict:
    """Per-metric correlation and mean squared error across communities.

    Model reports named ``<community>.rep<r>`` are averaged per community.
    """
    data = _group(data_reports, strip_replicate=False)
    model = _group(model_reports, strip_replicate=True)
    if set(data) != set(model):
        missing = sorted(set(data) ^ set(model))
        raise DataError(f"community lists differ: {missing[:10]}")
    communities = sorted(data)
    dm = {c: _mean_metrics(data[c]) for c in communities}
    mm = {c: _mean_metrics(model[c]) for c in communities}
    metrics = {}
    for key in dm[communities[0]] if communities else []:
        pairs = [(dm[c][key], mm[c][key]) for c in communities if dm[c][key] is not None and mm[c][key] is not None]
        a = np.array([p[0] for p in pairs], dtype=float)
        b = np.array([p[1] for p in pairs], dtype=float)
        metrics[key] = {
            "n": len(pairs),
            "correlation": _correlation(a, b),
            "mse": float(np.mean((a - b) ** 2)) if pairs else None,
            "data_mean": float(a.mean()) if pairs else None,
            "model_mean": float(b.mean()) if pairs else None,
        }
    return {
        "schema_version": 1,
        "communities": communities,
        "metrics": metrics,
        "pca": {"data": _pca_or_none(_cubic_rows(data)), "model": _pca_or_none(_cubic_rows(model))},
        "reference_targets": dict(REFERENCE_TARGETS),
    }
