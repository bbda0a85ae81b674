"""Random tag-question bipartite graphs with lognormal tag frequencies.

Randomness comes from numpy's ``Generator`` over the PCG64 bit generator,
seeded directly with the 64-bit config seed. Draw order is fixed: all
frequencies first, then one subset per tag in tag-id order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError, NumericError
from .ingest import BipartiteTagGraph

logger = logging.getLogger(__name__)

BISECTION_RTOL = 1e-9
OVER_FIVE = 5


@dataclass(frozen=True)
class GeneratorConfig:
    n_tags: int
    n_questions: int
    m: int
    mu: float
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.n_tags < 1:
            raise DataError("n_tags must be at least 1")
        if self.n_questions < 1:
            raise DataError("n_questions must be at least 1")
        if self.n_questions >= self.m:
            raise DataError("n_questions must be smaller than m (every question needs a tag)")
        if not self.sigma > 0:
            raise DataError("sigma must be positive")
        if not 0 <= self.seed < 2**64:
            raise DataError("seed must be an unsigned 64-bit integer")

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))


@dataclass(frozen=True)
class FrequencySample:
    values: np.ndarray
    n_clamped_zero: int

    @property
    def realized_m(self) -> int:
        return int(self.values.sum())


@dataclass(frozen=True)
class GenerationReport:
    corrected_questions: int
    realized_m: int
    n_clamped_zero: int
    n_empty_discarded: int
    frac_over_five: float
    n_questions_surviving: int
    n_clamped_to_corrected: int
    expected_empty: float
    expected_empty_std: float

    def to_dict(self) -> dict:
        return asdict(self)


def sample_frequencies(config: GeneratorConfig, rng: np.random.Generator) -> FrequencySample:
    """Draw lognormal weights, rescale to sum ``m``, round, clamp zeros to one.

    Rounding is half-to-even.
    """
    raw = rng.lognormal(config.mu, config.sigma, config.n_tags)
    scaled = config.m * (raw / raw.sum())
    values = np.rint(scaled).astype(np.int64)
    zeros = values == 0
    values[zeros] = 1
    return FrequencySample(values, int(zeros.sum()))


def _coverage(n_hat: float, m: int) -> float:
    """Expected number of non-empty questions, n_hat * (1 - exp(-m / n_hat))."""
    return -n_hat * math.expm1(-m / n_hat)


def solve_corrected_questions(m: int, n_questions: int) -> int:
    """Solve ``N - N exp(-m / N) = n_questions`` for N and round.

    The left side increases monotonically towards ``m``, so a root above
    ``n_questions`` exists exactly when ``n_questions < m``.
    """
    if n_questions < 1:
        raise DataError("n_questions must be positive")
    if n_questions >= m:
        raise NumericError("no solution: every question needs >=1 tag and some need >=2")
    lo = float(n_questions)
    if _coverage(lo, m) >= n_questions:
        return n_questions
    hi = 2.0 * n_questions
    while _coverage(hi, m) <= n_questions:
        lo, hi = hi, 2.0 * hi
        if not math.isfinite(hi):
            raise NumericError("bracket search diverged")
    # the absolute cap keeps rounding exact when the root is very large
    while hi - lo > min(BISECTION_RTOL * hi, 0.5):
        mid = 0.5 * (lo + hi)
        if _coverage(mid, m) < n_questions:
            lo = mid
        else:
            hi = mid
    return round(0.5 * (lo + hi))


def assign_tags(
    freqs,
    n_hat: int,
    rng: np.random.Generator,
    *,
    clamp: bool = False,
    tag_names=None,
) -> tuple[BipartiteTagGraph, int]:
    """Give each tag a uniformly random ``x_t``-subset of ``n_hat`` questions.

    Returns the graph (which may contain untagged questions) and the number of
    frequencies that were clamped to ``n_hat``.
    """
    x = np.asarray(freqs, dtype=np.int64)
    over = x > n_hat
    n_clamped = int(over.sum())
    if n_clamped:
        if not clamp:
            t = int(np.argmax(over))
            raise NumericError(f"tag {t} has frequency {int(x[t])} > corrected question count {n_hat}")
        logger.warning("clamped %d frequencies to %d", n_clamped, n_hat)
        x = np.minimum(x, n_hat)
    indptr = np.zeros(len(x) + 1, dtype=np.int64)
    np.cumsum(x, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.int64)
    for t, k in enumerate(x):
        chosen = rng.choice(n_hat, size=int(k), replace=False)
        chosen.sort()
        indices[indptr[t] : indptr[t + 1]] = chosen
    if tag_names is None:
        tag_names = default_tag_names(len(x))
    graph = BipartiteTagGraph(tag_names, n_hat, indptr, indices, allow_empty_questions=True)
    return graph, n_clamped


def default_tag_names(n_tags: int) -> list[str]:
    """Zero-padded names, so lexicographic order equals tag-id order."""
    width = len(str(max(n_tags - 1, 0)))
    return [f"t{i:0{width}d}" for i in range(n_tags)]


def drop_empty_questions(graph: BipartiteTagGraph) -> tuple[BipartiteTagGraph, int]:
    counts = graph.tags_per_question()
    keep = counts > 0
    new_index = np.cumsum(keep) - 1
    n_kept = int(keep.sum())
    width = len(str(max(n_kept - 1, 0)))
    compact = BipartiteTagGraph(
        graph.tag_names,
        n_kept,
        graph.indptr,
        new_index[graph.indices],
        [f"q{i:0{width}d}" for i in range(n_kept)],
    )
    return compact, graph.n_questions - n_kept


def expected_empty_questions(m: int, n_hat: int) -> tuple[float, float]:
    """Approximate mean and standard deviation of the untagged-question count."""
    if n_hat < 1:
        raise DataError("n_hat must be positive")
    p = math.exp(-m / n_hat)
    return n_hat * p, math.sqrt(n_hat * p * (1.0 - p))


def tags_per_question_distribution(graph: BipartiteTagGraph) -> list[float]:
    """Fractions of questions carrying 1, 2, 3, 4, 5 and more than 5 tags.

    Questions without tags are ignored.
    """
    counts = graph.tags_per_question()
    counts = counts[counts > 0]
    if len(counts) == 0:
        raise DataError("graph has no tagged questions")
    hist = np.bincount(np.minimum(counts, OVER_FIVE + 1), minlength=OVER_FIVE + 2)[1:]
    return (hist / len(counts)).tolist()


def generate(config: GeneratorConfig, *, clamp: bool = False) -> tuple[BipartiteTagGraph, GenerationReport]:
    """Run the full model: frequencies, correction, assignment, empty-question discard."""
    rng = config.rng()
    sample = sample_frequencies(config, rng)
    m = sample.realized_m
    n_hat = solve_corrected_questions(m, config.n_questions)
    raw, n_clamped = assign_tags(sample.values, n_hat, rng, clamp=clamp)
    graph, n_empty = drop_empty_questions(raw)
    expected, std = expected_empty_questions(m, n_hat)
    fractions = tags_per_question_distribution(graph)
    report = GenerationReport(
        corrected_questions=n_hat,
        realized_m=m,
        n_clamped_zero=sample.n_clamped_zero,
        n_empty_discarded=n_empty,
        frac_over_five=fractions[-1],
        n_questions_surviving=graph.n_questions,
        n_clamped_to_corrected=n_clamped,
        expected_empty=expected,
        expected_empty_std=std,
    )
    return graph, report
