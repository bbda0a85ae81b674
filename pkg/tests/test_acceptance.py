"""End-to-end acceptance checks; each records one PASS/FAIL/SKIP line for the run summary."""

import itertools
import json
import math
import os
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import record_criterion
from cotagging import cli, distfit
from cotagging.analysis import (
    expected_unique_cotags,
    expected_unique_cotags_all,
    expected_weighted_cotags,
    linear_cotag_regression,
)
from cotagging.cotag import (
    CotagGraph,
    clustering_logweighted,
    clustering_unweighted,
    clustering_weighted,
    project,
    triangles,
)
from cotagging.generator import GeneratorConfig, assign_tags, generate


def _check(name, ok, detail):
    record_criterion(name, ok, detail)
    assert ok, detail


# -- 1 ---------------------------------------------------------------------------------


def test_correction_accuracy():
    start = time.perf_counter()
    errors, signed = [], []
    for nq, ratio in itertools.product((10**3, 10**4, 10**5), (1.5, 2.0, 3.0)):
        for seed in range(20):
            cfg = GeneratorConfig(round(4 * math.sqrt(nq)), nq, int(ratio * nq), 2.0, 1.5, seed)
            graph, _ = generate(cfg, clamp=True)
            errors.append(abs(graph.n_questions - nq) / nq)
            signed.append((graph.n_questions - nq) / nq)
    elapsed = time.perf_counter() - start
    mean_err, max_err = float(np.mean(errors)), float(np.max(errors))
    ok = mean_err <= 0.01 and max_err <= 0.04 and elapsed < 60
    _check(
        "1 correction accuracy",
        ok,
        f"mean {mean_err:.4%} (<=1%), max {max_err:.4%} (<=4%), mean signed {np.mean(signed):+.4%}, {elapsed:.1f}s",
    )


# -- 2 ---------------------------------------------------------------------------------


def test_over_five_tags_fraction():
    start = time.perf_counter()
    sizes = [(107, 937), (393, 7626), (1065, 90213)]
    fractions = []
    for (nt, nq), ratio, sigma, mu in itertools.product(sizes, (2.0, 2.5, 3.0), (1.0, 1.5, 2.0), (2.0, 3.0)):
        _, rep = generate(GeneratorConfig(nt, nq, int(ratio * nq), mu, sigma, 0), clamp=True)
        fractions.append(rep.frac_over_five)
    elapsed = time.perf_counter() - start
    ok = max(fractions) < 0.10 and elapsed < 60
    _check(
        "2 over-five-tags fraction",
        ok,
        f"{len(fractions)} runs, max {max(fractions):.4f} (<0.10), mean {np.mean(fractions):.4f}, {elapsed:.1f}s",
    )


# -- 3 ---------------------------------------------------------------------------------


def test_linear_cotag_law():
    start = time.perf_counter()
    r2s, rel, rel_exact = [], [], []
    for i, sigma in enumerate(np.linspace(1.0, 2.0, 20)):
        graph, rep = generate(GeneratorConfig(200, 5000, 15_000, 2.0, float(sigma), i), clamp=True)
        x = graph.frequencies.astype(float)
        fit = linear_cotag_regression(x, project(graph).weighted_degrees())
        r2s.append(fit.r_squared)
        reference = rep.realized_m / rep.corrected_questions
        rel.append(abs(fit.slope / reference - 1))
        # OLS slope implied by E[k_t] = (m - x_t) x_t / n_hat; informative only
        implied = (rep.realized_m - np.cov(x, x * x, bias=True)[0, 1] / x.var()) / rep.corrected_questions
        rel_exact.append(abs(fit.slope / implied - 1))
    elapsed = time.perf_counter() - start
    ok = min(r2s) > 0.95 and max(rel) <= 0.10 and elapsed < 60
    _check(
        "3 linear co-tag law",
        ok,
        f"min r2 {min(r2s):.4f} (>0.95), max |slope/(m/N)-1| {max(rel):.3f} (<=0.10), "
        f"{sum(r <= 0.10 for r in rel)}/20 within; vs implied OLS slope max {max(rel_exact):.3f}; {elapsed:.1f}s",
    )


# -- 4 ---------------------------------------------------------------------------------

_MC_CONFIGS = [([3, 3], 6), ([2, 2, 2], 4), ([4, 6, 2, 9], 15), ([1, 5, 5, 8, 3], 10), ([10, 1, 7, 3, 2, 4], 12)]


def test_hypergeometric_oracles():
    start = time.perf_counter()
    subsets = list(itertools.combinations(range(4), 2))
    total = Fraction(0)
    for choice in itertools.product(subsets, repeat=3):
        total += sum(bool(set(choice[0]) & set(choice[s])) for s in (1, 2))
    enumerated = total / len(subsets) ** 3
    closed = expected_unique_cotags([2, 2, 2], 0, 4)
    exhaustive_ok = enumerated == Fraction(5, 3) and abs(closed - 5 / 3) <= 1e-12

    worst = 0.0
    rng = np.random.default_rng(20240)
    reps = 10_000
    for x, n_hat in _MC_CONFIGS:
        k = np.empty((reps, len(x)))
        d = np.empty((reps, len(x)))
        for r in range(reps):
            g = project(assign_tags(x, n_hat, rng)[0])
            k[r] = g.weighted_degrees()
            d[r] = g.unweighted_degrees()
        for sample, expected in (
            (k, np.array([expected_weighted_cotags(x, t, n_hat) for t in range(len(x))])),
            (d, expected_unique_cotags_all(x, n_hat)),
        ):
            se = sample.std(axis=0, ddof=1) / math.sqrt(reps)
            gap = np.abs(sample.mean(axis=0) - expected)
            z = np.where(se > 0, gap / np.where(se > 0, se, 1), np.where(gap < 1e-12, 0, np.inf))
            worst = max(worst, float(z.max()))
    elapsed = time.perf_counter() - start
    ok = exhaustive_ok and worst <= 4 and elapsed < 120
    _check(
        "4 hypergeometric oracles",
        ok,
        f"enumeration {enumerated} vs closed form {closed:.15f}; worst Monte Carlo gap {worst:.2f} SE (<=4); {elapsed:.1f}s",
    )


# -- 5 ---------------------------------------------------------------------------------


def _graph(n, edges):
    rows, cols, vals = [], [], []
    for (s, t), w in edges.items():
        rows += [s, t]
        cols += [t, s]
        vals += [w, w]
    return CotagGraph([f"n{i}" for i in range(n)], sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))


def _brute(n, edges, transform=None):
    w = {}
    for (s, t), v in edges.items():
        w[s, t] = w[t, s] = v
    nbrs = [[j for j in range(n) if (i, j) in w] for i in range(n)]
    tri = [sum((j, k) in w for j, k in itertools.combinations(nbrs[i], 2)) for i in range(n)]
    if transform is None:
        exact = sum(Fraction(2 * tri[i], len(nbrs[i]) * (len(nbrs[i]) - 1)) for i in range(n) if len(nbrs[i]) > 1)
        return tri, exact / n
    tw = {e: transform(v) for e, v in w.items()}
    top = max(tw.values())
    total = 0.0
    for i in range(n):
        d = len(nbrs[i])
        if d > 1:
            acc = sum(
                (tw[i, j] * tw[j, k] * tw[k, i] / top**3) ** (1 / 3)
                for j, k in itertools.permutations(nbrs[i], 2)
                if (j, k) in w
            )
            total += acc / (d * (d - 1))
    return tri, total / n


def test_clustering_correctness():
    rng = np.random.default_rng(5)
    tri_ok, c_gap, cw_gap = True, 0.0, 0.0
    for _ in range(100):
        n = int(rng.integers(3, 31))
        p = rng.uniform(0.1, 0.9)
        edges = {e: int(rng.integers(1, 50)) for e in itertools.combinations(range(n), 2) if rng.random() < p}
        g = _graph(n, edges)
        tri, c_exact = _brute(n, edges)
        tri_ok &= triangles(g).tolist() == tri
        c_gap = max(c_gap, abs(Fraction(clustering_unweighted(g)) - c_exact))
        if edges:
            cw_gap = max(cw_gap, abs(clustering_weighted(g) - _brute(n, edges, float)[1]))
            cw_gap = max(cw_gap, abs(clustering_logweighted(g) - _brute(n, edges, math.log1p)[1]))
    k4 = _graph(4, {e: 1 for e in itertools.combinations(range(4), 2)})
    star = _graph(5, {(0, i): 1 for i in range(1, 5)})
    wtri = _graph(3, {(0, 1): 1, (1, 2): 1, (0, 2): 8})
    analytic = max(
        abs(clustering_unweighted(k4) - 1),
        abs(clustering_unweighted(star)),
        abs(clustering_weighted(wtri) - 0.25),
    )
    uniform = _graph(8, {e: 3 for e in itertools.combinations(range(8), 2) if sum(e) % 3})
    uniform_gap = abs(clustering_weighted(uniform) - clustering_unweighted(uniform))
    ok = tri_ok and c_gap <= 1e-15 and cw_gap <= 1e-12 and analytic <= 1e-12 and uniform_gap <= 1e-12
    _check(
        "5 clustering correctness",
        ok,
        f"triangles exact {tri_ok}; C gap to rational oracle {float(c_gap):.1e}; Cw/Clw gap {cw_gap:.1e}; "
        f"analytic gap {analytic:.1e}; uniform Cw-C {uniform_gap:.1e}",
    )


# -- 6 ---------------------------------------------------------------------------------


def test_distribution_recovery():
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    recovered = lr_ok = 0
    trials = 50
    for _ in range(trials):
        x = rng.lognormal(1.0, 1.5, 2000)
        ln = distfit.fit_lognormal(x)
        pl = distfit.fit_powerlaw(x)
        recovered += abs(ln.params["mu"] - 1) <= 0.1 and abs(ln.params["sigma"] - 1.5) <= 0.1
        lr = distfit.likelihood_ratio_test(x, ln, pl)
        lr_ok += lr.R > 0 and lr.p_value < 0.1
    elapsed = time.perf_counter() - start
    ok = recovered >= 0.95 * trials and lr_ok >= 0.90 * trials and elapsed < 60
    _check(
        "6 distribution fitting recovery",
        ok,
        f"parameters recovered {recovered}/{trials} (>=48), LR favours lognormal {lr_ok}/{trials} (>=45), {elapsed:.1f}s",
    )


# -- 7 ---------------------------------------------------------------------------------


def _snapshot(directory: Path) -> dict[str, bytes]:
    return {str(p.relative_to(directory)): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_determinism(tmp_path, capsys):
    snapshots = []
    for run in range(3):
        root = tmp_path / f"run{run}"
        src = root / "src"
        src.mkdir(parents=True)
        assert cli.main(["generate", "--tags", "80", "--questions", "600", "--occurrences", "1500", "--mu", "2",
                         "--sigma", "1.2", "--seed", "11", "--clamp", "--out", str(src / "base.tsv")]) == 0
        (src / "base.report.json").rename(root / "base.report.json")
        assert cli.main(["replicate", str(src), "--reps", "3", "--seed", "4", "--clamp", "--jobs", "2",
                         "--out", str(root / "reps")]) == 0
        assert cli.main(["analyze", str(root / "reps"), "--jobs", "2", "--out", str(root / "an")]) == 0
        snapshots.append(_snapshot(root))
    capsys.readouterr()
    ok = len(snapshots[0]) > 0 and all(s == snapshots[0] for s in snapshots[1:])
    _check("7 determinism", ok, f"{len(snapshots[0])} files byte-identical across 3 runs: {ok}")


# -- 8 ---------------------------------------------------------------------------------


def test_coffee_end_to_end(tmp_path, capsys):
    dump = os.environ.get("COTAG_COFFEE_DUMP")
    if not dump:
        record_criterion("8 coffee end-to-end (optional)", None, "set COTAG_COFFEE_DUMP to the coffee Posts.xml")
        pytest.skip("coffee dump not provided")
    start = time.perf_counter()
    out = tmp_path / "out"
    tsv = str(out / "tsv")
    steps = [
        ["ingest", dump, "--out", tsv],
        ["fit", tsv, "--out", str(out / "fits")],
        ["replicate", tsv, "--fits", str(out / "fits"), "--clamp", "--out", str(out / "reps")],
        ["analyze", tsv, "--out", str(out / "an_data")],
        ["analyze", str(out / "reps"), "--out", str(out / "an_model")],
        ["compare", "--data", str(out / "an_data"), "--model", str(out / "an_model"), "--out", str(out / "cmp.json")],
    ]
    codes = [cli.main(argv) for argv in steps]
    elapsed = time.perf_counter() - start
    capsys.readouterr()
    summaries = sorted((out / "tsv").glob("*.summary.json"))
    summ = json.loads(summaries[0].read_text()) if summaries else {"n_questions": None, "n_tags": None}
    ok = not any(codes) and summ["n_questions"] == 937 and summ["n_tags"] == 107 and elapsed < 10
    _check(
        "8 coffee end-to-end (optional)",
        ok,
        f"exit codes {codes}; {summ['n_questions']} questions (937), {summ['n_tags']} tags (107), {elapsed:.1f}s (<10s)",
    )
