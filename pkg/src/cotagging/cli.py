"""Command-line pipeline: ingest, fit, generate, replicate, analyze, compare.

Every subcommand accepts ``--seed``, ``--jobs`` and ``--out``; their defaults
can be overridden with ``COTAG_SEED``, ``COTAG_JOBS`` and ``COTAG_OUT``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure. On
failure a JSON error object is written to stderr.
"""

from __future__ import annotations

import argparse
import csv
import errno
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache, partial
from importlib import resources
from pathlib import Path

import jsonschema

from . import analysis, distfit, generator, ingest
from .errors import CotagError, DataError, NumericError, ParseError

logger = logging.getLogger("cotagging")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
ENV_PREFIX = "COTAG_"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- file helpers ---------------------------------------------------------------


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("cotagging").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _finite(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps(obj) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def atomic_write(path: Path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj: dict, schema: str) -> None:
    obj = _finite(obj)
    jsonschema.validate(obj, load_schema(schema))
    atomic_write(path, dumps(obj))


def write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else v) for k, v in _finite(row).items()})
    atomic_write(path, buf.getvalue())


def community_name(path: Path) -> str:
    path = Path(path)
    if path.name.lower() == "posts.xml":
        name = path.resolve().parent.name
        return name.removesuffix(".stackexchange.com").removesuffix(".com")
    return path.name.removesuffix(".tsv").removesuffix(".xml")


def _expand(paths, patterns) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            found = sorted({f for pat in patterns for f in p.rglob(pat) if f.is_file()})
            if not found:
                logger.warning("no input files under %s", p)
            out.extend(found)
        elif p.exists():
            out.append(p)
        else:
            raise FileNotFoundError(errno.ENOENT, "no such file", str(p))
    return out


def load_dataset(path: Path) -> ingest.CommunityDataset:
    name = community_name(path)
    with open(path, "rb") as fh:
        if path.suffix.lower() == ".xml":
            return ingest.parse_posts_xml(fh, name)
        return ingest.parse_tsv(fh, name)


def load_graph(path: Path) -> ingest.BipartiteTagGraph:
    return ingest.build_bipartite(load_dataset(Path(path)))


def derive_seed(base_seed: int, community: str, replicate: int) -> int:
    """64-bit seed for replicate ``replicate`` of ``community``; platform independent."""
    digest = hashlib.blake2b(f"{base_seed}\x1f{community}\x1f{replicate}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


# -- subcommands ------------------------------------------------------------------


def _ingest_one(path: Path, out: Path) -> dict:
    dataset = load_dataset(path)
    graph = ingest.build_bipartite(dataset)
    summ = ingest.summary(graph).to_dict()
    summ.update(
        schema_version=1,
        community=dataset.name,
        rejected=dict(sorted(dataset.rejected.items())),
        n_collapsed_duplicates=graph.n_collapsed_duplicates,
    )
    atomic_write(out / f"{dataset.name}.tsv", ingest.to_tsv_bytes(graph))
    write_json(out / f"{dataset.name}.summary.json", summ, "summary")
    return summ


def cmd_ingest(args) -> int:
    paths = _expand(args.paths, ("*.xml", "*.tsv"))
    out = Path(args.out or ".")
    if not paths:
        logger.warning("no communities to ingest")
    names = [community_name(p) for p in paths]
    if len(set(names)) != len(names):
        raise DataError("two inputs map to the same community name")
    for summ in _map(partial(_ingest_one, out=out), paths, args.jobs):
        print(json.dumps({k: summ[k] for k in ("community", "n_tags", "n_questions", "m")}, sort_keys=True))
    return 0


def _fit_one(path: Path, families, out: Path) -> dict:
    name = community_name(path)
    x = load_graph(path).frequencies
    fits, errors = {}, {}
    for family in families:
        try:
            fits[family] = distfit.fit(x, family)
        except CotagError as exc:
            errors[family] = str(exc)
    lr = {}
    if "lognormal" in fits:
        for alt, alt_fit in fits.items():
            if alt == "lognormal":
                continue
            try:
                lr[alt] = distfit.likelihood_ratio_test(x, fits["lognormal"], alt_fit).to_dict()
            except CotagError as exc:
                errors[f"lr_{alt}"] = str(exc)
    record = {
        "schema_version": 1,
        "community": name,
        "fits": {k: v.to_dict() for k, v in fits.items()},
        "lr_tests": lr,
        "errors": errors,
    }
    write_json(out / f"{name}.fit.json", record, "fit")
    return record


def _fit_row(record, families) -> dict:
    row = {"community": record["community"]}
    for family in families:
        f = record["fits"].get(family)
        if f is None:
            continue
        row[f"{family}_D"] = f["D"]
        row[f"{family}_loglik"] = f["loglik"]
        for key, value in f["params"].items():
            row[f"{family}_{key}"] = value
    for alt, res in record["lr_tests"].items():
        row[f"lr_{alt}_R"] = res["R"]
        row[f"lr_{alt}_p"] = res["p"]
    return row


_PARAM_NAMES = {
    "lognormal": ("mu", "sigma"),
    "powerlaw": ("alpha",),
    "truncated_powerlaw": ("alpha", "lambda"),
    "stretched_exponential": ("lambda", "beta"),
}


def cmd_fit(args) -> int:
    families = tuple(dict.fromkeys(args.family or distfit.FAMILIES))
    paths = _expand(args.paths, ("*.tsv",))
    out = Path(args.out or ".")
    records = _map(partial(_fit_one, families=families, out=out), paths, args.jobs)
    header = ["community"]
    for family in families:
        header += [f"{family}_D", f"{family}_loglik"] + [f"{family}_{p}" for p in _PARAM_NAMES[family]]
    if "lognormal" in families:
        for alt in families:
            if alt != "lognormal":
                header += [f"lr_{alt}_R", f"lr_{alt}_p"]
    write_csv(out / "fits.csv", header, [_fit_row(r, families) for r in records])
    return 0


def _generation_record(config: generator.GeneratorConfig, report, community=None, replicate=None) -> dict:
    record = {
        "schema_version": 1,
        "config": {
            "n_tags": config.n_tags,
            "n_questions": config.n_questions,
            "m": config.m,
            "mu": config.mu,
            "sigma": config.sigma,
            "seed": config.seed,
        },
        "report": report.to_dict(),
    }
    if community is not None:
        record["community"] = community
        record["replicate"] = replicate
    return record


def cmd_generate(args) -> int:
    if not args.out:
        raise UsageError("generate needs --out FILE")
    config = generator.GeneratorConfig(args.tags, args.questions, args.occurrences, args.mu, args.sigma, args.seed)
    graph, report = generator.generate(config, clamp=args.clamp)
    out = Path(args.out)
    atomic_write(out, ingest.to_tsv_bytes(graph))
    write_json(out.with_name(out.name.removesuffix(".tsv") + ".report.json"), _generation_record(config, report), "generation_report")
    return 0


def _lognormal_params(path: Path, fits_dir: Path | None, x) -> tuple[float, float]:
    if fits_dir is not None:
        fit_path = fits_dir / f"{community_name(path)}.fit.json"
        if fit_path.exists():
            params = json.loads(fit_path.read_text())["fits"]["lognormal"]["params"]
            return params["mu"], params["sigma"]
        logger.warning("no fit file %s; fitting lognormal directly", fit_path)
    fit = distfit.fit_lognormal(x)
    return fit.params["mu"], fit.params["sigma"]


def _replicate_one(path: Path, reps: int, seed: int, fits_dir, out: Path, clamp: bool) -> list[dict]:
    name = community_name(path)
    graph = load_graph(path)
    mu, sigma = _lognormal_params(path, fits_dir, graph.frequencies)
    records = []
    for r in range(reps):
        config = generator.GeneratorConfig(graph.n_tags, graph.n_questions, graph.m, mu, sigma, derive_seed(seed, name, r))
        generated, report = generator.generate(config, clamp=clamp)
        atomic_write(out / f"{name}.rep{r}.tsv", ingest.to_tsv_bytes(generated))
        record = _generation_record(config, report, name, r)
        write_json(out / f"{name}.rep{r}.report.json", record, "generation_report")
        records.append(record)
    return records


def cmd_replicate(args) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    paths = _expand(args.paths, ("*.tsv",))
    fits_dir = Path(args.fits) if args.fits else None
    work = partial(
        _replicate_one, reps=args.reps, seed=args.seed, fits_dir=fits_dir, out=Path(args.out or "."), clamp=args.clamp
    )
    for records in _map(work, paths, args.jobs):
        for rec in records:
            print(json.dumps({"community": rec["community"], "replicate": rec["replicate"],
                              "n_questions_surviving": rec["report"]["n_questions_surviving"]}, sort_keys=True))
    return 0


ANALYSIS_COLUMNS = (
    ["community", "n_tags", "n_questions", "m", "mu", "sigma", "D", "slope", "intercept", "r2"]
    + ["a0", "a1", "a2", "a3", "cubic_mse", "C", "Cw", "logCw", "Clw"]
    + [f"tpq_{label}" for label in analysis.TPQ_LABELS]
)


def _analysis_row(report: dict) -> dict:
    row = {k: report[k] for k in ("community", "n_tags", "n_questions", "m")}
    for section, keys in (
        ("lognormal", ("mu", "sigma", "D")),
        ("linear", ("slope", "intercept", "r2")),
        ("cubic", ("a0", "a1", "a2", "a3")),
        ("clustering", ("C", "Cw", "logCw", "Clw")),
    ):
        sec = report[section] or {}
        for key in keys:
            row[key] = sec.get(key)
    row["cubic_mse"] = (report["cubic"] or {}).get("mse")
    for label, value in zip(analysis.TPQ_LABELS, report["tags_per_question"] or [None] * 6):
        row[f"tpq_{label}"] = value
    return row


def _analyze_one(path: Path, out: Path) -> dict:
    name = community_name(path)
    report = analysis.analyze_graph(load_graph(path), name).to_dict()
    write_json(out / f"{name}.analysis.json", report, "analysis_report")
    return report


def cmd_analyze(args) -> int:
    paths = _expand(args.paths, ("*.tsv",))
    out = Path(args.out or ".")
    reports = _map(partial(_analyze_one, out=out), paths, args.jobs)
    write_csv(out / "analysis.csv", ANALYSIS_COLUMNS, [_analysis_row(r) for r in reports])
    return 0


def _load_reports(paths) -> list[dict]:
    files = _expand(paths, ("*.analysis.json",))
    reports = []
    for f in files:
        report = json.loads(Path(f).read_text())
        jsonschema.validate(report, load_schema("analysis_report"))
        reports.append(report)
    return reports


def cmd_compare(args) -> int:
    result = analysis.compare_model_to_data(_load_reports(args.data), _load_reports(args.model))
    if args.out:
        write_json(Path(args.out), result, "comparison")
    else:
        result = _finite(result)
        jsonschema.validate(result, load_schema("comparison"))
        sys.stdout.write(dumps(result))
    return 0


# -- entry point ------------------------------------------------------------------------


def _env(name, default, cast):
    value = os.environ.get(ENV_PREFIX + name)
    if value is None:
        return default
    try:
        return cast(value)
    except ValueError:
        raise UsageError(f"bad value for {ENV_PREFIX}{name}: {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=_env("SEED", 0, int), help="base random seed (default 0)")
    common.add_argument("--jobs", type=int, default=_env("JOBS", os.cpu_count() or 1, int), help="worker processes")
    common.add_argument("--out", default=_env("OUT", None, str), help="output directory (or file for generate/compare)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="cotag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="parse Posts.xml or TSV into canonical TSV + summary JSON")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", parents=[common], help="fit heavy-tailed distributions to tag frequencies")
    p.add_argument("paths", nargs="+")
    p.add_argument("--family", action="append", choices=distfit.FAMILIES, help="restrict to a family (repeatable)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("generate", parents=[common], help="sample one random bipartite graph")
    p.add_argument("--tags", type=int, required=True)
    p.add_argument("--questions", type=int, required=True)
    p.add_argument("--occurrences", type=int, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--clamp", action="store_true", help="clamp frequencies above the corrected question count")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("replicate", parents=[common], help="generate model graphs matching each community")
    p.add_argument("paths", nargs="+")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--fits", help="directory holding <community>.fit.json files")
    p.add_argument("--clamp", action="store_true")
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("analyze", parents=[common], help="co-tagging statistics per community")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", parents=[common], help="compare data and model analysis reports")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--model", nargs="+", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def _fail(kind: str, message: str, code: int, offset=None, path=None) -> int:
    payload = {"error": kind, "message": message, "exit_code": code, "offset": offset, "path": path}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except ParseError as exc:
        return _fail("parse", str(exc), EXIT_DATA, offset=exc.offset)
    except FileNotFoundError as exc:
        return _fail("missing_input", str(exc), EXIT_DATA, path=exc.filename)
    except NumericError as exc:
        return _fail("numeric", str(exc), EXIT_NUMERIC)
    except (DataError, jsonschema.ValidationError, json.JSONDecodeError, KeyError) as exc:
        return _fail("data", str(exc), EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
