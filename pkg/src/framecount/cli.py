"""Command-line pipeline: ingest, fetch, topics, score, fit, report.

Every stage reads the artifacts of the one before it from the output
directory and records the digests of what it wrote in ``manifest.json``.
Randomness flows from the single configured seed, so two runs with the same
config and inputs produce identical output trees.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from framecount import __version__
from framecount.aspect import UNPARSABLE_SCORES, LabelingError, load_labeling, score
from framecount.config import AnalysisConfig, ConfigError, load_config, read_calendar
from framecount.corpus import (
    NormalizationRules,
    Vocabulary,
    build_corpus,
    load_stopwords,
    read_corpus,
    trim_top_percentile,
    write_corpus,
)
from framecount.ingest import (
    FetchStatus,
    HttpFetcher,
    Party,
    PageCache,
    Post,
    ReplayFetcher,
    extract_text,
    fetch_all,
    format_timestamp,
    parse_archive,
    parse_timestamp,
)
from framecount.regression import (
    FULL_MODEL,
    ConvergenceError,
    CovariateRow,
    DesignError,
    backward_eliminate,
    coefficient_table,
    compute_offset,
    election_proximity,
    fit_spec,
    incidence_rate_ratios,
    message_age_days,
    poisson_vs_negbin,
    time_of_day,
)
from framecount.topics import LdaConfig, fit_lda, format_exact, topic_count_perplexities, write_topics

logger = logging.getLogger("framecount")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

POSTS_COLUMNS = ("id", "created_at", "account", "party", "reshare_count", "is_reshare", "urls", "text")
EXTRACTED_COLUMNS = ("requested_url", "final_url", "status", "parsable", "tokens", "text_file")
TOP_WORDS = 15


class InputError(Exception):
    """Missing or malformed input; exit code 2."""


class NumericalError(Exception):
    """Degenerate design or failed fit; exit code 3."""


@dataclass(frozen=True)
class RunOptions:
    paper_style: bool = False


# ---------------------------------------------------------------------------
# small I/O helpers
# ---------------------------------------------------------------------------


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")
    return path


def _read_csv(path: Path) -> list[dict[str, str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    except FileNotFoundError:
        raise InputError(f"missing input {path} (run the earlier stage first)") from None


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _number(x: float, paper_style: bool = False) -> str:
    """Report-table number: 10 decimals, or 3 in paper style."""
    if not math.isfinite(x):
        return repr(float(x))
    return f"{x:.3f}" if paper_style else f"{x:.10f}"


def _update_manifest(config: AnalysisConfig, stage: str, outputs: Sequence[Path], info: dict) -> None:
    out = config.output_dir
    path = out / "manifest.json"
    manifest = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    manifest["tool_version"] = __version__
    manifest["config_digest"] = config.digest()
    manifest["seed"] = config.seed
    stages = manifest.setdefault("stages", {})
    stages[stage] = {
        **info,
        "outputs": {p.relative_to(out).as_posix(): _sha256_file(p) for p in sorted(outputs)},
    }
    _write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# posts.csv
# ---------------------------------------------------------------------------


def write_posts(posts: Sequence[Post]) -> str:
    return _csv_text(POSTS_COLUMNS, (
        (p.id, format_timestamp(p.created_at), p.account, p.party.value, p.reshare_count,
         "true" if p.is_reshare else "false", " ".join(p.urls), p.text)
        for p in posts
    ))


def read_posts(path: Path) -> list[Post]:
    out = []
    for row in _read_csv(path):
        out.append(Post(
            id=row["id"], created_at=parse_timestamp(row["created_at"]), account=row["account"],
            party=Party(row["party"]), text=row["text"], reshare_count=int(row["reshare_count"]),
            is_reshare=row["is_reshare"] == "true", urls=tuple(row["urls"].split()),
        ))
    return out


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def cmd_ingest(config: AnalysisConfig, options: RunOptions = RunOptions()) -> dict:
    out = config.output_dir
    posts: list[Post] = []
    errors = []
    seen: set[str] = set()
    for archive in config.archives:
        try:
            with open(archive, "rb") as fh:
                parsed, line_errors = parse_archive(fh)
        except OSError as exc:
            raise InputError(f"cannot read archive {archive}: {exc.strerror or exc}") from None
        if not parsed:
            raise InputError(f"archive {archive} contains no valid posts")
        name = archive.name
        errors.extend((name, e.line, e.reason) for e in line_errors)
        for post in parsed:
            if post.id in seen:
                errors.append((name, 0, f"duplicate post id {post.id}"))
                continue
            seen.add(post.id)
            posts.append(post)
    kept, report = trim_top_percentile(posts, config.trim_percentile)
    outputs = [
        _write(out / "posts.csv", write_posts(kept)),
        _write(out / "trim_report.csv", _csv_text(
            ("n_before", "n_removed", "threshold_value", "n_after"),
            [(report.n_before, report.n_removed,
              "" if report.threshold_value is None else report.threshold_value, report.n_after)],
        )),
        _write(out / "archive_errors.csv", _csv_text(("archive", "line", "reason"), errors)),
    ]
    info = {"posts_parsed": len(posts), "posts_kept": len(kept), "posts_trimmed": report.n_removed,
            "malformed_lines": len(errors)}
    _update_manifest(config, "ingest", outputs, info)
    return info


def _text_file_name(url: str) -> str:
    return "texts/" + hashlib.sha256(url.encode("utf-8")).hexdigest() + ".txt"


def cmd_fetch(config: AnalysisConfig, options: RunOptions = RunOptions()) -> dict:
    out = config.output_dir
    posts = read_posts(out / "posts.csv")
    if config.offline:
        if config.replay_fixture is None:
            raise InputError("offline mode needs replay_fixture in the config")
        if not (config.replay_fixture / "pages.csv").exists():
            raise InputError(f"no pages.csv in replay fixture {config.replay_fixture}")
        fetcher = ReplayFetcher(config.replay_fixture)
    else:
        fetcher = HttpFetcher()
    cache = PageCache(config.cache_dir)
    before = len(cache)
    results = fetch_all((u for p in posts for u in p.urls), fetcher, cache,
                        config.max_redirects, config.fetch_workers)
    cache.save()
    logger.info("fetch: %d distinct URLs, %d network requests, %d cache entries before",
                len(results), getattr(fetcher, "calls", -1), before)

    rows, outputs = [], []
    for url in sorted(results):
        res = results[url]
        if res.ok:
            page = extract_text(res.body, config.unparsable_threshold, res.final_url)
            name = _text_file_name(url)
            outputs.append(_write(out / name, page.text))
            rows.append((url, res.final_url, res.status_label, "true" if page.parsable else "false",
                         page.token_estimate, name))
        else:
            rows.append((url, res.final_url, res.status_label, "", "", ""))
    outputs.append(_write(out / "extracted.csv", _csv_text(EXTRACTED_COLUMNS, rows)))
    ok = sum(r[2] == FetchStatus.OK.value for r in rows)
    info = {"distinct_urls": len(rows), "resolved": ok,
            "parsable": sum(r[3] == "true" for r in rows), "unresolvable": len(rows) - ok}
    _update_manifest(config, "fetch", outputs, info)
    return info


def _post_documents(out: Path) -> list[tuple[str, str, bool]]:
    """(post_id, text, parsable) for each post whose first resolvable link fetched."""
    pages = {r["requested_url"]: r for r in _read_csv(out / "extracted.csv")}
    docs = []
    for post in read_posts(out / "posts.csv"):
        for url in post.urls:
            row = pages.get(url)
            if row is not None and row["status"] == FetchStatus.OK.value:
                text = (out / row["text_file"]).read_text(encoding="utf-8")
                docs.append((post.id, text, row["parsable"] == "true"))
                break
    return docs


def _stopwords(config: AnalysisConfig) -> frozenset[str]:
    try:
        return load_stopwords(config.stopwords)
    except OSError as exc:
        raise InputError(f"cannot read stopwords {config.stopwords}: {exc.strerror or exc}") from None


def cmd_topics(config: AnalysisConfig, options: RunOptions = RunOptions()) -> dict:
    out = config.output_dir
    texts = _post_documents(out)
    rules = NormalizationRules(_stopwords(config), config.min_token_length)
    if not any(p for _, _, p in texts):
        raise InputError("empty parsable corpus: no fetched page has enough text")
    try:
        docs, vocab = build_corpus(texts, rules, config.min_df)
    except ValueError as exc:
        raise InputError(f"empty parsable corpus: {exc}") from None
    parsable = [d for d in docs if d.parsable]
    if not parsable:
        raise InputError("empty parsable corpus: no document keeps an in-vocabulary token")

    seed = config.stage_seed("topics")
    candidates = sorted(set(config.k_candidates))
    info: dict = {"documents": len(docs), "parsable_documents": len(parsable),
                  "vocabulary": len(vocab), "k_candidates": candidates}
    outputs = [_write(out / "corpus.csv", write_corpus(docs, vocab)),
               _write(out / "vocab.txt", vocab.to_text())]
    if len(candidates) > 1:
        lda_cfg = LdaConfig(alpha=config.lda_alpha, beta=config.lda_beta, sweeps=config.lda_sweeps,
                            burn_in=config.lda_burn_in, thin=config.lda_thin, seed=seed)
        try:
            scores = topic_count_perplexities([d.tokens for d in parsable], candidates, lda_cfg,
                                              n_words=len(vocab))
        except ValueError as exc:
            raise InputError(f"topic-count selection failed: {exc}") from None
        K = min(scores, key=lambda k: (scores[k], k))
        outputs.append(_write(out / "k_selection.csv", _csv_text(
            ("k", "perplexity"), [(k, format_exact(v)) for k, v in sorted(scores.items())])))
    else:
        K = candidates[0]
    info["k"] = K
    try:
        model = fit_lda([d.tokens for d in parsable], K, alpha=config.lda_alpha, beta=config.lda_beta,
                        sweeps=config.lda_sweeps, burn_in=config.lda_burn_in, seed=seed,
                        thin=config.lda_thin, vocab=vocab.tokens)
    except ValueError as exc:
        raise InputError(f"cannot fit LDA: {exc}") from None
    topic_cols = [f"topic_{k}" for k in range(K)]
    outputs += [
        _write(out / "theta.csv", _csv_text(
            ["post_id", *topic_cols],
            ([d.post_id, *map(format_exact, row)] for d, row in zip(parsable, model.theta)))),
        _write(out / "phi.csv", _csv_text(
            ["topic", *vocab.tokens], ([k, *map(format_exact, row)] for k, row in enumerate(model.phi)))),
        _write(out / "topics.txt", write_topics(model, TOP_WORDS)),
    ]
    _update_manifest(config, "topics", outputs, info)
    return info


def read_theta(path: Path) -> tuple[list[str], np.ndarray]:
    rows = _read_csv(path)
    if not rows:
        raise InputError(f"{path} has no rows")
    cols = [c for c in rows[0] if c != "post_id"]
    return [r["post_id"] for r in rows], np.array([[float(r[c]) for c in cols] for r in rows])


def cmd_score(config: AnalysisConfig, options: RunOptions = RunOptions()) -> dict:
    out = config.output_dir
    ids, theta = read_theta(out / "theta.csv")
    if config.labeling is None:
        raise InputError("no labeling file configured")
    try:
        text = config.labeling.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read labeling {config.labeling}: {exc.strerror or exc}") from None
    try:
        labeling = load_labeling(text, theta.shape[1])
    except LabelingError as exc:
        raise InputError(f"labeling {config.labeling}: {exc}") from None
    vocab = Vocabulary.from_text((out / "vocab.txt").read_text(encoding="utf-8"))
    docs = read_corpus((out / "corpus.csv").read_text(encoding="utf-8"), vocab)
    by_id = dict(zip(ids, theta))
    rows = []
    for doc in docs:
        s = score(by_id[doc.post_id], labeling) if doc.parsable else UNPARSABLE_SCORES
        rows.append((doc.post_id, format_exact(s.e), format_exact(s.t), format_exact(s.u)))
    outputs = [_write(out / "scores.csv", _csv_text(("post_id", "e", "t", "u"), rows))]
    info = {"scored": len(rows), "labels": [a.value for a in labeling.labels]}
    _update_manifest(config, "score", outputs, info)
    return info


def build_rows(config: AnalysisConfig, posts: Sequence[Post], scores: Sequence[dict]) -> list[CovariateRow]:
    if config.election_dates is None:
        raise InputError("no election_dates calendar configured")
    if config.harvest_instant is None:
        raise InputError("no harvest_instant configured")
    try:
        calendar = read_calendar(config.election_dates)
    except OSError as exc:
        raise InputError(f"cannot read calendar {config.election_dates}: {exc.strerror or exc}") from None
    if not calendar:
        raise InputError("empty election calendar")
    by_id = {p.id: p for p in posts}
    missing = sorted({by_id[s["post_id"]].account for s in scores} - set(config.followers))
    if missing:
        raise InputError(f"missing follower counts for account(s): {', '.join(missing)}")
    rows = []
    for s in scores:
        post = by_id[s["post_id"]]
        age = message_age_days(post.created_at, config.harvest_instant)
        try:
            offset = compute_offset(config.followers[post.account], age)
        except ValueError as exc:
            raise InputError(f"post {post.id}: {exc}") from None
        rows.append(CovariateRow(
            post_id=post.id,
            party=1 if post.party is Party.REP else 0,
            episodicity=float(s["e"]),
            thematicity=float(s["t"]),
            is_reshare=int(post.is_reshare),
            time_of_day=time_of_day(post.created_at),
            message_length=len(post.text),
            sqrt_proximity=election_proximity(post.created_at, calendar),
            offset_log=offset,
            y=post.reshare_count,
        ))
    return rows


def cmd_fit(config: AnalysisConfig, options: RunOptions = RunOptions()) -> dict:
    out = config.output_dir
    posts = read_posts(out / "posts.csv")
    scores = _read_csv(out / "scores.csv")
    rows = build_rows(config, posts, scores)
    ps = options.paper_style
    try:
        full_nb = fit_spec(rows, FULL_MODEL, "negbin")
        full_pois = fit_spec(rows, FULL_MODEL, "poisson")
        final, trail = backward_eliminate(rows, FULL_MODEL, config.alpha)
    except DesignError as exc:
        raise NumericalError(f"singular design, offending term {exc.term}: {exc}") from None
    except ConvergenceError as exc:
        raise NumericalError(f"fit did not converge: {exc}") from None
    dispersion, halved = poisson_vs_negbin(full_pois, full_nb)

    coef_rows = [(t, _number(b, ps), _number(s, ps), _number(z, ps), _number(p, ps))
                 for t, b, s, z, p in coefficient_table(final)]
    irr_rows = [(t, _number(v, ps)) for t, v in incidence_rate_ratios(final).items()]
    lr_rows = [(st.step, st.dropped_term, st.test.df, _number(st.test.statistic, ps),
                _number(st.test.p_value, ps)) for st in trail]
    lr_rows.append(("dispersion", "poisson_vs_negbin", dispersion.df,
                    _number(dispersion.statistic, ps), _number(halved, ps)))
    outputs = [
        _write(out / "coefficients.csv", _csv_text(("term", "beta", "se", "z", "p"), coef_rows)),
        _write(out / "irr.csv", _csv_text(("term", "irr"), irr_rows)),
        _write(out / "lrtests.csv", _csv_text(("step", "dropped_term", "df", "statistic", "p"), lr_rows)),
    ]
    info = {
        "n_obs": final.n_obs,
        "alpha": config.alpha,
        "final_terms": list(final.terms),
        "dropped": [st.dropped_term for st in trail],
        "theta": format_exact(final.theta),
        "log_likelihood": format_exact(final.log_likelihood),
        "note": final.note,
        "dispersion_test": {
            "df": dispersion.df, "statistic": format_exact(dispersion.statistic),
            "p_chi2": format_exact(dispersion.p_value), "p_boundary_halved": format_exact(halved),
        },
    }
    _update_manifest(config, "fit", outputs, info)
    return info


def _sorted_posts(posts: Iterable[Post]) -> list[Post]:
    return sorted(posts, key=lambda p: (p.created_at, p.id))


def cmd_report(config: AnalysisConfig, options: RunOptions = RunOptions()) -> dict:
    out = config.output_dir
    if not (out / "coefficients.csv").exists():
        raise InputError(f"missing input {out / 'coefficients.csv'} (run fit first)")
    posts = read_posts(out / "posts.csv")
    by_id = {p.id: p for p in posts}
    scores = {r["post_id"]: r for r in _read_csv(out / "scores.csv")}
    ids, theta = read_theta(out / "theta.csv")
    theta_by_id = dict(zip(ids, theta))

    def stamp(p: Post) -> str:
        return format_timestamp(p.created_at)

    retweets = [(stamp(p), p.party.value, p.reshare_count) for p in _sorted_posts(posts)]
    aspect = [(stamp(p), p.party.value, scores[p.id]["e"], scores[p.id]["t"])
              for p in _sorted_posts(by_id[i] for i in scores)]
    topic_rows = [(p.id, stamp(p), p.party.value, *map(format_exact, theta_by_id[p.id]))
                  for p in _sorted_posts(by_id[i] for i in ids)]
    outputs = [
        _write(out / "fig_retweets.csv", _csv_text(("date", "party", "reshare_count"), retweets)),
        _write(out / "fig_aspect.csv", _csv_text(("date", "party", "e", "t"), aspect)),
        _write(out / "fig_topics.csv", _csv_text(
            ("post_id", "date", "party", *[f"topic_{k}" for k in range(theta.shape[1])]), topic_rows)),
    ]
    info = {"retweet_points": len(retweets), "aspect_points": len(aspect), "topic_rows": len(topic_rows)}
    _update_manifest(config, "report", outputs, info)
    return info


def cmd_run(config: AnalysisConfig, options: RunOptions = RunOptions()) -> dict:
    """All stages in order; stops after topics when no labeling file exists yet."""
    info = {}
    for name, stage in (("ingest", cmd_ingest), ("fetch", cmd_fetch), ("topics", cmd_topics)):
        info[name] = _timed(name, stage, config, options)
    if config.labeling is None or not config.labeling.exists():
        logger.warning("no labeling file yet: label topics.txt, then run score, fit and report")
        return info
    for name, stage in (("score", cmd_score), ("fit", cmd_fit), ("report", cmd_report)):
        info[name] = _timed(name, stage, config, options)
    return info


STAGES: dict[str, Callable[[AnalysisConfig, RunOptions], dict]] = {
    "ingest": cmd_ingest,
    "fetch": cmd_fetch,
    "topics": cmd_topics,
    "score": cmd_score,
    "fit": cmd_fit,
    "report": cmd_report,
    "run": cmd_run,
}


def _timed(name, stage, config, options) -> dict:
    start = time.perf_counter()
    logger.info("stage %s started", name)
    info = stage(config, options)
    logger.info("stage %s finished in %.2fs", name, time.perf_counter() - start)
    return info


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parse_k_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("topic counts must be positive")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="flat key = value config file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    k = common.add_mutually_exclusive_group()
    k.add_argument("--k", type=int, help="fit exactly this many topics")
    k.add_argument("--select-k", type=_parse_k_list, metavar="LIST",
                   help="comma-separated candidate topic counts, chosen by held-out perplexity")
    common.add_argument("--offline", action="store_true", help="serve pages from the replay fixture")
    common.add_argument("--paper-style", action="store_true", help="round report tables to 3 decimals")
    common.add_argument("--out", type=Path, help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="framecount", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "parse archives, trim the top reshare percentile, write posts.csv",
        "fetch": "resolve and fetch every linked page once, extract text",
        "topics": "build the corpus and fit LDA (theta.csv, phi.csv, topics.txt)",
        "score": "sum labeled topic posteriors into episodicity/thematicity scores",
        "fit": "count regression with backward elimination and LR tests",
        "report": "figure-data CSVs sorted by date",
        "run": "every stage in order (stops before score if no labeling exists)",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _configure(args) -> AnalysisConfig:
    config = load_config(args.config)
    k_candidates = (args.k,) if args.k is not None else args.select_k
    if args.k is not None and args.k < 1:
        raise ConfigError("--k must be positive")
    return config.with_overrides(
        seed=args.seed, k_candidates=k_candidates, output_dir=args.out,
        offline=True if args.offline else None,
    )


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        config = _configure(args)
        config.output_dir.mkdir(parents=True, exist_ok=True)
        info = _timed(args.command, STAGES[args.command], config, RunOptions(args.paper_style))
    except (InputError, ConfigError) as exc:
        print(f"framecount: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"framecount: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
