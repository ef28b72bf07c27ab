"""Synthetic data with known ground truth.

Two generators live here. :func:`simulate_covariate_rows` draws regression
rows directly, for checking estimation and model selection. The archive
generator further down builds a whole bundled fixture (archive, replayable
web pages, calendar, follower counts) for end-to-end runs of the pipeline.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from framecount.regression.covariates import CovariateRow
from framecount.regression.design import FINAL_MODEL, INTERCEPT

# final-model effects; the intercept is shifted to suit the simulated exposures
REFERENCE_EFFECTS: dict[str, float] = {
    INTERCEPT: -14.45,
    "party": -0.142,
    "episodicity": -1.132,
    "thematicity": -0.73,
    "is_reshare": 1.526,
    "time_of_day": 0.039,
    "message_length": 0.003,
    "sqrt_proximity": 0.229,
    "party:episodicity": 0.241,
    "party:is_reshare": -1.104,
    "party:time_of_day": -0.029,
    "episodicity:sqrt_proximity": -0.079,
    "thematicity:sqrt_proximity": -0.11,
}
assert list(REFERENCE_EFFECTS) == FINAL_MODEL.column_names

SIMULATION_INTERCEPT = -17.5
FOLLOWERS = {0: 900_000, 1: 450_000}
# sparse content scores keep the interaction columns well spread
DIRICHLET = (0.3, 0.3, 0.3)


def simulation_effects(**overrides: float) -> dict[str, float]:
    """Reference effects with the intercept moved to ``SIMULATION_INTERCEPT``.

    Keyword overrides use ``__`` in place of ``:`` for interactions, e.g.
    ``party__thematicity=0.0``.
    """
    out = dict(REFERENCE_EFFECTS)
    out[INTERCEPT] = SIMULATION_INTERCEPT
    for key, value in overrides.items():
        out[key.replace("__", ":")] = value
    return out


def _linear_predictor(cov: Mapping[str, np.ndarray], effects: Mapping[str, float], n: int) -> np.ndarray:
    eta = np.full(n, effects.get(INTERCEPT, 0.0))
    for term, beta in effects.items():
        if term == INTERCEPT:
            continue
        col = np.ones(n)
        for part in term.split(":"):
            col = col * cov[part]
        eta += beta * col
    return eta


def simulate_covariate_rows(
    n: int,
    seed: int,
    effects: Mapping[str, float] | None = None,
    theta: float | None = 1.0,
) -> list[CovariateRow]:
    """Draw ``n`` posts with covariates and an NB2 (or Poisson) response.

    Covariates loosely mimic the real archive: half the posts per party,
    content scores from a Dirichlet, one post in five a reshare, lengths of
    a short message, up to about 200 days from an election and up to 450
    days old at harvest. ``theta=None`` draws Poisson counts.
    """
    effects = simulation_effects() if effects is None else dict(effects)
    rng = np.random.default_rng(seed)
    party = (np.arange(n) % 2).astype(float)
    scores = rng.dirichlet(DIRICHLET, size=n)
    cov = {
        "party": party,
        "episodicity": scores[:, 0],
        "thematicity": scores[:, 1],
        "is_reshare": (rng.random(n) < 0.2).astype(float),
        "time_of_day": rng.uniform(0.0, 24.0, n),
        "message_length": rng.integers(20, 141, n).astype(float),
        "sqrt_proximity": np.sqrt(rng.uniform(0.0, 200.0, n)),
    }
    followers = np.where(party == 1, FOLLOWERS[1], FOLLOWERS[0])
    age = rng.uniform(1.0, 450.0, n)
    offset = np.log(followers) + np.log(age)
    mu = np.exp(_linear_predictor(cov, effects, n) + offset)
    if theta is None:
        y = rng.poisson(mu)
    else:
        y = rng.poisson(rng.gamma(theta, mu / theta))
    return [
        CovariateRow(
            post_id=str(i),
            party=int(party[i]),
            episodicity=float(cov["episodicity"][i]),
            thematicity=float(cov["thematicity"][i]),
            is_reshare=int(cov["is_reshare"][i]),
            time_of_day=float(cov["time_of_day"][i]),
            message_length=int(cov["message_length"][i]),
            sqrt_proximity=float(cov["sqrt_proximity"][i]),
            offset_log=float(offset[i]),
            y=int(y[i]),
        )
        for i in range(n)
    ]


# ---------------------------------------------------------------------------
# bundled end-to-end fixture
# ---------------------------------------------------------------------------

EPISODIC, THEMATIC, UNPARSABLE = "episodic", "thematic", "unparsable"

# hand-written word lists; every word survives the bundled stopword list
TRUE_TOPICS: tuple[tuple[str, tuple[str, ...]], ...] = (
    (EPISODIC, tuple("poll polls candidate candidates primary race frontrunner challenger lead points "
                     "swing undecided voters ballot debate stage rally momentum surge survey".split())),
    (EPISODIC, tuple("scandal investigation emails subpoena hearing testimony allegations resign "
                     "resignation cover leaked memo aide staffer probe committee witness denial "
                     "outrage apology".split())),
    (EPISODIC, tuple("fundraiser donors donation dollars millions raised pac super cash quarter haul "
                     "spending ads advertising buy airtime contributors bundlers receipts filing".split())),
    (EPISODIC, tuple("speech tour visit photo selfie birthday celebrity dinner appearance interview "
                     "television host joke gaffe viral video clip remarks crowd applause".split())),
    (EPISODIC, tuple("victory defeat concede winner loser results turnout precinct count recount "
                     "margin upset incumbent seat flipped district runoff projection networks called".split())),
    (THEMATIC, tuple("health insurance coverage premiums medicaid medicare patients doctors hospitals "
                     "exchanges enrollment uninsured subsidies costs preexisting conditions benefits "
                     "prescription affordable reform".split())),
    (THEMATIC, tuple("economy jobs unemployment wages minimum wage growth deficit debt budget taxes "
                     "revenue inflation workers employers manufacturing income inequality recovery "
                     "investment infrastructure".split())),
    (UNPARSABLE, tuple("cookies privacy policy consent browser settings tracking advertisers partners "
                       "preferences accept manage data personalized notice opt device storage "
                       "analytics".split())),
    (UNPARSABLE, tuple("subscribe newsletter email sign account login password register subscribers "
                       "offer trial digital access premium unlimited articles month cancel billing "
                       "renew".split())),
    (UNPARSABLE, tuple("copyright rights reserved terms contact careers sitemap feedback advertise "
                       "corrections archives facebook twitter share comments related trending popular "
                       "section reprints".split())),
)

_FILLERS = ("the", "of", "and", "to", "in", "for", "on", "with", "as", "at", "by", "from", "is", "was")
_OUTLETS = ("dailypolitics", "capitolwire", "statehousenews", "nationalledger", "beltwayreport")

ACCOUNTS = {"TheDemocrats": "DEM", "GOP": "REP"}
FIXTURE_FOLLOWERS = {"TheDemocrats": 900_000, "GOP": 450_000}
HARVEST_INSTANT = "2014-05-25T00:00:00Z"
COVERAGE_START = {"DEM": "2013-02-13", "REP": "2013-07-31"}
COVERAGE_END = "2014-05-24"
ELECTIONS = ("2012-11-06", "2013-06-25", "2013-10-16", "2013-11-05", "2014-03-11", "2014-11-04")

# link outcome shares; the three "ok" kinds together give about 57% resolvable
LINK_KINDS = (
    ("article", 0.46),
    ("image", 0.04),
    ("stub", 0.03),
    ("none", 0.32),
    ("http404", 0.06),
    ("missing", 0.04),
    ("loop", 0.01),
    ("reuse", 0.04),
)

FIXTURE_THETA = 3.0


def _sentence(rng, words: list[str]) -> str:
    out = []
    for w in words:
        if rng.random() < 0.35:
            out.append(_FILLERS[rng.integers(len(_FILLERS))])
        out.append(w)
    out[0] = out[0].capitalize()
    return " ".join(out) + "."


def _article_html(rng, title: str, words: list[str]) -> bytes:
    sentences, i = [], 0
    while i < len(words):
        n = int(rng.integers(7, 13))
        sentences.append(_sentence(rng, words[i:i + n]))
        i += n
    paras = ["<p>" + " ".join(sentences[j:j + 4]) + "</p>" for j in range(0, len(sentences), 4)]
    return (
        "<!DOCTYPE html>\n<html><head><title>" + title + "</title>"
        "<script>window.dataLayer = [];</script><style>body{font-family:serif}</style></head>\n"
        "<body><nav><a href=\"/\">Home</a> <a href=\"/politics\">Politics</a></nav>\n"
        "<article><h1>" + title + "</h1>\n" + "\n".join(paras) + "\n</article></body></html>\n"
    ).encode("utf-8")


def _image_bytes(rng) -> bytes:
    return b"\x89PNG\r\n\x1a\n" + rng.integers(0, 256, 400, dtype=np.uint8).tobytes()


_STUB_HTML = b"<html><head><title>Video</title></head><body><p>Video unavailable in your region.</p></body></html>\n"


def _document(rng, n_words: int) -> tuple[np.ndarray, list[str]]:
    """Topic mixture and word sequence for one linked page."""
    content = rng.dirichlet(np.full(7, 0.3))
    boiler_share = rng.beta(2.0, 8.0)
    mix = np.concatenate([(1 - boiler_share) * content, boiler_share * rng.dirichlet(np.ones(3))])
    z = rng.choice(len(TRUE_TOPICS), size=n_words, p=mix)
    words = [TRUE_TOPICS[k][1][rng.integers(len(TRUE_TOPICS[k][1]))] for k in z]
    return mix, words


def _aspect_share(mix: np.ndarray, aspect: str) -> float:
    return float(sum(m for m, (a, _) in zip(mix, TRUE_TOPICS) if a == aspect))


def write_fixture(directory, seed: int = 0, n_per_party: int = 3200) -> dict:
    """Write the bundled synthetic fixture into ``directory``.

    Produces one JSON Lines archive per party account (plus two malformed
    lines in the Democratic archive), a replayable page directory
    ``replay/``, the election calendar, ground-truth files under ``truth/``
    and a ready-to-run ``framecount.cfg``. Returns a summary of the counts.
    """
    from datetime import datetime, timedelta, timezone
    import csv
    import hashlib
    import io
    import json
    from pathlib import Path

    root = Path(directory)
    (root / "replay" / "bodies").mkdir(parents=True, exist_ok=True)
    (root / "truth").mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)
    harvest = datetime.fromisoformat(HARVEST_INSTANT.replace("Z", "+00:00"))
    end = datetime.fromisoformat(COVERAGE_END + "T23:59:59+00:00")
    elections = [datetime.fromisoformat(d + "T00:00:00+00:00") for d in ELECTIONS]
    kinds = [k for k, _ in LINK_KINDS]
    shares = np.array([s for _, s in LINK_KINDS])

    drafts = []
    for account, party in ACCOUNTS.items():
        start = datetime.fromisoformat(COVERAGE_START[party] + "T00:00:00+00:00")
        span = int((end - start).total_seconds())
        for _ in range(n_per_party):
            drafts.append((start + timedelta(seconds=int(rng.integers(span))), account, party))
    drafts.sort(key=lambda d: (d[0], d[1]))

    pages: dict[str, tuple[str, str, bytes | None]] = {}  # requested -> (final, status, body)
    articles: list[tuple[str, np.ndarray, list[str]]] = []
    posts, truth_rows = [], []
    eff = simulation_effects()
    for i, (created, account, party) in enumerate(drafts):
        post_id = str(400_000_000_000_000_000 + 1_000_003 * i)
        kind = kinds[rng.choice(len(kinds), p=shares / shares.sum())]
        if kind == "reuse" and not articles:
            kind = "article"
        mix = None
        url = None
        code = f"{i:05d}{int(rng.integers(36**3)):04x}"
        short = f"http://t.example/{code}"
        if kind in ("article", "reuse"):
            if kind == "reuse":
                url, mix, words = articles[int(rng.integers(len(articles)))]
            else:
                mix, words = _document(rng, int(rng.integers(60, 111)))
                outlet = _OUTLETS[int(rng.integers(len(_OUTLETS)))]
                final = f"https://www.{outlet}.example/{created:%Y/%m}/story-{i}.html"
                title = " ".join(words[:6]).capitalize()
                pages[short] = (final, "Ok", _article_html(rng, title, words))
                url = short
                articles.append((url, mix, words))
        elif kind == "image":
            pages[short] = (f"https://img.example/{code}.png", "Ok", _image_bytes(rng))
            url = short
        elif kind == "stub":
            pages[short] = (f"https://video.example/watch/{code}", "Ok", _STUB_HTML)
            url = short
        elif kind == "http404":
            pages[short] = (f"https://www.{_OUTLETS[i % len(_OUTLETS)]}.example/gone-{i}.html",
                            "HttpError(404)", None)
            url = short
        elif kind == "missing":
            url = short  # not in the replay directory: behaves like a dead host
        elif kind == "loop":
            pages[short] = (short, "TooManyRedirects", None)
            url = short

        is_reshare = bool(rng.random() < 0.2)
        head_words = list(TRUE_TOPICS[int(rng.integers(7))][1])
        rng.shuffle(head_words)
        headline = " ".join(head_words[: int(rng.integers(3, 9))]).capitalize()
        text = (f"RT @{'NewsDesk' if party == 'DEM' else 'PressPool'}: " if is_reshare else "") + headline
        if url:
            text += " " + url
        e = _aspect_share(mix, EPISODIC) if mix is not None else 0.0
        t = _aspect_share(mix, THEMATIC) if mix is not None else 0.0
        cov = {
            "party": np.array([1.0 if party == "REP" else 0.0]),
            "episodicity": np.array([e]),
            "thematicity": np.array([t]),
            "is_reshare": np.array([float(is_reshare)]),
            "time_of_day": np.array([created.hour + created.minute / 60 + created.second / 3600]),
            "message_length": np.array([float(len(text))]),
            "sqrt_proximity": np.array([min(abs((created - d).total_seconds()) for d in elections) ** 0.5
                                        / 86400 ** 0.5]),
        }
        age = (harvest - created).total_seconds() / 86400
        mu = float(np.exp(_linear_predictor(cov, eff, 1)[0]) * FIXTURE_FOLLOWERS[account] * age)
        y = int(rng.poisson(rng.gamma(FIXTURE_THETA, mu / FIXTURE_THETA)))
        posts.append({
            "id": post_id, "created_at": created.strftime("%Y-%m-%dT%H:%M:%SZ"), "account": account,
            "party": party, "text": text, "retweet_count": y, "is_retweet": is_reshare,
        })
        truth_rows.append((post_id, kind, url or "", repr(e), repr(t)))

    for account, party in ACCOUNTS.items():
        lines = [json.dumps(p, ensure_ascii=False) for p in posts if p["account"] == account]
        if party == "DEM":
            lines.insert(10, '{"id": "broken", "created_at": "2013-03-01T00:00:00Z"')
            lines.insert(20, '{"id": "x1", "created_at": "2013-03-02", "account": "TheDemocrats", '
                             '"party": "DEM", "text": "naive timestamp", "retweet_count": 1, '
                             '"is_retweet": false}')
        (root / f"archive_{party.lower()}.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("requested_url", "final_url", "status", "body_file"))
    for requested in sorted(pages):
        final, status, body = pages[requested]
        body_file = ""
        if body is not None:
            body_file = f"bodies/{hashlib.sha256(body).hexdigest()}"
            (root / "replay" / body_file).write_bytes(body)
        writer.writerow((requested, final, status, body_file))
    (root / "replay" / "pages.csv").write_text(buf.getvalue(), encoding="utf-8")

    (root / "elections.txt").write_text("\n".join(ELECTIONS) + "\n", encoding="utf-8")
    topics_buf = io.StringIO()
    for k, (aspect, words) in enumerate(TRUE_TOPICS):
        topics_buf.write(f"{k},{aspect},{' '.join(words)}\n")
    (root / "truth" / "topics.csv").write_text(topics_buf.getvalue(), encoding="utf-8")
    tbuf = io.StringIO()
    w = csv.writer(tbuf, lineterminator="\n")
    w.writerow(("post_id", "link_kind", "url", "true_e", "true_t"))
    w.writerows(truth_rows)
    (root / "truth" / "posts.csv").write_text(tbuf.getvalue(), encoding="utf-8")
    (root / "framecount.cfg").write_text(FIXTURE_CONFIG, encoding="utf-8")
    return {
        "posts": len(posts),
        "malformed_lines": 2,
        "replay_pages": len(pages),
        "resolvable_posts": sum(r[1] in ("article", "reuse", "image", "stub") for r in truth_rows),
    }


FIXTURE_CONFIG = f"""\
# Bundled synthetic fixture. Paths are relative to this file.
archives = archive_dem.jsonl, archive_rep.jsonl
offline = true
replay_fixture = replay
output_dir = out
trim_percentile = 0.01
unparsable_threshold = 50
min_token_length = 3
min_df = 2
k_candidates = 10
lda_beta = 0.01
lda_sweeps = 300
lda_burn_in = 100
lda_thin = 10
seed = 0
labeling = labeling.csv
election_dates = elections.txt
followers = GOP:{FIXTURE_FOLLOWERS['GOP']}, TheDemocrats:{FIXTURE_FOLLOWERS['TheDemocrats']}
harvest_instant = {HARVEST_INSTANT}
alpha = 0.05
"""


def read_true_topics(path) -> list[tuple[str, frozenset[str]]]:
    from pathlib import Path

    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        _, aspect, words = line.split(",", 2)
        rows.append((aspect, frozenset(words.split())))
    return rows


def oracle_labeling(phi: np.ndarray, vocab, true_topics=None) -> str:
    """Label fitted topics by the true topic holding most of their mass.

    Stands in for the analyst reading top-word lists: each fitted topic gets
    the aspect of the generating topic whose word list carries the largest
    share of its probability. Returns labeling-file text.
    """
    true_topics = true_topics or [(a, frozenset(w)) for a, w in TRUE_TOPICS]
    tokens = list(vocab)
    lines = ["topic_index,label"]
    for k, row in enumerate(np.asarray(phi)):
        mass = [sum(row[j] for j, tok in enumerate(tokens) if tok in words) for _, words in true_topics]
        lines.append(f"{k},{true_topics[int(np.argmax(mass))][0]}")
    return "\n".join(lines) + "\n"


def label_run(output_dir, labeling_path) -> str:
    """Write the oracle labeling for the ``phi.csv`` of a finished topics stage."""
    import csv
    from pathlib import Path

    with open(Path(output_dir) / "phi.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    vocab = rows[0][1:]
    phi = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    text = oracle_labeling(phi, vocab)
    Path(labeling_path).write_text(text, encoding="utf-8")
    return text


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Write the synthetic end-to-end fixture.")
    parser.add_argument("directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--posts-per-party", type=int, default=3200)
    args = parser.parse_args(argv)
    summary = write_fixture(args.directory, args.seed, args.posts_per_party)
    for key, value in summary.items():
        print(f"{key}: {value}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
