import csv
import io
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from framecount.cli import main, read_posts, write_posts
from framecount.config import ConfigError, load_config, parse_config
from framecount.fixture import label_run
from tests.conftest import set_config_keys


@pytest.fixture
def fx(small_fixture, tmp_path) -> Path:
    root = tmp_path / "fx"
    shutil.copytree(small_fixture, root)
    return root


def cli(root: Path, *args: str) -> int:
    return main([args[0], "--config", str(root / "framecount.cfg"), *args[1:]])


def run_through_topics(root: Path, *extra: str) -> None:
    for stage in ("ingest", "fetch", "topics"):
        assert cli(root, stage, *extra) == 0


def run_all(root: Path, *extra: str) -> None:
    run_through_topics(root, *extra)
    label_run(root / "out", root / "labeling.csv")
    for stage in ("score", "fit", "report"):
        assert cli(root, stage, *extra) == 0


def read_rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def tree(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# --- config -----------------------------------------------------------------------

class TestConfig:
    def test_relative_paths_and_types(self, tmp_path):
        cfg = parse_config(
            "# comment\narchives = a.jsonl, sub/b.jsonl\nk_candidates = 5, 10\noffline = yes\n"
            "followers = GOP:10, Dems:20\nharvest_instant = 2014-05-25T00:00:00Z\n",
            tmp_path,
        )
        assert cfg.archives == (tmp_path / "a.jsonl", tmp_path / "sub/b.jsonl")
        assert cfg.k_candidates == (5, 10) and cfg.offline is True
        assert cfg.followers == {"GOP": 10, "Dems": 20}
        assert cfg.trim_percentile == 0.01 and cfg.alpha == 0.05
        assert cfg.output_dir == tmp_path / "out" and cfg.cache_dir == tmp_path / "out" / "cache"

    @pytest.mark.parametrize(
        "text, match",
        [
            ("output_dir = x\n", "archives"),
            ("archives = a\nbogus = 1\n", "unknown key"),
            ("archives = a\nseed = 1\nseed = 2\n", "duplicate"),
            ("archives = a\nalpha = 1.0\n", "alpha"),
            ("archives = a\ntrim_percentile = 1\n", "trim_percentile"),
            ("archives = a\nfollowers = GOP\n", "account:count"),
            ("archives = a\nseed\n", "key = value"),
            ("archives = a\nlda_sweeps = 10\nlda_burn_in = 10\n", "lda_sweeps"),
        ],
    )
    def test_errors(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config(text)

    def test_digest_ignores_output_location(self, tmp_path):
        a = parse_config("archives = a\noutput_dir = one\n", tmp_path)
        b = parse_config("archives = a\noutput_dir = two\n", tmp_path)
        c = parse_config("archives = a\nseed = 3\n", tmp_path)
        assert a.digest() == b.digest() != c.digest()
        # moving the whole project leaves the digest unchanged
        assert parse_config("archives = a\n", tmp_path / "elsewhere").digest() == a.digest()

    def test_missing_config_exit_code(self, tmp_path, capsys):
        assert main(["ingest", "--config", str(tmp_path / "nope.cfg")]) == 2
        assert "cannot read config" in capsys.readouterr().err


# --- ingest -----------------------------------------------------------------------

class TestIngest:
    def test_counts_and_errors(self, fx):
        assert cli(fx, "ingest") == 0
        report = read_rows(fx / "out" / "trim_report.csv")[0]
        assert (report["n_before"], report["n_removed"], report["n_after"]) == ("600", "6", "594")
        errors = read_rows(fx / "out" / "archive_errors.csv")
        assert [e["archive"] for e in errors] == ["archive_dem.jsonl"] * 2

    def test_empty_archive(self, fx, capsys):
        (fx / "archive_rep.jsonl").write_text("")
        assert cli(fx, "ingest") == 2
        assert "no valid posts" in capsys.readouterr().err

    def test_missing_archive(self, fx):
        (fx / "archive_rep.jsonl").unlink()
        assert cli(fx, "ingest") == 2

    def test_rerun_identical(self, fx):
        assert cli(fx, "ingest") == 0
        first = tree(fx / "out")
        assert cli(fx, "ingest") == 0
        assert tree(fx / "out") == first

    def test_posts_csv_round_trip(self, fx):
        assert cli(fx, "ingest") == 0
        text = (fx / "out" / "posts.csv").read_text(encoding="utf-8")
        assert write_posts(read_posts(fx / "out" / "posts.csv")) == text


# --- fetch ------------------------------------------------------------------------

def _mini_project(root: Path) -> Path:
    """Ten linked posts: seven pages resolve (one an image), three do not."""
    (root / "replay" / "bodies").mkdir(parents=True)
    words = " ".join(["policy budget hospital coverage reform"] * 12)
    html = f"<html><body><p>{words}</p></body></html>".encode()
    rows = []
    for i in range(6):
        body = html.replace(b"<p>", f"<p>page{i} ".encode())
        (root / "replay" / "bodies" / f"p{i}").write_bytes(body)
        rows.append((f"http://s.example/{i}", f"https://news.example/{i}", "Ok", f"bodies/p{i}"))
    (root / "replay" / "bodies" / "img").write_bytes(b"\x89PNG\r\n\x1a\n" + bytes(200))
    rows.append(("http://s.example/6", "https://img.example/6.png", "Ok", "bodies/img"))
    rows.append(("http://s.example/7", "https://news.example/7", "HttpError(404)", ""))
    rows.append(("http://s.example/8", "http://s.example/8", "TooManyRedirects", ""))
    # http://s.example/9 is absent from the replay directory
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(
        [("requested_url", "final_url", "status", "body_file"), *rows])
    (root / "replay" / "pages.csv").write_text(buf.getvalue())
    lines = [
        json.dumps({"id": str(i), "created_at": f"2014-01-{i + 1:02d}T12:00:00Z", "account": "GOP",
                    "party": "REP", "text": f"read http://s.example/{i}", "retweet_count": i,
                    "is_retweet": False})
        for i in range(10)
    ]
    (root / "a.jsonl").write_text("\n".join(lines) + "\n")
    (root / "framecount.cfg").write_text(
        "archives = a.jsonl\noffline = true\nreplay_fixture = replay\ntrim_percentile = 0\n")
    return root


class TestFetch:
    def test_fixture_accounting(self, tmp_path):
        root = _mini_project(tmp_path)
        assert cli(root, "ingest") == 0 and cli(root, "fetch") == 0
        rows = read_rows(root / "out" / "extracted.csv")
        ok = [r for r in rows if r["status"] == "Ok"]
        assert len(rows) == 10 and len(ok) == 7
        assert sorted(r["status"] for r in rows if r["status"] != "Ok") == [
            "HttpError(404)", "Timeout", "TooManyRedirects"]
        assert all((root / "out" / r["text_file"]).exists() for r in ok)
        image = next(r for r in rows if r["requested_url"].endswith("/6"))
        assert image["parsable"] == "false" and image["final_url"].endswith(".png")

    def test_rerun_uses_cache_only(self, tmp_path):
        root = _mini_project(tmp_path)
        assert cli(root, "ingest") == 0 and cli(root, "fetch") == 0
        first = tree(root / "out")
        shutil.rmtree(root / "replay")
        (root / "replay").mkdir()
        (root / "replay" / "pages.csv").write_text("requested_url,final_url,status,body_file\n")
        assert cli(root, "fetch") == 0
        assert tree(root / "out") == first

    def test_offline_without_fixture(self, tmp_path, capsys):
        root = _mini_project(tmp_path)
        shutil.rmtree(root / "replay")
        assert cli(root, "ingest") == 0
        assert cli(root, "fetch") == 2
        assert "replay fixture" in capsys.readouterr().err

    def test_empty_parsable_corpus(self, tmp_path, capsys):
        root = _mini_project(tmp_path)
        set_config_keys(root / "framecount.cfg", unparsable_threshold="100000")
        for stage in ("ingest", "fetch"):
            assert cli(root, stage) == 0
        assert cli(root, "topics") == 2
        assert "empty parsable corpus" in capsys.readouterr().err


# --- topics, score, fit, report ---------------------------------------------------------

class TestTopics:
    def test_fixed_k(self, fx):
        run_through_topics(fx, "--k", "4")
        header = (fx / "out" / "theta.csv").read_text().splitlines()[0]
        assert header == "post_id,topic_0,topic_1,topic_2,topic_3"
        assert len((fx / "out" / "topics.txt").read_text().splitlines()) == 4

    def test_select_k_recorded(self, fx):
        run_through_topics(fx, "--select-k", "2,4")
        manifest = json.loads((fx / "out" / "manifest.json").read_text())
        scores = read_rows(fx / "out" / "k_selection.csv")
        best = min(scores, key=lambda r: (float(r["perplexity"]), int(r["k"])))
        assert manifest["stages"]["topics"]["k"] == int(best["k"])

    def test_seeded_rerun_identical(self, fx):
        run_through_topics(fx)
        first = (fx / "out" / "theta.csv").read_bytes()
        assert cli(fx, "topics") == 0
        assert (fx / "out" / "theta.csv").read_bytes() == first
        assert cli(fx, "topics", "--seed", "5") == 0
        assert (fx / "out" / "theta.csv").read_bytes() != first

    def test_theta_rows_stochastic(self, fx):
        run_through_topics(fx)
        rows = read_rows(fx / "out" / "theta.csv")
        theta = np.array([[float(v) for k, v in r.items() if k != "post_id"] for r in rows])
        np.testing.assert_allclose(theta.sum(axis=1), 1.0, atol=1e-9)


class TestScore:
    def test_partition_and_unparsable_rows(self, fx):
        run_all(fx)
        scores = read_rows(fx / "out" / "scores.csv")
        corpus = {r["post_id"]: r["parsable"] for r in read_rows(fx / "out" / "corpus.csv")}
        assert len(scores) == len(corpus)
        for r in scores:
            total = float(r["e"]) + float(r["t"]) + float(r["u"])
            assert abs(total - 1) <= 1e-9
            if corpus[r["post_id"]] == "false":
                assert (r["e"], r["t"], r["u"]) == ("0.0", "0.0", "1.0")

    def test_all_thematic(self, fx):
        run_through_topics(fx)
        (fx / "labeling.csv").write_text("".join(f"{k},thematic\n" for k in range(10)))
        assert cli(fx, "score") == 0
        parsable = {r["post_id"] for r in read_rows(fx / "out" / "theta.csv")}
        for r in read_rows(fx / "out" / "scores.csv"):
            assert float(r["e"]) == 0.0
            if r["post_id"] in parsable:
                assert float(r["t"]) == pytest.approx(1.0, abs=1e-9)

    def test_missing_labeling(self, fx):
        run_through_topics(fx)
        assert cli(fx, "score") == 2

    def test_k_mismatch(self, fx, capsys):
        run_through_topics(fx)
        (fx / "labeling.csv").write_text("".join(f"{k},thematic\n" for k in range(9)))
        assert cli(fx, "score") == 2
        assert "incomplete labeling" in capsys.readouterr().err


class TestFit:
    def test_outputs(self, fx):
        run_all(fx)
        coefs = read_rows(fx / "out" / "coefficients.csv")
        irr = read_rows(fx / "out" / "irr.csv")
        assert [c["term"] for c in coefs] == [r["term"] for r in irr]
        for c, r in zip(coefs, irr):
            assert float(r["irr"]) == pytest.approx(np.exp(float(c["beta"])), rel=1e-8, abs=1e-10)
            assert len(c["beta"].split(".")[1]) >= 6
        lr = read_rows(fx / "out" / "lrtests.csv")
        assert lr[-1]["step"] == "dispersion" and lr[-1]["df"] == "1"
        dropped = [r["dropped_term"] for r in lr[:-1]]
        assert len(coefs) == 15 - len(dropped)

    def test_three_decimal_report_option(self, fx):
        run_all(fx)
        assert cli(fx, "fit", "--paper-style") == 0
        beta = read_rows(fx / "out" / "coefficients.csv")[1]["beta"]
        assert len(beta.split(".")[1]) == 3

    def test_alpha_sensitivity(self, fx):
        run_all(fx)
        low = [r["dropped_term"] for r in read_rows(fx / "out" / "lrtests.csv")][:-1]
        set_config_keys(fx / "framecount.cfg", alpha="0.10")
        assert cli(fx, "fit") == 0
        lr = read_rows(fx / "out" / "lrtests.csv")[:-1]
        high = [r["dropped_term"] for r in lr]
        # a larger alpha can only keep more terms; shared steps agree
        assert high == low[: len(high)]
        assert all(float(r["p"]) > 0.10 for r in lr)

    def test_missing_followers(self, fx, capsys):
        run_all(fx)
        set_config_keys(fx / "framecount.cfg", followers="GOP:450000")
        assert cli(fx, "fit") == 2
        assert "TheDemocrats" in capsys.readouterr().err

    def test_singular_design_exit_3(self, fx, capsys):
        run_all(fx)
        posts = fx / "out" / "posts.csv"
        rows = read_rows(posts)
        for r in rows:
            r["is_reshare"] = "false"
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        posts.write_text(buf.getvalue())
        assert cli(fx, "fit") == 3
        assert "is_reshare" in capsys.readouterr().err


class TestReport:
    def test_counts_order_and_round_trip(self, fx):
        run_all(fx)
        out = fx / "out"
        aspect = read_rows(out / "fig_aspect.csv")
        assert len(aspect) == len(read_rows(out / "scores.csv"))
        assert len(read_rows(out / "fig_retweets.csv")) == len(read_rows(out / "posts.csv"))
        for name in ("fig_retweets.csv", "fig_aspect.csv", "fig_topics.csv"):
            rows = read_rows(out / name)
            dates = [r["date"] for r in rows]
            assert dates == sorted(dates)
        for path in sorted(out.glob("*.csv")):
            text = path.read_text(encoding="utf-8")
            rows = list(csv.reader(io.StringIO(text)))
            buf = io.StringIO()
            csv.writer(buf, lineterminator="\n").writerows(rows)
            assert buf.getvalue() == text, path.name

    def test_needs_fit(self, fx):
        run_through_topics(fx)
        label_run(fx / "out", fx / "labeling.csv")
        assert cli(fx, "score") == 0
        assert cli(fx, "report") == 2

    def test_stage_isolation(self, fx):
        run_all(fx)
        out = fx / "out"
        before = tree(out)
        for name in ("scores.csv", "coefficients.csv", "irr.csv", "lrtests.csv",
                     "fig_retweets.csv", "fig_aspect.csv", "fig_topics.csv"):
            (out / name).unlink()
        for stage in ("score", "fit", "report"):
            assert cli(fx, stage) == 0
        assert tree(out) == before


def test_run_command_pauses_without_labeling(fx):
    assert cli(fx, "run") == 0
    assert (fx / "out" / "theta.csv").exists() and not (fx / "out" / "scores.csv").exists()
    label_run(fx / "out", fx / "labeling.csv")
    assert cli(fx, "run") == 0
    assert (fx / "out" / "fig_topics.csv").exists()


def test_manifest_digests(fx):
    run_all(fx)
    out = fx / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    cfg = load_config(fx / "framecount.cfg")
    assert manifest["config_digest"] == cfg.digest()
    import hashlib
    for stage in manifest["stages"].values():
        for name, digest in stage["outputs"].items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
