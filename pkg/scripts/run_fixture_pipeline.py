"""End-to-end run on a freshly generated fixture.

Generates the fixture, runs ingest, fetch and topics, labels the topics
with the oracle, then scores, fits and writes the report tables. Prints the
final coefficient table next to the generating effects.

    python scripts/run_fixture_pipeline.py /tmp/fc --seed 0
"""

import argparse
import csv
import json
from pathlib import Path

from framecount.cli import main as cli_main
from framecount.fixture import FIXTURE_THETA, REFERENCE_EFFECTS, label_run, write_fixture


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--posts-per-party", type=int, default=3200)
    args = parser.parse_args(argv)

    root = Path(args.directory)
    write_fixture(root, args.seed, args.posts_per_party)
    cfg = str(root / "framecount.cfg")
    out = root / "out"
    for stage in ("ingest", "fetch", "topics"):
        if (code := cli_main([stage, "--config", cfg])) != 0:
            return code
    label_run(out, root / "labeling.csv")
    for stage in ("score", "fit", "report"):
        if (code := cli_main([stage, "--config", cfg])) != 0:
            return code

    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    fit = manifest["stages"]["fit"]
    print()
    print(f"dropped terms: {fit.get('dropped')}")
    print(f"theta: {fit.get('theta')} (generating value {FIXTURE_THETA})")
    print(f"{'term':30s} {'beta':>10s} {'p':>10s}")
    with open(out / "coefficients.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            print(f"{row['term']:30s} {float(row['beta']):10.3f} {float(row['p']):10.3g}")
    print("generating effects (the fixture uses its own intercept):")
    for term, beta in REFERENCE_EFFECTS.items():
        print(f"  {term:28s} {beta:10.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
