"""Label the fitted topics of a fixture run against the generating topics.

Reads ``phi.csv`` from a finished topics stage and writes a labeling file,
standing in for the analyst who would otherwise read the top-word lists.

    python scripts/label_fixture_topics.py /tmp/fc/out /tmp/fc/labeling.csv
"""

import argparse

from framecount.fixture import label_run


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("output_dir", help="run directory containing phi.csv")
    parser.add_argument("labeling", help="labeling file to write")
    args = parser.parse_args(argv)
    print(label_run(args.output_dir, args.labeling), end="")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
