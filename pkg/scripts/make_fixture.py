"""Write the bundled synthetic fixture to a directory.

    python scripts/make_fixture.py /tmp/fc --seed 0 --posts-per-party 3200
"""

from framecount.fixture import main

if __name__ == "__main__":
    raise SystemExit(main())
