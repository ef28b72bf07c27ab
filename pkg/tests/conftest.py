from pathlib import Path

import pytest

from framecount.fixture import write_fixture

SMALL_LDA = {"lda_sweeps": "60", "lda_burn_in": "20"}


def set_config_keys(path: Path, **values) -> Path:
    """Rewrite ``key = value`` lines of a config file in place (adding missing keys)."""
    lines = path.read_text(encoding="utf-8").splitlines()
    seen = set()
    for i, line in enumerate(lines):
        key = line.partition("=")[0].strip()
        if key in values:
            lines[i] = f"{key} = {values[key]}"
            seen.add(key)
    lines += [f"{k} = {v}" for k, v in values.items() if k not in seen]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory) -> Path:
    """A 600-post copy of the bundled fixture with a short LDA schedule."""
    root = tmp_path_factory.mktemp("small_fixture")
    write_fixture(root, seed=1, n_per_party=300)
    set_config_keys(root / "framecount.cfg", **SMALL_LDA)
    return root


def pytest_terminal_summary(terminalreporter):
    import sys

    results = {}
    for name, module in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            results.update(getattr(module, "RESULTS", {}))
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
