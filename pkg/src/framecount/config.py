"""Analysis configuration: a flat ``key = value`` file mapped onto a dataclass."""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

from framecount.ingest import parse_timestamp


class ConfigError(ValueError):
    """Unreadable, incomplete or inconsistent configuration."""


# per-stage seeds are the run seed plus a fixed offset
SEED_OFFSETS = {"topics": 1, "fetch": 2}


@dataclass(frozen=True)
class AnalysisConfig:
    archives: tuple[Path, ...]
    output_dir: Path
    page_cache: Path | None = None
    offline: bool = False
    replay_fixture: Path | None = None
    trim_percentile: float = 0.01
    unparsable_threshold: int = 50
    stopwords: Path | None = None
    min_token_length: int = 3
    min_df: int = 2
    k_candidates: tuple[int, ...] = (10,)
    lda_alpha: float | None = None
    lda_beta: float = 0.01
    lda_sweeps: int = 2000
    lda_burn_in: int = 500
    lda_thin: int = 10
    seed: int = 0
    labeling: Path | None = None
    election_dates: Path | None = None
    followers: dict[str, int] = field(default_factory=dict)
    harvest_instant: datetime | None = None
    alpha: float = 0.05
    max_redirects: int = 10
    fetch_workers: int = 8
    base_dir: Path = field(default=Path("."), repr=False, compare=False)
    source_text: str = field(default="", repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.trim_percentile < 1:
            raise ConfigError("trim_percentile must be in [0, 1)")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        if not self.archives:
            raise ConfigError("at least one archive path is required")
        if not self.k_candidates or min(self.k_candidates) < 1:
            raise ConfigError("k_candidates must list positive integers")
        if self.min_df < 1 or self.min_token_length < 1:
            raise ConfigError("min_df and min_token_length must be >= 1")
        if self.lda_sweeps <= self.lda_burn_in or self.lda_burn_in < 0:
            raise ConfigError("lda_sweeps must exceed lda_burn_in >= 0")
        if any(v < 1 for v in self.followers.values()):
            raise ConfigError("follower counts must be >= 1")

    @property
    def cache_dir(self) -> Path:
        return self.page_cache if self.page_cache is not None else self.output_dir / "cache"

    def stage_seed(self, stage: str) -> int:
        return self.seed + SEED_OFFSETS[stage]

    def digest(self) -> str:
        """SHA-256 over the canonical (sorted, resolved) settings."""
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def canonical_text(self) -> str:
        """Settings as sorted ``key = value`` lines, paths relative to the config file.

        The output location is left out so that runs writing to different
        directories share a digest.
        """
        lines = []
        for f in dataclasses.fields(self):
            if f.name in _NOT_DIGESTED:
                continue
            lines.append(f"{f.name} = {_render(getattr(self, f.name), self.base_dir)}")
        return "\n".join(sorted(lines)) + "\n"

    def with_overrides(self, **changes) -> "AnalysisConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes) if changes else self


_NOT_DIGESTED = {"output_dir", "base_dir", "source_text"}


def _render(value, base: Path) -> str:
    if isinstance(value, tuple):
        return ", ".join(_render(v, base) for v in value)
    if isinstance(value, dict):
        return ", ".join(f"{k}:{v}" for k, v in sorted(value.items()))
    if isinstance(value, Path):
        return Path(os.path.relpath(value, base)).as_posix()
    if isinstance(value, datetime):
        return value.isoformat()
    return "" if value is None else str(value)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _followers(text: str) -> dict[str, int]:
    out = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        account, sep, count = item.rpartition(":")
        if not sep or not account.strip():
            raise ValueError(f"expected account:count, got {item!r}")
        out[account.strip()] = int(count)
    return out


_PATH_KEYS = {"output_dir", "page_cache", "replay_fixture", "stopwords", "labeling", "election_dates"}
_PARSERS = {
    "offline": _bool,
    "trim_percentile": float,
    "unparsable_threshold": int,
    "min_token_length": int,
    "min_df": int,
    "k_candidates": _int_list,
    "lda_alpha": float,
    "lda_beta": float,
    "lda_sweeps": int,
    "lda_burn_in": int,
    "lda_thin": int,
    "seed": int,
    "followers": _followers,
    "harvest_instant": parse_timestamp,
    "alpha": float,
    "max_redirects": int,
    "fetch_workers": int,
}


def parse_config(text: str, base_dir: Path | str = ".") -> AnalysisConfig:
    """Parse ``key = value`` lines; relative paths resolve against ``base_dir``."""
    base = Path(base_dir)
    known = {f.name for f in dataclasses.fields(AnalysisConfig)} - {"source_text", "base_dir"}
    values: dict = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {n}: expected key = value")
        if key not in known:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        try:
            if key == "archives":
                values[key] = tuple(base / p.strip() for p in value.split(",") if p.strip())
            elif key in _PATH_KEYS:
                values[key] = base / value if value else None
            elif value == "" and key in ("lda_alpha",):
                values[key] = None
            else:
                values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {n}: bad value for {key}: {exc}") from exc
    if "archives" not in values:
        raise ConfigError("missing required key 'archives'")
    values.setdefault("output_dir", base / "out")
    return AnalysisConfig(**values, base_dir=base, source_text=text)


def load_config(path: Path | str) -> AnalysisConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text, path.parent)


def read_calendar(path: Path) -> list[date]:
    """ISO dates, one per line; blank lines and ``#`` comments ignored."""
    out = []
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            out.append(date.fromisoformat(line))
        except ValueError as exc:
            raise ConfigError(f"{path}:{n}: not an ISO date: {line!r}") from exc
    return out
