"""Review-log ingestion, lexeme parsing, and train/test splitting.

The input format is the public spaced-repetition practice log: a UTF-8
CSV with one row per (learner, word, session) observation. Ingestion is
streaming and single-pass; malformed rows are counted and skipped rather
than aborting a multi-million-row run.
"""
from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

from .errors import FormatError, NoDataError

LOG_COLUMNS = (
    "p_recall",
    "timestamp",
    "delta",
    "user_id",
    "learning_language",
    "ui_language",
    "lexeme_id",
    "lexeme_string",
    "history_seen",
    "history_correct",
    "session_seen",
    "session_correct",
)

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True, slots=True)
class ReviewEvent:
    """One learner-word practice record."""

    user_id: str
    lexeme_id: str
    lexeme_string: str
    observed_recall: float
    delta_days: float
    history_seen: int
    history_correct: int
    session_seen: int
    session_correct: int
    timestamp: int


@dataclass
class IngestStats:
    """Mutable counters filled while a review log is consumed."""

    rows_read: int = 0
    events_yielded: int = 0
    rows_skipped: int = 0
    rows_other_language: int = 0


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0
    mode: str = "random"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.mode not in ("random", "chronological"):
            raise ValueError(f"unknown split mode {self.mode!r}")


def parse_lexeme(lexeme_string: str) -> tuple[str, str]:
    """Split a lexeme annotation into (surface word, tag).

    The surface word is whatever precedes the first ``/`` or ``.``,
    lowercased for lexicon lookup; the tag is the remainder and doubles
    as the sparse lexeme-tag feature key. A string with no separator
    yields the whole string lowercased and an empty tag.
    """
    cut = len(lexeme_string)
    for sep in ("/", "."):
        i = lexeme_string.find(sep)
        if 0 <= i < cut:
            cut = i
    surface = lexeme_string[:cut].lower()
    tag = lexeme_string[cut + 1 :] if cut < len(lexeme_string) else ""
    return surface, tag


def _as_text(stream: IO[str] | IO[bytes]) -> IO[str]:
    probe = stream.read(0)
    if isinstance(probe, bytes):
        return io.TextIOWrapper(stream, encoding="utf-8", newline="")
    return stream


def parse_review_log(
    stream: IO[str] | IO[bytes],
    learning_language: str = "en",
    stats: IngestStats | None = None,
) -> Iterator[ReviewEvent]:
    """Stream ReviewEvents for one learning language out of a practice log.

    ``delta`` is logged in seconds and converted to days here so all
    downstream math works in days. Raises FormatError if the header is
    missing a required column, and NoDataError if the stream is exhausted
    without a single matching row.
    """
    stats = stats if stats is not None else IngestStats()
    reader = csv.reader(_as_text(stream))
    header = next(reader, None)
    if header is None:
        raise FormatError("review log is empty: missing header row")
    names = [h.strip() for h in header]
    missing = [c for c in LOG_COLUMNS if c not in names]
    if missing:
        raise FormatError(f"review log is missing required column(s): {', '.join(missing)}")
    col = {name: names.index(name) for name in LOG_COLUMNS}
    c_lang = col["learning_language"]
    width = max(col.values()) + 1

    for row in reader:
        stats.rows_read += 1
        if len(row) < width:
            stats.rows_skipped += 1
            continue
        if row[c_lang].strip() != learning_language:
            stats.rows_other_language += 1
            continue
        try:
            delta_seconds = float(row[col["delta"]])
            timestamp = int(row[col["timestamp"]])
            history_seen = int(row[col["history_seen"]])
            history_correct = int(row[col["history_correct"]])
            session_seen = int(row[col["session_seen"]])
            session_correct = int(row[col["session_correct"]])
        except ValueError:
            stats.rows_skipped += 1
            continue
        if (
            delta_seconds < 0
            or history_seen < 1
            or not 0 <= history_correct <= history_seen
            or session_seen < 1
            or not 0 <= session_correct <= session_seen
        ):
            stats.rows_skipped += 1
            continue
        stats.events_yielded += 1
        yield ReviewEvent(
            user_id=row[col["user_id"]],
            lexeme_id=row[col["lexeme_id"]],
            lexeme_string=row[col["lexeme_string"]],
            observed_recall=session_correct / session_seen,
            delta_days=delta_seconds / SECONDS_PER_DAY,
            history_seen=history_seen,
            history_correct=history_correct,
            session_seen=session_seen,
            session_correct=session_correct,
            timestamp=timestamp,
        )

    if stats.events_yielded == 0:
        raise NoDataError(f"no review events with learning_language={learning_language!r}")


def read_events(
    path,
    learning_language: str = "en",
    limit: int = 0,
    stats: IngestStats | None = None,
) -> list[ReviewEvent]:
    """Load a review log from disk; ``limit`` > 0 keeps only the first N events."""
    events: list[ReviewEvent] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        try:
            for event in parse_review_log(fh, learning_language, stats):
                events.append(event)
                if limit and len(events) >= limit:
                    break
        except NoDataError:
            if not events:
                raise
    return events


def write_events_csv(
    events: Iterable[ReviewEvent],
    stream_or_path,
    learning_language: str = "en",
    ui_language: str = "",
) -> int:
    """Re-emit events in the 12-column log schema; returns the row count.

    ``learning_language`` / ``ui_language`` are not retained on ReviewEvent
    (the parser already filtered on them), so the caller supplies them.
    """

    def _write(fh) -> int:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        n = 0
        for e in events:
            writer.writerow(
                [
                    repr(e.observed_recall),
                    e.timestamp,
                    int(round(e.delta_days * SECONDS_PER_DAY)),
                    e.user_id,
                    learning_language,
                    ui_language,
                    e.lexeme_id,
                    e.lexeme_string,
                    e.history_seen,
                    e.history_correct,
                    e.session_seen,
                    e.session_correct,
                ]
            )
            n += 1
        return n

    if hasattr(stream_or_path, "write"):
        return _write(stream_or_path)
    with open(stream_or_path, "w", encoding="utf-8", newline="") as fh:
        return _write(fh)


def split_train_test(
    events: Iterable[ReviewEvent], spec: SplitSpec
) -> tuple[list[ReviewEvent], list[ReviewEvent]]:
    """Partition events into train/test per the spec; exact and deterministic.

    Random mode is a seeded shuffle; chronological mode is a stable sort by
    timestamp cut at the fraction boundary. The same (events order, seed)
    always produces the same partition.
    """
    pool = list(events)
    n = len(pool)
    if n < 2:
        raise ValueError(f"need at least 2 events to split, got {n}")
    n_train = int(round(n * spec.train_fraction))
    if n_train <= 0 or n_train >= n:
        raise ValueError(
            f"train_fraction={spec.train_fraction} leaves an empty side for {n} events"
        )
    if spec.mode == "random":
        indices = list(range(n))
        random.Random(spec.seed).shuffle(indices)
    else:
        indices = sorted(range(n), key=lambda i: (pool[i].timestamp, i))
    train = [pool[i] for i in indices[:n_train]]
    test = [pool[i] for i in indices[n_train:]]
    return train, test
