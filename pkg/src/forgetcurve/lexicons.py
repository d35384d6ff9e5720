"""Psycholinguistic lexicon loading and feature-vector extraction.

Dense model inputs follow one fixed order everywhere (weight maps, neural
input rows, weight exports): user id, concreteness, percent known, word
frequency, word complexity. Normalization statistics are fitted on the
training split only and travel with the trained model.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .datasets import ReviewEvent, parse_lexeme
from .errors import FormatError

log = logging.getLogger(__name__)

DENSE_FEATURE_NAMES = ("user_id", "concreteness", "percent_known", "subtlex", "complexity")

# Lexical (lexicon-backed) subset of the dense features, i.e. everything
# except the user scalar, which is built from the training events instead.
LEXICAL_FEATURE_NAMES = ("concreteness", "percent_known", "subtlex", "complexity")

LEXICON_KINDS = ("complexity", "concreteness_norms", "subtlex")

# Scalar assigned to a learner never seen during training: the midpoint of
# the [0, 1] rank scale, which minimizes the worst-case distance to any
# trained user's scalar.
DEFAULT_USER_SCALAR = 0.5

CONCRETENESS_BOUNDS = (1.0, 5.0)


@dataclass(slots=True)
class LexicalFeatures:
    """Per-word scores; a field is None when that resource lacks the word."""

    complexity: float | None = None
    concreteness: float | None = None
    percent_known: float | None = None
    log_frequency: float | None = None


@dataclass
class Lexicon:
    """One loaded resource: a partial word -> LexicalFeatures map."""

    kind: str
    entries: dict[str, LexicalFeatures]
    duplicates: int = 0
    skipped_rows: int = 0

    def get(self, word: str) -> LexicalFeatures | None:
        return self.entries.get(word)

    def __len__(self) -> int:
        return len(self.entries)


# Column layout per lexicon kind: semantic names for error messages, and
# the default column indices (word first).
_KIND_COLUMNS = {
    "complexity": ("word", "complexity"),
    "concreteness_norms": ("word", "concreteness", "percent_known"),
    "subtlex": ("word", "count"),
}


def _sniff_delimiter(line: str) -> str:
    candidates = [",", "\t", ";"]
    counts = {d: line.count(d) for d in candidates}
    best = max(candidates, key=lambda d: counts[d])
    return best if counts[best] > 0 else ","


def _parse_lexicon_row(kind: str, fields: list[str]) -> LexicalFeatures | None:
    """Turn the value columns of one row into features; None if invalid."""
    try:
        if kind == "complexity":
            value = float(fields[0])
            if value < 0:
                return None
            return LexicalFeatures(complexity=value)
        if kind == "concreteness_norms":
            conc = float(fields[0])
            pct = float(fields[1]) / 100.0
            if not CONCRETENESS_BOUNDS[0] <= conc <= CONCRETENESS_BOUNDS[1]:
                return None
            if not 0.0 <= pct <= 1.0:
                return None
            return LexicalFeatures(concreteness=conc, percent_known=pct)
        count = float(fields[0])
        if count < 0:
            return None
        return LexicalFeatures(log_frequency=math.log10(count + 1.0))
    except ValueError:
        return None


def load_lexicon(
    path,
    kind: str,
    columns: Sequence[int] | None = None,
    delimiter: str | None = None,
) -> Lexicon:
    """Load a delimited lexicon file keyed by lowercase word.

    ``columns`` overrides the default column indices (word column first,
    then the value column(s) for the kind). The percent-known column is
    read on a 0-100 scale and stored as a proportion. Duplicate words keep
    the first occurrence; rows with unparseable or out-of-range values are
    counted and skipped. An optional header row is detected and ignored.
    """
    if kind not in _KIND_COLUMNS:
        raise ValueError(f"unknown lexicon kind {kind!r}; expected one of {LEXICON_KINDS}")
    names = _KIND_COLUMNS[kind]
    cols = tuple(columns) if columns is not None else tuple(range(len(names)))
    if len(cols) != len(names):
        raise ValueError(f"{kind} lexicon needs {len(names)} column indices {names}, got {cols}")

    with open(path, "r", encoding="utf-8", newline="") as fh:
        first_line = fh.readline()
        if not first_line.strip():
            log.warning("lexicon file %s is empty", path)
            return Lexicon(kind=kind, entries={})
        fh.seek(0)
        delim = delimiter or _sniff_delimiter(first_line)
        reader = csv.reader(fh, delimiter=delim, skipinitialspace=True)

        entries: dict[str, LexicalFeatures] = {}
        duplicates = 0
        skipped = 0
        width = max(cols) + 1
        for row_number, row in enumerate(reader):
            if not row:
                continue
            if len(row) < width:
                missing = names[next(i for i, c in enumerate(cols) if c >= len(row))]
                raise FormatError(
                    f"{kind} lexicon {path}: row {row_number + 1} has {len(row)} column(s), "
                    f"missing column {missing!r} (need {names} at indices {cols})"
                )
            features = _parse_lexicon_row(kind, [row[c] for c in cols[1:]])
            if features is None:
                if row_number == 0:
                    continue  # header row
                skipped += 1
                continue
            word = row[cols[0]].strip().lower()
            if word in entries:
                duplicates += 1
                continue
            entries[word] = features

    if not entries:
        log.warning("lexicon file %s produced no entries", path)
    if duplicates:
        log.warning("lexicon file %s: %d duplicate word(s), kept first occurrence", path, duplicates)
    return Lexicon(kind=kind, entries=entries, duplicates=duplicates, skipped_rows=skipped)


@dataclass
class LexiconBundle:
    """Merged per-feature lookup tables over any number of loaded lexicons."""

    complexity: dict[str, float]
    concreteness: dict[str, float]
    percent_known: dict[str, float]
    log_frequency: dict[str, float]

    @classmethod
    def empty(cls) -> "LexiconBundle":
        return cls({}, {}, {}, {})

    @classmethod
    def from_lexicons(cls, lexicons: Iterable[Lexicon]) -> "LexiconBundle":
        bundle = cls.empty()
        for lex in lexicons:
            for word, feats in lex.entries.items():
                if feats.complexity is not None:
                    bundle.complexity.setdefault(word, feats.complexity)
                if feats.concreteness is not None:
                    bundle.concreteness.setdefault(word, feats.concreteness)
                if feats.percent_known is not None:
                    bundle.percent_known.setdefault(word, feats.percent_known)
                if feats.log_frequency is not None:
                    bundle.log_frequency.setdefault(word, feats.log_frequency)
        return bundle

    def table(self, feature: str) -> dict[str, float]:
        if feature == "concreteness":
            return self.concreteness
        if feature == "percent_known":
            return self.percent_known
        if feature == "subtlex":
            return self.log_frequency
        if feature == "complexity":
            return self.complexity
        raise KeyError(feature)


def build_user_index(events: Iterable[ReviewEvent]) -> dict[str, float]:
    """Map each learner to a scalar in [0, 1] by first-appearance rank."""
    order: list[str] = []
    seen: set[str] = set()
    for event in events:
        if event.user_id not in seen:
            seen.add(event.user_id)
            order.append(event.user_id)
    if not order:
        raise ValueError("cannot build a user index from zero events")
    if len(order) == 1:
        return {order[0]: 0.0}
    last = len(order) - 1
    return {user: i / last for i, user in enumerate(order)}


@dataclass(frozen=True)
class FeatureFlags:
    """Which optional feature groups a model consumes."""

    dense: bool = True
    interaction: bool = False
    lexeme_tags: bool = False


@dataclass(frozen=True)
class FeatureStats:
    minimum: float
    maximum: float
    mean: float


# Fallback when the training split had no lexicon coverage for a feature:
# every extraction imputes the pseudo-mean and normalizes to the midpoint.
_DEGENERATE_STATS = FeatureStats(minimum=0.0, maximum=1.0, mean=0.5)


@dataclass
class FeatureContext:
    """Everything extraction needs beyond the lexicons themselves.

    Fitted on the training split and stored inside the trained model so
    that prediction is reproducible after reload.
    """

    user_index: dict[str, float]
    stats: dict[str, FeatureStats]
    complexity_scale: float
    flags: FeatureFlags


@dataclass(frozen=True, slots=True)
class FeatureVector:
    """Model input for one event.

    ``dense`` follows DENSE_FEATURE_NAMES order with every component
    min-max normalized into [0, 1]; a constant bias input of 1.0 is
    implicit and applied by the weight dot product. ``complexity_raw``
    carries the unnormalized complexity, rescaled so the training mean is
    1.0, for the models that multiply it into the decay exponent.
    """

    dense: tuple[float, ...]
    interaction: tuple[float, float] | None
    sparse_tags: tuple[str, ...] | None
    complexity_raw: float
    history_seen: int
    history_correct: int


def fit_feature_context(
    train_events: Iterable[ReviewEvent],
    bundle: LexiconBundle,
    flags: FeatureFlags,
) -> FeatureContext:
    """Fit user index, per-feature min/max/mean, and the complexity scale.

    Statistics are event-weighted over the training split, restricted to
    events whose word is present in the relevant lexicon. They must never
    be refitted on evaluation data.
    """
    events = list(train_events)
    user_index = build_user_index(events)
    stats: dict[str, FeatureStats] = {}
    complexity_scale = 1.0
    if flags.dense:
        acc = {name: [math.inf, -math.inf, 0.0, 0] for name in LEXICAL_FEATURE_NAMES}
        for event in events:
            surface, _ = parse_lexeme(event.lexeme_string)
            for name in LEXICAL_FEATURE_NAMES:
                value = bundle.table(name).get(surface)
                if value is None:
                    continue
                slot = acc[name]
                slot[0] = min(slot[0], value)
                slot[1] = max(slot[1], value)
                slot[2] += value
                slot[3] += 1
        for name in LEXICAL_FEATURE_NAMES:
            lo, hi, total, count = acc[name]
            if count == 0:
                stats[name] = _DEGENERATE_STATS
            else:
                stats[name] = FeatureStats(minimum=lo, maximum=hi, mean=total / count)
        mean_complexity = stats["complexity"].mean
        complexity_scale = mean_complexity if mean_complexity > 0 else 1.0
    return FeatureContext(
        user_index=user_index,
        stats=stats,
        complexity_scale=complexity_scale,
        flags=flags,
    )


def _normalize(value: float, stats: FeatureStats) -> float:
    span = stats.maximum - stats.minimum
    if span <= 0:
        return 0.0
    scaled = (value - stats.minimum) / span
    return min(1.0, max(0.0, scaled))


def extract_features(
    event: ReviewEvent,
    bundle: LexiconBundle,
    context: FeatureContext,
    imputation: Counter | None = None,
) -> FeatureVector:
    """Turn one event into a FeatureVector under a fitted context.

    Pure: identical inputs always give the identical vector. Words missing
    from a lexicon are imputed with that feature's training mean (counted
    in ``imputation`` when provided); unseen learners get the midpoint
    scalar.
    """
    flags = context.flags
    if flags.dense:
        surface, tag = parse_lexeme(event.lexeme_string)
        dense = [context.user_index.get(event.user_id, DEFAULT_USER_SCALAR)]
        raw_complexity = None
        for name in LEXICAL_FEATURE_NAMES:
            stats = context.stats[name]
            value = bundle.table(name).get(surface)
            if value is None:
                value = stats.mean
                if imputation is not None:
                    imputation[name] += 1
            if name == "complexity":
                raw_complexity = value
            dense.append(_normalize(value, stats))
        complexity_raw = raw_complexity / context.complexity_scale
        dense_tuple = tuple(dense)
    else:
        _, tag = parse_lexeme(event.lexeme_string)
        dense_tuple = ()
        complexity_raw = 1.0
    interaction = None
    if flags.interaction:
        interaction = (
            math.sqrt(1.0 + event.history_seen),
            math.sqrt(1.0 + event.history_correct),
        )
    sparse = (tag,) if flags.lexeme_tags else None
    return FeatureVector(
        dense=dense_tuple,
        interaction=interaction,
        sparse_tags=sparse,
        complexity_raw=complexity_raw,
        history_seen=event.history_seen,
        history_correct=event.history_correct,
    )


def context_to_dict(context: FeatureContext) -> dict:
    return {
        "user_index": dict(sorted(context.user_index.items())),
        "stats": {
            name: {"min": s.minimum, "max": s.maximum, "mean": s.mean}
            for name, s in sorted(context.stats.items())
        },
        "complexity_scale": context.complexity_scale,
        "flags": {
            "dense": context.flags.dense,
            "interaction": context.flags.interaction,
            "lexeme_tags": context.flags.lexeme_tags,
        },
    }


def context_from_dict(payload: dict) -> FeatureContext:
    flags = payload["flags"]
    return FeatureContext(
        user_index={str(k): float(v) for k, v in payload["user_index"].items()},
        stats={
            name: FeatureStats(minimum=s["min"], maximum=s["max"], mean=s["mean"])
            for name, s in payload["stats"].items()
        },
        complexity_scale=float(payload["complexity_scale"]),
        flags=FeatureFlags(
            dense=bool(flags["dense"]),
            interaction=bool(flags["interaction"]),
            lexeme_tags=bool(flags["lexeme_tags"]),
        ),
    )
