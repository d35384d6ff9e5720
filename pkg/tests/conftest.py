import math

import pytest

from forgetcurve.datasets import ReviewEvent
from forgetcurve.lexicons import (
    FeatureContext,
    FeatureFlags,
    FeatureStats,
    FeatureVector,
    LexiconBundle,
)


def make_event(**overrides) -> ReviewEvent:
    base = dict(
        user_id="u1",
        lexeme_id="lx1",
        lexeme_string="camera/camera<n><sg>",
        observed_recall=0.75,
        delta_days=1.0,
        history_seen=4,
        history_correct=3,
        session_seen=4,
        session_correct=3,
        timestamp=1_600_000_000,
    )
    base.update(overrides)
    return ReviewEvent(**base)


def make_fv(
    dense=(),
    interaction=None,
    sparse_tags=None,
    complexity_raw=1.0,
    history_seen=4,
    history_correct=3,
) -> FeatureVector:
    return FeatureVector(
        dense=tuple(dense),
        interaction=interaction,
        sparse_tags=sparse_tags,
        complexity_raw=complexity_raw,
        history_seen=history_seen,
        history_correct=history_correct,
    )


def interaction_for(seen: int, correct: int) -> tuple[float, float]:
    return (math.sqrt(1.0 + seen), math.sqrt(1.0 + correct))


@pytest.fixture
def tiny_bundle() -> LexiconBundle:
    bundle = LexiconBundle.empty()
    bundle.complexity.update({"camera": 1.8, "banana": 0.9, "theory": 2.4})
    bundle.concreteness.update({"camera": 4.5, "banana": 5.0, "theory": 1.5})
    bundle.percent_known.update({"camera": 0.98, "banana": 1.0, "theory": 0.8})
    bundle.log_frequency.update({"camera": 3.1, "banana": 2.4, "theory": 3.6})
    return bundle


@pytest.fixture
def identity_context() -> FeatureContext:
    stats = {
        name: FeatureStats(minimum=0.0, maximum=1.0, mean=0.5)
        for name in ("concreteness", "percent_known", "subtlex", "complexity")
    }
    return FeatureContext(
        user_index={"u1": 0.0, "u2": 1.0},
        stats=stats,
        complexity_scale=1.0,
        flags=FeatureFlags(dense=True, interaction=True, lexeme_tags=False),
    )
