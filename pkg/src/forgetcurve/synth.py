"""Synthetic-learner oracle: review logs drawn from a known ground truth.

Generation runs the real feature-extraction and prediction path with the
ground-truth model's own stored context, so evaluating that model on its
deterministic-noise output reproduces every probability exactly. Lexicon
values are computed with the same arithmetic the loaders use, which keeps
the emitted lexicon files bit-identical to the in-memory bundle after a
round trip.

With binomial noise the observed recall is a session ratio k/n and the
emitted 12-column log re-ingests losslessly (up to the one-second delta
quantization of the file format). Deterministic noise stores the exact
probability on the in-memory events; it is meant for oracle tests, not
for file round trips.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .datasets import ReviewEvent, write_events_csv
from .lexicons import (
    FeatureContext,
    FeatureStats,
    LEXICAL_FEATURE_NAMES,
    LexiconBundle,
    extract_features,
)
from .models import (
    DEFAULT_CLIP,
    DENSE_FEATURE_NAMES,
    KIND_FLAGS,
    KINDS,
    NEURAL_KINDS,
    SCHEDULE_KINDS,
    ClipRange,
    ModelState,
    predict,
    save_model,
)
from .training import derive_seed

# Default ground truths keep true half-lives in the low single-digit days
# so the implied half-life targets stay far from the clip ceiling, where
# plain-SGD training of the linear kinds is well behaved.
_DEFAULT_THETA = {
    "hlr": {"bias": 0.9, "sqrt_seen": -0.3, "sqrt_correct": 0.65},
    "hlr_lex": {"bias": 0.9, "sqrt_seen": -0.3, "sqrt_correct": 0.65},
    "hlr_plus": {
        "bias": 0.9,
        "sqrt_seen": -0.3,
        "sqrt_correct": 0.65,
        "user_id": 0.0,
        "concreteness": 0.3,
        "percent_known": 0.25,
        "subtlex": 0.1,
        "complexity": -0.3,
    },
    "c_hlr_plus": {
        "bias": 0.9,
        "sqrt_seen": -0.3,
        "sqrt_correct": 0.65,
        "user_id": 0.0,
        "concreteness": 0.3,
        "percent_known": 0.25,
        "subtlex": 0.1,
        "complexity": -0.3,
    },
    "linreg": {
        "bias": 0.95,
        "delta": -0.05,
        "concreteness": 0.1,
        "percent_known": 0.1,
        "subtlex": 0.05,
        "complexity": -0.15,
        "user_id": 0.0,
    },
}


@dataclass(frozen=True)
class SynthSpec:
    num_users: int = 50
    num_words: int = 100
    events_per_pair: int = 4
    kind: str = "hlr"
    ground_truth_params: dict | None = None
    delta_range: tuple[float, float] = (0.01, 60.0)
    noise: str = "binomial"
    session_seen_range: tuple[int, int] = (1, 6)
    history_seen_range: tuple[int, int] = (1, 40)
    complexity_range: tuple[float, float] = (0.5, 2.0)
    seed: int = 0

    def __post_init__(self):
        if min(self.num_users, self.num_words, self.events_per_pair) < 1:
            raise ValueError("num_users, num_words and events_per_pair must be positive")
        if self.kind not in KINDS:
            raise ValueError(f"unknown ground-truth kind {self.kind!r}")
        if self.noise not in ("binomial", "deterministic"):
            raise ValueError(f"unknown noise model {self.noise!r}")
        for name, (lo, hi) in (
            ("delta_range", self.delta_range),
            ("complexity_range", self.complexity_range),
        ):
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got {(lo, hi)}")
        for name, (lo, hi) in (
            ("session_seen_range", self.session_seen_range),
            ("history_seen_range", self.history_seen_range),
        ):
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 1 <= lo <= hi, got {(lo, hi)}")

    @property
    def num_events(self) -> int:
        return self.num_users * self.num_words * self.events_per_pair


@dataclass
class SynthWord:
    surface: str
    lexeme_id: str
    lexeme_string: str
    concreteness_file: float  # native 1-5 scale
    percent_file: float  # native 0-100 scale
    frequency_count: int
    complexity: float


@dataclass
class SynthResult:
    spec: SynthSpec
    events: list[ReviewEvent]
    model: ModelState
    bundle: LexiconBundle
    words: list[SynthWord]


def _build_words(spec: SynthSpec, rng: random.Random) -> tuple[list[SynthWord], LexiconBundle]:
    words = []
    bundle = LexiconBundle.empty()
    c_lo, c_hi = spec.complexity_range
    for i in range(spec.num_words):
        surface = f"w{i:04d}"
        word = SynthWord(
            surface=surface,
            lexeme_id=f"lx{i:04d}",
            lexeme_string=f"{surface}/{surface}<n><sg>",
            concreteness_file=1.0 + 4.0 * rng.random(),
            percent_file=100.0 * rng.random(),
            frequency_count=int(round(10.0 ** (5.0 * rng.random()))) - 1,
            complexity=rng.uniform(c_lo, c_hi),
        )
        words.append(word)
        # Same arithmetic as the lexicon loaders, so a file round trip
        # reproduces these values bit-for-bit.
        bundle.complexity[surface] = word.complexity
        bundle.concreteness[surface] = word.concreteness_file
        bundle.percent_known[surface] = word.percent_file / 100.0
        bundle.log_frequency[surface] = math.log10(word.frequency_count + 1.0)
    return words, bundle


def _word_stats(bundle: LexiconBundle) -> dict[str, FeatureStats]:
    stats = {}
    for name in LEXICAL_FEATURE_NAMES:
        values = list(bundle.table(name).values())
        stats[name] = FeatureStats(
            minimum=min(values), maximum=max(values), mean=sum(values) / len(values)
        )
    return stats


def _ground_truth_state(
    spec: SynthSpec, context: FeatureContext, clip: ClipRange
) -> ModelState:
    params = spec.ground_truth_params
    if spec.kind in SCHEDULE_KINDS:
        return ModelState(kind=spec.kind, theta={}, clip=clip, context=context)
    if spec.kind in NEURAL_KINDS:
        if params is not None:
            w1 = np.array(params["w1"], dtype=np.float64)
            w2 = np.array(params["w2"], dtype=np.float64)
        else:
            rng = np.random.default_rng(derive_seed(spec.seed, "gt-neural"))
            w1 = rng.uniform(0.0, 2.0, size=(len(DENSE_FEATURE_NAMES), 4))
            w2 = rng.uniform(0.5, 1.5, size=4)
        return ModelState(kind=spec.kind, w1=w1, w2=w2, clip=clip, context=context)
    theta = dict(params) if params is not None else dict(_DEFAULT_THETA[spec.kind])
    return ModelState(kind=spec.kind, theta=theta, clip=clip, context=context)


def generate(spec: SynthSpec, clip: ClipRange = DEFAULT_CLIP) -> SynthResult:
    """Generate a review log plus the ground-truth model that produced it."""
    lo, hi = spec.delta_range
    if hi > clip.h_max:
        raise ValueError(
            f"delta_range upper bound {hi} exceeds the half-life ceiling {clip.h_max}"
        )
    rng = random.Random(derive_seed(spec.seed, "synth"))
    words, bundle = _build_words(spec, rng)
    users = [f"u{j:04d}" for j in range(spec.num_users)]
    if len(users) == 1:
        user_index = {users[0]: 0.0}
    else:
        user_index = {u: j / (len(users) - 1) for j, u in enumerate(users)}
    flags = KIND_FLAGS[spec.kind]
    context = FeatureContext(
        user_index=user_index,
        stats=_word_stats(bundle) if flags.dense else {},
        complexity_scale=(
            sum(w.complexity for w in words) / len(words) if flags.dense else 1.0
        ),
        flags=flags,
    )
    model = _ground_truth_state(spec, context, clip)
    if spec.kind == "hlr_lex" and spec.ground_truth_params is None:
        # per-word difficulty offsets so the lexeme tags carry real signal
        for word in words:
            _, tag = word.lexeme_string.split("/", 1)
            model.theta["lex:" + tag] = rng.uniform(-0.6, 0.6)

    log_lo, log_hi = math.log(lo), math.log(hi)
    base_ts = 1_600_000_000
    year = 365 * 86400
    events: list[ReviewEvent] = []
    for user in users:
        for word in words:
            for _ in range(spec.events_per_pair):
                delta_days = math.exp(rng.uniform(log_lo, log_hi))
                seen = rng.randint(*spec.history_seen_range)
                correct = min(seen, int(round(rng.uniform(0.3, 1.0) * seen)))
                draft = ReviewEvent(
                    user_id=user,
                    lexeme_id=word.lexeme_id,
                    lexeme_string=word.lexeme_string,
                    observed_recall=0.0,
                    delta_days=delta_days,
                    history_seen=seen,
                    history_correct=correct,
                    session_seen=1,
                    session_correct=0,
                    timestamp=base_ts + rng.randrange(year),
                )
                fv = extract_features(draft, bundle, context)
                p_true = predict(model, fv, delta_days).p_hat
                if spec.noise == "deterministic":
                    observed = p_true
                    session_seen = 1
                    session_correct = 1 if p_true >= 0.5 else 0
                else:
                    session_seen = rng.randint(*spec.session_seen_range)
                    session_correct = sum(
                        1 for _ in range(session_seen) if rng.random() < p_true
                    )
                    observed = session_correct / session_seen
                events.append(
                    replace(
                        draft,
                        observed_recall=observed,
                        session_seen=session_seen,
                        session_correct=session_correct,
                    )
                )
    return SynthResult(spec=spec, events=events, model=model, bundle=bundle, words=words)


def write_synth_files(result: SynthResult, out_dir) -> dict[str, str]:
    """Write the dataset, the three lexicon files, and the ground truth.

    The dataset uses the same 12-column schema as the real log, so every
    downstream module consumes synthetic data unchanged.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "events": out / "events.csv",
        "complexity": out / "complexity.csv",
        "concreteness": out / "concreteness.csv",
        "subtlex": out / "subtlex.csv",
        "ground_truth": out / "ground_truth.json",
    }
    write_events_csv(result.events, paths["events"])
    with open(paths["complexity"], "w", encoding="utf-8") as fh:
        fh.write("word,complexity\n")
        for w in result.words:
            fh.write(f"{w.surface},{w.complexity!r}\n")
    with open(paths["concreteness"], "w", encoding="utf-8") as fh:
        fh.write("word,concreteness,percent_known\n")
        for w in result.words:
            fh.write(f"{w.surface},{w.concreteness_file!r},{w.percent_file!r}\n")
    with open(paths["subtlex"], "w", encoding="utf-8") as fh:
        fh.write("word,count\n")
        for w in result.words:
            fh.write(f"{w.surface},{w.frequency_count}\n")
    save_model(result.model, paths["ground_truth"])
    return {name: str(path) for name, path in paths.items()}
