"""Forward computation for every forgetting-curve model family.

All families share one recall curve, p = 2 ** (-delta * c / h): the
probability of recalling a word ``delta`` days after last practice, where
``h`` is the memory half-life in days and ``c`` is an optional per-word
complexity multiplier (1 for most families). Families differ only in how
they produce ``h``:

* ``pimsleur`` / ``leitner`` - fixed review schedules driven by practice counts
* ``hlr`` / ``hlr_lex`` / ``hlr_plus`` / ``c_hlr_plus`` - h = 2 ** (theta . x)
* ``n_hlr_plus`` / ``cn_hlr_plus`` - h = relu(x . W1) . W2, a one-hidden-layer net
* ``linreg`` - no half-life at all; predicts recall directly from features

Probabilities and half-lives are clipped into fixed ranges so that
observed half-life targets stay finite at recall 0 or 1.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelFormatError
from .lexicons import (
    DENSE_FEATURE_NAMES,
    FeatureContext,
    FeatureFlags,
    FeatureVector,
    context_from_dict,
    context_to_dict,
)

LN2 = math.log(2.0)

MODEL_FORMAT = "forgetcurve-model-v1"

SCHEDULE_KINDS = ("pimsleur", "leitner")
LINEAR_KINDS = ("linreg", "hlr", "hlr_lex", "hlr_plus", "c_hlr_plus")
NEURAL_KINDS = ("n_hlr_plus", "cn_hlr_plus")
TRAINABLE_KINDS = LINEAR_KINDS + NEURAL_KINDS
KINDS = SCHEDULE_KINDS + LINEAR_KINDS + NEURAL_KINDS

# Kinds whose recall curve multiplies the decay exponent by word complexity.
COMPLEXITY_KINDS = ("c_hlr_plus", "cn_hlr_plus")

KIND_FLAGS: dict[str, FeatureFlags] = {
    "pimsleur": FeatureFlags(dense=False, interaction=False, lexeme_tags=False),
    "leitner": FeatureFlags(dense=False, interaction=False, lexeme_tags=False),
    "linreg": FeatureFlags(dense=True, interaction=False, lexeme_tags=False),
    "hlr": FeatureFlags(dense=False, interaction=True, lexeme_tags=False),
    "hlr_lex": FeatureFlags(dense=False, interaction=True, lexeme_tags=True),
    "hlr_plus": FeatureFlags(dense=True, interaction=True, lexeme_tags=False),
    "c_hlr_plus": FeatureFlags(dense=True, interaction=True, lexeme_tags=False),
    "n_hlr_plus": FeatureFlags(dense=True, interaction=False, lexeme_tags=False),
    "cn_hlr_plus": FeatureFlags(dense=True, interaction=False, lexeme_tags=False),
}

MIN_HALF_LIFE_DAYS = 15.0 / (24.0 * 60.0)  # 15 minutes
MAX_HALF_LIFE_DAYS = 274.0  # ~9 months

# Guard exponent for 2 ** z so the raw value never overflows a float; the
# half-life clip ceiling engages long before |z| reaches this.
_EXP_GUARD = 64.0


@dataclass(frozen=True)
class ClipRange:
    h_min: float = MIN_HALF_LIFE_DAYS
    h_max: float = MAX_HALF_LIFE_DAYS
    p_min: float = 0.0001
    p_max: float = 0.9999

    def __post_init__(self):
        if not 0.0 < self.h_min < self.h_max:
            raise ValueError(f"need 0 < h_min < h_max, got {self.h_min}, {self.h_max}")
        if not 0.0 < self.p_min < self.p_max < 1.0:
            raise ValueError(f"need 0 < p_min < p_max < 1, got {self.p_min}, {self.p_max}")

    def clamp_h(self, h: float) -> float:
        return min(self.h_max, max(self.h_min, h))

    def clamp_p(self, p: float) -> float:
        return min(self.p_max, max(self.p_min, p))


DEFAULT_CLIP = ClipRange()


@dataclass(frozen=True)
class Prediction:
    p_hat: float
    h_hat: float | None


@dataclass
class ModelState:
    """Parameters of one model plus everything needed to reuse them.

    Exactly one parameter family is populated: ``theta`` for schedule and
    linear kinds (a feature-key -> weight map, missing keys meaning zero),
    or ``w1``/``w2`` for neural kinds. ``context`` carries the fitted
    feature statistics so predictions are reproducible after reload.
    """

    kind: str
    theta: dict[str, float] = field(default_factory=dict)
    w1: np.ndarray | None = None
    w2: np.ndarray | None = None
    clip: ClipRange = DEFAULT_CLIP
    context: FeatureContext | None = None
    neural_bias: bool = False
    dense_features: tuple[str, ...] = DENSE_FEATURE_NAMES
    hyperparameters: dict | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind in NEURAL_KINDS:
            if self.w1 is None or self.w2 is None:
                raise ValueError(f"{self.kind} requires w1 and w2")
            if self.theta:
                raise ValueError(f"{self.kind} must not carry linear weights")
            if self.w1.ndim != 2 or self.w2.ndim != 1 or self.w1.shape[1] != self.w2.shape[0]:
                raise ValueError(
                    f"inconsistent network shapes {self.w1.shape} x {self.w2.shape}"
                )
        elif self.w1 is not None or self.w2 is not None:
            raise ValueError(f"{self.kind} must not carry network weights")


def recall_probability(
    h_hat: float,
    delta_days: float,
    complexity_multiplier: float = 1.0,
    clip: ClipRange = DEFAULT_CLIP,
) -> float:
    """p = 2 ** (-delta * c / h), clipped; exactly 1.0 at delta = 0.

    Larger complexity multipliers steepen the curve: with c = 2 the word
    decays as if twice the time had elapsed.
    """
    if h_hat <= 0.0:
        raise ValueError(f"half-life must be positive, got {h_hat}")
    if delta_days < 0.0:
        raise ValueError(f"delta_days must be non-negative, got {delta_days}")
    if complexity_multiplier < 0.0:
        raise ValueError(f"complexity multiplier must be >= 0, got {complexity_multiplier}")
    if delta_days == 0.0:
        return 1.0
    p_raw = 2.0 ** (-(delta_days * complexity_multiplier) / h_hat)
    return clip.clamp_p(p_raw)


def observed_half_life(
    observed_recall: float, delta_days: float, clip: ClipRange = DEFAULT_CLIP
) -> float:
    """Invert the recall curve: h = -delta / log2(p), with both ends clipped.

    The recall value is clipped into (0, 1) first so the log is finite at
    observed recall 0 or 1; the resulting half-life is clipped into the
    allowed range.
    """
    if delta_days < 0.0:
        raise ValueError(f"delta_days must be non-negative, got {delta_days}")
    p = clip.clamp_p(observed_recall)
    h_raw = -delta_days / math.log2(p)
    return clip.clamp_h(h_raw)


def weight_dot(
    theta: dict[str, float], fv: FeatureVector, delta_days: float | None = None
) -> float:
    """theta . x over bias, dense, interaction, sparse-tag (and optional
    delta) components; absent keys contribute zero."""
    total = theta.get("bias", 0.0)
    for name, value in zip(DENSE_FEATURE_NAMES, fv.dense):
        total += theta.get(name, 0.0) * value
    if fv.interaction is not None:
        total += theta.get("sqrt_seen", 0.0) * fv.interaction[0]
        total += theta.get("sqrt_correct", 0.0) * fv.interaction[1]
    if fv.sparse_tags is not None:
        for tag in fv.sparse_tags:
            total += theta.get("lex:" + tag, 0.0)
    if delta_days is not None:
        total += theta.get("delta", 0.0) * delta_days
    return total


def linear_half_life(
    theta: dict[str, float], fv: FeatureVector, clip: ClipRange = DEFAULT_CLIP
) -> float:
    """h = 2 ** (theta . x), clipped into the allowed range."""
    z = weight_dot(theta, fv)
    z = min(_EXP_GUARD, max(-_EXP_GUARD, z))
    return clip.clamp_h(2.0**z)


def neural_half_life(
    w1: np.ndarray,
    w2: np.ndarray,
    dense_inputs: np.ndarray,
    clip: ClipRange = DEFAULT_CLIP,
) -> float:
    """h = relu(x . W1) . W2, clipped; the network emits days directly."""
    x = np.asarray(dense_inputs, dtype=np.float64)
    if x.ndim != 1 or w1.ndim != 2 or x.shape[0] != w1.shape[0]:
        raise ValueError(
            f"input length {x.shape} does not match weight matrix {w1.shape}"
        )
    if w1.shape[1] != w2.shape[0]:
        raise ValueError(f"hidden dims disagree: {w1.shape} vs {w2.shape}")
    hidden = np.maximum(x @ w1, 0.0)
    return clip.clamp_h(float(hidden @ w2))


def pimsleur_half_life(history_seen: int, clip: ClipRange = DEFAULT_CLIP) -> float:
    """Multiplicative review schedule: 5 seconds on first exposure, x5 per
    exposure after that, expressed as a half-life in days."""
    if history_seen < 1:
        raise ValueError(f"history_seen must be >= 1, got {history_seen}")
    exponent = min(history_seen, 32)  # saturates the clip ceiling long before 32
    return clip.clamp_h(5.0**exponent / 86400.0)


def leitner_half_life(
    history_correct: int, history_wrong: int, clip: ClipRange = DEFAULT_CLIP
) -> float:
    """Box-system schedule: h = 2 ** (correct - wrong) days, clipped."""
    if history_correct < 0 or history_wrong < 0:
        raise ValueError("history counts must be non-negative")
    diff = history_correct - history_wrong
    diff = min(_EXP_GUARD, max(-_EXP_GUARD, float(diff)))
    return clip.clamp_h(2.0**diff)


def linreg_recall(theta: dict[str, float], fv: FeatureVector, delta_days: float) -> float:
    """Direct linear recall estimate clipped into [0, 1]; the feature
    vector is extended with delta as one more input."""
    s = weight_dot(theta, fv, delta_days=delta_days)
    return min(1.0, max(0.0, s))


def neural_inputs(state: ModelState, fv: FeatureVector) -> np.ndarray:
    """Dense input row for the network, with a constant 1.0 appended when
    the model was configured with an input bias."""
    if state.neural_bias:
        return np.array(fv.dense + (1.0,), dtype=np.float64)
    return np.array(fv.dense, dtype=np.float64)


def predict(state: ModelState, fv: FeatureVector, delta_days: float) -> Prediction:
    """Dispatch the half-life computation for the kind and compose it with
    the recall curve. Complexity kinds multiply the decay exponent by the
    event's raw complexity; everything else uses multiplier 1."""
    kind = state.kind
    if kind == "linreg":
        return Prediction(p_hat=linreg_recall(state.theta, fv, delta_days), h_hat=None)
    if kind == "pimsleur":
        h_hat = pimsleur_half_life(fv.history_seen, state.clip)
    elif kind == "leitner":
        wrong = fv.history_seen - fv.history_correct
        h_hat = leitner_half_life(fv.history_correct, wrong, state.clip)
    elif kind in LINEAR_KINDS:
        h_hat = linear_half_life(state.theta, fv, state.clip)
    else:
        h_hat = neural_half_life(state.w1, state.w2, neural_inputs(state, fv), state.clip)
    multiplier = fv.complexity_raw if kind in COMPLEXITY_KINDS else 1.0
    p_hat = recall_probability(h_hat, delta_days, multiplier, state.clip)
    return Prediction(p_hat=p_hat, h_hat=h_hat)


def model_to_dict(state: ModelState) -> dict:
    payload: dict = {
        "format": MODEL_FORMAT,
        "kind": state.kind,
        "clip": {
            "h_min": state.clip.h_min,
            "h_max": state.clip.h_max,
            "p_min": state.clip.p_min,
            "p_max": state.clip.p_max,
        },
        "dense_features": list(state.dense_features),
        "neural_bias": state.neural_bias,
        "hyperparameters": state.hyperparameters,
        "context": context_to_dict(state.context) if state.context is not None else None,
    }
    if state.kind in NEURAL_KINDS:
        payload["w1"] = [[float(v) for v in row] for row in state.w1]
        payload["w2"] = [float(v) for v in state.w2]
    else:
        payload["theta"] = {k: float(v) for k, v in sorted(state.theta.items())}
    return payload


def model_from_dict(payload: dict) -> ModelState:
    try:
        if payload.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"unsupported model format {payload.get('format')!r}")
        kind = payload["kind"]
        if kind not in KINDS:
            raise ModelFormatError(f"unknown model kind {kind!r}")
        clip = ClipRange(
            h_min=float(payload["clip"]["h_min"]),
            h_max=float(payload["clip"]["h_max"]),
            p_min=float(payload["clip"]["p_min"]),
            p_max=float(payload["clip"]["p_max"]),
        )
        context = (
            context_from_dict(payload["context"]) if payload.get("context") is not None else None
        )
        if kind in NEURAL_KINDS:
            w1 = np.array(payload["w1"], dtype=np.float64)
            w2 = np.array(payload["w2"], dtype=np.float64)
            theta: dict[str, float] = {}
        else:
            w1 = None
            w2 = None
            theta = {str(k): float(v) for k, v in payload["theta"].items()}
        return ModelState(
            kind=kind,
            theta=theta,
            w1=w1,
            w2=w2,
            clip=clip,
            context=context,
            neural_bias=bool(payload.get("neural_bias", False)),
            dense_features=tuple(payload.get("dense_features", DENSE_FEATURE_NAMES)),
            hyperparameters=payload.get("hyperparameters"),
        )
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model document: {exc}") from exc


def write_json_atomic(payload: dict, path) -> None:
    """Serialize to JSON via a temp file + rename so readers never see a
    partial document. sort_keys keeps output byte-stable."""
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(state: ModelState, path) -> None:
    write_json_atomic(model_to_dict(state), path)


def load_model(path) -> ModelState:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ModelFormatError(f"model file {path} must hold a JSON object")
    return model_from_dict(payload)
