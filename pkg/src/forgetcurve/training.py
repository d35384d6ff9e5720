"""Composite loss, exact analytic gradients, and the SGD training loop.

The per-event loss is

    (p - p_hat)^2 + alpha * (h - h_hat)^2 + lambda * sum(w^2)

where ``h`` is the observed half-life implied by the event and the
regularizer runs over all trainable weights except the linear bias. The
direct-recall family (``linreg``) has no half-life estimate, so its h term
is zero. Clipping is treated as a stop-gradient: whenever a raw half-life
or probability was moved by a clip, no gradient flows through it.

Gradients are exact, which is what ``gradient_check`` verifies against
central finite differences.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import time
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .datasets import ReviewEvent
from .errors import TrainingDivergedError
from .lexicons import (
    DENSE_FEATURE_NAMES,
    FeatureVector,
    LexiconBundle,
    extract_features,
    fit_feature_context,
)
from .models import (
    COMPLEXITY_KINDS,
    DEFAULT_CLIP,
    KIND_FLAGS,
    LN2,
    NEURAL_KINDS,
    TRAINABLE_KINDS,
    ClipRange,
    ModelState,
    neural_inputs,
    observed_half_life,
    predict,
)

log = logging.getLogger(__name__)

_EXP_GUARD = 64.0


def derive_seed(seed: int, label: str) -> int:
    """Stable fan-out of one top-level seed into per-purpose streams."""
    digest = hashlib.blake2b(f"{seed}:{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class Hyperparameters:
    """Training knobs. ``epochs`` and ``minibatch_size`` default per model
    family when left as None: single-pass online updates for the linear
    kinds, 200 epochs with 1024-event minibatches for the neural kinds."""

    learning_rate: float = 0.001
    alpha: float = 0.01
    lambda_: float = 0.1
    epochs: int | None = None
    minibatch_size: int | None = None
    seed: int = 0
    hidden_dim: int = 4
    neural_bias: bool = False
    adaptive: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.alpha < 0 or self.lambda_ < 0:
            raise ValueError("alpha and lambda must be non-negative")
        if self.epochs is not None and self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.minibatch_size is not None and self.minibatch_size < 1:
            raise ValueError(f"minibatch_size must be >= 1, got {self.minibatch_size}")
        if self.hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {self.hidden_dim}")

    def epochs_for(self, kind: str) -> int:
        if self.epochs is not None:
            return self.epochs
        return 200 if kind in NEURAL_KINDS else 1

    def batch_for(self, kind: str) -> int:
        if self.minibatch_size is not None:
            return self.minibatch_size
        return 1024 if kind in NEURAL_KINDS else 1

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "alpha": self.alpha,
            "lambda": self.lambda_,
            "epochs": self.epochs,
            "minibatch_size": self.minibatch_size,
            "seed": self.seed,
            "hidden_dim": self.hidden_dim,
            "neural_bias": self.neural_bias,
            "adaptive": self.adaptive,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Hyperparameters":
        data = dict(payload)
        if "lambda" in data:
            data["lambda_"] = data.pop("lambda")
        return cls(**data)


@dataclass(frozen=True)
class LossBreakdown:
    p_term: float
    h_term: float
    reg_term: float
    total: float


@dataclass
class EpochLog:
    epoch: int
    p_term: float
    h_term: float
    reg_term: float
    total: float
    seconds: float
    events: int

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "p_term": self.p_term,
            "h_term": self.h_term,
            "reg_term": self.reg_term,
            "total": self.total,
            "events": self.events,
            "seconds": self.seconds,
        }


def write_training_log(logs: Iterable[EpochLog], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in logs:
            fh.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")


def regularization_sum(state: ModelState) -> float:
    """Sum of squared trainable weights, excluding the linear bias."""
    if state.kind in NEURAL_KINDS:
        return float(np.sum(state.w1 * state.w1) + np.sum(state.w2 * state.w2))
    return sum(w * w for key, w in state.theta.items() if key != "bias")


def loss(
    observed_recall: float,
    p_hat: float,
    observed_h: float | None,
    h_hat: float | None,
    state: ModelState,
    hyper: Hyperparameters,
) -> LossBreakdown:
    """Loss breakdown for one already-clipped prediction."""
    p_term = (observed_recall - p_hat) ** 2
    if observed_h is None or h_hat is None:
        h_term = 0.0
    else:
        h_term = hyper.alpha * (observed_h - h_hat) ** 2
    reg_term = hyper.lambda_ * regularization_sum(state)
    return LossBreakdown(p_term, h_term, reg_term, p_term + h_term + reg_term)


# ---------------------------------------------------------------------------
# shared forward/backward pieces


def _feature_pairs(kind: str, fv: FeatureVector, delta_days: float) -> list[tuple[str, float]]:
    """(key, value) terms of theta . x in dot-product order, bias excluded."""
    pairs: list[tuple[str, float]] = []
    for name, value in zip(DENSE_FEATURE_NAMES, fv.dense):
        pairs.append((name, value))
    if fv.interaction is not None:
        pairs.append(("sqrt_seen", fv.interaction[0]))
        pairs.append(("sqrt_correct", fv.interaction[1]))
    if fv.sparse_tags is not None:
        for tag in fv.sparse_tags:
            pairs.append(("lex:" + tag, 1.0))
    if kind == "linreg":
        pairs.append(("delta", delta_days))
    return pairs


def _halflife_coeff(
    z: float,
    p_obs: float,
    delta: float,
    c: float,
    h_tgt: float,
    alpha: float,
    clip: ClipRange,
) -> tuple[float, float, float, float, float]:
    """d(data loss)/dz for the half-life families, with stop-gradient masks.

    With h = 2**z and p = 2**(-delta*c/h):
        dh/dz = ln2 * h
        dp/dz = (ln2)^2 * (delta*c/h) * p
    Each factor is zeroed when its clip engaged (raw value outside range).
    """
    ze = min(_EXP_GUARD, max(-_EXP_GUARD, z))
    h_raw = 2.0**ze
    h_hat = clip.clamp_h(h_raw)
    h_in = clip.h_min <= h_raw <= clip.h_max
    if delta == 0.0:
        p_hat = 1.0
        dp_dz = 0.0
    else:
        p_raw = 2.0 ** (-(delta * c) / h_hat)
        p_hat = clip.clamp_p(p_raw)
        p_in = clip.p_min <= p_raw <= clip.p_max
        dp_dz = (LN2 * LN2) * ((delta * c) / h_hat) * p_raw if (p_in and h_in) else 0.0
    dh_dz = LN2 * h_hat if h_in else 0.0
    res_p = p_obs - p_hat
    res_h = h_tgt - h_hat
    coeff = -2.0 * res_p * dp_dz - 2.0 * alpha * res_h * dh_dz
    return coeff, p_hat, h_hat, res_p, res_h


def _linreg_coeff(s: float, p_obs: float) -> tuple[float, float, float]:
    p_hat = min(1.0, max(0.0, s))
    inside = 0.0 <= s <= 1.0
    res_p = p_obs - p_hat
    coeff = -2.0 * res_p if inside else 0.0
    return coeff, p_hat, res_p


def _neural_batch(
    w1: np.ndarray,
    w2: np.ndarray,
    X: np.ndarray,
    P: np.ndarray,
    H: np.ndarray,
    DELTA: np.ndarray,
    C: np.ndarray,
    alpha: float,
    clip: ClipRange,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Mean data-loss gradients over a batch, plus the residual vectors.

    Backpropagation through the output weights, the ReLU mask, and the
    input weights; clips are stop-gradients, so rows whose raw half-life
    or raw probability fell outside the clip range contribute nothing
    through that path.
    """
    A = X @ w1
    R = np.maximum(A, 0.0)
    h_raw = R @ w2
    h_hat = np.clip(h_raw, clip.h_min, clip.h_max)
    m_h = (h_raw >= clip.h_min) & (h_raw <= clip.h_max)
    D = DELTA * C
    zero_delta = DELTA == 0.0
    p_raw = np.exp2(-D / h_hat)
    p_hat = np.where(zero_delta, 1.0, np.clip(p_raw, clip.p_min, clip.p_max))
    m_p = (p_raw >= clip.p_min) & (p_raw <= clip.p_max) & ~zero_delta
    res_p = P - p_hat
    res_h = H - h_hat
    dL_dh = (-2.0 * res_p) * (p_raw * LN2 * D / (h_hat * h_hat)) * m_p - 2.0 * alpha * res_h
    delta_out = dL_dh * m_h
    batch = X.shape[0]
    dW2 = (R.T @ delta_out) / batch
    dA = (delta_out[:, None] * w2[None, :]) * (A > 0.0)
    dW1 = (X.T @ dA) / batch
    return dW1, dW2, res_p, res_h


def gradient(
    state: ModelState, fv: FeatureVector, event: ReviewEvent, hyper: Hyperparameters
) -> dict:
    """Exact gradient of the total per-event loss.

    Linear kinds return a feature-key -> value map covering every current
    weight plus every feature active in the event; neural kinds return
    {"w1": array, "w2": array} with the same shapes as the parameters.
    """
    kind = state.kind
    if kind not in TRAINABLE_KINDS:
        raise ValueError(f"kind {kind!r} has no trainable parameters")
    reg2 = 2.0 * hyper.lambda_
    if kind in NEURAL_KINDS:
        x = neural_inputs(state, fv)
        c = fv.complexity_raw if kind in COMPLEXITY_KINDS else 1.0
        h_tgt = observed_half_life(event.observed_recall, event.delta_days, state.clip)
        dW1, dW2, _, _ = _neural_batch(
            state.w1,
            state.w2,
            x[None, :],
            np.array([event.observed_recall]),
            np.array([h_tgt]),
            np.array([event.delta_days]),
            np.array([c]),
            hyper.alpha,
            state.clip,
        )
        return {"w1": dW1 + reg2 * state.w1, "w2": dW2 + reg2 * state.w2}

    pairs = _feature_pairs(kind, fv, event.delta_days)
    z = state.theta.get("bias", 0.0)
    for key, value in pairs:
        z += state.theta.get(key, 0.0) * value
    if kind == "linreg":
        coeff, _, _ = _linreg_coeff(z, event.observed_recall)
    else:
        c = fv.complexity_raw if kind in COMPLEXITY_KINDS else 1.0
        h_tgt = observed_half_life(event.observed_recall, event.delta_days, state.clip)
        coeff, _, _, _, _ = _halflife_coeff(
            z, event.observed_recall, event.delta_days, c, h_tgt, hyper.alpha, state.clip
        )
    grad: dict[str, float] = {}
    for key, weight in state.theta.items():
        grad[key] = 0.0 if key == "bias" else reg2 * weight
    grad["bias"] = grad.get("bias", 0.0) + coeff
    for key, value in pairs:
        grad[key] = grad.get(key, 0.0) + coeff * value
    return grad


# ---------------------------------------------------------------------------
# SGD loop


def sgd_train(
    events: Iterable[ReviewEvent],
    kind: str,
    bundle: LexiconBundle,
    hyper: Hyperparameters | None = None,
    clip: ClipRange = DEFAULT_CLIP,
) -> tuple[ModelState, list[EpochLog]]:
    """Train one model with plain SGD and return (state, per-epoch log).

    The feature context (user index, normalization stats) is fitted on the
    given events, which must therefore be the training split only. Linear
    weights start at zero; network weights start uniform in [-0.1, 0.1]
    from the seed. Event order is reshuffled every epoch from a seed
    derived from ``hyper.seed``, so identical inputs give bit-identical
    weights. Raises TrainingDivergedError if an epoch's mean loss goes
    non-finite.
    """
    pool = list(events)
    if not pool:
        raise ValueError("cannot train on zero events")
    if kind not in TRAINABLE_KINDS:
        raise ValueError(f"kind {kind!r} is not trainable")
    hyper = hyper if hyper is not None else Hyperparameters()
    if hyper.adaptive and kind in NEURAL_KINDS:
        raise ValueError("adaptive per-weight learning rates only apply to linear kinds")
    flags = KIND_FLAGS[kind]
    context = fit_feature_context(pool, bundle, flags)
    imputation: Counter = Counter()
    fvs = [extract_features(e, bundle, context, imputation) for e in pool]
    if imputation:
        log.info("training imputation counts for %s: %s", kind, dict(imputation))
    epochs = hyper.epochs_for(kind)
    batch_size = hyper.batch_for(kind)
    shuffle_rng = random.Random(derive_seed(hyper.seed, "shuffle"))
    if kind in NEURAL_KINDS:
        return _train_neural(kind, pool, fvs, context, hyper, clip, epochs, batch_size, shuffle_rng)
    return _train_linear(kind, pool, fvs, context, hyper, clip, epochs, batch_size, shuffle_rng)


def _epoch_log(epoch, p_sum, h_sum, reg_sum, n, t0) -> EpochLog:
    p_mean = p_sum / n
    h_mean = h_sum / n
    reg_mean = reg_sum / n
    total = p_mean + h_mean + reg_mean
    if not math.isfinite(total):
        raise TrainingDivergedError(f"mean training loss became non-finite at epoch {epoch}")
    return EpochLog(
        epoch=epoch,
        p_term=p_mean,
        h_term=h_mean,
        reg_term=reg_mean,
        total=total,
        seconds=time.perf_counter() - t0,
        events=n,
    )


def _train_linear(kind, pool, fvs, context, hyper, clip, epochs, batch_size, shuffle_rng):
    flags = context.flags
    keys = ["bias"]
    if flags.dense:
        keys.extend(DENSE_FEATURE_NAMES)
    if flags.interaction:
        keys.extend(("sqrt_seen", "sqrt_correct"))
    if flags.lexeme_tags:
        tags = sorted({t for fv in fvs if fv.sparse_tags for t in fv.sparse_tags})
        keys.extend("lex:" + t for t in tags)
    if kind == "linreg":
        keys.append("delta")
    index = {k: i for i, k in enumerate(keys)}

    rows = []
    for fv, event in zip(fvs, pool):
        pairs = _feature_pairs(kind, fv, event.delta_days)
        idx = [index[k] for k, _ in pairs]
        val = [v for _, v in pairs]
        c = fv.complexity_raw if kind in COMPLEXITY_KINDS else 1.0
        h_tgt = (
            0.0
            if kind == "linreg"
            else observed_half_life(event.observed_recall, event.delta_days, clip)
        )
        rows.append((idx, val, event.observed_recall, event.delta_days, c, h_tgt))

    n = len(rows)
    theta = np.zeros(len(keys), dtype=np.float64)
    reg_mask = np.ones(len(keys), dtype=np.float64)
    reg_mask[0] = 0.0  # bias is unregularized
    gdata = np.zeros_like(theta)
    counts = np.zeros_like(theta) if hyper.adaptive else None
    lr = hyper.learning_rate
    alpha = hyper.alpha
    reg2 = 2.0 * hyper.lambda_
    order = list(range(n))
    logs: list[EpochLog] = []

    # Overflow on the divergence path is handled by the epoch guard, not by
    # numpy warnings.
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for epoch in range(epochs):
            t0 = time.perf_counter()
            shuffle_rng.shuffle(order)
            p_sum = h_sum = reg_sum = 0.0
            pos = 0
            while pos < n:
                batch = order[pos : pos + batch_size]
                pos += batch_size
                gdata[:] = 0.0
                reg_now = hyper.lambda_ * float(np.dot(theta * reg_mask, theta))
                for i in batch:
                    idx, val, p_obs, delta, c, h_tgt = rows[i]
                    z = theta[0]
                    for j, v in zip(idx, val):
                        z += theta[j] * v
                    if kind == "linreg":
                        coeff, _, res_p = _linreg_coeff(z, p_obs)
                        p_sum += res_p * res_p
                    else:
                        coeff, _, _, res_p, res_h = _halflife_coeff(
                            z, p_obs, delta, c, h_tgt, alpha, clip
                        )
                        p_sum += res_p * res_p
                        h_sum += alpha * res_h * res_h
                    gdata[0] += coeff
                    for j, v in zip(idx, val):
                        gdata[j] += coeff * v
                reg_sum += reg_now * len(batch)
                if hyper.adaptive:
                    rates = lr / np.sqrt(1.0 + counts)
                    theta -= rates * (gdata / len(batch) + reg2 * (theta * reg_mask))
                    counts[gdata != 0.0] += 1.0
                else:
                    theta -= lr * (gdata / len(batch) + reg2 * (theta * reg_mask))
            logs.append(_epoch_log(epoch, p_sum, h_sum, reg_sum, n, t0))

    state = ModelState(
        kind=kind,
        theta={k: float(theta[i]) for k, i in index.items()},
        clip=clip,
        context=context,
        hyperparameters=hyper.to_dict(),
    )
    return state, logs


def _train_neural(kind, pool, fvs, context, hyper, clip, epochs, batch_size, shuffle_rng):
    n = len(pool)
    width = len(DENSE_FEATURE_NAMES) + (1 if hyper.neural_bias else 0)
    X = np.empty((n, width), dtype=np.float64)
    P = np.empty(n, dtype=np.float64)
    H = np.empty(n, dtype=np.float64)
    DELTA = np.empty(n, dtype=np.float64)
    C = np.empty(n, dtype=np.float64)
    for i, (fv, event) in enumerate(zip(fvs, pool)):
        X[i] = fv.dense + ((1.0,) if hyper.neural_bias else ())
        P[i] = event.observed_recall
        DELTA[i] = event.delta_days
        C[i] = fv.complexity_raw if kind in COMPLEXITY_KINDS else 1.0
        H[i] = observed_half_life(event.observed_recall, event.delta_days, clip)

    rng = np.random.default_rng(derive_seed(hyper.seed, "init"))
    w1 = rng.uniform(-0.1, 0.1, size=(width, hyper.hidden_dim))
    w2 = rng.uniform(-0.1, 0.1, size=hyper.hidden_dim)
    lr = hyper.learning_rate
    reg2 = 2.0 * hyper.lambda_
    order = list(range(n))
    logs: list[EpochLog] = []

    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for epoch in range(epochs):
            t0 = time.perf_counter()
            shuffle_rng.shuffle(order)
            p_sum = h_sum = reg_sum = 0.0
            pos = 0
            while pos < n:
                sel = np.array(order[pos : pos + batch_size], dtype=np.intp)
                pos += batch_size
                dW1, dW2, res_p, res_h = _neural_batch(
                    w1, w2, X[sel], P[sel], H[sel], DELTA[sel], C[sel], hyper.alpha, clip
                )
                p_sum += float(res_p @ res_p)
                h_sum += hyper.alpha * float(res_h @ res_h)
                reg_now = hyper.lambda_ * (float(np.sum(w1 * w1)) + float(np.sum(w2 * w2)))
                reg_sum += reg_now * sel.shape[0]
                w1 = w1 - lr * (dW1 + reg2 * w1)
                w2 = w2 - lr * (dW2 + reg2 * w2)
            logs.append(_epoch_log(epoch, p_sum, h_sum, reg_sum, n, t0))

    if epochs > 0:
        raw = np.maximum(X @ w1, 0.0) @ w2
        if not np.any(raw > clip.h_min):
            # Stop-gradients at the clip floor mean such a network cannot
            # recover; a different init seed usually fixes it.
            log.warning(
                "%s: every training row sits at the half-life clip floor; "
                "the network never left its initialization (try another seed)",
                kind,
            )
    state = ModelState(
        kind=kind,
        w1=w1,
        w2=w2,
        clip=clip,
        context=context,
        neural_bias=hyper.neural_bias,
        hyperparameters=hyper.to_dict(),
    )
    return state, logs


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradCheckReport:
    kind: str
    trials: int
    max_rel_error: float
    passed: bool


def total_loss(state: ModelState, fv: FeatureVector, event: ReviewEvent, hyper: Hyperparameters) -> float:
    """Total per-event loss computed through the public predict path."""
    pred = predict(state, fv, event.delta_days)
    if state.kind == "linreg":
        h_tgt = None
    else:
        h_tgt = observed_half_life(event.observed_recall, event.delta_days, state.clip)
    return loss(event.observed_recall, pred.p_hat, h_tgt, pred.h_hat, state, hyper).total


def _linear_margin_ok(state, fv, event, clip) -> bool:
    pairs = _feature_pairs(state.kind, fv, event.delta_days)
    z = state.theta.get("bias", 0.0)
    for key, value in pairs:
        z += state.theta.get(key, 0.0) * value
    if state.kind == "linreg":
        return 0.03 < z < 0.97
    h_raw = 2.0 ** min(_EXP_GUARD, max(-_EXP_GUARD, z))
    if not clip.h_min * 1.05 < h_raw < clip.h_max * 0.95:
        return False
    p_raw = 2.0 ** (-(event.delta_days * _multiplier(state.kind, fv)) / h_raw)
    return clip.p_min * 1.5 < p_raw < 0.999


def _neural_margin_ok(state, fv, event, clip) -> bool:
    x = neural_inputs(state, fv)
    a = x @ state.w1
    if np.min(np.abs(a)) < 1e-3:  # too close to a ReLU kink
        return False
    h_raw = float(np.maximum(a, 0.0) @ state.w2)
    if not clip.h_min * 1.05 < h_raw < clip.h_max * 0.95:
        return False
    p_raw = 2.0 ** (-(event.delta_days * _multiplier(state.kind, fv)) / h_raw)
    return clip.p_min * 1.5 < p_raw < 0.999


def _multiplier(kind: str, fv: FeatureVector) -> float:
    return fv.complexity_raw if kind in COMPLEXITY_KINDS else 1.0


def _sample_check_point(kind, rng, hyper, clip):
    """Draw a random (state, fv, event) away from clip and ReLU boundaries."""
    flags = KIND_FLAGS[kind]
    tag_pool = [f"t{i}" for i in range(6)]
    for _ in range(10000):
        seen = rng.randint(1, 30)
        correct = min(seen, int(round(rng.uniform(0.3, 1.0) * seen)))
        dense = tuple(rng.uniform(0.05, 0.95) for _ in DENSE_FEATURE_NAMES) if flags.dense else ()
        interaction = (
            (math.sqrt(1.0 + seen), math.sqrt(1.0 + correct)) if flags.interaction else None
        )
        sparse = (rng.choice(tag_pool),) if flags.lexeme_tags else None
        fv = FeatureVector(
            dense=dense,
            interaction=interaction,
            sparse_tags=sparse,
            complexity_raw=rng.uniform(0.5, 2.0) if kind in COMPLEXITY_KINDS else 1.0,
            history_seen=seen,
            history_correct=correct,
        )
        p_obs = rng.uniform(0.15, 0.9)
        event = ReviewEvent(
            user_id="u",
            lexeme_id="lx",
            lexeme_string="w/w<n>",
            observed_recall=p_obs,
            delta_days=rng.uniform(0.3, 10.0),
            history_seen=seen,
            history_correct=correct,
            session_seen=4,
            session_correct=min(4, int(round(p_obs * 4))),
            timestamp=0,
        )
        if kind in NEURAL_KINDS:
            width = len(DENSE_FEATURE_NAMES) + (1 if hyper.neural_bias else 0)
            w1 = np.array(
                [[rng.uniform(-1.0, 1.0) for _ in range(hyper.hidden_dim)] for _ in range(width)]
            )
            w2 = np.array([rng.uniform(0.2, 1.5) for _ in range(hyper.hidden_dim)])
            state = ModelState(kind=kind, w1=w1, w2=w2, clip=clip, neural_bias=hyper.neural_bias)
            if _neural_margin_ok(state, fv, event, clip):
                return state, fv, event
            continue
        span = 0.3 if kind == "linreg" else 0.8
        theta = {"bias": rng.uniform(-span, span)}
        active = [k for k, _ in _feature_pairs(kind, fv, event.delta_days)]
        for key in active:
            theta[key] = rng.uniform(-span, span)
        if flags.lexeme_tags:
            theta["lex:unused"] = rng.uniform(-span, span)  # reg-only gradient path
        state = ModelState(kind=kind, theta=theta, clip=clip)
        if _linear_margin_ok(state, fv, event, clip):
            return state, fv, event
    raise RuntimeError(f"could not sample a boundary-free check point for {kind}")


def _perturbed_linear(state: ModelState, key: str, delta: float) -> ModelState:
    theta = dict(state.theta)
    theta[key] = theta.get(key, 0.0) + delta
    return ModelState(
        kind=state.kind, theta=theta, clip=state.clip, neural_bias=state.neural_bias
    )


def _perturbed_neural(state: ModelState, which: str, pos: tuple, delta: float) -> ModelState:
    w1 = state.w1.copy()
    w2 = state.w2.copy()
    if which == "w1":
        w1[pos] += delta
    else:
        w2[pos] += delta
    return ModelState(
        kind=state.kind, w1=w1, w2=w2, clip=state.clip, neural_bias=state.neural_bias
    )


def gradient_check(
    kind: str,
    num_trials: int = 100,
    seed: int = 0,
    hyper: Hyperparameters | None = None,
    clip: ClipRange = DEFAULT_CLIP,
    fd_step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    Points are sampled away from clip boundaries and ReLU kinks so the
    loss is smooth in the perturbation neighborhood. The relative error
    denominator is floored at 1e-3 so near-zero components are compared
    absolutely.
    """
    if kind not in TRAINABLE_KINDS:
        raise ValueError(f"kind {kind!r} is not trainable")
    hyper = hyper if hyper is not None else Hyperparameters()
    rng = random.Random(derive_seed(seed, f"gradcheck-{kind}"))
    max_rel = 0.0

    def fd(plus: ModelState, minus: ModelState, fv, event) -> float:
        return (total_loss(plus, fv, event, hyper) - total_loss(minus, fv, event, hyper)) / (
            2.0 * fd_step
        )

    for _ in range(num_trials):
        state, fv, event = _sample_check_point(kind, rng, hyper, clip)
        analytic = gradient(state, fv, event, hyper)
        if kind in NEURAL_KINDS:
            for which, arr in (("w1", state.w1), ("w2", state.w2)):
                for pos in np.ndindex(arr.shape):
                    g_fd = fd(
                        _perturbed_neural(state, which, pos, fd_step),
                        _perturbed_neural(state, which, pos, -fd_step),
                        fv,
                        event,
                    )
                    g_an = float(analytic[which][pos])
                    rel = abs(g_an - g_fd) / max(abs(g_an), abs(g_fd), 1e-3)
                    max_rel = max(max_rel, rel)
        else:
            for key in state.theta:
                g_fd = fd(
                    _perturbed_linear(state, key, fd_step),
                    _perturbed_linear(state, key, -fd_step),
                    fv,
                    event,
                )
                g_an = float(analytic.get(key, 0.0))
                rel = abs(g_an - g_fd) / max(abs(g_an), abs(g_fd), 1e-3)
                max_rel = max(max_rel, rel)

    return GradCheckReport(
        kind=kind, trials=num_trials, max_rel_error=max_rel, passed=max_rel < tolerance
    )
