"""MAE evaluation, the model-ladder comparison, and hidden-weight export."""
from __future__ import annotations

import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .datasets import ReviewEvent
from .errors import ModelFormatError
from .lexicons import (
    DENSE_FEATURE_NAMES,
    FeatureContext,
    LexiconBundle,
    extract_features,
)
from .models import (
    DEFAULT_CLIP,
    KIND_FLAGS,
    NEURAL_KINDS,
    SCHEDULE_KINDS,
    ClipRange,
    ModelState,
    predict,
)

# Table order used by ladder reports.
LADDER_KINDS = (
    "pimsleur",
    "leitner",
    "linreg",
    "hlr",
    "hlr_lex",
    "hlr_plus",
    "c_hlr_plus",
    "n_hlr_plus",
    "cn_hlr_plus",
)

# Aggregation chunk size. Fixed so that the reduction order (and therefore
# the floating-point result) is identical no matter how many workers run.
_CHUNK = 4096


@dataclass
class EvalReport:
    kind: str
    num_events: int
    mae: float
    mean_p_hat: float
    mean_observed: float
    imputation_counts: dict[str, int]
    runtime_seconds: float

    def to_dict(self, include_runtime: bool = True) -> dict:
        payload = {
            "kind": self.kind,
            "num_events": self.num_events,
            "mae": self.mae,
            "mean_p_hat": self.mean_p_hat,
            "mean_observed": self.mean_observed,
            "imputation_counts": dict(sorted(self.imputation_counts.items())),
        }
        if include_runtime:
            payload["runtime_seconds"] = self.runtime_seconds
        return payload


def mae(pairs: Iterable[tuple[float, float]]) -> float:
    """Mean absolute error over (observed, predicted) pairs."""
    total = 0.0
    count = 0
    for observed, predicted in pairs:
        total += abs(observed - predicted)
        count += 1
    if count == 0:
        raise ValueError("mae requires at least one (observed, predicted) pair")
    return total / count


def _eval_chunk(state: ModelState, events: Sequence[ReviewEvent], bundle: LexiconBundle):
    abs_err = 0.0
    p_hat_sum = 0.0
    observed_sum = 0.0
    imputation: Counter = Counter()
    for event in events:
        fv = extract_features(event, bundle, state.context, imputation)
        pred = predict(state, fv, event.delta_days)
        abs_err += abs(event.observed_recall - pred.p_hat)
        p_hat_sum += pred.p_hat
        observed_sum += event.observed_recall
    return len(events), abs_err, p_hat_sum, observed_sum, imputation


_POOL_STATE: dict = {}


def _pool_init(state: ModelState, bundle: LexiconBundle) -> None:
    _POOL_STATE["state"] = state
    _POOL_STATE["bundle"] = bundle


def _pool_eval(events: Sequence[ReviewEvent]):
    return _eval_chunk(_POOL_STATE["state"], events, _POOL_STATE["bundle"])


def evaluate(
    state: ModelState,
    events: Sequence[ReviewEvent],
    bundle: LexiconBundle,
    workers: int = 1,
) -> EvalReport:
    """Score a model on a slice of events; never mutates the model.

    Events are aggregated in fixed-size chunks combined in order, so the
    result is identical whether chunks are evaluated sequentially or by a
    worker pool.
    """
    if state.context is None:
        raise ModelFormatError(f"model of kind {state.kind!r} carries no feature context")
    if tuple(state.dense_features) != DENSE_FEATURE_NAMES:
        raise ModelFormatError(
            f"model dense-feature order {state.dense_features} does not match "
            f"this extractor's order {DENSE_FEATURE_NAMES}"
        )
    pool = list(events)
    if not pool:
        raise ValueError("cannot evaluate on zero events")
    started = time.perf_counter()
    chunks = [pool[i : i + _CHUNK] for i in range(0, len(pool), _CHUNK)]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_pool_init, initargs=(state, bundle)
        ) as executor:
            results = list(executor.map(_pool_eval, chunks))
    else:
        results = [_eval_chunk(state, chunk, bundle) for chunk in chunks]
    count = 0
    abs_err = p_hat_sum = observed_sum = 0.0
    imputation: Counter = Counter()
    for n, err, ps, obs, imp in results:
        count += n
        abs_err += err
        p_hat_sum += ps
        observed_sum += obs
        imputation.update(imp)
    return EvalReport(
        kind=state.kind,
        num_events=count,
        mae=abs_err / count,
        mean_p_hat=p_hat_sum / count,
        mean_observed=observed_sum / count,
        imputation_counts=dict(imputation),
        runtime_seconds=time.perf_counter() - started,
    )


@dataclass
class HiddenWeightExport:
    """|W1| rescaled into [0, 1] over the whole matrix, with labeled rows."""

    feature_order: tuple[str, ...]
    matrix: list[list[float]]
    row_means: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "feature_order": list(self.feature_order),
            "matrix": self.matrix,
            "row_means": self.row_means,
        }

    def ranked_features(self) -> list[str]:
        return sorted(self.row_means, key=self.row_means.get, reverse=True)


def export_hidden_weights(state: ModelState) -> HiddenWeightExport:
    """Input-to-hidden weight magnitudes min-max rescaled to [0, 1].

    Magnitudes, not signs, are compared, so the export reflects how much
    each input feature drives the half-life estimate. A constant matrix
    maps to all zeros.
    """
    if state.kind not in NEURAL_KINDS:
        raise ValueError(f"hidden-weight export needs a neural kind, got {state.kind!r}")
    magnitudes = np.abs(state.w1)
    lo = float(magnitudes.min())
    hi = float(magnitudes.max())
    scaled = np.zeros_like(magnitudes) if hi <= lo else (magnitudes - lo) / (hi - lo)
    labels = tuple(state.dense_features) + (("bias",) if state.neural_bias else ())
    row_means = {label: float(scaled[i].mean()) for i, label in enumerate(labels)}
    return HiddenWeightExport(
        feature_order=labels,
        matrix=[[float(v) for v in row] for row in scaled],
        row_means=row_means,
    )


@dataclass
class LadderRow:
    kind: str
    report: EvalReport | None = None
    error: str | None = None
    state: ModelState | None = None

    @property
    def ok(self) -> bool:
        return self.report is not None


def make_schedule_state(kind: str, clip: ClipRange = DEFAULT_CLIP) -> ModelState:
    """Parameter-free state for the fixed-schedule baselines."""
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"{kind!r} is not a schedule kind")
    context = FeatureContext(
        user_index={}, stats={}, complexity_scale=1.0, flags=KIND_FLAGS[kind]
    )
    return ModelState(kind=kind, theta={}, clip=clip, context=context)


def run_ladder(
    train_events: Sequence[ReviewEvent],
    test_events: Sequence[ReviewEvent],
    bundle: LexiconBundle,
    hyper,
    kinds: Sequence[str] = LADDER_KINDS,
    clip: ClipRange = DEFAULT_CLIP,
    workers: int = 1,
) -> list[LadderRow]:
    """Train and evaluate every kind on the identical split.

    A failing kind marks its row failed and the ladder continues, so one
    bad configuration cannot hide the rest of the comparison.
    """
    from .training import sgd_train  # local import to avoid a cycle

    rows: list[LadderRow] = []
    for kind in kinds:
        try:
            if kind in SCHEDULE_KINDS:
                state = make_schedule_state(kind, clip)
            else:
                state, _ = sgd_train(train_events, kind, bundle, hyper, clip)
            report = evaluate(state, test_events, bundle, workers=workers)
            rows.append(LadderRow(kind=kind, report=report, state=state))
        except Exception as exc:  # per-kind isolation is the contract
            rows.append(LadderRow(kind=kind, error=f"{type(exc).__name__}: {exc}"))
    return rows


def ladder_to_dict(rows: Sequence[LadderRow], metadata: dict | None = None) -> dict:
    """JSON document for a ladder run. Everything outside the ``metadata``
    block is deterministic for a fixed config and seed."""
    payload_rows = []
    runtimes = {}
    for row in rows:
        if row.report is not None:
            payload_rows.append({"status": "ok", **row.report.to_dict(include_runtime=False)})
            runtimes[row.kind] = row.report.runtime_seconds
        else:
            payload_rows.append({"status": "failed", "kind": row.kind, "error": row.error})
    meta = dict(metadata or {})
    meta["runtime_seconds"] = runtimes
    return {"rows": payload_rows, "metadata": meta}


def format_ladder_text(rows: Sequence[LadderRow]) -> str:
    lines = [f"{'model':<12} {'mae':>8} {'events':>9} {'mean p_hat':>11} {'mean obs':>9}"]
    for row in rows:
        if row.report is not None:
            r = row.report
            lines.append(
                f"{row.kind:<12} {r.mae:>8.4f} {r.num_events:>9d} "
                f"{r.mean_p_hat:>11.4f} {r.mean_observed:>9.4f}"
            )
        else:
            lines.append(f"{row.kind:<12} FAILED: {row.error}")
    return "\n".join(lines)
