import json

import numpy as np
import pytest

import forgetcurve.training
from forgetcurve.errors import ModelFormatError
from forgetcurve.evaluation import (
    LADDER_KINDS,
    evaluate,
    export_hidden_weights,
    format_ladder_text,
    ladder_to_dict,
    mae,
    make_schedule_state,
    run_ladder,
)
from forgetcurve.lexicons import FeatureContext, FeatureFlags
from forgetcurve.models import ModelState, model_to_dict
from forgetcurve.synth import SynthSpec, generate
from forgetcurve.training import Hyperparameters
from forgetcurve.datasets import SplitSpec, split_train_test

from conftest import make_event


@pytest.fixture(scope="module")
def synth():
    spec = SynthSpec(
        num_users=10,
        num_words=25,
        events_per_pair=6,
        kind="hlr",
        noise="binomial",
        session_seen_range=(16, 32),
        delta_range=(0.5, 6.0),
        history_seen_range=(1, 12),
        seed=9,
    )
    return generate(spec)


class TestMae:
    def test_perfect(self):
        assert mae([(1.0, 1.0), (0.0, 0.0)]) == 0.0

    def test_maximal(self):
        assert mae([(1.0, 0.0)]) == 1.0

    def test_hand_arithmetic(self):
        assert mae([(0.8, 0.6), (0.4, 0.5)]) == pytest.approx(0.15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mae([])

    def test_permutation_invariant(self):
        pairs = [(0.1, 0.9), (0.5, 0.2), (1.0, 0.3)]
        assert mae(pairs) == mae(list(reversed(pairs)))

    def test_bounded_when_residuals_bounded(self):
        pairs = [(1.0, 0.0), (0.0, 1.0), (0.5, 0.5)]
        assert 0.0 <= mae(pairs) <= 1.0


def constant_predictor(value: float) -> ModelState:
    context = FeatureContext(
        user_index={},
        stats={},
        complexity_scale=1.0,
        flags=FeatureFlags(dense=False, interaction=False, lexeme_tags=False),
    )
    return ModelState(kind="linreg", theta={"bias": value}, context=context)


class TestEvaluate:
    def test_constant_predictor_mad_closed_form(self, synth):
        events = synth.events[:500]
        mean_obs = sum(e.observed_recall for e in events) / len(events)
        report = evaluate(constant_predictor(mean_obs), events, synth.bundle)
        expected = sum(abs(e.observed_recall - mean_obs) for e in events) / len(events)
        assert report.mae == pytest.approx(expected, rel=1e-12)
        assert report.mean_p_hat == pytest.approx(mean_obs, rel=1e-12)

    def test_hlr_zero_theta_composition(self):
        events = [
            make_event(user_id=f"u{i}", observed_recall=0.5, delta_days=1.0) for i in range(10)
        ]
        context = FeatureContext(
            user_index={},
            stats={},
            complexity_scale=1.0,
            flags=FeatureFlags(dense=False, interaction=True, lexeme_tags=False),
        )
        state = ModelState(kind="hlr", theta={}, context=context)
        from forgetcurve.lexicons import LexiconBundle

        report = evaluate(state, events, LexiconBundle.empty())
        assert report.mae == 0.0

    def test_read_only(self, synth):
        state = synth.model
        before = json.dumps(model_to_dict(state), sort_keys=True)
        evaluate(state, synth.events[:200], synth.bundle)
        after = json.dumps(model_to_dict(state), sort_keys=True)
        assert before == after

    def test_requires_context(self):
        state = ModelState(kind="hlr", theta={})
        with pytest.raises(ModelFormatError, match="context"):
            evaluate(state, [make_event()], None)

    def test_feature_order_mismatch_rejected(self, synth):
        state = ModelState(
            kind="hlr",
            theta={},
            context=synth.model.context,
            dense_features=("complexity", "user_id", "concreteness", "percent_known", "subtlex"),
        )
        with pytest.raises(ModelFormatError, match="order"):
            evaluate(state, synth.events[:10], synth.bundle)

    def test_empty_events_rejected(self, synth):
        with pytest.raises(ValueError):
            evaluate(synth.model, [], synth.bundle)

    def test_workers_do_not_change_result(self, synth):
        # fixed chunked aggregation means the pooled result is bit-identical
        sequential = evaluate(synth.model, synth.events, synth.bundle, workers=1)
        pooled = evaluate(synth.model, synth.events, synth.bundle, workers=2)
        assert pooled.mae == sequential.mae
        assert pooled.mean_p_hat == sequential.mean_p_hat
        assert pooled.num_events == sequential.num_events


class TestExportHiddenWeights:
    def make_state(self, w1):
        return ModelState(kind="n_hlr_plus", w1=np.asarray(w1, float), w2=np.zeros(4))

    def test_constant_matrix_maps_to_zeros(self):
        export = export_hidden_weights(self.make_state(np.full((5, 4), 0.7)))
        assert all(v == 0.0 for row in export.matrix for v in row)

    def test_unique_max_maps_to_one(self):
        w1 = np.full((5, 4), 0.1)
        w1[2, 3] = -5.0  # magnitude matters, not sign
        export = export_hidden_weights(self.make_state(w1))
        assert export.matrix[2][3] == 1.0
        assert max(v for row in export.matrix for v in row) == 1.0

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(5)
        export = export_hidden_weights(self.make_state(rng.normal(size=(5, 4))))
        assert all(0.0 <= v <= 1.0 for row in export.matrix for v in row)

    def test_row_order_pinned_to_feature_order(self):
        w1 = np.zeros((5, 4))
        w1[4, :] = 3.0  # complexity row
        export = export_hidden_weights(self.make_state(w1))
        assert export.feature_order == (
            "user_id",
            "concreteness",
            "percent_known",
            "subtlex",
            "complexity",
        )
        assert export.row_means["complexity"] == 1.0
        assert export.ranked_features()[0] == "complexity"

    def test_non_neural_rejected(self):
        with pytest.raises(ValueError):
            export_hidden_weights(ModelState(kind="hlr", theta={}))

    def test_bias_row_labeled(self):
        state = ModelState(
            kind="n_hlr_plus", w1=np.zeros((6, 4)), w2=np.zeros(4), neural_bias=True
        )
        export = export_hidden_weights(state)
        assert export.feature_order[-1] == "bias"


@pytest.fixture(scope="module")
def rows(synth):
    train, test = split_train_test(synth.events, SplitSpec(0.9, seed=4))
    hyper = Hyperparameters(seed=3, epochs=1, minibatch_size=1)
    return run_ladder(train, test, synth.bundle, hyper)


class TestLadder:
    def test_all_kinds_present_in_order(self, rows):
        assert [r.kind for r in rows] == list(LADDER_KINDS)
        assert all(r.ok for r in rows)

    def test_trained_hlr_beats_schedules(self, rows):
        by_kind = {r.kind: r.report.mae for r in rows}
        assert by_kind["hlr"] < by_kind["pimsleur"]
        assert by_kind["hlr"] < by_kind["leitner"]

    def test_json_document_layout(self, rows):
        document = ladder_to_dict(rows, metadata={"created_unix": 123.0})
        assert {row["kind"] for row in document["rows"]} == set(LADDER_KINDS)
        assert all("runtime_seconds" not in row for row in document["rows"])
        assert set(document["metadata"]["runtime_seconds"]) == set(LADDER_KINDS)

    def test_text_table(self, rows):
        text = format_ladder_text(rows)
        lines = text.splitlines()
        assert len(lines) == 1 + len(LADDER_KINDS)
        assert lines[1].startswith("pimsleur")

    def test_per_kind_failure_isolated(self, synth, monkeypatch):
        real = forgetcurve.training.sgd_train

        def sabotaged(events, kind, bundle, hyper=None, clip=None):
            if kind == "hlr_plus":
                raise RuntimeError("boom")
            return real(events, kind, bundle, hyper)

        monkeypatch.setattr(forgetcurve.training, "sgd_train", sabotaged)
        train, test = split_train_test(synth.events, SplitSpec(0.9, seed=4))
        rows = run_ladder(
            train, test, synth.bundle, Hyperparameters(seed=3, epochs=1), kinds=("hlr", "hlr_plus")
        )
        assert rows[0].ok
        assert not rows[1].ok and "boom" in rows[1].error
        document = ladder_to_dict(rows)
        statuses = {row["kind"]: row["status"] for row in document["rows"]}
        assert statuses == {"hlr": "ok", "hlr_plus": "failed"}

    def test_schedule_state_helper(self):
        state = make_schedule_state("pimsleur")
        assert state.kind == "pimsleur"
        with pytest.raises(ValueError):
            make_schedule_state("hlr")
