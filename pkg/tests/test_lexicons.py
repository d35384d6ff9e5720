import math
from collections import Counter

import pytest

from forgetcurve.errors import FormatError
from forgetcurve.lexicons import (
    DENSE_FEATURE_NAMES,
    FeatureFlags,
    LexiconBundle,
    build_user_index,
    extract_features,
    fit_feature_context,
    load_lexicon,
)

from conftest import make_event


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadLexicon:
    def test_concreteness_row(self, tmp_path):
        path = write(tmp_path, "conc.csv", "word,concreteness,percent_known\napple, 5.0, 100\n")
        lex = load_lexicon(path, "concreteness_norms")
        assert lex.get("apple").concreteness == 5.0
        assert lex.get("apple").percent_known == 1.0

    def test_spot_check_documented_schema(self, tmp_path):
        # three rows in the published norms layout: word, mean rating, percent known
        rows = [("apple", 5.0, 100.0), ("theory", 1.53, 98.0), ("zephyr", 3.1, 62.5)]
        text = "Word,Conc.M,Percent_known\n" + "\n".join(
            f"{w},{c},{p}" for w, c, p in rows
        )
        lex = load_lexicon(write(tmp_path, "norms.csv", text), "concreteness_norms")
        for word, conc, pct in rows:
            assert lex.get(word).concreteness == conc
            assert lex.get(word).percent_known == pct / 100.0

    def test_empty_file(self, tmp_path):
        lex = load_lexicon(write(tmp_path, "empty.csv", ""), "complexity")
        assert len(lex) == 0

    def test_subtlex_zero_count(self, tmp_path):
        lex = load_lexicon(write(tmp_path, "freq.csv", "word,count\nrare,0\n"), "subtlex")
        assert lex.get("rare").log_frequency == 0.0

    def test_subtlex_log10(self, tmp_path):
        lex = load_lexicon(write(tmp_path, "freq.csv", "word,count\nthe,999999\n"), "subtlex")
        assert lex.get("the").log_frequency == math.log10(1_000_000)

    def test_duplicates_keep_first(self, tmp_path):
        text = "word,complexity\ncat,1.0\ncat,9.0\n"
        lex = load_lexicon(write(tmp_path, "c.csv", text), "complexity")
        assert lex.get("cat").complexity == 1.0
        assert lex.duplicates == 1

    def test_words_lowercased(self, tmp_path):
        lex = load_lexicon(write(tmp_path, "c.csv", "Word,score\nCaT,1.5\n"), "complexity")
        assert lex.get("cat").complexity == 1.5

    def test_tab_delimited(self, tmp_path):
        lex = load_lexicon(write(tmp_path, "c.tsv", "word\tcomplexity\ndog\t2.5\n"), "complexity")
        assert lex.get("dog").complexity == 2.5

    def test_missing_column_named(self, tmp_path):
        path = write(tmp_path, "bad.csv", "word,conc\napple,5.0\n")
        with pytest.raises(FormatError, match="percent_known"):
            load_lexicon(path, "concreteness_norms")

    def test_out_of_range_rows_skipped(self, tmp_path):
        text = "word,concreteness,percent_known\nok,3.0,50\nbad,9.0,50\nworse,3.0,150\n"
        lex = load_lexicon(write(tmp_path, "c.csv", text), "concreteness_norms")
        assert len(lex) == 1
        assert lex.skipped_rows == 2

    def test_custom_columns(self, tmp_path):
        text = "id,junk,word,score\n1,x,cat,2.0\n"
        lex = load_lexicon(write(tmp_path, "c.csv", text), "complexity", columns=(2, 3))
        assert lex.get("cat").complexity == 2.0

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ValueError, match="kind"):
            load_lexicon(write(tmp_path, "c.csv", "a,1\n"), "frequencies")

    def test_bundle_merges(self, tmp_path):
        conc = load_lexicon(
            write(tmp_path, "conc.csv", "word,c,p\napple,5.0,100\n"), "concreteness_norms"
        )
        freq = load_lexicon(write(tmp_path, "freq.csv", "word,count\napple,9\n"), "subtlex")
        bundle = LexiconBundle.from_lexicons([conc, freq])
        assert bundle.concreteness["apple"] == 5.0
        assert bundle.log_frequency["apple"] == 1.0


class TestUserIndex:
    def test_rank_scalars(self):
        events = [make_event(user_id=u) for u in ["A", "B", "C", "B"]]
        assert build_user_index(events) == {"A": 0.0, "B": 0.5, "C": 1.0}

    def test_single_user(self):
        assert build_user_index([make_event(user_id="solo")]) == {"solo": 0.0}

    def test_empty(self):
        with pytest.raises(ValueError):
            build_user_index([])

    def test_midpoint_minimizes_worst_case_distance(self):
        # brute-force oracle: 0.5 has the smallest maximum distance to any
        # trained scalar in [0, 1], so it is the right unseen-user value
        scalars = [i / 9 for i in range(10)]
        candidates = [i / 1000 for i in range(1001)]
        best = min(candidates, key=lambda c: max(abs(c - s) for s in scalars))
        assert abs(best - 0.5) < 1e-9


class TestExtraction:
    def fit(self, bundle, events, flags=FeatureFlags(dense=True, interaction=True)):
        return fit_feature_context(events, bundle, flags)

    def test_happy_path_no_imputation(self, tiny_bundle):
        events = [
            make_event(user_id="u1", lexeme_string="camera/camera<n><sg>"),
            make_event(user_id="u2", lexeme_string="banana/banana<n><sg>"),
            make_event(user_id="u3", lexeme_string="theory/theory<n><sg>"),
        ]
        ctx = self.fit(tiny_bundle, events)
        hits = Counter()
        fv = extract_features(events[0], tiny_bundle, ctx, hits)
        assert len(fv.dense) == 5
        assert not hits

    def test_missing_word_imputed_with_mean(self, tiny_bundle):
        events = [
            make_event(user_id="u1", lexeme_string="camera/camera<n><sg>"),
            make_event(user_id="u2", lexeme_string="banana/banana<n><sg>"),
        ]
        ctx = self.fit(tiny_bundle, events)
        hits = Counter()
        unseen = make_event(user_id="u1", lexeme_string="ghost/ghost<n><sg>")
        fv = extract_features(unseen, tiny_bundle, ctx, hits)
        assert hits == Counter(
            {"concreteness": 1, "percent_known": 1, "subtlex": 1, "complexity": 1}
        )
        # imputed raw value equals the training mean, so complexity_raw is
        # exactly mean/scale = 1.0
        assert fv.complexity_raw == 1.0

    def test_minmax_endpoints(self, tiny_bundle):
        events = [
            make_event(user_id="u1", lexeme_string="camera/camera<n><sg>"),
            make_event(user_id="u2", lexeme_string="banana/banana<n><sg>"),
            make_event(user_id="u3", lexeme_string="theory/theory<n><sg>"),
        ]
        ctx = self.fit(tiny_bundle, events)
        conc_index = DENSE_FEATURE_NAMES.index("concreteness")
        lowest = extract_features(events[2], tiny_bundle, ctx)  # theory: conc 1.5 = min
        highest = extract_features(events[1], tiny_bundle, ctx)  # banana: conc 5.0 = max
        assert lowest.dense[conc_index] == 0.0
        assert highest.dense[conc_index] == 1.0

    def test_unseen_user_gets_midpoint(self, tiny_bundle):
        events = [make_event(user_id="u1"), make_event(user_id="u2")]
        ctx = self.fit(tiny_bundle, events)
        fv = extract_features(make_event(user_id="stranger"), tiny_bundle, ctx)
        assert fv.dense[0] == 0.5

    def test_extraction_pure(self, tiny_bundle):
        events = [make_event(user_id="u1"), make_event(user_id="u2")]
        ctx = self.fit(tiny_bundle, events)
        a = extract_features(events[0], tiny_bundle, ctx)
        b = extract_features(events[0], tiny_bundle, ctx)
        assert a == b

    def test_train_only_normalization_guard(self, tiny_bundle):
        train = [
            make_event(user_id="u1", lexeme_string="camera/camera<n><sg>"),
            make_event(user_id="u2", lexeme_string="banana/banana<n><sg>"),
        ]
        test = [make_event(user_id="u3", lexeme_string="theory/theory<n><sg>")]
        ctx_train = self.fit(tiny_bundle, train)
        before = [extract_features(e, tiny_bundle, ctx_train) for e in train]
        ctx_all = self.fit(tiny_bundle, train + test)
        after = [extract_features(e, tiny_bundle, ctx_train) for e in train]
        assert before == after
        # witness that refitting on train+test would actually move the stats,
        # i.e. the guard above is not vacuous
        assert ctx_all.stats["concreteness"] != ctx_train.stats["concreteness"]

    def test_dense_order_is_pinned(self, tiny_bundle):
        assert DENSE_FEATURE_NAMES == (
            "user_id",
            "concreteness",
            "percent_known",
            "subtlex",
            "complexity",
        )
        events = [
            make_event(user_id="u1", lexeme_string="camera/camera<n><sg>"),
            make_event(user_id="u2", lexeme_string="banana/banana<n><sg>"),
        ]
        ctx = self.fit(tiny_bundle, events)
        fv = extract_features(events[0], tiny_bundle, ctx)
        assert fv.dense[0] == ctx.user_index["u1"]
        stats = ctx.stats
        raw = tiny_bundle.concreteness["camera"]
        expected = (raw - stats["concreteness"].minimum) / (
            stats["concreteness"].maximum - stats["concreteness"].minimum
        )
        assert fv.dense[1] == expected

    def test_flags_disable_groups(self, tiny_bundle):
        events = [make_event(user_id="u1"), make_event(user_id="u2")]
        ctx = fit_feature_context(
            events, tiny_bundle, FeatureFlags(dense=False, interaction=True, lexeme_tags=True)
        )
        fv = extract_features(events[0], tiny_bundle, ctx)
        assert fv.dense == ()
        assert fv.sparse_tags == ("camera<n><sg>",)
        seen, correct = events[0].history_seen, events[0].history_correct
        assert fv.interaction == (math.sqrt(1 + seen), math.sqrt(1 + correct))

    def test_empty_lexicons_fall_back_to_midpoint(self):
        bundle = LexiconBundle.empty()
        events = [make_event(user_id="u1"), make_event(user_id="u2")]
        ctx = fit_feature_context(events, bundle, FeatureFlags(dense=True))
        fv = extract_features(events[0], bundle, ctx)
        assert fv.dense[1:] == (0.5, 0.5, 0.5, 0.5)
        # every raw complexity imputes to the pseudo-mean, so the rescaled
        # multiplier stays exactly neutral
        assert fv.complexity_raw == 1.0
