import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from concord.errors import ParseError
from concord.lexfeat import Lexicon, feature_layout, featurize, load_lexicon


def _lex(tmp_path, text, name="affect.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


VALENCE = Lexicon("valence", ["valence"], {"good": np.array([3.0]), "bad": np.array([-3.0])})


class TestLoad:
    def test_single_channel(self, tmp_path):
        lex = load_lexicon(_lex(tmp_path, "#channels\tvalence\ngood\t3\n"))
        assert lex.name == "affect" and lex.channel_names == ["valence"]
        np.testing.assert_array_equal(lex.entries["good"], [3.0])

    def test_comments_blank_lines_and_case(self, tmp_path):
        lex = load_lexicon(_lex(tmp_path, "#channels\ta\tb\n\n# note\nGood\t1\t2\n"))
        np.testing.assert_array_equal(lex.entries["good"], [1.0, 2.0])

    def test_duplicates_counted(self, tmp_path):
        lex = load_lexicon(_lex(tmp_path, "#channels\tv\nx\t1\nx\t2\n"))
        assert lex.duplicates == 1
        np.testing.assert_array_equal(lex.entries["x"], [2.0])

    @pytest.mark.parametrize("text, line", [
        ("good\t3\n", 1),
        ("#channels\tv\ngood\t3\t4\n", 2),
        ("#channels\tv\ngood\tx\n", 2),
        ("#channels\tv\n\t3\n", 2),
    ])
    def test_malformed(self, tmp_path, text, line):
        with pytest.raises(ParseError) as info:
            load_lexicon(_lex(tmp_path, text))
        assert info.value.line == line

    def test_negation_needs_one_channel(self, tmp_path):
        with pytest.raises(ParseError):
            load_lexicon(_lex(tmp_path, "#channels\ta\tb\nnot\t1\t1\n", "negation.tsv"))


class TestFeaturize:
    def test_hand_example(self):
        v = featurize(["good", "good", "bad"], [VALENCE]).values
        np.testing.assert_array_equal(v, [3.0, 3.0, 1.0, 3.0])

    def test_no_hits_is_zero(self):
        np.testing.assert_array_equal(featurize(["meh"], [VALENCE]).values, np.zeros(4))

    def test_negation_count_only(self):
        neg = Lexicon("negation", ["neg"], {"not": np.array([1.0]), "no": np.array([1.0])})
        fv = featurize(["no", "not", "good", "not"], [VALENCE, neg])
        assert fv.layout[-1] == ("negation", "neg", "count")
        assert fv.values.shape == (5,) and fv.values[-1] == 3.0

    def test_layout_order(self):
        lex = Lexicon("emo", ["anger", "joy"])
        assert feature_layout([lex]) == [
            ("emo", ch, agg) for ch in ("anger", "joy") for agg in ("count", "sum", "mean", "max")]

    @given(st.lists(st.sampled_from(["good", "bad", "meh", "fine"]), max_size=8))
    def test_permutation_invariant(self, toks):
        base = featurize(toks, [VALENCE]).values
        for perm in itertools.islice(itertools.permutations(toks), 20):
            np.testing.assert_array_equal(featurize(list(perm), [VALENCE]).values, base)
