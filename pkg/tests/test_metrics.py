import pytest
from hypothesis import given, settings, strategies as st

from ctcmix.errors import LengthMismatch
from ctcmix.metrics import cer, levenshtein

words = st.text(alphabet="abcd", max_size=8)


def _table_distance(a, b):
    # full (len(a)+1) x (len(b)+1) table, written independently of the library version
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[-1][-1]


def test_classic_distance():
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein("", "abc") == 3
    assert levenshtein("abc", "abc") == 0


def test_cer_examples():
    report = cer(["abcdx", "abcdy"], ["abcde", "abcde"])
    assert report.cer == pytest.approx(0.20)
    assert report.edits == 2 and report.ref_chars == 10
    assert cer(["ba"], ["ab"]).cer == 1.0


def test_cer_summary_and_tsv():
    report = cer(["ab"], ["ac"], loss=1.5)
    assert report.summary() == "cer=0.500000 lines=1 edits=1"
    assert report.to_tsv().splitlines() == ["reference\tprediction\tedits", "ac\tab\t1"]
    assert report.loss == 1.5


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        cer(["a"], ["a", "b"])


def test_empty_references_are_degenerate():
    report = cer(["ab", ""], ["", ""])
    assert report.degenerate and report.cer == 2.0


@given(words, words)
@settings(max_examples=150, deadline=None)
def test_matches_table_and_is_symmetric(a, b):
    d = levenshtein(a, b)
    assert d == _table_distance(a, b) == levenshtein(b, a)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))


@given(words, words, words)
@settings(max_examples=150, deadline=None)
def test_triangle_inequality(a, b, c):
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


@given(st.lists(st.tuples(words, words.filter(bool)), min_size=1, max_size=6))
@settings(max_examples=100, deadline=None)
def test_cer_is_length_weighted_mean_of_line_rates(pairs):
    preds, refs = zip(*pairs)
    total = sum(len(r) for r in refs)
    weighted = sum(len(r) / total * (levenshtein(p, r) / len(r)) for p, r in pairs)
    assert cer(preds, refs).cer == pytest.approx(weighted, rel=1e-12)
