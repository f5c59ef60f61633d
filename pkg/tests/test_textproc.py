from concurrent.futures import ThreadPoolExecutor

import pytest
from hypothesis import given, strategies as st

from fusionqa.textproc import concat, count_tokens, is_punct, normalize_answer, tokenize


@pytest.mark.parametrize(
    "text, expected",
    [
        ("", []),
        ("The Lakers, 1966!", ["the", "lakers", "1966"]),
        ("Penn State", ["penn", "state"]),
        ("  ...  !!  ", []),
        ("don't", ["don't"]),
        ("«Café» au\tlait", ["café", "au", "lait"]),
    ],
)
def test_tokenize_examples(text, expected):
    assert list(tokenize(text).tokens) == expected


def test_offsets_point_at_surface():
    seq = tokenize("The Lakers, 1966!")
    assert seq.offsets == ((0, 3), (4, 10), (12, 16))
    assert seq.surface(0, 2) == "The Lakers"


@pytest.mark.parametrize(
    "text, expected",
    [("The Lakers", "lakers"), ("", ""), ("Los-Angeles  Lakers", "losangeles lakers"), ("theater", "theater"),
     ("A  an THE", ""), (" an apple ", "apple")],
)
def test_normalize_answer_examples(text, expected):
    assert normalize_answer(text) == expected


@pytest.mark.parametrize("text, n", [("", 0), ("a b c", 3), ("The Lakers, 1966!", 3)])
def test_count_tokens(text, n):
    assert count_tokens(text) == n


def test_concat_literal_markers_and_empty_parts():
    seq = concat([tokenize("a b"), tokenize(""), "[sep]", tokenize("c")])
    assert seq.tokens == ("a", "b", "[sep]", "c")
    assert seq.text == "a b [SEP] c"
    assert [seq.text[s:e].lower() for s, e in seq.offsets] == list(seq.tokens)


def test_breaks_mark_non_space_separators():
    seq = concat([tokenize("a b"), tokenize("c")], sep=" | ")
    assert seq.breaks() == (True, False, True)


text_st = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=80)


@given(text_st)
def test_normalize_is_idempotent(x):
    once = normalize_answer(x)
    assert normalize_answer(once) == once


@given(text_st)
def test_tokens_sit_at_their_offsets(x):
    seq = tokenize(x)
    assert len(seq.tokens) == len(seq.offsets)
    prev_end = 0
    for tok, (s, e) in zip(seq.tokens, seq.offsets):
        assert prev_end <= s < e
        prev_end = e
        assert x[s:e].lower() == tok
        assert tok and not any(ch.isspace() for ch in tok)
        assert not is_punct(tok[0]) and not is_punct(tok[-1])


@given(text_st)
def test_count_matches_tokenize(x):
    assert count_tokens(x) == len(tokenize(x).tokens)


def test_tokenize_is_pure_across_threads():
    texts = [f"Row {i}: the Lakers, {1960 + i}!" for i in range(200)]
    with ThreadPoolExecutor(8) as ex:
        par = list(ex.map(tokenize, texts))
    assert par == [tokenize(t) for t in texts]
