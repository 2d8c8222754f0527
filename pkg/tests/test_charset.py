import pytest
from hypothesis import given
from hypothesis import strategies as st

from iterfeed.charset import EOS, PAD, UNK, Charset, UnknownCharacterError


def test_layout():
    cs = Charset("abc")
    assert cs.size == 6
    assert cs.encode("cab") == [5, 3, 4]
    assert (PAD, EOS, UNK) == (0, 1, 2)


def test_unknown_character_names_offender():
    with pytest.raises(UnknownCharacterError) as e:
        Charset("ab").encode("abz")
    assert e.value.char == "z" and e.value.word == "abz"
    assert Charset("ab").encode("az", strict=False) == [3, UNK]


def test_decode_stops_at_eos_and_pad():
    cs = Charset("ab")
    assert cs.decode([3, 4, EOS, 3]) == "ab"
    assert cs.decode([4, PAD, 3]) == "b"
    assert cs.decode([]) == ""


def test_rejects_duplicate_or_empty_symbols():
    with pytest.raises(ValueError):
        Charset("aa")
    with pytest.raises(ValueError):
        Charset("")


@given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz", max_size=20))
def test_roundtrip(word):
    cs = Charset()
    assert cs.decode(cs.encode(word)) == word
