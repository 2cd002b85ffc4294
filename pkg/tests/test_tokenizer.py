import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delicate.chem.tokenizer import (
    CLS_ID, SEP_ID, SPECIAL_TOKENS, UNK_ID, SequenceLengthError, SmilesSyntaxError, Vocab,
    build_vocab, detokenize, split_tokens, tokenize,
)
from delicate.corpus import gen_corpus


@pytest.fixture(scope="module")
def corpus():
    return gen_corpus(3, 500)


def test_cco_ids():
    vocab = build_vocab(["CCO"])
    c, o = vocab.lookup("C"), vocab.lookup("O")
    assert tokenize("CCO", vocab) == [CLS_ID, c, c, o, SEP_ID]


def test_two_letter_halogen_is_one_token():
    assert split_tokens("c1ccccc1Cl") == ["c", "1", "c", "c", "c", "c", "c", "1", "Cl"]
    assert split_tokens("BrCBr") == ["Br", "C", "Br"]


def test_bracket_atom_is_one_token():
    vocab = build_vocab(["[NH4+]"])
    ids = tokenize("[NH4+]", vocab)
    assert len(ids) == 3 and vocab.token_of(ids[1]) == "[NH4+]"


def test_percent_ring_closure_is_one_token():
    assert split_tokens("C%10CC%10") == ["C", "%10", "C", "C", "%10"]


def test_unterminated_bracket_raises():
    with pytest.raises(SmilesSyntaxError):
        split_tokens("C[NH4+")


def test_length_error():
    vocab = build_vocab(["CCCC"])
    with pytest.raises(SequenceLengthError):
        tokenize("CCCC", vocab, max_len=5)
    assert len(tokenize("CCCC", vocab, max_len=6)) == 6


def test_unknown_token_maps_to_unk():
    vocab = build_vocab(["CCO"])
    assert tokenize("CN", vocab)[2] == UNK_ID


def test_detokenize_examples():
    vocab = build_vocab(["CCO"])
    assert detokenize(tokenize("CCO", vocab), vocab) == "CCO"
    assert detokenize([CLS_ID, SEP_ID], vocab) == ""


def test_detokenize_out_of_range():
    vocab = build_vocab(["CCO"])
    with pytest.raises(IndexError):
        detokenize([CLS_ID, 99, SEP_ID], vocab)


def test_vocab_size_and_dedup():
    assert build_vocab(["CCO"]).size == 7
    assert build_vocab(["CCO", "CCO"]) == build_vocab(["CCO"])
    assert build_vocab(["CCO"]).tokens[:5] == SPECIAL_TOKENS


def test_empty_corpus_raises():
    with pytest.raises(ValueError):
        build_vocab([])


def test_vocab_rejects_bad_specials():
    with pytest.raises(ValueError):
        Vocab(("C",) + SPECIAL_TOKENS)


def test_lookup_inverts_token_of(corpus):
    vocab = build_vocab(corpus)
    for i in range(vocab.size):
        assert vocab.lookup(vocab.token_of(i)) == i


def test_round_trip_over_corpus(corpus):
    vocab = build_vocab(corpus)
    for smi in corpus:
        ids = tokenize(smi, vocab)
        assert UNK_ID not in ids
        assert detokenize(ids, vocab) == smi


def test_vocab_file_round_trip(tmp_path, corpus):
    vocab = build_vocab(corpus)
    vocab.save(tmp_path / "vocab.txt")
    assert Vocab.load(tmp_path / "vocab.txt") == vocab


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["C", "c", "N", "O", "Cl", "Br", "[nH]", "[O-]", "(", ")", "=", "1", "%12"]),
                min_size=1, max_size=30))
def test_split_inverts_join(tokens):
    assert split_tokens("".join(tokens)) == tokens
