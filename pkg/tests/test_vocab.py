"""Tests for byte-pair vocabulary training, coding, merging, and file IO."""

from __future__ import annotations

import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dwc_curator.vocab import (
    REFERENCE_BASE_SIZE,
    REFERENCE_EXTENSION_SIZE,
    REFERENCE_MERGED_SIZE,
    UNKNOWN,
    WORD_END,
    VocabError,
    Vocabulary,
    _base_symbols,
    _piece_symbols,
    decode,
    encode,
    load_vocab,
    merge_vocab,
    save_vocab,
    split_pieces,
    train_bpe,
)

# ---------------------------------------------------------------------------
# Reference trainer and encoder, written straight from the documented rules:
# count adjacent pairs weighted by piece frequency, merge the most frequent
# pair (ties to the lexicographically smaller one), skip a pair whose joined
# string already names a token, and encode by replaying merges in order.
# ---------------------------------------------------------------------------


def _oracle_replace(symbols: list[str], pair: tuple[str, str], product: str) -> list[str]:
    out: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(product)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def _oracle_train(corpus, num_merges, mode):
    piece_freq = Counter()
    for text in corpus:
        piece_freq.update(split_pieces(text, mode))
    seqs = [[list(_piece_symbols(p, mode)), f] for p, f in piece_freq.items()]
    tokens = sorted(_base_symbols(mode, piece_freq))
    token_set = set(tokens)
    merges: list[tuple[str, str]] = []
    while len(merges) < num_merges:
        counts: Counter = Counter()
        for seq, freq in seqs:
            for pair in zip(seq, seq[1:]):
                counts[pair] += freq
        eligible = [p for p in counts if p[0] + p[1] not in token_set]
        if not eligible:
            break
        best = min(eligible, key=lambda p: (-counts[p], p))
        product = best[0] + best[1]
        merges.append(best)
        tokens.append(product)
        token_set.add(product)
        for item in seqs:
            item[0] = _oracle_replace(item[0], best, product)
    return tokens, merges


def _oracle_encode(text, vocab):
    ids: list[int] = []
    for piece in split_pieces(text, vocab.mode):
        symbols = list(_piece_symbols(piece, vocab.mode))
        if vocab.mode == "whitespace":
            symbols = [s if s in vocab.token_to_id else UNKNOWN for s in symbols]
        for pair in vocab.merges:
            symbols = _oracle_replace(symbols, pair, pair[0] + pair[1])
        ids.extend(vocab.token_to_id[s] for s in symbols)
    return ids


class TestOracleAgreement:
    def test_training_and_encoding_match_reference(self):
        rng = random.Random(20240816)
        for trial in range(40):
            mode = "byte" if trial % 2 == 0 else "whitespace"
            corpus = []
            for _ in range(rng.randrange(1, 8)):
                words = [
                    "".join(rng.choice("abcde") for _ in range(rng.randrange(1, 7)))
                    for _ in range(rng.randrange(0, 12))
                ]
                corpus.append(" ".join(words))
            num_merges = rng.randrange(0, 21)
            vocab = train_bpe(corpus, num_merges=num_merges, mode=mode)
            ref_tokens, ref_merges = _oracle_train(corpus, num_merges, mode)
            assert list(vocab.entries) == ref_tokens, (trial, corpus, num_merges)
            assert list(vocab.merges) == ref_merges, (trial, corpus, num_merges)
            probe = " ".join(corpus) + " extra ddd"
            assert encode(probe, vocab) == _oracle_encode(probe, vocab), trial


class TestFrozenExamples:
    def test_whitespace_training(self):
        vocab = train_bpe(["low lower lowest"], num_merges=3, mode="whitespace")
        assert vocab.entries == (
            "</w>", "<unk>", "e", "l", "o", "r", "s", "t", "w",
            "lo", "low", "lowe",
        )
        assert vocab.merges == (("l", "o"), ("lo", "w"), ("low", "e"))
        assert encode("low low", vocab) == [10, 0, 10, 0]
        assert decode([10, 0, 10, 0], vocab) == "low low"

    def test_byte_training(self):
        vocab = train_bpe(["aa aa"], num_merges=2, mode="byte")
        assert vocab.size == 258
        assert vocab.entries[:256] == tuple(chr(i) for i in range(256))
        assert vocab.entries[256:] == ("aa", "aa ")
        assert vocab.merges == (("a", "a"), ("aa", " "))
        assert encode("aa aa", vocab) == [257, 256]
        assert encode("b aa", vocab) == [98, 32, 256]
        assert decode([257, 256], vocab) == "aa aa"

    def test_equal_counts_take_smaller_pair(self):
        vocab = train_bpe(["ba ba"], num_merges=1, mode="whitespace")
        assert vocab.merges == (("a", WORD_END),)

    def test_candidate_rebuilding_existing_token_is_skipped(self):
        # In round six the raw argmax is ("</w", ">"), whose product is the
        # word-end marker itself, already a base token; training must take
        # the next candidate instead and never duplicate an entry.
        corpus = ["</w> </w> </w> </w </w </w </w </w ww ww ww ww ww"]
        vocab = train_bpe(corpus, num_merges=7, mode="whitespace")
        assert vocab.merges == (
            ("w", "</w>"),
            ("<", "/"),
            ("</", "w</w>"),
            ("w", "w</w>"),
            ("</", "w"),
            (">", "</w>"),
            ("</w", "></w>"),
        )
        assert vocab.entries == (
            "/", "<", "</w>", "<unk>", ">", "w",
            "w</w>", "</", "</w</w>", "ww</w>", "</w", "></w>", "</w></w>",
        )
        assert len(set(vocab.entries)) == vocab.size


class TestSplitPieces:
    def test_byte_pieces_keep_spaces(self):
        assert split_pieces("a b", "byte") == ["a ", "b"]
        assert split_pieces("a  b", "byte") == ["a ", " ", "b"]
        assert split_pieces("ab ", "byte") == ["ab "]
        assert split_pieces("", "byte") == []

    def test_whitespace_pieces_are_words(self):
        assert split_pieces("a  b\nc", "whitespace") == ["a", "b", "c"]
        assert split_pieces("", "whitespace") == []

    def test_unknown_mode(self):
        with pytest.raises(VocabError, match="unknown mode"):
            split_pieces("a", "char")


@pytest.fixture(scope="module")
def byte_vocab() -> Vocabulary:
    corpus = ["the cat sat on the mat", "the dog ate the food", "héllo wörld"]
    return train_bpe(corpus, num_merges=30, mode="byte")


@pytest.fixture(scope="module")
def word_vocab() -> Vocabulary:
    corpus = ["the cat sat on the mat", "the dog ate the food"]
    return train_bpe(corpus, num_merges=20, mode="whitespace")


class TestEncodeDecode:
    def test_byte_round_trip_on_training_text(self, byte_vocab):
        text = "the cat ate the food"
        assert decode(encode(text, byte_vocab), byte_vocab) == text

    def test_byte_round_trip_unicode(self, byte_vocab):
        text = "héllo wörld あい \U0001f600 end"
        assert decode(encode(text, byte_vocab), byte_vocab) == text

    @given(text=st.text(max_size=60))
    @settings(max_examples=150)
    def test_byte_round_trip_any_text(self, byte_vocab, text):
        assert decode(encode(text, byte_vocab), byte_vocab) == text

    @given(
        text=st.text(
            alphabet="theca tsodgnfm ",
            max_size=40,
        )
    )
    @settings(max_examples=100)
    def test_whitespace_round_trip_is_space_normalized(self, word_vocab, text):
        assert decode(encode(text, word_vocab), word_vocab) == " ".join(text.split())

    def test_whitespace_unknown_symbols(self, word_vocab):
        ids = encode("zz", word_vocab)
        assert word_vocab.id_of(UNKNOWN) in ids
        assert decode(ids, word_vocab) == "<unk><unk>"

    def test_empty_text(self, byte_vocab, word_vocab):
        assert encode("", byte_vocab) == []
        assert encode("", word_vocab) == []
        assert decode([], byte_vocab) == ""
        assert decode([], word_vocab) == ""

    def test_encode_is_stable_across_calls(self, byte_vocab):
        text = "the cat sat on the mat again and again"
        assert encode(text, byte_vocab) == encode(text, byte_vocab)

    def test_token_lookup_helpers(self, byte_vocab):
        idx = byte_vocab.id_of("a")
        assert byte_vocab.token_of(idx) == "a"
        assert byte_vocab.size == len(byte_vocab.entries)


class TestTrainValidation:
    def test_both_size_arguments_rejected(self):
        with pytest.raises(ValueError, match="not both"):
            train_bpe(["a b"], num_merges=1, target_size=300)

    def test_missing_size_arguments_rejected(self):
        with pytest.raises(ValueError, match="required"):
            train_bpe(["a b"])

    def test_target_below_base_rejected(self):
        with pytest.raises(ValueError, match="below base symbol count"):
            train_bpe(["a b"], target_size=10, mode="byte")

    def test_target_size_reached_exactly(self):
        vocab = train_bpe(["ab ab ab cd cd"], target_size=260, mode="byte")
        assert vocab.size == 260
        assert len(vocab.merges) == 4

    def test_unknown_mode_rejected(self):
        with pytest.raises(VocabError, match="unknown mode"):
            train_bpe(["a b"], num_merges=1, mode="char")

    def test_training_stops_when_pairs_run_out(self):
        vocab = train_bpe(["ab"], num_merges=50, mode="whitespace")
        assert vocab.merges == (("a", "b"), ("ab", WORD_END))
        assert encode("ab", vocab) == [vocab.id_of("ab</w>")]

    def test_zero_merges(self):
        vocab = train_bpe(["a b"], num_merges=0, mode="byte")
        assert vocab.size == 256
        assert vocab.merges == ()


class TestVocabularyValidation:
    def test_duplicate_entries_rejected(self):
        with pytest.raises(VocabError, match="not unique"):
            Vocabulary(mode="whitespace", entries=("a", "a"), merges=())

    def test_merge_product_must_exist(self):
        entries = tuple(chr(i) for i in range(256))
        with pytest.raises(VocabError, match="missing from entries"):
            Vocabulary(mode="byte", entries=entries, merges=(("a", "b"),))

    def test_unknown_mode_rejected(self):
        with pytest.raises(VocabError, match="unknown mode"):
            Vocabulary(mode="char", entries=("a",), merges=())


class TestMergeVocab:
    def test_reference_sizes_are_consistent(self):
        assert REFERENCE_BASE_SIZE == 151_643
        assert REFERENCE_EXTENSION_SIZE == 15_901
        assert REFERENCE_MERGED_SIZE == 167_544
        assert REFERENCE_BASE_SIZE + REFERENCE_EXTENSION_SIZE == REFERENCE_MERGED_SIZE

    def test_base_ids_preserved_and_collisions_counted(self):
        base = Vocabulary(
            mode="whitespace",
            entries=("</w>", "<unk>", "a", "b", "ab"),
            merges=(("a", "b"),),
        )
        extension = Vocabulary(
            mode="whitespace",
            entries=("</w>", "<unk>", "a", "b", "c", "ab", "bc"),
            merges=(("a", "b"), ("b", "c")),
        )
        merged, collisions = merge_vocab(base, extension)
        assert collisions == 5
        assert merged.entries == ("</w>", "<unk>", "a", "b", "ab", "c", "bc")
        assert merged.merges == (("a", "b"), ("b", "c"))
        for token in base.entries:
            assert merged.id_of(token) == base.id_of(token)
        assert merged.size == base.size + extension.size - collisions

    def test_trained_vocabularies_merge(self):
        base = train_bpe(["ab ab"], num_merges=1, mode="byte")
        extension = train_bpe(["ab ab cd cd"], num_merges=2, mode="byte")
        merged, collisions = merge_vocab(base, extension)
        assert collisions == 257
        assert merged.size == 258
        assert merged.entries[:257] == base.entries
        assert merged.merges == (("a", "b"), ("ab", " "))
        assert merged.id_of("ab") == base.id_of("ab") == 256

    def test_extension_merge_survives_via_base_token(self):
        base = Vocabulary(
            mode="whitespace", entries=("</w>", "<unk>", "a", "b", "ab"), merges=()
        )
        extension = Vocabulary(
            mode="whitespace",
            entries=("</w>", "<unk>", "a", "b", "ab"),
            merges=(("a", "b"),),
        )
        merged, collisions = merge_vocab(base, extension)
        assert collisions == 5
        assert merged.merges == (("a", "b"),)

    def test_mode_mismatch_rejected(self):
        base = train_bpe(["a b"], num_merges=0, mode="byte")
        extension = train_bpe(["a b"], num_merges=0, mode="whitespace")
        with pytest.raises(VocabError, match="cannot merge"):
            merge_vocab(base, extension)

    def test_merged_vocabulary_encodes(self):
        base = train_bpe(["ab ab"], num_merges=1, mode="byte")
        extension = train_bpe(["cd cd"], num_merges=1, mode="byte")
        merged, _ = merge_vocab(base, extension)
        text = "ab cd"
        assert decode(encode(text, merged), merged) == text


class TestSaveLoad:
    def test_round_trip(self, tmp_path, byte_vocab):
        vocab_path = tmp_path / "vocab.txt"
        merges_path = tmp_path / "merges.txt"
        save_vocab(byte_vocab, vocab_path, merges_path)
        loaded = load_vocab(vocab_path, merges_path)
        assert loaded.mode == byte_vocab.mode
        assert loaded.entries == byte_vocab.entries
        assert loaded.merges == byte_vocab.merges

    def test_round_trip_with_escaped_tokens(self, tmp_path):
        vocab = Vocabulary(
            mode="whitespace",
            entries=("</w>", "<unk>", "a b", "c\td", "e\nf", "g\rh", "i\\j"),
            merges=(),
        )
        vocab_path = tmp_path / "vocab.txt"
        merges_path = tmp_path / "merges.txt"
        save_vocab(vocab, vocab_path, merges_path)
        loaded = load_vocab(vocab_path, merges_path)
        assert loaded.entries == vocab.entries

    def test_merge_operands_with_spaces_round_trip(self, tmp_path):
        vocab = train_bpe(["aa aa"], num_merges=2, mode="byte")
        assert ("aa", " ") in vocab.merges
        vocab_path = tmp_path / "vocab.txt"
        merges_path = tmp_path / "merges.txt"
        save_vocab(vocab, vocab_path, merges_path)
        assert load_vocab(vocab_path, merges_path).merges == vocab.merges

    def test_vocab_header_required(self, tmp_path):
        vocab_path = tmp_path / "vocab.txt"
        merges_path = tmp_path / "merges.txt"
        vocab_path.write_text("bogus\na\n", encoding="utf-8")
        merges_path.write_text("dwc-merges v1 mode=byte\n", encoding="utf-8")
        with pytest.raises(VocabError, match="missing vocabulary header"):
            load_vocab(vocab_path, merges_path)

    def test_merges_header_required(self, tmp_path, byte_vocab):
        vocab_path = tmp_path / "vocab.txt"
        merges_path = tmp_path / "merges.txt"
        save_vocab(byte_vocab, vocab_path, merges_path)
        merges_path.write_text("bogus\n", encoding="utf-8")
        with pytest.raises(VocabError, match="missing merges header"):
            load_vocab(vocab_path, merges_path)

    def test_mode_disagreement_rejected(self, tmp_path):
        vocab_path = tmp_path / "vocab.txt"
        merges_path = tmp_path / "merges.txt"
        vocab_path.write_text("dwc-vocab v1 mode=byte\na\n", encoding="utf-8")
        merges_path.write_text("dwc-merges v1 mode=whitespace\n", encoding="utf-8")
        with pytest.raises(VocabError, match="disagree on mode"):
            load_vocab(vocab_path, merges_path)

    def test_malformed_merge_line_rejected(self, tmp_path):
        vocab_path = tmp_path / "vocab.txt"
        merges_path = tmp_path / "merges.txt"
        vocab_path.write_text("dwc-vocab v1 mode=whitespace\na\nb\nab\n", encoding="utf-8")
        merges_path.write_text(
            "dwc-merges v1 mode=whitespace\na b c\n", encoding="utf-8"
        )
        with pytest.raises(VocabError, match="malformed merge line"):
            load_vocab(vocab_path, merges_path)

    def test_dangling_escape_rejected(self, tmp_path):
        vocab_path = tmp_path / "vocab.txt"
        merges_path = tmp_path / "merges.txt"
        vocab_path.write_text("dwc-vocab v1 mode=whitespace\na\\\n", encoding="utf-8")
        merges_path.write_text("dwc-merges v1 mode=whitespace\n", encoding="utf-8")
        with pytest.raises(VocabError, match="dangling escape"):
            load_vocab(vocab_path, merges_path)

    def test_unknown_escape_rejected(self, tmp_path):
        vocab_path = tmp_path / "vocab.txt"
        merges_path = tmp_path / "merges.txt"
        vocab_path.write_text("dwc-vocab v1 mode=whitespace\na\\q\n", encoding="utf-8")
        merges_path.write_text("dwc-merges v1 mode=whitespace\n", encoding="utf-8")
        with pytest.raises(VocabError, match="unknown escape"):
            load_vocab(vocab_path, merges_path)


class TestStructuralInvariants:
    @given(
        seed=st.integers(min_value=0, max_value=2**32 - 1),
        num_merges=st.integers(min_value=0, max_value=25),
    )
    @settings(max_examples=40, deadline=None)
    def test_trained_vocabulary_is_well_formed(self, seed, num_merges):
        rng = random.Random(seed)
        corpus = [
            " ".join(
                "".join(rng.choice("abc") for _ in range(rng.randrange(1, 5)))
                for _ in range(rng.randrange(0, 9))
            )
            for _ in range(rng.randrange(1, 5))
        ]
        vocab = train_bpe(corpus, num_merges=num_merges, mode="byte")
        assert len(set(vocab.entries)) == vocab.size
        assert vocab.size == 256 + len(vocab.merges)
        for left, right in vocab.merges:
            assert left + right in vocab.token_to_id
        for text in corpus:
            assert decode(encode(text, vocab), vocab) == text
