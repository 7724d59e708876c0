import json

import pytest

from minibert.corpus import CorpusManifest, Document, Sentence
from minibert.errors import DataError, GenerationError
from minibert.pretrain_data import (
    ACTION_KEEP,
    ACTION_MASK,
    IN_ORDER,
    SWAPPED,
    MaskedExample,
    SentencePair,
    ShardManifest,
    apply_whole_word_masking,
    generate_sop_pairs,
    iter_masked_examples,
    mask_budget,
    masking_rng,
    pack_and_shard,
    truncate_pair,
)
from minibert.rng import RNG_ID, SplitMix64
from minibert.vocab import CLS_ID, MASK_ID, NUM_SPECIALS, PAD_ID, SEP_ID, SPECIALS, TokenizedSentence, Vocabulary

LETTERS = Vocabulary(SPECIALS + tuple("abcdefghij") + tuple("##" + c for c in "abcdefghij"))


def ts(n_words, piece_per_word=1, first_id=5):
    pieces, bounds = [], []
    for w in range(n_words):
        bounds.append((len(pieces), len(pieces) + piece_per_word))
        pieces.append("a")
        pieces.extend(["##a"] * (piece_per_word - 1))
    return TokenizedSentence(tuple(pieces), tuple(LETTERS.ids(pieces)), tuple(bounds))


def doc(doc_id, *texts):
    return Document(doc_id, "t", tuple(Sentence(t) for t in texts))


# --- SOP pairs -------------------------------------------------------------------


def test_adjacent_pairs_and_keyed_coin():
    m = CorpusManifest((doc("d", "a b", "c d", "e f"), doc("single", "a")))
    pairs = list(generate_sop_pairs(m, LETTERS, seed=5))
    assert [(p.doc_id, p.index) for p in pairs] == [("d", 0), ("d", 1)]
    sentences = ["a b", "c d", "e f"]
    for p in pairs:
        swapped = SplitMix64.from_key("sop", 5, "d", p.index).random() < 0.5
        assert p.sop_label == (SWAPPED if swapped else IN_ORDER)
        earlier, later = sentences[p.index], sentences[p.index + 1]
        texts = (" ".join(p.first.pieces), " ".join(p.second.pieces))
        assert texts == ((later, earlier) if swapped else (earlier, later))


def test_single_sentence_document_yields_nothing():
    assert list(generate_sop_pairs(CorpusManifest((doc("x", "a b"),)), LETTERS, 0)) == []


# --- truncation and budget ------------------------------------------------------------


def test_truncation_from_longer_second_sentence():
    pair = SentencePair("d", 0, ts(4), ts(6), IN_ORDER)
    out = truncate_pair(pair, 8)
    assert (len(out.first), len(out.second)) == (4, 4)
    assert out.second.pieces == pair.second.pieces[:4]


def test_truncation_alternates_and_ties_cut_second():
    pair = SentencePair("d", 0, ts(5), ts(5), IN_ORDER)
    out = truncate_pair(pair, 7)
    assert (len(out.first), len(out.second)) == (4, 3)


def test_exact_fit_has_no_padding():
    pair = SentencePair("d", 0, ts(2), ts(3), IN_ORDER)
    ex = apply_whole_word_masking(pair, LETTERS, SplitMix64(1), max_seq_len=8)
    assert PAD_ID not in ex.input_ids and sum(ex.attention_mask) == 8


def test_mask_budget_rounding():
    assert mask_budget(20, 0.15) == 3
    assert mask_budget(10, 0.15) == 2  # 1.5 rounds half up
    assert mask_budget(3, 0.15) == 1  # floor of one
    assert mask_budget(30, 0.15) == 5  # 4.5 rounds half up


# --- masking -------------------------------------------------------------------------------


def check_example(ex, pair, max_seq_len):
    n_a, n_b = len(pair.first), len(pair.second)
    length = n_a + n_b + 3
    original = [CLS_ID, *pair.first.ids, SEP_ID, *pair.second.ids, SEP_ID]
    assert len(ex.input_ids) == len(ex.segment_ids) == len(ex.attention_mask) == max_seq_len
    assert ex.input_ids[0] == CLS_ID and ex.input_ids[n_a + 1] == SEP_ID and ex.input_ids[length - 1] == SEP_ID
    assert ex.segment_ids == tuple([0] * (n_a + 2) + [1] * (n_b + 1) + [0] * (max_seq_len - length))
    assert ex.attention_mask == tuple([1] * length + [0] * (max_seq_len - length))
    assert all(i == PAD_ID for i in ex.input_ids[length:])
    assert all(original[p] not in (CLS_ID, SEP_ID, PAD_ID) for p in ex.mlm_positions)
    assert list(ex.mlm_positions) == sorted(set(ex.mlm_positions))
    assert ex.mlm_labels == tuple(original[p] for p in ex.mlm_positions)
    # reconstruction
    restored = list(ex.input_ids[:length])
    for p, label in zip(ex.mlm_positions, ex.mlm_labels):
        restored[p] = label
    assert restored == original
    # unmasked positions untouched
    chosen = set(ex.mlm_positions)
    assert all(ex.input_ids[p] == original[p] for p in range(length) if p not in chosen)
    # whole words only, one action per word
    words = [(s + 1, e + 1) for s, e in pair.first.word_boundaries]
    words += [(s + n_a + 2, e + n_a + 2) for s, e in pair.second.word_boundaries]
    for s, e in words:
        inside = {p for p in range(s, e) if p in chosen}
        assert not inside or len(inside) == e - s
    for w in ex.masked_words:
        ids = ex.input_ids[w.start : w.end]
        if w.action == ACTION_MASK:
            assert all(i == MASK_ID for i in ids)
        elif w.action == ACTION_KEEP:
            assert list(ids) == original[w.start : w.end]
        else:
            assert all(i >= NUM_SPECIALS for i in ids)
    budget = mask_budget(n_a + n_b, 0.15)
    assert len(chosen) <= budget or len(ex.masked_words) == 1


def test_masking_invariants_on_corpus(small_corpus, small_vocab):
    pairs = list(generate_sop_pairs(small_corpus, small_vocab, 1))
    n = 0
    for pair, ex in iter_masked_examples(pairs, small_vocab, 24, seed=1):
        check_example(ex, pair, 24)
        n += 1
    assert n == len(pairs) > 100


def test_budget_example_twenty_pieces():
    pair = SentencePair("d", 0, ts(5, 2), ts(5, 2), IN_ORDER)
    for k in range(50):
        ex = apply_whole_word_masking(pair, LETTERS, SplitMix64(k))
        assert len(ex.mlm_positions) == 2  # words of 2 pieces: only one fits a budget of 3


def test_oversized_word_is_selected_when_nothing_fits():
    pair = SentencePair("d", 0, ts(1, 4), ts(1, 4), IN_ORDER)
    ex = apply_whole_word_masking(pair, LETTERS, SplitMix64(0))
    assert len(ex.masked_words) == 1 and len(ex.mlm_positions) == 4


def test_actions_depend_only_on_key():
    pair = SentencePair("d", 3, ts(6), ts(7), SWAPPED)
    a = apply_whole_word_masking(pair, LETTERS, masking_rng(9, "d", 3))
    b = apply_whole_word_masking(pair, LETTERS, masking_rng(9, "d", 3))
    assert a == b and a.masked_words == b.masked_words


def test_generation_errors():
    empty = TokenizedSentence((), (), ())
    with pytest.raises(GenerationError, match="d#0"):
        apply_whole_word_masking(SentencePair("d", 0, empty, empty, IN_ORDER), LETTERS, SplitMix64(0))
    with pytest.raises(GenerationError):
        apply_whole_word_masking(SentencePair("d", 0, ts(4), ts(4), IN_ORDER), LETTERS, SplitMix64(0), max_seq_len=8)
    with pytest.raises(DataError):
        list(iter_masked_examples([], LETTERS, 7, 0))


# --- shards -----------------------------------------------------------------------------------


def test_shard_chunking_and_manifest(tmp_path):
    pairs = [SentencePair(f"d{i}", 0, ts(3), ts(3), i % 2) for i in range(25)]
    manifest = pack_and_shard(pairs, LETTERS, 12, 10, 4, tmp_path)
    assert [n for _, n in manifest.shards] == [10, 10, 5]
    loaded = ShardManifest.load(tmp_path)
    assert loaded.shards == manifest.shards and loaded.rng == RNG_ID
    examples = list(loaded.examples())
    assert [e.seed_trace for e in examples][9:12] == [(0, 9), (1, 0), (1, 1)]
    line = (tmp_path / "shard-00002.jsonl").read_text(encoding="utf-8").splitlines()[0]
    assert list(json.loads(line)) == list(MaskedExample.FIELDS)
    manifest_json = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest_json["num_examples"] == 25 and manifest_json["config"]["seed"] == 4


def test_shards_are_byte_identical(tmp_path, small_corpus, small_vocab):
    outs = []
    for name in ("a", "b"):
        pairs = generate_sop_pairs(small_corpus, small_vocab, 2)
        pack_and_shard(pairs, small_vocab, 32, 50, 2, tmp_path / name)
        outs.append({p.name: p.read_bytes() for p in sorted((tmp_path / name).iterdir())})
    assert outs[0] == outs[1]
