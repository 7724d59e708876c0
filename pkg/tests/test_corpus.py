import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minibert.corpus import (
    CleaningConfig,
    CorpusManifest,
    Document,
    Sentence,
    SegmenterConfig,
    clean_manifest,
    corpus_stats,
    ingest_plaintext,
    normalize_text,
    read_exclusion_list,
    read_jsonl,
    remove_overlap,
    segment_sentences,
    split_corpus,
    split_sizes,
    write_exclusion_list,
    write_jsonl,
)
from minibert.errors import CorpusDecodeError, DataError, SplitSizeError


def make_manifest(n, source="books", sentences=("Een zin.", "Nog een zin.")):
    docs = tuple(Document(f"{source}-{i:04d}", source, tuple(Sentence(s) for s in sentences)) for i in range(n))
    return CorpusManifest(docs)


# --- normalization and sentences ---------------------------------------------


def test_normalize_collapses_whitespace_and_drops_controls():
    assert normalize_text("  a\t b​\n\nc\x00 ") == "a b c"


@given(st.text())
def test_normalize_is_idempotent(text):
    once = normalize_text(text)
    assert normalize_text(once) == once


def test_sentence_rejects_unnormalized_text():
    with pytest.raises(DataError):
        Sentence(" a")
    with pytest.raises(DataError):
        Sentence("")


def test_sentence_words_are_space_split():
    assert Sentence("Hallo mooie wereld.").words == ("Hallo", "mooie", "wereld.")


def test_segmenter_splits_on_terminator_before_uppercase():
    assert [s.text for s in segment_sentences("Hallo wereld. Dit is tekst.")] == ["Hallo wereld.", "Dit is tekst."]


def test_segmenter_keeps_abbreviations_and_lowercase_continuations():
    texts = [s.text for s in segment_sentences("Zie bijv. Jan. Hij komt o.a. morgen. 3 dagen later!")]
    assert texts == ["Zie bijv. Jan.", "Hij komt o.a. morgen.", "3 dagen later!"]
    custom = SegmenterConfig(abbreviations=frozenset(), terminators=".")
    assert len(segment_sentences("Zie bijv. Jan.", custom)) == 2


# --- ingestion ---------------------------------------------------------------


def test_ingest_one_block_two_sentences(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("Hallo wereld. Dit is tekst.\n", encoding="utf-8")
    manifest = ingest_plaintext(path, "books")
    assert len(manifest) == 1
    assert [s.text for s in manifest.documents[0].sentences] == ["Hallo wereld.", "Dit is tekst."]
    assert manifest.documents[0].doc_id == "books-000000"


def test_ingest_empty_and_whitespace_only(tmp_path):
    empty = tmp_path / "e.txt"
    empty.write_bytes(b"")
    assert len(ingest_plaintext(empty, "x")) == 0
    blank = tmp_path / "b.txt"
    blank.write_text("   \n\t\n  \n", encoding="utf-8")
    assert len(ingest_plaintext(blank, "x")) == 0


def test_ingest_blocks_become_documents(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("Eerste doc.\nNog een regel.\n\n\nTweede doc.\n", encoding="utf-8")
    manifest = ingest_plaintext(path, "news")
    assert manifest.doc_ids == ["news-000000", "news-000001"]
    assert len(manifest.documents[0].sentences) == 2


def test_ingest_invalid_utf8_reports_offset(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_bytes(b"Goed begin.\xff rest")
    with pytest.raises(CorpusDecodeError) as info:
        ingest_plaintext(path, "x")
    assert info.value.offset == 11


def test_ingest_missing_file_is_io_error(tmp_path):
    with pytest.raises(OSError):
        ingest_plaintext(tmp_path / "nope.txt", "x")


# --- cleaning and exclusion ------------------------------------------------------


def test_clean_drops_sources_short_and_symbol_heavy_docs():
    docs = (
        Document("a", "books", (Sentence("Eerste zin."), Sentence("Tweede zin."))),
        Document("b", "chat", (Sentence("Eerste zin."), Sentence("Tweede zin."))),
        Document("c", "books", (Sentence("Alleen."),)),
        Document("d", "books", (Sentence("1234 5678."), Sentence("!!!! ab."))),
    )
    kept = clean_manifest(CorpusManifest(docs))
    assert kept.doc_ids == ["a"]
    loose = CleaningConfig(excluded_sources=frozenset(), min_sentences=1, max_non_letter_fraction=1.0)
    assert clean_manifest(CorpusManifest(docs), loose).doc_ids == ["a", "b", "c", "d"]


def test_remove_overlap_examples():
    m = make_manifest(10)
    out = remove_overlap(m, {"books-0001", "books-0002", "books-0003"})
    assert len(out) == 7
    assert out.exclusion_ids == {"books-0001", "books-0002", "books-0003"}
    assert remove_overlap(m, set()).documents == m.documents
    unknown = remove_overlap(m, {"elsewhere-1"})
    assert unknown.documents == m.documents and unknown.exclusion_ids == {"elsewhere-1"}


def test_remove_overlap_is_idempotent():
    m = make_manifest(20)
    ids = {"books-0004", "books-0010"}
    once = remove_overlap(m, ids)
    assert remove_overlap(once, ids) == once


def test_manifest_rejects_duplicates_and_excluded_ids():
    doc = Document("a", "s", (Sentence("x"),))
    with pytest.raises(DataError):
        CorpusManifest((doc, doc))
    with pytest.raises(DataError):
        CorpusManifest((doc,), frozenset({"a"}))


# --- splitting ------------------------------------------------------------------------


def test_split_examples():
    assert tuple(map(len, split_corpus(make_manifest(10), 0))) == (8, 1, 1)
    assert tuple(map(len, split_corpus(make_manifest(100), 0))) == (80, 10, 10)
    with pytest.raises(SplitSizeError):
        split_corpus(make_manifest(9), 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(10, 1000), st.integers(0, 2**32))
def test_split_partition_and_rounding(n, seed):
    m = make_manifest(n)
    train, dev, test = split_corpus(m, seed)
    assert (len(train), len(dev), len(test)) == (n - 2 * (n // 10), n // 10, n // 10)
    ids = [set(p.doc_ids) for p in (train, dev, test)]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert ids[0] | ids[1] | ids[2] == set(m.doc_ids)


def test_split_is_order_independent_and_seeded():
    m = make_manifest(50)
    reversed_m = CorpusManifest(tuple(reversed(m.documents)))
    a = split_corpus(m, 7)
    b = split_corpus(reversed_m, 7)
    assert [p.doc_ids for p in a] == [p.doc_ids for p in b]
    assert [p.doc_ids for p in split_corpus(m, 8)] != [p.doc_ids for p in a]


def test_split_sizes_matches_rule():
    assert split_sizes(19) == (17, 1, 1)


# --- stats and file formats ------------------------------------------------------------


def test_stats():
    assert corpus_stats(CorpusManifest()).total.tokens == 0
    one = CorpusManifest((Document("d", "s", (Sentence("a b"), Sentence("c"))),))
    assert corpus_stats(one).total.tokens == 3 == one.token_count
    two = CorpusManifest(make_manifest(3, "a").documents + make_manifest(2, "b").documents)
    report = corpus_stats(two)
    assert report.per_source["a"].documents == 3 and report.per_source["b"].documents == 2
    assert report.total.sentences == sum(s.sentences for s in report.per_source.values())
    assert report.to_tsv().splitlines()[-1] == "TOTAL\t5\t10\t25"


def test_jsonl_round_trip(tmp_path):
    m = make_manifest(4)
    path = tmp_path / "docs.jsonl"
    write_jsonl(m, path)
    first = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert first == {"doc_id": "books-0000", "source": "books", "sentences": ["Een zin.", "Nog een zin."]}
    assert read_jsonl(path).documents == m.documents


def test_jsonl_drops_empty_documents_and_reports_bad_lines(tmp_path):
    path = tmp_path / "docs.jsonl"
    path.write_text('{"doc_id": "a", "source": "s", "sentences": ["  ", ""]}\n', encoding="utf-8")
    assert len(read_jsonl(path)) == 0
    path.write_text('{"doc_id": "a", "source": "s", "sentences": ["x"]}\n{"doc_id": 1}\n', encoding="utf-8")
    with pytest.raises(DataError, match=":2:"):
        read_jsonl(path)


def test_exclusion_list_round_trip(tmp_path):
    path = tmp_path / "ids.txt"
    write_exclusion_list(["b", "a"], path)
    assert path.read_text(encoding="utf-8") == "a\nb\n"
    assert read_exclusion_list(path) == {"a", "b"}
