"""Corpus ingestion, cleaning, overlap removal and document-level splits."""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import CorpusDecodeError, DataError, SplitSizeError
from .rng import hash64

DEFAULT_ABBREVIATIONS = frozenset(
    {
        "a.d.", "afb.", "bijv.", "blz.", "ca.", "d.m.v.", "d.w.z.", "dhr.", "dr.",
        "e.d.", "enz.", "etc.", "fig.", "i.p.v.", "ir.", "jhr.", "m.b.t.", "mevr.",
        "mr.", "mw.", "n.a.v.", "nl.", "nr.", "o.a.", "p.", "prof.", "resp.", "st.",
        "t.a.v.", "vgl.", "vs.", "z.g.", "zgn.",
    }
)
TERMINATORS = ".!?"


def normalize_text(text: str) -> str:
    """NFC-normalize, drop control/format characters and collapse whitespace."""
    text = unicodedata.normalize("NFC", text)
    chars = []
    for ch in text:
        if ch.isspace():
            chars.append(" ")
        elif unicodedata.category(ch)[0] == "C":
            continue
        else:
            chars.append(ch)
    return " ".join("".join(chars).split())


@dataclass(frozen=True)
class Sentence:
    text: str
    words: tuple[str, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.text:
            raise DataError("empty sentence")
        if normalize_text(self.text) != self.text:
            raise DataError(f"sentence is not normalized: {self.text!r}")
        object.__setattr__(self, "words", tuple(self.text.split(" ")))


@dataclass(frozen=True)
class Document:
    doc_id: str
    source: str
    sentences: tuple[Sentence, ...]

    def __post_init__(self) -> None:
        if not self.sentences:
            raise DataError(f"document {self.doc_id!r} has no sentences")

    @property
    def token_count(self) -> int:
        return sum(len(s.words) for s in self.sentences)

    def to_json(self) -> dict:
        return {"doc_id": self.doc_id, "source": self.source, "sentences": [s.text for s in self.sentences]}


@dataclass(frozen=True)
class CorpusManifest:
    documents: tuple[Document, ...] = ()
    exclusion_ids: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for doc in self.documents:
            if doc.doc_id in seen:
                raise DataError(f"duplicate doc_id {doc.doc_id!r}")
            if doc.doc_id in self.exclusion_ids:
                raise DataError(f"excluded doc_id {doc.doc_id!r} present in manifest")
            seen.add(doc.doc_id)

    @property
    def token_count(self) -> int:
        return sum(doc.token_count for doc in self.documents)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    @property
    def doc_ids(self) -> list[str]:
        return [doc.doc_id for doc in self.documents]


@dataclass(frozen=True)
class SegmenterConfig:
    """Rule-based sentence splitting.

    A word ending in one of ``terminators`` closes a sentence when the next word
    starts with an uppercase letter or a digit, unless the word (lowercased) is
    a listed abbreviation.
    """

    abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS
    terminators: str = TERMINATORS


@dataclass(frozen=True)
class CleaningConfig:
    excluded_sources: frozenset[str] = frozenset({"chat", "twitter"})
    min_sentences: int = 2
    max_non_letter_fraction: float = 0.2


def segment_sentences(text: str, config: SegmenterConfig = SegmenterConfig()) -> list[Sentence]:
    text = normalize_text(text)
    if not text:
        return []
    words = text.split(" ")
    sentences = []
    current: list[str] = []
    for i, word in enumerate(words):
        current.append(word)
        if i + 1 == len(words):
            break
        nxt = words[i + 1][0]
        if (
            word[-1] in config.terminators
            and (nxt.isupper() or nxt.isdigit())
            and word.lower() not in config.abbreviations
        ):
            sentences.append(Sentence(" ".join(current)))
            current = []
    if current:
        sentences.append(Sentence(" ".join(current)))
    return sentences


def _blocks(text: str) -> Iterator[str]:
    block: list[str] = []
    for line in text.splitlines():
        if line.strip():
            block.append(line)
        elif block:
            yield "\n".join(block)
            block = []
    if block:
        yield "\n".join(block)


def ingest_plaintext(
    path: str | Path,
    source: str,
    segmenter: SegmenterConfig = SegmenterConfig(),
) -> CorpusManifest:
    """Read a blank-line separated UTF-8 file: one document per block.

    Document ids are ``{source}-{n:06d}`` where ``n`` counts non-empty blocks.
    """
    path = Path(path)
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusDecodeError(str(path), exc.start, exc.reason) from None
    documents = []
    for n, block in enumerate(b for b in _blocks(text) if normalize_text(b)):
        sentences = segment_sentences(block, segmenter)
        documents.append(Document(f"{source}-{n:06d}", source, tuple(sentences)))
    return CorpusManifest(tuple(documents))


def _non_letter_fraction(doc: Document) -> float:
    chars = [ch for s in doc.sentences for ch in s.text if ch != " "]
    if not chars:
        return 0.0
    return sum(not ch.isalpha() for ch in chars) / len(chars)


def clean_manifest(manifest: CorpusManifest, config: CleaningConfig = CleaningConfig()) -> CorpusManifest:
    """Drop documents from excluded sources, too-short documents and symbol-heavy documents."""
    kept = tuple(
        doc
        for doc in manifest.documents
        if doc.source not in config.excluded_sources
        and len(doc.sentences) >= config.min_sentences
        and _non_letter_fraction(doc) <= config.max_non_letter_fraction
    )
    return CorpusManifest(kept, manifest.exclusion_ids)


def remove_overlap(manifest: CorpusManifest, exclusion_ids: Iterable[str]) -> CorpusManifest:
    """Remove documents by id; unknown ids are ignored but recorded."""
    excluded = frozenset(exclusion_ids) | manifest.exclusion_ids
    kept = tuple(doc for doc in manifest.documents if doc.doc_id not in excluded)
    return CorpusManifest(kept, excluded)


def split_sizes(n: int) -> tuple[int, int, int]:
    if n < 10:
        raise SplitSizeError(f"need at least 10 documents to split, got {n}")
    held_out = n // 10
    return n - 2 * held_out, held_out, held_out


def split_corpus(manifest: CorpusManifest, seed: int) -> tuple[CorpusManifest, CorpusManifest, CorpusManifest]:
    """80/10/10 document-level split.

    Documents are ranked by a 64-bit hash of ``(doc_id, seed)``; the first
    ``n // 10`` go to dev, the next ``n // 10`` to test and the rest to train.
    The assignment therefore does not depend on input order.
    """
    n_train, n_dev, n_test = split_sizes(len(manifest))
    ranked = sorted(manifest.documents, key=lambda d: (hash64("split", seed, d.doc_id), d.doc_id))
    dev = ranked[:n_dev]
    test = ranked[n_dev : n_dev + n_test]
    train = ranked[n_dev + n_test :]
    assert len(train) == n_train
    ex = manifest.exclusion_ids
    return CorpusManifest(tuple(train), ex), CorpusManifest(tuple(dev), ex), CorpusManifest(tuple(test), ex)


@dataclass(frozen=True)
class SourceStats:
    documents: int = 0
    sentences: int = 0
    tokens: int = 0

    def __add__(self, other: "SourceStats") -> "SourceStats":
        return SourceStats(
            self.documents + other.documents,
            self.sentences + other.sentences,
            self.tokens + other.tokens,
        )


@dataclass(frozen=True)
class StatsReport:
    per_source: dict[str, SourceStats]

    @property
    def total(self) -> SourceStats:
        return sum(self.per_source.values(), SourceStats())

    def to_tsv(self) -> str:
        lines = ["source\tdocuments\tsentences\ttokens"]
        rows = sorted(self.per_source.items()) + [("TOTAL", self.total)]
        for name, st in rows:
            lines.append(f"{name}\t{st.documents}\t{st.sentences}\t{st.tokens}")
        return "\n".join(lines) + "\n"


def corpus_stats(manifest: CorpusManifest) -> StatsReport:
    per_source: dict[str, SourceStats] = {}
    for doc in manifest.documents:
        row = SourceStats(1, len(doc.sentences), doc.token_count)
        per_source[doc.source] = per_source.get(doc.source, SourceStats()) + row
    return StatsReport(per_source)


# --- file formats -----------------------------------------------------------


def write_jsonl(manifest: CorpusManifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for doc in manifest.documents:
            f.write(json.dumps(doc.to_json(), ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> CorpusManifest:
    documents = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc_id, source = str(obj["doc_id"]), str(obj["source"])
                sentences = tuple(Sentence(t) for t in map(normalize_text, obj["sentences"]) if t)
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}:{line_no}: malformed document record ({exc})") from None
            if sentences:
                documents.append(Document(doc_id, source, sentences))
    return CorpusManifest(tuple(documents))


def read_exclusion_list(path: str | Path) -> frozenset[str]:
    with open(path, encoding="utf-8") as f:
        return frozenset(line.strip() for line in f if line.strip())


def write_exclusion_list(ids: Sequence[str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for doc_id in sorted(ids):
            f.write(doc_id + "\n")
