"""WordPiece vocabulary: induction, greedy longest-match tokenization, file format.

Induction is byte-pair merging carried out directly on WordPiece symbols:
every word starts as ``[c0, ##c1, ##c2, ...]`` and the most frequent adjacent
pair is merged repeatedly (ties go to the lexicographically smallest pair).
"""

from __future__ import annotations

import heapq
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import CorpusManifest, Sentence
from .errors import ConfigError, DataError, DetokenizeError

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
NUM_SPECIALS = len(SPECIALS)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(NUM_SPECIALS)
CONT = "##"


@dataclass(frozen=True, eq=False)
class Vocabulary:
    pieces: tuple[str, ...]
    lowercase: bool = False
    max_word_chars: int = 100
    index: dict[str, int] = field(init=False, repr=False)
    _cache: dict[str, tuple[str, ...]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if tuple(self.pieces[:NUM_SPECIALS]) != SPECIALS:
            raise DataError(f"first {NUM_SPECIALS} pieces must be {list(SPECIALS)}")
        index: dict[str, int] = {}
        for i, piece in enumerate(self.pieces):
            if piece in index:
                raise DataError(f"duplicate piece {piece!r} at ids {index[piece]} and {i}")
            if not piece or piece == CONT or any(ch.isspace() for ch in piece):
                raise DataError(f"malformed piece {piece!r} at id {i}")
            index[piece] = i
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "_cache", {})

    def __len__(self) -> int:
        return len(self.pieces)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (self.pieces, self.lowercase, self.max_word_chars) == (
            other.pieces,
            other.lowercase,
            other.max_word_chars,
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def size(self) -> int:
        return len(self.pieces)

    @property
    def specials(self) -> dict[str, int]:
        return {"pad": PAD_ID, "unk": UNK_ID, "cls": CLS_ID, "sep": SEP_ID, "mask": MASK_ID}

    def lookup(self, piece: str) -> int:
        return self.index.get(piece, UNK_ID)

    def ids(self, pieces: Iterable[str]) -> list[int]:
        return [self.lookup(p) for p in pieces]

    def to_pieces(self, ids: Iterable[int]) -> list[str]:
        return [self.pieces[i] for i in ids]

    def save(self, path: str | Path) -> None:
        """Write ``vocab.txt`` (one piece per line) and a ``.json`` sidecar with flags."""
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for piece in self.pieces:
                f.write(piece + "\n")
        meta = {"lowercase": self.lowercase, "max_word_chars": self.max_word_chars, "size": self.size}
        Path(str(path) + ".json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        path = Path(path)
        text = path.read_bytes().decode("utf-8")
        if text and not text.endswith("\n"):
            raise DataError(f"{path}: missing final newline")
        pieces = tuple(text.split("\n")[:-1])
        meta_path = Path(str(path) + ".json")
        meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
        return cls(pieces, bool(meta.get("lowercase", False)), int(meta.get("max_word_chars", 100)))


def _word_counts(manifest: CorpusManifest, lowercase: bool) -> Counter[str]:
    counts: Counter[str] = Counter()
    for doc in manifest.documents:
        for sentence in doc.sentences:
            counts.update(w.lower() if lowercase else w for w in sentence.words)
    return counts


def _symbols(word: str) -> list[str]:
    return [word[0]] + [CONT + ch for ch in word[1:]]


def _join(left: str, right: str) -> str:
    return left + right[len(CONT):]


def induce_vocabulary(
    manifest: CorpusManifest,
    target_size: int,
    *,
    lowercase: bool = False,
    max_word_chars: int = 100,
) -> Vocabulary:
    """Build a WordPiece vocabulary of ``target_size`` pieces by pair merging.

    Pieces are ordered: specials, the sorted alphabet (every observed
    character in word-initial form plus ``##`` forms of word-internal
    characters), then merged pieces in merge order. A merge that produces an
    already-present piece still rewrites the words but adds nothing.
    """
    counts = _word_counts(manifest, lowercase)
    alphabet: set[str] = set()
    for word in counts:
        alphabet.update(word)
        alphabet.update(CONT + ch for ch in word[1:])
    base = list(SPECIALS) + sorted(alphabet)
    if target_size < len(base):
        raise ConfigError(
            f"target_size {target_size} is below alphabet size {len(alphabet)} + {NUM_SPECIALS} specials"
        )

    words = [_symbols(w) for w in sorted(counts)]
    freqs = [counts[w] for w in sorted(counts)]
    pair_counts: Counter[tuple[str, str]] = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for idx, syms in enumerate(words):
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += freqs[idx]
            where[pair].add(idx)
    heap = [(-c, pair) for pair, c in pair_counts.items()]
    heapq.heapify(heap)

    pieces = base
    present = set(pieces)
    while len(pieces) < target_size and heap:
        neg, best = heapq.heappop(heap)
        if pair_counts.get(best, 0) != -neg or neg == 0:
            continue  # stale heap entry
        merged = _join(*best)
        touched: set[tuple[str, str]] = set()
        for idx in sorted(where.pop(best, ())):
            syms, c = words[idx], freqs[idx]
            new = _merge(syms, best, merged)
            if new is syms:
                continue
            for pair in zip(syms, syms[1:]):
                pair_counts[pair] -= c
                touched.add(pair)
            for pair in zip(new, new[1:]):
                pair_counts[pair] += c
                where[pair].add(idx)
                touched.add(pair)
            words[idx] = new
        for pair in touched:
            c = pair_counts[pair]
            if c > 0:
                heapq.heappush(heap, (-c, pair))
            else:
                del pair_counts[pair]
        if merged not in present:
            present.add(merged)
            pieces.append(merged)
    return Vocabulary(tuple(pieces), lowercase, max_word_chars)


def _merge(syms: list[str], pair: tuple[str, str], merged: str) -> list[str]:
    out: list[str] = []
    i = 0
    changed = False
    while i < len(syms):
        if i + 1 < len(syms) and syms[i] == pair[0] and syms[i + 1] == pair[1]:
            out.append(merged)
            i += 2
            changed = True
        else:
            out.append(syms[i])
            i += 1
    return out if changed else syms


def _greedy_longest_match(text: str, vocab: Vocabulary) -> list[str]:
    if len(text) > vocab.max_word_chars:
        return [UNK]
    out: list[str] = []
    start = 0
    while start < len(text):
        end = len(text)
        match = None
        while start < end:
            sub = text[start:end] if start == 0 else CONT + text[start:end]
            # special tokens are never produced by matching surface text
            if vocab.index.get(sub, 0) >= NUM_SPECIALS:
                match = sub
                break
            end -= 1
        if match is None:
            return [UNK]
        out.append(match)
        start = end
    return out


def tokenize_word(word: str, vocab: Vocabulary) -> list[str]:
    """Greedy longest-match WordPiece; any dead end turns the whole word into [UNK]."""
    cached = vocab._cache.get(word)
    if cached is None:
        cached = tuple(_greedy_longest_match(word.lower() if vocab.lowercase else word, vocab))
        vocab._cache[word] = cached
    return list(cached)


@dataclass(frozen=True)
class TokenizedSentence:
    pieces: tuple[str, ...]
    ids: tuple[int, ...]
    word_boundaries: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.pieces)

    def truncated(self, n: int) -> "TokenizedSentence":
        """Keep the first ``n`` pieces; a cut word keeps its leading pieces."""
        bounds = tuple((s, min(e, n)) for s, e in self.word_boundaries if s < n)
        return TokenizedSentence(self.pieces[:n], self.ids[:n], bounds)


def tokenize_words(words: Sequence[str], vocab: Vocabulary) -> TokenizedSentence:
    pieces: list[str] = []
    bounds = []
    for word in words:
        start = len(pieces)
        pieces.extend(tokenize_word(word, vocab))
        bounds.append((start, len(pieces)))
    return TokenizedSentence(tuple(pieces), tuple(vocab.ids(pieces)), tuple(bounds))


def tokenize_sentence(sentence: Sentence, vocab: Vocabulary) -> TokenizedSentence:
    return tokenize_words(sentence.words, vocab)


def detokenize(pieces: Sequence[str]) -> str:
    words: list[str] = []
    for i, piece in enumerate(pieces):
        if piece.startswith(CONT) and len(piece) > len(CONT):
            if not words:
                raise DetokenizeError(f"continuation piece {piece!r} at position {i} has no word to attach to")
            words[-1] += piece[len(CONT):]
        else:
            words.append(piece)
    return " ".join(words)
