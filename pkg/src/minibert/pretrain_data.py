"""Sentence-order-prediction pairs with whole-word masking, packed into shards."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator

from .corpus import CorpusManifest
from .errors import DataError, GenerationError
from .rng import RNG_ID, SplitMix64
from .vocab import CLS_ID, MASK_ID, NUM_SPECIALS, PAD_ID, SEP_ID, TokenizedSentence, Vocabulary, tokenize_sentence

IN_ORDER, SWAPPED = 0, 1

# per-word corruption actions
ACTION_MASK, ACTION_RANDOM, ACTION_KEEP = "mask", "random", "keep"
MASK_PROB, RANDOM_PROB = 0.8, 0.1


@dataclass(frozen=True)
class SentencePair:
    doc_id: str
    index: int  # position i of the adjacent pair (s_i, s_i+1) in the document
    first: TokenizedSentence
    second: TokenizedSentence
    sop_label: int

    @property
    def num_pieces(self) -> int:
        return len(self.first) + len(self.second)


@dataclass(frozen=True)
class MaskedWord:
    start: int  # packed-sequence positions
    end: int
    action: str


@dataclass(frozen=True)
class MaskedExample:
    input_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    mlm_positions: tuple[int, ...]
    mlm_labels: tuple[int, ...]
    sop_label: int
    seed_trace: tuple[int, int] = (0, 0)
    # generation trace; not part of the shard format
    masked_words: tuple[MaskedWord, ...] = field(default=(), compare=False, repr=False)

    FIELDS = ("input_ids", "segment_ids", "attention_mask", "mlm_positions", "mlm_labels", "sop_label", "seed_trace")

    def to_json(self) -> dict:
        return {name: (list(v) if isinstance(v := getattr(self, name), tuple) else v) for name in self.FIELDS}

    @classmethod
    def from_json(cls, obj: dict) -> "MaskedExample":
        return cls(
            tuple(obj["input_ids"]),
            tuple(obj["segment_ids"]),
            tuple(obj["attention_mask"]),
            tuple(obj["mlm_positions"]),
            tuple(obj["mlm_labels"]),
            int(obj["sop_label"]),
            tuple(obj["seed_trace"]),
        )


def generate_sop_pairs(manifest: CorpusManifest, vocab: Vocabulary, seed: int) -> Iterator[SentencePair]:
    """Yield one pair per adjacent sentence pair; a seeded fair coin decides the order."""
    for doc in manifest.documents:
        tokenized = [tokenize_sentence(s, vocab) for s in doc.sentences]
        for i in range(len(tokenized) - 1):
            rng = SplitMix64.from_key("sop", seed, doc.doc_id, i)
            if rng.coin():
                yield SentencePair(doc.doc_id, i, tokenized[i + 1], tokenized[i], SWAPPED)
            else:
                yield SentencePair(doc.doc_id, i, tokenized[i], tokenized[i + 1], IN_ORDER)


def truncate_pair(pair: SentencePair, max_pieces: int) -> SentencePair:
    """Drop trailing pieces from the longer sentence (the second on ties) until both fit."""
    n_a, n_b = len(pair.first), len(pair.second)
    while n_a + n_b > max_pieces:
        if n_a > n_b:
            n_a -= 1
        else:
            n_b -= 1
    if (n_a, n_b) == (len(pair.first), len(pair.second)):
        return pair
    return SentencePair(pair.doc_id, pair.index, pair.first.truncated(n_a), pair.second.truncated(n_b), pair.sop_label)


def mask_budget(num_tokens: int, mask_rate: float) -> int:
    """round-half-up(mask_rate * num_tokens), at least 1."""
    exact = Fraction(str(mask_rate)) * num_tokens
    return max(1, int(exact + Fraction(1, 2)))


def masking_rng(seed: int, doc_id: str, index: int) -> SplitMix64:
    return SplitMix64.from_key("mask", seed, doc_id, index)


def apply_whole_word_masking(
    pair: SentencePair,
    vocab: Vocabulary,
    rng: SplitMix64,
    mask_rate: float = 0.15,
    *,
    max_seq_len: int | None = None,
    seed_trace: tuple[int, int] = (0, 0),
) -> MaskedExample:
    """Pack ``[CLS] A [SEP] B [SEP] [PAD]*`` and corrupt whole words.

    Words are visited in shuffled order; a word is taken whole if it still
    fits the budget, otherwise skipped. If no word fits at all, the first
    word in shuffled order is taken anyway. One action is drawn per selected
    word: all pieces masked (80%), all pieces replaced by random non-special
    ids (10%), or left unchanged (10%).
    """
    n_a, n_b = len(pair.first), len(pair.second)
    length = n_a + n_b + 3
    if max_seq_len is None:
        max_seq_len = length
    if length > max_seq_len:
        raise GenerationError(f"pair {pair.doc_id}#{pair.index} needs {length} positions, max_seq_len is {max_seq_len}")
    num_tokens = n_a + n_b
    if num_tokens == 0:
        raise GenerationError(f"pair {pair.doc_id}#{pair.index} has no maskable tokens")

    input_ids = [CLS_ID, *pair.first.ids, SEP_ID, *pair.second.ids, SEP_ID]
    segment_ids = [0] * (n_a + 2) + [1] * (n_b + 1)
    words = [(s + 1, e + 1) for s, e in pair.first.word_boundaries]
    words += [(s + n_a + 2, e + n_a + 2) for s, e in pair.second.word_boundaries]

    budget = mask_budget(num_tokens, mask_rate)
    order = list(range(len(words)))
    rng.shuffle(order)
    selected: list[tuple[int, int]] = []
    covered = 0
    for w in order:
        if covered >= budget:
            break
        start, end = words[w]
        if covered + (end - start) <= budget:
            selected.append(words[w])
            covered += end - start
    if not selected:
        selected.append(words[order[0]])

    masked_words = []
    positions: list[int] = []
    for start, end in selected:
        u = rng.random()
        if u < MASK_PROB:
            action = ACTION_MASK
        elif u < MASK_PROB + RANDOM_PROB:
            action = ACTION_RANDOM
        else:
            action = ACTION_KEEP
        for pos in range(start, end):
            if action == ACTION_MASK:
                input_ids[pos] = MASK_ID
            elif action == ACTION_RANDOM:
                input_ids[pos] = NUM_SPECIALS + rng.randbelow(vocab.size - NUM_SPECIALS)
            positions.append(pos)
        masked_words.append(MaskedWord(start, end, action))

    original = [CLS_ID, *pair.first.ids, SEP_ID, *pair.second.ids, SEP_ID]
    positions.sort()
    pad = max_seq_len - length
    return MaskedExample(
        input_ids=tuple(input_ids + [PAD_ID] * pad),
        segment_ids=tuple(segment_ids + [0] * pad),
        attention_mask=tuple([1] * length + [0] * pad),
        mlm_positions=tuple(positions),
        mlm_labels=tuple(original[p] for p in positions),
        sop_label=pair.sop_label,
        seed_trace=seed_trace,
        masked_words=tuple(sorted(masked_words, key=lambda w: w.start)),
    )


def iter_masked_examples(
    pairs: Iterable[SentencePair],
    vocab: Vocabulary,
    max_seq_len: int,
    seed: int,
    mask_rate: float = 0.15,
    shard_size: int | None = None,
) -> Iterator[tuple[SentencePair, MaskedExample]]:
    """Truncate and mask each pair; yields the truncated pair alongside its example."""
    if max_seq_len < 8:
        raise DataError(f"max_seq_len must be >= 8, got {max_seq_len}")
    for n, pair in enumerate(pairs):
        pair = truncate_pair(pair, max_seq_len - 3)
        trace = (n // shard_size, n % shard_size) if shard_size else (0, n)
        example = apply_whole_word_masking(
            pair,
            vocab,
            masking_rng(seed, pair.doc_id, pair.index),
            mask_rate,
            max_seq_len=max_seq_len,
            seed_trace=trace,
        )
        yield pair, example


@dataclass
class ShardManifest:
    out_dir: Path
    shards: list[tuple[str, int]]
    seed: int
    max_seq_len: int
    shard_size: int
    mask_rate: float
    vocab_size: int
    rng: str = RNG_ID

    @property
    def num_examples(self) -> int:
        return sum(n for _, n in self.shards)

    def to_json(self) -> dict:
        return {
            "num_examples": self.num_examples,
            "shards": [{"file": name, "num_examples": n} for name, n in self.shards],
            "config": {
                "seed": self.seed,
                "max_seq_len": self.max_seq_len,
                "shard_size": self.shard_size,
                "mask_rate": self.mask_rate,
                "vocab_size": self.vocab_size,
            },
            "rng": self.rng,
        }

    def save(self) -> Path:
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ShardManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        obj = json.loads(path.read_text(encoding="utf-8"))
        cfg = obj["config"]
        return cls(
            out_dir=path.parent,
            shards=[(s["file"], int(s["num_examples"])) for s in obj["shards"]],
            seed=cfg["seed"],
            max_seq_len=cfg["max_seq_len"],
            shard_size=cfg["shard_size"],
            mask_rate=cfg["mask_rate"],
            vocab_size=cfg["vocab_size"],
            rng=obj["rng"],
        )

    def examples(self) -> Iterator[MaskedExample]:
        for name, _ in self.shards:
            with open(self.out_dir / name, encoding="utf-8") as f:
                for line in f:
                    yield MaskedExample.from_json(json.loads(line))


def pack_and_shard(
    pairs: Iterable[SentencePair],
    vocab: Vocabulary,
    max_seq_len: int,
    shard_size: int,
    seed: int,
    out_dir: str | Path,
    mask_rate: float = 0.15,
) -> ShardManifest:
    """Write ``shard-NNNNN.jsonl`` files of ``shard_size`` examples plus ``manifest.json``."""
    if shard_size < 1:
        raise DataError(f"shard_size must be positive, got {shard_size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shards: list[tuple[str, int]] = []
    handle = None
    try:
        for _, example in iter_masked_examples(pairs, vocab, max_seq_len, seed, mask_rate, shard_size):
            shard, index = example.seed_trace
            if index == 0:
                if handle is not None:
                    handle.close()
                name = f"shard-{shard:05d}.jsonl"
                handle = open(out_dir / name, "w", encoding="utf-8", newline="\n")
                shards.append((name, 0))
            handle.write(json.dumps(example.to_json(), separators=(",", ":")) + "\n")
            shards[-1] = (shards[-1][0], shards[-1][1] + 1)
    finally:
        if handle is not None:
            handle.close()
    manifest = ShardManifest(out_dir, shards, seed, max_seq_len, shard_size, mask_rate, vocab.size)
    manifest.save()
    return manifest
