"""Flatten hierarchical span annotations into token-level label sequences."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import ConllParseError, DataError, StructureError

BIO, PLAIN = "BIO", "Plain"


@dataclass(frozen=True)
class SpanNode:
    label: str
    start: int
    end: int
    children: tuple["SpanNode", ...] = ()

    @classmethod
    def from_json(cls, obj: dict) -> "SpanNode":
        try:
            return cls(
                str(obj["label"]),
                int(obj["start"]),
                int(obj["end"]),
                tuple(cls.from_json(c) for c in obj.get("children", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed span node {obj!r}: {exc}") from None

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "start": self.start,
            "end": self.end,
            "children": [c.to_json() for c in self.children],
        }

    def walk(self) -> Iterable["SpanNode"]:
        yield self
        for child in self.children:
            yield from child.walk()

    def __str__(self) -> str:
        return f"{self.label}({self.start},{self.end})"


@dataclass(frozen=True)
class TokenLabelSequence:
    words: tuple[str, ...]
    labels: tuple[str, ...]
    scheme: str = BIO

    def __post_init__(self) -> None:
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.words) != len(self.labels):
            raise DataError(f"{len(self.words)} words but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)


def is_well_formed_bio(labels: Sequence[str]) -> bool:
    prev = "O"
    for label in labels:
        if label.startswith("I-") and prev[2:] != label[2:]:
            return False
        if label != "O" and not label.startswith(("B-", "I-")):
            return False
        prev = label
    return True


def validate_tree(tree: Sequence[SpanNode], length: int) -> None:
    """Check bounds, strict nesting of children and non-overlap of siblings."""

    def check_siblings(nodes: Sequence[SpanNode], lo: int, hi: int, parent: SpanNode | None) -> None:
        prev: SpanNode | None = None
        for node in sorted(nodes, key=lambda n: (n.start, n.end)):
            if not 0 <= node.start < node.end <= length:
                raise StructureError(f"node {node} out of bounds for sentence length {length}")
            if node.start < lo or node.end > hi:
                raise StructureError(f"node {node} not nested within parent {parent}")
            if prev is not None and node.start < prev.end:
                raise StructureError(f"sibling nodes {prev} and {node} overlap")
            check_siblings(node.children, node.start, node.end, node)
            prev = node

    check_siblings(tree, 0, length, None)


def encode_spans(spans: Iterable[tuple[str, int, int]], length: int, scheme: str = BIO) -> list[str]:
    labels = ["O"] * length
    for label, start, end in spans:
        for i in range(start, end):
            if scheme == PLAIN:
                labels[i] = label
            else:
                labels[i] = ("B-" if i == start else "I-") + label
    return labels


def _placeholder_words(length: int, words: Sequence[str] | None) -> tuple[str, ...]:
    if words is None:
        return ("_",) * length
    if len(words) != length:
        raise DataError(f"{len(words)} words for a sentence of length {length}")
    return tuple(words)


def flatten_highest_level(
    tree: Sequence[SpanNode],
    length: int,
    keep: Callable[[str], bool] = lambda label: True,
    *,
    words: Sequence[str] | None = None,
    relabel: Callable[[str], str] | None = None,
) -> TokenLabelSequence:
    """BIO-encode the root-level nodes that pass ``keep``; every descendant is ignored.

    A subordinate clause annotated as an argument therefore becomes one span,
    and anything annotated inside it is dropped.
    """
    validate_tree(tree, length)
    spans = [
        (relabel(node.label) if relabel else node.label, node.start, node.end)
        for node in tree
        if keep(node.label)
    ]
    return TokenLabelSequence(_placeholder_words(length, words), tuple(encode_spans(spans, length)), BIO)


def collapse_argument_label(label: str) -> str:
    """Map numbered argument labels (ARG0, ARG1, ...) onto a single ARG label."""
    return "ARG" if label.startswith("ARG") and label[3:].isdigit() else label


def is_modifier(label: str) -> bool:
    return label.startswith(("MOD", "ARGM"))


@dataclass(frozen=True)
class ModifierConflict:
    kept: SpanNode
    dropped: SpanNode


def flatten_modifiers(
    tree: Sequence[SpanNode],
    length: int,
    *,
    predicate: Callable[[str], bool] = is_modifier,
    words: Sequence[str] | None = None,
) -> tuple[TokenLabelSequence, list[ModifierConflict]]:
    """BIO-encode modifier nodes found at any depth.

    Root nodes are treated as independent predicate frames: each is validated
    on its own and different roots may overlap. Overlapping modifiers are
    resolved by keeping the earlier-starting span, then the longer one; each
    dropped span is returned as a conflict.
    """
    for root in tree:
        validate_tree([root], length)
    found = [node for root in tree for node in root.walk() if predicate(node.label)]
    found.sort(key=lambda n: (n.start, -(n.end - n.start), n.label))
    kept: list[SpanNode] = []
    conflicts = []
    for node in found:
        clash = next((k for k in kept if node.start < k.end and k.start < node.end), None)
        if clash is None:
            kept.append(node)
        else:
            conflicts.append(ModifierConflict(clash, node))
    labels = encode_spans(((n.label, n.start, n.end) for n in kept), length)
    return TokenLabelSequence(_placeholder_words(length, words), tuple(labels), BIO), conflicts


def flatten_str(
    tree: Sequence[SpanNode],
    length: int,
    subset: Iterable[str],
    *,
    words: Sequence[str] | None = None,
) -> TokenLabelSequence:
    """Plain per-token labels from root-level nodes whose label is in ``subset``."""
    validate_tree(tree, length)
    allowed = frozenset(subset)
    spans = [(n.label, n.start, n.end) for n in tree if n.label in allowed]
    return TokenLabelSequence(_placeholder_words(length, words), tuple(encode_spans(spans, length, PLAIN)), PLAIN)


# --- file formats -----------------------------------------------------------


@dataclass(frozen=True)
class AnnotatedSentence:
    words: tuple[str, ...]
    spans: tuple[SpanNode, ...] = field(default=())


def read_span_jsonl(path: str | Path) -> list[AnnotatedSentence]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                words = tuple(str(w) for w in obj["words"])
                spans = tuple(SpanNode.from_json(s) for s in obj.get("spans", ()))
            except (KeyError, TypeError, json.JSONDecodeError, DataError) as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from None
            out.append(AnnotatedSentence(words, spans))
    return out


def write_span_jsonl(sentences: Iterable[AnnotatedSentence], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s in sentences:
            obj = {"words": list(s.words), "spans": [n.to_json() for n in s.spans]}
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_conll(path: str | Path, *, strict: bool = True, scheme: str = BIO) -> list[TokenLabelSequence]:
    """Two-column ``token label`` lines; blank lines separate sentences.

    With ``strict=False`` extra middle columns are tolerated (first column is
    the token, last column the label).
    """
    seqs: list[TokenLabelSequence] = []
    words: list[str] = []
    labels: list[str] = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            cols = line.split()
            if not cols:
                if words:
                    seqs.append(TokenLabelSequence(tuple(words), tuple(labels), scheme))
                    words, labels = [], []
                continue
            if len(cols) != 2 and (strict or len(cols) < 2):
                raise ConllParseError(str(path), line_no, f"expected 2 columns, found {len(cols)}")
            words.append(cols[0])
            labels.append(cols[-1])
    if words:
        seqs.append(TokenLabelSequence(tuple(words), tuple(labels), scheme))
    return seqs


def write_conll(seqs: Iterable[TokenLabelSequence], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_conll(seqs))


def format_conll(seqs: Iterable[TokenLabelSequence]) -> str:
    blocks = ["".join(f"{w} {l}\n" for w, l in zip(s.words, s.labels)) for s in seqs]
    return "\n".join(blocks)
