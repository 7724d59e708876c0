"""Span F1 with conlleval semantics, token accuracy, macro F1 and table rendering."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence, Union

from .annotations import TokenLabelSequence
from .errors import AlignmentError, DataError

Labels = Union[TokenLabelSequence, Sequence[str]]


def _labels(seq: Labels) -> Sequence[str]:
    return seq.labels if isinstance(seq, TokenLabelSequence) else seq


def _aligned(gold: Sequence[Labels], pred: Sequence[Labels]) -> list[tuple[Sequence[str], Sequence[str]]]:
    if len(gold) != len(pred):
        raise AlignmentError(f"{len(gold)} gold sentences but {len(pred)} predicted")
    pairs = []
    for i, (g, p) in enumerate(zip(gold, pred)):
        g, p = _labels(g), _labels(p)
        if len(g) != len(p):
            raise AlignmentError(f"sentence {i}: {len(g)} gold labels but {len(p)} predicted")
        pairs.append((g, p))
    return pairs


def bio_spans(labels: Sequence[str], strict: bool = False) -> list[tuple[str, int, int]]:
    """Decode BIO tags into ``(type, start, end)`` spans.

    An ``I-X`` that does not continue an open ``X`` span opens a new one, as
    conlleval does. With ``strict=True`` such a tag is an error instead.
    """
    spans = []
    open_type: str | None = None
    open_start = 0
    for i, tag in enumerate(labels):
        if tag == "O":
            kind, typ = "O", None
        elif tag.startswith(("B-", "I-")) and len(tag) > 2:
            kind, typ = tag[0], tag[2:]
        else:
            raise DataError(f"label {tag!r} at position {i} is not O, B-X or I-X")
        if kind == "I" and typ == open_type:
            continue
        if kind == "I" and strict:
            raise DataError(f"I-{typ} at position {i} does not continue a {typ} span")
        if open_type is not None:
            spans.append((open_type, open_start, i))
        open_type, open_start = typ, i
    if open_type is not None:
        spans.append((open_type, open_start, len(labels)))
    return spans


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, F1 as percentages; 0/0 counts as 0."""
    p = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    r = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass(frozen=True)
class LabelScore:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return prf(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return prf(self.tp, self.fp, self.fn)[1]

    @property
    def f1(self) -> float:
        return prf(self.tp, self.fp, self.fn)[2]


@dataclass(frozen=True)
class SpanF1Report:
    tp: int
    fp: int
    fn: int
    per_label: dict[str, LabelScore] = field(default_factory=dict)

    @property
    def precision(self) -> float:
        return prf(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return prf(self.tp, self.fp, self.fn)[1]

    @property
    def f1(self) -> float:
        return prf(self.tp, self.fp, self.fn)[2]

    def format(self) -> str:
        lines = [
            f"spans: tp {self.tp} fp {self.fp} fn {self.fn}",
            f"precision {self.precision:.2f} recall {self.recall:.2f} F1 {self.f1:.2f}",
        ]
        for label, s in sorted(self.per_label.items()):
            lines.append(f"{label:>12}: precision {s.precision:6.2f} recall {s.recall:6.2f} F1 {s.f1:6.2f}")
        return "\n".join(lines)


def span_f1(gold: Sequence[Labels], pred: Sequence[Labels], strict: bool = False) -> SpanF1Report:
    """Micro-averaged exact-match span P/R/F1 with per-type breakdown."""
    tp: Counter[str] = Counter()
    fp: Counter[str] = Counter()
    fn: Counter[str] = Counter()
    for g, p in _aligned(gold, pred):
        gs = set(bio_spans(g, strict))
        ps = set(bio_spans(p, strict))
        for typ, _, _ in gs & ps:
            tp[typ] += 1
        for typ, _, _ in ps - gs:
            fp[typ] += 1
        for typ, _, _ in gs - ps:
            fn[typ] += 1
    types = sorted(set(tp) | set(fp) | set(fn))
    per_label = {t: LabelScore(tp[t], fp[t], fn[t]) for t in types}
    return SpanF1Report(sum(tp.values()), sum(fp.values()), sum(fn.values()), per_label)


@dataclass(frozen=True)
class AccuracyReport:
    correct: int
    total: int
    support: dict[str, int]
    per_label: dict[str, LabelScore] = field(default_factory=dict)
    macro_f1: float | None = None
    include_o: bool = True

    @property
    def accuracy(self) -> float:
        return 100.0 * self.correct / self.total if self.total else 0.0

    def format(self) -> str:
        line = f"accuracy {self.accuracy:.2f} ({self.correct}/{self.total})"
        if self.macro_f1 is not None:
            line += f"\nmacro F1 {self.macro_f1:.2f} (O label {'included' if self.include_o else 'excluded'})"
        return line


def _token_counts(gold: Sequence[Labels], pred: Sequence[Labels]):
    correct = total = 0
    support: Counter[str] = Counter()
    tp: Counter[str] = Counter()
    fp: Counter[str] = Counter()
    fn: Counter[str] = Counter()
    for g, p in _aligned(gold, pred):
        for a, b in zip(g, p):
            total += 1
            support[a] += 1
            if a == b:
                correct += 1
                tp[a] += 1
            else:
                fp[b] += 1
                fn[a] += 1
    return correct, total, support, tp, fp, fn


def token_accuracy(gold: Sequence[Labels], pred: Sequence[Labels]) -> AccuracyReport:
    correct, total, support, *_ = _token_counts(gold, pred)
    return AccuracyReport(correct, total, dict(support))


def macro_f1(gold: Sequence[Labels], pred: Sequence[Labels], include_o: bool = True) -> AccuracyReport:
    """Unweighted mean of per-label token F1 over labels that occur in gold.

    Labels that are only predicted add false positives but no row of their own.
    """
    correct, total, support, tp, fp, fn = _token_counts(gold, pred)
    labels = sorted(l for l in support if include_o or l != "O")
    per_label = {l: LabelScore(tp[l], fp[l], fn[l]) for l in labels}
    macro = sum(s.f1 for s in per_label.values()) / len(per_label) if per_label else 0.0
    return AccuracyReport(correct, total, dict(support), per_label, macro, include_o)


# --- tables ------------------------------------------------------------------

SPLIT_ORDER = ("train", "dev", "test")


def format_value(value: float) -> str:
    """One decimal, rounding halves up (88.25 -> 88.3)."""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def _ordered(items: Iterable[str], preferred: Sequence[str] = ()) -> list[str]:
    seen = list(dict.fromkeys(items))
    head = [x for x in preferred if x in seen]
    return head + [x for x in seen if x not in head]


def render_table(rows: Sequence[tuple[str, str, str, str, float]]) -> str:
    """Models as rows, (task, split) as columns, as a results table.

    Tasks and models keep first-appearance order; splits are ordered
    train/dev/test, then any others. Missing cells show ``-``.
    """
    models = _ordered(r[0] for r in rows)
    tasks = _ordered(r[1] for r in rows)
    metric_of: dict[str, list[str]] = {}
    cells: dict[tuple[str, str, str], float] = {}
    splits_of: dict[str, list[str]] = {}
    for model, task, split, metric, value in rows:
        cells[(model, task, split)] = value
        metric_of.setdefault(task, [])
        if metric not in metric_of[task]:
            metric_of[task].append(metric)
        splits_of.setdefault(task, []).append(split)
    splits_of = {t: _ordered(s, SPLIT_ORDER) for t, s in splits_of.items()}

    model_w = max([len("Model")] + [len(m) for m in models])
    groups = []
    for task in tasks:
        title = f"{task} ({'/'.join(metric_of[task])})"
        values = {s: [format_value(cells[(m, task, s)]) if (m, task, s) in cells else "-" for m in models] for s in splits_of[task]}
        col_w = {s: max([len(s)] + [len(v) for v in values[s]]) for s in splits_of[task]}
        inner = sum(col_w.values()) + 2 * (len(col_w) - 1)
        if len(title) > inner:
            last = splits_of[task][-1]
            col_w[last] += len(title) - inner
            inner = len(title)
        groups.append((task, title, inner, col_w, values))

    line1 = ["Model".ljust(model_w)]
    line2 = ["".ljust(model_w)]
    for _, title, inner, col_w, _ in groups:
        line1.append(title.ljust(inner))
        line2.append("  ".join(s.rjust(w) for s, w in col_w.items()))
    out = [" || ".join([line1[0], " | ".join(line1[1:])]).rstrip() if groups else line1[0].rstrip()]
    if groups:
        out.append(" || ".join([line2[0], " | ".join(line2[1:])]).rstrip())
        out.append("-" * len(out[0]))
    for i, model in enumerate(models):
        parts = ["  ".join(values[s][i].rjust(w) for s, w in col_w.items()) for _, _, _, col_w, values in groups]
        out.append(" || ".join([model.ljust(model_w), " | ".join(parts)]))
    return "\n".join(out) + "\n"
