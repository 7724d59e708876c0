"""``minibert`` command-line front end.

Every subcommand accepts ``--seed`` and ``--config FILE`` (``key=value``
lines) plus repeated ``--set key=value`` overrides, and writes a config echo
next to its outputs. Exit codes: 0 success, 1 usage/config error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .annotations import (
    BIO,
    PLAIN,
    collapse_argument_label,
    flatten_highest_level,
    flatten_modifiers,
    flatten_str,
    read_conll,
    read_span_jsonl,
    write_conll,
)
from .corpus import (
    CleaningConfig,
    SegmenterConfig,
    clean_manifest,
    corpus_stats,
    ingest_plaintext,
    read_exclusion_list,
    read_jsonl,
    remove_overlap,
    split_corpus,
    write_jsonl,
)
from .errors import ConfigError, DataError, MinibertError
from .evaluation import macro_f1, render_table, span_f1, token_accuracy
from .model import Checkpoint, ModelConfig
from .pretrain_data import ShardManifest, generate_sop_pairs, pack_and_shard
from .train import (
    SEQUENCE,
    TOKEN,
    ComparisonReport,
    FineTunedModel,
    Task,
    TrainConfig,
    coerce_config,
    compare_checkpoints,
    finetune_sequence_task,
    finetune_token_task,
    parse_key_values,
    pretrain,
)
from .vocab import Vocabulary, induce_vocabulary

log = logging.getLogger("minibert")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --- settings -------------------------------------------------------------------


@dataclass(frozen=True)
class IngestSettings:
    clean: bool = True
    min_sentences: int = 2
    max_non_letter_fraction: float = 0.2
    excluded_sources: tuple[str, ...] = ("chat", "twitter")


@dataclass(frozen=True)
class VocabSettings:
    size: int = 300
    lowercase: bool = False
    max_word_chars: int = 100


@dataclass(frozen=True)
class ShardSettings:
    max_seq_len: int = 64
    shard_size: int = 1000
    mask_rate: float = 0.15


@dataclass(frozen=True)
class FlattenSettings:
    mode: str = "highest"  # highest | modifiers | str
    labels: tuple[str, ...] = ()  # empty: keep every label (highest) / required for str
    collapse_arguments: bool = False


@dataclass(frozen=True)
class EvalSettings:
    metric: str = "span-f1"  # span-f1 | accuracy | macro-f1
    include_o: bool = True
    strict_bio: bool = False


@dataclass(frozen=True)
class SynthSettings:
    docs: int = 3000
    task_sentences: int = 1200
    task_docs: int = 600


def _raw_settings(args: argparse.Namespace) -> dict[str, str]:
    return {**args.config_values, **args.overrides}


def _settings(cls: type, args: argparse.Namespace) -> Any:
    """Settings from ``--config`` then ``--set``; unknown keys are errors."""
    return coerce_config(cls, _raw_settings(args))


def _no_settings(args: argparse.Namespace) -> None:
    if _raw_settings(args):
        raise ConfigError(f"{args.command} takes no settings, got {sorted(_raw_settings(args))}")


def _split_settings(args: argparse.Namespace, base: TrainConfig) -> tuple[TrainConfig, dict[str, str]]:
    """Train keys go to TrainConfig; ``model.*`` keys are returned separately."""
    raw = _raw_settings(args)
    model_raw = {k[6:]: v for k, v in raw.items() if k.startswith("model.")}
    train_raw = {k: v for k, v in raw.items() if not k.startswith("model.")}
    train_raw.setdefault("seed", str(args.seed))
    return coerce_config(TrainConfig, train_raw, base), model_raw


def _echo(path: Path, args: argparse.Namespace, settings: dict[str, Any]) -> None:
    """Deterministic ``key=value`` record of the invocation."""
    lines = [f"command={args.command}", f"seed={args.seed}", f"version={__version__}"]
    for key, value in sorted(vars(args).items()):
        if key in ("command", "seed", "config_values", "overrides", "func", "verbose"):
            continue
        if isinstance(value, list):
            value = ",".join(map(str, value))
        lines.append(f"arg.{key}={value}")
    for key, value in sorted(settings.items()):
        if isinstance(value, (list, tuple, frozenset, set)):
            value = ",".join(map(str, sorted(value) if isinstance(value, (set, frozenset)) else value))
        lines.append(f"{key}={value}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _echo_beside(out: str | Path) -> Path:
    out = Path(out)
    return out / "config.txt" if out.is_dir() else out.with_name(out.name + ".config.txt")


def _asdict(obj: Any) -> dict[str, Any]:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


# --- subcommands ---------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> None:
    s = _settings(IngestSettings, args)
    manifest = ingest_plaintext(args.input, args.source, SegmenterConfig())
    if s.clean:
        cfg = CleaningConfig(frozenset(s.excluded_sources), s.min_sentences, s.max_non_letter_fraction)
        manifest = clean_manifest(manifest, cfg)
    write_jsonl(manifest, args.out)
    Path(args.out + ".stats.tsv").write_text(corpus_stats(manifest).to_tsv(), encoding="utf-8")
    _echo(_echo_beside(args.out), args, _asdict(s))
    print(f"ingested {len(manifest)} documents -> {args.out}")


def cmd_exclude(args: argparse.Namespace) -> None:
    _no_settings(args)
    manifest = remove_overlap(read_jsonl(args.input), read_exclusion_list(args.ids))
    write_jsonl(manifest, args.out)
    _echo(_echo_beside(args.out), args, {})
    print(f"kept {len(manifest)} documents -> {args.out}")


def cmd_split(args: argparse.Namespace) -> None:
    _no_settings(args)
    parts = split_corpus(read_jsonl(args.input), args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats = []
    for name, part in zip(("train", "dev", "test"), parts):
        write_jsonl(part, out / f"{name}.jsonl")
        total = corpus_stats(part).total
        stats.append(f"{name}\t{total.documents}\t{total.sentences}\t{total.tokens}")
    (out / "stats.tsv").write_text("split\tdocuments\tsentences\ttokens\n" + "\n".join(stats) + "\n", encoding="utf-8")
    _echo(out / "config.txt", args, {})
    print("\n".join(stats))


def cmd_vocab(args: argparse.Namespace) -> None:
    s = _settings(VocabSettings, args)
    vocab = induce_vocabulary(read_jsonl(args.input), s.size, lowercase=s.lowercase, max_word_chars=s.max_word_chars)
    vocab.save(args.out)
    _echo(_echo_beside(args.out), args, _asdict(s))
    print(f"vocabulary of {vocab.size} pieces -> {args.out}")


def cmd_shards(args: argparse.Namespace) -> None:
    s = _settings(ShardSettings, args)
    vocab = Vocabulary.load(args.vocab)
    pairs = generate_sop_pairs(read_jsonl(args.input), vocab, args.seed)
    manifest = pack_and_shard(pairs, vocab, s.max_seq_len, s.shard_size, args.seed, args.out_dir, s.mask_rate)
    manifest.save()
    _echo(Path(args.out_dir) / "config.txt", args, _asdict(s))
    print(f"{manifest.num_examples} examples in {len(manifest.shards)} shards -> {args.out_dir}")


def cmd_pretrain(args: argparse.Namespace) -> None:
    shards = ShardManifest.load(args.shards)
    config, model_raw = _split_settings(args, TrainConfig())
    model_raw.setdefault("vocab_size", str(shards.vocab_size))
    model_raw.setdefault("max_seq_len", str(shards.max_seq_len))
    model_raw.setdefault("seed", str(args.seed))
    model_config = coerce_config(ModelConfig, model_raw)
    if model_config.max_seq_len < shards.max_seq_len:
        raise ConfigError(f"model.max_seq_len {model_config.max_seq_len} < shard max_seq_len {shards.max_seq_len}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resume = Checkpoint.load(args.resume) if args.resume else None
    result = pretrain(shards, config, model_config, resume=resume, out_dir=out, log_path=out / "log.jsonl")
    settings = {**config.to_dict(), **{f"model.{k}": v for k, v in model_config.to_dict().items()}}
    _echo(out / "config.txt", args, settings)
    print(f"saved checkpoints at steps {[c.step for c in result.checkpoints]} -> {out}")


def read_labeled_documents(path: str | Path) -> list[tuple[str, str]]:
    """``label<TAB>text`` lines."""
    docs = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            if "\t" not in line:
                raise DataError(f"{path}:{line_no}: expected label<TAB>text")
            label, text = line.rstrip("\n").split("\t", 1)
            docs.append((label, text))
    return docs


def write_labeled_documents(docs: Sequence[tuple[str, str]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for label, text in docs:
            f.write(f"{label}\t{text}\n")


def _load_task_data(kind: str, train: str, dev: str):
    if kind == TOKEN:
        return read_conll(train), read_conll(dev)
    if kind == SEQUENCE:
        return read_labeled_documents(train), read_labeled_documents(dev)
    raise ConfigError(f"task kind must be token or sequence, got {kind!r}")


def cmd_finetune(args: argparse.Namespace) -> None:
    config, model_raw = _split_settings(args, TrainConfig.finetune())
    if model_raw:
        raise ConfigError(f"model.* keys are fixed by the checkpoint: {sorted(model_raw)}")
    ckpt = Checkpoint.load(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    train, dev = _load_task_data(args.task, args.train, args.dev)
    run = finetune_token_task if args.task == TOKEN else finetune_sequence_task
    model, history = run(ckpt, train, dev, config, vocab, freeze_encoder=args.freeze_encoder)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.to_checkpoint().save(out)
    with open(str(out) + ".metrics.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for h in history:
            f.write(json.dumps({"epoch": h.epoch, "train_loss": h.train_loss, "dev": h.dev}, sort_keys=True) + "\n")
    if args.task == TOKEN:
        write_conll(model.predict(dev), str(out) + ".dev.conll")
    else:
        write_labeled_documents(list(zip(model.predict_documents([t for _, t in dev]), (t for _, t in dev))), str(out) + ".dev.tsv")
    _echo(_echo_beside(out), args, config.to_dict())
    for h in history:
        print(f"epoch {h.epoch}: train loss {h.train_loss:.4f} dev {json.dumps(h.dev, sort_keys=True)}")


def cmd_predict(args: argparse.Namespace) -> None:
    _no_settings(args)
    model = FineTunedModel.from_checkpoint(Checkpoint.load(args.model))
    if model.kind == TOKEN:
        write_conll(model.predict(read_conll(args.input)), args.out)
    else:
        docs = read_labeled_documents(args.input)
        write_labeled_documents(list(zip(model.predict_documents([t for _, t in docs]), (t for _, t in docs))), args.out)
    _echo(_echo_beside(args.out), args, {})


def _parse_task(text: str) -> tuple[str, str, str, str, str]:
    parts = text.split(",")
    if len(parts) != 5:
        raise ConfigError(f"--task expects name,kind,metric,train,dev; got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def cmd_compare(args: argparse.Namespace) -> None:
    config, model_raw = _split_settings(args, TrainConfig.finetune())
    if model_raw:
        raise ConfigError(f"model.* keys are fixed by the checkpoint: {sorted(model_raw)}")
    vocab = Vocabulary.load(args.vocab)
    checkpoints = []
    for item in args.checkpoints:
        name, _, path = item.rpartition("=")
        checkpoints.append((name or Path(path).stem, Checkpoint.load(path)))
    tasks = []
    for item in args.task:
        name, kind, metric, train, dev = _parse_task(item)
        tr, dv = _load_task_data(kind, train, dev)
        tasks.append(Task(name, kind, tr, dv, metric, args.freeze_encoder))
    report = compare_checkpoints(checkpoints, tasks, config, vocab)
    Path(args.out).write_text(report.to_tsv(), encoding="utf-8")
    _echo(_echo_beside(args.out), args, config.to_dict())
    print(render_table(report.table_rows()), end="")


def cmd_flatten(args: argparse.Namespace) -> None:
    s = _settings(FlattenSettings, args)
    out = []
    conflicts = 0
    for sent in read_span_jsonl(args.input):
        n = len(sent.words)
        if s.mode == "highest":
            keep = (lambda l: l in s.labels) if s.labels else (lambda l: True)
            relabel = collapse_argument_label if s.collapse_arguments else None
            out.append(flatten_highest_level(sent.spans, n, keep, words=sent.words, relabel=relabel))
        elif s.mode == "modifiers":
            seq, c = flatten_modifiers(sent.spans, n, words=sent.words)
            conflicts += len(c)
            out.append(seq)
        elif s.mode == "str":
            if not s.labels:
                raise ConfigError("mode=str needs labels=...")
            out.append(flatten_str(sent.spans, n, s.labels, words=sent.words))
        else:
            raise ConfigError(f"mode must be highest, modifiers or str; got {s.mode!r}")
    write_conll(out, args.out)
    _echo(_echo_beside(args.out), args, _asdict(s))
    print(f"flattened {len(out)} sentences -> {args.out}" + (f" ({conflicts} modifier conflicts)" if conflicts else ""))


def cmd_evaluate(args: argparse.Namespace) -> None:
    s = _settings(EvalSettings, args)
    metric = args.metric or s.metric
    scheme = BIO if metric == "span-f1" else PLAIN
    gold = read_conll(args.gold, strict=False, scheme=scheme)
    pred = read_conll(args.pred, strict=False, scheme=scheme)
    if metric == "span-f1":
        text = span_f1(gold, pred, strict=s.strict_bio).format()
    elif metric == "accuracy":
        text = token_accuracy(gold, pred).format()
    elif metric == "macro-f1":
        text = macro_f1(gold, pred, include_o=s.include_o).format()
    else:
        raise ConfigError(f"metric must be span-f1, accuracy or macro-f1; got {metric!r}")
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        _echo(_echo_beside(args.out), args, {**_asdict(s), "metric": metric})


def read_result_rows(path: str | Path) -> list[tuple[str, str, str, str, float]]:
    """Rows from a ``model task split metric value`` TSV or a comparison TSV."""
    text = Path(path).read_text(encoding="utf-8")
    header = text.split("\n", 1)[0].split("\t")
    if header == ["checkpoint", "task", "metric", "value"]:
        return ComparisonReport.from_tsv(text).table_rows()
    if header != ["model", "task", "split", "metric", "value"]:
        raise DataError(f"{path}: header must be model/task/split/metric/value or checkpoint/task/metric/value")
    rows = []
    for line_no, line in enumerate(text.splitlines()[1:], 2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise DataError(f"{path}:{line_no}: expected 5 columns")
        try:
            rows.append((cols[0], cols[1], cols[2], cols[3], float(cols[4])))
        except ValueError:
            raise DataError(f"{path}:{line_no}: bad value {cols[4]!r}") from None
    return rows


def cmd_report(args: argparse.Namespace) -> None:
    _no_settings(args)
    rows = [r for path in args.input for r in read_result_rows(path)]
    table = render_table(rows)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
        _echo(_echo_beside(args.out), args, {})
    print(table, end="")


def cmd_synth(args: argparse.Namespace) -> None:
    from .synthetic import entity_task, first_char_task, polarity_task, synthetic_text

    s = _settings(SynthSettings, args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "corpus.txt").write_text(synthetic_text(s.docs, args.seed), encoding="utf-8")

    def halves(items):
        cut = len(items) * 4 // 5
        return items[:cut], items[cut:]

    for name, data in (
        ("entity", entity_task(s.task_sentences, args.seed + 1)),
        ("firstchar", first_char_task(s.task_sentences, args.seed + 2)),
    ):
        train, dev = halves(data)
        write_conll(train, out / f"{name}_train.conll")
        write_conll(dev, out / f"{name}_dev.conll")
    train, dev = halves(polarity_task(s.task_docs, args.seed + 3))
    write_labeled_documents(train, out / "polarity_train.tsv")
    write_labeled_documents(dev, out / "polarity_dev.tsv")
    _echo(out / "config.txt", args, _asdict(s))
    print(f"synthetic corpus and task files -> {out}")


# --- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="minibert", description="Monolingual BERT-style pre-training pipeline at desk scale.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name: str, func, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = add("ingest", cmd_ingest, "segment a plain-text corpus into documents")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--source", required=True)

    p = add("exclude", cmd_exclude, "remove documents listed in an exclusion file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--ids", required=True)
    p.add_argument("--out", required=True)

    p = add("split", cmd_split, "80/10/10 document split")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-dir", required=True)

    p = add("vocab", cmd_vocab, "induce a WordPiece vocabulary")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("shards", cmd_shards, "generate masked SOP examples into shards")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out-dir", required=True)

    p = add("pretrain", cmd_pretrain, "pre-train on shards (MLM + SOP)")
    p.add_argument("--shards", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume")

    p = add("finetune", cmd_finetune, "fine-tune a checkpoint on a token or sequence task")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--task", choices=(TOKEN, SEQUENCE), required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--freeze-encoder", action="store_true")

    p = add("predict", cmd_predict, "label a file with a fine-tuned model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("compare", cmd_compare, "fine-tune several checkpoints on a task suite")
    p.add_argument("--checkpoints", nargs="+", required=True, metavar="[NAME=]PATH")
    p.add_argument("--vocab", required=True)
    p.add_argument("--task", action="append", required=True, metavar="NAME,KIND,METRIC,TRAIN,DEV")
    p.add_argument("--out", required=True)
    p.add_argument("--freeze-encoder", action="store_true")

    p = add("flatten", cmd_flatten, "flatten nested span annotations to CoNLL labels")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "score predictions against gold CoNLL")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--metric", choices=("span-f1", "accuracy", "macro-f1"))
    p.add_argument("--out")

    p = add("report", cmd_report, "render result TSVs as a table")
    p.add_argument("--in", dest="input", nargs="+", required=True)
    p.add_argument("--out")

    p = add("synth", cmd_synth, "write the bundled synthetic corpus and task files")
    p.add_argument("--out-dir", required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
        args.config_values = {}
        if args.config:
            path = Path(args.config)
            args.config_values = parse_key_values(path.read_text(encoding="utf-8"), str(path))
        for item in args.overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
        args.overrides = dict(item.split("=", 1) for item in args.overrides)
        args.func(args)
        return 0
    except UsageError as exc:
        print(f"minibert: error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"minibert: config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, MinibertError, OSError, ValueError) as exc:
        print(f"minibert: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
