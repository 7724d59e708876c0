"""Pre-training and fine-tuning loops, checkpointing and checkpoint comparison.

All randomness is keyed by (seed, step): batch order comes from a per-epoch
permutation seeded with ``[seed, epoch]`` and dropout from a generator seeded
with ``[seed, step]``. Resuming from a checkpoint therefore replays exactly
the same updates as an uninterrupted run.
"""

from __future__ import annotations

import json
import logging
import math
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .annotations import TokenLabelSequence
from .corpus import normalize_text
from .errors import ConfigError, DataError, NumericError
from .evaluation import macro_f1, span_f1, token_accuracy
from .model import (
    Batch,
    Checkpoint,
    ModelConfig,
    Parameters,
    add_classifier_head,
    backward,
    forward,
    init_parameters,
    mlm_loss,
    sequence_classification_loss,
    sop_loss,
    token_classification_loss,
)
from .model.network import is_encoder_param, sequence_logits, sop_logits, token_logits
from .pretrain_data import MaskedExample, ShardManifest
from .vocab import CLS_ID, PAD_ID, SEP_ID, Vocabulary, tokenize_word

log = logging.getLogger(__name__)

ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-6


@dataclass(frozen=True)
class TrainConfig:
    steps: int | None = 2000
    epochs: int | None = None
    batch_size: int = 32
    learning_rate: float = 1e-3
    warmup_steps: int | None = 200
    weight_decay: float = 0.01
    checkpoint_every: int = 500
    seed: int = 0
    eval_checkpoints: tuple[int, ...] = ()
    max_grad_norm: float = 1.0

    def __post_init__(self) -> None:
        if (self.steps is None) == (self.epochs is None):
            raise ConfigError("set exactly one of steps and epochs")
        if self.steps is not None and self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        for name in ("batch_size", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.max_grad_norm <= 0:
            raise ConfigError(f"learning_rate, max_grad_norm must be > 0 and weight_decay >= 0: {self}")
        if self.warmup_steps is not None and self.warmup_steps < 0:
            raise ConfigError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.steps is not None:
            for s in self.eval_checkpoints:
                if s != self.steps and s % self.checkpoint_every:
                    raise ConfigError(
                        f"eval checkpoint {s} is never saved (checkpoint_every={self.checkpoint_every}, steps={self.steps})"
                    )

    @classmethod
    def finetune(cls, **overrides: Any) -> "TrainConfig":
        """Fine-tuning defaults: 4 epochs, batch 16, peak lr 5e-5, 10% warmup."""
        base: dict[str, Any] = dict(steps=None, epochs=4, batch_size=16, learning_rate=5e-5, warmup_steps=None)
        return cls(**{**base, **overrides})

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}


# --- key=value config files ---------------------------------------------------


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{line_no}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(value: str, hint: Any, key: str) -> Any:
    args = typing.get_args(hint)
    origin = typing.get_origin(hint)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        if value.lower() in ("none", ""):
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], key)
    if origin is tuple:
        return tuple(_coerce(v.strip(), args[0], key) for v in value.split(",") if v.strip())
    try:
        if hint is bool:
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if hint is int:
            return int(value)
        if hint is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def coerce_config(cls: type, raw: dict[str, str], base: Any = None) -> Any:
    """Build dataclass ``cls`` (or update ``base``) from string values; unknown keys are errors."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown config keys for {cls.__name__}: {unknown}")
    values = {k: _coerce(v, hints[k], k) for k, v in raw.items()}
    return replace(base, **values) if base is not None else cls(**values)


def load_config(cls: type, path: str | Path, base: Any = None) -> Any:
    return coerce_config(cls, parse_key_values(Path(path).read_text(encoding="utf-8"), str(path)), base)


# --- optimization -------------------------------------------------------------


def learning_rate_at(step: int, total: int, warmup: int, peak: float) -> float:
    """Linear warmup from 0 to ``peak`` at ``warmup``, then linear decay to 0 at ``total``."""
    if total <= 0:
        return 0.0
    warmup = min(warmup, total)
    if step < warmup:
        return peak * step / warmup
    if total == warmup:
        return 0.0
    return peak * max(0.0, (total - step) / (total - warmup))


def _decays(name: str) -> bool:
    # no weight decay on biases and layer-norm gains
    return not name.endswith((".b", ".g", ".bias"))


class AdamW:
    """Adam with decoupled weight decay and bias correction."""

    def __init__(self, weight_decay: float = 0.01, state: dict | None = None) -> None:
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        if state is not None:
            self.t = int(state["t"])
            self.m = {k: v.copy() for k, v in state["m"].items()}
            self.v = {k: v.copy() for k, v in state["v"].items()}

    def state(self) -> dict:
        return {
            "t": self.t,
            "weight_decay": self.weight_decay,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def step(self, params: Parameters, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1**self.t
        c2 = 1.0 - ADAM_BETA2**self.t
        for name, g in grads.items():
            p = params[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
            if self.weight_decay and _decays(name):
                update = update + self.weight_decay * p
            p -= lr * update


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if norm > max_norm:
        factor = max_norm / (norm + 1e-6)
        for name in grads:
            grads[name] = grads[name] * factor
    return norm


# --- pre-training --------------------------------------------------------------


@dataclass
class PretrainData:
    input_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray
    mlm_positions: list[np.ndarray]
    mlm_labels: list[np.ndarray]
    sop_labels: np.ndarray

    @classmethod
    def from_examples(cls, examples: Iterable[MaskedExample]) -> "PretrainData":
        examples = list(examples)
        if not examples:
            raise DataError("no pre-training examples")
        return cls(
            np.array([e.input_ids for e in examples], dtype=np.int64),
            np.array([e.segment_ids for e in examples], dtype=np.int64),
            np.array([e.attention_mask for e in examples], dtype=np.int64),
            [np.array(e.mlm_positions, dtype=np.int64) for e in examples],
            [np.array(e.mlm_labels, dtype=np.int64) for e in examples],
            np.array([e.sop_label for e in examples], dtype=np.int64),
        )

    def __len__(self) -> int:
        return len(self.sop_labels)

    def batch(self, rows: np.ndarray):
        length = int(self.attention_mask[rows].sum(axis=1).max())
        batch = Batch(
            self.input_ids[rows, :length], self.segment_ids[rows, :length], self.attention_mask[rows, :length]
        )
        positions = np.concatenate(
            [np.stack([np.full(len(self.mlm_positions[r]), i), self.mlm_positions[r]], axis=1) for i, r in enumerate(rows)]
        )
        labels = np.concatenate([self.mlm_labels[r] for r in rows])
        return batch, positions, labels, self.sop_labels[rows]


def batch_rows(n: int, batch_size: int, step: int, seed: int) -> np.ndarray:
    """Rows for global step ``step`` from an endless sequence of seeded epoch permutations."""
    rows = []
    cache: dict[int, np.ndarray] = {}
    for i in range(step * batch_size, (step + 1) * batch_size):
        epoch, offset = divmod(i, n)
        if epoch not in cache:
            cache[epoch] = np.random.default_rng([seed, epoch]).permutation(n)
        rows.append(cache[epoch][offset])
    return np.array(rows, dtype=np.int64)


@dataclass
class LogRow:
    step: int
    mlm_loss: float
    sop_loss: float
    lr: float

    def to_json(self) -> str:
        return json.dumps(
            {"step": self.step, "mlm_loss": self.mlm_loss, "sop_loss": self.sop_loss, "lr": self.lr},
            separators=(",", ":"),
        )


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, cause: Exception, last_good: Checkpoint) -> None:
        super().__init__(f"training diverged at step {step}: {cause}; last good checkpoint is step {last_good.step}")
        self.step = step
        self.last_good = last_good


@dataclass
class PretrainResult:
    checkpoints: list[Checkpoint]
    log: list[LogRow] = field(default_factory=list)

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]

    def at(self, step: int) -> Checkpoint:
        for ckpt in self.checkpoints:
            if ckpt.step == step:
                return ckpt
        raise KeyError(f"no checkpoint at step {step}")


def _snapshot(step: int, model_config: ModelConfig, params: Parameters, opt: AdamW, config: TrainConfig) -> Checkpoint:
    return Checkpoint(
        step=step,
        config=model_config,
        params={k: v.copy() for k, v in params.items()},
        optimizer_state=opt.state(),
        rng_state={"generator": "numpy-pcg64", "key": [config.seed, step]},
        extra={"train_config": config.to_dict()},
    )


def pretrain(
    data: ShardManifest | PretrainData | Sequence[MaskedExample],
    config: TrainConfig,
    model_config: ModelConfig,
    *,
    resume: Checkpoint | None = None,
    out_dir: str | Path | None = None,
    log_path: str | Path | None = None,
    step_hook: Callable[[int, Parameters], None] | None = None,
) -> PretrainResult:
    """Minimize MLM + SOP loss; checkpoint at step 0, every ``checkpoint_every`` and at the end.

    ``step_hook`` is called after every update (used to inject faults in tests).
    """
    if config.steps is None:
        raise ConfigError("pretraining is step-based; set steps")
    if isinstance(data, ShardManifest):
        data = PretrainData.from_examples(data.examples())
    elif not isinstance(data, PretrainData):
        data = PretrainData.from_examples(data)
    if int(data.input_ids.max()) >= model_config.vocab_size:
        raise ConfigError(f"examples use ids beyond vocab_size {model_config.vocab_size}")
    total = config.steps
    warmup = config.warmup_steps or 0

    if resume is None:
        params = init_parameters(model_config)
        opt = AdamW(config.weight_decay)
        start = 0
    else:
        params = {k: v.copy() for k, v in resume.params.items()}
        opt = AdamW(config.weight_decay, resume.optimizer_state)
        start = resume.step
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    log_file = open(log_path, "a" if resume else "w", encoding="utf-8", newline="\n") if log_path else None

    result = PretrainResult([])

    def save(step: int) -> None:
        ckpt = _snapshot(step, model_config, params, opt, config)
        result.checkpoints.append(ckpt)
        if out:
            ckpt.save(out / f"step-{step:07d}.ckpt")

    try:
        if resume is None:
            save(0)
        for step in range(start, total):
            lr = learning_rate_at(step, total, warmup, config.learning_rate)
            rows = batch_rows(len(data), config.batch_size, step, config.seed)
            batch, positions, labels, sop = data.batch(rows)
            rng = np.random.default_rng([config.seed, step, 1])
            try:
                acts = forward(params, model_config, batch, rng)
                outs = [mlm_loss(acts, params, positions, labels), sop_loss(acts, params, sop)]
                grads = backward(params, acts, outs)
            except NumericError as exc:
                raise TrainingDiverged(step, exc, result.checkpoints[-1] if result.checkpoints else resume) from exc
            clip_by_global_norm(grads, config.max_grad_norm)
            opt.step(params, grads, lr)
            if step_hook is not None:
                step_hook(step, params)
            row = LogRow(step, outs[0].loss, outs[1].loss, lr)
            result.log.append(row)
            if log_file:
                log_file.write(row.to_json() + "\n")
            done = step + 1
            if done % config.checkpoint_every == 0 or done == total:
                if not all(np.all(np.isfinite(p)) for p in params.values()):
                    last = result.checkpoints[-1] if result.checkpoints else resume
                    raise TrainingDiverged(step, NumericError("parameters"), last)
                save(done)
            if step % 100 == 0:
                log.info("step %d mlm %.4f sop %.4f lr %.2e", step, row.mlm_loss, row.sop_loss, lr)
    finally:
        if log_file:
            log_file.close()
    return result


@dataclass(frozen=True)
class PretrainEval:
    mlm_loss: float
    mlm_accuracy: float
    sop_accuracy: float


def evaluate_pretraining(
    params: Parameters, model_config: ModelConfig, data: PretrainData, batch_size: int = 64
) -> PretrainEval:
    """Dropout-free MLM loss/accuracy (averaged over masked tokens) and SOP accuracy."""
    total_loss = 0.0
    n_tokens = mlm_correct = sop_correct = 0
    for start in range(0, len(data), batch_size):
        rows = np.arange(start, min(start + batch_size, len(data)))
        batch, positions, labels, sop = data.batch(rows)
        acts = forward(params, model_config, batch)
        out = mlm_loss(acts, params, positions, labels)
        total_loss += out.loss * len(labels)
        n_tokens += len(labels)
        mlm_correct += int((out.logits.argmax(axis=-1) == labels).sum())
        sop_correct += int((sop_logits(acts, params).argmax(axis=-1) == sop).sum())
    return PretrainEval(total_loss / n_tokens, mlm_correct / n_tokens, sop_correct / len(data))


# --- fine-tuning -----------------------------------------------------------------

TOKEN, SEQUENCE = "token", "sequence"


@dataclass
class Encoded:
    batch: Batch
    first_piece: list[list[int | None]]  # per sentence: position of each word's first piece, None if truncated


def encode_words(word_lists: Sequence[Sequence[str]], vocab: Vocabulary, max_seq_len: int) -> Encoded:
    """``[CLS] pieces [SEP]`` per sentence, truncated to ``max_seq_len - 2`` pieces."""
    n = len(word_lists)
    ids = np.full((n, max_seq_len), PAD_ID, dtype=np.int64)
    mask = np.zeros((n, max_seq_len), dtype=np.int64)
    first: list[list[int | None]] = []
    budget = max_seq_len - 2
    for row, words in enumerate(word_lists):
        pieces: list[str] = []
        starts: list[int | None] = []
        for word in words:
            wp = tokenize_word(word, vocab)
            starts.append(len(pieces) + 1 if len(pieces) < budget else None)
            pieces.extend(wp)
        pieces = pieces[:budget]
        seq = [CLS_ID, *vocab.ids(pieces), SEP_ID]
        ids[row, : len(seq)] = seq
        mask[row, : len(seq)] = 1
        first.append(starts)
    return Encoded(Batch(ids, np.zeros_like(ids), mask), first)


def _trim(batch: Batch) -> Batch:
    length = int(batch.attention_mask.sum(axis=1).max())
    return Batch(batch.input_ids[:, :length], batch.segment_ids[:, :length], batch.attention_mask[:, :length])


def document_words(text: str) -> list[str]:
    text = normalize_text(text)
    return text.split(" ") if text else []


@dataclass
class FineTunedModel:
    kind: str
    config: ModelConfig
    params: Parameters
    labels: tuple[str, ...]
    vocab: Vocabulary
    head: str = "classifier"
    fallback_label: str = "O"

    def predict_tokens(self, word_lists: Sequence[Sequence[str]], batch_size: int = 64) -> list[list[str]]:
        preds: list[list[str]] = []
        for start in range(0, len(word_lists), batch_size):
            chunk = word_lists[start : start + batch_size]
            enc = encode_words(chunk, self.vocab, self.config.max_seq_len)
            batch = _trim(enc.batch)
            logits = token_logits(forward(self.params, self.config, batch), self.params, self.head)
            best = logits.argmax(axis=-1)
            for row, starts in enumerate(enc.first_piece):
                preds.append([self.labels[best[row, p]] if p is not None else self.fallback_label for p in starts])
        return preds

    def predict(self, seqs: Sequence[TokenLabelSequence]) -> list[TokenLabelSequence]:
        out = self.predict_tokens([s.words for s in seqs])
        return [TokenLabelSequence(s.words, tuple(p), s.scheme) for s, p in zip(seqs, out)]

    def predict_documents(self, texts: Sequence[str], batch_size: int = 64) -> list[str]:
        preds: list[str] = []
        for start in range(0, len(texts), batch_size):
            chunk = [document_words(t) for t in texts[start : start + batch_size]]
            batch = _trim(encode_words(chunk, self.vocab, self.config.max_seq_len).batch)
            logits = sequence_logits(forward(self.params, self.config, batch), self.params, self.head)
            preds.extend(self.labels[i] for i in logits.argmax(axis=-1))
        return preds

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            step=0,
            config=self.config,
            params=self.params,
            extra={
                "kind": self.kind,
                "labels": list(self.labels),
                "head": self.head,
                "fallback_label": self.fallback_label,
                "vocab": list(self.vocab.pieces),
                "lowercase": self.vocab.lowercase,
                "max_word_chars": self.vocab.max_word_chars,
            },
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "FineTunedModel":
        e = ckpt.extra
        vocab = Vocabulary(tuple(e["vocab"]), e["lowercase"], e["max_word_chars"])
        return cls(e["kind"], ckpt.config, ckpt.params, tuple(e["labels"]), vocab, e["head"], e["fallback_label"])


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    dev: dict[str, float]


def token_metrics(gold: Sequence[TokenLabelSequence], pred: Sequence[Sequence[str]]) -> dict[str, float]:
    metrics = {"accuracy": token_accuracy(gold, pred).accuracy, "macro-f1": macro_f1(gold, pred).macro_f1 or 0.0}
    if all(l == "O" or l[:2] in ("B-", "I-") for s in gold for l in s.labels):
        metrics["span-f1"] = span_f1(gold, pred).f1
    return metrics


def _finetune_steps(n: int, config: TrainConfig) -> tuple[int, int]:
    per_epoch = math.ceil(n / config.batch_size)
    total = per_epoch * (config.epochs or 0)
    warmup = config.warmup_steps if config.warmup_steps is not None else round(0.1 * total)
    return total, warmup


def _start_params(checkpoint: Checkpoint, num_labels: int, seed: int) -> tuple[ModelConfig, Parameters]:
    params = {k: v.copy() for k, v in checkpoint.params.items()}
    add_classifier_head(params, "classifier", checkpoint.config, num_labels, seed)
    return checkpoint.config, params


def _finetune_loop(
    params: Parameters,
    model_config: ModelConfig,
    config: TrainConfig,
    n: int,
    make_loss: Callable[[np.ndarray, np.random.Generator], tuple[Any, list]],
    evaluate: Callable[[], dict[str, float]],
    frozen: set[str],
) -> list[EpochMetrics]:
    total, warmup = _finetune_steps(n, config)
    opt = AdamW(config.weight_decay)
    history = []
    step = 0
    for epoch in range(config.epochs or 0):
        perm = np.random.default_rng([config.seed, epoch]).permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            rows = perm[start : start + config.batch_size]
            rng = np.random.default_rng([config.seed, epoch, start, 2])
            acts, outs = make_loss(rows, rng)
            grads = backward(params, acts, outs, frozen=frozen)
            clip_by_global_norm(grads, config.max_grad_norm)
            opt.step(params, grads, learning_rate_at(step, total, warmup, config.learning_rate))
            losses.append(outs[0].loss)
            step += 1
        history.append(EpochMetrics(epoch + 1, float(np.mean(losses)), evaluate()))
        log.info("epoch %d loss %.4f dev %s", epoch + 1, history[-1].train_loss, history[-1].dev)
    return history


def finetune_token_task(
    checkpoint: Checkpoint,
    train: Sequence[TokenLabelSequence],
    dev: Sequence[TokenLabelSequence],
    config: TrainConfig,
    vocab: Vocabulary,
    *,
    freeze_encoder: bool = False,
) -> tuple[FineTunedModel, list[EpochMetrics]]:
    """Fine-tune a token classifier whose labels sit on each word's first piece.

    Runs ``config.epochs`` epochs with no early stopping; the returned model
    is the one after the last epoch. Dev metrics are computed after each epoch.
    """
    if not train:
        raise ConfigError("empty training set")
    if config.epochs is None:
        raise ConfigError("fine-tuning is epoch-based; set epochs")
    labels = tuple(sorted({l for s in list(train) + list(dev) for l in s.labels}))
    index = {l: i for i, l in enumerate(labels)}
    fallback = "O" if "O" in index else max(labels, key=lambda l: sum(s.labels.count(l) for s in train))
    model_config, params = _start_params(checkpoint, len(labels), config.seed)
    model = FineTunedModel(TOKEN, model_config, params, labels, vocab, "classifier", fallback)

    enc = encode_words([s.words for s in train], vocab, model_config.max_seq_len)
    tags = np.zeros(enc.batch.input_ids.shape, dtype=np.int64)
    label_mask = np.zeros(enc.batch.input_ids.shape, dtype=bool)
    for row, (seq, starts) in enumerate(zip(train, enc.first_piece)):
        for label, pos in zip(seq.labels, starts):
            if pos is not None:
                tags[row, pos] = index[label]
                label_mask[row, pos] = True

    def make_loss(rows: np.ndarray, rng: np.random.Generator):
        batch = _trim(enc.batch.take(rows))
        length = batch.input_ids.shape[1]
        acts = forward(params, model_config, batch, rng)
        out = token_classification_loss(acts, params, "classifier", tags[rows, :length], label_mask[rows, :length])
        return acts, [out]

    def evaluate() -> dict[str, float]:
        return token_metrics(dev, model.predict_tokens([s.words for s in dev])) if dev else {}

    frozen = {n for n in params if is_encoder_param(n)} if freeze_encoder else set()
    history = _finetune_loop(params, model_config, config, len(train), make_loss, evaluate, frozen)
    return model, history


def finetune_sequence_task(
    checkpoint: Checkpoint,
    train: Sequence[tuple[str, str]],
    dev: Sequence[tuple[str, str]],
    config: TrainConfig,
    vocab: Vocabulary,
    *,
    freeze_encoder: bool = False,
) -> tuple[FineTunedModel, list[EpochMetrics]]:
    """Fine-tune a classifier over the pooled ``[CLS]`` vector on ``(label, text)`` documents."""
    if not train:
        raise ConfigError("empty training set")
    if config.epochs is None:
        raise ConfigError("fine-tuning is epoch-based; set epochs")
    train_labels = {label for label, _ in train}
    if len(train_labels) < 2:
        raise ConfigError(f"degenerate label set {sorted(train_labels)}: need at least two classes")
    labels = tuple(sorted(train_labels | {label for label, _ in dev}))
    index = {l: i for i, l in enumerate(labels)}
    model_config, params = _start_params(checkpoint, len(labels), config.seed)
    model = FineTunedModel(SEQUENCE, model_config, params, labels, vocab)

    enc = encode_words([document_words(t) for _, t in train], vocab, model_config.max_seq_len)
    targets = np.array([index[l] for l, _ in train], dtype=np.int64)

    def make_loss(rows: np.ndarray, rng: np.random.Generator):
        acts = forward(params, model_config, _trim(enc.batch.take(rows)), rng)
        return acts, [sequence_classification_loss(acts, params, "classifier", targets[rows])]

    def evaluate() -> dict[str, float]:
        if not dev:
            return {}
        pred = model.predict_documents([t for _, t in dev])
        return {"accuracy": 100.0 * sum(p == g for p, (g, _) in zip(pred, dev)) / len(dev)}

    frozen = {n for n in params if is_encoder_param(n)} if freeze_encoder else set()
    history = _finetune_loop(params, model_config, config, len(train), make_loss, evaluate, frozen)
    return model, history


# --- checkpoint comparison ---------------------------------------------------------


@dataclass
class Task:
    name: str
    kind: str  # "token" or "sequence"
    train: Sequence[Any]
    dev: Sequence[Any]
    metric: str = "accuracy"
    freeze_encoder: bool = False


@dataclass
class ComparisonReport:
    rows: list[tuple[str, str, str, float]]  # (checkpoint, task, metric, value)
    config: TrainConfig | None = None

    def value(self, checkpoint: str, task: str) -> float:
        for c, t, _, v in self.rows:
            if (c, t) == (checkpoint, task):
                return v
        raise KeyError((checkpoint, task))

    def to_tsv(self) -> str:
        lines = ["checkpoint\ttask\tmetric\tvalue"]
        lines += [f"{c}\t{t}\t{m}\t{v:.4f}" for c, t, m, v in self.rows]
        return "\n".join(lines) + "\n"

    def table_rows(self, split: str = "dev") -> list[tuple[str, str, str, str, float]]:
        return [(c, t, split, m, v) for c, t, m, v in self.rows]

    @classmethod
    def from_tsv(cls, text: str) -> "ComparisonReport":
        lines = [l for l in text.splitlines() if l.strip()]
        if not lines or lines[0].split("\t") != ["checkpoint", "task", "metric", "value"]:
            raise DataError("comparison TSV must start with header checkpoint/task/metric/value")
        rows = []
        for line in lines[1:]:
            c, t, m, v = line.split("\t")
            rows.append((c, t, m, float(v)))
        return cls(rows)


def compare_checkpoints(
    checkpoints: Sequence[tuple[str, Checkpoint]],
    tasks: Sequence[Task],
    config: TrainConfig,
    vocab: Vocabulary,
) -> ComparisonReport:
    """Fine-tune every checkpoint on every task independently and report final dev metrics."""
    if len(checkpoints) < 2:
        raise ConfigError("compare_checkpoints needs at least two checkpoints")
    rows = []
    for ckpt_name, ckpt in checkpoints:
        for task in tasks:
            if task.kind == TOKEN:
                _, history = finetune_token_task(ckpt, task.train, task.dev, config, vocab, freeze_encoder=task.freeze_encoder)
            elif task.kind == SEQUENCE:
                _, history = finetune_sequence_task(
                    ckpt, task.train, task.dev, config, vocab, freeze_encoder=task.freeze_encoder
                )
            else:
                raise ConfigError(f"unknown task kind {task.kind!r}")
            final = history[-1].dev
            if task.metric not in final:
                raise ConfigError(f"task {task.name}: metric {task.metric!r} not available (have {sorted(final)})")
            rows.append((ckpt_name, task.name, task.metric, final[task.metric]))
    return ComparisonReport(rows, config)
