import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minibert.errors import ConfigError
from minibert.model import Checkpoint, ModelConfig, add_classifier_head, init_parameters
from minibert.pretrain_data import generate_sop_pairs, iter_masked_examples
from minibert.synthetic import first_char_task, polarity_task
from minibert.train import (
    AdamW,
    ComparisonReport,
    PretrainData,
    Task,
    TrainConfig,
    TrainingDiverged,
    batch_rows,
    clip_by_global_norm,
    coerce_config,
    compare_checkpoints,
    encode_words,
    evaluate_pretraining,
    finetune_sequence_task,
    finetune_token_task,
    learning_rate_at,
    load_config,
    parse_key_values,
    pretrain,
)

SMALL = dict(num_layers=1, hidden_size=16, num_heads=2, intermediate_size=32, max_seq_len=32)


@pytest.fixture(scope="module")
def data(small_corpus, small_vocab):
    pairs = generate_sop_pairs(small_corpus, small_vocab, 0)
    return PretrainData.from_examples(e for _, e in iter_masked_examples(pairs, small_vocab, 32, 0))


@pytest.fixture(scope="module")
def model_config(small_vocab):
    return ModelConfig(vocab_size=small_vocab.size, **SMALL)


# --- schedule and optimizer ---------------------------------------------------


@given(st.integers(1, 500), st.integers(0, 500), st.floats(1e-6, 1.0))
@settings(max_examples=200, deadline=None)
def test_schedule_pointwise(total, warmup, peak):
    warmup = min(warmup, total)
    lrs = [learning_rate_at(s, total, warmup, peak) for s in range(total + 1)]
    assert lrs[0] == (0.0 if warmup else peak)
    assert lrs[total] == 0.0
    if 0 < warmup < total:
        assert lrs[warmup] == pytest.approx(peak)
    assert all(0.0 <= lr <= peak * (1 + 1e-12) for lr in lrs)
    # piecewise linear: constant slope on each side of the peak
    # when warmup == total the end point wins: lr(total) is 0, not peak
    up = np.diff(lrs[: min(warmup, total - 1) + 1])
    down = np.diff(lrs[warmup:])
    assert np.allclose(up, peak / warmup if warmup else 0.0)
    if warmup < total:
        assert np.allclose(down, -peak / (total - warmup))


def test_schedule_examples():
    assert learning_rate_at(0, 100, 10, 1.0) == 0.0
    assert learning_rate_at(5, 100, 10, 1.0) == 0.5
    assert learning_rate_at(10, 100, 10, 1.0) == 1.0
    assert learning_rate_at(55, 100, 10, 1.0) == 0.5
    assert learning_rate_at(100, 100, 10, 1.0) == 0.0


def _reference_adamw(p, grads, lrs, wd):
    # scalar loop, written independently of the vectorized optimizer
    p = list(map(float, p))
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    for t, (g, lr) in enumerate(zip(grads, lrs), 1):
        for i in range(len(p)):
            m[i] = 0.9 * m[i] + 0.1 * g[i]
            v[i] = 0.999 * v[i] + 0.001 * g[i] ** 2
            mhat = m[i] / (1 - 0.9**t)
            vhat = v[i] / (1 - 0.999**t)
            p[i] -= lr * (mhat / (math.sqrt(vhat) + 1e-6) + wd * p[i])
    return p


def test_adamw_matches_reference():
    rng = np.random.default_rng(0)
    w0 = rng.normal(size=5)
    b0 = rng.normal(size=3)
    gw = [rng.normal(size=5) for _ in range(4)]
    gb = [rng.normal(size=3) for _ in range(4)]
    lrs = [0.1, 0.05, 0.2, 0.01]
    params = {"layer.w": w0.copy(), "layer.b": b0.copy()}
    opt = AdamW(weight_decay=0.01)
    for t in range(4):
        opt.step(params, {"layer.w": gw[t], "layer.b": gb[t]}, lrs[t])
    assert np.allclose(params["layer.w"], _reference_adamw(w0, gw, lrs, 0.01))
    # biases are exempt from weight decay
    assert np.allclose(params["layer.b"], _reference_adamw(b0, gb, lrs, 0.0))


def test_adamw_state_round_trip():
    rng = np.random.default_rng(1)
    params = {"w": rng.normal(size=4)}
    a = AdamW()
    a.step(params, {"w": rng.normal(size=4)}, 0.1)
    b = AdamW(state=a.state())
    pa, pb = {"w": params["w"].copy()}, {"w": params["w"].copy()}
    g = {"w": rng.normal(size=4)}
    a.step(pa, g, 0.1)
    b.step(pb, g, 0.1)
    assert np.array_equal(pa["w"], pb["w"])


def test_clip_by_global_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
    assert clip_by_global_norm(grads, 1.0) == pytest.approx(5.0)
    total = math.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    assert total == pytest.approx(1.0, rel=1e-5)
    small = {"a": np.array([0.1])}
    clip_by_global_norm(small, 1.0)
    assert small["a"][0] == 0.1


def test_batch_rows_cover_each_epoch():
    n, bs = 10, 4
    rows = np.concatenate([batch_rows(n, bs, s, seed=7) for s in range(5)])
    assert sorted(rows[:10]) == list(range(10))
    assert sorted(rows[10:20]) == list(range(10))
    assert np.array_equal(batch_rows(n, bs, 3, 7), batch_rows(n, bs, 3, 7))


# --- config ------------------------------------------------------------------


def test_parse_key_values_and_coerce(tmp_path):
    text = "# comment\nsteps = 50\nlearning_rate=3e-4\n\neval_checkpoints = 10, 50\nwarmup_steps=none\n"
    raw = parse_key_values(text)
    cfg = coerce_config(TrainConfig, raw, TrainConfig(checkpoint_every=10))
    assert cfg.steps == 50 and cfg.learning_rate == 3e-4
    assert cfg.eval_checkpoints == (10, 50) and cfg.warmup_steps is None
    path = tmp_path / "train.cfg"
    path.write_text(text)
    assert load_config(TrainConfig, path, TrainConfig(checkpoint_every=10)) == cfg


@pytest.mark.parametrize(
    "text",
    ["stepz=10\n", "steps=ten\n", "steps=1\nsteps=2\n", "just words\n"],
)
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        coerce_config(TrainConfig, parse_key_values(text))


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(steps=10, epochs=2)
    with pytest.raises(ConfigError):
        TrainConfig(steps=None, epochs=None)
    with pytest.raises(ConfigError, match="never saved"):
        TrainConfig(steps=100, checkpoint_every=30, eval_checkpoints=(45,))
    assert TrainConfig(steps=100, checkpoint_every=30, eval_checkpoints=(0, 60, 100)).eval_checkpoints == (0, 60, 100)


def test_finetune_defaults():
    cfg = TrainConfig.finetune()
    assert (cfg.epochs, cfg.batch_size, cfg.learning_rate) == (4, 16, 5e-5)


# --- pre-training ------------------------------------------------------------


def test_zero_steps_returns_initial_checkpoint(data, model_config):
    result = pretrain(data, TrainConfig(steps=0, checkpoint_every=5), model_config)
    assert [c.step for c in result.checkpoints] == [0]
    init = init_parameters(model_config)
    assert all(np.array_equal(result.final.params[k], init[k]) for k in init)
    assert result.log == []


def test_checkpoint_schedule_and_log(data, model_config, tmp_path):
    cfg = TrainConfig(steps=12, checkpoint_every=5, warmup_steps=3, batch_size=8)
    result = pretrain(data, cfg, model_config, out_dir=tmp_path, log_path=tmp_path / "log.jsonl")
    assert [c.step for c in result.checkpoints] == [0, 5, 10, 12]
    assert sorted(p.name for p in tmp_path.glob("*.ckpt")) == [
        "step-0000000.ckpt", "step-0000005.ckpt", "step-0000010.ckpt", "step-0000012.ckpt",
    ]
    rows = [json.loads(l) for l in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in rows] == list(range(12))
    assert set(rows[0]) == {"step", "mlm_loss", "sop_loss", "lr"}
    assert rows[0]["lr"] == 0.0 and rows[3]["lr"] == pytest.approx(1e-3)
    assert Checkpoint.load(tmp_path / "step-0000012.ckpt").to_bytes() == result.final.to_bytes()


def test_pretrain_is_deterministic(data, model_config):
    cfg = TrainConfig(steps=6, checkpoint_every=3, batch_size=8)
    a = pretrain(data, cfg, model_config)
    b = pretrain(data, cfg, model_config)
    assert [c.to_bytes() for c in a.checkpoints] == [c.to_bytes() for c in b.checkpoints]
    assert a.log == b.log


def test_resume_is_bitwise_identical(data, model_config, tmp_path):
    cfg = TrainConfig(steps=14, checkpoint_every=7, warmup_steps=4, batch_size=8)
    full = pretrain(data, cfg, model_config)
    pretrain(data, TrainConfig(steps=14, checkpoint_every=7, warmup_steps=4, batch_size=8), model_config, out_dir=tmp_path)
    mid = Checkpoint.load(tmp_path / "step-0000007.ckpt")
    resumed = pretrain(data, cfg, model_config, resume=mid)
    assert resumed.final.to_bytes() == full.final.to_bytes()
    assert resumed.log == full.log[7:]


def test_divergence_keeps_last_good_checkpoint(data, model_config):
    def poison(step, params):
        if step == 6:
            params["embeddings.word"][:] = np.nan

    cfg = TrainConfig(steps=20, checkpoint_every=5, batch_size=8)
    with pytest.raises(TrainingDiverged) as info:
        pretrain(data, cfg, model_config, step_hook=poison)
    assert info.value.last_good.step == 5
    assert np.all(np.isfinite(info.value.last_good.params["embeddings.word"]))


def test_vocab_mismatch_rejected(data):
    with pytest.raises(ConfigError):
        pretrain(data, TrainConfig(steps=1), ModelConfig(vocab_size=10, **SMALL))


def test_evaluate_pretraining_ranges(data, model_config):
    ev = evaluate_pretraining(init_parameters(model_config), model_config, data)
    assert abs(ev.mlm_loss - math.log(model_config.vocab_size)) < 0.3
    assert 0.0 <= ev.mlm_accuracy <= 1.0 and 0.0 <= ev.sop_accuracy <= 1.0


# --- fine-tuning -------------------------------------------------------------


@pytest.fixture(scope="module")
def start(model_config):
    return Checkpoint(0, model_config, init_parameters(model_config))


def test_encode_words_first_piece_and_truncation(small_vocab):
    enc = encode_words([["Jan", "eet", "een", "appel."] * 10], small_vocab, 12)
    starts = enc.first_piece[0]
    assert starts[0] == 1
    assert all(p is None or 1 <= p <= 10 for p in starts)
    assert starts[-1] is None
    assert enc.batch.attention_mask.sum() == 12


def test_token_finetune_protocol(start, small_vocab):
    data = first_char_task(60, seed=4)
    cfg = TrainConfig.finetune(learning_rate=1e-3, epochs=3)
    model, history = finetune_token_task(start, data[:40], data[40:], cfg, small_vocab)
    assert [h.epoch for h in history] == [1, 2, 3]
    assert set(history[0].dev) == {"accuracy", "macro-f1"}
    # the returned model is the last-epoch model
    pred = model.predict_tokens([s.words for s in data[40:]])
    gold = [l for s in data[40:] for l in s.labels]
    acc = 100.0 * sum(p == g for p, g in zip((l for s in pred for l in s), gold)) / len(gold)
    assert acc == pytest.approx(history[-1].dev["accuracy"])


def test_finetuned_model_round_trip(start, small_vocab):
    from minibert.train import FineTunedModel

    data = first_char_task(20, seed=5)
    model, _ = finetune_token_task(start, data, data, TrainConfig.finetune(epochs=1, learning_rate=1e-3), small_vocab)
    again = FineTunedModel.from_checkpoint(Checkpoint.from_bytes(model.to_checkpoint().to_bytes()))
    words = [s.words for s in data]
    assert again.predict_tokens(words) == model.predict_tokens(words)
    assert again.labels == model.labels


def test_finetune_errors(start, small_vocab):
    cfg = TrainConfig.finetune()
    with pytest.raises(ConfigError, match="empty"):
        finetune_token_task(start, [], [], cfg, small_vocab)
    one_class = [("pos", "Het boek is goed.")] * 4
    with pytest.raises(ConfigError, match="two classes"):
        finetune_sequence_task(start, one_class, [], cfg, small_vocab)
    with pytest.raises(ConfigError):
        finetune_token_task(start, first_char_task(4), [], TrainConfig(steps=5), small_vocab)


def test_frozen_encoder_only_moves_head(start, small_vocab):
    data = polarity_task(32, seed=2)
    model, _ = finetune_sequence_task(
        start, data, data, TrainConfig.finetune(epochs=1, learning_rate=1e-3), small_vocab, freeze_encoder=True
    )
    for name, value in start.params.items():
        assert np.array_equal(model.params[name], value), name
    fresh = dict(start.params)
    add_classifier_head(fresh, "classifier", start.config, 2, 0)
    assert not np.array_equal(model.params["classifier.w"], fresh["classifier.w"])


def test_compare_checkpoints_shape(start, small_vocab):
    tasks = [
        Task("chars", "token", first_char_task(24, seed=1), first_char_task(8, seed=2)),
        Task("polarity", "sequence", polarity_task(24, seed=1), polarity_task(8, seed=2)),
    ]
    cfg = TrainConfig.finetune(epochs=1, learning_rate=1e-3)
    report = compare_checkpoints([("a", start), ("b", start)], tasks, cfg, small_vocab)
    assert [(c, t) for c, t, _, _ in report.rows] == [("a", "chars"), ("a", "polarity"), ("b", "chars"), ("b", "polarity")]
    # identical checkpoints give identical numbers
    assert report.value("a", "chars") == report.value("b", "chars")
    again = ComparisonReport.from_tsv(report.to_tsv())
    assert again.to_tsv() == report.to_tsv()
    with pytest.raises(ConfigError):
        compare_checkpoints([("a", start)], tasks, cfg, small_vocab)


# --- desk-scale fine-tuning behaviour -------------------------------------------


@pytest.fixture(scope="module")
def desk_start(small_vocab):
    config = ModelConfig(max_seq_len=48, vocab_size=small_vocab.size)
    return Checkpoint(0, config, init_parameters(config))


@pytest.mark.slow
def test_polarity_is_learned(desk_start, small_vocab):
    data = polarity_task(1200, seed=12)
    _, history = finetune_sequence_task(desk_start, data[:1000], data[1000:], TrainConfig.finetune(learning_rate=1e-3), small_vocab)
    assert history[-1].dev["accuracy"] > 99.0


@pytest.mark.slow
def test_random_labels_stay_at_chance(desk_start, small_vocab):
    data = polarity_task(2000, seed=13, random_labels=True)
    train, dev = data[:1000], data[1000:]
    _, history = finetune_sequence_task(desk_start, train, dev, TrainConfig.finetune(learning_rate=1e-3), small_vocab)
    assert abs(history[-1].dev["accuracy"] - 50.0) <= 5.0


@pytest.mark.slow
def test_frozen_encoder_beats_majority_baseline(desk_start, small_vocab):
    from collections import Counter

    data = first_char_task(300, seed=9)
    train, dev = data[:200], data[200:]
    gold = [l for s in dev for l in s.labels]
    majority = 100.0 * Counter(gold).most_common(1)[0][1] / len(gold)
    _, history = finetune_token_task(
        desk_start, train, dev, TrainConfig.finetune(learning_rate=1e-3), small_vocab, freeze_encoder=True
    )
    assert history[-1].dev["accuracy"] > majority
