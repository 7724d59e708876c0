"""Central-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import ModelConfig
from .network import (
    Batch,
    Gradients,
    Parameters,
    add_classifier_head,
    backward,
    cast_parameters,
    forward,
    init_parameters,
    mlm_loss,
    sequence_classification_loss,
    sop_loss,
    token_classification_loss,
)


@dataclass
class CheckInputs:
    batch: Batch
    mlm_positions: np.ndarray
    mlm_labels: np.ndarray
    sop_labels: np.ndarray
    token_labels: np.ndarray
    label_mask: np.ndarray
    sequence_labels: np.ndarray
    num_token_labels: int = 3
    num_sequence_labels: int = 2


def make_check_inputs(config: ModelConfig, batch_size: int = 3, seed: int = 0) -> CheckInputs:
    """Random packed batch with padding in every row but the first."""
    rng = np.random.default_rng(seed)
    b, s, v = batch_size, config.max_seq_len, config.vocab_size
    ids = rng.integers(5, v, size=(b, s))
    seg = np.zeros((b, s), dtype=np.int64)
    mask = np.ones((b, s), dtype=np.int64)
    for row in range(b):
        length = s - 2 * row if s - 2 * row >= 6 else s
        ids[row, 0] = 2  # [CLS]
        mid = length // 2
        ids[row, mid] = 3
        ids[row, length - 1] = 3
        seg[row, mid + 1 : length] = 1
        ids[row, length:] = 0
        mask[row, length:] = 0
    positions = []
    for row in range(b):
        valid = [p for p in range(1, s) if mask[row, p] and ids[row, p] != 3]
        for p in rng.choice(valid, size=2, replace=False):
            positions.append((row, int(p)))
    positions = np.array(positions)
    labels = rng.integers(5, v, size=len(positions))
    label_mask = (mask == 1) & (rng.random((b, s)) < 0.6)
    label_mask[:, 0] = False
    label_mask[0, 1] = True
    return CheckInputs(
        batch=Batch(ids, seg, mask),
        mlm_positions=positions,
        mlm_labels=labels,
        sop_labels=rng.integers(0, 2, size=b),
        token_labels=rng.integers(0, 3, size=(b, s)),
        label_mask=label_mask,
        sequence_labels=rng.integers(0, 2, size=b),
    )


def total_loss(params: Parameters, config: ModelConfig, inputs: CheckInputs, with_grads: bool = False):
    """Sum of all four head losses, optionally with analytic gradients."""
    acts = forward(params, config, inputs.batch)
    outs = [
        mlm_loss(acts, params, inputs.mlm_positions, inputs.mlm_labels),
        sop_loss(acts, params, inputs.sop_labels),
        token_classification_loss(acts, params, "token_head", inputs.token_labels, inputs.label_mask),
        sequence_classification_loss(acts, params, "seq_head", inputs.sequence_labels),
    ]
    loss = sum(o.loss for o in outs)
    if not with_grads:
        return loss
    return loss, backward(params, acts, outs)


@dataclass
class CoordinateResult:
    tensor: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    error: float


@dataclass
class GradCheckReport:
    tolerance: float
    results: list[CoordinateResult] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((r.error for r in self.results), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(self.results) and self.max_error < self.tolerance

    def worst(self, k: int = 5) -> list[CoordinateResult]:
        return sorted(self.results, key=lambda r: -r.error)[:k]

    def summary(self) -> str:
        lines = [
            f"gradient check: {len(self.results)} coordinates, max relative error {self.max_error:.3e} "
            f"(tolerance {self.tolerance:.0e}) -> {'PASS' if self.passed else 'FAIL'}"
        ]
        for r in self.worst():
            lines.append(
                f"  {r.tensor}{list(r.index)}: analytic {r.analytic:+.6e} numeric {r.numeric:+.6e} err {r.error:.2e}"
            )
        return "\n".join(lines)


def gradient_check(
    config: ModelConfig | None = None,
    tolerance: float = 1e-4,
    num_coords: int = 200,
    step: float = 1e-5,
    seed: int = 0,
    inputs: CheckInputs | None = None,
    grad_transform: Callable[[Gradients], Gradients] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences at sampled coordinates.

    Runs in float64 with dropout disabled. Every tensor gets at least one
    sampled coordinate; the rest are drawn uniformly over all entries. The
    error measure is ``|a - n| / max(1, |a|, |n|)``.
    """
    config = config or ModelConfig.tiny()
    if config.dropout_rate:
        config = ModelConfig.from_dict({**config.to_dict(), "dropout_rate": 0.0})
    inputs = inputs or make_check_inputs(config, seed=seed)
    params = init_parameters(config)
    add_classifier_head(params, "token_head", config, inputs.num_token_labels, seed=1)
    add_classifier_head(params, "seq_head", config, inputs.num_sequence_labels, seed=2)
    params = cast_parameters(params, np.float64)

    _, grads = total_loss(params, config, inputs, with_grads=True)
    if grad_transform is not None:
        grads = grad_transform(grads)

    rng = np.random.default_rng(seed + 1)
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    picks = {(n, int(rng.integers(params[n].size))): None for n in names}
    target = min(max(num_coords, len(picks)), int(sizes.sum()))
    while len(picks) < target:
        t = int(rng.choice(len(names), p=sizes / sizes.sum()))
        picks.setdefault((names[t], int(rng.integers(sizes[t]))), None)

    report = GradCheckReport(tolerance)
    for name, flat in picks:
        arr = params[name]
        idx = np.unravel_index(flat, arr.shape)
        original = arr[idx]
        arr[idx] = original + step
        plus = total_loss(params, config, inputs)
        arr[idx] = original - step
        minus = total_loss(params, config, inputs)
        arr[idx] = original
        numeric = (plus - minus) / (2 * step)
        analytic = float(grads[name][idx]) if name in grads else 0.0
        err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        report.results.append(CoordinateResult(name, tuple(int(i) for i in idx), analytic, numeric, err))
    return report
