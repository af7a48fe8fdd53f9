"""Task generators, Monte-Carlo baselines, and metrics.

Baseline values are recomputed here by sampling, never hard-coded into
assertions about the generators.
"""

import math

import numpy as np
import pytest

from rnnkit.errors import ContractError
from rnnkit.rng import Rng
from rnnkit.tape import Tape
from rnnkit.tasks import (COPY_BLANK, COPY_GO, TaskSpec, adding_metric,
                          copy_metric, gen_adding, gen_copy, task_metric)


# ------------------------------------------------------------------ adding


def test_adding_marker_structure_and_targets():
    inputs, targets = gen_adding(20, 16, Rng(1))
    assert inputs.shape == (20, 16, 2) and targets.shape == (16, 1)
    ch1, ch2 = inputs[..., 0], inputs[..., 1]
    assert np.all((ch1 >= 0) & (ch1 < 1))
    for b in range(16):
        marks = np.flatnonzero(ch2[:, b])
        assert len(marks) == 2
        assert marks[0] < 10 <= marks[1]  # one marker in each half
        assert np.all((ch2[:, b] == 0) | (ch2[:, b] == 1))
        assert targets[b, 0] == ch1[marks[0], b] + ch1[marks[1], b]
    assert np.all(targets >= 0) and np.all(targets <= 2)


def test_adding_determinism_and_seed_disjointness():
    a1, t1 = gen_adding(10, 4, Rng(5))
    a2, t2 = gen_adding(10, 4, Rng(5))
    assert np.array_equal(a1, a2) and np.array_equal(t1, t2)
    b1, _ = gen_adding(10, 4, Rng(6))
    assert not np.array_equal(a1, b1)


def test_adding_requires_t_at_least_2():
    with pytest.raises(ContractError):
        gen_adding(1, 2, Rng(0))


def test_adding_constant_predictor_baseline_monte_carlo():
    """MSE of the constant predictor 1.0 approaches Var(v1 + v2) = 1/6."""
    rng = Rng(99)
    total, count = 0.0, 0
    for _ in range(100):
        _, targets = gen_adding(4, 10_000, rng)
        total += float(((targets - 1.0) ** 2).sum())
        count += targets.size
    mc = total / count
    assert abs(mc - 1.0 / 6.0) < 0.002


# -------------------------------------------------------------------- copy


def test_copy_structure():
    inputs, targets = gen_copy(7, 3, 8, Rng(2))
    T = 3 + 7 + 1 + 3
    assert inputs.shape == (T, 8, 10) and targets.shape == (T, 8)
    # one-hot rows
    assert np.all(inputs.sum(axis=-1) == 1.0)
    classes = inputs.argmax(axis=-1)
    for b in range(8):
        prefix = classes[:3, b]
        assert np.all(prefix < 8)
        assert np.all(classes[3:3 + 7, b] == COPY_BLANK)
        assert classes[10, b] == COPY_GO
        assert np.all(classes[11:, b] == COPY_BLANK)
        # suffix targets reproduce the prefix; everything else is blank
        assert np.array_equal(targets[-3:, b], prefix)
        assert np.all(targets[:-3, b] == COPY_BLANK)
    assert np.all(targets >= 0) and np.all(targets <= 9)


def test_copy_determinism():
    a = gen_copy(5, 2, 3, Rng(7))
    b = gen_copy(5, 2, 3, Rng(7))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_copy_memoryless_baseline_analytic_vs_loss():
    """Predict-blank-then-guess gives mean cross-entropy K*ln(8)/T, checked
    by actually evaluating the loss on that predictor's logits."""
    t_blank, k, b = 11, 4, 32
    T = k + t_blank + 1 + k
    analytic = k * math.log(8.0) / T
    rng = Rng(3)
    vals = []
    for _ in range(10):
        _, targets = gen_copy(t_blank, k, b, rng)
        logits = np.zeros((T, b, 10))
        logits[:-k, :, COPY_BLANK] = 40.0          # certain blank
        logits[-k:, :, COPY_BLANK] = -40.0         # suffix: uniform over 0..7
        logits[-k:, :, COPY_GO] = -40.0
        tape = Tape()
        node = tape.leaf(logits.reshape(T * b, 10), param=True)
        vals.append(float(tape.cross_entropy(node, targets.reshape(-1)).value[0]))
    assert abs(np.mean(vals) - analytic) < 1e-9


def test_copy_random_suffix_guess_accuracy_monte_carlo():
    rng = Rng(4)
    gen = np.random.default_rng(8)
    accs = []
    for _ in range(50):
        _, targets = gen_copy(6, 5, 64, rng)
        logits = gen.normal(size=(targets.shape[0], 64, 8))
        # content-only guesses on the suffix
        padded = np.concatenate([logits, np.full((targets.shape[0], 64, 2), -50.0)],
                                axis=-1)
        accs.append(copy_metric(padded, targets, 5))
    assert abs(np.mean(accs) - 1.0 / 8.0) < 0.01


# ----------------------------------------------------------------- metrics


def test_perfect_copy_accuracy():
    _, targets = gen_copy(5, 3, 4, Rng(9))
    logits = np.eye(10)[targets] * 10.0
    assert task_metric("copy", logits, targets, k=3) == 1.0


def test_adding_metric_zero_on_exact():
    _, targets = gen_adding(6, 4, Rng(10))
    assert task_metric("adding", targets, targets) == 0.0
    assert adding_metric(targets + 0.5, targets) == pytest.approx(0.25)


def test_task_metric_dispatch():
    with pytest.raises(ContractError):
        task_metric("copy", np.zeros((2, 2, 10)), np.zeros((2, 2)))  # k missing
    with pytest.raises(ContractError):
        task_metric("sorting", np.zeros(1), np.zeros(1))


# ---------------------------------------------------------------- TaskSpec


def test_task_spec_adding():
    spec = TaskSpec("adding", T=50)
    assert spec.input_size == 2 and spec.output_size == 1
    assert spec.loss_kind == "mse" and spec.metric_mode == "min"
    assert spec.seq_len == 50
    assert spec.better(0.1, 0.2)
    inputs, targets = spec.gen_batch(4, Rng(11))
    assert inputs.shape == (50, 4, 2)


def test_task_spec_copy():
    spec = TaskSpec("copy", T_blank=20, K=5)
    assert spec.input_size == 10 and spec.output_size == 10
    assert spec.loss_kind == "cross_entropy" and spec.metric_mode == "max"
    assert spec.seq_len == 5 + 20 + 1 + 5
    assert spec.better(0.9, 0.5)


def test_task_spec_validation():
    with pytest.raises(ContractError):
        TaskSpec("adding", T=1)
    with pytest.raises(ContractError):
        TaskSpec("copy", K=0)
    with pytest.raises(ContractError):
        TaskSpec("sorting")
