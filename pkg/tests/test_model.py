import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, max_relative_error
from rankembed.corpus import WindowExample
from rankembed.errors import FormatError, TruncatedFileError, VersionMismatchError
from rankembed.model import (
    ModelConfig,
    RankingParams,
    backward,
    batch_backward,
    forward_score,
    init_params,
    load_params,
    pair_loss,
    parameter_count,
    params_from_bytes,
    params_to_bytes,
    save_params,
)


def random_example(cfg: ModelConfig, rng) -> WindowExample:
    orig = rng.integers(0, cfg.vocab_size, size=cfg.window)
    corr = orig.copy()
    corr[cfg.n] = (orig[cfg.n] + rng.integers(1, cfg.vocab_size)) % cfg.vocab_size
    return WindowExample(tuple(int(x) for x in orig), tuple(int(x) for x in corr))


def reference_loss(params: RankingParams, ex: WindowExample) -> float:
    """Loss straight from the definitions, with plain loops for the score."""

    def score(window):
        P = np.concatenate([params.C[i] for i in window])
        A = [math.tanh(sum(params.W1[h, j] * P[j] for j in range(len(P))) + params.b1[h]) for h in range(len(params.b1))]
        return sum(params.W2[h] * A[h] for h in range(len(A))) + float(params.b2)

    return max(0.0, 1.0 - score(ex.original) + score(ex.corrupted))


def check_gradients(cfg: ModelConfig, seed: int) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    params.b1[:] = rng.normal(size=cfg.hidden) * 0.3
    params.b2[...] = rng.normal()
    for _ in range(100):
        ex = random_example(cfg, rng)
        if backward(params, ex)[0] > 1e-3:
            break
    else:  # pragma: no cover
        pytest.skip("no example with an active margin")
    loss, grads = backward(params, ex)

    def f():
        return backward(params, ex)[0]

    worst = 0.0
    touched = sorted(set(ex.original) | set(ex.corrupted))
    untouched = [r for r in range(cfg.vocab_size) if r not in touched][:2]
    rows = touched + untouched
    entries = [r * cfg.dim + j for r in rows for j in range(cfg.dim)]
    numeric_C = central_difference(f, params.C, entries=entries)
    worst = max(worst, max_relative_error(grads.dense_C(cfg.vocab_size)[rows], numeric_C[rows]))
    for name in ("W1", "b1", "W2"):
        worst = max(worst, max_relative_error(getattr(grads, name), central_difference(f, getattr(params, name))))
    worst = max(worst, max_relative_error(np.atleast_1d(grads.b2), central_difference(f, params.b2.reshape(1))))
    return worst


small_configs = st.builds(
    ModelConfig,
    vocab_size=st.integers(6, 50),
    n=st.integers(0, 2),
    dim=st.integers(1, 8),
    hidden=st.integers(1, 4),
)


class TestParameterCount:
    def test_full_size_config(self):
        # 5*64*32 + 32 + 32 + 1 + 100_000*64
        assert parameter_count(ModelConfig(vocab_size=100_000, n=2, dim=64, hidden=32)) == 6_410_305

    def test_unit(self):
        assert parameter_count(ModelConfig(vocab_size=1, n=0, dim=1, hidden=1)) == 5

    @given(small_configs)
    def test_matches_allocation(self, cfg):
        assert parameter_count(cfg) == init_params(cfg, np.random.default_rng(0)).size()


class TestInit:
    def test_deterministic(self):
        cfg = ModelConfig(vocab_size=20, dim=4, hidden=3)
        assert init_params(cfg, np.random.default_rng(1)).equals(init_params(cfg, np.random.default_rng(1)))

    def test_ranges_and_zero_biases(self):
        cfg = ModelConfig(vocab_size=200, n=2, dim=8, hidden=6)
        p = init_params(cfg, np.random.default_rng(0))
        assert np.all(p.b1 == 0) and float(p.b2) == 0
        assert np.abs(p.C).max() <= 0.5
        assert np.abs(p.W1).max() <= 1 / math.sqrt(40)
        assert np.abs(p.W2).max() <= 1 / math.sqrt(6)
        assert p.C.shape == (200, 8) and p.W1.shape == (6, 40) and p.W2.shape == (6,)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            ModelConfig(vocab_size=0)


class TestForward:
    def test_zero_hidden_weights(self):
        cfg = ModelConfig(vocab_size=10, n=1, dim=3, hidden=4)
        p = init_params(cfg, np.random.default_rng(0))
        p.W1[:] = 0
        p.b2[...] = 0.7
        tr = forward_score(p, [1, 5, 2])
        assert tr.score == 0.7
        assert np.all(tr.A == 0)

    def test_hand_computed(self):
        cfg = ModelConfig(vocab_size=1, n=0, dim=1, hidden=1)
        p = RankingParams(cfg, np.array([[0.5]]), np.array([[2.0]]), np.zeros(1), np.array([1.0]), np.zeros(()))
        assert forward_score(p, [0]).score == pytest.approx(math.tanh(1.0), abs=1e-12)
        assert math.tanh(1.0) == pytest.approx(0.76159, abs=1e-5)

    def test_position_sensitive(self):
        cfg = ModelConfig(vocab_size=10, n=1, dim=2, hidden=3)
        p = init_params(cfg, np.random.default_rng(0))
        a, b = forward_score(p, [4, 5, 6]), forward_score(p, [6, 5, 4])
        assert not np.array_equal(a.P, b.P)

    def test_projection_is_concatenation(self):
        cfg = ModelConfig(vocab_size=10, n=1, dim=2, hidden=3)
        p = init_params(cfg, np.random.default_rng(0))
        tr = forward_score(p, [4, 5, 6])
        assert np.array_equal(tr.P, np.concatenate([p.C[4], p.C[5], p.C[6]]))

    def test_out_of_range(self):
        cfg = ModelConfig(vocab_size=10, n=1, dim=2, hidden=3)
        p = init_params(cfg, np.random.default_rng(0))
        with pytest.raises(ValueError):
            forward_score(p, [4, 10, 6])
        with pytest.raises(ValueError):
            forward_score(p, [4, 5])

    @given(st.floats(-1e6, 1e6), st.integers(0, 1000))
    def test_tanh_bounded(self, scale, seed):
        cfg = ModelConfig(vocab_size=8, n=1, dim=2, hidden=3)
        p = init_params(cfg, np.random.default_rng(seed))
        p.W1 *= scale
        tr = forward_score(p, [1, 4, 2])
        assert np.all(np.abs(tr.A) <= 1)


@pytest.mark.parametrize("so, sc, expected", [(0, 0, 1), (2, 0, 0), (0, 0.5, 1.5), (1, 0, 0)])
def test_pair_loss(so, sc, expected):
    assert pair_loss(so, sc) == expected


class TestBackward:
    def test_matches_reference_loss(self):
        cfg = ModelConfig(vocab_size=12, n=1, dim=3, hidden=2)
        rng = np.random.default_rng(4)
        p = init_params(cfg, rng)
        for _ in range(10):
            ex = random_example(cfg, rng)
            assert backward(p, ex)[0] == pytest.approx(reference_loss(p, ex), abs=1e-12)

    def test_margin_satisfied_zero_gradients(self):
        cfg = ModelConfig(vocab_size=12, n=1, dim=3, hidden=2)
        p = init_params(cfg, np.random.default_rng(0))
        ex = WindowExample((4, 5, 6), (4, 7, 6))
        # make the original score 2 higher than the corrupted one
        p.W1[:] = 0
        p.W1[0, 3:6] = 10 * (p.C[5] - p.C[7])
        p.W2[:] = 0
        p.W2[0] = 5.0
        loss, g = backward(p, ex)
        assert loss == 0
        for arr in (g.C_grad, g.W1, g.b1, g.W2, g.b2):
            assert not np.any(arr)

    def test_b2_gradient_zero_and_loss_invariant(self):
        cfg = ModelConfig(vocab_size=12, n=2, dim=3, hidden=2)
        rng = np.random.default_rng(2)
        p = init_params(cfg, rng)
        ex = random_example(cfg, rng)
        loss, g = backward(p, ex)
        assert loss > 0 and float(g.b2) == 0.0
        for c in (-3.0, 0.25, 17.0):
            q = p.copy()
            q.b2[...] += c
            assert backward(q, ex)[0] == pytest.approx(loss, rel=1e-14, abs=1e-14)

    def test_sparse_touch(self):
        cfg = ModelConfig(vocab_size=30, n=2, dim=3, hidden=2)
        rng = np.random.default_rng(6)
        p = init_params(cfg, rng)
        ex = random_example(cfg, rng)
        _, g = backward(p, ex)
        rows = set(ex.original) | set(ex.corrupted)
        assert set(g.C_rows.tolist()) == rows
        assert len(g.C_rows) <= 2 * cfg.window
        dense = g.dense_C(cfg.vocab_size)
        untouched = [r for r in range(cfg.vocab_size) if r not in rows]
        assert not dense[untouched].any()

    def test_shared_rows_accumulate(self):
        cfg = ModelConfig(vocab_size=10, n=1, dim=2, hidden=2)
        rng = np.random.default_rng(0)
        p = init_params(cfg, rng)
        ex = WindowExample((5, 5, 5), (5, 6, 5))
        _, g = backward(p, ex)
        numeric = central_difference(lambda: backward(p, ex)[0], p.C)
        assert max_relative_error(g.dense_C(10), numeric) < 1e-4

    def test_batch_mean_equals_mean_of_pairs(self):
        cfg = ModelConfig(vocab_size=20, n=2, dim=3, hidden=2)
        rng = np.random.default_rng(8)
        p = init_params(cfg, rng)
        exs = [random_example(cfg, rng) for _ in range(7)]
        o = np.array([e.original for e in exs])
        c = np.array([e.corrupted for e in exs])
        losses, g = batch_backward(p, o, c)
        total = None
        for e in exs:
            _, gi = backward(p, e)
            total = gi if total is None else total + gi
        assert np.allclose(losses, [backward(p, e)[0] for e in exs])
        assert np.allclose(g.W1, total.W1 / 7) and np.allclose(g.W2, total.W2 / 7)
        assert np.allclose(g.dense_C(20), total.dense_C(20) / 7)

    @settings(max_examples=25, deadline=None)
    @given(small_configs, st.integers(0, 2**31))
    def test_finite_differences(self, cfg, seed):
        assert check_gradients(cfg, seed) < 1e-4


class TestParamFile:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg = ModelConfig(vocab_size=13, n=1, dim=3, hidden=2)
        p = init_params(cfg, np.random.default_rng(0))
        p.b2[...] = -0.0
        save_params(p, tmp_path / "p.bin")
        q = load_params(tmp_path / "p.bin")
        assert q.equals(p)
        assert math.copysign(1, float(q.b2)) == -1

    def test_layout(self):
        cfg = ModelConfig(vocab_size=2, n=0, dim=1, hidden=1)
        p = RankingParams(cfg, np.array([[1.0], [2.0]]), np.array([[3.0]]), np.array([4.0]), np.array([5.0]), np.array(6.0))
        data = params_to_bytes(p)
        assert data[:4] == b"PGEM"
        assert np.frombuffer(data[-6 * 8 :], dtype="<f8").tolist() == [1, 2, 3, 4, 5, 6]
        assert np.frombuffer(data[8:40], dtype="<u8").tolist() == [0, 1, 1, 2]

    def test_errors(self):
        cfg = ModelConfig(vocab_size=3, n=0, dim=1, hidden=1)
        data = params_to_bytes(init_params(cfg, np.random.default_rng(0)))
        with pytest.raises(FormatError, match="bad format"):
            params_from_bytes(b"XXXX" + data[4:])
        with pytest.raises(VersionMismatchError):
            params_from_bytes(data[:4] + (99).to_bytes(4, "little") + data[8:])
        with pytest.raises(TruncatedFileError):
            params_from_bytes(data[:-3])
