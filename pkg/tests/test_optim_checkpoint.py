import numpy as np
import pytest

from tinyship.autodiff import Tensor
from tinyship.checkpoint import (CheckpointError, load_checkpoint,
                                 save_checkpoint)
from tinyship.optim import Adagrad, cosine_lr, xavier_init


class TestXavier:
    def test_bound(self):
        rng = np.random.default_rng(3)
        w = xavier_init((30, 50), rng)
        bound = np.sqrt(6.0 / 80.0)
        assert np.abs(w).max() <= bound

    def test_conv_fans(self):
        rng = np.random.default_rng(3)
        w = xavier_init((8, 4, 3, 3), rng)
        bound = np.sqrt(6.0 / (4 * 9 + 8 * 9))
        assert np.abs(w).max() <= bound

    def test_seeded_reproducible(self):
        a = xavier_init((5, 5), np.random.default_rng(11))
        b = xavier_init((5, 5), np.random.default_rng(11))
        assert np.array_equal(a, b)


class TestCosine:
    def test_endpoints(self):
        assert cosine_lr(0, 0.05, 0.001, 100) == pytest.approx(0.05)
        assert cosine_lr(100, 0.05, 0.001, 100) == pytest.approx(0.001)

    def test_stays_in_range(self):
        rates = [cosine_lr(s, 0.05, 0.001, 100) for s in range(0, 300)]
        assert min(rates) >= 0.001 - 1e-15
        assert max(rates) <= 0.05 + 1e-15


class TestAdagrad:
    def test_first_step_is_signed_rate(self):
        p = Tensor([10.0], requires_grad=True)
        p.grad = np.array([2.0])
        opt = Adagrad([p], base_rate=0.1, min_rate=0.1, period=10, eps=1e-10)
        opt.step()
        # lr * g / (|g| + eps) ~= lr * sign(g)
        assert p.data[0] == pytest.approx(10.0 - 0.1, rel=1e-8)

    def test_accumulator_never_decreases(self):
        rng = np.random.default_rng(0)
        p = Tensor(np.zeros(4), requires_grad=True)
        opt = Adagrad([p], base_rate=0.01, period=50)
        prev = opt.accum[0].copy()
        for _ in range(20):
            p.grad = rng.standard_normal(4)
            opt.step()
            assert (opt.accum[0] >= prev).all()
            prev = opt.accum[0].copy()

    def test_zero_grad_means_no_update(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        opt = Adagrad([p], base_rate=0.5, period=10)
        p.grad = np.array([0.0, 0.0])
        opt.step()
        assert np.array_equal(p.data, [1.0, 2.0])


class TestCheckpoint:
    def test_round_trip_exact_at_f32(self, tmp_path):
        rng = np.random.default_rng(5)
        named = {"a.w": rng.standard_normal((3, 4)),
                 "b.conv": rng.standard_normal((2, 1, 3, 3)),
                 "c.bias": rng.standard_normal(7)}
        cfg = {"k": 2, "channels": [4, 8]}
        path = tmp_path / "model.mtuw"
        save_checkpoint(path, named, cfg)
        loaded, cfg2 = load_checkpoint(path)
        assert cfg2 == cfg
        assert set(loaded) == set(named)
        for k in named:
            assert np.array_equal(loaded[k],
                                  named[k].astype(np.float32).astype(np.float64))

    def test_second_round_trip_identical(self, tmp_path):
        named = {"x": np.random.default_rng(1).standard_normal(10)}
        p1 = tmp_path / "a.mtuw"
        p2 = tmp_path / "b.mtuw"
        save_checkpoint(p1, named, {})
        loaded, _ = load_checkpoint(p1)
        save_checkpoint(p2, loaded, {})
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_check(self, tmp_path):
        path = tmp_path / "bad.mtuw"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
