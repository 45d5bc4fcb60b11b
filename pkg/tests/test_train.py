import math

import numpy as np
import pytest

from colorgan import tensor as T
from colorgan.data import synth_isogray_dataset
from colorgan.tensor import Tensor
from colorgan.train import (
    METRIC_FIELDS,
    Adam,
    MetricsLog,
    TrainConfig,
    Trainer,
    TrainingDivergedError,
    adam_step,
    frozen,
    make_config,
    read_metrics,
    train,
    window_mean,
)

from conftest import digest, tiny_config


def param(values):
    return Tensor(np.asarray(values, dtype=np.float32), requires_grad=True, name="p")


class TestAdam:
    def test_zero_grad_leaves_params(self):
        p = param([1.0, -2.0])
        opt = Adam({"p": p})
        p.grad = np.zeros(2, dtype=np.float32)
        adam_step({"p": p}, opt)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert opt.t == 1

    def test_first_step_is_lr_sign(self):
        # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        p = param([0.0, 0.0, 0.0])
        opt = Adam({"p": p}, lr=2e-4)
        p.grad = np.array([3.0, -0.5, 1e-3], dtype=np.float32)
        opt.step()
        np.testing.assert_allclose(p.data, [-2e-4, 2e-4, -2e-4], rtol=1e-4)

    def test_matches_reference_over_steps(self):
        rng = np.random.default_rng(0)
        grads = rng.normal(size=(5, 3))
        p = Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
        opt = Adam({"p": p}, lr=0.01, beta1=0.5, beta2=0.999, eps=1e-8)
        ref, m, v = np.zeros(3), np.zeros(3), np.zeros(3)
        for t, g in enumerate(grads, start=1):
            p.grad = g.copy()
            opt.step()
            m = 0.5 * m + 0.5 * g
            v = 0.999 * v + 0.001 * g * g
            ref -= 0.01 * (m / (1 - 0.5 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.data, ref, rtol=1e-12)

    def test_deterministic(self):
        finals = []
        for _ in range(2):
            p = param(np.linspace(-1, 1, 4))
            opt = Adam({"p": p})
            for i in range(10):
                p.grad = np.sin(p.data * (i + 1)).astype(np.float32)
                opt.step()
            finals.append(p.data.copy())
        np.testing.assert_array_equal(*finals)

    def test_mismatched_params(self):
        opt = Adam({"p": param([1.0])})
        with pytest.raises(T.ShapeError):
            adam_step({"q": param([1.0])}, opt)


def test_frozen_restores_flags():
    p = param([1.0])
    with frozen({"p": p}):
        assert not p.requires_grad
    assert p.requires_grad


class TestConfig:
    def test_lambda_defaults(self):
        assert make_config(8, "RGB", g_widths=[2] * 5, d_widths=[2] * 4).lam == 10
        assert make_config(8, "YUV", g_widths=[2] * 5, d_widths=[2] * 4).lam == 0

    def test_round_trip(self):
        cfg = tiny_config()
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("kw", [{"m": 1}, {"k_d": 0}, {"lam": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            tiny_config(**kw)

    def test_loop_and_optimizer_defaults(self):
        cfg = TrainConfig()
        assert (cfg.k_d, cfg.k_g, cfg.m, cfg.z_dim) == (1, 1, 64, 100)
        assert (cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps) == (2e-4, 0.5, 0.999, 1e-8)


class TestLoop:
    def test_kd_then_kg(self, tiny_dataset):
        tr = Trainer(tiny_config(k_d=2, k_g=3), tiny_dataset)
        tr.iterate()
        tr.iterate()
        assert tr.step_log == [(0, "D", 0), (0, "D", 1), (0, "G", 0), (0, "G", 1), (0, "G", 2),
                               (1, "D", 0), (1, "D", 1), (1, "G", 0), (1, "G", 1), (1, "G", 2)]

    def test_fresh_noise_and_batches(self, tiny_dataset, monkeypatch):
        tr = Trainer(tiny_config(k_d=2, k_g=2), tiny_dataset)
        noises, batches = [], []
        orig_noise, orig_next = tr.noise, tr.sampler.next

        def record_noise(*a):
            z = orig_noise(*a)
            noises.append(z)
            return z

        def record_batch():
            b = orig_next()
            batches.append(tuple(b.indices))
            return b

        monkeypatch.setattr(tr, "noise", record_noise)
        monkeypatch.setattr(tr.sampler, "next", record_batch)
        for _ in range(2):
            tr.iterate()
        assert len(noises) == 8 and len(batches) == 8
        flat = [z.tobytes() for z in noises]
        assert len(set(flat)) == 8

    def test_parameter_freeze(self, tiny_dataset):
        tr = Trainer(tiny_config(), tiny_dataset)
        g_before = digest({**tr.G.parameters(), **tr.G.buffers()})
        d_before = digest(tr.D.parameters())
        tr.d_step(0, 0)
        assert digest({**tr.G.parameters(), **tr.G.buffers()}) == g_before
        d_after = digest(tr.D.parameters())
        assert d_after != d_before
        d_buffers = digest(tr.D.buffers())
        tr.g_step(0, 0)
        assert digest(tr.D.parameters()) == d_after
        assert digest(tr.D.buffers()) == d_buffers
        assert digest(tr.G.parameters()) != g_before

    def test_discriminator_grads_untouched_by_g_step(self, tiny_dataset):
        tr = Trainer(tiny_config(), tiny_dataset)
        tr.g_step(0, 0)
        assert all(p.grad is None for p in tr.D.parameters().values())

    def test_first_loss_near_equilibrium(self, tiny_dataset):
        for seed in range(5):
            tr = Trainer(tiny_config(init_seed=seed), tiny_dataset)
            assert abs(tr.iterate()["loss_d"] - 2 * math.log(2)) < 0.2 * 2 * math.log(2)

    def test_rgb_logs_l1(self, tiny_dataset):
        info = Trainer(tiny_config("RGB"), tiny_dataset).iterate()
        assert info["l1_term"] > 0

    def test_divergence_aborts(self, tiny_dataset):
        tr = Trainer(tiny_config(), tiny_dataset)
        tr.D.head.weight.data[:] = np.nan
        with pytest.raises(TrainingDivergedError, match="iteration 0"):
            tr.iterate()

    def test_dataset_checks(self):
        with pytest.raises(ValueError):
            Trainer(tiny_config(), synth_isogray_dataset(2, 8, 0))
        with pytest.raises(ValueError):
            Trainer(tiny_config(), synth_isogray_dataset(8, 16, 0))


class TestMetrics:
    def test_records_and_csv(self, tiny_dataset, tmp_path):
        res = train(tiny_config(iterations=4), tiny_dataset, out_dir=tmp_path)
        assert len(res.metrics) == 4
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0] == ",".join(METRIC_FIELDS)
        assert len(lines) == 5
        back = read_metrics(tmp_path / "metrics.csv")
        assert back == res.metrics
        assert all(math.isfinite(v) for rec in back for v in rec.values())
        assert (tmp_path / "final.ckpt").exists()

    def test_identical_runs_identical_logs(self, tiny_dataset, tmp_path):
        for name in ("a", "b"):
            train(tiny_config(iterations=3), tiny_dataset, metrics_path=tmp_path / f"{name}.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_checkpoint_cadence(self, tiny_dataset, tmp_path):
        res = train(tiny_config(iterations=4, checkpoint_every=2), tiny_dataset, out_dir=tmp_path)
        assert [p.name for p in res.checkpoints] == ["iter_000002.ckpt", "iter_000004.ckpt", "final.ckpt"]

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_metrics(tmp_path / "m.csv")

    def test_memory_log(self):
        log = MetricsLog()
        log.append(dict.fromkeys(METRIC_FIELDS, 0))
        assert len(log.records) == 1

    def test_window_mean(self):
        assert window_mean(list(range(10)), 0.2) == (0.5, 8.5)
