import dataclasses
import os

import numpy as np
import pytest
import torch

from pddf.core.errors import NumericalError
from pddf.models.geometry import SphereShape
from pddf.models.samples import SAMPLE_TYPE_ORDER, DatasetSpec, SampleType
from pddf.models.training import BatchCounts, TrainConfig
from pddf.services import trainer
from pddf.services.field import init_siren
from pddf.services.sampler import AnalyticOracle, build_held_out, generate_dataset
from pddf.services.trainer import (
    Adam, AdamState, EpochSampler, adam_step, evaluate_held_out, fit_shape, run_ablations,
)
from pddf.storage.checkpoint import load_checkpoint


@pytest.fixture
def small_spec():
    return DatasetSpec(counts={t: 200 for t in SAMPLE_TYPE_ORDER}, seed=2)


@pytest.fixture
def sphere_samples(small_spec):
    return generate_dataset(AnalyticOracle(SphereShape(radius=0.8)), small_spec)


@pytest.fixture
def tiny_train_config():
    """A handful of small minibatches"""
    return TrainConfig(
        iterations=5,
        lr=1e-3,
        batch=BatchCounts(A=8, U=8, B=4, T=4, O=4, S=4, reg_only=4),
        report_every=1,
        seed=7,
    )


@pytest.mark.unit
class TestAdam:

    def test_minimises_square(self):
        x = torch.tensor([1.0], dtype=torch.float64, requires_grad=True)
        optimizer = Adam([x], lr=0.1)
        for _ in range(100):
            optimizer.zero_grad()
            (x ** 2).sum().backward()
            optimizer.step()
        assert abs(x.item()) < 0.05

    def test_zero_gradient_keeps_parameters(self):
        params = [torch.ones(3), torch.full((2, 2), -1.0)]
        state = AdamState.zeros_like(params)
        new, state = adam_step(params, [torch.zeros(3), torch.zeros(2, 2)], state, lr=0.1)
        for a, b in zip(params, new):
            assert torch.equal(a, b)
        assert state.step == 1

    def test_first_step_size(self):
        """Bias correction makes the first step lr * sign(g)"""
        new, _ = adam_step([torch.zeros(2)], [torch.tensor([3.0, -0.5])], AdamState.zeros_like([torch.zeros(2)]), lr=0.01)
        assert torch.allclose(new[0], torch.tensor([-0.01, 0.01]), atol=1e-8)

    def test_non_finite_gradient(self):
        params = [torch.zeros(2)]
        with pytest.raises(NumericalError) as exc:
            adam_step(params, [torch.tensor([0.0, float("nan")])], AdamState.zeros_like(params), lr=0.1, iteration=42)
        assert "42" in str(exc.value)


@pytest.mark.unit
class TestEpochSampler:

    def test_each_index_once_per_epoch(self):
        sampler = EpochSampler(10, np.random.default_rng(0))
        drawn = np.concatenate([sampler.take(3) for _ in range(3)] + [sampler.take(1)])
        assert sorted(drawn.tolist()) == list(range(10))

    def test_wraps_into_next_epoch(self):
        sampler = EpochSampler(4, np.random.default_rng(0))
        drawn = sampler.take(6)
        assert len(drawn) == 6
        assert sorted(drawn[:4].tolist()) == [0, 1, 2, 3]
        assert sampler.epoch == 2

    def test_empty(self):
        assert len(EpochSampler(0, np.random.default_rng(0)).take(5)) == 0


@pytest.mark.unit
class TestFitShape:

    def test_zero_iterations(self, sphere_samples, tiny_config, temp_dir):
        """No steps returns the initial network and still writes a checkpoint"""
        path = os.path.join(temp_dir, "init.ddfm")
        config = TrainConfig(iterations=0)
        model, report = fit_shape(sphere_samples, config, tiny_config, checkpoint_path=path)
        reference = init_siren(tiny_config)
        for a, b in zip(model.parameters(), reference.parameters()):
            assert torch.equal(a, b)
        assert report.iterations == 0
        loaded, header = load_checkpoint(path)
        assert header["training"]["iteration"] == 0
        for a, b in zip(loaded.parameters(), reference.parameters()):
            assert torch.equal(a, b.to(torch.float32).to(b.dtype))

    def test_deterministic(self, sphere_samples, tiny_config, tiny_train_config):
        a, report_a = fit_shape(sphere_samples, tiny_train_config, tiny_config)
        b, report_b = fit_shape(sphere_samples, tiny_train_config, tiny_config)
        for x, y in zip(a.parameters(), b.parameters()):
            assert torch.equal(x, y)
        assert report_a.history == report_b.history

    def test_history_and_checkpoint(self, sphere_samples, tiny_config, tiny_train_config, temp_dir):
        path = os.path.join(temp_dir, "fit.ddfm")
        _, report = fit_shape(sphere_samples, tiny_train_config, tiny_config, checkpoint_path=path)
        assert [entry["iter"] for entry in report.history] == [1, 2, 3, 4, 5]
        assert all(np.isfinite(entry["total"]) for entry in report.history)
        _, header = load_checkpoint(path)
        assert header["training"]["iteration"] == 5

    def test_held_out_metrics(self, sphere_samples, tiny_config, tiny_train_config, small_spec):
        held_out = build_held_out(AnalyticOracle(SphereShape(radius=0.8)), small_spec)
        _, report = fit_shape(sphere_samples, tiny_train_config, tiny_config, held_out=held_out)
        assert set(report.held_out) == {t.value for t in SAMPLE_TYPE_ORDER}
        assert report.held_out["U"]["count"] == 200

    def test_scale_shrinks_run(self, sphere_samples, tiny_config, tiny_train_config):
        config = tiny_train_config.model_copy(update={"iterations": 10, "scale": 0.5})
        _, report = fit_shape(sphere_samples, config, tiny_config)
        assert report.iterations == 5


@pytest.mark.unit
class TestPlateauSchedule:

    @staticmethod
    def _assert_schedule(report, config):
        lrs = [entry["lr"] for entry in report.history]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))
        assert lrs[0] <= config.lr
        gaps = np.diff(report.lr_reductions)
        assert np.all(gaps >= config.plateau_min_gap)

    def test_flat_loss_reduces_at_min_gap(self, sphere_samples, tiny_config, tiny_train_config, monkeypatch):
        """A constant loss never improves, so reductions come as often as the gap allows"""
        real_loss_terms = trainer.loss_terms

        def flat_loss_terms(model, batch, weights):
            breakdown = real_loss_terms(model, batch, weights)
            return dataclasses.replace(breakdown, total=breakdown.total * 0.0 + 1.0)

        monkeypatch.setattr(trainer, "loss_terms", flat_loss_terms)
        config = tiny_train_config.model_copy(update={
            "iterations": 60, "plateau_patience": 3, "plateau_min_gap": 10,
            "plateau_factor": 0.5, "ema_alpha": 0.5,
        })
        _, report = fit_shape(sphere_samples, config, tiny_config)

        assert report.lr_reductions == [5, 15, 25, 35, 45, 55]
        self._assert_schedule(report, config)
        assert report.final_lr == pytest.approx(config.lr * 0.5 ** 6)

    def test_real_loss_respects_min_gap(self, sphere_samples, tiny_config, tiny_train_config):
        config = tiny_train_config.model_copy(update={
            "iterations": 40, "lr": 5e-2, "plateau_patience": 1, "plateau_min_gap": 4,
        })
        _, report = fit_shape(sphere_samples, config, tiny_config)
        self._assert_schedule(report, config)
        assert report.final_lr == pytest.approx(config.lr * config.plateau_factor ** len(report.lr_reductions))


@pytest.mark.unit
class TestAblation:

    def test_evaluate_held_out_types(self, sphere_samples, tiny_network):
        metrics = evaluate_held_out(tiny_network, sphere_samples.of_type(SampleType.B))
        assert list(metrics) == ["B"]

    def test_table_shape(self, sphere_samples, tiny_config, tiny_train_config):
        held_out = sphere_samples.subset(np.arange(0, len(sphere_samples), 4))
        config = tiny_train_config.model_copy(update={"iterations": 2})
        table = run_ablations(sphere_samples, config, tiny_config, held_out, types=[SampleType.U, SampleType.S])
        assert table.shape == (18, 2)
        assert list(table.columns) == ["l1", "bce"]
        assert set(table.index.get_level_values("ablated")) == {"none", "U", "S"}
