import numpy as np
import pytest

from pyheadseg import training
from pyheadseg.checkpoint import load_checkpoint
from pyheadseg.dataset import Dataset
from pyheadseg.enums import Architecture
from pyheadseg.exceptions import ConfigError, DataError, GradientError
from pyheadseg.module import Parameter
from pyheadseg.network import NetworkConfig, build
from pyheadseg.phantom import generate_dataset
from pyheadseg.training import Adam, TrainConfig, train, train_step


def quick_config(**overrides) -> TrainConfig:
    values = dict(epochs=2, batch_size=4, val_every=1, early_stop_patience=5, lr=1e-3, progress=False)
    values.update(overrides)
    return TrainConfig(**values)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = Parameter(np.array([1.0, -2.0, 0.5]))
        p.grad = np.array([0.5, -3.0, 1e-3])
        Adam([p], lr=0.01).step()
        np.testing.assert_allclose(p.data, [0.99, -1.99, 0.49], atol=1e-6)

    def test_zero_gradient_is_a_no_op(self):
        p = Parameter(np.array([1.0, 2.0]))
        p.grad = np.zeros(2)
        optimizer = Adam([p], lr=0.1)
        for _ in range(3):
            optimizer.step()
        np.testing.assert_array_equal(p.data, [1.0, 2.0])
        assert optimizer.state.step == 3

    def test_quadratic_bowl(self):
        w = Parameter(np.array([1.0]))
        optimizer = Adam([w], lr=0.1)
        trajectory = []
        for _ in range(50):
            optimizer.zero_grad()
            (w * w).sum().backward()
            optimizer.step()
            trajectory.append(abs(float(w.data[0])))
        assert min(trajectory) < 0.1
        assert trajectory[0] == pytest.approx(0.9, abs=1e-6)

    def test_missing_gradient(self):
        with pytest.raises(GradientError):
            Adam([Parameter(np.ones(2))]).step()


class TestTrainConfig:
    @pytest.mark.parametrize(
        "overrides",
        [dict(epochs=0), dict(batch_size=0), dict(val_every=0), dict(early_stop_patience=0), dict(lr=-1.0)],
    )
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            TrainConfig(**overrides).validate()

    def test_val_every_beyond_epochs(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=3, val_every=4).validate()


class TestTrain:
    def test_same_seed_same_history(self, tiny_net, phantoms):
        first = train(tiny_net(), phantoms, quick_config())
        second = train(tiny_net(), phantoms, quick_config())
        assert first.history == second.history
        assert all(np.isfinite(first.losses))

    def test_different_seed_differs(self, tiny_net, phantoms):
        first = train(tiny_net(), phantoms, quick_config(epochs=1))
        second = train(tiny_net(), phantoms, quick_config(epochs=1, seed=7))
        assert first.losses != second.losses

    def test_validation_schedule(self, tiny_net, phantoms, monkeypatch):
        monkeypatch.setattr(training, "mean_dice", lambda network, samples: 0.5)
        result = train(tiny_net(), phantoms, quick_config(epochs=4, val_every=2))
        assert [r.val_dice for r in result.history] == [None, 0.5, None, 0.5]

    def test_patience_stops_early(self, tiny_net, phantoms, monkeypatch):
        monkeypatch.setattr(training, "mean_dice", lambda network, samples: 0.5)
        result = train(tiny_net(), phantoms, quick_config(epochs=10, val_every=2, early_stop_patience=1))
        assert result.stopped_early
        assert len(result.history) == 4
        assert result.best_epoch == 2

    def test_zero_lr_freezes_model(self, tiny_net, phantoms):
        network = tiny_net()
        before = network.state_dict()
        config = TrainConfig(
            epochs=6, batch_size=4, val_every=1, early_stop_patience=1, lr=0.0, augment=False, progress=False
        )
        result = train(network, phantoms, config)
        assert result.stopped_early
        assert len(result.history) == 2
        assert result.history[0].val_dice == result.history[1].val_dice
        for name, value in network.state_dict().items():
            np.testing.assert_array_equal(value, before[name])

    def test_best_state_restored(self, tiny_net, phantoms, monkeypatch, tmp_path):
        snapshots = []
        scores = iter([0.9, 0.1])

        def fake_dice(network, samples):
            snapshots.append(network.state_dict())
            return next(scores)

        monkeypatch.setattr(training, "mean_dice", fake_dice)
        network = tiny_net()
        result = train(network, phantoms, quick_config(epochs=2), checkpoint_path=tmp_path / "model.ckpt")
        assert result.best_epoch == 1 and result.best_val_dice == 0.9
        for name, value in network.state_dict().items():
            np.testing.assert_array_equal(value, snapshots[0][name])

        restored, meta = load_checkpoint(tmp_path / "model.ckpt")
        assert meta["epoch"] == "1"
        for name, value in restored.state_dict().items():
            np.testing.assert_array_equal(value, snapshots[0][name])

    def test_write_history(self, tiny_net, phantoms, tmp_path):
        result = train(tiny_net(), phantoms, quick_config(epochs=2, val_every=2, augment=False))
        lines = result.write_history(tmp_path / "history.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_dice"
        assert len(lines) == 3
        assert lines[1].endswith(",")

    def test_needs_both_splits(self, tiny_net, phantoms):
        only_train = Dataset(s.with_split("train") for s in phantoms)
        with pytest.raises(DataError):
            train(tiny_net(), only_train, quick_config())


class TestSingleBatch:
    def test_loss_keeps_falling(self, tiny_net, phantoms):
        network = tiny_net(dtype="float64")
        optimizer = Adam(network.parameters(), lr=1e-3)
        batch = phantoms.train[:4]
        losses = [train_step(network, optimizer, batch) for _ in range(30)]
        assert losses[5] <= losses[0]
        assert all(later <= earlier + 1e-3 for earlier, later in zip(losses[5:], losses[6:]))
        assert losses[-1] < losses[5]


@pytest.mark.slow
class TestConvergence:
    def test_unet_on_small_phantom_set(self, phantoms):
        network = build(NetworkConfig.desk(Architecture.UNET))
        result = train(network, phantoms, TrainConfig(epochs=25, val_every=1, early_stop_patience=25, progress=False))
        assert result.best_val_dice >= 0.90

    @pytest.mark.parametrize("architecture", list(Architecture))
    def test_desk_scale(self, architecture):
        dataset = generate_dataset(250, (64, 64), "easy", seed=42)
        network = build(NetworkConfig.desk(architecture))
        result = train(network, dataset, TrainConfig(epochs=25, progress=False))
        floor = 0.95 if architecture is Architecture.ATTRESUNET else 0.90
        assert result.best_val_dice >= floor
