import numpy as np
import pytest

from pyheadseg.blocks import PlainBlock, ResidualBlock
from pyheadseg.enums import Architecture
from pyheadseg.exceptions import ConfigError, DataError, ShapeError
from pyheadseg.gradcheck import check_gradients
from pyheadseg.network import (
    FLAG_TOLERANCE,
    Network,
    NetworkConfig,
    build,
    build_architecture,
    count_flops,
    count_parameters,
)
from pyheadseg.tensor import Tensor


@pytest.fixture(scope="module")
def published():
    return build(NetworkConfig.for_architecture(Architecture.ATTRESUNET))


def images(rng, batch=2, size=64):
    return rng.random((batch, 1, size, size), dtype=np.float32)


class TestNetworkConfig:
    def test_defaults(self):
        config = NetworkConfig()
        assert config.encoder_channels == (64, 128, 256, 512)
        assert config.bottleneck_channels == 1024
        assert config.decoder_channels == (512, 256, 128, 64)
        assert config.architecture is Architecture.ATTRESUNET

    @pytest.mark.parametrize("architecture", list(Architecture))
    def test_flag_mapping(self, architecture):
        config = NetworkConfig.for_architecture(architecture)
        assert config.use_residual == architecture.use_residual
        assert config.use_attention_gates == architecture.use_attention_gates
        assert config.architecture is architecture

    def test_desk(self):
        config = NetworkConfig.desk(Architecture.UNET)
        assert config.encoder_channels == (16, 32, 64, 128)
        assert config.input_size == (64, 64)
        assert not config.use_residual

    def test_indivisible_input(self):
        with pytest.raises(ConfigError):
            NetworkConfig(input_size=(60, 64)).validate()

    def test_line_round_trip(self):
        config = NetworkConfig.desk(Architecture.ATTUNET, use_attention_blocks=True, dtype="float64", seed=3)
        values = dict(line.split("=", 1) for line in config.to_lines())
        assert NetworkConfig.from_values(values) == config

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            NetworkConfig.from_values({"depth": "5"})


class TestNetwork:
    def test_published_gates(self, published):
        gates = published.gates()
        assert len(gates) == 4
        assert [g.x_channels for g in gates] == [512, 256, 128, 64]

    def test_unet_has_no_gates_or_projections(self):
        net = build_architecture(Architecture.UNET)
        assert net.gates() == []
        blocks = [child for _, child in net.children() if isinstance(child, PlainBlock)]
        assert blocks and not any(isinstance(b, ResidualBlock) for b in blocks)

    def test_attresunet_uses_residual_blocks(self):
        net = build_architecture(Architecture.ATTRESUNET)
        assert isinstance(net.enc1, ResidualBlock) and net.enc1.has_projection
        assert len(net.gates()) == 4

    def test_forward_shape(self, rng):
        net = build_architecture(Architecture.ATTRESUNET)
        out = net(Tensor(images(rng)))
        assert out.shape == (2, 1, 64, 64)
        assert (out.data > 0).all() and (out.data < 1).all()

    def test_trace_shapes(self, rng):
        net = build_architecture(Architecture.ATTRESUNET)
        net(Tensor(images(rng, batch=1)))
        spatial = {name: t.shape[2] for name, t in net.trace.items()}
        assert [spatial[f"E{i}"] for i in range(1, 5)] == [64, 32, 16, 8]
        assert spatial["B"] == 4
        assert [spatial[f"D{i}"] for i in range(1, 5)] == [8, 16, 32, 64]
        assert [net.trace[f"alpha{i}"].shape[1] for i in range(1, 5)] == [1, 1, 1, 1]
        assert net.trace["S"].shape == (1, 1, 64, 64)

    def test_seeded_forward_is_deterministic(self, rng):
        x = images(rng)
        first = build_architecture(Architecture.ATTRESUNET).predict(x[:, 0])
        second = build_architecture(Architecture.ATTRESUNET).predict(x[:, 0])
        np.testing.assert_array_equal(first, second)

    def test_predict_restores_mode(self, rng):
        net = build_architecture(Architecture.UNET)
        net.train()
        probabilities = net.predict(images(rng)[:, 0])
        assert probabilities.shape == (2, 64, 64)
        assert net.training

    def test_indivisible_input(self, rng):
        with pytest.raises(ShapeError):
            build_architecture(Architecture.UNET)(Tensor(images(rng, size=60)))

    def test_input_outside_unit_interval(self, rng):
        with pytest.raises(DataError):
            build_architecture(Architecture.UNET)(Tensor(images(rng) + 1.0))

    def test_attention_blocks_at_coarse_levels(self, tiny_net):
        net = tiny_net(use_attention_blocks=True)
        assert [name for name, _ in net.children() if name.startswith("attn")] == ["attn1", "attn2"]
        out = net(Tensor(np.random.default_rng(1).random((1, 1, 16, 16), dtype=np.float32)))
        assert out.shape == (1, 1, 16, 16)

    def test_gradients_through_full_model(self, tiny_net, rng):
        net = tiny_net(dtype="float64", use_attention_blocks=True)
        x = Tensor(rng.random((1, 1, 16, 16)), requires_grad=True)
        checked = [
            net.enc1.conv1.weight,
            net.gate1.b,
            net.gate4.psi.weight,
            net.dec4.conv2.bias,
            net.attn1.w_q.weight,
            net.head.weight,
            net.head.bias,
        ]
        errors = check_gradients(lambda: net(x, mode="eval"), [x] + checked)
        assert max(errors.values()) < 1e-4

    @pytest.mark.parametrize("architecture", list(Architecture))
    def test_every_parameter_gets_a_gradient(self, tiny_net, rng, architecture):
        net = tiny_net(architecture, use_attention_blocks=True)
        net(Tensor(rng.random((2, 1, 16, 16))), mode="train").sum().backward()
        missing = [name for name, p in net.named_parameters() if p.grad is None]
        assert missing == []


class TestAccounting:
    def test_parameter_total(self, published):
        report = count_parameters(published)
        assert report.total == published.num_parameters() == sum(report.per_module.values())
        assert report.claim == 14.7e6
        assert report.flagged == (abs(report.deviation) > FLAG_TOLERANCE)

    def test_residual_is_larger(self):
        unet = count_parameters(build_architecture(Architecture.UNET)).total
        resunet = count_parameters(build_architecture(Architecture.RESUNET)).total
        assert resunet > unet

    def test_monotone_in_width(self, tiny_config):
        narrow = count_parameters(build(tiny_config())).total
        wide = count_parameters(build(tiny_config(encoder_channels=(8, 16, 16, 32), bottleneck_channels=32))).total
        assert wide > narrow

    def test_counts_are_stable(self):
        first = count_parameters(build_architecture(Architecture.ATTUNET))
        second = count_parameters(build_architecture(Architecture.ATTUNET))
        assert first == second

    def test_flops_scale_with_area(self):
        net = build_architecture(Architecture.ATTRESUNET)
        assert count_flops(net, (128, 128)).total == 4 * count_flops(net, (64, 64)).total

    def test_published_flops(self, published):
        report = count_flops(published, (256, 256))
        assert report.input_size == (256, 256)
        assert report.gflops == report.total / 1e9
        assert report.claim == 45e9
        assert "published" in report.lines()[-1]

    def test_flops_reject_indivisible_size(self):
        with pytest.raises(ShapeError):
            count_flops(build_architecture(Architecture.UNET), (40, 40))


def test_network_is_a_module(tiny_net):
    assert isinstance(tiny_net(), Network)
    assert "head.weight" in tiny_net().state_dict()
