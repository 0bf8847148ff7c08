import numpy as np
import pytest
import torch

from demark.errors import ConfigError
from demark.generator import GeneratorConfig, UNetGenerator, build_generator
from demark.netops import parameter_hash
from demark.rng import RngStream


def tiny_cfg(side=16, depth=2, base=4):
    return GeneratorConfig(depth=depth, base_channels=base, input_side=side)


# --------------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ConfigError):
        GeneratorConfig(depth=0)
    with pytest.raises(ConfigError):
        GeneratorConfig(depth=3, input_side=20)  # 20 % 8 != 0
    with pytest.raises(ConfigError):
        GeneratorConfig(base_channels=0)


def test_encoder_channel_plan_doubles_with_cap():
    cfg = GeneratorConfig(depth=6, base_channels=64, input_side=256)
    assert cfg.encoder_channels() == [64, 128, 256, 512, 512, 512]


# ------------------------------------------------------------------ structure

def test_depth_one_has_single_down_and_up():
    g = UNetGenerator(GeneratorConfig(depth=1, base_channels=8, input_side=2))
    assert len(g.downs) == 1
    assert len(g.ups) == 1


def test_first_block_maps_3_to_base():
    g = UNetGenerator(GeneratorConfig(depth=3, base_channels=16, input_side=32))
    conv = g.downs[0][0]
    assert conv.in_channels == 3
    assert conv.out_channels == 16


def test_first_decoder_concat_is_1024_at_default_cfg():
    # encoder 64,128,256,512,512,512; decoder block below the bottleneck
    # consumes cat(512 up, 512 skip) = 1024 channels
    g = UNetGenerator(GeneratorConfig())
    second_up_conv = g.ups[1][0]
    assert second_up_conv.in_channels == 1024


def test_block_counts_match_depth():
    for depth in (1, 2, 4, 6):
        side = 2 ** depth
        g = UNetGenerator(GeneratorConfig(depth=depth, base_channels=4,
                                          input_side=side))
        assert len(g.downs) == depth
        assert len(g.ups) == depth


# --------------------------------------------------------------------- shapes

@pytest.mark.parametrize("side", [64, 128, 256])
def test_shape_preservation_across_sides(side):
    cfg = GeneratorConfig(depth=4, base_channels=4, input_side=side)
    g = UNetGenerator(cfg)
    out = g(torch.rand(1, 3, side, side) * 2 - 1)
    assert tuple(out.shape) == (1, 3, side, side)


def test_shape_preservation_default_depth6():
    cfg = GeneratorConfig(depth=6, base_channels=4, input_side=256)
    out = UNetGenerator(cfg)(torch.rand(1, 3, 256, 256) * 2 - 1)
    assert tuple(out.shape) == (1, 3, 256, 256)


def test_bottleneck_side_is_input_over_2_pow_depth():
    cfg = GeneratorConfig(depth=6, base_channels=4, input_side=256)
    g = UNetGenerator(cfg)
    h = torch.rand(1, 3, 256, 256)
    for down in g.downs:
        h = down(h)
    assert h.shape[-1] == 256 // 2 ** 6 == 4


def test_depth_exhausting_side_works():
    # 64 / 2^6 = 1: the innermost block runs at 1x1 spatial size
    cfg = GeneratorConfig(depth=6, base_channels=4, input_side=64)
    out = UNetGenerator(cfg)(torch.rand(2, 3, 64, 64) * 2 - 1)
    assert tuple(out.shape) == (2, 3, 64, 64)


def test_forward_rejects_wrong_shapes():
    g = UNetGenerator(tiny_cfg())
    with pytest.raises(ValueError):
        g(torch.rand(1, 3, 32, 32))  # wrong side
    with pytest.raises(ValueError):
        g(torch.rand(1, 1, 16, 16))  # wrong channels
    with pytest.raises(ValueError):
        g(torch.rand(3, 16, 16))  # missing batch dim


# ----------------------------------------------------------------- init + rng

def test_init_deterministic_per_seed():
    cfg = tiny_cfg()
    a = build_generator(cfg, RngStream(3).derive("g"))
    b = build_generator(cfg, RngStream(3).derive("g"))
    c = build_generator(cfg, RngStream(4).derive("g"))
    assert parameter_hash(a) == parameter_hash(b)
    assert parameter_hash(a) != parameter_hash(c)


def test_init_statistics_and_norm_params():
    cfg = GeneratorConfig(depth=3, base_channels=32, input_side=32)
    g = build_generator(cfg, RngStream(0).derive("g"))
    conv_w = g.downs[1][0].weight.detach().numpy()
    assert abs(conv_w.std() - 0.02) < 0.005
    assert abs(conv_w.mean()) < 0.005
    norm = g.downs[1][1]
    assert torch.all(norm.weight == 1.0)
    assert torch.all(norm.bias == 0.0)
    assert torch.all(g.downs[0][0].bias == 0.0)


# ------------------------------------------------------------------- behavior

def test_output_range_tanh():
    g = build_generator(tiny_cfg(), RngStream(1).derive("g"))
    out = g(torch.rand(4, 3, 16, 16) * 2 - 1)
    assert out.min() >= -1.0 and out.max() <= 1.0


def test_eval_mode_deterministic_and_equals_train_mode():
    g = build_generator(tiny_cfg(), RngStream(2).derive("g"))
    x = torch.rand(1, 3, 16, 16) * 2 - 1
    g.eval()
    with torch.no_grad():
        a = g(x)
        b = g(x)
    g.train()
    with torch.no_grad():
        c = g(x)
    assert torch.equal(a, b)
    # instance norm uses per-sample stats, never running averages
    assert torch.equal(a, c)


def test_skip_ablation_changes_output():
    cfg = GeneratorConfig(depth=3, base_channels=8, input_side=16)
    g = build_generator(cfg, RngStream(5).derive("g"))
    x = torch.rand(1, 3, 16, 16) * 2 - 1
    with torch.no_grad():
        full = g(x)
        for j in range(cfg.depth - 1):
            ablated = g(x, ablate_skip=j)
            assert not torch.equal(full, ablated), f"skip {j} is not wired"


def test_gradients_flow_to_all_parameters():
    g = build_generator(tiny_cfg(), RngStream(6).derive("g"))
    out = g(torch.rand(1, 3, 16, 16, requires_grad=False) * 2 - 1)
    out.pow(2).sum().backward()
    for name, p in g.named_parameters():
        assert p.grad is not None, name
        assert torch.isfinite(p.grad).all(), name


def test_finite_difference_gradcheck_float64():
    # tiny config pinned by the acceptance suite: depth 2, base 4, side 16
    cfg = tiny_cfg(side=16, depth=2, base=4)
    g = build_generator(cfg, RngStream(7).derive("g")).double()
    x = (torch.rand(1, 3, 16, 16, dtype=torch.float64) * 1.6 - 0.8)
    target = torch.rand(1, 3, 16, 16, dtype=torch.float64) * 2 - 1

    def loss_of(model):
        return (model(x) - target).abs().mean()

    loss = loss_of(g)
    loss.backward()

    rng = RngStream(8).derive("pick").generator()
    checked = 0
    for name, p in sorted(g.named_parameters()):
        flat = p.detach().view(-1)
        idx = int(rng.integers(0, flat.numel()))
        h = 1e-6
        with torch.no_grad():
            orig = flat[idx].item()
            flat[idx] = orig + h
            up = loss_of(g).item()
            flat[idx] = orig - h
            down = loss_of(g).item()
            flat[idx] = orig
        numeric = (up - down) / (2 * h)
        analytic = p.grad.view(-1)[idx].item()
        denom = max(abs(numeric), abs(analytic))
        if denom < 1e-6:
            continue  # both at finite-difference noise level
        assert abs(numeric - analytic) / denom < 1e-3, name
        checked += 1
    assert checked >= 8
