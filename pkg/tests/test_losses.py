"""Objective terms checked against closed-form hand calculations."""

import math

import numpy as np
import pytest
import torch

from demark.discriminator import PatchScoreMap
from demark.errors import ConfigError, DataError, MissingFileError, NumericError
from demark.losses import (
    PROB_EPS,
    IdentityExtractor,
    LossPlan,
    LossWeights,
    RandomConvExtractor,
    Vgg16Extractor,
    adversarial_d_loss,
    adversarial_g_loss,
    l1_loss,
    parse_loss_config,
    perceptual_loss,
    total_generator_loss,
)
from demark.netops import parameter_hash
from demark.rng import RngStream


def t64(value, shape=(1, 3, 4, 4)):
    return torch.full(shape, float(value), dtype=torch.float64)


# --------------------------------------------------------------------------
# L1


def test_l1_of_identical_tensors_is_zero():
    a = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    assert l1_loss(a, a.clone()).item() == 0.0


def test_l1_of_uniform_offset_is_the_offset():
    a = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    b = a + 0.05
    assert abs(l1_loss(b, a).item() - 0.05) < 1e-12


def test_l1_matches_elementwise_mean_oracle():
    g = RngStream(3).derive("l1").generator()
    a = g.uniform(0, 1, size=(4, 3, 8, 8))
    b = g.uniform(0, 1, size=(4, 3, 8, 8))
    expected = float(np.mean(np.abs(a - b)))
    got = l1_loss(torch.from_numpy(a), torch.from_numpy(b)).item()
    assert abs(got - expected) < 1e-12


def test_l1_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        l1_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5))


# --------------------------------------------------------------------------
# perceptual


def test_perceptual_with_identity_features_is_mse():
    # phi = id turns the term into plain MSE: uniform delta -> delta^2
    delta = 0.25
    a = torch.rand(1, 3, 6, 6, dtype=torch.float64)
    got = perceptual_loss(IdentityExtractor(), a + delta, a).item()
    assert abs(got - delta**2) < 1e-12


def test_perceptual_identity_scales_quadratically():
    ext = IdentityExtractor()
    a = torch.rand(1, 3, 6, 6, dtype=torch.float64)
    b = torch.rand(1, 3, 6, 6, dtype=torch.float64)
    base = perceptual_loss(ext, a, b).item()
    scaled = perceptual_loss(ext, 2.0 * a, 2.0 * b).item()
    assert abs(scaled - 4.0 * base) < 1e-12


def test_perceptual_zero_for_identical_inputs():
    ext = RandomConvExtractor(RngStream(5))
    a = torch.rand(1, 3, 16, 16)
    assert perceptual_loss(ext, a, a.clone()).item() == 0.0


def test_perceptual_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        perceptual_loss(IdentityExtractor(), torch.zeros(1, 3, 4, 4),
                        torch.zeros(2, 3, 4, 4))


# --------------------------------------------------------------------------
# adversarial


def test_d_loss_at_half_is_two_log_two():
    half = t64(0.5)
    got = adversarial_d_loss(half, half).item()
    assert abs(got - 2.0 * math.log(2.0)) < 1e-10


def test_d_loss_confident_correct_discriminator():
    # D(real)=0.9, D(fake)=0.1 -> -(log .9 + log .9)
    got = adversarial_d_loss(t64(0.9), t64(0.1)).item()
    assert abs(got - (-2.0 * math.log(0.9))) < 1e-10


def test_g_loss_at_half_is_log_two():
    assert abs(adversarial_g_loss(t64(0.5)).item() - math.log(2.0)) < 1e-10


def test_g_loss_vanishes_when_discriminator_fooled():
    # D(fake) -> 1 leaves only the clamp: -log(1 - eps)
    got = adversarial_g_loss(t64(1.0)).item()
    assert abs(got - (-math.log1p(-PROB_EPS))) < 1e-10
    assert got < 1e-6


def test_saturated_probabilities_stay_finite():
    zero, one = t64(0.0), t64(1.0)
    worst_g = adversarial_g_loss(zero).item()
    assert math.isfinite(worst_g)
    assert abs(worst_g - (-math.log(PROB_EPS))) < 1e-10
    assert math.isfinite(adversarial_d_loss(zero, one).item())


def test_g_loss_decreases_as_fake_prob_rises():
    losses = [adversarial_g_loss(t64(p)).item()
              for p in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_d_loss_rises_as_fakes_fool_it():
    losses = [adversarial_d_loss(t64(0.7), t64(p)).item()
              for p in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert all(a < b for a, b in zip(losses, losses[1:]))


def test_adversarial_losses_accept_patch_score_maps():
    m = PatchScoreMap(probs=torch.full((1, 1, 3, 3), 0.5,
                                       dtype=torch.float64),
                      receptive_field=70)
    assert abs(adversarial_g_loss(m).item() - math.log(2.0)) < 1e-10
    assert abs(adversarial_d_loss(m, m).item() - 2.0 * math.log(2.0)) < 1e-10


# --------------------------------------------------------------------------
# composition


def test_total_composes_weighted_terms():
    # log 2 + 10 * 0.05 + 1e-4 * 10
    adv = torch.tensor(math.log(2.0), dtype=torch.float64)
    total = total_generator_loss(adv, torch.tensor(0.05, dtype=torch.float64),
                                 torch.tensor(10.0, dtype=torch.float64),
                                 LossWeights())
    expected = math.log(2.0) + 10.0 * 0.05 + 1e-4 * 10.0
    assert abs(total.item() - expected) < 1e-10


def test_total_with_zero_weights_is_pure_adversarial():
    adv = torch.tensor(0.875, dtype=torch.float64)
    total = total_generator_loss(adv, torch.tensor(3.0), torch.tensor(7.0),
                                 LossWeights(alpha=0.0, beta=0.0))
    assert total.item() == 0.875


def test_total_rejects_non_finite_terms():
    w = LossWeights()
    ok = torch.tensor(0.1)
    with pytest.raises(NumericError):
        total_generator_loss(torch.tensor(float("nan")), ok, ok, w)
    with pytest.raises(NumericError):
        total_generator_loss(ok, torch.tensor(float("inf")), ok, w)
    with pytest.raises(NumericError):
        total_generator_loss(ok, ok, torch.tensor(float("-inf")), w)


def test_negative_weights_rejected():
    with pytest.raises(ConfigError):
        LossWeights(alpha=-1.0)
    with pytest.raises(ConfigError):
        LossWeights(beta=-1e-9)


# --------------------------------------------------------------------------
# loss config parsing


@pytest.mark.parametrize("name,plan", [
    ("l1", LossPlan(True, False, None)),
    ("perceptual", LossPlan(False, True, None)),
    ("l1+perceptual", LossPlan(True, True, None)),
    ("l1+perceptual+gan", LossPlan(True, True, "gan")),
    ("l1+perceptual+cgan", LossPlan(True, True, "cgan")),
    ("+gan", LossPlan(True, True, "gan")),
    ("+cgan", LossPlan(True, True, "cgan")),
])
def test_loss_config_lattice(name, plan):
    assert parse_loss_config(name) == plan


def test_loss_config_is_case_and_space_insensitive():
    assert parse_loss_config(" L1+Perceptual+CGAN ") == LossPlan(True, True,
                                                                 "cgan")


def test_unknown_loss_config_rejected():
    with pytest.raises(ConfigError):
        parse_loss_config("l2")
    with pytest.raises(ConfigError):
        parse_loss_config("l1+gan")


def test_discriminator_update_flag_tracks_adversarial_term():
    assert not parse_loss_config("l1").needs_discriminator_update
    assert not parse_loss_config("l1+perceptual").needs_discriminator_update
    assert parse_loss_config("+gan").needs_discriminator_update
    assert parse_loss_config("+cgan").needs_discriminator_update


# --------------------------------------------------------------------------
# extractors


def test_random_extractor_is_deterministic_per_seed():
    a = RandomConvExtractor(RngStream(7))
    b = RandomConvExtractor(RngStream(7))
    c = RandomConvExtractor(RngStream(8))
    assert parameter_hash(a) == parameter_hash(b)
    assert parameter_hash(a) != parameter_hash(c)


def test_random_extractor_shape_and_finiteness():
    ext = RandomConvExtractor(RngStream(7))
    f = ext.features(torch.rand(2, 3, 16, 16))
    assert f.shape == (2, 32, 8, 8)  # stride 1 then stride 2
    assert torch.isfinite(f).all()


def test_extractors_are_frozen():
    for ext in (IdentityExtractor(), RandomConvExtractor(RngStream(1))):
        assert all(not p.requires_grad for p in ext.parameters())
        assert not ext.training


def test_extractor_unchanged_by_backward_through_it():
    ext = RandomConvExtractor(RngStream(2))
    before = parameter_hash(ext)
    x = torch.rand(1, 3, 16, 16, requires_grad=True)
    perceptual_loss(ext, x, torch.rand(1, 3, 16, 16)).backward()
    assert x.grad is not None and torch.isfinite(x.grad).all()
    assert all(p.grad is None for p in ext.parameters())
    assert parameter_hash(ext) == before


def test_vgg_extractor_missing_weights_file(tmp_path):
    with pytest.raises(MissingFileError):
        Vgg16Extractor(str(tmp_path / "nope.pth"))


def test_vgg_extractor_checksum_mismatch(tmp_path):
    p = tmp_path / "weights.pth"
    p.write_bytes(b"not really weights")
    with pytest.raises(ConfigError, match="checksum"):
        Vgg16Extractor(str(p), sha256="0" * 64)


def test_vgg_extractor_rejects_garbage_payload(tmp_path):
    import hashlib
    payload = b"\x00\x01garbage payload\xff" * 64
    p = tmp_path / "weights.pth"
    p.write_bytes(payload)
    # correct pin so the failure is the decode, not the checksum
    with pytest.raises(DataError):
        Vgg16Extractor(str(p), sha256=hashlib.sha256(payload).hexdigest())
