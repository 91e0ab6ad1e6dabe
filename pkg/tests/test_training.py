import csv

import numpy as np
import pytest
import torch
from torch import nn

from crossvad.gan import losses
from crossvad.gan.training import (ConfigError, ModelBundle, TrainingError, build_training_pairs,
                                   from_network, to_network, train, translate)

from conftest import tiny_config


# -- gradient check on toy networks ---------------------------------------------------

class ToyG(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(3, 3, 3, padding=1)

    def forward(self, x):
        return torch.tanh(self.conv(x))


class ToyD(nn.Module):
    def __init__(self, sigmoid):
        super().__init__()
        self.conv = nn.Conv2d(6, 1, 3, padding=1)
        self.sigmoid = sigmoid

    def forward(self, c, x):
        out = self.conv(torch.cat([c, x], 1))
        return torch.sigmoid(out) if self.sigmoid else out


def toy_objectives(variant, seed=0):
    torch.manual_seed(seed)
    g_ab, g_ba = ToyG().double(), ToyG().double()
    d_b = ToyD(variant == "vanilla").double()
    a = torch.rand(2, 3, 5, 5, dtype=torch.float64) * 2 - 1
    b = torch.rand(2, 3, 5, 5, dtype=torch.float64) * 2 - 1

    def generator_objective():
        fake = g_ab(a)
        adv = losses.adversarial_generator_loss(variant, d_b(a, fake))
        l1 = losses.l1_loss(fake, b)
        cyc = losses.cycle_consistency_loss(a, g_ba(fake))
        return losses.composite_loss(variant, adv, l1, cyc, 100.0, 10.0)

    def discriminator_objective():
        return losses.discriminator_objective(variant, d_b(a, b), d_b(a, g_ab(a).detach()))

    g_params = list(g_ab.parameters()) + list(g_ba.parameters())
    return g_params, list(d_b.parameters()), generator_objective, discriminator_objective


def max_relative_gradient_error(params, objective, h=1e-5):
    grads = torch.autograd.grad(objective(), params, allow_unused=True)
    worst = 0.0
    for p, g in zip(params, grads):
        g = torch.zeros_like(p) if g is None else g
        fd = torch.zeros_like(p)
        flat, fd_flat = p.data.view(-1), fd.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            plus = objective().item()
            flat[i] = old - h
            minus = objective().item()
            flat[i] = old
            fd_flat[i] = (plus - minus) / (2 * h)
        scale = max(g.abs().max().item(), fd.abs().max().item(), 1e-12)
        worst = max(worst, (g - fd).abs().max().item() / scale)
    return worst


@pytest.mark.parametrize("variant", ["vanilla", "lsgan"])
def test_gradients_match_finite_differences(variant):
    g_params, d_params, gen_obj, disc_obj = toy_objectives(variant)
    assert sum(p.numel() for p in g_params + d_params) <= 1000
    # the generator objective also reaches D; the D objective sees a detached fake
    assert max_relative_gradient_error(g_params + d_params, gen_obj) < 1e-4
    assert max_relative_gradient_error(d_params, disc_obj) < 1e-4


# -- value ranges and translation ---------------------------------------------------------

def test_network_range_round_trip(rng):
    img = rng.random((2, 8, 8, 3)).astype(np.float32)
    x = to_network(img)
    assert x.shape == (2, 3, 8, 8) and x.min() >= -1 and x.max() <= 1
    assert np.allclose(from_network(x), img, atol=1e-6)


def test_identity_translation_recovers_input(rng):
    img = rng.random((3, 16, 16, 3)).astype(np.float32)
    back = translate(nn.Identity(), translate(nn.Identity(), img))
    assert np.allclose(back, img, atol=1e-6)
    assert translate(nn.Identity(), img[0]).shape == (16, 16, 3)


# -- training -----------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_config(lambda_cyc=10.0).validate()
    with pytest.raises(ConfigError):
        tiny_config(direction_mode="simultaneous", directions="ab").validate()
    with pytest.raises(ConfigError):
        tiny_config(loss_variant="wgan").validate()
    with pytest.raises(ConfigError):
        tiny_config(lambda_l1=-1.0).validate()


def test_round_trip_and_training_effect(small_bundle, synthetic, flows, m_ref, tmp_path):
    path = small_bundle.save(tmp_path / "b.pt")
    loaded = ModelBundle.load(path)
    assert loaded.epochs_done == 2 and loaded.m_ref == small_bundle.m_ref
    assert loaded.directions == ("ab", "ba")
    probe = synthetic.test_clips[0].frames[3].pixels
    for d in ("ab", "ba"):
        assert np.array_equal(translate(small_bundle.generator(d), probe), translate(loaded.generator(d), probe))

    # L1 on normal training pairs drops relative to the untrained initialisation
    frames, flow_imgs = build_training_pairs(synthetic, flows, m_ref)
    untrained = train(synthetic, flows, tiny_config(epochs=0), m_ref=m_ref)
    sel = slice(0, 40)
    with torch.no_grad():
        before = (untrained.generator("ab").eval()(frames[sel]) - flow_imgs[sel]).abs().mean()
        after = (small_bundle.generator("ab").eval()(frames[sel]) - flow_imgs[sel]).abs().mean()
    assert after < before


def test_history_terms(small_bundle, tmp_path):
    terms = {r.term for r in small_bundle.history}
    assert {"ab/D", "ab/G_adv", "ab/G_L1", "ab/G_total", "ba/D", "ba/G_total"} <= terms
    assert "ab/G_cyc" not in terms  # independent baseline has no cycle term
    path = small_bundle.write_history_csv(tmp_path / "h.csv")
    rows = list(csv.DictReader(open(path)))
    assert rows[0].keys() == {"epoch", "step", "term", "value"}
    assert len(rows) == len(small_bundle.history)


def test_resume_continues_epoch_counter(synthetic, flows, m_ref, tmp_path):
    sub = synthetic.subset("train")
    cfg = tiny_config(epochs=1)
    first = train(sub, flows, cfg, m_ref=m_ref)
    first.save(tmp_path / "c.pt")
    resumed = train(sub, flows, cfg, resume=ModelBundle.load(tmp_path / "c.pt"))
    assert resumed.epochs_done == 2
    epochs = sorted({r.epoch for r in resumed.history})
    assert epochs == [1, 2]
    # resuming matches an uninterrupted two-epoch run
    straight = train(sub, flows, tiny_config(epochs=2), m_ref=m_ref)
    assert [r.value for r in straight.history] == pytest.approx([r.value for r in resumed.history], rel=1e-5)


def test_cycle_terms_recorded(synthetic, flows, m_ref):
    sub = synthetic.subset("train")
    cfg = tiny_config(loss_variant="lsgan", epochs=1, lambda_cyc=10.0,
                      direction_mode="simultaneous", directions="both")
    bundle = train(sub, flows, cfg, m_ref=m_ref)
    assert {"ab/G_cyc", "ba/G_cyc"} <= {r.term for r in bundle.history}


def test_nan_loss_aborts(synthetic, flows, m_ref, monkeypatch):
    monkeypatch.setattr(losses, "l1_loss", lambda a, b: torch.tensor(float("nan")))
    with pytest.raises(TrainingError, match="epoch 1, step 0"):
        train(synthetic.subset("train"), flows, tiny_config(epochs=1), m_ref=m_ref)
